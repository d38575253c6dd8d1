from enum import Enum, auto
import json
import logging
import os
import sys
from typing import Callable, Optional

import fire
import numpy as np
from pydantic import BaseModel, ValidationError
import toml

from covfit_core import estimator
from covfit_core.beamform import compare_beampatterns
from covfit_core.files import (
    FitResultFile,
    OutputPaths,
    dump_fit_result,
    dump_matrix,
    dumps_beampattern_csv,
    dumps_snapshots_csv,
    load_fit_result,
    load_matrix,
    load_pipeline_config,
    load_scene_file,
    load_steering_family,
)
from covfit_core.linalg import HermitianMatrix, NoConvergence, NotPositiveDefinite
from covfit_core.model import check_model_matches
from covfit_core.simulate import SnapshotSet, generate, ula_family
from covfit_core.utils import ensure_parent, locked_write_file

SEED_ENV = 'COVFIT_SEED'


####################
# Static I/O types #
####################
class CommandStatus(Enum):
    SUCCEEDED = auto()
    BAD_INPUT = auto()
    NUMERICAL_FAILURE = auto()
    RANK_TOO_LARGE = auto()


class CommandResult(BaseModel):
    status: CommandStatus
    message: str = ''


def command_exit_code(result: CommandResult) -> int:
    if result.status == CommandStatus.SUCCEEDED:
        exit_code = 0
    elif result.status == CommandStatus.BAD_INPUT:
        exit_code = 2
    elif result.status == CommandStatus.NUMERICAL_FAILURE:
        exit_code = 3
    elif result.status == CommandStatus.RANK_TOO_LARGE:
        exit_code = 4
    else:
        raise ValueError(f'Unknown status={result.status}.')
    return exit_code


def _guarded(run: Callable[[], str]) -> CommandResult:
    # Subclasses of ValueError are matched first.
    try:
        message = run()
    except estimator.RankTooLarge as err:
        return CommandResult(status=CommandStatus.RANK_TOO_LARGE, message=str(err))
    except (NotPositiveDefinite, NoConvergence, estimator.OrderCurveNotMonotone) as err:
        return CommandResult(status=CommandStatus.NUMERICAL_FAILURE, message=str(err))
    except (ValidationError, json.JSONDecodeError, toml.TomlDecodeError) as err:
        return CommandResult(status=CommandStatus.BAD_INPUT, message=f'Malformed input: {err}')
    except (ValueError, KeyError, TypeError, OSError) as err:
        return CommandResult(status=CommandStatus.BAD_INPUT, message=str(err))
    return CommandResult(status=CommandStatus.SUCCEEDED, message=message)


def _require_int(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f'--{name} expects an integer, got {value!r}.')
    return value


def resolve_seed(seed: Optional[int]) -> Optional[int]:
    '''COVFIT_SEED wins over --seed when set. None keeps the seed of the scene file.
    '''
    env_seed = os.getenv(SEED_ENV)
    if env_seed is not None and env_seed.strip():
        try:
            return int(env_seed)
        except ValueError:
            raise ValueError(f'{SEED_ENV}={env_seed!r} is not an integer.') from None
    if seed is not None:
        return _require_int('seed', seed)
    return None


def _write_text(path: str, text: str) -> None:
    ensure_parent(path)
    if not locked_write_file(path, text):
        raise TimeoutError(f'Lock acquire timeout on {path}.')


############
# Commands #
############
def _simulate(
    scene: str,
    snapshots: int,
    seed: Optional[int],
    out_cov: str,
    out_snapshots: Optional[str],
) -> SnapshotSet:
    if isinstance(snapshots, bool) or not isinstance(snapshots, int) or snapshots < 1:
        raise ValueError('snapshots must be >= 1')

    scene_obj = load_scene_file(scene).to_scene(seed=resolve_seed(seed))
    snapshot_set = generate(scene_obj, snapshots)
    logging.info(
        f'simulate n_sensors={scene_obj.n_sensors} n_sources={scene_obj.n_sources} '
        f'K={snapshots} seed={scene_obj.seed}'
    )

    ensure_parent(out_cov)
    dump_matrix(out_cov, snapshot_set.sample_cov)
    if out_snapshots:
        _write_text(out_snapshots, dumps_snapshots_csv(snapshot_set.snapshots, scene_obj.is_real))
    return snapshot_set


def _fit(
    r: HermitianMatrix,
    w: HermitianMatrix,
    rank: int,
    criterion: str,
    out: str,
    order_scan: bool,
    max_rank: Optional[int],
    snapshots_count: Optional[int],
    penalty: str,
) -> FitResultFile:
    rank = _require_int('rank', rank)
    report = estimator.fit(r, w, rank, criterion)

    scan = None
    if order_scan:
        scan = estimator.order_scan(
            r,
            w,
            criterion,
            max_rank=None if max_rank is None else _require_int('max_rank', max_rank),
            snapshot_count=(
                None if snapshots_count is None else _require_int('snapshots_count', snapshots_count)
            ),
            penalty=penalty,
        )

    fit_result = FitResultFile.from_report(report, scan)
    ensure_parent(out)
    dump_fit_result(out, fit_result)
    return fit_result


def _beampattern(
    r: HermitianMatrix,
    fit_result: FitResultFile,
    out: str,
    steering: Optional[str],
    ula_spacing: float,
    ula_start_deg: float,
    ula_stop_deg: float,
    ula_points: int,
) -> int:
    model = fit_result.to_model()
    check_model_matches(r, model)

    if steering:
        family = load_steering_family(steering)
    else:
        ula_points = _require_int('ula_points', ula_points)
        if ula_points < 1:
            raise ValueError(f'ula_points={ula_points} must be positive.')
        angles = np.linspace(float(ula_start_deg), float(ula_stop_deg), ula_points)
        family = ula_family(r.n, float(ula_spacing), angles)

    rows = compare_beampatterns(r, model.r_theta, family)
    _write_text(out, dumps_beampattern_csv(rows))
    return len(rows)


def simulate_command(
    scene: str,
    snapshots: int,
    seed: Optional[int] = None,
    out_cov: str = 'R.json',
    out_snapshots: Optional[str] = 'snapshots.csv',
) -> CommandResult:

    def run():
        _simulate(scene, snapshots, seed, out_cov, out_snapshots)
        return f'Wrote {out_cov}.'

    return _guarded(run)


def fit_command(
    cov: str,
    rank: int,
    criterion: str = 'ce',
    noise: Optional[str] = None,
    out: str = 'fit.json',
    order_scan: bool = False,
    max_rank: Optional[int] = None,
    snapshots_count: Optional[int] = None,
    penalty: str = 'mdl',
) -> CommandResult:

    def run():
        r = load_matrix(cov)
        w = load_matrix(noise) if noise else HermitianMatrix.identity(r.n, is_real=r.is_real)
        fit_result = _fit(
            r,
            w,
            rank,
            criterion,
            out,
            order_scan,
            max_rank,
            snapshots_count,
            penalty,
        )
        return f'Wrote {out} (sigma2={fit_result.sigma2}).'

    return _guarded(run)


def beampattern_command(
    cov: str,
    model: str,
    out: str = 'beampattern.csv',
    steering: Optional[str] = None,
    ula_spacing: float = 0.5,
    ula_start_deg: float = -90.0,
    ula_stop_deg: float = 90.0,
    ula_points: int = 181,
) -> CommandResult:

    def run():
        n_rows = _beampattern(
            load_matrix(cov),
            load_fit_result(model),
            out,
            steering,
            ula_spacing,
            ula_start_deg,
            ula_stop_deg,
            ula_points,
        )
        return f'Wrote {n_rows} rows to {out}.'

    return _guarded(run)


def pipeline_command(config: str) -> CommandResult:
    '''simulate -> fit (+ order scan) -> beampattern, driven by one TOML file.
    '''

    def run():
        pipeline_config = load_pipeline_config(config)
        paths = OutputPaths.under(pipeline_config.output)
        paths.makedirs()

        snapshot_set = _simulate(
            pipeline_config.scene,
            pipeline_config.simulate.snapshots,
            pipeline_config.simulate.seed,
            paths.covariance,
            paths.snapshots,
        )

        fit_section = pipeline_config.fit
        if fit_section.noise is not None:
            w = load_matrix(fit_section.noise)
        else:
            # The noise covariance the scene was simulated with.
            w = snapshot_set.scene.noise
        _fit(
            snapshot_set.sample_cov,
            w,
            fit_section.rank,
            fit_section.criterion.value,
            paths.fit,
            fit_section.order_scan,
            fit_section.max_rank,
            snapshot_set.k,
            fit_section.penalty,
        )

        if pipeline_config.beampattern is not None:
            section = pipeline_config.beampattern
            _beampattern(
                snapshot_set.sample_cov,
                load_fit_result(paths.fit),
                paths.beampattern,
                None,
                section.ula_spacing,
                section.start_deg,
                section.stop_deg,
                section.points,
            )
        return f'Wrote outputs to {paths.root}.'

    return _guarded(run)


#######
# CLI #
#######
def setup_logging(log_file: Optional[str] = None) -> None:
    logging.basicConfig(level=logging.INFO)
    logging.getLogger('filelock').setLevel(logging.WARNING)
    if log_file:
        logging.getLogger().addHandler(logging.FileHandler(log_file))


def _exit_with(result: CommandResult) -> None:
    exit_code = command_exit_code(result)
    if exit_code != 0:
        logging.error(result.message)
        sys.exit(exit_code)
    logging.info(result.message)


def cmd_simulate(
    scene: str,
    snapshots: int,
    seed: Optional[int] = None,
    out_cov: str = 'R.json',
    out_snapshots: Optional[str] = 'snapshots.csv',
    log_file: Optional[str] = None,
):
    '''Write the snapshot CSV (--out-snapshots) and the sample covariance (--out-cov).
    Pass --out-snapshots "" to skip the CSV.
    '''
    setup_logging(log_file)
    _exit_with(simulate_command(scene, snapshots, seed, out_cov, out_snapshots))


def cmd_fit(
    cov: str,
    rank: int,
    criterion: str = 'ce',
    noise: Optional[str] = None,
    out: str = 'fit.json',
    order_scan: bool = False,
    max_rank: Optional[int] = None,
    snapshots_count: Optional[int] = None,
    penalty: str = 'mdl',
    log_file: Optional[str] = None,
):
    setup_logging(log_file)
    _exit_with(
        fit_command(
            cov,
            rank,
            criterion=criterion,
            noise=noise,
            out=out,
            order_scan=order_scan,
            max_rank=max_rank,
            snapshots_count=snapshots_count,
            penalty=penalty,
        )
    )


def cmd_beampattern(
    cov: str,
    model: str,
    out: str = 'beampattern.csv',
    steering: Optional[str] = None,
    ula_spacing: float = 0.5,
    ula_start_deg: float = -90.0,
    ula_stop_deg: float = 90.0,
    ula_points: int = 181,
    log_file: Optional[str] = None,
):
    setup_logging(log_file)
    _exit_with(
        beampattern_command(
            cov,
            model,
            out=out,
            steering=steering,
            ula_spacing=ula_spacing,
            ula_start_deg=ula_start_deg,
            ula_stop_deg=ula_stop_deg,
            ula_points=ula_points,
        )
    )


def cmd_pipeline(config: str, log_file: Optional[str] = None):
    setup_logging(log_file)
    _exit_with(pipeline_command(config))


run_cli = lambda: fire.Fire({  # noqa: E731
    'simulate': cmd_simulate,
    'fit': cmd_fit,
    'beampattern': cmd_beampattern,
    'pipeline': cmd_pipeline,
})
