import csv
import io
import math
import os
from os.path import dirname, isabs, join
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, root_validator, validator

from covfit_core.beamform import BeampatternRow, SteeringVector
from covfit_core.estimator import OrderScan
from covfit_core.linalg import HermitianMatrix
from covfit_core.model import Criterion, FitReport, StructuredModel, assemble_model
from covfit_core.simulate import Scene, ula_steering
from covfit_core.utils import (
    complex_to_pair,
    decode_complex_cell,
    encode_complex_cell,
    format_number,
    pair_to_complex,
    read_json,
    read_toml,
    write_json,
)


####################
# Static I/O types #
####################
class MatrixFile(BaseModel):
    n: int
    is_complex: bool = Field(False, alias='complex')
    # Row-major [re, im] pairs, [re] when real.
    data: List[List[float]]

    class Config:
        allow_population_by_field_name = True

    @root_validator(skip_on_failure=True)
    def check_size(cls, values):
        n = values['n']
        data = values['data']
        if n < 1:
            raise ValueError(f'n={n} must be positive.')
        if len(data) != n * n:
            raise ValueError(f'Expect {n * n} entries for n={n}, got {len(data)}.')
        return values

    @classmethod
    def from_hermitian(cls, matrix: HermitianMatrix) -> 'MatrixFile':
        data = [list(complex_to_pair(value, matrix.is_real)) for value in matrix.entries.ravel()]
        return cls(n=matrix.n, is_complex=not matrix.is_real, data=data)

    def to_array(self) -> np.ndarray:
        values = np.array([pair_to_complex(pair) for pair in self.data], dtype=np.complex128)
        values = values.reshape(self.n, self.n)
        if not self.is_complex:
            if np.any(values.imag):
                raise ValueError('Real matrix file has non-zero imaginary parts.')
            return values.real
        return values

    def to_hermitian(self) -> HermitianMatrix:
        return HermitianMatrix.from_array(self.to_array(), is_real=not self.is_complex)


def load_matrix(path: str) -> HermitianMatrix:
    return MatrixFile.parse_obj(read_json(path)).to_hermitian()


def dump_matrix(path: str, matrix: HermitianMatrix) -> None:
    write_json(path, MatrixFile.from_hermitian(matrix).dict(by_alias=True))


class FitResultFile(BaseModel):
    criterion: Criterion
    rank: int = Field(alias='P')
    n: int
    is_real: bool
    sigma2: float
    lambdas: List[float]
    signal_powers: List[float]
    # Column-major [re, im] pairs, [re] when real.
    u: List[List[float]] = Field(alias='U')
    noise: MatrixFile
    divergence_nats: float
    xi: float
    unique: bool
    clamped: bool = False
    order_curve: Optional[List[Tuple[int, float]]] = None
    penalty: Optional[str] = None
    penalized_curve: Optional[List[Tuple[int, float]]] = None
    selected_rank: Optional[int] = None

    class Config:
        allow_population_by_field_name = True

    @classmethod
    def from_report(cls, report: FitReport, scan: Optional[OrderScan] = None) -> 'FitResultFile':
        model = report.model
        u = [list(complex_to_pair(value, model.is_real)) for value in model.u.T.ravel()]
        struct = dict(
            criterion=model.criterion,
            rank=model.rank,
            n=model.n,
            is_real=model.is_real,
            sigma2=model.sigma2,
            lambdas=[float(value) for value in report.lambdas],
            signal_powers=[float(value) for value in model.signal_powers],
            u=u,
            noise=MatrixFile.from_hermitian(model.noise),
            divergence_nats=report.divergence.value,
            xi=report.divergence.xi,
            unique=model.unique,
            clamped=model.clamped,
        )
        if scan is not None:
            struct.update(
                order_curve=scan.curve,
                penalty=scan.penalty if scan.penalized is not None else None,
                penalized_curve=scan.penalized,
                selected_rank=scan.selected_rank,
            )
        return cls(**struct)

    def to_model(self) -> StructuredModel:
        values = np.array([pair_to_complex(pair) for pair in self.u], dtype=np.complex128)
        if len(self.u) != self.n * self.rank:
            raise ValueError(f'Expect {self.n * self.rank} entries in U, got {len(self.u)}.')
        u = values.reshape(self.rank, self.n).T
        if self.is_real:
            u = u.real
        noise = self.noise.to_hermitian()
        if noise.n != self.n:
            raise ValueError(f'Noise covariance n={noise.n} does not match n={self.n}.')
        return assemble_model(
            u=u,
            signal_powers=np.array(self.signal_powers, dtype=np.float64),
            sigma2=self.sigma2,
            noise=noise,
            criterion=self.criterion,
            unique=self.unique,
            clamped=self.clamped,
            is_real=self.is_real,
        )

    def to_struct(self) -> dict:
        struct = self.dict(by_alias=True)
        struct['criterion'] = self.criterion.value
        if self.order_curve is None:
            for key in ('order_curve', 'penalty', 'penalized_curve', 'selected_rank'):
                struct.pop(key)
        return struct


def load_fit_result(path: str) -> FitResultFile:
    return FitResultFile.parse_obj(read_json(path))


def dump_fit_result(path: str, fit_result: FitResultFile) -> None:
    write_json(path, fit_result.to_struct())


class SourceSpec(BaseModel):
    power: float
    direction: Optional[List[List[float]]] = None
    angle_deg: Optional[float] = None

    @root_validator(skip_on_failure=True)
    def check_direction(cls, values):
        if (values.get('direction') is None) == (values.get('angle_deg') is None):
            raise ValueError('Set exactly one of direction or angle_deg per source.')
        return values


class SceneFile(BaseModel):
    n_sensors: int
    sources: List[SourceSpec] = []
    ula_spacing: float = 0.5
    sigma: float
    noise: Optional[MatrixFile] = None
    is_real: bool = False
    seed: int = 0

    @validator('n_sensors')
    def check_n_sensors(cls, value):
        if value < 1:
            raise ValueError(f'n_sensors={value} must be positive.')
        return value

    def to_scene(self, seed: Optional[int] = None) -> Scene:
        columns = []
        for source in self.sources:
            if source.direction is not None:
                column = np.array([pair_to_complex(pair) for pair in source.direction])
                if column.size != self.n_sensors:
                    raise ValueError(
                        f'direction has {column.size} entries, n_sensors={self.n_sensors}.'
                    )
            else:
                column = ula_steering(
                    self.n_sensors,
                    self.ula_spacing,
                    math.radians(source.angle_deg),
                ).w0
                if self.is_real:
                    column = column.real
            columns.append(column)

        directions = np.stack(columns, axis=1) if columns else np.zeros((self.n_sensors, 0))
        noise = self.noise.to_hermitian() if self.noise is not None else None
        if noise is not None and noise.n != self.n_sensors:
            raise ValueError(f'noise n={noise.n} does not match n_sensors={self.n_sensors}.')
        return Scene.create(
            directions=directions,
            powers=[source.power for source in self.sources],
            sigma=self.sigma,
            noise=noise,
            is_real=self.is_real,
            seed=self.seed if seed is None else seed,
            n_sensors=self.n_sensors,
        )


def load_scene_file(path: str) -> SceneFile:
    return SceneFile.parse_obj(read_json(path))


class SteeringSpec(BaseModel):
    label: str
    # [re, im] pairs, [re] when real.
    w0: List[List[float]]

    def to_steering(self) -> SteeringVector:
        return SteeringVector(
            w0=np.array([pair_to_complex(pair) for pair in self.w0], dtype=np.complex128),
            label=self.label,
        )


def load_steering_family(path: str) -> List[SteeringVector]:
    struct = read_json(path)
    if not isinstance(struct, list):
        raise ValueError(f'Steering file {path} must hold a JSON list.')
    return [SteeringSpec.parse_obj(item).to_steering() for item in struct]


###############
# CSV formats #
###############
def dumps_snapshots_csv(snapshots: np.ndarray, is_real: bool) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    for row in np.atleast_2d(snapshots):
        writer.writerow([encode_complex_cell(value, is_real) for value in row])
    return buffer.getvalue()


def loads_snapshots_csv(text: str) -> np.ndarray:
    rows = [row for row in csv.reader(io.StringIO(text)) if row]
    values = np.array([[decode_complex_cell(cell) for cell in row] for row in rows])
    if not np.any(values.imag):
        return values.real
    return values


BEAMPATTERN_HEADER = (
    'label',
    'power_observed',
    'power_structured',
    'mvdr_power_observed',
    'mvdr_power_structured',
)


def dumps_beampattern_csv(rows: Sequence[BeampatternRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(BEAMPATTERN_HEADER)
    for row in rows:
        writer.writerow([
            row.label,
            format_number(row.power_observed),
            format_number(row.power_structured),
            format_number(row.mvdr_power_observed),
            format_number(row.mvdr_power_structured),
        ])
    return buffer.getvalue()


#################
# Pipeline TOML #
#################
class SimulateSection(BaseModel):
    snapshots: int
    seed: Optional[int] = None


class FitSection(BaseModel):
    rank: int
    criterion: Criterion = Criterion.RCE
    noise: Optional[str] = None
    order_scan: bool = True
    max_rank: Optional[int] = None
    penalty: str = 'mdl'


class BeampatternSection(BaseModel):
    ula_spacing: float = 0.5
    start_deg: float = -90.0
    stop_deg: float = 90.0
    points: int = 181


class PipelineConfig(BaseModel):
    output: str
    scene: str
    simulate: SimulateSection
    fit: FitSection
    beampattern: Optional[BeampatternSection] = None


def _resolve(base_folder: str, path: str) -> str:
    return path if isabs(path) else join(base_folder, path)


def load_pipeline_config(path: str) -> PipelineConfig:
    config = PipelineConfig.parse_obj(read_toml(path))
    # Relative paths are relative to the config file.
    base_folder = dirname(path)
    config.output = _resolve(base_folder, config.output)
    config.scene = _resolve(base_folder, config.scene)
    if config.fit.noise is not None:
        config.fit.noise = _resolve(base_folder, config.fit.noise)
    return config


class OutputPaths(BaseModel):
    root: str
    snapshots: str
    covariance: str
    fit: str
    beampattern: str

    @classmethod
    def under(cls, root: str) -> 'OutputPaths':
        return cls(
            root=root,
            snapshots=join(root, 'snapshots.csv'),
            covariance=join(root, 'covariance.json'),
            fit=join(root, 'fit.json'),
            beampattern=join(root, 'beampattern.csv'),
        )

    def makedirs(self):
        os.makedirs(self.root, exist_ok=True)
