from dataclasses import dataclass
import math
from typing import Optional, Sequence, List

import numpy as np

from covfit_core.beamform import SteeringVector
from covfit_core.linalg import HermitianMatrix, cholesky_sqrt

_MASK64 = (1 << 64) - 1


class SplitMix64:
    '''SplitMix64 stream, with Box-Muller normals from consecutive 53-bit uniforms.
    '''

    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK64
        self._spare: Optional[float] = None

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_uniform(self) -> float:
        # [0, 1).
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def next_normal(self) -> float:
        if self._spare is not None:
            normal = self._spare
            self._spare = None
            return normal

        # 1 - u lies in (0, 1], so the log is finite.
        u1 = 1.0 - self.next_uniform()
        u2 = self.next_uniform()
        radius = math.sqrt(-2.0 * math.log(u1))
        self._spare = radius * math.sin(2.0 * math.pi * u2)
        return radius * math.cos(2.0 * math.pi * u2)

    def next_complex_normal(self) -> complex:
        # E[|z|^2] = 1.
        scale = math.sqrt(0.5)
        return complex(scale * self.next_normal(), scale * self.next_normal())


def ula_steering(
    n_sensors: int,
    spacing_wavelengths: float,
    angle_rad: float,
    label: Optional[str] = None,
) -> SteeringVector:
    '''Uniform line array response exp(j 2 pi d k sin(angle)), k = 0..N-1.
    '''
    if n_sensors < 1:
        raise ValueError(f'n_sensors={n_sensors} must be at least 1.')
    k = np.arange(n_sensors)
    w0 = np.exp(1j * 2.0 * math.pi * spacing_wavelengths * k * math.sin(angle_rad))
    if label is None:
        label = repr(float(math.degrees(angle_rad)))
    return SteeringVector(w0=w0, label=label)


def ula_family(
    n_sensors: int,
    spacing_wavelengths: float,
    angles_deg: Sequence[float],
) -> List[SteeringVector]:
    # Labelled by the angle in degrees as given.
    return [
        ula_steering(n_sensors, spacing_wavelengths, math.radians(angle), label=repr(float(angle)))
        for angle in angles_deg
    ]


@dataclass(frozen=True)
class Scene:
    directions: np.ndarray
    powers: np.ndarray
    sigma: float
    noise: HermitianMatrix
    is_real: bool
    seed: int

    def __post_init__(self):
        directions = np.asarray(self.directions)
        powers = np.asarray(self.powers)
        if directions.ndim != 2 or directions.shape[0] != self.noise.n:
            raise ValueError(
                f'directions shape={directions.shape} does not match n={self.noise.n}.'
            )
        if directions.shape[1] != powers.size:
            raise ValueError(f'{directions.shape[1]} directions but {powers.size} powers.')
        if directions.shape[1] >= self.noise.n:
            raise ValueError(f'P={directions.shape[1]} sources need more than N sensors.')
        if np.any(powers <= 0.0):
            raise ValueError(f'Source powers must be positive, got {powers}.')
        if self.sigma <= 0.0:
            raise ValueError(f'sigma={self.sigma} must be positive.')
        if self.is_real and (np.iscomplexobj(directions) and np.any(directions.imag)
                             or not self.noise.is_real):
            raise ValueError('A real scene needs real directions and a real noise covariance.')
        if not 0 <= self.seed <= _MASK64:
            raise ValueError(f'seed={self.seed} is not a 64-bit unsigned integer.')

    @classmethod
    def create(
        cls,
        directions,
        powers,
        sigma: float,
        noise: Optional[HermitianMatrix] = None,
        is_real: bool = False,
        seed: int = 0,
        n_sensors: Optional[int] = None,
    ) -> 'Scene':
        '''Normalize every direction to unit norm. Identity noise when `noise` is None.
        '''
        powers = np.asarray(powers, dtype=np.float64).reshape(-1)
        directions = np.asarray(directions)
        if is_real and np.iscomplexobj(directions) and np.any(directions.imag):
            raise ValueError('A real scene needs real directions.')
        directions = directions.astype(np.float64 if is_real else np.complex128)
        if directions.size == 0:
            if n_sensors is None:
                if noise is None:
                    raise ValueError('n_sensors is required for a scene without sources.')
                n_sensors = noise.n
            directions = directions.reshape(n_sensors, 0)
        norms = np.linalg.norm(directions, axis=0)
        if np.any(norms == 0.0):
            raise ValueError('Source directions must be non-zero.')
        directions = directions / norms

        if noise is None:
            noise = HermitianMatrix.identity(directions.shape[0], is_real=is_real)
        return cls(
            directions=directions,
            powers=powers,
            sigma=float(sigma),
            noise=noise,
            is_real=is_real,
            seed=int(seed),
        )

    @property
    def n_sensors(self) -> int:
        return self.noise.n

    @property
    def n_sources(self) -> int:
        return self.powers.size


@dataclass(frozen=True)
class SnapshotSet:
    snapshots: np.ndarray
    sample_cov: HermitianMatrix
    scene: Scene

    @property
    def k(self) -> int:
        return self.snapshots.shape[0]


def sample_covariance(snapshots: np.ndarray, is_real: bool) -> HermitianMatrix:
    '''(1/K) sum of x_k x_k^H over the rows of `snapshots`.
    '''
    snapshots = np.atleast_2d(snapshots)
    cov = snapshots.T @ snapshots.conj() / snapshots.shape[0]
    return HermitianMatrix.from_array(cov.real if is_real else cov, is_real=is_real)


def generate(scene: Scene, k: int) -> SnapshotSet:
    '''Draw K snapshots. Per snapshot: every source in index order, then the noise vector.
    '''
    if k < 1:
        raise ValueError('snapshots must be >= 1')

    rng = SplitMix64(scene.seed)
    draw = rng.next_normal if scene.is_real else rng.next_complex_normal
    n = scene.n_sensors
    noise_root = cholesky_sqrt(scene.noise).lower
    amplitudes = np.sqrt(scene.powers)

    dtype = np.float64 if scene.is_real else np.complex128
    snapshots = np.empty((k, n), dtype=dtype)
    for idx in range(k):
        signals = np.array([amplitude * draw() for amplitude in amplitudes], dtype=dtype)
        z = np.array([draw() for _ in range(n)], dtype=dtype)
        snapshots[idx] = scene.directions @ signals + scene.sigma * (noise_root @ z)

    snapshots.setflags(write=False)
    return SnapshotSet(
        snapshots=snapshots,
        sample_cov=sample_covariance(snapshots, scene.is_real),
        scene=scene,
    )


def population_covariance(scene: Scene) -> HermitianMatrix:
    '''sum Lambda_i u_i u_i^H + sigma^2 W.
    '''
    directions = scene.directions
    cov = (directions * scene.powers) @ directions.conj().T + scene.sigma**2 * scene.noise.entries
    return HermitianMatrix.from_array(cov.real if scene.is_real else cov, is_real=scene.is_real)
