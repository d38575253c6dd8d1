from dataclasses import dataclass
import logging
from typing import Optional, Tuple

import numpy as np
from scipy import linalg as sla

# Hermitian check, relative to max |entry|.
HERMITIAN_RTOL = 1e-12
# Cholesky pivot floor, scaled by n * max-diagonal.
PIVOT_RTOL = 1e-14
# Jacobi stops when the off-diagonal Frobenius norm drops below this fraction of ||A||_F.
JACOBI_RTOL = 1e-13
JACOBI_MAX_SWEEPS = 100
# Eigenvalues closer than this (relative to max |lambda|) are treated as a tie.
TIE_RTOL = 1e-12


class NotPositiveDefinite(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


class DimensionMismatch(ValueError):
    pass


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class HermitianMatrix:
    entries: np.ndarray
    is_real: bool

    @classmethod
    def from_array(cls, array, is_real: Optional[bool] = None) -> 'HermitianMatrix':
        array = np.asarray(array)
        if array.ndim != 2 or array.shape[0] != array.shape[1]:
            raise DimensionMismatch(f'Expect a square matrix, got shape={array.shape}.')

        if is_real is None:
            is_real = not np.iscomplexobj(array) or not np.any(array.imag)
        if is_real and np.iscomplexobj(array) and np.any(array.imag):
            raise ValueError('is_real=True but the matrix has imaginary entries.')

        array = array.astype(np.float64 if is_real else np.complex128)
        scale = float(np.max(np.abs(array))) if array.size else 0.0
        asymmetry = float(np.max(np.abs(array - array.conj().T))) if array.size else 0.0
        if asymmetry > HERMITIAN_RTOL * scale:
            raise ValueError(f'Matrix is not Hermitian (asymmetry={asymmetry}, scale={scale}).')

        # Average out rounding, and pin the diagonal to the real axis.
        array = 0.5 * (array + array.conj().T)
        if not is_real:
            array[np.diag_indices_from(array)] = array.diagonal().real

        return cls(entries=_frozen(array), is_real=bool(is_real))

    @classmethod
    def identity(cls, n: int, is_real: bool = True) -> 'HermitianMatrix':
        return cls.from_array(np.eye(n), is_real=is_real)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.entries)))

    def __add__(self, other: 'HermitianMatrix') -> 'HermitianMatrix':
        check_same_dimension(self, other)
        return HermitianMatrix.from_array(
            self.entries + other.entries,
            is_real=self.is_real and other.is_real,
        )

    def scaled(self, alpha: float) -> 'HermitianMatrix':
        return HermitianMatrix.from_array(alpha * self.entries, is_real=self.is_real)


def check_same_dimension(*matrices: HermitianMatrix) -> None:
    dims = {matrix.n for matrix in matrices}
    if len(dims) != 1:
        raise DimensionMismatch(f'Dimensions differ: {sorted(dims)}.')


@dataclass(frozen=True)
class LowerTriangularFactor:
    '''L with L L^H = A. Applies L^{-1}, L^{-H} and A^{-1} through triangular solves.
    '''
    lower: np.ndarray
    is_real: bool

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    def apply(self, b: np.ndarray) -> np.ndarray:
        return self.lower @ b

    def solve(self, b: np.ndarray) -> np.ndarray:
        return sla.solve_triangular(self.lower, b, lower=True)

    def solve_h(self, b: np.ndarray) -> np.ndarray:
        return sla.solve_triangular(self.lower, b, lower=True, trans='C')

    def inverse_apply(self, b: np.ndarray) -> np.ndarray:
        return sla.cho_solve((self.lower, True), b)

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(self.lower.diagonal().real)))


def cholesky_sqrt(matrix: HermitianMatrix) -> LowerTriangularFactor:
    entries = matrix.entries
    n = matrix.n
    max_diagonal = float(np.max(entries.diagonal().real))
    threshold = n * PIVOT_RTOL * max_diagonal
    if max_diagonal <= 0.0:
        raise NotPositiveDefinite(f'Non-positive diagonal (max={max_diagonal}).')

    try:
        lower = sla.cholesky(entries, lower=True)
    except sla.LinAlgError as err:
        raise NotPositiveDefinite(f'Cholesky factorization failed: {err}') from err

    pivots = lower.diagonal().real**2
    if np.min(pivots) <= threshold:
        raise NotPositiveDefinite(
            f'Cholesky pivot {float(np.min(pivots))} below threshold {threshold}.'
        )
    return LowerTriangularFactor(lower=_frozen(lower), is_real=matrix.is_real)


def whiten(vectors: np.ndarray, factor: LowerTriangularFactor) -> np.ndarray:
    '''Apply W^{-1/2} to column vectors.
    '''
    return factor.solve(vectors)


def _jacobi_rotate(a: np.ndarray, v: np.ndarray, p: int, q: int) -> None:
    apq = a[p, q]
    magnitude = abs(apq)
    # Unit phase of a[p, q]; exactly +-1 for real input.
    phase = apq / magnitude
    theta = (a[q, q].real - a[p, p].real) / (2.0 * magnitude)
    if abs(theta) > 1e150:
        t = 0.5 / theta
    else:
        t = (1.0 if theta >= 0.0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c

    # G = diag(1, conj(phase)) @ [[c, s], [-s, c]].
    g = np.array([[c, s], [-s * np.conj(phase), c * np.conj(phase)]], dtype=a.dtype)
    pq = [p, q]
    a[:, pq] = a[:, pq] @ g
    a[pq, :] = g.conj().T @ a[pq, :]
    a[p, q] = 0.0
    a[q, p] = 0.0
    a[p, p] = a[p, p].real
    a[q, q] = a[q, q].real
    v[:, pq] = v[:, pq] @ g


def _off_diagonal_norm(a: np.ndarray) -> float:
    # Norm of the off-diagonal entries themselves, not ||A||^2 - ||diag||^2.
    return float(np.linalg.norm(a - np.diag(a.diagonal())))


def _sort_eigenpairs(lambdas: np.ndarray, vectors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = lambdas.size
    # Largest component of every vector is made real positive.
    lead = np.argmax(np.abs(vectors), axis=0)
    for col in range(n):
        value = vectors[lead[col], col]
        vectors[:, col] *= np.conj(value) / abs(value)

    order = sorted(range(n), key=lambda idx: -lambdas[idx])
    scale = float(np.max(np.abs(lambdas))) if n else 0.0
    # Within a run of tied eigenvalues, order by the index of the leading component.
    sorted_order = []
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and lambdas[order[start]] - lambdas[order[stop]] <= TIE_RTOL * scale:
            stop += 1
        run = order[start:stop]
        sorted_order.extend(sorted(run, key=lambda idx: (lead[idx], idx)))
        start = stop

    return lambdas[sorted_order], vectors[:, sorted_order]


def hermitian_eig(
    matrix: HermitianMatrix,
    max_sweeps: int = JACOBI_MAX_SWEEPS,
) -> Tuple[np.ndarray, np.ndarray]:
    '''Cyclic complex Jacobi. Returns (eigenvalues descending, orthonormal eigenvector columns).
    '''
    n = matrix.n
    a = np.array(matrix.entries, dtype=np.complex128)
    v = np.eye(n, dtype=np.complex128)
    frobenius = float(np.linalg.norm(a))
    tolerance = JACOBI_RTOL * frobenius

    converged = _off_diagonal_norm(a) <= tolerance
    sweeps = 0
    while not converged:
        if sweeps >= max_sweeps:
            raise NoConvergence(
                f'Jacobi did not converge in {max_sweeps} sweeps '
                f'(off-diagonal={_off_diagonal_norm(a)}, tolerance={tolerance}).'
            )
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] != 0.0:
                    _jacobi_rotate(a, v, p, q)
        sweeps += 1
        converged = _off_diagonal_norm(a) <= tolerance

    logging.debug(f'hermitian_eig n={n} converged after {sweeps} sweeps.')
    lambdas, vectors = _sort_eigenpairs(a.diagonal().real.copy(), v)
    if matrix.is_real:
        vectors = vectors.real
    return _frozen(lambdas), _frozen(vectors)


@dataclass(frozen=True)
class GenEigenDecomposition:
    lambdas: np.ndarray
    vectors: np.ndarray
    whitened_vectors: np.ndarray
    noise_factor: LowerTriangularFactor
    is_real: bool

    @property
    def n(self) -> int:
        return self.lambdas.size


def generalized_eig(r: HermitianMatrix, w: HermitianMatrix) -> GenEigenDecomposition:
    '''Solve lambda R^{-1} u = W^{-1} u by whitening with the Cholesky factor of W.
    '''
    check_same_dimension(r, w)
    factor = cholesky_sqrt(w)

    # R~ = L^{-1} R L^{-H}, two triangular solves.
    left = factor.solve(r.entries)
    whitened = factor.solve(left.conj().T).conj().T
    is_real = r.is_real and w.is_real
    if is_real:
        whitened = whitened.real
    whitened_matrix = HermitianMatrix.from_array(
        0.5 * (whitened + whitened.conj().T),
        is_real=is_real,
    )

    lambdas, t = hermitian_eig(whitened_matrix)
    if lambdas[-1] <= r.n * PIVOT_RTOL * max(lambdas[0], 0.0):
        raise NotPositiveDefinite(
            f'Observed covariance is not positive definite (smallest eigenvalue={lambdas[-1]}).'
        )

    vectors = factor.apply(t)
    return GenEigenDecomposition(
        lambdas=lambdas,
        vectors=_frozen(vectors),
        whitened_vectors=t,
        noise_factor=factor,
        is_real=is_real,
    )
