"""Dense linear algebra, structured covariances, and seeded normal sampling.

Everything downstream (lasso paths, the precision-matrix programs, the
simulation harness) builds on the primitives here. Sampling is driven by an
explicit :class:`RngState` value so that studies reproduce bit-for-bit across
runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "BandOverlap",
    "DimensionMismatch",
    "InvalidRho",
    "NotPositiveDefinite",
    "RngState",
    "SpdMatrix",
    "SYMMETRY_RTOL",
    "as_matrix",
    "as_vector",
    "cholesky",
    "circulant_sigma",
    "mvnormal_sample",
    "toeplitz_sigma",
]

SYMMETRY_RTOL = 1e-12


class NotPositiveDefinite(ValueError):
    """Cholesky hit a nonpositive pivot; not a valid covariance matrix."""


class InvalidRho(ValueError):
    """Toeplitz autocorrelation must satisfy |rho| < 1."""


class BandOverlap(ValueError):
    """Circulant band wraps onto itself; requires p > 2*band."""


class DimensionMismatch(ValueError):
    """Operand dimensions are incompatible."""


def as_matrix(m, name: str = "matrix") -> NDArray[np.float64]:
    """Validate and return a finite float64 2-d array."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name}: expected 2 dimensions, got {a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: entries must be finite")
    return a


def as_vector(v, name: str = "vector") -> NDArray[np.float64]:
    """Validate and return a finite float64 1-d array."""
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionMismatch(f"{name}: expected 1 dimension, got {a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: entries must be finite")
    return a


@dataclass(frozen=True)
class RngState:
    """Value-typed random state: (seed, stream path, algorithm id).

    The underlying generator is Philox (4x64, counter based), seeded through
    numpy's SeedSequence with the stream path as spawn key. Distinct paths
    give statistically independent streams; identical states give
    bit-identical draw sequences. ``generator()`` always starts a stream from
    its beginning, so a state may be reused only to replay the same draws;
    callers needing fresh randomness must split with :meth:`child`.
    """

    seed: int
    stream: tuple[int, ...] = ()
    algorithm: str = "philox4x64"

    def child(self, *path: int) -> "RngState":
        """Split off an independent stream identified by ``path``."""
        return RngState(self.seed, self.stream + path, self.algorithm)

    def generator(self) -> np.random.Generator:
        if self.algorithm != "philox4x64":
            raise ValueError(f"unknown rng algorithm: {self.algorithm!r}")
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(ss))


def cholesky(m) -> NDArray[np.float64]:
    """Lower-triangular L with L @ L.T equal to m.

    Accepts an :class:`SpdMatrix` (returns its cached factor) or any square
    array. Raises :class:`NotPositiveDefinite` when a pivot is nonpositive.
    """
    if isinstance(m, SpdMatrix):
        return m.chol
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch("cholesky: matrix must be square")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


class SpdMatrix:
    """Symmetric positive-definite matrix with an eagerly cached Cholesky factor.

    Symmetry is required within 1e-12 relative max-norm tolerance and the
    factorization runs at construction, so every live instance certifies
    positive-definiteness.
    """

    __slots__ = ("mat", "chol", "dim")

    def __init__(self, mat) -> None:
        m = as_matrix(mat, "SpdMatrix")
        if m.shape[0] != m.shape[1]:
            raise DimensionMismatch("SpdMatrix: matrix must be square")
        scale = float(np.abs(m).max()) if m.size else 0.0
        gap = float(np.abs(m - m.T).max()) if m.size else 0.0
        if gap > SYMMETRY_RTOL * max(scale, np.finfo(np.float64).tiny):
            raise ValueError("SpdMatrix: asymmetry exceeds relative tolerance 1e-12")
        self.mat = m
        self.chol = cholesky(m)
        self.dim = int(m.shape[0])

    def __repr__(self) -> str:
        return f"SpdMatrix(dim={self.dim})"


def mvnormal_sample(rng: RngState, chol, count: int) -> NDArray[np.float64]:
    """Draw ``count`` i.i.d. rows z = L g with g standard normal.

    ``chol`` is the lower Cholesky factor of the target covariance; the same
    RngState always reproduces the same sample.
    """
    L = as_matrix(chol, "chol")
    if L.shape[0] != L.shape[1]:
        raise DimensionMismatch("mvnormal_sample: chol must be square")
    if count < 0:
        raise ValueError("mvnormal_sample: count must be nonnegative")
    g = rng.generator().standard_normal((int(count), L.shape[0]))
    return g @ L.T


def toeplitz_sigma(p: int, rho: float) -> SpdMatrix:
    """Toeplitz correlation matrix with entry (j, k) = rho ** |j - k|."""
    if abs(rho) >= 1:
        raise InvalidRho(f"toeplitz_sigma: |rho| must be < 1, got {rho}")
    if p < 1:
        raise DimensionMismatch("toeplitz_sigma: p must be >= 1")
    idx = np.arange(p)
    return SpdMatrix(np.power(float(rho), np.abs(idx[:, None] - idx[None, :])))


def circulant_sigma(p: int, band: int = 5, offval: float = 0.1) -> SpdMatrix:
    """Circulant-symmetric matrix: unit diagonal, ``offval`` inside the wrapped band.

    Entry (j, k) equals ``offval`` exactly when the circular distance between
    j and k lies in 1..band. The two band arcs must not meet, hence the
    requirement p > 2*band.
    """
    if band < 1:
        raise ValueError("circulant_sigma: band must be >= 1")
    if p <= 2 * band:
        raise BandOverlap(
            f"circulant bands overlap: need p > 2*band, got p={p}, band={band}"
        )
    idx = np.arange(p)
    diff = np.abs(idx[:, None] - idx[None, :])
    circ = np.minimum(diff, p - diff)
    m = np.where((circ >= 1) & (circ <= band), float(offval), 0.0)
    np.fill_diagonal(m, 1.0)
    return SpdMatrix(m)
