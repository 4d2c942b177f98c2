"""Random sensing matrices, measurement and noise injection.

All randomness goes through ``numpy.random.default_rng(seed)``, i.e. the
PCG64 bit generator, so identical seeds give bit-identical draws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDimensionError, NumericError, UndefinedSNRError

GRAM_CACHE_CAP = 4096

NOISELESS = math.inf


@dataclass(frozen=True, eq=False)
class SensingMatrix:
    """Dense M x N operator with unit-norm columns.

    ``gram_diag`` always holds diag(A^T A). The full Gram matrix is cached
    only when N does not exceed ``gram_cap``.
    """

    entries: np.ndarray
    gram_diag: np.ndarray
    gram: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_array(cls, entries, normalize: bool = True,
                   gram_cap: int = GRAM_CACHE_CAP) -> "SensingMatrix":
        a = np.array(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise InvalidDimensionError(f"sensing matrix must be 2-D and non-empty, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NumericError("sensing matrix has non-finite entries")
        if normalize:
            norms = np.linalg.norm(a, axis=0)
            if np.any(norms == 0):
                raise InvalidDimensionError("sensing matrix has an all-zero column")
            a /= norms
        a.setflags(write=False)
        gram_diag = np.einsum("ij,ij->j", a, a)
        gram_diag.setflags(write=False)
        gram = None
        if a.shape[1] <= gram_cap:
            gram = a.T @ a
            gram.setflags(write=False)
        return cls(a, gram_diag, gram)

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def gram_product(self) -> np.ndarray:
        return self.gram if self.gram is not None else self.entries.T @ self.entries


@dataclass(frozen=True)
class Measurement:
    y: np.ndarray
    snr_db: float
    true_noise_variance: float


def gen_bernoulli_matrix(m: int, n: int, seed: int, gram_cap: int = GRAM_CACHE_CAP) -> SensingMatrix:
    """Symmetric Bernoulli matrix with entries +-1/sqrt(m)."""
    if m < 1 or n < 1:
        raise InvalidDimensionError(f"invalid sensing dimensions m={m}, n={n}")
    rng = np.random.default_rng(seed)
    signs = np.where(rng.random((m, n)) < 0.5, -1.0, 1.0)
    return SensingMatrix.from_array(signs / math.sqrt(m), normalize=True, gram_cap=gram_cap)


def measure(A: SensingMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != A.cols:
        raise InvalidDimensionError(f"signal length {x.shape} does not match {A.cols} columns")
    return A.entries @ x


def noise_variance_for_snr(y, snr_db: float) -> float:
    y = np.asarray(y, dtype=float)
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    power = float(y @ y) / y.shape[0]
    if power == 0.0:
        raise UndefinedSNRError("SNR is undefined for an all-zero measurement vector")
    return power * 10.0 ** (-snr_db / 10.0)


def add_noise_snr(y, snr_db: float, seed: int) -> Measurement:
    """Add white Gaussian noise so that mean measurement power over noise
    variance equals ``snr_db``. ``snr_db = inf`` means noiseless."""
    y = np.asarray(y, dtype=float)
    var = noise_variance_for_snr(y, snr_db)
    if var == 0.0:
        return Measurement(y.copy(), NOISELESS, 0.0)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(y.shape[0]) * math.sqrt(var)
    return Measurement(y + noise, float(snr_db), var)


def coherence_stats(A: SensingMatrix) -> tuple[float, float]:
    """(max, mean) absolute inner product between distinct columns."""
    g = np.abs(A.gram_product())
    off = g[~np.eye(A.cols, dtype=bool)]
    return float(off.max()), float(off.mean())
