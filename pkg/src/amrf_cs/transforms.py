"""Sparsifying transforms for images: orthonormal 2-D DCT, multi-level
2-D Haar wavelet and PCA with a supplied orthonormal basis.

Images are vectorized in row-major (raster) order everywhere, which is the
node order the grid neighbourhoods in :mod:`amrf_cs.mrf` assume.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft

from .errors import InvalidBasisError, InvalidDimensionError

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class ImageGrid:
    pixels: np.ndarray
    peak: float = 255.0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2:
            raise InvalidDimensionError(f"image must be 2-D, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite pixels")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def vector(self) -> np.ndarray:
        return self.pixels.reshape(-1).copy()


def _as_pixels(img) -> np.ndarray:
    if isinstance(img, ImageGrid):
        return img.pixels
    px = np.asarray(img, dtype=float)
    if px.ndim != 2:
        raise InvalidDimensionError(f"expected a 2-D image, got shape {px.shape}")
    return px


def _as_coefficients(coeffs, shape) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float).reshape(-1)
    h, w = shape
    if c.shape[0] != h * w:
        raise InvalidDimensionError(f"{c.shape[0]} coefficients do not fit a {h}x{w} image")
    return c.reshape(h, w)


# --- DCT -----------------------------------------------------------------

def dct2_forward(img) -> np.ndarray:
    """Orthonormal type-II 2-D DCT, returned as a raster-order vector."""
    return fft.dctn(_as_pixels(img), type=2, norm="ortho").reshape(-1)


def dct2_inverse(coeffs, shape: tuple[int, int], peak: float = 255.0) -> ImageGrid:
    c = _as_coefficients(coeffs, shape)
    return ImageGrid(fft.idctn(c, type=2, norm="ortho"), peak)


# --- Haar ----------------------------------------------------------------

def _check_haar_dims(shape, levels: int) -> None:
    if levels < 0:
        raise InvalidDimensionError("levels must be non-negative")
    step = 2 ** levels
    if shape[0] % step or shape[1] % step:
        raise InvalidDimensionError(
            f"image {shape[0]}x{shape[1]} is not divisible by 2**{levels}")


def _haar_step(block: np.ndarray) -> np.ndarray:
    # columns first (low | high), then rows (low over high)
    lo = (block[:, 0::2] + block[:, 1::2]) / _SQRT2
    hi = (block[:, 0::2] - block[:, 1::2]) / _SQRT2
    block = np.hstack([lo, hi])
    lo = (block[0::2, :] + block[1::2, :]) / _SQRT2
    hi = (block[0::2, :] - block[1::2, :]) / _SQRT2
    return np.vstack([lo, hi])


def _haar_step_inverse(block: np.ndarray) -> np.ndarray:
    h, w = block.shape
    out = np.empty_like(block)
    lo, hi = block[: h // 2, :], block[h // 2:, :]
    out[0::2, :] = (lo + hi) / _SQRT2
    out[1::2, :] = (lo - hi) / _SQRT2
    block = out
    out = np.empty_like(block)
    lo, hi = block[:, : w // 2], block[:, w // 2:]
    out[:, 0::2] = (lo + hi) / _SQRT2
    out[:, 1::2] = (lo - hi) / _SQRT2
    return out


def haar2_forward(img, levels: int = 2) -> np.ndarray:
    """Orthonormal multi-level 2-D Haar transform (Mallat layout, raster order).

    After one level a block ``[[a, b], [c, d]]`` maps to
    ``[[LL, LH], [HL, HH]]`` with ``LL = (a+b+c+d)/2``, ``LH = (a-b+c-d)/2``,
    ``HL = (a+b-c-d)/2`` and ``HH = (a-b-c+d)/2``.
    """
    px = _as_pixels(img).copy()
    _check_haar_dims(px.shape, levels)
    h, w = px.shape
    for _ in range(levels):
        px[:h, :w] = _haar_step(px[:h, :w])
        h, w = h // 2, w // 2
    return px.reshape(-1)


def haar2_inverse(coeffs, shape: tuple[int, int], levels: int = 2, peak: float = 255.0) -> ImageGrid:
    c = _as_coefficients(coeffs, shape).copy()
    _check_haar_dims(c.shape, levels)
    for lvl in reversed(range(levels)):
        h, w = shape[0] >> lvl, shape[1] >> lvl
        c[:h, :w] = _haar_step_inverse(c[:h, :w])
    return ImageGrid(c, peak)


# --- PCA -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Basis:
    """Synthesis basis: columns are basis vectors, signal = matrix @ coefficients."""

    matrix: np.ndarray
    kind: str = "pca"

    @classmethod
    def validated(cls, matrix, kind: str = "pca", tol: float = 1e-8) -> "Basis":
        b = np.array(matrix, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise InvalidBasisError(f"basis must be square, got shape {b.shape}")
        err = np.max(np.abs(b.T @ b - np.eye(b.shape[0])))
        if not err <= tol:
            raise InvalidBasisError(f"basis columns are not orthonormal (max deviation {err:.3g})")
        b.setflags(write=False)
        return cls(b, kind)

    @classmethod
    def identity(cls, n: int) -> "Basis":
        return cls.validated(np.eye(n), "identity")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def pca_forward(signal, basis: Basis) -> np.ndarray:
    """Coefficients B^T s of a vector or image (images are raster-vectorized)."""
    if isinstance(signal, ImageGrid):
        s = signal.vector()
    else:
        s = np.asarray(signal, dtype=float).reshape(-1)
    if s.shape[0] != basis.size:
        raise InvalidDimensionError(f"signal length {s.shape[0]} does not match basis size {basis.size}")
    return basis.matrix.T @ s


def pca_inverse(coeffs, basis: Basis) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float).reshape(-1)
    if c.shape[0] != basis.size:
        raise InvalidDimensionError(f"{c.shape[0]} coefficients do not match basis size {basis.size}")
    return basis.matrix @ c


# --- dispatch used by the experiment runner ---------------------------------

@dataclass(frozen=True)
class Transform:
    """A named image <-> coefficient-vector mapping for a fixed image shape."""

    kind: str
    shape: tuple[int, int]
    levels: int = 2
    basis: Basis | None = None

    def forward(self, pixels) -> np.ndarray:
        if self.kind == "none":
            return _as_pixels(pixels).reshape(-1).copy()
        if self.kind == "dct":
            return dct2_forward(pixels)
        if self.kind == "haar":
            return haar2_forward(pixels, self.levels)
        if self.kind == "pca":
            return pca_forward(_as_pixels(pixels).reshape(-1), self.basis)
        raise ValueError(f"unknown transform {self.kind!r}")

    def inverse(self, coeffs) -> np.ndarray:
        if self.kind == "none":
            return _as_coefficients(coeffs, self.shape).copy()
        if self.kind == "dct":
            return dct2_inverse(coeffs, self.shape).pixels
        if self.kind == "haar":
            return haar2_inverse(coeffs, self.shape, self.levels).pixels
        if self.kind == "pca":
            return pca_inverse(coeffs, self.basis).reshape(self.shape)
        raise ValueError(f"unknown transform {self.kind!r}")


def parse_transform(spec: str, shape: tuple[int, int]) -> Transform:
    """Parse ``none``, ``dct``, ``haar[:levels]`` or ``pca:<basis.csv>``."""
    from .fileio import read_csv

    kind, _, arg = spec.partition(":")
    if kind in ("none", "dct"):
        return Transform(kind, shape)
    if kind == "haar":
        levels = int(arg) if arg else 2
        _check_haar_dims(shape, levels)
        return Transform("haar", shape, levels=levels)
    if kind == "pca":
        if not arg:
            raise InvalidBasisError("pca transform needs a basis path: pca:<file.csv>")
        basis = Basis.validated(read_csv(arg), "pca")
        if basis.size != shape[0] * shape[1]:
            raise InvalidBasisError(f"basis size {basis.size} does not match image {shape}")
        return Transform("pca", shape, basis=basis)
    raise ValueError(f"unknown transform {spec!r}")
