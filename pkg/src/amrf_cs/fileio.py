"""Plain-text file formats: CSV matrices/vectors and PGM images.

CSV files are ASCII, one row per line, comma separated, no header. Vectors
are written as a single column.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

PathLike = str | os.PathLike


def write_csv(path: PathLike, array) -> None:
    arr = np.asarray(array, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected a vector or matrix, got ndim={arr.ndim}")
    np.savetxt(path, arr, delimiter=",", fmt="%.17g")


def read_csv(path: PathLike) -> np.ndarray:
    """Read a CSV matrix; single-column files come back as 1-D vectors."""
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    if arr.shape[1] == 1:
        return arr[:, 0]
    return arr


def _pgm_tokens(data: bytes):
    # yields (token, end offset); skips '#' comments
    i, n = 0, len(data)
    while i < n:
        c = data[i:i + 1]
        if c == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            yield data[i:j], j
            i = j


def read_pgm(path: PathLike) -> tuple[np.ndarray, int]:
    """Read a P2 (ASCII) or P5 (binary) PGM file.

    Returns the pixel array as float64 and the file's maxval.
    """
    data = Path(path).read_bytes()
    tokens = _pgm_tokens(data)
    magic, _ = next(tokens)
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a P2/P5 PGM file")
    width = int(next(tokens)[0])
    height = int(next(tokens)[0])
    maxval_tok, end = next(tokens)
    maxval = int(maxval_tok)
    if magic == b"P2":
        values = [int(t) for t, _ in tokens]
        pixels = np.array(values[:width * height], dtype=float)
    else:
        # exactly one whitespace byte separates maxval from the raster
        start = end + 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        pixels = np.frombuffer(data, dtype=dtype, count=width * height, offset=start).astype(float)
    if pixels.size != width * height:
        raise ValueError(f"{path}: truncated raster")
    return pixels.reshape(height, width), maxval


def write_pgm(path: PathLike, pixels, maxval: int = 255, binary: bool = True) -> None:
    img = np.clip(np.rint(np.asarray(pixels, dtype=float)), 0, maxval).astype(int)
    height, width = img.shape
    if binary:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        header = f"P5\n{width} {height}\n{maxval}\n".encode()
        Path(path).write_bytes(header + img.astype(dtype).tobytes())
    else:
        lines = [f"P2\n{width} {height}\n{maxval}"]
        lines += [" ".join(str(v) for v in row) for row in img]
        Path(path).write_text("\n".join(lines) + "\n")
