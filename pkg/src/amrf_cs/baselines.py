"""Structure-free greedy baseline."""
from __future__ import annotations

import numpy as np

from .errors import CapacityError, InvalidDimensionError
from .sensing import SensingMatrix


def omp(A: SensingMatrix, y, k_max: int, resid_tol: float = 1e-10, return_path: bool = False):
    """Orthogonal matching pursuit with a least-squares refit every step.

    Picks the column most correlated with the residual (lowest index wins
    ties) until ``k_max`` atoms are active or the residual norm falls below
    ``resid_tol``. With ``return_path`` the selected atoms and residual norms
    after each step are returned as well.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (A.rows,):
        raise InvalidDimensionError(f"measurement length {y.shape} does not match {A.rows} rows")
    if k_max < 1 or k_max > A.rows:
        raise CapacityError(f"k_max must lie in [1, M={A.rows}], got {k_max}")
    a = A.entries
    x = np.zeros(A.cols)
    resid = y.copy()
    active: list[int] = []
    norms = [float(np.linalg.norm(resid))]
    coef = np.zeros(0)
    while len(active) < k_max and norms[-1] >= resid_tol and norms[-1] > 0.0:
        corr = np.abs(a.T @ resid)
        corr[active] = -1.0
        j = int(np.argmax(corr))
        active.append(j)
        coef, *_ = np.linalg.lstsq(a[:, active], y, rcond=None)
        resid = y - a[:, active] @ coef
        norms.append(float(np.linalg.norm(resid)))
    x[active] = coef
    if return_path:
        return x, active, norms
    return x
