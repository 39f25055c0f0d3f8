"""SIRT + Otsu baseline and shape-recovery metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rbftomo.projector import SystemMatrix


@dataclass(frozen=True)
class MetricReport:
    jaccard: float
    pixel_error_fraction: float
    sinogram_rmse: float


def _inverse_or_zero(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v, dtype=float)
    nz = v != 0
    out[nz] = 1.0 / v[nz]
    return out


def sirt(A: SystemMatrix, b, iterations: int = 200, relaxation: float = 1.0, u0=None) -> np.ndarray:
    """Simultaneous iterative reconstruction clamped to ``[0, 1]``.

    ``u <- clip(u + relaxation * C A^T R (b - A u), 0, 1)`` with ``R`` and
    ``C`` the inverse row and column sums of ``A``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not 0.0 < relaxation < 2.0:
        raise ValueError("relaxation must lie in (0, 2)")
    M = A.matrix
    b = np.asarray(getattr(b, "values", b), dtype=float).ravel()
    R = _inverse_or_zero(np.asarray(M.sum(axis=1)).ravel())
    C = _inverse_or_zero(np.asarray(M.sum(axis=0)).ravel())
    u = np.zeros(A.cols) if u0 is None else np.array(u0, dtype=float).ravel()
    for _ in range(iterations):
        u += relaxation * C * (M.T @ (R * (b - M @ u)))
        np.clip(u, 0.0, 1.0, out=u)
    return u


def otsu_threshold(u, bins: int = 256) -> np.ndarray:
    """Binarize ``u`` at the histogram split maximizing between-class variance.

    The histogram spans ``[min(u), max(u)]``; pixels in bins above the chosen
    split are foreground. Ties go to the lower split. A constant image gives
    an empty mask.
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("image must be finite")
    if u.size == 0 or u.min() == u.max():
        return np.zeros(u.shape, dtype=bool)
    lo, hi = float(u.min()), float(u.max())
    idx = np.minimum(((u - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx.ravel(), minlength=bins).astype(float)
    levels = np.arange(bins, dtype=float)
    w0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(counts * levels)[:-1]
    total, stotal = counts.sum(), (counts * levels).sum()
    w1 = total - w0
    valid = (w0 > 0) & (w1 > 0)
    var = np.zeros(bins - 1)
    m0 = s0[valid] / w0[valid]
    m1 = (stotal - s0[valid]) / w1[valid]
    var[valid] = w0[valid] * w1[valid] * (m0 - m1) ** 2
    split = int(np.argmax(var))  # first maximum = lowest split
    return idx > split


def jaccard(mask_a, mask_b) -> float:
    a = np.asarray(mask_a, dtype=bool).ravel()
    b = np.asarray(mask_b, dtype=bool).ravel()
    if a.size != b.size:
        raise ValueError(f"mask sizes differ: {a.size} vs {b.size}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def compare(mask_est, mask_true, A: SystemMatrix | None = None, b=None) -> MetricReport:
    est = np.asarray(mask_est, dtype=bool).ravel()
    true = np.asarray(mask_true, dtype=bool).ravel()
    jac = jaccard(est, true)
    err = np.count_nonzero(est != true) / est.size if est.size else 0.0
    rmse = math.nan
    if A is not None and b is not None:
        b = np.asarray(getattr(b, "values", b), dtype=float).ravel()
        r = A.matrix @ est.astype(float) - b
        rmse = math.sqrt(float(r @ r) / r.size) if r.size else 0.0
    return MetricReport(jac, err, rmse)
