"""Exact ray-pixel intersection tracing and the sparse system matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from rbftomo.grid import ImageGrid, ScanGeometry

# segments shorter than this (relative to pixel size) are corner-crossing roundoff
_MIN_SEGMENT = 1e-12


def _slab(p: float, d: float, lo: float, hi: float) -> tuple[float, float] | None:
    if d == 0.0:
        # half-open cells: a ray on the far boundary belongs to no pixel
        if lo <= p < hi:
            return (-np.inf, np.inf)
        return None
    t0 = (lo - p) / d
    t1 = (hi - p) / d
    return (t0, t1) if t0 <= t1 else (t1, t0)


def trace_ray(grid: ImageGrid, point, direction) -> list[tuple[int, float]]:
    """Pixels crossed by the line ``point + t * direction`` with their lengths.

    Pixels are returned in the order the ray visits them. A ray lying on a
    pixel seam is attributed to the pixel with the larger index, so a ray
    on the upper/right grid boundary misses the grid.
    """
    px, py = float(point[0]), float(point[1])
    dx, dy = float(direction[0]), float(direction[1])
    if abs(np.hypot(dx, dy) - 1.0) > 1e-9:
        raise ValueError("ray direction must be a unit vector")

    xmin, xmax, ymin, ymax = grid.extent
    sx = _slab(px, dx, xmin, xmax)
    sy = _slab(py, dy, ymin, ymax)
    if sx is None or sy is None:
        return []
    tmin = max(sx[0], sy[0])
    tmax = min(sx[1], sy[1])
    if not tmax > tmin:
        return []

    h = grid.pixel_size
    ts = [np.array([tmin, tmax])]
    if dx != 0.0:
        tx = (xmin + np.arange(grid.nx + 1) * h - px) / dx
        ts.append(tx[(tx > tmin) & (tx < tmax)])
    if dy != 0.0:
        ty = (ymin + np.arange(grid.ny + 1) * h - py) / dy
        ts.append(ty[(ty > tmin) & (ty < tmax)])
    t = np.unique(np.concatenate(ts))

    lengths = np.diff(t)
    mid = 0.5 * (t[:-1] + t[1:])
    keep = lengths > _MIN_SEGMENT * h
    lengths, mid = lengths[keep], mid[keep]

    ix = np.floor((px + mid * dx - xmin) / h).astype(np.int64)
    iy = np.floor((py + mid * dy - ymin) / h).astype(np.int64)
    np.clip(ix, 0, grid.nx - 1, out=ix)
    np.clip(iy, 0, grid.ny - 1, out=iy)
    pix = iy * grid.nx + ix
    return [(int(p), float(w)) for p, w in zip(pix, lengths)]


@dataclass(frozen=True)
class SystemMatrix:
    """Sparse ``M x N`` matrix of ray-pixel intersection lengths.

    Row ``a * n_det + d`` holds the ray of angle ``a`` and detector bin ``d``.
    """

    matrix: sp.csr_matrix
    grid: ImageGrid
    geometry: ScanGeometry

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and weights of row ``i``."""
        lo, hi = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return self.matrix.indices[lo:hi], self.matrix.data[lo:hi]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def scaled(self, c: float) -> "SystemMatrix":
        return SystemMatrix((self.matrix * c).tocsr(), self.grid, self.geometry)


@dataclass(frozen=True)
class Sinogram:
    """Measurements ordered angle-major, then detector bin."""

    values: np.ndarray
    n_angles: int
    n_det: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", values)
        if values.size != self.n_angles * self.n_det:
            raise ValueError(
                f"sinogram has {values.size} values, expected {self.n_angles}x{self.n_det}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("sinogram values must be finite")

    def __len__(self):
        return self.values.size

    def as_2d(self) -> np.ndarray:
        return self.values.reshape(self.n_angles, self.n_det)


def build_system_matrix(grid: ImageGrid, geom: ScanGeometry) -> SystemMatrix:
    indptr = [0]
    indices: list[np.ndarray] = []
    data: list[np.ndarray] = []
    for a in range(geom.n_angles):
        for d in range(geom.n_det):
            point, direction = geom.ray(a, d)
            hits = trace_ray(grid, point, direction)
            if hits:
                cols, w = zip(*hits)
                # a ray crosses each pixel once; sort columns for canonical CSR
                order = np.argsort(cols, kind="stable")
                indices.append(np.asarray(cols, dtype=np.int64)[order])
                data.append(np.asarray(w)[order])
            indptr.append(indptr[-1] + len(hits))
    shape = (geom.n_rays, grid.n_pixels)
    if indices:
        mat = sp.csr_matrix(
            (np.concatenate(data), np.concatenate(indices), np.asarray(indptr)), shape=shape
        )
    else:
        mat = sp.csr_matrix(shape)
    return SystemMatrix(mat, grid, geom)


def forward(A: SystemMatrix, u) -> Sinogram:
    u = np.asarray(u, dtype=float).ravel()
    if u.size != A.cols:
        raise ValueError(f"image has {u.size} pixels, system expects {A.cols}")
    return Sinogram(A.matrix @ u, A.geometry.n_angles, A.geometry.n_det)


def adjoint(A: SystemMatrix, r) -> np.ndarray:
    r = np.asarray(getattr(r, "values", r), dtype=float).ravel()
    if r.size != A.rows:
        raise ValueError(f"residual has {r.size} entries, system expects {A.rows}")
    return A.matrix.T @ r
