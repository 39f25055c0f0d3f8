"""Image domain discretization and parallel-beam scan geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ImageGrid:
    """Square-pixel grid of ``nx`` by ``ny`` pixels centered on the origin.

    Pixels are indexed row-major, ``p = iy * nx + ix``; row ``iy`` grows
    with the physical y coordinate.
    """

    nx: int
    ny: int
    pixel_size: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("grid dimensions must be integers")
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.nx}x{self.ny}")
        if not self.pixel_size > 0 or not math.isfinite(self.pixel_size):
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")

    @property
    def n_pixels(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape ``(ny, nx)`` of an image on this grid."""
        return (self.ny, self.nx)

    @property
    def origin(self) -> tuple[float, float]:
        """Physical coordinates of the lower-left grid corner."""
        return (-0.5 * self.nx * self.pixel_size, -0.5 * self.ny * self.pixel_size)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """Bounding box ``(xmin, xmax, ymin, ymax)``."""
        x0, y0 = self.origin
        return (x0, x0 + self.nx * self.pixel_size, y0, y0 + self.ny * self.pixel_size)

    def pixel_center(self, ix: int, iy: int) -> tuple[float, float]:
        x0, y0 = self.origin
        return (x0 + (ix + 0.5) * self.pixel_size, y0 + (iy + 0.5) * self.pixel_size)

    def pixel_centers(self) -> np.ndarray:
        """All pixel centers as an ``(N, 2)`` array in pixel-index order."""
        x0, y0 = self.origin
        xs = x0 + (np.arange(self.nx) + 0.5) * self.pixel_size
        ys = y0 + (np.arange(self.ny) + 0.5) * self.pixel_size
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])


def make_grid(nx: int, ny: int, pixel_size: float = 1.0) -> ImageGrid:
    return ImageGrid(nx, ny, float(pixel_size))


def default_n_det(grid: ImageGrid) -> int:
    """Detector count covering the grid diagonal at every angle.

    The count is rounded up to the parity of the larger grid side so that,
    with unit detector spacing, axis-aligned rays pass through pixel centers
    instead of running along pixel seams.
    """
    side = max(grid.nx, grid.ny)
    n = math.ceil(math.sqrt(2.0) * side)
    return n + (n - side) % 2


def _snap(v: float) -> float:
    # cos/sin of multiples of pi/2 come back with ~1e-16 residue
    for target in (-1.0, 0.0, 1.0):
        if abs(v - target) < 1e-12:
            return target
    return v


@dataclass(frozen=True)
class ScanGeometry:
    """Parallel-beam acquisition: one ray per detector bin and angle.

    The ray for angle ``theta`` and bin ``d`` is the line
    ``x cos(theta) + y sin(theta) = s_d`` traversed along
    ``(-sin(theta), cos(theta))``, with detector offsets
    ``s_d = (d - (n_det - 1) / 2) * det_spacing``.
    """

    angles: tuple[float, ...]
    n_det: int
    det_spacing: float = 1.0
    _dirs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        angles = tuple(float(a) for a in self.angles)
        object.__setattr__(self, "angles", angles)
        if not angles:
            raise ValueError("geometry needs at least one angle")
        for a in angles:
            if not (0.0 <= a < 2.0 * math.pi):
                raise ValueError(f"angle {a!r} outside [0, 2*pi)")
        if int(self.n_det) != self.n_det or self.n_det < 1:
            raise ValueError(f"n_det must be a positive integer, got {self.n_det}")
        if not self.det_spacing > 0:
            raise ValueError(f"det_spacing must be positive, got {self.det_spacing}")
        dirs = np.array([[_snap(math.cos(a)), _snap(math.sin(a))] for a in angles])
        object.__setattr__(self, "_dirs", dirs)

    @property
    def n_angles(self) -> int:
        return len(self.angles)

    @property
    def n_rays(self) -> int:
        return self.n_angles * self.n_det

    def offsets(self) -> np.ndarray:
        return (np.arange(self.n_det) - 0.5 * (self.n_det - 1)) * self.det_spacing

    def ray(self, angle_index: int, det_index: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(point, unit direction)`` of one ray."""
        c, s = self._dirs[angle_index]
        offset = (det_index - 0.5 * (self.n_det - 1)) * self.det_spacing
        return np.array([offset * c, offset * s]), np.array([-s, c])


def uniform_angles(count: int, range_start: float, range_end: float) -> list[float]:
    """``count`` equally spaced angles on the half-open range ``[start, end)``."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if not range_end > range_start:
        raise ValueError(f"empty angular range [{range_start}, {range_end})")
    step = (range_end - range_start) / count
    return [range_start + k * step for k in range(count)]


def limited_angles(count: int, range_end: float) -> list[float]:
    """Angles on ``[0, range_end)`` for limited-angle acquisitions."""
    if not 0.0 < range_end <= 2.0 * math.pi:
        raise ValueError(f"range_end must lie in (0, 2*pi], got {range_end}")
    return uniform_angles(count, 0.0, range_end)
