"""Binary test phantoms rasterized at pixel centers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rbftomo.grid import ImageGrid

# two disks of unequal size, off-center, separated by a gap
TWO_DISKS = ((-13.0, -4.0, 11.0), (14.0, 8.0, 8.0))


@dataclass(frozen=True)
class Phantom:
    name: str
    mask: np.ndarray
    grid: ImageGrid

    def image(self) -> np.ndarray:
        return self.mask.astype(float)


def _disk(points: np.ndarray, cx: float, cy: float, r: float) -> np.ndarray:
    return np.hypot(points[:, 0] - cx, points[:, 1] - cy) < r


def _check_disks(disks, allow_zero=False):
    out = []
    for d in disks:
        cx, cy, r = (float(v) for v in d)
        if r < 0 or (r == 0 and not allow_zero):
            raise ValueError(f"disk radius must be positive, got {r}")
        out.append((cx, cy, r))
    return out


def make_phantom(kind: str, grid: ImageGrid, **params) -> Phantom:
    """Rasterize a shape; a pixel is inside iff its center is strictly inside.

    Kinds and parameters (physical units):

    - ``disk``: ``cx``, ``cy``, ``r`` (``r = 0`` gives an empty mask)
    - ``two-disks``: optional ``disks`` overriding the default pair
    - ``annulus``: ``r_in``, ``r_out``, optional ``cx``, ``cy``
    - ``blob-union``: ``disks`` list of ``(cx, cy, r)``, optional ``carve``
      list of disks removed afterwards (e.g. a notch)
    """
    pts = grid.pixel_centers()
    if kind == "disk":
        cx, cy, r = _check_disks([(params.get("cx", 0.0), params.get("cy", 0.0), params["r"])], True)[0]
        mask = _disk(pts, cx, cy, r)
    elif kind == "two-disks":
        disks = _check_disks(params.get("disks") or TWO_DISKS)
        if len(disks) != 2:
            raise ValueError("two-disks needs exactly two disks")
        mask = _disk(pts, *disks[0]) | _disk(pts, *disks[1])
    elif kind == "annulus":
        r_in, r_out = float(params["r_in"]), float(params["r_out"])
        if not 0 < r_in < r_out:
            raise ValueError(f"annulus needs 0 < r_in < r_out, got {r_in}, {r_out}")
        cx, cy = float(params.get("cx", 0.0)), float(params.get("cy", 0.0))
        rho = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
        mask = (rho < r_out) & (rho >= r_in)
    elif kind == "blob-union":
        disks = _check_disks(params.get("disks") or ())
        if not disks:
            raise ValueError("blob-union needs at least one disk")
        mask = np.zeros(grid.n_pixels, dtype=bool)
        for d in disks:
            mask |= _disk(pts, *d)
        for d in _check_disks(params.get("carve") or ()):
            mask &= ~_disk(pts, *d)
    else:
        raise ValueError(f"unknown phantom kind {kind!r}")
    return Phantom(params.get("name", kind), mask, grid)
