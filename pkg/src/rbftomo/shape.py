"""Gaussian-RBF parametric level set and the binary image it induces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from rbftomo.grid import ImageGrid

DEFAULT_EPS = 0.5


@dataclass(frozen=True)
class RbfDictionary:
    """Gaussian bumps ``exp(-beta * |x - c_i|^2)`` sampled at pixel centers.

    ``basis_matrix[p, i]`` is bump ``i`` evaluated at pixel ``p``.
    """

    grid: ImageGrid
    centers: np.ndarray
    sigma: float
    beta: float
    basis_matrix: np.ndarray
    center_spacing: int | None = None

    @property
    def n(self) -> int:
        return self.centers.shape[0]


def gaussian_basis(points: np.ndarray, centers: np.ndarray, beta: float) -> np.ndarray:
    d2 = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centers.T
        + np.sum(centers**2, axis=1)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    # exact zeros where a point sits on a center; the expansion above leaves roundoff
    same = np.all(points[:, None, :] == centers[None, :, :], axis=2)
    d2[same] = 0.0
    return np.exp(-beta * d2)


def _axis_centers(n_pixels: int, spacing: int, h: float) -> np.ndarray:
    count = n_pixels // spacing
    return (np.arange(count) - 0.5 * (count - 1)) * spacing * h


def make_dictionary(
    grid: ImageGrid,
    center_spacing: int = 8,
    sigma: float | None = None,
    beta: float | None = None,
) -> RbfDictionary:
    """Lay RBF centers on a coarse sub-grid of ``grid``.

    Parameters
    ----------
    center_spacing : int
        Distance between neighbouring centers in pixels. Centers are inset
        by half a spacing from the border when the spacing divides the grid.
    sigma : float, optional
        Gaussian width in physical units; defaults to 1.5 spacings.
    beta : float, optional
        Overrides the shape parameter, which is otherwise ``1/(sqrt(2)*sigma)``.
    """
    if int(center_spacing) != center_spacing or center_spacing < 1:
        raise ValueError(f"center_spacing must be a positive integer, got {center_spacing}")
    center_spacing = int(center_spacing)
    if sigma is None:
        sigma = 1.5 * center_spacing * grid.pixel_size
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if beta is None:
        beta = 1.0 / (math.sqrt(2.0) * sigma)
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")

    xs = _axis_centers(grid.nx, center_spacing, grid.pixel_size)
    ys = _axis_centers(grid.ny, center_spacing, grid.pixel_size)
    if xs.size == 0 or ys.size == 0:
        raise ValueError(
            f"center_spacing {center_spacing} leaves no centers on a {grid.nx}x{grid.ny} grid"
        )
    X, Y = np.meshgrid(xs, ys)
    centers = np.column_stack([X.ravel(), Y.ravel()])
    B = gaussian_basis(grid.pixel_centers(), centers, beta)
    return RbfDictionary(grid, centers, float(sigma), float(beta), B, center_spacing)


def dictionary_from_centers(grid: ImageGrid, centers, sigma: float, beta: float | None = None):
    """Dictionary with explicitly placed centers."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.shape[0] < 1 or centers.shape[1] != 2:
        raise ValueError("centers must be a non-empty (n, 2) array")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if beta is None:
        beta = 1.0 / (math.sqrt(2.0) * sigma)
    B = gaussian_basis(grid.pixel_centers(), centers, beta)
    return RbfDictionary(grid, centers, float(sigma), float(beta), B)


@dataclass
class ShapeParams:
    """Level-set weights plus the two gray values and the Heaviside width.

    ``heaviside`` maps ``(t, eps)`` to ``(H(t), H'(t))``; it is swappable so
    tests can linearize the model.
    """

    alpha: np.ndarray
    u_in: float = 1.0
    u_ex: float = 0.0
    eps: float = DEFAULT_EPS
    heaviside: Callable = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).ravel()
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.u_in == self.u_ex:
            raise ValueError("u_in and u_ex must differ")
        if not np.all(np.isfinite(self.alpha)):
            raise ValueError("alpha must be finite")
        if self.heaviside is None:
            self.heaviside = smoothed_heaviside

    def with_alpha(self, alpha) -> "ShapeParams":
        return ShapeParams(alpha, self.u_in, self.u_ex, self.eps, self.heaviside)


def eval_levelset(dictionary: RbfDictionary, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size != dictionary.n:
        raise ValueError(f"alpha has {alpha.size} weights, dictionary has {dictionary.n}")
    return dictionary.basis_matrix @ alpha


def smoothed_heaviside(t, eps: float = DEFAULT_EPS):
    """Arctan-smoothed step ``H`` and its derivative, evaluated at ``t``.

    Returns ``(H, delta)`` with ``H(t) = 1/2 + arctan(t/eps)/pi``.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    t = np.asarray(t, dtype=float)
    H = 0.5 + np.arctan(t / eps) / np.pi
    delta = (eps / np.pi) / (eps**2 + t**2)
    return H, delta


def synthesize_image(dictionary: RbfDictionary, params: ShapeParams) -> np.ndarray:
    f = eval_levelset(dictionary, params.alpha)
    H, _ = params.heaviside(f, params.eps)
    return params.u_ex + (params.u_in - params.u_ex) * H


def shape_jacobian(dictionary: RbfDictionary, params: ShapeParams) -> np.ndarray:
    """Dense ``N x n`` matrix of derivatives of the image w.r.t. ``alpha``."""
    f = eval_levelset(dictionary, params.alpha)
    _, delta = params.heaviside(f, params.eps)
    return ((params.u_in - params.u_ex) * delta)[:, None] * dictionary.basis_matrix


def binarize(dictionary: RbfDictionary, params: ShapeParams) -> np.ndarray:
    """Boolean interior mask ``f >= 0``; zero level-set pixels count as inside."""
    return eval_levelset(dictionary, params.alpha) >= 0.0
