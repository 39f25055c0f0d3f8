"""Damped Gauss-Newton fit of level-set weights to a sinogram."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg as sla
from scipy import ndimage

from rbftomo.projector import Sinogram, SystemMatrix
from rbftomo.shape import (
    RbfDictionary,
    ShapeParams,
    binarize,
    eval_levelset,
    synthesize_image,
)

log = logging.getLogger(__name__)


class SingularSystemError(RuntimeError):
    """The damped normal matrix could not be factorized.

    When raised from :func:`reconstruct`, ``state`` holds the partial run.
    """

    state = None


class NumericalFailure(RuntimeError):
    """The objective became NaN or infinite."""

    state = None


@dataclass(frozen=True)
class Seed:
    """Initial shape: ``circle`` (radius), ``constant`` (value) or ``mask`` (image)."""

    kind: str
    value: object = None

    def __post_init__(self):
        if self.kind not in ("circle", "constant", "mask"):
            raise ValueError(f"unknown seed kind {self.kind!r}")


@dataclass
class SolverOptions:
    max_iters: int = 200
    grad_tol: float | None = None  # None -> 1e-6 * M
    rel_obj_tol: float = 1e-6
    rel_obj_patience: int = 3
    lm_damping_init: float = 1e-3
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 30
    init: Seed | None = None  # None -> centered circle, radius 0.3 * min extent

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        for name in ("rel_obj_tol", "lm_damping_init", "armijo_c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must lie in (0, 1)")
        if not self.armijo_c < 1.0:
            raise ValueError("armijo_c must be < 1")
        if self.max_backtracks < 0 or self.rel_obj_patience < 1:
            raise ValueError("max_backtracks must be >= 0 and rel_obj_patience >= 1")


class TraceRow(NamedTuple):
    iter: int
    objective: float
    grad_norm: float
    step: float
    tau: float
    backtracks: int


@dataclass
class SolverState:
    alpha: np.ndarray
    objective: float
    grad: np.ndarray
    tau: float
    iter: int = 0
    trace: list[TraceRow] = field(default_factory=list)

    def record(self, step: float = 0.0, backtracks: int = 0):
        self.trace.append(
            TraceRow(
                self.iter,
                self.objective,
                float(np.max(np.abs(self.grad))) if self.grad.size else 0.0,
                step,
                self.tau,
                backtracks,
            )
        )


@dataclass
class ReconstructionResult:
    params: ShapeParams
    mask: np.ndarray
    state: SolverState
    stop_reason: str

    @property
    def trace(self) -> list[TraceRow]:
        return self.state.trace


def _check_shapes(A: SystemMatrix, b, dictionary: RbfDictionary) -> np.ndarray:
    b = np.asarray(getattr(b, "values", b), dtype=float).ravel()
    if b.size != A.rows:
        raise ValueError(f"sinogram has {b.size} values, system has {A.rows} rows")
    if dictionary.basis_matrix.shape[0] != A.cols:
        raise ValueError(
            f"dictionary covers {dictionary.basis_matrix.shape[0]} pixels, system has {A.cols}"
        )
    return b


def residual(A: SystemMatrix, b, dictionary: RbfDictionary, params: ShapeParams) -> np.ndarray:
    b = _check_shapes(A, b, dictionary)
    return A.matrix @ synthesize_image(dictionary, params) - b


def objective(A: SystemMatrix, b, dictionary: RbfDictionary, params: ShapeParams) -> float:
    """Squared data misfit ``|A u(alpha) - b|^2``."""
    r = residual(A, b, dictionary, params)
    with np.errstate(over="ignore"):
        # overflow surfaces as inf and is reported by the caller
        return float(r @ r)


def gradient(A: SystemMatrix, b, dictionary: RbfDictionary, params: ShapeParams) -> np.ndarray:
    r = residual(A, b, dictionary, params)
    f = eval_levelset(dictionary, params.alpha)
    _, delta = params.heaviside(f, params.eps)
    # 2 J_u^T A^T r with J_u = diag((u_in - u_ex) * delta) B, never formed
    back = A.matrix.T @ r
    return 2.0 * (dictionary.basis_matrix.T @ ((params.u_in - params.u_ex) * delta * back))


def residual_jacobian(A: SystemMatrix, dictionary: RbfDictionary, params: ShapeParams) -> np.ndarray:
    """Dense ``M x n`` Jacobian of the projected residual."""
    f = eval_levelset(dictionary, params.alpha)
    _, delta = params.heaviside(f, params.eps)
    Ju = ((params.u_in - params.u_ex) * delta)[:, None] * dictionary.basis_matrix
    return np.asarray(A.matrix @ Ju)


def gauss_newton_step(
    A: SystemMatrix,
    b,
    dictionary: RbfDictionary,
    params: ShapeParams,
    state: SolverState,
    grad: np.ndarray | None = None,
    max_escalations: int = 10,
) -> np.ndarray:
    """Levenberg-Marquardt direction for the current weights.

    Solves ``(JtJ + tau*diag(JtJ) + tau*floor*I) d = -grad/2`` where ``J`` is
    the projected residual Jacobian and ``floor = 1e-12 * trace(JtJ) / n``.
    On a failed factorization ``state.tau`` is multiplied by 10, at most
    ``max_escalations`` times.
    """
    if grad is None:
        grad = gradient(A, b, dictionary, params)
    if not np.any(grad):
        return np.zeros_like(grad)
    J = residual_jacobian(A, dictionary, params)
    JtJ = J.T @ J
    n = JtJ.shape[0]
    floor = 1e-12 * np.trace(JtJ) / n
    rhs = -0.5 * grad
    tau = state.tau
    for _ in range(max_escalations + 1):
        H = JtJ + tau * np.diag(np.diag(JtJ)) + tau * floor * np.eye(n)
        try:
            c = sla.cho_factor(H, check_finite=True)
            step = sla.cho_solve(c, rhs)
        except (np.linalg.LinAlgError, ValueError):
            tau *= 10.0
            continue
        if np.all(np.isfinite(step)):
            state.tau = tau
            return step
        tau *= 10.0
    raise SingularSystemError(f"normal matrix singular after damping escalation to tau={tau:g}")


class LineSearchResult(NamedTuple):
    accepted: bool
    step: float
    alpha: np.ndarray
    objective: float
    backtracks: int
    fallback: bool


def armijo_backtrack(
    fun: Callable[[np.ndarray], float],
    x: np.ndarray,
    fx: float,
    grad: np.ndarray,
    direction: np.ndarray,
    c: float = 1e-4,
    shrink: float = 0.5,
    max_backtracks: int = 30,
):
    """Largest ``lam`` in ``1, shrink, shrink**2, ...`` meeting the Armijo test.

    Returns ``(lam, x_new, f_new, backtracks)`` or ``None``. Only strict
    decreases are accepted; a non-descent direction returns ``None`` at once.
    """
    slope = float(grad @ direction)
    if not slope < 0:
        return None
    lam = 1.0
    for k in range(max_backtracks + 1):
        x_new = x + lam * direction
        f_new = fun(x_new)
        if math.isfinite(f_new) and f_new < fx and f_new <= fx + c * lam * slope:
            return lam, x_new, f_new, k
        lam *= shrink
    return None


def line_search(
    A: SystemMatrix,
    b,
    dictionary: RbfDictionary,
    params: ShapeParams,
    direction: np.ndarray,
    grad: np.ndarray | None = None,
    f0: float | None = None,
    options: SolverOptions | None = None,
) -> LineSearchResult:
    """Armijo backtracking along ``direction``, then along ``-grad``.

    ``accepted`` is False when neither direction yields a decrease; the
    caller treats that as stagnation.
    """
    opts = options or SolverOptions()
    if grad is None:
        grad = gradient(A, b, dictionary, params)
    if f0 is None:
        f0 = objective(A, b, dictionary, params)

    def fun(alpha):
        return objective(A, b, dictionary, params.with_alpha(alpha))

    kw = dict(c=opts.armijo_c, shrink=opts.shrink, max_backtracks=opts.max_backtracks)
    found = armijo_backtrack(fun, params.alpha, f0, grad, direction, **kw)
    fallback = False
    if found is None:
        fallback = True
        found = armijo_backtrack(fun, params.alpha, f0, grad, -grad, **kw)
    if found is None:
        return LineSearchResult(False, 0.0, params.alpha.copy(), f0, 0, fallback)
    lam, alpha, f_new, k = found
    return LineSearchResult(True, lam, alpha, f_new, k, fallback)


def init_alpha(dictionary: RbfDictionary, seed: Seed | None = None) -> np.ndarray:
    """Collocate a seed shape's signed function at the RBF centers."""
    grid = dictionary.grid
    if seed is None:
        xmin, xmax, ymin, ymax = grid.extent
        seed = Seed("circle", 0.3 * min(xmax - xmin, ymax - ymin))
    if not isinstance(seed, Seed):
        raise ValueError(f"unknown seed {seed!r}")
    if seed.kind == "circle":
        return float(seed.value) - np.hypot(dictionary.centers[:, 0], dictionary.centers[:, 1])
    if seed.kind == "constant":
        return np.full(dictionary.n, float(seed.value))
    mask = np.asarray(seed.value, dtype=bool).reshape(grid.shape)
    signed = ndimage.uniform_filter(np.where(mask, 1.0, -1.0), size=3, mode="nearest")
    x0, y0 = grid.origin
    h = grid.pixel_size
    cols = (dictionary.centers[:, 0] - x0) / h - 0.5
    rows = (dictionary.centers[:, 1] - y0) / h - 0.5
    return ndimage.map_coordinates(signed, [rows, cols], order=1, mode="nearest")


def reconstruct(
    A: SystemMatrix,
    b,
    dictionary: RbfDictionary,
    options: SolverOptions | None = None,
    u_in: float = 1.0,
    u_ex: float = 0.0,
    eps: float = 0.5,
    alpha0=None,
) -> ReconstructionResult:
    """Fit level-set weights so the synthesized image reproduces ``b``.

    ``alpha0`` overrides the seed in ``options.init``.
    """
    opts = options or SolverOptions()
    b = _check_shapes(A, b, dictionary)
    grad_tol = opts.grad_tol if opts.grad_tol is not None else 1e-6 * A.rows
    alpha = init_alpha(dictionary, opts.init) if alpha0 is None else np.array(alpha0, float)
    params = ShapeParams(alpha, u_in, u_ex, eps)

    f = objective(A, b, dictionary, params)
    if not math.isfinite(f):
        raise NumericalFailure("objective is not finite at the initial weights")
    state = SolverState(params.alpha.copy(), f, gradient(A, b, dictionary, params), opts.lm_damping_init)
    state.record()

    try:
        params, stop = _iterate(A, b, dictionary, params, state, opts, grad_tol)
    except (NumericalFailure, SingularSystemError) as exc:
        exc.state = state
        raise
    return ReconstructionResult(params, binarize(dictionary, params), state, stop)


def _iterate(A, b, dictionary, params, state, opts, grad_tol):
    stop = "max_iters"
    slow = 0
    while state.iter < opts.max_iters:
        if np.max(np.abs(state.grad)) < grad_tol:
            stop = "gradient"
            break
        direction = gauss_newton_step(A, b, dictionary, params, state, grad=state.grad)
        ls = line_search(A, b, dictionary, params, direction, state.grad, state.objective, opts)
        if not ls.accepted:
            stop = "stagnation"
            break
        if not math.isfinite(ls.objective):
            raise NumericalFailure(f"objective became {ls.objective} at iteration {state.iter + 1}")

        f_prev = state.objective
        params = params.with_alpha(ls.alpha)
        state.alpha = params.alpha.copy()
        state.objective = ls.objective
        state.grad = gradient(A, b, dictionary, params)
        state.iter += 1
        if ls.step == 1.0 and not ls.fallback:
            state.tau /= 3.0
        else:
            state.tau *= 2.0
        state.record(ls.step, ls.backtracks)
        log.debug("iter %d objective %.6e step %g tau %.3e", state.iter, state.objective, ls.step, state.tau)

        if (f_prev - state.objective) < opts.rel_obj_tol * f_prev:
            slow += 1
            if slow >= opts.rel_obj_patience:
                stop = "objective"
                break
        else:
            slow = 0
    return params, stop
