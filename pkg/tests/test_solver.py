import math

import numpy as np
import pytest
import scipy.sparse as sp

from rbftomo.grid import ScanGeometry, make_grid, uniform_angles
from rbftomo.metrics import jaccard
from rbftomo.phantoms import make_phantom
from rbftomo.projector import SystemMatrix, build_system_matrix, forward
from rbftomo.shape import (
    ShapeParams,
    binarize,
    dictionary_from_centers,
    make_dictionary,
    synthesize_image,
)
from rbftomo.solver import (
    NumericalFailure,
    Seed,
    SingularSystemError,
    SolverOptions,
    SolverState,
    armijo_backtrack,
    gauss_newton_step,
    gradient,
    init_alpha,
    line_search,
    objective,
    reconstruct,
    residual_jacobian,
)


def identity_heaviside(t, eps):
    return t, np.ones_like(t)


def fresh_state(params, tau=1e-3):
    return SolverState(params.alpha.copy(), 0.0, np.zeros_like(params.alpha), tau)


@pytest.fixture(scope="module")
def sys16():
    grid = make_grid(16, 16)
    geom = ScanGeometry((0.0, math.pi / 2), 24)
    return build_system_matrix(grid, geom), make_dictionary(grid, 4)


@pytest.fixture(scope="module")
def one_by_one():
    grid = make_grid(1, 1)
    A = build_system_matrix(grid, ScanGeometry((0.0,), 1))
    d = dictionary_from_centers(grid, [(0.0, 0.0)], sigma=1.0)
    return A, d


def fd_gradient(A, b, d, params, h=1e-6):
    g = np.zeros(d.n)
    for i in range(d.n):
        e = np.zeros(d.n)
        e[i] = h
        g[i] = (objective(A, b, d, params.with_alpha(params.alpha + e))
                - objective(A, b, d, params.with_alpha(params.alpha - e))) / (2 * h)
    return g


def test_objective_exact_fit(sys16):
    A, d = sys16
    params = ShapeParams(np.random.default_rng(1).normal(size=d.n))
    b = forward(A, synthesize_image(d, params))
    assert objective(A, b, d, params) == 0.0
    assert not np.any(gradient(A, b, d, params))


def test_objective_zero_matrix(sys16):
    A, d = sys16
    Z = SystemMatrix(sp.csr_matrix(A.shape), A.grid, A.geometry)
    b = np.random.default_rng(2).normal(size=A.rows)
    assert objective(Z, b, d, ShapeParams(np.ones(d.n))) == pytest.approx(b @ b)


def test_objective_scalar(one_by_one):
    A, d = one_by_one
    assert objective(A, [1.0], d, ShapeParams([0.0])) == pytest.approx(0.25)


def test_objective_shape_mismatch(sys16):
    A, d = sys16
    with pytest.raises(ValueError):
        objective(A, np.zeros(3), d, ShapeParams(np.zeros(d.n)))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_finite_differences(sys16, seed):
    A, d = sys16
    r = np.random.default_rng(seed)
    truth = make_phantom("disk", A.grid, cx=1.0, cy=-2.0, r=5.0).image()
    b = forward(A, truth)
    params = ShapeParams(r.normal(size=d.n))
    g = gradient(A, b, d, params)
    fd = fd_gradient(A, b, d, params)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) <= 1e-4


def test_gradient_scalar_hand_derivation(one_by_one):
    A, d = one_by_one
    alpha, eps, b = 0.3, 0.5, 0.2
    # f = (H(alpha) - b)^2, H = 1/2 + atan(alpha/eps)/pi, H' = (eps/pi)/(eps^2 + alpha^2)
    H = 0.5 + math.atan(alpha / eps) / math.pi
    dH = (eps / math.pi) / (eps**2 + alpha**2)
    expected = 2 * (H - b) * dH
    assert gradient(A, [b], d, ShapeParams([alpha], eps=eps))[0] == pytest.approx(expected, rel=1e-14)


def test_gauss_newton_linear_model_hits_least_squares():
    grid = make_grid(16, 16)
    A = build_system_matrix(grid, ScanGeometry(tuple(uniform_angles(8, 0, math.pi)), 24))
    d = make_dictionary(grid, 4)
    r = np.random.default_rng(3)
    b = r.normal(size=A.rows)
    params = ShapeParams(r.normal(size=d.n), heaviside=identity_heaviside)
    step = gauss_newton_step(A, b, d, params, fresh_state(params, tau=1e-12))
    # normal-equation oracle for min |A B alpha - b|
    AB = A.toarray() @ d.basis_matrix
    ls = np.linalg.lstsq(AB, b, rcond=None)[0]
    assert params.alpha + step == pytest.approx(ls, rel=1e-6, abs=1e-8)


def test_gauss_newton_zero_gradient(sys16):
    A, d = sys16
    params = ShapeParams(np.ones(d.n))
    b = forward(A, synthesize_image(d, params))
    assert not np.any(gauss_newton_step(A, b, d, params, fresh_state(params)))


def test_gauss_newton_scalar_formula(one_by_one):
    A, d = one_by_one
    params = ShapeParams([0.4])
    b = [0.9]
    tau = 0.05
    g = gradient(A, b, d, params)[0]
    j = residual_jacobian(A, d, params)[0, 0]
    floor = tau * 1e-12 * j * j
    expected = -0.5 * g / (j * j * (1 + tau) + floor)
    step = gauss_newton_step(A, b, d, params, fresh_state(params, tau))
    assert step[0] == pytest.approx(expected, rel=1e-12)


def test_gauss_newton_singular_raises(sys16):
    A, d = sys16

    def broken(t, eps):
        return np.full_like(t, 0.5), np.full_like(t, np.nan)

    params = ShapeParams(np.zeros(d.n), heaviside=broken)
    with pytest.raises(SingularSystemError):
        gauss_newton_step(A, np.ones(A.rows), d, params, fresh_state(params),
                          grad=np.ones(d.n))


def test_armijo_full_step_on_quadratic():
    res = armijo_backtrack(lambda a: float(a @ a), np.array([1.0]), 1.0, np.array([2.0]), np.array([-1.0]))
    lam, x, fx, k = res
    assert lam == 1.0 and k == 0 and x[0] == 0.0 and fx == 0.0


def test_armijo_rejects_overshoot_on_quartic():
    f = lambda a: float(a[0] ** 4)
    lam, x, fx, k = armijo_backtrack(f, np.array([1.0]), 1.0, np.array([4.0]), np.array([-2.0]))
    assert lam <= 0.5 and k >= 1
    # hand check: lam = 1 lands on f(-1) = 1, no decrease; lam = 1/2 lands on 0
    assert lam == 0.5 and fx == 0.0


def test_armijo_non_descent_returns_none():
    assert armijo_backtrack(lambda a: 0.0, np.zeros(1), 0.0, np.ones(1), np.ones(1)) is None


def test_line_search_stagnates_at_exact_fit(sys16):
    A, d = sys16
    params = ShapeParams(np.random.default_rng(4).normal(size=d.n))
    b = forward(A, synthesize_image(d, params))
    ls = line_search(A, b, d, params, np.zeros(d.n))
    assert not ls.accepted


def test_line_search_falls_back_to_gradient(sys16):
    A, d = sys16
    params = ShapeParams(np.zeros(d.n))
    b = forward(A, make_phantom("disk", A.grid, r=5.0).image())
    g = gradient(A, b, d, params)
    ls = line_search(A, b, d, params, g)  # ascent direction on purpose
    assert ls.accepted and ls.fallback
    assert ls.objective < objective(A, b, d, params)


def test_init_alpha_constant_and_mask():
    d = make_dictionary(make_grid(16, 16), 4)
    a = init_alpha(d, Seed("constant", -1.0))
    assert np.all(a == -1.0)
    assert not binarize(d, ShapeParams(a)).any()
    assert np.all(init_alpha(d, Seed("mask", np.ones((16, 16)))) == 1.0)
    with pytest.raises(ValueError):
        Seed("square", 3.0)
    with pytest.raises(ValueError):
        init_alpha(d, "circle")


def test_init_alpha_circle_boundary_within_spacing():
    grid = make_grid(64, 64)
    d = make_dictionary(grid, 8)
    r = 18.0
    mask = binarize(d, ShapeParams(init_alpha(d, Seed("circle", r))))
    rho = np.hypot(*grid.pixel_centers().T)
    ideal = rho < r
    wrong = mask != ideal
    assert np.all(np.abs(rho[wrong] - r) <= 8.0)


def test_init_alpha_default_circle():
    grid = make_grid(40, 20)
    d = make_dictionary(grid, 4)
    assert init_alpha(d) == pytest.approx(6.0 - np.hypot(*d.centers.T))


def test_init_alpha_from_mask_recovers_shape():
    grid = make_grid(32, 32)
    d = make_dictionary(grid, 4)
    truth = make_phantom("disk", grid, cx=3.0, cy=-2.0, r=9.0).mask
    mask = binarize(d, ShapeParams(init_alpha(d, Seed("mask", truth))))
    assert jaccard(mask, truth) > 0.8


def test_reconstruct_zero_iterations(sys16):
    A, d = sys16
    b = forward(A, make_phantom("disk", A.grid, r=5.0).image())
    opts = SolverOptions(max_iters=0)
    res = reconstruct(A, b, d, opts)
    assert res.state.iter == 0 and len(res.trace) == 1
    assert np.array_equal(res.params.alpha, init_alpha(d))
    assert np.array_equal(res.mask, binarize(d, ShapeParams(init_alpha(d))))


def test_reconstruct_non_finite_data(sys16):
    A, d = sys16
    b = np.full(A.rows, np.inf)
    with pytest.raises(NumericalFailure):
        reconstruct(A, b, d)


def _inverse_crime(grid_n=64, views=4, seed=0):
    grid = make_grid(grid_n, grid_n)
    A = build_system_matrix(grid, ScanGeometry(tuple(uniform_angles(views, 0, math.pi)), 92))
    d = make_dictionary(grid, 8)
    truth_mask = make_phantom("two-disks", grid).mask
    alpha_star = 3.0 * init_alpha(d, Seed("mask", truth_mask))
    params_star = ShapeParams(alpha_star)
    b = forward(A, synthesize_image(d, params_star))
    noise = np.random.default_rng(seed).normal(size=d.n)
    alpha0 = alpha_star + 0.1 * np.abs(alpha_star) * noise
    return A, b, d, params_star, alpha0


def test_inverse_crime_recovery():
    A, b, d, star, alpha0 = _inverse_crime()
    res = reconstruct(A, b, d, SolverOptions(), alpha0=alpha0)
    bb = b.values @ b.values
    assert res.state.objective <= 1e-8 * bb
    assert jaccard(res.mask, binarize(d, star)) >= 0.99


def test_monotone_descent_and_trace_length(sys16):
    A, d = sys16
    b = forward(A, make_phantom("two-disks", A.grid, disks=[(-4, -3, 3), (4, 3, 3)]).image())
    res = reconstruct(A, b, d, SolverOptions(max_iters=40))
    objs = [row.objective for row in res.trace]
    assert len(res.trace) == res.state.iter + 1
    assert all(b_ < a_ for a_, b_ in zip(objs, objs[1:]))


def test_determinism(sys16):
    A, d = sys16
    b = forward(A, make_phantom("disk", A.grid, cx=2, r=5.0).image())
    r1 = reconstruct(A, b, d, SolverOptions(max_iters=30))
    r2 = reconstruct(A, b, d, SolverOptions(max_iters=30))
    assert r1.trace == r2.trace
    assert np.array_equal(r1.params.alpha, r2.params.alpha)


def test_scale_robustness():
    grid = make_grid(32, 32)
    A = build_system_matrix(grid, ScanGeometry(tuple(uniform_angles(4, 0, math.pi)), 46))
    d = make_dictionary(grid, 4)
    b = forward(A, make_phantom("two-disks", grid, disks=[(-7, -2, 5), (7, 4, 4)]).image())
    opts = SolverOptions(grad_tol=1e-30, max_iters=60)
    ref = reconstruct(A, b, d, opts)
    scaled = reconstruct(A.scaled(4.0), b.values * 4.0, d, opts)
    assert np.array_equal(ref.mask, scaled.mask)
    assert scaled.state.objective == pytest.approx(16 * ref.state.objective)


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(shrink=1.0)
    with pytest.raises(ValueError):
        SolverOptions(rel_obj_tol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(max_iters=-1)
