from itertools import product

import numpy as np
import pytest
from scipy.ndimage import uniform_filter

from embedded_solvers import (
    AdmmContext,
    IlluminationOperator,
    PithConfig,
    ProxGradientOperator,
    admm_d_step,
    box_optimality_residual,
    box_project,
    grid_neighbours,
    hard_threshold,
    hard_threshold_gap,
    illumination_propagate,
    illumination_sweep,
    pith_w_step,
    sphere_optimality_residual,
    sphere_project,
)
from errors import InvalidArgumentError
from problem import Block, IterateState
from tasks import LieInstance, build_lie_problem, smoothness_laplacian
from update_rules import Embedded, embedded_update


def test_hard_threshold_examples():
    """Test HT([3, −0.1, 0.5], λ=0.125, τ=1) = [3, 0, 0], an entry at the threshold 0.5 is zeroed."""
    np.testing.assert_array_equal(hard_threshold([3.0, -0.1, 0.5], 0.125, 1.0), [3.0, 0.0, 0.0])
    np.testing.assert_array_equal(hard_threshold([3.0, -0.1, 0.6], 0.125, 1.0), [3.0, 0.0, 0.6])
    np.testing.assert_array_equal(hard_threshold([1.0, -2.0], 0.0, 1.0), [1.0, -2.0])
    np.testing.assert_array_equal(hard_threshold(np.zeros(3), 1.0, 1.0), np.zeros(3))


def test_hard_threshold_is_the_exact_prox():
    """Test against brute force over every support pattern of 1000 random 4-vectors and weights."""
    rng = np.random.default_rng(0)
    patterns = np.array(list(product([0, 1], repeat=4)), dtype=float)
    for _ in range(1000):
        v = rng.standard_normal(4)
        lam, tau = rng.uniform(0.01, 2.0), rng.uniform(0.1, 5.0)
        candidates = patterns * v
        values = lam * patterns.sum(axis=1) + 0.5 * tau * np.sum((candidates - v) ** 2, axis=1)
        out = hard_threshold(v, lam, tau)
        best = lam * np.count_nonzero(out) + 0.5 * tau * np.sum((out - v) ** 2)
        assert best <= values.min() + 1e-12
        assert hard_threshold_gap(out, v, lam, tau) <= 1e-12


def test_hard_threshold_preconditions():
    with pytest.raises(InvalidArgumentError):
        hard_threshold([1.0], -0.1, 1.0)
    with pytest.raises(InvalidArgumentError):
        hard_threshold([1.0], 0.1, 0.0)


def test_sphere_project_examples():
    """Test the projection of [[3, 0], [4, 0]] onto unit-norm columns."""
    np.testing.assert_allclose(sphere_project([[3.0, 0.0], [4.0, 0.0]]), [[0.6, 1.0], [0.8, 0.0]])
    np.testing.assert_allclose(sphere_project([[0.0], [-2.0]]), [[0.0], [-1.0]])


def test_sphere_project_is_nearest_on_the_circle():
    """Test 2-vectors against a fine grid of the unit circle."""
    rng = np.random.default_rng(1)
    angles = np.linspace(0, 2 * np.pi, 20000, endpoint=False)
    circle = np.stack([np.cos(angles), np.sin(angles)])
    for _ in range(100):
        v = rng.standard_normal(2)
        projected = sphere_project(v[:, None])[:, 0]
        grid_best = np.min(np.linalg.norm(circle - v[:, None], axis=0))
        assert np.linalg.norm(projected - v) <= grid_best + 1e-9
        assert np.linalg.norm(projected) == pytest.approx(1.0, abs=1e-12)


def test_sphere_project_is_nearest_on_the_unit_sphere():
    """Test 3-vectors against a 1e-3 rad grid of polar and azimuthal angles.

    The grid maximum of v·u factors into the polar sweep of v_z cos θ + sin θ · max_φ(v_x cos φ + v_y sin φ).
    """
    rng = np.random.default_rng(7)
    polar = np.arange(0.0, np.pi + 1e-3, 1e-3)
    azimuth = np.arange(0.0, 2 * np.pi, 1e-3)
    for _ in range(100):
        v = rng.standard_normal(3)
        planar = np.max(v[0] * np.cos(azimuth) + v[1] * np.sin(azimuth))
        best_dot = np.max(v[2] * np.cos(polar) + np.sin(polar) * planar)
        grid_best = np.sqrt(max(v @ v - 2 * best_dot + 1.0, 0.0))
        projected = sphere_project(v[:, None])[:, 0]
        distance = np.linalg.norm(projected - v)
        assert distance <= grid_best + 1e-9
        assert grid_best <= distance + 1e-3 * (1 + np.linalg.norm(v))


def test_box_project_against_a_grid():
    """Test the clamp against a 1e-3 grid of every coordinate range over 100 random boxes."""
    rng = np.random.default_rng(8)
    for _ in range(100):
        lo = rng.uniform(-1.0, 0.5, 3)
        hi = lo + rng.uniform(0.0, 1.5, 3)
        v = 2 * rng.standard_normal(3)
        out = box_project(v, lo, hi)
        grid_best = 0.0
        for i in range(3):
            grid = np.append(np.arange(lo[i], hi[i], 1e-3), hi[i])
            grid_best += np.min((grid - v[i]) ** 2)
            assert np.min(np.abs(grid - out[i])) <= 1e-3
        assert np.sum((out - v) ** 2) <= grid_best + 1e-12
        assert box_optimality_residual(out, v, lo, hi) == 0.0


def test_optimality_residuals_flag_wrong_outputs():
    """Test that each residual vanishes on the exact prox and not on a feasible alternative."""
    rng = np.random.default_rng(9)
    V = rng.standard_normal((4, 5))
    assert sphere_optimality_residual(sphere_project(V), V) < 1e-12
    first_axis = np.zeros_like(V)
    first_axis[0] = 1.0
    assert sphere_optimality_residual(first_axis, V) > 1e-3
    assert sphere_optimality_residual(-sphere_project(V), V) > 1.0
    assert hard_threshold_gap(hard_threshold(V, 0.2, 1.5), V, 0.2, 1.5) <= 1e-12
    assert hard_threshold_gap(np.zeros_like(V), V, 0.2, 1.5) > 0.0
    assert box_optimality_residual(box_project(V, 0.0, 1.0), V, 0.0, 1.0) == 0.0
    assert box_optimality_residual(np.zeros_like(V), V, 0.0, 1.0) > 0.0
    assert box_optimality_residual(np.full_like(V, 2.0), V, 0.0, 1.0) > 0.0


def test_box_project():
    np.testing.assert_array_equal(box_project([-1.0, 0.5, 2.0], 0.0, 1.0), [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(box_project([0.7, 0.7], 0.0, [0.5, 1.0]), [0.5, 0.7])
    with pytest.raises(InvalidArgumentError):
        box_project([0.0], 1.0, 0.0)


def test_admm_with_zero_codes():
    """Test that W = 0 leaves the anchor as the ADMM fixed point."""
    rng = np.random.default_rng(2)
    D_anchor = sphere_project(rng.standard_normal((3, 2)))
    W = np.zeros((5, 2))
    Y = rng.standard_normal((3, 5))
    context = AdmmContext.initial(D_anchor, W, 1.0)
    assert context.rho == 1.0
    Z = D_anchor
    for _ in range(5):
        Z, context = admm_d_step(context, Z, W, Y, D_anchor, 1.0)
    np.testing.assert_allclose(Z, D_anchor, atol=1e-12)


def test_admm_solves_a_single_atom_subproblem():
    """Test ADMM against the closed-form optimum b/‖b‖ of a single unit-norm atom.

    With n = 2, m = 1 the subproblem min ½‖Y − dwᵀ‖² + η/2‖d − d_a‖² over ‖d‖ = 1
    is minimized by d = b/‖b‖, b = Yw + η·d_a.
    """
    W = np.array([[1.0], [0.5], [-1.0]])
    Y = np.array([[2.0, 0.0, -2.0], [1.0, 1.0, 0.0]])
    D_anchor = np.array([[1.0], [0.0]])
    context = AdmmContext.initial(D_anchor, W, 1.0, rho=1.0)
    Z = D_anchor
    for _ in range(200):
        Z, context = admm_d_step(context, Z, W, Y, D_anchor, 1.0)
    b = Y @ W[:, 0] + D_anchor[:, 0]
    np.testing.assert_allclose(Z[:, 0], b / np.linalg.norm(b), atol=1e-3)
    assert context.primal_residual() < 1e-6
    assert np.linalg.norm(Z) == pytest.approx(1.0, abs=1e-12)

    angles = np.linspace(0, 2 * np.pi, 100000, endpoint=False)
    grid = np.stack([np.cos(angles), np.sin(angles)])
    values = 0.5 * np.sum((Y[:, :, None] - grid[:, None, :] * W[None, :, 0, None]) ** 2, axis=(0, 1))
    values += 0.5 * np.sum((grid - D_anchor) ** 2, axis=0)
    np.testing.assert_allclose(Z[:, 0], grid[:, np.argmin(values)], atol=1e-3)


def test_admm_dual_starts_radial():
    """Test U⁰ = −(dᵢᵀgᵢ)dᵢ/ρ per column with g = ∇H(D_anchor), and U⁰ = 0 without data or codes."""
    rng = np.random.default_rng(10)
    D_anchor = sphere_project(rng.standard_normal((4, 3)))
    W = rng.standard_normal((7, 3))
    Y = rng.standard_normal((4, 7))
    context = AdmmContext.initial(D_anchor, W, 1.0, Y=Y)
    grad = (D_anchor @ W.T - Y) @ W
    for i in range(3):
        expected = -(D_anchor[:, i] @ grad[:, i]) * D_anchor[:, i] / context.rho
        np.testing.assert_allclose(context.U[:, i], expected, atol=1e-12)
    np.testing.assert_array_equal(AdmmContext.initial(D_anchor, W, 1.0).U, np.zeros((4, 3)))
    np.testing.assert_array_equal(AdmmContext.initial(D_anchor, np.zeros((7, 3)), 1.0, Y=Y).U, np.zeros((4, 3)))


def test_admm_warm_dual_keeps_a_stationary_anchor():
    """Test that a stationary anchor is returned after one warm-started pass but not after a cold one.

    Y = D*(Id − diag(c)(WᵀW)⁻¹)Wᵀ makes ∇H(D*) = D* diag(c) radial, so D* solves its own subproblem.
    """
    rng = np.random.default_rng(11)
    D_star = sphere_project(rng.standard_normal((5, 3)))
    W = rng.standard_normal((6, 3))
    c = np.array([0.8, -1.5, 0.5])
    Y = D_star @ (np.eye(3) - np.diag(c) @ np.linalg.inv(W.T @ W)) @ W.T
    np.testing.assert_allclose((D_star @ W.T - Y) @ W, D_star * c, atol=1e-10)

    warm = AdmmContext.initial(D_star, W, 1.0, Y=Y)
    Z, _ = admm_d_step(warm, D_star, W, Y, D_star, 1.0)
    np.testing.assert_allclose(Z, D_star, atol=1e-10)

    cold = AdmmContext.initial(D_star, W, 1.0)
    Z_cold, _ = admm_d_step(cold, D_star, W, Y, D_star, 1.0)
    assert np.linalg.norm(Z_cold - D_star) > 1e-6


def test_admm_rejects_mismatched_iterate():
    context = AdmmContext.initial(np.eye(2), np.ones((3, 2)), 1.0)
    with pytest.raises(InvalidArgumentError):
        admm_d_step(context, np.eye(3), np.ones((3, 2)), np.ones((2, 3)), np.eye(2), 1.0)


def test_pith_scalar():
    """Test one pass by hand: W=0, D=1, Y=2, anchor 0, η=1, τ=0.4 gives HT(0.8, λ, 2.5)."""
    config = PithConfig(step_size=0.4, inner_lipschitz=1.0)
    W = pith_w_step(np.zeros((1, 1)), np.ones((1, 1)), np.array([[2.0]]), np.zeros((1, 1)), 1.0, 0.1, config)
    assert W[0, 0] == pytest.approx(0.8)
    W = pith_w_step(np.zeros((1, 1)), np.ones((1, 1)), np.array([[2.0]]), np.zeros((1, 1)), 1.0, 1.0, config)
    assert W[0, 0] == 0.0


def test_pith_without_penalty_converges_to_ridge():
    """Test that λ = 0 contracts towards the ridge solution."""
    rng = np.random.default_rng(3)
    D = sphere_project(rng.standard_normal((5, 3)))
    Y = rng.standard_normal((5, 8))
    anchor = rng.standard_normal((8, 3))
    eta = 1.0
    L = float(np.linalg.eigvalsh(D.T @ D)[-1])
    config = PithConfig(step_size=0.9 / (L + eta), inner_lipschitz=L)
    ridge = np.linalg.solve(D.T @ D + eta * np.eye(3), D.T @ Y + eta * anchor.T).T
    W = np.zeros_like(anchor)
    distances = []
    for _ in range(300):
        W = pith_w_step(W, D, Y, anchor, eta, 0.0, config)
        distances.append(np.linalg.norm(W - ridge))
    assert distances[-1] < 1e-8
    assert all(later <= earlier + 1e-12 for earlier, later in zip(distances, distances[1:]))


def test_pith_step_size_precondition():
    config = PithConfig(step_size=0.6, inner_lipschitz=1.0)
    with pytest.raises(InvalidArgumentError):
        pith_w_step(np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1)), np.zeros((1, 1)), 1.0, 0.1, config)


def test_illumination_constant_image():
    """Test that a constant observation with I = O is a fixed point."""
    O = np.full((6, 6), 0.4)
    out = illumination_propagate(O, np.full((6, 6), 0.5), O, O, 1.0, 2)
    np.testing.assert_allclose(out, O)


def test_illumination_radius_zero():
    """Test that radius 0 clamps max(O, I) onto [0, O], i.e. returns O."""
    rng = np.random.default_rng(4)
    O = rng.uniform(0, 1, (5, 5))
    I = rng.uniform(0, 1, (5, 5))
    np.testing.assert_allclose(illumination_propagate(I, np.ones((5, 5)), O, I, 1.0, 0), O)


def test_illumination_matches_naive_filter():
    """Test the box filter against an explicit window mean with replicated borders."""
    rng = np.random.default_rng(5)
    O = rng.uniform(0.2, 1.0, (7, 9))
    I = 0.5 * O
    radius = 1
    padded = np.pad(np.maximum(O, I), radius, mode="edge")
    naive = np.zeros_like(O)
    for i in range(O.shape[0]):
        for j in range(O.shape[1]):
            naive[i, j] = padded[i : i + 2 * radius + 1, j : j + 2 * radius + 1].mean()
    out = illumination_propagate(I, np.ones_like(O), O, I, 1.0, radius)
    np.testing.assert_allclose(out, np.minimum(naive, O), atol=1e-12)
    np.testing.assert_allclose(uniform_filter(O, 3, mode="nearest"), naive, atol=1e-12)
    assert np.all(out >= 0) and np.all(out <= O)


def test_illumination_preconditions():
    O = np.ones((3, 3))
    with pytest.raises(InvalidArgumentError):
        illumination_propagate(O, O, O, O, 1.0, -1)
    with pytest.raises(InvalidArgumentError):
        illumination_propagate(np.ones((2, 2)), O, O, O, 1.0, 1)


def test_prox_gradient_operator_converges_to_the_subproblem_solution(toy):
    """Test that repeated passes approach the exact η-proximal subproblem minimizer."""
    anchor = np.array([2.0, 0.0, -1.0])
    other = np.array([0.5, 0.5, 0.5])
    operator = ProxGradientOperator(toy, Block.X)
    operator.reset(anchor, other, 1.0)
    assert operator.step_size == pytest.approx(0.9 / 2.5)
    current = anchor
    for _ in range(200):
        current = operator.step(current, other, anchor, 1.0)
    np.testing.assert_allclose(current, toy.exact_prox_x(anchor, other, 1.0), atol=1e-10)


def test_grid_neighbours_give_the_laplacian():
    """Test count·I − sum = ∇ᵀ∇I on rectangular and single-row grids."""
    rng = np.random.default_rng(12)
    for shape in ((5, 7), (1, 4), (3, 1)):
        I = rng.uniform(0, 1, shape)
        total, count = grid_neighbours(I)
        np.testing.assert_allclose(count * I - total, smoothness_laplacian(I), atol=1e-12)
    _, count = grid_neighbours(np.zeros((3, 3)))
    np.testing.assert_array_equal(count, [[2, 3, 2], [3, 4, 3], [2, 3, 2]])


def test_illumination_sweep_converges_to_the_subproblem_solution():
    """Test that repeated sweeps reach a point where the projected gradient of the subproblem vanishes."""
    rng = np.random.default_rng(13)
    O = rng.uniform(0.05, 0.9, (8, 8))
    R = rng.uniform(0.0, 1.0, (8, 8))
    anchor = rng.uniform(0.0, 1.0, (8, 8)) * O
    alpha, eta = 0.1, 1.0
    I = np.zeros_like(O)
    for _ in range(100):
        I = illumination_sweep(I, R, O, anchor, eta, alpha)
    grad = alpha * smoothness_laplacian(I) + (I * R - O) * R + eta * (I - anchor)
    assert box_optimality_residual(I, I - grad, 0.0, O) < 1e-10
    assert np.all(I >= 0) and np.all(I <= O)


def test_illumination_sweep_contracts():
    """Test the max-norm contraction factor 4α/(4α + η)."""
    rng = np.random.default_rng(14)
    O = rng.uniform(0.1, 0.9, (6, 6))
    R = rng.uniform(0.0, 1.0, (6, 6))
    anchor = 0.5 * O
    first, second = rng.uniform(0, 1, (2, 6, 6)) * O
    gap = np.max(np.abs(illumination_sweep(first, R, O, anchor, 1.0, 0.1) - illumination_sweep(second, R, O, anchor, 1.0, 0.1)))
    assert gap <= 0.4 / 1.4 * np.max(np.abs(first - second)) + 1e-15


def test_illumination_sweep_preconditions():
    O = np.ones((3, 3))
    with pytest.raises(InvalidArgumentError):
        illumination_sweep(O, O, O, O, 1.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        illumination_sweep(O, O, O, O, 0.0, 0.1)
    with pytest.raises(InvalidArgumentError):
        illumination_sweep(np.ones((2, 2)), O, O, O, 1.0, 0.1)


def test_illumination_operator_smooths_first():
    """Test that the first propagation after a reset is the smoothing estimator, later ones are anchored sweeps."""
    rng = np.random.default_rng(6)
    O = rng.uniform(0.1, 0.9, (6, 6))
    operator = IlluminationOperator(O, 0.1, radius=1)
    R = np.full_like(O, 0.5)
    anchor = 0.7 * O
    operator.reset(anchor, R, 1.0)
    first = operator.step(anchor, R, anchor, 1.0)
    np.testing.assert_allclose(first, illumination_propagate(anchor, R, O, anchor, 1.0, 1))
    second = operator.step(first, R, anchor, 1.0)
    np.testing.assert_allclose(second, illumination_sweep(first, R, O, anchor, 1.0, 0.1))
    assert operator.applied == 2
    operator.reset(anchor, R, 1.0)
    assert operator.applied == 0
    assert np.all(second >= 0) and np.all(second <= O)


def test_illumination_operator_accepts_near_a_fixed_anchor():
    """Test that the embedded illumination update is accepted when the previous step was small."""
    rng = np.random.default_rng(15)
    O = rng.uniform(0.1, 0.9, (8, 8))
    problem = build_lie_problem(LieInstance(O, 0.1))
    R = rng.uniform(0.2, 1.0, (8, 8))
    I_prev = 0.8 * O
    I = problem.exact_prox_x(I_prev, R, 1.0)
    state = IterateState.initial(I_prev, R).rotate(I, R)
    rule = Embedded(IlluminationOperator(O, 0.1, radius=1), k_max=40)
    result = embedded_update(problem, Block.X, state, rule)
    assert not result.fallback
    assert result.estimate.e_norm <= rule.C * state.lookback(Block.X)
    assert np.all(result.iterate >= 0) and np.all(result.iterate <= O)


def test_illumination_operator_preconditions():
    O = np.full((3, 3), 0.5)
    with pytest.raises(InvalidArgumentError):
        IlluminationOperator(O, 0.1, radius=-1)
    with pytest.raises(InvalidArgumentError):
        IlluminationOperator(O, 0.1, smoothing_steps=-1)
    with pytest.raises(InvalidArgumentError):
        IlluminationOperator(O, 0.0)
