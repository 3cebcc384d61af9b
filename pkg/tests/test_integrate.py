import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from quantum_lorenz import (
    DomainError,
    IntegratorConfig,
    InvalidParameterError,
    LorenzParams,
    NonConvergenceError,
    StepLimitError,
    dense_eval,
    fixed_points,
    flow_batch,
    flow_map,
    integrate,
    integrate_with_tangent,
    kus_invariant,
    lorenz_jacobian,
    reflect,
)

from conftest import RK4_FINE, random_points
from oracles import expm_by_eigendecomposition

TIGHT = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-12)


@pytest.mark.parametrize("params", [LorenzParams(), LorenzParams(3.0, -2.0, 0.7), LorenzParams(10, 0.5, 8 / 3)])
@pytest.mark.parametrize("method", ["dopri5", "rk4"])
def test_origin_is_constant(params, method):
    traj = integrate([0, 0, 0], params, 7.5, IntegratorConfig(method=method))
    assert np.all(traj.states == 0.0)
    for t in (0.0, 0.123, 3.3, 7.5):
        assert np.all(dense_eval(traj, t) == 0.0)


def test_canonical_fixed_point_stays_put(canonical):
    c_plus = fixed_points(canonical)[1]
    traj = integrate(c_plus, canonical, 10.0)
    assert np.max(np.abs(traj.states - c_plus)) < 1e-6


def test_trajectory_invariants(canonical):
    traj = integrate([1, 1, 1], canonical, 3.0)
    assert traj.times[0] == 0.0 and traj.t_end == 3.0
    assert np.array_equal(traj.states[0], [1.0, 1.0, 1.0])
    assert np.all(np.diff(traj.times) > 0)
    assert np.all(np.isfinite(traj.states))
    for i in range(0, len(traj), 7):
        assert np.array_equal(dense_eval(traj, traj.times[i]), traj.states[i])
    with pytest.raises(ValueError):
        traj.states[0, 0] = 2.0


def test_adaptive_matches_fine_rk4(canonical):
    """Two independent integration paths reach the same endpoint."""
    adaptive = integrate([1, 1, 1], canonical, 1.0, TIGHT).states[-1]
    fixed = integrate([1, 1, 1], canonical, 1.0, RK4_FINE).states[-1]
    assert np.max(np.abs(adaptive - fixed)) <= 1e-8


def test_flow_map_at_zero_is_identity(canonical):
    p = np.array([0.3, -7.1, 12.0])
    assert np.array_equal(flow_map(p, canonical, 0.0), p)
    assert np.array_equal(flow_map(p, canonical, 0), p)


def test_flow_map_is_trajectory_endpoint(canonical):
    traj = integrate([1, 1, 1], canonical, 2.5)
    assert np.array_equal(flow_map([1, 1, 1], canonical, 2.5), traj.states[-1])


def test_prefix_consistency(canonical):
    """Stopping earlier does not change the values seen on the way."""
    long = integrate([1, 1, 1], canonical, 10.0)
    for t in (0.37, 2.0, 5.55, 9.99):
        assert np.array_equal(flow_map([1, 1, 1], canonical, t), dense_eval(long, t))


def test_flow_reflection_symmetry_t5(canonical):
    a = flow_map([1, 1, 1], canonical, 5.0)
    b = flow_map([-1, -1, 1], canonical, 5.0)
    np.testing.assert_array_equal(b, reflect(a))


def test_flow_reflection_symmetry_random(canonical, rng):
    pts = random_points(rng, 20)
    for p in pts:
        for t in (0.3, 1.0):
            a = flow_map(p, canonical, t)
            b = flow_map(reflect(p), canonical, t)
            assert np.max(np.abs(b - reflect(a))) <= 1e-9


def test_kus_decay_quarter_time(kus_params):
    p = flow_map([1, 1, 1], kus_params, 0.25)
    expected = (1 - 20) * math.exp(-20 * 0.25)
    assert math.isclose(kus_invariant(p, kus_params), expected, rel_tol=1e-6)


def test_rk4_order_of_convergence(canonical):
    ref = flow_map([1, 1, 1], canonical, 0.5, IntegratorConfig(method="rk4", step=1e-5))
    hs = np.array([4e-3, 2e-3, 1e-3, 5e-4])
    errs = [np.linalg.norm(flow_map([1, 1, 1], canonical, 0.5, IntegratorConfig(method="rk4", step=h)) - ref)
            for h in hs]
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert 3.7 <= slope <= 4.3


def test_adaptive_fixed_agreement_random_points(canonical, rng):
    cfg = IntegratorConfig()
    pts = random_points(rng, 50)
    fixed = flow_batch(pts, canonical, 1.0, IntegratorConfig(method="rk4", step=1e-4))
    for p, q in zip(pts, fixed):
        a = flow_map(p, canonical, 1.0, cfg)
        assert np.linalg.norm(a - q) <= 100 * (cfg.abs_tol + cfg.rel_tol * np.linalg.norm(a))


def test_batch_rows_match_single_rk4(canonical, rng):
    pts = random_points(rng, 5)
    cfg = IntegratorConfig(method="rk4", step=2e-3)
    batch = flow_batch(pts, canonical, 0.77, cfg)
    for p, row in zip(pts, batch):
        assert np.array_equal(flow_map(p, canonical, 0.77, cfg), row)


def test_determinism_across_threads(canonical):
    def run(_):
        return integrate([1, 1, 1], canonical, 20.0).states

    serial = run(0)
    with ThreadPoolExecutor(max_workers=4) as pool:
        for states in pool.map(run, range(4)):
            assert np.array_equal(states, serial)


def _reference(canonical, times):
    ref = integrate([1, 1, 1], canonical, float(times[-1]) + 0.01, IntegratorConfig(rel_tol=1e-13, abs_tol=1e-13))
    return np.array([dense_eval(ref, t) for t in times])


@pytest.mark.parametrize("cfg", [IntegratorConfig(method="rk4", step=1e-3), IntegratorConfig()])
def test_dense_midpoints_match_reference(canonical, cfg):
    traj = integrate([1, 1, 1], canonical, 1.0, cfg)
    idx = np.arange(1, len(traj) - 2, max(1, len(traj) // 40))
    mids = 0.5 * (traj.times[idx] + traj.times[idx + 1])
    ref_mid = _reference(canonical, mids)
    ref_left = _reference(canonical, traj.times[idx])
    ref_right = _reference(canonical, traj.times[idx + 1])
    for k, i in enumerate(idx):
        node_err = max(np.max(np.abs(traj.states[i] - ref_left[k])),
                       np.max(np.abs(traj.states[i + 1] - ref_right[k])), 1e-12)
        assert np.max(np.abs(dense_eval(traj, mids[k]) - ref_mid[k])) <= 10 * node_err


def test_dense_eval_domain(canonical):
    traj = integrate([1, 1, 1], canonical, 1.0)
    with pytest.raises(DomainError):
        dense_eval(traj, -1e-9)
    with pytest.raises(DomainError):
        dense_eval(traj, 1.0 + 1e-9)


def test_tangent_identity_at_zero_time(canonical):
    run = integrate_with_tangent([1, 1, 1], np.eye(3), canonical, 0.0)
    np.testing.assert_array_equal(run.matrices[-1], np.eye(3))


def test_tangent_matches_matrix_exponential_at_stable_origin():
    params = LorenzParams(10, 0.5, 8 / 3)
    jac = lorenz_jacobian([0, 0, 0], params)
    basis = np.array([[1.0, 0.2, 0.0], [0.0, 1.0, 0.3], [0.1, 0.0, 1.0]])
    run = integrate_with_tangent([0, 0, 0], basis, params, 1.0)
    expected = expm_by_eigendecomposition(jac, 1.0) @ basis
    np.testing.assert_allclose(run.matrices[-1], expected, atol=1e-6, rtol=0)


@pytest.mark.parametrize("t", [0.1, 0.5, 1.0])
def test_tangent_determinant_follows_trace(canonical, t):
    basis = np.array([[2.0, 0.5, 0.0], [0.0, 1.0, -0.4], [0.3, 0.0, 1.5]])
    run = integrate_with_tangent([1, 1, 1], basis, canonical, t)
    expected = math.exp(-(41 / 3) * t) * np.linalg.det(basis)
    assert math.isclose(np.linalg.det(run.matrices[-1]), expected, rel_tol=1e-6)


def test_tangent_checkpoints_and_trajectory(canonical):
    run = integrate_with_tangent([1, 1, 1], np.eye(3), canonical, 2.0, checkpoint=0.5)
    np.testing.assert_allclose(run.times, [0, 0.5, 1.0, 1.5, 2.0])
    assert run.matrices.shape == (5, 3, 3)
    np.testing.assert_allclose(run.trajectory.states[-1], flow_map([1, 1, 1], canonical, 2.0), atol=1e-6)
    # checkpoint matrices agree with separate runs to those times
    single = integrate_with_tangent([1, 1, 1], np.eye(3), canonical, 1.0)
    np.testing.assert_allclose(run.matrices[2], single.matrices[-1], rtol=1e-6)


def test_tangent_renormalized_is_orthonormal(canonical):
    run = integrate_with_tangent([1, 1, 1], np.eye(3), canonical, 5.0, checkpoint=1.0, renormalize=True)
    for q in run.matrices[1:]:
        np.testing.assert_allclose(q.T @ q, np.eye(3), atol=1e-12)
    assert run.log_growth.shape == (5, 3)
    # summed log growth equals the volume contraction
    assert math.isclose(run.log_growth.sum(), -(41 / 3) * 5.0, rel_tol=1e-7)
    assert np.all(np.diff(run.trajectory.times) > 0)


def test_tangent_rejects_singular_basis(canonical):
    with pytest.raises(InvalidParameterError):
        integrate_with_tangent([1, 1, 1], np.zeros((3, 3)), canonical, 1.0)


def test_step_underflow_reports_time(canonical):
    with pytest.raises(NonConvergenceError) as info:
        integrate([1, 1, 1], canonical, 5.0, IntegratorConfig(rel_tol=1e-14, abs_tol=1e-300, min_step=1e-2))
    assert 0.0 <= info.value.time < 5.0


def test_max_steps_exhaustion(canonical):
    with pytest.raises(StepLimitError):
        integrate([1, 1, 1], canonical, 5.0, IntegratorConfig(max_steps=10))
    with pytest.raises(StepLimitError):
        integrate([1, 1, 1], canonical, 5.0, IntegratorConfig(method="rk4", step=1e-3, max_steps=100))


def test_rk4_blowup_is_nonconvergence():
    with pytest.raises(NonConvergenceError):
        integrate([1, 1, 1], LorenzParams(), 50.0, IntegratorConfig(method="rk4", step=0.5))


@pytest.mark.parametrize("kwargs", [
    dict(method="euler"), dict(rel_tol=1e-15), dict(abs_tol=0.0), dict(step=0.0),
    dict(max_steps=0), dict(min_step=-1.0),
])
def test_config_validation(kwargs):
    with pytest.raises(InvalidParameterError):
        IntegratorConfig(**kwargs)


def test_integrate_rejects_bad_inputs(canonical):
    with pytest.raises(InvalidParameterError):
        integrate([1, 1, 1], canonical, 0.0)
    with pytest.raises(ValueError):
        integrate([1, math.nan, 1], canonical, 1.0)
