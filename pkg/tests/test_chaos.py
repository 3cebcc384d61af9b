import math

import numpy as np
import pytest

from quantum_lorenz import (
    Dirac,
    GaussHermite,
    InsufficientDataError,
    IntegratorConfig,
    InvalidParameterError,
    LorenzParams,
    MonteCarlo,
    ehrenfest_scan,
    ehrenfest_time,
    lorenz_jacobian,
    lyapunov_spectrum,
    packet_ehrenfest_time,
)

from oracles import two_trajectory_lambda

K = (1.0, 1.0, 1.0)


@pytest.fixture(scope="module")
def canonical_spectrum():
    return lyapunov_spectrum(K, LorenzParams())


def test_stable_origin_has_negative_exponents():
    res = lyapunov_spectrum((0.1, 0.1, 0.1), LorenzParams(10, 0.5, 8 / 3), transient=10, total_time=200)
    assert np.all(res.exponents < 0)
    assert res.ks_entropy_estimate == 0.0


def test_fixed_point_start_gives_eigenvalue_real_parts():
    params = LorenzParams(10, 0.5, 8 / 3)
    res = lyapunov_spectrum((0, 0, 0), params, transient=10, total_time=400)
    expected = np.sort(np.linalg.eigvals(lorenz_jacobian((0, 0, 0), params)).real)[::-1]
    np.testing.assert_allclose(res.exponents, expected, atol=0.02)


def test_canonical_max_exponent(canonical_spectrum):
    assert abs(canonical_spectrum.max_exponent - 0.906) <= 0.02
    assert canonical_spectrum.exponents.shape == (3,)
    assert np.all(np.diff(canonical_spectrum.exponents) < 0)
    assert abs(canonical_spectrum.exponents[1]) < 0.02


def test_matches_two_trajectory_oracle(canonical_spectrum):
    oracle = two_trajectory_lambda(K, LorenzParams())
    assert abs(canonical_spectrum.max_exponent - oracle) <= 0.02


@pytest.mark.parametrize("params", [LorenzParams(), LorenzParams(10, 0.5, 8 / 3), LorenzParams(16, 45.92, 4)])
def test_exponent_sum_is_trace(params):
    res = lyapunov_spectrum(K, params, transient=50, total_time=500)
    assert abs(res.exponent_sum + (params.sigma + 1 + params.beta)) <= 0.05


def test_renorm_interval_invariance(canonical_spectrum):
    lams = [canonical_spectrum.max_exponent]
    for interval in (0.5, 2.0):
        lams.append(lyapunov_spectrum(K, LorenzParams(), renorm_interval=interval).max_exponent)
    assert max(lams) - min(lams) < 0.02


def test_ks_estimate_is_positive_part_sum(canonical_spectrum):
    positive = canonical_spectrum.exponents[canonical_spectrum.exponents > 0]
    assert canonical_spectrum.ks_entropy_estimate == pytest.approx(positive.sum(), abs=1e-15)
    if len(positive) == 1:
        assert abs(canonical_spectrum.ks_entropy_estimate - canonical_spectrum.max_exponent) <= 1e-9


def test_lyapunov_argument_checks():
    with pytest.raises(InvalidParameterError):
        lyapunov_spectrum(K, LorenzParams(), transient=10, total_time=5)
    with pytest.raises(InvalidParameterError):
        lyapunov_spectrum(K, LorenzParams(), renorm_interval=0.0)


def test_dirac_packet_never_separates():
    assert packet_ehrenfest_time(Dirac(K), threshold=1e-12, horizon=30.0) is None
    res = ehrenfest_time(K, 0.0, threshold=1.0, horizon=30.0)
    assert res.crossing_time is None and not res.bounded


def test_narrower_packet_lasts_longer():
    wide = ehrenfest_time(K, 1e-2)
    narrow = ehrenfest_time(K, 1e-4)
    assert wide.bounded and narrow.bounded
    assert narrow.crossing_time > wide.crossing_time > 0


def test_huge_threshold_is_unbounded():
    res = ehrenfest_time(K, 1e-2, threshold=1e3, horizon=30.0)
    assert res.crossing_time is None
    assert res.horizon == 30.0


def test_crossing_time_monotone_in_threshold():
    for w in (1e-2, 1e-4):
        t1 = ehrenfest_time(K, w, threshold=1.0).crossing_time
        t2 = ehrenfest_time(K, w, threshold=2.0).crossing_time
        assert t2 >= t1 - 1e-6


@pytest.mark.parametrize("width", [1e-2, 1e-4, 1e-6])
def test_crossing_time_stable_under_tighter_tolerance(width):
    base = ehrenfest_time(K, width).crossing_time
    tight = ehrenfest_time(K, width, cfg=IntegratorConfig(rel_tol=1e-10, abs_tol=1e-13)).crossing_time
    assert abs(base - tight) < 1e-2


def test_crossing_is_refined_to_resolution():
    from quantum_lorenz.ensemble import Gaussian, quadrature_nodes
    from quantum_lorenz.integrate import flow_batch

    res = ehrenfest_time(K, 1e-3)
    nodes, w = quadrature_nodes(Gaussian.isotropic(K, 1e-3), GaussHermite(9))
    batch = np.vstack([nodes, [K]])

    def sep(t):
        states = flow_batch(batch, LorenzParams(), t)
        return np.linalg.norm(w @ states[:-1] - states[-1])

    assert sep(res.crossing_time) > 1.0 > sep(res.crossing_time - 2e-6)


def test_scan_all_unbounded_is_insufficient():
    with pytest.raises(InsufficientDataError):
        ehrenfest_scan(K, [1e-2, 1e-3, 1e-4], threshold=1e3, horizon=10.0, lambda_reference=0.9)


def test_scan_rejects_non_decreasing_widths():
    with pytest.raises(InvalidParameterError):
        ehrenfest_scan(K, [1e-3, 1e-2, 1e-4], lambda_reference=0.9)


def test_scan_excludes_unbounded_rows_from_fit():
    # the 1e-9 row cannot cross before the short horizon
    scan = ehrenfest_scan(K, [1e-2, 1e-3, 1e-4, 1e-9], horizon=20.0, lambda_reference=0.9)
    assert [r.bounded for r in scan.rows] == [True, True, True, False]
    assert math.isfinite(scan.fitted_slope)


def test_scan_threads_do_not_change_results():
    widths = [1e-2, 1e-3, 1e-4]
    serial = ehrenfest_scan(K, widths, lambda_reference=0.9, max_workers=1)
    threaded = ehrenfest_scan(K, widths, lambda_reference=0.9, max_workers=3)
    assert [r.crossing_time for r in serial.rows] == [r.crossing_time for r in threaded.rows]
    assert serial.fitted_slope == threaded.fitted_slope


def test_threshold_exceeded_at_start_is_rejected():
    with pytest.raises(InvalidParameterError):
        ehrenfest_time(K, 1e-2, threshold=1e-6, scheme=MonteCarlo(4, seed=0))
