import numpy as np
import pytest
from scipy.linalg import expm as scipy_expm

from branchimm import analytic_gw as gw
from branchimm import spatial, stats
from branchimm.models import FiniteSet, LatticeKernel, RateParams

P121 = RateParams(beta=1, mu=2, k=1)
NN1 = LatticeKernel.nearest_neighbor(1)


def three_site_system(params=P121):
    a = 0.5 * (np.ones((3, 3)) - np.eye(3))
    return spatial.FirstMomentSystem.from_finite_set(
        params, FiniteSet.from_matrix(a, symmetric=True))


def test_expm_series_matches_scipy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 8))
        m = rng.normal(size=(n, n)) * rng.uniform(0.1, 5.0)
        assert np.allclose(spatial.expm_series(m), scipy_expm(m),
                           rtol=1e-10, atol=1e-10)


def test_single_site_reduction_matches_scalar_ode():
    system = spatial.FirstMomentSystem(a=np.zeros((1, 1)),
                                       v=np.array([P121.beta - P121.mu]),
                                       k=np.array([P121.k]))
    grid = np.linspace(0.5, 20.0, 9)
    sol = spatial.solve_first_moment(system, np.array([1.0]), grid)
    for gi, t in enumerate(grid):
        assert sol.values[gi, 0] == pytest.approx(
            gw.moments_closed_form(P121, t, order=1).m1, rel=1e-8)


def test_homogeneous_total_steady_state():
    system = three_site_system()
    sol = spatial.solve_first_moment(system, np.ones(3), [60.0])
    assert sol.steady_state is not None
    assert sol.steady_state.sum() == pytest.approx(3.0, abs=1e-10)
    assert np.allclose(sol.values[-1], sol.steady_state, atol=1e-8)


def test_heterogeneous_steady_state_vs_rk4():
    params = [RateParams(0.5, 2.0, 1.0), RateParams(1.0, 1.8, 0.3),
              RateParams(0.2, 2.5, 2.0)]
    a = np.array([[0.0, 0.4, 0.1], [0.4, 0.0, 0.7], [0.1, 0.7, 0.0]])
    system = spatial.FirstMomentSystem.from_finite_set(
        params, FiniteSet.from_matrix(a, symmetric=True))
    grid = [60.0]
    expm_sol = spatial.solve_first_moment(system, np.ones(3), grid)
    rk4_sol = spatial.solve_first_moment(system, np.ones(3), grid, method="rk4")
    target = -np.linalg.solve(system.drift_matrix(), system.k)
    assert np.allclose(expm_sol.values[-1], target, atol=1e-8)
    assert np.allclose(rk4_sol.values[-1], target, atol=1e-8)
    assert np.allclose(expm_sol.steady_state, target, atol=1e-12)


def test_unstable_drift_reports_no_steady_state():
    system = spatial.FirstMomentSystem(a=np.zeros((1, 1)), v=np.array([0.5]),
                                       k=np.array([1.0]))
    sol = spatial.solve_first_moment(system, np.array([1.0]), [5.0])
    assert sol.steady_state is None


def test_generator_row_sums_enforced():
    with pytest.raises(ValueError):
        spatial.FirstMomentSystem(a=np.array([[0.0, 1.0], [0.0, 0.0]]),
                                  v=np.zeros(2), k=np.zeros(2))
    with pytest.raises(ValueError):
        spatial.FirstMomentSystem.from_finite_set(
            P121, FiniteSet.from_matrix(np.array([[0.0, 1.0], [0.5, 0.0]])))


def test_lyapunov_examples():
    verdict = spatial.lyapunov_check(three_site_system())
    assert verdict.ergodic and verdict.threshold == pytest.approx(3.0)
    mixed = spatial.FirstMomentSystem(a=np.zeros((2, 2)),
                                      v=np.array([-1.0, 0.5]),
                                      k=np.array([1.0, 1.0]))
    assert not spatial.lyapunov_check(mixed).ergodic
    scaled = three_site_system(RateParams(1, 2, 10))
    assert spatial.lyapunov_check(scaled).threshold == pytest.approx(30.0)


def test_kernel_symbol_nearest_neighbor():
    thetas = np.linspace(-np.pi, np.pi, 41)
    vals = spatial.kernel_symbol(NN1, thetas)
    assert np.allclose(vals, np.cos(thetas), atol=1e-12)
    assert spatial.kernel_symbol(NN1, [0.0])[0] == pytest.approx(1.0)
    assert np.all(np.abs(vals) <= 1 + 1e-12)


def test_kernel_symbol_2d_bounds():
    kern = LatticeKernel.nearest_neighbor(2)
    grid = np.stack(np.meshgrid(np.linspace(-np.pi, np.pi, 9),
                                np.linspace(-np.pi, np.pi, 9)), axis=-1).reshape(-1, 2)
    vals = spatial.kernel_symbol(kern, grid)
    assert np.all(np.abs(vals) <= 1 + 1e-12)
    at_zero = spatial.kernel_symbol(kern, np.array([[0.0, 0.0]]))
    assert at_zero[0] == pytest.approx(1.0)


def test_spectrum_example_values():
    spec_plain, _ = spatial.limiting_covariance(P121, NN1, 64, "plain")
    spec_ell, _ = spatial.limiting_covariance(P121, NN1, 64, "elliptic")
    assert spec_plain.m2_hat[0] == pytest.approx(2.0)
    assert spec_ell.m2_hat[0] == pytest.approx(4.0)


def test_lag_covariance_even_and_round_trip():
    for conv in spatial.CONVENTIONS:
        spec, lag = spatial.limiting_covariance(P121, NN1, 64, conv)
        for u in range(1, 32):
            assert lag.at(u) == pytest.approx(lag.at(-u), rel=1e-12)
        back = np.fft.ifft(lag.grid() * 64).real
        assert np.allclose(back, spec.m2_hat, atol=1e-10)


def test_lag_identity_residual_all_conventions():
    for conv in spatial.CONVENTIONS:
        spec, lag = spatial.limiting_covariance(P121, NN1, 64, conv)
        resid = spatial.elliptic_residual(lag, NN1, spec.c1, spec.c2, spec.c3)
        assert resid < 1e-8


def test_spectrum_nonnegative_when_subcritical():
    # the "plain" constants touch zero exactly at the Nyquist frequency
    # (c1 = c2 and a_hat = -1); the other conventions stay strictly positive
    for conv in spatial.CONVENTIONS:
        spec, _ = spatial.limiting_covariance(P121, NN1, 64, conv)
        assert np.all(spec.m2_hat >= -1e-15)
        assert np.isrealobj(spec.m2_hat)
    spec, _ = spatial.limiting_covariance(P121, NN1, 64, "balance")
    assert np.all(spec.m2_hat > 0)


def test_balance_lag_values_match_geometric_form():
    # for the nearest-neighbor kernel the lag function is exactly
    # A rho^|u| - c2 delta_0 with rho = (1+c3) - sqrt((1+c3)^2 - 1)
    spec, lag = spatial.limiting_covariance(P121, NN1, 64, "balance")
    c1, c2, c3 = spec.c1, spec.c2, spec.c3
    rho = (1 + c3) - np.sqrt((1 + c3) ** 2 - 1)
    amp = (c1 + c2 * (1 + c3)) / np.sqrt((1 + c3) ** 2 - 1)
    for u in range(0, 17):
        expected = amp * rho**u - (c2 if u == 0 else 0.0)
        assert lag.at(u) == pytest.approx(expected, rel=1e-10, abs=1e-12)


def test_exponential_decay_of_lag_covariance():
    _, lag = spatial.limiting_covariance(P121, NN1, 64)
    u = np.arange(1, 17)
    fit = stats.fit_line(u, np.log([abs(lag.at(int(x))) for x in u]))
    assert fit.r2 > 0.99


def test_m2_split():
    split = spatial.m2_split(P121, NN1, 64)
    assert split.m21 == pytest.approx(1.0)
    # m2(u) - m1^2 equals the lag covariance by construction
    for u in (0, 1, 5):
        assert split.m2(u) - 1.0 == pytest.approx(split.m22.at(u))
    # m21 does not depend on the kernel
    wide = LatticeKernel.from_dict_support(1, {1: 0.25, -1: 0.25, 2: 0.25, -2: 0.25})
    assert spatial.m2_split(P121, wide, 64).m21 == split.m21


def test_covariance_requires_subcritical_and_unit_migration():
    with pytest.raises(ValueError):
        spatial.limiting_covariance(RateParams(2, 1, 1), NN1, 64)
    with pytest.raises(ValueError):
        spatial.limiting_covariance(RateParams(1, 2, 1, kappa=2.0), NN1, 64)


def test_torus_covariance_2d_shapes():
    kern = LatticeKernel.nearest_neighbor(2)
    spec, lag = spatial.limiting_covariance(P121, kern, 16, "balance")
    assert spec.m2_hat.shape == (256,)
    assert lag.grid().shape == (16, 16)
    assert lag.at((1, 0)) == pytest.approx(lag.at((-1, 0)), rel=1e-12)
    assert lag.at((0, 1)) == pytest.approx(lag.at((1, 0)), rel=1e-12)
