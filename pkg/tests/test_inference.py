import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from promocure.diagnostics import batch_means_var, geweke_z, hpd_interval
from promocure.mode import initial_params, posterior_mode, reparametrize_from_hessian
from promocure.model import (
    DataCache,
    ModelConfig,
    PenaltyHypers,
    log_posterior,
    log_posterior_grad,
)
from promocure.sampler import (
    ChainConfig,
    ChainError,
    adapt_proposals,
    gibbs_delta,
    gibbs_tau,
    metropolis_update,
    run_chain,
)
from promocure.simulation import ScenarioConfig, generate_dataset
from promocure.summary import (
    Contrast,
    curve_bands,
    curve_draws,
    curve_grid,
    geweke_table,
    summarize_parameters,
)


def _mc_se_median(x):
    # normal-theory ratio between the standard errors of the median and the mean
    return np.sqrt(np.pi / 2 * batch_means_var(x))


@pytest.fixture(scope="module")
def chains(small_data, grid, penalty):
    out = {}
    for rep in (True, False):
        cfg = ChainConfig(n_iter=8000, burnin=2000, seed=5, reparametrize=rep)
        out[rep] = run_chain(small_data, grid, penalty, cfg)
    return out


@pytest.fixture(scope="module")
def chain(chains):
    return chains[True]


@pytest.fixture(scope="module")
def mode(small_data, grid, penalty):
    return posterior_mode(small_data, grid, penalty)


# --- Gibbs conditionals ---------------------------------------------------

def test_gibbs_tau_moments(penalty):
    h = PenaltyHypers(delta=3.0, nu=2.0)
    x = gibbs_tau(np.zeros(12), penalty.P, h, np.random.default_rng(0), size=100_000)
    shape, rate = 7.0, 3.0
    se = np.sqrt(shape) / rate / np.sqrt(x.size)
    assert abs(x.mean() - shape / rate) < 3 * se
    assert x.var() == pytest.approx(shape / rate ** 2, rel=0.03)


def test_gibbs_tau_uses_penalty(penalty):
    rng = np.random.default_rng(1)
    phi = rng.normal(size=12)
    h = PenaltyHypers(delta=0.5)
    rate = 0.5 * (2 * 0.5 + phi @ penalty.P @ phi)
    x = gibbs_tau(phi, penalty.P, h, rng, size=100_000)
    assert stats.kstest(x, stats.gamma(7.0, scale=1 / rate).cdf).pvalue > 0.01


def test_gibbs_delta_moments():
    h = PenaltyHypers()
    x = gibbs_delta(1.0, h, np.random.default_rng(2), size=100_000)
    shape = rate = 1.0001
    assert abs(x.mean() - shape / rate) < 3 * np.sqrt(shape) / rate / np.sqrt(x.size)
    tiny = gibbs_delta(1e-12, h, np.random.default_rng(3), size=100_000)
    rate0 = 1e-4 + 1e-12
    assert abs(tiny.mean() - 1.0001 / rate0) < 3 * np.sqrt(1.0001) / rate0 / np.sqrt(tiny.size)


def test_gibbs_deterministic(penalty):
    h = PenaltyHypers()
    a = gibbs_tau(np.ones(12), penalty.P, h, np.random.default_rng(42))
    b = gibbs_tau(np.ones(12), penalty.P, h, np.random.default_rng(42))
    assert a == b
    assert gibbs_delta(2.0, h, np.random.default_rng(7)) == gibbs_delta(
        2.0, h, np.random.default_rng(7))


def test_gibbs_rejects_bad_rate():
    h = PenaltyHypers()
    with pytest.raises(ValueError):
        gibbs_delta(-1e6, h, np.random.default_rng(0))


# --- Metropolis and adaptation ---------------------------------------------

def test_adapt_proposals():
    sds = np.array([0.5, 1.0, 2.0])
    np.testing.assert_array_equal(adapt_proposals([0.44] * 3, sds, 0.44, 1), sds)
    up = adapt_proposals([1.0] * 3, sds, 0.44, 1)
    assert np.all(up > sds)
    assert np.all(adapt_proposals([0.0] * 3, sds, 0.44, 1) < sds)
    # diminishing weight
    late = adapt_proposals([1.0] * 3, sds, 0.44, 100)
    assert np.all(late < up)
    np.testing.assert_allclose(late, sds * np.exp(0.1 * 0.56))
    assert adapt_proposals([1.0], [1e4], 0.44, 1)[0] == 1e4
    assert adapt_proposals([0.0], [1e-8], 0.44, 1)[0] == 1e-8


def test_metropolis_standard_normal():
    rng = np.random.default_rng(0)
    x = np.zeros(1)
    draws = np.empty(200_000)
    target = lambda v: -0.5 * v @ v  # noqa: E731
    for i in range(draws.size):
        x, _, _ = metropolis_update(x, target, np.eye(1), [2.4], rng)
        draws[i] = x[0]
    se_mean = np.sqrt(batch_means_var(draws, 50))
    assert abs(draws.mean()) < 3 * se_mean
    se_var = np.sqrt(batch_means_var(draws ** 2, 50))
    assert abs(draws.var() - 1.0) < 3 * se_var


def test_metropolis_tiny_sd_accepts_everything():
    rng = np.random.default_rng(1)
    x = np.array([0.3, -0.2])
    acc = np.zeros(2)
    target = lambda v: -0.5 * v @ v  # noqa: E731
    for _ in range(100):
        x, _, _ = metropolis_update(x, target, np.eye(2), [1e-8, 1e-8], rng, acc)
    assert np.all(acc / 100 > 0.99)
    np.testing.assert_allclose(x, [0.3, -0.2], atol=1e-6)


def test_metropolis_rejects_nonfinite():
    rng = np.random.default_rng(2)
    target = lambda v: 0.0 if v[0] < 1 else -np.inf  # noqa: E731
    x = np.zeros(1)
    for _ in range(500):
        x, lp, _ = metropolis_update(x, target, np.eye(1), [1.0], rng)
        assert x[0] < 1 and np.isfinite(lp)


# --- mode and reparametrisation --------------------------------------------

def test_mode_gradient_and_maximality(mode, small_data, grid, penalty, sim_setting1):
    assert np.max(np.abs(mode.grad)) < 1e-5
    assert np.all(np.linalg.eigvalsh(mode.neg_hessian) > 0)
    cfg = sim_setting1[0]
    truth = mode.params.copy(beta0=cfg.beta0, beta=np.array(cfg.beta),
                             gamma=np.array(cfg.gamma))
    h = PenaltyHypers(mode.tau, mode.delta)
    assert mode.log_post >= log_posterior(truth, h, penalty, small_data, grid)
    assert mode.log_post == pytest.approx(
        log_posterior(mode.params, h, penalty, small_data, grid), rel=1e-12)


def test_mode_matches_grid_search(grid, penalty):
    cfg = ScenarioConfig(n=300, setting=3, seed=4)
    data = generate_dataset(cfg, np.random.default_rng(4)).data
    g, pen = ModelConfig().build(cfg.t_rcens)
    m = posterior_mode(data, g, pen)
    h = PenaltyHypers(m.tau, m.delta)
    cache = DataCache(data, g)
    step = 0.01
    b0s = m.params.beta0 + step * np.arange(-20, 21)
    b1s = m.params.beta[0] + step * np.arange(-20, 21)
    vals = np.array([[log_posterior(m.params.copy(beta0=a, beta=np.array([b])), h, pen,
                                    data, g, cache=cache) for b in b1s] for a in b0s])
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    assert abs(b0s[i] - m.params.beta0) <= step / 2 + 1e-12
    assert abs(b1s[j] - m.params.beta[0]) <= step / 2 + 1e-12


def test_initial_params(small_data):
    p = initial_params(small_data, 10.0, 12)
    expected = np.log(small_data.events.sum() / small_data.times.sum())
    np.testing.assert_allclose(p.phi[:-1], expected)
    assert p.phi[-1] == 10.0 and p.beta0 == 0 and not p.beta.any() and not p.gamma.any()


def test_reparametrize_identity_and_diagonal():
    T = reparametrize_from_hessian(np.eye(3))
    np.testing.assert_allclose(T.directions, np.eye(3), atol=1e-15)
    T = reparametrize_from_hessian(np.diag([4.0, 9.0]))
    np.testing.assert_allclose(np.abs(T.directions), np.diag([0.5, 1 / 3]), atol=1e-15)
    assert not T.fallback


def test_reparametrize_whitens_random_spd():
    rng = np.random.default_rng(0)
    for _ in range(10):
        A = rng.normal(size=(6, 6))
        H = A @ A.T + 0.1 * np.eye(6)
        T = reparametrize_from_hessian(H)
        np.testing.assert_allclose(T.directions.T @ H @ T.directions, np.eye(6), atol=1e-10)
        v = rng.normal(size=6)
        np.testing.assert_allclose(T.to_original(T.to_whitened(v)), v, atol=1e-10)
        u = T.to_whitened(v)
        assert v @ H @ v == pytest.approx(u @ u, rel=1e-10)


def test_reparametrize_fallback():
    H = np.diag([1.0, -1e9])
    T = reparametrize_from_hessian(H, max_ridge=1e6)
    assert T.fallback
    np.testing.assert_array_equal(T.directions, np.eye(2))
    with pytest.raises(ValueError):
        reparametrize_from_hessian(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_gradient_vanishes_at_mode_without_tau(mode, small_data, grid, penalty):
    h = PenaltyHypers(mode.tau, mode.delta)
    g = log_posterior_grad(mode.params, h, penalty, DataCache(small_data, grid))
    assert np.max(np.abs(g)) < 1e-5


# --- full chain --------------------------------------------------------------

def test_chain_determinism(small_data, grid, penalty):
    cfg = ChainConfig(n_iter=600, burnin=200, seed=99)
    a = run_chain(small_data, grid, penalty, cfg)
    b = run_chain(small_data, grid, penalty, cfg)
    assert np.array_equal(a.draws, b.draws)
    c = run_chain(small_data, grid, penalty, ChainConfig(n_iter=600, burnin=200, seed=100))
    assert not np.array_equal(a.draws, c.draws)


def test_chain_layout(chain):
    K = 12
    assert chain.draws.shape == (6000, K + 5 + 2)
    assert chain.names[:K] == [f"phi_{k + 1}" for k in range(K)]
    assert chain.names[K:] == ["beta0", "beta_W1", "beta_W2", "gamma_W1", "gamma_W2",
                               "tau", "delta"]
    assert np.all(chain.column("phi_12") == 10.0)
    assert np.all(chain.column("tau") > 0) and np.all(chain.column("delta") > 0)
    assert "phi_12" not in chain.acceptance_rates


def test_acceptance_after_adaptation(chains):
    for ch in chains.values():
        rates = np.array(list(ch.acceptance_rates.values()))
        assert rates.size == 16
        assert np.all((rates > 0.25) & (rates < 0.6))


def test_adaptation_frozen_after_burnin(chain):
    # one entry per adaptation window during burnin, none afterwards
    assert len(chain.adaptation_history) == 2000 // 50


def test_posterior_medians_near_truth(chain, sim_setting1):
    cfg = sim_setting1[0]
    for name, true in zip(cfg.parameter_names(), cfg.truth_vector()):
        x = chain.column(name)
        assert abs(np.median(x) - true) < 3 * x.std()


def test_geweke_on_regression_parameters(chain):
    z = geweke_table(chain, chain.regression_names)
    assert all(abs(v) < 1.96 for v in z.values())
    assert "phi_12" not in geweke_table(chain)


def test_reparametrization_does_not_change_target(chains):
    on, off = chains[True], chains[False]
    for name in on.regression_names:
        a, b = on.column(name), off.column(name)
        se = np.hypot(_mc_se_median(a), _mc_se_median(b))
        assert abs(np.median(a) - np.median(b)) < 2 * se


def test_chain_error_reports_state(small_data, grid, penalty):
    def corrupt(it, state):
        if it == 5:
            state.delta = float("nan")

    with pytest.raises(ChainError) as info:
        run_chain(small_data, grid, penalty, ChainConfig(n_iter=50, burnin=2, seed=1),
                  callback=corrupt)
    assert info.value.iteration == 6
    assert info.value.parameter == "tau"
    assert info.value.partial_draws.shape[0] == 4


def test_chain_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(n_iter=100, burnin=100)
    with pytest.raises(ValueError):
        ChainConfig(target_accept=1.0)


# --- diagnostics -----------------------------------------------------------

def test_geweke_calibration():
    ss = np.random.SeedSequence(2024)
    inside = 0
    for child in ss.spawn(200):
        x = np.random.default_rng(child).standard_normal(100_000)
        inside += abs(geweke_z(x)) < 1.96
    assert inside / 200 >= 0.93


def test_geweke_detects_trend_and_degenerate():
    assert abs(geweke_z(np.arange(1, 5001, dtype=float))) > 10
    with pytest.raises(ValueError):
        geweke_z(np.ones(5000))
    with pytest.raises(ValueError):
        geweke_z(np.random.default_rng(0).normal(size=999))


def test_hpd_examples():
    rng = np.random.default_rng(0)
    lo, hi = hpd_interval(rng.standard_normal(1_000_000))
    assert lo == pytest.approx(-1.96, abs=0.02) and hi == pytest.approx(1.96, abs=0.02)
    for shift in (0.0, 5.0, -3.0):
        lo, hi = hpd_interval(rng.uniform(shift, shift + 1, 100_000))
        assert hi - lo == pytest.approx(0.95, abs=0.01)
    lo, hi = hpd_interval(rng.exponential(1.0, 1_000_000))
    assert lo == pytest.approx(0.0, abs=0.01)
    assert hi == pytest.approx(-np.log(0.05), abs=0.1)
    with pytest.raises(ValueError):
        hpd_interval(np.arange(99.0))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), m=st.integers(100, 3000),
       level=st.floats(0.5, 0.99))
def test_hpd_is_shortest(seed, m, level):
    x = np.sort(np.random.default_rng(seed).gamma(1.5, size=m))
    lo, hi = hpd_interval(x, level)
    n_in = int(np.ceil(level * m))
    assert np.sum((x >= lo) & (x <= hi)) >= n_in
    assert hi - lo <= np.min(x[n_in - 1:] - x[:m - n_in + 1]) + 1e-12


def test_hpd_holds_required_count():
    x = np.random.default_rng(3).gamma(2.0, size=1001)
    lo, hi = hpd_interval(x)
    assert np.sum((x >= lo) & (x <= hi)) >= np.ceil(0.95 * x.size)


# --- summaries and curves ----------------------------------------------------

def test_summary_rows(chain):
    rows = summarize_parameters(chain)
    assert [r.name for r in rows] == chain.regression_names + ["tau", "delta"]
    for r in rows:
        assert r.hpd_low < r.hpd_high and r.sd > 0


def test_curve_band_properties(chain, small_data, grid):
    times = curve_grid(grid.t_max)
    assert times.size == 200 and times[0] == 0 and times[-1] == grid.t_max
    s0 = curve_bands(chain, grid, "S0", times)
    assert s0.median[0] == s0.lower[0] == s0.upper[0] == 1.0
    c = Contrast.from_data(small_data, "W2")
    np.testing.assert_array_equal(c.z1[0], c.z2[0])
    for kind in ("Sp", "Su", "logHRu"):
        band = curve_bands(chain, grid, kind, times[:180], c)
        assert np.all(band.lower <= band.median) and np.all(band.median <= band.upper)
        draws = curve_draws(chain, grid, kind, times[:180], c)
        inside = np.mean((draws >= band.lower[:, None]) & (draws <= band.upper[:, None]), axis=1)
        assert np.all(inside >= 0.95 - 1.0 / draws.shape[1])


def test_log_hrp_constant_per_draw_for_shared_latency(chain, small_data, grid):
    m = np.median(small_data.X, axis=0)
    x1, x2 = m.copy(), m.copy()
    x1[1], x2[1] = 1.0, 0.0
    c = Contrast(x1, m, x2, m)
    d = curve_draws(chain, grid, "logHRp", curve_grid(grid.t_max), c)
    assert np.max(np.ptp(d, axis=0)) < 1e-10


def test_thinning_changes_medians_within_mc_error(chain, small_data, grid):
    c = Contrast.from_data(small_data, "W2")
    times = np.linspace(1, 18, 12)
    full = curve_draws(chain, grid, "logHRu", times, c)
    thin = curve_draws(chain.thin(10), grid, "logHRu", times, c)
    for i in range(times.size):
        se = _mc_se_median(thin[i])
        assert abs(np.median(full[i]) - np.median(thin[i])) < 3 * se
