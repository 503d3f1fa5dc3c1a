import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import gamma as gamma_fn

from promocure.simulation import (
    CURED_TIME,
    ScenarioConfig,
    apply_censoring,
    draw_covariates,
    generate_dataset,
    generate_raw_times,
    generate_subject,
    latent_time,
    weibull_from_moments,
)
from promocure.study import ReplicateResult, aggregate, replicate_seeds, replicate_study
from promocure.summary import ParameterSummary


def exact_cure_fraction(beta0, beta):
    """E exp(-theta(W)) with W1 ~ N(0, 1), W2 ~ Bernoulli(1/2)."""
    total = 0.0
    for w2 in (0.0, 1.0):
        f = lambda w1: stats.norm.pdf(w1) * np.exp(-np.exp(beta0 + beta[0] * w1 + beta[1] * w2))  # noqa: E731
        total += 0.5 * integrate.quad(f, -12, 12, epsabs=1e-13)[0]
    return total


def test_weibull_from_moments():
    k, lam = weibull_from_moments(8.0, 4.18)
    assert k == pytest.approx(2.00, abs=0.01) and lam == pytest.approx(9.03, abs=0.01)
    mean = lam * gamma_fn(1 + 1 / k)
    sd = lam * np.sqrt(gamma_fn(1 + 2 / k) - gamma_fn(1 + 1 / k) ** 2)
    assert abs(mean - 8.0) < 1e-10 and abs(sd - 4.18) < 1e-10
    F0 = lambda t: 1 - np.exp(-(t / lam) ** k)  # noqa: E731
    assert F0(13.7) == pytest.approx(0.9, abs=0.005)
    assert F0(10.6) == pytest.approx(0.75, abs=0.005)
    k2, lam2 = weibull_from_moments(22.28, 8.08)
    assert lam2 * gamma_fn(1 + 1 / k2) == pytest.approx(22.28, rel=1e-10)
    assert weibull_from_moments(3.0, 3.0)[0] == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("mean, sd", [(0.0, 1.0), (1.0, -1.0), (1.0, 1e30)])
def test_weibull_from_moments_rejects(mean, sd):
    with pytest.raises(ValueError):
        weibull_from_moments(mean, sd)


def test_covariate_distribution():
    W = draw_covariates(100_000, np.random.default_rng(0))
    se = 1 / np.sqrt(1e5)
    assert abs(W[:, 0].mean()) < 4 * se
    assert abs(W[:, 0].var() - 1) < 4 * np.sqrt(2) * se
    assert abs(W[:, 1].mean() - 0.5) < 4 * 0.5 * se
    assert set(np.unique(W[:, 1])) == {0.0, 1.0}


@pytest.mark.parametrize("pct", [25, 40])
def test_cure_fraction_matches_exact_integral(pct):
    cfg = ScenarioConfig(n=100_000, cure_pct=pct, setting=1, seed=pct)
    gen = generate_dataset(cfg, np.random.default_rng(cfg.seed))
    p = exact_cure_fraction(cfg.beta0, cfg.beta)
    assert abs(gen.cured.mean() - p) < 3 * np.sqrt(p * (1 - p) / cfg.n)
    assert abs(p - pct / 100) < 0.01


def test_latent_times_mostly_before_cap():
    cfg = ScenarioConfig(n=100_000, setting=1)
    rng = np.random.default_rng(1)
    W = draw_covariates(cfg.n, rng)
    th = np.exp(cfg.beta0 + W @ np.array(cfg.beta))
    N = rng.poisson(th)
    zeta = W @ np.array(cfg.gamma)
    sus = np.flatnonzero(N > 0)
    Y = latent_time(cfg.baseline(), np.repeat(zeta[sus], N[sus]), rng.random(N[sus].sum()))
    T = np.minimum.reduceat(Y, np.concatenate([[0], np.cumsum(N[sus])[:-1]]))
    assert np.mean(T < 23) > 0.99


def test_inverse_transform_matches_survival():
    base = ScenarioConfig().baseline()
    for zeta in (-0.5, 0.0, 0.7):
        u = np.random.default_rng(2).random(100_000)
        Y = latent_time(base, zeta, u)
        for t in np.linspace(2, 20, 10):
            S = np.exp(np.exp(zeta) * base.log_survival(t))
            emp = np.mean(Y > t)
            assert abs(emp - S) < 3 * np.sqrt(S * (1 - S) / Y.size) + 1e-12


def test_generate_subject():
    base = ScenarioConfig().baseline()
    rng = np.random.default_rng(3)
    for _ in range(100):
        t, cured = generate_subject(-800.0, [0.0], [0.0], [1.0], [0.0], base, 23, rng)
        assert cured and t == CURED_TIME
    t, cured = generate_subject(5.0, [0.0], [0.0], [0.0], [0.0], base, 23, rng)
    assert not cured and 0 < t < 23
    with pytest.raises(RuntimeError):
        generate_subject(5.0, [0.0], [0.0], [0.0], [0.0], base, 1e-12, rng, max_retries=5)
    with pytest.raises(RuntimeError):
        generate_raw_times(5.0, [0.0], [0.0], np.zeros((3, 1)), np.zeros((3, 1)), base,
                           1e-12, rng, max_retries=5)


def test_censoring_rules():
    rng = np.random.default_rng(4)
    raw = np.full(10_000, CURED_TIME)
    t, e = apply_censoring(raw, 1, rng)
    assert np.all(e == 0) and t.min() >= 20 and t.max() <= 25
    t, e = apply_censoring(np.full(1000, 5.0), 1, rng)
    assert np.all(e == 1) and np.all(t == 5.0)
    for setting, upper in ((2, 25.0), (3, 13.7), (4, 10.6)):
        t, e = apply_censoring(raw, setting, rng)
        assert np.all(e == 0) and t.max() <= upper and t.min() > 0


@pytest.mark.parametrize("setting", [1, 2, 3, 4])
def test_generated_dataset_contracts(setting):
    cfg = ScenarioConfig(n=3000, setting=setting, seed=setting)
    gen = generate_dataset(cfg, np.random.default_rng(cfg.seed))
    d = gen.data
    assert not np.any(d.times == CURED_TIME)
    assert d.times.max() <= cfg.t_rcens
    assert np.all(gen.raw_times[gen.cured] == CURED_TIME)
    assert np.all(d.events[gen.cured] == 0)
    assert np.all(gen.raw_times[~gen.cured] < 23)
    if setting in (1, 2):
        assert d.x_names == d.z_names == ["W1", "W2"]
    else:
        assert d.x_names == ["W2"] and d.z_names == ["W1"]
        # follow-up ends before the latest susceptible failures
        assert gen.raw_times[~gen.cured].max() > cfg.t_rcens


def test_generation_is_deterministic():
    cfg = ScenarioConfig(n=500, seed=9)
    a = generate_dataset(cfg, np.random.default_rng(9)).data
    b = generate_dataset(cfg, np.random.default_rng(9)).data
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.X, b.X)


def test_scenario_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(setting=5)
    with pytest.raises(ValueError):
        ScenarioConfig(setting=3, beta=[0.1, 0.2], gamma=[0.4], beta0=0.7)
    with pytest.raises(ValueError, match="15%"):
        ScenarioConfig(cure_pct=15)
    cfg = ScenarioConfig(cure_pct=15, beta0=1.2, beta=[0.8, -0.5], gamma=[0.4, -0.4])
    assert cfg.truth_vector().tolist() == [1.2, 0.8, -0.5, 0.4, -0.4]
    c3 = ScenarioConfig(setting=3, cure_pct=40)
    assert c3.parameter_names() == ["beta0", "beta_W2", "gamma_W1"]
    assert c3.truth_vector().tolist() == [0.30, -0.80, 0.40]
    assert c3.t_rcens == 13.7


def test_replicate_seeds_are_independent_and_stable():
    a = replicate_seeds(7, 5)
    b = replicate_seeds(7, 5)
    assert [s for _, s in a] == [s for _, s in b]
    assert len({s for _, s in a}) == 5


def _at_truth(config):
    truth = dict(zip(config.parameter_names(), config.truth_vector()))

    def fit(index, config, chain_config, model_config, data_ss, chain_seed, times):
        est = {name: ParameterSummary(name, v, v - 0.1, v + 0.1, 0.05,
                                      v - 0.1, v - 0.05, v + 0.05, v + 0.1)
               for name, v in truth.items()}
        return ReplicateResult(index, est, {k: np.zeros(times.size)
                                            for k in ("S0", "logHRp", "logHRu")})
    return fit


def test_oracle_injection_aggregate():
    cfg = ScenarioConfig(replicates=20, setting=1)
    res = replicate_study(cfg, fit=_at_truth(cfg))
    assert len(res.table) == 5
    for row in res.table:
        assert row["Bias"] == 0 and row["RMSE"] == 0
        assert abs(row["ESE"]) < 1e-12
        assert row["CV90"] == 100 and row["CV95"] == 100
        assert row["Cure"] == 25 and row["Setting"] == 1
    assert res.n_failed == 0
    assert set(res.truth_curves) == {"S0", "logHRp", "logHRu"}


def test_aggregate_statistics():
    est = [{"b": ParameterSummary("b", m, 0, 0, 0, m - 0.3, m - 0.15, m + 0.15, m + 0.3)}
           for m in (0.9, 1.2, 1.5)]
    (row,) = aggregate(est, {"b": 1.0}, 25, 1)
    assert row["Bias"] == pytest.approx(0.2)
    assert row["ESE"] == pytest.approx(0.3)
    assert row["RMSE"] == pytest.approx(np.sqrt(0.1))
    assert row["CV90"] == pytest.approx(100 / 3)
    assert row["CV95"] == pytest.approx(200 / 3)
    assert row["Parameters"] == "b = 1.00"


def test_failed_replicates_are_counted():
    cfg = ScenarioConfig(replicates=4)
    ok = _at_truth(cfg)

    def flaky(index, *args):
        if index % 2:
            return ReplicateResult(index, error="ChainError: boom")
        return ok(index, *args)

    res = replicate_study(cfg, fit=flaky)
    assert res.n_failed == 2
    assert all(row["Bias"] == 0 for row in res.table)


def test_true_curves_shape():
    cfg = ScenarioConfig(replicates=2, setting=3)
    res = replicate_study(cfg, fit=_at_truth(cfg), n_points=50)
    assert res.times[-1] == 13.7 and res.times.size == 50
    assert res.truth_curves["S0"][0] == 1.0
    # setting 3: W2 only enters the cure part, so the population log-HR equals beta
    np.testing.assert_allclose(res.truth_curves["logHRp"], -0.70, atol=1e-12)
