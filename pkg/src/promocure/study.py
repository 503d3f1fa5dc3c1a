"""Monte Carlo replicate studies: generate, fit, and score many datasets."""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ModelConfig, ModelParams
from .model import log_hazard_ratio_population, log_hazard_ratio_susceptible
from .sampler import ChainConfig, run_chain
from .simulation import generate_dataset
from .summary import Contrast, curve_bands, curve_grid, summarize_parameters

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["Cure", "Setting", "Parameters", "Bias", "CV90", "CV95", "ESE", "RMSE"]
CONTRAST_COVARIATE = "W2"


@dataclass
class ReplicateResult:
    index: int
    estimates: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    error: str = None


@dataclass
class StudyResult:
    config: object
    table: list
    replicates: list
    times: np.ndarray
    truth_curves: dict

    @property
    def n_failed(self):
        return sum(r.error is not None for r in self.replicates)


def replicate_seeds(seed, n):
    """Per-replicate ``(data seed sequence, chain seed)`` pairs.

    Replicate ``r`` uses child ``r`` of ``SeedSequence(seed)``; that child is
    split again into a data stream and a chain stream.
    """
    out = []
    for child in np.random.SeedSequence(seed).spawn(n):
        data_ss, chain_ss = child.spawn(2)
        out.append((data_ss, int(chain_ss.generate_state(1, np.uint64)[0])))
    return out


def true_curves(config, times):
    """Exact S0, logHRp and logHRu of the data-generating model."""
    base = config.baseline()
    params = ModelParams(np.zeros(1), config.beta0, config.beta, config.gamma)
    c = _truth_contrast(config)
    return {
        "S0": np.exp(base.log_survival(times)),
        "logHRp": log_hazard_ratio_population(params, base, c.x1, c.z1, c.x2, c.z2, times),
        "logHRu": log_hazard_ratio_susceptible(params, base, c.x1, c.z1, c.x2, c.z2, times),
    }


def _truth_contrast(config):
    # binary covariate at 1 vs 0, continuous one at its population median 0
    def profile(names, level):
        return np.array([level if v == CONTRAST_COVARIATE else 0.0 for v in names])

    return Contrast(profile(config.x_names, 1.0), profile(config.z_names, 1.0),
                    profile(config.x_names, 0.0), profile(config.z_names, 0.0))


def fit_replicate(index, config, chain_config, model_config, data_ss, chain_seed, times):
    """Generate and fit one replicate; failures are captured, not raised."""
    result = ReplicateResult(index)
    try:
        gen = generate_dataset(config, np.random.default_rng(data_ss))
        grid, penalty = model_config.build(config.t_rcens)
        chain = run_chain(gen.data, grid, penalty, replace(chain_config, seed=chain_seed),
                          phi_last=model_config.phi_last)
        for s in summarize_parameters(chain, chain.regression_names):
            result.estimates[s.name] = s
        contrast = Contrast.from_data(gen.data, CONTRAST_COVARIATE)
        for kind in ("S0", "logHRp", "logHRu"):
            result.curves[kind] = curve_bands(chain, grid, kind, times, contrast).median
    except Exception as exc:  # noqa: BLE001 - a failed replicate must not stop the study
        logger.warning("replicate %d failed: %s", index, exc)
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def _run_one(args):
    return fit_replicate(*args)


def aggregate(estimates, truth, cure_pct, setting):
    """Bias, coverage, ESE and RMSE of posterior medians across replicates.

    Parameters
    ----------
    estimates : list of dict
        One mapping per successful replicate from parameter name to an
        object with ``median``, ``q05``, ``q95``, ``q025`` and ``q975``.
    truth : dict
        True value by parameter name.

    Returns
    -------
    list of dict
        Rows keyed by :data:`TABLE_COLUMNS`; coverages are percentages.
    """
    rows = []
    for name, true in truth.items():
        est = [e[name] for e in estimates]
        med = np.array([e.median for e in est])
        err = med - true
        cv90 = np.mean([e.q05 <= true <= e.q95 for e in est]) * 100
        cv95 = np.mean([e.q025 <= true <= e.q975 for e in est]) * 100
        rows.append({
            "Cure": cure_pct,
            "Setting": setting,
            "Parameters": f"{name} = {true:.2f}",
            "Bias": float(err.mean()),
            "CV90": float(cv90),
            "CV95": float(cv95),
            "ESE": float(med.std(ddof=1)) if med.size > 1 else 0.0,
            "RMSE": float(np.sqrt(np.mean(err ** 2))),
        })
    return rows


def replicate_study(config, chain_config=ChainConfig(n_iter=8000, burnin=2000),
                    model_config=ModelConfig(), n_jobs=1, n_points=200, fit=None):
    """Run ``config.replicates`` independent generate-and-fit cycles.

    ``fit`` replaces :func:`fit_replicate` (same signature), e.g. to inject
    known estimates when checking the bookkeeping.
    """
    fit = fit_replicate if fit is None else fit
    times = curve_grid(config.t_rcens, n_points)
    jobs = [(r, config, chain_config, model_config, ss, cs, times)
            for r, (ss, cs) in enumerate(replicate_seeds(config.seed, config.replicates))]
    if n_jobs > 1 and fit is fit_replicate:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [fit(*job) for job in jobs]
    ok = [r for r in results if r.error is None]
    if len(ok) < len(results):
        logger.warning("%d of %d replicates failed", len(results) - len(ok), len(results))
    truth = dict(zip(config.parameter_names(), config.truth_vector()))
    table = aggregate([r.estimates for r in ok], truth, config.cure_pct, config.setting) \
        if ok else []
    return StudyResult(config, table, results, times, true_curves(config, times))
