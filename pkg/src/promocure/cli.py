"""Command line interface: ``promocure {fit,simulate,replicate,curves,rerun}``.

Every run writes ``manifest.json`` holding the fully resolved configuration,
the seed and the SHA-256 of each input; ``promocure rerun`` replays it.

Exit codes: 0 success, 2 invalid input or configuration, 3 chain failure.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .model import ModelConfig, PenaltyHypers, Priors
from .sampler import ChainConfig, ChainError, run_chain
from .simulation import ScenarioConfig, generate_dataset
from .study import TABLE_COLUMNS, replicate_study
from .summary import (
    CURVE_KINDS,
    Contrast,
    curve_bands,
    curve_grid,
    geweke_table,
    summarize_parameters,
)

logger = logging.getLogger("promocure")

EXIT_OK, EXIT_INVALID, EXIT_CHAIN = 0, 2, 3


class ConfigError(ValueError):
    pass


def _model_block(args):
    return {
        "n_basis": args.n_basis, "n_bins": args.n_bins, "penalty_order": args.penalty_order,
        "ridge": args.ridge, "phi_last": args.phi_last, "reg_var": args.reg_var,
        "nu": args.nu, "a_delta": args.a_delta, "b_delta": args.b_delta,
    }


def _chain_block(args):
    return {
        "n_iter": args.iterations, "burnin": args.burnin, "seed": args.seed,
        "target_accept": args.target_accept, "reparametrize": not args.no_reparametrize,
    }


def _scenario_block(args):
    scenario = io.parse_scenario(args.scenario) if args.scenario else {}
    for key in ("n", "replicates", "cure_pct", "setting", "beta0", "beta", "gamma",
                "t_rcens", "seed"):
        value = getattr(args, f"sc_{key}", None)
        if value is not None:
            scenario[key] = value
    unknown = set(scenario) - set(ScenarioConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    return ScenarioConfig(**scenario).to_dict()


def _split(model):
    cfg = ModelConfig(model["n_basis"], model["n_bins"], model["penalty_order"],
                      model["ridge"], model["phi_last"])
    hypers = PenaltyHypers(1.0, 1.0, model["nu"], model["a_delta"], model["b_delta"])
    return cfg, hypers, Priors(model["reg_var"])


def run_fit(cfg, out):
    data = io.parse_dataset(cfg["input"], short_followup=cfg["short_followup"])
    model_cfg, hypers, priors = _split(cfg["model"])
    t_max = cfg["t_max"] if cfg["t_max"] is not None else float(data.times.max())
    if data.times.max() > t_max:
        raise ConfigError(f"observed times exceed --t-max {t_max}")
    grid, penalty = model_cfg.build(t_max)
    chain_cfg = ChainConfig(**cfg["chain"])
    chain = run_chain(data, grid, penalty, chain_cfg, hypers, priors, model_cfg.phi_last)
    io.write_draws(out / "draws.csv", chain)
    io.write_summary(out, summarize_parameters(chain))
    gz = geweke_table(chain)
    io.write_csv(out / "geweke.csv", ["parameter", "z"], gz.items())
    io.write_csv(out / "acceptance.csv", ["parameter", "acceptance", "proposal_sd"],
                 [(k, v, chain.proposal_sds[k]) for k, v in chain.acceptance_rates.items()])
    _write_curves(chain, grid, data, cfg["contrast"], cfg["levels"], out)
    return {"t_max": t_max, "n": data.n, "p": data.p, "q": data.q,
            "reparam_fallback": chain.reparam_fallback}


def _write_curves(chain, grid, data, covariate, levels, out):
    times = curve_grid(grid.t_max)
    contrast = None
    if covariate is not None:
        contrast = Contrast.from_data(data, covariate, tuple(levels))
    elif data.p or data.q:
        names = data.x_names + [v for v in data.z_names if v not in data.x_names]
        contrast = Contrast.from_data(data, names[0], tuple(levels))
    for kind in CURVE_KINDS:
        if kind != "S0" and contrast is None:
            continue
        band = curve_bands(chain, grid, kind, times, contrast)
        io.write_curve(out / f"curve_{kind}.csv", band)


def run_curves(cfg, out):
    fit_dir = Path(cfg["fit_dir"])
    manifest = io.read_json(fit_dir / "manifest.json")
    if manifest.get("status") != "ok" or manifest["config"]["subcommand"] != "fit":
        raise ConfigError(f"{fit_dir} does not hold a successful fit")
    fit_cfg = manifest["config"]
    data = io.parse_dataset(fit_cfg["input"], short_followup=fit_cfg["short_followup"])
    model_cfg, _, _ = _split(fit_cfg["model"])
    grid, _ = model_cfg.build(manifest["result"]["t_max"])
    chain = io.read_draws(fit_dir / "draws.csv")
    contrast = cfg["contrast"] if cfg["contrast"] is not None else fit_cfg["contrast"]
    levels = cfg["levels"] if cfg["levels"] is not None else fit_cfg["levels"]
    _write_curves(chain, grid, data, contrast, levels, out)
    return {"t_max": manifest["result"]["t_max"]}


def run_simulate(cfg, out):
    scenario = ScenarioConfig(**cfg["scenario"])
    rng = np.random.default_rng(np.random.SeedSequence(scenario.seed))
    gen = generate_dataset(scenario, rng)
    io.write_dataset(out / "dataset.csv", gen.data)
    io.write_csv(out / "truth.csv", ["row", "cured", "raw_time"],
                 zip(range(1, gen.data.n + 1), gen.cured.astype(int), gen.raw_times))
    io.write_json(out / "truth.json", {
        "scenario": scenario.to_dict(),
        "parameters": dict(zip(scenario.parameter_names(), scenario.truth_vector())),
        "baseline_weibull": {"shape": scenario.baseline().shape,
                             "scale": scenario.baseline().scale},
    })
    return {"n": gen.data.n, "cure_fraction": float(gen.cured.mean()),
            "latent_retries": gen.retries}


def run_replicate(cfg, out):
    scenario = ScenarioConfig(**cfg["scenario"])
    model_cfg, _, _ = _split(cfg["model"])
    chain_cfg = ChainConfig(**cfg["chain"])
    res = replicate_study(scenario, chain_cfg, model_cfg, n_jobs=cfg["jobs"])
    io.write_csv(out / "table.csv", TABLE_COLUMNS,
                 [[row[c] for c in TABLE_COLUMNS] for row in res.table])
    est_rows = []
    for r in res.replicates:
        for name, s in r.estimates.items():
            est_rows.append((r.index, name, s.median, s.hpd_low, s.hpd_high, s.sd,
                             s.q025, s.q05, s.q95, s.q975))
    io.write_csv(out / "estimates.csv",
                 ["replicate", "parameter", "median", "hpd95_low", "hpd95_high", "sd",
                  "q025", "q05", "q95", "q975"], est_rows)
    io.write_csv(out / "failures.csv", ["replicate", "error"],
                 [(r.index, r.error) for r in res.replicates if r.error])
    for kind, truth in res.truth_curves.items():
        rows = [("truth", t, v) for t, v in zip(res.times, truth)]
        for r in res.replicates:
            if r.error is None:
                rows.extend((r.index, t, v) for t, v in zip(res.times, r.curves[kind]))
        io.write_csv(out / f"curves_{kind}.csv", ["replicate", "time", "value"], rows)
    return {"replicates": len(res.replicates), "failed": res.n_failed}


RUNNERS = {"fit": run_fit, "simulate": run_simulate, "replicate": run_replicate,
           "curves": run_curves}


def _inputs(cfg):
    paths = []
    if cfg.get("input"):
        paths.append(cfg["input"])
    if cfg.get("fit_dir"):
        paths.append(str(Path(cfg["fit_dir"]) / "draws.csv"))
    return {p: io.file_sha256(p) for p in paths}


def execute(cfg):
    """Run a resolved configuration and write its manifest; returns an exit code."""
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"version": __version__, "config": cfg, "status": "ok"}
    seed = cfg.get("chain", {}).get("seed", cfg.get("scenario", {}).get("seed"))
    manifest["seed"] = seed
    code = EXIT_OK
    try:
        manifest["inputs"] = _inputs(cfg)
        manifest["result"] = RUNNERS[cfg["subcommand"]](cfg, out)
    except (io.DataValidationError, ConfigError, ValueError, FileNotFoundError) as exc:
        manifest.update(status="invalid", error=str(exc))
        logger.error("%s", exc)
        code = EXIT_INVALID
    except ChainError as exc:
        manifest.update(status="chain_failure", error=str(exc),
                        failure={"iteration": exc.iteration, "parameter": exc.parameter,
                                 "value": repr(exc.value)})
        if exc.partial_draws is not None:
            io.write_csv(out / "draws_partial.csv", exc.names, exc.partial_draws)
        logger.error("%s", exc)
        code = EXIT_CHAIN
    io.write_json(out / "manifest.json", manifest)
    return code


def _add_model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--n-basis", type=int, default=12)
    g.add_argument("--n-bins", type=int, default=300)
    g.add_argument("--penalty-order", type=int, default=3, choices=(1, 2, 3))
    g.add_argument("--ridge", type=float, default=1e-6)
    g.add_argument("--phi-last", type=float, default=10.0)
    g.add_argument("--reg-var", type=float, default=1e4)
    g.add_argument("--nu", type=float, default=2.0)
    g.add_argument("--a-delta", type=float, default=1e-4)
    g.add_argument("--b-delta", type=float, default=1e-4)


def _add_chain_args(p, iterations=23000, burnin=3000):
    g = p.add_argument_group("chain")
    g.add_argument("--iterations", type=int, default=iterations)
    g.add_argument("--burnin", type=int, default=burnin)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--target-accept", type=float, default=0.44)
    g.add_argument("--no-reparametrize", action="store_true")


def _add_scenario_args(p):
    g = p.add_argument_group("scenario (override values read from --scenario)")
    g.add_argument("--scenario", help="key = value scenario file")
    g.add_argument("--n", dest="sc_n", type=int)
    g.add_argument("--replicates", dest="sc_replicates", type=int)
    g.add_argument("--cure-pct", dest="sc_cure_pct", type=int)
    g.add_argument("--setting", dest="sc_setting", type=int, choices=(1, 2, 3, 4))
    g.add_argument("--beta0", dest="sc_beta0", type=float)
    g.add_argument("--beta", dest="sc_beta", type=float, nargs="+")
    g.add_argument("--gamma", dest="sc_gamma", type=float, nargs="+")
    g.add_argument("--t-rcens", dest="sc_t_rcens", type=float)
    g.add_argument("--scenario-seed", dest="sc_seed", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="promocure", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("fit", help="fit a dataset CSV")
    p.add_argument("input", help="CSV with time,event,x_*,z_* columns")
    p.add_argument("--out", required=True)
    p.add_argument("--t-max", type=float, help="end of follow up (default: largest time)")
    p.add_argument("--short-followup", action="store_true",
                   help="reject covariates shared by the cure and latency parts")
    p.add_argument("--contrast", help="covariate contrasted by the hazard-ratio curves")
    p.add_argument("--levels", type=float, nargs=2, default=(1.0, 0.0))
    _add_model_args(p)
    _add_chain_args(p)

    p = sub.add_parser("simulate", help="generate one dataset")
    p.add_argument("--out", required=True)
    _add_scenario_args(p)

    p = sub.add_parser("replicate", help="run a replicate study")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_scenario_args(p)
    _add_model_args(p)
    _add_chain_args(p, iterations=8000, burnin=2000)

    p = sub.add_parser("curves", help="recompute curves from an existing fit directory")
    p.add_argument("fit_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--contrast", help="default: the contrast of the fit")
    p.add_argument("--levels", type=float, nargs=2)

    p = sub.add_parser("rerun", help="replay a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return parser


def resolve(args):
    cfg = {"subcommand": args.subcommand, "output": str(args.out)}
    if args.subcommand == "fit":
        cfg.update(input=str(args.input), t_max=args.t_max,
                   short_followup=args.short_followup, contrast=args.contrast,
                   levels=list(args.levels), model=_model_block(args),
                   chain=_chain_block(args))
    elif args.subcommand == "simulate":
        cfg.update(scenario=_scenario_block(args))
    elif args.subcommand == "replicate":
        cfg.update(scenario=_scenario_block(args), model=_model_block(args),
                   chain=_chain_block(args), jobs=args.jobs)
    elif args.subcommand == "curves":
        cfg.update(fit_dir=str(args.fit_dir), contrast=args.contrast,
                   levels=None if args.levels is None else list(args.levels))
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.subcommand == "rerun":
            cfg = io.read_json(args.manifest)["config"]
            cfg["output"] = str(args.out)
        else:
            cfg = resolve(args)
    except (io.DataValidationError, ValueError, FileNotFoundError) as exc:
        print(f"promocure: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
