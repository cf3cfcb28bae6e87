"""Command-line entry points.

Verbs: ``prior-samples``, ``width-sweep``, ``posterior``, ``policy-eval``,
``gen-data``.  Every verb writes ``metadata.json`` into the output
directory before any artifact, then delimited (CSV) artifacts and PNG
figures.  Exit codes: 0 ok, 2 usage/configuration/input error, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from . import datasets as dsets
from . import environments as envs
from . import plotting
from .core_math import derive_seed, make_rng
from .errors import ChainAbortedError, ConfigurationError, EvaluationError, InputError
from .likelihoods import (
    ActionLikelihood,
    ActionLikelihoodConfig,
    DarcyLikelihood,
    RegressionLikelihood,
    SolverConfig,
    load_action_dataset,
    load_regression_dataset,
)
from .neural_net import Saturation
from .priors import TCNN, Augmentation, PriorSpec, build_bnn, make_evaluator, prior_sample
from .samplers import PCN, PCNL, SamplerConfig, config_hash, run_chain

log = logging.getLogger("tcnn")

EXPERIMENTS = (
    "prior_samples",
    "width_sweep",
    "mountaincar_posterior",
    "darcy_posterior",
    "regression_recovery",
    "policy_eval",
)
POSTERIOR_EXPERIMENTS = ("mountaincar_posterior", "darcy_posterior", "regression_recovery")
VERB_EXPERIMENTS = {
    "prior-samples": ("prior_samples",),
    "width-sweep": ("width_sweep",),
    "posterior": POSTERIOR_EXPERIMENTS,
    "policy-eval": ("policy_eval",),
}
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


# --------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    """Everything one run needs.

    ``data`` selects the dataset: ``{"shipped": name}``, ``{"path": file}``
    or ``{"generate": {"kind": ..., "seed": ...}}``.  ``likelihood`` holds
    the noisy-action settings (``sigma``, ``quadrature_order``,
    ``saturation`` scale or null, ``stabilization``); ``solver`` the Darcy
    grid settings.  ``samples`` points policy evaluation at a finished
    posterior run directory.
    """

    experiment: str
    prior: PriorSpec | None = None
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    data: dict | None = None
    likelihood: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    grid: int = 41
    n_samples: int = 3
    widths: list | None = None
    depth: int = 3
    bnn_scaling: str = "fan_in"
    beta_bnn: float = 1.0 / 7.0
    episodes: int = 100
    max_steps: int = 200
    n_test_points: int = 5
    burn_in: int = 0
    samples: str | None = None
    seed: int = 0
    plots: bool = True

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if isinstance(self.prior, dict):
            self.prior = PriorSpec.from_dict(self.prior)
        if isinstance(self.sampler, dict):
            try:
                self.sampler = SamplerConfig(**self.sampler)
            except TypeError as exc:
                raise ConfigurationError(f"bad sampler settings: {exc}") from None
        if self.grid < 2 or self.n_samples < 1 or self.episodes < 1 or self.max_steps < 1:
            raise ConfigurationError("grid >= 2, n_samples >= 1, episodes >= 1 and max_steps >= 1 required")
        if self.burn_in < 0:
            raise ConfigurationError("burn_in must be >= 0")
        if self.bnn_scaling not in ("fan_in", "literal"):
            raise ConfigurationError("bnn_scaling must be 'fan_in' or 'literal'")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["prior"] = None if self.prior is None else self.prior.to_dict()
        out["sampler"] = self.sampler.to_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict) or "experiment" not in data:
            raise ConfigurationError("config must be a JSON object with an 'experiment' field")
        extra = set(data) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigurationError(f"unknown config fields: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def bundled_configs() -> list:
    root = resources.files("tcnn") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(ref) -> ExperimentConfig:
    """Read a config from a file path or by bundled name."""
    path = Path(ref)
    if not path.exists():
        bundled = resources.files("tcnn") / "configs" / f"{ref}.json"
        if not bundled.is_file():
            raise InputError(f"config not found: {ref} (bundled: {', '.join(bundled_configs())})")
        path = Path(str(bundled))
    return ExperimentConfig.from_json(path.read_text())


def with_seed(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    if seed is None:
        return cfg
    return replace(cfg, seed=int(seed), sampler=replace(cfg.sampler, seed=int(seed)))


def likelihood_config(cfg: ExperimentConfig) -> ActionLikelihoodConfig:
    opts = dict(cfg.likelihood)
    extra = set(opts) - {"sigma", "quadrature_order", "saturation", "stabilization", "centering"}
    if extra:
        raise ConfigurationError(f"unknown likelihood settings: {sorted(extra)}")
    scale = opts.pop("saturation", None)
    sat = Saturation(10.0, False) if scale is None else Saturation(float(scale), True)
    return ActionLikelihoodConfig(saturation=sat, **opts)


def solver_config(cfg: ExperimentConfig) -> SolverConfig:
    try:
        return SolverConfig(**cfg.solver)
    except TypeError as exc:
        raise ConfigurationError(f"bad solver settings: {exc}") from None


def load_data(cfg: ExperimentConfig):
    spec = cfg.data
    if not spec:
        raise ConfigurationError(f"experiment {cfg.experiment!r} needs a 'data' entry")
    kind = "action" if cfg.experiment in ("width_sweep", "mountaincar_posterior") else "regression"
    if "shipped" in spec:
        return dsets.load_shipped(spec["shipped"])
    if "path" in spec:
        return load_action_dataset(spec["path"]) if kind == "action" else load_regression_dataset(spec["path"])
    if "generate" in spec:
        gen = dict(spec["generate"])
        name = gen.pop("kind", None)
        makers = {"mountain_car": dsets.mountain_car_dataset, "darcy": dsets.darcy_dataset,
                  "regression": dsets.regression_dataset}
        if name not in makers:
            raise ConfigurationError(f"unknown generated dataset {name!r}")
        if name == "mountain_car" and "protocol" in gen:
            gen["protocol"] = envs.DataProtocol(**gen["protocol"])
        return makers[name](**gen)
    raise ConfigurationError("data must give one of 'shipped', 'path' or 'generate'")


# --------------------------------------------------------------------------
# output helpers

def git_describe() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return res.stdout.strip() if res.returncode == 0 and res.stdout.strip() else "unknown"


def write_metadata(out: Path, verb: str, cfg: ExperimentConfig | None, extra: dict | None = None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "command": verb,
        "version": __version__,
        "git": git_describe(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": None if cfg is None else cfg.to_dict(),
        "config_hash": None if cfg is None else cfg.hash(),
        "seed": None if cfg is None else cfg.seed,
    }
    meta.update(extra or {})
    path = out / "metadata.json"
    path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def read_csv(path) -> tuple:
    """Header and float matrix of a numeric CSV written by this module."""
    text = Path(path).read_text().splitlines()
    header = text[0].split(",")
    body = np.array([[float(v) for v in ln.split(",")] for ln in text[1:]]) if len(text) > 1 else np.empty((0, len(header)))
    return header, body


def _grid_axes(evaluator, n: int):
    aug = evaluator.augmentation
    if evaluator.input_dim != 2:
        raise ConfigurationError("grid output needs a two-dimensional input space")
    lo, hi = (aug.lo, aug.hi) if aug.kind == "box" else ((0.0, 0.0), (1.0, 1.0))
    return np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n)


def _grid_points(a1, a2) -> np.ndarray:
    return np.stack(np.meshgrid(a1, a2, indexing="ij"), axis=-1).reshape(-1, 2)


# --------------------------------------------------------------------------
# commands

def cmd_prior_samples(cfg: ExperimentConfig, out: Path) -> dict:
    """Draw ``n_samples`` prior functions and write each on a ``grid x grid`` lattice."""
    if cfg.prior is None:
        raise ConfigurationError("prior-samples needs a prior")
    write_metadata(out, "prior-samples", cfg)
    layout = cfg.prior.build()
    ev = cfg.prior.evaluator(layout)
    a1, a2 = _grid_axes(ev, cfg.grid)
    X = _grid_points(a1, a2)
    rng = make_rng(cfg.seed, "prior-samples")
    P = prior_sample(layout, rng, cfg.n_samples)
    V = ev.evaluate_many(P, X)
    files = []
    for k in range(cfg.n_samples):
        p = write_csv(out / f"sample_{k:03d}.csv", ["x1", "x2", "u"],
                      ((x[0], x[1], v) for x, v in zip(X, V[k])))
        files.append(p)
        if cfg.plots:
            plotting.field_figure(a1, a2, V[k].reshape(cfg.grid, cfg.grid), out / f"sample_{k:03d}.png",
                                  title=f"prior sample {k + 1}")
    return {"files": files, "n_params": layout.n_params}


def _sweep_cell(cfg: ExperimentConfig, data, family: str, width: int) -> dict:
    widths = [width] * cfg.depth
    aug = Augmentation.from_dict(cfg.prior.augmentation if cfg.prior else None)
    if family == "tcnn":
        spec = replace(cfg.prior, widths=widths, d=2) if cfg.prior else PriorSpec(TCNN, widths=widths, d=2)
        layout = spec.build()
        beta, scaling = cfg.sampler.beta, ""
    else:
        layout = build_bnn(widths, 2, scaling=cfg.bnn_scaling)
        beta, scaling = cfg.beta_bnn, cfg.bnn_scaling
    lik = ActionLikelihood(data, make_evaluator(layout, aug), likelihood_config(cfg))
    seed = derive_seed(cfg.seed, "width-sweep", family, width)
    scfg = replace(cfg.sampler, kind=PCN, beta=beta, seed=seed, thin=max(1, cfg.sampler.n_iter))
    res = run_chain(scfg, layout, lik, rng=make_rng(seed, "chain"))
    acc = res.summary["rates"].get(PCN, float("nan"))
    return {
        "width": width,
        "depth": cfg.depth,
        "prior": family,
        "scaling": scaling,
        "beta": beta,
        "n_params": layout.n_params,
        "iterations": cfg.sampler.n_iter,
        "acceptance_pct": 100.0 * acc,
        "loglik_mean": res.summary["loglik_mean"],
    }


def cmd_width_sweep(cfg: ExperimentConfig, out: Path, threads: int = 1) -> dict:
    """Acceptance rate of pCN on the mountain-car posterior across widths,
    for the trace-class prior and the width-scaled BNN prior."""
    if not cfg.widths:
        raise ConfigurationError("width-sweep needs a list of widths")
    if cfg.prior is not None and cfg.prior.family != TCNN:
        raise ConfigurationError("the width-sweep prior template must be the tcnn family")
    write_metadata(out, "width-sweep", cfg)
    data = load_data(cfg)
    cells = [(fam, int(w)) for w in cfg.widths for fam in ("tcnn", "bnn")]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda c: _sweep_cell(cfg, data, *c), cells))
    else:
        rows = [_sweep_cell(cfg, data, *c) for c in cells]
    header = list(rows[0])
    write_csv(out / "cells.csv", header, ([r[h] for h in header] for r in rows))
    by = {(r["prior"], r["width"]): r for r in rows}
    table = [(w, by["tcnn", w]["n_params"], by["tcnn", w]["acceptance_pct"], by["bnn", w]["acceptance_pct"])
             for w in map(int, cfg.widths)]
    write_csv(out / "table.csv", ["width", "n_params", "acc_tcnn_pct", "acc_bnn_pct"], table)
    if cfg.plots:
        plotting.width_sweep_figure(rows, out / "width_sweep.png")
    return {"rows": rows}


def _posterior_likelihood(cfg: ExperimentConfig, data, ev):
    if cfg.experiment == "mountaincar_posterior":
        return ActionLikelihood(data, ev, likelihood_config(cfg))
    if cfg.experiment == "darcy_posterior":
        if cfg.sampler.kind == PCNL:
            raise ConfigurationError(
                "pCNL is not available for the Darcy posterior: it needs the gradient of the "
                "log-likelihood, which requires an adjoint flow solve that is not implemented; use 'pcn'"
            )
        return DarcyLikelihood(data, ev, solver_config(cfg))
    return RegressionLikelihood(data, ev)


def cmd_posterior(cfg: ExperimentConfig, out: Path) -> dict:
    """Run one chain and write thinned samples, the posterior-mean grid and
    experiment-specific summaries."""
    if cfg.prior is None:
        raise ConfigurationError("posterior needs a prior")
    layout = cfg.prior.build()
    ev = cfg.prior.evaluator(layout)
    data = load_data(cfg)
    lik = _posterior_likelihood(cfg, data, ev)
    write_metadata(out, "posterior", cfg, {"n_params": layout.n_params})

    res = run_chain(cfg.sampler, layout, lik, rng=make_rng(cfg.sampler.seed, "chain"))
    np.save(out / "samples.npy", res.samples)
    write_csv(out / "sample_iterations.csv", ["iteration"], ((i,) for i in res.sample_iterations))
    res.trace.to_csv(out / "trace.csv")
    keep = res.sample_iterations > cfg.burn_in
    S = res.samples[keep]
    if S.shape[0] == 0:
        raise ConfigurationError("burn_in discards every stored sample")

    a1, a2 = _grid_axes(ev, cfg.grid)
    X = _grid_points(a1, a2)
    mean = ev.evaluate_many(S, X).mean(axis=0)
    write_csv(out / "mean_grid.csv", ["x1", "x2", "mean"], ((x[0], x[1], m) for x, m in zip(X, mean)))

    summary = {
        "n_stored": int(res.samples.shape[0]),
        "n_used": int(S.shape[0]),
        "acceptance": res.summary["rates"],
        "loglik_mean": res.summary["loglik_mean"],
        "failures": res.n_failures,
    }
    result = {"chain": res, "mean": mean, "grid": X, "used": S}
    if cfg.experiment == "mountaincar_posterior":
        result["test_vectors"] = _test_point_vectors(cfg, data, ev, S, out)
    elif cfg.experiment == "darcy_posterior":
        result["coverage"] = summary["ppc_coverage"] = _darcy_ppc(cfg, data, lik, S, out)
    else:
        truth = dsets.true_log_permeability()(X)
        summary["rmse_vs_truth"] = float(np.sqrt(np.mean((mean - truth) ** 2)))
    flat = {k: v for k, v in summary.items() if not isinstance(v, dict)}
    flat.update({f"acceptance_{k}": v for k, v in summary["acceptance"].items()})
    write_csv(out / "summary.csv", ["key", "value"], sorted(flat.items()))
    if cfg.plots:
        labels = ("x1 (position)", "x2 (velocity)") if cfg.experiment == "mountaincar_posterior" else ("x1", "x2")
        plotting.field_figure(a1, a2, mean.reshape(cfg.grid, cfg.grid), out / "mean_grid.png",
                              title="posterior mean", labels=labels)
        plotting.trace_figure(res.trace.loglik, out / "trace.png")
        if "test_vectors" in result:
            env = envs.get_env(data.env)
            plotting.test_point_figure(result["test_vectors"], out / "test_points.png",
                                       [str(a) for a in env.action_values])
    result["summary"] = summary
    return result


def _test_point_vectors(cfg, data, ev, S, out: Path) -> np.ndarray:
    env = envs.get_env(data.env)
    Z = envs.test_points(env, make_rng(cfg.seed, "test-points"), cfg.n_test_points)
    succ = env.successors(Z)  # (n, M, d)
    n, M, d = succ.shape
    V = ev.evaluate_many(S, succ.reshape(n * M, d)).reshape(len(S), n, M).transpose(1, 0, 2)
    rows = []
    vectors = np.empty_like(V)
    for j in range(n):
        opt = env.action_index(envs.expert_policy_for(env)(Z[j]))
        vectors[j] = envs.normalize_value_vector(V[j], opt)
        for s in range(len(S)):
            rows.append((j + 1, Z[j, 0], Z[j, 1], opt + 1, s, *vectors[j, s]))
    header = ["point", "x1", "x2", "optimal", "sample"] + [f"v{k + 1}" for k in range(M)]
    write_csv(out / "test_points.csv", header, rows)
    return vectors


def _darcy_ppc(cfg, data, lik, S, out: Path, level: float = 0.95) -> float:
    """Central posterior-predictive intervals at the observation locations."""
    pred = np.array([lik.predict(p) for p in S])
    rng = make_rng(cfg.seed, "ppc")
    draws = pred + data.noise_std * rng.standard_normal(pred.shape)
    lo, hi = np.quantile(draws, [(1 - level) / 2, (1 + level) / 2], axis=0)
    inside = (data.y >= lo) & (data.y <= hi)
    rows = ((k, data.X[k, 0], data.X[k, 1], data.y[k], pred[:, k].mean(), lo[k], hi[k], inside[k])
            for k in range(len(data)))
    write_csv(out / "ppc.csv", ["obs", "x1", "x2", "y", "pred_mean", "lo", "hi", "inside"], rows)
    return float(inside.mean())


def _load_posterior_run(run_dir):
    run_dir = Path(run_dir)
    meta_path, samples_path = run_dir / "metadata.json", run_dir / "samples.npy"
    for p in (meta_path, samples_path):
        if not p.exists():
            raise InputError(f"missing posterior output: {p}")
    meta = json.loads(meta_path.read_text())
    pcfg = ExperimentConfig.from_dict(meta["config"])
    if pcfg.experiment != "mountaincar_posterior":
        raise InputError(f"{run_dir} is not a mountain-car posterior run")
    its_path = run_dir / "sample_iterations.csv"
    S = np.load(samples_path)
    if its_path.exists():
        its = read_csv(its_path)[1][:, 0]
        S = S[its > pcfg.burn_in]
    return pcfg, S


def cmd_policy_eval(cfg: ExperimentConfig, out: Path) -> dict:
    """Greedy rollouts of the posterior-mean value function against the
    expert and a fresh prior draw, from the same ``episodes`` start states."""
    if not cfg.samples:
        raise ConfigurationError("policy-eval needs 'samples', the directory of a posterior run")
    pcfg, S = _load_posterior_run(cfg.samples)
    write_metadata(out, "policy-eval", cfg, {"posterior_config_hash": pcfg.hash(), "n_samples": int(len(S))})
    layout = pcfg.prior.build()
    ev = pcfg.prior.evaluator(layout)
    data = load_data(pcfg)
    env = envs.get_env(data.env)
    starts = env.initial_states(make_rng(cfg.seed, "episodes"), cfg.episodes)
    post = envs.rollout_many(env, envs.posterior_value_fn(ev, S), starts, max_steps=cfg.max_steps)
    expert = envs.rollout_policy(env, envs.expert_policy_for(env), starts, max_steps=cfg.max_steps)
    fresh = prior_sample(layout, make_rng(cfg.seed, "baseline-prior"))
    base = envs.rollout_many(env, envs.value_fn_from(ev, fresh), starts, max_steps=cfg.max_steps)
    results = {"posterior_mean": post, "expert": expert, "prior_draw": base}

    rows = [(e, starts[e, 0], starts[e, 1], post.steps[e], post.success[e], expert.steps[e],
             expert.success[e], base.steps[e], base.success[e]) for e in range(cfg.episodes)]
    write_csv(out / "episodes.csv",
              ["episode", "x1", "x2", "steps_posterior", "success_posterior", "steps_expert", "success_expert",
               "steps_prior", "success_prior"], rows)
    p_base = base.failures / cfg.episodes
    pval = stats.binomtest(post.failures, cfg.episodes, p_base, alternative="less").pvalue if p_base > 0 else 1.0
    summ = []
    for name, r in results.items():
        ok = r.steps[r.success]
        summ.append((name, cfg.episodes, r.failures, float(ok.mean()) if ok.size else float("nan")))
    write_csv(out / "summary.csv", ["policy", "episodes", "failures", "mean_steps_success"], summ)
    write_csv(out / "test.csv", ["statistic", "value"],
              [("posterior_failures", post.failures), ("prior_failures", base.failures),
               ("binomial_p_less", pval)])
    if cfg.plots:
        plotting.steps_figure({k: v.steps for k, v in results.items()}, cfg.max_steps, out / "steps.png")
    return {"results": results, "p_value": pval}


def cmd_gen_data(out: Path, seed: int) -> list:
    write_metadata(out, "gen-data", None, {"seed": seed})
    return dsets.write_shipped(out, seed)


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tcnn", description="Function-space priors and MCMC experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, hlp in [
        ("prior-samples", "draw prior functions on a grid"),
        ("width-sweep", "pCN acceptance rate against network width"),
        ("posterior", "run a posterior chain"),
        ("policy-eval", "roll out the posterior-mean policy"),
    ]:
        s = sub.add_parser(verb, help=hlp)
        s.add_argument("--config", required=True, help="config JSON file or bundled config name")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--threads", type=int, default=1, help="worker threads (width-sweep cells)")
        s.add_argument("--no-plots", action="store_true", help="skip PNG figures")
        if verb == "policy-eval":
            s.add_argument("--samples", default=None, help="posterior run directory (overrides the config)")
    g = sub.add_parser("gen-data", help="regenerate the shipped datasets")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--threads", type=int, default=1, help="accepted for uniformity; unused")
    sub.add_parser("list-configs", help="print the bundled config names")
    return p


def run(args) -> dict | list:
    out = Path(args.out) if getattr(args, "out", None) else None
    if args.verb == "gen-data":
        return cmd_gen_data(out, args.seed)
    cfg = with_seed(load_config(args.config), args.seed)
    if cfg.experiment not in VERB_EXPERIMENTS[args.verb]:
        raise ConfigurationError(f"config experiment {cfg.experiment!r} does not fit verb {args.verb!r}")
    if args.no_plots:
        cfg = replace(cfg, plots=False)
    if args.threads < 1:
        raise ConfigurationError("--threads must be >= 1")
    if args.verb == "prior-samples":
        return cmd_prior_samples(cfg, out)
    if args.verb == "width-sweep":
        return cmd_width_sweep(cfg, out, args.threads)
    if args.verb == "posterior":
        return cmd_posterior(cfg, out)
    if args.samples:
        cfg = replace(cfg, samples=args.samples)
    return cmd_policy_eval(cfg, out)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.verb == "list-configs":
        print("\n".join(bundled_configs()))
        return EXIT_OK
    try:
        run(args)
    except (ConfigurationError, InputError) as exc:
        print(f"tcnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EvaluationError, ChainAbortedError) as exc:
        print(f"tcnn: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
