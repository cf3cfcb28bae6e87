"""Metropolis-Hastings kernels on the coordinates of a diagonal Gaussian prior.

* pCN:  ``v = sqrt(1 - beta^2) u + beta w``, accepted with ``exp(l(v) - l(u))``
* pCNL: ``v = ((2 - delta) u + 2 delta C Dl(u) + sqrt(8 delta) w) / (2 + delta)``,
  accepted with ``exp(rho(u, v) - rho(v, u))``
* NodeSwap: relabel two adjacent hidden nodes of a network, accepted with the
  prior ratio only (the likelihood is invariant)

``w ~ N(0, C)`` throughout, where ``C`` is the prior covariance.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import neural_net as nn
from .core_math import DiagonalGaussian, make_rng
from .errors import ChainAbortedError, ConfigurationError, EvaluationError, InputError

PCN = "pcn"
PCNL = "pcnl"
PCN_NODESWAP = "pcn_nodeswap"
KINDS = (PCN, PCNL, PCN_NODESWAP)


@dataclass
class ChainState:
    params: np.ndarray
    loglik: float
    grad: np.ndarray | None = None
    iteration: int = 0


@dataclass(frozen=True)
class StepRecord:
    iteration: int
    loglik: float
    accepted: bool
    move: str
    failed: bool = False
    log_alpha: float = float("nan")


@dataclass
class SamplerConfig:
    kind: str = PCN
    beta: float = 0.1
    delta: float = 0.1
    swap_prob: float = 0.0
    swap_dist: str = "power"
    n_iter: int = 1000
    thin: int = 100
    seed: int = 0
    init: str = "prior"
    audit_every: int = 1000
    max_failures: int = 100

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown sampler kind {self.kind!r}")
        if self.kind in (PCN, PCN_NODESWAP) and not 0 < self.beta <= 1:
            raise ConfigurationError(f"beta must lie in (0, 1], got {self.beta}")
        if self.kind == PCNL and not 0 < self.delta < 2:
            raise ConfigurationError(f"delta must lie in (0, 2), got {self.delta}")
        if not 0 <= self.swap_prob < 1:
            raise ConfigurationError("swap probability must lie in [0, 1)")
        if self.swap_dist not in ("power", "geometric"):
            raise ConfigurationError(f"unknown swap distribution {self.swap_dist!r}")
        if self.n_iter < 0 or self.thin < 1:
            raise ConfigurationError("n_iter must be >= 0 and thin >= 1")
        if self.init not in ("prior", "zero"):
            raise ConfigurationError("init must be 'prior' or 'zero'")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _as_gaussian(prior) -> DiagonalGaussian:
    if isinstance(prior, DiagonalGaussian):
        return prior
    g = getattr(prior, "gaussian", None)
    if isinstance(g, DiagonalGaussian):
        return g
    return DiagonalGaussian(np.asarray(prior, dtype=float))


def _safe_eval(fn, params):
    """Evaluate, mapping evaluation errors and non-finite values to None."""
    try:
        out = fn(params)
    except (EvaluationError, FloatingPointError, ValueError):
        return None
    val = out[0] if isinstance(out, tuple) else out
    if not np.isfinite(val):
        return None
    if isinstance(out, tuple) and not np.all(np.isfinite(out[1])):
        return None
    return out


def _accept(log_alpha: float, rng) -> bool:
    u = rng.random()
    return bool(log_alpha >= 0.0 or math.log(u) < log_alpha) if u > 0 else True


def pcn_step(state: ChainState, prior, loglik, beta: float, rng) -> tuple:
    """One pCN transition; returns ``(state, record)``."""
    if not 0 < beta <= 1:
        raise ConfigurationError(f"beta must lie in (0, 1], got {beta}")
    g = _as_gaussian(prior)
    w = g.std * rng.standard_normal(g.dimension)
    v = math.sqrt(1.0 - beta * beta) * state.params + beta * w
    it = state.iteration + 1
    lv = _safe_eval(loglik, v)
    if lv is None:
        rng.random()  # keep the stream aligned with the finite case
        return ChainState(state.params, state.loglik, state.grad, it), StepRecord(it, state.loglik, False, PCN, True)
    log_alpha = float(lv) - state.loglik
    if _accept(log_alpha, rng):
        return ChainState(v, float(lv), None, it), StepRecord(it, float(lv), True, PCN, False, log_alpha)
    return ChainState(state.params, state.loglik, state.grad, it), StepRecord(it, state.loglik, False, PCN, False, log_alpha)


def pcnl_rho(u, v, l_u: float, g_u, var, delta: float) -> float:
    """``rho(u, v) = -l(u) - <v-u, g>/2 - delta/4 <u+v, g> + delta/4 |sqrt(C) g|^2``."""
    return (
        -l_u
        - 0.5 * float(np.dot(v - u, g_u))
        - 0.25 * delta * float(np.dot(u + v, g_u))
        + 0.25 * delta * float(np.dot(var * g_u, g_u))
    )


def pcnl_proposal(u, g_u, var, std, delta: float, noise) -> np.ndarray:
    return ((2.0 - delta) * u + 2.0 * delta * var * g_u + math.sqrt(8.0 * delta) * std * noise) / (2.0 + delta)


def pcnl_step(state: ChainState, prior, loglik_grad, delta: float, rng) -> tuple:
    """One pCNL transition.  ``loglik_grad(params) -> (l, grad)``; the
    gradient at the current state is taken from ``state.grad`` when cached."""
    if not 0 < delta < 2:
        raise ConfigurationError(f"delta must lie in (0, 2), got {delta}")
    g = _as_gaussian(prior)
    var, std = g.variances, g.std
    it = state.iteration + 1
    if state.grad is None:
        out = loglik_grad(state.params)
        state = ChainState(state.params, float(out[0]), np.asarray(out[1], dtype=float), state.iteration)
    u, l_u, g_u = state.params, state.loglik, state.grad
    v = pcnl_proposal(u, g_u, var, std, delta, rng.standard_normal(g.dimension))
    out = _safe_eval(loglik_grad, v)
    if out is None:
        rng.random()
        return ChainState(u, l_u, g_u, it), StepRecord(it, l_u, False, PCNL, True)
    l_v, g_v = float(out[0]), np.asarray(out[1], dtype=float)
    log_alpha = pcnl_rho(u, v, l_u, g_u, var, delta) - pcnl_rho(v, u, l_v, g_v, var, delta)
    if not np.isfinite(log_alpha):
        rng.random()
        return ChainState(u, l_u, g_u, it), StepRecord(it, l_u, False, PCNL, True)
    if _accept(log_alpha, rng):
        return ChainState(v, l_v, g_v, it), StepRecord(it, l_v, True, PCNL, False, log_alpha)
    return ChainState(u, l_u, g_u, it), StepRecord(it, l_u, False, PCNL, False, log_alpha)


def _swap_layers(shape: nn.NetworkShape) -> list:
    return [l for l in range(1, len(shape.widths) + 1) if shape.sizes[l] >= 2]


def sample_swap_site(shape: nn.NetworkShape, alpha: float, rng, dist: str = "power") -> tuple:
    """Pick ``(layer, i)``: layer uniform over hidden layers with at least
    two nodes, ``i`` on ``1..N-1`` with probability proportional to
    ``i^-alpha`` (``power``) or geometric with success probability
    ``1/alpha`` resampled until ``i <= N-1`` (``geometric``)."""
    layers = _swap_layers(shape)
    if not layers:
        raise ConfigurationError("no hidden layer has two nodes to swap")
    l = layers[int(rng.integers(len(layers)))]
    n = shape.sizes[l] - 1
    if dist == "power":
        w = np.arange(1, n + 1, dtype=float) ** (-alpha)
        i = int(rng.choice(n, p=w / w.sum())) + 1
    elif dist == "geometric":
        if alpha < 1:
            raise ConfigurationError("geometric swap distribution needs alpha >= 1")
        while True:
            i = int(rng.geometric(1.0 / alpha))
            if i <= n:
                break
    else:
        raise ConfigurationError(f"unknown swap distribution {dist!r}")
    return l, i


def nodeswap_step(state: ChainState, layout, rng, dist: str = "power") -> tuple:
    """Swap nodes ``i`` and ``i+1`` of a random hidden layer, accepted with
    ``mu0(theta') / mu0(theta)``.  Log-likelihood and any cached gradient are
    carried over (the gradient is permuted alongside the parameters)."""
    shape = getattr(layout, "shape", None)
    if shape is None:
        raise ConfigurationError("NodeSwap needs a finite-width network layout")
    it = state.iteration
    l, i = sample_swap_site(shape, layout.alpha, rng, dist)
    perm = nn.swap_permutation(shape, l, i, i + 1)
    moved = np.flatnonzero(perm != np.arange(perm.size))
    theta = state.params
    var = layout.variances
    # perm is an involution; grouping by coordinate makes equal variances cancel exactly
    log_alpha = -0.5 * float(np.sum(theta[moved] ** 2 * (1.0 / var[perm[moved]] - 1.0 / var[moved])))
    if _accept(log_alpha, rng):
        grad = None if state.grad is None else state.grad[perm]
        new = ChainState(theta[perm], state.loglik, grad, it)
        return new, StepRecord(it, state.loglik, True, "nodeswap", False, log_alpha)
    return state, StepRecord(it, state.loglik, False, "nodeswap", False, log_alpha)


# --------------------------------------------------------------------------
# chains

@dataclass
class ChainTrace:
    """Columnar record stream."""

    iteration: list = field(default_factory=list)
    loglik: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    move: list = field(default_factory=list)
    failed: list = field(default_factory=list)

    def append(self, rec: StepRecord):
        self.iteration.append(rec.iteration)
        self.loglik.append(rec.loglik)
        self.accepted.append(rec.accepted)
        self.move.append(rec.move)
        self.failed.append(rec.failed)

    def __len__(self):
        return len(self.iteration)

    def records(self) -> list:
        return [StepRecord(*t) for t in zip(self.iteration, self.loglik, self.accepted, self.move, self.failed)]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,loglik,accepted,move\n")
            for it, ll, acc, mv in zip(self.iteration, self.loglik, self.accepted, self.move):
                fh.write(f"{it},{ll!r},{int(acc)},{mv}\n")


@dataclass
class ChainOutput:
    trace: ChainTrace
    samples: np.ndarray
    sample_iterations: np.ndarray
    final: ChainState
    summary: dict
    n_failures: int
    wall_time: float
    metadata: dict


def _ll_only(loglik):
    return loglik


def _ll_grad(loglik):
    fn = getattr(loglik, "value_and_grad", None)
    if fn is None:
        raise ConfigurationError("pCNL needs a likelihood with value_and_grad")
    return fn


def run_chain(config: SamplerConfig, prior, loglik, initial=None, layout=None, rng=None,
              audit: bool = True) -> ChainOutput:
    """Run the configured kernel for ``config.n_iter`` iterations.

    ``prior`` may be a :class:`PriorLayout` (needed for NodeSwap) or a
    :class:`DiagonalGaussian`.  ``loglik`` is callable; for pCNL it must
    provide ``value_and_grad``.  Every ``thin``-th state is stored.
    """
    g = _as_gaussian(prior)
    layout = layout if layout is not None else (prior if hasattr(prior, "shape") else None)
    if config.kind == PCN_NODESWAP and (layout is None or layout.shape is None):
        raise ConfigurationError("NodeSwap moves need a network prior layout")
    rng = rng if rng is not None else make_rng(config.seed, "chain")
    t0 = time.perf_counter()
    if initial is None:
        initial = g.std * rng.standard_normal(g.dimension) if config.init == "prior" else np.zeros(g.dimension)
    initial = np.asarray(initial, dtype=float).copy()
    if initial.shape != (g.dimension,) or not np.all(np.isfinite(initial)):
        raise ConfigurationError("initial state must be a finite vector matching the prior dimension")

    if config.kind == PCNL:
        lg = _ll_grad(loglik)
        l0, g0 = lg(initial)
        state = ChainState(initial, float(l0), np.asarray(g0, dtype=float), 0)
        eval_fn = lambda p: lg(p)[0]  # noqa: E731
    else:
        state = ChainState(initial, float(loglik(initial)), None, 0)
        eval_fn = loglik
    if not np.isfinite(state.loglik):
        raise ChainAbortedError("log-likelihood is not finite at the initial state")

    trace = ChainTrace()
    samples, sample_its = [], []
    failures = 0
    max_audit = 0.0
    for _ in range(config.n_iter):
        if config.kind == PCNL:
            state, rec = pcnl_step(state, g, lg, config.delta, rng)
        else:
            state, rec = pcn_step(state, g, loglik, config.beta, rng)
        trace.append(rec)
        failures += rec.failed
        if config.kind == PCN_NODESWAP and config.swap_prob > 0 and rng.random() < config.swap_prob:
            state, rec2 = nodeswap_step(state, layout, rng, config.swap_dist)
            trace.append(rec2)
        if failures > config.max_failures:
            raise ChainAbortedError(
                f"{failures} failed likelihood evaluations",
                {"iteration": state.iteration, "failures": failures, "loglik": state.loglik},
            )
        if audit and config.audit_every and state.iteration % config.audit_every == 0:
            fresh = float(eval_fn(state.params))
            gap = abs(fresh - state.loglik)
            max_audit = max(max_audit, gap)
            if gap > 1e-12 * max(1.0, abs(fresh)):
                raise ChainAbortedError("cached log-likelihood drifted from a fresh evaluation",
                                        {"iteration": state.iteration, "cached": state.loglik, "fresh": fresh})
            state.loglik = fresh
        if state.iteration % config.thin == 0:
            samples.append(state.params.copy())
            sample_its.append(state.iteration)
    wall = time.perf_counter() - t0
    summary = acceptance_summary(trace) if len(trace) else {}
    meta = {
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "seed": config.seed,
        "dimension": g.dimension,
        "max_audit_gap": max_audit,
        "failures": failures,
    }
    samples_arr = np.array(samples) if samples else np.empty((0, g.dimension))
    return ChainOutput(trace, samples_arr, np.array(sample_its, dtype=int), state, summary, failures, wall, meta)


def run_chains(configs, prior, loglik_factory, threads: int = 1, layout=None) -> list:
    """Run independent chains, optionally on a thread pool.

    ``loglik_factory(k)`` builds the likelihood for chain ``k`` so no mutable
    evaluator state is shared.  Output order follows ``configs`` regardless
    of scheduling.
    """

    def one(k):
        cfg = configs[k]
        return run_chain(cfg, prior, loglik_factory(k), layout=layout, rng=make_rng(cfg.seed, f"chain-{k}"))

    if threads <= 1:
        return [one(k) for k in range(len(configs))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(len(configs))))


# --------------------------------------------------------------------------
# diagnostics

def lag1_autocorr(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.size < 3:
        return float("nan")
    d = x - x.mean()
    den = float(np.dot(d, d))
    return float(np.dot(d[1:], d[:-1]) / den) if den > 0 else float("nan")


def acceptance_summary(records) -> dict:
    """Acceptance rate per move kind plus log-likelihood trace statistics.

    Accepts a :class:`ChainTrace` or a list of :class:`StepRecord`.
    """
    if isinstance(records, ChainTrace):
        moves, acc, ll = records.move, records.accepted, records.loglik
    else:
        records = list(records)
        moves = [r.move for r in records]
        acc = [r.accepted for r in records]
        ll = [r.loglik for r in records]
    if len(moves) == 0:
        raise InputError("no records to summarize")
    moves = np.asarray(moves)
    acc = np.asarray(acc, dtype=bool)
    ll = np.asarray(ll, dtype=float)
    out = {"rates": {}, "proposed": {}, "accepted": {}}
    for kind in sorted(set(moves.tolist())):
        m = moves == kind
        out["proposed"][kind] = int(m.sum())
        out["accepted"][kind] = int(acc[m].sum())
        out["rates"][kind] = float(acc[m].mean())
    out["loglik_mean"] = float(ll.mean())
    out["loglik_running_mean"] = np.cumsum(ll) / np.arange(1, ll.size + 1)
    out["loglik_lag1"] = lag1_autocorr(ll)
    return out


def batch_means_se(x, n_batches: int = 50) -> float:
    """Monte Carlo standard error of the mean of a correlated series."""
    x = np.asarray(x, dtype=float)
    n = x.size // n_batches
    if n < 1:
        raise InputError("series too short for batch means")
    means = x[: n * n_batches].reshape(n_batches, n).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))
