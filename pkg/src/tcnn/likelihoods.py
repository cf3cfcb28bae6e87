"""Log-likelihoods: noisy action selection, Gaussian regression and the
Darcy head observations.

Noisy action selection
----------------------
An agent in state ``x`` picks ``argmax_a [v(T(x, a)) + eps_a]`` with
``eps ~ N(0, sigma^2 I)``.  Writing ``v_k`` for the value of the k-th
successor and ``b`` for the chosen action,

    p(b | v) = (1/sigma) int phi((t - v_b)/sigma) prod_{j != b} Phi((t - v_j)/sigma) dt
             = (1/sqrt(pi)) int exp(-s^2) prod_{j != b} Phi(c_j + sqrt(2) s) ds,

with ``c_j = (v_b - v_j)/sigma``.  Every such one-dimensional integral is
evaluated with Gauss-Hermite quadrature in the log domain.  By default the
quadrature variable is re-centred at the mode of the (log-concave) integrand
and rescaled to its curvature, which keeps the rule accurate when the chosen
action is very unlikely; ``centering="fixed"`` uses ``t = v_b + sqrt(2) sigma s``
verbatim.

Actions are 0-based throughout the API; files store them 1-based.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .core_math import (
    DEFAULT_QUADRATURE_ORDER,
    LOG_SQRT_2PI,
    QuadratureRule,
    gauss_hermite,
    log_std_normal_cdf,
)
from .errors import ConfigurationError, EvaluationError, InputError
from .neural_net import Saturation, apply_saturation

SQRT2 = math.sqrt(2.0)
HALF_LOG_PI = 0.5 * math.log(math.pi)
_NEWTON_STEPS = 60


def _rule(quad) -> QuadratureRule:
    if quad is None:
        return gauss_hermite(DEFAULT_QUADRATURE_ORDER)
    if isinstance(quad, QuadratureRule):
        return quad
    return gauss_hermite(int(quad))


def _inv_mills(z):
    """phi(z) / Phi(z), stable for very negative z."""
    return np.exp(-0.5 * z * z - LOG_SQRT_2PI - log_std_normal_cdf(z))


def _mode_and_scale(C, a):
    """Mode ``mu`` and curvature scale ``tau`` of
    ``h(s) = -s^2 + sum_j log Phi(C_j + a s)`` for every row of ``C``.

    ``h'`` is decreasing and convex, so Newton iterates started anywhere
    converge monotonically after the first step.
    """
    mu = np.zeros(C.shape[0])
    if C.shape[1] == 0:
        return mu, np.ones_like(mu)
    for _ in range(_NEWTON_STEPS):
        z = C + a * mu[:, None]
        lam = _inv_mills(z)
        g = -2.0 * mu + a * lam.sum(axis=1)
        hp = -2.0 - a * a * np.sum(lam * (z + lam), axis=1)
        step = g / hp
        mu = mu - step
        if np.all(np.abs(step) <= 1e-12 * (1.0 + np.abs(mu))):
            break
    z = C + a * mu[:, None]
    lam = _inv_mills(z)
    hp = -2.0 - a * a * np.sum(lam * (z + lam), axis=1)
    return mu, np.sqrt(2.0 / -hp)


def log_gauss_integral(C, a: float, quad: QuadratureRule, centering: str = "adaptive", with_mean: bool = False):
    """``log[(1/sqrt(pi)) int exp(-s^2) prod_j Phi(C_j + a s) ds]`` per row.

    Parameters
    ----------
    C : (n, m) array
        Offsets; ``m`` may be zero (the integral is then exactly 1).
    a : float
        Slope multiplying the integration variable.
    with_mean : bool
        Also return the mean of ``s`` under the normalized integrand.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    r, lw = quad.nodes, quad.log_weights
    if centering == "adaptive":
        mu, tau = _mode_and_scale(C, a)
    elif centering == "fixed":
        mu, tau = np.zeros(C.shape[0]), np.ones(C.shape[0])
    else:
        raise ConfigurationError(f"unknown centering {centering!r}")
    s = mu[:, None] + tau[:, None] * r[None, :]  # (n, q)
    terms = lw + r * r - s * s + np.log(tau)[:, None]
    if C.shape[1]:
        terms = terms + np.sum(log_std_normal_cdf(C[:, :, None] + a * s[:, None, :]), axis=1)
    logI = logsumexp(terms, axis=1) - HALF_LOG_PI
    if not with_mean:
        return logI
    wts = np.exp(terms - (logI + HALF_LOG_PI)[:, None])
    return logI, np.sum(wts * s, axis=1)


def _check_sigma(sigma):
    if not (np.isfinite(sigma) and sigma > 0):
        raise ConfigurationError(f"sigma must be positive and finite, got {sigma!r}")


def _others(V, best):
    """``(T, M-1)`` values of the non-chosen actions, original order kept."""
    T, M = V.shape
    mask = np.ones((T, M), dtype=bool)
    mask[np.arange(T), best] = False
    return V[mask].reshape(T, M - 1)


def log_action_probs(V, best, sigma: float, quad=None, centering: str = "adaptive") -> np.ndarray:
    """Vectorized ``log p(best_t | V_t)`` over rows of ``V`` (shape ``(T, M)``)."""
    _check_sigma(sigma)
    quad = _rule(quad)
    V = np.atleast_2d(np.asarray(V, dtype=float))
    best = np.atleast_1d(np.asarray(best, dtype=int))
    T, M = V.shape
    if np.any(best < 0) or np.any(best >= M):
        raise InputError(f"chosen action out of range 0..{M - 1}")
    vb = V[np.arange(T), best]
    C = (vb[:, None] - _others(V, best)) / sigma
    return log_gauss_integral(C, SQRT2, quad, centering)


def action_prob(v, best: int, sigma: float, quad=None, centering: str = "adaptive") -> float:
    """Probability that action ``best`` (0-based) maximizes ``v + eps``."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or not np.all(np.isfinite(v)):
        raise InputError("v must be a finite vector")
    return float(np.exp(log_action_probs(v[None, :], [best], sigma, quad, centering)[0]))


def log_action_prob_and_ratio(V, best, sigma: float, quad=None, centering: str = "adaptive"):
    """``log p`` and ``grad_v p / p`` for every row.

    The chosen component uses the derivative of the leading pdf; the others
    use the product-of-Gaussians form, whose integral is centred between
    ``v_b`` and ``v_k`` with width ``sigma / sqrt(2)``.
    """
    _check_sigma(sigma)
    quad = _rule(quad)
    V = np.atleast_2d(np.asarray(V, dtype=float))
    best = np.atleast_1d(np.asarray(best, dtype=int))
    T, M = V.shape
    rows = np.arange(T)
    vb = V[rows, best]
    others = _others(V, best)
    logp, mean_s = log_gauss_integral((vb[:, None] - others) / sigma, SQRT2, quad, centering, with_mean=True)
    ratio = np.empty((T, M))
    ratio[rows, best] = SQRT2 / sigma * mean_s
    if M >= 2:
        # for each non-chosen k: remaining actions j not in {b, k}
        idx = np.arange(M - 1)
        keep = idx[None, :] != idx[:, None]  # (M-1, M-1), row = k
        rest = np.broadcast_to(others[:, None, :], (T, M - 1, M - 1))[:, keep].reshape(T, M - 1, M - 2)
        mid = 0.5 * (vb[:, None] + others)  # (T, M-1)
        Crest = (mid[:, :, None] - rest) / sigma
        logJ = log_gauss_integral(Crest.reshape(T * (M - 1), M - 2), 1.0, quad, centering).reshape(T, M - 1)
        delta = (vb[:, None] - others) / (SQRT2 * sigma)
        log_mag = -0.5 * delta * delta - LOG_SQRT_2PI + logJ - math.log(SQRT2 * sigma) - logp[:, None]
        mask = np.ones((T, M), dtype=bool)
        mask[rows, best] = False
        ratio[mask] = (-np.exp(log_mag)).ravel()
    return logp, ratio


def action_prob_grad(v, best: int, sigma: float, quad=None, form: str = "product",
                     centering: str = "adaptive") -> np.ndarray:
    """Gradient of :func:`action_prob` with respect to ``v``.

    ``form="product"`` uses the product-of-Gaussians identity for the
    non-chosen components; ``form="direct"`` integrates the unsimplified
    ``phi * phi * prod Phi`` integrand against the rule centred at ``v_b``
    (kept as an independent cross-check).
    """
    v = np.asarray(v, dtype=float)
    quad = _rule(quad)
    if form == "product":
        logp, ratio = log_action_prob_and_ratio(v[None, :], [best], sigma, quad, centering)
        return ratio[0] * np.exp(logp[0])
    if form != "direct":
        raise ConfigurationError(f"unknown gradient form {form!r}")
    _check_sigma(sigma)
    M = v.size
    s, w = quad.nodes, quad.weights
    c = (v[best] - v) / sigma
    logPhi = log_std_normal_cdf(c[:, None] + SQRT2 * s[None, :])  # (M, q)
    logPhi[best] = 0.0
    total = logPhi.sum(axis=0)
    grad = np.empty(M)
    grad[best] = SQRT2 / (sigma * math.sqrt(math.pi)) * np.sum(w * s * np.exp(total))
    for k in range(M):
        if k == best:
            continue
        z = c[k] + SQRT2 * s
        integrand = np.exp(-0.5 * z * z - LOG_SQRT_2PI + total - logPhi[k])
        grad[k] = -np.sum(w * integrand) / (sigma * math.sqrt(math.pi))
    return grad


def stabilize_grad(grad, mode: str = "mean") -> np.ndarray:
    """Restore the zero-sum property of a value-gradient vector.

    ``mean`` subtracts the arithmetic mean (exact zero sum); ``sum``
    subtracts the full sum.  Works along the last axis.
    """
    g = np.asarray(grad, dtype=float)
    if mode == "mean":
        return g - g.mean(axis=-1, keepdims=True)
    if mode == "sum":
        return g - g.sum(axis=-1, keepdims=True)
    if mode == "none":
        return g.copy()
    raise ConfigurationError(f"unknown stabilization mode {mode!r}")


# --------------------------------------------------------------------------
# datasets

@dataclass
class ActionDataset:
    """State-action records plus the successor states of every action.

    ``successors[t, k]`` is ``T(states[t], k)``; ``actions`` are 0-based.
    """

    states: np.ndarray
    actions: np.ndarray
    successors: np.ndarray
    action_labels: list = field(default_factory=list)
    env: str | None = None
    box: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.actions = np.asarray(self.actions, dtype=int).ravel()
        self.successors = np.asarray(self.successors, dtype=float)
        T = self.states.shape[0]
        if T == 0:
            raise InputError("action dataset is empty")
        if self.actions.size != T or self.successors.shape[0] != T:
            raise InputError("states, actions and successors disagree in length")
        M = self.successors.shape[1]
        if np.any(self.actions < 0) or np.any(self.actions >= M):
            raise InputError(f"actions must lie in 0..{M - 1}")
        if not np.all(np.isfinite(self.states)):
            raise InputError("non-finite state in dataset")
        if self.box is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in self.box)
            if np.any(self.states < lo - 1e-12) or np.any(self.states > hi + 1e-12):
                raise InputError("state outside the declared state box")
        if not self.action_labels:
            self.action_labels = list(range(1, M + 1))

    @property
    def n_actions(self) -> int:
        return self.successors.shape[1]

    def __len__(self):
        return self.states.shape[0]

    @classmethod
    def from_env(cls, env, states, actions, meta=None) -> "ActionDataset":
        states = np.atleast_2d(np.asarray(states, dtype=float))
        succ = env.successors(states)
        return cls(states, actions, succ, list(env.action_values), env.name, (env.low, env.high), dict(meta or {}))

    def subset(self, idx) -> "ActionDataset":
        idx = np.asarray(idx)
        return ActionDataset(self.states[idx], self.actions[idx], self.successors[idx],
                             list(self.action_labels), self.env, self.box, dict(self.meta))


@dataclass(frozen=True)
class ActionLikelihoodConfig:
    sigma: float = 0.1
    quadrature_order: int = DEFAULT_QUADRATURE_ORDER
    saturation: Saturation = field(default_factory=lambda: Saturation(10.0, False))
    stabilization: str = "mean"
    centering: str = "adaptive"

    def __post_init__(self):
        _check_sigma(self.sigma)
        if self.stabilization not in ("mean", "sum", "none"):
            raise ConfigurationError(f"unknown stabilization mode {self.stabilization!r}")


class ActionLikelihood:
    """``l(theta) = sum_t log p(a_t | s(v_theta(T(x_t, .))))`` with gradient.

    The evaluator is bound once to the ``T * M`` successor states.
    """

    def __init__(self, dataset: ActionDataset, evaluator, config: ActionLikelihoodConfig | None = None):
        self.dataset = dataset
        self.config = config or ActionLikelihoodConfig()
        self.quad = gauss_hermite(self.config.quadrature_order)
        T, M, d = dataset.successors.shape
        self._shape = (T, M)
        self.bound = evaluator.bind(dataset.successors.reshape(T * M, d))
        self.n_evals = 0

    def values(self, params) -> np.ndarray:
        """Raw (unsaturated) successor values, ``(T, M)``."""
        return self.bound.value(params).reshape(self._shape)

    def _finish(self, raw):
        sat, dsat = apply_saturation(self.config.saturation, raw)
        if not np.all(np.isfinite(sat)):
            raise EvaluationError("non-finite value function output")
        return sat, dsat

    def __call__(self, params) -> float:
        self.n_evals += 1
        sat, _ = self._finish(self.values(params))
        lp = log_action_probs(sat, self.dataset.actions, self.config.sigma, self.quad, self.config.centering)
        return float(np.sum(lp))

    def value_and_grad(self, params):
        self.n_evals += 1
        raw, pullback = self.bound.value_and_vjp(params)
        sat, dsat = self._finish(raw.reshape(self._shape))
        lp, ratio = log_action_prob_and_ratio(
            sat, self.dataset.actions, self.config.sigma, self.quad, self.config.centering
        )
        ratio = stabilize_grad(ratio, self.config.stabilization)
        cot = (ratio * dsat).ravel()
        return float(np.sum(lp)), pullback(cot)


def action_loglik(dataset: ActionDataset, evaluator, params, config: ActionLikelihoodConfig | None = None) -> float:
    return ActionLikelihood(dataset, evaluator, config)(params)


def action_loglik_grad(dataset: ActionDataset, evaluator, params, config: ActionLikelihoodConfig | None = None):
    return ActionLikelihood(dataset, evaluator, config).value_and_grad(params)[1]


@dataclass
class RegressionDataset:
    X: np.ndarray
    y: np.ndarray
    noise_std: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if not (np.isfinite(self.noise_std) and self.noise_std > 0):
            raise ConfigurationError("noise std must be positive")
        if self.X.shape[0] != self.y.size:
            raise InputError("locations and observations disagree in length")
        if self.y.size == 0:
            raise InputError("regression dataset is empty")

    def __len__(self):
        return self.y.size


class RegressionLikelihood:
    """``-sum (y - u(x))^2 / (2 s^2)``; the normalizing constant is dropped."""

    def __init__(self, dataset: RegressionDataset, evaluator):
        self.dataset = dataset
        self.bound = evaluator.bind(dataset.X)
        self.n_evals = 0

    def __call__(self, params) -> float:
        self.n_evals += 1
        r = self.dataset.y - self.bound.value(params)
        return -float(np.sum(r * r)) / (2.0 * self.dataset.noise_std**2)

    def value_and_grad(self, params):
        self.n_evals += 1
        u, pullback = self.bound.value_and_vjp(params)
        r = self.dataset.y - u
        s2 = self.dataset.noise_std**2
        return -float(np.sum(r * r)) / (2.0 * s2), pullback(r / s2)


def regression_loglik(dataset: RegressionDataset, evaluator, params) -> float:
    return RegressionLikelihood(dataset, evaluator)(params)


def regression_loglik_grad(dataset: RegressionDataset, evaluator, params) -> np.ndarray:
    return RegressionLikelihood(dataset, evaluator).value_and_grad(params)[1]


@dataclass(frozen=True)
class SolverConfig:
    n: int = 20
    tol: float = 1e-10
    method: str = "pcg"
    maxiter: int | None = None


class DarcyLikelihood:
    """Gaussian likelihood of head observations given the log-permeability.

    ``u`` is evaluated at the solver nodes (through the evaluator, so any
    prior family works), the flow problem is solved and the head is
    bilinearly interpolated at the observation locations.  The previous
    converged head seeds the next iterative solve.
    """

    def __init__(self, observations: RegressionDataset, evaluator, solver: SolverConfig | None = None):
        from . import darcy

        self.observations = observations
        self.solver = solver or SolverConfig()
        self.grid = darcy.Grid2D(self.solver.n)
        if np.any(observations.X < 0) or np.any(observations.X > 1):
            raise InputError("observation locations must lie in [0,1]^2")
        self.bound = evaluator.bind(self.grid.nodes())
        self.interp = darcy.interpolation_matrix(self.grid, observations.X)
        self._last = None
        self.n_evals = 0

    def head(self, params):
        from . import darcy

        n = self.grid.n
        u = self.bound.value(params).reshape(n + 1, n + 1)
        try:
            field_ = darcy.darcy_solve(u, self.grid, self.solver.tol, self.solver.maxiter,
                                       self.solver.method, x0=None)
        except EvaluationError as exc:
            exc.context.setdefault("grid", n)
            exc.context.setdefault("param_norm", float(np.linalg.norm(params)))
            raise
        return field_

    def predict(self, params) -> np.ndarray:
        return self.interp @ self.head(params).values.ravel()

    def __call__(self, params) -> float:
        self.n_evals += 1
        r = self.observations.y - self.predict(params)
        return -float(np.sum(r * r)) / (2.0 * self.observations.noise_std**2)


def darcy_loglik(observations: RegressionDataset, evaluator, params, solver: SolverConfig | None = None) -> float:
    return DarcyLikelihood(observations, evaluator, solver)(params)


# --------------------------------------------------------------------------
# files

def _read_jsonl(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"dataset file not found: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise InputError(f"dataset file is empty: {path}")
    header = json.loads(lines[0])
    records = [json.loads(ln) for ln in lines[1:]]
    if not records:
        raise InputError(f"dataset file has no records: {path}")
    return header, records


def save_action_dataset(dataset: ActionDataset, path) -> None:
    header = {
        "kind": "action",
        "M": dataset.n_actions,
        "env": dataset.env,
        "action_labels": list(dataset.action_labels),
        "box": None if dataset.box is None else [list(map(float, b)) for b in dataset.box],
    }
    header.update(dataset.meta)
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for x, a in zip(dataset.states, dataset.actions):
            fh.write(json.dumps({"x": [float(v) for v in x], "a": int(a) + 1}) + "\n")


def load_action_dataset(path, env=None) -> ActionDataset:
    """Read a dataset written by :func:`save_action_dataset`; successor
    states are recomputed from the named environment."""
    header, records = _read_jsonl(path)
    if header.get("kind") != "action":
        raise InputError("not an action dataset")
    if env is None:
        from .environments import get_env

        env = get_env(header.get("env"))
    states = np.array([r["x"] for r in records], dtype=float)
    actions = np.array([r["a"] for r in records], dtype=int) - 1
    meta = {k: v for k, v in header.items() if k not in ("kind", "M", "env", "action_labels", "box")}
    ds = ActionDataset.from_env(env, states, actions, meta)
    if ds.n_actions != int(header.get("M", ds.n_actions)):
        raise InputError("header action count does not match environment")
    return ds


def save_regression_dataset(dataset: RegressionDataset, path) -> None:
    header = {"kind": "regression", "noise_std": dataset.noise_std}
    header.update(dataset.meta)
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for x, y in zip(dataset.X, dataset.y):
            fh.write(json.dumps({"x": [float(v) for v in x], "y": float(y)}) + "\n")


def load_regression_dataset(path) -> RegressionDataset:
    header, records = _read_jsonl(path)
    if header.get("kind") != "regression":
        raise InputError("not a regression dataset")
    X = np.array([r["x"] for r in records], dtype=float)
    y = np.array([r["y"] for r in records], dtype=float)
    meta = {k: v for k, v in header.items() if k not in ("kind", "noise_std")}
    return RegressionDataset(X, y, float(header["noise_std"]), meta)
