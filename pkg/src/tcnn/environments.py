"""Deterministic discrete-action environments, the analytic mountain-car
expert, dataset generation and value-function driven rollouts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .likelihoods import ActionDataset


class DiscreteEnv:
    """Interface: a deterministic map ``T(x, a)`` on a state box with a finite
    action set.  Subclasses implement :meth:`step_batch`."""

    name = "env"
    action_values: tuple = ()
    low: tuple = ()
    high: tuple = ()
    max_steps = 200

    @property
    def n_actions(self) -> int:
        return len(self.action_values)

    @property
    def dim(self) -> int:
        return len(self.low)

    def step_batch(self, states, action_idx) -> np.ndarray:
        raise NotImplementedError

    def step(self, state, action_idx: int) -> np.ndarray:
        return self.step_batch(np.asarray(state, dtype=float)[None, :], np.array([action_idx]))[0]

    def successors(self, states) -> np.ndarray:
        """``(n, M, d)`` successor of every state under every action."""
        S = np.atleast_2d(np.asarray(states, dtype=float))
        n, M = S.shape[0], self.n_actions
        rep = np.repeat(S, M, axis=0)
        acts = np.tile(np.arange(M), n)
        return self.step_batch(rep, acts).reshape(n, M, -1)

    def goal(self, states) -> np.ndarray:
        raise NotImplementedError

    def initial_states(self, rng, n: int) -> np.ndarray:
        raise NotImplementedError

    def action_index(self, value) -> int:
        try:
            return self.action_values.index(value)
        except ValueError:
            raise ConfigurationError(f"action {value!r} not in {self.action_values}") from None


class MountainCar(DiscreteEnv):
    """Classic mountain car: position in [-1.2, 0.6], velocity in
    [-0.07, 0.07], actions {-1, 0, +1}, goal at position >= 0.5."""

    name = "mountain_car"
    action_values = (-1, 0, 1)
    low = (-1.2, -0.07)
    high = (0.6, 0.07)
    force = 0.001
    gravity = 0.0025
    goal_position = 0.5

    def step_batch(self, states, action_idx) -> np.ndarray:
        S = np.atleast_2d(np.asarray(states, dtype=float))
        a = np.asarray(self.action_values, dtype=float)[np.asarray(action_idx, dtype=int)]
        pos, vel = S[:, 0], S[:, 1]
        vel = vel + self.force * a - self.gravity * np.cos(3.0 * pos)
        vel = np.clip(vel, self.low[1], self.high[1])
        pos = np.clip(pos + vel, self.low[0], self.high[0])
        vel = np.where((pos <= self.low[0]) & (vel < 0), 0.0, vel)
        return np.column_stack([pos, vel])

    def transition(self, state, action_value: int) -> np.ndarray:
        """One step with the action given by its value in {-1, 0, 1}."""
        return self.step(state, self.action_index(action_value))

    def goal(self, states) -> np.ndarray:
        return np.atleast_2d(states)[:, 0] >= self.goal_position

    def initial_states(self, rng, n: int) -> np.ndarray:
        """Position uniform on [-0.6, -0.4], zero velocity."""
        return np.column_stack([rng.uniform(-0.6, -0.4, n), np.zeros(n)])


_ENVS = {"mountain_car": MountainCar}


def get_env(name) -> DiscreteEnv:
    if name not in _ENVS:
        raise ConfigurationError(f"unknown environment {name!r}")
    return _ENVS[name]()


def mc_expert_action(state) -> int:
    """Analytic expert for mountain car; returns the action value -1 or +1.

    +1 inside the band ``min(-0.09 (x1+0.25)^2 + 0.03, 0.3 (x1+0.9)^4 - 0.008)
    <= x2 <= -0.07 (x1+0.38)^2 + 0.07``, else -1.  Action 0 is never emitted.
    """
    x1, x2 = float(state[0]), float(state[1])
    lower = min(-0.09 * (x1 + 0.25) ** 2 + 0.03, 0.3 * (x1 + 0.9) ** 4 - 0.008)
    upper = -0.07 * (x1 + 0.38) ** 2 + 0.07
    return -1 + 2 * int(lower <= x2 <= upper)


def mc_expert_actions(states) -> np.ndarray:
    S = np.atleast_2d(np.asarray(states, dtype=float))
    x1, x2 = S[:, 0], S[:, 1]
    lower = np.minimum(-0.09 * (x1 + 0.25) ** 2 + 0.03, 0.3 * (x1 + 0.9) ** 4 - 0.008)
    upper = -0.07 * (x1 + 0.38) ** 2 + 0.07
    return np.where((lower <= x2) & (x2 <= upper), 1, -1)


@dataclass(frozen=True)
class DataProtocol:
    """Raw trajectory collection followed by thinning.

    Episodes restart from a fresh initial state once the goal is reached or
    after ``max_episode_steps`` steps.  The dataset is
    ``raw[stride-1::stride][:count]``.
    """

    n_raw: int = 250
    stride: int = 5
    count: int = 50
    max_episode_steps: int = 200

    def __post_init__(self):
        if min(self.n_raw, self.stride, self.count, self.max_episode_steps) < 1:
            raise ConfigurationError("protocol sizes must be positive")
        if self.count > self.n_raw // self.stride:
            raise ConfigurationError("count exceeds the number of thinned raw samples")


def generate_action_dataset(env: DiscreteEnv, policy: Callable, protocol: DataProtocol, rng,
                            seed: int | None = None) -> ActionDataset:
    """Roll the policy (state -> action value) and thin the raw pairs."""
    states, actions = [], []
    x = env.initial_states(rng, 1)[0]
    t = 0
    while len(states) < protocol.n_raw:
        a = policy(x)
        try:
            idx = env.action_index(a)
        except ConfigurationError:
            raise ConfigurationError(f"policy returned {a!r}, not an action of {env.name}") from None
        states.append(x.copy())
        actions.append(idx)
        x = env.step(x, idx)
        t += 1
        if env.goal(x)[0] or t >= protocol.max_episode_steps:
            x = env.initial_states(rng, 1)[0]
            t = 0
    sel = slice(protocol.stride - 1, None, protocol.stride)
    S = np.array(states)[sel][: protocol.count]
    A = np.array(actions)[sel][: protocol.count]
    meta = {
        "n_raw": protocol.n_raw,
        "stride": protocol.stride,
        "seed": seed,
    }
    return ActionDataset.from_env(env, S, A, meta)


# --------------------------------------------------------------------------
# rollouts

def posterior_value_fn(evaluator, param_rows) -> Callable:
    """Pointwise mean of the value functions of all parameter rows.

    For KL layouts (linear in the coefficients) the coefficients are
    averaged first, which is exact.
    """
    P = np.atleast_2d(np.asarray(param_rows, dtype=float))
    if evaluator.layout.is_kl:
        mean = P.mean(axis=0)
        return lambda X: evaluator(mean, X)
    return lambda X: evaluator.evaluate_many(P, X).mean(axis=0)


def value_fn_from(evaluator, params) -> Callable:
    return lambda X: evaluator(params, X)


@dataclass
class RolloutResult:
    success: np.ndarray
    steps: np.ndarray
    trajectories: list = field(default_factory=list)

    @property
    def failures(self) -> int:
        return int(np.sum(~self.success))


def rollout_many(env: DiscreteEnv, value_fn: Callable, starts, sigma: float = 0.0, max_steps: int = 200,
                 rng=None, mode: str = "greedy", record: bool = False) -> RolloutResult:
    """Run one episode per start state, all in lock step.

    At each step the action is ``argmax_a [v(T(x, a)) + eps_a]`` with
    ``eps ~ N(0, sigma^2)`` in ``sampled`` mode and ``eps = 0`` in
    ``greedy`` mode; exact ties go to the lowest action index.  ``steps``
    counts transitions until the goal (``max_steps`` on failure).
    """
    if mode not in ("greedy", "sampled"):
        raise ConfigurationError(f"unknown rollout mode {mode!r}")
    if mode == "sampled" and rng is None:
        raise ConfigurationError("sampled mode needs an rng")
    X = np.atleast_2d(np.asarray(starts, dtype=float)).copy()
    E, M = X.shape[0], env.n_actions
    done = env.goal(X).copy()
    steps = np.zeros(E, dtype=int)
    trajs = [[(0, *X[e], np.nan)] for e in range(E)] if record else []
    for t in range(max_steps):
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        succ = env.successors(X[active])
        vals = np.asarray(value_fn(succ.reshape(-1, X.shape[1])), dtype=float).reshape(active.size, M)
        if mode == "sampled" and sigma > 0:
            vals = vals + sigma * rng.standard_normal(vals.shape)
        act = np.argmax(vals, axis=1)
        X[active] = succ[np.arange(active.size), act]
        steps[active] += 1
        if record:
            for k, e in enumerate(active):
                trajs[e][-1] = trajs[e][-1][:3] + (env.action_values[act[k]],)
                trajs[e].append((t + 1, *X[e], np.nan))
        done[active] = env.goal(X[active])
    return RolloutResult(done, np.where(done, steps, max_steps), trajs)


def rollout_with_value(env: DiscreteEnv, evaluator, params, sigma: float = 0.0, max_steps: int = 200,
                       rng=None, mode: str = "greedy", start=None) -> RolloutResult:
    """Single-episode rollout of the policy induced by ``v_params``."""
    if start is None:
        if rng is None:
            raise ConfigurationError("need a start state or an rng")
        start = env.initial_states(rng, 1)
    return rollout_many(env, value_fn_from(evaluator, params), start, sigma, max_steps, rng, mode, record=True)


def rollout_policy(env: DiscreteEnv, policy: Callable, starts, max_steps: int = 200) -> RolloutResult:
    """Episodes driven by an explicit state -> action-value policy."""
    X = np.atleast_2d(np.asarray(starts, dtype=float)).copy()
    E = X.shape[0]
    done = env.goal(X).copy()
    steps = np.zeros(E, dtype=int)
    for _ in range(max_steps):
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        idx = np.array([env.action_index(policy(x)) for x in X[active]])
        X[active] = env.step_batch(X[active], idx)
        steps[active] += 1
        done[active] = env.goal(X[active])
    return RolloutResult(done, np.where(done, steps, max_steps))


def normalize_value_vector(v, optimal: int) -> np.ndarray:
    """Shift so that the entry of the optimal action is exactly zero."""
    v = np.asarray(v, dtype=float)
    if not 0 <= optimal < v.shape[-1]:
        raise ConfigurationError("optimal index out of range")
    return v - v[..., optimal : optimal + 1]


def expert_policy_for(env: DiscreteEnv) -> Callable:
    if isinstance(env, MountainCar):
        return mc_expert_action
    raise ConfigurationError(f"no analytic expert for {env.name}")


def test_points(env: DiscreteEnv, rng, n: int = 5) -> np.ndarray:
    """Fixed evaluation states drawn uniformly from the state box."""
    lo, hi = np.asarray(env.low), np.asarray(env.high)
    return lo + (hi - lo) * rng.uniform(size=(n, len(lo)))


test_points.__test__ = False  # not a pytest test despite the name
