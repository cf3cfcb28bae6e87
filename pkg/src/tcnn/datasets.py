"""Synthetic data generators and the datasets shipped with the package.

Every generator is a pure function of its seed, so the shipped files can be
regenerated byte for byte with ``tcnn gen-data``.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from . import darcy
from .core_math import make_rng
from .environments import DataProtocol, expert_policy_for, generate_action_dataset, get_env
from .errors import ConfigurationError, InputError
from .likelihoods import (
    RegressionDataset,
    load_action_dataset,
    load_regression_dataset,
    save_action_dataset,
    save_regression_dataset,
)
from .priors import build_kl_cosine_2d, make_evaluator

SHIPPED = {
    "mountain_car_50": "mountain_car_50.jsonl",
    "darcy_33": "darcy_33.jsonl",
    "regression_400": "regression_400.jsonl",
}


def shipped_path(name: str) -> Path:
    if name not in SHIPPED:
        raise InputError(f"no shipped dataset called {name!r}; known: {sorted(SHIPPED)}")
    return Path(str(resources.files("tcnn") / "data" / SHIPPED[name]))


def load_shipped(name: str):
    path = shipped_path(name)
    if name.startswith("mountain_car"):
        return load_action_dataset(path)
    return load_regression_dataset(path)


def true_log_permeability():
    """The synthetic log-permeability as a vectorized function of ``X``."""
    layout = build_kl_cosine_2d((25, 25))
    coef = darcy.make_true_permeability(layout)
    ev = make_evaluator(layout)
    return lambda X: ev(coef, X)


def mountain_car_dataset(seed: int = 0, protocol: DataProtocol | None = None, env_name: str = "mountain_car"):
    env = get_env(env_name)
    protocol = protocol or DataProtocol()
    return generate_action_dataset(env, expert_policy_for(env), protocol, make_rng(seed, "data"), seed=seed)


def darcy_dataset(seed: int = 0, n_obs: int = 33, noise_std: float = 0.01, truth_n: int = 40,
                  margin: float = 0.1) -> RegressionDataset:
    """Noisy head observations of the synthetic aquifer.

    Locations are uniform on ``[margin, 1 - margin]^2``; the head is solved
    on a ``truth_n`` grid (finer than the inference grid) and bilinearly
    interpolated.
    """
    if not 0 <= margin < 0.5:
        raise ConfigurationError("margin must lie in [0, 0.5)")
    rng = make_rng(seed, "darcy-obs")
    X = rng.uniform(margin, 1.0 - margin, size=(n_obs, 2))
    g = darcy.Grid2D(truth_n)
    head = darcy.darcy_solve(darcy.field_from_function(true_log_permeability(), g), g, method="banded")
    y = darcy.interpolate_head(head, X) + noise_std * rng.standard_normal(n_obs)
    meta = {"seed": seed, "truth_grid": truth_n, "margin": margin, "target": "head"}
    return RegressionDataset(X, y, noise_std, meta)


def regression_dataset(seed: int = 0, n_side: int = 20, noise_std: float = 0.01) -> RegressionDataset:
    """Direct noisy observations of the log-permeability on an
    ``n_side x n_side`` grid of cell centres."""
    rng = make_rng(seed, "regression-obs")
    c = (np.arange(n_side) + 0.5) / n_side
    X = np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1).reshape(-1, 2)
    y = true_log_permeability()(X) + noise_std * rng.standard_normal(len(X))
    meta = {"seed": seed, "n_side": n_side, "target": "log_permeability"}
    return RegressionDataset(X, y, noise_std, meta)


def write_shipped(out_dir, seed: int = 0) -> list:
    """Regenerate every shipped dataset into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    p = out_dir / SHIPPED["mountain_car_50"]
    save_action_dataset(mountain_car_dataset(seed), p)
    paths.append(p)
    p = out_dir / SHIPPED["darcy_33"]
    save_regression_dataset(darcy_dataset(seed), p)
    paths.append(p)
    p = out_dir / SHIPPED["regression_400"]
    save_regression_dataset(regression_dataset(seed), p)
    paths.append(p)
    return paths
