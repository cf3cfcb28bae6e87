"""Prior families on a flat coordinate vector and the function evaluators
they induce.

Every prior is a centred Gaussian with diagonal covariance, described by a
:class:`PriorLayout` carrying the per-coordinate variances together with the
structural information needed to turn a coordinate vector into a function:

* ``kl_fourier_2d``  tensor Fourier basis on [0,1]^2 (four phase products per
  frequency pair), eigenvalues ``(k1^2 + k2^2)^(-alpha/2)``
* ``kl_cosine_2d``   ``2 cos(pi (i1+1/2) x1) cos(pi (i2+1/2) x2)`` with
  eigenvalues ``(pi^2 ((i1+1/2)^2 + (i2+1/2)^2))^(-1.1)``
* ``kl_anova``       d univariate Fourier expansions plus d(d-1)/2 bivariate
  ones
* ``tcnn``           trace-class network prior, variances ``sigma^2 / i^alpha``
  (first layer weights and biases) and ``sigma^2 / (i j)^alpha``
* ``bnn``            the same network with layer-constant variances
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from . import neural_net as nn
from .core_math import DiagonalGaussian
from .errors import ConfigurationError

KL_FOURIER_2D = "kl_fourier_2d"
KL_COSINE_2D = "kl_cosine_2d"
KL_ANOVA = "kl_anova"
TCNN = "tcnn"
BNN = "bnn"
FAMILIES = (KL_FOURIER_2D, KL_COSINE_2D, KL_ANOVA, TCNN, BNN)
KL_FAMILIES = (KL_FOURIER_2D, KL_COSINE_2D, KL_ANOVA)
NN_FAMILIES = (TCNN, BNN)

COSINE_EXPONENT = 1.1

# phase codes used by the Fourier enumeration; ONE marks the missing second
# factor of a univariate term
SIN, COS, ONE = 0, 1, 2


@dataclass(frozen=True)
class PriorLayout:
    """Variances plus structural metadata of one prior.

    ``basis`` holds, for KL families, integer arrays describing each
    coordinate's basis function (axes, frequencies and phases).  ``shape``
    holds the network architecture for the NN families.
    """

    family: str
    variances: np.ndarray
    d: int
    alpha: float | None = None
    meta: dict = field(default_factory=dict)
    basis: dict | None = None
    shape: nn.NetworkShape | None = None

    def __post_init__(self):
        var = np.ascontiguousarray(self.variances, dtype=float)
        var.setflags(write=False)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "_gaussian", DiagonalGaussian(var))

    @property
    def n_params(self) -> int:
        return self.variances.size

    @property
    def std(self) -> np.ndarray:
        return self._gaussian.std

    @property
    def trace(self) -> float:
        return self._gaussian.trace

    @property
    def gaussian(self) -> DiagonalGaussian:
        return self._gaussian

    @property
    def is_kl(self) -> bool:
        return self.family in KL_FAMILIES


def _check_alpha_trace_class(alpha):
    if alpha is None or not np.isfinite(alpha) or alpha <= 1.0:
        raise ConfigurationError(f"alpha must exceed 1 for a trace-class KL prior, got {alpha!r}")


def _pair(k, name):
    if np.isscalar(k):
        k = (k, k)
    k = tuple(int(v) for v in k)
    if len(k) != 2 or min(k) < 1:
        raise ConfigurationError(f"{name} must be a positive integer or a pair of them, got {k!r}")
    return k


def _fourier_pair_terms(k1max, k2max, alpha):
    """Enumeration of one bivariate Fourier block: (k1, k2) ascending with k2
    inner, four phase products (ss, cs, sc, cc) per pair."""
    k1, k2 = np.meshgrid(np.arange(1, k1max + 1), np.arange(1, k2max + 1), indexing="ij")
    k1 = np.repeat(k1.ravel(), 4)
    k2 = np.repeat(k2.ravel(), 4)
    ph1 = np.tile([SIN, COS, SIN, COS], k1max * k2max)
    ph2 = np.tile([SIN, SIN, COS, COS], k1max * k2max)
    var = np.sqrt(k1.astype(float) ** 2 + k2.astype(float) ** 2) ** (-alpha)
    return k1, k2, ph1, ph2, var


def build_kl_fourier_2d(kmax, alpha: float) -> PriorLayout:
    """Tensor Fourier prior on [0,1]^2 with ``4 * k1max * k2max`` coordinates."""
    _check_alpha_trace_class(alpha)
    k1max, k2max = _pair(kmax, "kmax")
    k1, k2, ph1, ph2, var = _fourier_pair_terms(k1max, k2max, alpha)
    n = var.size
    basis = dict(
        ax1=np.zeros(n, dtype=int), ax2=np.ones(n, dtype=int), k1=k1, k2=k2, ph1=ph1, ph2=ph2
    )
    return PriorLayout(KL_FOURIER_2D, var, 2, float(alpha), {"kmax": [k1max, k2max]}, basis)


def build_kl_anova(d: int, k1d: int, k2d, alpha: float) -> PriorLayout:
    """Second-order ANOVA prior on [0,1]^d.

    Coordinates: for each axis (ascending) the ``2 * k1d`` univariate terms
    (k ascending, sin then cos), then for each axis pair ``i < j``
    (lexicographic) one bivariate Fourier block as in
    :func:`build_kl_fourier_2d`.  Total ``d * 2 k1d + d(d-1)/2 * 4 k2d[0] k2d[1]``.
    """
    _check_alpha_trace_class(alpha)
    d = int(d)
    if d < 2:
        raise ConfigurationError("ANOVA prior needs d >= 2")
    k1d = int(k1d)
    if k1d < 1:
        raise ConfigurationError("k1d must be >= 1")
    k2a, k2b = _pair(k2d, "k2d")
    cols = {key: [] for key in ("ax1", "ax2", "k1", "k2", "ph1", "ph2")}
    var = []
    ks = np.repeat(np.arange(1, k1d + 1), 2)
    for a in range(d):
        cols["ax1"].append(np.full(ks.size, a))
        cols["ax2"].append(np.full(ks.size, a))
        cols["k1"].append(ks)
        cols["k2"].append(np.ones(ks.size, dtype=int))
        cols["ph1"].append(np.tile([SIN, COS], k1d))
        cols["ph2"].append(np.full(ks.size, ONE))
        var.append(ks.astype(float) ** (-alpha))
    k1, k2, ph1, ph2, pv = _fourier_pair_terms(k2a, k2b, alpha)
    for a in range(d):
        for b in range(a + 1, d):
            cols["ax1"].append(np.full(k1.size, a))
            cols["ax2"].append(np.full(k1.size, b))
            cols["k1"].append(k1)
            cols["k2"].append(k2)
            cols["ph1"].append(ph1)
            cols["ph2"].append(ph2)
            var.append(pv)
    basis = {key: np.concatenate(v).astype(int) for key, v in cols.items()}
    meta = {"k1d": k1d, "k2d": [k2a, k2b], "n_pairs": d * (d - 1) // 2}
    return PriorLayout(KL_ANOVA, np.concatenate(var), d, float(alpha), meta, basis)


def anova_count(d: int, k1d: int, k2d) -> int:
    k2a, k2b = _pair(k2d, "k2d")
    return d * 2 * k1d + d * (d - 1) // 2 * 4 * k2a * k2b


def cosine_eigenvalue(i1, i2):
    i1 = np.asarray(i1, dtype=float)
    i2 = np.asarray(i2, dtype=float)
    return (math.pi**2 * ((i1 + 0.5) ** 2 + (i2 + 0.5) ** 2)) ** (-COSINE_EXPONENT)


def build_kl_cosine_2d(imax=(25, 25)) -> PriorLayout:
    """Cosine prior on [0,1]^2, indices ``1 <= i1 <= imax[0]``, ``1 <= i2 <= imax[1]``
    (``i2`` inner)."""
    a, b = _pair(imax, "imax")
    i1, i2 = np.meshgrid(np.arange(1, a + 1), np.arange(1, b + 1), indexing="ij")
    i1, i2 = i1.ravel(), i2.ravel()
    return PriorLayout(
        KL_COSINE_2D, cosine_eigenvalue(i1, i2), 2, COSINE_EXPONENT, {"imax": [a, b]}, {"i1": i1, "i2": i2}
    )


def _layer_sigmas(values, n_layers, name):
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.size == 1:
        arr = np.full(n_layers, float(arr[0]))
    if arr.size != n_layers:
        raise ConfigurationError(f"{name} needs 1 or {n_layers} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ConfigurationError(f"all {name} must be strictly positive")
    return arr


def _network_variances(shape: nn.NetworkShape, alpha, s2w, s2b):
    var = np.empty(shape.n_params)
    for l in range(1, shape.n_layers + 1):
        n_out, n_in = shape.sizes[l], shape.sizes[l - 1]
        i = np.arange(1, n_out + 1, dtype=float)
        j = np.arange(1, n_in + 1, dtype=float)
        var[shape.bias_slice(l)] = s2b[l - 1] / i**alpha
        if l == 1:
            w = np.repeat(s2w[0] / i**alpha, n_in)
        else:
            w = (s2w[l - 1] / np.outer(i, j) ** alpha).ravel()
        var[shape.weight_slice(l)] = w
    return var


def build_tcnn(widths, d: int, alpha: float = 1.5, sigmas_w=2.0, sigmas_b=2.0, activation="tanh") -> PriorLayout:
    """Trace-class network prior.

    ``sigmas_w`` / ``sigmas_b`` are per-layer *variances* (one value per
    affine layer 1..n+1, or a scalar broadcast to all).  ``alpha = 0`` gives
    layer-constant variances.
    """
    if alpha is None or alpha < 0:
        raise ConfigurationError("alpha must be >= 0")
    shape = nn.NetworkShape(d, tuple(widths), nn.get_activation(activation))
    s2w = _layer_sigmas(sigmas_w, shape.n_layers, "sigmas_w")
    s2b = _layer_sigmas(sigmas_b, shape.n_layers, "sigmas_b")
    var = _network_variances(shape, float(alpha), s2w, s2b)
    meta = {"widths": list(shape.widths), "sigmas_w": s2w.tolist(), "sigmas_b": s2b.tolist()}
    return PriorLayout(TCNN, var, shape.d, float(alpha), meta, None, shape)


def bnn_layer_variances(widths, d: int, scaling: str = "fan_in", numerator: float = 10.0 / 3.0):
    """Layer variances ``numerator / N`` for the standard network prior.

    ``fan_in`` divides by the width feeding the layer (``N^(l-1)``, with
    ``N^(0) = d``); ``literal`` divides by the layer's own width ``N^(l)``
    (``N^(n+1) = 1``).
    """
    sizes = [int(d)] + [int(w) for w in widths] + [1]
    if scaling == "fan_in":
        return np.array([numerator / sizes[l - 1] for l in range(1, len(sizes))])
    if scaling == "literal":
        return np.array([numerator / sizes[l] for l in range(1, len(sizes))])
    raise ConfigurationError(f"unknown BNN scaling {scaling!r}")


def build_bnn(widths, d: int, variance: float | None = None, scaling: str = "fan_in",
              numerator: float = 10.0 / 3.0, activation="tanh") -> PriorLayout:
    """Standard (exchangeable) network prior, alpha = 0.

    With ``variance`` given every weight and bias gets that variance;
    otherwise the width-dependent scaling of :func:`bnn_layer_variances` is
    used for both weights and biases.
    """
    if variance is not None:
        s2 = float(variance)
        layout = build_tcnn(widths, d, 0.0, s2, s2, activation)
        scaling_used = "constant"
    else:
        s2 = bnn_layer_variances(widths, d, scaling, numerator)
        layout = build_tcnn(widths, d, 0.0, s2, s2, activation)
        scaling_used = scaling
    meta = dict(layout.meta, scaling=scaling_used)
    return PriorLayout(BNN, layout.variances, layout.d, 0.0, meta, None, layout.shape)


def prior_sample(layout: PriorLayout, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Independent N(0, lambda_i^2) draws; ``size`` rows when given."""
    if size is None:
        return layout.std * rng.standard_normal(layout.n_params)
    return layout.std * rng.standard_normal((int(size), layout.n_params))


# --------------------------------------------------------------------------
# input maps

@dataclass(frozen=True)
class Augmentation:
    """Input map applied before evaluation.

    kind ``none``: identity.  ``box``: affine rescale of the box
    ``[lo, hi]`` onto the unit cube.  ``groundwater``: ``(x1, x2) ->
    (x1, x2, sin x1, sin x2)``.
    """

    kind: str = "none"
    lo: tuple | None = None
    hi: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("none", "box", "groundwater"):
            raise ConfigurationError(f"unknown augmentation {self.kind!r}")
        if self.kind == "box":
            if self.lo is None or self.hi is None or len(self.lo) != len(self.hi):
                raise ConfigurationError("box augmentation needs lo and hi of equal length")
            lo = tuple(float(v) for v in self.lo)
            hi = tuple(float(v) for v in self.hi)
            if any(h <= l for l, h in zip(lo, hi)):
                raise ConfigurationError("box augmentation needs hi > lo")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)

    def out_dim(self, in_dim: int) -> int:
        return 2 * in_dim if self.kind == "groundwater" else in_dim

    def in_dim(self) -> int | None:
        if self.kind == "box":
            return len(self.lo)
        if self.kind == "groundwater":
            return 2
        return None

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "none":
            return X
        if self.kind == "box":
            lo = np.asarray(self.lo)
            return (X - lo) / (np.asarray(self.hi) - lo)
        return np.concatenate([X, np.sin(X)], axis=-1)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "box":
            out["lo"] = list(self.lo)
            out["hi"] = list(self.hi)
        return out

    @classmethod
    def from_dict(cls, data) -> "Augmentation":
        if data is None:
            return cls()
        if isinstance(data, str):
            return cls(data)
        return cls(data.get("kind", "none"), data.get("lo"), data.get("hi"))


# --------------------------------------------------------------------------
# evaluators

def _fourier_tables(X, kmax):
    """(3, d, B, kmax) table: sin, cos and ones at frequencies 1..kmax."""
    k = np.arange(1, kmax + 1)
    arg = 2.0 * np.pi * X.T[:, :, None] * k  # (d, B, K)
    return np.stack([np.sin(arg), np.cos(arg), np.ones_like(arg)])


def kl_design_matrix(layout: PriorLayout, X) -> np.ndarray:
    """``(B, P)`` matrix of basis values, so that ``u(X) = Phi @ xi``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    b = layout.basis
    if layout.family == KL_COSINE_2D:
        imax = max(layout.meta["imax"])
        i = np.arange(1, imax + 1)
        C = np.cos(np.pi * (i + 0.5) * X[:, :, None])  # (B, 2, I)
        return 2.0 * C[:, 0, b["i1"] - 1] * C[:, 1, b["i2"] - 1]
    kmax = int(max(b["k1"].max(), b["k2"].max()))
    T = _fourier_tables(X, kmax)
    first = T[b["ph1"], b["ax1"], :, b["k1"] - 1]  # (P, B)
    second = T[b["ph2"], b["ax2"], :, b["k2"] - 1]
    return (first * second).T


class BoundEvaluator:
    """Evaluator restricted to a fixed set of inputs.

    For KL families the design matrix is computed once; for networks the
    augmented inputs are cached and each call does one forward pass.
    """

    def __init__(self, evaluator: "FunctionEvaluator", X):
        self.evaluator = evaluator
        self.layout = evaluator.layout
        Z = evaluator.augment(X)
        self.inputs = Z
        self.design = kl_design_matrix(self.layout, Z) if self.layout.is_kl else None

    @property
    def n_points(self) -> int:
        return self.inputs.shape[0]

    def value(self, params) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if self.design is not None:
            return self.design @ params
        return nn.forward_batch(self.layout.shape, params, self.inputs)

    def value_and_vjp(self, params):
        """Return ``(v, pullback)`` with ``pullback(c) = J^T c``."""
        params = np.asarray(params, dtype=float)
        if self.design is not None:
            Phi = self.design
            return Phi @ params, lambda c: np.asarray(c, dtype=float) @ Phi
        shape = self.layout.shape
        v, cache = nn.forward_batch(shape, params, self.inputs, return_cache=True)
        return v, lambda c: nn.vjp(shape, cache, c)

    def jacobian(self, params) -> np.ndarray:
        if self.design is not None:
            return self.design.copy()
        return nn.param_jacobian(self.layout.shape, params, self.inputs)


class FunctionEvaluator:
    """Map ``(params, X) -> u(X)`` for a prior layout, after an optional
    input augmentation."""

    def __init__(self, layout: PriorLayout, augmentation: Augmentation | None = None):
        self.layout = layout
        self.augmentation = augmentation or Augmentation()
        in_dim = self.augmentation.in_dim()
        out = self.augmentation.out_dim(in_dim if in_dim is not None else layout.d)
        if out != layout.d:
            raise ConfigurationError(
                f"augmentation {self.augmentation.kind!r} produces {out} inputs, layout expects {layout.d}"
            )
        self.input_dim = in_dim if in_dim is not None else layout.d

    def augment(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[-1] != self.input_dim:
            raise ConfigurationError(f"inputs must have dimension {self.input_dim}, got {X.shape[-1]}")
        return self.augmentation(X)

    def bind(self, X) -> BoundEvaluator:
        return BoundEvaluator(self, X)

    def __call__(self, params, X) -> np.ndarray:
        return self.evaluate_many(np.asarray(params, dtype=float)[None, :], X)[0]

    def evaluate_many(self, param_rows, X, chunk_entries: int = 2_000_000) -> np.ndarray:
        """``(S, B)`` values for S parameter vectors on shared inputs.

        KL design matrices are built in row chunks so that large grids do
        not materialize a ``B x P`` matrix at once.
        """
        P = np.atleast_2d(np.asarray(param_rows, dtype=float))
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if self.layout.is_kl:
            step = max(1, chunk_entries // self.layout.n_params)
            parts = [P @ self.bind(X[s:s + step]).design.T for s in range(0, X.shape[0], step)]
            return np.concatenate(parts, axis=1)
        bound = self.bind(X)
        return np.stack([bound.value(p) for p in P])

    def jacobian(self, params, X) -> np.ndarray:
        return self.bind(X).jacobian(params)


def make_evaluator(layout: PriorLayout, augmentation=None) -> FunctionEvaluator:
    if augmentation is not None and not isinstance(augmentation, Augmentation):
        augmentation = Augmentation.from_dict(augmentation)
    return FunctionEvaluator(layout, augmentation)


# --------------------------------------------------------------------------
# moment bounds for the network prior

def tcnn_moment_bounds(layout: PriorLayout, x=None) -> list:
    """Recursive upper bounds on ``E[f_i^(l)(x)^2]`` for every layer.

    Returns one array per affine layer with entry ``sigma_l^2 / i^alpha``,
    where ``sigma_1^2 = s_b1 + s_w1 * |x|^2`` (``d`` in place of ``|x|^2``
    when ``x`` is None) and ``sigma_l^2 = s_bl + s_wl sigma_{l-1}^2
    sum_{j <= N^(l-1)} j^(-2 alpha)``.
    """
    shape = layout.shape
    if shape is None:
        raise ConfigurationError("moment bounds need a network layout")
    a = layout.alpha
    s2w = np.asarray(layout.meta["sigmas_w"])
    s2b = np.asarray(layout.meta["sigmas_b"])
    xx = float(shape.d) if x is None else float(np.sum(np.asarray(x, dtype=float) ** 2))
    sig = s2b[0] + s2w[0] * xx
    out = []
    for l in range(1, shape.n_layers + 1):
        if l > 1:
            zs = np.sum(np.arange(1, shape.sizes[l - 1] + 1, dtype=float) ** (-2 * a))
            sig = s2b[l - 1] + s2w[l - 1] * sig * zs
        i = np.arange(1, shape.sizes[l] + 1, dtype=float)
        out.append(sig / i**a)
    return out


def tcnn_increment_bounds(layout: PriorLayout) -> list:
    """Constants ``c_l / i^alpha`` with ``E[(f_i^(l)(x) - f_i^(l)(y))^2] <=
    c_l |x - y|^2 / i^alpha``; ``c_1 = s_w1`` and ``c_l = s_wl c_{l-1}
    sum_{j <= N^(l-1)} j^(-2 alpha)``."""
    shape = layout.shape
    if shape is None:
        raise ConfigurationError("increment bounds need a network layout")
    a = layout.alpha
    s2w = np.asarray(layout.meta["sigmas_w"])
    c = s2w[0]
    out = []
    for l in range(1, shape.n_layers + 1):
        if l > 1:
            zs = np.sum(np.arange(1, shape.sizes[l - 1] + 1, dtype=float) ** (-2 * a))
            c = s2w[l - 1] * c * zs
        i = np.arange(1, shape.sizes[l] + 1, dtype=float)
        out.append(c / i**a)
    return out


def layer_outputs(layout: PriorLayout, params, X) -> list:
    """Pre-activations ``f^(l)(X)`` of every layer, ``(B, N^(l))`` each."""
    _, cache = nn.forward_batch(layout.shape, params, X, return_cache=True)
    return cache.pre


# --------------------------------------------------------------------------
# declarative description

@dataclass
class PriorSpec:
    """Serializable description of a prior plus its input map."""

    family: str
    alpha: float | None = None
    widths: list | None = None
    d: int | None = None
    kmax: list | None = None
    imax: list | None = None
    k1d: int | None = None
    sigmas_w: Any = None
    sigmas_b: Any = None
    variance: float | None = None
    scaling: str | None = None
    activation: str = "tanh"
    augmentation: dict | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown prior family {self.family!r}; expected one of {FAMILIES}")

    def build(self) -> PriorLayout:
        f = self.family
        if f == KL_FOURIER_2D:
            return build_kl_fourier_2d(self.kmax, self.alpha)
        if f == KL_COSINE_2D:
            return build_kl_cosine_2d(self.imax if self.imax is not None else (25, 25))
        if f == KL_ANOVA:
            return build_kl_anova(self.d, self.k1d, self.kmax, self.alpha)
        if f == TCNN:
            alpha = 1.5 if self.alpha is None else self.alpha
            sw = 2.0 if self.sigmas_w is None else self.sigmas_w
            sb = 2.0 if self.sigmas_b is None else self.sigmas_b
            return build_tcnn(self.widths, self.d, alpha, sw, sb, self.activation)
        return build_bnn(self.widths, self.d, self.variance, self.scaling or "fan_in", activation=self.activation)

    def evaluator(self, layout: PriorLayout | None = None) -> FunctionEvaluator:
        return make_evaluator(layout or self.build(), Augmentation.from_dict(self.augmentation))

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "PriorSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigurationError(f"unknown prior fields: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "PriorSpec":
        return cls.from_dict(json.loads(text))
