"""Fully connected feed-forward value network with a flat parameter vector.

Flat layout: layers 1..n+1 in order; within a layer the biases come first
(node index ascending) followed by the weight matrix in row-major order
(receiving node i outer, sending node j inner).  Layer l maps
``N^(l-1) -> N^(l)`` with ``N^(0) = d`` and ``N^(n+1) = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class Activation:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]


def _tanh_deriv(x):
    t = np.tanh(x)
    return 1.0 - t * t


TANH = Activation("tanh", np.tanh, _tanh_deriv)
# only for tests: makes the network affine in its inputs
IDENTITY = Activation("identity", lambda x: np.asarray(x, dtype=float), lambda x: np.ones_like(x, dtype=float))

_BUILTIN = {"tanh": TANH, "identity": IDENTITY}


def check_activation(act: Activation, lo: float = -20.0, hi: float = 20.0, n: int = 4001) -> None:
    """Numerically verify zeta(0) = 0 and 1-Lipschitz continuity on a grid.

    Raises ConfigurationError when either condition fails.
    """
    grid = np.linspace(lo, hi, n)
    vals = np.asarray(act.fn(grid), dtype=float)
    zero = float(np.asarray(act.fn(np.zeros(1)))[0])
    if abs(zero) > 1e-12:
        raise ConfigurationError(f"activation {act.name!r} must vanish at 0, got {zero}")
    slopes = np.abs(np.diff(vals)) / np.diff(grid)
    if np.any(slopes > 1.0 + 1e-9) or np.any(np.abs(vals) > np.abs(grid) + 1e-12):
        raise ConfigurationError(f"activation {act.name!r} is not 1-Lipschitz")


def custom_activation(name: str, fn, deriv) -> Activation:
    act = Activation(name, fn, deriv)
    check_activation(act)
    return act


def get_activation(name_or_act) -> Activation:
    if isinstance(name_or_act, Activation):
        return name_or_act
    try:
        return _BUILTIN[name_or_act]
    except KeyError:
        raise ConfigurationError(f"unknown activation {name_or_act!r}") from None


@dataclass(frozen=True)
class NetworkShape:
    """Input dimension ``d``, hidden widths and activation of the network."""

    d: int
    widths: tuple
    activation: Activation = TANH
    sizes: tuple = field(init=False, repr=False)
    offsets: tuple = field(init=False, repr=False)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if int(self.d) < 1:
            raise ConfigurationError("input dimension must be >= 1")
        if len(widths) == 0 or min(widths) < 1:
            raise ConfigurationError("need at least one hidden layer and all widths >= 1")
        act = get_activation(self.activation)
        if act not in (TANH, IDENTITY):
            check_activation(act)
        sizes = (int(self.d),) + widths + (1,)
        offsets = [0]
        for l in range(1, len(sizes)):
            offsets.append(offsets[-1] + sizes[l] * (1 + sizes[l - 1]))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activation", act)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "offsets", tuple(offsets))

    @property
    def n_layers(self) -> int:
        """Number of affine layers, n + 1."""
        return len(self.sizes) - 1

    @property
    def n_params(self) -> int:
        return self.offsets[-1]

    def bias_slice(self, l: int) -> slice:
        """Flat slice of the biases of layer ``l`` (1-based)."""
        start = self.offsets[l - 1]
        return slice(start, start + self.sizes[l])

    def weight_slice(self, l: int) -> slice:
        start = self.offsets[l - 1] + self.sizes[l]
        return slice(start, self.offsets[l])

    def bias_index(self, l: int, i: int) -> int:
        """Flat index of bias b_i^(l); ``l`` and ``i`` are 1-based."""
        return self.offsets[l - 1] + (i - 1)

    def weight_index(self, l: int, i: int, j: int) -> int:
        """Flat index of weight W_ij^(l); all indices 1-based."""
        return self.offsets[l - 1] + self.sizes[l] + (i - 1) * self.sizes[l - 1] + (j - 1)


def unpack(shape: NetworkShape, params) -> list:
    """Split a flat vector into ``[(b1, W1), ..., (b_{n+1}, W_{n+1})]`` views."""
    params = np.asarray(params, dtype=float)
    if params.shape != (shape.n_params,):
        raise ConfigurationError(
            f"parameter vector has shape {params.shape}, network expects ({shape.n_params},)"
        )
    out = []
    for l in range(1, shape.n_layers + 1):
        b = params[shape.bias_slice(l)]
        W = params[shape.weight_slice(l)].reshape(shape.sizes[l], shape.sizes[l - 1])
        out.append((b, W))
    return out


def pack(shape: NetworkShape, layers: Sequence) -> np.ndarray:
    parts = []
    for b, W in layers:
        parts.append(np.asarray(b, dtype=float).ravel())
        parts.append(np.asarray(W, dtype=float).ravel())
    flat = np.concatenate(parts)
    if flat.size != shape.n_params:
        raise ConfigurationError("layer list does not match network shape")
    return flat


@dataclass
class ForwardCache:
    """Per-layer inputs ``a[l-1]`` (post-activation of the previous layer,
    ``a[0] = X``) and pre-activations ``f[l]`` for one batch."""

    inputs: list
    pre: list
    layers: list


def _as_batch(shape: NetworkShape, xs) -> np.ndarray:
    X = np.asarray(xs, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != shape.d:
        raise ConfigurationError(f"inputs must have trailing dimension {shape.d}, got shape {X.shape}")
    return X


def forward_batch(shape: NetworkShape, params, xs, return_cache: bool = False):
    """Evaluate v at every row of ``xs``.

    Returns the output vector, and the activation cache when
    ``return_cache`` is set (consumed by :func:`vjp` and
    :func:`param_jacobian`).
    """
    X = _as_batch(shape, xs)
    layers = unpack(shape, params)
    zeta = shape.activation.fn
    a = X
    inputs, pre = [], []
    for k, (b, W) in enumerate(layers):
        inputs.append(a)
        f = a @ W.T + b
        pre.append(f)
        if k < len(layers) - 1:
            a = zeta(f)
    v = pre[-1][:, 0]
    if return_cache:
        return v, ForwardCache(inputs, pre, layers)
    return v


def forward(shape: NetworkShape, params, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (shape.d,):
        raise ConfigurationError(f"input must have shape ({shape.d},), got {x.shape}")
    return float(forward_batch(shape, params, x[None, :])[0])


def vjp(shape: NetworkShape, cache: ForwardCache, cotangent) -> np.ndarray:
    """Vector-Jacobian product ``sum_b cotangent[b] * d v(x_b) / d theta``.

    One backward pass over the cached forward batch.
    """
    c = np.asarray(cotangent, dtype=float).reshape(-1, 1)
    dzeta = shape.activation.deriv
    grad = np.empty(shape.n_params)
    delta = c
    for l in range(shape.n_layers, 0, -1):
        b, W = cache.layers[l - 1]
        grad[shape.bias_slice(l)] = delta.sum(axis=0)
        grad[shape.weight_slice(l)] = (delta.T @ cache.inputs[l - 1]).ravel()
        if l > 1:
            delta = (delta @ W) * dzeta(cache.pre[l - 2])
    return grad


def param_jacobian(shape: NetworkShape, params, xs, cache: ForwardCache | None = None) -> np.ndarray:
    """Full ``(B, P)`` Jacobian of v at each input row with respect to the
    flat parameters, by reverse accumulation through the cached forward pass."""
    if cache is None:
        _, cache = forward_batch(shape, params, xs, return_cache=True)
    dzeta = shape.activation.deriv
    B = cache.inputs[0].shape[0]
    J = np.empty((B, shape.n_params))
    delta = np.ones((B, 1))
    for l in range(shape.n_layers, 0, -1):
        b, W = cache.layers[l - 1]
        J[:, shape.bias_slice(l)] = delta
        J[:, shape.weight_slice(l)] = (delta[:, :, None] * cache.inputs[l - 1][:, None, :]).reshape(B, -1)
        if l > 1:
            delta = (delta @ W) * dzeta(cache.pre[l - 2])
    return J


def evaluate_many(shape: NetworkShape, param_rows, xs) -> np.ndarray:
    """Evaluate several parameter vectors (rows) on the same inputs; ``(S, B)``."""
    P = np.atleast_2d(np.asarray(param_rows, dtype=float))
    X = _as_batch(shape, xs)
    return np.stack([forward_batch(shape, p, X) for p in P])


def swap_nodes(shape: NetworkShape, params, layer: int, i: int, j: int | None = None) -> np.ndarray:
    """Relabel hidden nodes ``i`` and ``j`` (default ``i + 1``) of hidden layer
    ``layer`` (1-based): swaps their incoming weight rows, biases and outgoing
    weight columns.  The network output is unchanged."""
    if not 1 <= layer <= len(shape.widths):
        raise ConfigurationError(f"layer must be a hidden layer in 1..{len(shape.widths)}")
    j = i + 1 if j is None else j
    width = shape.sizes[layer]
    if not (1 <= i <= width and 1 <= j <= width):
        raise ConfigurationError(f"node indices must lie in 1..{width}")
    perm = swap_permutation(shape, layer, i, j)
    return np.asarray(params, dtype=float)[perm]


def swap_permutation(shape: NetworkShape, layer: int, i: int, j: int) -> np.ndarray:
    """Index permutation ``perm`` such that ``theta[perm]`` is the swapped vector.

    Also valid for permuting gradients, since relabelling is linear.
    """
    perm = np.arange(shape.n_params)

    def exchange(a, b):
        perm[a], perm[b] = perm[b], perm[a]

    if i == j:
        return perm
    exchange(shape.bias_index(layer, i), shape.bias_index(layer, j))
    for k in range(1, shape.sizes[layer - 1] + 1):
        exchange(shape.weight_index(layer, i, k), shape.weight_index(layer, j, k))
    for r in range(1, shape.sizes[layer + 1] + 1):
        exchange(shape.weight_index(layer + 1, r, i), shape.weight_index(layer + 1, r, j))
    return perm


def lipschitz_bound(shape: NetworkShape, params) -> float:
    """Upper bound on the input-space Lipschitz constant of v: product over
    layers of the sum of weight-row Euclidean norms (valid for 1-Lipschitz
    activations)."""
    L = 1.0
    for _, W in unpack(shape, params):
        L *= float(np.sum(np.linalg.norm(W, axis=1)))
    return L


@dataclass(frozen=True)
class Saturation:
    """Bounded squashing ``s(v) = c tanh(v / c)`` applied inside the likelihood."""

    scale: float = 10.0
    enabled: bool = True

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigurationError("saturation scale must be positive")


def apply_saturation(sat: Saturation, v):
    """Return ``(s(v), s'(v))``; identity with unit derivative when disabled."""
    v = np.asarray(v, dtype=float)
    if not sat.enabled:
        return v.copy(), np.ones_like(v)
    t = np.tanh(v / sat.scale)
    return sat.scale * t, 1.0 - t * t
