"""Steady Darcy flow ``-div(exp(u) grad p) = 0`` on the unit square.

Boundary conditions: ``p = x1`` on ``x2 = 0``, ``p = 1 - x1`` on ``x2 = 1``
and zero normal flux on ``x1 in {0, 1}``.

Discretization: vertex-centred finite volumes on an ``(n+1) x (n+1)`` node
grid.  Each node owns the part of the dual cell ``[x - h/2, x + h/2]^2`` that
lies in the square, so nodes on the Neumann sides own half cells and their
vertical couplings carry half weight.  Face permeabilities are harmonic means
of the nodal values of ``exp(u)``.  Arrays are indexed ``[i1, i2]`` with
``x1 = i1 h`` and ``x2 = i2 h``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded

from .errors import ConfigurationError, EvaluationError, InputError, NonConvergenceError


@dataclass(frozen=True)
class Grid2D:
    n: int

    def __post_init__(self):
        if int(self.n) < 4:
            raise ConfigurationError(f"grid needs at least 4 cells per axis, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def coords(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    def nodes(self) -> np.ndarray:
        """``((n+1)^2, 2)`` node coordinates, ``i1`` outer and ``i2`` inner."""
        x1, x2 = np.meshgrid(self.coords, self.coords, indexing="ij")
        return np.column_stack([x1.ravel(), x2.ravel()])


@dataclass
class HeadField:
    grid: Grid2D
    values: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    def at(self, x) -> np.ndarray:
        return interpolate_head(self, x)


def face_permeabilities(u_field: np.ndarray):
    """Harmonic means of ``exp(u)`` on horizontal and vertical grid edges.

    Returns ``(kx, ky)`` with ``kx[i, j]`` on the edge (i,j)-(i+1,j) and
    ``ky[i, j]`` on the edge (i,j)-(i,j+1).  Each value is rescaled by the
    largest nodal permeability, which leaves the head unchanged.
    """
    u = np.asarray(u_field, dtype=float)
    k = np.exp(u - u.max())
    kx = 2.0 * k[1:, :] * k[:-1, :] / (k[1:, :] + k[:-1, :])
    ky = 2.0 * k[:, 1:] * k[:, :-1] / (k[:, 1:] + k[:, :-1])
    return kx, ky


def _vertical_weights(n):
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    return w


def _system(kx, ky, n):
    """Diagonal, couplings and Dirichlet right-hand side for the unknown rows
    ``i2 = 1..n-1`` (all ``i1``)."""
    x = np.linspace(0.0, 1.0, n + 1)
    wy = _vertical_weights(n)[:, None] * ky  # (n+1, n)
    diag = np.zeros((n + 1, n - 1))
    diag[:-1, :] += kx[:, 1:-1]
    diag[1:, :] += kx[:, 1:-1]
    diag += wy[:, :-1] + wy[:, 1:]
    cx = kx[:, 1:-1]  # coupling (i,j)-(i+1,j)
    cy = wy[:, 1:-1]  # coupling (i,j)-(i,j+1) among unknown rows
    rhs = np.zeros((n + 1, n - 1))
    rhs[:, 0] += wy[:, 0] * x
    rhs[:, -1] += wy[:, -1] * (1.0 - x)
    return diag, cx, cy, rhs


def _matvec(p, diag, cx, cy):
    out = diag * p
    dx = cx * p[1:, :]
    out[:-1, :] -= dx
    out[1:, :] -= cx * p[:-1, :]
    out[:, :-1] -= cy * p[:, 1:]
    out[:, 1:] -= cy * p[:, :-1]
    return out


def _pcg(diag, cx, cy, rhs, tol, maxiter, x0=None):
    """Jacobi-preconditioned conjugate gradients on the stencil operator."""
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    r = rhs - _matvec(x, diag, cx, cy)
    bnorm = np.linalg.norm(rhs)
    target = tol * (bnorm if bnorm > 0 else 1.0)
    inv_d = 1.0 / diag
    z = inv_d * r
    d = z.copy()
    rz = float(np.vdot(r, z))
    res = np.linalg.norm(r)
    it = 0
    while res > target:
        if it >= maxiter:
            raise NonConvergenceError(
                "conjugate gradients hit the iteration cap", iterations=it, residual=res, target=target
            )
        Ad = _matvec(d, diag, cx, cy)
        step = rz / float(np.vdot(d, Ad))
        x += step * d
        r -= step * Ad
        res = np.linalg.norm(r)
        z = inv_d * r
        rz_new = float(np.vdot(r, z))
        d = z + (rz_new / rz) * d
        rz = rz_new
        it += 1
    return x, it, res


def _banded_solve(diag, cx, cy, rhs):
    """Direct banded Cholesky solve; unknowns ordered ``i1`` inner."""
    n1, m = diag.shape  # n1 = n+1 nodes along x1, m = n-1 unknown rows
    N = n1 * m
    bw = n1
    ab = np.zeros((bw + 1, N))
    # flat index k = j * n1 + i
    ab[bw] = diag.T.ravel()
    sup1 = np.zeros((m, n1))
    sup1[:, 1:] = -cx.T
    ab[bw - 1] = sup1.ravel()
    supn = np.zeros((m, n1))
    supn[1:, :] = -cy.T
    ab[0] = supn.ravel()
    sol = solveh_banded(ab, rhs.T.ravel(), lower=False, check_finite=False)
    return sol.reshape(m, n1).T


def darcy_solve(u_field, grid: Grid2D, tol: float = 1e-10, maxiter: int | None = None,
                method: str = "pcg", x0: np.ndarray | None = None, check: bool = True) -> HeadField:
    """Solve for the hydraulic head given nodal log-permeability ``u_field``
    of shape ``(n+1, n+1)``.

    ``method`` is ``pcg`` (Jacobi-preconditioned CG, stopped at relative
    residual ``tol``) or ``banded`` (direct banded Cholesky).
    """
    n = grid.n
    u = np.asarray(u_field, dtype=float)
    if u.shape != (n + 1, n + 1):
        raise ConfigurationError(f"u_field must have shape {(n + 1, n + 1)}, got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise EvaluationError("non-finite log-permeability", grid=n)
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    kx, ky = face_permeabilities(u)
    diag, cx, cy, rhs = _system(kx, ky, n)
    if method == "pcg":
        guess = None if x0 is None else np.asarray(x0, dtype=float)[:, 1:-1]
        inner, its, res = _pcg(diag, cx, cy, rhs, tol, maxiter or 20 * (n + 1) ** 2, guess)
    elif method == "banded":
        inner = _banded_solve(diag, cx, cy, rhs)
        its = 0
        res = float(np.linalg.norm(rhs - _matvec(inner, diag, cx, cy)))
    else:
        raise ConfigurationError(f"unknown solver method {method!r}")
    x = grid.coords
    p = np.empty((n + 1, n + 1))
    p[:, 0] = x
    p[:, -1] = 1.0 - x
    p[:, 1:-1] = inner
    if check:
        slack = 1e-8
        if p.min() < -slack or p.max() > 1.0 + slack:
            raise EvaluationError("discrete maximum principle violated", grid=n, pmin=p.min(), pmax=p.max())
    return HeadField(grid, p, its, float(res))


def interpolate_head(field: HeadField, x) -> np.ndarray | float:
    """Bilinear interpolation of the head at one point or an ``(m, 2)`` array."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != 2:
        raise InputError("points must be two-dimensional")
    if np.any(~np.isfinite(pts)) or np.any(pts < 0.0) or np.any(pts > 1.0):
        raise InputError("interpolation point outside [0,1]^2")
    n = field.grid.n
    s = pts * n
    i = np.minimum(np.floor(s).astype(int), n - 1)
    f = s - i
    P = field.values
    i1, i2 = i[:, 0], i[:, 1]
    f1, f2 = f[:, 0], f[:, 1]
    out = (
        (1 - f1) * (1 - f2) * P[i1, i2]
        + f1 * (1 - f2) * P[i1 + 1, i2]
        + (1 - f1) * f2 * P[i1, i2 + 1]
        + f1 * f2 * P[i1 + 1, i2 + 1]
    )
    return float(out[0]) if single else out


def interpolation_matrix(grid: Grid2D, x) -> np.ndarray:
    """Dense ``(m, (n+1)^2)`` matrix ``B`` with ``B @ p.ravel()`` equal to the
    bilinear interpolant at the rows of ``x``."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if np.any(pts < 0.0) or np.any(pts > 1.0):
        raise InputError("interpolation point outside [0,1]^2")
    n = grid.n
    s = pts * n
    i = np.minimum(np.floor(s).astype(int), n - 1)
    f = s - i
    B = np.zeros((pts.shape[0], (n + 1) ** 2))
    rows = np.arange(pts.shape[0])
    for di, dj, w in ((0, 0, (1 - f[:, 0]) * (1 - f[:, 1])), (1, 0, f[:, 0] * (1 - f[:, 1])),
                      (0, 1, (1 - f[:, 0]) * f[:, 1]), (1, 1, f[:, 0] * f[:, 1])):
        np.add.at(B, (rows, (i[:, 0] + di) * (n + 1) + i[:, 1] + dj), w)
    return B


def cut_fluxes(field: HeadField, u_field) -> np.ndarray:
    """Total flux through each horizontal cut ``x2 = (j + 1/2) h``, j = 0..n-1.

    Constant in j for a converged solution (discrete conservation).
    """
    _, ky = face_permeabilities(u_field)
    w = _vertical_weights(field.grid.n)[:, None]
    dp = np.diff(field.values, axis=1)
    return np.sum(w * ky * dp, axis=0)


def make_true_permeability(layout=None) -> np.ndarray:
    """Coefficients ``lambda_i sin((i1 - 1/2)^2 + (i2 - 1/2)^2)`` for
    ``i1, i2 <= 10`` and zero otherwise, on the cosine KL layout."""
    from .priors import KL_COSINE_2D, build_kl_cosine_2d

    layout = layout or build_kl_cosine_2d((25, 25))
    if layout.family != KL_COSINE_2D:
        raise ConfigurationError("true permeability is defined on the cosine KL layout")
    i1 = layout.basis["i1"].astype(float)
    i2 = layout.basis["i2"].astype(float)
    coef = layout.std * np.sin((i1 - 0.5) ** 2 + (i2 - 0.5) ** 2)
    coef[(i1 > 10) | (i2 > 10)] = 0.0
    return coef


def field_from_function(fn, grid: Grid2D) -> np.ndarray:
    """Sample a vectorized ``fn(X) -> values`` at the grid nodes."""
    return np.asarray(fn(grid.nodes()), dtype=float).reshape(grid.n + 1, grid.n + 1)
