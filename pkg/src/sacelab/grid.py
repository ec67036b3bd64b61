"""Scale bookkeeping, piecewise-linear paths on the node grid, per-cell quadrature."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from .errors import ConfigError, DomainError, InvalidParameterError

DEFAULT_CELL_ORDER = 5  # Gauss-Legendre points per cell for potential integrals


def admissibility_violations(gamma: float, gamma1: float, gamma2: float) -> list[str]:
    """Return the violated exponent inequalities, quoted, in a fixed order."""
    out = []
    if not (0 < gamma < 2 / 3):
        out.append(f"Assume 0<γ<2/3 (got γ={gamma:g})")
    if not (0 < gamma1 < gamma):
        out.append(f"0<γ₁<γ (got γ₁={gamma1:g}, γ={gamma:g})")
    if not (-gamma1 - gamma / 2 + gamma2 > 0):
        out.append(f"−γ₁ − γ/2 + γ₂ > 0 (got {-gamma1 - gamma / 2 + gamma2:.4g})")
    if not (-gamma - gamma1 / 2 + gamma2 > 0):
        out.append(f"−γ − γ₁/2 + γ₂ > 0 (got {-gamma - gamma1 / 2 + gamma2:.4g})")
    if not (gamma2 < 1):
        out.append(f"γ₂ < 1 (got γ₂={gamma2:g})")
    return out


def default_gamma1(gamma: float) -> float:
    return gamma / 3


def default_gamma2(gamma: float, gamma1: float) -> float:
    need = max(gamma1 + gamma / 2, gamma + gamma1 / 2)
    return min(0.5 * (need + 1.0), need + 0.1)


@dataclass(frozen=True)
class ScaleParams:
    """Rescaled setting: interval [-L, L], L = eps^-gamma, 2N cells of width delta = L/N.

    Construction only checks basic domains; ``violations()`` lists the
    admissibility inequalities that fail (config parsing rejects those).
    """

    epsilon: float
    gamma: float
    gamma1: Optional[float] = None
    gamma2: Optional[float] = None
    N: Optional[int] = None

    def __post_init__(self):
        if not (0 < self.epsilon < 1) or not math.isfinite(self.epsilon):
            raise InvalidParameterError(f"epsilon must lie in (0,1), got {self.epsilon}")
        if not (self.gamma >= 0) or not math.isfinite(self.gamma):
            raise InvalidParameterError(f"gamma must be >= 0, got {self.gamma}")
        g1 = default_gamma1(self.gamma) if self.gamma1 is None else float(self.gamma1)
        g2 = default_gamma2(self.gamma, g1) if self.gamma2 is None else float(self.gamma2)
        object.__setattr__(self, "gamma1", g1)
        object.__setattr__(self, "gamma2", g2)
        N = math.ceil(self.epsilon ** (-g2) - 1e-12) if self.N is None else self.N
        if int(N) != N or N < 1:
            raise InvalidParameterError(f"N must be a positive integer, got {N}")
        object.__setattr__(self, "N", int(N))

    @classmethod
    def auto(cls, epsilon, gamma, gamma1=None, gamma2=None) -> "ScaleParams":
        return cls(epsilon, gamma, gamma1, gamma2, None)

    def violations(self) -> list[str]:
        return admissibility_violations(self.gamma, self.gamma1, self.gamma2)

    def require_admissible(self) -> None:
        v = self.violations()
        if v:
            raise ConfigError(v)

    @property
    def L(self) -> float:
        return self.epsilon ** (-self.gamma)

    @property
    def delta(self) -> float:
        return self.L / self.N

    @property
    def n_free(self) -> int:
        return 2 * self.N - 1

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1) * self.delta

    @property
    def core_radius(self) -> float:
        """eps^-gamma1, the half-width on which the cutoff profile equals m."""
        return self.epsilon ** (-self.gamma1)

    def with_N(self, N: int) -> "ScaleParams":
        return ScaleParams(self.epsilon, self.gamma, self.gamma1, self.gamma2, N)

    def to_dict(self) -> dict:
        return dict(epsilon=self.epsilon, gamma=self.gamma, gamma1=self.gamma1,
                    gamma2=self.gamma2, N=self.N)


@dataclass
class PLPath:
    """Piecewise-linear function on the 2N+1 nodes of ``params``."""

    params: ScaleParams
    values: np.ndarray
    boundary_kind: str = "fixed"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = 2 * self.params.N + 1
        if v.shape != (n,):
            raise InvalidParameterError(f"expected {n} node values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidParameterError("path values must be finite")
        if self.boundary_kind == "fixed":
            if v[0] != -1.0 or v[-1] != 1.0:
                raise DomainError(f"fixed boundary path needs values -1, +1 at the ends; got {v[0]}, {v[-1]}")
        elif self.boundary_kind == "zero":
            if v[0] != 0.0 or v[-1] != 0.0:
                raise DomainError(f"zero boundary path needs zero end values; got {v[0]}, {v[-1]}")
        else:
            raise InvalidParameterError(f"unknown boundary_kind {self.boundary_kind!r}")
        self.values = v

    @classmethod
    def from_interior(cls, params: ScaleParams, interior, boundary_kind: str = "fixed") -> "PLPath":
        ends = (-1.0, 1.0) if boundary_kind == "fixed" else (0.0, 0.0)
        return cls(params, np.concatenate([[ends[0]], np.asarray(interior, float), [ends[1]]]),
                   boundary_kind)

    @classmethod
    def from_function(cls, params: ScaleParams, f: Callable, boundary_kind: str = "fixed") -> "PLPath":
        vals = np.asarray(f(params.nodes), dtype=float).copy()
        if boundary_kind == "fixed":
            vals[0], vals[-1] = -1.0, 1.0
        else:
            vals[0] = vals[-1] = 0.0
        return cls(params, vals, boundary_kind)

    @property
    def nodes(self) -> np.ndarray:
        return self.params.nodes

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:-1]

    def __call__(self, s):
        """Evaluate with trivial extension outside [-L, L] (+-1 or 0)."""
        s = np.asarray(s, dtype=float)
        lo, hi = (self.values[0], self.values[-1])
        return np.interp(s, self.nodes, self.values, left=lo, right=hi)

    def __add__(self, other: "PLPath") -> "PLPath":
        kinds = {self.boundary_kind, other.boundary_kind}
        kind = "fixed" if "fixed" in kinds else "zero"
        if kinds == {"fixed"}:
            raise DomainError("adding two fixed-boundary paths leaves the affine space")
        return PLPath(self.params, self.values + other.values, kind)

    def scaled(self, t: float) -> "PLPath":
        if self.boundary_kind != "zero":
            raise DomainError("only zero-boundary paths can be scaled")
        return PLPath(self.params, t * self.values, "zero")


# --------------------------------------------------------------------------- #
# quadrature and finite element forms


def gl_unit(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def cell_potential_integrals(values: np.ndarray, F, h: float, order: int = DEFAULT_CELL_ORDER) -> np.ndarray:
    """Per-cell integrals of F along the linear interpolant; shape (..., ncells)."""
    t, w = gl_unit(order)
    a = values[..., :-1, None]
    b = values[..., 1:, None]
    return h * np.sum(w * F(a + t * (b - a)), axis=-1)


def potential_integral(values: np.ndarray, F, h: float, order: int = DEFAULT_CELL_ORDER) -> np.ndarray:
    return np.sum(cell_potential_integrals(values, F, h, order), axis=-1)


def kinetic(values: np.ndarray, h: float) -> np.ndarray:
    """(1/2) * integral of u'^2 for a piecewise-linear path."""
    d = np.diff(values, axis=-1)
    return np.sum(d * d, axis=-1) / (2.0 * h)


def l2_sq_pl(values: np.ndarray, h: float) -> np.ndarray:
    """Exact integral of u^2 for a piecewise-linear path."""
    a, b = values[..., :-1], values[..., 1:]
    return h / 3.0 * np.sum(a * a + a * b + b * b, axis=-1)


def stiffness_banded(n: int, h: float) -> np.ndarray:
    """Upper banded (2, n) storage of (1/h) tridiag(-1, 2, -1)."""
    ab = np.zeros((2, n))
    ab[0, 1:] = -1.0 / h
    ab[1, :] = 2.0 / h
    return ab


def mass_banded(n: int, h: float) -> np.ndarray:
    """Upper banded (2, n) storage of (h/6) tridiag(1, 4, 1)."""
    ab = np.zeros((2, n))
    ab[0, 1:] = h / 6.0
    ab[1, :] = 4.0 * h / 6.0
    return ab


def stiffness_matrix(n: int, h: float) -> sparse.csr_matrix:
    return sparse.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr() / h


def mass_matrix(n: int, h: float) -> sparse.csr_matrix:
    return sparse.diags([np.ones(n - 1), 4 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]).tocsr() * (h / 6.0)


def h1_sq_zero_pl(values: np.ndarray, h: float) -> np.ndarray:
    """||v||^2_{H^1} = ||v||^2 + ||v'||^2 for a piecewise-linear path."""
    return l2_sq_pl(values, h) + 2.0 * kinetic(values, h)


def hat_inner_products(g: Callable, params: ScaleParams, order: int = 8) -> np.ndarray:
    """<g, e_k> for the interior hat functions e_k by per-cell Gauss-Legendre."""
    t, w = gl_unit(order)
    s = params.nodes
    h = params.delta
    left = s[:-1, None] + t * h  # (ncells, q)
    gv = g(left)
    up = h * np.sum(w * gv * t, axis=-1)          # rising half on each cell, belongs to node k+1
    down = h * np.sum(w * gv * (1 - t), axis=-1)  # falling half, belongs to node k
    out = up[:-1] + down[1:]
    return out
