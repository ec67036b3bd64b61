"""Ginzburg-Landau energy, Fermi coordinates and distances to the minimizer curve M.

Paths live on [-L, L] and are extended by +-1 (or 0) outside, so every
whole-line integral splits into per-cell Gauss-Legendre sums plus tail terms
that are exact functionals of the profile table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DomainError, NearCausticError, NoInterfaceError, NumericError
from .grid import (DEFAULT_CELL_ORDER, PLPath, ScaleParams, gl_unit, h1_sq_zero_pl, kinetic,
                   l2_sq_pl, potential_integral)
from .instanton import InstantonProfile
from .potential import g_value, surface_tension

_Q_ORDER = 8       # Gauss-Legendre points per cell for integrals against the profile
_SCAN_HALF = 3.0   # half-width of the xi scan around an interface
_SCAN_STEP = 0.5


# --------------------------------------------------------------------------- #
# energy


def energy_values(values: np.ndarray, h: float, spec, c_star: float,
                  order: int = DEFAULT_CELL_ORDER) -> np.ndarray:
    """H for arrays of node values with +-1 ends (batched over leading axes)."""
    return kinetic(values, h) + potential_integral(values, spec.F, h, order) - c_star


def energy(u: PLPath, spec, order: int = DEFAULT_CELL_ORDER) -> float:
    """Whole-line Ginzburg-Landau energy H(u) of a path extended by +-1."""
    if u.boundary_kind != "fixed":
        raise DomainError("energy is defined only for paths with +-1 boundary data")
    return float(energy_values(u.values, u.params.delta, spec, surface_tension(spec), order))


def completing_squares_gap(u: PLPath, spec, order: int = DEFAULT_CELL_ORDER) -> float:
    """H(u) + C_* - [G(u(+inf)) - G(u(-inf))], nonnegative for every path."""
    H = energy(u, spec, order)
    return H + surface_tension(spec) - (g_value(spec, u.values[-1]) - g_value(spec, u.values[0]))


# --------------------------------------------------------------------------- #
# batched whole-line inner products against the translated profile


class _CellQuad:
    """Quadrature points of every cell of a grid, reused across calls."""

    def __init__(self, params: ScaleParams, order: int = _Q_ORDER):
        t, w = gl_unit(order)
        self.params = params
        self.h = params.delta
        self.s = params.nodes[:-1, None] + t * self.h          # (ncells, q)
        self.t = t
        self.w = w * self.h

    def pl(self, values):
        """Values of the PL path at quadrature points, shape (..., ncells, q)."""
        a = values[..., :-1, None]
        b = values[..., 1:, None]
        return a + self.t * (b - a)

    def slopes(self, values):
        return (np.diff(values, axis=-1) / self.h)[..., None]

    def integrate(self, f):
        return np.sum(f * self.w, axis=(-2, -1))


def _xi_b(xi):
    return np.asarray(xi, dtype=float)[..., None, None]


def fermi_J(values, xi, p: InstantonProfile, cq: _CellQuad):
    """J(xi) = ||u - m_xi||^2_{L2(R)} only (batched)."""
    L = cq.params.L
    xi = np.asarray(xi, dtype=float)
    r = cq.pl(values) - p.m(cq.s - _xi_b(xi))
    return cq.integrate(r * r) + p.int_gap_sq(L - xi) + p.int_gap_sq(L + xi)


def fermi_objective(values, xi, p: InstantonProfile, cq: _CellQuad):
    """J(xi) = ||u - m_xi||^2_{L2(R)} and its first two xi-derivatives (batched)."""
    L = cq.params.L
    xi = np.asarray(xi, dtype=float)
    tq = cq.s - _xi_b(xi)
    m, dm, d2m = p.pieces(tq)
    r = cq.pl(values) - m
    J = cq.integrate(r * r) + p.int_gap_sq(L - xi) + p.int_gap_sq(L + xi)
    # right tail: (1 - m(L - xi))^2 / 2 ; left tail: -(1 + m(-L - xi))^2 / 2
    a, b = L - xi, -L - xi
    ma, dma, _ = p.pieces(a)
    mb, dmb, _ = p.pieces(b)
    ra, lb = 1.0 - ma, -1.0 - mb
    G = 2.0 * (cq.integrate(r * dm) + 0.5 * ra * ra - 0.5 * lb * lb)
    # <r, m''> tails: right  -r(a) m'(a) + int_a^inf m'^2 ; left  -(1 + m(b)) m'(b) + int_{-b}^inf m'^2
    tail2 = (-ra * dma + p.int_dm_sq(a)) + (-(1.0 + mb) * dmb + p.int_dm_sq(-b))
    rm2 = cq.integrate(r * d2m) + tail2
    Hs = 2.0 * (p.dm_norm_sq - rm2)
    return J, G, Hs


def _zero_crossings(values, nodes):
    """First and last sign-change locations (linear interpolation) per row; nan if none."""
    v = np.atleast_2d(values)
    sgn = np.sign(v)
    # treat exact zeros as crossings at that node
    change = (sgn[:, :-1] * sgn[:, 1:] < 0) | (sgn[:, :-1] == 0)
    has = change.any(axis=1)
    first_idx = np.argmax(change, axis=1)
    last_idx = change.shape[1] - 1 - np.argmax(change[:, ::-1], axis=1)

    def loc(idx):
        a = v[np.arange(len(v)), idx]
        b = v[np.arange(len(v)), idx + 1]
        denom = np.where(a == b, 1.0, a - b)
        frac = np.where(a == b, 0.0, a / denom)
        h = nodes[1] - nodes[0]
        return nodes[idx] + frac * h

    first = np.where(has, loc(first_idx), np.nan)
    last = np.where(has, loc(last_idx), np.nan)
    return first, last, has


@dataclass
class FermiBatch:
    xi: np.ndarray
    dist_l2: np.ndarray
    normality_residual: np.ndarray
    multimodal: np.ndarray
    has_interface: np.ndarray


def fermi_batch(values: np.ndarray, params: ScaleParams, p: InstantonProfile,
                tol: float = 1e-11, max_iter: int = 60) -> FermiBatch:
    """Fermi projection of many paths at once (rows of ``values``)."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    B = values.shape[0]
    cq = _CellQuad(params)
    first, last, has = _zero_crossings(values, params.nodes)
    xi = np.zeros(B)
    dist = np.full(B, np.nan)
    resid = np.full(B, np.nan)
    multi = np.zeros(B, dtype=bool)
    idx = np.flatnonzero(has)
    if idx.size == 0:
        return FermiBatch(xi * np.nan, dist, resid, multi, has)
    V = values[idx]
    offs = np.arange(-_SCAN_HALF, _SCAN_HALF + 1e-9, _SCAN_STEP)
    grids = [first[idx, None] + offs]
    far = (last[idx] - first[idx]) > 2 * _SCAN_HALF
    if np.any(far):
        grids.append(np.where(far[:, None], last[idx, None] + offs, first[idx, None] + offs))
    grid = np.concatenate(grids, axis=1)
    Jg = np.empty_like(grid)
    for j in range(grid.shape[1]):
        Jg[:, j] = fermi_J(V, grid[:, j], p, cq)
    best = np.argmin(Jg, axis=1)
    x = grid[np.arange(len(idx)), best]
    # local minima on the scan (interior points below both neighbours), per row
    order = np.argsort(grid, axis=1)
    gs = np.take_along_axis(grid, order, axis=1)
    Js = np.take_along_axis(Jg, order, axis=1)
    loc_min = (Js[:, 1:-1] < Js[:, :-2]) & (Js[:, 1:-1] < Js[:, 2:])
    multi[idx] = loc_min.sum(axis=1) > 1
    lo = x - _SCAN_STEP
    hi = x + _SCAN_STEP
    act = np.arange(len(idx))
    for _ in range(max_iter):
        xa = x[act]
        _, G, Hs = fermi_objective(V[act], xa, p, cq)
        step = np.where(Hs > 0, -G / np.where(Hs > 0, Hs, 1.0), 0.0)
        newx = xa + step
        bad = (Hs <= 0) | (newx <= lo[act]) | (newx >= hi[act])
        # shrink the bracket using the sign of the gradient
        lo[act] = np.where(G < 0, np.maximum(lo[act], xa), lo[act])
        hi[act] = np.where(G > 0, np.minimum(hi[act], xa), hi[act])
        newx = np.where(bad, 0.5 * (lo[act] + hi[act]), newx)
        done = (np.abs(newx - xa) < tol) | (hi[act] - lo[act] < tol)
        x[act] = newx
        act = act[~done]
        if act.size == 0:
            break
    J, G, _ = fermi_objective(V, x, p, cq)
    xi[idx] = x
    xi[~has] = np.nan
    dist[idx] = np.sqrt(np.maximum(J, 0.0))
    resid[idx] = 0.5 * G
    return FermiBatch(xi, dist, resid, multi, has)


@dataclass
class FermiCoords:
    xi: float
    v_nodes: np.ndarray
    dist_l2: float
    normality_residual: float
    multimodal: bool = False

    def v_tail(self, p: InstantonProfile, L: float):
        """Residual outside [-L, L]: 1 - m(s - xi) on the right, -1 - m(s - xi) on the left."""
        xi = self.xi
        return (lambda s: 1.0 - p.m(np.asarray(s) - xi)), (lambda s: -1.0 - p.m(np.asarray(s) - xi))


def fermi_project(u: PLPath, p: InstantonProfile, tol: float = 1e-11) -> FermiCoords:
    """Tubular coordinates u = m_xi + v with <v, m'_xi> = 0 over the whole line."""
    fb = fermi_batch(u.values[None, :], u.params, p, tol)
    if not fb.has_interface[0]:
        raise NoInterfaceError("path has no sign change, so there is no interface to project on")
    xi = float(fb.xi[0])
    v = u.values - p.m(u.nodes - xi)
    return FermiCoords(xi, v, float(fb.dist_l2[0]), float(fb.normality_residual[0]),
                       bool(fb.multimodal[0]))


# --------------------------------------------------------------------------- #
# distances


def linf_objective(values, xi, p: InstantonProfile, params: ScaleParams, sub: int = 16):
    """sup over R of |u - m_xi| with u extended by +-1 (batched over rows and xi)."""
    s = params.nodes
    h = params.delta
    frac = np.arange(sub) / sub
    pts = (s[:-1, None] + frac * h).ravel()
    pts = np.append(pts, s[-1])
    a = values[..., :-1, None]
    b = values[..., 1:, None]
    upl = (a + frac * (b - a)).reshape(values.shape[:-1] + (-1,))
    upl = np.concatenate([upl, values[..., -1:]], axis=-1)
    xi = np.asarray(xi, dtype=float)[..., None]
    inner = np.max(np.abs(upl - p.m(pts - xi)), axis=-1)
    L = params.L
    right = 1.0 - p.m(L - xi[..., 0])
    left = 1.0 + p.m(-L - xi[..., 0])
    return np.maximum(inner, np.maximum(np.abs(right), np.abs(left)))


def h1_objective(values, xi, p: InstantonProfile, params: ScaleParams):
    cq = _CellQuad(params)
    xi = np.asarray(xi, dtype=float)
    tq = cq.s - _xi_b(xi)
    r = cq.pl(values) - p.m(tq)
    dr = cq.slopes(values) - p.dm(tq)
    L = params.L
    l2 = cq.integrate(r * r) + p.int_gap_sq(L - xi) + p.int_gap_sq(L + xi)
    d2 = cq.integrate(dr * dr) + p.int_dm_sq(L - xi) + p.int_dm_sq(L + xi)
    return np.sqrt(l2 + d2)


def dist_linf_batch(values: np.ndarray, params: ScaleParams, p: InstantonProfile,
                    xi0: Optional[np.ndarray] = None, half: float = 1.5, step: float = 0.1,
                    refine_iter: int = 30) -> np.ndarray:
    """min over xi of the sup-norm distance; coarse scan around xi0 then golden refinement."""
    values = np.atleast_2d(values)
    if xi0 is None:
        xi0 = fermi_batch(values, params, p).xi
    xi0 = np.where(np.isfinite(xi0), xi0, 0.0)
    offs = np.arange(-half, half + 1e-9, step)
    vals = np.stack([linf_objective(values, xi0 + o, p, params) for o in offs], axis=1)
    k = np.argmin(vals, axis=1)
    a = xi0 + offs[k] - step
    b = xi0 + offs[k] + step
    g = (np.sqrt(5) - 1) / 2
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc = linf_objective(values, c, p, params)
    fd = linf_objective(values, d, p, params)
    for _ in range(refine_iter):
        left = fc < fd
        # keep [a, d] when f(c) < f(d), else [c, b]; one new evaluation per sweep
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        nc = np.where(left, b - g * (b - a), d)
        nd = np.where(left, c, a + g * (b - a))
        fnew = linf_objective(values, np.where(left, nc, nd), p, params)
        fc, fd = np.where(left, fnew, fd), np.where(left, fc, fnew)
        c, d = nc, nd
    return np.minimum(np.minimum(fc, fd), vals.min(axis=1))


def dist_to_M(u: PLPath, p: InstantonProfile, norm: str = "L2") -> float:
    """Distance from u (extended by +-1) to the curve of translated profiles."""
    params = u.params
    V = u.values[None, :]
    fb = fermi_batch(V, params, p)
    if norm == "L2":
        if fb.has_interface[0]:
            return float(fb.dist_l2[0])
        grid = np.linspace(-params.L - _SCAN_HALF, params.L + _SCAN_HALF, 401)
        cq = _CellQuad(params)
        return float(np.sqrt(min(fermi_J(V, x, p, cq)[0] for x in grid)))
    xi0 = fb.xi if fb.has_interface[0] else np.array([0.0])
    if norm in ("Linf", "L∞", "Linfty"):
        half = 1.5 if fb.has_interface[0] else params.L + _SCAN_HALF
        return float(dist_linf_batch(V, params, p, xi0, half=half)[0])
    if norm == "H1":
        x0 = float(xi0[0])
        res = minimize_scalar(lambda x: float(h1_objective(V, x, p, params)[0]),
                              bounds=(x0 - 1.5, x0 + 1.5), method="bounded",
                              options={"xatol": 1e-9})
        return float(res.fun)
    raise ValueError(f"unknown norm {norm!r}")


# --------------------------------------------------------------------------- #
# second variation and the derivative of the Fermi coordinate


def quad_form(p: InstantonProfile, xi: float, v: PLPath, spec=None) -> float:
    """<A_xi v, v> = int v'^2 + F''(m_xi) v^2 for a zero-boundary PL path."""
    if v.boundary_kind != "zero":
        raise DomainError("quad_form needs a zero-boundary path")
    spec = p.spec if spec is None else spec
    cq = _CellQuad(v.params)
    vq = cq.pl(v.values)
    pot = cq.integrate(spec.d2F(p.m(cq.s - xi)) * vq * vq)
    return float(2.0 * kinetic(v.values, v.params.delta) + pot)


def inner_with_profile_derivative(v: PLPath, p: InstantonProfile, xi: float, order: int = 1) -> float:
    """<v, m^{(order)}_xi> over [-L, L] (v vanishes or is handled by the caller outside)."""
    cq = _CellQuad(v.params)
    f = {1: p.dm, 2: p.d2m}[order]
    return float(cq.integrate(cq.pl(v.values) * f(cq.s - xi)))


def xi_directional_derivative(u: PLPath, h: PLPath, p: InstantonProfile,
                              fermi: Optional[FermiCoords] = None) -> float:
    """Df(u)[h] = -<m'_xi, h> / (||m'||^2 - <v, m''_xi>) for the Fermi coordinate xi = f(u)."""
    if h.boundary_kind != "zero":
        raise DomainError("direction h must have zero boundary values")
    fc = fermi_project(u, p) if fermi is None else fermi
    cq = _CellQuad(u.params)
    _, _, Hs = fermi_objective(u.values[None, :], np.array([fc.xi]), p, cq)
    denom = 0.5 * float(Hs[0])
    if denom < 0.1 * p.dm_norm_sq:
        raise NearCausticError(
            f"denominator {denom:.4g} below 0.1*||m'||^2 = {0.1 * p.dm_norm_sq:.4g}; "
            "the path is too far from M for Fermi coordinates")
    num = inner_with_profile_derivative(h, p, fc.xi, 1)
    return -num / denom


def h1_norm_sq(v: PLPath) -> float:
    return float(h1_sq_zero_pl(v.values, v.params.delta))


def l2_norm_sq(v: PLPath) -> float:
    return float(l2_sq_pl(v.values, v.params.delta))


def hat_embedding_ratio(g, params: ScaleParams) -> float:
    """|(<g, e_k>)_k| / (sqrt(delta) ||g||_{L2[-L,L]}); at most 2 by Cauchy-Schwarz."""
    from .grid import hat_inner_products
    ip = hat_inner_products(g, params)
    cq = _CellQuad(params, 12)
    gn = np.sqrt(cq.integrate(g(cq.s) ** 2))
    return float(np.linalg.norm(ip) / (np.sqrt(params.delta) * gn))


from .spectrum import (SpectralReport, LandscapeConstants, LandscapeResult,  # noqa: E402
                       landscape_check, landscape_constants, spectral_report, project_normal)
