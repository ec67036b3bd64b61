"""Standing-wave profile m, its cutoff and grid-discretized variants.

The profile solves m' = sqrt(2F(m)), m(0) = 0. We tabulate s as a function of
w = -log(1 - m) for s >= 0: on a uniform w-grid the points cluster
geometrically near the well, and ds/dw = 1/sqrt(2 h(q)) with q = 1 - m and
h(q) = F(1 - q)/q^2 stays bounded, so the quadrature is smooth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicHermiteSpline

from .errors import DomainError, InvalidPotentialError, NumericError, ToleranceError
from .grid import ScaleParams, gl_unit
from .potential import CutoffPotential, PotentialSpec, require_double_well, surface_tension

CLOSED_FORM_PROFILES: dict[str, Callable] = {"quartic": np.tanh}

_TAB_POINTS = 4096
_T_FACTOR = 40.0


def _base_spec(spec):
    return spec.base if isinstance(spec, CutoffPotential) else spec


def gap_quotient(spec: PotentialSpec):
    """Return (h, dFq) with h(q) = F(1-q)/q^2 and dFq(q) = F'(1-q), both free of cancellation."""
    if spec.coeffs is not None:
        shifted = Polynomial(spec.coeffs)(Polynomial([1.0, -1.0])).coef
        b = np.zeros(max(len(shifted), 3))
        b[: len(shifted)] = shifted
        tail = b[2:]
        k = np.arange(2, len(b))
        # d/dq F(1-q) = sum_k k b_k q^(k-1), and F'(1-q) = -d/dq F(1-q)
        dtail = -(k * b[2:])
        pv = np.polynomial.polynomial.polyval
        return (lambda q: pv(np.asarray(q, float), tail),
                lambda q: np.asarray(q, float) * pv(np.asarray(q, float), dtail))
    f2 = float(spec.d2F(np.array(1.0)))
    f3 = float(spec.d3F(np.array(1.0)))
    eta = 1e-4
    f4 = float((spec.d3F(np.array(1.0 + eta)) - spec.d3F(np.array(1.0 - eta))) / (2 * eta))
    q0 = 1e-3

    def h(q):
        q = np.asarray(q, dtype=float)
        safe = np.where(q > q0, q, 1.0)
        direct = spec.F(1.0 - safe) / safe**2
        series = 0.5 * f2 - f3 * q / 6.0 + f4 * q * q / 24.0
        return np.where(q > q0, direct, series)

    def dFq(q):
        q = np.asarray(q, dtype=float)
        direct = spec.dF(1.0 - q)
        series = -(f2 * q - f3 * q * q / 2.0 + f4 * q**3 / 6.0)
        return np.where(q > q0, direct, series)

    return h, dFq


@dataclass
class InstantonProfile:
    """Tabulated standing wave with exponential tails beyond ``T_tab``."""

    spec: PotentialSpec
    s_tab: np.ndarray
    w_tab: np.ndarray
    c1: float
    c2: float
    T_tab: float
    tail_amp: float
    residual: float
    closed_form: Optional[Callable] = None
    _hq: Callable = field(repr=False, default=None)
    _dFq: Callable = field(repr=False, default=None)
    _w_spline: CubicHermiteSpline = field(repr=False, default=None)
    _I1: CubicHermiteSpline = field(repr=False, default=None)
    _I2: CubicHermiteSpline = field(repr=False, default=None)
    _D2: CubicHermiteSpline = field(repr=False, default=None)

    # -- pointwise evaluation ---------------------------------------------
    def gap(self, s) -> np.ndarray:
        """1 - m(|s|), accurate far into the tail."""
        a = np.abs(np.asarray(s, dtype=float))
        inside = a <= self.T_tab
        w = self._w_spline(np.minimum(a, self.T_tab))
        tab = np.exp(-w)
        tail = self.tail_amp * np.exp(-self.c2 * a)
        return np.where(inside, tab, tail)

    def m(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.sign(s) * (1.0 - self.gap(s))

    __call__ = m

    def dm(self, s) -> np.ndarray:
        q = self.gap(s)
        return q * np.sqrt(2.0 * self._hq(q))

    def d2m(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.sign(s) * self._dFq(self.gap(s))

    def pieces(self, s):
        """(m, m', m'') from a single table lookup."""
        s = np.asarray(s, dtype=float)
        q = self.gap(s)
        sg = np.sign(s)
        return sg * (1.0 - q), q * np.sqrt(2.0 * self._hq(q)), sg * self._dFq(q)

    def d3m(self, s) -> np.ndarray:
        return self.spec.d2F(self.m(s)) * self.dm(s)

    # -- tail integrals over [a, infinity) --------------------------------
    def _tail(self, spline, a, far):
        a = np.asarray(a, dtype=float)
        inside = a <= self.T_tab
        return np.where(inside, spline(np.clip(a, 0.0, self.T_tab)), far(np.maximum(a, self.T_tab)))

    def int_gap(self, a) -> np.ndarray:
        """Integral of 1 - m over [a, inf) for a >= 0."""
        A, c = self.tail_amp, self.c2
        return self._tail(self._I1, a, lambda x: A * np.exp(-c * x) / c)

    def int_gap_sq(self, a) -> np.ndarray:
        """Integral of (1 - m)^2 over [a, inf); valid for any real a."""
        A, c = self.tail_amp, self.c2
        a = np.asarray(a, dtype=float)
        pos = self._tail(self._I2, np.abs(a), lambda x: A * A * np.exp(-2 * c * x) / (2 * c))
        I2_0 = float(self._I2(0.0))
        I1_0 = float(self._I1(0.0))
        b = np.abs(a)
        neg = I2_0 + 4 * b - 4 * (I1_0 - self.int_gap(b)) + (I2_0 - pos)
        return np.where(a >= 0, pos, neg)

    def int_dm_sq(self, a) -> np.ndarray:
        """Integral of m'^2 over [a, inf); valid for any real a."""
        A, c = self.tail_amp, self.c2
        a = np.asarray(a, dtype=float)
        pos = self._tail(self._D2, np.abs(a), lambda x: c * A * A * np.exp(-2 * c * x) / 2)
        D2_0 = float(self._D2(0.0))
        return np.where(a >= 0, pos, 2 * D2_0 - pos)

    @property
    def dm_norm_sq(self) -> float:
        """||m'||^2 over the whole line (equals C_* by equipartition)."""
        return 2.0 * float(self._D2(0.0))

    def ode_residual(self, s) -> np.ndarray:
        """|m' - sqrt(2F(m))| using the interpolant's own derivative."""
        a = np.abs(np.asarray(s, dtype=float))
        a = np.minimum(a, self.T_tab)
        w = self._w_spline(a)
        dw = self._w_spline(a, 1)
        q = np.exp(-w)
        return np.abs(q * dw - q * np.sqrt(2.0 * self._hq(q)))


def solve_profile(spec, tol: float = 1e-10, n_tab: int = _TAB_POINTS,
                  T_tab: Optional[float] = None) -> InstantonProfile:
    """Invert s(m) = int_0^m (2F)^(-1/2) on a graded grid and build the interpolant."""
    spec = _base_spec(spec)
    require_double_well(spec)
    f2 = float(spec.d2F(np.array(1.0)))
    if not f2 > 0:
        raise InvalidPotentialError(f"F''(1) = {f2:g} <= 0 makes the profile integral diverge")
    c2 = float(np.sqrt(f2))
    T_tab = _T_FACTOR / c2 if T_tab is None else float(T_tab)
    hq, dFq = gap_quotient(spec)
    if np.any(hq(np.linspace(1e-12, 1.0, 2001)) <= 0):
        raise InvalidPotentialError("F vanishes inside (-1, 1)")

    def dsdw(w):
        return 1.0 / np.sqrt(2.0 * hq(np.exp(-w)))

    t, wts = gl_unit(8)
    w_max = c2 * T_tab * 1.25 + 10.0
    for _ in range(6):
        w = np.linspace(0.0, w_max, n_tab)
        hw = w[1] - w[0]
        panels = hw * np.sum(wts * dsdw(w[:-1, None] + t * hw), axis=1)
        s = np.concatenate([[0.0], np.cumsum(panels)])
        if s[-1] >= T_tab:
            break
        w_max *= 1.5
    else:
        raise ToleranceError(f"profile table did not reach T_tab={T_tab:g}; s_max={s[-1]:.6g}")

    dwds = 1.0 / dsdw(w)
    spline = CubicHermiteSpline(s, w, dwds)

    # Tail integrals in the w variable, accumulated from the far end.
    def cum_from_end(integrand):
        pan = hw * np.sum(wts * integrand(w[:-1, None] + t * hw), axis=1)
        return np.concatenate([np.cumsum(pan[::-1])[::-1], [0.0]])

    q_end = np.exp(-w[-1])
    A = q_end * np.exp(c2 * s[-1])
    I1 = cum_from_end(lambda x: np.exp(-x) * dsdw(x)) + A * np.exp(-c2 * s[-1]) / c2
    I2 = cum_from_end(lambda x: np.exp(-2 * x) * dsdw(x)) + A * A * np.exp(-2 * c2 * s[-1]) / (2 * c2)
    D2 = cum_from_end(lambda x: np.exp(-2 * x) * np.sqrt(2.0 * hq(np.exp(-x)))) \
        + c2 * A * A * np.exp(-2 * c2 * s[-1]) / 2
    q = np.exp(-w)
    dm_tab = q * np.sqrt(2.0 * hq(q))

    # Restrict the table to [0, T_tab] and fix the tail amplitude there.
    gapT = float(np.exp(-spline(T_tab)))
    A_T = gapT * np.exp(c2 * T_tab)
    prof = InstantonProfile(
        spec=spec, s_tab=s, w_tab=w, c1=np.nan, c2=c2, T_tab=T_tab, tail_amp=A_T,
        residual=np.nan, closed_form=CLOSED_FORM_PROFILES.get(spec.name), _hq=hq, _dFq=dFq,
        _w_spline=spline,
        _I1=CubicHermiteSpline(s, I1, -q),
        _I2=CubicHermiteSpline(s, I2, -q * q),
        _D2=CubicHermiteSpline(s, D2, -dm_tab**2),
    )
    keep = s <= T_tab
    st = s[keep]
    ratios = [q[keep] * np.exp(c2 * st),
              dm_tab[keep] * np.exp(c2 * st) / c2,
              np.abs(dFq(q[keep])) * np.exp(c2 * st) / c2**2]
    prof.c1 = float(max(np.max(r) for r in ratios))
    mids = 0.5 * (st[1:] + st[:-1])
    prof.residual = float(np.max(prof.ode_residual(mids)))
    if prof.residual > 10 * tol:
        raise ToleranceError(
            f"profile ODE residual {prof.residual:.3g} exceeds 10*tol={10 * tol:.3g}; increase n_tab")
    return prof


def profile_at(p: InstantonProfile, s, xi: float = 0.0):
    """m(s - xi)."""
    return p.m(np.asarray(s, dtype=float) - xi)


def closed_form_error(p: InstantonProfile, half_width: float = 8.0, n: int = 20001) -> float:
    if p.closed_form is None:
        raise NumericError(f"no closed-form profile registered for {p.spec.name}")
    s = np.linspace(-half_width, half_width, n)
    return float(np.max(np.abs(p.m(s) - p.closed_form(s))))


# --------------------------------------------------------------------------- #
# cutoff and discretized profiles


def _quintic_basis(t):
    t2, t3, t4, t5 = t * t, t**3, t**4, t**5
    H = (1 - 10 * t3 + 15 * t4 - 6 * t5,
         t - 6 * t3 + 8 * t4 - 3 * t5,
         0.5 * (t2 - 3 * t3 + 3 * t4 - t5))
    dH = (-30 * t2 + 60 * t3 - 30 * t4,
          1 - 18 * t2 + 32 * t3 - 15 * t4,
          0.5 * (2 * t - 9 * t2 + 12 * t3 - 5 * t4))
    d2H = (-60 * t + 180 * t2 - 120 * t3,
           -36 * t + 96 * t2 - 60 * t3,
           0.5 * (2 - 18 * t + 36 * t2 - 20 * t3))
    return H, dH, d2H


def shift_window(params: ScaleParams, strict: bool = False) -> tuple[float, float]:
    """Admissible interface positions.

    The default is [-L + eps^-g1, L - eps^-g1], the interval on which Fermi
    coordinates are used; ``strict`` adds the extra unit margin needed for
    the blend zone to fit inside [-L, L].
    """
    half = params.L - params.core_radius - (1.0 if strict else 0.0)
    return -half, half


@dataclass
class CutoffProfile:
    """m_xi^eps: equals m_xi on the core, +-1 beyond core + 1, quintic blend between."""

    profile: InstantonProfile
    core: float
    xi: float

    def __post_init__(self):
        p, a = self.profile, self.core
        q0 = float(p.gap(a))
        self._coef = (q0, -float(p.dm(a)), -float(p.d2m(a)))
        tt = np.linspace(0.0, 1.0, 401)
        g = self._g(tt, 0)
        dg = self._g(tt, 1)
        exact = p.gap(a + tt)
        if np.any(dg > 1e-15 * max(q0, 1e-300)) or np.any(g > exact * (1 + 1e-9) + 1e-300) or np.any(g < -1e-300):
            raise NumericError("quintic blend is not monotone or leaves [m, 1]; increase the core radius")

    def _g(self, tau, k):
        H = _quintic_basis(np.asarray(tau, float))[k]
        c = self._coef
        return c[0] * H[0] + c[1] * H[1] + c[2] * H[2]

    def _pieces(self, s):
        t = np.asarray(s, dtype=float) - self.xi
        a = np.abs(t)
        sg = np.where(t < 0, -1.0, 1.0)
        tau = np.clip(a - self.core, 0.0, 1.0)
        return t, a, sg, tau

    def __call__(self, s):
        t, a, sg, tau = self._pieces(s)
        blend = sg * (1.0 - self._g(tau, 0))
        out = np.where(a <= self.core, self.profile.m(t), blend)
        return np.where(a >= self.core + 1.0, sg, out)

    def deriv(self, s, order: int = 1):
        t, a, sg, tau = self._pieces(s)
        if order == 1:
            core = self.profile.dm(t)
            blend = -self._g(tau, 1)
        elif order == 2:
            core = self.profile.d2m(t)
            blend = -sg * self._g(tau, 2)
        else:
            raise ValueError("order must be 1 or 2")
        out = np.where(a <= self.core, core, blend)
        return np.where(a >= self.core + 1.0, 0.0, out)

    def blend_slope_bound(self) -> float:
        p = self.profile
        return 2 * p.c1 * p.c2 * float(np.exp(-p.c2 * self.core))


def _check_window(params: ScaleParams, xi: float, strict: bool):
    lo, hi = shift_window(params, strict)
    if not (lo <= xi <= hi):
        raise DomainError(f"xi={xi:g} outside the admissible shift window [{lo:.6g}, {hi:.6g}]")


def cutoff_profile(p: InstantonProfile, params: ScaleParams, xi: float = 0.0,
                   strict: bool = False) -> CutoffProfile:
    _check_window(params, xi, strict)
    return CutoffProfile(p, params.core_radius, float(xi))


@dataclass
class DiscretizedProfile:
    params: ScaleParams
    xi: float
    values: np.ndarray

    def as_path(self):
        from .grid import PLPath
        return PLPath(self.params, self.values.copy(), "fixed")


def discretize_profile(p: InstantonProfile, params: ScaleParams, xi: float = 0.0,
                       strict: bool = False) -> DiscretizedProfile:
    cp = cutoff_profile(p, params, xi, strict)
    vals = cp(params.nodes)
    vals[0], vals[-1] = -1.0, 1.0
    return DiscretizedProfile(params, float(xi), vals)


@dataclass
class ProfileErrors:
    l2_cutoff: float
    h1_cutoff: float
    l2_disc: float
    h1_disc: float


def profile_error_norms(p: InstantonProfile, params: ScaleParams, xi: float = 0.0,
                        strict: bool = False, order: int = 12) -> ProfileErrors:
    """Whole-line L2 errors of the cutoff and discretized profiles and of their derivatives."""
    cp = cutoff_profile(p, params, xi, strict)
    a = cp.core
    t, w = gl_unit(order)
    # Cutoff errors: blend interval (both sides by symmetry) plus far tails.
    tau = np.linspace(0.0, 1.0, 65)
    lo, hi = tau[:-1, None], tau[1:, None]
    x = lo + t * (hi - lo)
    dx = (hi - lo)
    g = cp._g(x, 0)
    dg = cp._g(x, 1)
    blend_l2 = float(np.sum(w * (g - p.gap(a + x)) ** 2 * dx))
    blend_h1 = float(np.sum(w * (dg + p.dm(a + x)) ** 2 * dx))
    l2_cut = 2 * (blend_l2 + float(p.int_gap_sq(a + 1.0)))
    h1_cut = 2 * (blend_h1 + float(p.int_dm_sq(a + 1.0)))

    # Discretized profile: per-cell quadrature on [-L, L] plus tails.
    disc = discretize_profile(p, params, xi, strict).values
    s = params.nodes
    h = params.delta
    sub = 4
    cell_lo = s[:-1, None, None] + (np.arange(sub)[None, :, None] + t) * (h / sub)
    frac = (cell_lo - s[:-1, None, None]) / h
    pl = disc[:-1, None, None] + frac * (disc[1:] - disc[:-1])[:, None, None]
    slope = ((disc[1:] - disc[:-1]) / h)[:, None, None]
    ww = w * (h / sub)
    m_here = p.m(cell_lo - xi)
    dm_here = p.dm(cell_lo - xi)
    l2_in = float(np.sum(ww * (m_here - pl) ** 2))
    h1_in = float(np.sum(ww * (dm_here - slope) ** 2))
    L = params.L
    l2_out = float(p.int_gap_sq(L - xi) + p.int_gap_sq(L + xi))
    h1_out = float(p.int_dm_sq(L - xi) + p.int_dm_sq(L + xi))
    return ProfileErrors(np.sqrt(l2_cut), np.sqrt(h1_cut),
                         np.sqrt(l2_in + l2_out), np.sqrt(h1_in + h1_out))


def surface_tension_check(p: InstantonProfile) -> tuple[float, float]:
    """(||m'||^2, C_*): equal for an exact standing wave."""
    return p.dm_norm_sq, surface_tension(p.spec)
