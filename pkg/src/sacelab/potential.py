"""Double-well potentials, the antiderivative G, surface tension and cutoffs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import InvalidParameterError, InvalidPotentialError, ToleranceError

ScalarMap = Callable[[np.ndarray], np.ndarray]

# Gauss-Legendre rules used by the adaptive integrator (order 10 vs 20 estimate).
_GL_LO = np.polynomial.legendre.leggauss(10)
_GL_HI = np.polynomial.legendre.leggauss(20)


@dataclass(frozen=True)
class PotentialSpec:
    """A symmetric double well with minima at -1 and +1.

    ``F`` and its derivatives accept numpy arrays. ``closed_form_G`` is optional;
    when missing, ``G`` is computed by adaptive quadrature.
    """

    name: str
    F: ScalarMap
    dF: ScalarMap
    d2F: ScalarMap
    d3F: ScalarMap
    closed_form_G: Optional[ScalarMap] = None
    well_locations: tuple = (-1.0, 1.0)
    symmetric: bool = True
    coeffs: Optional[tuple] = field(default=None, compare=False)

    def scaled(self, factor: float) -> "PotentialSpec":
        G = self.closed_form_G
        scaled_G = None if G is None else (lambda u, G=G: np.sqrt(factor) * G(u))
        return PotentialSpec(
            name=f"{factor:g}*{self.name}",
            F=lambda u: factor * self.F(u),
            dF=lambda u: factor * self.dF(u),
            d2F=lambda u: factor * self.d2F(u),
            d3F=lambda u: factor * self.d3F(u),
            closed_form_G=scaled_G,
            symmetric=self.symmetric,
        )

    def with_closed_form(self, G: Optional[ScalarMap]) -> "PotentialSpec":
        return PotentialSpec(self.name, self.F, self.dF, self.d2F, self.d3F, G,
                             self.well_locations, self.symmetric, self.coeffs)


@dataclass(frozen=True)
class CutoffPotential:
    """``base`` on [-cut_radius, cut_radius]; C^2 blend, then affine continuation.

    Behaves like a :class:`PotentialSpec` (same callables), so it can be used
    wherever a potential is expected.
    """

    base: PotentialSpec
    cut_radius: float = 2.0
    blend_width: float = 1.0

    @property
    def name(self) -> str:
        return f"cutoff({self.base.name},{self.cut_radius:g})"

    @property
    def symmetric(self) -> bool:
        return self.base.symmetric

    @property
    def closed_form_G(self):
        return None

    @property
    def well_locations(self):
        return self.base.well_locations

    def _pieces(self, u):
        u = np.asarray(u, dtype=float)
        R, w = self.cut_radius, self.blend_width
        a = np.abs(u)
        sgn = np.where(u < 0, -1.0, 1.0)
        x = np.clip(a - R, 0.0, None)
        xb = np.minimum(x, w)
        return u, a, sgn, x, xb, R, w

    def _edge(self, sgn):
        R = self.cut_radius
        # Derivatives of the base along the outward direction at the cut point.
        F0 = self.base.F(sgn * R)
        F1 = sgn * self.base.dF(sgn * R)
        F2 = self.base.d2F(sgn * R)
        return F0, F1, F2

    def F(self, u):
        u, a, sgn, x, xb, R, w = self._pieces(u)
        F0, F1, F2 = self._edge(sgn)
        blend = F0 + F1 * xb + F2 * (xb**2 / 2 - xb**3 / (6 * w))
        slope_end = F1 + F2 * w / 2
        out = blend + slope_end * (x - xb)
        return np.where(a <= R, self.base.F(np.clip(u, -R, R)), out)

    def dF(self, u):
        u, a, sgn, x, xb, R, w = self._pieces(u)
        F0, F1, F2 = self._edge(sgn)
        d = F1 + F2 * (xb - xb**2 / (2 * w))
        return np.where(a <= R, self.base.dF(np.clip(u, -R, R)), sgn * d)

    def d2F(self, u):
        u, a, sgn, x, xb, R, w = self._pieces(u)
        F0, F1, F2 = self._edge(sgn)
        d2 = F2 * (1 - xb / w)
        return np.where(a <= R, self.base.d2F(np.clip(u, -R, R)), d2)

    def d3F(self, u):
        u, a, sgn, x, xb, R, w = self._pieces(u)
        F0, F1, F2 = self._edge(sgn)
        d3 = np.where(x < w, -F2 / w, 0.0)
        return np.where(a <= R, self.base.d3F(np.clip(u, -R, R)), sgn * d3)

    def slope_bound(self) -> float:
        """Global bound on |F'|: the larger of the in-range max and the exit slope."""
        R, w = self.cut_radius, self.blend_width
        probe = np.linspace(-R, R, 4001)
        inner = float(np.max(np.abs(self.base.dF(probe))))
        exits = [abs(float(self.dF(np.array(s * (R + w))))) for s in (-1.0, 1.0)]
        return max(inner, *exits)


# --------------------------------------------------------------------------- #
# registry


def _quartic_G(u):
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    inner = a - a**3 / 3
    outer = a**3 / 3 - a + 4.0 / 3.0
    return np.sign(u) * np.where(a <= 1, inner, outer)


def quartic() -> PotentialSpec:
    """F(u) = (u^2 - 1)^2 / 2, the standard double well (instanton tanh)."""
    return PotentialSpec(
        name="quartic",
        F=lambda u: 0.5 * (np.asarray(u) ** 2 - 1.0) ** 2,
        dF=lambda u: 2.0 * np.asarray(u) * (np.asarray(u) ** 2 - 1.0),
        d2F=lambda u: 6.0 * np.asarray(u) ** 2 - 2.0,
        d3F=lambda u: 12.0 * np.asarray(u),
        closed_form_G=_quartic_G,
        coeffs=(0.5, 0.0, -1.0, 0.0, 0.5),
    )


def from_coeffs(coeffs: Sequence[float], name: str = "poly") -> PotentialSpec:
    """Polynomial potential F(u) = sum_k coeffs[k] * u**k (lowest degree first)."""
    c = np.asarray(coeffs, dtype=float)
    if c.ndim != 1 or c.size == 0 or not np.all(np.isfinite(c)):
        raise InvalidPotentialError(f"bad polynomial coefficients: {coeffs!r}")
    c1 = P.polyder(c, 1)
    c2 = P.polyder(c, 2)
    c3 = P.polyder(c, 3)
    odd = c[1::2]
    return PotentialSpec(
        name=name,
        F=lambda u: P.polyval(np.asarray(u, dtype=float), c),
        dF=lambda u: P.polyval(np.asarray(u, dtype=float), c1),
        d2F=lambda u: P.polyval(np.asarray(u, dtype=float), c2),
        d3F=lambda u: P.polyval(np.asarray(u, dtype=float), c3),
        symmetric=bool(np.all(odd == 0)),
        coeffs=tuple(float(x) for x in c),
    )


def sextic() -> PotentialSpec:
    """F(u) = (u^2 - 1)^2 (1 + u^2) / 4, a double well without a closed-form profile."""
    c = P.polymul(P.polymul([-1, 0, 1], [-1, 0, 1]), [1, 0, 1]) / 4.0
    return from_coeffs(c, name="sextic")


def from_function(F: ScalarMap, name: str = "custom", step: float = 1e-4) -> PotentialSpec:
    """Wrap a bare F; derivatives by central differences (error O(step^2))."""
    h = step

    def dF(u):
        u = np.asarray(u, dtype=float)
        return (F(u + h) - F(u - h)) / (2 * h)

    def d2F(u):
        u = np.asarray(u, dtype=float)
        return (F(u + h) - 2 * F(u) + F(u - h)) / h**2

    def d3F(u):
        u = np.asarray(u, dtype=float)
        return (F(u + 2 * h) - 2 * F(u + h) + 2 * F(u - h) - F(u - 2 * h)) / (2 * h**3)

    probe = np.linspace(0, 3, 301)
    sym = bool(np.allclose(F(probe), F(-probe), rtol=1e-12, atol=1e-12))
    return PotentialSpec(name, F, dF, d2F, d3F, symmetric=sym)


def zero() -> PotentialSpec:
    """F = 0: the Gibbs measure reduces to the bridge law (used for reference checks)."""
    z = lambda u: np.zeros_like(np.asarray(u, dtype=float))
    return PotentialSpec("zero", z, z, z, z, closed_form_G=z, coeffs=(0.0,))


REGISTRY = {"quartic": quartic, "sextic": sextic, "zero": zero}


def get(name: str) -> PotentialSpec:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise InvalidPotentialError(
            f"unknown potential {name!r}; known: {sorted(REGISTRY)}") from None


# --------------------------------------------------------------------------- #
# assumption checks


@dataclass
class ClauseResult:
    passed: bool
    witness: str = ""


@dataclass
class AssumptionReport:
    clauses: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses.values())

    def __str__(self) -> str:
        lines = []
        for key, c in self.clauses.items():
            tag = "pass" if c.passed else "FAIL"
            lines.append(f"({key}) {tag}" + (f": {c.witness}" if c.witness else ""))
        return "\n".join(lines)


def default_probe(n: int = 2001) -> np.ndarray:
    return np.linspace(-3.0, 3.0, n)


def assert_double_well(spec, probe: Optional[np.ndarray] = None) -> AssumptionReport:
    """Check the three double-well clauses numerically on ``probe``.

    (a) F >= 0 and zero exactly at +-1; (b) F' changes sign only near -1, 0, 1
    with F''(0) < 0 < F''(+-1); (c) F(u) = F(-u).
    """
    probe = default_probe() if probe is None else np.asarray(probe, dtype=float)
    if probe.min() > -3 or probe.max() < 3 or probe.size < 1000:
        raise InvalidParameterError("probe must cover [-3, 3] with >= 1000 points")
    probe = np.sort(probe)
    Fv = np.asarray(spec.F(probe), dtype=float)
    if not np.all(np.isfinite(Fv)):
        bad = probe[~np.isfinite(Fv)][0]
        raise InvalidPotentialError(f"F is not finite at u={bad:g}")
    clauses = {}

    scale = max(1.0, float(np.max(np.abs(Fv))))
    at_wells = np.asarray(spec.F(np.array([-1.0, 1.0])), dtype=float)
    away = np.min(np.abs(probe[:, None] - np.array([-1.0, 1.0])[None, :]), axis=1) > 1e-9
    if np.any(Fv < -1e-14 * scale):
        i = int(np.argmin(Fv))
        clauses["a"] = ClauseResult(False, f"F({probe[i]:g}) = {Fv[i]:.3g} < 0")
    elif np.any(np.abs(at_wells) > 1e-12 * scale):
        clauses["a"] = ClauseResult(False, f"F(-1), F(1) = {at_wells[0]:.3g}, {at_wells[1]:.3g}")
    elif np.any(Fv[away] <= 0):
        i = np.flatnonzero(away & (Fv <= 0))[0]
        clauses["a"] = ClauseResult(False, f"F({probe[i]:g}) = 0 away from the wells")
    else:
        clauses["a"] = ClauseResult(True)

    d = np.asarray(spec.dF(probe), dtype=float)
    s = np.sign(d)
    nz = s != 0
    # Sign changes of F' between consecutive nonzero probe values.
    idx = np.flatnonzero(nz)
    changes = idx[1:][s[idx[1:]] != s[idx[:-1]]]
    locs = probe[changes]
    spacing = float(np.max(np.diff(probe)))
    expected = np.array([-1.0, 0.0, 1.0])
    d2 = np.asarray(spec.d2F(expected), dtype=float)
    if locs.size != 3 or np.any(np.abs(np.sort(locs) - expected) > 2 * spacing):
        clauses["b"] = ClauseResult(False, f"F' sign changes near {np.round(locs, 4).tolist()}")
    elif not (d2[1] < 0 and d2[0] > 0 and d2[2] > 0):
        clauses["b"] = ClauseResult(False, f"F''(-1,0,1) = {d2.tolist()}")
    else:
        clauses["b"] = ClauseResult(True)

    Fm = np.asarray(spec.F(-probe), dtype=float)
    asym = np.abs(Fv - Fm)
    tol = 1e-12 * np.maximum(1.0, np.abs(Fv))
    if np.any(asym > tol):
        i = int(np.argmax(asym - tol))
        clauses["c"] = ClauseResult(False, f"|F({probe[i]:g}) - F({-probe[i]:g})| = {asym[i]:.3g}")
    else:
        clauses["c"] = ClauseResult(True)
    return AssumptionReport(clauses)


def require_double_well(spec) -> None:
    report = assert_double_well(spec)
    if not report.passed:
        raise InvalidPotentialError(f"{spec.name} is not a symmetric double well:\n{report}")


# --------------------------------------------------------------------------- #
# G and C_*


def _gl_panel(f, a, b, rule):
    x, w = rule
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return half * np.dot(w, f(mid + half * x))


def adaptive_gl(f, a: float, b: float, atol: float = 1e-12, max_panels: int = 20000) -> float:
    """Adaptive composite Gauss-Legendre on [a, b] (order 10 vs 20 error estimate)."""
    if a == b:
        return 0.0
    stack = [(a, b)]
    total = 0.0
    err_total = 0.0
    panels = 0
    while stack:
        lo, hi = stack.pop()
        panels += 1
        coarse = _gl_panel(f, lo, hi, _GL_LO)
        fine = _gl_panel(f, lo, hi, _GL_HI)
        err = abs(fine - coarse)
        local_tol = atol * abs(hi - lo) / max(abs(b - a), 1e-300)
        if err <= max(local_tol, 1e-15 * abs(fine)) or abs(hi - lo) < 1e-12:
            total += fine
            err_total += err
        else:
            m = 0.5 * (lo + hi)
            stack.extend([(m, hi), (lo, m)])
        if panels > max_panels:
            raise ToleranceError(
                f"quadrature did not converge on [{a:g}, {b:g}]; estimate {total:.15g}, "
                f"error {err_total:.3g}")
    return float(total)


def _sqrt2F(spec):
    return lambda t: np.sqrt(2.0 * np.clip(spec.F(t), 0.0, None))


def g_value(spec, u: float, atol: float = 1e-12) -> float:
    """G(u) = integral from 0 to u of sqrt(2F)."""
    u = float(u)
    if not np.isfinite(u):
        raise InvalidParameterError("u must be finite")
    if spec.closed_form_G is not None:
        return float(spec.closed_form_G(np.array(u)))
    return g_quadrature(spec, u, atol)


def g_quadrature(spec, u: float, atol: float = 1e-12) -> float:
    # sqrt(2F) has kinks at the wells; split there so each piece is smooth.
    f = _sqrt2F(spec)
    sign = 1.0 if u >= 0 else -1.0
    lo, hi = sorted((0.0, u))
    cuts = [lo] + [c for c in (-1.0, 1.0) if lo < c < hi] + [hi]
    total = sum(adaptive_gl(f, cuts[i], cuts[i + 1], atol) for i in range(len(cuts) - 1))
    return sign * total


def surface_tension(spec) -> float:
    """C_* = G(1) - G(-1), the energy of the standing wave."""
    return g_value(spec, 1.0) - g_value(spec, -1.0)


def cutoff(spec: PotentialSpec, cut_radius: float = 2.0, blend_width: float = 1.0) -> CutoffPotential:
    wells = max(abs(w) for w in spec.well_locations)
    if cut_radius < wells:
        raise InvalidParameterError(
            f"cut_radius={cut_radius} must be >= max|well| = {wells}")
    if blend_width <= 0:
        raise InvalidParameterError("blend_width must be positive")
    out = CutoffPotential(spec, float(cut_radius), float(blend_width))
    probe = np.linspace(-cut_radius - 20 * blend_width, cut_radius + 20 * blend_width, 4001)
    if np.any(out.F(probe) > spec.F(probe) * (1 + 1e-12) + 1e-12):
        raise InvalidPotentialError(
            f"cutoff of {spec.name} exceeds the base potential; blending needs F''' >= 0 beyond the cut")
    return out
