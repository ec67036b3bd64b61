"""Reference bridge measure, refinement bridges, massive free field and their bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats
from scipy.linalg import cholesky_banded, eigvalsh_tridiagonal, solve_banded

from .errors import DomainError, InvalidParameterError
from .grid import PLPath, ScaleParams, mass_banded, stiffness_banded
from .rng import as_generator

LOG2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class BridgeSpec:
    """Brownian bridge from -1 to +1 sampled at the 2N+1 grid nodes.

    ``scaling='rescaled'`` is the law nu on [-L, L] with variance rate eps;
    ``scaling='original'`` is the law on [-1, 1] with variance rate eps^(1-gamma).
    Both give the same node density up to the coordinate map s -> eps^gamma s.
    """

    params: ScaleParams
    scaling: str = "rescaled"

    def __post_init__(self):
        if self.scaling not in ("rescaled", "original"):
            raise InvalidParameterError(f"unknown scaling {self.scaling!r}")

    @property
    def half_length(self) -> float:
        return self.params.L if self.scaling == "rescaled" else 1.0

    @property
    def h(self) -> float:
        return self.half_length / self.params.N

    @property
    def variance_scale(self) -> float:
        e, g = self.params.epsilon, self.params.gamma
        return e if self.scaling == "rescaled" else e ** (1 - g)

    @property
    def mean_slope(self) -> float:
        return 1.0 / self.half_length

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(-self.params.N, self.params.N + 1) * self.h

    @property
    def mean(self) -> np.ndarray:
        return self.mean_slope * self.nodes

    def kernel(self, s, t):
        ell = self.half_length
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        return self.variance_scale * (np.minimum(s, t) + ell - (s + ell) * (t + ell) / (2 * ell))

    def node_covariance(self) -> np.ndarray:
        x = self.nodes[1:-1]
        return self.kernel(x[:, None], x[None, :])


# --------------------------------------------------------------------------- #
# sampling and density


def sample_bridge_nodes(spec: BridgeSpec, rng, size: int = 1) -> np.ndarray:
    """Exact node samples, shape (size, 2N+1): pinned random walk plus the mean ramp."""
    rng = as_generator(rng)
    n = 2 * spec.params.N
    steps = rng.standard_normal((size, n)) * math.sqrt(spec.variance_scale * spec.h)
    W = np.concatenate([np.zeros((size, 1)), np.cumsum(steps, axis=1)], axis=1)
    k = np.arange(n + 1) / n
    B = W - k * W[:, -1:]
    out = spec.mean + B
    out[:, 0], out[:, -1] = -1.0, 1.0
    return out


def sample_bridge(spec: BridgeSpec, rng) -> PLPath:
    vals = sample_bridge_nodes(spec, rng, 1)[0]
    return PLPath(spec.params, vals, "fixed")


def log_normalizer(spec: BridgeSpec) -> float:
    """log of the density prefactor: product of cell kernels over the endpoint kernel."""
    N = spec.params.N
    v, h, ell = spec.variance_scale, spec.h, spec.half_length
    return -N * (LOG2PI + math.log(v * h)) + 0.5 * (LOG2PI + math.log(v * 2 * ell)) + 4.0 / (2 * v * 2 * ell)


def log_normalizer_determinant(spec: BridgeSpec) -> float:
    """Same prefactor as (2 pi)^(-(2N-1)/2) exp(eps^(gamma-1)) det(K/v)^(1/2), K the PL stiffness."""
    n = spec.params.n_free
    v = spec.variance_scale
    ab = stiffness_banded(n, spec.h) / v
    U = cholesky_banded(ab, lower=False)
    logdet = 2.0 * np.sum(np.log(U[-1]))
    return -0.5 * n * LOG2PI + 4.0 / (4 * v * spec.half_length) + 0.5 * logdet


def _check_ends(x):
    x = np.asarray(x, dtype=float)
    if np.any(x[..., 0] != -1.0) or np.any(x[..., -1] != 1.0):
        raise DomainError("node vector must start at -1 and end at +1")
    return x


def log_density(spec: BridgeSpec, u) -> np.ndarray:
    """Log density of the free node values; ``u`` is a PLPath or array(s) with +-1 ends."""
    x = _check_ends(u.values if isinstance(u, PLPath) else u)
    d = np.diff(x, axis=-1)
    return -np.sum(d * d, axis=-1) / (2 * spec.variance_scale * spec.h) + log_normalizer(spec)


def log_transition(v: float, t: float, a, b):
    return -0.5 * (LOG2PI + np.log(v * t)) - (np.asarray(b) - np.asarray(a)) ** 2 / (2 * v * t)


def log_density_chain(spec: BridgeSpec, u) -> np.ndarray:
    """Sum of cell transition log-kernels minus the endpoint log-kernel."""
    x = _check_ends(u.values if isinstance(u, PLPath) else u)
    v, h = spec.variance_scale, spec.h
    total = np.sum(log_transition(v, h, x[..., :-1], x[..., 1:]), axis=-1)
    return total - log_transition(v, 2 * spec.half_length, -1.0, 1.0)


# --------------------------------------------------------------------------- #
# refinement bridges inside cells


def refine(spec: BridgeSpec, u: PLPath, k: int, M: int, rng) -> np.ndarray:
    """Path values at M equispaced interior points of cell k (k = 0 .. 2N-1, left to right)."""
    if M < 0:
        raise InvalidParameterError("M must be >= 0")
    if not (0 <= k < 2 * spec.params.N):
        raise InvalidParameterError(f"cell index {k} out of range 0..{2 * spec.params.N - 1}")
    dev = refine_deviations(spec, rng, (1, 1), M)[0, 0]
    t = np.arange(1, M + 1) / (M + 1)
    lin = u.values[k] + t * (u.values[k + 1] - u.values[k])
    return lin + dev


def refine_deviations(spec: BridgeSpec, rng, shape: tuple, M: int) -> np.ndarray:
    """Bridge deviations u - u^N at M interior points per cell; shape + (M,)."""
    rng = as_generator(rng)
    if M == 0:
        return np.zeros(tuple(shape) + (0,))
    sub = spec.h / (M + 1)
    steps = rng.standard_normal(tuple(shape) + (M + 1,)) * math.sqrt(spec.variance_scale * sub)
    W = np.cumsum(steps, axis=-1)
    frac = np.arange(1, M + 1) / (M + 1)
    return W[..., :-1] - frac * W[..., -1:]


def cell_l2_sq_estimate(dev: np.ndarray, spec: BridgeSpec) -> np.ndarray:
    """Per-cell integral of (u - u^N)^2: exact PL integral through the refined points plus
    the conditional expectation of the unresolved sub-bridges."""
    M = dev.shape[-1]
    sub = spec.h / (M + 1)
    z = np.zeros(dev.shape[:-1] + (1,))
    pts = np.concatenate([z, dev, z], axis=-1)
    a, b = pts[..., :-1], pts[..., 1:]
    pl = sub / 3.0 * np.sum(a * a + a * b + b * b, axis=-1)
    return pl + spec.variance_scale * spec.h**2 / (6 * (M + 1))


def expected_disc_l2_sq(spec: BridgeSpec) -> float:
    """E||u - u^N||^2 over the whole interval: 2N cells times v h^2 / 6."""
    return 2 * spec.params.N * spec.variance_scale * spec.h**2 / 6.0


def cell_sup_samples(spec: BridgeSpec, rng, shape: tuple) -> np.ndarray:
    """Exact samples of sup |u - u^N| on individual cells (Kolmogorov law, scaled)."""
    rng = as_generator(rng)
    K = stats.kstwobign.rvs(size=shape, random_state=rng)
    return math.sqrt(spec.variance_scale * spec.h) * K


# --------------------------------------------------------------------------- #
# concentration reports


@dataclass
class ConcentrationReport:
    bound_name: str
    r_grid: np.ndarray
    empirical_p: np.ndarray
    theoretical_p: np.ndarray
    n_samples: int
    centering: float = 0.0
    n_trials: int = 0

    @property
    def se(self) -> np.ndarray:
        n = max(self.n_trials or self.n_samples, 1)
        p = np.clip(self.empirical_p, 1.0 / n, 1.0)
        return np.sqrt(p * (1 - p) / n)

    @property
    def dominated(self) -> bool:
        return bool(np.all(self.empirical_p <= self.theoretical_p + 3 * self.se))

    def rows(self):
        for r, e, t, s in zip(self.r_grid, self.empirical_p, self.theoretical_p, self.se):
            yield dict(bound=self.bound_name, r=float(r), empirical_p=float(e),
                       theoretical_p=float(t), se=float(s), centering=self.centering,
                       n_samples=self.n_samples)


def default_r_grid(spec: BridgeSpec, n: int = 10) -> np.ndarray:
    """r values spanning the informative range of the L2 bounds."""
    sig = math.sqrt(spec.variance_scale) * spec.h / math.pi
    return np.linspace(0.0, 2.5 * sig, n)


def discretization_tails(spec: BridgeSpec, n_samples: int, M: int = 8,
                         r_grid: Optional[np.ndarray] = None, rng=0,
                         r_grid_linf: Optional[np.ndarray] = None,
                         batch: int = 20000) -> list[ConcentrationReport]:
    """Monte Carlo tails of ||u - u^N|| (whole-line L2, per-cell L2, sup) against the bounds."""
    if M < 8:
        raise InvalidParameterError("norm estimation needs M >= 8 refinement points per cell")
    rng = as_generator(rng)
    N = spec.params.N
    v, h = spec.variance_scale, spec.h
    r = default_r_grid(spec) if r_grid is None else np.asarray(r_grid, float)
    cen_whole = math.sqrt(v * h * h * N / 3.0)
    cen_short = math.sqrt(v * h * h / 6.0)
    if r_grid_linf is None:
        r_grid_linf = np.linspace(0.0, 6.0, 10) * math.sqrt(v * h)
    r_inf = np.asarray(r_grid_linf, float)
    cnt_whole = np.zeros(len(r))
    cnt_short = np.zeros(len(r))
    cnt_inf = np.zeros(len(r_inf))
    done = 0
    sum_sq = 0.0
    while done < n_samples:
        b = min(batch, n_samples - done)
        dev = refine_deviations(spec, rng, (b, 2 * N), M)
        cell = cell_l2_sq_estimate(dev, spec)
        whole = np.sqrt(cell.sum(axis=1))
        sum_sq += float(np.sum(cell.sum(axis=1)))
        short = np.sqrt(cell).ravel()
        sup = cell_sup_samples(spec, rng, (b, 2 * N)).max(axis=1)
        cnt_whole += (whole[:, None] >= cen_whole + r).sum(axis=0)
        cnt_short += (short[:, None] >= cen_short + r).sum(axis=0)
        cnt_inf += (sup[:, None] >= r_inf).sum(axis=0)
        done += b
    bound_l2 = np.exp(-r * r * math.pi**2 / (v * h * h))
    bound_inf = np.minimum(4 * N * np.exp(-r_inf**2 / (8 * v * h)), 1.0)
    reps = [
        ConcentrationReport("whole-line-L2", r, cnt_whole / n_samples, np.minimum(bound_l2, 1.0),
                            n_samples, cen_whole, n_samples),
        ConcentrationReport("short-interval-L2", r, cnt_short / (n_samples * 2 * N),
                            np.minimum(bound_l2, 1.0), n_samples, cen_short, n_samples * 2 * N),
        ConcentrationReport("whole-line-Linf", r_inf, cnt_inf / n_samples, bound_inf, n_samples, 0.0,
                            n_samples),
    ]
    reps[0].mean_sq = sum_sq / n_samples
    return reps


def node_norm_tail(spec: BridgeSpec, n_samples: int, r_grid, rng=0) -> ConcentrationReport:
    """Hilbert-space Gaussian concentration for the centred node vector."""
    rng = as_generator(rng)
    Sigma = spec.node_covariance()
    tr = float(np.trace(Sigma))
    sig2 = float(np.linalg.eigvalsh(Sigma)[-1])
    x = sample_bridge_nodes(spec, rng, n_samples)[:, 1:-1] - spec.mean[1:-1]
    nrm = np.linalg.norm(x, axis=1)
    r = np.asarray(r_grid, float)
    emp = (nrm[:, None] >= math.sqrt(tr) + r).mean(axis=0)
    return ConcentrationReport("node-vector", r, emp, np.exp(-r * r / (2 * sig2)), n_samples,
                               math.sqrt(tr), n_samples)


# --------------------------------------------------------------------------- #
# massive free field


@dataclass(frozen=True)
class MassiveFieldSpec:
    params: ScaleParams
    kappa: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise InvalidParameterError("kappa must be positive")

    def precision_banded(self) -> np.ndarray:
        n, h = self.params.n_free, self.params.delta
        return (self.kappa / self.params.epsilon) * (mass_banded(n, h) + stiffness_banded(n, h))

    def precision(self) -> np.ndarray:
        ab = self.precision_banded()
        n = ab.shape[1]
        Q = np.diag(ab[1]) + np.diag(ab[0, 1:], 1) + np.diag(ab[0, 1:], -1)
        return Q


def sample_massive_nodes(spec: MassiveFieldSpec, rng, size: int = 1) -> np.ndarray:
    """Exact samples of the zero-boundary field, shape (size, 2N+1)."""
    rng = as_generator(rng)
    U = cholesky_banded(spec.precision_banded(), lower=False)
    n = spec.params.n_free
    z = rng.standard_normal((n, size))
    x = solve_banded((0, 1), U, z)
    out = np.zeros((size, n + 2))
    out[:, 1:-1] = x.T
    return out


def sample_massive_field(spec: MassiveFieldSpec, rng) -> PLPath:
    return PLPath(spec.params, sample_massive_nodes(spec, rng, 1)[0], "zero")


def h1_form_sq(values: np.ndarray, h: float) -> np.ndarray:
    """u^T (M + K) u for zero-boundary node vectors (exact PL H1 norm squared)."""
    from .grid import h1_sq_zero_pl
    return h1_sq_zero_pl(values, h)


def hat_h1_sq(params: ScaleParams) -> float:
    """||e_k||^2_{H1} of an interior hat function: 2 delta/3 + 2/delta."""
    d = params.delta
    return 2 * d / 3 + 2 / d


def massive_h1_tail(spec: MassiveFieldSpec, n_samples: int, r_grid=None, rng=0,
                    form: str = "root", batch: int = 50000) -> ConcentrationReport:
    """Empirical tail of the H1 norm of the massive field against exp(-kappa r^2 / 2 eps).

    form='root'     P(||u|| >= sqrt((2N-1) eps/kappa) + r)   (Gaussian concentration)
    form='literal'  P(||u|| >= (2N-1) eps/kappa + r)
    form='squared'  P(||u||^2 >= 2N eps/kappa + r)   (squared statistic, expectation
                    as computed in the usual proof; not a valid Gaussian bound for large r)
    """
    rng = as_generator(rng)
    n = spec.params.n_free
    eps, kap = spec.params.epsilon, spec.kappa
    mean_sq = n * eps / kap
    if r_grid is None:
        r_grid = np.linspace(0.0, 3.0 * math.sqrt(eps / kap), 10)
    r = np.asarray(r_grid, float)
    cnt = np.zeros(len(r))
    done = 0
    while done < n_samples:
        b = min(batch, n_samples - done)
        x = sample_massive_nodes(spec, rng, b)
        q = h1_form_sq(x, spec.params.delta)
        if form == "root":
            hit = np.sqrt(q)[:, None] >= math.sqrt(mean_sq) + r
        elif form == "literal":
            hit = np.sqrt(q)[:, None] >= mean_sq + r
        elif form == "squared":
            hit = q[:, None] >= (n + 1) * eps / kap + r
        else:
            raise InvalidParameterError(f"unknown form {form!r}")
        cnt += hit.sum(axis=0)
        done += b
    cen = {"root": math.sqrt(mean_sq), "literal": mean_sq}.get(form, (n + 1) * eps / kap)
    return ConcentrationReport(f"massive-H1-{form}", r, cnt / n_samples,
                               np.minimum(np.exp(-kap * r * r / (2 * eps)), 1.0), n_samples, cen,
                               n_samples)


def massive_h1_exact_tail(spec: MassiveFieldSpec, threshold_sq) -> np.ndarray:
    """P(||u||^2_{H1} >= t): the norm is (eps/kappa) times a chi-square with 2N-1 dof."""
    scale = spec.params.epsilon / spec.kappa
    return stats.chi2.sf(np.asarray(threshold_sq) / scale, spec.params.n_free)


# --------------------------------------------------------------------------- #
# normalization constants


@dataclass
class ZRatios:
    log_z1: float               # density normalizer of the node law (determinant form)
    log_z1_kernels: float       # same from the product of transition kernels
    log_z1_int: float           # Gaussian integral of exp(-int u'^2 / 2 eps) (massless)
    log_z2: float               # Gaussian integral of exp(-kappa int (u^2 + u'^2) / 2 eps)
    log_ratio: float            # log(Z2 / Z1_int)
    logdet_K: float
    logdet_MK: float
    poincare_lo: bool
    poincare_hi: bool
    log_z3_over_z1: float
    z3_exponent_half: float     # -(2N-1)/2 log eps
    z3_exponent_N: float        # -N log eps
    det_scaling_ok: bool

    def to_dict(self) -> dict:
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                for k, v in self.__dict__.items()}


def _logdet_banded(ab: np.ndarray) -> float:
    U = cholesky_banded(ab, lower=False)
    return float(2.0 * np.sum(np.log(U[-1])))


def z_ratios(params: ScaleParams, kappa: float = 1.0) -> ZRatios:
    if params.N > 64:
        raise InvalidParameterError("z_ratios is meant for N <= 64")
    n, h, eps = params.n_free, params.delta, params.epsilon
    L = params.L
    spec = BridgeSpec(params)
    ldK = _logdet_banded(stiffness_banded(n, h))
    ldMK = _logdet_banded(stiffness_banded(n, h) + mass_banded(n, h))
    log_z1_int = 0.5 * n * (LOG2PI + math.log(eps)) - 0.5 * ldK
    log_z2 = 0.5 * n * (LOG2PI + math.log(eps / kappa)) - 0.5 * ldMK
    log_z3 = 0.5 * n * LOG2PI - 0.5 * ldK
    hi = 2 * params.N * math.log(1 + 2 * L / math.pi)
    # det(xi A) = xi^n det(A) spot check on a 3x3 tridiagonal
    A = np.array([[2.0, -1, 0], [-1, 2, -1], [0, -1, 2]])
    xi = 1.7
    det_ok = abs(np.linalg.det(xi * A) - xi**3 * np.linalg.det(A)) <= 1e-12 * abs(np.linalg.det(xi * A))
    return ZRatios(
        log_z1=log_normalizer_determinant(spec), log_z1_kernels=log_normalizer(spec),
        log_z1_int=log_z1_int, log_z2=log_z2, log_ratio=log_z2 - log_z1_int,
        logdet_K=ldK, logdet_MK=ldMK, poincare_lo=ldK <= ldMK + 1e-12,
        poincare_hi=ldMK <= ldK + hi + 1e-12, log_z3_over_z1=log_z3 - log_z1_int,
        z3_exponent_half=-0.5 * n * math.log(eps), z3_exponent_N=-params.N * math.log(eps),
        det_scaling_ok=bool(det_ok))
