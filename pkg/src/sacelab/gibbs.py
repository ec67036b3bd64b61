"""Gibbs measure on node space: samplers, normalizing constants, rates and interface laws.

Everything runs on the 2N-1 free node values of a piecewise-linear path. The
density with respect to Lebesgue measure is

    exp(-sum (x_{k+1}-x_k)^2 / (2 v h) - w * int F(u))  *  (bridge normalizer)

where (v, h, w) = (eps, delta, 1/eps) in the rescaled picture on [-L, L] and
(eps^(1-gamma), 1/N, eps^(-1-gamma)) in the original one on [-1, 1]. Both give
the same density for the same node vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .energy import dist_linf_batch, fermi_batch
from .errors import (BoxTooSmallError, DomainError, InvalidParameterError, NumericError,
                     RungRefinementError)
from .gaussian import BridgeSpec, log_normalizer, log_transition, sample_bridge_nodes
from .grid import DEFAULT_CELL_ORDER, ScaleParams, gl_unit, kinetic
from .instanton import InstantonProfile
from .rng import as_generator, stream


# --------------------------------------------------------------------------- #
# node-space model


@dataclass(frozen=True)
class NodeModel:
    """Chain-structured density on the free nodes (boundary values fixed)."""

    n_cells: int
    h: float
    var_rate: float
    weight: float
    F: Callable
    order: int = DEFAULT_CELL_ORDER
    left: float = -1.0
    right: float = 1.0
    log_norm: float = 0.0

    @property
    def n(self) -> int:
        return self.n_cells - 1

    def full(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        shp = X.shape[:-1] + (1,)
        return np.concatenate([np.full(shp, self.left), X, np.full(shp, self.right)], axis=-1)

    def cell_phi(self, a, b):
        """w * int_cell F along the segment from a to b (broadcasting)."""
        t, wq = gl_unit(self.order)
        a = np.asarray(a, dtype=float)[..., None]
        b = np.asarray(b, dtype=float)[..., None]
        return self.weight * self.h * np.sum(wq * self.F(a + t * (b - a)), axis=-1)

    def phi_full(self, U: np.ndarray) -> np.ndarray:
        return np.sum(self.cell_phi(U[..., :-1], U[..., 1:]), axis=-1)

    def phi(self, X: np.ndarray) -> np.ndarray:
        return self.phi_full(self.full(X))

    def kin(self, X: np.ndarray) -> np.ndarray:
        return kinetic(self.full(X), self.h) / self.var_rate

    def log_prior(self, X: np.ndarray) -> np.ndarray:
        return -self.kin(X) + self.log_norm

    def log_target(self, X: np.ndarray, beta: float = 1.0) -> np.ndarray:
        """Unnormalized log density of the tempered measure (prior normalizer included)."""
        return self.log_prior(X) - beta * self.phi(X)

    @property
    def mean(self) -> np.ndarray:
        k = np.arange(1, self.n_cells) / self.n_cells
        return self.left + (self.right - self.left) * k

    def sample_prior(self, rng, size: int) -> np.ndarray:
        rng = as_generator(rng)
        steps = rng.standard_normal((size, self.n_cells)) * math.sqrt(self.var_rate * self.h)
        W = np.cumsum(steps, axis=1)
        k = np.arange(1, self.n_cells + 1) / self.n_cells
        B = W - k * W[:, -1:]
        return self.mean + B[:, :-1]

    def prior_sd_max(self) -> float:
        n = self.n_cells
        k = np.arange(1, n)
        return float(math.sqrt(self.var_rate * self.h * np.max(k * (n - k) / n)))


@dataclass(frozen=True)
class GibbsSpec:
    bridge: BridgeSpec
    potential: object
    quadrature_order: int = DEFAULT_CELL_ORDER

    def __post_init__(self):
        probe = np.linspace(-4.0, 4.0, 801)
        Fp = np.asarray(self.potential.F(probe), dtype=float)
        if not np.all(np.isfinite(Fp)) or np.min(Fp) < -1e-12:
            raise InvalidParameterError("potential must be finite and nonnegative so that Phi >= 0")

    @property
    def params(self) -> ScaleParams:
        return self.bridge.params

    def node_model(self) -> NodeModel:
        p = self.params
        if self.bridge.scaling == "rescaled":
            w = 1.0 / p.epsilon
        else:
            w = p.epsilon ** (-1.0 - p.gamma)
        return NodeModel(2 * p.N, self.bridge.h, self.bridge.variance_scale, w, self.potential.F,
                         self.quadrature_order, log_norm=log_normalizer(self.bridge))

    def phi(self, values: np.ndarray) -> np.ndarray:
        """Phi for full node vectors (with +-1 ends)."""
        return self.node_model().phi_full(np.asarray(values, dtype=float))


def gibbs_spec(potential, epsilon: float, gamma: float, gamma1=None, gamma2=None, N=None,
               scaling: str = "rescaled", order: int = DEFAULT_CELL_ORDER) -> GibbsSpec:
    return GibbsSpec(BridgeSpec(ScaleParams(epsilon, gamma, gamma1, gamma2, N), scaling), potential, order)


def findimdis_logpdf(s: Sequence[float], x: Sequence[float], var_rate: float,
                     a: float = -1.0, b: float = 1.0) -> float:
    """Log density of bridge values x at increasing times s in (a, b), as a ratio of
    Brownian transition kernels: P(a->s1) P(s1->s2) ... P(sn->b) / P(a->b)."""
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(np.diff(s) <= 0) or s[0] <= a or s[-1] >= b:
        raise DomainError("times must be strictly increasing inside the interval")
    t = np.diff(np.concatenate([[a], s, [b]]))
    y = np.concatenate([[-1.0], x, [1.0]])
    return float(np.sum(log_transition(var_rate, t, y[:-1], y[1:]))
                 - log_transition(var_rate, b - a, -1.0, 1.0))


# --------------------------------------------------------------------------- #
# transfer-matrix proposal and quadrature


class TransferGrid:
    """Discretized node chain on a uniform state grid.

    Provides forward-filter/backward-sample draws from the grid approximation of
    the tempered measure (used as an independence proposal, jittered uniformly
    within each bin) and a quadrature value of the node integral.
    """

    def __init__(self, model: NodeModel, beta: float = 1.0, n_grid: Optional[int] = None,
                 radius: Optional[float] = None):
        self.model = model
        self.beta = beta
        sd = model.prior_sd_max()
        R = max(abs(model.left), abs(model.right)) + 7.0 * sd if radius is None else radius
        cond_sd = math.sqrt(model.var_rate * model.h / 2.0)
        if n_grid is None:
            n_grid = int(min(1500, max(200, math.ceil(2 * R / (0.12 * cond_sd)))))
        self.x = np.linspace(-R, R, n_grid)
        self.g = self.x[1] - self.x[0]
        vh = model.var_rate * model.h
        x = self.x

        def logT(a, b):
            return -(b - a) ** 2 / (2 * vh) - beta * model.cell_phi(a, b)

        self.logT = logT(x[:, None], x[None, :])
        self.log_t0 = logT(model.left, x)
        self.log_tN = logT(x, model.right)
        self._forward()

    def _forward(self):
        n = self.model.n
        c = self.logT.max()
        T = np.exp(self.logT - c)
        self._T = T
        la = np.empty((n, len(self.x)))
        la[0] = self.log_t0
        scale = np.empty(n)
        a = np.exp(la[0] - la[0].max())
        scale[0] = la[0].max()
        alpha = [a / a.sum()]
        scale[0] += math.log(a.sum())
        for j in range(1, n):
            nxt = alpha[-1] @ T
            s = nxt.sum()
            if s <= 0:
                raise NumericError("transfer-matrix recursion underflowed; widen the state grid")
            alpha.append(nxt / s)
            scale[j] = scale[j - 1] + c + math.log(s)
        self._alpha = np.array(alpha)
        end = self._alpha[-1] * np.exp(self.log_tN - self.log_tN.max())
        self.log_Z_grid = float(scale[-1] + math.log(end.sum()) + self.log_tN.max())

    @property
    def log_integral(self) -> float:
        """log of the integral of exp(-kin - beta*Phi) over R^n (midpoint rule)."""
        return self.log_Z_grid + self.model.n * math.log(self.g)

    def sample(self, rng, size: int):
        """Draws and their proposal log densities."""
        rng = as_generator(rng)
        n, S = self.model.n, len(self.x)
        idx = np.empty((size, n), dtype=np.int64)
        w = self._alpha[-1] * np.exp(self.log_tN - self.log_tN.max())
        idx[:, -1] = _draw(rng, np.broadcast_to(w / w.sum(), (size, S)))
        for j in range(n - 2, -1, -1):
            P = self._alpha[j][None, :] * self._T[:, idx[:, j + 1]].T
            idx[:, j] = _draw(rng, P / P.sum(axis=1, keepdims=True))
        X = self.x[idx] + (rng.random((size, n)) - 0.5) * self.g
        return X, self._logq_idx(idx)

    def _logq_idx(self, idx):
        lp = self.log_t0[idx[:, 0]] + self.log_tN[idx[:, -1]]
        if idx.shape[1] > 1:
            lp = lp + np.sum(self.logT[idx[:, :-1], idx[:, 1:]], axis=1)
        return lp - self.log_Z_grid - self.model.n * math.log(self.g)

    def logq(self, X: np.ndarray) -> np.ndarray:
        k = np.rint((X - self.x[0]) / self.g).astype(np.int64)
        inside = np.all((k >= 0) & (k < len(self.x)), axis=1)
        out = np.full(X.shape[0], -np.inf)
        if np.any(inside):
            out[inside] = self._logq_idx(k[inside])
        return out


def _draw(rng, P: np.ndarray) -> np.ndarray:
    c = np.cumsum(P, axis=1)
    u = rng.random(P.shape[0]) * c[:, -1]
    return np.minimum((c < u[:, None]).sum(axis=1), P.shape[1] - 1)


def transfer_logZ(spec: GibbsSpec, n_grid: Optional[int] = None, beta: float = 1.0) -> float:
    """log Z = log E_nu[exp(-beta Phi)] by transfer-matrix quadrature (any N)."""
    m = spec.node_model()
    tg = TransferGrid(m, beta, n_grid)
    return tg.log_integral + m.log_norm


# --------------------------------------------------------------------------- #
# Markov chains


@dataclass
class ChainConfig:
    rho: float = 0.9
    n_steps: int = 2000
    burn_in: int = 500
    seed: int = 0
    adapt: bool = True
    target_acceptance: float = 0.25
    n_chains: int = 32
    thin: int = 1
    ffbs_prob: float = 0.0
    ffbs_grid: Optional[int] = None

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise InvalidParameterError(f"rho must lie in (0, 1), got {self.rho}")
        if not (0 <= self.burn_in < self.n_steps):
            raise InvalidParameterError("need 0 <= burn_in < n_steps")
        if self.n_chains < 1 or self.thin < 1:
            raise InvalidParameterError("n_chains and thin must be positive")
        if not (0.0 <= self.ffbs_prob <= 1.0):
            raise InvalidParameterError("ffbs_prob must lie in [0, 1]")


@dataclass
class ChainResult:
    samples: np.ndarray          # (kept, chains, n) free-node values
    phi: np.ndarray              # (kept, chains)
    accept_pcn: float
    accept_ffbs: float
    rho: float
    model: NodeModel = field(repr=False)
    last: np.ndarray = field(repr=False, default=None)

    @property
    def acceptance_rate(self) -> float:
        return self.accept_pcn if np.isfinite(self.accept_pcn) else self.accept_ffbs

    def full(self) -> np.ndarray:
        return self.model.full(self.samples)

    def flat(self) -> np.ndarray:
        return self.full().reshape(-1, self.model.n + 2)

    def paths(self, params: ScaleParams):
        from .grid import PLPath
        for row in self.flat():
            yield PLPath(params, row, "fixed")


def run_chains(model: NodeModel, cfg: ChainConfig, beta: float = 1.0,
               init: Optional[np.ndarray] = None, rng=None) -> ChainResult:
    """Batched pCN chains (optionally mixed with transfer-matrix independence moves)."""
    rng = stream(cfg.seed) if rng is None else as_generator(rng)
    C, n = cfg.n_chains, model.n
    X = model.sample_prior(rng, C) if init is None else np.array(init, dtype=float, copy=True)
    if X.shape != (C, n):
        raise InvalidParameterError(f"init must have shape {(C, n)}")
    mean = model.mean
    tg = TransferGrid(model, beta, cfg.ffbs_grid) if cfg.ffbs_prob > 0 else None
    ph = model.phi(X)
    lw = None
    if tg is not None:
        lw = model.log_prior(X) - beta * ph - tg.logq(X)
    rho = cfg.rho
    theta = math.log(rho / (1 - rho))
    kept, kept_phi = [], []
    acc_p = [0, 0]
    acc_f = [0, 0]
    win_acc, win_n, block = 0, 0, 0
    for step in range(cfg.n_steps):
        use_ffbs = tg is not None and rng.random() < cfg.ffbs_prob
        if use_ffbs:
            Y, lq = tg.sample(rng, C)
            phy = model.phi(Y)
            lwy = model.log_prior(Y) - beta * phy - lq
            with np.errstate(invalid="ignore"):
                logr = lwy - lw
            logr = np.where(np.isnan(logr), -np.inf, logr)
        else:
            Z = model.sample_prior(rng, C) - mean
            Y = mean + rho * (X - mean) + math.sqrt(1 - rho * rho) * Z
            phy = model.phi(Y)
            logr = beta * (ph - phy)
        if not np.all(np.isfinite(phy)):
            bad = int(np.flatnonzero(~np.isfinite(phy))[0])
            raise NumericError(f"non-finite Phi at step {step}, chain {bad}; "
                               f"state {np.array2string(Y[bad], precision=4)}")
        acc = np.log(rng.random(C)) < logr
        X = np.where(acc[:, None], Y, X)
        ph = np.where(acc, phy, ph)
        if tg is not None:
            if not use_ffbs:
                lwy = model.log_prior(Y) - beta * phy - tg.logq(Y)
            lw = np.where(acc, lwy, lw)
        if step >= cfg.burn_in:
            tgt = acc_f if use_ffbs else acc_p
            tgt[0] += int(acc.sum())
            tgt[1] += C
            if (step - cfg.burn_in) % cfg.thin == 0:
                kept.append(X.copy())
                kept_phi.append(ph.copy())
        elif cfg.adapt and not use_ffbs:
            win_acc += int(acc.sum())
            win_n += C
            if win_n >= 50 * C:
                block += 1
                a = win_acc / win_n
                theta += (a - cfg.target_acceptance) * (-4.0) / math.sqrt(block)
                rho = float(np.clip(1 / (1 + math.exp(-theta)), 0.01, 0.9999))
                win_acc, win_n = 0, 0
    ap = acc_p[0] / acc_p[1] if acc_p[1] else float("nan")
    af = acc_f[0] / acc_f[1] if acc_f[1] else float("nan")
    return ChainResult(np.array(kept), np.array(kept_phi), ap, af, rho, model, X)


def effective_sample_size(x: np.ndarray) -> float:
    """Multi-chain ESS of a scalar trace of shape (T, C) (initial positive sequence)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    T, C = x.shape
    if T < 4:
        return float(T * C)
    xc = x - x.mean(axis=0)
    var = np.mean(xc * xc)
    if var <= 0:
        return float(T * C)
    f = np.fft.rfft(xc, n=2 * T, axis=0)
    ac = np.fft.irfft(f * np.conj(f), axis=0)[:T].mean(axis=1) / (T * var)
    tau = 1.0
    for k in range(1, T - 1, 2):
        pair = ac[k] + ac[k + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    return float(min(T * C, T * C / tau))


# --------------------------------------------------------------------------- #
# reports and observables


@dataclass
class GibbsReport:
    acceptance_rate: float
    effective_sample_size: float
    means: dict
    ses: dict
    ess: dict
    rho: float
    n_kept: int
    accept_ffbs: float = float("nan")
    trace: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return dict(acceptance_rate=self.acceptance_rate, accept_ffbs=self.accept_ffbs,
                    effective_sample_size=self.effective_sample_size, rho=self.rho,
                    n_kept=self.n_kept, means=self.means, ses=self.ses, ess=self.ess)


def observables(spec: GibbsSpec, values: np.ndarray, p: Optional[InstantonProfile] = None,
                linf: bool = False) -> dict:
    """Per-sample observables in rescaled units: energy, Phi, center value, Fermi data."""
    params = spec.params
    m = spec.node_model()
    phi = m.phi_full(values)
    # Phi is the same in both scalings, so eps * Phi is always the rescaled potential energy
    out = {"phi": phi,
           "energy": kinetic(values, params.delta) + params.epsilon * phi,
           "u_center": values[:, params.N]}
    if p is not None:
        fb = fermi_batch(values, params, p)
        out["dist_L2"] = fb.dist_l2
        out["xi_hat"] = fb.xi
        if linf:
            out["dist_Linf"] = dist_linf_batch(values, params, p, fb.xi)
    return out


def report_from(res: ChainResult, obs: dict, trace_thin: int = 10) -> GibbsReport:
    means, ses, esss = {}, {}, {}
    T, C = res.phi.shape
    for k, v in obs.items():
        v = np.asarray(v, dtype=float).reshape(T, C)
        ok = np.all(np.isfinite(v))
        vv = v if ok else np.where(np.isfinite(v), v, np.nanmean(v))
        e = effective_sample_size(vv)
        means[k] = float(np.nanmean(v))
        ses[k] = float(np.nanstd(v) / math.sqrt(max(e, 1.0)))
        esss[k] = e
    ess_min = min(esss.values()) if esss else float(T * C)
    return GibbsReport(res.acceptance_rate, ess_min, means, ses, esss, res.rho, T * C,
                       res.accept_ffbs, res.phi[::trace_thin])


def mcmc_chain(spec: GibbsSpec, cfg: ChainConfig, p: Optional[InstantonProfile] = None,
               beta: float = 1.0):
    """Run the sampler; returns (ChainResult, GibbsReport)."""
    res = run_chains(spec.node_model(), cfg, beta)
    obs = observables(spec, res.flat(), p)
    return res, report_from(res, obs)


# --------------------------------------------------------------------------- #
# normalizing constant


@dataclass
class ZEstimate:
    log_z: float
    se: float
    ladder: np.ndarray
    rung_log: np.ndarray
    rung_se: np.ndarray
    rung_ess: np.ndarray

    def to_dict(self) -> dict:
        return dict(log_z=self.log_z, se=self.se, ladder=self.ladder.tolist(),
                    rung_log=self.rung_log.tolist(), rung_se=self.rung_se.tolist(),
                    rung_ess=self.rung_ess.tolist())


def default_ladder(n_rungs: int = 24, power: float = 3.0) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_rungs + 1) ** power


def estimate_logZ(spec: GibbsSpec, ladder: Optional[Sequence[float]] = None,
                  cfg: Optional[ChainConfig] = None, min_ess_fraction: float = 0.01) -> ZEstimate:
    """Stepping-stone estimate of log E_nu[exp(-Phi)]."""
    lad = default_ladder() if ladder is None else np.asarray(ladder, dtype=float)
    if lad[0] != 0.0 or lad[-1] != 1.0 or np.any(np.diff(lad) <= 0):
        raise InvalidParameterError("ladder must increase strictly from 0 to 1")
    cfg = cfg or ChainConfig(n_steps=600, burn_in=100, n_chains=64, ffbs_prob=0.5)
    model = spec.node_model()
    if np.all(model.F(np.linspace(-4, 4, 81)) == 0):
        z = np.zeros(len(lad) - 1)
        return ZEstimate(0.0, 0.0, lad, z, z, z + np.inf)
    logs, ses, esss = [], [], []
    X = None
    for j in range(len(lad) - 1):
        b0, db = lad[j], lad[j + 1] - lad[j]
        rng = stream(cfg.seed, 7, j)
        if b0 == 0.0:
            n_tot = (cfg.n_steps - cfg.burn_in) * cfg.n_chains
            S = model.sample_prior(rng, n_tot).reshape(-1, cfg.n_chains, model.n)
            ph = model.phi(S)
            X = S[-1]
        else:
            res = run_chains(model, cfg, b0, X, rng)
            ph, X = res.phi, res.last
        lw = -db * ph                                  # (T, C)
        T, C = lw.shape
        mx = lw.max()
        w = np.exp(lw - mx)
        ess_w = w.sum() ** 2 / np.sum(w * w)
        if ess_w < max(10.0, min_ess_fraction * w.size):
            raise RungRefinementError(
                f"rung {j} (beta {b0:.4g} -> {lad[j + 1]:.4g}) has weight ESS {ess_w:.1f}; "
                "use a denser ladder")
        per_chain = w.mean(axis=0)
        mean = per_chain.mean()
        se_mean = per_chain.std(ddof=1) / math.sqrt(C) if C > 1 else 0.0
        logs.append(mx + math.log(mean))
        ses.append(se_mean / mean)
        esss.append(ess_w)
    logs, ses = np.array(logs), np.array(ses)
    return ZEstimate(float(logs.sum()), float(math.sqrt(np.sum(ses**2))), lad, logs, ses,
                     np.array(esss))


# --------------------------------------------------------------------------- #
# brute-force oracle for at most three free nodes


@dataclass
class OracleResult:
    log_z: float
    means: dict
    boundary_mass: float
    n_per_axis: int
    marginal_grid: np.ndarray = field(repr=False, default=None)
    marginal_center: np.ndarray = field(repr=False, default=None)


def direct_small_N_oracle(spec: GibbsSpec, n_per_axis: int = 201, box: float = 3.0,
                          p: Optional[InstantonProfile] = None, moment_stride: int = 2,
                          boundary_tol: float = 1e-8) -> OracleResult:
    """Tensor-product trapezoid quadrature of the Gibbs integrand on a box around the mean."""
    model = spec.node_model()
    n = model.n
    if n > 3:
        raise InvalidParameterError("the brute-force oracle needs 2N-1 <= 3 free nodes")
    if n_per_axis < 200:
        raise InvalidParameterError("use at least 200 points per axis")
    axes = [np.linspace(mu - box, mu + box, n_per_axis) for mu in model.mean]
    hs = [a[1] - a[0] for a in axes]
    shape = (n_per_axis,) * n
    flat_idx = np.indices(shape).reshape(n, -1).T

    def points(rows):
        return np.stack([axes[a][rows[:, a]] for a in range(n)], axis=1)

    logf = np.empty(flat_idx.shape[0])
    chunk = 200_000
    for i in range(0, len(logf), chunk):
        X = points(flat_idx[i:i + chunk])
        logf[i:i + chunk] = model.log_prior(X) - model.phi(X)
    mx = logf.max()
    f = np.exp(logf - mx).reshape(shape)
    wt = np.ones(shape)
    for ax in range(n):
        sl = [slice(None)] * n
        for end in (0, -1):
            sl[ax] = end
            wt[tuple(sl)] *= 0.5
    total = float(np.sum(f * wt))
    edge = np.zeros(shape, dtype=bool)
    for ax in range(n):
        sl = [slice(None)] * n
        for end in (0, -1):
            sl[ax] = end
            edge[tuple(sl)] = True
    bmass = float(np.sum(f[edge] * wt[edge])) / total
    if bmass > boundary_tol:
        raise BoxTooSmallError(f"integrand mass on the box boundary is {bmass:.2e} > {boundary_tol:g}")
    log_z = mx + math.log(total) + float(np.sum(np.log(hs)))
    # moments on a (possibly strided) sub-grid with its own trapezoid weights
    sub = tuple(slice(0, None, moment_stride) for _ in range(n))
    fs = f[sub]
    ws = np.ones(fs.shape)
    for ax in range(n):
        sl = [slice(None)] * n
        for end in (0, -1):
            sl[ax] = end
            ws[tuple(sl)] *= 0.5
    pw = (fs * ws).ravel()
    pw /= pw.sum()
    keep = pw > 1e-14
    sub_idx = np.indices(fs.shape).reshape(n, -1).T * moment_stride
    Xs = points(sub_idx[keep])
    pw = pw[keep] / pw[keep].sum()
    sums: dict = {}
    for i in range(0, len(pw), chunk // 4):
        obs = observables(spec, model.full(Xs[i:i + chunk // 4]), p)
        for k, v in obs.items():
            sums[k] = sums.get(k, 0.0) + float(np.sum(pw[i:i + chunk // 4] * v))
    means = sums
    c = n // 2
    marg = np.sum(f * wt, axis=tuple(a for a in range(n) if a != c))
    marg = marg / (np.sum(marg) * hs[c])
    return OracleResult(log_z, means, bmass, n_per_axis, axes[c], marg)


# --------------------------------------------------------------------------- #
# concentration rates


@dataclass
class RateEntry:
    epsilon: float
    delta: float
    p_hat: float
    se: float
    eps_log_p: float
    n_eff: float
    exceedances: int
    upper_bound: bool = False
    norm: str = "L2"


@dataclass
class RateCurve:
    entries: list

    def select(self, norm: str, delta: float) -> list:
        return [e for e in self.entries if e.norm == norm and abs(e.delta - delta) < 1e-12]

    def rows(self):
        for e in self.entries:
            yield dict(e.__dict__)


def exceedance(d: np.ndarray, delta: float, n_eff: float, eps: float, norm: str) -> RateEntry:
    d = np.asarray(d, dtype=float)
    k = int(np.sum(d >= delta))
    n = d.size
    if delta <= 0:
        return RateEntry(eps, delta, 1.0, 0.0, 0.0, n_eff, n, False, norm)
    n_eff = max(1.0, min(n_eff, n))
    if k == 0:
        # one-sided 95% upper bound for a zero count
        p = 1.0 - 0.05 ** (1.0 / n_eff)
        return RateEntry(eps, delta, p, p, eps * math.log(p), n_eff, 0, True, norm)
    p = k / n
    se = math.sqrt(p * (1 - p) / n_eff)
    return RateEntry(eps, delta, p, se, eps * math.log(p), n_eff, k, False, norm)


def sample_gibbs(spec: GibbsSpec, n_samples: int, seed: int = 0, n_chains: int = 100,
                 ffbs_prob: float = 0.5, burn_in: int = 50) -> ChainResult:
    steps = burn_in + int(math.ceil(n_samples / n_chains))
    cfg = ChainConfig(rho=0.5, n_steps=steps, burn_in=burn_in, seed=seed, n_chains=n_chains,
                      ffbs_prob=ffbs_prob)
    return run_chains(spec.node_model(), cfg)


def concentration_curve(specs: Sequence[GibbsSpec], deltas: dict, p: InstantonProfile,
                        n_samples: int = 10000, seed: int = 0, n_chains: int = 100) -> RateCurve:
    """p_hat(eps, delta) = mu(dist(u, M) >= delta) per norm; ``deltas`` maps norm -> list."""
    entries = []
    for i, spec in enumerate(specs):
        res = sample_gibbs(spec, n_samples, seed=seed + 1000 * i, n_chains=n_chains)
        U = res.flat()
        T, C = res.phi.shape
        fb = fermi_batch(U, spec.params, p)
        dists = {"L2": fb.dist_l2}
        if "Linf" in deltas:
            dists["Linf"] = dist_linf_batch(U, spec.params, p, fb.xi)
        for norm, dl in deltas.items():
            d = dists[norm]
            for delta in dl:
                ind = (d >= delta).astype(float).reshape(T, C)
                n_eff = effective_sample_size(ind) if 0 < ind.mean() < 1 else float(T * C)
                entries.append(exceedance(d, float(delta), n_eff, spec.params.epsilon, norm))
    return RateCurve(entries)


# --------------------------------------------------------------------------- #
# interface statistics (original scaling)


def smeared_crossing(values: np.ndarray, nodes: np.ndarray, halfwidth: float,
                     n_points: int = 200) -> np.ndarray:
    """First zero of the locally averaged path s -> (1/2d) int_{s-d}^{s+d} u."""
    s = np.linspace(nodes[0] + halfwidth, nodes[-1] - halfwidth, n_points)
    # antiderivative of the PL path at arbitrary points
    h = nodes[1] - nodes[0]
    cum = np.concatenate([np.zeros((values.shape[0], 1)),
                          np.cumsum(0.5 * h * (values[:, :-1] + values[:, 1:]), axis=1)], axis=1)

    def prim(x):
        k = np.clip(((x - nodes[0]) // h).astype(int), 0, len(nodes) - 2)
        t = x - nodes[k]
        a = values[:, k]
        b = values[:, k + 1]
        return cum[:, k] + a * t + 0.5 * (b - a) * t * t / h

    avg = (prim(s + halfwidth) - prim(s - halfwidth)) / (2 * halfwidth)
    ch = np.sign(avg[:, :-1]) * np.sign(avg[:, 1:]) <= 0
    has = ch.any(axis=1)
    k = np.argmax(ch, axis=1)
    a = avg[np.arange(len(avg)), k]
    b = avg[np.arange(len(avg)), k + 1]
    frac = np.where(a != b, a / np.where(a != b, a - b, 1.0), 0.0)
    out = s[k] + frac * (s[1] - s[0])
    return np.where(has, out, np.nan)


@dataclass
class InterfaceStats:
    xi: np.ndarray
    n_excluded: int
    ks_distance: float
    ks_pvalue: float
    trim: float
    occupancy: np.ndarray
    occupancy_se: np.ndarray
    n_obs_cells: int
    window: float
    mean: float
    var: float
    n_eff: float

    def interior_exchangeable(self, z: float = 3.0) -> bool:
        occ = self.occupancy[1:-1]
        se = self.occupancy_se[1:-1]
        pbar = occ.mean()
        return bool(np.all(np.abs(occ - pbar) <= z * np.maximum(se, 1e-300)))

    def to_dict(self) -> dict:
        return dict(n=int(self.xi.size), n_excluded=self.n_excluded, ks_distance=self.ks_distance,
                    ks_pvalue=self.ks_pvalue, trim=self.trim, mean=self.mean, var=self.var,
                    n_eff=self.n_eff, occupancy=self.occupancy.tolist(),
                    occupancy_se=self.occupancy_se.tolist(), n_obs_cells=self.n_obs_cells,
                    window=self.window)


def a_k_occupancy(values: np.ndarray, s_nodes: np.ndarray, n_obs: int, window: float):
    """Indicators of the sets A_k (k = 0..n_obs-1): left of the k-th observation point
    every value near -1, from it on every value near +1; points s_j = 2j/n_obs - 1."""
    sj = 2.0 * np.arange(1, n_obs) / n_obs - 1.0
    h = s_nodes[1] - s_nodes[0]
    k = np.clip(((sj - s_nodes[0]) // h).astype(int), 0, len(s_nodes) - 2)
    t = (sj - s_nodes[k]) / h
    u = values[:, k] * (1 - t) + values[:, k + 1] * t
    near_m = np.abs(u + 1.0) <= window
    near_p = np.abs(u - 1.0) <= window
    ind = np.zeros((values.shape[0], n_obs), dtype=bool)
    for k in range(n_obs):
        ind[:, k] = np.all(near_m[:, :k], axis=1) & np.all(near_p[:, k:], axis=1)
    return ind


def a_k_probabilities(spec: GibbsSpec, n_obs: int = 10, window: float = 0.5,
                      n_grid: int = 1200) -> np.ndarray:
    """P(A_k), k = 0..n_obs-1, by transfer-matrix quadrature (original scaling).

    Each observation point lies in one cell, so its window constraint is a factor
    of that cell's kernel and the chain recursion still applies.
    """
    m = spec.node_model()
    x = TransferGrid(m, 1.0, n_grid).x
    ncell = m.n_cells
    s = np.linspace(-1.0, 1.0, ncell + 1)
    h = s[1] - s[0]
    sj = 2.0 * np.arange(1, n_obs) / n_obs - 1.0
    cell = np.clip(((sj - s[0]) // h).astype(int), 0, ncell - 1)
    frac = (sj - s[cell]) / h
    vh = m.var_rate * m.h
    kernels = []
    for c in range(ncell):
        A = np.array([m.left]) if c == 0 else x
        B = np.array([m.right]) if c == ncell - 1 else x
        lt = -(B[None, :] - A[:, None]) ** 2 / (2 * vh) - m.cell_phi(A[:, None], B[None, :])
        kernels.append((A, B, lt))

    def log_mass(k):
        a = np.ones(1)
        total = 0.0
        for c, (A, B, lt) in enumerate(kernels):
            K = np.exp(lt - lt.max())
            if k is not None:
                for i in np.flatnonzero(cell == c):
                    u = (1 - frac[i]) * A[:, None] + frac[i] * B[None, :]
                    K = K * (np.abs(u - (-1.0 if i < k else 1.0)) <= window)
            a = a @ K
            sa = a.sum()
            if sa <= 0:
                return -np.inf
            a = a / sa
            total += math.log(sa) + lt.max()
        return total

    lz = log_mass(None)
    return np.exp(np.array([log_mass(k) for k in range(n_obs)]) - lz)


def interface_stats(values: np.ndarray, params: ScaleParams, p: InstantonProfile,
                    smear_halfwidth: Optional[float] = None, trim: float = 0.8,
                    n_obs: int = 10, window: float = 0.5, n_eff: Optional[float] = None,
                    n_chains: int = 1) -> InterfaceStats:
    """Interface location law of original-scaling node samples on [-1, 1].

    Occupancy standard errors use ``n_eff`` if given, else the per-cell ESS of
    the indicator traces when ``n_chains`` > 1 (rows ordered step-major), else
    the raw sample count.

    Node vectors coincide in both scalings, so the Fermi coordinate is computed on
    the rescaled grid and mapped back by s -> eps^gamma s.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    eg = params.epsilon ** params.gamma
    fb = fermi_batch(values, params, p)
    xi = fb.xi * eg
    s_orig = np.linspace(-1.0, 1.0, values.shape[1])
    if smear_halfwidth is None:
        smear_halfwidth = 0.5 / n_obs
    miss = ~np.isfinite(xi)
    if np.any(miss):
        xi[miss] = smeared_crossing(values[miss], s_orig, smear_halfwidth)
    ok = np.isfinite(xi)
    n_excl = int(np.sum(~ok))
    xs = xi[ok]
    inside = xs[np.abs(xs) <= trim]
    ks = stats.kstest(inside, stats.uniform(loc=-trim, scale=2 * trim).cdf)
    ind = a_k_occupancy(values, s_orig, n_obs, window)
    n = values.shape[0]
    occ = ind.mean(axis=0)
    if n_eff is not None:
        ne_k = np.full(n_obs, float(n_eff))
    elif n_chains > 1 and n % n_chains == 0:
        # per-cell ESS of the indicator traces; rows are ordered (step, chain)
        tr = ind.reshape(n // n_chains, n_chains, n_obs).astype(float)
        ne_k = np.array([effective_sample_size(tr[..., k]) if 0 < occ[k] < 1 else float(n)
                         for k in range(n_obs)])
    else:
        ne_k = np.full(n_obs, float(n))
    ne = float(ne_k.min())
    se = np.sqrt(occ * (1 - occ) / ne_k)
    return InterfaceStats(xs, n_excl, float(ks.statistic), float(ks.pvalue), trim, occ, se,
                          n_obs, window, float(xs.mean()), float(xs.var()), ne)


def reflect(values: np.ndarray) -> np.ndarray:
    """u(s) -> -u(-s) on node vectors."""
    return -np.asarray(values)[..., ::-1]
