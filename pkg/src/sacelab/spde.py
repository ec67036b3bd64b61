"""Stochastic Allen-Cahn equation on [-1, 1] with Dirichlet data -1, +1.

The default equation is

    du = (u'' - eps^(-2 gamma) F'(u)) dt + sqrt(2) eps^((1-gamma)/2) dW,

whose invariant law is the Gibbs measure exp(-int u'^2 / (2 eps^(1-gamma))
- eps^(-1-gamma) int F) on paths with these boundary values. ``mode='literal'``
uses drift eps^(-1-gamma) F' and noise eps^((1-gamma)/2) instead.

Space: finite differences with n_x interior nodes. Time: theta-scheme in the
Laplacian (theta=1 backward Euler, theta=1/2 Crank-Nicolson), explicit reaction.
Many independent replicas are advanced together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg.lapack import dgttrf, dgttrs

from .errors import ConfigError, DomainError, InstabilityError, InvalidParameterError, NumericError
from .grid import ScaleParams, gl_unit, kinetic, l2_sq_pl
from .instanton import InstantonProfile
from .rng import stream


@dataclass(frozen=True)
class SPDEConfig:
    epsilon: float
    gamma: float
    n_x: int = 63
    dt: Optional[float] = None
    t_end: float = 10.0
    seed: int = 0
    noise_on: bool = True
    potential: object = None
    theta: float = 1.0
    mode: str = "consistent"          # or "literal"
    reaction: str = "nodal"           # or "pl": exact gradient of the piecewise-linear potential
    n_replicas: int = 1
    snapshot_stride: int = 0          # steps between stored snapshots (0: none)
    observe_stride: int = 10
    stability_margin: float = 0.5

    def __post_init__(self):
        errs = []
        if not self.epsilon > 0:
            errs.append("epsilon must be positive")
        if self.n_x < 3:
            errs.append("n_x must be at least 3")
        if self.dt is not None and not self.dt > 0:
            errs.append("dt must be positive")
        if not self.t_end > 0:
            errs.append("t_end must be positive")
        if not (0.5 <= self.theta <= 1.0):
            errs.append("theta must lie in [1/2, 1]")
        if self.mode not in ("consistent", "literal"):
            errs.append(f"unknown mode {self.mode!r}")
        if self.reaction not in ("nodal", "pl"):
            errs.append(f"unknown reaction {self.reaction!r}")
        if self.dt is not None and self.dt > self.max_dt():
            errs.append(f"dt = {self.dt:g} exceeds h^2 * stability margin = {self.max_dt():g}")
        if errs:
            raise ConfigError(errs)

    @property
    def h(self) -> float:
        return 2.0 / (self.n_x + 1)

    @property
    def step_dt(self) -> float:
        return self.h**2 / 4.0 if self.dt is None else self.dt

    def max_dt(self) -> float:
        return self.h**2 * self.stability_margin

    @property
    def x(self) -> np.ndarray:
        return -1.0 + self.h * np.arange(1, self.n_x + 1)

    @property
    def drift_coeff(self) -> float:
        e, g = self.epsilon, self.gamma
        return e ** (-2 * g) if self.mode == "consistent" else e ** (-1 - g)

    @property
    def noise_amp(self) -> float:
        e, g = self.epsilon, self.gamma
        a = e ** ((1 - g) / 2)
        return math.sqrt(2.0) * a if self.mode == "consistent" else a

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.step_dt))

    def scale_params(self) -> ScaleParams:
        """Rescaled grid with the same nodes (needs n_x odd)."""
        if self.n_x % 2 == 0:
            raise DomainError("n_x must be odd to match a symmetric 2N-cell grid")
        return ScaleParams(self.epsilon, self.gamma, N=(self.n_x + 1) // 2)


@dataclass
class FieldState:
    time: float
    values: np.ndarray        # (n_x,) or (replicas, n_x) interior values

    def full(self) -> np.ndarray:
        v = np.atleast_2d(self.values)
        ones = np.ones((v.shape[0], 1))
        return np.concatenate([-ones, v, ones], axis=1)


def _zero_F(u):
    return np.zeros_like(u)


class _Stepper:
    def __init__(self, cfg: SPDEConfig):
        self.cfg = cfg
        n, h, dt, th = cfg.n_x, cfg.h, cfg.step_dt, cfg.theta
        r = dt / h**2
        self.r = r
        dl = -th * r * np.ones(n - 1)
        d = (1 + 2 * th * r) * np.ones(n)
        self.lu = dgttrf(dl.copy(), d.copy(), dl.copy())
        if self.lu[-1] != 0:
            raise ConfigError([f"singular implicit system (info={self.lu[-1]})"])
        self.lift = np.zeros(n)
        self.lift[0], self.lift[-1] = -r, r     # boundary values -1, +1 times dt/h^2
        pot = cfg.potential
        self.F = _zero_F if pot is None else pot.F
        self.dF = _zero_F if pot is None else pot.dF
        self.t, self.w = gl_unit(5)
        self.c = cfg.drift_coeff

    def reaction(self, U):
        """(replicas, n) -> drift contribution per node (without the minus sign)."""
        if self.cfg.reaction == "nodal":
            return self.c * self.dF(U)
        # gradient of (1/h) * sum_cells h int_0^1 F(a + t (b - a)) dt w.r.t. node values
        ones = np.ones((U.shape[0], 1))
        full = np.concatenate([-ones, U, ones], axis=1)
        a = full[:, :-1, None]
        b = full[:, 1:, None]
        fp = self.dF(a + self.t * (b - a))
        left = np.sum(self.w * fp * (1 - self.t), axis=-1)    # d/da of cell integral
        right = np.sum(self.w * fp * self.t, axis=-1)         # d/db
        return self.c * (left[:, 1:] + right[:, :-1])

    def apply(self, U, noise):
        cfg = self.cfg
        th, r, dt = cfg.theta, self.r, cfg.step_dt
        rhs = U.copy()
        if th < 1.0:
            lap = -2 * U
            lap[:, 1:] += U[:, :-1]
            lap[:, :-1] += U[:, 1:]
            rhs += (1 - th) * r * lap
        rhs += self.lift
        rhs -= dt * self.reaction(U)
        if noise is not None:
            rhs += noise
        dl, d, du, du2, ipiv, _ = self.lu
        out, info = dgttrs(dl, d, du, du2, ipiv, rhs.T.copy())
        if info != 0:
            raise NumericError(f"tridiagonal solve failed (info={info})")
        return out.T


def step(state: FieldState, cfg: SPDEConfig, rng, stepper: Optional[_Stepper] = None) -> FieldState:
    """One time step (accepts one or several replicas)."""
    if state.time >= cfg.t_end:
        raise DomainError("state time has reached t_end")
    st = stepper or _Stepper(cfg)
    U = np.atleast_2d(state.values)
    noise = None
    if cfg.noise_on:
        noise = cfg.noise_amp * math.sqrt(cfg.step_dt / cfg.h) * rng.standard_normal(U.shape)
    V = st.apply(U, noise)
    if not np.all(np.isfinite(V)) or np.max(np.abs(V)) > 10:
        raise InstabilityError(f"field blow-up at t = {state.time + cfg.step_dt:.6g}; reduce dt")
    vals = V[0] if np.ndim(state.values) == 1 else V
    return FieldState(state.time + cfg.step_dt, vals)


def stationary_profile(cfg: SPDEConfig, tol: float = 1e-13, max_iter: int = 100) -> np.ndarray:
    """Discrete standing wave: Delta_h u = c F'(u) with u = -1, +1 at the ends (Newton)."""
    n, h = cfg.n_x, cfg.h
    st = _Stepper(cfg)
    pot = cfg.potential
    u = np.tanh(cfg.x * cfg.epsilon ** (-cfg.gamma))
    for _ in range(max_iter):
        full = np.concatenate([[-1.0], u, [1.0]])
        lap = (full[:-2] - 2 * full[1:-1] + full[2:]) / h**2
        res = lap - st.reaction(u[None])[0]
        if pot is None:
            d2 = np.zeros(n)
        else:
            if cfg.reaction != "nodal":
                raise InvalidParameterError("stationary_profile supports the nodal reaction only")
            d2 = st.c * pot.d2F(u)
        dl = np.ones(n - 1) / h**2
        dd = -2 / h**2 - d2
        lu = dgttrf(dl.copy(), dd.copy(), dl.copy())
        delta, info = dgttrs(*lu[:5], -res)
        if info != 0:
            raise NumericError("Newton solve failed")
        u = u + delta
        if np.max(np.abs(delta)) < tol:
            return u
    raise NumericError("stationary profile Newton iteration did not converge")


def preflight(cfg: SPDEConfig, min_nodes: int = 8) -> int:
    """Nodes across |u| < 0.9 of the standing wave; raises if fewer than ``min_nodes``."""
    # u'' = c F'(u) has the standing wave tanh(sqrt(c) x) for the quartic well
    width = 2 * math.atanh(0.9) / math.sqrt(cfg.drift_coeff)
    n = int(width / cfg.h)
    if n < min_nodes:
        raise ConfigError([f"interface resolved by {n} < {min_nodes} nodes; increase n_x"])
    return n


# --------------------------------------------------------------------------- #
# observables and runs


def field_observables(full: np.ndarray, cfg: SPDEConfig, p: Optional[InstantonProfile] = None) -> dict:
    """Observables of full node vectors (ends included), comparable with the Gibbs sampler."""
    h = cfg.h
    pot = cfg.potential
    Fint = 0.0
    if pot is not None:
        t, w = gl_unit(5)
        a, b = full[:, :-1, None], full[:, 1:, None]
        Fint = h * np.sum(w * pot.F(a + t * (b - a)), axis=(-2, -1))
    mid = (full.shape[1] - 1) // 2
    q = (full.shape[1] - 1) // 4
    out = {
        "l2sq": l2_sq_pl(full, h),
        "u_center": full[:, mid],
        "u_center_sq": full[:, mid] ** 2,
        "u_quarter_sq": full[:, q] ** 2,
        "u_cross": full[:, q] * full[:, mid],
        "lyapunov": kinetic(full, h) + cfg.drift_coeff * Fint,
    }
    if p is not None and cfg.n_x % 2 == 1:
        from .energy import fermi_batch
        fb = fermi_batch(full, cfg.scale_params(), p)
        out["dist_L2"] = fb.dist_l2
        out["xi_hat"] = fb.xi * cfg.epsilon ** cfg.gamma
    return out


@dataclass
class TrajectorySummary:
    times: np.ndarray
    traces: dict                       # name -> (n_obs_times, replicas)
    snapshots: list = field(default_factory=list)
    snapshot_times: list = field(default_factory=list)
    final: Optional[FieldState] = None

    def window_means(self, name: str, frac=(0.25, 0.5)):
        tr = self.traces[name]
        T = tr.shape[0]
        seg = tr[int(frac[0] * T): int(frac[1] * T)]
        return float(seg.mean()), seg

    def stabilized(self, name: str, z: float = 3.0) -> bool:
        """Second-quarter vs last-quarter window means agree within z standard errors."""
        from .gibbs import effective_sample_size
        tr = self.traces[name]
        T = tr.shape[0]
        a = tr[T // 4: T // 2]
        b = tr[3 * T // 4:]
        se = math.sqrt(a.var() / effective_sample_size(a) + b.var() / effective_sample_size(b))
        return abs(a.mean() - b.mean()) <= z * max(se, 1e-300)


def run(cfg: SPDEConfig, init: Optional[np.ndarray] = None, p: Optional[InstantonProfile] = None,
        burn_in: float = 0.0) -> TrajectorySummary:
    """Integrate to t_end; observables every ``observe_stride`` steps after ``burn_in``."""
    rng = stream(cfg.seed, 11)
    st = _Stepper(cfg)
    R = cfg.n_replicas
    if init is None:
        U = np.tile(cfg.x, (R, 1))
    else:
        U = np.array(np.broadcast_to(init, (R, cfg.n_x)), dtype=float)
    state = FieldState(0.0, U)
    times, traces, snaps, snap_t = [], {}, [], []
    amp = cfg.noise_amp * math.sqrt(cfg.step_dt / cfg.h)
    for k in range(1, cfg.n_steps + 1):
        noise = amp * rng.standard_normal(U.shape) if cfg.noise_on else None
        U = st.apply(U, noise)
        t = k * cfg.step_dt
        if not np.all(np.isfinite(U)) or np.max(np.abs(U)) > 10:
            raise InstabilityError(f"field blow-up at t = {t:.6g}; reduce dt")
        if t >= burn_in and k % cfg.observe_stride == 0:
            ones = np.ones((R, 1))
            obs = field_observables(np.concatenate([-ones, U, ones], axis=1), cfg, p)
            for name, v in obs.items():
                traces.setdefault(name, []).append(np.asarray(v, dtype=float))
            times.append(t)
        if cfg.snapshot_stride and k % cfg.snapshot_stride == 0:
            snaps.append(U.copy())
            snap_t.append(t)
    return TrajectorySummary(np.array(times), {k: np.array(v) for k, v in traces.items()},
                             snaps, snap_t, FieldState(cfg.n_steps * cfg.step_dt, U))


def lyapunov(full: np.ndarray, cfg: SPDEConfig, exact_pl: bool = False) -> np.ndarray:
    """Discrete energy whose gradient flow is the noise-free scheme."""
    h = cfg.h
    pot = cfg.potential
    if pot is None:
        return kinetic(full, h)
    if cfg.reaction == "pl" or exact_pl:
        t, w = gl_unit(5)
        a, b = full[..., :-1, None], full[..., 1:, None]
        Fint = h * np.sum(w * pot.F(a + t * (b - a)), axis=(-2, -1))
    else:
        Fint = h * np.sum(pot.F(full[..., 1:-1]), axis=-1)
    return kinetic(full, h) + cfg.drift_coeff * Fint


@dataclass
class StationarityResult:
    z: dict
    spde_mean: dict
    spde_se: dict
    gibbs_mean: dict
    gibbs_se: dict

    @property
    def max_abs_z(self) -> float:
        return max(abs(v) for v in self.z.values())

    def to_dict(self) -> dict:
        return dict(z=self.z, spde_mean=self.spde_mean, spde_se=self.spde_se,
                    gibbs_mean=self.gibbs_mean, gibbs_se=self.gibbs_se)


def stationarity_check(cfg: SPDEConfig, gibbs_values: np.ndarray, gibbs_params: ScaleParams,
                       summary: Optional[TrajectorySummary] = None,
                       p: Optional[InstantonProfile] = None, gibbs_shape=None,
                       burn_in: float = 1.0) -> StationarityResult:
    """z-scores of SPDE long-run means against Gibbs sampler means.

    ``gibbs_values`` are full node vectors on the original grid; if their grid
    differs from the SPDE grid they are linearly interpolated onto it.
    ``gibbs_shape`` = (T, chains) enables autocorrelation-aware standard errors.
    """
    from .gibbs import effective_sample_size
    if abs(gibbs_params.epsilon - cfg.epsilon) > 1e-12 or abs(gibbs_params.gamma - cfg.gamma) > 1e-12:
        raise DomainError(f"scaling mismatch: SPDE (eps={cfg.epsilon}, gamma={cfg.gamma}) vs "
                          f"Gibbs (eps={gibbs_params.epsilon}, gamma={gibbs_params.gamma})")
    G = np.asarray(gibbs_values, dtype=float)
    if G.shape[1] != cfg.n_x + 2:
        xs = np.linspace(-1, 1, G.shape[1])
        xt = np.linspace(-1, 1, cfg.n_x + 2)
        G = np.stack([np.interp(xt, xs, row) for row in G])
    if summary is None:
        summary = run(cfg, p=p, burn_in=burn_in)
    gobs = field_observables(G, cfg, p)
    z, sm, sse, gm, gse = {}, {}, {}, {}, {}
    for name, tr in summary.traces.items():
        if name not in gobs or name == "xi_hat" or name == "lyapunov":
            continue
        if not np.all(np.isfinite(tr)):
            continue
        e_s = effective_sample_size(tr)
        gv = np.asarray(gobs[name], dtype=float)
        gv = gv[np.isfinite(gv)]
        if gibbs_shape is not None and gv.size == gibbs_shape[0] * gibbs_shape[1]:
            e_g = effective_sample_size(gv.reshape(gibbs_shape))
        else:
            e_g = gv.size
        sm[name], gm[name] = float(tr.mean()), float(gv.mean())
        sse[name] = float(tr.std() / math.sqrt(e_s))
        gse[name] = float(gv.std() / math.sqrt(e_g))
        se = math.hypot(sse[name], gse[name])
        z[name] = (sm[name] - gm[name]) / se if se > 0 else 0.0
    return StationarityResult(z, sm, sse, gm, gse)
