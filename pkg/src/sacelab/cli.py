"""Command-line experiment runner.

Every subcommand resolves a validated ExperimentConfig (config file, then
environment, then flags), runs the owning module, writes CSV/JSON/SVG outputs
atomically and finishes with ``manifest.json``.  Work is split into a fixed
number of tasks with derived seeds, so results do not depend on the number of
worker processes.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from typing import Callable, Optional

import numpy as np

from . import __version__
from . import figures
from .config import ExperimentConfig, env_overrides, parse_config, tomllib, validate_dict
from .errors import ConfigError, DomainError, InvalidParameterError, InvalidPotentialError, SaceError
from .io import RunManifest, _atomic_write_bytes, write_csv, write_json, write_manifest
from .rng import derive_seed, stream

log = logging.getLogger("sacelab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 2, 3, 4
CONFIG_ERRORS = (ConfigError, InvalidParameterError, DomainError, InvalidPotentialError)


class AcceptanceFailure(SaceError):
    """Raised by ``verify`` when at least one invariant fails."""


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _map(fn: Callable, tasks: list, workers: int) -> list:
    """Ordered map over task descriptors, in-process or over a process pool."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


def _split(total: int, parts: int) -> list[int]:
    q, r = divmod(total, parts)
    return [q + (1 if i < r else 0) for i in range(parts) if q + (1 if i < r else 0) > 0]


def _cfg(d: dict) -> ExperimentConfig:
    cfg, errs = validate_dict(d)
    if errs:
        raise ConfigError(errs)
    return cfg


def _profile(cfg: ExperimentConfig):
    from .instanton import solve_profile
    s = cfg.section("instanton")
    return solve_profile(cfg.potential_spec(), tol=s["tol"], n_tab=s["n_tab"])


def _epsilons(cfg: ExperimentConfig, section: str) -> list[float]:
    eps = cfg.section(section).get("epsilons") or []
    return [float(e) for e in eps] if eps else [float(cfg.epsilon)]


def _gibbs(cfg: ExperimentConfig, eps: float, scaling: str):
    from .gibbs import gibbs_spec
    N = None if cfg.N in (None, "auto") else int(cfg.N)
    return gibbs_spec(cfg.potential_spec(), eps, cfg.gamma, cfg.gamma1, cfg.gamma2, N, scaling)


# --------------------------------------------------------------------------- #
# instanton / spectrum


def run_instanton(cfg: ExperimentConfig, out: str) -> dict:
    from .instanton import closed_form_error, surface_tension_check
    p = _profile(cfg)
    s = np.concatenate([-p.s_tab[:0:-1], p.s_tab])
    s = s[np.abs(s) <= p.T_tab]
    m, dm = p.m(s), p.dm(s)
    res = p.ode_residual(s)
    write_csv(os.path.join(out, "instanton.csv"), "sacelab.instanton/1", ["s", "m", "dm", "residual"],
              zip(s, m, dm, res))
    dm2, cstar = surface_tension_check(p)
    summary = {"potential": p.spec.name, "c1": p.c1, "c2": p.c2, "T_tab": p.T_tab,
               "C_star": cstar, "dm_norm_sq": dm2, "C_star_gap": abs(dm2 - cstar),
               "max_ode_residual": float(np.max(np.abs(res)))}
    ref = None
    if p.closed_form is not None:
        summary["closed_form_sup_error"] = closed_form_error(p, cfg.section("instanton")["half_width"])
        ref = p.closed_form(s)
    write_json(os.path.join(out, "instanton.json"), summary)
    w = np.abs(s) <= 8
    figures.instanton_overlay(s[w], m[w], os.path.join(out, "instanton.svg"),
                              None if ref is None else ref[w])
    return summary


def run_spectrum(cfg: ExperimentConfig, out: str) -> dict:
    from .spectrum import landscape_constants, spectral_report
    p = _profile(cfg)
    sec = cfg.section("spectrum")
    rep = spectral_report(p, sec["h"], sec["T"])
    lc = landscape_constants(p, sec["delta1"])
    summary = rep.to_dict()
    summary.update(c0_tilde=lc.c0_tilde, c4_tilde=lc.c4_tilde, C3=lc.C3, delta1=lc.delta1,
                   c_hat0=lc.c_hat0, c_hat4=lc.c_hat4)
    write_json(os.path.join(out, "spectrum.json"), summary)
    write_csv(os.path.join(out, "eigvec.csv"), "sacelab.eigvec/1", ["x", "v0", "v1", "dm"],
              zip(rep.grid, rep.eigvec0, rep.eigvec1, p.dm(rep.grid)))
    return summary


# --------------------------------------------------------------------------- #
# Gaussian reference


def _bridge_task(task) -> dict:
    from .gaussian import (BridgeSpec, MassiveFieldSpec, default_r_grid, discretization_tails,
                           massive_h1_tail, sample_bridge_nodes)
    cfgd, t, n, save = task
    cfg = _cfg(cfgd)
    sec = cfg.section("bridge")
    spec = BridgeSpec(cfg.scale_params(), cfg.scaling)
    rng = stream(cfg.seed, 21, t)
    reps = discretization_tails(spec, n, sec["M"], default_r_grid(spec), rng)
    mspec = MassiveFieldSpec(spec.params, sec["kappa"])
    reps += [massive_h1_tail(mspec, n, rng=rng, form=f) for f in ("root", "literal", "squared")]
    X = sample_bridge_nodes(spec, rng, n)[:, 1:-1]
    return {"reports": reps, "mean_sq": reps[0].mean_sq, "n": n, "sum": X.sum(axis=0),
            "outer": X.T @ X, "nodes": X if save else None}


def run_sample_bridge(cfg: ExperimentConfig, out: str) -> dict:
    from .gaussian import BridgeSpec, ConcentrationReport, expected_disc_l2_sq
    sec = cfg.section("bridge")
    spec = BridgeSpec(cfg.scale_params(), cfg.scaling)
    cfgd = cfg.to_dict()
    counts = _split(sec["n_samples"], cfg.tasks)
    parts = _map(_bridge_task, [(cfgd, t, n, sec["save_nodes"]) for t, n in enumerate(counts)],
                 cfg.workers)
    n = sum(q["n"] for q in parts)
    merged = []
    for j, r0 in enumerate(parts[0]["reports"]):
        trials = [q["reports"][j].n_trials for q in parts]
        emp = sum(q["reports"][j].empirical_p * w for q, w in zip(parts, trials)) / sum(trials)
        merged.append(ConcentrationReport(r0.bound_name, r0.r_grid, emp, r0.theoretical_p, n,
                                          r0.centering, sum(trials)))
    mean = sum(q["sum"] for q in parts) / n
    cov = sum(q["outer"] for q in parts) / n - np.outer(mean, mean)
    theo = spec.node_covariance()
    c = spec.params.N - 1
    mean_sq = sum(q["mean_sq"] * q["n"] for q in parts) / n
    summary = {
        "N": spec.params.N, "epsilon": spec.params.epsilon, "gamma": spec.params.gamma,
        "n_samples": n, "max_abs_cov_error": float(np.max(np.abs(cov - theo))),
        "max_abs_mean_error": float(np.max(np.abs(mean - spec.mean[1:-1]))),
        "var_center": float(cov[c, c]), "var_center_theory": float(theo[c, c]),
        "disc_l2_sq_mean": mean_sq, "disc_l2_sq_theory": expected_disc_l2_sq(spec),
        "dominated": {r.bound_name: r.dominated for r in merged},
    }
    write_json(os.path.join(out, "bridge.json"), summary)
    rows = [(r["bound"], r["r"], r["empirical_p"], r["theoretical_p"], r["se"], r["centering"],
             r["n_samples"]) for rep in merged for r in rep.rows()]
    write_csv(os.path.join(out, "concentration.csv"), "sacelab.concentration/1",
              ["bound", "r", "empirical_p", "theoretical_p", "se", "centering", "n_samples"], rows)
    if sec["save_nodes"]:
        X = np.concatenate([q["nodes"] for q in parts])
        write_csv(os.path.join(out, "nodes.csv"), "sacelab.nodes/1",
                  [f"u{k}" for k in range(1, X.shape[1] + 1)], X)
    figures.bound_domination(merged, os.path.join(out, "concentration.svg"))
    return summary


# --------------------------------------------------------------------------- #
# Gibbs sampling


def _chain_task(task):
    from .gibbs import ChainConfig, run_chains
    cfgd, t, chains, eps, scaling = task
    cfg = _cfg(cfgd)
    ch = cfg.section("chain")
    spec = _gibbs(cfg, eps, scaling)
    cc = ChainConfig(rho=ch["rho"], n_steps=ch["n_steps"], burn_in=ch["burn_in"], seed=cfg.seed,
                     adapt=ch["adapt"], target_acceptance=ch["target_acceptance"], n_chains=chains,
                     thin=ch["thin"], ffbs_prob=ch["ffbs_prob"])
    res = run_chains(spec.node_model(), cc, rng=stream(cfg.seed, 31, t))
    return {"full": res.full(), "phi": res.phi, "acc": res.accept_pcn, "acc_ffbs": res.accept_ffbs,
            "rho": res.rho, "chains": chains}


def _run_gibbs_tasks(cfg: ExperimentConfig, eps: float, scaling: str):
    cfgd = cfg.to_dict()
    ch = cfg.section("chain")
    counts = _split(ch["n_chains"], cfg.tasks)
    parts = _map(_chain_task, [(cfgd, t, c, eps, scaling) for t, c in enumerate(counts)],
                 cfg.workers)
    full = np.concatenate([q["full"] for q in parts], axis=1)
    phi = np.concatenate([q["phi"] for q in parts], axis=1)
    w = np.array([q["chains"] for q in parts], dtype=float)

    def wmean(key):
        v = np.array([q[key] for q in parts], dtype=float)
        return float(np.sum(v * w) / w.sum()) if np.all(np.isfinite(v)) else float("nan")

    return full, phi, {"accept_pcn": wmean("acc"), "accept_ffbs": wmean("acc_ffbs"),
                       "rho": wmean("rho")}


def run_sample_gibbs(cfg: ExperimentConfig, out: str) -> dict:
    from .gibbs import effective_sample_size, observables
    scaling = cfg.scaling
    spec = _gibbs(cfg, cfg.epsilon, scaling)
    p = _profile(cfg)
    full, phi, acc = _run_gibbs_tasks(cfg, cfg.epsilon, scaling)
    T, C, _ = full.shape
    obs = observables(spec, full.reshape(T * C, -1), p)
    means, ses, esss = {}, {}, {}
    for k, v in obs.items():
        v = np.asarray(v, dtype=float).reshape(T, C)
        ok = np.isfinite(v)
        e = effective_sample_size(np.where(ok, v, np.nanmean(v)))
        means[k] = float(np.nanmean(v))
        ses[k] = float(np.nanstd(v) / math.sqrt(max(e, 1.0)))
        esss[k] = e
    summary = {"epsilon": cfg.epsilon, "gamma": cfg.gamma, "N": spec.params.N, "scaling": scaling,
               "n_kept": T * C, "n_steps_kept": T, "n_chains": C, **acc,
               "effective_sample_size": min(esss.values()), "means": means, "ses": ses,
               "ess": esss}
    write_json(os.path.join(out, "gibbs.json"), summary)
    keys = list(obs)
    step = np.repeat(np.arange(T), C)
    chain = np.tile(np.arange(C), T)
    write_csv(os.path.join(out, "traces.csv"), "sacelab.traces/1", ["step", "chain"] + keys,
              zip(step, chain, *(np.asarray(obs[k]) for k in keys)))
    xi = np.asarray(obs["xi_hat"], dtype=float)
    if scaling == "rescaled":
        xi = xi * cfg.epsilon ** cfg.gamma
    figures.xi_histogram(xi, cfg.section("interface")["trim"], os.path.join(out, "xi_hist.svg"),
                         title=f"eps={cfg.epsilon:g}")
    return summary


def _logz_task(task):
    from .gibbs import ChainConfig, default_ladder, estimate_logZ, transfer_logZ
    cfgd, i, eps = task
    cfg = _cfg(cfgd)
    ch, ld = cfg.section("chain"), cfg.section("ladder")
    spec = _gibbs(cfg, eps, "rescaled")
    cc = ChainConfig(rho=ch["rho"], n_steps=ch["n_steps"], burn_in=ch["burn_in"],
                     seed=derive_seed(cfg.seed, 51, i), adapt=ch["adapt"],
                     target_acceptance=ch["target_acceptance"], n_chains=ch["n_chains"],
                     thin=ch["thin"], ffbs_prob=ch["ffbs_prob"])
    z = estimate_logZ(spec, default_ladder(ld["n_rungs"], ld["power"]), cc)
    zt = transfer_logZ(spec)
    return {"epsilon": eps, "N": spec.params.N, "log_z": z.log_z, "se": z.se,
            "eps_log_z": eps * z.log_z, "eps_se": eps * z.se, "transfer_log_z": zt,
            "eps_transfer_log_z": eps * zt, "rungs": z.to_dict()}


def run_logz(cfg: ExperimentConfig, out: str) -> dict:
    eps = sorted(_epsilons(cfg, "ladder"), reverse=True)
    cfgd = cfg.to_dict()
    rows = _map(_logz_task, [(cfgd, i, e) for i, e in enumerate(eps)], cfg.workers)
    vals = [r["eps_log_z"] for r in rows]
    from .potential import surface_tension
    cstar = 0.0 if cfg.potential == "zero" else surface_tension(cfg.potential_spec())
    summary = {"gamma": cfg.gamma, "rows": rows, "C_star": cstar,
               "monotone_nondecreasing": bool(np.all(np.diff(vals) >= 0)) if len(vals) > 1 else True,
               "terminal_gap": abs(vals[-1] + cstar)}
    write_json(os.path.join(out, "logz.json"), summary)
    write_csv(os.path.join(out, "logz.csv"), "sacelab.logz/1",
              ["epsilon", "N", "log_z", "se", "eps_log_z", "transfer_log_z"],
              [(r["epsilon"], r["N"], r["log_z"], r["se"], r["eps_log_z"], r["transfer_log_z"])
               for r in rows])
    return summary


def _rates_task(task):
    from .gibbs import concentration_curve
    cfgd, i, eps = task
    cfg = _cfg(cfgd)
    rs, ld, ch = cfg.section("rates"), cfg.section("ladder"), cfg.section("chain")
    deltas = {"L2": rs["delta_L2"], "Linf": rs["delta_Linf"]}
    deltas = {k: [float(x) for x in v] for k, v in deltas.items() if v}
    curve = concentration_curve([_gibbs(cfg, eps, "rescaled")], deltas, _profile(cfg),
                                ld["n_samples"], derive_seed(cfg.seed, 61, i), ch["n_chains"])
    return curve.entries


def run_rates(cfg: ExperimentConfig, out: str) -> dict:
    from .spectrum import landscape_constants
    eps = sorted(_epsilons(cfg, "ladder"), reverse=True)
    cfgd = cfg.to_dict()
    parts = _map(_rates_task, [(cfgd, i, e) for i, e in enumerate(eps)], cfg.workers)
    entries = [e for part in parts for e in part]
    c_hat0 = float(landscape_constants(_profile(cfg), cfg.section("spectrum")["delta1"]).c_hat0)
    checks = []
    for norm in ("L2", "Linf"):
        for d in sorted({e.delta for e in entries if e.norm == norm}):
            ys = [e.eps_log_p for e in sorted((e for e in entries
                                               if e.norm == norm and e.delta == d),
                                              key=lambda e: -e.epsilon)]
            checks.append({"norm": norm, "delta": d, "eps_log_p": ys,
                           "strictly_decreasing": bool(np.all(np.diff(ys) < 0)),
                           "terminal": ys[-1], "reference": -0.5 * c_hat0 * d * d,
                           "terminal_below_reference": bool(ys[-1] <= -0.5 * c_hat0 * d * d)})
    summary = {"gamma": cfg.gamma, "c_hat0": c_hat0, "checks": checks,
               "entries": [dict(e.__dict__) for e in entries]}
    write_json(os.path.join(out, "rates.json"), summary)
    cols = ["epsilon", "norm", "delta", "p_hat", "se", "eps_log_p", "n_eff", "exceedances",
            "upper_bound"]
    write_csv(os.path.join(out, "rates.csv"), "sacelab.rates/1", cols,
              [[getattr(e, c) for c in cols] for e in entries])
    figures.rate_scatter(entries, c_hat0, os.path.join(out, "rates.svg"))
    return summary


def _interface_task(task):
    from .gibbs import effective_sample_size, interface_stats, sample_gibbs
    cfgd, i, eps = task
    cfg = _cfg(cfgd)
    sec, ch = cfg.section("interface"), cfg.section("chain")
    spec = _gibbs(cfg, eps, "original")
    res = sample_gibbs(spec, sec["n_samples"], derive_seed(cfg.seed, 71, i), ch["n_chains"],
                       ffbs_prob=1.0)
    U = res.flat()
    T, C = res.phi.shape
    st = interface_stats(U, spec.params, _profile(cfg), trim=sec["trim"], n_obs=sec["n_obs"],
                         window=sec["window"], n_chains=C)
    ess = effective_sample_size(res.phi)
    d = st.to_dict()
    d.update(epsilon=eps, N=spec.params.N, ess_phi=ess, exchangeable=st.interior_exchangeable(),
             accept_ffbs=res.accept_ffbs)
    return d, st.xi


def run_interface(cfg: ExperimentConfig, out: str) -> dict:
    eps = sorted(_epsilons(cfg, "interface"), reverse=True)
    cfgd = cfg.to_dict()
    parts = _map(_interface_task, [(cfgd, i, e) for i, e in enumerate(eps)], cfg.workers)
    rows = [d for d, _ in parts]
    ks = [d["ks_distance"] for d in rows]
    summary = {"gamma": cfg.gamma, "rows": rows,
               "ks_strictly_decreasing": bool(np.all(np.diff(ks) < 0)) if len(ks) > 1 else True}
    write_json(os.path.join(out, "interface.json"), summary)
    write_csv(os.path.join(out, "xi.csv"), "sacelab.xi/1", ["epsilon", "xi"],
              [(e, x) for e, (_, xi) in zip(eps, parts) for x in xi])
    for e, (d, xi) in zip(eps, parts):
        figures.xi_histogram(xi, d["trim"], os.path.join(out, f"xi_hist_eps{e:g}.svg"),
                             d["ks_distance"], d["ks_pvalue"], title=f"eps={e:g}, N={d['N']}")
    return summary


# --------------------------------------------------------------------------- #
# SPDE


def spde_config(cfg: ExperimentConfig):
    from .spde import SPDEConfig
    s = cfg.section("spde")
    return SPDEConfig(cfg.epsilon, cfg.gamma, n_x=s["nx"], dt=s["dt"] or None, t_end=s["t_end"],
                      seed=cfg.seed, noise_on=s["noise"], potential=cfg.potential_spec(),
                      theta=s["theta"], mode=s["mode"], reaction=s["reaction"],
                      n_replicas=s["replicas"], snapshot_stride=s["snapshot_stride"],
                      observe_stride=s["observe_stride"])


def run_spde(cfg: ExperimentConfig, out: str) -> dict:
    from .gibbs import effective_sample_size
    from .spde import preflight, run
    sc = spde_config(cfg)
    p = _profile(cfg) if cfg.potential != "zero" else None
    preflight(sc) if sc.potential is not None and cfg.potential != "zero" else None
    sm = run(sc, p=p)
    obs = {}
    for name, tr in sm.traces.items():
        half = tr[tr.shape[0] // 2:]
        if half.size == 0 or not np.all(np.isfinite(half)):
            obs[name] = {"mean": float(np.nanmean(half)) if half.size else float("nan")}
            continue
        e = effective_sample_size(half) if half.shape[0] > 3 else float(half.size)
        obs[name] = {"mean": float(half.mean()), "se": float(half.std() / math.sqrt(max(e, 1.0))),
                     "ess": e, "stabilized": sm.stabilized(name) if tr.shape[0] >= 8 else None}
    summary = {"epsilon": sc.epsilon, "gamma": sc.gamma, "n_x": sc.n_x, "dt": sc.step_dt,
               "n_steps": sc.n_steps, "t_end": sm.final.time, "theta": sc.theta, "mode": sc.mode,
               "reaction": sc.reaction, "replicas": sc.n_replicas, "noise": sc.noise_on,
               "observables_second_half": obs}
    write_json(os.path.join(out, "spde.json"), summary)
    names = sorted(sm.traces)
    R = sc.n_replicas
    rows = [(t, r) + tuple(sm.traces[k][i, r] for k in names)
            for i, t in enumerate(sm.times) for r in range(R)]
    write_csv(os.path.join(out, "spde_traces.csv"), "sacelab.spde_traces/1",
              ["time", "replica"] + names, rows)
    if sm.snapshots:
        x = sc.x
        rows = [(t, r, xv, uv) for t, U in zip(sm.snapshot_times, sm.snapshots)
                for r in range(R) for xv, uv in zip(x, U[r])]
        write_csv(os.path.join(out, "snapshots.csv"), "sacelab.snapshots/1",
                  ["time", "replica", "x", "u"], rows)
    return summary


# --------------------------------------------------------------------------- #
# verify


def invariant_checks() -> list[tuple[str, bool, str]]:
    """Fast structural invariants (a few seconds each)."""
    from .gaussian import BridgeSpec, log_density, log_normalizer, log_normalizer_determinant
    from .gibbs import (ChainConfig, direct_small_N_oracle, findimdis_logpdf, gibbs_spec,
                        run_chains, transfer_logZ)
    from .grid import ScaleParams
    from .instanton import closed_form_error, solve_profile
    from .potential import quartic, surface_tension, zero
    from .spectrum import spectral_report

    out = []

    def add(name, ok, detail):
        out.append((name, bool(ok), detail))

    q = quartic()
    c = surface_tension(q)
    add("surface tension of the quartic is 4/3", abs(c - 4 / 3) <= 1e-10, f"C* = {c:.15g}")
    p = solve_profile(q)
    err = closed_form_error(p, 8.0)
    add("instanton matches tanh on [-8, 8]", err <= 1e-8, f"sup error {err:.3g}")
    rep = spectral_report(p, 0.01, 20.0)
    add("zero mode of the linearized operator", abs(rep.lambda0) <= 1e-3 and
        rep.eigvec0_alignment >= 0.999, f"lambda0 {rep.lambda0:.3g}, align {rep.eigvec0_alignment:.6f}")
    worst = 0.0
    for N in range(1, 9):
        b = BridgeSpec(ScaleParams(0.3, 0.3, N=N))
        worst = max(worst, abs(log_normalizer(b) - log_normalizer_determinant(b)))
    add("determinant identity for the bridge normalizer", worst <= 1e-10, f"max gap {worst:.3g}")
    b = BridgeSpec(ScaleParams(0.3, 0.3, N=4))
    rng = stream(0, 99)
    x = b.mean + 0.3 * rng.standard_normal(b.nodes.size)
    x[0], x[-1] = -1.0, 1.0
    g = abs(float(log_density(b, x)) - findimdis_logpdf(b.nodes[1:-1], x[1:-1], b.variance_scale,
                                                                   b.nodes[0], b.nodes[-1]))
    add("bridge density agrees with the Markov factorization", g <= 1e-10, f"gap {g:.3g}")
    bo = BridgeSpec(ScaleParams(0.3, 0.3, N=4), "original")
    g = abs(float(log_density(b, x)) - float(log_density(bo, x)))
    add("node density identical in both scalings", g <= 1e-10, f"gap {g:.3g}")
    zs = gibbs_spec(zero(), 0.3, 0.3, N=3)
    res = run_chains(zs.node_model(), ChainConfig(n_steps=50, burn_in=10, n_chains=8, adapt=False))
    add("zero potential gives acceptance 1", res.acceptance_rate == 1.0,
        f"acceptance {res.acceptance_rate}")
    gs = gibbs_spec(q, 0.5, 0.4, N=1)
    lz_t = transfer_logZ(gs)
    lz_o = direct_small_N_oracle(gs, n_per_axis=301).log_z
    add("transfer-matrix log Z matches quadrature", abs(lz_t - lz_o) <= 1e-4,
        f"{lz_t:.8f} vs {lz_o:.8f}")
    return out


def run_verify(cfg: ExperimentConfig, out: str) -> dict:
    checks = invariant_checks()
    rows = [{"check": n, "passed": ok, "detail": d} for n, ok, d in checks]
    for n, ok, d in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {n}  ({d})")
    summary = {"checks": rows, "all_passed": all(ok for _, ok, _ in checks)}
    write_json(os.path.join(out, "verify.json"), summary)
    if not summary["all_passed"]:
        raise AcceptanceFailure(f"{sum(not ok for _, ok, _ in checks)} invariant(s) failed")
    return summary


RUNNERS = {"instanton": run_instanton, "spectrum": run_spectrum,
           "sample-bridge": run_sample_bridge, "sample-gibbs": run_sample_gibbs,
           "logz": run_logz, "rates": run_rates, "interface": run_interface, "spde": run_spde,
           "verify": run_verify}


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """Run ``cfg``; outputs land in ``cfg.output_dir`` and the manifest is written last."""
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    text = cfg.to_toml(runtime=False)
    _atomic_write_bytes(os.path.join(out, "config.toml"), text.encode("utf-8"))
    man = RunManifest(cfg.digest(), __version__, cfg.kind, _now(),
                      seeds={"master": cfg.seed, "tasks": cfg.tasks})
    try:
        man.summary = {"kind": cfg.kind}
        RUNNERS[cfg.kind](cfg, out)
        man.status = "OK"
    except BaseException as exc:
        man.status = "FAILED"
        man.error = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        man.finished = _now()
        write_manifest(out, man)
    return man


# --------------------------------------------------------------------------- #
# argument handling

_FLAG_MAP = {  # argparse dest -> config key (dotted for sections)
    "potential": "potential", "epsilon": "epsilon", "gamma": "gamma", "gamma1": "gamma1",
    "gamma2": "gamma2", "N": "N", "seed": "seed", "workers": "workers", "out": "output_dir",
    "tasks": "tasks", "scaling": "scaling",
    "samples": "bridge.n_samples", "refine_M": "bridge.M", "save_nodes": "bridge.save_nodes",
    "nx": "spde.nx", "dt": "spde.dt", "t_end": "spde.t_end", "noise": "spde.noise",
    "snapshot_stride": "spde.snapshot_stride", "replicas": "spde.replicas",
    "theta": "spde.theta", "h": "spectrum.h", "T": "spectrum.T",
}


def _parse_set(item: str):
    if "=" not in item:
        raise ConfigError([f"--set expects key=value, got {item!r}"])
    k, v = item.split("=", 1)
    try:
        val = tomllib.loads(f"v = {v}")["v"]
    except tomllib.TOMLDecodeError:
        val = v
    return k.strip(), val


def _put(d: dict, key: str, val) -> None:
    if "." in key:
        sec, k = key.split(".", 1)
        if sec == "potential":
            d["potential"] = {k: val}
            return
        d.setdefault(sec, {})[k] = val
    else:
        d[key] = val


def resolve_config(args, env=None) -> ExperimentConfig:
    """Config file < environment < explicit flags."""
    if args.config:
        base = parse_config(args.config).to_dict()
    else:
        base = {} if args.cmd == "verify" else {"potential": "quartic"}
    if args.cmd != "run":
        base["kind"] = args.cmd
    base.update(env_overrides(env))
    for dest, key in _FLAG_MAP.items():
        v = getattr(args, dest, None)
        if v is not None:
            if key == "spde.noise":
                v = v == "on"
            _put(base, key, v)
    for item in getattr(args, "set", None) or []:
        _put(base, *_parse_set(item))
    return _cfg(base)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sacelab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"sacelab {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(sp, scales=True):
        sp.add_argument("--config", help="TOML experiment file")
        sp.add_argument("--out", help="output directory (env SACELAB_OUTPUT_DIR)")
        sp.add_argument("--workers", type=int, help="worker processes (env SACELAB_WORKERS)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--tasks", type=int, help="independent seed streams (fixes the result)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. chain.rho=0.8")
        sp.add_argument("-v", "--verbose", action="store_true")
        if scales:
            sp.add_argument("--potential")
            sp.add_argument("--epsilon", type=float)
            sp.add_argument("--gamma", type=float)
            sp.add_argument("--gamma1", type=float)
            sp.add_argument("--gamma2", type=float)
            sp.add_argument("--N", type=int)
        return sp

    r = sub.add_parser("run", help="run the experiment kind named in a config file")
    r.add_argument("config")
    r.add_argument("--out")
    r.add_argument("--workers", type=int)
    r.add_argument("-v", "--verbose", action="store_true")
    common(sub.add_parser("instanton", help="standing-wave profile table"))
    sp = common(sub.add_parser("spectrum", help="linearized operator spectrum"))
    sp.add_argument("--h", type=float)
    sp.add_argument("--T", type=float)
    sp = common(sub.add_parser("sample-bridge", help="Brownian bridge samples and tail bounds"))
    sp.add_argument("--samples", type=int)
    sp.add_argument("--refine-M", dest="refine_M", type=int)
    sp.add_argument("--save-nodes", dest="save_nodes", action="store_const", const=True)
    sp.add_argument("--scaling", choices=["rescaled", "original"])
    sp = common(sub.add_parser("sample-gibbs", help="MCMC samples of the Gibbs measure"))
    sp.add_argument("--scaling", choices=["rescaled", "original"])
    common(sub.add_parser("logz", help="normalizing constant along an epsilon ladder"))
    common(sub.add_parser("rates", help="concentration probabilities along an epsilon ladder"))
    common(sub.add_parser("interface", help="interface location statistics"))
    sp = common(sub.add_parser("spde", help="stochastic Allen-Cahn integration"))
    sp.add_argument("--nx", type=int)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--t-end", dest="t_end", type=float)
    sp.add_argument("--noise", choices=["on", "off"])
    sp.add_argument("--snapshot-stride", dest="snapshot_stride", type=int)
    sp.add_argument("--replicas", type=int)
    sp.add_argument("--theta", type=float)
    common(sub.add_parser("verify", help="run the invariant suite"), scales=False)
    return ap


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except CONFIG_ERRORS as exc:
        viol = getattr(exc, "violations", [str(exc)])
        print("configuration error:", file=sys.stderr)
        for v in viol:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_experiment(cfg)
    except AcceptanceFailure as exc:
        print(f"verify failed: {exc}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    except CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SaceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(os.path.join(cfg.output_dir, "manifest.json"))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
