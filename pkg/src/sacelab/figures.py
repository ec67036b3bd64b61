"""Self-contained SVG figures (no timestamps, fixed hash salt, so output is diffable)."""

from __future__ import annotations

import logging
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

log = logging.getLogger(__name__)

_RC = {"svg.hashsalt": "sacelab", "svg.fonttype": "none", "figure.figsize": (6.0, 4.0),
       "font.size": 9}


def _save(fig, path: str) -> str:
    from .io import _atomic_write_bytes
    import io as _io
    buf = _io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": "sacelab"})
    plt.close(fig)
    _atomic_write_bytes(path, buf.getvalue())
    return path


def xi_histogram(xi: np.ndarray, trim: float, path: str, ks_distance: Optional[float] = None,
                 ks_pvalue: Optional[float] = None, title: str = "") -> Optional[str]:
    """Histogram of interface locations with the uniform density on [-1, 1] for reference."""
    xi = np.asarray(xi, dtype=float)
    xi = xi[np.isfinite(xi)]
    if xi.size == 0:
        log.warning("xi_histogram: no data, figure skipped")
        return None
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.hist(xi, bins=np.linspace(-1, 1, 41), density=True, color="0.7", edgecolor="0.3")
        ax.axhline(0.5, color="C3", lw=1.5, label="uniform on [-1, 1]")
        ax.axvspan(-1, -trim, color="C0", alpha=0.08)
        ax.axvspan(trim, 1, color="C0", alpha=0.08)
        if ks_distance is not None:
            txt = f"KS on [-{trim:g}, {trim:g}]: D = {ks_distance:.4f}"
            if ks_pvalue is not None:
                txt += f", p = {ks_pvalue:.3g}"
            ax.text(0.02, 0.97, txt, transform=ax.transAxes, va="top")
        ax.set_xlabel("interface location")
        ax.set_ylabel("density")
        ax.set_xlim(-1, 1)
        ax.legend(loc="lower right")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def rate_scatter(entries: Sequence, c_hat0: float, path: str) -> Optional[str]:
    """eps log p_hat against delta^2, one curve per eps, with the -c0 delta^2 / 2 line."""
    entries = [e for e in entries if np.isfinite(e.eps_log_p)]
    if not entries:
        log.warning("rate_scatter: no data, figure skipped")
        return None
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        d2max = max(e.delta for e in entries) ** 2
        for i, (norm, mk) in enumerate((("L2", "o"), ("Linf", "s"))):
            sel = [e for e in entries if e.norm == norm]
            for j, eps in enumerate(sorted({e.epsilon for e in sel}, reverse=True)):
                es = sorted((e for e in sel if e.epsilon == eps), key=lambda e: e.delta)
                x = [e.delta**2 for e in es]
                y = [e.eps_log_p for e in es]
                ax.plot(x, y, marker=mk, ls="-" if norm == "L2" else "--", color=f"C{j}",
                        label=f"{norm}, eps={eps:g}")
        xs = np.linspace(0, d2max * 1.05, 50)
        ax.plot(xs, -0.5 * c_hat0 * xs, color="k", lw=1, label="-c0 delta^2 / 2")
        ax.set_xlabel("delta^2")
        ax.set_ylabel("eps log p_hat")
        ax.legend(fontsize=7)
        return _save(fig, path)


def instanton_overlay(s: np.ndarray, m: np.ndarray, path: str,
                      reference: Optional[np.ndarray] = None) -> Optional[str]:
    s = np.asarray(s, dtype=float)
    if s.size == 0:
        log.warning("instanton_overlay: no data, figure skipped")
        return None
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.plot(s, m, color="C0", lw=2, label="computed profile")
        if reference is not None:
            ax.plot(s, reference, color="C3", ls="--", lw=1, label="tanh")
        ax.set_xlabel("s")
        ax.set_ylabel("m(s)")
        ax.legend()
        return _save(fig, path)


def bound_domination(reports: Sequence, path: str) -> Optional[str]:
    """Empirical tail probabilities (with 3 SE bars) against the analytic bounds."""
    reports = [r for r in reports if len(r.r_grid)]
    if not reports:
        log.warning("bound_domination: no data, figure skipped")
        return None
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(reports), figsize=(4.0 * len(reports), 3.5))
        axes = np.atleast_1d(axes)
        for ax, r in zip(axes, reports):
            ax.errorbar(r.r_grid, r.empirical_p, yerr=3 * r.se, fmt="o", ms=3, label="empirical")
            ax.plot(r.r_grid, np.minimum(r.theoretical_p, 1.0), "k-", label="bound")
            ax.set_yscale("log")
            ax.set_ylim(max(1e-6, 0.3 / max(r.n_trials or r.n_samples, 1)), 1.5)
            ax.set_title(r.bound_name)
            ax.set_xlabel("r")
        axes[0].set_ylabel("P(norm - centering >= r)")
        axes[0].legend()
        return _save(fig, path)
