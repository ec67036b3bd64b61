"""Experiment configuration: TOML files with dotted sections, validated in full."""

from __future__ import annotations

import hashlib
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .errors import ConfigError
from .grid import admissibility_violations, default_gamma1, default_gamma2

KINDS = ("instanton", "spectrum", "sample-bridge", "sample-gibbs", "logz", "rates", "interface",
         "spde", "verify")

NEEDS_SCALES = {"sample-bridge", "sample-gibbs", "logz", "rates", "interface", "spde"}

# section -> key -> (type, default)
SECTIONS: dict = {
    "chain": {"rho": (float, 0.5), "n_steps": (int, 2000), "burn_in": (int, 200),
              "adapt": (bool, True), "target_acceptance": (float, 0.25), "n_chains": (int, 32),
              "thin": (int, 1), "ffbs_prob": (float, 0.5)},
    "ladder": {"n_rungs": (int, 24), "power": (float, 3.0), "epsilons": (list, []),
               "n_samples": (int, 10000)},
    "rates": {"delta_L2": (list, [0.5]), "delta_Linf": (list, [0.5])},
    "interface": {"trim": (float, 0.8), "n_obs": (int, 10), "window": (float, 0.5),
                  "n_samples": (int, 5000), "epsilons": (list, [])},
    "bridge": {"n_samples": (int, 10000), "M": (int, 8), "kappa": (float, 1.0),
               "save_nodes": (bool, False)},
    "spectrum": {"h": (float, 0.01), "T": (float, 20.0), "delta1": (float, 0.2)},
    "instanton": {"half_width": (float, 8.0), "tol": (float, 1e-10), "n_tab": (int, 4096)},
    "spde": {"nx": (int, 63), "dt": (float, 0.0), "t_end": (float, 10.0), "noise": (bool, True),
             "theta": (float, 1.0), "mode": (str, "consistent"), "reaction": (str, "nodal"),
             "replicas": (int, 1), "snapshot_stride": (int, 0), "observe_stride": (int, 10)},
}

TOP = {"kind": str, "potential": (str, dict), "epsilon": float, "gamma": float, "gamma1": float,
       "gamma2": float, "N": (int, str), "seed": int, "workers": int, "output_dir": str, "tasks": int,
       "scaling": str}
RUNTIME_KEYS = ("workers", "output_dir")  # do not affect results

ENV_OUTPUT = "SACELAB_OUTPUT_DIR"
ENV_WORKERS = "SACELAB_WORKERS"


@dataclass
class ExperimentConfig:
    kind: str
    potential: Any = None  # registry name or {"coeffs": [...]}
    epsilon: Optional[float] = None
    gamma: Optional[float] = None
    gamma1: Optional[float] = None
    gamma2: Optional[float] = None
    N: Any = "auto"
    seed: int = 0
    workers: int = 1
    output_dir: str = "out"
    tasks: int = 4
    scaling: str = "rescaled"
    sections: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        out = {k: d for k, (_, d) in SECTIONS[name].items()}
        out.update(self.sections.get(name, {}))
        return out

    @property
    def N_value(self) -> Optional[int]:
        if self.N in (None, "auto"):
            if self.epsilon is None or self.gamma is None:
                return None
            return self.scale_params().N
        return int(self.N)

    def to_dict(self, runtime: bool = True) -> dict:
        d = {"kind": self.kind, "seed": self.seed, "N": self.N, "tasks": self.tasks,
             "scaling": self.scaling}
        if runtime:
            d.update(workers=self.workers, output_dir=self.output_dir)
        for k in ("potential", "epsilon", "gamma", "gamma1", "gamma2"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        for name in sorted(self.sections):
            if self.sections[name]:
                d[name] = dict(sorted(self.sections[name].items()))
        return d

    def to_toml(self, runtime: bool = True) -> str:
        return tomli_w.dumps(self.to_dict(runtime))

    def digest(self) -> str:
        """Hash of the result-determining part of the config."""
        return hashlib.sha256(self.to_toml(runtime=False).encode()).hexdigest()

    def potential_spec(self):
        from . import potential as P
        if isinstance(self.potential, dict):
            return P.from_coeffs(self.potential["coeffs"])
        return P.get(self.potential)

    def scale_params(self):
        from .grid import ScaleParams
        return ScaleParams(self.epsilon, self.gamma, self.gamma1, self.gamma2,
                           None if self.N in (None, "auto") else int(self.N))


def _type_ok(v, t) -> bool:
    if t is float:
        return isinstance(v, (int, float)) and not isinstance(v, bool)
    if t is int:
        return isinstance(v, int) and not isinstance(v, bool)
    if isinstance(t, tuple):
        return any(_type_ok(v, tt) for tt in t)
    return isinstance(v, t)


def validate_dict(d: dict) -> tuple[ExperimentConfig, list]:
    errs = []
    top = {}
    sections = {}
    for k, v in d.items():
        if k in SECTIONS:
            if not isinstance(v, dict):
                errs.append(f"section [{k}] must be a table")
                continue
            sec = {}
            for kk, vv in v.items():
                if kk not in SECTIONS[k]:
                    errs.append(f"unknown key '{k}.{kk}'")
                    continue
                t = SECTIONS[k][kk][0]
                if not _type_ok(vv, t):
                    errs.append(f"key '{k}.{kk}' must be of type {t.__name__}")
                    continue
                sec[kk] = float(vv) if t is float else vv
            sections[k] = sec
        elif k in TOP:
            if not _type_ok(v, TOP[k]):
                errs.append(f"key '{k}' has the wrong type ({type(v).__name__})")
                continue
            top[k] = v
        else:
            errs.append(f"unknown key '{k}'")
    kind = top.get("kind")
    if kind is None:
        errs.append("missing key 'kind'")
    elif kind not in KINDS:
        errs.append(f"key 'kind' must be one of {', '.join(KINDS)} (got {kind!r})")
    if kind != "verify" and "potential" not in top:
        errs.append("missing key 'potential'")
    pot = top.get("potential")
    if isinstance(pot, str):
        from .potential import REGISTRY
        if pot not in REGISTRY:
            errs.append(f"key 'potential': unknown potential {pot!r} "
                        f"(known: {', '.join(sorted(REGISTRY))})")
    elif isinstance(pot, dict):
        extra = sorted(set(pot) - {"coeffs"})
        for k in extra:
            errs.append(f"unknown key 'potential.{k}'")
        c = pot.get("coeffs")
        if not (isinstance(c, list) and c and all(_type_ok(x, float) for x in c)):
            errs.append("key 'potential.coeffs' must be a non-empty list of numbers")
        else:
            top["potential"] = {"coeffs": [float(x) for x in c]}
            from .potential import assert_double_well, from_coeffs
            from .errors import SaceError
            try:
                rep = assert_double_well(from_coeffs(c))
                errs.extend(f"potential.coeffs: clause ({k}) fails: {r.witness}"
                            for k, r in rep.clauses.items() if not r.passed)
            except SaceError as exc:
                errs.append(f"potential.coeffs: {exc}")
    if kind in NEEDS_SCALES:
        for k in ("epsilon", "gamma"):
            if k not in top:
                errs.append(f"missing key '{k}'")
    N = top.get("N", "auto")
    if isinstance(N, str) and N != "auto":
        errs.append("key 'N' must be a positive integer or \"auto\"")
    if isinstance(N, int) and N < 1:
        errs.append("key 'N' must be a positive integer or \"auto\"")
    eps = top.get("epsilon")
    if eps is not None and not (0 < eps < 1):
        errs.append(f"key 'epsilon' must lie in (0, 1) (got {eps})")
    g = top.get("gamma")
    if g is not None:
        g1 = top.get("gamma1", default_gamma1(g) if 0 < g else None)
        g2 = top.get("gamma2")
        if g2 is None and g1 is not None and 0 < g < 2 / 3:
            g2 = default_gamma2(g, g1)
        if g1 is None or g2 is None:
            errs.append(f"Assume 0<γ<2/3 (got γ = {g})")
        else:
            errs.extend(admissibility_violations(float(g), float(g1), float(g2)))
    for k in ("seed", "workers", "tasks"):
        if k in top and top[k] < (0 if k == "seed" else 1):
            errs.append(f"key '{k}' out of range (got {top[k]})")
    if top.get("scaling", "rescaled") not in ("rescaled", "original"):
        errs.append(f"key 'scaling' must be \"rescaled\" or \"original\" (got {top['scaling']!r})")
    ch = sections.get("chain", {})
    rho = ch.get("rho", SECTIONS["chain"]["rho"][1])
    if not (0 < rho < 1):
        errs.append(f"key 'chain.rho' must lie in (0, 1) (got {rho})")
    ns = ch.get("n_steps", SECTIONS["chain"]["n_steps"][1])
    bi = ch.get("burn_in", SECTIONS["chain"]["burn_in"][1])
    if not (0 <= bi < ns):
        errs.append("keys 'chain.burn_in' < 'chain.n_steps' required")
    cfg = ExperimentConfig(kind=kind or "verify", sections=sections,
                           **{k: v for k, v in top.items() if k != "kind"})
    return cfg, errs


def env_overrides(env=None) -> dict:
    """Top-level keys set through SACELAB_OUTPUT_DIR / SACELAB_WORKERS."""
    env = os.environ if env is None else env
    out = {}
    if env.get(ENV_OUTPUT):
        out["output_dir"] = env[ENV_OUTPUT]
    if env.get(ENV_WORKERS):
        try:
            out["workers"] = int(env[ENV_WORKERS])
        except ValueError:
            raise ConfigError([f"{ENV_WORKERS} must be an integer (got {env[ENV_WORKERS]!r})"]) from None
    return out


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        d = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"TOML syntax error: {exc}"]) from None
    cfg, errs = validate_dict(d)
    if errs:
        raise ConfigError(errs)
    return cfg


def parse_config(path) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError([f"config file not found: {path}"])
    with open(path, "rb") as fh:
        text = fh.read().decode("utf-8")
    return parse_config_text(text)
