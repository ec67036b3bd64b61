from __future__ import annotations

import math

import numpy as np
import pytest

from sacelab import spde as S
from sacelab.errors import ConfigError, DomainError, InstabilityError
from sacelab.potential import get


def test_config_collects_every_error():
    with pytest.raises(ConfigError) as ei:
        S.SPDEConfig(0.1, 0.4, n_x=2, t_end=-1, theta=0.3, mode="odd", reaction="x")
    text = " ".join(ei.value.violations)
    for frag in ("n_x", "t_end", "theta", "mode", "reaction"):
        assert frag in text


def test_dt_above_stability_limit_is_rejected():
    cfg = S.SPDEConfig(0.1, 0.4, n_x=31)
    with pytest.raises(ConfigError, match="stability"):
        S.SPDEConfig(0.1, 0.4, n_x=31, dt=cfg.max_dt() * 1.01)


def test_coefficients_by_mode():
    c = S.SPDEConfig(0.1, 0.4)
    lit = S.SPDEConfig(0.1, 0.4, mode="literal")
    assert c.drift_coeff == pytest.approx(0.1 ** -0.8)
    assert lit.drift_coeff == pytest.approx(0.1 ** -1.4)
    assert c.noise_amp == pytest.approx(math.sqrt(2) * lit.noise_amp)


def test_heat_flow_relaxes_to_the_linear_ramp():
    cfg = S.SPDEConfig(0.1, 0.4, n_x=15, t_end=10.0, noise_on=False, observe_stride=50)
    init = np.cos(3 * cfg.x)
    summ = S.run(cfg, init=init)
    assert np.max(np.abs(summ.final.values - cfg.x)) < 1e-6


def test_stationary_profile_is_a_fixed_point():
    cfg = S.SPDEConfig(0.1, 0.4, n_x=63, t_end=0.5, noise_on=False, potential=get("quartic"))
    u = S.stationary_profile(cfg)
    assert np.all(np.diff(u) > 0) and abs(u[31]) < 1e-12
    summ = S.run(cfg, init=u)
    assert np.max(np.abs(summ.final.values - u)) < 1e-8


def test_noise_free_flow_decreases_lyapunov():
    cfg = S.SPDEConfig(0.1, 0.4, n_x=31, t_end=0.5, noise_on=False, potential=get("quartic"))
    st = S._Stepper(cfg)
    rng = np.random.default_rng(0)
    state = S.FieldState(0.0, np.clip(cfg.x + 0.3 * rng.standard_normal(cfg.n_x), -1, 1))
    e = [float(S.lyapunov(state.full(), cfg)[0])]
    for _ in range(200):
        state = S.step(state, cfg, rng, st)
        e.append(float(S.lyapunov(state.full(), cfg)[0]))
    assert np.all(np.diff(e) <= 1e-12)


def test_runs_are_deterministic_given_the_seed():
    cfg = S.SPDEConfig(0.2, 0.4, n_x=15, t_end=0.2, potential=get("quartic"), n_replicas=3, seed=4)
    a, b = S.run(cfg), S.run(cfg)
    assert np.array_equal(a.final.values, b.final.values)
    c = S.run(S.SPDEConfig(0.2, 0.4, n_x=15, t_end=0.2, potential=get("quartic"), n_replicas=3, seed=5))
    assert not np.array_equal(a.final.values, c.final.values)


def test_free_field_stationary_variance():
    # F = 0, Crank-Nicolson: u(0) has variance eps^(1-gamma) / 2 in the stationary law
    cfg = S.SPDEConfig(0.3, 0.3, n_x=15, t_end=40.0, theta=0.5, n_replicas=32, seed=2,
                       observe_stride=5)
    summ = S.run(cfg, burn_in=2.0)
    from sacelab.gibbs import effective_sample_size
    tr = summ.traces["u_center"]
    var = float(tr.var())
    target = 0.3 ** 0.7 / 2
    se = target * math.sqrt(2 / effective_sample_size(tr))
    assert abs(var - target) < 4 * se


def test_preflight_requires_resolved_interface():
    ok = S.SPDEConfig(0.1, 0.4, n_x=127, potential=get("quartic"))
    assert S.preflight(ok) >= 8
    with pytest.raises(ConfigError, match="increase n_x"):
        S.preflight(S.SPDEConfig(0.001, 0.6, n_x=15, potential=get("quartic")))


def test_blow_up_is_reported():
    cfg = S.SPDEConfig(0.1, 0.4, n_x=15, t_end=1.0, noise_on=False, potential=get("quartic"))
    with pytest.raises(InstabilityError):
        S.run(cfg, init=np.full(cfg.n_x, 50.0))


def test_stationarity_check_rejects_mismatched_scaling():
    from sacelab.grid import ScaleParams
    cfg = S.SPDEConfig(0.1, 0.4, n_x=15, t_end=0.1)
    with pytest.raises(DomainError, match="scaling mismatch"):
        S.stationarity_check(cfg, np.zeros((2, 17)), ScaleParams(0.2, 0.4, N=8))
    with pytest.raises(DomainError):
        S.SPDEConfig(0.1, 0.4, n_x=16).scale_params()
