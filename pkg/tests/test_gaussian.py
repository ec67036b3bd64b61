from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from sacelab import gaussian as G
from sacelab.errors import DomainError, InvalidParameterError
from sacelab.grid import ScaleParams


@pytest.fixture(params=["rescaled", "original"])
def bridge(request):
    return G.BridgeSpec(ScaleParams(0.1, 0.4, N=6), request.param)


def test_sample_covariance_matches_kernel(bridge):
    x = G.sample_bridge_nodes(bridge, 1, 200000)
    assert np.all(x[:, 0] == -1) and np.all(x[:, -1] == 1)
    mean_err = np.abs(x.mean(axis=0) - bridge.mean)
    C = bridge.node_covariance()
    sd = np.sqrt(np.diag(C))
    assert np.all(mean_err[1:-1] < 5 * sd / math.sqrt(200000))
    emp = np.cov(x[:, 1:-1], rowvar=False)
    assert np.max(np.abs(emp - C)) < 0.02 * np.max(C)


def test_density_normalizers_agree(bridge):
    assert G.log_normalizer(bridge) == pytest.approx(G.log_normalizer_determinant(bridge), abs=1e-10)
    x = G.sample_bridge_nodes(bridge, 2, 5)
    assert np.allclose(G.log_density(bridge, x), G.log_density_chain(bridge, x), atol=1e-10)


def test_density_matches_multivariate_normal(bridge):
    x = G.sample_bridge_nodes(bridge, 3, 4)
    ref = stats.multivariate_normal(bridge.mean[1:-1], bridge.node_covariance()).logpdf(x[:, 1:-1])
    assert np.allclose(G.log_density(bridge, x), ref, atol=1e-9)


def test_density_requires_pinned_ends(bridge):
    x = G.sample_bridge_nodes(bridge, 0, 1)
    x[0, 0] = 0.0
    with pytest.raises(DomainError):
        G.log_density(bridge, x)


def test_unknown_scaling():
    with pytest.raises(InvalidParameterError):
        G.BridgeSpec(ScaleParams(0.1, 0.4), "weird")


def test_refined_deviations_are_brownian_bridges(bridge):
    M = 7
    dev = G.refine_deviations(bridge, 4, (100000,), M)
    t = np.arange(1, M + 1) / (M + 1)
    var = bridge.variance_scale * bridge.h * t * (1 - t)
    assert np.allclose(dev.var(axis=0), var, rtol=0.03)
    est = G.cell_l2_sq_estimate(dev, bridge).mean()
    assert est == pytest.approx(bridge.variance_scale * bridge.h**2 / 6, rel=0.02)


def test_refine_interpolates_linearly_on_average(bridge):
    u = G.sample_bridge(bridge, 5)
    samples = np.array([G.refine(bridge, u, 3, 4, s) for s in range(4000)])
    t = np.arange(1, 5) / 5
    lin = u.values[3] + t * (u.values[4] - u.values[3])
    sd = math.sqrt(bridge.variance_scale * bridge.h / 4)
    assert np.all(np.abs(samples.mean(axis=0) - lin) < 5 * sd / math.sqrt(4000))
    with pytest.raises(InvalidParameterError):
        G.refine(bridge, u, 2 * bridge.params.N, 4, 0)


def test_cell_sup_law_is_kolmogorov(bridge):
    s = G.cell_sup_samples(bridge, 6, (50000,)) / math.sqrt(bridge.variance_scale * bridge.h)
    assert stats.kstest(s, stats.kstwobign.cdf).pvalue > 1e-3


def test_discretization_tails_are_dominated():
    spec = G.BridgeSpec(ScaleParams(0.1, 0.4, N=8))
    reps = G.discretization_tails(spec, 20000, rng=7)
    assert [r.bound_name for r in reps] == ["whole-line-L2", "short-interval-L2", "whole-line-Linf"]
    for r in reps:
        assert r.dominated, r.bound_name
    assert reps[0].mean_sq == pytest.approx(G.expected_disc_l2_sq(spec), rel=0.03)
    with pytest.raises(InvalidParameterError):
        G.discretization_tails(spec, 10, M=4)


def test_massive_field_norm_is_scaled_chi_square():
    spec = G.MassiveFieldSpec(ScaleParams(0.1, 0.4, N=8), kappa=2.0)
    x = G.sample_massive_nodes(spec, 8, 50000)
    q = G.h1_form_sq(x, spec.params.delta) / (spec.params.epsilon / spec.kappa)
    assert stats.kstest(q, stats.chi2(spec.params.n_free).cdf).pvalue > 1e-3
    t = np.array([1.0, 1.5, 2.0]) * spec.params.n_free * spec.params.epsilon / spec.kappa
    emp = (q[:, None] * spec.params.epsilon / spec.kappa >= t).mean(axis=0)
    assert np.allclose(emp, G.massive_h1_exact_tail(spec, t), atol=0.01)


def test_massive_tail_forms():
    spec = G.MassiveFieldSpec(ScaleParams(0.1, 0.4, N=8))
    root = G.massive_h1_tail(spec, 20000, rng=9, form="root")
    lit = G.massive_h1_tail(spec, 20000, rng=9, form="literal")
    assert root.dominated and lit.dominated
    assert root.centering == pytest.approx(math.sqrt(15 * 0.1))
    with pytest.raises(InvalidParameterError):
        G.massive_h1_tail(spec, 10, form="cubed")


def test_node_norm_tail_dominated():
    spec = G.BridgeSpec(ScaleParams(0.1, 0.4, N=8))
    sd = math.sqrt(np.linalg.eigvalsh(spec.node_covariance())[-1])
    rep = G.node_norm_tail(spec, 20000, np.linspace(0, 3 * sd, 8), rng=10)
    assert rep.dominated


def test_z_ratios_identities():
    params = ScaleParams(0.1, 0.4, N=8)
    z = G.z_ratios(params)
    assert z.log_z1 == pytest.approx(z.log_z1_kernels, abs=1e-10)
    assert z.poincare_lo and z.poincare_hi and z.det_scaling_ok
    assert z.z3_exponent_half == pytest.approx(-(2 * 8 - 1) / 2 * math.log(0.1))
    # Gaussian integral of exp(-u^T K u / 2 eps) directly
    n = params.n_free
    K = (np.diag(np.full(n, 2.0)) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)) / params.delta
    ref = 0.5 * n * math.log(2 * math.pi * 0.1) - 0.5 * np.linalg.slogdet(K)[1]
    assert z.log_z1_int == pytest.approx(ref, abs=1e-10)
    with pytest.raises(InvalidParameterError):
        G.z_ratios(ScaleParams(0.1, 0.4, N=65))
