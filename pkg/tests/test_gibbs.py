from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from sacelab import gibbs as Gb
from sacelab.errors import DomainError, InvalidParameterError
from sacelab.gaussian import BridgeSpec, log_density
from sacelab.grid import ScaleParams
from sacelab.instanton import solve_profile
from sacelab.potential import get, zero
from sacelab.rng import derive_seed, stream


@pytest.fixture(scope="module")
def p():
    return solve_profile(get("quartic"))


def _spec(N, eps=0.5, gamma=0.4, scaling="rescaled", pot="quartic"):
    return Gb.gibbs_spec(get(pot) if pot != "zero" else zero(), eps, gamma, N=N, scaling=scaling)


def test_streams_are_reproducible_and_distinct():
    a = stream(5, 1, 2).standard_normal(4)
    assert np.array_equal(a, stream(5, 1, 2).standard_normal(4))
    assert not np.array_equal(a, stream(5, 2, 1).standard_normal(4))
    assert derive_seed(5, 3) == derive_seed(5, 3) != derive_seed(5, 4)


def test_node_model_prior_matches_bridge_density():
    for scaling in ("rescaled", "original"):
        spec = _spec(3, scaling=scaling)
        m = spec.node_model()
        X = m.sample_prior(0, 5)
        assert np.allclose(m.log_prior(X), log_density(spec.bridge, m.full(X)), atol=1e-10)


def test_phi_pushforward_between_scalings():
    # same node vectors, same Phi: the scalings differ only by s -> eps^gamma s
    a, b = _spec(4, scaling="rescaled"), _spec(4, scaling="original")
    X = a.node_model().sample_prior(1, 10)
    U = a.node_model().full(X)
    assert np.allclose(a.phi(U), b.phi(U), rtol=1e-12)
    assert np.allclose(a.node_model().log_prior(X), b.node_model().log_prior(X)
                       + (a.node_model().log_norm - b.node_model().log_norm), atol=1e-9)


def test_findimdis_agrees_with_log_density():
    b = BridgeSpec(ScaleParams(0.3, 0.4, N=4))
    x = Gb.NodeModel(8, b.h, b.variance_scale, 0.0, get("quartic").F).sample_prior(2, 1)[0]
    nodes = b.nodes
    ref = float(log_density(b, np.concatenate([[-1.0], x, [1.0]])))
    got = Gb.findimdis_logpdf(nodes[1:-1], x, b.variance_scale, nodes[0], nodes[-1])
    assert abs(got - ref) <= 1e-10
    with pytest.raises(DomainError):
        Gb.findimdis_logpdf([0.5, 0.2], [0.0, 0.0], 1.0)


def test_reflection_symmetry_of_phi_and_prior():
    spec = _spec(4)
    m = spec.node_model()
    U = m.full(m.sample_prior(3, 20))
    R = Gb.reflect(U)
    assert np.allclose(spec.phi(U), spec.phi(R), rtol=1e-12)
    assert np.allclose(log_density(spec.bridge, U), log_density(spec.bridge, R), atol=1e-10)


def test_zero_potential_chain_accepts_everything_and_matches_covariance():
    spec = _spec(3, pot="zero")
    cfg = Gb.ChainConfig(rho=0.5, n_steps=3000, burn_in=100, n_chains=32, seed=4, adapt=False)
    res = Gb.run_chains(spec.node_model(), cfg)
    assert res.acceptance_rate == 1.0
    X = res.samples.reshape(-1, spec.node_model().n)
    C = spec.bridge.node_covariance()
    assert np.max(np.abs(np.cov(X, rowvar=False) - C)) < 0.05 * np.max(C)
    assert Gb.estimate_logZ(spec).log_z == 0.0


def test_transfer_logz_agrees_with_tensor_oracle():
    for N in (1, 2):
        spec = _spec(N)
        orc = Gb.direct_small_N_oracle(spec, 201)
        assert abs(Gb.transfer_logZ(spec) - orc.log_z) < 1e-6


def test_chain_marginal_matches_oracle(p):
    # N = 1: one free node, compare its histogram to the oracle density
    spec = _spec(1, eps=0.3)
    orc = Gb.direct_small_N_oracle(spec, 401, p=p)
    cfg = Gb.ChainConfig(rho=0.5, n_steps=2500, burn_in=300, n_chains=64, seed=5)
    res, rep = Gb.mcmc_chain(spec, cfg, p)
    x = res.samples[..., 0].ravel()
    cdf = np.cumsum(orc.marginal_center) * (orc.marginal_grid[1] - orc.marginal_grid[0])
    ks = stats.kstest(x, lambda t: np.interp(t, orc.marginal_grid, cdf)).statistic
    n_eff = rep.ess["u_center"]
    assert ks < 1.63 / math.sqrt(n_eff) + 0.01
    for k in ("phi", "energy", "u_center"):
        assert abs(rep.means[k] - orc.means[k]) < 4 * rep.ses[k] + 1e-12, k


def test_ffbs_moves_are_exact_for_the_grid_target():
    spec = _spec(3, eps=0.2)
    cfg = Gb.ChainConfig(rho=0.5, n_steps=400, burn_in=50, n_chains=32, seed=6, ffbs_prob=1.0)
    res = Gb.run_chains(spec.node_model(), cfg)
    assert res.accept_ffbs > 0.9
    cfg2 = Gb.ChainConfig(rho=0.5, n_steps=4000, burn_in=500, n_chains=32, seed=7)
    res2 = Gb.run_chains(spec.node_model(), cfg2)
    a, b = res.phi.ravel().mean(), res2.phi.ravel().mean()
    sa = res.phi.std() / math.sqrt(Gb.effective_sample_size(res.phi))
    sb = res2.phi.std() / math.sqrt(Gb.effective_sample_size(res2.phi))
    assert abs(a - b) < 4 * math.hypot(sa, sb)


def test_estimate_logz_close_to_transfer():
    spec = _spec(2, eps=0.4)
    est = Gb.estimate_logZ(spec, cfg=Gb.ChainConfig(n_steps=300, burn_in=50, n_chains=32,
                                                    ffbs_prob=0.5, seed=8))
    ref = Gb.transfer_logZ(spec)
    assert abs(est.log_z - ref) < max(4 * est.se, 0.02)
    with pytest.raises(InvalidParameterError):
        Gb.estimate_logZ(spec, ladder=[0.0, 0.5, 0.4, 1.0])


def test_chain_config_validation():
    with pytest.raises(InvalidParameterError):
        Gb.ChainConfig(rho=1.0)
    with pytest.raises(InvalidParameterError):
        Gb.ChainConfig(n_steps=10, burn_in=10)
    with pytest.raises(InvalidParameterError):
        Gb.ChainConfig(ffbs_prob=1.5)


def test_nonnegative_potential_required():
    from sacelab.potential import from_coeffs
    with pytest.raises(InvalidParameterError):
        Gb.gibbs_spec(from_coeffs([-1.0, 0, 1.0]), 0.5, 0.4, N=2)


def test_ess_of_independent_and_correlated_traces():
    rng = np.random.default_rng(0)
    iid = rng.standard_normal((4000, 4))
    assert Gb.effective_sample_size(iid) > 0.8 * iid.size
    ar = np.zeros((4000, 4))
    for t in range(1, 4000):
        ar[t] = 0.9 * ar[t - 1] + rng.standard_normal(4)
    # AR(1) with phi = 0.9: tau = (1 + phi)/(1 - phi) = 19
    assert Gb.effective_sample_size(ar) == pytest.approx(ar.size / 19, rel=0.3)


def test_exceedance_zero_count_upper_bound():
    e = Gb.exceedance(np.zeros(100), 0.5, 100.0, 0.1, "L2")
    assert e.upper_bound and e.exceedances == 0
    assert e.p_hat == pytest.approx(1 - 0.05 ** 0.01)
    e2 = Gb.exceedance(np.array([0.0, 1.0, 1.0, 0.0]), 0.5, 4.0, 0.1, "Linf")
    assert e2.p_hat == 0.5 and e2.eps_log_p == pytest.approx(0.1 * math.log(0.5))


def test_a_k_occupancy_for_step_paths():
    s = np.linspace(-1, 1, 41)
    rows = np.array([np.where(s < x0, -1.0, 1.0) for x0 in (-0.95, -0.55, 0.05, 0.95)])
    rows[:, 0], rows[:, -1] = -1, 1
    ind = Gb.a_k_occupancy(rows, s, 10, 0.5)
    assert ind.sum(axis=1).tolist() == [1, 1, 1, 1]
    assert np.argmax(ind, axis=1).tolist() == [0, 2, 5, 9]


def test_interface_stats_for_uniform_shifts(p):
    params = ScaleParams(0.02, 0.6, N=100)
    rng = np.random.default_rng(1)
    # away from the ends, where truncation to [-1, 1] shifts the projection
    xi = rng.uniform(-0.7, 0.7, 1000)
    s = params.nodes
    eg = params.epsilon ** params.gamma
    U = p.m(s[None, :] - xi[:, None] / eg)
    U[:, 0], U[:, -1] = -1, 1
    st = Gb.interface_stats(U, params, p, trim=0.7)
    assert np.allclose(st.xi, xi, atol=1e-4)
    assert st.ks_distance < 0.06 and st.n_excluded == 0
    assert st.mean == pytest.approx(xi.mean())


def test_concentration_curve_structure(p):
    specs = [_spec(None, eps=e, gamma=0.4) for e in (0.4, 0.3)]
    curve = Gb.concentration_curve(specs, {"L2": [0.5], "Linf": [0.5]}, p, n_samples=500,
                                   seed=3, n_chains=50)
    assert len(curve.entries) == 4
    assert len(curve.select("L2", 0.5)) == 2
    for e in curve.entries:
        assert 0 < e.p_hat <= 1


def test_a_k_probabilities_symmetric_and_match_sampler(p):
    spec = _spec(None, eps=0.05, gamma=0.6, scaling="original")
    pk = Gb.a_k_probabilities(spec, 10, 0.5, n_grid=600)
    assert np.allclose(pk, pk[::-1], rtol=1e-8)
    res = Gb.sample_gibbs(spec, 4000, seed=13, n_chains=100, ffbs_prob=1.0)
    st = Gb.interface_stats(res.flat(), spec.params, p, n_chains=100)
    z = (st.occupancy - pk) / np.maximum(st.occupancy_se, 1e-12)
    assert np.all(np.abs(z[1:-1]) < 4)
