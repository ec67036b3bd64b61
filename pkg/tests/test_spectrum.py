from __future__ import annotations

import numpy as np
import pytest

from sacelab import spectrum as S
from sacelab.errors import DomainError, InvalidParameterError
from sacelab.energy import h1_norm_sq
from sacelab.grid import PLPath, ScaleParams
from sacelab.instanton import solve_profile
from sacelab.potential import get


@pytest.fixture(scope="module")
def p():
    return solve_profile(get("quartic"))


@pytest.fixture(scope="module")
def report(p):
    return S.spectral_report(p)


def test_quartic_spectrum_matches_poschl_teller(report):
    # A = -d^2 + 4 - 6 sech^2: bound states at 0 and 3
    assert abs(report.lambda0) < 1e-3
    assert abs(report.lambda1 - 3.0) < 1e-3
    assert report.eigvec0_alignment > 0.9999


def test_constrained_gap_equals_second_eigenvalue_for_symmetric_well(p, report):
    assert report.constrained_gap == pytest.approx(report.lambda1, abs=1e-8)
    assert abs(S.fine_gap_oracle(p) - 3.0) < 1e-4


def test_constrained_min_eig_agrees_with_dense_projection(p):
    x, d, e = S.fd_operator(p, 0.1, 16.0)
    A = np.diag(d) + np.diag(e, 1) + np.diag(e, -1)
    # a non-eigenvector constraint, so the answer is not an eigenvalue of A
    c = np.exp(-(x - 0.7) ** 2)
    Q, _ = np.linalg.qr(np.column_stack([c, np.eye(len(x))[:, : len(x) - 1]]))
    B = Q[:, 1:].T @ A @ Q[:, 1:]
    ref = np.linalg.eigvalsh(B)[0]
    val, vec, _, _ = S.constrained_min_eig(d, e, c, shift=-0.5)
    assert abs(val - ref) < 1e-9
    assert abs(vec @ c) < 1e-10 * np.linalg.norm(c) * np.linalg.norm(vec)


def test_grid_requirements_are_enforced(p):
    with pytest.raises(InvalidParameterError):
        S.spectral_report(p, h=0.1)
    with pytest.raises(InvalidParameterError):
        S.spectral_report(p, T=5.0)


def test_landscape_constants_quartic(p):
    lc = S.landscape_constants(p, 0.2)
    assert lc.c0_tilde == pytest.approx(0.8004, abs=2e-3)
    assert lc.c_hat0 == pytest.approx(0.0773, abs=2e-3)
    assert lc.c_hat4 > lc.c_hat0 > 0


def test_landscape_sandwich_holds_for_random_normal_perturbations(p):
    params = ScaleParams(0.001, 0.5, N=300)
    rng = np.random.default_rng(11)
    for _ in range(10):
        raw = np.zeros(2 * params.N + 1)
        raw[1:-1] = np.convolve(rng.standard_normal(2 * params.N - 1), np.ones(15) / 15, "same")
        v = S.project_normal(PLPath(params, raw, "zero"), p)
        scale = 0.15 / np.sqrt(h1_norm_sq(v))
        res = S.landscape_check(p, v.scaled(scale))
        assert res.lower_ok and res.upper_ok, res


def test_landscape_check_rejects_bad_input(p):
    params = ScaleParams(0.001, 0.5, N=100)
    vals = np.zeros(2 * params.N + 1)
    vals[1:-1] = 0.05 * p.dm(params.nodes[1:-1])
    with pytest.raises(DomainError, match="normal space"):
        S.landscape_check(p, PLPath(params, vals, "zero"))
    big = np.zeros_like(vals)
    big[1:-1] = 2.0
    with pytest.raises(DomainError, match="tube"):
        S.landscape_check(p, PLPath(params, big, "zero"))
