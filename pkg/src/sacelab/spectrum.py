"""Linearized operator A = -d^2/ds^2 + F''(m): spectrum, constrained gap, energy landscape."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.linalg.lapack import dgttrf, dgttrs

from .errors import DomainError, InvalidParameterError, NumericError
from .grid import PLPath, gl_unit, h1_sq_zero_pl, kinetic
from .instanton import InstantonProfile


@dataclass
class SpectralReport:
    h: float
    T: float
    lambda0: float
    lambda1: float
    constrained_gap: float
    eigvec0_alignment: float
    iterations: int = 0
    grid: np.ndarray = field(default=None, repr=False)
    eigvec0: np.ndarray = field(default=None, repr=False)
    eigvec1: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return dict(h=self.h, T=self.T, lambda0=self.lambda0, lambda1=self.lambda1,
                    constrained_gap=self.constrained_gap,
                    eigvec0_alignment=self.eigvec0_alignment, iterations=self.iterations)


def fd_operator(p: InstantonProfile, h: float, T: float, xi: float = 0.0):
    """Diagonal and off-diagonal of the Dirichlet finite-difference A on [-T, T]."""
    n = int(round(2 * T / h)) - 1
    x = -T + h * np.arange(1, n + 1)
    d = 2.0 / h**2 + p.spec.d2F(p.m(x - xi))
    e = -np.ones(n - 1) / h**2
    return x, d, e


def constrained_min_eig(d: np.ndarray, e: np.ndarray, c: np.ndarray, shift: float,
                        tol: float = 1e-13, max_iter: int = 5000):
    """Smallest eigenvalue of the tridiagonal A restricted to the complement of c.

    Inverse iteration on the bordered system [[A - s, c], [c^T, 0]], which keeps
    every iterate exactly orthogonal to c. Returns (value, vector, iterations, trace).
    """
    dl, dd, du, du2, ipiv, info = dgttrf(e.copy(), d - shift, e.copy())
    if info != 0:
        raise NumericError(f"tridiagonal factorization failed (info={info}); shift {shift:g} hits the spectrum")

    def solve(b):
        x, info2 = dgttrs(dl, dd, du, du2, ipiv, b)
        if info2 != 0:
            raise NumericError(f"tridiagonal solve failed (info={info2})")
        return x

    def matvec(v):
        out = d * v
        out[:-1] += e * v[1:]
        out[1:] += e * v[:-1]
        return out

    z = solve(c.copy())
    cz = float(c @ z)
    rng = np.random.default_rng(12345)
    y = rng.standard_normal(len(d))
    y -= (c @ y) / (c @ c) * c
    y /= np.linalg.norm(y)
    rq_old = np.inf
    trace = []
    for it in range(1, max_iter + 1):
        x = solve(y.copy())
        x -= (c @ x) / cz * z
        x /= np.linalg.norm(x)
        rq = float(x @ matvec(x))
        trace.append(rq)
        if abs(rq - rq_old) <= tol * max(1.0, abs(rq)):
            return rq, x, it, trace
        rq_old = rq
        y = x
    raise NumericError(f"constrained inverse iteration did not converge in {max_iter} steps; "
                       f"last Rayleigh quotients {trace[-5:]}")


def spectral_report(p: InstantonProfile, h: float = 0.01, T: float = 20.0,
                    shift: float | None = None, strict: bool = True) -> SpectralReport:
    """Two lowest eigenpairs of A_0 and its gap on the complement of m'."""
    if strict and (h > 0.05 or T < 15.0 / p.c2):
        raise InvalidParameterError(f"need h <= 0.05 and T >= 15/c2 = {15 / p.c2:.3g}; got h={h}, T={T}")
    x, d, e = fd_operator(p, h, T)
    try:
        w, V = eigh_tridiagonal(d, e, select="i", select_range=(0, 1))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"tridiagonal eigensolver failed: {exc}") from exc
    mp = p.dm(x)
    e0 = V[:, 0]
    align = abs(e0 @ mp) / (np.linalg.norm(e0) * np.linalg.norm(mp))
    s = w[0] + 0.5 if shift is None else shift
    gap, vec, its, _ = constrained_min_eig(d, e, mp, s)
    return SpectralReport(h, T, float(w[0]), float(w[1]), float(gap), float(align), its,
                          x, e0 / np.sqrt(h) / np.linalg.norm(e0) * np.sign(e0 @ mp),
                          V[:, 1] / np.sqrt(h) / np.linalg.norm(V[:, 1]))


def fine_gap_oracle(p: InstantonProfile, h: float = 0.002, T: float = 20.0) -> float:
    """Second eigenvalue of A on a fine mesh.

    For a symmetric well m' is even and the second eigenvector is odd, so the
    constrained minimum equals lambda_1 exactly; only eigenvalues are computed.
    """
    x, d, e = fd_operator(p, h, T)
    w = eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(1, 1))
    return float(w[0])


# --------------------------------------------------------------------------- #
# energy landscape around M


@dataclass
class LandscapeConstants:
    c0_tilde: float      # min of <Av, v>/||v||^2_{H1} over v orthogonal to m'
    c4_tilde: float      # max(1, sup F'') bounding <Av, v>/||v||^2_{H1} from above
    C3: float            # cubic remainder constant: |R(v)| <= C3 ||v||^3_{H1}
    delta1: float
    c_hat0: float
    c_hat4: float


def _fem_forms(p: InstantonProfile, h: float, T: float):
    n = int(round(2 * T / h)) - 1
    nodes = -T + h * np.arange(n + 2)
    t, w = gl_unit(8)
    sq = nodes[:-1, None] + t * h
    F2 = p.spec.d2F(p.m(sq))
    phiL, phiR = 1 - t, t   # falling and rising halves on each cell
    # cell-local 2x2 F'' mass entries
    m00 = h * np.sum(w * F2 * phiL * phiL, axis=1)
    m01 = h * np.sum(w * F2 * phiL * phiR, axis=1)
    m11 = h * np.sum(w * F2 * phiR * phiR, axis=1)
    N = n + 2
    MF = np.zeros((N, N))
    idx = np.arange(N - 1)
    MF[idx, idx] += m00
    MF[idx + 1, idx + 1] += m11
    MF[idx, idx + 1] += m01
    MF[idx + 1, idx] += m01
    MF = MF[1:-1, 1:-1]
    K = (np.diag(2 * np.ones(n)) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)) / h
    M = (np.diag(4 * np.ones(n)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)) * h / 6
    dm = p.dm(sq)
    b_full = np.zeros(N)
    np.add.at(b_full, idx, h * np.sum(w * dm * phiL, axis=1))
    np.add.at(b_full, idx + 1, h * np.sum(w * dm * phiR, axis=1))
    return K, M, MF, b_full[1:-1]


def constrained_h1_constant(p: InstantonProfile, h: float = 0.05, T: float = 20.0) -> float:
    """min over v orthogonal to m' of <Av, v>/||v||^2_{H1}, by a reduced dense eigenproblem."""
    K, M, MF, b = _fem_forms(p, h, T)
    # Householder reflector sending b to a multiple of e_1; its other columns span b-perp.
    v = b.copy()
    v[0] += np.copysign(np.linalg.norm(b), b[0])
    v /= np.linalg.norm(v)

    def reflect(A):
        A = A - 2 * np.outer(v, v @ A)
        return A - 2 * np.outer(A @ v, v)

    A = reflect(K + MF)[1:, 1:]
    B = reflect(K + M)[1:, 1:]
    w = eigh(A, B, eigvals_only=True, subset_by_index=[0, 0])
    return float(w[0])


_LANDSCAPE_CACHE: dict = {}


def landscape_constants(p: InstantonProfile, delta1: float = 0.2, h: float = 0.05,
                        T: float = 20.0) -> LandscapeConstants:
    """Constants of the sandwich c_hat0 ||v||^2 <= H(m+v) <= c_hat4 ||v||^2 for ||v||_{H1} <= delta1."""
    key = (p.spec.name, id(p), delta1, h, T)
    if key in _LANDSCAPE_CACHE:
        return _LANDSCAPE_CACHE[key]
    c0t = constrained_h1_constant(p, h, T)
    # ||v||_inf <= ||v||_{H1}/sqrt(2), so m + v stays in |u| <= 1 + delta1/sqrt(2)
    R = 1.0 + delta1 / np.sqrt(2.0)
    probe = np.linspace(-R, R, 4001)
    sup3 = float(np.max(np.abs(p.spec.d3F(probe))))
    sup2 = float(np.max(p.spec.d2F(np.linspace(-1.0, 1.0, 4001))))
    C3 = sup3 / (6.0 * np.sqrt(2.0))
    c4t = max(1.0, sup2)
    out = LandscapeConstants(c0t, c4t, C3, delta1, 0.5 * c0t - C3 * delta1, 0.5 * c4t + C3 * delta1)
    _LANDSCAPE_CACHE[key] = out
    return out


@dataclass
class LandscapeResult:
    lower_ok: bool
    upper_ok: bool
    H: float
    bound_lo: float
    bound_hi: float
    h1_sq: float


def _cells(v: PLPath, order: int = 10):
    t, w = gl_unit(order)
    s = v.params.nodes[:-1, None] + t * v.params.delta
    vq = v.values[:-1, None] + t * np.diff(v.values)[:, None]
    return s, vq, w * v.params.delta


def project_normal(v: PLPath, p: InstantonProfile, xi: float = 0.0) -> PLPath:
    """Remove the component of v along m'_xi (within the PL space, exactly in quadrature)."""
    s, vq, w = _cells(v)
    dm = p.dm(s - xi)
    phi = p.dm(v.params.nodes - xi)
    phi[0] = phi[-1] = 0.0
    _, pq, _ = _cells(PLPath(v.params, phi, "zero"))
    c = np.sum(w * vq * dm) / np.sum(w * pq * dm)
    return PLPath(v.params, v.values - c * phi, "zero")


def energy_near_minimizer(p: InstantonProfile, v: PLPath, xi: float = 0.0) -> float:
    """H(m_xi + v) for a zero-boundary v, as int v'^2/2 + [F(m+v) - F(m) - F'(m)v].

    The zeroth and first order terms vanish identically for the exact standing
    wave, so this form avoids cancellation.
    """
    F, dF = p.spec.F, p.spec.dF
    s, vq, w = _cells(v, 12)
    m = p.m(s - xi)
    rem = F(m + vq) - F(m) - dF(m) * vq
    return float(kinetic(v.values, v.params.delta) + np.sum(w * rem))


def landscape_check(p: InstantonProfile, v: PLPath, spec=None, delta1: float = 0.2,
                    xi: float = 0.0, ortho_tol: float = 1e-8) -> LandscapeResult:
    if v.boundary_kind != "zero":
        raise DomainError("landscape_check needs a zero-boundary perturbation")
    if spec is not None and spec.name != p.spec.name:
        raise DomainError("potential does not match the profile")
    h1 = float(h1_sq_zero_pl(v.values, v.params.delta))
    if np.sqrt(h1) > delta1:
        raise DomainError(f"||v||_H1 = {np.sqrt(h1):.4g} exceeds the tube radius {delta1}")
    s, vq, w = _cells(v)
    ip = float(np.sum(w * vq * p.dm(s - xi)))
    vn = np.sqrt(float(np.sum(w * vq * vq)))
    if abs(ip) > ortho_tol * max(vn, 1e-300) * np.sqrt(p.dm_norm_sq) and vn > 0:
        raise DomainError(f"<v, m'> = {ip:.3g} is not zero; project v onto the normal space first")
    lc = landscape_constants(p, delta1)
    H = energy_near_minimizer(p, v, xi)
    lo, hi = lc.c_hat0 * h1, lc.c_hat4 * h1
    slack = 1e-12
    return LandscapeResult(H >= lo - slack, H <= hi + slack, H, lo, hi, h1)
