"""Weighted quadratic forms, eigen-identities, and spectral-gap estimates.

Perturbations around Q_mu are analysed per angular mode w = f(r) e^{ik
theta} through two symmetric forms on nodal piecewise-linear functions:

    a(w, v) = int Q_mu grad(M w) . grad(M v)     (decay form, = -(L w, M v))
    b(w, v) = (M w, v) = int w v / Q_mu - int grad(phi_w) . grad(phi_v)

with M w = w/Q_mu - phi_w and -Delta phi_w = w solved per mode by a
factorized radial operator.  Generalized eigenvalues of a w = nu b w on
constrained subspaces give the decay rates; the gap constant is
K2 = nu_1/mu under the full constraint set.

Exact eigenpairs of the continuum operator (dilation mode at 2 mu, the
translation mode at mu, and the one-dimensional kernel) are used as
residual and eigenvalue checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import (
    AssemblyFailure,
    EigenSolveFailure,
    IndefiniteB,
    ProfileMissing,
)
from .grid import RadialGrid, make_grid
from .profiles import (
    EIGHT_PI,
    StationaryProfile,
    build_corrected_profile,
    solve_stationary_profile,
)

# 2-point Gauss on [0,1] (exact for the P1 x P1 polynomial part)
_GX = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GW = np.array([0.5, 0.5])


def spectral_grid(mu: float, h_rel: float = 0.01, dr_min: float = 1e-3,
                  r_factor: float = 7.5) -> RadialGrid:
    """Truncated eigen domain: past ~7.5/sqrt(mu) the weight 1/Q_mu freezes
    eigenfunctions of interest to zero and only poisons conditioning."""
    rmax = max(25.0, r_factor / np.sqrt(mu))
    return make_grid(rmax, dr_min=dr_min, h_rel=h_rel, dr_cap=1.0)


def identity_grid(mu: float, h_rel: float = 1e-3, dr_min: float = 5e-5) -> RadialGrid:
    """Fine grid for strong-form operator residuals (tridiagonal work only)."""
    rmax = max(50.0, 12.0 / np.sqrt(mu))
    return make_grid(rmax, dr_min=dr_min, h_rel=h_rel, dr_cap=0.1)


def _fem_pair(r, weight_gauss, k: int):
    """Stiffness int w (u'v' + k^2 uv/r^2) r dr and mass int w u v r dr.

    ``weight_gauss`` holds the weight sampled at the two Gauss points of
    every element, shape (n-1, 2).  Returns (S, M) as dense symmetric
    tridiagonal arrays.
    """
    n = len(r)
    h = np.diff(r)
    S = np.zeros((n, n))
    M = np.zeros((n, n))
    x = r[:-1, None] + h[:, None] * _GX[None, :]
    wr = weight_gauss * x * (_GW[None, :] * h[:, None])
    N0 = 1.0 - _GX
    N1 = _GX
    d0 = -1.0 / h
    d1 = 1.0 / h
    s00 = np.sum(wr, axis=1) * d0 * d0
    s01 = np.sum(wr, axis=1) * d0 * d1
    s11 = np.sum(wr, axis=1) * d1 * d1
    m00 = wr @ (N0 * N0)
    m01 = wr @ (N0 * N1)
    m11 = wr @ (N1 * N1)
    if k > 0:
        ang = wr * (k * k / (x * x))
        s00 = s00 + ang @ (N0 * N0)
        s01 = s01 + ang @ (N0 * N1)
        s11 = s11 + ang @ (N1 * N1)
    idx = np.arange(n - 1)
    np.add.at(S, (idx, idx), s00)
    np.add.at(S, (idx, idx + 1), s01)
    np.add.at(S, (idx + 1, idx), s01)
    np.add.at(S, (idx + 1, idx + 1), s11)
    np.add.at(M, (idx, idx), m00)
    np.add.at(M, (idx, idx + 1), m01)
    np.add.at(M, (idx + 1, idx), m01)
    np.add.at(M, (idx + 1, idx + 1), m11)
    return S, M


class ModeKPoissonSolver:
    """Factorized radial operator for -(phi'' + phi'/r - k^2 phi/r^2) = w.

    k = 0: natural condition at the origin; at rmax the value is pinned to
    -log(rmax) * (total reduced mass of w), which is the exact logarithmic
    far field and reduces to the zero gauge phi(rmax) = 0 for zero-mass
    data.  k >= 1: phi(0) = 0 and the exact exterior-decay Robin condition
    r phi' + k phi = 0 at rmax.
    """

    def __init__(self, grid: RadialGrid, k: int):
        self.grid = grid
        self.k = int(k)
        r = grid.nodes
        ones = np.ones((len(r) - 1, 2))
        K, Mass = _fem_pair(r, ones, self.k)
        self.mass = Mass
        if self.k == 0:
            K[-1, :] = 0.0
            K[-1, -1] = 1.0
        else:
            K[0, :] = 0.0
            K[0, 0] = 1.0
            K[-1, -1] += self.k
        self._lu = sla.lu_factor(K)
        self._K = K

    def rhs_matrix(self):
        R = self.mass.copy()
        if self.k == 0:
            R[-1, :] = 0.0
        else:
            R[0, :] = 0.0
        return R

    def solve(self, w: np.ndarray) -> np.ndarray:
        rhs = self.mass @ w
        if self.k == 0:
            r = self.grid.nodes
            mhat_total = self.grid.integrate(w * r)
            rhs[-1] = -np.log(self.grid.rmax) * mhat_total
        else:
            rhs[0] = 0.0
        phi = sla.lu_solve(self._lu, rhs)
        res = self._K @ phi - rhs
        if np.max(np.abs(res)) > 1e-10 * max(1.0, np.max(np.abs(rhs))):
            raise EigenSolveFailure("Poisson solve residual above 1e-10")
        return phi

    def solve_zero_gauge_matrix(self) -> np.ndarray:
        """Dense map w -> phi_w in the zero-mass gauge (k=0) / decay (k>=1)."""
        return sla.lu_solve(self._lu, self.rhs_matrix())

    def grad_sq(self, phi: np.ndarray) -> float:
        """int |grad phi|^2 over the plane for the mode's radial part."""
        r = self.grid.nodes
        dphi = np.gradient(phi, r)
        val = dphi ** 2
        if self.k > 0:
            val = val + (self.k * phi) ** 2 / np.maximum(r, r[1] / 2) ** 2
        ck = 2.0 * np.pi if self.k == 0 else np.pi
        return ck * self.grid.integrate(val * r)


@dataclass
class OperatorDiscretization:
    mu: float
    mode: int
    grid: RadialGrid
    a: np.ndarray                 # decay form, sqrt(Q)-scaled variables
    b: np.ndarray                 # metric form, sqrt(Q)-scaled variables
    scale: np.ndarray             # sqrt(Q) nodal scaling, w = scale * g
    constraints: dict             # name -> scaled representer vector
    poisson: ModeKPoissonSolver
    profile: StationaryProfile

    def rayleigh(self, w_nodal: np.ndarray) -> float:
        g = w_nodal / self.scale
        return float(g @ self.a @ g) / float(g @ self.b @ g)


def assemble_operator(mu: float, grid: RadialGrid | None = None, k: int = 0,
                      profile: StationaryProfile | None = None,
                      sym_tol: float = 1e-12) -> OperatorDiscretization:
    """Assemble the decay and metric forms for one angular mode.

    Constraint representers (mass, second moment, dilation, center) are
    built from the profile identities M(Lambda Q) = 2 - M/2pi - mu|y|^2 and
    M(d_i Q) = -mu y_i, with the profile fields supplied analytically.
    """
    if grid is None:
        grid = spectral_grid(mu)
    if profile is None:
        profile = solve_stationary_profile(mu, grid, tol=1e-6)
    elif not np.array_equal(profile.grid.nodes, grid.nodes):
        raise ProfileMissing("profile was built on a different grid")
    r = grid.nodes
    q = profile.q
    n = len(r)

    # weights at element Gauss points from the dense profile solution
    h = np.diff(r)
    xg = (r[:-1, None] + h[:, None] * _GX[None, :]).ravel()
    phi_g, _, q_g, _, _, _ = profile.evaluate(xg)
    q_g = q_g.reshape(n - 1, 2)

    SQ, _ = _fem_pair(r, q_g, k)
    _, W1Q = _fem_pair(r, 1.0 / q_g, 0)
    pois = ModeKPoissonSolver(grid, k)
    Mass = pois.mass

    if k == 0:
        P = pois.solve_zero_gauge_matrix()
        act = slice(0, n)
        Mmap = np.diag(1.0 / q) - P
        A = Mmap.T @ SQ @ Mmap
        B = W1Q - Mass @ P
        scale = np.sqrt(q)
        ck = 2.0 * np.pi
    else:
        sl = slice(1, n)
        P = sla.lu_solve(pois._lu, pois.rhs_matrix())[sl, sl]
        Mmap = np.diag(1.0 / q[sl]) - P
        A = Mmap.T @ SQ[sl, sl] @ Mmap
        B = W1Q[sl, sl] - Mass[sl, sl] @ P
        scale = np.sqrt(q[sl])
        ck = np.pi
    A *= ck
    B *= ck

    sym_a = np.max(np.abs(A - A.T)) / max(np.max(np.abs(A)), 1e-300)
    sym_b = np.max(np.abs(B - B.T)) / max(np.max(np.abs(B)), 1e-300)
    if max(sym_a, sym_b) > sym_tol * 100:
        raise AssemblyFailure(f"forms not symmetric: {sym_a:.2e}, {sym_b:.2e}")
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    As = A * np.outer(scale, scale)
    Bs = B * np.outer(scale, scale)

    constraints = {}
    if k == 0:
        ones = np.ones(n)
        lmass = ck * (Mass @ ones)
        li2 = ck * (Mass @ (r * r))
        mass_now = profile.mass
        constraints["mass"] = scale * lmass
        constraints["second_moment"] = scale * li2
        # (w, M(Lambda Q)) = (2 - M/2pi) (w,1) - mu (w,|y|^2)
        constraints["dilation"] = scale * ((2.0 - mass_now / (2.0 * np.pi)) * lmass
                                           - mu * li2)
    elif k == 1:
        # (w, M(d_i Q)) = -mu (w, y_i): radial representer ~ r
        lcen = ck * (Mass[1:, 1:] @ r[1:])
        constraints["center"] = scale * (-mu) * lcen
    return OperatorDiscretization(mu=mu, mode=k, grid=grid, a=As, b=Bs,
                                  scale=scale, constraints=constraints,
                                  poisson=pois, profile=profile)


def _constrained_pencil(op: OperatorDiscretization, names):
    C = [op.constraints[n] for n in names if n in op.constraints]
    if not C:
        return op.a, op.b, np.eye(op.a.shape[0])
    C = np.stack(C, axis=1)
    U, S, _ = np.linalg.svd(C, full_matrices=True)
    rank = int(np.sum(S > S[0] * 1e-12))
    Z = U[:, rank:]
    return Z.T @ op.a @ Z, Z.T @ op.b @ Z, Z


def spectral_gap(mu: float, k: int = 0, constraint_set=("mass",),
                 grid: RadialGrid | None = None,
                 op: OperatorDiscretization | None = None,
                 n_eigs: int = 5) -> dict:
    """Smallest generalized eigenvalues of a w = nu b w on the constrained
    subspace; nu are the decay rates -(L w, M w)/(M w, w)."""
    if op is None:
        op = assemble_operator(mu, grid, k)
    if k == 0 and "mass" not in constraint_set:
        raise ValueError("k=0 eigensolves require the mass constraint "
                         "(the metric form is only definite on zero-mass data)")
    Ar, Br, _ = _constrained_pencil(op, constraint_set)
    try:
        bmin = sla.eigh(Br, eigvals_only=True, subset_by_index=[0, 0])[0]
        if bmin <= 0:
            raise IndefiniteB(f"metric form has eigenvalue {bmin:.3e} <= 0")
        vals = sla.eigh(Ar, Br, eigvals_only=True,
                        subset_by_index=[0, min(n_eigs, Ar.shape[0]) - 1])
    except sla.LinAlgError as exc:
        raise EigenSolveFailure(str(exc)) from exc
    return {
        "mu": mu,
        "mode": k,
        "constraints": list(constraint_set),
        "eigenvalues": [float(v) for v in vals],
        "nu1_over_mu": float(vals[0] / mu),
        "K2_measured": float(vals[0] / mu),
        "grid": op.grid.descriptor(),
    }


FULL_CONSTRAINTS = ("mass", "second_moment", "center", "dilation")


# -- strong-form identity residuals ------------------------------------------


def _flux_divergence(r, flux):
    """(1/r) d/dr of a face flux sampled at nodes, via centered differences."""
    d = np.gradient(flux, r)
    out = np.empty_like(flux)
    out[1:] = d[1:] / r[1:]
    out[0] = out[1]
    return out


def _weighted_rel_norm(grid, resid, target, q, q_floor=1e-9):
    """Relative L^2_{1/Q} norm on the region where Q_mu is resolved."""
    r = grid.nodes
    mask = q > q_floor * 8.0
    w = np.where(mask, r / np.maximum(q, 1e-300), 0.0)
    num = grid.integrate(resid ** 2 * w)
    den = grid.integrate(target ** 2 * w)
    return float(np.sqrt(num / den))


def apply_linearized(profile: StationaryProfile, w: np.ndarray, k: int = 0,
                     pois: ModeKPoissonSolver | None = None) -> np.ndarray:
    """Discrete L w = div(Q_mu grad(M w)) for a nodal mode-k field.

    The potential phi_w comes from the factorized Poisson solve; the outer
    divergence is a centered flux derivative.  This is the honest grid
    operator (second order), used for the identity residual reports.
    """
    grid = profile.grid
    r = grid.nodes
    if pois is None:
        pois = ModeKPoissonSolver(grid, k)
    phi_w = pois.solve(w)
    mw = w / profile.q - phi_w
    dmw = np.gradient(mw, r)
    flux = r * profile.q * dmw
    out = _flux_divergence(r, flux)
    if k > 0:
        out = out - (k * k) * profile.q * mw / np.maximum(r, r[1] / 2) ** 2
        out[0] = 0.0
    return out


def verify_algebraic_identities(mu: float, grid: RadialGrid | None = None,
                                profile: StationaryProfile | None = None) -> dict:
    """Residuals of the exact eigen-identities under the discrete operator.

    Checks, in the weighted norm on the resolved region:
      L(Lambda Q) = -2 mu Lambda Q          (mode 0)
      L(Q_mu')    = -mu Q_mu'               (mode 1, radial part of d_i Q)
      L(d_mu Q - Lambda Q / 2 mu) = 0       (kernel)
      M(Lambda Q) = 2 - M/2pi - mu |y|^2    (metric identity)
      M(d_mu Q)   = -|y|^2 / 2
    """
    if grid is None:
        grid = identity_grid(mu)
    if profile is None:
        profile = solve_stationary_profile(mu, grid, tol=1e-7)
    r = grid.nodes
    q = profile.q
    dphi = profile.dphi
    _, _, _, psi, dpsi, dmu_q = profile.evaluate(r)
    lam_q = profile.lambda_q()
    qprime = (dphi - mu * r) * q
    mass = profile.mass

    p0 = ModeKPoissonSolver(grid, 0)
    p1 = ModeKPoissonSolver(grid, 1)

    out = {}
    lw = apply_linearized(profile, lam_q, 0, p0)
    out["dilation_eigen"] = _weighted_rel_norm(grid, lw + 2 * mu * lam_q,
                                               2 * mu * lam_q, q)
    lw1 = apply_linearized(profile, qprime, 1, p1)
    out["translation_eigen"] = _weighted_rel_norm(grid, lw1 + mu * qprime,
                                                  mu * qprime, q)
    ker = dmu_q - lam_q / (2.0 * mu)
    lker = apply_linearized(profile, ker, 0, p0)
    out["kernel"] = _weighted_rel_norm(grid, lker, ker, q)

    phi_lam = p0.solve(lam_q)
    m_lam = lam_q / q - phi_lam
    target = 2.0 - mass / (2.0 * np.pi) - mu * r * r
    out["metric_dilation"] = _weighted_rel_norm(grid, m_lam - target, target, q)
    phi_dmu = p0.solve(dmu_q)
    phi_dmu = phi_dmu - phi_dmu[0] + psi[0]      # match the family gauge at 0
    m_dmu = dmu_q / q - phi_dmu
    out["metric_dmu"] = _weighted_rel_norm(grid, m_dmu + 0.5 * r * r,
                                           np.maximum(0.5 * r * r, 1.0), q)
    return out


# -- appendix inequalities ----------------------------------------------------


def _phi_lambda_q(profile: StationaryProfile) -> np.ndarray:
    """Potential of Lambda Q_mu in closed form: r phi' + M/2pi."""
    r = profile.grid.nodes
    return r * profile.dphi + profile.mass / (2.0 * np.pi)


def hardy_constant(mu: float, grid: RadialGrid | None = None,
                   profile: StationaryProfile | None = None) -> float:
    """Smallest C with int f^2 r^2/(1+r^2)^2 Q <= C int Q |grad f|^2 under
    the constraint (f, phi_{Lambda Q} Q) = 0; C = 1/nu_min of the pencil."""
    if grid is None:
        grid = spectral_grid(mu)
    if profile is None:
        profile = solve_stationary_profile(mu, grid, tol=1e-6)
    r = grid.nodes
    n = len(r)
    h = np.diff(r)
    xg = (r[:-1, None] + h[:, None] * _GX[None, :]).ravel()
    phi_g, dphi_g, q_g, _, _, _ = profile.evaluate(xg)
    q_g = q_g.reshape(n - 1, 2)
    xg2 = xg.reshape(n - 1, 2)
    hardy_w = q_g * xg2 ** 2 / (1.0 + xg2 ** 2) ** 2
    G, _ = _fem_pair(r, q_g, 0)
    _, H = _fem_pair(r, hardy_w, 0)
    phi_lam_g = (xg * dphi_g + profile.mass / (2.0 * np.pi)).reshape(n - 1, 2)
    _, Mc = _fem_pair(r, phi_lam_g * q_g, 0)
    c = Mc @ np.ones(n)
    U, S, _ = np.linalg.svd(c[:, None], full_matrices=True)
    Z = U[:, 1:]
    try:
        nu = sla.eigh(Z.T @ G @ Z, Z.T @ H @ Z, eigvals_only=True,
                      subset_by_index=[0, 0])[0]
    except sla.LinAlgError as exc:
        raise EigenSolveFailure(str(exc)) from exc
    return float(1.0 / nu)


def hardy_unconstrained_constant(mu: float, grid: RadialGrid | None = None) -> float:
    """Without the constraint, constants make the quotient blow up."""
    if grid is None:
        grid = spectral_grid(mu)
    profile = solve_stationary_profile(mu, grid, tol=1e-6)
    r = grid.nodes
    n = len(r)
    h = np.diff(r)
    xg = (r[:-1, None] + h[:, None] * _GX[None, :]).ravel()
    _, _, q_g, _, _, _ = profile.evaluate(xg)
    q_g = q_g.reshape(n - 1, 2)
    xg2 = xg.reshape(n - 1, 2)
    G, _ = _fem_pair(r, q_g, 0)
    _, H = _fem_pair(r, q_g * xg2 ** 2 / (1.0 + xg2 ** 2) ** 2, 0)
    nu = sla.eigh(G, H, eigvals_only=True, subset_by_index=[0, 0])[0]
    return float(1.0 / max(nu, 1e-300))


def random_test_functions(grid: RadialGrid, n_samples: int, seed: int,
                          scales=(0.3, 30.0)) -> np.ndarray:
    """Smooth radial bumps spanning core and tail scales (fixed seed)."""
    rng = np.random.default_rng(seed)
    r = grid.nodes
    out = np.empty((n_samples, len(r)))
    lo, hi = scales
    for i in range(n_samples):
        f = np.zeros_like(r)
        for _ in range(rng.integers(1, 4)):
            center = np.exp(rng.uniform(np.log(lo), np.log(hi)))
            width = center * rng.uniform(0.3, 1.5)
            amp = rng.uniform(-1.0, 1.0)
            f = f + amp * np.exp(-((r - center) / width) ** 2 / 2.0)
        f = f + rng.uniform(-0.5, 0.5) / (1.0 + (r / rng.uniform(1, 10)) ** 2)
        out[i] = f
    return out


def verify_weighted_poincare(mu: float, n_samples: int = 100, seed: int = 7,
                             grid: RadialGrid | None = None) -> dict:
    """Smallest admissible c' in
    int Q |y|^2 f^2 <= (c'/mu^2) int Q |grad f|^2 + (c'/mu) int_{B1} Q f^2
    over a randomized smooth sample."""
    if grid is None:
        grid = spectral_grid(mu)
    profile = solve_stationary_profile(mu, grid, tol=1e-6)
    r = grid.nodes
    q = profile.q
    fs = random_test_functions(grid, n_samples, seed,
                               scales=(0.3, grid.rmax / 2.0))
    ball = r <= 1.0
    worst = 0.0
    ratios = []
    for f in fs:
        df = np.gradient(f, r)
        lhs = grid.integrate(q * r ** 2 * f ** 2 * r)
        g1 = grid.integrate(q * df ** 2 * r) / mu ** 2
        g2 = grid.integrate(np.where(ball, q * f ** 2 * r, 0.0)) / mu
        c_needed = lhs / (g1 + g2)
        ratios.append(c_needed)
        worst = max(worst, c_needed)
    return {"mu": mu, "c_prime": float(worst),
            "median": float(np.median(ratios)), "n_samples": n_samples}


def zero_mass_samples(profile: StationaryProfile, n_samples: int, seed: int,
                      kill_second_moment: bool = False) -> np.ndarray:
    """Random decaying fields with zero mass (and optionally zero |y|^2
    moment), living in L^2_{Q_mu}."""
    grid = profile.grid
    r = grid.nodes
    q = profile.q
    raw = random_test_functions(grid, n_samples, seed,
                                scales=(0.3, min(20.0, grid.rmax / 3.0)))
    raw = raw * q            # decay like the profile
    t1 = q.copy()
    t2 = q * r * r * np.exp(-r * r / max(4.0, 1.0 / profile.mu / 4.0))
    m1, i1 = grid.integrate(t1 * r), grid.integrate(t1 * r ** 3)
    m2, i2 = grid.integrate(t2 * r), grid.integrate(t2 * r ** 3)
    out = []
    for f in raw:
        mf, jf = grid.integrate(f * r), grid.integrate(f * r ** 3)
        if kill_second_moment:
            det = m1 * i2 - m2 * i1
            a = (mf * i2 - jf * m2) / det
            b = (m1 * jf - i1 * mf) / det
            out.append(f - a * t1 - b * t2)
        else:
            out.append(f - (mf / m1) * t1)
    return np.asarray(out)


def verify_potential_bounds(mu: float, n_samples: int = 100, seed: int = 11,
                            grid: RadialGrid | None = None) -> dict:
    """Measured sup over samples of the potential-control ratios
    |phi_eps|_inf, |grad phi_eps|_2, |phi_eps|_2 against |eps|_{L^2_{Q_mu}}."""
    if grid is None:
        grid = spectral_grid(mu)
    profile = solve_stationary_profile(mu, grid, tol=1e-6)
    r = grid.nodes
    q = profile.q
    pois = ModeKPoissonSolver(grid, 0)
    eps0 = zero_mass_samples(profile, n_samples, seed)
    eps2 = zero_mass_samples(profile, n_samples, seed + 1,
                             kill_second_moment=True)
    sup_ratio = grad_ratio = l2_ratio = 0.0
    for e in eps0:
        norm = np.sqrt(2 * np.pi * grid.integrate(e ** 2 / q * r))
        phi = pois.solve(e)
        sup_ratio = max(sup_ratio, np.max(np.abs(phi)) / norm)
        grad_ratio = max(grad_ratio, np.sqrt(pois.grad_sq(phi)) / norm)
    for e in eps2:
        norm = np.sqrt(2 * np.pi * grid.integrate(e ** 2 / q * r))
        phi = pois.solve(e)
        l2 = np.sqrt(2 * np.pi * grid.integrate(phi ** 2 * r))
        l2_ratio = max(l2_ratio, l2 / norm)
    return {"mu": mu, "sup_ratio": float(sup_ratio),
            "grad_ratio": float(grad_ratio), "l2_ratio": float(l2_ratio)}


# -- corrected-profile residual ------------------------------------------------


def verify_profile_residual(mu: float, grid: RadialGrid | None = None) -> dict:
    """The corrected profile's stationarity defect, two ways.

    E = mu_t Lambda Q - mu_t^2 div(d_mu Q grad phi_{d_mu Q})   (algebraic)
    E = Delta Qt + mu Lambda Qt - div(Qt grad phi_{Qt})        (direct)

    Also returns the weighted magnitude of the quadratic term, which scales
    like mu^2 |log mu|^{3/2}.
    """
    if grid is None:
        grid = identity_grid(mu)
    ap = build_corrected_profile(mu, grid)
    profile = ap.profile
    r = grid.nodes
    q = profile.q
    dphi = profile.dphi
    _, _, _, psi, dpsi, dmu_q = profile.evaluate(r)
    mu_t = ap.mu_tilde
    lam_q = profile.lambda_q()

    # algebraic form
    flux_nl = r * dmu_q * dpsi
    nl = _flux_divergence(r, flux_nl)
    e_alg = mu_t * lam_q - mu_t ** 2 * nl

    # direct form; all first derivatives analytic, one flux derivative
    qt = ap.q_tilde
    dq = (dphi - mu * r) * q
    ddmu_q = (dpsi - r) * q + (psi - 0.5 * r * r) * dq
    dqt = dq - mu_t * ddmu_q
    lap = _flux_divergence(r, r * dqt)
    lam_qt = 2.0 * qt + r * dqt
    # phi'_{Qt} = -mhat_{Qt}/r from the cumulative masses of both pieces
    mhat_q = -r * dphi
    mhat_dmu = grid.cumulative(dmu_q * r)
    dphi_qt = np.zeros_like(r)
    dphi_qt[1:] = -(mhat_q[1:] - mu_t * mhat_dmu[1:]) / r[1:]
    chem = _flux_divergence(r, r * qt * dphi_qt)
    e_dir = lap + mu * lam_qt - chem

    diff = _weighted_rel_norm(grid, e_dir - e_alg,
                              np.maximum(np.abs(e_alg), mu ** 2), q)
    wnorm = mu_t ** 2 * np.sqrt(
        2 * np.pi * grid.integrate(np.where(q > 8e-9, nl ** 2 / np.maximum(q, 1e-300) * r, 0.0))
    )
    return {"mu": mu, "difference": float(diff), "quadratic_term": float(wnorm),
            "mu_tilde": mu_t}
