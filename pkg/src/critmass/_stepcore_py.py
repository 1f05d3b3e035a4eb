"""Pure-numpy reference kernel for the implicit partial-mass step.

The equation in either frame is advection-diffusion in the scaled partial
mass mhat(r) = m(r)/2pi:

    mhat_t = mhat'' + v(r, mhat) mhat',
    v = (mhat - 1)/r  [+ r in the self-similar frame],

with mhat(0) = 0 and mhat(R) = mhat_inf.  One backward-Euler step is solved
by damped Newton on an exponentially fitted three-point stencil: freezing
only the face value of mhat, the integrating factor

    S(x) - S(r_i) = (mhat_f - 1) log(x/r_i) [+ (x^2 - r_i^2)/2]

is integrated exactly (small Gauss rules), so the stencil reproduces local
steady states of the frozen-coefficient model exactly, including the 1/r
geometric part near the origin.  That exactness is what keeps the
exponentially shrinking far-field mass deficit of near-steady states from
being polluted by truncation error.  The Jacobian stays tridiagonal because
each face value depends only on its two adjacent unknowns.

A Cython translation (``_stepcore``) is preferred at import time when
available; both expose ``newton_step`` with identical semantics.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

COMPILED = False

# 4-point Gauss-Legendre on [0, 1]
_GX = np.array([0.069431844202974, 0.330009478207572,
                0.669990521792428, 0.930568155797026])
_GW = np.array([0.173927422568727, 0.326072577431273,
                0.326072577431273, 0.173927422568727])

_EXP_CAP = 500.0


def _face_integrals(m, r, selfsim):
    """Fitted interval/cell integrals for the current iterate.

    Returns (Ip, Im, C, dIp, dIm, dC) where for interior node i:
      Ip[i-1]  = int_{r_i}^{r_{i+1}} exp(-G(x; f+; r_i)) dx
      Im[i-1]  = int_{r_{i-1}}^{r_i} exp(-G(x; f-; r_i)) dx
      C[i-1]   = int_{f-}^{r_i} exp(G(x; f-; r_i)) dx
               + int_{r_i}^{f+} exp(G(x; f+; r_i)) dx
    and d* are derivatives with respect to the face value mhat_f (the
    exponent depends on it through (mhat_f - 1) log(x/r_i)).
    """
    n = len(r)
    mf = 0.5 * (m[1:] + m[:-1])          # face values, shape n-1
    ri = r[1:-1]                          # interior nodes, shape n-2

    def gauss(a, b, ref, mfv, sign):
        # int_a^b exp(sign*G(x; mfv; ref)) dx and d/dmf of it
        x = a[:, None] + (b - a)[:, None] * _GX[None, :]
        lg = np.log(x / ref[:, None])
        ex = (mfv[:, None] - 1.0) * lg
        if selfsim:
            ex = ex + 0.5 * (x * x - (ref * ref)[:, None])
        ex = np.clip(sign * ex, -_EXP_CAP, _EXP_CAP)
        w = np.exp(ex) * _GW[None, :]
        val = (b - a) * np.sum(w, axis=1)
        dval = (b - a) * np.sum(w * sign * lg, axis=1)
        return val, dval

    # outgoing interval for node i: [r_i, r_{i+1}], face i (mf[1:])
    Ip, dIp = gauss(r[1:-1], r[2:], ri, mf[1:], -1.0)
    # incoming interval for node i: [r_{i-1}, r_i], face i-1 (mf[:-1])
    Im, dIm = gauss(r[:-2], r[1:-1], ri, mf[:-1], -1.0)
    # cell halves around node i
    fl = 0.5 * (r[:-2] + r[1:-1])
    fr = 0.5 * (r[1:-1] + r[2:])
    Cl, dCl = gauss(fl, ri, ri, mf[:-1], +1.0)
    Cr, dCr = gauss(ri, fr, ri, mf[1:], +1.0)
    return Ip, Im, Cl + Cr, dIp, dIm, dCl, dCr


def _residual(m, m_old, r, dt, selfsim, geom=None):
    Ip, Im, C, *_ = _face_integrals(m, r, selfsim)
    jp = (m[2:] - m[1:-1]) / Ip
    jm = (m[1:-1] - m[:-2]) / Im
    L = (jp - jm) / C
    F = np.zeros_like(m)
    F[1:-1] = m[1:-1] - dt * L - m_old[1:-1]
    return F, jp, jm, C


def newton_step(m, r, dt, mhat_inf, selfsim, tol=1e-11, maxit=14):
    """One backward-Euler step; returns (m_new, iterations, converged).

    Convergence is declared at max|F| <= max(tol, roundoff floor), where the
    floor tracks the cancellation scale dt*(|jp|+|jm|)/C of the residual;
    near the concentration core that scale exceeds tol/eps.
    """
    n = len(m)
    mk = m.copy()
    mk[0] = 0.0
    mk[-1] = mhat_inf
    converged = False
    it = 0
    for it in range(1, maxit + 1):
        Ip, Im, C, dIp, dIm, dCl, dCr = _face_integrals(mk, r, selfsim)
        jp = (mk[2:] - mk[1:-1]) / Ip
        jm = (mk[1:-1] - mk[:-2]) / Im
        L = (jp - jm) / C
        F = np.zeros(n)
        F[1:-1] = mk[1:-1] - dt * L - m[1:-1]
        err = np.max(np.abs(F))
        # roundoff floor of the residual: the flux differences cancel to
        # O(eps * |m|), amplified by dt/(I*C)
        floor = 4e-16 * dt * np.max(
            ((np.abs(mk[2:]) + np.abs(mk[1:-1])) / Ip
             + (np.abs(mk[1:-1]) + np.abs(mk[:-2])) / Im) / C
        )
        if err <= max(tol, floor):
            converged = True
            break

        # d(jp)/dm_{i+1} = 1/Ip + (m_{i+1}-m_i)*(-dIp/Ip^2)*0.5 etc.
        jp_f = -jp * dIp / Ip * 0.5          # via face value (dmf/dm = 1/2)
        jm_f = -jm * dIm / Im * 0.5
        dL_ip1 = (1.0 / Ip + jp_f) / C - L * (dCr * 0.5) / C
        dL_im1 = (1.0 / Im - jm_f) / C - L * (dCl * 0.5) / C
        dL_i = (-1.0 / Ip + jp_f - 1.0 / Im - jm_f) / C \
            - L * 0.5 * (dCl + dCr) / C
        lower = np.zeros(n)
        diag = np.ones(n)
        upper = np.zeros(n)
        lower[1:-1] = -dt * dL_im1
        diag[1:-1] = 1.0 - dt * dL_i
        upper[1:-1] = -dt * dL_ip1
        ab = np.zeros((3, n))
        ab[0, 1:] = upper[:-1]
        ab[1] = diag
        ab[2, :-1] = lower[1:]
        delta = solve_banded((1, 1), ab, -F)

        lam = 1.0
        for _ in range(5):
            mn = mk + lam * delta
            mn[0] = 0.0
            mn[-1] = mhat_inf
            F2, _, _, _ = _residual(mn, m, r, dt, selfsim)
            if np.max(np.abs(F2)) < err or lam < 0.06:
                break
            lam *= 0.5
        mk = mn
    return mk, it, converged
