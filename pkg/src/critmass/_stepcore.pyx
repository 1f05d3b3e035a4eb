# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel for the implicit partial-mass step.

Same scheme as ``_stepcore_py``: backward Euler on the exponentially fitted
three-point stencil for

    mhat_t = mhat'' + v(r, mhat) mhat',   v = (mhat-1)/r [+ r],

with the integrating factor of the frozen-face model

    G(x; mf, ref) = (mf - 1) log(x/ref) [+ (x^2 - ref^2)/2]

integrated by 4-point Gauss rules, solved per step by damped Newton with a
tridiagonal Jacobian.  The whole iteration runs in C; this is the hot loop
of every simulation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log
from libc.stdlib cimport free, malloc

COMPILED = True

cdef double[4] GX
cdef double[4] GW
GX[0] = 0.069431844202974
GX[1] = 0.330009478207572
GX[2] = 0.669990521792428
GX[3] = 0.930568155797026
GW[0] = 0.173927422568727
GW[1] = 0.326072577431273
GW[2] = 0.326072577431273
GW[3] = 0.173927422568727

cdef double EXP_CAP = 500.0


cdef inline void gauss_pair(double a, double b, double ref, double mf,
                            double sign, bint selfsim,
                            double* val, double* dval) nogil:
    """integral_a^b exp(sign*G(x; mf, ref)) dx and its d/dmf."""
    cdef double acc = 0.0, dacc = 0.0
    cdef double x, lg, ex, w
    cdef int k
    for k in range(4):
        x = a + (b - a) * GX[k]
        lg = log(x / ref)
        ex = (mf - 1.0) * lg
        if selfsim:
            ex += 0.5 * (x * x - ref * ref)
        ex *= sign
        if ex > EXP_CAP:
            ex = EXP_CAP
        elif ex < -EXP_CAP:
            ex = -EXP_CAP
        w = exp(ex) * GW[k]
        acc += w
        dacc += w * sign * lg
    val[0] = (b - a) * acc
    dval[0] = (b - a) * dacc


cdef double _fill(double* mk, double* mold, double* r, int n, double dt,
                  bint selfsim, double* F, double* Ip, double* Im,
                  double* C, double* dIp, double* dIm, double* dCl,
                  double* dCr, double* Lv, bint need_jac,
                  double* flux_scale) nogil:
    """Residual (and, when need_jac, the fitted integrals) for state mk."""
    cdef int i
    cdef double mfL, mfR, ri, fl, fr
    cdef double ip, im, cl, cr, dip, dim, dcl, dcr
    cdef double jp, jm, L, fi, sc, err = 0.0
    flux_scale[0] = 0.0
    for i in range(1, n - 1):
        ri = r[i]
        mfL = 0.5 * (mk[i - 1] + mk[i])
        mfR = 0.5 * (mk[i] + mk[i + 1])
        fl = 0.5 * (r[i - 1] + ri)
        fr = 0.5 * (ri + r[i + 1])
        gauss_pair(ri, r[i + 1], ri, mfR, -1.0, selfsim, &ip, &dip)
        gauss_pair(r[i - 1], ri, ri, mfL, -1.0, selfsim, &im, &dim)
        gauss_pair(fl, ri, ri, mfL, 1.0, selfsim, &cl, &dcl)
        gauss_pair(ri, fr, ri, mfR, 1.0, selfsim, &cr, &dcr)
        jp = (mk[i + 1] - mk[i]) / ip
        jm = (mk[i] - mk[i - 1]) / im
        L = (jp - jm) / (cl + cr)
        fi = mk[i] - dt * L - mold[i]
        F[i] = fi
        if fabs(fi) > err:
            err = fabs(fi)
        # roundoff scale of the flux differences (eps * |m| amplified)
        sc = dt * ((fabs(mk[i + 1]) + fabs(mk[i])) / ip
                   + (fabs(mk[i]) + fabs(mk[i - 1])) / im) / (cl + cr)
        if sc > flux_scale[0]:
            flux_scale[0] = sc
        if need_jac:
            Ip[i] = ip
            Im[i] = im
            C[i] = cl + cr
            dIp[i] = dip
            dIm[i] = dim
            dCl[i] = dcl
            dCr[i] = dcr
            Lv[i] = L
    F[0] = 0.0
    F[n - 1] = 0.0
    return err


def newton_step(cnp.ndarray[double, ndim=1] m_in,
                cnp.ndarray[double, ndim=1] r_in,
                double dt, double mhat_inf, bint selfsim,
                double tol=1e-11, int maxit=14):
    """One backward-Euler step; returns (m_new, iterations, converged)."""
    cdef int n = m_in.shape[0]
    cdef cnp.ndarray[double, ndim=1] mk_arr = m_in.copy()
    cdef double* mk = <double*> mk_arr.data
    cdef double* mold = <double*> (<cnp.ndarray[double, ndim=1]> m_in).data
    cdef double* r = <double*> (<cnp.ndarray[double, ndim=1]> r_in).data

    cdef double* buf = <double*> malloc(sizeof(double) * n * 13)
    if buf == NULL:
        raise MemoryError()
    cdef double* F = buf
    cdef double* Ip = buf + n
    cdef double* Im = buf + 2 * n
    cdef double* C = buf + 3 * n
    cdef double* dIp = buf + 4 * n
    cdef double* dIm = buf + 5 * n
    cdef double* dCl = buf + 6 * n
    cdef double* dCr = buf + 7 * n
    cdef double* Lv = buf + 8 * n
    cdef double* cp = buf + 9 * n
    cdef double* dp = buf + 10 * n
    cdef double* dlt = buf + 11 * n
    cdef double* trial = buf + 12 * n

    cdef int i, it = 0, ls
    cdef bint converged = False
    cdef double err, err2, lam, den, fscale, tol_eff
    cdef double jpf, jmf, dLl, dLi, dLr, lo_i, dg_i, up_i
    cdef double* lo = dIp   # reused after jacobian row assembly
    cdef double* dg = dIm
    cdef double* up = dCl

    with nogil:
        mk[0] = 0.0
        mk[n - 1] = mhat_inf
        while it < maxit:
            it += 1
            err = _fill(mk, mold, r, n, dt, selfsim, F, Ip, Im, C,
                        dIp, dIm, dCl, dCr, Lv, True, &fscale)
            tol_eff = 4e-16 * fscale
            if tol > tol_eff:
                tol_eff = tol
            if err <= tol_eff:
                converged = True
                break

            for i in range(1, n - 1):
                jpf = -((mk[i + 1] - mk[i]) / Ip[i]) * dIp[i] / Ip[i] * 0.5
                jmf = -((mk[i] - mk[i - 1]) / Im[i]) * dIm[i] / Im[i] * 0.5
                dLr = (1.0 / Ip[i] + jpf) / C[i] - Lv[i] * (0.5 * dCr[i]) / C[i]
                dLl = (1.0 / Im[i] - jmf) / C[i] - Lv[i] * (0.5 * dCl[i]) / C[i]
                dLi = (-1.0 / Ip[i] + jpf - 1.0 / Im[i] - jmf) / C[i] \
                    - Lv[i] * 0.5 * (dCl[i] + dCr[i]) / C[i]
                lo[i] = -dt * dLl
                dg[i] = 1.0 - dt * dLi
                up[i] = -dt * dLr
            lo[0] = 0.0
            dg[0] = 1.0
            up[0] = 0.0
            lo[n - 1] = 0.0
            dg[n - 1] = 1.0
            up[n - 1] = 0.0

            cp[0] = up[0] / dg[0]
            dp[0] = -F[0] / dg[0]
            for i in range(1, n):
                den = dg[i] - lo[i] * cp[i - 1]
                cp[i] = up[i] / den
                dp[i] = (-F[i] - lo[i] * dp[i - 1]) / den
            dlt[n - 1] = dp[n - 1]
            for i in range(n - 2, -1, -1):
                dlt[i] = dp[i] - cp[i] * dlt[i + 1]

            lam = 1.0
            for ls in range(5):
                for i in range(n):
                    trial[i] = mk[i] + lam * dlt[i]
                trial[0] = 0.0
                trial[n - 1] = mhat_inf
                err2 = _fill(trial, mold, r, n, dt, selfsim, F, Ip, Im, C,
                             dIp, dIm, dCl, dCr, Lv, False, &fscale)
                if err2 < err or lam < 0.06:
                    break
                lam *= 0.5
            for i in range(n):
                mk[i] = trial[i]

    free(buf)
    return mk_arr, it, converged
