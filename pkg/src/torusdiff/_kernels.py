"""Compiled inner loops for the particle-field evolution and the spectral
transforms built on top of it.

All kernels are deterministic given their inputs: parallel sections never
reduce across rows, so results are bitwise independent of the number of
threads.  ``fastmath`` is enabled for speed; every reduction that feeds a
reported statistic happens outside these kernels in fixed order.
"""

import numpy as np
from numba import njit, prange

TWOPI = 2.0 * np.pi


@njit(cache=True, fastmath=True)
def evolve_row(x, logf, n_steps, fa, fb, kfa, kfb, dbeta, qv_drift_dt,
               x_hist, logf_hist):
    """Evolve one row of particles with its derivative log-factor.

    x, logf          : state vectors of P points, updated in place
    fa, fb           : (n_steps, K+1) coefficient-weighted folded W increments
                       (fa[n, k] = f_k * (dw_re[n,+k] + dw_re[n,-k]), etc.)
    kfa, kfb         : same, additionally weighted by the mode number k
    dbeta            : (n_steps,) idiosyncratic increments for this row
    qv_drift_dt      : dt/2 * sum f_k^2 k^2, the exact log-space drift
    x_hist, logf_hist: (n_steps+1, P) history storage

    The first-derivative field is represented by its g'-free log-factor:
    d1(t, u) = g'(u) * exp(logf(t, u)).  Stepping the log keeps d1 positive
    exactly and makes the parametric-flow derivative identity hold bitwise.
    """
    P = x.shape[0]
    K1 = fa.shape[1]
    for p in range(P):
        x_hist[0, p] = x[p]
        logf_hist[0, p] = logf[p]
    c = np.empty(P)
    s = np.empty(P)
    ck = np.empty(P)
    sk = np.empty(P)
    for n in range(n_steps):
        db = dbeta[n]
        if K1 > 1:
            for p in range(P):
                c[p] = np.cos(x[p])
                s[p] = np.sin(x[p])
                ck[p] = c[p]
                sk[p] = s[p]
            a1 = fa[n, 1]
            b1 = fb[n, 1]
            ka1 = kfa[n, 1]
            kb1 = kfb[n, 1]
            for p in range(P):
                x[p] += fa[n, 0] + db + a1 * ck[p] + b1 * sk[p]
                logf[p] += -ka1 * sk[p] + kb1 * ck[p] - qv_drift_dt
            for k in range(2, K1):
                akk = fa[n, k]
                bkk = fb[n, k]
                kak = kfa[n, k]
                kbk = kfb[n, k]
                for p in range(P):
                    cn = ck[p] * c[p] - sk[p] * s[p]
                    sn = sk[p] * c[p] + ck[p] * s[p]
                    ck[p] = cn
                    sk[p] = sn
                    x[p] += akk * cn + bkk * sn
                    logf[p] += -kak * sn + kbk * cn
        else:
            for p in range(P):
                x[p] += fa[n, 0] + db
                logf[p] -= qv_drift_dt
        for p in range(P):
            x_hist[n + 1, p] = x[p]
            logf_hist[n + 1, p] = logf[p]


@njit(cache=True, fastmath=True)
def evolve_row_deriv3(x, logf, d2, d3, g1, n_steps, fa, fb, dbeta,
                      qv_drift_dt, x_hist, logf_hist, d2_hist, d3_hist):
    """Evolve one row with second and third u-derivative fields.

    The higher derivatives follow the formally differentiated variation
    equations, Euler-stepped in natural space (they change sign, so no log
    transform):

        d(d2) = G2 * d1^2 + G1 * d2
        d(d3) = G3 * d1^3 + 3 G2 * d1 * d2 + G1 * d3

    with G_j the j-th x-derivative of the noise field increment.
    """
    P = x.shape[0]
    K1 = fa.shape[1]
    for p in range(P):
        x_hist[0, p] = x[p]
        logf_hist[0, p] = logf[p]
        d2_hist[0, p] = d2[p]
        d3_hist[0, p] = d3[p]
    for n in range(n_steps):
        db = dbeta[n]
        for p in range(P):
            cp = np.cos(x[p])
            sp = np.sin(x[p])
            ck = cp
            sk = sp
            g0 = fa[n, 0]
            g1i = 0.0
            g2i = 0.0
            g3i = 0.0
            for k in range(1, K1):
                if k > 1:
                    cn = ck * cp - sk * sp
                    sn = sk * cp + ck * sp
                    ck = cn
                    sk = sn
                ak = fa[n, k]
                bk = fb[n, k]
                kk = float(k)
                g0 += ak * ck + bk * sk
                g1i += kk * (-ak * sk + bk * ck)
                g2i += kk * kk * (-ak * ck - bk * sk)
                g3i += kk * kk * kk * (ak * sk - bk * ck)
            d1 = g1[p] * np.exp(logf[p])
            d2new = d2[p] + g2i * d1 * d1 + g1i * d2[p]
            d3new = (d3[p] + g3i * d1 * d1 * d1
                     + 3.0 * g2i * d1 * d2[p] + g1i * d3[p])
            x[p] += g0 + db
            logf[p] += g1i - qv_drift_dt
            d2[p] = d2new
            d3[p] = d3new
            x_hist[n + 1, p] = x[p]
            logf_hist[n + 1, p] = logf[p]
            d2_hist[n + 1, p] = d2new
            d3_hist[n + 1, p] = d3new


@njit(cache=True, fastmath=True, parallel=True)
def evolve_batch(x, n_steps, fa, fb, dbeta, snap_steps, snaps):
    """Evolve a batch of rows sharing the common noise, positions only.

    x          : (R, P) positions, updated in place
    dbeta      : (n_steps, R) per-row idiosyncratic increments
    snap_steps : sorted step indices at which to copy the state out
    snaps      : (len(snap_steps), R, P) output
    """
    R, P = x.shape
    K1 = fa.shape[1]
    n_snap = snap_steps.shape[0]
    for r in prange(R):
        c = np.empty(P)
        s = np.empty(P)
        ck = np.empty(P)
        sk = np.empty(P)
        isnap = 0
        while isnap < n_snap and snap_steps[isnap] == 0:
            for p in range(P):
                snaps[isnap, r, p] = x[r, p]
            isnap += 1
        for n in range(n_steps):
            db = dbeta[n, r]
            if K1 > 1:
                for p in range(P):
                    c[p] = np.cos(x[r, p])
                    s[p] = np.sin(x[r, p])
                    ck[p] = c[p]
                    sk[p] = s[p]
                a1 = fa[n, 1]
                b1 = fb[n, 1]
                for p in range(P):
                    x[r, p] += fa[n, 0] + db + a1 * ck[p] + b1 * sk[p]
                for k in range(2, K1):
                    akk = fa[n, k]
                    bkk = fb[n, k]
                    for p in range(P):
                        cn = ck[p] * c[p] - sk[p] * s[p]
                        sn = sk[p] * c[p] + ck[p] * s[p]
                        ck[p] = cn
                        sk[p] = sn
                        x[r, p] += akk * cn + bkk * sn
            else:
                for p in range(P):
                    x[r, p] += fa[n, 0] + db
            while isnap < n_snap and snap_steps[isnap] == n + 1:
                for p in range(P):
                    snaps[isnap, r, p] = x[r, p]
                isnap += 1


@njit(cache=True, fastmath=True, parallel=True)
def field_coefficients(x_hist, weights, k_count, out):
    """Fourier coefficients of the transport field along a stored path.

    For each step n, out[n, k] = sum_p weights[n, p] * exp(i k x[n, p]),
    k = 0..k_count.  With weights = h(u) d1(u)^2 / (2 pi N) this is the
    change-of-variables quadrature of
    (1/2pi) * int A(y) exp(iky) dy  for  A(y) = d1(F(y)) h(F(y)).
    """
    n_rows = x_hist.shape[0]
    P = x_hist.shape[1]
    for n in prange(n_rows):
        cr = np.empty(P)
        ci = np.empty(P)
        ck = np.empty(P)
        sk = np.empty(P)
        acc0 = 0.0
        for p in range(P):
            cr[p] = np.cos(x_hist[n, p])
            ci[p] = np.sin(x_hist[n, p])
            ck[p] = 1.0
            sk[p] = 0.0
            acc0 += weights[n, p]
        out[n, 0] = acc0 + 0.0j
        for k in range(1, k_count + 1):
            accr = 0.0
            acci = 0.0
            for p in range(P):
                cn = ck[p] * cr[p] - sk[p] * ci[p]
                sn = sk[p] * cr[p] + ck[p] * ci[p]
                ck[p] = cn
                sk[p] = sn
                accr += weights[n, p] * cn
                acci += weights[n, p] * sn
            out[n, k] = complex(accr, acci)


@njit(cache=True, fastmath=True, parallel=True)
def mollified_eval(coeffs, gauss, xq, out):
    """Evaluate sum_k c_k m_k e^{-i k x} (real field, c_{-k} = conj c_k).

    coeffs : (n_rows, K+1) coefficients for k >= 0
    gauss  : (K+1,) real multipliers m_k (mollifier factors)
    xq     : (n_rows, P) evaluation points, one row per coefficient row
    out    : (n_rows, P) result:  c_0 m_0 + 2 Re sum_{k>=1} c_k m_k e^{-ikx}
    """
    n_rows = coeffs.shape[0]
    K1 = coeffs.shape[1]
    P = xq.shape[1]
    for n in prange(n_rows):
        cr = np.empty(P)
        ci = np.empty(P)
        ck = np.empty(P)
        sk = np.empty(P)
        for p in range(P):
            cr[p] = np.cos(xq[n, p])
            ci[p] = np.sin(xq[n, p])
            ck[p] = 1.0
            sk[p] = 0.0
            out[n, p] = coeffs[n, 0].real * gauss[0]
        for k in range(1, K1):
            gk = gauss[k]
            if gk == 0.0:
                break
            ar = coeffs[n, k].real * gk
            ai = coeffs[n, k].imag * gk
            for p in range(P):
                cn = ck[p] * cr[p] - sk[p] * ci[p]
                sn = sk[p] * cr[p] + ck[p] * ci[p]
                ck[p] = cn
                sk[p] = sn
                # 2 Re(c_k e^{-ikx}) = 2 (Re c_k cos kx + Im c_k sin kx)
                out[n, p] += 2.0 * (ar * cn + ai * sn)


@njit(cache=True, fastmath=True)
def kde_fourier_sums(samples, k_count):
    """cos/sin moment sums of a sample cloud, k = 0..k_count."""
    flat = samples.ravel()
    n = flat.shape[0]
    cs = np.zeros(k_count + 1)
    sn = np.zeros(k_count + 1)
    for i in range(n):
        cp = np.cos(flat[i])
        sp = np.sin(flat[i])
        ck = 1.0
        sk = 0.0
        cs[0] += 1.0
        for k in range(1, k_count + 1):
            cn = ck * cp - sk * sp
            snw = sk * cp + ck * sp
            ck = cn
            sk = snw
            cs[k] += cn
            sn[k] += snw
    return cs / n, sn / n
