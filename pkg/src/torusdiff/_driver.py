"""Replica-level Monte Carlo plumbing shared by the estimator front-ends.

One common-noise replica bundles:

* a dedicated "path" row carrying the full time history (it feeds the
  transport field, the Girsanov weight, the remainder integrals and the
  direct estimator integrand); its idiosyncratic stream index is m_beta;
* a block of m_beta "measure" rows (stream indices 0..m_beta-1) whose
  positions represent the idiosyncratically averaged empirical measure.

Keeping the weight path out of the measure block makes the weighted
estimators unbiased: the functional value and the weight are independent
given the common noise.

Truncation convention: only modes |k| <= k_max carry noise streams, so only
those can enter the Girsanov weight.  The mollified transport field is
projected onto the sampled modes before both the weight and the remainder
integrand see it; the residue (reported as ``dropped``) therefore rides in
the remainder term and the two-term split stays exact at any truncation,
including the degenerate profile f == 0 where the weighted term vanishes
and the remainder alone carries the whole gradient.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .engine import EngineError, evolve, log_factor_drift
from .geometry import TWOPI, QuantileState
from .noise import (FourierProfile, NoisePath, fold_increments,
                    sample_beta_increments, sample_w_increments)


def beta_matrix(seed, replica, n_steps, dt, m_beta, first_index=0):
    """Idiosyncratic increments for a block of rows, one keyed stream per row."""
    cols = [sample_beta_increments(seed, replica, first_index + b, n_steps, dt)
            for b in range(m_beta)]
    return np.stack(cols, axis=1) if cols else np.zeros((n_steps, 0))


def _steps_for(t, dt):
    n = int(round(t / dt))
    if n < 0 or abs(n * dt - t) > 1e-9:
        raise ValueError(f"t={t} is not a nonnegative multiple of dt={dt}")
    return n


def measure_block(g: QuantileState, profile: FourierProfile, t, m_beta,
                  seed, replica, dt=1e-3, snap_times=None, noise_w=None,
                  x_init=None):
    """Evolve the measure rows; returns samples (N_u, m_beta) at time t, or
    a list of such arrays when snap_times is given."""
    times = [t] if snap_times is None else list(snap_times)
    n_steps = _steps_for(max(times), dt)
    snap_steps = np.array(sorted(_steps_for(s, dt) for s in times), dtype=np.int64)
    if noise_w is None:
        dw_re, dw_im = sample_w_increments(profile, seed, replica, n_steps, dt)
        a, b = fold_increments(dw_re, dw_im, profile.k_max)
    else:
        a, b = noise_w
    f = profile.coeffs
    fa, fb = a[:n_steps] * f, b[:n_steps] * f
    db = beta_matrix(seed, replica, n_steps, dt, m_beta)
    base = g.values[:-1] if x_init is None else np.asarray(x_init)
    x = np.tile(base, (m_beta, 1))
    snaps = np.empty((snap_steps.size, m_beta, x.shape[1]))
    _kernels.evolve_batch(x, n_steps, fa, fb, db, snap_steps, snaps)
    if not np.all(np.isfinite(x)):
        raise EngineError("measure block produced non-finite values")
    out = [snaps[i].T.copy() for i in range(snap_steps.size)]
    return out[0] if snap_times is None else out


def path_and_measure(g, profile, t, m_beta, seed, replica, dt=1e-3):
    """One history-carrying path plus the measure block, shared common noise."""
    n_steps = _steps_for(t, dt)
    dw_re, dw_im = sample_w_increments(profile, seed, replica, n_steps, dt)
    dbeta = sample_beta_increments(seed, replica, m_beta, n_steps, dt)
    noise = NoisePath(seed=seed, replica=replica, beta_index=m_beta,
                      n_steps=n_steps, dt=dt, k_max=profile.k_max,
                      dw_re=dw_re, dw_im=dw_im, dbeta=dbeta)
    path = evolve(g, profile, noise)
    folds = fold_increments(dw_re, dw_im, profile.k_max)
    samples = measure_block(g, profile, t, m_beta, seed, replica, dt,
                            noise_w=folds)
    return path, samples


def spectral_xprime(x_open_rows):
    """u-derivative of the realized pseudo-periodic field rows by spectral
    differentiation of the 1-periodic part.

    This is the derivative of the trigonometric interpolant of the stored
    nodes.  It differs from the log-space derivative representation by the
    scheme's strong error; the transport-field quadrature needs exactly
    this Jacobian for its change of variables to be consistent with the
    realized field.
    """
    rows = np.atleast_2d(x_open_rows)
    n = rows.shape[1]
    u = np.arange(n) / n
    spec = np.fft.rfft(rows - TWOPI * u, axis=1)
    k = np.arange(spec.shape[1])
    d = np.fft.irfft(spec * (TWOPI * 1j * k), n, axis=1) + TWOPI
    return d if x_open_rows.ndim == 2 else d[0]


def mollifier_cutoff(eps, k_cap, rel_tol=1e-16):
    """Highest mode whose Gaussian factor exceeds rel_tol, capped at k_cap."""
    k = int(np.ceil(np.sqrt(2.0 * np.log(1.0 / rel_tol)) / eps))
    return min(k, k_cap)


def gaussian_factors(eps, k_count):
    k = np.arange(k_count + 1, dtype=np.float64)
    return np.exp(-0.5 * (k * eps) ** 2)


class GradientRun:
    """Per-replica component arrays of one shared-noise gradient run.

    All components estimate along the direction g' * h_tilde:

      i1        (m, t, eps): weighted term, (phi(mu_t) - cv) * W_ito / t
      i2        (m, t, eps): remainder, the (s, u) double integral against
                             the unrepresented part of the transport field
      direct    (m, t)     : Lions-derivative ground truth
      fd        (m, t)     : central finite difference (optional)
      phi_t     (m, t)     : functional on the averaged measure
      weight_l2 (m, t, eps): sum_k int_0^t |lambda_s^k|^2 ds
      dropped   (m, t, eps): energy share of the mollified field beyond the
                             sampled modes
      k_inf     (m, t, eps): sup norm of the remainder kernel (optional)
    """

    def __init__(self, t_grid, eps_grid, m_w, with_fd, with_kernel):
        self.t_grid = np.asarray(t_grid, dtype=np.float64)
        self.eps_grid = np.asarray(eps_grid, dtype=np.float64)
        nt, ne = self.t_grid.size, self.eps_grid.size
        self.i1 = np.zeros((m_w, nt, ne))
        self.i2 = np.zeros((m_w, nt, ne))
        self.direct = np.zeros((m_w, nt))
        self.fd = np.zeros((m_w, nt)) if with_fd else None
        self.phi_t = np.zeros((m_w, nt))
        self.weight_l2 = np.zeros((m_w, nt, ne))
        self.dropped = np.zeros((m_w, nt, ne))
        self.k_inf = np.zeros((m_w, nt, ne)) if with_kernel else None
        self.control_value = 0.0

    @property
    def m_w(self):
        return self.i1.shape[0]

    def total(self):
        return self.i1 + self.i2

    @staticmethod
    def mean_se(samples):
        samples = np.asarray(samples)
        m = samples.shape[0]
        mean = np.mean(samples, axis=0)
        se = (np.std(samples, axis=0, ddof=1) / np.sqrt(m)) if m > 1 else 0.0 * mean
        return mean, se


def run_gradient_replicas(g, h_tilde, phi, profile, t_grid, eps_grid,
                          m_w, m_beta, seed, dt=1e-3, rho_fd=None,
                          with_kernel=False, control_variate=True,
                          k_grid=512) -> GradientRun:
    """Shared-noise Monte Carlo of the gradient estimators on a (t, eps) grid.

    The run estimates the derivative along g' * h_tilde; passing
    h_tilde = h / g' therefore estimates the plain-h gradient.  All
    components of one replica reuse one evolution, so cross-estimator
    differences enjoy common-random-number variance reduction.
    """
    t_grid = sorted(float(t) for t in t_grid)
    if t_grid[0] <= 0.0:
        raise ValueError("t_grid entries must be positive")
    eps_grid = [float(e) for e in eps_grid]
    run = GradientRun(t_grid, eps_grid, m_w, rho_fd is not None, with_kernel)
    n_max = _steps_for(t_grid[-1], dt)
    steps = [_steps_for(t, dt) for t in t_grid]
    # the u-quadrature aliases beyond its Nyquist mode, so cap there; modes
    # the grid cannot resolve are treated as dropped, which keeps the
    # two-term split exact (the remainder subtracts the same projection)
    k_cap = min(k_grid // 2 - 1, g.n_u // 2 - 1)
    k_w = min(profile.k_max, k_cap)
    k_count = max(k_w, max(mollifier_cutoff(e, k_cap) for e in eps_grid))
    f = profile.coeffs
    k_max = profile.k_max
    kk = np.arange(k_max + 1)
    cv_t = np.array([phi.heat_proxy(g, profile.qv_rate, t) for t in t_grid]
                    ) if control_variate else np.zeros(len(t_grid))
    run.control_value = cv_t

    h_open = np.ascontiguousarray(h_tilde.values[:-1])
    g1_open = np.ascontiguousarray(g.deriv1[:-1])
    n_u = h_open.size
    w_u = 1.0 / n_u                      # periodic rectangle rule weight

    zero_family = profile.sum_sq == 0.0
    # full mollifier factors (diagnostics) and the sampled-mode projection
    # that the weight and the remainder both use; with f == 0 no mode is
    # invertible, the projection is empty and the remainder carries the
    # whole gradient
    gauss_full, gauss_w = [], []
    for e in eps_grid:
        gf = gaussian_factors(e, k_count)
        gf[mollifier_cutoff(e, k_cap) + 1:] = 0.0
        gauss_full.append(gf)
        gw = gf.copy()
        gw[k_w + 1:] = 0.0
        if zero_family:
            gw[:] = 0.0
        gauss_w.append(gw)

    snap_steps = np.array(steps, dtype=np.int64)
    drift = log_factor_drift(profile, dt)

    for m in range(m_w):
        dw_re, dw_im = sample_w_increments(profile, seed, m, n_max, dt)
        a_fold, b_fold = fold_increments(dw_re, dw_im, k_max)
        fa, fb = a_fold * f, b_fold * f
        kfa, kfb = fa * kk, fb * kk
        dbeta_path = sample_beta_increments(seed, m, m_beta, n_max, dt)

        x = g.values[:-1].copy()
        logf = np.zeros(n_u)
        x_hist = np.empty((n_max + 1, n_u))
        logf_hist = np.empty((n_max + 1, n_u))
        _kernels.evolve_row(x, logf, n_max, fa, fb, kfa, kfb, dbeta_path,
                            drift, x_hist, logf_hist)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(logf))):
            raise EngineError(f"path replica {m} produced non-finite values")
        d1_hist = g1_open * np.exp(logf_hist)

        # Jacobian: the realized field's own derivative (spectral), so the
        # coefficient quadrature is exact for the interpolated field; the
        # transported values d1 * h stay pinned to the defining identity
        xprime = spectral_xprime(x_hist)
        weights = (h_open * d1_hist * xprime) / (TWOPI * n_u)
        coeffs = np.empty((n_max + 1, k_count + 1), dtype=np.complex128)
        _kernels.field_coefficients(x_hist, weights, k_count, coeffs)

        db_meas = beta_matrix(seed, m, n_max, dt, m_beta)
        xm = np.tile(g.values[:-1], (m_beta, 1))
        snaps = np.empty((len(steps), m_beta, n_u))
        _kernels.evolve_batch(xm, n_max, fa, fb, db_meas, snap_steps, snaps)
        if not np.all(np.isfinite(xm)):
            raise EngineError(f"measure block {m} produced non-finite values")

        suffix = None
        if with_kernel:
            incr = d1_hist[:-1] * dbeta_path[:, None]
            suffix = np.zeros((n_max + 1, n_u))
            suffix[:-1] = np.flip(np.cumsum(np.flip(incr, axis=0), axis=0), axis=0)

        lam_base = None
        if not zero_family:
            lam_base = coeffs[:, :k_w + 1] / f[:k_w + 1]

        for j in range(len(eps_grid)):
            gw = gauss_w[j]
            gf = gauss_full[j]

            if zero_family:
                w_cum = np.zeros(n_max + 1)
                l2_cum = np.zeros(n_max + 1)
            else:
                lam = lam_base * gw[:k_w + 1]
                w_inc = (lam[:-1, 0].real * a_fold[:, 0]
                         + np.sum(lam[:-1, 1:].real * a_fold[:, 1:k_w + 1]
                                  + lam[:-1, 1:].imag * b_fold[:, 1:k_w + 1], axis=1))
                w_cum = np.concatenate(([0.0], np.cumsum(w_inc)))
                l2_inc = (lam[:-1, 0].real ** 2
                          + 2.0 * np.sum(np.abs(lam[:-1, 1:]) ** 2, axis=1)) * dt
                l2_cum = np.concatenate(([0.0], np.cumsum(l2_inc)))

            moll_energy = np.abs(coeffs * gf) ** 2
            moll_energy[:, 1:] *= 2.0
            tot_e = np.cumsum(np.sum(moll_energy, axis=1))
            drop_e = np.cumsum(np.sum(moll_energy[:, k_w + 1:], axis=1))

            a_eps = np.empty_like(x_hist)
            _kernels.mollified_eval(coeffs, gw, x_hist, a_eps)
            h_field = h_open[None, :] - a_eps / d1_hist
            hs_cum = np.zeros_like(x_hist)
            hs_cum[1:] = np.cumsum(0.5 * (h_field[:-1] + h_field[1:]) * dt, axis=0)

            for i, (t, n_t) in enumerate(zip(run.t_grid, steps)):
                meas = snaps[i].T
                if j == 0:
                    run.phi_t[m, i] = phi.value(meas)
                lions_t = phi.lions(x_hist[n_t], meas)
                core = lions_t * d1_hist[n_t]
                run.i1[m, i, j] = (run.phi_t[m, i] - cv_t[i]) * w_cum[n_t] / t
                run.weight_l2[m, i, j] = l2_cum[n_t]
                run.dropped[m, i, j] = drop_e[n_t] / max(tot_e[n_t], 1e-300)
                run.i2[m, i, j] = w_u * float(np.sum(core * hs_cum[n_t])) / t
                if j == 0:
                    run.direct[m, i] = w_u * float(np.sum(core * h_open))
                if with_kernel:
                    if n_t >= 2:
                        s_idx = np.arange(n_t - 1)
                        inv_gap = 1.0 / (t - s_idx * dt)
                        inner = suffix[s_idx] - suffix[n_t]
                        kern = np.sum(h_field[s_idx] * inner
                                      * inv_gap[:, None], axis=0) * dt
                        # the last interval [t-dt, t] is omitted: the kernel
                        # factor is singular there and the inner integral
                        # has zero mean, so the omission costs variance only
                        run.k_inf[m, i, j] = np.max(np.abs(kern))
                    else:
                        run.k_inf[m, i, j] = 0.0

        if rho_fd is not None:
            run.fd[m] = _fd_branches(g, h_tilde, phi, rho_fd, (fa, fb),
                                     seed, m, steps, n_max, dt, m_beta)
    return run


def _fd_branches(g, h_tilde, phi, rho, folds, seed, m, steps, n_max, dt, m_beta):
    """Central-difference branches perturbing along g' * h_tilde, reusing
    the replica's own noise on both sides (common random numbers)."""
    fa, fb = folds
    snap_steps = np.array(steps, dtype=np.int64)
    branch_vals = []
    for sign in (+1.0, -1.0):
        gb = g.values + sign * rho * g.deriv1 * h_tilde.values
        if np.any(np.diff(gb) <= 0.0):
            raise ValueError("rho too large: perturbed state is not increasing")
        db_meas = beta_matrix(seed, m, n_max, dt, m_beta)
        xb = np.tile(gb[:-1], (m_beta, 1))
        snaps = np.empty((len(steps), m_beta, xb.shape[1]))
        _kernels.evolve_batch(xb, n_max, fa, fb, db_meas, snap_steps, snaps)
        branch_vals.append([phi.value(snaps[i].T) for i in range(len(steps))])
    vp, vm = branch_vals
    return np.array([(vp[i] - vm[i]) / (2.0 * rho) for i in range(len(steps))])
