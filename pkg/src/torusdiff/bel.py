"""Approximate integration-by-parts gradient estimators for the measure
semigroup.

The perturbation direction is rewritten as a field on the circle (the
transport field), mollified by a Gaussian kernel, and inverted against the
noise coefficients into per-mode Girsanov weight processes.  The gradient
then splits into

  I1 : a weighted-functional term, phi(mu_t) times an Ito integral of the
       weight coefficients against the common noise, divided by t;
  I2 : a remainder produced by the mollification (and mode truncation),
       a double (s, u) integral with an explicit integrand.

The split I1 + I2 equals the direct Lions-derivative estimator in
expectation, exactly at any truncation by construction (the unrepresented
part of the field is charged to I2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._driver import (GradientRun, gaussian_factors, mollifier_cutoff,
                      run_gradient_replicas, _steps_for)
from .engine import EngineError, PathState
from .functionals import GradientReport, PerturbationDirection
from .geometry import TWOPI, QuantileState
from .noise import FourierProfile

__all__ = [
    "TransportField", "GaussianMollifier", "WeightCoefficients", "WeightPath",
    "transport_field", "mollify", "weight_coefficients", "accumulate_weight",
    "remainder_kernel",
    "estimate_bel_term", "estimate_remainder", "estimate_gradient_bel",
    "idiosyncratic_ibp_check", "rate_sweep", "eps_sweep", "split_run",
]


@dataclass
class TransportField:
    """Fourier data of the perturbation transported to the circle at one
    time step: A(y) = d1(F(y)) h(F(y)) with F the u-inverse of the field.

    ``coeffs[k]`` holds c_k for k >= 0; negative modes follow from the
    conjugate symmetry of a real field.  ``n_grid`` fixes the reconstruction
    grid (the mode cap is n_grid//2 - 1).
    """

    coeffs: np.ndarray
    time_index: int
    n_grid: int = 512

    @property
    def k_count(self):
        return self.coeffs.size - 1

    def values(self, x=None):
        """Reconstruct the field at grid points (or given points)."""
        if x is None:
            x = TWOPI * np.arange(self.n_grid) / self.n_grid
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.empty_like(x)
        ones = np.ones(self.coeffs.size)
        _kernels.mollified_eval(
            np.broadcast_to(self.coeffs, (x.shape[0], self.coeffs.size)).copy(),
            ones, x, out)
        return out[0] if out.shape[0] == 1 else out

    def sup_norm(self):
        return float(np.max(np.abs(self.values())))


@dataclass(frozen=True)
class GaussianMollifier:
    """Gaussian smoothing of width eps; multiplies mode k by exp(-k^2 eps^2 / 2)."""

    eps: float

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")

    def factors(self, k_count):
        return gaussian_factors(self.eps, k_count)

    def wrapped_kernel(self, x, n_wraps=6):
        """Wrapped Gaussian on the circle, for direct-convolution checks."""
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for m in range(-n_wraps, n_wraps + 1):
            z = x + TWOPI * m
            out += np.exp(-0.5 * (z / self.eps) ** 2)
        return out / (self.eps * np.sqrt(TWOPI))


def transport_field(path: PathState, h: PerturbationDirection,
                    t_index: int, n_grid: int = 512,
                    k_count: int | None = None) -> TransportField:
    """Transport field of the perturbation h at one stored step.

    The Fourier coefficients are computed by the change of variables
    y = x(t, u):  c_k = (1/2pi) int_0^1 h(u) d1(t, u) x'(t, u) e^{i k x(t,u)} du,
    a periodic quadrature that needs no explicit inversion of the field.
    The Jacobian x' is the spectral derivative of the realized field (it
    differs from d1 by the scheme's strong error), so the quadrature is
    exact for the trigonometric interpolant of the stored nodes.  Strict
    monotonicity of the stored field is asserted first; a failure indicates
    engine corruption.
    """
    x = path.x[t_index, :-1]
    if np.any(np.diff(path.x[t_index]) <= 0.0):
        raise EngineError("stored field is not strictly increasing in u")
    # the u-quadrature resolves modes below its own Nyquist limit only;
    # beyond that the sums alias, so the cap is the tighter of the grids
    nyquist = x.size // 2 - 1
    if k_count is None:
        k_count = min(n_grid // 2 - 1, nyquist)
    elif k_count > nyquist:
        raise ValueError(f"k_count {k_count} beyond the u-grid Nyquist {nyquist}")
    d1 = path.d1(t_index)[:-1]
    h_open = h.values[:-1]
    n_u = x.size
    from ._driver import spectral_xprime
    xprime = spectral_xprime(x[None, :])[0]
    weights = (h_open * d1 * xprime) / (TWOPI * n_u)
    out = np.empty((1, k_count + 1), dtype=np.complex128)
    _kernels.field_coefficients(x[None, :], weights[None, :], k_count, out)
    return TransportField(coeffs=out[0], time_index=t_index, n_grid=n_grid)


def mollify(field: TransportField, mollifier: GaussianMollifier) -> TransportField:
    """Apply the Gaussian multiplier mode by mode."""
    return TransportField(coeffs=field.coeffs * mollifier.factors(field.k_count),
                          time_index=field.time_index, n_grid=field.n_grid)


@dataclass
class WeightCoefficients:
    """Per-mode Girsanov weight coefficients lambda_k = c_k / f_k at one
    time step, restricted to the sampled modes |k| <= k_max."""

    lam: np.ndarray                 # complex, k = 0..k_max
    dropped_energy: float           # field energy beyond the sampled modes
    total_energy: float

    def l2_norm_sq(self):
        return float(self.lam[0].real ** 2 + 2.0 * np.sum(np.abs(self.lam[1:]) ** 2))


def weight_coefficients(field_eps: TransportField,
                        profile: FourierProfile) -> WeightCoefficients:
    """Divide the mollified coefficients by the noise coefficients; modes
    beyond the sampled range are dropped and their energy reported."""
    if profile.sum_sq == 0.0:
        raise ZeroDivisionError("zero coefficient family cannot be inverted")
    k_max = min(profile.k_max, field_eps.k_count)
    lam = field_eps.coeffs[:k_max + 1] / profile.coeffs[:k_max + 1]
    energy = np.abs(field_eps.coeffs) ** 2
    energy[1:] *= 2.0
    total = float(np.sum(energy))
    dropped = float(np.sum(energy[k_max + 1:]))
    return WeightCoefficients(lam=lam, dropped_energy=dropped, total_energy=total)


@dataclass
class WeightPath:
    """Girsanov weight data accumulated along one stored path.

    lam                : (n_steps+1, k_max+1) complex weight coefficients,
                         left-endpoint adapted (row n uses the state at
                         step n); lam[:, 0] is real
    stochastic_integral: Ito sum  sum_k sum_n Re(conj(lam_n^k) dW_n^k)
    l2_norm            : sum_k int_0^t |lam_s^k|^2 ds
    """

    lam: np.ndarray
    stochastic_integral: float
    l2_norm: float


def accumulate_weight(path: PathState, h: PerturbationDirection,
                      eps: float, t_index: int | None = None) -> WeightPath:
    """Compute the per-mode weight processes along a path and their Ito
    accumulation against the path's own common-noise increments."""
    profile = path.profile
    if profile.sum_sq == 0.0:
        raise ZeroDivisionError("zero coefficient family cannot be inverted")
    if t_index is None:
        t_index = path.n_steps
    n_u = path.x.shape[1] - 1
    k_w = min(profile.k_max, n_u // 2 - 1)
    from ._driver import spectral_xprime
    x_hist = np.ascontiguousarray(path.x[:t_index + 1, :-1])
    d1_hist = path.g1[:-1] * np.exp(path.log_factor[:t_index + 1, :-1])
    xprime = spectral_xprime(x_hist)
    h_open = h.values[:-1]
    weights = (h_open * d1_hist * xprime) / (TWOPI * n_u)
    coeffs = np.empty((t_index + 1, k_w + 1), dtype=np.complex128)
    _kernels.field_coefficients(x_hist, weights, k_w, coeffs)
    lam = coeffs * gaussian_factors(eps, k_w)[None, :] / profile.coeffs[:k_w + 1]

    a, b = path.noise.fold()
    w_inc = (lam[:-1, 0].real * a[:t_index, 0]
             + np.sum(lam[:-1, 1:].real * a[:t_index, 1:k_w + 1]
                      + lam[:-1, 1:].imag * b[:t_index, 1:k_w + 1], axis=1))
    l2 = float(np.sum(lam[:-1, 0].real ** 2
                      + 2.0 * np.sum(np.abs(lam[:-1, 1:]) ** 2, axis=1))
               * path.dt)
    return WeightPath(lam=lam, stochastic_integral=float(np.sum(w_inc)),
                      l2_norm=l2)


def remainder_kernel(path: PathState, h: PerturbationDirection, eps: float,
                     t_index: int, k_limit: int | None = None) -> np.ndarray:
    """Time-smoothed remainder kernel at one step, per u node:

        K(u) = int_0^t H_s(u) (t - s)^{-1} int_s^t d1(r, u) dbeta_r ds,

    with H_s(u) = h(u) - A_eps(s, x(s,u)) / d1(s, u) the pointwise deficit
    of the sampled-mode projection of the mollified transport field (the
    same projection the weighted estimator inverts, so the conventions
    match; for f == 0 the projection is empty and H = h).  The s-integral
    uses left endpoints and omits the final interval [t - dt, t]: the
    kernel factor is singular there and the inner integral has zero mean,
    so the omission adds no bias.  The returned array lives on the open
    u-grid.
    """
    if t_index < 1:
        raise ValueError("t_index must be at least 1")
    dt = path.dt
    t = t_index * dt
    n_u = path.x.shape[1] - 1
    if k_limit is None:
        k_limit = path.profile.k_max
    k_count = min(mollifier_cutoff(eps, n_u // 2 - 1), k_limit)

    h_open = h.values[:-1]
    x_hist = np.ascontiguousarray(path.x[:t_index, :-1])
    d1_hist = path.g1[:-1] * np.exp(path.log_factor[:t_index, :-1])
    if path.profile.sum_sq == 0.0:
        # no invertible modes: the projected mollified field is empty
        h_field = np.broadcast_to(h_open, x_hist.shape).copy()
    else:
        from ._driver import spectral_xprime
        xprime = spectral_xprime(x_hist)
        weights = (h_open * d1_hist * xprime) / (TWOPI * n_u)
        coeffs = np.empty((t_index, k_count + 1), dtype=np.complex128)
        _kernels.field_coefficients(x_hist, weights, k_count, coeffs)
        gf = gaussian_factors(eps, k_count)
        a_eps = np.empty_like(x_hist)
        _kernels.mollified_eval(coeffs, gf, x_hist, a_eps)
        h_field = h_open[None, :] - a_eps / d1_hist

    incr = d1_hist * path.noise.dbeta[:t_index, None]
    suffix = np.zeros((t_index + 1, n_u))
    suffix[:-1] = np.flip(np.cumsum(np.flip(incr, axis=0), axis=0), axis=0)
    s_idx = np.arange(t_index - 1)
    inv_gap = 1.0 / (t - s_idx * dt)
    inner = suffix[s_idx] - suffix[t_index]
    return np.sum(h_field[s_idx] * inner * inv_gap[:, None], axis=0) * dt


def omitted_kernel_mass_bound(path: PathState, h: PerturbationDirection,
                              eps: float, t_index: int) -> float:
    """Crude bound on the kernel mass omitted with the final s-interval:
    dt * ||H||_inf * ||d1||_inf / sqrt(dt)."""
    dt = path.dt
    d1 = path.d1(t_index - 1)
    h_sup = float(np.max(np.abs(h.values)))
    return float(np.sqrt(dt) * 2.0 * h_sup * np.max(d1))


def _as_tilde(g: QuantileState, h: PerturbationDirection,
              perturbation: str) -> PerturbationDirection:
    """Reduce both conventions to the run's internal direction g' * h_tilde."""
    if perturbation == "gprime-h":
        return h
    if perturbation != "h":
        raise ValueError("perturbation must be 'h' or 'gprime-h'")
    if g.deriv2 is None:
        raise ValueError("plain-h perturbation needs deriv2 of g for h/g'")
    vals = h.values / g.deriv1
    d1 = (h.deriv1 * g.deriv1 - h.values * g.deriv2) / g.deriv1 ** 2
    return PerturbationDirection(vals, d1)


def split_run(g, h, phi, profile, t, eps, m_w, m_beta, seed, dt=1e-3,
              perturbation="gprime-h", rho_fd=None, control_variate=True,
              with_kernel=False) -> GradientRun:
    """One shared-noise run of all estimators at a single (t, eps)."""
    h_tilde = _as_tilde(g, h, perturbation)
    return run_gradient_replicas(g, h_tilde, phi, profile, [t], [eps],
                                 m_w, m_beta, seed, dt=dt, rho_fd=rho_fd,
                                 control_variate=control_variate,
                                 with_kernel=with_kernel)


def _report(name, run, t, eps, m_beta, seed, samples, extra=None):
    mean, se = GradientRun.mean_se(samples)
    return GradientReport(estimator=name, t=t, eps=eps, rho=np.nan,
                          value=float(mean), std_error=float(se),
                          m_w=run.m_w, m_beta=m_beta, seed=seed,
                          extra=extra or {})


def estimate_bel_term(g, h, phi, profile, t, eps, m_w, m_beta, seed,
                      dt=1e-3, perturbation="gprime-h",
                      control_variate=True) -> GradientReport:
    """Weighted-functional term of the approximate integration-by-parts
    formula (reported as I1): per replica, phi on the averaged measure times
    the accumulated Ito sum of the weight coefficients, divided by t.

    Warns through the report when the dropped-mode energy share exceeds 1%.
    """
    run = split_run(g, h, phi, profile, t, eps, m_w, m_beta, seed, dt,
                    perturbation, control_variate=control_variate)
    dropped = float(np.mean(run.dropped[:, 0, 0]))
    extra = {"weight_l2": float(np.mean(run.weight_l2[:, 0, 0])),
             "dropped_energy_share": dropped,
             "control_value": run.control_value.tolist()}
    if dropped > 0.01:
        extra["warning"] = "dropped-mode energy exceeds 1% of the field"
    return _report(f"I1[{perturbation}]", run, t, eps, m_beta, seed,
                   run.i1[:, 0, 0], extra)


def estimate_remainder(g, h, phi, profile, t, eps, m_w, m_beta, seed,
                       dt=1e-3, perturbation="gprime-h") -> GradientReport:
    """Mollification remainder (reported as I2): direct Monte Carlo of the
    double (s, u) integral against the unrepresented part of the field."""
    run = split_run(g, h, phi, profile, t, eps, m_w, m_beta, seed, dt,
                    perturbation)
    return _report(f"I2[{perturbation}]", run, t, eps, m_beta, seed,
                   run.i2[:, 0, 0])


def estimate_gradient_bel(g, h, phi, profile, t, eps, m_w, m_beta, seed,
                          dt=1e-3, perturbation="gprime-h",
                          control_variate=True) -> GradientReport:
    """Full approximate-IBP gradient I1 + I2 with shared noise between the
    two terms.  ``perturbation='h'`` estimates the plain-h gradient by
    running the machinery on the direction h / g'."""
    run = split_run(g, h, phi, profile, t, eps, m_w, m_beta, seed, dt,
                    perturbation, control_variate=control_variate)
    total = run.total()[:, 0, 0]
    i1m, i1se = GradientRun.mean_se(run.i1[:, 0, 0])
    i2m, i2se = GradientRun.mean_se(run.i2[:, 0, 0])
    extra = {"I1": float(i1m), "I1_se": float(i1se),
             "I2": float(i2m), "I2_se": float(i2se),
             "weight_l2": float(np.mean(run.weight_l2[:, 0, 0])),
             "dropped_energy_share": float(np.mean(run.dropped[:, 0, 0]))}
    return _report(f"bel[{perturbation}]", run, t, eps, m_beta, seed,
                   total, extra)


def idiosyncratic_ibp_check(g, h, phi, profile, s, t, u_index, eps,
                            m_w, seed, dt=1e-3, m_beta=8, n_u=None):
    """Monte Carlo of both sides of the idiosyncratic integration-by-parts
    identity at one u node and one time pair s < t:

      lhs: E[ d/du { centred-flat-derivative(mu_t)(x_t(.)) }(u) * H_s(u) ]
      rhs: E[ centred-flat-derivative(mu_t)(x_t(u)) * H_s(u)
              * (t-s)^{-1} int_s^t d1(r, u) dbeta_r ]

    Returns (lhs, rhs, combined_se) where combined_se is the standard error
    of the per-replica difference under shared noise.
    """
    if not 0.0 <= s < t:
        raise ValueError("need 0 <= s < t")
    if n_u is not None and n_u != g.n_u:
        raise ValueError("resample g on the requested grid instead")
    from ._driver import beta_matrix
    from .noise import fold_increments, sample_beta_increments, sample_w_increments
    from .engine import log_factor_drift

    n_t = _steps_for(t, dt)
    n_s = _steps_for(s, dt)
    k_cap = g.n_u // 2 - 1
    k_count = min(mollifier_cutoff(eps, k_cap, rel_tol=1e-10), profile.k_max)
    gf = gaussian_factors(eps, k_count)
    f = profile.coeffs
    kk = np.arange(profile.k_max + 1)
    h_open = h.values[:-1]
    g1_open = g.deriv1[:-1]
    n_pts = h_open.size
    drift = log_factor_drift(profile, dt)

    lhs = np.empty(m_w)
    rhs = np.empty(m_w)
    for m in range(m_w):
        dw_re, dw_im = sample_w_increments(profile, seed, m, n_t, dt)
        a_fold, b_fold = fold_increments(dw_re, dw_im, profile.k_max)
        fa, fb = a_fold * f, b_fold * f
        kfa, kfb = fa * kk, fb * kk
        dbeta = sample_beta_increments(seed, m, m_beta, n_t, dt)

        x = g.values[:-1].copy()
        logf = np.zeros(n_pts)
        x_hist = np.empty((n_t + 1, n_pts))
        logf_hist = np.empty((n_t + 1, n_pts))
        _kernels.evolve_row(x, logf, n_t, fa, fb, kfa, kfb, dbeta,
                            drift, x_hist, logf_hist)
        d1_hist = g1_open * np.exp(logf_hist)

        # transport field at time s only; with f == 0 no mode is invertible
        # and the sampled-mode projection is empty (H = h)
        if profile.sum_sq == 0.0:
            h_s = h_open[u_index]
        else:
            from ._driver import spectral_xprime
            xprime_s = spectral_xprime(x_hist[n_s][None, :])[0]
            weights = (h_open * d1_hist[n_s] * xprime_s) / (TWOPI * n_pts)
            coeffs = np.empty((1, k_count + 1), dtype=np.complex128)
            _kernels.field_coefficients(x_hist[n_s][None, :], weights[None, :],
                                        k_count, coeffs)
            a_eps = np.empty((1, n_pts))
            _kernels.mollified_eval(coeffs, gf, x_hist[n_s][None, :], a_eps)
            h_s = h_open[u_index] - a_eps[0, u_index] / d1_hist[n_s, u_index]

        db_meas = beta_matrix(seed, m, n_t, dt, m_beta)
        xm = np.tile(g.values[:-1], (m_beta, 1))
        snaps = np.empty((1, m_beta, n_pts))
        _kernels.evolve_batch(xm, n_t, fa, fb, db_meas,
                              np.array([n_t], dtype=np.int64), snaps)
        meas = snaps[0].T

        xt_u = x_hist[n_t, u_index]
        lions_t = float(phi.lions(np.array([xt_u]), meas)[0])
        lhs[m] = lions_t * d1_hist[n_t, u_index] * h_s

        lfd_c = float(phi.lfd_centered(np.array([xt_u]), meas)[0])
        ito = float(np.sum(d1_hist[n_s:n_t, u_index] * dbeta[n_s:n_t])) / (t - s)
        rhs[m] = lfd_c * h_s * ito

    lm, lse = GradientRun.mean_se(lhs)
    rm, rse = GradientRun.mean_se(rhs)
    _, dse = GradientRun.mean_se(lhs - rhs)
    return float(lm), float(rm), float(dse)


def rate_sweep(g, h, phi, profile, t_grid, m_w, m_beta, seed, dt=1e-3,
               eps_rule=None, rho_fd=1e-2, perturbation="h",
               control_variate=True):
    """Gradient magnitude across a time grid with the blow-up normalisation.

    Returns a list of row dicts (one per t) with the estimator components,
    the t^(2+theta)-scaled magnitude, weight variance and remainder size.
    eps_rule maps t to the mollification width; default is constant 0.2.
    """
    if eps_rule is None:
        eps_rule = lambda t: 0.2
    h_tilde = _as_tilde(g, h, perturbation)
    eps_set = sorted({float(eps_rule(t)) for t in t_grid})
    run = run_gradient_replicas(g, h_tilde, phi, profile, t_grid, eps_set,
                                m_w, m_beta, seed, dt=dt, rho_fd=rho_fd,
                                control_variate=control_variate)
    theta = profile.alpha - 3.5 if np.isfinite(profile.alpha) else 0.5
    rows = []
    for i, t in enumerate(run.t_grid):
        j = eps_set.index(float(eps_rule(t)))
        tot = run.total()[:, i, j]
        tm, tse = GradientRun.mean_se(tot)
        i1m, i1se = GradientRun.mean_se(run.i1[:, i, j])
        i2m, i2se = GradientRun.mean_se(run.i2[:, i, j])
        dm, dse = GradientRun.mean_se(run.direct[:, i])
        fm, fse = GradientRun.mean_se(run.fd[:, i])
        diff_fd, diff_fd_se = GradientRun.mean_se(tot - run.fd[:, i])
        rows.append({
            "t": float(t), "eps": eps_set[j],
            "I1": float(i1m), "I1_se": float(i1se),
            "I2": float(i2m), "I2_se": float(i2se),
            "total": float(tm), "total_se": float(tse),
            "direct": float(dm), "direct_se": float(dse),
            "fd": float(fm), "fd_se": float(fse),
            "fd_gap": float(diff_fd), "fd_gap_se": float(diff_fd_se),
            "scaled_gradient": float(abs(tm) * t ** (2.0 + theta)),
            "weight_l2": float(np.mean(run.weight_l2[:, i, j])),
            "dropped_energy": float(np.mean(run.dropped[:, i, j])),
            "seed": seed,
        })
    return rows


def eps_sweep(g, h, phi, profile, t, eps_grid, m_w, m_beta, seed, dt=1e-3,
              perturbation="gprime-h", with_kernel=True,
              control_variate=True):
    """Remainder and weight statistics across a mollification-width grid,
    all widths sharing one set of replicas."""
    h_tilde = _as_tilde(g, h, perturbation)
    run = run_gradient_replicas(g, h_tilde, phi, profile, [t], eps_grid,
                                m_w, m_beta, seed, dt=dt,
                                with_kernel=with_kernel,
                                control_variate=control_variate)
    rows = []
    for j, e in enumerate(run.eps_grid):
        i1m, i1se = GradientRun.mean_se(run.i1[:, 0, j])
        i2m, i2se = GradientRun.mean_se(run.i2[:, 0, j])
        tm, tse = GradientRun.mean_se(run.total()[:, 0, j])
        dm, dse = GradientRun.mean_se(run.direct[:, 0])
        row = {
            "t": float(t), "eps": float(e),
            "I1": float(i1m), "I1_se": float(i1se),
            "I2": float(i2m), "I2_se": float(i2se),
            "total": float(tm), "total_se": float(tse),
            "direct": float(dm), "direct_se": float(dse),
            "weight_l2": float(np.mean(run.weight_l2[:, 0, j])),
            "dropped_energy": float(np.mean(run.dropped[:, 0, j])),
            "seed": seed,
        }
        if with_kernel:
            row["k_inf"] = float(np.mean(run.k_inf[:, 0, j]))
        rows.append(row)
    return rows


def fit_loglog_slope(xs, ys):
    """Least-squares slope of log|y| against log x."""
    xs = np.log(np.asarray(xs, dtype=float))
    ys = np.log(np.abs(np.asarray(ys, dtype=float)))
    A = np.vstack([xs, np.ones_like(xs)]).T
    sol, *_ = np.linalg.lstsq(A, ys, rcond=None)
    return float(sol[0])
