"""Acceptance suite: one callable per criterion, each returning a
CheckResult with a pass flag and a one-line diagnostic.

Scales that the criteria pin (replica counts, step counts, tolerances) are
hard-coded here; resolution knobs the criteria leave open (grid sizes of
auxiliary runs, measure-block sizes of variance-neutral estimates) are
module constants with the rationale in comments.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ._driver import GradientRun, measure_block
from .bel import (GaussianMollifier, eps_sweep, fit_loglog_slope,
                  idiosyncratic_ibp_check, mollify, rate_sweep,
                  transport_field, weight_coefficients)
from .config import ExperimentConfig
from .engine import evolve, evolve_parametric, moment_suite, \
    realized_quadratic_variation, weighted_folds
from .functionals import (cosine_functional, gradient_direct,
                          interaction_functional, linear_functional,
                          semigroup_value)
from .geometry import TWOPI, TorusDensity, density_grid
from .noise import NoisePath, sample_noise, zero_profile
from .spde import evolve_density, kde_wrapped, l1_distance


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    runtime: float = 0.0
    data: object = None

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: {self.detail} ({self.runtime:.1f}s)"


def _timed(fn):
    def wrapper(cfg, scale=1.0):
        t0 = time.time()
        res = fn(cfg, scale)
        res.runtime = time.time() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _closed_weights(n):
    w = np.full(n + 1, 1.0 / n)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _scaled(n, scale, lo=4):
    return max(lo, int(round(n * scale)))


@_timed
def criterion_01_degenerate_oracle(cfg: ExperimentConfig, scale=1.0):
    """Degenerate analytic oracle (f == 0): semigroup and direct gradient
    against the heat-semigroup closed forms, each within 3 standard errors
    at M_W * M_beta = 1e4."""
    g = cfg.make_quantile()
    h = cfg.make_direction()
    phi = cfg.make_functional()
    zp = zero_profile()
    t = cfg.t
    m_w, m_beta = _scaled(100, scale, 10), _scaled(100, scale, 10)

    w = _closed_weights(cfg.n_u)
    exact_sg = float(np.exp(-t / 2.0) * np.sum(w * np.cos(g.values)))
    exact_gr = float(-np.exp(-t / 2.0) * np.sum(w * np.sin(g.values) * h.values))

    val, se = semigroup_value(g, phi, zp, t, m_w, m_beta, seed=cfg.seed)
    rep = gradient_direct(g, h, phi, zp, t, m_w, m_beta, seed=cfg.seed + 1,
                          perturbation="h")
    z_sg = abs(val - exact_sg) / max(se, 1e-300)
    z_gr = abs(rep.value - exact_gr) / max(rep.std_error, 1e-300)
    ok = z_sg <= 3.0 and z_gr <= 3.0
    return CheckResult(
        "C1 degenerate analytic oracle", ok,
        f"semigroup {val:+.5f} vs {exact_sg:+.5f} (z={z_sg:.2f}); "
        f"gradient {rep.value:+.5f} vs {exact_gr:+.5f} (z={z_gr:.2f})")


@_timed
def criterion_02_kunita(cfg, scale=1.0):
    """Parametric-flow identities: Z from the quantile values reproduces the
    field bitwise, and the flow derivative equals the derivative ratio
    bitwise through the shared log-factor representation."""
    g = cfg.make_quantile()
    prof = cfg.make_profile()
    n_paths = _scaled(100, scale, 5)
    n_steps = 50
    ok = True
    for m in range(n_paths):
        noise = sample_noise(prof, cfg.seed + 2, n_steps, cfg.dt, replica=m)
        path = evolve(g, prof, noise)
        para = evolve_parametric(g.values[:-1].copy(), prof, noise)
        if not np.array_equal(para.x, path.x[:, :-1]):
            ok = False
            break
        if not np.array_equal(para.log_factor, path.log_factor[:, :-1]):
            ok = False
            break
        # the ratio d1/g' is stored as exp(log_factor) on both sides
        if not np.array_equal(np.exp(para.log_factor),
                              np.exp(path.log_factor[:, :-1])):
            ok = False
            break
    return CheckResult("C2 parametric-flow identities", ok,
                       f"bitwise equality on {n_paths} paths x {n_steps} steps")


@_timed
def criterion_03_structural(cfg, scale=1.0):
    """Pseudo-periodicity exact, derivative field positive on every stored
    step of 1e3 paths, and realized quadratic variation within 3% of
    (1 + sum f_k^2) t at n_steps = 1e4 over 100 paths."""
    prof = cfg.make_profile()
    g_small = cfg.make_quantile(n_u=64)
    npaths = _scaled(1000, scale, 20)
    per_gap = 0.0
    pos_ok = True
    for m in range(npaths):
        noise = sample_noise(prof, cfg.seed + 3, 250, cfg.dt, replica=m)
        path = evolve(g_small, prof, noise)
        per_gap = max(per_gap, float(np.max(np.abs(
            path.x[:, -1] - path.x[:, 0] - TWOPI))))
        if not np.all(path.d1() > 0.0):
            pos_ok = False
    g_qv = cfg.make_quantile(n_u=8)
    qv_paths = _scaled(100, scale, 10)
    qvs = np.empty(qv_paths)
    for m in range(qv_paths):
        noise = sample_noise(prof, cfg.seed + 4, 10_000, 1e-4, replica=m)
        path = evolve(g_qv, prof, noise)
        qvs[m] = realized_quadratic_variation(path, 3)
    rel = abs(np.mean(qvs) / prof.qv_rate - 1.0)
    ok = per_gap <= 1e-12 and pos_ok and rel <= 0.03
    return CheckResult(
        "C3 structural invariants", ok,
        f"periodicity gap {per_gap:.1e}; d1>0 {pos_ok}; qv rel err {rel:.4f}")


def _coarsen(noise, factor):
    n2 = noise.n_steps // factor
    return NoisePath(seed=noise.seed, replica=noise.replica,
                     beta_index=noise.beta_index, n_steps=n2,
                     dt=noise.dt * factor, k_max=noise.k_max,
                     dw_re=noise.dw_re.reshape(n2, factor, -1).sum(axis=1),
                     dw_im=noise.dw_im.reshape(n2, factor, -1).sum(axis=1),
                     dbeta=noise.dbeta.reshape(n2, factor).sum(axis=1))


def _euler_variation_gap(path, prof, noise):
    """Mean squared gap at the final time between the log-space derivative
    and the direct Euler integration of its variation equation."""
    nst = noise.n_steps
    fa, fb, kfa, kfb = weighted_folds(prof, noise)
    d1e = path.g1[:-1].copy()
    x = path.x[:, :-1]
    for n in range(nst):
        ck, sk = np.cos(x[n]), np.sin(x[n])
        c1, s1 = ck.copy(), sk.copy()
        inc = -kfa[n, 1] * sk + kfb[n, 1] * ck
        for k in range(2, prof.k_max + 1):
            cn = ck * c1 - sk * s1
            sn = sk * c1 + ck * s1
            ck, sk = cn, sn
            inc += -kfa[n, k] * sk + kfb[n, k] * ck
        d1e = d1e * (1.0 + inc)
    gap = path.d1(nst)[:-1] - d1e
    return float(np.mean(gap * gap))


@_timed
def criterion_04_derivative_consistency(cfg, scale=1.0):
    """Log-space exponential stepping vs direct Euler of the variation
    equation: the mean squared L2 gap decays at rate dt; fitted order must
    lie in 1.0 +/- 0.3 over dt in {2e-3, 1e-3, 5e-4}.

    The levels share refinement-coupled increments so the fitted slope is
    stable; the root-mean-square gap itself decays at the strong Euler
    order 1/2, the squared gap at order 1."""
    prof = cfg.make_profile()
    g = cfg.make_quantile(n_u=128)
    t = cfg.t
    n_paths = _scaled(64, scale, 8)
    dts = (2e-3, 1e-3, 5e-4)
    mses = {dt: [] for dt in dts}
    for m in range(n_paths):
        fine = sample_noise(prof, cfg.seed + 5, int(round(t / 5e-4)), 5e-4,
                            replica=m)
        for dt in dts:
            nz = _coarsen(fine, int(round(dt / 5e-4)))
            path = evolve(g, prof, nz)
            mses[dt].append(_euler_variation_gap(path, prof, nz))
    slope = fit_loglog_slope(list(dts), [np.mean(mses[dt]) for dt in dts])
    ok = 0.7 <= slope <= 1.3
    return CheckResult("C4 derivative-representation consistency", ok,
                       f"fitted MSE order {slope:.3f} in [0.7, 1.3]")


@_timed
def criterion_05_mollifier_exactness(cfg, scale=1.0):
    """Gaussian-multiplier mollification equals direct circular convolution
    with the wrapped kernel within 1e-8, and the weight-coefficient
    reconstruction misses the mollified field by at most the dropped-mode
    energy, itself at most 1% of the total."""
    prof = cfg.make_profile()
    g = cfg.make_quantile()
    h = cfg.make_direction()
    noise = sample_noise(prof, cfg.seed + 6, int(round(cfg.t / cfg.dt)), cfg.dt)
    path = evolve(g, prof, noise)
    step = path.n_steps
    field = transport_field(path, h, step, n_grid=cfg.n_x)
    moll = GaussianMollifier(cfg.eps)

    # direct pointwise definition at the field's own image points is exact;
    # resolving it to 1e-8 needs the quadrature refined beyond the mode cap
    # (the dynamics are diagonal in u, so the refined path restricts to the
    # working grid bitwise)
    g_fine = cfg.make_quantile(n_u=1024)
    h_fine = cfg.make_direction(n_u=1024)
    path_fine = evolve(g_fine, prof, noise)
    field_fine = transport_field(path_fine, h_fine, step, n_grid=cfg.n_x,
                                 k_count=cfg.n_x // 2 - 1)
    recon = field_fine.values(path_fine.x[step, :-1][None, :])
    exact = path_fine.d1(step)[:-1] * h_fine.values[:-1]
    recon_err = float(np.max(np.abs(recon - exact)))

    # multiplier route vs direct circular convolution on the grid
    grid_vals = field.values()
    yg = density_grid(cfg.n_x)
    kernel = moll.wrapped_kernel(yg)
    conv = np.array([
        np.sum(grid_vals * np.roll(kernel[::-1], i + 1)) * TWOPI / cfg.n_x
        for i in range(cfg.n_x)])
    mult = mollify(field, moll).values()
    conv_err = float(np.max(np.abs(conv - mult)))

    wc = weight_coefficients(mollify(field, moll), prof)
    lam_recon = np.zeros(cfg.n_x)
    ks = np.arange(prof.k_max + 1)
    for i, y in enumerate(yg):
        terms = prof.coeffs * np.exp(-1j * ks * y) * wc.lam
        lam_recon[i] = float(terms[0].real + 2.0 * np.sum(terms[1:]).real)
    lam_err_sq = float(np.max(np.abs(lam_recon - mult)) ** 2)
    dropped_share = wc.dropped_energy / max(wc.total_energy, 1e-300)

    ok = (recon_err <= 1e-8 and conv_err <= 1e-8
          and lam_err_sq <= wc.dropped_energy + 1e-16
          and dropped_share <= 0.01)
    return CheckResult(
        "C5 mollifier and reconstruction exactness", ok,
        f"pointwise {recon_err:.2e}, conv vs multiplier {conv_err:.2e}, "
        f"weight-recon^2 {lam_err_sq:.2e} <= dropped {wc.dropped_energy:.2e}, "
        f"dropped share {dropped_share:.2e}")


@_timed
def criterion_06_split_identity(cfg, scale=1.0):
    """Two-term split vs the direct estimator along g'h at M_W = 2000:
    |(I1 + I2) - direct| within 3 standard errors of the shared-noise
    difference."""
    from .bel import split_run
    g = cfg.make_quantile()
    h = cfg.make_direction()
    phi = cfg.make_functional()
    prof = cfg.make_profile()
    m_w = _scaled(cfg.m_w, scale, 40)
    run = split_run(g, h, phi, prof, cfg.t, cfg.eps, m_w, cfg.m_beta,
                    cfg.seed, dt=cfg.dt, perturbation="gprime-h")
    diff = run.total()[:, 0, 0] - run.direct[:, 0]
    dm, dse = GradientRun.mean_se(diff)
    tm, _ = GradientRun.mean_se(run.total()[:, 0, 0])
    gm, gse = GradientRun.mean_se(run.direct[:, 0])
    z = abs(dm) / max(dse, 1e-300)
    ok = z <= 3.0
    return CheckResult(
        "C6 split identity", ok,
        f"I1+I2 {tm:+.4f}, direct {gm:+.4f}+-{gse:.4f}, "
        f"gap {dm:+.4f}+-{dse:.4f} (z={z:.2f}, M_W={m_w})")


@_timed
def criterion_07_remainder_scaling(cfg, scale=1.0):
    """Remainder scaling: least-squares slopes of log|I2| and log E||K||_inf
    against log eps over [0.05, 0.4] must lie in 1.0 +/- 0.35."""
    g = cfg.make_quantile()
    h = cfg.make_direction()
    phi = cfg.make_functional()
    prof = cfg.make_profile()
    eps_grid = [0.4, 0.283, 0.2, 0.141, 0.1, 0.071, 0.05]
    m_w = _scaled(256, scale, 16)
    rows = eps_sweep(g, h, phi, prof, cfg.t, eps_grid, m_w, 8, cfg.seed,
                     dt=cfg.dt, with_kernel=True)
    i2_slope = fit_loglog_slope(eps_grid, [r["I2"] for r in rows])
    k_slope = fit_loglog_slope(eps_grid, [r["k_inf"] for r in rows])
    ok = (0.65 <= i2_slope <= 1.35) and (0.65 <= k_slope <= 1.35)
    return CheckResult(
        "C7 remainder scaling", ok,
        f"slope(log|I2|) = {i2_slope:.3f}, slope(log E||K||inf) = {k_slope:.3f}, "
        f"window [0.65, 1.35]", data=rows)


@_timed
def criterion_08_weight_envelope(cfg, scale=1.0):
    """Weight variance envelope: measured sum_k int |lambda|^2 ds stays
    below C t / eps^(6+4 theta) with C fitted at the largest eps."""
    g = cfg.make_quantile()
    h = cfg.make_direction()
    phi = cfg.make_functional()
    prof = cfg.make_profile()
    eps_grid = [0.4, 0.283, 0.2, 0.141, 0.1, 0.071, 0.05]
    m_w = _scaled(128, scale, 16)
    rows = eps_sweep(g, h, phi, prof, cfg.t, eps_grid, m_w, 4, cfg.seed + 7,
                     dt=cfg.dt, with_kernel=False)
    expo = 6.0 + 4.0 * cfg.theta
    c_fit = rows[0]["weight_l2"] * rows[0]["eps"] ** expo / cfg.t
    margins = [r["weight_l2"] / (c_fit * cfg.t / r["eps"] ** expo) for r in rows]
    worst = max(margins)
    ok = worst <= 1.0 + 1e-9
    return CheckResult(
        "C8 weight-variance envelope", ok,
        f"max measured/envelope = {worst:.3f} (C fitted at eps=0.4)")


@_timed
def criterion_09_idiosyncratic_ibp(cfg, scale=1.0):
    """Both sides of the idiosyncratic integration-by-parts identity agree
    within 3 combined standard errors at s = 0.2, t = 0.5, M = 1e4."""
    # resolution knobs: u-grid 96 and 8 measure rows keep the run at desk
    # scale; they only widen the (honestly reported) standard error
    n_u = 96
    g = cfg.make_quantile(n_u=n_u)
    h = cfg.make_direction(n_u=n_u)
    phi = cfg.make_functional()
    prof = cfg.make_profile()
    m = _scaled(10_000, scale, 200)
    lhs, rhs, dse = idiosyncratic_ibp_check(
        g, h, phi, prof, s=0.2, t=0.5, u_index=n_u // 3, eps=cfg.eps,
        m_w=m, seed=cfg.seed + 8, dt=cfg.dt, m_beta=8)
    z = abs(lhs - rhs) / max(dse, 1e-300)
    ok = z <= 3.0
    return CheckResult(
        "C9 idiosyncratic integration by parts", ok,
        f"lhs {lhs:+.5f}, rhs {rhs:+.5f}, |diff| z = {z:.2f} (M={m})")


@_timed
def criterion_10_zero_average(cfg, scale=1.0):
    """Lions derivatives of all built-ins integrate to zero over the torus
    (quadrature <= 1e-10) and are 2*pi-periodic to rounding."""
    rng = np.random.default_rng(cfg.seed)
    p = TorusDensity.from_callable(
        lambda x: (1.0 + 0.4 * np.cos(x) - 0.2 * np.sin(2 * x)) / TWOPI, 512)
    funcs = {
        "linear cos": cosine_functional(),
        "linear degree-5": linear_functional(
            np.concatenate(([0.0], rng.normal(size=5))),
            np.concatenate(([0.0], rng.normal(size=5)))),
        "interaction degree-5": interaction_functional(
            np.concatenate(([0.0], rng.normal(size=5)))),
    }
    from .functionals import zero_average_check
    worst_int = 0.0
    worst_per = 0.0
    gq = np.linspace(0.0, TWOPI, 129)[:-1]
    samples = p.grid[::4]
    for name, phi in funcs.items():
        worst_int = max(worst_int, abs(zero_average_check(phi, p, 2048)))
        base = phi.lions(gq, samples)
        shifted = phi.lions(gq + TWOPI, samples)
        scale_f = max(1.0, float(np.max(np.abs(base))))
        worst_per = max(worst_per, float(np.max(np.abs(shifted - base))) / scale_f)
    ok = worst_int <= 1e-10 and worst_per <= 1e-12
    return CheckResult(
        "C10 zero average and periodicity", ok,
        f"max |integral| {worst_int:.2e} <= 1e-10; "
        f"periodicity defect {worst_per:.2e} (rounding level)")


@_timed
def criterion_11_rate_bound(cfg, scale=1.0):
    """Across t in {0.05, 0.1, 0.2, 0.4, 0.8}: t^(2+theta) |gradient| is
    bounded by a single constant (no monotone blow-up as t decreases), and
    the full estimator agrees with the finite difference within
    3 sigma + rho^2 at every t."""
    g = cfg.make_quantile()
    h = cfg.make_direction()
    phi = cfg.make_functional()
    prof = cfg.make_profile()
    t_grid = [0.05, 0.1, 0.2, 0.4, 0.8]
    m_w = _scaled(256, scale, 16)
    rows = rate_sweep(g, h, phi, prof, t_grid, m_w, 24, cfg.seed + 9,
                      dt=cfg.dt, rho_fd=cfg.rho, perturbation="h")
    scaled_vals = [r["scaled_gradient"] for r in rows]   # ascending t
    # blow-up would show as the scaled magnitude growing monotonically as
    # t decreases and dominating the large-t level
    decreasing_t = scaled_vals[::-1]
    monotone_up = all(decreasing_t[i + 1] > decreasing_t[i]
                      for i in range(len(decreasing_t) - 1))
    blow_up = monotone_up and decreasing_t[-1] > 3.0 * decreasing_t[0]
    fd_ok = True
    worst = 0.0
    for r in rows:
        budget = 3.0 * max(r["fd_gap_se"], 1e-300) + cfg.rho ** 2
        worst = max(worst, abs(r["fd_gap"]) / budget)
        if abs(r["fd_gap"]) > budget:
            fd_ok = False
    c_emp = max(scaled_vals)
    ok = (not blow_up) and fd_ok
    return CheckResult(
        "C11 rate-bound compatibility", ok,
        f"C_emp = {c_emp:.4f}, blow-up {blow_up}, worst fd gap "
        f"{worst:.2f}x budget (M_W={m_w})", data=rows)


@_timed
def criterion_12_spde_crosscheck(cfg, scale=1.0):
    """Shared-noise L1 distance between the spectral density solution and
    the particle kernel-density estimate at t = 0.5 with 256 idiosyncratic
    replicas stays below 0.05."""
    from .geometry import quantile_to_density
    g = cfg.make_quantile()
    prof = cfg.make_profile()
    p0 = quantile_to_density(g, cfg.n_x)
    n = int(round(cfg.t / cfg.dt))
    noise = sample_noise(prof, cfg.seed, n, cfg.dt, replica=0)
    sd = evolve_density(p0, prof, noise, "super")
    realized = sd.realized(-1, cfg.n_x)
    m_beta = _scaled(256, scale, 32)
    samples = measure_block(g, prof, cfg.t, m_beta, cfg.seed, 0, cfg.dt)
    kde = kde_wrapped(samples, cfg.bandwidth, cfg.n_x)
    d = l1_distance(kde, realized)
    ok = d <= 0.05
    return CheckResult("C12 particle/spectral cross-validation", ok,
                       f"shared-noise L1 = {d:.4f} <= 0.05 (M_beta={m_beta})")


@_timed
def criterion_13_moment_suite(cfg, scale=1.0):
    """All five sup-in-time derivative statistics finite and stable under
    doubling the path count (change within 2 combined standard errors);
    the degenerate case reproduces ratio 1 exactly for the first."""
    g = cfg.make_quantile(n_u=128)
    prof = cfg.make_profile()
    m = _scaled(200, scale, 16)
    quantities = [("d1_lp", 2.0, 1), ("d1_at_0", 2.0, 1), ("dj_lp", 2.0, 2),
                  ("dj_sup", 2.0, 1), ("inv_d1_sup", 2.0, 1)]
    stable = True
    details = []
    for qname, p, j in quantities:
        r1 = moment_suite(g, prof, m, p=p, j=j, n_steps=250, dt=2e-3,
                          seed=cfg.seed + 10, quantity=qname)
        r2 = moment_suite(g, prof, 2 * m, p=p, j=j, n_steps=250, dt=2e-3,
                          seed=cfg.seed + 11, quantity=qname)
        se = np.hypot(r1.std_error, r2.std_error)
        drift = abs(r2.estimate - r1.estimate)
        finite = np.isfinite(r1.estimate) and np.isfinite(r2.estimate)
        if not finite or drift > 2.0 * se:
            stable = False
        details.append(f"{qname}: ratio {r1.ratio:.3f}, dM z={drift / max(se, 1e-300):.2f}")
    z0 = moment_suite(g, zero_profile(), 4, p=2.0, j=1, n_steps=50,
                      dt=2e-3, seed=cfg.seed, quantity="d1_lp")
    exact_one = z0.ratio == 1.0
    ok = stable and exact_one
    return CheckResult("C13 derivative moment suite", ok,
                       "; ".join(details) + f"; f=0 ratio == 1: {exact_one}")


ALL_CRITERIA = [
    criterion_01_degenerate_oracle,
    criterion_02_kunita,
    criterion_03_structural,
    criterion_04_derivative_consistency,
    criterion_05_mollifier_exactness,
    criterion_06_split_identity,
    criterion_07_remainder_scaling,
    criterion_08_weight_envelope,
    criterion_09_idiosyncratic_ibp,
    criterion_10_zero_average,
    criterion_11_rate_bound,
    criterion_12_spde_crosscheck,
    criterion_13_moment_suite,
]


def run_acceptance(cfg: ExperimentConfig, scale=1.0, report=print):
    """Run every criterion, print one pass/fail line each, and return the
    list of CheckResults.  ``scale`` shrinks the unpinned replica counts for
    smoke runs (1.0 = the shipped acceptance scale)."""
    results = []
    for crit in ALL_CRITERIA:
        res = crit(cfg, scale)
        results.append(res)
        if report:
            report(res.line())
    return results
