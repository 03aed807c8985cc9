"""Particle-field evolution: schemes, identities and moment diagnostics."""

import numpy as np
import pytest

from torusdiff import (
    EngineError,
    QuantileState,
    build_profile,
    evolve,
    evolve_parametric,
    moment_suite,
    realized_quadratic_variation,
    sample_noise,
    zero_noise,
    zero_profile,
)
from torusdiff.engine import weighted_folds

TWOPI = 2.0 * np.pi


def standard_quantile(n_u=256):
    return QuantileState.from_callable(
        lambda u: TWOPI * u + 0.3 * np.sin(TWOPI * u),
        lambda u: TWOPI + 0.6 * np.pi * np.cos(TWOPI * u),
        lambda u: -1.2 * np.pi ** 2 * np.sin(TWOPI * u),
        lambda u: -2.4 * np.pi ** 3 * np.cos(TWOPI * u),
        n_u=n_u)


class TestDegenerateDynamics:
    def test_pure_translation(self):
        """With f == 0 the field is rigidly translated by the idiosyncratic
        path and the derivative stays frozen."""
        g = standard_quantile(64)
        zp = zero_profile()
        noise = sample_noise(zp, 3, 100, 1e-3)
        path = evolve(g, zp, noise)
        beta = np.concatenate(([0.0], np.cumsum(noise.dbeta)))
        assert np.max(np.abs(path.x - (g.values[None, :] + beta[:, None]))) < 1e-12
        assert np.all(path.log_factor == 0.0)

    def test_zero_increments_deterministic_drift(self):
        """Zeroed increments freeze the field while the log-derivative
        factor drifts by -dt/2 sum f_k^2 k^2 each step."""
        g = standard_quantile(64)
        prof = build_profile(4.0, 1.0, 16)
        noise = zero_noise(prof, 50, 1e-3)
        path = evolve(g, prof, noise)
        assert np.array_equal(path.x[0], path.x[-1])
        drift = -0.5 * 1e-3 * prof.sum_k2 * np.arange(51)
        assert np.max(np.abs(path.log_factor - drift[:, None])) < 1e-15

    def test_gaussian_law(self):
        """f == 0 gives exactly Gaussian particle marginals."""
        g = standard_quantile(16)
        zp = zero_profile()
        t, n = 1.0, 200
        vals = []
        for m in range(400):
            noise = sample_noise(zp, 11, n, t / n, replica=m)
            vals.append(evolve(g, zp, noise).x[-1, 5])
        vals = np.asarray(vals)
        mu_se = np.std(vals) / np.sqrt(len(vals))
        assert abs(np.mean(vals) - g.values[5]) < 3 * mu_se
        var_se = np.var(vals) * np.sqrt(2.0 / len(vals))
        assert abs(np.var(vals) - t) < 3 * var_se


class TestTwoStepOracle:
    def test_hand_unrolled_reference(self):
        """Step-for-step match against a direct transcription of the update
        rule with a single mode."""
        prof = build_profile(4.0, 1.0, 1)
        g = standard_quantile(8)
        noise = sample_noise(prof, 77, 2, 1e-2)
        path = evolve(g, prof, noise)

        f0, f1 = prof.coeffs
        x = g.values[:-1].copy()
        logf = np.zeros_like(x)
        k = 1
        for n in range(2):
            are = noise.dw_re[n]
            aim = noise.dw_im[n]
            a1 = are[k + 1] + are[k - 1]        # columns are k = -1, 0, +1
            b1 = aim[k + 1] - aim[k - 1]
            g0 = f0 * are[k] + f1 * (np.cos(x) * a1 + np.sin(x) * b1)
            g1 = f1 * 1.0 * (-np.sin(x) * a1 + np.cos(x) * b1)
            x = x + g0 + noise.dbeta[n]
            logf = logf + g1 - 0.5 * 1e-2 * prof.sum_k2
        assert np.max(np.abs(path.x[-1, :-1] - x)) < 1e-14
        assert np.max(np.abs(path.log_factor[-1, :-1] - logf)) < 1e-14


class TestStructure:
    def test_pseudo_periodicity_exact(self):
        g = standard_quantile(64)
        prof = build_profile(4.0, 1.0, 32)
        path = evolve(g, prof, sample_noise(prof, 5, 200, 1e-3))
        assert np.all(path.x[:, -1] - path.x[:, 0] == TWOPI)
        path.assert_invariants()

    def test_monotone_in_u(self):
        g = standard_quantile(128)
        prof = build_profile(4.0, 1.0, 64)
        path = evolve(g, prof, sample_noise(prof, 6, 300, 1e-3))
        assert np.all(np.diff(path.x, axis=1) > 0)
        assert np.all(path.d1() > 0)

    def test_kunita_identities_bitwise(self):
        """The parametric flow from the quantile values reproduces the field
        and its derivative ratio bitwise under shared noise."""
        g = standard_quantile(64)
        prof = build_profile(4.0, 1.0, 32)
        noise = sample_noise(prof, 8, 100, 1e-3)
        path = evolve(g, prof, noise)
        para = evolve_parametric(g.values[:-1].copy(), prof, noise)
        assert np.array_equal(para.x, path.x[:, :-1])
        assert np.array_equal(para.log_factor, path.log_factor[:, :-1])
        assert np.all(para.d1(0) == 1.0)

    def test_non_finite_detected(self):
        g = standard_quantile(16)
        prof = build_profile(4.0, 1.0, 8)
        noise = sample_noise(prof, 1, 50, 1e-3)
        noise.dbeta[5] = np.nan               # poisoned increment
        with pytest.raises(EngineError, match="non-finite"):
            evolve(g, prof, noise)

    def test_shape_mismatch_rejected(self):
        g = standard_quantile(16)
        prof = build_profile(4.0, 1.0, 8)
        noise = sample_noise(build_profile(4.0, 1.0, 4), 1, 10, 1e-3)
        with pytest.raises(ValueError):
            evolve(g, prof, noise)


class TestQuadraticVariation:
    def test_zero_increments_give_zero(self):
        g = standard_quantile(16)
        prof = build_profile(4.0, 1.0, 2)
        path = evolve(g, prof, zero_noise(prof, 5, 1e-3))
        assert realized_quadratic_variation(path, 0) == 0.0

    def test_idiosyncratic_only(self):
        zp = zero_profile()
        g = standard_quantile(8)
        qvs = [realized_quadratic_variation(
            evolve(g, zp, sample_noise(zp, 13, 10_000, 1e-4, replica=m)), 2)
            for m in range(60)]
        assert abs(np.mean(qvs) - 1.0) < 0.03

    def test_spectral_rate(self):
        prof = build_profile(4.0, 1.0, 2)
        assert prof.qv_rate == pytest.approx(2.1282)
        g = standard_quantile(8)
        qvs = [realized_quadratic_variation(
            evolve(g, prof, sample_noise(prof, 14, 10_000, 1e-4, replica=m)), 3)
            for m in range(60)]
        assert abs(np.mean(qvs) / prof.qv_rate - 1.0) < 0.03


class TestDerivativeFields:
    def test_first_derivative_against_finite_difference(self):
        """The evolved derivative matches the u-difference quotient of the
        field within O(grid) + O(dt)."""
        g = standard_quantile(512)
        prof = build_profile(4.0, 1.0, 32)
        path = evolve(g, prof, sample_noise(prof, 21, 200, 1e-3))
        x_end = path.x[-1]
        d1_end = path.d1(-1)
        du = 1.0 / 512
        fd = (x_end[2:] - x_end[:-2]) / (2 * du)
        err = np.sqrt(np.mean((fd - d1_end[1:-1]) ** 2))
        assert err < 0.05 * np.max(d1_end)

    def test_higher_derivatives_track_spectral_reference(self):
        """Second/third derivative fields stay consistent with spectral
        differentiation of the evolved field."""
        g = standard_quantile(512)
        prof = build_profile(4.0, 1.0, 16)
        path = evolve(g, prof, sample_noise(prof, 22, 100, 1e-3), order=3)
        x_per = path.x[-1, :-1] - TWOPI * path.u[:-1]
        k = np.arange(257)
        d2_spec = np.fft.irfft(np.fft.rfft(x_per) * (TWOPI * 1j * k) ** 2, 512)
        rms = np.sqrt(np.mean((path.d2[-1, :-1] - d2_spec) ** 2))
        assert rms < 0.05 * max(1.0, np.max(np.abs(d2_spec)))

    def test_log_space_vs_euler_variation_order(self):
        """Mean squared gap between the exponential representation and the
        direct Euler variation equation decays at rate dt."""
        from torusdiff.noise import NoisePath
        prof = build_profile(4.0, 1.0, 32)
        g = standard_quantile(64)
        t = 0.25

        def coarsen(noise, factor):
            n2 = noise.n_steps // factor
            return NoisePath(seed=noise.seed, replica=noise.replica,
                             beta_index=noise.beta_index, n_steps=n2,
                             dt=noise.dt * factor, k_max=noise.k_max,
                             dw_re=noise.dw_re.reshape(n2, factor, -1).sum(axis=1),
                             dw_im=noise.dw_im.reshape(n2, factor, -1).sum(axis=1),
                             dbeta=noise.dbeta.reshape(n2, factor).sum(axis=1))

        def gap(path, prof, noise):
            fa, fb, kfa, kfb = weighted_folds(prof, noise)
            d1e = path.g1[:-1].copy()
            x = path.x[:, :-1]
            for n in range(noise.n_steps):
                ck, sk = np.cos(x[n]), np.sin(x[n])
                c1, s1 = ck.copy(), sk.copy()
                inc = -kfa[n, 1] * sk + kfb[n, 1] * ck
                for kk in range(2, prof.k_max + 1):
                    cn = ck * c1 - sk * s1
                    sn = sk * c1 + ck * s1
                    ck, sk = cn, sn
                    inc += -kfa[n, kk] * sk + kfb[n, kk] * ck
                d1e *= 1.0 + inc
            diff = path.d1(noise.n_steps)[:-1] - d1e
            return np.mean(diff ** 2)

        mses = {4: [], 2: [], 1: []}
        for m in range(24):
            fine = sample_noise(prof, 31, int(t / 5e-4), 5e-4, replica=m)
            for fac in (1, 2, 4):
                nz = coarsen(fine, fac)
                mses[fac].append(gap(evolve(g, prof, nz), prof, nz))
        from torusdiff.bel import fit_loglog_slope
        slope = fit_loglog_slope([5e-4 * f for f in (4, 2, 1)],
                                 [np.mean(mses[f]) for f in (4, 2, 1)])
        assert 0.6 <= slope <= 1.5


class TestFlowRegularity:
    def test_parametric_increment_moments_bounded(self):
        """p-th moment of |Z^x - Z^y| / |x - y| stays bounded uniformly over
        gaps 1e-1, 1e-2, 1e-3."""
        prof = build_profile(4.0, 1.0, 32)
        ratios = {}
        for gap in (1e-1, 1e-2, 1e-3):
            acc = []
            for m in range(40):
                noise = sample_noise(prof, 17, 100, 1e-3, replica=m)
                para = evolve_parametric(np.array([1.0, 1.0 + gap]), prof, noise)
                sup = np.max(np.abs(para.x[:, 1] - para.x[:, 0]))
                acc.append((sup / gap) ** 2)
            ratios[gap] = np.mean(acc)
        vals = np.array(list(ratios.values()))
        assert np.all(np.isfinite(vals))
        assert vals.max() / vals.min() < 4.0


class TestMomentSuite:
    def test_degenerate_ratio_exactly_one(self):
        g = standard_quantile(64)
        rep = moment_suite(g, zero_profile(), 4, p=2.0, j=1, n_steps=20,
                           dt=1e-3, quantity="d1_lp")
        assert rep.ratio == 1.0

    def test_statistics_finite_and_stable(self):
        g = standard_quantile(64)
        prof = build_profile(4.0, 1.0, 32)
        r1 = moment_suite(g, prof, 24, p=2.0, j=2, n_steps=100, dt=1e-3,
                          seed=0, quantity="dj_lp")
        r2 = moment_suite(g, prof, 48, p=2.0, j=2, n_steps=100, dt=1e-3,
                          seed=1, quantity="dj_lp")
        assert np.isfinite(r1.estimate) and np.isfinite(r2.estimate)
        se = np.hypot(r1.std_error, r2.std_error)
        assert abs(r1.estimate - r2.estimate) <= 3.0 * se

    def test_requires_derivatives(self):
        g = QuantileState.uniform(64)
        prof = build_profile(4.0, 1.0, 4)
        g_no2 = QuantileState(g.values, g.deriv1)
        with pytest.raises(ValueError):
            moment_suite(g_no2, prof, 2, j=2, quantity="dj_lp")


class TestWorkerCountInvariance:
    def test_batch_evolution_bitwise_across_thread_counts(self):
        """The row-parallel batch kernel must give bitwise identical output
        for any number of compute threads."""
        import numba
        if numba.config.NUMBA_NUM_THREADS < 2:
            pytest.skip("host exposes a single compute thread")
        from torusdiff import _kernels
        from torusdiff.noise import fold_increments
        g = standard_quantile(64)
        prof = build_profile(4.0, 1.0, 16)
        noise = sample_noise(prof, 99, 80, 1e-3)
        a, b = fold_increments(noise.dw_re, noise.dw_im, 16)
        fa, fb = a * prof.coeffs, b * prof.coeffs
        rng = np.random.default_rng(0)
        db = rng.normal(size=(80, 6)) * np.sqrt(1e-3)
        results = []
        old = numba.get_num_threads()
        try:
            for nthreads in (1, 2):
                numba.set_num_threads(nthreads)
                x = np.tile(g.values[:-1], (6, 1))
                snaps = np.empty((1, 6, 64))
                _kernels.evolve_batch(x, 80, fa, fb, db,
                                      np.array([80], dtype=np.int64), snaps)
                results.append(snaps.copy())
        finally:
            numba.set_num_threads(old)
        assert np.array_equal(results[0], results[1])
