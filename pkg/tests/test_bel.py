"""Transport field, mollification, weight coefficients and the two-term
gradient split."""

import numpy as np
import pytest

from torusdiff import (
    GaussianMollifier,
    PerturbationDirection,
    QuantileState,
    build_profile,
    cosine_functional,
    estimate_bel_term,
    estimate_gradient_bel,
    estimate_remainder,
    evolve,
    idiosyncratic_ibp_check,
    linear_functional,
    mollify,
    rate_sweep,
    remainder_kernel,
    sample_noise,
    transport_field,
    weight_coefficients,
    zero_noise,
    zero_profile,
)
from torusdiff.bel import eps_sweep, split_run
from torusdiff._driver import GradientRun
from torusdiff.geometry import density_grid

TWOPI = 2.0 * np.pi


def standard_quantile(n_u=256):
    return QuantileState.from_callable(
        lambda u: TWOPI * u + 0.3 * np.sin(TWOPI * u),
        lambda u: TWOPI + 0.6 * np.pi * np.cos(TWOPI * u),
        lambda u: -1.2 * np.pi ** 2 * np.sin(TWOPI * u),
        n_u=n_u)


def h_cos(n_u=256):
    return PerturbationDirection.from_callable(
        lambda u: np.cos(TWOPI * u), lambda u: -TWOPI * np.sin(TWOPI * u), n_u)


def h_sin(n_u=256):
    return PerturbationDirection.from_callable(
        lambda u: np.sin(TWOPI * u), lambda u: TWOPI * np.cos(TWOPI * u), n_u)


def h_one(n_u=256):
    return PerturbationDirection.from_callable(
        lambda u: np.ones_like(u), lambda u: np.zeros_like(u), n_u)


@pytest.fixture(scope="module")
def evolved_path():
    g = standard_quantile()
    prof = build_profile(4.0, 1.0, 64)
    noise = sample_noise(prof, 123, 500, 1e-3)
    return evolve(g, prof, noise), prof, g


class TestTransportField:
    def test_constant_direction_at_rest(self):
        prof = build_profile(4.0, 1.0, 8)
        path = evolve(QuantileState.uniform(256), prof, zero_noise(prof, 1, 1e-3))
        fld = transport_field(path, h_one(), 0)
        assert fld.coeffs[0] == pytest.approx(TWOPI, abs=1e-12)
        assert np.max(np.abs(fld.coeffs[1:])) < 1e-12

    def test_single_mode_direction_at_rest(self):
        prof = build_profile(4.0, 1.0, 8)
        path = evolve(QuantileState.uniform(256), prof, zero_noise(prof, 1, 1e-3))
        fld = transport_field(path, h_cos(), 0)
        assert fld.coeffs[1] == pytest.approx(np.pi, abs=1e-12)
        assert abs(fld.coeffs[0]) < 1e-12 and abs(fld.coeffs[2]) < 1e-12

    def test_reconstruction_at_image_points(self, evolved_path):
        """At the field's own image points the defining values are exact, so
        the coefficient reconstruction must match them to spectral accuracy
        once the quadrature resolves the integrand (refined u-grid)."""
        path, prof, g = evolved_path
        g_fine = standard_quantile(1024)
        path_fine = evolve(g_fine, prof, path.noise)
        assert np.array_equal(path_fine.x[:, ::4], path.x)
        h = h_cos(1024)
        step = path.n_steps
        fld = transport_field(path_fine, h, step, k_count=255)
        recon = fld.values(path_fine.x[step, :-1][None, :])
        exact = path_fine.d1(step)[:-1] * h.values[:-1]
        assert np.max(np.abs(recon - exact)) <= 1e-8

    def test_working_grid_alias_level(self, evolved_path):
        """On the scenario grid the same identity holds at the documented
        alias-limited level."""
        path, prof, g = evolved_path
        h = h_cos()
        step = path.n_steps
        fld = transport_field(path, h, step)
        recon = fld.values(path.x[step, :-1][None, :])
        exact = path.d1(step)[:-1] * h.values[:-1]
        assert np.max(np.abs(recon - exact)) <= 5e-3

    def test_conjugate_symmetry_is_real(self, evolved_path):
        path, prof, g = evolved_path
        fld = transport_field(path, h_cos(), 100)
        vals = fld.values()
        assert np.all(np.isreal(vals))
        assert abs(float(np.imag(fld.coeffs[0]))) < 1e-14


class TestMollifier:
    def test_mode_zero_unchanged(self, evolved_path):
        path, prof, g = evolved_path
        fld = transport_field(path, h_cos(), 50)
        moll = mollify(fld, GaussianMollifier(0.7))
        assert moll.coeffs[0] == fld.coeffs[0]

    def test_mode_one_factor(self):
        assert GaussianMollifier(1.0).factors(1)[1] == pytest.approx(np.exp(-0.5))

    def test_multiplier_equals_circular_convolution(self, evolved_path):
        """Fourier-multiplier route vs direct circular convolution with the
        wrapped kernel, sup error <= 1e-8."""
        path, prof, g = evolved_path
        fld = transport_field(path, h_cos(), path.n_steps)
        for eps in (0.2, 0.05):
            moll = GaussianMollifier(eps)
            grid_vals = fld.values()
            kernel = moll.wrapped_kernel(density_grid(fld.n_grid))
            n = fld.n_grid
            conv = np.array([
                np.sum(grid_vals * np.roll(kernel[::-1], i + 1)) * TWOPI / n
                for i in range(n)])
            mult = mollify(fld, moll).values()
            assert np.max(np.abs(conv - mult)) <= 1e-8

    def test_sup_norm_contracts(self, evolved_path):
        path, prof, g = evolved_path
        fld = transport_field(path, h_cos(), 200)
        for eps in (0.05, 0.2, 1.0):
            assert (mollify(fld, GaussianMollifier(eps)).sup_norm()
                    <= fld.sup_norm() * (1.0 + 1e-9))

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError):
            GaussianMollifier(0.0)


class TestWeightCoefficients:
    def test_single_mode_values(self):
        prof = build_profile(4.0, 1.0, 64)
        path = evolve(QuantileState.uniform(256), prof, zero_noise(prof, 1, 1e-3))
        fld = mollify(transport_field(path, h_cos(), 0), GaussianMollifier(0.2))
        wc = weight_coefficients(fld, prof)
        assert wc.lam[1] == pytest.approx(np.pi * np.exp(-0.02) / 0.25, rel=1e-12)

    def test_reconstruction_within_dropped_energy(self, evolved_path):
        path, prof, g = evolved_path
        fld = mollify(transport_field(path, h_cos(), path.n_steps),
                      GaussianMollifier(0.2))
        wc = weight_coefficients(fld, prof)
        y = density_grid(256)
        ks = np.arange(prof.k_max + 1)
        recon = np.array([
            (prof.coeffs * np.exp(-1j * ks * yy) * wc.lam)[0].real
            + 2.0 * np.sum(prof.coeffs[1:] * np.exp(-1j * ks[1:] * yy)
                           * wc.lam[1:]).real
            for yy in y])
        direct = fld.values(y[None, :])
        assert np.max(np.abs(recon - direct)) ** 2 <= wc.dropped_energy + 1e-16

    def test_zero_family_rejected(self):
        prof = zero_profile()
        path = evolve(QuantileState.uniform(64), prof, zero_noise(prof, 1, 1e-3))
        fld = transport_field(path, h_cos(64), 0)
        with pytest.raises(ZeroDivisionError):
            weight_coefficients(fld, prof)

    def test_weight_variance_envelope(self, evolved_path):
        """Accumulated squared weights grow no faster than the
        eps^-(6+4*theta) envelope anchored at the largest width."""
        path, prof, g = evolved_path
        eps_grid = [0.4, 0.2, 0.1, 0.05]
        totals = []
        for eps in eps_grid:
            moll = GaussianMollifier(eps)
            acc = 0.0
            for step in range(0, path.n_steps, 25):
                fld = mollify(transport_field(path, h_cos(), step), moll)
                acc += weight_coefficients(fld, prof).l2_norm_sq()
            totals.append(acc)
        c_fit = totals[0] * eps_grid[0] ** 8.0
        for eps, tot in zip(eps_grid, totals):
            assert tot <= c_fit / eps ** 8.0 * (1 + 1e-9)


class TestSplitEstimators:
    def test_zero_direction_exact_zero(self):
        g = standard_quantile(128)
        prof = build_profile(4.0, 1.0, 16)
        phi = cosine_functional()
        h0 = PerturbationDirection.zero(128)
        r1 = estimate_bel_term(g, h0, phi, prof, 0.1, 0.2, 4, 4, seed=1)
        r2 = estimate_remainder(g, h0, phi, prof, 0.1, 0.2, 4, 4, seed=1)
        assert r1.value == 0.0 and r2.value == 0.0

    def test_constant_functional_weight_mean_zero(self):
        """With a constant functional the weighted term reduces to a
        mean-zero Ito sum."""
        g = standard_quantile(128)
        prof = build_profile(4.0, 1.0, 32)
        phi = linear_functional([1.0])
        rep = estimate_bel_term(g, h_cos(128), phi, prof, 0.2, 0.2, 48, 2,
                                seed=2, control_variate=False)
        assert abs(rep.value) <= 3 * rep.std_error

    def test_split_identity_small_scale(self):
        g = standard_quantile(128)
        prof = build_profile(4.0, 1.0, 32)
        phi = cosine_functional()
        run = split_run(g, h_cos(128), phi, prof, 0.3, 0.2, 48, 8, seed=3)
        diff = run.total()[:, 0, 0] - run.direct[:, 0]
        dm, dse = GradientRun.mean_se(diff)
        assert abs(dm) <= 3 * dse

    def test_degenerate_bel_matches_analytic(self):
        """With f == 0 the weighted term vanishes and the remainder alone
        reproduces the heat-semigroup gradient."""
        g = standard_quantile(128)
        phi = cosine_functional()
        t = 0.5
        rep = estimate_gradient_bel(g, h_sin(128), phi, zero_profile(), t,
                                    0.2, 96, 12, seed=4, perturbation="h")
        w = np.full(129, 1.0 / 128)
        w[0] *= 0.5
        w[-1] *= 0.5
        exact = -np.exp(-t / 2) * float(
            np.sum(w * np.sin(g.values) * h_sin(128).values))
        assert rep.extra["I1"] == 0.0
        assert abs(rep.value - exact) <= 3 * rep.std_error

    def test_split_consistency_wide_mollifier(self):
        """A very wide mollifier averages the field towards its mean; the
        two-term split must still recombine to the direct estimator."""
        g = standard_quantile(128)
        prof = build_profile(4.0, 1.0, 32)
        phi = cosine_functional()
        run = split_run(g, h_cos(128), phi, prof, 0.2, 3.0, 48, 8, seed=21)
        diff = run.total()[:, 0, 0] - run.direct[:, 0]
        dm, dse = GradientRun.mean_se(diff)
        assert abs(dm) <= 3 * dse
        # at this width the weighted term is carried by the k = 0 mode
        i1m, _ = GradientRun.mean_se(run.i1[:, 0, 0])
        assert np.isfinite(i1m)

    def test_dropped_energy_warning_surface(self):
        g = standard_quantile(64)
        prof = build_profile(4.0, 1.0, 4)     # harsh truncation
        phi = cosine_functional()
        rep = estimate_bel_term(g, h_cos(64), phi, prof, 0.1, 0.05, 4, 2, seed=5)
        assert "dropped_energy_share" in rep.extra


class TestRemainderKernel:
    def test_zero_direction(self, evolved_path):
        path, prof, g = evolved_path
        kern = remainder_kernel(path, PerturbationDirection.zero(256), 0.2, 300)
        assert np.all(kern == 0.0)

    def test_requires_positive_index(self, evolved_path):
        path, prof, g = evolved_path
        with pytest.raises(ValueError):
            remainder_kernel(path, h_cos(), 0.2, 0)

    def test_degenerate_closed_form(self):
        """f == 0, linear initial state: the kernel reduces to
        h(u) * sum_s (beta_t - beta_s) / (t - s) dt, computable directly
        from the sampled idiosyncratic increments."""
        zp = zero_profile()
        g = QuantileState.uniform(64)
        noise = sample_noise(zp, 31, 100, 1e-3)
        path = evolve(g, zp, noise)
        t_index = 100
        kern = remainder_kernel(path, h_cos(64), 0.2, t_index)
        dt = 1e-3
        beta = np.concatenate(([0.0], np.cumsum(noise.dbeta)))
        t = t_index * dt
        acc = 0.0
        for n in range(t_index - 1):
            acc += (beta[t_index] - beta[n]) / (t - n * dt) * dt
        expected = h_cos(64).values[:-1] * TWOPI * acc
        assert np.max(np.abs(kern - expected)) < 1e-10


class TestIdiosyncraticIbp:
    def test_zero_direction_both_sides_zero(self):
        g = standard_quantile(64)
        prof = build_profile(4.0, 1.0, 16)
        phi = cosine_functional()
        lhs, rhs, se = idiosyncratic_ibp_check(
            g, PerturbationDirection.zero(64), phi, prof, s=0.05, t=0.1,
            u_index=10, eps=0.2, m_w=4, seed=6, m_beta=2)
        assert lhs == 0.0 and rhs == 0.0

    def test_degenerate_heat_oracle(self):
        """f == 0: both sides equal the heat-kernel closed form."""
        g = standard_quantile(96)
        phi = cosine_functional()
        s, t = 0.2, 0.5
        u_idx = 31
        lhs, rhs, dse = idiosyncratic_ibp_check(
            g, h_cos(96), phi, zero_profile(), s=s, t=t, u_index=u_idx,
            eps=0.2, m_w=3000, seed=7, m_beta=4)
        analytic = (-np.exp(-t / 2) * np.sin(g.values[u_idx])
                    * g.deriv1[u_idx] * h_cos(96).values[u_idx])
        assert abs(lhs - rhs) <= 3 * dse
        # both sides should also sit near the analytic value
        assert abs(lhs - analytic) <= 0.05 * max(1.0, abs(analytic))

    def test_self_consistency_full_dynamics(self):
        g = standard_quantile(96)
        prof = build_profile(4.0, 1.0, 32)
        phi = cosine_functional()
        lhs, rhs, dse = idiosyncratic_ibp_check(
            g, h_cos(96), phi, prof, s=0.1, t=0.25, u_index=30, eps=0.2,
            m_w=800, seed=8, m_beta=4)
        assert abs(lhs - rhs) <= 3 * dse


class TestSweeps:
    def test_eps_sweep_columns_and_weight_growth(self):
        g = standard_quantile(128)
        prof = build_profile(4.0, 1.0, 32)
        phi = cosine_functional()
        rows = eps_sweep(g, h_cos(128), phi, prof, 0.2, [0.4, 0.2, 0.1],
                         24, 4, seed=9, with_kernel=True)
        assert [r["eps"] for r in rows] == [0.4, 0.2, 0.1]
        assert rows[-1]["weight_l2"] > rows[0]["weight_l2"]
        assert all(np.isfinite(r["k_inf"]) and r["k_inf"] >= 0 for r in rows)

    def test_rate_sweep_rows_and_clt(self):
        """Doubling the replica count roughly halves the standard errors."""
        g = standard_quantile(128)
        prof = build_profile(4.0, 1.0, 32)
        phi = cosine_functional()
        kw = dict(dt=2e-3, rho_fd=1e-2, perturbation="h")
        rows1 = rate_sweep(g, h_cos(128), phi, prof, [0.1, 0.2], 32, 8,
                           seed=10, **kw)
        rows2 = rate_sweep(g, h_cos(128), phi, prof, [0.1, 0.2], 128, 8,
                           seed=11, **kw)
        for r1, r2 in zip(rows1, rows2):
            ratio = r1["total_se"] / max(r2["total_se"], 1e-300)
            assert 1.2 <= ratio <= 3.5    # expect about 2 with CLT noise
        assert {"t", "eps", "I1", "I2", "total", "direct", "fd",
                "scaled_gradient", "weight_l2"} <= set(rows1[0])

    def test_shared_noise_across_estimator_calls(self):
        """Separate estimator calls with one seed reuse identical noise, so
        the split components recombine exactly."""
        g = standard_quantile(128)
        prof = build_profile(4.0, 1.0, 16)
        phi = cosine_functional()
        kw = dict(t=0.2, eps=0.2, m_w=6, m_beta=4, seed=12)
        r1 = estimate_bel_term(g, h_cos(128), phi, prof, **kw)
        r2 = estimate_remainder(g, h_cos(128), phi, prof, **kw)
        tot = estimate_gradient_bel(g, h_cos(128), phi, prof, **kw)
        assert tot.value == pytest.approx(r1.value + r2.value, rel=1e-12)


class TestWeightPath:
    def test_lambda_zero_mode_real_and_consistent(self, evolved_path):
        from torusdiff import accumulate_weight
        path, prof, g = evolved_path
        wp = accumulate_weight(path, h_cos(), 0.2, t_index=200)
        assert np.all(wp.lam[:, 0].imag == 0.0)
        assert wp.l2_norm >= 0.0 and np.isfinite(wp.stochastic_integral)
        # row 0 must match the per-step operation pipeline
        from torusdiff import GaussianMollifier, mollify, transport_field, weight_coefficients
        wc = weight_coefficients(
            mollify(transport_field(path, h_cos(), 0, k_count=127),
                    GaussianMollifier(0.2)), prof)
        assert np.allclose(wp.lam[0, :65], wc.lam, rtol=1e-10)

    def test_ito_sum_mean_zero(self):
        """Adaptedness makes the accumulated weight exactly mean-zero."""
        from torusdiff import accumulate_weight, evolve
        g = standard_quantile(128)
        prof = build_profile(4.0, 1.0, 32)
        vals = []
        for m in range(64):
            noise = sample_noise(prof, 51, 150, 1e-3, replica=m)
            path = evolve(g, prof, noise)
            vals.append(accumulate_weight(path, h_cos(128), 0.2).stochastic_integral)
        vals = np.asarray(vals)
        se = np.std(vals, ddof=1) / np.sqrt(vals.size)
        assert abs(np.mean(vals)) <= 3 * se
