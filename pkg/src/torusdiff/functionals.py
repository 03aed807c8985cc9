"""Test functionals of measures on the torus with analytic derivatives,
the averaged empirical measure, semigroup values, and the direct and
finite-difference gradient estimators.

Built-in functionals are trigonometric polynomials, so the flat
(linear-functional) derivative and the Lions derivative are exact closed
forms:

  linear       phi(mu) = int h(x) dmu(x)
               flat derivative  h(v) (centred),   Lions derivative h'(v)
  interaction  phi(mu) = int int h(x-y) dmu(x) dmu(y),  h even
               flat derivative  2 int h(v-y) dmu(y) (centred)
               Lions derivative 2 int h'(v-y) dmu(y)

The flat derivative is defined up to an additive constant; built-ins are
canonicalised to zero mean against the uniform measure (the constant term
is dropped).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import TWOPI, PerturbationDirection, QuantileState, TorusDensity

__all__ = [
    "TrigPolynomial", "TestFunctional", "EmpiricalMeasure", "GradientReport",
    "build_empirical", "semigroup_value", "gradient_direct", "gradient_fd",
    "zero_average_check", "linear_functional", "interaction_functional",
    "cosine_functional",
]


@dataclass(frozen=True)
class TrigPolynomial:
    """a0 + sum_m (a_m cos(m x) + b_m sin(m x)), m = 1..degree."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=np.float64))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64))
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise ValueError("a and b must be 1-d arrays of equal length")

    @property
    def degree(self):
        return self.a.size - 1

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.full_like(x, self.a[0])
        for m in range(1, self.a.size):
            out += self.a[m] * np.cos(m * x) + self.b[m] * np.sin(m * x)
        return out

    def derivative(self) -> "TrigPolynomial":
        m = np.arange(self.a.size, dtype=np.float64)
        return TrigPolynomial(a=m * self.b, b=-m * self.a)

    @property
    def sup_norm_bound(self):
        return float(np.abs(self.a[0]) + np.sum(np.abs(self.a[1:]) + np.abs(self.b[1:])))


def _moment_sums(samples, degree):
    """C_m = mean cos(m x), S_m = mean sin(m x) over all samples, m=0..degree."""
    flat = np.mod(np.ravel(samples), TWOPI)
    C = np.empty(degree + 1)
    S = np.empty(degree + 1)
    C[0], S[0] = 1.0, 0.0
    for m in range(1, degree + 1):
        C[m] = np.mean(np.cos(m * flat))
        S[m] = np.mean(np.sin(m * flat))
    return C, S


@dataclass(frozen=True)
class TestFunctional:
    """Torus-stable functional of probability measures with analytic flat and
    Lions derivatives.

    Evaluators accept a sample cloud (any shape) representing the measure
    with uniform weights.  ``value`` is invariant under adding 2*pi
    multiples to any sample; the interaction value is computed spectrally,
    so it costs O(n * degree) rather than O(n^2).
    """

    kind: str
    profile: TrigPolynomial
    _dprofile: TrigPolynomial = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("linear", "interaction"):
            raise ValueError("kind must be 'linear' or 'interaction'")
        if self.kind == "interaction" and np.any(self.profile.b != 0.0):
            raise ValueError("interaction profile must be even (no sine terms)")
        object.__setattr__(self, "_dprofile", self.profile.derivative())

    def value(self, samples) -> float:
        x = np.mod(np.ravel(samples), TWOPI)
        if self.kind == "linear":
            return float(np.mean(self.profile(x)))
        C, S = _moment_sums(x, self.profile.degree)
        a = self.profile.a
        return float(a[0] + np.sum(a[1:] * (C[1:] ** 2 + S[1:] ** 2)))

    def value_quadrature(self, g: QuantileState) -> float:
        """Exact value at the measure with quantile function g (t = 0)."""
        x = g.values[:-1]
        if self.kind == "linear":
            return float(np.mean(self.profile(x)))
        return self.value(x)

    def lfd(self, v, samples) -> np.ndarray:
        """Flat derivative at the sample measure, zero-mean against uniform."""
        v = np.asarray(v, dtype=np.float64)
        if self.kind == "linear":
            return self.profile(v) - self.profile.a[0]
        C, S = _moment_sums(samples, self.profile.degree)
        a = self.profile.a
        out = np.zeros_like(v, dtype=np.float64)
        for m in range(1, a.size):
            out += 2.0 * a[m] * (C[m] * np.cos(m * v) + S[m] * np.sin(m * v))
        return out

    def lfd_centered(self, v, samples) -> np.ndarray:
        """Flat derivative re-centred to zero mean against the sample measure."""
        base = self.lfd(v, samples)
        mean = float(np.mean(self.lfd(np.ravel(samples), samples)))
        return base - mean

    def lions(self, v, samples) -> np.ndarray:
        """Lions derivative: the v-derivative of the flat derivative."""
        v = np.asarray(v, dtype=np.float64)
        if self.kind == "linear":
            return self._dprofile(v)
        C, S = _moment_sums(samples, self.profile.degree)
        a = self.profile.a
        out = np.zeros_like(v, dtype=np.float64)
        for m in range(1, a.size):
            out += 2.0 * a[m] * m * (S[m] * np.cos(m * v) - C[m] * np.sin(m * v))
        return out

    @property
    def sup_norm_bound(self):
        b = self.profile.sup_norm_bound
        return b if self.kind == "linear" else b  # |phi| <= sup|h| either way

    def heat_proxy(self, g: "QuantileState", qv_rate: float, t: float) -> float:
        """Deterministic prediction of the functional value at time t under
        an independent-Gaussian-increment proxy of the dynamics: mode m of
        the profile decays by exp(-m^2 qv t / 2).

        Used as a control variate for the weighted estimators: any
        deterministic constant leaves them unbiased because the Ito weight
        has exactly zero mean.
        """
        x0 = g.values[:-1]
        a, b = self.profile.a, self.profile.b
        out = a[0]
        for m in range(1, a.size):
            decay = np.exp(-0.5 * m * m * qv_rate * t)
            cm = np.mean(np.cos(m * x0))
            sm = np.mean(np.sin(m * x0))
            if self.kind == "linear":
                out += decay * (a[m] * cm + b[m] * sm)
            else:
                out += a[m] * decay * decay * (cm * cm + sm * sm)
        return float(out)


def linear_functional(a, b=None) -> TestFunctional:
    a = np.asarray(a, dtype=np.float64)
    b = np.zeros_like(a) if b is None else np.asarray(b, dtype=np.float64)
    return TestFunctional(kind="linear", profile=TrigPolynomial(a, b))


def interaction_functional(a) -> TestFunctional:
    a = np.asarray(a, dtype=np.float64)
    return TestFunctional(kind="interaction", profile=TrigPolynomial(a, np.zeros_like(a)))


def cosine_functional() -> TestFunctional:
    """phi(mu) = int cos dmu, the standard scenario's functional."""
    return linear_functional([0.0, 1.0])


class EmpiricalMeasure:
    """Samples of the particle field under one common-noise realisation,
    stacked over idiosyncratic replicas: shape (N_u, M_beta), uniform
    weights.  Column b holds x_t(u_j) for idiosyncratic replica b on the
    half-open u-grid.
    """

    def __init__(self, samples, w_fingerprint=None):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[:, None]
        if not np.all(np.isfinite(samples)):
            raise ValueError("empirical measure has non-finite samples")
        self.samples = samples
        self.w_fingerprint = w_fingerprint

    @property
    def m_beta(self):
        return self.samples.shape[1]


def build_empirical(paths, t: float) -> EmpiricalMeasure:
    """Stack the fields of paths sharing one common-noise realisation but
    carrying independent idiosyncratic streams."""
    paths = list(paths)
    if not paths:
        raise ValueError("no paths given")
    fp = paths[0].noise.w_fingerprint
    for p in paths[1:]:
        if p.noise.w_fingerprint != fp:
            raise ValueError("paths do not share a common-noise realisation")
    cols = []
    for p in paths:
        step = int(round(t / p.dt))
        if not (0 <= step <= p.n_steps):
            raise ValueError(f"time {t} outside the stored horizon")
        cols.append(p.x[step, :-1])
    return EmpiricalMeasure(np.stack(cols, axis=1), w_fingerprint=fp)


@dataclass
class GradientReport:
    """One Monte Carlo gradient estimate with its provenance."""

    estimator: str
    t: float
    eps: float
    rho: float
    value: float
    std_error: float
    m_w: int
    m_beta: int
    seed: int
    extra: dict = field(default_factory=dict)

    CSV_HEADER = "estimator,t,eps,rho,value,std_error,M_W,M_beta,seed"

    def csv_row(self) -> str:
        return (f"{self.estimator},{self.t!r},{self.eps!r},{self.rho!r},"
                f"{self.value!r},{self.std_error!r},{self.m_w},{self.m_beta},{self.seed}")


def _mean_se(values):
    values = np.asarray(values)
    n = values.size
    se = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(values)), se


def semigroup_value(g: QuantileState, phi: TestFunctional, profile, t: float,
                    m_w: int, m_beta: int, seed: int, dt: float = 1e-3):
    """Monte Carlo semigroup value: outer average over the common noise of
    phi evaluated on the idiosyncratically averaged empirical measure.

    Returns (value, std_error); the standard error is taken over the
    common-noise replicas.  At t = 0 the value is exact quadrature with
    zero error.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0.0:
        return phi.value_quadrature(g), 0.0
    from ._driver import measure_block
    vals = np.empty(m_w)
    for m in range(m_w):
        samples = measure_block(g, profile, t, m_beta, seed, m, dt=dt)
        vals[m] = phi.value(samples)
    return _mean_se(vals)


def gradient_direct(g: QuantileState, h: PerturbationDirection,
                    phi: TestFunctional, profile, t: float,
                    m_w: int, m_beta: int, seed: int,
                    perturbation: str = "h", dt: float = 1e-3) -> GradientReport:
    """Ground-truth gradient estimator via the Lions derivative:

        E int_0^1  d_mu phi(mu_t)(x_t(u)) * (d1(t,u)/g'(u)) * h(u) du

    ``perturbation='gprime-h'`` drops the 1/g' factor, estimating the
    derivative along the direction g'h instead of h.
    """
    if perturbation not in ("h", "gprime-h"):
        raise ValueError("perturbation must be 'h' or 'gprime-h'")
    from ._driver import path_and_measure
    w = _closed_weights(g.n_u)
    vals = np.empty(m_w)
    for m in range(m_w):
        path, samples = path_and_measure(g, profile, t, m_beta, seed, m, dt=dt)
        step = path.n_steps
        d1 = path.d1(step)
        lions = phi.lions(path.x[step], samples)
        integrand = lions * d1 * h.values
        if perturbation == "h":
            integrand = integrand / g.deriv1
        vals[m] = float(np.sum(w * integrand))
    value, se = _mean_se(vals)
    return GradientReport(estimator=f"direct[{perturbation}]", t=t, eps=np.nan,
                          rho=np.nan, value=value, std_error=se,
                          m_w=m_w, m_beta=m_beta, seed=seed)


def gradient_fd(g: QuantileState, h: PerturbationDirection,
                phi: TestFunctional, profile, t: float, rho: float,
                m_w: int, m_beta: int, seed: int, dt: float = 1e-3) -> GradientReport:
    """Central finite difference of the semigroup along h with common random
    numbers: both branches reuse identical noise streams."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    d1p = g.deriv1 + rho * h.deriv1
    d1m = g.deriv1 - rho * h.deriv1
    if np.any(d1p <= 0) or np.any(d1m <= 0):
        raise ValueError("rho too large: g +/- rho h leaves the quantile class")
    gp = QuantileState(g.values + rho * h.values, d1p)
    gm = QuantileState(g.values - rho * h.values, d1m)
    from ._driver import measure_block
    vals = np.empty(m_w)
    for m in range(m_w):
        sp = measure_block(gp, profile, t, m_beta, seed, m, dt=dt)
        sm = measure_block(gm, profile, t, m_beta, seed, m, dt=dt)
        vals[m] = (phi.value(sp) - phi.value(sm)) / (2.0 * rho)
    value, se = _mean_se(vals)
    return GradientReport(estimator="fd", t=t, eps=np.nan, rho=rho, value=value,
                          std_error=se, m_w=m_w, m_beta=m_beta, seed=seed)


def zero_average_check(phi: TestFunctional, p: TorusDensity, n_quad: int = 2048) -> float:
    """Quadrature over the torus of the Lions derivative at the measure with
    density p.  Analytically zero for every built-in."""
    from .geometry import density_to_quantile
    v = TWOPI * np.arange(n_quad) / n_quad
    gq = density_to_quantile(p, 0.0, min(512, n_quad))
    samples = gq.values[:-1]
    vals = phi.lions(v, samples)
    return float(np.sum(vals) * TWOPI / n_quad)


def _closed_weights(n_u):
    w = np.full(n_u + 1, 1.0 / n_u)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w
