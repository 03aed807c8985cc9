"""Circle geometry: torus metric, circular Wasserstein-2 distance, and the
bijection between positive densities on the torus and pseudo-periodic
quantile functions.

Conventions
-----------
* Densities live on the open uniform grid ``x_i = 2*pi*i/N_x``,
  ``i = 0..N_x-1``, and are implicitly 2*pi-periodic.
* Quantile functions live on the closed uniform grid ``u_j = j/N_u``,
  ``j = 0..N_u``, and satisfy ``g(1) = g(0) + 2*pi`` (pseudo-periodicity),
  with a strictly positive, 1-periodic first derivative.
"""

from __future__ import annotations

import io

import numpy as np

from ._interp import fc_slopes, hermite_eval, pseudo_periodic_pchip

TWOPI = 2.0 * np.pi

_PERIODICITY_TOL = 1e-10


class InvariantError(ValueError):
    """A domain object failed one of its structural invariants."""


def torus_distance(x, y):
    """Arc distance on the circle of circumference 2*pi.

    Accepts scalars or arrays; the result lies in [0, pi].
    """
    d = np.abs(np.mod(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), TWOPI))
    return np.minimum(d, TWOPI - d)


def density_grid(n_x):
    """Open uniform grid on [0, 2*pi) with n_x nodes."""
    return TWOPI * np.arange(n_x) / n_x


def quantile_grid(n_u):
    """Closed uniform grid on [0, 1] with n_u + 1 nodes."""
    return np.arange(n_u + 1) / n_u


class TorusDensity:
    """Strictly positive probability density on the torus, sampled on the
    open grid ``density_grid(len(values))``.
    """

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.size < 4:
            raise InvariantError("density needs a 1-d grid of at least 4 values")
        if not np.all(np.isfinite(values)):
            raise InvariantError("density values must be finite")
        if np.any(values <= 0.0):
            raise InvariantError("density must be strictly positive everywhere")
        mass = self._mass(values)
        if abs(mass - 1.0) > _PERIODICITY_TOL:
            raise InvariantError(f"density mass {mass!r} is not 1 within 1e-10")
        self.values = values

    @staticmethod
    def _mass(values):
        # periodic trapezoid == rectangle rule on the open grid
        return float(np.sum(values)) * TWOPI / values.size

    @property
    def n_x(self):
        return self.values.size

    @property
    def grid(self):
        return density_grid(self.n_x)

    @classmethod
    def from_callable(cls, fn, n_x=512):
        vals = np.asarray(fn(density_grid(n_x)), dtype=np.float64)
        return cls(vals / cls._mass(vals))

    @classmethod
    def uniform(cls, n_x=512):
        return cls(np.full(n_x, 1.0 / TWOPI))

    def rotated(self, shift_nodes):
        """Rotate by an integer number of grid nodes (grid-exact)."""
        return TorusDensity(np.roll(self.values, int(shift_nodes)))

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# torus_density n_x={self.n_x}\n")
        buf.write("x,p\n")
        for x, p in zip(self.grid, self.values):
            buf.write(f"{float(x)!r},{float(p)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = [ln for ln in text.strip().splitlines() if ln and not ln.startswith("#")]
        vals = [float(ln.split(",")[1]) for ln in rows[1:]]
        return cls(np.asarray(vals))


class QuantileState:
    """Pseudo-periodic quantile function on the closed u-grid, optionally
    with its first three u-derivatives.

    ``values[j] = g(j/n_u)`` with ``g(1) = g(0) + 2*pi``; ``deriv1`` must be
    strictly positive and 1-periodic.
    """

    def __init__(self, values, deriv1=None, deriv2=None, deriv3=None):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.size < 5:
            raise InvariantError("quantile needs a closed 1-d grid of at least 5 nodes")
        if not np.all(np.isfinite(values)):
            raise InvariantError("quantile values must be finite")
        if abs((values[-1] - values[0]) - TWOPI) > _PERIODICITY_TOL:
            raise InvariantError("pseudo-periodicity g(1) - g(0) = 2*pi violated")
        self.values = values
        self.deriv1 = self._check_periodic(deriv1, "deriv1", positive=True)
        self.deriv2 = self._check_periodic(deriv2, "deriv2")
        self.deriv3 = self._check_periodic(deriv3, "deriv3")

    def _check_periodic(self, arr, name, positive=False):
        if arr is None:
            return None
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != self.values.shape:
            raise InvariantError(f"{name} shape {arr.shape} != quantile shape")
        scale = max(1.0, float(np.max(np.abs(arr))))
        if abs(arr[-1] - arr[0]) > _PERIODICITY_TOL * scale:
            raise InvariantError(f"{name} is not 1-periodic")
        if positive and np.any(arr <= 0.0):
            raise InvariantError(f"{name} must be strictly positive")
        return arr

    @property
    def n_u(self):
        return self.values.size - 1

    @property
    def grid(self):
        return quantile_grid(self.n_u)

    @classmethod
    def from_callable(cls, g, d1=None, d2=None, d3=None, n_u=256):
        u = quantile_grid(n_u)
        vals = np.asarray(g(u), dtype=np.float64)
        # pin the closed endpoint so pseudo-periodicity is float-exact
        vals[-1] = vals[0] + TWOPI
        def ev(fn):
            if fn is None:
                return None
            a = np.asarray(fn(u), dtype=np.float64)
            a[-1] = a[0]
            return a
        return cls(vals, ev(d1), ev(d2), ev(d3))

    @classmethod
    def uniform(cls, n_u=256):
        u = quantile_grid(n_u)
        return cls(TWOPI * u, np.full(n_u + 1, TWOPI),
                   np.zeros(n_u + 1), np.zeros(n_u + 1))

    def rebased(self):
        """Canonical representative: shift g(0) into [0, 2*pi)."""
        shift = TWOPI * np.floor(self.values[0] / TWOPI)
        return QuantileState(self.values - shift, self.deriv1, self.deriv2, self.deriv3)

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# quantile_state n_u={self.n_u}\n")
        buf.write("u,g\n")
        for u, g in zip(self.grid, self.values):
            buf.write(f"{float(u)!r},{float(g)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, deriv_from_grid=True):
        rows = [ln for ln in text.strip().splitlines() if ln and not ln.startswith("#")]
        vals = np.asarray([float(ln.split(",")[1]) for ln in rows[1:]])
        d1 = None
        if deriv_from_grid:
            d1 = _periodic_gradient(vals)
        return cls(vals, d1)


class PerturbationDirection:
    """1-periodic C^1 direction h on the closed u-grid."""

    def __init__(self, values, deriv1):
        values = np.asarray(values, dtype=np.float64)
        deriv1 = np.asarray(deriv1, dtype=np.float64)
        if values.shape != deriv1.shape or values.ndim != 1:
            raise InvariantError("h and h' must share one closed grid")
        scale = max(1.0, float(np.max(np.abs(values))), float(np.max(np.abs(deriv1))))
        if abs(values[-1] - values[0]) > _PERIODICITY_TOL * scale:
            raise InvariantError("h must be 1-periodic")
        if abs(deriv1[-1] - deriv1[0]) > _PERIODICITY_TOL * scale:
            raise InvariantError("h' must be 1-periodic")
        self.values = values
        self.deriv1 = deriv1

    @property
    def n_u(self):
        return self.values.size - 1

    @classmethod
    def from_callable(cls, h, d1, n_u=256):
        u = quantile_grid(n_u)
        hv = np.asarray(h(u), dtype=np.float64)
        dv = np.asarray(d1(u), dtype=np.float64)
        hv[-1] = hv[0]
        dv[-1] = dv[0]
        return cls(hv, dv)

    @classmethod
    def zero(cls, n_u=256):
        z = np.zeros(n_u + 1)
        return cls(z, z.copy())

    def c1_norm(self):
        return float(np.max(np.abs(self.values)) + np.max(np.abs(self.deriv1)))


def _periodic_gradient(closed_values):
    """Spectral derivative of a closed-grid array (periodic part only)."""
    n = closed_values.size - 1
    period_jump = closed_values[-1] - closed_values[0]
    u = np.arange(n) / n
    periodic = closed_values[:-1] - period_jump * u
    dk = np.fft.rfft(periodic) * (1j * np.arange(n // 2 + 1))
    d = np.fft.irfft(dk, n) + period_jump
    return np.concatenate((d, d[:1]))


def _spectral_cdf_nodes(p: TorusDensity):
    """F0(x_i) = integral of p from 0 to x_i, spectrally accurate nodes."""
    n = p.n_x
    vals = p.values
    mean = np.sum(vals) / n            # = 1/(2*pi) up to grid mass
    ck = np.fft.rfft(vals - mean) / n
    k = np.arange(1, n // 2 + 1)
    # antiderivative of the zero-mean part
    ak = np.zeros(n // 2 + 1, dtype=complex)
    ak[1:] = ck[1:] / (1j * k)
    phi = np.fft.irfft(ak, n) * n
    x = p.grid
    f_nodes = mean * x + (phi - phi[0])
    return f_nodes


def density_to_quantile(p: TorusDensity, x0: float = 0.0, n_u: int = 256) -> QuantileState:
    """Quantile function of a positive torus density.

    Inverts the cumulative distribution ``F0(x) = int_{x0}^{x} p`` by
    bisection (tolerance 1e-12) on a monotone cubic interpolant whose node
    values are computed spectrally.  The output satisfies
    ``g'(u) = 1 / p(g(u))`` by construction.
    """
    n_x = p.n_x
    xg = p.grid
    f_nodes = _spectral_cdf_nodes(p)
    # rebase at x0: F(x) = F0(x) - F0(x0)
    f_x0 = float(pseudo_periodic_pchip(xg, f_nodes, TWOPI, 1.0, np.array([x0]))[0])

    u = quantile_grid(n_u)
    targets = u + f_x0
    # bracket each target inside the pseudo-periodic extension of F
    shifts = np.floor(targets)
    reduced = targets - shifts          # in [0, 1), F spans [0, 1) on [0, 2*pi)
    xe = np.concatenate((xg, [TWOPI]))
    fe = np.concatenate((f_nodes, [f_nodes[0] + 1.0]))
    slopes = fc_slopes(xe, fe)
    lo = np.zeros(n_u + 1)
    hi = np.full(n_u + 1, TWOPI)
    fmid = np.empty(n_u + 1)
    for _ in range(52):                 # 2*pi / 2**52 < 1e-12
        mid = 0.5 * (lo + hi)
        hermite_eval(xe, fe, slopes, mid, fmid)
        below = fmid < reduced
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    g = 0.5 * (lo + hi)
    # polish the root against the spectral evaluation of F (the monotone
    # cubic is only an O(h^3) stand-in between nodes)
    mean = np.sum(p.values) / n_x
    phi_open = f_nodes - mean * xg      # 2*pi-periodic part of F
    for _ in range(2):
        fg = mean * g + _trig_interp(phi_open, g / TWOPI)
        g = g - (fg - reduced) / _trig_interp(p.values, g / TWOPI)
    g = g + TWOPI * shifts
    g[-1] = g[0] + TWOPI
    # derivative from the defining identity g' = 1 / p(g)
    p_at_g = _trig_interp(p.values, g / TWOPI)
    d1 = 1.0 / p_at_g
    d1[-1] = d1[0]
    return QuantileState(g, d1)


def _trig_interp(open_values, q, deriv=0):
    """Evaluate the trigonometric interpolant of 1-periodic grid data at q."""
    n = open_values.size
    spec = np.fft.rfft(open_values)
    m = np.arange(spec.size)
    w = np.full(spec.size, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0             # Nyquist mode enters once (cosine convention)
    cm = spec * w / n
    cm = cm * (TWOPI * 1j * m) ** deriv
    phase = np.exp(TWOPI * 1j * np.outer(np.asarray(q, dtype=float), m))
    return np.real(phase @ cm)


def quantile_to_density(g: QuantileState, n_x: int = 512) -> TorusDensity:
    """Density of the measure whose quantile function is g:
    ``p(x) = 1 / g'(g^{-1}(x))``.

    The inverse is seeded by monotone cubic interpolation and polished by
    Newton iterations on the trigonometric interpolant of g, so smooth
    inputs round-trip through :func:`density_to_quantile` at spectral
    accuracy.
    """
    if g.deriv1 is None:
        raise InvariantError("quantile_to_density requires deriv1")
    x = density_grid(n_x)
    u = pseudo_periodic_pchip(g.values, g.grid, TWOPI, 1.0, x)
    # Newton refinement on g(u) = 2*pi*u + q(u), q the 1-periodic part;
    # the residual is reduced to the nearest 2*pi multiple so the branch
    # picked by the seed interpolation is irrelevant
    q_open = g.values[:-1] - TWOPI * g.grid[:-1]
    for _ in range(3):
        gu = TWOPI * u + _trig_interp(q_open, u)
        resid = gu - x
        resid -= TWOPI * np.round(resid / TWOPI)
        dgu = TWOPI + _trig_interp(q_open, u, deriv=1)
        u = u - resid / dgu
    d1_at_x = _trig_interp(g.deriv1[:-1], u)
    if np.any(d1_at_x <= 0.0):
        raise InvariantError("interpolated g' is not positive")
    vals = 1.0 / d1_at_x
    # quadrature mass drifts at interpolation order; renormalise the residue
    vals /= TorusDensity._mass(vals)
    return TorusDensity(vals)


def _w2_shift_objective(q_mu, q_nu_nodes, u_nodes, c):
    """L2(du) cost between Q_mu(u) and Q_nu(u - c), trapezoid on the closed grid."""
    shifted = pseudo_periodic_pchip(u_nodes, q_nu_nodes, 1.0, TWOPI, u_nodes - c)
    diff = q_mu - shifted
    w = np.full(u_nodes.size, 1.0 / (u_nodes.size - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return float(np.sum(w * diff * diff))


def circular_wasserstein2(mu: TorusDensity, nu: TorusDensity, n_u: int = 512) -> float:
    """Quadratic Wasserstein distance on the circle.

    Standard one-dimensional reduction: minimise over a scalar rotation c of
    the cumulative distribution the L2 distance between the quantile
    functions, seeded by a 64-point scan and refined by golden-section
    search.
    """
    q_mu = density_to_quantile(mu, 0.0, n_u)
    q_nu = density_to_quantile(nu, 0.0, n_u)
    u = q_mu.grid
    obj = lambda c: _w2_shift_objective(q_mu.values, q_nu.values, u, c)

    # the objective is convex in c but not periodic (a unit shift of c moves
    # the quantile branch by 2*pi); the minimiser lies in (-1, 1)
    coarse = np.linspace(-1.0, 1.0, 129)
    vals = np.array([obj(c) for c in coarse])
    j = int(np.argmin(vals))
    lo, hi = coarse[max(j - 1, 0)], coarse[min(j + 1, coarse.size - 1)]

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c1 = b - invphi * (b - a)
    c2 = a + invphi * (b - a)
    f1, f2 = obj(c1), obj(c2)
    for _ in range(60):
        if b - a < 1e-12:
            break
        if f1 < f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - invphi * (b - a)
            f1 = obj(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + invphi * (b - a)
            f2 = obj(c2)
    best = min(f1, f2, vals[j])
    return float(np.sqrt(max(best, 0.0)))
