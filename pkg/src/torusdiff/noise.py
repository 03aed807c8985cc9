"""Fourier coefficient families and reproducible sampling of the driving
noises.

One path is driven by 2*(2*K_max+1) + 1 scalar Gaussian increment streams:
the real and imaginary parts of the complex common-noise modes W^k for
k = -K_max..K_max, plus one idiosyncratic stream beta.  Streams are laid
out as columns ``j = k + K_max`` of ``dw_re`` / ``dw_im``.

Reproducibility contract: every stream is generated by its own
counter-based Philox generator keyed by ``(seed, replica, role, ...)``
through ``numpy.random.SeedSequence``, so any stream can be regenerated
bit-identically in isolation and results never depend on scheduling or
worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FourierProfile:
    """Power-law coefficient family f_k = C * (1 + k^2)^(-alpha/2).

    ``sum_sq``   : sum of f_k^2 over |k| <= k_max
    ``sum_k2``   : sum of f_k^2 k^2 over |k| <= k_max
    ``qv_rate``  : 1 + sum_sq, the per-particle quadratic variation per
                   unit time (the idiosyncratic stream contributes the 1)
    """

    alpha: float
    scale: float
    k_max: int
    coeffs: np.ndarray = field(repr=False)          # f_k for k = 0..k_max
    sum_sq: float
    sum_k2: float

    @property
    def qv_rate(self) -> float:
        return 1.0 + self.sum_sq

    @property
    def n_streams(self) -> int:
        return 2 * (2 * self.k_max + 1) + 1

    def f(self, k):
        """Coefficient f_k (symmetric in k)."""
        k = np.abs(np.asarray(k))
        return self.scale * (1.0 + k.astype(float) ** 2) ** (-self.alpha / 2.0)

    def tail_bound(self, k_ref: int = 4096) -> float:
        """Upper bound on the neglected tail sum of f_k^2 k^2 beyond k_max."""
        return _sum_k2(self.alpha, self.scale, k_ref) - self.sum_k2


def _coeff_array(alpha, scale, k_max):
    k = np.arange(k_max + 1, dtype=np.float64)
    return scale * (1.0 + k * k) ** (-alpha / 2.0)


def _sum_k2(alpha, scale, k_max):
    f = _coeff_array(alpha, scale, k_max)
    k = np.arange(k_max + 1, dtype=np.float64)
    return float(2.0 * np.sum((f[1:] * k[1:]) ** 2))


def build_profile(alpha: float, scale: float = 1.0, k_max: int = 64) -> FourierProfile:
    """Construct the coefficient family of decay order alpha, truncated at k_max."""
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    f = _coeff_array(alpha, scale, k_max)
    sum_sq = float(f[0] ** 2 + 2.0 * np.sum(f[1:] ** 2))
    sum_k2 = _sum_k2(alpha, scale, k_max)
    return FourierProfile(alpha=alpha, scale=scale, k_max=k_max,
                          coeffs=f, sum_sq=sum_sq, sum_k2=sum_k2)


def zero_profile(k_max: int = 0) -> FourierProfile:
    """Degenerate family f == 0: the dynamics reduce to a common translation."""
    f = np.zeros(k_max + 1)
    return FourierProfile(alpha=np.inf, scale=0.0, k_max=k_max,
                          coeffs=f, sum_sq=0.0, sum_k2=0.0)


# stream roles inside one replica's key space
_ROLE_W = 0
_ROLE_BETA = 1


def w_seed_sequence(seed: int, replica: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence((int(seed), int(replica), _ROLE_W))


def beta_seed_sequence(seed: int, replica: int = 0, beta_index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence((int(seed), int(replica), _ROLE_BETA, int(beta_index)))


def _gaussian_block(seed_seq, shape, scale):
    gen = np.random.Generator(np.random.Philox(seed_seq))
    return scale * gen.standard_normal(shape)


@dataclass
class NoisePath:
    """Time-discretised increments of one path's driving noises.

    ``dw_re[n, j]`` and ``dw_im[n, j]`` are the increments over step n of
    the real/imaginary parts of W^k with k = j - k_max; ``dbeta[n]`` is the
    idiosyncratic increment.  All increments are N(0, dt).
    """

    seed: int
    replica: int
    beta_index: int
    n_steps: int
    dt: float
    k_max: int
    dw_re: np.ndarray
    dw_im: np.ndarray
    dbeta: np.ndarray

    @property
    def w_fingerprint(self):
        """Identifies the shared common-noise realisation."""
        return (self.seed, self.replica, self.k_max, self.n_steps, round(self.dt, 15))

    def fold(self):
        """Fold the +/-k streams into the combinations the dynamics use.

        Returns (a, b) of shape (n_steps, k_max+1) with
        ``a[:, k] = dw_re[:, +k] + dw_re[:, -k]`` and
        ``b[:, k] = dw_im[:, +k] - dw_im[:, -k]`` for k >= 1, and
        ``a[:, 0] = dw_re[:, 0-column]``, ``b[:, 0] = 0``.
        """
        return fold_increments(self.dw_re, self.dw_im, self.k_max)


def fold_increments(dw_re, dw_im, k_max):
    kk = np.arange(1, k_max + 1)
    a = np.empty((dw_re.shape[0], k_max + 1))
    b = np.empty_like(a)
    a[:, 0] = dw_re[:, k_max]
    b[:, 0] = 0.0
    if k_max > 0:
        a[:, 1:] = dw_re[:, k_max + kk] + dw_re[:, k_max - kk]
        b[:, 1:] = dw_im[:, k_max + kk] - dw_im[:, k_max - kk]
    return a, b


def sample_w_increments(profile: FourierProfile, seed: int, replica: int,
                        n_steps: int, dt: float):
    """Common-noise increment block for one replica, (n_steps, 2*k_max+1) x 2."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    m = 2 * profile.k_max + 1
    block = _gaussian_block(w_seed_sequence(seed, replica), (2, n_steps, m), np.sqrt(dt))
    return block[0], block[1]


def sample_beta_increments(seed: int, replica: int, beta_index: int,
                           n_steps: int, dt: float):
    return _gaussian_block(beta_seed_sequence(seed, replica, beta_index),
                           (n_steps,), np.sqrt(dt))


def sample_noise(profile: FourierProfile, seed: int, n_steps: int, dt: float,
                 replica: int = 0, beta_index: int = 0) -> NoisePath:
    """Sample one path's noise.  Paths with equal (seed, replica) share the
    common-noise streams bit-identically; distinct beta_index values give
    independent idiosyncratic streams.
    """
    dw_re, dw_im = sample_w_increments(profile, seed, replica, n_steps, dt)
    dbeta = sample_beta_increments(seed, replica, beta_index, n_steps, dt)
    return NoisePath(seed=int(seed), replica=int(replica), beta_index=int(beta_index),
                     n_steps=int(n_steps), dt=float(dt), k_max=profile.k_max,
                     dw_re=dw_re, dw_im=dw_im, dbeta=dbeta)


def zero_noise(profile: FourierProfile, n_steps: int, dt: float) -> NoisePath:
    """All increments zero; isolates the deterministic part of the schemes."""
    m = 2 * profile.k_max + 1
    z = np.zeros((n_steps, m))
    return NoisePath(seed=0, replica=0, beta_index=0, n_steps=n_steps, dt=float(dt),
                     k_max=profile.k_max, dw_re=z, dw_im=z.copy(),
                     dbeta=np.zeros(n_steps))


def manifest_entries(profile: FourierProfile, seed, n_steps, dt):
    """Key-value lines recorded in every run manifest."""
    return {
        "alpha": profile.alpha,
        "scale_C": profile.scale,
        "k_max": profile.k_max,
        "seed": seed,
        "n_steps": n_steps,
        "dt": dt,
        "sum_sq": profile.sum_sq,
        "sum_k2": profile.sum_k2,
        "qv_rate": profile.qv_rate,
        "tail_bound_k2": profile.tail_bound(),
    }
