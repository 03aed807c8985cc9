"""Spectral solver for the density evolution driven by the same common
noise as the particle system, used as a cross-validator.

In Fourier modes p_hat_k (density p(x) = sum_k p_hat_k e^{ikx}, so
p_hat_0 = 1/(2*pi) is the conserved mass), one step applies the transport
increment explicitly and the diffusion factor exactly:

    p* = p_hat - ik (p V_inc)_k          (spectral convolution)
    p_hat <- exp(-lambda k^2 dt) p*

where V_inc(x) = sum_j f_j Re(e^{-ijx} dW_j) is the common-noise increment
field and lambda is (1 + sum f^2)/2 in the averaged ("super") mode or
sum f^2 / 2 at the well-posedness threshold ("critical").  The exact
diffusion factor reproduces the noise-free heat decay to rounding, and the
k = 0 mode is untouched by both terms, so mass is conserved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import TWOPI, TorusDensity, density_grid
from .noise import FourierProfile, NoisePath


class SpdeError(RuntimeError):
    pass


@dataclass
class SpectralDensity:
    """Fourier modes of the density at stored times.

    modes[i, k] holds p_hat_k at time times[i], k = 0..k_modes (negative
    modes by conjugation).
    """

    times: np.ndarray
    modes: np.ndarray
    lam: float

    @property
    def k_modes(self):
        return self.modes.shape[1] - 1

    def realized(self, i=-1, n_x=512) -> np.ndarray:
        """Density values on the open grid at stored time index i."""
        x = density_grid(n_x)[None, :]
        out = np.empty_like(x)
        # the evaluator contracts against e^{-ikx}; our modes multiply
        # e^{+ikx}, so hand it the conjugates
        row = np.ascontiguousarray(np.conj(self.modes[i])[None, :])
        _kernels.mollified_eval(row, np.ones(self.k_modes + 1), x, out)
        return out[0]

    def mode_energy(self, i=-1) -> float:
        """Energy carried by the oscillating modes at stored index i."""
        m = self.modes[i]
        return float(2.0 * np.sum(np.abs(m[1:]) ** 2))


def lambda_coefficient(profile: FourierProfile, mode: str) -> float:
    if mode == "super":
        return 0.5 * (1.0 + profile.sum_sq)
    if mode == "critical":
        return 0.5 * profile.sum_sq
    raise ValueError("lambda_mode must be 'super' or 'critical'")


def evolve_density(p0: TorusDensity, profile: FourierProfile,
                   noise: NoisePath, lambda_mode: str = "super",
                   k_modes: int = 64, store_stride: int = 0) -> SpectralDensity:
    """Evolve the density modes under one common-noise realisation.

    store_stride = 0 stores the initial and final states only; a positive
    stride additionally stores every stride-th step.
    """
    lam = lambda_coefficient(profile, lambda_mode)
    n_steps, dt = noise.n_steps, noise.dt
    k_max = profile.k_max

    spec = np.fft.rfft(p0.values) / p0.n_x
    if spec.size - 1 < k_modes:
        raise ValueError("density grid too coarse for the requested modes")
    # two-sided mode vector over -K..K for the convolution
    K = k_modes
    ph = np.zeros(2 * K + 1, dtype=np.complex128)
    ph[K] = spec[0]
    for k in range(1, K + 1):
        ph[K + k] = spec[k]
        ph[K - k] = np.conj(spec[k])

    # common-noise increment field in the same two-sided layout
    a, b = noise.fold()
    f = profile.coeffs
    kv = np.arange(-K, K + 1, dtype=np.float64)
    decay = np.exp(-lam * kv ** 2 * dt)

    stored = [ph.copy()]
    stored_t = [0.0]
    for n in range(n_steps):
        # V_inc modes: V_m = f_m (dW_{-m} + conj dW_m)/2 = f_m (A_m - i B_m)/2
        vinc = np.zeros(2 * K + 1, dtype=np.complex128)
        m_hi = min(k_max, K)
        vm = 0.5 * f[:m_hi + 1] * (a[n, :m_hi + 1] - 1j * b[n, :m_hi + 1])
        vm[0] = f[0] * a[n, 0]
        vinc[K:K + m_hi + 1] = vm
        vinc[K - m_hi:K + 1] = np.conj(vm[::-1])
        conv = np.convolve(ph, vinc)[K:3 * K + 1]
        # the k = 0 update multiplies by exactly 1 and adds exactly 0, so
        # mass conservation is bitwise without any projection
        ph = decay * (ph - 1j * kv * conv)
        if store_stride and (n + 1) % store_stride == 0 and n + 1 != n_steps:
            stored.append(ph.copy())
            stored_t.append((n + 1) * dt)
    stored.append(ph.copy())
    stored_t.append(n_steps * dt)

    modes = np.stack([row[K:] for row in stored])
    if not np.all(np.isfinite(modes)):
        raise SpdeError("density modes became non-finite")
    drift = abs(modes[-1, 0] - modes[0, 0])
    if drift > 1e-12:
        raise SpdeError(f"mass drift {drift:g} exceeds 1e-12")
    return SpectralDensity(times=np.asarray(stored_t), modes=modes, lam=lam)


def kde_wrapped(samples, bandwidth: float, n_x: int = 512,
                k_modes: int = 255) -> TorusDensity:
    """Wrapped-Gaussian kernel density estimate on the open grid.

    Computed spectrally: the wrapped Gaussian has Fourier factors
    exp(-k^2 bw^2 / 2), so the estimate is the sample moment sums damped by
    those factors.  It integrates to one exactly.
    """
    if bandwidth <= 0.0:
        raise ValueError("bandwidth must be positive")
    flat = np.ascontiguousarray(np.ravel(np.asarray(samples, dtype=np.float64)))
    if hasattr(samples, "samples"):
        flat = np.ascontiguousarray(np.ravel(samples.samples))
    k_modes = min(k_modes, n_x // 2 - 1)
    cs, sn = _kernels.kde_fourier_sums(flat, k_modes)
    k = np.arange(k_modes + 1, dtype=np.float64)
    damp = np.exp(-0.5 * (k * bandwidth) ** 2)
    coeffs = (cs + 1j * sn) * damp / TWOPI
    x = density_grid(n_x)[None, :]
    out = np.empty_like(x)
    _kernels.mollified_eval(np.ascontiguousarray(coeffs[None, :]),
                            np.ones(k_modes + 1), x, out)
    vals = out[0]
    floor = np.min(vals)
    if floor <= 0.0:
        # spectral truncation can undershoot slightly on empty regions
        vals = np.maximum(vals, 1e-12)
        vals /= np.sum(vals) * TWOPI / n_x
    return TorusDensity(vals)


def l1_distance(p: TorusDensity, q_values: np.ndarray) -> float:
    """L1 distance between a density object and values on the same grid."""
    return float(np.sum(np.abs(p.values - q_values)) * TWOPI / p.n_x)
