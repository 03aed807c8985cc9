"""Experiment configuration: every numeric knob of a run, parseable from
plain key = value text, echoed verbatim into the run manifest.

The shipped default is the cross-module reference scenario:
g(u) = 2*pi*u + 0.3 sin(2*pi*u), h(u) = cos(2*pi*u), phi = int cos dmu,
alpha = 4 (theta = 0.5), C = 1, K_max = 64, N_u = 256, N_x = 512,
dt = 1e-3, t = 0.5, eps = 0.2, rho = 1e-2, M_W = 2000, M_beta = 64,
seed = 20240601.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .functionals import TestFunctional, interaction_functional, linear_functional
from .geometry import TWOPI, PerturbationDirection, QuantileState
from .noise import FourierProfile, build_profile, zero_profile


class ConfigError(ValueError):
    pass


def _parse_floats(text):
    text = text.strip()
    if not text:
        return []
    return [float(tok) for tok in text.split(",")]


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "standard"
    alpha: float = 4.0
    scale_c: float = 1.0
    k_max: int = 64
    theta: float = 0.5
    n_u: int = 256
    n_x: int = 512
    dt: float = 1e-3
    horizon: float = 1.0
    t: float = 0.5
    eps: float = 0.2
    rho: float = 1e-2
    m_w: int = 2000
    m_beta: int = 64
    seed: int = 20240601
    functional: str = "linear"
    functional_cos: tuple = (0.0, 1.0)
    functional_sin: tuple = (0.0, 0.0)
    g_sin: tuple = (0.3,)
    g_cos: tuple = ()
    h_cos: tuple = (0.0, 1.0)
    h_sin: tuple = (0.0, 0.0)
    bandwidth: float = 0.15
    out_dir: str = "out"

    def validate(self):
        if self.alpha <= 0 and self.scale_c != 0.0:
            raise ConfigError("alpha must be positive")
        if self.scale_c < 0:
            raise ConfigError("scale C must be nonnegative")
        if self.k_max < 0:
            raise ConfigError("k_max must be >= 0")
        if self.n_u < 8 or self.n_x < 16:
            raise ConfigError("grids too coarse")
        if self.dt <= 0 or self.t <= 0 or self.t > self.horizon:
            raise ConfigError("need 0 < t <= horizon and dt > 0")
        if abs(round(self.t / self.dt) * self.dt - self.t) > 1e-9:
            raise ConfigError("t must be a multiple of dt")
        if not (0 < self.eps < 3):
            raise ConfigError("eps out of range (0, 3)")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")
        if self.m_w < 1 or self.m_beta < 1:
            raise ConfigError("replica counts must be positive")
        if self.functional not in ("linear", "interaction"):
            raise ConfigError("functional must be linear or interaction")
        g = self.make_quantile()
        if np.any(g.deriv1 <= 0):
            raise ConfigError("initial quantile is not strictly increasing")
        return self

    # -- constructors for the domain objects -------------------------------

    def make_profile(self) -> FourierProfile:
        if self.scale_c == 0.0:
            return zero_profile(self.k_max)
        return build_profile(self.alpha, self.scale_c, self.k_max)

    def make_quantile(self, n_u=None) -> QuantileState:
        sin_c = np.asarray(self.g_sin, dtype=float)
        cos_c = np.asarray(self.g_cos, dtype=float)

        def g(u):
            out = TWOPI * u
            for m, cval in enumerate(sin_c, start=1):
                out = out + cval * np.sin(TWOPI * m * u)
            for m, cval in enumerate(cos_c, start=1):
                out = out + cval * (np.cos(TWOPI * m * u) - 1.0)
            return out

        def deriv(order):
            def d(u):
                out = TWOPI * np.ones_like(u) if order == 1 else np.zeros_like(u)
                for m, cval in enumerate(sin_c, start=1):
                    w = TWOPI * m
                    ph = [np.sin, np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z)][order % 4]
                    out = out + cval * w ** order * ph(TWOPI * m * u)
                for m, cval in enumerate(cos_c, start=1):
                    w = TWOPI * m
                    ph = [np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z), np.sin][order % 4]
                    out = out + cval * w ** order * ph(TWOPI * m * u)
                return out
            return d

        return QuantileState.from_callable(g, deriv(1), deriv(2), deriv(3),
                                           n_u=n_u or self.n_u)

    def make_direction(self, n_u=None) -> PerturbationDirection:
        cos_c = np.asarray(self.h_cos, dtype=float)
        sin_c = np.asarray(self.h_sin, dtype=float)

        def h(u):
            out = np.zeros_like(u)
            for m, cval in enumerate(cos_c):
                out = out + cval * np.cos(TWOPI * m * u)
            for m, cval in enumerate(sin_c):
                out = out + cval * np.sin(TWOPI * m * u)
            return out

        def dh(u):
            out = np.zeros_like(u)
            for m, cval in enumerate(cos_c):
                out = out - cval * TWOPI * m * np.sin(TWOPI * m * u)
            for m, cval in enumerate(sin_c):
                out = out + cval * TWOPI * m * np.cos(TWOPI * m * u)
            return out

        return PerturbationDirection.from_callable(h, dh, n_u=n_u or self.n_u)

    def make_functional(self) -> TestFunctional:
        if self.functional == "linear":
            return linear_functional(self.functional_cos, self.functional_sin)
        return interaction_functional(self.functional_cos)

    # -- serialisation ------------------------------------------------------

    def to_manifest(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            out[f.name] = v
        prof = self.make_profile()
        out["sum_sq"] = prof.sum_sq
        out["sum_k2"] = prof.sum_k2
        out["qv_rate"] = prof.qv_rate
        out["tail_bound_k2"] = prof.tail_bound()
        return out

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        kwargs = {}
        tuple_keys = {"functional_cos", "functional_sin", "g_sin", "g_cos",
                      "h_cos", "h_sin"}
        int_keys = {"k_max", "n_u", "n_x", "m_w", "m_beta", "seed"}
        float_keys = {"alpha", "scale_c", "theta", "dt", "horizon", "t",
                      "eps", "rho", "bandwidth"}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line: {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key in tuple_keys:
                kwargs[key] = tuple(_parse_floats(val))
            elif key in int_keys:
                kwargs[key] = int(val)
            elif key in float_keys:
                kwargs[key] = float(val)
            elif key in ("scenario", "functional", "out_dir"):
                kwargs[key] = val
            else:
                raise ConfigError(f"unknown config key: {key!r}")
        return cls(**kwargs).validate()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw).validate()


STANDARD = ExperimentConfig()
