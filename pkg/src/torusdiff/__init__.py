"""torusdiff: numerical laboratory for a measure-valued diffusion on the
circle driven by spectral common noise plus an idiosyncratic Brownian
motion, with gradient estimators for the associated semigroup."""

from .geometry import (
    TWOPI,
    InvariantError,
    PerturbationDirection,
    QuantileState,
    TorusDensity,
    circular_wasserstein2,
    density_to_quantile,
    quantile_to_density,
    torus_distance,
)
from .noise import (
    FourierProfile,
    NoisePath,
    build_profile,
    sample_noise,
    zero_noise,
    zero_profile,
)
from .engine import (
    EngineError,
    MomentReport,
    PathState,
    evolve,
    evolve_parametric,
    moment_suite,
    realized_quadratic_variation,
)
from .functionals import (
    EmpiricalMeasure,
    GradientReport,
    TestFunctional,
    TrigPolynomial,
    build_empirical,
    cosine_functional,
    gradient_direct,
    gradient_fd,
    interaction_functional,
    linear_functional,
    semigroup_value,
    zero_average_check,
)
from .bel import (
    GaussianMollifier,
    WeightPath,
    accumulate_weight,
    TransportField,
    WeightCoefficients,
    eps_sweep,
    estimate_bel_term,
    estimate_gradient_bel,
    estimate_remainder,
    idiosyncratic_ibp_check,
    mollify,
    rate_sweep,
    remainder_kernel,
    transport_field,
    weight_coefficients,
)

__version__ = "0.1.0"
