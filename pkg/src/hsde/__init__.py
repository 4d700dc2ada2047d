"""Spectral-Galerkin simulation and verification toolkit for gradient-type
SDEs with bounded measurable drift on L2(0,1).

The package simulates

    dX = (A X - grad V(X) + B(X)) dt + dW

in the truncated Dirichlet eigenbasis, with exact linear substeps, proximal
(implicit) handling of the convex potential, shared-noise coupled-path
experiments for pathwise uniqueness, and a Monte Carlo construction of the
drift-removing coordinate change with its quantitative bounds.
"""

from .errors import (
    BlowupError,
    ConfigurationError,
    DegenerateMeasureError,
    EvaluationError,
    NonContractionError,
)
from .mc import McEstimate
from .spectral import (
    SpectralModel,
    analyze,
    build_dirichlet_model,
    sample_gamma,
    sample_nu,
    synth,
)
from .ou import OuTransition, mehler_apply, ou_resolvent, ou_step, transition
from .potentials import (
    BoundedDrift,
    ConstantDrift,
    ConvexPotential,
    PowerPotential,
    QuadraticPotential,
    ResolventPotential,
    SignDrift,
    TanhDrift,
    ZeroDrift,
    smoothed_drift,
)
from .integrate import (
    BrownianIncrements,
    CoupledPair,
    Path,
    a_functional,
    coupled_uniqueness_run,
    girsanov_weight,
    occupation_integral,
    simulate_path,
    stopping_times,
)
from .zvonkin import (
    ResolventEstimator,
    ZvonkinTransform,
    build_transform,
    c_lambda,
    choose_lambda,
    grad_resolvent,
    nonlinear_resolvent,
    regularity_scaling_check,
    solve_scalar_u,
    t_lambda_apply,
)

__version__ = "0.1.0"
