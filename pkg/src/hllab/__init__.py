"""Numerical laboratory for the Hebraud-Lequeux stress-distribution model.

A finite-volume solver for the mesoscopic evolution of the stress
probability density under shear, with self-consistent fluidity, plus
the closed-form companions: comparison envelopes, a-priori bounds, the
degenerate uniqueness classifier and escape branches, and the complete
steady-state rheology (flow curves).
"""

from .core import (
    DensityField,
    GridAlignmentError,
    ModelParams,
    Observables,
    ShearProtocol,
    StepFunction,
    StressGrid,
    build_grid,
    density_from_cell_values,
    fluidity,
    gaussian_density,
    observables,
    shear_integral,
    uniform_density,
)
from .analytic import (
    BoundsReport,
    EnvelopePair,
    apriori_bounds,
    comparison_envelopes,
    gauss_tail_integral,
    gaussian_kernel,
    heat_evolve,
)
from .degeneracy import (
    DegeneracyReport,
    EscapeProfile,
    Verdict,
    branch_solution,
    classify_degenerate,
    critical_time,
    escape_profile,
    smeared_fluidity,
    smeared_fluidity_uniform,
)
from .evolve import (
    CFLError,
    DiffusionTrace,
    EvolveConfig,
    SandwichReport,
    SweepReport,
    Trajectory,
    branch_l2_distance,
    simulate,
    stagnation_time,
    step,
    verify_sandwich,
    viscosity_sweep,
)
from .steady import (
    DegenerateFamily,
    ResidualReport,
    SteadyState,
    flow_curve,
    steady_residual,
    steady_sheared,
    steady_zero_shear,
    validate_degenerate_steady,
    zero_shear_fluidity,
)

__version__ = "0.1.0"
