"""Threshold release policies for dams fed by spectrally positive Levy input.

The package computes exit transforms, potential measures, overshoot laws and
the discounted / long-run average cost of running a two-level release policy,
and checks every analytic quantity against a Monte Carlo path oracle.
"""

from .models import (
    AtomJumps,
    BrownianDrift,
    CompoundPoissonDrift,
    ConvergenceError,
    ExponentialJumps,
    GammaDrift,
    GenericBoundedVariation,
    InverseGaussianDrift,
    LevyMeasure,
    LevyModel,
    brownian,
    compound_poisson_exp,
    compound_poisson_measure,
    gamma_measure,
    generic_measure,
    inverse_gaussian_measure,
)
from .scale import (
    CLOSED_FORM_BROWNIAN,
    CONVOLUTION_SERIES,
    LAPLACE_INVERSION,
    ScaleFunctionSet,
    ScaleOptions,
    shifted_model,
    shifted_scale_set,
)
from .exits import (
    OvershootLaw,
    PotentialDensity,
    cycle_end_lt,
    exit_lt_reflected,
    exit_lt_up,
    exit_mean_reflected,
    exit_mean_up,
    fill_overshoot_law,
    overshoot_expectation,
    overshoot_reflected,
    overshoot_up,
    potential_reflected,
    potential_release,
    potential_two_sided,
    potential_up_killed,
    release_exit_lt,
    release_exit_mean,
)
from .costs import (
    CostSpec,
    PiecewisePoly,
    PolicyEvaluator,
    PolicyParams,
    cycle_cost,
    fill_cost,
    long_run_average_cost,
    release_cost,
    total_discounted_cost,
)
from .simulate import (
    CycleRecords,
    InputPath,
    PathConfig,
    SimulationEstimate,
    estimate,
    path_rng,
    run_policy_cycles,
    simulate_input_path,
    simulate_total_discounted,
)

__all__ = [name for name in dir() if not name.startswith("_")]
