"""Certified reach-avoid probabilities via sampled fitted value iteration.

Library surface: build a controlled Markov process, state a reach-avoid
instance, run the sampled backward recursion with a fixed RBF class, and
attach a-priori and sample-based probabilistic error certificates.  The
`reachcert` command-line tool orchestrates the same pipeline from a JSON
configuration.
"""

from .bounds import (AprioriCertificate, BoundBudget, QuadratureEstimate, ScalingFactors,
                     budget_from_sample_sizes, global_apriori_certificate, hoeffding_delta,
                     plan_sample_sizes, pollard_delta, scaling_B0,
                     scaling_B_analytic_linear_gaussian, scaling_B_numeric,
                     single_step_bound)
from .certify import (HoldoutSet, PerIterationEstimates, PolicyPerformanceBound,
                      SampleCertificate, draw_holdout, estimate_bias, estimate_errors,
                      estimate_single_step, initial_error_budget, policy_performance_bound,
                      sample_certificate)
from .errors import (ConfigError, EtaMismatchError, FitError, GeometryError,
                     ReachcertError, SamplingStallError, SeedOverlapError,
                     VacuousBoundError)
from .func_approx import (FittedFunction, RbfClassConfig, design_matrix, evaluate, fit,
                          lattice_centers, pseudo_dimension, two_scale_centers,
                          zero_function)
from .fvi import (FviConfig, FviResult, empirical_operator, extract_policy,
                  generate_samples, initial_state_estimate, run_fvi)
from .model import (BoxSet, LinearGaussianKernel, MarkovProcess, ReachAvoidSpec,
                    SamplingDistribution, ThermalParams, benchmark_spec, box_contains,
                    thermal_matrices, thermal_process, uniform_eta)
from .oracle import (Grid, GridValue, Policy, dp_fixed_policy, dp_optimal,
                     grid_convergence, initial_values, monte_carlo_reach_avoid)

__version__ = "0.1.0"
