"""mfsde: interacting-particle estimators for measure derivatives of
distribution-dependent SDEs.

The package co-simulates a McKean-Vlasov particle system with its tangent
flow, evaluates a stochastic-weight representation of the derivative of
E f(X_T) with respect to the initial distribution, and checks it against
coupled finite differences and closed-form benchmarks.
"""

from .bismut import (EstimatorResult, GateFunction, GradientNormEstimate,
                     WeightAccumulator, accumulate, append_result_csv,
                     estimate_intrinsic_derivative, gradient_norm_estimate,
                     make_gate, weight_at)
from .config import ExperimentConfig, make_f, make_init, make_phi
from .errors import (ConfigError, DivergenceError, EvaluationError,
                     MfsdeError, SingularDiffusionError)
from .measures import (AtomsLaw, EmpiricalMeasure, GaussianLaw, Perturbation,
                       PointLaw, UniformLaw, constant_perturbation, integrate,
                       l2_norm, shift_pushforward, wasserstein2,
                       zero_perturbation)
from .models import (CoefficientSet, CylindricalDriftSpec, Feature, Mollifier,
                     SeparableKernel, build_cylindrical, cylindrical_dini,
                     double_well_mf, eval_drift, eval_lions_kernel,
                     linear_mf_ou, make_model, mollify_drift)
from .oracles import (Budget, FdConfig, LinearMfParams, SweepTable,
                      TangentLadder, a1_sweep, a2_check,
                      fd_intrinsic_derivative, linear_mf_exact,
                      pathwise_tangent_check)
from .rng import RngSpec
from .runner import RunReport, run_experiment
from .solver import (TimeGrid, TrajectoryBundle, forward_paths,
                     mean_field_tangent_term, simulate, step_particles,
                     step_tangents)

__version__ = "0.1.0"
