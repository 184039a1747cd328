"""Optimal stopping of McKean-Vlasov diffusions by regression on particle systems."""

from .basis import BasisSet, gram_matrix, hermite_basis, make_basis, poly_reward_basis
from .model import (ModelSpec, RewardSpec, ShimizuYamadaParams, sy_conditional_moments,
                    sy_exact_increment, sy_model, sy_reward)
from .oracle import OracleSolution, continuation_at, solve_grid
from .particles import (ParticlePaths, RateReport, chaos_rate, euler_rate,
                        simulate_coupled_exact, simulate_limit_euler, simulate_particles)
from .regression import (FitReport, concentration_experiment, fit_ls,
                         perturbation_constants, pinv_perturbation_check, truncate)
from .stopping import (BoundsEstimate, Policy, estimate_bounds, evaluate_dual_upper,
                       evaluate_lower, prmc_backward, prmc_independent_batches, tvr_backward)

__version__ = "0.1.0"
