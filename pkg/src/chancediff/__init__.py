"""Chance-constrained optimization by gradient-guided diffusion sampling.

The package splits into three pipeline stages plus benchmarks:

* ``problems`` / ``datagen`` — problem definitions and feasible-set data
  generation from deterministic restricted problems,
* ``schedule`` / ``network`` / ``training`` — the forward noising process
  and a conditional noise-prediction network with condition dropout,
* ``guidance`` / ``sampler`` — gradient-guided reverse sampling,
* ``baselines`` — exact conic reference solutions,
* ``pipeline`` / ``cli`` — batch orchestration and reporting.
"""

from .baselines import (SocpSolution, empirical_mean_baseline, project_to_cone,
                        quantile_gaussian, socp_solve, solve_cone_program)
from .datagen import (FeasibleDataset, RestrictionGrid, chebyshev_bound, empirical_rho,
                      generate_dataset, quadform_probability_gaussian,
                      quadform_probability_mc, solve_restricted)
from .errors import (ChanceDiffError, DivergenceError, IllPosedError,
                     InfeasibleInstanceError, InfeasibleRestrictionError, NumericalError,
                     SingularityError, StateError, TrainingDivergedError)
from .guidance import (GuidanceConfig, first_order_guidance, second_order_guidance,
                       tweedie_posterior_mean)
from .network import (AnalyticGaussianScore, ScoreNetwork, cond_score, eps_from_score,
                      load_checkpoint, save_checkpoint, score_from_eps)
from .normal import norm_cdf, norm_quantile
from .pipeline import (ExperimentConfig, SampleReport, baseline_reports, compute_report,
                       emit_plot_data, run_pipeline)
from .problems import (CCPInstance, LinearChanceConstraint, QuadraticObjective,
                       UncertaintySource, draw_uncertainty, load_instance, save_instance)
from .sampler import (SamplerConfig, Trajectory, feasibility_repair, reverse_step,
                      sample, time_grid)
from .schedule import NoiseSchedule, forward_perturb
from .training import TrainConfig, train, training_loss

__version__ = "0.1.0"
