"""Constrained least squares over mixed-norm and max-norm balls from local
linear measurements, with norm solvers, measurement ensembles and the
error-bound formulas used to check recovery experiments."""

from .bounds import (GeometryEstimate, MinimaxValue, PackingError, PackingSet, build_packing,
                     estimate_gamma, estimate_geometry, estimate_R, estimate_theta,
                     eval_minimax_lower, eval_prop1_bound, eval_thm2_rate, expected_kl,
                     fano_lower, kl_divergence, minimax_gamma_sq, packing_target, spikiness)
from .dense import RngStream, matrix_rank, random_rank_r, spectral_norm, svd, unvec, vec
from .errors import (ConfigError, FactorizationError, RankDeficiencyError, SolverError,
                     SvdConvergenceError, TnlassoError)
from .estimator import SolveReport, SolverConfig, enforce_factor_budget, objective, solve_lasso
from .measurements import (MeasurementEnsemble, NoiseSpec, add_noise, build_completion,
                           build_sketching)
from .norms import (NormBallSpec, Regime, check_rank_sandwich, inf_norm, max_norm_factored,
                    max_norm_sdp, mixed_norm_factored, mixed_norm_sdp, op_norm_1to2, tnorm,
                    tnorm_detail, tnorm_upper)

__version__ = "0.1.0"
