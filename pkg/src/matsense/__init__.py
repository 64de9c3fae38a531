"""Numerical laboratory for the incremental low-rank dynamics of gradient
descent on the matrix sensing problem."""

from .ground_truth import (GroundTruth, Truncation, make_ground_truth,
                           truncate, save_ground_truth, load_ground_truth)
from .sensing import (MeasurementEnsemble, RipEstimate, gaussian_ensemble,
                      full_observation, ensemble_from_matrices,
                      estimate_rip_delta, check_rip_consequence)
from .dynamics import (GDConfig, StepRecord, Trajectory, PhaseReport,
                       gd_step, run_gd, decompose, detect_phases,
                       spectral_approx_error, write_trajectory_csv,
                       read_trajectory_csv)
from .landscape import (ProcrustesResult, BestRankSolution, procrustes,
                        procrustes_lower_bound_check, solve_best_rank_s,
                        verify_rsi_sensing, verify_rsi_factorization,
                        factorization_critical_points,
                        rank1_strong_convexity, random_init_regularity,
                        save_best_rank, load_best_rank)

__version__ = "0.1.0"
