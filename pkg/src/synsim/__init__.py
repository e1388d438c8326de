"""synsim: consensus-based collaborative output tracking.

N noisy double-integrator agents, each running a continuous-time Kalman
filter, jointly track a target force through a two-level control law
(Riccati task-level feedback plus inter-agent consensus).  The analysis
toolkit reproduces the validation statistics: RMSE, PCA with span{1}
angles, and the UCM variance decomposition with its synergy index.
"""

__version__ = "0.1.0"

from .agent import A_C, B_C, C_C, AgentState, NoiseConfig, kalman_step, measure, step_true_dynamics
from .analysis import (ExternalTrial, FitResult, PsiState, SynergyReport,
                       UcmResult, angle_with_span1, butterworth_lowpass,
                       consensus_lyapunov, ensemble_synergy, fit_second_order,
                       load_wide_csv, outlier_filter, pca,
                       psi_and_disagreement, rmse, sharing_covariance,
                       ucm_analysis)
from .control import (ControlParams, DesiredDynamics, decompose_control,
                      desired_from_damping, desired_step, ensemble_control,
                      node_control, nominal_desired, riccati_gain,
                      task_level_accel)
from .numerics import (CareSolveError, RngStream, SamplingError,
                       sample_gaussian, sample_sharing_ratios, solve_care,
                       sym_eig)
from .simulator import (NOMINAL_C_M, TrialConfig, TrialRecord, iter_trials,
                        load_trial, run_ensemble, run_trial,
                        run_trial_reference, save_trial)
from .topology import (Graph, complete_graph, is_connected, laplacian,
                       path_graph, projection_complement_span1)
