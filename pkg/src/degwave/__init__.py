"""degwave: spectral simulator and attractor-dimension toolkit for the wave
equation with degenerate nonlocal damping."""

from .errors import (BudgetExceededError, ConfigError, FitError,
                     InsufficientWindowError, IntegrationError, StiffnessError)
from .model import (ModalState, ProblemConfig, SpectralBasis, build_basis,
                    damping_coefficient, eval_f_modal, i_u, i_up, norm_hs,
                    phase_norm, potential_integral, zero_state)
from .dynamics import (CoupledState, StepStats, Trajectory, integrate,
                       integrate_decomposition, integrate_linearized,
                       integrate_vw, reconstruction_defect, rhs_full, step,
                       tilde_i_v)
from .diagnostics import (DecayFit, EnergyReport, GronwallReport, HolderFit,
                          LipschitzReport, TwoSidedDecayReport, energy,
                          energy_collocation, energy_eps,
                          energy_equality_residual, energy_report,
                          fit_two_sided_decay, gronwall_bound_check,
                          holder_time_exponent, lambda_u, lipschitz_gap,
                          write_run_csv)
from .attractor import (AbsorbingRadiusReport, EnsembleSpec, PointCloud,
                        SmallDataRadiusReport, WRegularityReport,
                        annulus_split, eigen_direction_state,
                        ensemble_states, invariance_defect,
                        probe_absorbing_radius, probe_small_data_radius,
                        random_low_mode_state, sample_attractor,
                        w_regularity_report)
from .dimension import (CoveringReport, DegenerateCoverReport, VWSplitReport,
                        box_dimension, covering_number, d0_estimate,
                        decay_time_schedule, degenerate_cover,
                        greedy_net_indices, two_regime_summary,
                        vw_splitting_report)

__version__ = "0.1.0"
