"""Uplink sum-rate optimization for a transmissive-RIS OFDMA transceiver.

The package splits into: channel synthesis (far-field Rician user links, a
near-field spherical-wave feed link, and their cascade), a Lagrangian
dual-decomposition allocator for powers and subcarriers, a lifted
penalty/SCA solver for the RIS transmissive coefficient, an alternating
driver tying the two together, brute-force oracles for tiny instances, and
a benchmark harness with a CLI.
"""

__version__ = "0.1.0"

from .aodriver import (AoParams, Solution, SolveReport, alternate,
                       evaluate_objective, objective_upper_bound, per_user_rates)
from .channel import (ChannelRealization, cascade, export_channels_csv,
                      far_field_channel, modulation_gap, near_field_channel,
                      rayleigh_distance, snr_and_rate, synthesize_channels,
                      upa_steering, user_angles)
from .config import (SPEED_OF_LIGHT, SystemConfig, db_to_linear,
                     dbm_per_hz_to_watt, default_config, load_config, save_config)
from .dualalloc import (AllocationState, DualReport, DualSolveParams, GammaTable,
                        allocation_criterion, assign_subcarriers,
                        export_allocation_csv, export_dual_trace_csv, gamma_table,
                        power_step, solve_allocation, solve_allocation_from_gamma,
                        update_multipliers, waterfill_budget)
from .errors import (ConfigError, GeometryError, InstanceTooLargeError, SolverError)
from .harness import (ALGORITHMS, BenchmarkResult, ExperimentSpec,
                      aggregate_from_trials, apply_sweep_value,
                      load_experiment_spec, run_benchmark, run_convergence,
                      run_trial, trial_seed)
from .oracle import OracleGrid, brute_force_allocation, brute_force_phase
from .rissolver import (ScaParams, ScaReport, TransmissiveCoefficient, XiTable,
                        build_xi_table, export_coefficient_csv,
                        export_sca_trace_csv, extract_coefficient, penalty_term,
                        sca_lower_bound, sca_penalty_loop, solve_subproblem_p6,
                        top_eigenpair, warm_start_coefficient)
