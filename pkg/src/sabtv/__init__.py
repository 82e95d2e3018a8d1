"""Distributed stochastic gradient tracking over time-varying directed networks.

Simulator for the stochastic push-pull tracking iteration with row- and
column-stochastic mixing, deterministic and centralized baselines, and the
full convergence-certificate toolkit (error metrics, network constants,
composite error recursion, step-size bound, steady-state bound).
"""

__version__ = "0.1.0"

from ._kernels import default_backend, get_kernels
from .algorithm import (ALGORITHMS, AlgState, DivergenceError, OracleStreams,
                        RunConfig, Trace, abpp_run, cgd_step, csgd_step, init,
                        run, step)
from .analysis import (AssumptionBreachError, BoundUndefinedError,
                       CompositeSystem, ConstantsSlice, ErrorSeries,
                       GlobalConstants, HorizonInsufficientError, ScheduleScan,
                       build_composite, char_poly_radius,
                       composite_relation_check, constants_update,
                       delta_certificate, error_vector, max_certified_alpha,
                       phi_approx, phi_consistency_residual, pi_update,
                       spectral_radius, steady_state_bound, step_size_bound,
                       theory_scan, tracking_deviation, vectors_at,
                       weighted_average, weighted_norm_sq)
from .config import ConfigError, ExperimentConfig, apply_overrides, load_config
from .data import (DataFormatError, DatasetSplit, ingest_idx_pair, partition,
                   read_idx_images, read_idx_labels, read_split_csv,
                   synthetic_digit_pair, write_idx_images, write_idx_labels,
                   write_split_csv)
from .graph import (DiGraph, GraphSchedule, GraphStructureError,
                    complete_digraph, diameter, export_edge_list, generate,
                    in_neighbors, is_strongly_connected, max_edge_utility,
                    parse_edge_list)
from .harness import (Problem, build_problem, build_schedule, certify,
                      evaluate_accuracy, ingest_split, ingest_to_csv,
                      run_experiment, sweep)
from .objective import (AgentEnsemble, LogisticLocal, OracleConfig,
                        QuadraticLocal, analytic_optimum,
                        build_logistic_ensemble, global_gradient,
                        local_gradient, oracle_gradient,
                        random_quadratic_ensemble, reference_optimum,
                        smoothness_and_convexity)
from .weights import (ValidationReport, WeightMatrix, WeightPair,
                      build_column_stochastic, build_pair,
                      build_row_stochastic, export_csv, min_positive,
                      validate_alignment)
