"""Graph Laplacian semi-supervised classification with certified and
empirical adversarial robustness.

The package builds geometric graphs over point clouds, extends the labels
harmonically by solving the constrained Dirichlet problem, certifies how far
inputs may move before the decision can change, and stress-tests that
certificate with white-box and black-box attacks plus training-set defenses.
"""

from .data import (DataError, Dataset, SplitSpec, apply_label_mask,
                   dataset_from_csv, dataset_to_csv, gen_halfmoon,
                   gen_uniform_cube, labeling_rate, load_abalone,
                   load_mnist_1v7)
from .graph import (Graph, GraphError, KernelConstants, KernelSpec,
                    ball_count_band, build_epsilon_graph, build_knn_graph,
                    continuum_operator, degree_stats, eta_indicator,
                    eta_lipschitz_bump, graph_from_edgelist,
                    graph_laplacian_apply, graph_to_edgelist,
                    kernel_constants, pointwise_consistency_errors)
from .solve import (ConvergenceError, HarmonicSolution, SolveError,
                    SolverConfig, UnsolvableComponentError,
                    check_maximum_principle, dense_oracle_solve,
                    dirichlet_energy, harmonic_extend, solution_to_csv)
from .classify import (Prediction, accuracy, gl_classify, knn_classify,
                       predictions_to_csv)
from .models import (SurrogateModel, TrainConfig, TrainingError,
                     decision_score, gradient_wrt_input, load_model,
                     predict_proba, save_model, substitute_train_loop,
                     train_surrogate)
from .attack import (ATTACK_KINDS, AttackError, AttackSpec, PerturbedDataset,
                     direct_attack, fgsm_l2, perturbed_to_csv, run_attack)
from .defend import (DefenseError, DefenseSpec, augment_adversarial,
                     defended_to_csv, min_cross_class_distance, robust_prune,
                     select_separation)
from .certify import (CalibrationError, CalibrationResult, CertBounds,
                      CertInputs, CertifyError, ClosenessReport,
                      HypothesisViolation, calibrate_constants,
                      certified_bounds, certified_bounds_from_k,
                      check_certified_closeness, constant_grid,
                      empirical_robustness_radius, margin_robust_set)
from .pipeline import AttackContext, Pipeline, PipelineConfig
from .experiments import (ExperimentConfig, ExperimentError, RunRecord,
                          config_from_ini, config_hash, read_table,
                          run_certify_experiment, run_label_sweep,
                          run_robust_curves, run_timing, write_table)

__version__ = "0.1.0"
