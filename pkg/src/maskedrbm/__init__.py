"""RBMs trained on data with missing-at-random features and labels, with
mean-field imputation for transductive reconstruction and inductive
multi-class / multi-label prediction."""

from .data import (DataFormatError, FeatureStats, IncompleteDataset, MaskSpec,
                   apply_mask, dataset_from_arrays, load_csv, load_mask,
                   load_mnist_idx, load_schema, save_mask, split_inductive)
from .experiment import (CellResult, ConfigError, ExperimentConfig,
                         build_config, emit_report, fit_threshold,
                         load_dataset, parse_config_file, run_inductive,
                         run_transductive)
from .meanfield import (ImputationConfig, ImputationResult, MeanFieldState,
                        decode_multiclass, decode_multilabel, impute,
                        learn_threshold, mean_field_residual, mean_field_step)
from .metrics import (AggregateReport, MetricsReport, UndefinedMetricError,
                      accuracy_multiclass, aggregate, averaged_auc,
                      hamming_accuracy, micro_auc, rmse)
from .model import (ParamStats, RbmModel, UnitKind, VisibleConditional,
                    VisibleLayout, VisibleUnitSpec, binary_spec, energy,
                    gaussian_spec, hidden_conditional, initialize_model,
                    load_model, sample_hidden, sample_visible, save_model,
                    visible_conditional)
from .oracle import (BudgetExceededError, EnumerationBudget,
                     exact_conditional_marginals, exact_log_likelihood,
                     exact_lossy_gradient, exact_observed_moments,
                     exact_partition)
from .training import (DivergenceError, GibbsChain, TrainConfig, TrainResult,
                       init_chains, negative_term_cd, negative_term_pcd,
                       pinned_hidden_bias, positive_term, train)

__version__ = "0.1.0"
