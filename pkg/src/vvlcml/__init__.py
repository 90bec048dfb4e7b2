"""Channel modeling toolkit for vehicular visible-light links.

Synthetic data generation, curve-fit path-loss baselines, from-scratch
MLP/RBF/random-forest regressors, variance-region clustering, permutation
feature importance, and an experiment harness with a CLI front end.
"""

from .dataset import (CfrSample, PathLossSample, ScalingSpec, SplitSpec,
                      apply_scaler, fit_scaler, ingest_csv, invert_scaler, split)
from .synthgen import GeneratorConfig, generate_ds1, generate_ds2, ground_truth_pl
from .baselines import eval_fit, fit_model, goodness, lambertian_order
from .clustering import kmeans, label_variance_region
from .neuralnet import (MlpTrainConfig, mlp_forward, mlp_gradient, mlp_train,
                        rbf_design_matrix, rbf_predict, rbf_train)
from .forest import ForestConfig, forest_fit, forest_predict, permutation_importance, tree_fit
from .harness import (EvalReport, ExperimentConfig, GridSpec, compute_metrics,
                      cross_validate, export_residual_cdf, grid_search,
                      run_cfr_experiment, run_pathloss_experiment)

__version__ = "0.1.0"
