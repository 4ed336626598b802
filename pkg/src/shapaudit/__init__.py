"""shapaudit: seeded multi-view classifiers, DeepSHAP attributions and
ablation experiments that audit how stable those attributions are."""

from ._version import __version__
from .attribution import (AttributionResult, BackgroundSet, RankVector, ScoreSet,
                          aggregate_scores, deepshap_attribute, rank_features)
from .dataio import (MultiViewDataset, SynthConfig, ViewMatrix, load_dataset,
                     load_view_csv, save_dataset, stratified_split, synth_multiview,
                     zscore_standardize)
from .downstream import (ClusterQuality, ForestConfig, auc_score, rf_fit_predict,
                         subset_top_p, v_measure, ward_cluster)
from .harness import (ConfigError, ExperimentConfig, ExperimentReport, emit_boxplot_svg,
                      load_config_file, parse_config, run_compression, run_experiment,
                      run_stability, run_subset)
from .multiview import (LayerPlan, TrainConfig, TrainedModel, fuse_latents, load_model,
                        save_model, train)
from .nncore import FocalLossParams, focal_loss, gradient_check, softmax
from .perturb import (NoiseSpec, SizingScheme, dynamic_layer_plan, gen_noise_features,
                      proportional_concat_plan)
from .rankstats import RankDistribution, TauResult, rank_distribution, weighted_kendall_tau
from .rng import RngStream, derive_seed, stream

__all__ = [
    "AttributionResult", "BackgroundSet", "ClusterQuality", "ConfigError",
    "ExperimentConfig", "ExperimentReport", "FocalLossParams", "ForestConfig",
    "LayerPlan", "MultiViewDataset", "NoiseSpec", "RankDistribution", "RankVector",
    "RngStream", "ScoreSet", "SizingScheme", "SynthConfig", "TauResult", "TrainConfig",
    "TrainedModel", "ViewMatrix", "__version__", "aggregate_scores", "auc_score",
    "deepshap_attribute", "derive_seed", "dynamic_layer_plan", "emit_boxplot_svg",
    "focal_loss", "fuse_latents", "gen_noise_features", "gradient_check",
    "load_config_file", "load_dataset", "load_model", "load_view_csv", "parse_config",
    "proportional_concat_plan", "rank_distribution", "rank_features", "rf_fit_predict",
    "run_compression", "run_experiment", "run_stability", "run_subset", "save_dataset",
    "save_model", "softmax", "stratified_split", "stream", "subset_top_p",
    "synth_multiview", "train", "v_measure", "ward_cluster", "weighted_kendall_tau",
    "zscore_standardize",
]
