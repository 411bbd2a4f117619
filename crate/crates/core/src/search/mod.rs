//! NAS strategies over a benchmark: exhaustive scan, random search,
//! regularized evolution, surrogate-driven Bayesian optimization, a
//! path-predictor ensemble search, and constrained analog-aware evolution.

pub mod aimc;
pub mod bananas;
pub mod bayesian;
pub mod compare;
pub mod gbt;
pub mod objective;
pub mod strategies;

pub use aimc::{aimc_evolutionary_search, AimcConfig};
pub use bananas::{bananas_style_search, path_indicator_features, BananasConfig, PATH_FEATURES};
pub use bayesian::{bayesian_search, BayesConfig};
pub use compare::{compare_methods, comparison_csv, ComparisonRow, MethodSpec};
pub use gbt::{fit_gbt, one_hot_encoding, GbtConfig, GbtSurrogate};
pub use objective::{
    avm, AvmDefinition, EvalData, EvalSource, LivePipelineSource, MetricKind, ObjectiveSpec,
    SearchError, SearchSpace, TableObjective, DAY1_HORIZON,
};
pub use strategies::{
    evolutionary_search, exhaustive_search, mutate_within, random_search, EvoConfig, SearchBudget,
    SearchResult, TrajectoryPoint,
};
