//! Metrics, hyperparameter search and experiment protocols.

pub mod experiment;
pub mod metrics;
pub mod report;
pub mod search;

pub use experiment::{
    run_eval, run_experiment, DatasetSource, EvalConfig, ExperimentConfig, MeanRow, Protocol, ResultRow, ResultTable,
};
pub use metrics::{accuracy, mean_pose_error, pose_error, squared_pose_error};
pub use report::write_artifacts;
pub use search::{cv_folds, fit_and_score, greedy_grid_search, FeatureCache, Grids, Method, Selection, Setting, Task};
