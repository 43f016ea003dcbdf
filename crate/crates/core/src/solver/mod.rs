//! Layer-consensus sparse solvers: group-lasso pose regression and
//! l1-penalized one-vs-rest logistic categorization, both driven by the
//! sharing-form ADMM in [`admm`].

pub mod admm;
pub mod block;
pub mod logistic;
pub mod model;
pub mod prox;

pub use admm::{
    admm_group_lasso, admm_lasso, admm_sparse_logistic, group_lasso_objective, lambda_max_lasso, lambda_max_regression,
    sharing_admm, AdmmConfig, AdmmState, AdmmTrace, IterationRecord, Loss,
};
pub use block::{block_subproblem, BlockSolver, Penalty, ThinSvd};
pub use logistic::{
    lambda_max_logistic, log1p_exp, logistic_loss, logistic_loss_gradient, logistic_prob, sigmoid, LogisticForm,
};
pub use model::{predict_category, predict_pose, report_pose, CategoryModel, FeatureSpec, Model, PoseModel};
pub use prox::{block_soft_threshold, soft_threshold};
