//! L2-regularized logistic regression fitted by damped Newton iterations,
//! with stratified k-fold cross validation over the regularization strength.

mod cv;
mod logistic;

pub use cv::{cross_validate, stratified_folds, CvConfig, CvResult};
pub use logistic::{
    check_labels, objective_and_gradient, predict_labels, predict_proba, train_logreg, FitInfo,
    LogisticModel, ModelFile, TrainOptions,
};

/// Default CV grid: powers of ten from 1e-3 to 1e3.
pub fn default_l2_grid() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3]
}
