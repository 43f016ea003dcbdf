//! Pose error and categorization accuracy.

use crate::error::{Error, Result};
use crate::types::{wrap_degrees, CategoryLabel, PoseLabel};

/// Circular absolute difference in degrees, in `[0, 180]`.
pub fn pose_error(theta: PoseLabel, theta_hat: f64) -> f64 {
    let d = wrap_degrees(theta.degrees() - theta_hat);
    d.min(360.0 - d)
}

/// Squared variant of [`pose_error`], in degrees squared.
pub fn squared_pose_error(theta: PoseLabel, theta_hat: f64) -> f64 {
    pose_error(theta, theta_hat).powi(2)
}

/// Mean of [`pose_error`] (or its square) over paired poses and predictions.
pub fn mean_pose_error(truth: &[PoseLabel], predicted: &[f64], squared: bool) -> Result<f64> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::input(format!(
            "{} poses against {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let f = if squared { squared_pose_error } else { pose_error };
    Ok(truth.iter().zip(predicted).map(|(t, p)| f(*t, *p)).sum::<f64>() / truth.len() as f64)
}

/// Percentage of correct predictions.
pub fn accuracy(predicted: &[CategoryLabel], labels: &[CategoryLabel]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::input("accuracy of an empty prediction set"));
    }
    if predicted.len() != labels.len() {
        return Err(Error::input(format!(
            "{} predictions against {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / predicted.len() as f64)
}
