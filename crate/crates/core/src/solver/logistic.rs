//! Logistic pieces of the categorization solver.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::GroupedDesignMatrix;

/// How the logistic consensus step weighs the data term.
///
/// `Conventional` minimizes `sum_i logloss_i + lambda ||w||_1`.
/// `AsWritten` keeps the layer count as a multiplier on the loss,
/// `L * sum_i logloss_i + lambda ||w||_1`; with 0/1 labels its consensus
/// step is `rho (phi - m)^2 + log(1 + exp(-L y' phi))`, `y' = 2y - 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogisticForm {
    #[default]
    Conventional,
    AsWritten,
}

impl LogisticForm {
    pub fn loss_weight(self, num_layers: usize) -> f64 {
        match self {
            LogisticForm::Conventional => 1.0,
            LogisticForm::AsWritten => num_layers as f64,
        }
    }
}

/// `log(1 + e^x)` without overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(h: f64) -> f64 {
    if h >= 0.0 {
        1.0 / (1.0 + (-h).exp())
    } else {
        let e = h.exp();
        e / (1.0 + e)
    }
}

/// `P(class | f) = sigmoid(f . w)`.
pub fn logistic_prob(f: &[f64], omega: &[f64]) -> Result<f64> {
    if f.len() != omega.len() {
        return Err(Error::input(format!(
            "feature vector has {} entries, weights have {}",
            f.len(),
            omega.len()
        )));
    }
    Ok(sigmoid(f.iter().zip(omega).map(|(a, b)| a * b).sum()))
}

/// Gradient of `weight * sum_i [log(1 + e^{h_i}) - y_i h_i]` at `w`, with `h = F w`.
pub fn logistic_loss_gradient(f: &GroupedDesignMatrix, labels: &[f64], omega: &[f64], weight: f64) -> Vec<f64> {
    let h = f.matrix.dot(&ArrayView1::from(omega));
    let r: ndarray::Array1<f64> = h
        .iter()
        .zip(labels)
        .map(|(hi, yi)| weight * (sigmoid(*hi) - yi))
        .collect();
    f.matrix.t().dot(&r).to_vec()
}

pub fn logistic_loss(f: &GroupedDesignMatrix, labels: &[f64], omega: &[f64], weight: f64) -> f64 {
    let h = f.matrix.dot(&ArrayView1::from(omega));
    weight
        * h.iter()
            .zip(labels)
            .map(|(hi, yi)| log1p_exp(*hi) - yi * hi)
            .sum::<f64>()
}

/// Smallest lambda zeroing the l1-logistic solution: the sup-norm of the
/// loss gradient at `w = 0`, `weight * ||F^T (y - 1/2)||_inf`. For
/// standardized (zero-mean) columns this equals `weight * ||F^T (y - mean(y))||_inf`.
pub fn lambda_max_logistic(f: &GroupedDesignMatrix, labels: &[f64], weight: f64) -> Result<f64> {
    if labels.len() != f.nrows() {
        return Err(Error::input("label count differs from row count"));
    }
    let zero = vec![0.0; f.ncols()];
    Ok(logistic_loss_gradient(f, labels, &zero, weight)
        .iter()
        .fold(0.0f64, |m, g| m.max(g.abs())))
}

/// Consensus step for one sample:
/// `argmin_phi  L rho (phi - m)^2 + weight * logloss(L phi, y)`.
///
/// Safeguarded Newton inside the bracket `m +- weight / (2 rho)`, then plain
/// bisection if Newton has not settled after 100 steps.
pub fn solve_consensus_coordinate(m: f64, y: f64, layers: f64, rho: f64, weight: f64) -> Result<f64> {
    // derivative divided by L
    let deriv = |phi: f64| 2.0 * rho * (phi - m) + weight * (sigmoid(layers * phi) - y);
    let curv = |phi: f64| {
        let s = sigmoid(layers * phi);
        2.0 * rho + weight * layers * s * (1.0 - s)
    };
    let half = weight / (2.0 * rho);
    let mut lo = m - half;
    let mut hi = m + half;
    let tol = 1e-14 * (1.0 + m.abs() + half);
    let mut phi = m;
    for _ in 0..100 {
        let g = deriv(phi);
        if g.abs() <= 1e-15 * (1.0 + weight) {
            return Ok(phi);
        }
        if g > 0.0 {
            hi = phi;
        } else {
            lo = phi;
        }
        let step = phi - g / curv(phi);
        let next = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        if (next - phi).abs() <= tol {
            return Ok(next);
        }
        phi = next;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= tol {
            return Ok(0.5 * (lo + hi));
        }
    }
    let mid = 0.5 * (lo + hi);
    if mid.is_finite() {
        Ok(mid)
    } else {
        Err(Error::Numerical(format!(
            "logistic consensus step failed (m = {m}, y = {y})"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        let p = sigmoid(50.0);
        assert!(p <= 1.0 && 1.0 - p < 1e-20);
        assert!(sigmoid(1e4).is_finite() && sigmoid(-1e4) >= 0.0);
        assert_eq!(logistic_prob(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert!(logistic_prob(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn log1p_exp_is_stable() {
        assert_eq!(log1p_exp(1000.0), 1000.0);
        assert!((log1p_exp(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(log1p_exp(-1000.0) >= 0.0);
    }

    #[test]
    fn consensus_step_satisfies_optimality() {
        for &(m, y, l, rho, w) in &[
            (0.3, 1.0, 3.0, 1.0, 1.0),
            (-4.0, 0.0, 4.0, 0.5, 1.0),
            (10.0, 1.0, 1.0, 2.0, 1.0),
            (0.0, 0.0, 4.0, 0.01, 4.0),
            (250.0, 0.0, 2.0, 1e-3, 2.0),
        ] {
            let phi = solve_consensus_coordinate(m, y, l, rho, w).unwrap();
            let g = 2.0 * rho * (phi - m) + w * (sigmoid(l * phi) - y);
            assert!(g.abs() < 1e-10, "m={m}: residual {g}");
        }
    }

    #[test]
    fn as_written_step_matches_signed_label_form() {
        // rho (phi - m)^2 + log(1 + exp(-L y' phi)) has the same minimizer
        let (m, rho, l) = (0.2, 0.8, 3.0);
        for y in [0.0, 1.0] {
            let phi = solve_consensus_coordinate(m, y, l, rho, l).unwrap();
            let ys = 2.0 * y - 1.0;
            let g = 2.0 * rho * (phi - m) - l * ys * sigmoid(-l * ys * phi);
            assert!(g.abs() < 1e-10);
        }
    }
}
