//! Proximal maps of the two penalties.

/// prox of `tau * ||.||_2`: shrinks the whole vector toward zero.
pub fn block_soft_threshold(u: &[f64], tau: f64) -> Vec<f64> {
    let norm = l2_norm(u);
    if norm <= tau || norm == 0.0 {
        return vec![0.0; u.len()];
    }
    let k = 1.0 - tau / norm;
    u.iter().map(|v| v * k).collect()
}

/// prox of `tau * |.|` for one coordinate.
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

pub fn l2_norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn l1_norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v.abs()).sum()
}
