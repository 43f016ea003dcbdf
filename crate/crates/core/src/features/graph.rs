//! Part graphs weighted by relative orientation and their von Neumann entropy.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::psd_eigenvalues;
use crate::types::PartRealization;

/// Positions closer than this to the origin have no direction and are left
/// out of the graph.
pub const MIN_NORM: f64 = 1e-9;

/// Complete weighted graph over the parts of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PartGraph {
    /// Symmetric weights in `[0, pi]` with zero diagonal.
    pub weights: Array2<f64>,
    /// Parts dropped for sitting at the origin.
    pub excluded: usize,
}

impl PartGraph {
    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Angle between two position vectors.
///
/// Evaluated as `atan2(|a x b|, a . b)`, which equals the arccos of the
/// normalized inner product but stays accurate for nearly (anti)parallel
/// vectors, where arccos loses half of the significant digits.
pub fn angle_between(a: [f64; 2], b: [f64; 2]) -> f64 {
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    cross.abs().atan2(dot)
}

pub fn part_graph_from_positions(positions: &[[f64; 2]]) -> PartGraph {
    let kept: Vec<[f64; 2]> = positions
        .iter()
        .copied()
        .filter(|p| p[0].hypot(p[1]) >= MIN_NORM)
        .collect();
    let k = kept.len();
    let mut weights = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in i + 1..k {
            let w = angle_between(kept[i], kept[j]);
            weights[[i, j]] = w;
            weights[[j, i]] = w;
        }
    }
    PartGraph {
        weights,
        excluded: positions.len() - k,
    }
}

pub fn part_graph_weights<'a, I>(parts: I) -> PartGraph
where
    I: IntoIterator<Item = &'a PartRealization>,
{
    let positions: Vec<[f64; 2]> = parts.into_iter().map(PartRealization::position).collect();
    part_graph_from_positions(&positions)
}

/// (D - W) / (K (K - 1)) with D the diagonal degree matrix.
pub fn normalized_laplacian(g: &PartGraph) -> Result<Array2<f64>> {
    let k = g.len();
    if k < 2 {
        return Err(Error::input(format!(
            "normalized Laplacian needs at least two nodes, got {k}"
        )));
    }
    let scale = 1.0 / (k * (k - 1)) as f64;
    let mut lap = g.weights.mapv(|w| -w * scale);
    for (i, row) in g.weights.rows().into_iter().enumerate() {
        lap[[i, i]] = row.sum() * scale;
    }
    Ok(lap)
}

/// Eigenvalues of a symmetric positive semidefinite matrix in descending
/// order.
pub fn symmetric_eigenvalues(m: &Array2<f64>) -> Result<Vec<f64>> {
    let mut values = psd_eigenvalues(m)?;
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// -sum(nu log2 nu) over the Laplacian spectrum, with 0 log 0 = 0. Graphs
/// with fewer than two nodes have zero entropy.
pub fn von_neumann_entropy(g: &PartGraph) -> Result<f64> {
    if g.len() < 2 {
        return Ok(0.0);
    }
    let lap = normalized_laplacian(g)?;
    let nu = symmetric_eigenvalues(&lap)?;
    // the zero eigenvalue comes back as +-1e-17 or so; drop the noise
    Ok(-nu.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>())
}
