//! Per-layer subproblem of the sharing iteration:
//!
//! ```text
//! minimize  rho * ||F_l w - v||^2 + lambda * penalty(w)
//! ```
//!
//! Accelerated proximal gradient handles either penalty. The group penalty
//! also has an exact spectral solve that works entirely in the row space of
//! `F_l`, and the l1 penalty a coordinate-descent solver.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::prox::{block_soft_threshold, l2_norm, soft_threshold};
use crate::error::{Error, Result};
use crate::linalg::{psd_eigen, psd_eigenvalues};

/// Stopping threshold on the proximal-gradient mapping.
pub const GRADIENT_MAP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Penalty {
    /// `||w||_2` over the whole block.
    Group,
    /// `||w||_1`.
    L1,
}

impl Penalty {
    pub fn value(self, w: &[f64]) -> f64 {
        match self {
            Penalty::Group => l2_norm(w),
            Penalty::L1 => super::prox::l1_norm(w),
        }
    }

    pub fn prox(self, u: &[f64], tau: f64) -> Vec<f64> {
        match self {
            Penalty::Group => block_soft_threshold(u, tau),
            Penalty::L1 => u.iter().map(|&x| soft_threshold(x, tau)).collect(),
        }
    }
}

/// How block subproblems are solved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockSolver {
    /// Exact solve in the singular basis for group blocks, coordinate
    /// descent for l1 blocks.
    #[default]
    Spectral,
    /// Accelerated proximal gradient with the iteration budget.
    ProximalGradient,
}

/// Thin singular value decomposition `F = U diag(s) V^T` restricted to the
/// numerically nonzero singular values, obtained from the smaller Gram
/// matrix.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Array2<f64>,
    pub s: Vec<f64>,
    pub v: Array2<f64>,
}

impl ThinSvd {
    pub fn new(f: ArrayView2<f64>) -> Result<Self> {
        let (n, d) = f.dim();
        let wide = n <= d;
        let gram = if wide { f.dot(&f.t()) } else { f.t().dot(&f) };
        let m = gram.nrows();
        let (values, vectors) = psd_eigen(&gram)?;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let top = order.first().map(|&i| values[i]).unwrap_or(0.0);
        let cutoff = top * 1e-12 * n.max(d) as f64;
        let keep: Vec<usize> = order
            .into_iter()
            .filter(|&i| values[i] > cutoff && values[i] > 0.0)
            .collect();
        let r = keep.len();
        let s: Vec<f64> = keep.iter().map(|&i| values[i].sqrt()).collect();
        let basis = Array2::from_shape_fn((m, r), |(row, k)| vectors[[row, keep[k]]]);
        // the other side follows from F V = U S (or F^T U = V S)
        let mut other = if wide { f.t().dot(&basis) } else { f.dot(&basis) };
        for (k, sk) in s.iter().enumerate() {
            other.column_mut(k).mapv_inplace(|x| x / sk);
        }
        let (u, v) = if wide { (basis, other) } else { (other, basis) };
        Ok(ThinSvd { u, s, v })
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn sigma_max_sq(&self) -> f64 {
        self.s.first().map(|s| s * s).unwrap_or(0.0)
    }

    /// Exact minimizer of `rho ||F w - v||^2 + lambda ||w||_2`, returned as
    /// coefficients `beta` with `w = V beta` and `F w = U diag(s) beta`.
    ///
    /// Stationarity gives `beta_i = g_i / (2 rho s_i^2 + mu)` with
    /// `g = 2 rho diag(s) U^T v` and `mu = lambda / ||beta||`; `mu` is the
    /// root of the increasing function `mu ||beta(mu)|| - lambda`.
    pub fn solve_group(&self, v: ArrayView1<f64>, lambda: f64, rho: f64) -> Result<Vec<f64>> {
        let c = self.u.t().dot(&v);
        let g: Vec<f64> = c.iter().zip(&self.s).map(|(ci, si)| 2.0 * rho * si * ci).collect();
        let gnorm = l2_norm(&g);
        if gnorm <= lambda {
            return Ok(vec![0.0; self.rank()]);
        }
        let a: Vec<f64> = self.s.iter().map(|si| 2.0 * rho * si * si).collect();
        let beta_at = |mu: f64| -> Vec<f64> { g.iter().zip(&a).map(|(gi, ai)| gi / (ai + mu)).collect() };
        if lambda == 0.0 {
            return Ok(beta_at(0.0));
        }
        // h(mu) = ||q(mu)|| - lambda with q_i = g_i mu / (a_i + mu)
        let h = |mu: f64| -> (f64, f64) {
            let mut qq = 0.0;
            let mut qdq = 0.0;
            for (gi, ai) in g.iter().zip(&a) {
                let den = ai + mu;
                let q = gi * mu / den;
                qq += q * q;
                qdq += q * gi * ai / (den * den);
            }
            let qn = qq.sqrt();
            (qn - lambda, if qn > 0.0 { qdq / qn } else { 0.0 })
        };
        let a_max = a.iter().cloned().fold(0.0, f64::max);
        let a_min = a.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut lo = lambda * a_min / (gnorm - lambda);
        let mut hi = 2.0 * lambda * a_max / (gnorm - lambda) + f64::MIN_POSITIVE;
        let mut mu = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (val, der) = h(mu);
            if val == 0.0 {
                break;
            }
            if val < 0.0 {
                lo = mu;
            } else {
                hi = mu;
            }
            let newton = mu - val / der;
            let next = if der > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - mu).abs() <= 1e-15 * mu.abs() || hi - lo <= 1e-15 * hi {
                mu = next;
                break;
            }
            mu = next;
        }
        Ok(beta_at(mu))
    }

    /// `U diag(s) beta`.
    pub fn fitted(&self, beta: &[f64]) -> Array1<f64> {
        let sb: Array1<f64> = beta.iter().zip(&self.s).map(|(b, s)| b * s).collect();
        self.u.dot(&sb)
    }

    /// `V beta`.
    pub fn weights(&self, beta: &[f64]) -> Vec<f64> {
        self.v.dot(&ArrayView1::from(beta)).to_vec()
    }
}

/// Largest eigenvalue of `F^T F`.
pub fn sigma_max_sq(f: ArrayView2<f64>) -> Result<f64> {
    let (n, d) = f.dim();
    let gram = if n <= d { f.dot(&f.t()) } else { f.t().dot(&f) };
    let m = gram.nrows();
    if m == 0 {
        return Ok(0.0);
    }
    let top = psd_eigenvalues(&gram)?.into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Numerical("non-finite spectral norm".into()));
    }
    Ok(top.max(0.0))
}

/// Accelerated proximal gradient (FISTA with adaptive restart) on
/// `rho ||F w - v||^2 + lambda penalty(w)` with step `1 / (2 rho sigma_max^2)`.
/// Stops when the gradient-mapping norm drops to [`GRADIENT_MAP_TOL`] or the
/// budget runs out.
#[allow(clippy::too_many_arguments)]
pub fn proximal_gradient(
    f: ArrayView2<f64>,
    v: ArrayView1<f64>,
    lambda: f64,
    rho: f64,
    penalty: Penalty,
    sigma_max_sq: f64,
    budget: usize,
    warm: Option<&[f64]>,
) -> Vec<f64> {
    let d = f.ncols();
    let mut x: Vec<f64> = warm.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; d]);
    let lip = 2.0 * rho * sigma_max_sq;
    if lip <= 0.0 {
        return vec![0.0; d];
    }
    let step = 1.0 / lip;
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..budget {
        let resid = f.dot(&ArrayView1::from(&y)) - v;
        let grad = f.t().dot(&resid);
        let trial: Vec<f64> = y
            .iter()
            .zip(grad.iter())
            .map(|(yi, gi)| yi - step * 2.0 * rho * gi)
            .collect();
        let x_new = penalty.prox(&trial, step * lambda);
        let gmap = y
            .iter()
            .zip(&x_new)
            .map(|(a, b)| ((a - b) / step).powi(2))
            .sum::<f64>()
            .sqrt();
        if gmap <= GRADIENT_MAP_TOL {
            x = x_new;
            break;
        }
        // restart momentum when it points uphill
        let uphill = y
            .iter()
            .zip(&x_new)
            .zip(&x)
            .map(|((yi, xn), xo)| (yi - xn) * (xn - xo))
            .sum::<f64>()
            > 0.0;
        if uphill {
            t = 1.0;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_new;
        y = x_new.iter().zip(&x).map(|(xn, xo)| xn + momentum * (xn - xo)).collect();
        x = x_new;
        t = t_new;
    }
    x
}

/// Cyclic coordinate descent for the l1 block subproblem. Keeps a
/// column-major copy of the block so every coordinate step reads one
/// contiguous column.
#[derive(Debug, Clone)]
pub struct LassoCd {
    ft: Array2<f64>,
    col_sq: Vec<f64>,
}

impl LassoCd {
    pub fn new(f: ArrayView2<f64>) -> Self {
        let ft = f.t().as_standard_layout().into_owned();
        let col_sq = ft.rows().into_iter().map(|c| c.dot(&c)).collect();
        LassoCd { ft, col_sq }
    }

    fn sweep(&self, idx: impl Iterator<Item = usize>, w: &mut [f64], r: &mut Array1<f64>, thr: f64) -> f64 {
        let mut worst = 0.0f64;
        for j in idx {
            let c = self.col_sq[j];
            if c == 0.0 {
                w[j] = 0.0;
                continue;
            }
            let col = self.ft.row(j);
            let g = col.dot(r) + c * w[j];
            let next = soft_threshold(g, thr) / c;
            let delta = next - w[j];
            if delta != 0.0 {
                r.scaled_add(-delta, &col);
                w[j] = next;
                worst = worst.max(delta.abs() * c.sqrt());
            }
        }
        worst
    }

    /// Minimizes `rho ||F w - v||^2 + lambda ||w||_1` starting from `w`,
    /// with at most `budget` full sweeps.
    pub fn solve(&self, v: ArrayView1<f64>, lambda: f64, rho: f64, budget: usize, w: &mut [f64]) {
        let thr = lambda / (2.0 * rho);
        let mut r = &v - &self.ft.t().dot(&ArrayView1::from(&*w));
        let tol = 1e-6 * (1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        for _ in 0..budget {
            let worst = self.sweep(0..w.len(), w, &mut r, thr);
            if worst <= tol {
                break;
            }
            // settle the active set before the next full sweep
            let active: Vec<usize> = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
            for _ in 0..budget {
                if self.sweep(active.iter().copied(), w, &mut r, thr) <= tol {
                    break;
                }
            }
        }
    }
}

/// Group-penalized block subproblem by accelerated proximal gradient, from a
/// zero start.
pub fn block_subproblem(
    f: ArrayView2<f64>,
    v: ArrayView1<f64>,
    lambda: f64,
    rho: f64,
    budget: usize,
) -> Result<Vec<f64>> {
    if v.len() != f.nrows() {
        return Err(Error::input(format!(
            "block has {} rows but target has {} entries",
            f.nrows(),
            v.len()
        )));
    }
    let s2 = sigma_max_sq(f)?;
    Ok(proximal_gradient(f, v, lambda, rho, Penalty::Group, s2, budget, None))
}
