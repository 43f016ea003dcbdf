//! Sharing-form ADMM over layer blocks.
//!
//! The design matrix is split column-wise into layer blocks `F_l`. Each
//! iteration
//!
//! 1. updates every block independently:
//!    `w_l <- argmin rho ||F_l w - v_l||^2 + lambda * penalty(w)` with
//!    `v_l = F_l w_l + phi_bar - a - mean_l(F_l w_l)`;
//! 2. updates the consensus vector `phi_bar` from the new block average
//!    (closed form for the squared loss, a per-sample scalar problem for the
//!    logistic loss);
//! 3. updates the scaled dual `a += mean_l(F_l w_l) - phi_bar`.
//!
//! With these scalings the fixed point is a minimizer of
//! `||F w - z||^2 + lambda * sum_l ||w_l||_2` (squared loss) or
//! `kappa * sum_i logloss(f_i . w, y_i) + lambda * ||w||_1` (logistic).

use std::ops::Range;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::block::{proximal_gradient, sigma_max_sq, BlockSolver, LassoCd, Penalty, ThinSvd};
use super::logistic::{log1p_exp, solve_consensus_coordinate, LogisticForm};
use crate::error::{Error, Result};
use crate::features::{check_groups, GroupedDesignMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    /// Penalty parameter, > 0.
    pub rho: f64,
    /// Hard iteration cap T.
    pub max_iters: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    /// Iteration budget of the proximal-gradient block solver.
    pub inner_iters: usize,
    /// Regularization as a fraction of lambda_max.
    pub alpha: f64,
    #[serde(default)]
    pub block_solver: BlockSolver,
    #[serde(default)]
    pub logistic_form: LogisticForm,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            rho: 1.0,
            max_iters: 1000,
            tol_primal: 1e-4,
            tol_dual: 1e-4,
            inner_iters: 200,
            alpha: 1e-2,
            block_solver: BlockSolver::Spectral,
            logistic_form: LogisticForm::Conventional,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::input(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.tol_primal > 0.0 && self.tol_dual > 0.0) {
            return Err(Error::input("ADMM tolerances must be positive"));
        }
        if self.max_iters == 0 || self.inner_iters == 0 {
            return Err(Error::input("iteration limits must be positive"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::input(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Snapshot of the iteration variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    /// Block weights, one vector per layer.
    pub omega: Vec<Vec<f64>>,
    /// Consensus estimate of the block average.
    pub phi_bar: Vec<f64>,
    /// Scaled dual variable.
    pub a: Vec<f64>,
    /// `(1/L) sum_l F_l w_l`.
    pub fomega_bar: Vec<f64>,
    pub iter: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmTrace {
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub state: AdmmState,
}

impl AdmmTrace {
    pub fn final_objective(&self) -> f64 {
        self.history.last().map(|r| r.objective).unwrap_or(f64::NAN)
    }
}

/// Data term handled by the consensus update.
#[derive(Debug, Clone, Copy)]
pub enum Loss<'a> {
    /// `||s - z||^2`.
    Squared(&'a [f64]),
    /// `weight * sum_i [log(1 + e^{s_i}) - y_i s_i]` with `y_i` in {0, 1}.
    Logistic { labels: &'a [f64], weight: f64 },
}

impl Loss<'_> {
    fn len(&self) -> usize {
        match self {
            Loss::Squared(z) => z.len(),
            Loss::Logistic { labels, .. } => labels.len(),
        }
    }

    /// Loss at the full prediction `s = F w`.
    pub fn value(&self, s: ArrayView1<f64>) -> f64 {
        match self {
            Loss::Squared(z) => s.iter().zip(z.iter()).map(|(a, b)| (a - b) * (a - b)).sum(),
            Loss::Logistic { labels, weight } => {
                weight
                    * s.iter()
                        .zip(labels.iter())
                        .map(|(si, yi)| log1p_exp(*si) - yi * si)
                        .sum::<f64>()
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Route {
    Spectral,
    Prox,
    Coordinate,
}

enum Work {
    Spectral { svd: ThinSvd, beta: Vec<f64> },
    Prox { sigma2: f64, omega: Vec<f64> },
    Coordinate { cd: LassoCd, omega: Vec<f64> },
}

struct Block<'a> {
    f: ArrayView2<'a, f64>,
    work: Work,
    fitted: Array1<f64>,
}

impl<'a> Block<'a> {
    fn new(f: ArrayView2<'a, f64>, route: Route, warm: Option<&[f64]>) -> Result<Self> {
        let d = f.ncols();
        if let Some(w) = warm {
            if w.len() != d {
                return Err(Error::input(format!(
                    "warm start has {} weights for a block of {d} columns",
                    w.len()
                )));
            }
        }
        let zero = vec![0.0; d];
        let w0 = warm.unwrap_or(&zero);
        let (work, fitted) = match route {
            Route::Spectral => {
                let svd = ThinSvd::new(f)?;
                let beta = svd.v.t().dot(&ArrayView1::from(w0)).to_vec();
                let fitted = svd.fitted(&beta);
                (Work::Spectral { svd, beta }, fitted)
            }
            Route::Prox => (
                Work::Prox {
                    sigma2: sigma_max_sq(f)?,
                    omega: w0.to_vec(),
                },
                f.dot(&ArrayView1::from(w0)),
            ),
            Route::Coordinate => (
                Work::Coordinate {
                    cd: LassoCd::new(f),
                    omega: w0.to_vec(),
                },
                f.dot(&ArrayView1::from(w0)),
            ),
        };
        Ok(Block { f, work, fitted })
    }

    fn update(&mut self, v: ArrayView1<f64>, lambda: f64, rho: f64, penalty: Penalty, budget: usize) -> Result<()> {
        match &mut self.work {
            Work::Spectral { svd, beta } => {
                *beta = svd.solve_group(v, lambda, rho)?;
                self.fitted = svd.fitted(beta);
            }
            Work::Prox { sigma2, omega } => {
                *omega = proximal_gradient(self.f, v, lambda, rho, penalty, *sigma2, budget, Some(omega.as_slice()));
                self.fitted = self.f.dot(&ArrayView1::from(omega.as_slice()));
            }
            Work::Coordinate { cd, omega } => {
                cd.solve(v, lambda, rho, budget, omega);
                self.fitted = self.f.dot(&ArrayView1::from(omega.as_slice()));
            }
        }
        Ok(())
    }

    fn penalty_value(&self, penalty: Penalty) -> f64 {
        match &self.work {
            // V has orthonormal columns, so ||V beta|| = ||beta||
            Work::Spectral { beta, .. } => super::prox::l2_norm(beta),
            Work::Prox { omega, .. } | Work::Coordinate { omega, .. } => penalty.value(omega),
        }
    }

    fn omega(&self) -> Vec<f64> {
        match &self.work {
            Work::Spectral { svd, beta } => {
                if beta.iter().all(|&b| b == 0.0) {
                    vec![0.0; self.f.ncols()]
                } else {
                    svd.weights(beta)
                }
            }
            Work::Prox { omega, .. } | Work::Coordinate { omega, .. } => omega.clone(),
        }
    }
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Runs the sharing iteration for a given loss and penalty.
pub fn sharing_admm(
    f: ArrayView2<f64>,
    groups: &[Range<usize>],
    loss: Loss<'_>,
    penalty: Penalty,
    lambda: f64,
    cfg: &AdmmConfig,
    warm_start: Option<&[f64]>,
) -> Result<(Vec<f64>, AdmmTrace)> {
    cfg.validate()?;
    check_groups(groups, f.ncols())?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::input(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = f.nrows();
    if loss.len() != n {
        return Err(Error::input(format!(
            "{} targets for a design matrix with {n} rows",
            loss.len()
        )));
    }
    if let Some(w) = warm_start {
        if w.len() != f.ncols() {
            return Err(Error::input("warm start length differs from column count"));
        }
    }
    let nblocks = groups.len();
    let nl = nblocks as f64;
    let rho = cfg.rho;
    let route = match (penalty, cfg.block_solver) {
        (Penalty::Group, BlockSolver::Spectral) => Route::Spectral,
        (Penalty::L1, BlockSolver::Spectral) => Route::Coordinate,
        (_, BlockSolver::ProximalGradient) => Route::Prox,
    };

    let mut blocks: Vec<Block> = groups
        .par_iter()
        .map(|g| {
            Block::new(
                f.slice_axis(Axis(1), (g.start..g.end).into()),
                route,
                warm_start.map(|w| &w[g.clone()]),
            )
        })
        .collect::<Result<_>>()?;

    let average = |blocks: &[Block]| -> Array1<f64> {
        let mut acc = Array1::<f64>::zeros(n);
        for b in blocks {
            acc += &b.fitted;
        }
        acc / nl
    };

    let mut fbar = average(&blocks);
    let mut phi_bar = fbar.clone();
    let mut a = Array1::<f64>::zeros(n);
    let mut history = Vec::new();
    let mut converged = false;
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut iter = 0;

    while iter < cfg.max_iters {
        iter += 1;
        let shift = &phi_bar - &a - &fbar;
        blocks
            .par_iter_mut()
            .map(|b| {
                let v = &b.fitted + &shift;
                b.update(v.view(), lambda, rho, penalty, cfg.inner_iters)
            })
            .collect::<Result<Vec<()>>>()?;
        fbar = average(&blocks);

        let phi_old = phi_bar.clone();
        phi_bar = match loss {
            Loss::Squared(z) => {
                let z = ArrayView1::from(z);
                (&z + &(&fbar * rho) + &(&a * rho)) / (nl + rho)
            }
            Loss::Logistic { labels, weight } => {
                let mut out = Array1::<f64>::zeros(n);
                for i in 0..n {
                    out[i] = solve_consensus_coordinate(fbar[i] + a[i], labels[i], nl, rho, weight).map_err(|e| {
                        Error::Solver {
                            iterations: iter,
                            message: e.to_string(),
                        }
                    })?;
                }
                out
            }
        };
        let gap = &fbar - &phi_bar;
        a += &gap;

        primal = nl.sqrt() * norm(&gap);
        dual = 2.0 * rho * nl.sqrt() * norm(&(&phi_bar - &phi_old));
        let objective =
            loss.value((&fbar * nl).view()) + lambda * blocks.iter().map(|b| b.penalty_value(penalty)).sum::<f64>();
        if !(objective.is_finite() && primal.is_finite() && dual.is_finite()) {
            return Err(Error::Solver {
                iterations: iter,
                message: format!("iterates diverged (objective {objective}, primal {primal}, dual {dual})"),
            });
        }
        history.push(IterationRecord {
            iter,
            objective,
            primal_residual: primal,
            dual_residual: dual,
        });
        if primal <= cfg.tol_primal && dual <= cfg.tol_dual {
            converged = true;
            break;
        }
    }

    let omega_blocks: Vec<Vec<f64>> = blocks.iter().map(Block::omega).collect();
    let omega: Vec<f64> = omega_blocks.iter().flatten().copied().collect();
    let state = AdmmState {
        omega: omega_blocks,
        phi_bar: phi_bar.to_vec(),
        a: a.to_vec(),
        fomega_bar: fbar.to_vec(),
        iter,
        primal_residual: primal,
        dual_residual: dual,
    };
    Ok((
        omega,
        AdmmTrace {
            history,
            converged,
            state,
        },
    ))
}

/// `||F w - z||^2 + lambda * sum_l ||w_l||_2`.
pub fn group_lasso_objective(
    f: ArrayView2<f64>,
    groups: &[Range<usize>],
    z: &[f64],
    omega: &[f64],
    lambda: f64,
) -> f64 {
    let s = f.dot(&ArrayView1::from(omega));
    Loss::Squared(z).value(s.view())
        + lambda
            * groups
                .iter()
                .map(|g| super::prox::l2_norm(&omega[g.clone()]))
                .sum::<f64>()
}

/// Smallest lambda at which the group-lasso solution is identically zero:
/// `2 max_l ||F_l^T z||_2` (the factor 2 comes from the unhalved squared loss).
pub fn lambda_max_regression(f: &GroupedDesignMatrix, z: &[f64]) -> Result<f64> {
    check_groups(&f.groups, f.ncols())?;
    if z.len() != f.nrows() {
        return Err(Error::input("target length differs from row count"));
    }
    let corr = f.matrix.t().dot(&ArrayView1::from(z));
    Ok(f.groups
        .iter()
        .map(|g| 2.0 * super::prox::l2_norm(&corr.as_slice().unwrap()[g.clone()]))
        .fold(0.0, f64::max))
}

/// Group-lasso pose regression on a standardized design matrix and centered
/// targets.
pub fn admm_group_lasso(
    f: &GroupedDesignMatrix,
    z: &[f64],
    lambda: f64,
    cfg: &AdmmConfig,
) -> Result<(Vec<f64>, AdmmTrace)> {
    sharing_admm(
        f.matrix.view(),
        &f.groups,
        Loss::Squared(z),
        Penalty::Group,
        lambda,
        cfg,
        None,
    )
}

/// l1-penalized least squares through the same iteration (per-layer lasso
/// baselines).
pub fn admm_lasso(f: &GroupedDesignMatrix, z: &[f64], lambda: f64, cfg: &AdmmConfig) -> Result<(Vec<f64>, AdmmTrace)> {
    sharing_admm(
        f.matrix.view(),
        &f.groups,
        Loss::Squared(z),
        Penalty::L1,
        lambda,
        cfg,
        None,
    )
}

/// `2 ||F^T z||_inf`: smallest lambda zeroing the l1-penalized least squares.
pub fn lambda_max_lasso(f: &GroupedDesignMatrix, z: &[f64]) -> Result<f64> {
    if z.len() != f.nrows() {
        return Err(Error::input("target length differs from row count"));
    }
    let corr = f.matrix.t().dot(&ArrayView1::from(z));
    Ok(2.0 * corr.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// One-class l1 logistic regression; `labels` are 0/1.
pub fn admm_sparse_logistic(
    f: &GroupedDesignMatrix,
    labels: &[f64],
    lambda: f64,
    cfg: &AdmmConfig,
) -> Result<(Vec<f64>, AdmmTrace)> {
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::input("logistic labels must be 0 or 1"));
    }
    let weight = cfg.logistic_form.loss_weight(f.groups.len());
    sharing_admm(
        f.matrix.view(),
        &f.groups,
        Loss::Logistic { labels, weight },
        Penalty::L1,
        lambda,
        cfg,
        None,
    )
}
