//! Reference implementations used by the integration tests. Plain loops over
//! row vectors, nothing shared with the library code paths.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Mat {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn to_array(m: &Mat) -> ndarray::Array2<f64> {
    let n = m.len();
    let d = m.first().map_or(0, Vec::len);
    ndarray::Array2::from_shape_fn((n, d), |(i, j)| m[i][j])
}

pub fn matvec(m: &Mat, x: &[f64]) -> Vec<f64> {
    m.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

pub fn tmatvec(m: &Mat, y: &[f64]) -> Vec<f64> {
    let d = m[0].len();
    let mut out = vec![0.0; d];
    for (r, yi) in m.iter().zip(y) {
        for j in 0..d {
            out[j] += r[j] * yi;
        }
    }
    out
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest eigenvalue of `M^T M` by power iteration.
pub fn gram_top_eigenvalue(m: &Mat) -> f64 {
    let d = m[0].len();
    let mut x = vec![1.0; d];
    let mut lam = 0.0;
    for _ in 0..5000 {
        let y = tmatvec(m, &matvec(m, &x));
        let n = norm(&y);
        if n == 0.0 {
            return 0.0;
        }
        x = y.iter().map(|v| v / n).collect();
        if (n - lam).abs() <= 1e-14 * n {
            return n;
        }
        lam = n;
    }
    lam
}

/// Gaussian elimination with partial pivoting.
pub fn solve_dense(a: &Mat, b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, bi)| {
            let mut r = r.clone();
            r.push(*bi);
            r
        })
        .collect();
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, p);
        for i in col + 1..n {
            let f = m[i][col] / m[col][col];
            for j in col..=n {
                m[i][j] -= f * m[col][j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

/// Least squares through the normal equations.
pub fn least_squares(f: &Mat, z: &[f64]) -> Vec<f64> {
    let d = f[0].len();
    let gram: Mat = (0..d)
        .map(|i| (0..d).map(|j| f.iter().map(|r| r[i] * r[j]).sum()).collect())
        .collect();
    solve_dense(&gram, &tmatvec(f, z))
}

pub fn group_objective(f: &Mat, groups: &[std::ops::Range<usize>], z: &[f64], w: &[f64], lambda: f64) -> f64 {
    let r: f64 = matvec(f, w).iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    r + lambda * groups.iter().map(|g| norm(&w[g.clone()])).sum::<f64>()
}

/// FISTA on `||F w - z||^2 + lambda sum_g ||w_g||_2` for a fixed number of steps.
pub fn fista_group(f: &Mat, groups: &[std::ops::Range<usize>], z: &[f64], lambda: f64, iters: usize) -> Vec<f64> {
    let d = f[0].len();
    let step = 1.0 / (2.0 * gram_top_eigenvalue(f));
    let mut x = vec![0.0; d];
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let r: Vec<f64> = matvec(f, &y).iter().zip(z).map(|(a, b)| a - b).collect();
        let g = tmatvec(f, &r);
        let mut xn: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * 2.0 * gi).collect();
        for grp in groups {
            let n = norm(&xn[grp.clone()]);
            let s = if n > step * lambda {
                1.0 - step * lambda / n
            } else {
                0.0
            };
            for v in &mut xn[grp.clone()] {
                *v *= s;
            }
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = xn.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / tn * (a - b)).collect();
        x = xn;
        t = tn;
    }
    x
}

pub fn logloss(f: &Mat, y: &[f64], w: &[f64]) -> f64 {
    matvec(f, w)
        .iter()
        .zip(y)
        .map(|(h, yi)| (1.0 + (-h.abs()).exp()).ln() + h.max(0.0) - yi * h)
        .sum()
}

pub fn l1_logistic_objective(f: &Mat, y: &[f64], w: &[f64], lambda: f64) -> f64 {
    logloss(f, y, w) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// FISTA on `sum_i logloss + lambda ||w||_1`.
pub fn fista_l1_logistic(f: &Mat, y: &[f64], lambda: f64, iters: usize) -> Vec<f64> {
    let d = f[0].len();
    let step = 4.0 / gram_top_eigenvalue(f);
    let mut x = vec![0.0; d];
    let mut yv = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let r: Vec<f64> = matvec(f, &yv)
            .iter()
            .zip(y)
            .map(|(h, yi)| 1.0 / (1.0 + (-h).exp()) - yi)
            .collect();
        let g = tmatvec(f, &r);
        let xn: Vec<f64> = yv
            .iter()
            .zip(&g)
            .map(|(a, gi)| {
                let u = a - step * gi;
                u.signum() * (u.abs() - step * lambda).max(0.0)
            })
            .collect();
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        yv = xn.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / tn * (a - b)).collect();
        x = xn;
        t = tn;
    }
    x
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, ascending.
pub fn jacobi_eigenvalues(a: &Mat) -> Vec<f64> {
    let n = a.len();
    let mut m = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}
