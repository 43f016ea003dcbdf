//! Layer-1 stand-in detector: a bank of odd-symmetric oriented filters,
//! per-pixel maximum over orientations, thresholding, then non-maximum
//! suppression (local maxima within the radius, thinned greedily so that no
//! two parts end up closer than the radius).

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{to_centered_coords, PartRealization};

/// Gaussian width of the filter lobes, in pixels.
pub const KERNEL_SIGMA: f64 = 1.5;
/// Filter support is `KERNEL_SIZE x KERNEL_SIZE` pixels.
pub const KERNEL_SIZE: usize = 7;
/// Distance of each lobe from the filter center, in pixels.
pub const LOBE_OFFSET: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeDetectorConfig {
    pub n_orientations: usize,
    pub threshold: f64,
    pub nms_radius: f64,
}

impl Default for EdgeDetectorConfig {
    fn default() -> Self {
        EdgeDetectorConfig {
            n_orientations: 6,
            threshold: 0.1,
            nms_radius: 2.0,
        }
    }
}

impl EdgeDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_orientations < 2 {
            return Err(Error::input("the detector needs at least two orientations"));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::input("the detector threshold must be positive"));
        }
        if !(self.nms_radius >= 0.0) {
            return Err(Error::input("the suppression radius must be non-negative"));
        }
        Ok(())
    }
}

/// Filter `k` responds to edges running at `k * 180 / n` degrees from the
/// image x-axis. Kernels are indexed `[row, col]` with rows running down;
/// each one sums to zero and its positive entries sum to one.
pub fn oriented_kernels(n: usize) -> Vec<Array2<f64>> {
    let half = (KERNEL_SIZE / 2) as f64;
    let g = |u: f64, v: f64| (-(u * u + v * v) / (2.0 * KERNEL_SIGMA * KERNEL_SIGMA)).exp();
    (0..n)
        .map(|k| {
            let theta = std::f64::consts::PI * k as f64 / n as f64;
            // unit normal of the edge line, y up
            let (nx, ny) = (-theta.sin(), theta.cos());
            let mut ker = Array2::from_shape_fn((KERNEL_SIZE, KERNEL_SIZE), |(r, c)| {
                let u = c as f64 - half;
                let v = half - r as f64;
                g(u - LOBE_OFFSET * nx, v - LOBE_OFFSET * ny) - g(u + LOBE_OFFSET * nx, v + LOBE_OFFSET * ny)
            });
            let pos: f64 = ker.iter().filter(|v| **v > 0.0).sum();
            ker.mapv_inplace(|v| v / pos);
            ker
        })
        .collect()
}

/// Filter responses `R[k, r, c] = sum_{i,j} K_k[i, j] I[r + i - 3, c + j - 3]`
/// over the valid region; pixels closer than 3 to the border stay zero.
pub fn response_maps(image: &Array2<f64>, n: usize) -> Array3<f64> {
    let (h, w) = image.dim();
    let kernels = oriented_kernels(n);
    let half = KERNEL_SIZE / 2;
    let mut out = Array3::<f64>::zeros((n, h, w));
    if h < KERNEL_SIZE || w < KERNEL_SIZE {
        return out;
    }
    for (k, ker) in kernels.iter().enumerate() {
        for r in half..h - half {
            for c in half..w - half {
                let mut acc = 0.0;
                for i in 0..KERNEL_SIZE {
                    for j in 0..KERNEL_SIZE {
                        acc += ker[[i, j]] * image[[r + i - half, c + j - half]];
                    }
                }
                out[[k, r, c]] = acc;
            }
        }
    }
    out
}

/// Detect layer-1 parts in a grayscale image with intensities in `[0, 1]`.
/// The part id is the winning orientation index and the score is the
/// absolute filter response.
pub fn detect_layer1(image: &Array2<f64>, image_id: &str, cfg: &EdgeDetectorConfig) -> Result<Vec<PartRealization>> {
    cfg.validate()?;
    let (h, w) = image.dim();
    if h < 16 || w < 16 {
        return Err(Error::input(format!(
            "image {image_id} is {w}x{h}, at least 16x16 is required"
        )));
    }
    let resp = response_maps(image, cfg.n_orientations);
    let mut strength = Array2::<f64>::zeros((h, w));
    let mut winner = Array2::<usize>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            for k in 0..cfg.n_orientations {
                let a = resp[[k, r, c]].abs();
                if a > strength[[r, c]] {
                    strength[[r, c]] = a;
                    winner[[r, c]] = k;
                }
            }
        }
    }
    let r2 = cfg.nms_radius * cfg.nms_radius;
    let reach = cfg.nms_radius.floor() as i64;
    // a candidate must be a local maximum (ties allowed) within the radius
    let local_max = |r: usize, c: usize| {
        let s = strength[[r, c]];
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if (dr * dr + dc * dc) as f64 > r2 || rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                    continue;
                }
                if strength[[rr as usize, cc as usize]] > s {
                    return false;
                }
            }
        }
        true
    };
    let mut candidates = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if strength[[r, c]] > cfg.threshold && local_max(r, c) {
                candidates.push((r, c, winner[[r, c]], strength[[r, c]]));
            }
        }
    }
    // strongest first; equal responses keep scan order (sort is stable)
    candidates.sort_by(|a, b| b.3.total_cmp(&a.3));
    let mut kept: Vec<(usize, usize, usize, f64)> = Vec::new();
    for cand in candidates {
        let clear = kept.iter().all(|k| {
            let dr = k.0 as f64 - cand.0 as f64;
            let dc = k.1 as f64 - cand.1 as f64;
            dr * dr + dc * dc > r2
        });
        if clear {
            kept.push(cand);
        }
    }
    kept.into_iter()
        .map(|(r, c, k, s)| {
            let (x, y) = to_centered_coords(c as u32, r as u32, w as u32, h as u32)?;
            Ok(PartRealization {
                image_id: image_id.to_owned(),
                layer: 1,
                part_id: k as u32,
                x,
                y,
                score: s,
            })
        })
        .collect()
}
