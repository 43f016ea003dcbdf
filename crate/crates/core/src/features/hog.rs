//! HOG descriptor computed over a rendered part-activation map.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{from_centered_coords, PartRealization};

/// L2-Hys clipping threshold.
const CLIP: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HogConfig {
    /// Cell side in pixels.
    pub cell_size: usize,
    /// Unsigned orientation bins over [0, 180).
    pub bins: usize,
}

impl HogConfig {
    pub fn cells(&self, width: usize, height: usize) -> (usize, usize) {
        (width / self.cell_size, height / self.cell_size)
    }

    /// Descriptor length for a `width` x `height` map with 2x2-cell blocks.
    pub fn dimension(&self, width: usize, height: usize) -> Result<usize> {
        self.check(width, height)?;
        let (cx, cy) = self.cells(width, height);
        Ok((cx - 1) * (cy - 1) * 4 * self.bins)
    }

    fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.cell_size == 0 || self.bins == 0 {
            return Err(Error::input("HOG cell size and bin count must be positive"));
        }
        let (cx, cy) = self.cells(width, height);
        if cx < 2 || cy < 2 {
            return Err(Error::input(format!(
                "{width}x{height} map is smaller than one {}-px 2x2 HOG block",
                self.cell_size
            )));
        }
        Ok(())
    }
}

/// Render parts as score-valued impulses smoothed by a 3x3 triangle kernel.
/// Rows run top to bottom.
pub fn part_activation_map<'a, I>(parts: I, width: u32, height: u32) -> Array2<f64>
where
    I: IntoIterator<Item = &'a PartRealization>,
{
    let (w, h) = (width as usize, height as usize);
    let mut impulses = Array2::<f64>::zeros((h, w));
    for p in parts {
        let (col, row) = from_centered_coords(p.x, p.y, width, height);
        let (col, row) = (col.round(), row.round());
        if col >= 0.0 && row >= 0.0 && (col as usize) < w && (row as usize) < h {
            impulses[[row as usize, col as usize]] += p.score;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let v = impulses[[r, c]];
            if v == 0.0 {
                continue;
            }
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    let k = (2 - dr.abs()) as f64 * (2 - dc.abs()) as f64 / 16.0;
                    out[[rr as usize, cc as usize]] += k * v;
                }
            }
        }
    }
    out
}

/// Cell histograms of unsigned gradient orientation, shape (cells_y, cells_x, bins).
fn cell_histograms(map: &Array2<f64>, cfg: &HogConfig) -> ndarray::Array3<f64> {
    let (h, w) = map.dim();
    let (cx, cy) = cfg.cells(w, h);
    let mut hist = ndarray::Array3::<f64>::zeros((cy, cx, cfg.bins));
    let at = |r: usize, c: usize| map[[r, c]];
    let bin_width = std::f64::consts::PI / cfg.bins as f64;
    for r in 0..cy * cfg.cell_size {
        for c in 0..cx * cfg.cell_size {
            // central differences with replicated borders; gy points up
            let gx = at(r, (c + 1).min(w - 1)) - at(r, c.saturating_sub(1));
            let gy = at(r.saturating_sub(1), c) - at((r + 1).min(h - 1), c);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
            let bin = ((angle / bin_width) as usize).min(cfg.bins - 1);
            hist[[r / cfg.cell_size, c / cfg.cell_size, bin]] += mag;
        }
    }
    hist
}

fn normalize_block(block: &mut [f64]) {
    let norm = |b: &[f64]| b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n = norm(block);
    if n == 0.0 {
        return;
    }
    for v in block.iter_mut() {
        *v = (*v / n).min(CLIP);
    }
    let n = norm(block);
    if n > 0.0 {
        for v in block.iter_mut() {
            *v /= n;
        }
    }
}

/// HOG over an arbitrary real-valued map: 2x2-cell blocks with stride one
/// cell, L2 normalization clipped at 0.2 and renormalized. Blocks are
/// emitted row-major from the top-left.
pub fn hog_descriptor(map: &Array2<f64>, cfg: &HogConfig) -> Result<Vec<f64>> {
    let (h, w) = map.dim();
    cfg.check(w, h)?;
    let hist = cell_histograms(map, cfg);
    let (cy, cx, bins) = hist.dim();
    let mut out = Vec::with_capacity((cy - 1) * (cx - 1) * 4 * bins);
    let mut block = vec![0.0; 4 * bins];
    for by in 0..cy - 1 {
        for bx in 0..cx - 1 {
            for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                for b in 0..bins {
                    block[k * bins + b] = hist[[by + dy, bx + dx, b]];
                }
            }
            normalize_block(&mut block);
            out.extend_from_slice(&block);
        }
    }
    Ok(out)
}

/// HOG of the part-activation map for one layer's parts.
pub fn part_hog_features<'a, I>(parts: I, width: u32, height: u32, cfg: &HogConfig) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a PartRealization>,
{
    cfg.check(width as usize, height as usize)?;
    let map = part_activation_map(parts, width, height);
    hog_descriptor(&map, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(x: f64, y: f64) -> PartRealization {
        PartRealization {
            image_id: "i".into(),
            layer: 1,
            part_id: 0,
            x,
            y,
            score: 1.0,
        }
    }

    #[test]
    fn dimension_of_standard_layout() {
        let cfg = HogConfig { cell_size: 8, bins: 9 };
        assert_eq!(cfg.dimension(64, 64).unwrap(), 1764);
        let d = part_hog_features(&[part(3.0, -4.0)], 64, 64, &cfg).unwrap();
        assert_eq!(d.len(), 1764);
    }

    #[test]
    fn blank_map_gives_zero_descriptor() {
        let cfg = HogConfig { cell_size: 8, bins: 9 };
        let d = part_hog_features(&[], 64, 64, &cfg).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn map_smaller_than_a_block_is_rejected() {
        let cfg = HogConfig { cell_size: 8, bins: 9 };
        assert!(part_hog_features(&[], 15, 64, &cfg).is_err());
        assert!(part_hog_features(&[], 16, 16, &cfg).is_ok());
    }

    #[test]
    fn activation_map_is_triangle_smoothed_impulse() {
        let mut p = part(0.0, 0.5);
        p.score = 16.0;
        let m = part_activation_map(&[p], 8, 8);
        // centered (0, 0.5) is the pixel at col 4, row 3 of an 8x8 grid
        assert_eq!(m[[3, 4]], 4.0);
        assert_eq!(m[[2, 4]], 2.0);
        assert_eq!(m[[2, 3]], 1.0);
        assert_eq!(m.sum(), 16.0);
    }

    #[test]
    fn block_normalization_is_clipped() {
        let mut b = vec![1.0, 0.0, 0.0, 0.0];
        normalize_block(&mut b);
        assert_eq!(b, vec![1.0, 0.0, 0.0, 0.0]);
        let mut b = vec![10.0, 1.0, 1.0, 1.0];
        normalize_block(&mut b);
        assert!(b.iter().all(|v| *v <= 1.0));
        assert!((b.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        // 0.985 is clipped to 0.2, the rest (0.0985) survive; then rescaled
        let k = (0.04 + 3.0 / 103.0f64).sqrt();
        assert!((b[0] - 0.2 / k).abs() < 1e-12);
        assert!((b[1] - 1.0 / 103f64.sqrt() / k).abs() < 1e-12);
    }

    #[test]
    fn translation_by_whole_cells_shifts_block_descriptors() {
        let cfg = HogConfig { cell_size: 8, bins: 9 };
        let a = part_hog_features(&[part(-5.0, 3.0)], 64, 64, &cfg).unwrap();
        // move right by one cell and down by two cells
        let b = part_hog_features(&[part(3.0, -13.0)], 64, 64, &cfg).unwrap();
        let block = 4 * cfg.bins;
        for by in 0..5 {
            for bx in 0..6 {
                let i = (by * 7 + bx) * block;
                let j = ((by + 2) * 7 + bx + 1) * block;
                assert_eq!(&a[i..i + block], &b[j..j + block]);
            }
        }
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        assert!((sum(&a) - sum(&b)).abs() < 1e-12);
    }
}
