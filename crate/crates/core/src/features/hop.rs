//! Histograms of part orientations over an M x M grid of image cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{wrap_degrees, PartRealization};

/// Grid and binning parameters shared by the orientation histograms and the
/// part-HOG descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopConfig {
    /// Number of grid cells per image axis.
    pub cells: usize,
    /// Nominal orientation bin width in degrees.
    pub bin_size: f64,
    /// Accumulate part scores instead of unit counts.
    #[serde(default)]
    pub weight_by_score: bool,
}

impl HopConfig {
    pub fn new(cells: usize, bin_size: f64) -> Result<Self> {
        let cfg = HopConfig {
            cells,
            bin_size,
            weight_by_score: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 {
            return Err(Error::input("HOP grid needs at least one cell"));
        }
        if !(self.bin_size > 0.0 && self.bin_size <= 360.0) {
            return Err(Error::input(format!(
                "orientation bin size {} outside (0, 360]",
                self.bin_size
            )));
        }
        Ok(())
    }

    /// B = round(360 / bSize), at least one.
    pub fn bins(&self) -> usize {
        ((360.0 / self.bin_size).round() as usize).max(1)
    }

    /// Effective bin width: 360 / B, so that the B bins tile the circle.
    pub fn bin_width(&self) -> f64 {
        360.0 / self.bins() as f64
    }

    pub fn dimension(&self) -> usize {
        self.cells * self.cells * self.bins()
    }
}

/// Orientation of a part seen from the image center, in degrees `[0, 360)`.
///
/// Returns `None` for a part sitting exactly on the origin, whose direction
/// is undefined.
pub fn part_orientation(x: f64, y: f64) -> Option<f64> {
    if x == 0.0 && y == 0.0 {
        None
    } else {
        Some(wrap_degrees(y.atan2(x).to_degrees()))
    }
}

/// Result of [`hop_features`]: the histogram plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct HopHistogram {
    pub values: Vec<f64>,
    /// Parts at the exact origin (binned at angle 0).
    pub degenerate: usize,
    /// Parts outside the image bounds (not counted).
    pub outside: usize,
}

/// Grid cell (row from the top, column from the left) holding a centered
/// position, or `None` when the position falls outside the image.
pub fn grid_cell(x: f64, y: f64, width: u32, height: u32, cells: usize) -> Option<(usize, usize)> {
    let u = x + width as f64 / 2.0;
    let v = y + height as f64 / 2.0;
    if !(u >= 0.0 && u < width as f64 && v >= 0.0 && v < height as f64) {
        return None;
    }
    let col = ((u * cells as f64 / width as f64).floor() as usize).min(cells - 1);
    let up = ((v * cells as f64 / height as f64).floor() as usize).min(cells - 1);
    Some((cells - 1 - up, col))
}

/// Concatenated per-cell orientation histograms, cells in row-major order
/// starting at the top-left cell.
pub fn hop_features<'a, I>(parts: I, cfg: &HopConfig, width: u32, height: u32) -> HopHistogram
where
    I: IntoIterator<Item = &'a PartRealization>,
{
    let bins = cfg.bins();
    let width_deg = cfg.bin_width();
    let mut values = vec![0.0; cfg.dimension()];
    let mut degenerate = 0;
    let mut outside = 0;
    for p in parts {
        let Some((row, col)) = grid_cell(p.x, p.y, width, height, cfg.cells) else {
            outside += 1;
            continue;
        };
        let theta = part_orientation(p.x, p.y).unwrap_or_else(|| {
            degenerate += 1;
            0.0
        });
        let bin = ((theta / width_deg).floor() as usize).min(bins - 1);
        let w = if cfg.weight_by_score { p.score } else { 1.0 };
        values[(row * cfg.cells + col) * bins + bin] += w;
    }
    HopHistogram {
        values,
        degenerate,
        outside,
    }
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
            score: 2.5,
        }
    }

    #[test]
    fn orientation_examples() {
        assert!((part_orientation(1.0, 1.0).unwrap() - 45.0).abs() < 1e-12);
        assert!((part_orientation(0.0, 1.0).unwrap() - 90.0).abs() < 1e-12);
        assert!((part_orientation(-1.0, -1.0).unwrap() - 225.0).abs() < 1e-12);
        assert_eq!(part_orientation(0.0, 0.0), None);
    }

    #[test]
    fn single_part_lands_in_upper_right_cell() {
        let cfg = HopConfig::new(2, 45.0).unwrap();
        assert_eq!(cfg.bins(), 8);
        let h = hop_features(&[part(1.0, 1.0)], &cfg, 64, 64);
        assert_eq!(h.values.len(), 32);
        // cell 1 is the upper-right one; 45 degrees opens bin 1 = [45, 90)
        let mut expected = vec![0.0; 32];
        expected[8 + 1] = 1.0;
        assert_eq!(h.values, expected);
    }

    #[test]
    fn empty_input_gives_zero_vector() {
        let cfg = HopConfig::new(4, 32.0).unwrap();
        let h = hop_features(&[], &cfg, 64, 64);
        assert_eq!(h.values, vec![0.0; 16 * 11]);
    }

    #[test]
    fn origin_part_is_binned_at_zero_and_counted() {
        let cfg = HopConfig::new(1, 90.0).unwrap();
        let h = hop_features(&[part(0.0, 0.0)], &cfg, 8, 8);
        assert_eq!(h.values, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(h.degenerate, 1);
    }

    #[test]
    fn outside_parts_are_dropped() {
        let cfg = HopConfig::new(2, 90.0).unwrap();
        let h = hop_features(&[part(40.0, 0.0), part(-32.0, -32.0), part(31.9, 31.9)], &cfg, 64, 64);
        assert_eq!(h.outside, 1);
        assert_eq!(h.values.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn score_weighting_is_opt_in() {
        let mut cfg = HopConfig::new(1, 90.0).unwrap();
        cfg.weight_by_score = true;
        let h = hop_features(&[part(1.0, 1.0)], &cfg, 8, 8);
        assert_eq!(h.values[0], 2.5);
    }

    #[test]
    fn full_circle_wraps_into_first_bin() {
        let cfg = HopConfig::new(1, 32.0).unwrap();
        // 11 bins of 32.7 degrees; an angle just below 360 must stay in range
        let h = hop_features(&[part(1.0, -1e-12)], &cfg, 8, 8);
        assert_eq!(h.values[10], 1.0);
    }
}
