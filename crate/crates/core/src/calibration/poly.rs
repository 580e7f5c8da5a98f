//! Quartic inverse radiometric response.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::image::{IntensityImage, MAX_LEVEL};

pub const MIN_SAMPLES: usize = 25;
/// Minimum span of displayed levels, as a fraction of the full range.
pub const MIN_SPAN_FRACTION: f64 = 0.8;
/// Points on the monotonicity check grid over `[0, 1]`.
pub const GRID_POINTS: usize = 256;

/// `g(i) = a4 i^4 + a3 i^3 + a2 i^2 + a1 i + a0` over normalized intensity.
///
/// If the least-squares fit is not non-decreasing on the check grid, a
/// monotone repair is attached: the grid derivative is clipped at zero and
/// `g` is evaluated by linear interpolation on the repaired grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversePoly {
    /// `[a0, a1, a2, a3, a4]`.
    pub coeffs: [f64; 5],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repaired_grid: Option<Vec<f64>>,
    /// `g(0)` or `g(1)` fell outside `[-0.05, 1.05]`.
    #[serde(default)]
    pub endpoint_warning: bool,
}

impl InversePoly {
    pub fn identity() -> Self {
        Self::from_coeffs([0.0, 1.0, 0.0, 0.0, 0.0])
    }

    pub fn from_coeffs(coeffs: [f64; 5]) -> Self {
        Self {
            coeffs,
            repaired_grid: None,
            endpoint_warning: false,
        }
    }

    pub fn is_repaired(&self) -> bool {
        self.repaired_grid.is_some()
    }

    /// The raw polynomial, ignoring any monotone repair.
    #[inline]
    pub fn eval_poly(&self, i: f64) -> f64 {
        let [a0, a1, a2, a3, a4] = self.coeffs;
        (((a4 * i + a3) * i + a2) * i + a1) * i + a0
    }

    #[inline]
    pub fn eval(&self, i: f64) -> f64 {
        match &self.repaired_grid {
            None => self.eval_poly(i),
            Some(grid) => {
                let last = (grid.len() - 1) as f64;
                let t = i.clamp(0.0, 1.0) * last;
                let k = (t.floor() as usize).min(grid.len() - 2);
                let frac = t - k as f64;
                grid[k] + frac * (grid[k + 1] - grid[k])
            }
        }
    }

    /// `g(i_o) - g(i_e)` on the raw polynomial; `a0` cancels exactly.
    #[inline]
    pub fn difference(&self, i_o: f64, i_e: f64) -> f64 {
        let [_, a1, a2, a3, a4] = self.coeffs;
        a4 * (i_o.powi(4) - i_e.powi(4))
            + a3 * (i_o.powi(3) - i_e.powi(3))
            + a2 * (i_o.powi(2) - i_e.powi(2))
            + a1 * (i_o - i_e)
    }

    pub fn is_monotone_on_grid(&self) -> bool {
        grid_values(self).windows(2).all(|w| w[1] >= w[0])
    }
}

fn grid_values(poly: &InversePoly) -> Vec<f64> {
    let last = (GRID_POINTS - 1) as f64;
    (0..GRID_POINTS)
        .map(|k| poly.eval_poly(k as f64 / last))
        .collect()
}

/// Least-squares fit of `displayed = g(captured)` from
/// `(displayed, captured)` gray-level samples.
pub fn fit_inverse_poly(samples: &[(f64, f64)]) -> Result<InversePoly, CalibrationError> {
    if let Some(i) = samples
        .iter()
        .position(|(d, c)| !d.is_finite() || !c.is_finite())
    {
        return Err(CalibrationError::NonFinite(i));
    }
    let mut levels: Vec<f64> = samples.iter().map(|s| s.1).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.len() < 5 {
        return Err(CalibrationError::RankDeficient {
            distinct: levels.len(),
        });
    }
    if samples.len() < MIN_SAMPLES {
        return Err(CalibrationError::InsufficientSamples {
            required: MIN_SAMPLES,
            actual: samples.len(),
        });
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.0), hi.max(s.0))
        });
    let required = MIN_SPAN_FRACTION * MAX_LEVEL;
    if hi - lo < required {
        return Err(CalibrationError::InsufficientSpan {
            span: hi - lo,
            required,
        });
    }

    let n = samples.len();
    let design = DMatrix::from_fn(n, 5, |r, c| (samples[r].1 / MAX_LEVEL).powi(c as i32));
    let target = DVector::from_iterator(n, samples.iter().map(|s| s.0 / MAX_LEVEL));
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-12 {
        return Err(CalibrationError::RankDeficient {
            distinct: levels.len(),
        });
    }
    let sol = svd
        .solve(&target, smax * 1e-14)
        .map_err(|_| CalibrationError::RankDeficient {
            distinct: levels.len(),
        })?;

    let mut poly = InversePoly::from_coeffs([sol[0], sol[1], sol[2], sol[3], sol[4]]);
    let grid = grid_values(&poly);
    if grid.windows(2).any(|w| w[1] < w[0]) {
        let mut repaired = Vec::with_capacity(grid.len());
        repaired.push(grid[0]);
        for w in grid.windows(2) {
            let prev = *repaired.last().unwrap();
            repaired.push(prev + (w[1] - w[0]).max(0.0));
        }
        log::warn!("inverse polynomial not monotone; derivative clipped on the check grid");
        poly.repaired_grid = Some(repaired);
    }
    let range = -0.05..=1.05;
    if !range.contains(&poly.eval(0.0)) || !range.contains(&poly.eval(1.0)) {
        poly.endpoint_warning = true;
    }
    Ok(poly)
}

/// Per-pixel `255 * g(v / 255)`, clamped.
pub fn apply_inverse(img: &IntensityImage, poly: &InversePoly) -> IntensityImage {
    img.map(|v| MAX_LEVEL * poly.eval(v / MAX_LEVEL))
}
