//! Histogram equalization and histogram specification for hidden-ratex
//! calibration.
//!
//! The transmitter equalizes every carrier before display, so the receiver
//! knows the displayed intensity distribution. After capture, the receiver
//! maps captured levels so the captured histogram matches the known one;
//! that map approximates the inverse transfer function.

use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::image::{quantize_level, IntensityImage};

/// Counts per gray level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    #[serde(with = "bins_serde")]
    bins: [u64; 256],
}

impl Histogram {
    pub fn from_bins(bins: [u64; 256]) -> Self {
        Self { bins }
    }

    pub fn of(img: &IntensityImage) -> Self {
        Self {
            bins: img.histogram(),
        }
    }

    /// Equal mass on every level.
    pub fn uniform() -> Self {
        Self { bins: [1; 256] }
    }

    pub fn bins(&self) -> &[u64; 256] {
        &self.bins
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    pub fn cumulative(&self) -> [u64; 256] {
        let mut acc = 0;
        let mut out = [0; 256];
        for (o, &b) in out.iter_mut().zip(&self.bins) {
            acc += b;
            *o = acc;
        }
        out
    }

    /// Largest single-bin mass as a fraction of the total.
    pub fn max_mass(&self) -> f64 {
        *self.bins.iter().max().unwrap() as f64 / self.total().max(1) as f64
    }
}

mod bins_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(bins: &[u64; 256], s: S) -> Result<S::Ok, S::Error> {
        bins.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u64; 256], D::Error> {
        let v = Vec::<u64>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<u64>| serde::de::Error::invalid_length(v.len(), &"256 bins"))
    }
}

/// Monotone 256-entry lookup table from captured to corrected gray level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramMap {
    #[serde(with = "lut_serde")]
    lut: [u8; 256],
}

mod lut_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(lut: &[u8; 256], s: S) -> Result<S::Ok, S::Error> {
        lut.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 256], D::Error> {
        let v = Vec::<u8>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<u8>| serde::de::Error::invalid_length(v.len(), &"256 entries"))
    }
}

impl HistogramMap {
    pub fn identity() -> Self {
        let mut lut = [0u8; 256];
        for (i, l) in lut.iter_mut().enumerate() {
            *l = i as u8;
        }
        Self { lut }
    }

    pub fn lut(&self) -> &[u8; 256] {
        &self.lut
    }

    #[inline]
    pub fn map_level(&self, v: f64) -> f64 {
        f64::from(self.lut[quantize_level(v) as usize])
    }

    pub fn apply(&self, img: &IntensityImage) -> IntensityImage {
        img.map(|v| self.map_level(v))
    }
}

/// CDF-based histogram equalization. Returns the equalized image and its
/// histogram, which the receiver treats as the known displayed
/// distribution.
pub fn equalize_with_record(
    img: &IntensityImage,
) -> Result<(IntensityImage, Histogram), CalibrationError> {
    let hist = Histogram::of(img);
    let occupied: Vec<usize> = (0..256).filter(|&v| hist.bins[v] > 0).collect();
    if occupied.len() < 2 {
        return Err(CalibrationError::ConstantImage(occupied[0] as u8));
    }
    let cdf = hist.cumulative();
    let total = hist.total();
    let cdf_min = cdf[occupied[0]];
    let denom = (total - cdf_min) as f64;
    let mut lut = [0u8; 256];
    for v in 0..256 {
        let num = cdf[v].saturating_sub(cdf_min) as f64;
        lut[v] = (255.0 * num / denom + 0.5).floor() as u8;
    }
    let map = HistogramMap { lut };
    let out = map.apply(img);
    let record = Histogram::of(&out);
    Ok((out, record))
}

/// Histogram specification: `lut(v) = argmin_u |CDF_ref(u) - CDF_cap(v)|`,
/// ties going to the smaller `u`. CDFs are compared exactly in integer
/// arithmetic.
#[allow(clippy::needless_range_loop)]
pub fn build_hist_map(
    reference: &Histogram,
    captured: &Histogram,
) -> Result<HistogramMap, CalibrationError> {
    let (n_ref, n_cap) = (reference.total(), captured.total());
    if n_ref == 0 || n_cap == 0 {
        return Err(CalibrationError::EmptyHistogram);
    }
    let ref_cdf = reference.cumulative();
    let cap_cdf = captured.cumulative();
    let mut lut = [0u8; 256];
    let mut u = 0usize;
    for v in 0..256 {
        // CDF_ref(u) / n_ref vs CDF_cap(v) / n_cap, cross-multiplied.
        let target = u128::from(cap_cdf[v]) * u128::from(n_ref);
        let dist = |u: usize| (u128::from(ref_cdf[u]) * u128::from(n_cap)).abs_diff(target);
        // The argmin is non-decreasing in v, so resume from the last one.
        let mut best = u;
        let mut best_d = dist(u);
        for cand in u + 1..256 {
            let d = dist(cand);
            if d < best_d {
                best = cand;
                best_d = d;
            } else if ref_cdf[cand] * n_cap > cap_cdf[v] * n_ref {
                break;
            }
        }
        u = best;
        lut[v] = best as u8;
    }
    Ok(HistogramMap { lut })
}
