//! Online radiometric calibration.
//!
//! Two routes estimate the inverse of the camera-display transfer function:
//! a quartic inverse response fitted to visible ratex ramps ([`poly`]) and a
//! histogram-specification map against a known transmitted distribution
//! ([`histogram`]).

pub mod histogram;
pub mod poly;

pub use histogram::{build_hist_map, equalize_with_record, Histogram, HistogramMap};
pub use poly::{apply_inverse, fit_inverse_poly, InversePoly};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("need at least {required} samples, got {actual}")]
    InsufficientSamples { required: usize, actual: usize },
    #[error("samples span {span:.1} gray levels, need at least {required:.1}")]
    InsufficientSpan { span: f64, required: f64 },
    #[error("design matrix is rank deficient ({distinct} distinct captured values)")]
    RankDeficient { distinct: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("image is constant (level {0}); equalization is undefined")]
    ConstantImage(u8),
    #[error("histogram has zero total mass")]
    EmptyHistogram,
}
