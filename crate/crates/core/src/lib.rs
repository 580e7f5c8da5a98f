//! Hidden camera-display messaging.
//!
//! Messages are embedded as additive block offsets between an original and
//! an embedded display frame, passed through a simulated camera-display
//! transfer function, and recovered by one of four methods: naive
//! thresholding, two-step calibration, joint calibration and classification
//! in a radiometric feature space (OORC), or hidden-ratex histogram mapping.
//! The [`harness`] module runs seeded sweeps over device presets and writes
//! accuracy reports.

pub mod calibration;
pub mod cdtf;
pub mod codec;
pub mod harness;
pub mod image;
pub mod recovery;
pub mod svm;

pub use calibration::{CalibrationError, Histogram, HistogramMap, InversePoly};
pub use cdtf::{CdtfError, CdtfModel};
pub use codec::{BitMessage, CodecError, FramePair, GridLayout, RatexMode};
pub use harness::{run_experiment, AccuracyReport, ExperimentConfig, HarnessError};
pub use image::{ImageError, IntensityImage};
pub use recovery::{Method, RecoveryError, RecoveryResult};
pub use svm::{FeatureVector, SvmError, SvmModel, TrainOptions};
