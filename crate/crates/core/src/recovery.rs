//! Message recovery from a captured original / embedded frame pair.
//!
//! Every method reduces a block to one score over its interior pixels and
//! decodes `1` iff the score is strictly above the method's decision level;
//! ties decode as `0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{
    build_hist_map, fit_inverse_poly, CalibrationError, Histogram, HistogramMap, InversePoly,
};
use crate::codec::{block_samples, BitMessage, BlockSamples, CodecError, GridLayout};
use crate::image::{IntensityImage, MAX_LEVEL};
use crate::svm::{self, phi, FeatureVector, SvmError, SvmModel, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "two-step")]
    TwoStep,
    #[serde(rename = "oorc")]
    Oorc,
    #[serde(rename = "hidden-ratex")]
    HiddenRatex,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Naive,
        Method::TwoStep,
        Method::Oorc,
        Method::HiddenRatex,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::TwoStep => "two-step",
            Method::Oorc => "oorc",
            Method::HiddenRatex => "hidden-ratex",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RecoveryError {
    #[error("{method}: {source}")]
    Codec {
        method: Method,
        #[source]
        source: CodecError,
    },
    #[error("{method}: calibration failed: {source}")]
    Calibration {
        method: Method,
        #[source]
        source: CalibrationError,
    },
    #[error("{method}: classifier training failed: {source}")]
    Svm {
        method: Method,
        #[source]
        source: SvmError,
    },
    #[error("{method}: layout has no ratex training pixels")]
    NoRatex { method: Method },
    #[error(
        "{method}: ratex pixels show no difference between the two classes (saturated capture?)"
    )]
    DegenerateRatex { method: Method },
}

/// What a method learned from the pair, kept for reports and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Calibration {
    None,
    TwoStep { poly: InversePoly, svm: SvmModel<1> },
    Oorc { svm: SvmModel<4> },
    HiddenRatex { map: HistogramMap },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub bits: BitMessage,
    pub per_block_scores: Vec<f64>,
    pub method: Method,
    pub accuracy: Option<f64>,
    pub calibration: Calibration,
}

impl RecoveryResult {
    /// Scores `bits` against `truth`.
    pub fn with_truth(mut self, truth: &BitMessage) -> Self {
        self.accuracy = Some(accuracy(&self.bits, truth));
        self
    }

    pub fn correct_bits(&self, truth: &BitMessage) -> usize {
        self.bits
            .bits()
            .iter()
            .zip(truth.bits())
            .filter(|(a, b)| a == b)
            .count()
    }
}

/// Fraction of positions where the two messages agree.
pub fn accuracy(decoded: &BitMessage, truth: &BitMessage) -> f64 {
    assert_eq!(decoded.len(), truth.len(), "message lengths differ");
    if truth.is_empty() {
        return 1.0;
    }
    let same = decoded
        .bits()
        .iter()
        .zip(truth.bits())
        .filter(|(a, b)| a == b)
        .count();
    same as f64 / truth.len() as f64
}

fn samples_for(
    method: Method,
    original: &IntensityImage,
    embedded: &IntensityImage,
    layout: &GridLayout,
) -> Result<Vec<BlockSamples>, RecoveryError> {
    block_samples(original, embedded, layout)
        .map_err(|source| RecoveryError::Codec { method, source })
}

fn decode(
    method: Method,
    layout: &GridLayout,
    samples: &[BlockSamples],
    level: f64,
    mut score: impl FnMut(&BlockSamples) -> f64,
    calibration: Calibration,
) -> RecoveryResult {
    let per_block_scores: Vec<f64> = layout
        .message_blocks()
        .map(|b| score(&samples[b]))
        .collect();
    let bits = BitMessage::new(per_block_scores.iter().map(|&s| s > level).collect());
    RecoveryResult {
        bits,
        per_block_scores,
        method,
        accuracy: None,
        calibration,
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n.max(1) as f64
}

/// Method 1: mean raw difference `i_e - i_o` against `threshold` (gray levels).
pub fn recover_naive(
    original: &IntensityImage,
    embedded: &IntensityImage,
    layout: &GridLayout,
    threshold: f64,
) -> Result<RecoveryResult, RecoveryError> {
    let samples = samples_for(Method::Naive, original, embedded, layout)?;
    Ok(naive_from_samples(layout, &samples, threshold))
}

pub fn naive_from_samples(
    layout: &GridLayout,
    samples: &[BlockSamples],
    threshold: f64,
) -> RecoveryResult {
    decode(
        Method::Naive,
        layout,
        samples,
        threshold,
        |s| mean(s.pairs().map(|(o, e)| e - o)),
        Calibration::None,
    )
}

fn ratex_blocks<'a>(
    layout: &'a GridLayout,
    samples: &'a [BlockSamples],
) -> impl Iterator<Item = &'a BlockSamples> + 'a {
    layout.ratex_indices().iter().map(move |&b| &samples[b])
}

/// `(displayed ramp level, captured original level)` over ratex interiors.
pub fn ratex_calibration_samples(layout: &GridLayout, samples: &[BlockSamples]) -> Vec<(f64, f64)> {
    ratex_blocks(layout, samples)
        .flat_map(|s| {
            let t = s.ratex.as_ref().expect("ratex block carries truth");
            t.displayed.iter().copied().zip(s.original.iter().copied())
        })
        .collect()
}

fn label(positive: bool) -> i8 {
    if positive {
        1
    } else {
        -1
    }
}

#[inline]
fn calibrated(poly: &InversePoly, v: f64) -> f64 {
    poly.eval(v / MAX_LEVEL).clamp(0.0, 1.0)
}

/// Calibrated difference `g(i_e) - g(i_o)` in normalized units.
#[inline]
pub fn calibrated_difference(poly: &InversePoly, i_o: f64, i_e: f64) -> [f64; 1] {
    [calibrated(poly, i_e) - calibrated(poly, i_o)]
}

/// Training set for the two-step classifier: calibrated ratex differences.
pub fn two_step_training_set(
    layout: &GridLayout,
    samples: &[BlockSamples],
    poly: &InversePoly,
) -> (Vec<[f64; 1]>, Vec<i8>) {
    ratex_blocks(layout, samples)
        .flat_map(|s| {
            let t = s.ratex.as_ref().expect("ratex block carries truth");
            s.pairs()
                .zip(&t.labels)
                .map(|((o, e), &l)| (calibrated_difference(poly, o, e), label(l)))
        })
        .unzip()
}

/// Method 2: fit the inverse response on the ratex ramps, calibrate both
/// frames, then classify calibrated differences with a 1-D SVM trained on
/// the ratex stripes.
pub fn recover_two_step(
    original: &IntensityImage,
    embedded: &IntensityImage,
    layout: &GridLayout,
    opts: &TrainOptions,
) -> Result<RecoveryResult, RecoveryError> {
    let samples = samples_for(Method::TwoStep, original, embedded, layout)?;
    two_step_from_samples(layout, &samples, opts)
}

pub fn two_step_from_samples(
    layout: &GridLayout,
    samples: &[BlockSamples],
    opts: &TrainOptions,
) -> Result<RecoveryResult, RecoveryError> {
    let method = Method::TwoStep;
    let poly = fit_inverse_poly(&ratex_calibration_samples(layout, samples))
        .map_err(|source| RecoveryError::Calibration { method, source })?;
    let (x, y) = two_step_training_set(layout, samples, &poly);
    let model = svm::train(&x, &y, opts).map_err(|source| RecoveryError::Svm { method, source })?;
    let scored = model.clone();
    let poly_ref = poly.clone();
    Ok(decode(
        method,
        layout,
        samples,
        0.0,
        move |s| {
            let d = mean(
                s.pairs()
                    .map(|(o, e)| calibrated_difference(&poly_ref, o, e)[0]),
            );
            scored.decide(&[d])
        },
        Calibration::TwoStep { poly, svm: model },
    ))
}

/// Training set for OORC: `phi` of normalized ratex pixel pairs.
pub fn oorc_training_set(
    layout: &GridLayout,
    samples: &[BlockSamples],
) -> (Vec<[f64; 4]>, Vec<i8>) {
    ratex_blocks(layout, samples)
        .flat_map(|s| {
            let t = s.ratex.as_ref().expect("ratex block carries truth");
            s.pairs()
                .zip(&t.labels)
                .map(|((o, e), &l)| (phi(o / MAX_LEVEL, e / MAX_LEVEL).0, label(l)))
        })
        .unzip()
}

/// Method 3 (OORC): one SVM in the 4-D radiometric feature space does
/// calibration and classification together. Blocks are scored on their
/// mean feature vector.
pub fn recover_oorc(
    original: &IntensityImage,
    embedded: &IntensityImage,
    layout: &GridLayout,
    opts: &TrainOptions,
) -> Result<RecoveryResult, RecoveryError> {
    let samples = samples_for(Method::Oorc, original, embedded, layout)?;
    oorc_from_samples(layout, &samples, opts)
}

pub fn oorc_from_samples(
    layout: &GridLayout,
    samples: &[BlockSamples],
    opts: &TrainOptions,
) -> Result<RecoveryResult, RecoveryError> {
    let method = Method::Oorc;
    let (x, y) = oorc_training_set(layout, samples);
    if x.is_empty() {
        return Err(RecoveryError::NoRatex { method });
    }
    if x.iter().all(|u| u.iter().all(|&v| v == 0.0)) {
        return Err(RecoveryError::DegenerateRatex { method });
    }
    let model = svm::train(&x, &y, opts).map_err(|source| RecoveryError::Svm { method, source })?;
    let scored = model.clone();
    Ok(decode(
        method,
        layout,
        samples,
        0.0,
        move |s| {
            let u = FeatureVector::mean(s.pairs().map(|(o, e)| phi(o / MAX_LEVEL, e / MAX_LEVEL)));
            scored.decide(&u.0)
        },
        Calibration::Oorc { svm: model },
    ))
}

/// Method 4: map both captured frames with the histogram specification
/// that takes the captured original's histogram to the known `reference`,
/// then threshold the mean remapped difference.
///
/// The frames are expected to have been equalized before embedding and to
/// carry no visible ratex patches.
pub fn recover_hidden_ratex(
    original: &IntensityImage,
    embedded: &IntensityImage,
    layout: &GridLayout,
    reference: &Histogram,
    threshold: f64,
) -> Result<RecoveryResult, RecoveryError> {
    let method = Method::HiddenRatex;
    let map = build_hist_map(reference, &Histogram::of(original))
        .map_err(|source| RecoveryError::Calibration { method, source })?;
    let samples = samples_for(method, original, embedded, layout)?;
    let lut = map.clone();
    Ok(decode(
        method,
        layout,
        &samples,
        threshold,
        move |s| mean(s.pairs().map(|(o, e)| lut.map_level(e) - lut.map_level(o))),
        Calibration::HiddenRatex { map },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::equalize_with_record;
    use crate::cdtf::{apply_cdtf, CdtfModel};
    use crate::codec::{embed, embed_with, layout_grid, RatexMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn carrier() -> IntensityImage {
        IntensityImage::from_fn_clamped(256, 256, |x, y| {
            let (xf, yf) = (x as f64 / 256.0, y as f64 / 256.0);
            (110.0 + 60.0 * (5.0 * xf).sin() + 40.0 * (3.0 * yf).cos()).round()
        })
        .unwrap()
    }

    fn layout() -> GridLayout {
        layout_grid(256, 256, 8, 8, 5, 0.1).unwrap()
    }

    fn random_message(seed: u64) -> BitMessage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BitMessage::new((0..59).map(|_| rng.gen()).collect())
    }

    fn capture(pair: &FramePairRef, m: &CdtfModel) -> (IntensityImage, IntensityImage) {
        (
            apply_cdtf(pair.0, &m.with_seed(1)),
            apply_cdtf(pair.1, &m.with_seed(2)),
        )
    }

    type FramePairRef<'a> = (&'a IntensityImage, &'a IntensityImage);

    #[test]
    fn identity_channel_decodes_exactly_with_every_method() {
        let l = layout();
        let msg = random_message(7);
        let p = embed(&carrier(), &msg, 5.0, &l).unwrap();
        let id = CdtfModel::identity();
        let (o, e) = capture(&(&p.original, &p.embedded), &id);
        let opts = TrainOptions::default();
        let results = [
            recover_naive(&o, &e, &l, 2.5).unwrap(),
            recover_two_step(&o, &e, &l, &opts).unwrap(),
            recover_oorc(&o, &e, &l, &opts).unwrap(),
        ];
        for r in results {
            assert_eq!(r.with_truth(&msg).accuracy, Some(1.0));
        }
        let (eq, reference) = equalize_with_record(&carrier()).unwrap();
        let h = embed_with(&eq, &msg, 5.0, &l, RatexMode::Hidden).unwrap();
        let (ho, he) = capture(&(&h.original, &h.embedded), &id);
        let r = recover_hidden_ratex(&ho, &he, &l, &reference, 2.5).unwrap();
        assert_eq!(r.with_truth(&msg).accuracy, Some(1.0));
    }

    #[test]
    fn naive_threshold_examples() {
        let l = layout();
        let msg = random_message(8);
        let p = embed(&carrier(), &msg, 10.0, &l).unwrap();
        let r = recover_naive(&p.original, &p.embedded, &l, 5.0).unwrap();
        assert_eq!(r.with_truth(&msg).accuracy, Some(1.0));
        // Threshold 0 with a noiseless channel: zero blocks score exactly 0
        // and decode as 0.
        let r0 = recover_naive(&p.original, &p.embedded, &l, 0.0).unwrap();
        assert_eq!(r0.clone().with_truth(&msg).accuracy, Some(1.0));
        assert!(r0
            .per_block_scores
            .iter()
            .zip(msg.bits())
            .all(|(&s, &b)| b || s == 0.0));
    }

    #[test]
    fn naive_collapses_under_oblique_attenuation() {
        // Linear display and camera: differences scale by cos(45)^3 ~ 0.354.
        let m = CdtfModel {
            angle_deg: 45.0,
            falloff_power: 3.0,
            ..CdtfModel::identity()
        };
        let l = layout();
        let msg = random_message(9);
        let p = embed(&carrier(), &msg, 3.0, &l).unwrap();
        let (o, e) = capture(&(&p.original, &p.embedded), &m.with_noise(0.5));
        let r = recover_naive(&o, &e, &l, 5.0).unwrap();
        let zeros = msg.bits().iter().filter(|b| !**b).count() as f64 / 59.0;
        assert!(r.per_block_scores.iter().all(|&s| s < 3.0 * 0.36 + 0.2));
        assert_eq!(r.with_truth(&msg).accuracy, Some(zeros));
    }

    #[test]
    fn calibrated_methods_beat_naive_on_gamma_channel() {
        let m = CdtfModel {
            display_gamma: 2.5,
            camera_gamma: 1.8,
            ..CdtfModel::identity()
        };
        let l = layout();
        let opts = TrainOptions::default();
        let (mut naive, mut two, mut oorc) = (0.0, 0.0, 0.0);
        for seed in 0..4 {
            let msg = random_message(seed);
            let p = embed(&carrier(), &msg, 3.0, &l).unwrap();
            let (o, e) = capture(&(&p.original, &p.embedded), &m);
            naive += recover_naive(&o, &e, &l, 2.5)
                .unwrap()
                .with_truth(&msg)
                .accuracy
                .unwrap();
            two += recover_two_step(&o, &e, &l, &opts)
                .unwrap()
                .with_truth(&msg)
                .accuracy
                .unwrap();
            oorc += recover_oorc(&o, &e, &l, &opts)
                .unwrap()
                .with_truth(&msg)
                .accuracy
                .unwrap();
        }
        assert!(two >= naive, "two-step {two} vs naive {naive}");
        assert!(oorc >= naive, "oorc {oorc} vs naive {naive}");
    }

    #[test]
    fn hidden_ratex_restores_gamma_channel() {
        let m = CdtfModel {
            display_gamma: 2.2,
            camera_gamma: 1.8,
            ..CdtfModel::identity()
        };
        let l = layout();
        let (eq, reference) = equalize_with_record(&carrier()).unwrap();
        for seed in 0..3 {
            let msg = random_message(100 + seed);
            let h = embed_with(&eq, &msg, 5.0, &l, RatexMode::Hidden).unwrap();
            let (o, e) = capture(&(&h.original, &h.embedded), &m);
            let r = recover_hidden_ratex(&o, &e, &l, &reference, 2.5).unwrap();
            // Bright blocks clip at 255 once the constant is added; only
            // those may be lost.
            let shown = block_samples(&h.original, &h.embedded, &l).unwrap();
            for (k, b) in l.message_blocks().enumerate() {
                let clipped = shown[b].original.iter().any(|&v| v > MAX_LEVEL - 5.0);
                assert!(
                    clipped || r.bits.bits()[k] == msg.bits()[k],
                    "seed {seed} bit {k}"
                );
            }
            assert!(r.with_truth(&msg).accuracy.unwrap() >= 0.95);
        }
    }

    #[test]
    fn decoding_does_not_depend_on_truth() {
        let l = layout();
        let msg = random_message(21);
        let p = embed(&carrier(), &msg, 5.0, &l).unwrap();
        let m = crate::cdtf::preset("d2c2").unwrap().with_angle(45.0);
        let (o, e) = capture(&(&p.original, &p.embedded), &m);
        let opts = TrainOptions::default();
        let a = recover_oorc(&o, &e, &l, &opts).unwrap();
        let mut permuted = msg.bits().to_vec();
        permuted.reverse();
        let b = recover_oorc(&o, &e, &l, &opts)
            .unwrap()
            .with_truth(&BitMessage::new(permuted));
        assert_eq!(a.bits, b.bits);
        assert_eq!(a.per_block_scores, b.per_block_scores);
    }

    #[test]
    fn saturated_capture_is_single_class() {
        let l = layout();
        let white = IntensityImage::filled(256, 256, 255.0).unwrap();
        let err = recover_oorc(&white, &white, &l, &TrainOptions::default()).unwrap_err();
        assert_eq!(
            err,
            RecoveryError::DegenerateRatex {
                method: Method::Oorc
            }
        );
        let err = recover_two_step(&white, &white, &l, &TrainOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            RecoveryError::Calibration {
                method: Method::TwoStep,
                source: CalibrationError::RankDeficient { .. }
            }
        ));
    }

    #[test]
    fn method_ids_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.id().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }
}
