//! Experiment sweeps over presets, angles and embedding strengths.
//!
//! A run embeds seeded random messages into every carrier, simulates the
//! capture of each frame through every (preset, angle) channel, decodes
//! with every configured method and tallies bit accuracy per cell.
//!
//! Seeds are derived, never drawn from a shared stream, so any single cell
//! can be re-run alone and produce the same numbers:
//!
//! * message bits for `(carrier, frame)`:
//!   `derive_seed(seed, &[STREAM_MESSAGE, carrier, frame])`
//! * sensor noise for one captured frame:
//!   `derive_seed(seed, &[STREAM_CAPTURE, fnv(preset), angle bits, kappa bits,
//!   carrier, frame, slot])` with `slot` 0/1 for the visible-ratex
//!   original/embedded frames and 2/3 for the hidden-ratex ones
//! * the second optimizer start in convexity checks:
//!   `derive_seed(seed, &[STREAM_INIT, ...capture key..., method])`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{equalize_with_record, Histogram};
use crate::cdtf::{self, apply_cdtf, CdtfModel};
use crate::codec::{
    block_samples, embed, embed_with, layout_grid, BitMessage, GridLayout, RatexMode,
};
use crate::image::{read_image, IntensityImage};
use crate::recovery::{
    naive_from_samples, oorc_from_samples, oorc_training_set, recover_hidden_ratex,
    two_step_from_samples, two_step_training_set, Calibration, Method, RecoveryResult,
};
use crate::svm::{self, Init, SvmModel, TrainOptions, DEFAULT_C, DEFAULT_TOL, MAX_PASSES};

pub const CONFIG_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;
pub const CARRIER_SYNTHETIC_PREFIX: &str = "synthetic:";
pub const DEFAULT_NAIVE_THRESHOLD: f64 = 2.5;
pub const CSV_HEADER: [&str; 8] = [
    "preset",
    "angle_deg",
    "kappa",
    "method",
    "bits_total",
    "bits_correct",
    "accuracy",
    "failures",
];

const STREAM_MESSAGE: u64 = 1;
const STREAM_CAPTURE: u64 = 2;
const STREAM_INIT: u64 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("report {path}: {message}")]
    Report { path: PathBuf, message: String },
}

impl HarnessError {
    fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub ratex_count: usize,
    #[serde(default = "default_margin")]
    pub margin_fraction: f64,
}

fn default_margin() -> f64 {
    crate::codec::DEFAULT_MARGIN_FRACTION
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmConfig {
    #[serde(default = "default_c")]
    pub c_reg: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_passes")]
    pub max_passes: usize,
}

fn default_c() -> f64 {
    DEFAULT_C
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_passes() -> usize {
    MAX_PASSES
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c_reg: DEFAULT_C,
            tol: DEFAULT_TOL,
            max_passes: MAX_PASSES,
        }
    }
}

impl SvmConfig {
    fn options(&self, init: Init) -> TrainOptions {
        TrainOptions {
            c_reg: self.c_reg,
            tol: self.tol,
            max_passes: self.max_passes,
            init,
        }
    }
}

/// One versioned JSON document describing a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// PGM paths, or `synthetic:<n>` for the built-in procedural carriers.
    pub carriers: Vec<String>,
    /// Size of synthetic carriers, `[width, height]`.
    #[serde(default = "default_synthetic_size")]
    pub synthetic_size: [usize; 2],
    pub grid: GridConfig,
    /// Embedding strengths in gray levels.
    pub kappas: Vec<f64>,
    /// Observation angles in degrees.
    pub angles: Vec<f64>,
    pub presets: Vec<String>,
    pub messages_per_carrier: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_naive_threshold")]
    pub naive_threshold: f64,
    #[serde(default)]
    pub svm: SvmConfig,
    /// Retrain every classifier from a second, random start and record
    /// how closely the two optima agree.
    #[serde(default)]
    pub convexity_check: bool,
}

fn default_synthetic_size() -> [usize; 2] {
    [512, 512]
}

fn default_naive_threshold() -> f64 {
    DEFAULT_NAIVE_THRESHOLD
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().to_string();
            // Missing and unknown keys are reported at the enclosing object.
            let named = message
                .split_once("field `")
                .and_then(|(_, rest)| rest.split_once('`'))
                .map(|(name, _)| name);
            let field = match (path.as_str(), named) {
                (".", Some(name)) => name.to_string(),
                (".", None) => "<root>".to_string(),
                (p, Some(name)) if message.starts_with("missing") => format!("{p}.{name}"),
                (p, _) => p.to_string(),
            };
            HarnessError::config(field, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative carrier paths and `output_dir` are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for c in &mut cfg.carriers {
            if !c.starts_with(CARRIER_SYNTHETIC_PREFIX) && Path::new(c).is_relative() {
                *c = base.join(&*c).to_string_lossy().into_owned();
            }
        }
        if let Some(dir) = cfg.output_dir.as_mut().filter(|d| d.is_relative()) {
            *dir = base.join(&*dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.version != CONFIG_VERSION {
            return Err(HarnessError::config(
                "version",
                format!(
                    "unsupported version {}, expected {CONFIG_VERSION}",
                    self.version
                ),
            ));
        }
        if self.carriers.is_empty() {
            return Err(HarnessError::config(
                "carriers",
                "at least one carrier is required",
            ));
        }
        for (i, c) in self.carriers.iter().enumerate() {
            if let Some(n) = c.strip_prefix(CARRIER_SYNTHETIC_PREFIX) {
                if n.parse::<u64>().is_err() {
                    return Err(HarnessError::config(
                        format!("carriers[{i}]"),
                        format!("bad synthetic carrier index {n:?}"),
                    ));
                }
            }
        }
        let [w, h] = self.synthetic_size;
        if w == 0 || h == 0 {
            return Err(HarnessError::config(
                "synthetic_size",
                "dimensions must be positive",
            ));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::config(
                "methods",
                "at least one method is required",
            ));
        }
        if self.kappas.is_empty() {
            return Err(HarnessError::config(
                "kappas",
                "at least one kappa is required",
            ));
        }
        for (i, &k) in self.kappas.iter().enumerate() {
            if !(k > 0.0 && k <= 255.0) {
                return Err(HarnessError::config(
                    format!("kappas[{i}]"),
                    format!("kappa {k} must be in (0, 255]"),
                ));
            }
        }
        if self.angles.is_empty() {
            return Err(HarnessError::config(
                "angles",
                "at least one angle is required",
            ));
        }
        for (i, &a) in self.angles.iter().enumerate() {
            if !(0.0..90.0).contains(&a) {
                return Err(HarnessError::config(
                    format!("angles[{i}]"),
                    format!("angle {a} must be in [0, 90)"),
                ));
            }
        }
        if self.presets.is_empty() {
            return Err(HarnessError::config(
                "presets",
                "at least one preset is required",
            ));
        }
        for (i, p) in self.presets.iter().enumerate() {
            cdtf::preset(p)
                .map_err(|e| HarnessError::config(format!("presets[{i}]"), e.to_string()))?;
        }
        if self.messages_per_carrier == 0 {
            return Err(HarnessError::config(
                "messages_per_carrier",
                "must be at least 1",
            ));
        }
        if !(self.naive_threshold.is_finite()) {
            return Err(HarnessError::config("naive_threshold", "must be finite"));
        }
        let s = &self.svm;
        if !(s.c_reg > 0.0 && s.c_reg.is_finite()) {
            return Err(HarnessError::config("svm.c_reg", "must be positive"));
        }
        if !(s.tol > 0.0 && s.tol.is_finite()) {
            return Err(HarnessError::config("svm.tol", "must be positive"));
        }
        if s.max_passes == 0 {
            return Err(HarnessError::config("svm.max_passes", "must be at least 1"));
        }
        let g = &self.grid;
        // Image size is checked per carrier; this checks the block structure.
        layout_grid(
            g.cols * 64,
            g.rows * 64,
            g.rows,
            g.cols,
            g.ratex_count,
            g.margin_fraction,
        )
        .map_err(|e| HarnessError::config("grid", e.to_string()))?;
        Ok(())
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into the run seed, one SplitMix64 round per part.
pub fn derive_seed(run_seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(run_seed), |acc, &p| mix(acc ^ p))
}

/// FNV-1a, used to key seeds on preset names.
pub fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Message bits for one frame of one carrier.
pub fn message_for(run_seed: u64, carrier: usize, frame: usize, len: usize) -> BitMessage {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        run_seed,
        &[STREAM_MESSAGE, carrier as u64, frame as u64],
    ));
    BitMessage::new((0..len).map(|_| rng.gen()).collect())
}

/// Procedural carrier `index`: a few random plane waves and soft blobs,
/// stretched to a random sub-range of the gray scale. Deterministic in
/// `index`.
pub fn synthetic_carrier(index: u64, width: usize, height: usize) -> IntensityImage {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(index, &[0x5EED]));
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let freq = rng.gen_range(0.5..6.0);
            let dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            (
                freq * dir.cos(),
                freq * dir.sin(),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.3..1.0),
            )
        })
        .collect();
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.05..0.25),
                rng.gen_range(-1.5..1.5),
            )
        })
        .collect();
    let field: Vec<f64> = (0..width * height)
        .map(|i| {
            let x = (i % width) as f64 / width as f64;
            let y = (i / width) as f64 / height as f64;
            let w: f64 = waves
                .iter()
                .map(|(fx, fy, ph, a)| a * (std::f64::consts::TAU * (fx * x + fy * y) + ph).sin())
                .sum();
            let b: f64 = blobs
                .iter()
                .map(|(cx, cy, r, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (r * r)).exp())
                .sum();
            w + b
        })
        .collect();
    let (lo, hi) = field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let out_lo = rng.gen_range(5.0..40.0);
    let out_hi = rng.gen_range(215.0..250.0);
    let scale = if hi > lo {
        (out_hi - out_lo) / (hi - lo)
    } else {
        0.0
    };
    let values = field
        .iter()
        .map(|v| (out_lo + (v - lo) * scale).round())
        .collect();
    IntensityImage::new(width, height, values).expect("values lie in the gray range")
}

fn load_carrier(spec: &str, size: [usize; 2]) -> Result<IntensityImage, String> {
    match spec.strip_prefix(CARRIER_SYNTHETIC_PREFIX) {
        Some(n) => {
            let n = n.parse::<u64>().map_err(|e| e.to_string())?;
            Ok(synthetic_carrier(n, size[0], size[1]))
        }
        None => read_image(spec).map_err(|e| e.to_string()),
    }
}

/// One (preset, angle, kappa) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub preset: String,
    pub angle_deg: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub preset: String,
    pub angle_deg: f64,
    pub kappa: f64,
    pub method: Method,
    pub bits_total: usize,
    pub bits_correct: usize,
    pub accuracy: f64,
    /// Frames this method failed to decode; they add no bits.
    pub failures: usize,
    /// Decode time summed over frames, seconds.
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub preset: String,
    pub angle_deg: f64,
    pub kappa: f64,
    pub carrier: usize,
    pub frame: Option<usize>,
    pub method: Option<Method>,
    pub message: String,
}

/// Agreement between two optimizer runs from different starts on one
/// training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityProbe {
    pub method: Method,
    pub rows: usize,
    pub objective_a: f64,
    pub objective_b: f64,
    pub sign_agreement: f64,
    pub monotone: bool,
    pub converged: bool,
    pub passes: usize,
}

impl ConvexityProbe {
    pub fn objective_gap(&self) -> f64 {
        (self.objective_a - self.objective_b).abs()
    }

    /// Objectives within `10 * tol` (relative), signs agreeing on at least
    /// 99.9% of rows, both traces non-increasing.
    pub fn passes_check(&self, tol: f64) -> bool {
        let scale = self.objective_a.abs().max(self.objective_b.abs()).max(1.0);
        self.objective_gap() <= 10.0 * tol * scale && self.sign_agreement >= 0.999 && self.monotone
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvexitySummary {
    pub training_sets: usize,
    pub failing: usize,
    pub non_converged: usize,
    pub max_relative_gap: f64,
    pub min_sign_agreement: f64,
    pub all_monotone: bool,
    pub max_passes: usize,
}

impl ConvexitySummary {
    fn from_probes<'a>(probes: impl Iterator<Item = &'a ConvexityProbe>, tol: f64) -> Self {
        let mut s = Self {
            min_sign_agreement: 1.0,
            all_monotone: true,
            ..Self::default()
        };
        for p in probes {
            s.training_sets += 1;
            s.failing += usize::from(!p.passes_check(tol));
            s.non_converged += usize::from(!p.converged);
            let scale = p.objective_a.abs().max(p.objective_b.abs()).max(1.0);
            s.max_relative_gap = s.max_relative_gap.max(p.objective_gap() / scale);
            s.min_sign_agreement = s.min_sign_agreement.min(p.sign_agreement);
            s.all_monotone &= p.monotone;
            s.max_passes = s.max_passes.max(p.passes);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub version: u32,
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<Failure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convexity: Option<ConvexitySummary>,
    /// Probes that missed the agreement check.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub convexity_violations: Vec<ConvexityProbe>,
    pub runtime_s: f64,
}

impl AccuracyReport {
    pub fn total_bits(&self) -> usize {
        self.rows.iter().map(|r| r.bits_total).sum()
    }

    /// Rows matching a filter, pooled: `(bits_correct, bits_total)`.
    pub fn pooled(&self, mut keep: impl FnMut(&ReportRow) -> bool) -> (usize, usize) {
        self.rows
            .iter()
            .filter(|r| keep(r))
            .fold((0, 0), |(c, t), r| (c + r.bits_correct, t + r.bits_total))
    }

    /// Mean of per-preset accuracies for one method in one (angle, kappa)
    /// table, as in a table's average row.
    pub fn table_mean(&self, method: Method, angle_deg: f64, kappa: f64) -> Option<f64> {
        let accs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| {
                r.method == method
                    && r.angle_deg == angle_deg
                    && r.kappa == kappa
                    && r.bits_total > 0
            })
            .map(|r| r.accuracy)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

#[derive(Default)]
struct Tally {
    total: usize,
    correct: usize,
    failures: usize,
    runtime_s: f64,
}

/// Everything one (cell, carrier, frame) task produced.
struct FrameOutcome {
    tallies: Vec<(Method, Tally)>,
    failures: Vec<Failure>,
    probes: Vec<ConvexityProbe>,
}

struct Prepared {
    carriers: Vec<Result<PreparedCarrier, String>>,
}

struct PreparedCarrier {
    image: IntensityImage,
    layout: GridLayout,
    equalized: Option<(IntensityImage, Histogram)>,
}

fn prepare(cfg: &ExperimentConfig) -> Prepared {
    let needs_hidden = cfg.methods.contains(&Method::HiddenRatex);
    let g = &cfg.grid;
    let carriers = cfg
        .carriers
        .iter()
        .map(|spec| {
            let image = load_carrier(spec, cfg.synthetic_size)
                .map_err(|e| format!("carrier {spec}: {e}"))?;
            let layout = layout_grid(
                image.width(),
                image.height(),
                g.rows,
                g.cols,
                g.ratex_count,
                g.margin_fraction,
            )
            .map_err(|e| format!("carrier {spec}: {e}"))?;
            let equalized = if needs_hidden {
                Some(equalize_with_record(&image).map_err(|e| format!("carrier {spec}: {e}"))?)
            } else {
                None
            };
            Ok(PreparedCarrier {
                image,
                layout,
                equalized,
            })
        })
        .collect();
    Prepared { carriers }
}

fn capture_key(cfg: &ExperimentConfig, cell: &CellKey, carrier: usize, frame: usize) -> [u64; 6] {
    [
        fnv1a(&cell.preset),
        cell.angle_deg.to_bits(),
        cell.kappa.to_bits(),
        carrier as u64,
        frame as u64,
        cfg.seed,
    ]
}

fn capture_pair(
    model: &CdtfModel,
    run_seed: u64,
    key: &[u64; 6],
    slots: [u64; 2],
    original: &IntensityImage,
    embedded: &IntensityImage,
) -> (IntensityImage, IntensityImage) {
    let seed = |slot: u64| {
        derive_seed(
            run_seed,
            &[STREAM_CAPTURE, key[0], key[1], key[2], key[3], key[4], slot],
        )
    };
    (
        apply_cdtf(original, &model.with_seed(seed(slots[0]))),
        apply_cdtf(embedded, &model.with_seed(seed(slots[1]))),
    )
}

fn probe<const D: usize>(
    method: Method,
    first: &SvmModel<D>,
    rows: &[[f64; D]],
    labels: &[i8],
    opts: TrainOptions,
) -> Result<ConvexityProbe, String> {
    let second = svm::train(rows, labels, &opts).map_err(|e| e.to_string())?;
    Ok(ConvexityProbe {
        method,
        rows: rows.len(),
        objective_a: first.meta.objective,
        objective_b: second.meta.objective,
        sign_agreement: svm::sign_agreement(first, &second, rows),
        monotone: first.meta.trace_is_monotone() && second.meta.trace_is_monotone(),
        converged: first.meta.converged && second.meta.converged,
        passes: first.meta.passes.max(second.meta.passes),
    })
}

fn run_frame(
    cfg: &ExperimentConfig,
    cell: &CellKey,
    carrier_index: usize,
    carrier: &PreparedCarrier,
    frame: usize,
) -> FrameOutcome {
    let mut out = FrameOutcome {
        tallies: Vec::new(),
        failures: Vec::new(),
        probes: Vec::new(),
    };
    let fail = |method: Option<Method>, message: String| Failure {
        preset: cell.preset.clone(),
        angle_deg: cell.angle_deg,
        kappa: cell.kappa,
        carrier: carrier_index,
        frame: Some(frame),
        method,
        message,
    };
    let layout = &carrier.layout;
    let msg = message_for(cfg.seed, carrier_index, frame, layout.message_len());
    let model = cdtf::preset(&cell.preset)
        .expect("presets are validated")
        .with_angle(cell.angle_deg);
    let key = capture_key(cfg, cell, carrier_index, frame);
    let init_seed = |method: Method| {
        derive_seed(
            cfg.seed,
            &[
                STREAM_INIT,
                key[0],
                key[1],
                key[2],
                key[3],
                key[4],
                method as u64,
            ],
        )
    };

    let visible_methods: Vec<Method> = cfg
        .methods
        .iter()
        .copied()
        .filter(|m| *m != Method::HiddenRatex)
        .collect();
    let mut results: Vec<(Method, Result<RecoveryResult, String>, f64)> = Vec::new();

    if !visible_methods.is_empty() {
        match embed(&carrier.image, &msg, cell.kappa, layout) {
            Err(e) => {
                for m in &visible_methods {
                    results.push((*m, Err(e.to_string()), 0.0));
                }
            }
            Ok(pair) => {
                let (o, e) = capture_pair(
                    &model,
                    cfg.seed,
                    &key,
                    [0, 1],
                    &pair.original,
                    &pair.embedded,
                );
                match block_samples(&o, &e, layout) {
                    Err(err) => {
                        for m in &visible_methods {
                            results.push((*m, Err(err.to_string()), 0.0));
                        }
                    }
                    Ok(samples) => {
                        let opts = cfg.svm.options(Init::Center);
                        for &m in &visible_methods {
                            let start = Instant::now();
                            let r = match m {
                                Method::Naive => {
                                    Ok(naive_from_samples(layout, &samples, cfg.naive_threshold))
                                }
                                Method::TwoStep => two_step_from_samples(layout, &samples, &opts),
                                Method::Oorc => oorc_from_samples(layout, &samples, &opts),
                                Method::HiddenRatex => unreachable!(),
                            };
                            let elapsed = start.elapsed().as_secs_f64();
                            if cfg.convexity_check {
                                let second = cfg.svm.options(Init::Uniform { seed: init_seed(m) });
                                let probed = match r.as_ref().map(|r| &r.calibration) {
                                    Ok(Calibration::TwoStep { poly, svm: first }) => {
                                        let (x, y) = two_step_training_set(layout, &samples, poly);
                                        Some(probe(m, first, &x, &y, second))
                                    }
                                    Ok(Calibration::Oorc { svm: first }) => {
                                        let (x, y) = oorc_training_set(layout, &samples);
                                        Some(probe(m, first, &x, &y, second))
                                    }
                                    _ => None,
                                };
                                match probed {
                                    Some(Ok(p)) => out.probes.push(p),
                                    Some(Err(err)) => out
                                        .failures
                                        .push(fail(Some(m), format!("convexity probe: {err}"))),
                                    None => {}
                                }
                            }
                            results.push((m, r.map_err(|e| e.to_string()), elapsed));
                        }
                    }
                }
            }
        }
    }

    if cfg.methods.contains(&Method::HiddenRatex) {
        let (eq, reference) = carrier
            .equalized
            .as_ref()
            .expect("prepared for hidden ratex");
        let start = Instant::now();
        let r = embed_with(eq, &msg, cell.kappa, layout, RatexMode::Hidden)
            .map_err(|e| e.to_string())
            .and_then(|pair| {
                let (o, e) = capture_pair(
                    &model,
                    cfg.seed,
                    &key,
                    [2, 3],
                    &pair.original,
                    &pair.embedded,
                );
                recover_hidden_ratex(&o, &e, layout, reference, cell.kappa / 2.0)
                    .map_err(|e| e.to_string())
            });
        results.push((Method::HiddenRatex, r, start.elapsed().as_secs_f64()));
    }

    for (m, r, elapsed) in results {
        let mut t = Tally {
            runtime_s: elapsed,
            ..Tally::default()
        };
        match r {
            Ok(r) => {
                t.total = msg.len();
                t.correct = r.correct_bits(&msg);
            }
            Err(e) => {
                t.failures = 1;
                out.failures.push(fail(Some(m), e));
            }
        }
        out.tallies.push((m, t));
    }
    out
}

/// Every (preset, angle, kappa) cell in config order: presets outer, then
/// angles, then kappas.
pub fn cells(cfg: &ExperimentConfig) -> Vec<CellKey> {
    let mut out = Vec::new();
    for p in &cfg.presets {
        for &a in &cfg.angles {
            for &k in &cfg.kappas {
                out.push(CellKey {
                    preset: p.clone(),
                    angle_deg: a,
                    kappa: k,
                });
            }
        }
    }
    out
}

/// Runs the sweep. Failures are recorded per cell and never abort the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<AccuracyReport, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let prepared = prepare(cfg);
    let cells = cells(cfg);

    let mut failures = Vec::new();
    let mut tasks = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        for (k, carrier) in prepared.carriers.iter().enumerate() {
            match carrier {
                Ok(c) => tasks.extend((0..cfg.messages_per_carrier).map(|f| (ci, k, c, f))),
                Err(e) => failures.push(Failure {
                    preset: cell.preset.clone(),
                    angle_deg: cell.angle_deg,
                    kappa: cell.kappa,
                    carrier: k,
                    frame: None,
                    method: None,
                    message: e.clone(),
                }),
            }
        }
    }
    // rayon's indexed collect keeps task order, so merging is deterministic.
    let outcomes: Vec<(usize, FrameOutcome)> = tasks
        .par_iter()
        .map(|&(ci, k, c, f)| (ci, run_frame(cfg, &cells[ci], k, c, f)))
        .collect();

    let mut tallies: BTreeMap<(usize, usize), Tally> = BTreeMap::new();
    let mut probes = Vec::new();
    let method_pos = |m: Method| {
        cfg.methods
            .iter()
            .position(|x| *x == m)
            .expect("configured method")
    };
    for (ci, o) in outcomes {
        for (m, t) in o.tallies {
            let acc = tallies.entry((ci, method_pos(m))).or_default();
            acc.total += t.total;
            acc.correct += t.correct;
            acc.failures += t.failures;
            acc.runtime_s += t.runtime_s;
        }
        failures.extend(o.failures);
        probes.extend(o.probes);
    }

    let mut rows = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let t = tallies.remove(&(ci, mi)).unwrap_or_default();
            rows.push(ReportRow {
                preset: cell.preset.clone(),
                angle_deg: cell.angle_deg,
                kappa: cell.kappa,
                method,
                bits_total: t.total,
                bits_correct: t.correct,
                accuracy: if t.total > 0 {
                    t.correct as f64 / t.total as f64
                } else {
                    0.0
                },
                failures: t.failures,
                runtime_s: t.runtime_s,
            });
        }
    }

    let tol = cfg.svm.tol;
    let (convexity, convexity_violations) = if cfg.convexity_check {
        let summary = ConvexitySummary::from_probes(probes.iter(), tol);
        let bad = probes
            .into_iter()
            .filter(|p| !p.passes_check(tol))
            .collect();
        (Some(summary), bad)
    } else {
        (None, Vec::new())
    };

    Ok(AccuracyReport {
        version: REPORT_VERSION,
        config: cfg.clone(),
        rows,
        failures,
        convexity,
        convexity_violations,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// CSV body with the fixed [`CSV_HEADER`]. Timings are left out so equal
/// runs give identical bytes.
pub fn render_csv(report: &AccuracyReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in &report.rows {
        w.write_record([
            r.preset.clone(),
            r.angle_deg.to_string(),
            r.kappa.to_string(),
            r.method.to_string(),
            r.bits_total.to_string(),
            r.bits_correct.to_string(),
            r.accuracy.to_string(),
            r.failures.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

fn format_signed(v: f64) -> String {
    if v >= 0.0 {
        format!("+{v}")
    } else {
        v.to_string()
    }
}

/// One table per (angle, kappa): presets as rows, methods as columns,
/// accuracies in percent, with an average row.
pub fn render_markdown(report: &AccuracyReport) -> String {
    let cfg = &report.config;
    let mut out = String::new();
    for &angle in &cfg.angles {
        for &kappa in &cfg.kappas {
            let _ = writeln!(
                out,
                "### Angle {angle} deg, intensity {}\n",
                format_signed(kappa)
            );
            let _ = write!(out, "| Accuracy (%) |");
            for m in &cfg.methods {
                let _ = write!(out, " {m} |");
            }
            let _ = write!(out, "\n|---|");
            for _ in &cfg.methods {
                let _ = write!(out, "---:|");
            }
            out.push('\n');
            for preset in &cfg.presets {
                let _ = write!(out, "| {preset} |");
                for &m in &cfg.methods {
                    let cell = report.rows.iter().find(|r| {
                        &r.preset == preset
                            && r.angle_deg == angle
                            && r.kappa == kappa
                            && r.method == m
                    });
                    match cell {
                        Some(r) if r.bits_total > 0 => {
                            let _ = write!(out, " {:.2} |", 100.0 * r.accuracy);
                        }
                        _ => out.push_str(" n/a |"),
                    }
                }
                out.push('\n');
            }
            let _ = write!(out, "| Average |");
            for &m in &cfg.methods {
                match report.table_mean(m, angle, kappa) {
                    Some(a) => {
                        let _ = write!(out, " {:.2} |", 100.0 * a);
                    }
                    None => out.push_str(" n/a |"),
                }
            }
            out.push_str("\n\n");
        }
    }
    let (correct, total) = report.pooled(|_| true);
    let _ = writeln!(out, "Decoded bits: {total} ({correct} correct).");
    if !report.failures.is_empty() {
        let _ = writeln!(out, "Failed decodes: {}.", report.failures.len());
    }
    out
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(bytes)
        .map_err(|e| HarnessError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| HarnessError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report(report: &AccuracyReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let json = serde_json::to_vec_pretty(report).map_err(|e| HarnessError::Report {
        path: dir.join(REPORT_JSON),
        message: e.to_string(),
    })?;
    write_atomic(&dir.join(REPORT_JSON), &json)?;
    write_atomic(&dir.join(REPORT_CSV), render_csv(report).as_bytes())
}

pub fn read_report(dir: &Path) -> Result<AccuracyReport, HarnessError> {
    let path = dir.join(REPORT_JSON);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let report: AccuracyReport = serde_json::from_str(&text).map_err(|e| HarnessError::Report {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if report.version != REPORT_VERSION {
        return Err(HarnessError::Report {
            path,
            message: format!("unsupported report version {}", report.version),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            version: CONFIG_VERSION,
            carriers: vec!["synthetic:0".into(), "synthetic:1".into()],
            synthetic_size: [256, 256],
            grid: GridConfig {
                rows: 8,
                cols: 8,
                ratex_count: 5,
                margin_fraction: 0.1,
            },
            kappas: vec![5.0],
            angles: vec![0.0],
            presets: vec!["identity".into(), "d2c2".into()],
            messages_per_carrier: 2,
            seed: 9,
            methods: Method::ALL.to_vec(),
            output_dir: None,
            naive_threshold: DEFAULT_NAIVE_THRESHOLD,
            svm: SvmConfig::default(),
            convexity_check: true,
        }
    }

    #[test]
    fn seeds_depend_on_every_part() {
        let base = derive_seed(1, &[2, 3]);
        assert_ne!(base, derive_seed(0, &[2, 3]));
        assert_ne!(base, derive_seed(1, &[3, 2]));
        assert_ne!(base, derive_seed(1, &[2, 3, 0]));
        assert_eq!(base, derive_seed(1, &[2, 3]));
        assert_ne!(fnv1a("d1c1"), fnv1a("d1c2"));
    }

    #[test]
    fn messages_are_per_frame() {
        let a = message_for(5, 0, 0, 59);
        assert_eq!(a, message_for(5, 0, 0, 59));
        assert_ne!(a, message_for(5, 0, 1, 59));
        assert_ne!(a, message_for(5, 1, 0, 59));
        let ones = a.bits().iter().filter(|b| **b).count();
        assert!((15..45).contains(&ones));
    }

    #[test]
    fn synthetic_carriers_are_deterministic_and_varied() {
        let a = synthetic_carrier(3, 64, 48);
        assert_eq!(a, synthetic_carrier(3, 64, 48));
        assert_ne!(a, synthetic_carrier(4, 64, 48));
        assert!(a.is_quantized());
        let occupied = a.histogram().iter().filter(|&&c| c > 0).count();
        assert!(occupied > 100, "{occupied} levels");
    }

    #[test]
    fn identity_cell_is_exact_and_tallies_add_up() {
        let report = run_experiment(&small_config()).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        assert_eq!(report.rows.len(), 2 * 4);
        for r in &report.rows {
            assert_eq!(r.bits_total, 2 * 2 * 59);
            assert!(r.bits_correct <= r.bits_total);
            assert_eq!(r.accuracy, r.bits_correct as f64 / r.bits_total as f64);
            if r.preset == "identity" {
                assert_eq!(r.accuracy, 1.0, "{:?}", r.method);
            }
        }
        let conv = report.convexity.unwrap();
        assert_eq!(conv.training_sets, 2 * 2 * 2 * 2);
        assert_eq!(conv.failing, 0, "{:?}", report.convexity_violations);
    }

    #[test]
    fn reports_round_trip_and_csv_is_stable() {
        let mut cfg = small_config();
        cfg.presets = vec!["d1c3".into()];
        cfg.convexity_check = false;
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(render_csv(&a), render_csv(&b));
        let dir = tempfile::tempdir().unwrap();
        write_report(&a, dir.path()).unwrap();
        let back = read_report(dir.path()).unwrap();
        assert_eq!(render_csv(&back), render_csv(&a));
        assert_eq!(
            fs::read_to_string(dir.path().join(REPORT_CSV)).unwrap(),
            render_csv(&a)
        );
        let md = render_markdown(&a);
        assert!(md.contains("| d1c3 |"));
        assert!(md.contains("| Average |"));
    }

    #[test]
    fn bad_carrier_is_recorded_not_fatal() {
        let mut cfg = small_config();
        cfg.carriers.push("/nonexistent/carrier.pgm".into());
        cfg.presets = vec!["identity".into()];
        cfg.convexity_check = false;
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].carrier, 2);
        assert!(report.rows.iter().all(|r| r.accuracy == 1.0));
    }

    fn json_of(cfg: &ExperimentConfig) -> serde_json::Value {
        serde_json::to_value(cfg).unwrap()
    }

    fn config_error(v: serde_json::Value) -> String {
        match ExperimentConfig::from_json(&v.to_string()) {
            Err(HarnessError::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn config_errors_name_the_field() {
        let good = json_of(&small_config());
        assert!(ExperimentConfig::from_json(&good.to_string()).is_ok());

        let mut v = good.clone();
        v["methods"] = serde_json::json!([]);
        assert_eq!(config_error(v), "methods");

        let mut v = good.clone();
        v["kappas"] = serde_json::json!([3.0, -1.0]);
        assert_eq!(config_error(v), "kappas[1]");

        let mut v = good.clone();
        v["kappas"] = serde_json::json!("three");
        assert_eq!(config_error(v), "kappas");

        let mut v = good.clone();
        v["presets"] = serde_json::json!(["d9c9"]);
        assert_eq!(config_error(v), "presets[0]");

        let mut v = good.clone();
        v["grid"]["rows"] = serde_json::json!("8");
        assert_eq!(config_error(v), "grid.rows");

        let mut v = good.clone();
        v["methods"] = serde_json::json!(["oorc", "magic"]);
        assert_eq!(config_error(v), "methods[1]");

        let mut v = good.clone();
        v["colour"] = serde_json::json!(1);
        assert_eq!(config_error(v), "colour");

        let mut v = good.clone();
        v["grid"].as_object_mut().unwrap().remove("cols");
        assert_eq!(config_error(v), "grid.cols");

        let mut v = good;
        v.as_object_mut().unwrap().remove("seed");
        assert_eq!(config_error(v), "seed");
    }
}
