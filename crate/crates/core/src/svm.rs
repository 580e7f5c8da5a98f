//! Linear soft-margin SVM in the radiometric feature space.
//!
//! For a quartic inverse response `g`, the calibrated difference
//! `g(i_o) - g(i_e)` is linear in the feature vector
//! `phi(i_o, i_e) = [i_o^4 - i_e^4, i_o^3 - i_e^3, i_o^2 - i_e^2, i_o - i_e]`,
//! with the constant term cancelling. A separating hyperplane `w.u + b`
//! on these features therefore estimates the calibration coefficients
//! (up to scale) and the bit classifier in one convex problem.
//!
//! The radiometric features are strongly collinear, so they are whitened
//! (mapped to identity second moment) before training, and the bias is
//! handled as an extra constant feature. The problem solved is
//!
//! ```text
//!   min  1/2 (|w~|^2 + b^2) + C * sum_i max(0, 1 - y_i (w~ . x~_i + b))
//! ```
//!
//! whose minimizer is unique. The returned weights are mapped back to the
//! original feature units.
//!
//! The optimizer is a log-barrier path-following method on the dual, the
//! box-constrained QP `min 1/2 |A^T alpha|^2 - sum(alpha)`, `0 <= alpha <= C`,
//! where `A` holds the signed training rows. Each pass centers on the barrier
//! path with damped Newton steps and then shrinks the barrier weight. The
//! Hessian is diagonal plus rank `D + 1`, so a Newton step costs `O(n)`.
//! The dual objective along the central path is non-increasing in the
//! barrier weight, and every iterate is dual feasible, so the primal/dual gap
//! at `w = A^T alpha` certifies convergence.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const MAX_PASSES: usize = 10_000;

/// Value of the constant feature that carries the bias.
const BIAS_FEATURE: f64 = 1.0;
/// Relative eigenvalue floor below which a feature direction is dropped.
const WHITEN_EPS: f64 = 1e-12;
/// Barrier weight reduction per pass.
const BARRIER_SHRINK: f64 = 0.1;
/// Newton steps allowed per centering.
const CENTERING_STEPS: usize = 60;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training data contains a single class")]
    SingleClass,
    #[error("no training samples")]
    Empty,
    #[error("{features} feature vectors but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("non-finite feature in sample {0}")]
    NonFinite(usize),
    #[error("label {label} at index {index} is not -1 or +1")]
    BadLabel { index: usize, label: i8 },
    #[error("regularization and tolerance must be positive and finite")]
    BadParameter,
}

/// `phi(i_o, i_e)` over normalized intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; 4]);

impl FeatureVector {
    pub fn zero() -> Self {
        Self([0.0; 4])
    }

    pub fn mean(items: impl IntoIterator<Item = FeatureVector>) -> Self {
        let mut acc = [0.0; 4];
        let mut n = 0usize;
        for f in items {
            for (a, v) in acc.iter_mut().zip(f.0) {
                *a += v;
            }
            n += 1;
        }
        Self(acc.map(|a| a / n.max(1) as f64))
    }
}

impl From<FeatureVector> for [f64; 4] {
    fn from(f: FeatureVector) -> Self {
        f.0
    }
}

#[inline]
pub fn phi(i_o: f64, i_e: f64) -> FeatureVector {
    let (o2, e2) = (i_o * i_o, i_e * i_e);
    FeatureVector([o2 * o2 - e2 * e2, o2 * i_o - e2 * i_e, o2 - e2, i_o - i_e])
}

/// Starting point of the optimizer, in the dual box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Every dual variable at the middle of its box.
    Center,
    /// Each dual variable drawn uniformly from the inner 90% of its box.
    Uniform { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub c_reg: f64,
    /// Relative duality gap at which training stops.
    pub tol: f64,
    pub max_passes: usize,
    pub init: Init,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            c_reg: DEFAULT_C,
            tol: DEFAULT_TOL,
            max_passes: MAX_PASSES,
            init: Init::Center,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub passes: usize,
    pub converged: bool,
    /// Primal objective at the returned solution.
    pub objective: f64,
    /// Dual objective (maximization form) at the returned solution.
    pub dual_objective: f64,
    pub duality_gap: f64,
    /// Optimized objective, `-dual_objective`, after each pass.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl TrainingMeta {
    /// True if no pass raised the objective beyond rounding noise.
    pub fn trace_is_monotone(&self) -> bool {
        self.objective_trace
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel<const D: usize> {
    #[serde(with = "weights_serde")]
    pub w: [f64; D],
    pub b: f64,
    pub c_reg: f64,
    pub meta: TrainingMeta,
}

mod weights_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const D: usize>(w: &[f64; D], s: S) -> Result<S::Ok, S::Error> {
        w.as_slice().serialize(s)
    }

    pub fn deserialize<'de, De: Deserializer<'de>, const D: usize>(
        d: De,
    ) -> Result<[f64; D], De::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<f64>| serde::de::Error::invalid_length(v.len(), &"weight vector"))
    }
}

impl<const D: usize> SvmModel<D> {
    #[inline]
    pub fn decide(&self, u: &[f64; D]) -> f64 {
        self.w.iter().zip(u).map(|(w, x)| w * x).sum::<f64>() + self.b
    }
}

/// `w . u + b`.
#[inline]
pub fn decide<const D: usize>(model: &SvmModel<D>, u: &[f64; D]) -> f64 {
    model.decide(u)
}

/// Linear map to coordinates with identity second moment. Directions with
/// negligible energy are dropped.
struct Whitener {
    /// `D x D` column-major; column `k` is `v_k / sqrt(lambda_k)` or zero.
    basis: Vec<f64>,
    dim: usize,
}

impl Whitener {
    fn fit<const D: usize>(features: &[[f64; D]]) -> Self {
        let n = features.len() as f64;
        let mut moment = DMatrix::<f64>::zeros(D, D);
        for f in features {
            for i in 0..D {
                for j in 0..=i {
                    moment[(i, j)] += f[i] * f[j] / n;
                }
            }
        }
        symmetrize(&mut moment);
        let eig = moment.symmetric_eigen();
        let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let mut basis = vec![0.0; D * D];
        for k in 0..D {
            let lambda = eig.eigenvalues[k];
            if top > 0.0 && lambda > top * WHITEN_EPS {
                let s = lambda.sqrt();
                for i in 0..D {
                    basis[k * D + i] = eig.eigenvectors[(i, k)] / s;
                }
            }
        }
        Self { basis, dim: D }
    }

    fn transform<const D: usize>(&self, f: &[f64; D]) -> [f64; D] {
        let mut out = [0.0; D];
        for (k, o) in out.iter_mut().enumerate() {
            *o = dot(&self.basis[k * self.dim..(k + 1) * self.dim], f);
        }
        out
    }

    fn weights_back<const D: usize>(&self, w: &[f64]) -> [f64; D] {
        let mut out = [0.0; D];
        for (k, wk) in w.iter().enumerate() {
            let col = &self.basis[k * self.dim..(k + 1) * self.dim];
            for (o, b) in out.iter_mut().zip(col) {
                *o += wk * b;
            }
        }
        out
    }
}

/// Copies the lower triangle onto the upper one.
fn symmetrize(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Merged, whitened training rows with the label folded in. Row `k` has
/// loss `upper[k] * max(0, 1 - rows[k] . w)` in the primal and dual box
/// `[0, upper[k]]`.
struct Problem {
    rows: Vec<f64>,
    upper: Vec<f64>,
    stride: usize,
}

impl Problem {
    fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.stride..(k + 1) * self.stride]
    }

    /// `A^T x`.
    fn combine(&self, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.stride];
        for (r, &xk) in self.rows.chunks_exact(self.stride).zip(x) {
            for (vi, ri) in v.iter_mut().zip(r) {
                *vi += xk * ri;
            }
        }
        v
    }

    fn primal(&self, w: &[f64]) -> f64 {
        let loss: f64 = self
            .rows
            .chunks_exact(self.stride)
            .zip(&self.upper)
            .map(|(r, c)| c * (1.0 - dot(r, w)).max(0.0))
            .sum();
        0.5 * dot(w, w) + loss
    }

    /// Minimization-form dual `1/2 |v|^2 - sum(alpha)` with `v = A^T alpha`.
    fn dual_min(v: &[f64], alpha: &[f64]) -> f64 {
        0.5 * dot(v, v) - alpha.iter().sum::<f64>()
    }

    /// Barrier term `-sum(ln alpha + ln(u - alpha))`, or infinity outside
    /// the open box.
    fn barrier(&self, alpha: &[f64]) -> f64 {
        let mut b = 0.0;
        for (&a, &u) in alpha.iter().zip(&self.upper) {
            if !(a > 0.0 && a < u) {
                return f64::INFINITY;
            }
            b -= a.ln() + (u - a).ln();
        }
        b
    }

    /// Damped Newton on `dual_min + mu * barrier` until the decrement is
    /// negligible. `v` tracks `A^T alpha`.
    fn center(&self, alpha: &mut [f64], v: &mut Vec<f64>, mu: f64) {
        let n = alpha.len();
        let d = self.stride;
        let mut grad = vec![0.0; n];
        let mut hinv = vec![0.0; n];
        for _ in 0..CENTERING_STEPS {
            for k in 0..n {
                let (a, u) = (alpha[k], self.upper[k]);
                let (lo, hi) = (a, u - a);
                grad[k] = dot(self.row(k), v) - 1.0 - mu / lo + mu / hi;
                hinv[k] = 1.0 / (mu / (lo * lo) + mu / (hi * hi));
            }
            // (H + A A^T)^{-1} g = H^{-1} g - H^{-1} A M^{-1} A^T H^{-1} g,
            // with M = I + A^T H^{-1} A.
            let mut m = DMatrix::<f64>::identity(d, d);
            let mut atg = vec![0.0; d];
            for k in 0..n {
                let r = self.row(k);
                let hk = hinv[k];
                for i in 0..d {
                    atg[i] += r[i] * hk * grad[k];
                    for j in 0..=i {
                        m[(i, j)] += hk * r[i] * r[j];
                    }
                }
            }
            symmetrize(&mut m);
            let Some(chol) = m.cholesky() else {
                return;
            };
            let y = chol.solve(&DMatrix::from_column_slice(d, 1, &atg));
            let step: Vec<f64> = (0..n)
                .map(|k| -hinv[k] * (grad[k] - dot(self.row(k), y.as_slice())))
                .collect();
            let decrement = -dot(&grad, &step);
            if decrement.is_nan() || decrement <= 0.0 {
                return;
            }
            let dv = self.combine(&step);
            let mut t_max = f64::INFINITY;
            for k in 0..n {
                if step[k] < 0.0 {
                    t_max = t_max.min(-alpha[k] / step[k]);
                } else if step[k] > 0.0 {
                    t_max = t_max.min((self.upper[k] - alpha[k]) / step[k]);
                }
            }
            let phi =
                |alpha: &[f64], v: &[f64]| Self::dual_min(v, alpha) + mu * self.barrier(alpha);
            let phi0 = phi(alpha, v);
            let mut t = (0.99 * t_max).min(1.0);
            let mut trial = alpha.to_vec();
            let mut trial_v = v.clone();
            loop {
                for k in 0..n {
                    trial[k] = alpha[k] + t * step[k];
                }
                for i in 0..d {
                    trial_v[i] = v[i] + t * dv[i];
                }
                if phi(&trial, &trial_v) <= phi0 - 0.25 * t * decrement {
                    break;
                }
                t *= 0.5;
                if t < 1e-14 {
                    return;
                }
            }
            alpha.copy_from_slice(&trial);
            *v = trial_v;
            if 0.5 * decrement <= 1e-12 * (1.0 + phi0.abs()) {
                return;
            }
        }
    }
}

pub fn train<const D: usize>(
    features: &[[f64; D]],
    labels: &[i8],
    opts: &TrainOptions,
) -> Result<SvmModel<D>, SvmError> {
    if features.len() != labels.len() {
        return Err(SvmError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        });
    }
    if features.is_empty() {
        return Err(SvmError::Empty);
    }
    if !(opts.c_reg > 0.0 && opts.c_reg.is_finite() && opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(SvmError::BadParameter);
    }
    if let Some(i) = features
        .iter()
        .position(|f| f.iter().any(|v| !v.is_finite()))
    {
        return Err(SvmError::NonFinite(i));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l != 1 && l != -1) {
        return Err(SvmError::BadLabel { index, label });
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(SvmError::SingleClass);
    }

    // Quantized pixel data repeats heavily; identical rows are merged into one
    // row with a proportionally larger box, which leaves the optimum unchanged.
    let c = opts.c_reg;
    let whitener = Whitener::fit(features);
    let stride = D + 1;
    let mut index: HashMap<([u64; D], i8), usize> = HashMap::new();
    let mut prob = Problem {
        rows: Vec::new(),
        upper: Vec::new(),
        stride,
    };
    for (f, &l) in features.iter().zip(labels) {
        let key = (f.map(|v| (v + 0.0).to_bits()), l);
        let k = *index.entry(key).or_insert_with(|| {
            let y = f64::from(l);
            prob.rows.extend(whitener.transform(f).map(|v| y * v));
            prob.rows.push(y * BIAS_FEATURE);
            prob.upper.push(0.0);
            prob.upper.len() - 1
        });
        prob.upper[k] += c;
    }
    let n = prob.upper.len();

    let mut alpha: Vec<f64> = match opts.init {
        Init::Center => prob.upper.iter().map(|u| 0.5 * u).collect(),
        Init::Uniform { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prob.upper
                .iter()
                .map(|u| u * rng.gen_range(0.05..0.95))
                .collect()
        }
    };
    let mut v = prob.combine(&alpha);
    // Start the barrier weight at the scale of the initial gap.
    let gap0 = prob.primal(&v) + Problem::dual_min(&v, &alpha);
    let mut mu = (gap0 / (2 * n) as f64).max(f64::MIN_POSITIVE);

    let mut trace = Vec::new();
    let mut passes = 0;
    let mut converged = false;
    let (mut primal, mut dual_min) = (f64::INFINITY, f64::INFINITY);
    while passes < opts.max_passes {
        passes += 1;
        prob.center(&mut alpha, &mut v, mu);
        primal = prob.primal(&v);
        dual_min = Problem::dual_min(&v, &alpha);
        trace.push(dual_min);
        if primal + dual_min <= opts.tol * primal.abs() {
            converged = true;
            break;
        }
        mu *= BARRIER_SHRINK;
    }

    Ok(SvmModel {
        w: whitener.weights_back(&v[..D]),
        b: v[D] * BIAS_FEATURE,
        c_reg: c,
        meta: TrainingMeta {
            passes,
            converged,
            objective: primal,
            dual_objective: -dual_min,
            duality_gap: primal + dual_min,
            objective_trace: trace,
        },
    })
}

/// Fraction of rows on which two models agree in decision sign
/// (`score > 0` counts as positive).
pub fn sign_agreement<const D: usize>(a: &SvmModel<D>, b: &SvmModel<D>, rows: &[[f64; D]]) -> f64 {
    if rows.is_empty() {
        return 1.0;
    }
    let same = rows
        .iter()
        .filter(|u| (a.decide(u) > 0.0) == (b.decide(u) > 0.0))
        .count();
    same as f64 / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn separable(n: usize) -> (Vec<[f64; 4]>, Vec<i8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let kappa = 5.0 / 255.0;
        (0..n)
            .map(|i| {
                let y = if i % 2 == 0 { 1 } else { -1 };
                let d = f64::from(y) * kappa * rng.gen_range(0.9..1.1);
                ([0.0, 0.0, 0.0, d], y)
            })
            .unzip()
    }

    /// Overlapping classes built from noisy pixel pairs.
    fn noisy_pixels(n: usize, seed: u64) -> (Vec<[f64; 4]>, Vec<i8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let positive = i % 2 == 0;
                let base: f64 = rng.gen_range(0.05..0.9);
                let kappa = if positive { 0.01 } else { 0.0 };
                let io = base + rng.gen_range(-0.006..0.006);
                let ie = (base + kappa).powf(0.9) + rng.gen_range(-0.006..0.006);
                (phi(io, ie).0, if positive { 1 } else { -1 })
            })
            .unzip()
    }

    #[test]
    fn phi_identities_and_golden() {
        assert_eq!(phi(0.3, 0.3), FeatureVector::zero());
        assert_eq!(phi(1.0, 0.0), FeatureVector([1.0; 4]));
        // 0.5^k - 0.4^k, evaluated independently.
        let want = [
            0.036899999999999995,
            0.060999999999999985,
            0.08999999999999997,
            0.09999999999999998,
        ];
        for (g, w) in phi(0.5, 0.4).0.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn separable_clusters_have_zero_hinge_loss() {
        let (x, y) = separable(400);
        let m = train(&x, &y, &TrainOptions::default()).unwrap();
        assert!(m.meta.converged);
        for (u, &l) in x.iter().zip(&y) {
            assert!(f64::from(l) * m.decide(u) >= 1.0 - 1e-4);
        }
    }

    #[test]
    fn flipped_labels_negate_decisions() {
        let (x, y) = noisy_pixels(3000, 1);
        let flipped: Vec<i8> = y.iter().map(|l| -l).collect();
        let a = train(&x, &y, &TrainOptions::default()).unwrap();
        let b = train(&x, &flipped, &TrainOptions::default()).unwrap();
        let agree = x
            .iter()
            .filter(|u| (b.decide(u) > 0.0) == (-a.decide(u) > 0.0))
            .count();
        assert!(agree as f64 / x.len() as f64 >= 0.999);
    }

    #[test]
    fn distinct_initializations_reach_the_same_optimum() {
        let (x, y) = noisy_pixels(4000, 2);
        let opts = TrainOptions::default();
        let a = train(&x, &y, &opts).unwrap();
        let b = train(
            &x,
            &y,
            &TrainOptions {
                init: Init::Uniform { seed: 11 },
                ..opts
            },
        )
        .unwrap();
        assert!(a.meta.converged && b.meta.converged);
        let rel = (a.meta.objective - b.meta.objective).abs() / a.meta.objective;
        assert!(rel <= 10.0 * opts.tol, "relative objective gap {rel}");
        assert!(sign_agreement(&a, &b, &x) >= 0.999);
        assert!(a.meta.trace_is_monotone() && b.meta.trace_is_monotone());
    }

    #[test]
    fn classifier_absorbs_a_quartic_response() {
        // Captured = f(displayed), with g = f^-1 a known quartic; bits add
        // kappa before f.
        let g = |c: f64| 0.2 * c + 0.3 * c * c + 0.5 * c.powi(4);
        let f = |d: f64| {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if g(mid) < d {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let kappa = 4.0 / 255.0;
        let (x, y): (Vec<[f64; 4]>, Vec<i8>) = (0..2000)
            .map(|i| {
                let d = 0.02 + 0.95 * (i / 2) as f64 / 1000.0;
                let bit = i % 2 == 0;
                let e = if bit { d + kappa } else { d };
                (phi(f(d), f(e)).0, if bit { 1 } else { -1 })
            })
            .unzip();
        let m = train(&x, &y, &TrainOptions::default()).unwrap();
        let hits = x
            .iter()
            .zip(&y)
            .filter(|(u, &l)| (m.decide(u) > 0.0) == (l > 0))
            .count();
        assert!(hits as f64 / x.len() as f64 >= 0.99, "{hits}");
    }

    #[test]
    fn decide_is_affine() {
        let (x, y) = noisy_pixels(500, 4);
        let m = train(&x, &y, &TrainOptions::default()).unwrap();
        assert_eq!(m.decide(&[0.0; 4]), m.b);
        let (u1, u2) = (x[0], x[1]);
        let sum = [u1[0] + u2[0], u1[1] + u2[1], u1[2] + u2[2], u1[3] + u2[3]];
        assert!((m.decide(&sum) - (m.decide(&u1) + m.decide(&u2) - m.b)).abs() < 1e-9);
    }

    #[test]
    fn scaling_features_preserves_decisions() {
        let (x, y) = noisy_pixels(2000, 5);
        let a = train(&x, &y, &TrainOptions::default()).unwrap();
        for s in [0.01, 7.5, 300.0] {
            let xs: Vec<[f64; 4]> = x.iter().map(|u| u.map(|v| v * s)).collect();
            let b = train(&xs, &y, &TrainOptions::default()).unwrap();
            let agree = x
                .iter()
                .zip(&xs)
                .filter(|(u, us)| (a.decide(u) > 0.0) == (b.decide(us) > 0.0))
                .count();
            assert_eq!(agree, x.len(), "scale {s}");
        }
    }

    #[test]
    fn input_validation() {
        let opts = TrainOptions::default();
        assert_eq!(
            train(&[[1.0], [2.0]], &[1, 1], &opts).unwrap_err(),
            SvmError::SingleClass
        );
        assert_eq!(
            train(&[[f64::NAN], [2.0]], &[1, -1], &opts).unwrap_err(),
            SvmError::NonFinite(0)
        );
        assert_eq!(train::<1>(&[], &[], &opts).unwrap_err(), SvmError::Empty);
        assert!(matches!(
            train(&[[1.0], [2.0]], &[1, 0], &opts),
            Err(SvmError::BadLabel { index: 1, label: 0 })
        ));
        assert!(matches!(
            train(&[[1.0]], &[1, -1], &opts),
            Err(SvmError::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn phi_is_antisymmetric(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (p, q) = (phi(a, b).0, phi(b, a).0);
            for k in 0..4 {
                prop_assert_eq!(p[k], -q[k]);
            }
        }

        #[test]
        fn objective_never_increases(seed in 0u64..40) {
            let (x, y) = noisy_pixels(600, seed);
            let m = train(&x, &y, &TrainOptions { init: Init::Uniform { seed }, ..Default::default() }).unwrap();
            prop_assert!(m.meta.trace_is_monotone());
        }
    }
}
