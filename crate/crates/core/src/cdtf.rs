//! Simulated camera-display transfer function (CDTF).
//!
//! A displayed gray level `v` is captured as
//! `255 * f_c(A(theta) * d(v / 255))` with power-law display response
//! `d(x) = x^display_gamma`, angular attenuation `A = cos(theta)^falloff_power`
//! and camera response `f_c(x) = x^(1/camera_gamma)`. Additive Gaussian
//! sensor noise is applied after the response, before quantization.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{clamp_level, quantize_level, IntensityImage, MAX_LEVEL};

/// Name of the noiseless identity channel.
pub const IDENTITY_PRESET: &str = "identity";

const CATALOG_TOML: &str = include_str!("../presets.toml");

#[derive(Debug, Error, PartialEq)]
pub enum CdtfError {
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid model parameter {field} = {value}")]
    InvalidParameter { field: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdtfModel {
    pub display_gamma: f64,
    pub angle_deg: f64,
    pub falloff_power: f64,
    pub camera_gamma: f64,
    pub sensor_noise_sigma: f64,
    pub quantize_output: bool,
    pub seed: u64,
}

impl CdtfModel {
    pub fn identity() -> Self {
        Self {
            display_gamma: 1.0,
            angle_deg: 0.0,
            falloff_power: 0.0,
            camera_gamma: 1.0,
            sensor_noise_sigma: 0.0,
            quantize_output: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), CdtfError> {
        let bad = |field, value| Err(CdtfError::InvalidParameter { field, value });
        if !(self.display_gamma > 0.0 && self.display_gamma.is_finite()) {
            return bad("display_gamma", self.display_gamma);
        }
        if !(self.camera_gamma > 0.0 && self.camera_gamma.is_finite()) {
            return bad("camera_gamma", self.camera_gamma);
        }
        if !(self.falloff_power >= 0.0 && self.falloff_power.is_finite()) {
            return bad("falloff_power", self.falloff_power);
        }
        if !(0.0..90.0).contains(&self.angle_deg) {
            return bad("angle_deg", self.angle_deg);
        }
        if !(self.sensor_noise_sigma >= 0.0 && self.sensor_noise_sigma.is_finite()) {
            return bad("sensor_noise_sigma", self.sensor_noise_sigma);
        }
        Ok(())
    }

    pub fn with_angle(self, angle_deg: f64) -> Self {
        Self { angle_deg, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_noise(self, sensor_noise_sigma: f64) -> Self {
        Self {
            sensor_noise_sigma,
            ..self
        }
    }

    pub fn attenuation(&self) -> f64 {
        self.angle_deg.to_radians().cos().powf(self.falloff_power)
    }
}

/// Noiseless response to a displayed gray level.
pub fn forward(value: f64, model: &CdtfModel) -> f64 {
    let d = (clamp_level(value) / MAX_LEVEL).powf(model.display_gamma);
    let x = model.attenuation() * d;
    clamp_level(MAX_LEVEL * x.powf(1.0 / model.camera_gamma))
}

/// Per-pixel [`forward`] plus seeded sensor noise, clamped and optionally
/// quantized. Noise is drawn in row-major pixel order from a ChaCha8 stream
/// seeded with `model.seed`, so equal models give equal captures.
pub fn apply_cdtf(img: &IntensityImage, model: &CdtfModel) -> IntensityImage {
    // Display frames are almost always integral; tabulate those levels.
    let table: Vec<f64> = (0..=255).map(|v| forward(f64::from(v), model)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let sigma = model.sensor_noise_sigma;
    img.map(|v| {
        let clean = if v.fract() == 0.0 {
            table[v as usize]
        } else {
            forward(v, model)
        };
        let noisy = if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            clean + sigma * z
        } else {
            clean
        };
        if model.quantize_output {
            f64::from(quantize_level(noisy))
        } else {
            clamp_level(noisy)
        }
    })
}

#[derive(Debug, Clone, Deserialize)]
struct Catalog {
    version: u32,
    display: Vec<DisplayProfile>,
    camera: Vec<CameraProfile>,
}

#[derive(Debug, Clone, Deserialize)]
struct DisplayProfile {
    id: String,
    display_gamma: f64,
    falloff_power: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct CameraProfile {
    id: String,
    camera_gamma: f64,
    sensor_noise_sigma: f64,
}

fn catalog() -> &'static Catalog {
    static CATALOG: OnceLock<Catalog> = OnceLock::new();
    CATALOG.get_or_init(|| {
        let c: Catalog = toml::from_str(CATALOG_TOML).expect("bundled preset catalog parses");
        assert_eq!(c.version, 1, "unsupported preset catalog version");
        c
    })
}

/// The nine device presets, displays outer, cameras inner.
pub fn preset_names() -> Vec<String> {
    let c = catalog();
    c.display
        .iter()
        .flat_map(|d| {
            c.camera
                .iter()
                .map(move |cam| format!("{}{}", d.id, cam.id))
        })
        .collect()
}

/// Looks up a preset by name. The returned model is frontal (`angle_deg = 0`)
/// with seed 0 and quantized output; callers set angle and seed per run.
pub fn preset(name: &str) -> Result<CdtfModel, CdtfError> {
    if name == IDENTITY_PRESET {
        return Ok(CdtfModel::identity());
    }
    let c = catalog();
    c.display
        .iter()
        .find_map(|d| {
            let cam_id = name.strip_prefix(d.id.as_str())?;
            let cam = c.camera.iter().find(|cam| cam.id == cam_id)?;
            Some(CdtfModel {
                display_gamma: d.display_gamma,
                angle_deg: 0.0,
                falloff_power: d.falloff_power,
                camera_gamma: cam.camera_gamma,
                sensor_noise_sigma: cam.sensor_noise_sigma,
                quantize_output: true,
                seed: 0,
            })
        })
        .ok_or_else(|| CdtfError::UnknownPreset(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gamma_model() -> CdtfModel {
        CdtfModel {
            display_gamma: 2.2,
            angle_deg: 45.0,
            falloff_power: 2.0,
            camera_gamma: 2.2,
            sensor_noise_sigma: 0.0,
            quantize_output: false,
            seed: 0,
        }
    }

    #[test]
    fn fixed_points() {
        for name in preset_names() {
            let m = preset(&name).unwrap();
            assert_eq!(forward(0.0, &m.with_angle(30.0)), 0.0);
            assert_relative_eq!(forward(255.0, &m), 255.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn golden_oblique_value() {
        // 255 * ((cos 45)^2 * (128/255)^2.2)^(1/2.2), evaluated independently.
        assert_relative_eq!(
            forward(128.0, &gamma_model()),
            93.40672676361257,
            epsilon = 1e-9
        );
    }

    #[test]
    fn identity_model_is_quantize() {
        let img = IntensityImage::from_fn_clamped(17, 9, |x, y| x as f64 * 13.3 + y as f64 * 0.7)
            .unwrap();
        assert_eq!(
            apply_cdtf(&img, &CdtfModel::identity()),
            crate::image::quantize(&img)
        );
    }

    #[test]
    fn seeded_noise_is_reproducible_and_calibrated() {
        let img = IntensityImage::filled(256, 256, 128.0).unwrap();
        let m = CdtfModel::identity().with_noise(2.0).with_seed(99);
        let a = apply_cdtf(&img, &m);
        assert_eq!(a, apply_cdtf(&img, &m));
        assert_ne!(a, apply_cdtf(&img, &m.with_seed(100)));
        let mean = a.mean();
        let var = a.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (a.values().len() - 1) as f64;
        let sd = var.sqrt();
        assert!((1.6..=2.4).contains(&sd), "sample sd {sd}");
    }

    #[test]
    fn catalog_contents() {
        let names = preset_names();
        assert_eq!(names.len(), 9);
        let d1c1 = preset("d1c1").unwrap();
        assert_eq!(
            (
                d1c1.display_gamma,
                d1c1.angle_deg,
                d1c1.falloff_power,
                d1c1.camera_gamma,
                d1c1.sensor_noise_sigma
            ),
            (1.8, 0.0, 1.5, 1.8, 0.5)
        );
        let d3c2 = preset("d3c2").unwrap();
        assert_eq!((d3c2.display_gamma, d3c2.falloff_power), (2.5, 2.0));
        assert_eq!((d3c2.camera_gamma, d3c2.sensor_noise_sigma), (2.2, 1.0));
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                assert_ne!(preset(a).unwrap(), preset(b).unwrap());
            }
        }
        assert_eq!(
            preset("bogus"),
            Err(CdtfError::UnknownPreset("bogus".into()))
        );
        assert!(preset("d1").is_err());
    }

    #[test]
    fn validation() {
        assert!(CdtfModel::identity().validate().is_ok());
        assert!(CdtfModel::identity().with_angle(90.0).validate().is_err());
        assert!(CdtfModel::identity().with_noise(-1.0).validate().is_err());
        let bad = CdtfModel {
            camera_gamma: 0.0,
            ..CdtfModel::identity()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn forward_is_strictly_increasing(
            idx in 0usize..9, theta in 0.0f64..80.0, v1 in 0.0f64..254.0, dv in 0.5f64..10.0
        ) {
            let m = preset(&preset_names()[idx]).unwrap().with_angle(theta);
            let v2 = (v1 + dv).min(255.0);
            prop_assert!(forward(v1, &m) < forward(v2, &m));
        }

        #[test]
        fn forward_decreases_with_angle(
            idx in 0usize..9, t1 in 0.0f64..85.0, dt in 0.5f64..4.0, v in 1.0f64..255.0
        ) {
            let m = preset(&preset_names()[idx]).unwrap();
            prop_assert!(forward(v, &m.with_angle(t1)) > forward(v, &m.with_angle(t1 + dt)));
        }

        #[test]
        fn capture_stays_in_range(seed in any::<u64>(), idx in 0usize..9, level in 0.0f64..255.0) {
            let img = IntensityImage::filled(16, 16, level).unwrap();
            let m = preset(&preset_names()[idx]).unwrap().with_seed(seed).with_noise(8.0);
            let out = apply_cdtf(&img, &m);
            prop_assert!(out.values().iter().all(|v| (0.0..=255.0).contains(v)));
        }
    }
}
