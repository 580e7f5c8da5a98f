//! Gray-level images and the binary P5 graymap format.
//!
//! Pixel values are kept as `f64` in `[0, 255]` so the photometric models
//! can stay continuous. Quantization to 8-bit happens at the simulated
//! camera output and at file boundaries.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub const MAX_LEVEL: f64 = 255.0;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("expected {expected} pixel values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("pixel {index} has value {value}, outside [0, 255]")]
    OutOfRange { index: usize, value: f64 },
    #[error("unsupported format: magic {0:?} (only binary P5 graymaps are accepted)")]
    UnsupportedFormat(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported bit depth: maxval {0} (only 255 is accepted)")]
    UnsupportedDepth(u32),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("image is not quantized: pixel {index} has value {value}")]
    NotQuantized { index: usize, value: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A row-major grid of gray levels.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        if values.len() != width * height {
            return Err(ImageError::LengthMismatch {
                expected: width * height,
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=MAX_LEVEL).contains(*v))
        {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image from arbitrary reals, clamping each into `[0, 255]`.
    /// NaN maps to 0.
    pub fn from_fn_clamped(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(clamp_level(f(x, y)));
            }
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Sets a pixel, clamping into range.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.values[y * self.width + x] = clamp_level(value);
    }

    pub fn same_dims(&self, other: &IntensityImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Applies `f` to every pixel; results are clamped into range.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> IntensityImage {
        IntensityImage {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| clamp_level(f(v))).collect(),
        }
    }

    pub fn is_quantized(&self) -> bool {
        self.values.iter().all(|v| v.fract() == 0.0)
    }

    /// 256-bin histogram of the quantized pixel values.
    pub fn histogram(&self) -> [u64; 256] {
        let mut bins = [0u64; 256];
        for &v in &self.values {
            bins[quantize_level(v) as usize] += 1;
        }
        bins
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[inline]
pub fn clamp_level(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, MAX_LEVEL)
    }
}

/// Round-half-up after clamping.
#[inline]
pub fn quantize_level(v: f64) -> u8 {
    (clamp_level(v) + 0.5).floor().min(MAX_LEVEL) as u8
}

pub fn quantize(img: &IntensityImage) -> IntensityImage {
    img.map(|v| f64::from(quantize_level(v)))
}

pub fn encode_pgm(img: &IntensityImage) -> Result<Vec<u8>, ImageError> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.reserve(img.values.len());
    for (index, &value) in img.values.iter().enumerate() {
        if value.fract() != 0.0 {
            return Err(ImageError::NotQuantized { index, value });
        }
        out.push(value as u8);
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<IntensityImage, ImageError> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    let magic = cursor
        .token()
        .ok_or_else(|| ImageError::MalformedHeader("missing magic number".into()))?;
    if magic != b"P5" {
        return Err(ImageError::UnsupportedFormat(
            String::from_utf8_lossy(magic).into_owned(),
        ));
    }
    let width = cursor.number("width")?;
    let height = cursor.number("height")?;
    let maxval = cursor.number("maxval")?;
    if maxval != 255 {
        return Err(ImageError::UnsupportedDepth(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => {
            return Err(ImageError::MalformedHeader(
                "missing whitespace after maxval".into(),
            ))
        }
    }
    let (width, height) = (width as usize, height as usize);
    if width == 0 || height == 0 {
        return Err(ImageError::EmptyDimensions { width, height });
    }
    let expected = width * height;
    let payload = &bytes[cursor.pos..];
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let values = payload[..expected].iter().map(|&b| f64::from(b)).collect();
    IntensityImage::new(width, height, values)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<IntensityImage, ImageError> {
    decode_pgm(&fs::read(path)?)
}

/// Writes a quantized image as P5. The file is written to a sibling temp
/// file first and renamed into place.
pub fn write_image(img: &IntensityImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let bytes = encode_pgm(img)?;
    let path = path.as_ref();
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.persist(path).map_err(|e| ImageError::Io(e.error))?;
    Ok(())
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_ws_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<u32, ImageError> {
        let tok = self
            .token()
            .ok_or_else(|| ImageError::MalformedHeader(format!("missing {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                ImageError::MalformedHeader(format!(
                    "{what} is not a number: {:?}",
                    String::from_utf8_lossy(tok)
                ))
            })
    }
}
