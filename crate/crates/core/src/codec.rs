//! Block-grid layout, additive message embedding and ratex patches.
//!
//! A frame is cut into a `rows x cols` grid. A few blocks are reserved as
//! ratex (radiometric calibration texture) patches holding a full-range
//! horizontal ramp; every other block carries one message bit. A 1-bit adds
//! `kappa` gray levels to its block in the embedded frame.
//!
//! Within a ratex block the embedded frame adds `kappa` to alternating
//! two-pixel horizontal stripes (even stripes), so a single original /
//! embedded pair provides labelled training pixels of both classes across
//! the whole intensity ramp.

use std::fmt;

use thiserror::Error;

use crate::image::{clamp_level, IntensityImage, MAX_LEVEL};

/// Height in pixels of one ratex training stripe.
pub const RATEX_STRIPE_HEIGHT: usize = 2;

pub const DEFAULT_MARGIN_FRACTION: f64 = 0.1;

/// Smallest admissible block edge, in pixels.
const MIN_BLOCK_EDGE: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("grid {rows}x{cols} cannot hold {ratex} ratex blocks plus at least one message block")]
    TooFewBlocks {
        rows: usize,
        cols: usize,
        ratex: usize,
    },
    #[error("at least one ratex block is required")]
    NoRatex,
    #[error("blocks of {block_w}x{block_h} px are below the 2x2 minimum")]
    DegenerateBlocks { block_w: usize, block_h: usize },
    #[error("margin fraction {0} is outside [0, 0.5)")]
    BadMargin(f64),
    #[error("message has {actual} bits but the layout carries {expected}")]
    MessageLength { expected: usize, actual: usize },
    #[error("kappa must be finite and non-negative, got {0}")]
    BadKappa(f64),
    #[error("image is {actual_w}x{actual_h} but the layout expects {expected_w}x{expected_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },
    #[error("block {0} has an empty interior after margin removal")]
    EmptyInterior(usize),
    #[error("at least one message is required")]
    NoMessages,
    #[error("invalid message string: {0}")]
    BadMessageString(String),
}

/// Pixel rectangle `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    /// The rectangle with `round(margin * w)` columns and `round(margin * h)`
    /// rows removed from each side.
    pub fn interior(&self, margin_fraction: f64) -> Rect {
        let tx = trim(self.w, margin_fraction);
        let ty = trim(self.h, margin_fraction);
        Rect {
            x: self.x + tx,
            y: self.y + ty,
            w: self.w.saturating_sub(2 * tx),
            h: self.h.saturating_sub(2 * ty),
        }
    }
}

fn trim(edge: usize, margin_fraction: f64) -> usize {
    (edge as f64 * margin_fraction + 0.5).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    width: usize,
    height: usize,
    rows: usize,
    cols: usize,
    regions: Vec<Rect>,
    ratex: Vec<usize>,
    is_ratex: Vec<bool>,
    margin_fraction: f64,
}

impl GridLayout {
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn margin_fraction(&self) -> f64 {
        self.margin_fraction
    }
    pub fn block_count(&self) -> usize {
        self.regions.len()
    }
    pub fn region(&self, block: usize) -> Rect {
        self.regions[block]
    }
    pub fn regions(&self) -> &[Rect] {
        &self.regions
    }
    /// Ratex block indices in assignment order.
    pub fn ratex_indices(&self) -> &[usize] {
        &self.ratex
    }
    pub fn is_ratex(&self, block: usize) -> bool {
        self.is_ratex[block]
    }
    /// Number of blocks carrying message bits.
    pub fn message_len(&self) -> usize {
        self.regions.len() - self.ratex.len()
    }
    /// Indices of message-carrying blocks in row-major order; the i-th bit
    /// of a message lives in the i-th entry.
    pub fn message_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.regions.len()).filter(move |&b| !self.is_ratex[b])
    }

    fn check_image(&self, img: &IntensityImage) -> Result<(), CodecError> {
        if img.width() != self.width || img.height() != self.height {
            return Err(CodecError::DimensionMismatch {
                expected_w: self.width,
                expected_h: self.height,
                actual_w: img.width(),
                actual_h: img.height(),
            });
        }
        Ok(())
    }
}

/// Partitions a `width x height` image into a block grid.
///
/// Remainder pixels go to the last row and column. Ratex blocks take the
/// four corners first, then the top edge left to right, then the bottom
/// edge, the left and right edges, and finally the remaining blocks in
/// row-major order.
pub fn layout_grid(
    width: usize,
    height: usize,
    rows: usize,
    cols: usize,
    ratex_count: usize,
    margin_fraction: f64,
) -> Result<GridLayout, CodecError> {
    if !(0.0..0.5).contains(&margin_fraction) {
        return Err(CodecError::BadMargin(margin_fraction));
    }
    if ratex_count == 0 {
        return Err(CodecError::NoRatex);
    }
    if rows * cols < ratex_count + 1 {
        return Err(CodecError::TooFewBlocks {
            rows,
            cols,
            ratex: ratex_count,
        });
    }
    let block_w = width / cols;
    let block_h = height / rows;
    if block_w < MIN_BLOCK_EDGE || block_h < MIN_BLOCK_EDGE {
        return Err(CodecError::DegenerateBlocks { block_w, block_h });
    }

    let mut regions = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let y = r * block_h;
        let h = if r + 1 == rows { height - y } else { block_h };
        for c in 0..cols {
            let x = c * block_w;
            let w = if c + 1 == cols { width - x } else { block_w };
            regions.push(Rect { x, y, w, h });
        }
    }

    let ratex = ratex_order(rows, cols)
        .into_iter()
        .take(ratex_count)
        .collect::<Vec<_>>();
    let mut is_ratex = vec![false; rows * cols];
    for &b in &ratex {
        is_ratex[b] = true;
    }

    Ok(GridLayout {
        width,
        height,
        rows,
        cols,
        regions,
        ratex,
        is_ratex,
        margin_fraction,
    })
}

fn ratex_order(rows: usize, cols: usize) -> Vec<usize> {
    let idx = |r: usize, c: usize| r * cols + c;
    let mut order = Vec::with_capacity(rows * cols);
    let mut seen = vec![false; rows * cols];
    let mut push = |b: usize, order: &mut Vec<usize>| {
        if !seen[b] {
            seen[b] = true;
            order.push(b);
        }
    };
    for b in [
        idx(0, 0),
        idx(0, cols - 1),
        idx(rows - 1, 0),
        idx(rows - 1, cols - 1),
    ] {
        push(b, &mut order);
    }
    for c in 1..cols.saturating_sub(1) {
        push(idx(0, c), &mut order);
    }
    for c in 1..cols.saturating_sub(1) {
        push(idx(rows - 1, c), &mut order);
    }
    for r in 1..rows.saturating_sub(1) {
        push(idx(r, 0), &mut order);
    }
    for r in 1..rows.saturating_sub(1) {
        push(idx(r, cols - 1), &mut order);
    }
    for b in 0..rows * cols {
        push(b, &mut order);
    }
    order
}

/// An ordered sequence of message bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMessage {
    bits: Vec<bool>,
}

impl BitMessage {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            bits: vec![false; len],
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Parses `len` bits from either a raw bit string prefixed with `0b`
    /// or a hex string (optional `0x` prefix). Hex digits are read MSB
    /// first; any padding bits beyond `len` must be zero.
    pub fn parse(s: &str, len: usize) -> Result<Self, CodecError> {
        let s = s.trim();
        if let Some(raw) = s.strip_prefix("0b") {
            Self::from_bit_str(raw, len)
        } else {
            Self::from_hex(s.strip_prefix("0x").unwrap_or(s), len)
        }
    }

    pub fn from_bit_str(s: &str, len: usize) -> Result<Self, CodecError> {
        let bits = s
            .chars()
            .filter(|c| *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(CodecError::BadMessageString(format!(
                    "unexpected character {other:?} in bit string"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if bits.len() != len {
            return Err(CodecError::BadMessageString(format!(
                "bit string has {} bits, expected {len}",
                bits.len()
            )));
        }
        Ok(Self { bits })
    }

    pub fn from_hex(s: &str, len: usize) -> Result<Self, CodecError> {
        let digits = len.div_ceil(4);
        if s.len() != digits {
            return Err(CodecError::BadMessageString(format!(
                "hex string has {} digits, expected {digits} for {len} bits",
                s.len()
            )));
        }
        let mut bits = Vec::with_capacity(digits * 4);
        for c in s.chars() {
            let d = c.to_digit(16).ok_or_else(|| {
                CodecError::BadMessageString(format!("unexpected character {c:?} in hex string"))
            })?;
            for shift in (0..4).rev() {
                bits.push((d >> shift) & 1 == 1);
            }
        }
        if bits[len..].iter().any(|&b| b) {
            return Err(CodecError::BadMessageString(
                "non-zero padding bits after the last message bit".into(),
            ));
        }
        bits.truncate(len);
        Ok(Self { bits })
    }

    /// Hex rendering, MSB first, zero padded to a whole digit.
    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(4)
            .map(|chunk| {
                let d = chunk
                    .iter()
                    .chain(std::iter::repeat(&false))
                    .take(4)
                    .fold(0u32, |acc, &b| (acc << 1) | u32::from(b));
                char::from_digit(d, 16).unwrap()
            })
            .collect()
    }

    pub fn to_bit_string(&self) -> String {
        self.bits
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }
}

impl fmt::Display for BitMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Whether ratex blocks are drawn as visible ramps or left as carrier
/// content (hidden-ratex protocol).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatexMode {
    Visible,
    Hidden,
}

#[derive(Debug, Clone)]
pub struct FramePair {
    pub original: IntensityImage,
    pub embedded: IntensityImage,
    pub kappa: f64,
    pub layout: GridLayout,
    pub truth: BitMessage,
    /// Message blocks where more than half the pixels clip at 255.
    pub saturated_blocks: Vec<usize>,
}

/// Ramp value of column `c` in a block `w` pixels wide.
#[inline]
pub fn ramp_value(c: usize, w: usize) -> f64 {
    if w <= 1 {
        return 0.0;
    }
    (MAX_LEVEL * c as f64 / (w - 1) as f64 + 0.5).floor()
}

/// True when row `y` (relative to the block top) belongs to a stripe that
/// receives `+kappa` in the embedded frame.
#[inline]
pub fn is_positive_stripe(y_in_block: usize) -> bool {
    (y_in_block / RATEX_STRIPE_HEIGHT).is_multiple_of(2)
}

/// Ramp patches for every ratex block, in `layout.ratex_indices()` order.
pub fn ratex_fill(layout: &GridLayout) -> Vec<IntensityImage> {
    layout
        .ratex_indices()
        .iter()
        .map(|&b| {
            let r = layout.region(b);
            IntensityImage::from_fn_clamped(r.w, r.h, |x, _| ramp_value(x, r.w))
                .expect("layout blocks are at least 2x2")
        })
        .collect()
}

pub fn embed(
    carrier: &IntensityImage,
    msg: &BitMessage,
    kappa: f64,
    layout: &GridLayout,
) -> Result<FramePair, CodecError> {
    embed_with(carrier, msg, kappa, layout, RatexMode::Visible)
}

pub fn embed_with(
    carrier: &IntensityImage,
    msg: &BitMessage,
    kappa: f64,
    layout: &GridLayout,
    mode: RatexMode,
) -> Result<FramePair, CodecError> {
    layout.check_image(carrier)?;
    if msg.len() != layout.message_len() {
        return Err(CodecError::MessageLength {
            expected: layout.message_len(),
            actual: msg.len(),
        });
    }
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(CodecError::BadKappa(kappa));
    }

    let mut original = carrier.clone();
    if mode == RatexMode::Visible {
        for &b in layout.ratex_indices() {
            let r = layout.region(b);
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    original.set(x, y, ramp_value(x - r.x, r.w));
                }
            }
        }
    }

    let mut embedded = original.clone();
    let mut saturated_blocks = Vec::new();
    for (bit, block) in msg.bits().iter().zip(layout.message_blocks()) {
        if !bit {
            continue;
        }
        let r = layout.region(block);
        let mut clipped = 0usize;
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                let v = original.get(x, y) + kappa;
                if v > MAX_LEVEL {
                    clipped += 1;
                }
                embedded.set(x, y, clamp_level(v));
            }
        }
        if kappa > 0.0 && 2 * clipped > r.area() {
            saturated_blocks.push(block);
        }
    }
    if mode == RatexMode::Visible {
        for &b in layout.ratex_indices() {
            let r = layout.region(b);
            for y in (r.y..r.y + r.h).filter(|y| is_positive_stripe(y - r.y)) {
                for x in r.x..r.x + r.w {
                    embedded.set(x, y, original.get(x, y) + kappa);
                }
            }
        }
    }
    if !saturated_blocks.is_empty() {
        log::warn!(
            "kappa {kappa} saturates more than half of blocks {:?}",
            saturated_blocks
        );
    }

    Ok(FramePair {
        original,
        embedded,
        kappa,
        layout: layout.clone(),
        truth: msg.clone(),
        saturated_blocks,
    })
}

/// Display frame order: original, embedded(msg 1), original, embedded(msg 2), ...
pub fn make_sequence(
    carrier: &IntensityImage,
    msgs: &[BitMessage],
    kappa: f64,
    layout: &GridLayout,
) -> Result<Vec<IntensityImage>, CodecError> {
    if msgs.is_empty() {
        return Err(CodecError::NoMessages);
    }
    let mut frames = Vec::with_capacity(2 * msgs.len());
    for msg in msgs {
        let pair = embed(carrier, msg, kappa, layout)?;
        frames.push(pair.original);
        frames.push(pair.embedded);
    }
    Ok(frames)
}

/// Known ground truth for the interior pixels of a ratex block.
#[derive(Debug, Clone, PartialEq)]
pub struct RatexTruth {
    /// `true` for pixels on `+kappa` stripes.
    pub labels: Vec<bool>,
    /// Ramp value displayed in the original frame.
    pub displayed: Vec<f64>,
}

/// Interior pixel pairs of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSamples {
    pub block: usize,
    pub original: Vec<f64>,
    pub embedded: Vec<f64>,
    pub ratex: Option<RatexTruth>,
}

impl BlockSamples {
    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.original
            .iter()
            .copied()
            .zip(self.embedded.iter().copied())
    }
}

/// Collects `(i_o, i_e)` interior pixel pairs per block, margins excluded.
pub fn block_samples(
    original: &IntensityImage,
    embedded: &IntensityImage,
    layout: &GridLayout,
) -> Result<Vec<BlockSamples>, CodecError> {
    layout.check_image(original)?;
    layout.check_image(embedded)?;
    (0..layout.block_count())
        .map(|b| {
            let outer = layout.region(b);
            let inner = outer.interior(layout.margin_fraction());
            if inner.area() == 0 {
                return Err(CodecError::EmptyInterior(b));
            }
            let mut s = BlockSamples {
                block: b,
                original: Vec::with_capacity(inner.area()),
                embedded: Vec::with_capacity(inner.area()),
                ratex: layout.is_ratex(b).then(|| RatexTruth {
                    labels: Vec::with_capacity(inner.area()),
                    displayed: Vec::with_capacity(inner.area()),
                }),
            };
            for y in inner.y..inner.y + inner.h {
                for x in inner.x..inner.x + inner.w {
                    s.original.push(original.get(x, y));
                    s.embedded.push(embedded.get(x, y));
                    if let Some(t) = s.ratex.as_mut() {
                        t.labels.push(is_positive_stripe(y - outer.y));
                        t.displayed.push(ramp_value(x - outer.x, outer.w));
                    }
                }
            }
            Ok(s)
        })
        .collect()
}
