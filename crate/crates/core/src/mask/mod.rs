//! Pixel-level primitives: binary masks, multi-object label maps and the
//! operations the rest of the engine is built from.
//!
//! All buffers are row-major. Label 0 is background; object labels are
//! bounded to the 16-bit range.

mod components;
pub mod io;
mod rle;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use components::connected_components;
pub use rle::RleMask;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MaskError {
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("buffer holds {actual} values, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("malformed runs: {0}")]
    MalformedRuns(String),
    #[error("object id must be in 1..=65535, got {0}")]
    InvalidObjectId(u64),
}

fn check_dims(width: u32, height: u32) -> Result<usize, MaskError> {
    if width == 0 || height == 0 {
        return Err(MaskError::InvalidDimensions { width, height });
    }
    Ok(width as usize * height as usize)
}

fn same_dims(a: (u32, u32), b: (u32, u32)) -> Result<(), MaskError> {
    if a != b {
        return Err(MaskError::DimensionMismatch {
            left_w: a.0,
            left_h: a.1,
            right_w: b.0,
            right_h: b.1,
        });
    }
    Ok(())
}

/// Identity of a tracked object. Never 0, which is reserved for background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u16")]
pub struct ObjectId(u16);

impl ObjectId {
    pub const MAX: u16 = u16::MAX;

    pub fn new(value: u16) -> Result<Self, MaskError> {
        if value == 0 {
            return Err(MaskError::InvalidObjectId(0));
        }
        Ok(Self(value))
    }

    pub fn get(self) -> u16 {
        self.0
    }
}

impl TryFrom<u64> for ObjectId {
    type Error = MaskError;

    fn try_from(value: u64) -> Result<Self, Self::Error> {
        if value == 0 || value > u16::MAX as u64 {
            return Err(MaskError::InvalidObjectId(value));
        }
        Ok(Self(value as u16))
    }
}

impl From<ObjectId> for u16 {
    fn from(id: ObjectId) -> u16 {
        id.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn is_valid_for(&self, width: u32, height: u32) -> bool {
        self.x_min <= self.x_max && self.y_min <= self.y_max && self.x_max < width && self.y_max < height
    }

    pub fn area(&self) -> u64 {
        (self.x_max - self.x_min + 1) as u64 * (self.y_max - self.y_min + 1) as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix0 = self.x_min.max(other.x_min);
        let iy0 = self.y_min.max(other.y_min);
        let ix1 = self.x_max.min(other.x_max);
        let iy1 = self.y_max.min(other.y_max);
        if ix0 > ix1 || iy0 > iy1 {
            return 0.0;
        }
        let inter = (ix1 - ix0 + 1) as u64 * (iy1 - iy0 + 1) as u64;
        inter as f64 / (self.area() + other.area() - inter) as f64
    }
}

/// Binary per-pixel region.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Result<Self, MaskError> {
        let n = check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![false; n],
        })
    }

    pub fn filled(width: u32, height: u32) -> Result<Self, MaskError> {
        let n = check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![true; n],
        })
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        let n = check_dims(width, height)?;
        if bits.len() != n {
            return Err(MaskError::BufferLength {
                expected: n,
                actual: bits.len(),
            });
        }
        Ok(Self { width, height, bits })
    }

    /// Builds a mask from a predicate evaluated at every `(x, y)`.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, MaskError> {
        let mut mask = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                mask.bits[(y * width + x) as usize] = f(x, y);
            }
        }
        Ok(mask)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[(y * self.width + x) as usize] = value;
    }

    /// Number of set pixels.
    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Tightest inclusive box around the set pixels.
    pub fn bounding_box(&self) -> Result<BoundingBox, MaskError> {
        let mut bb: Option<BoundingBox> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let x = i as u32 % self.width;
            let y = i as u32 / self.width;
            bb = Some(match bb {
                None => BoundingBox::new(x, y, x, y),
                Some(b) => BoundingBox::new(b.x_min.min(x), b.y_min, b.x_max.max(x), y),
            });
        }
        bb.ok_or(MaskError::EmptyMask)
    }

    pub fn intersection_area(&self, other: &Mask) -> Result<u64, MaskError> {
        same_dims(self.dims(), other.dims())?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count() as u64)
    }

    pub fn union_area(&self, other: &Mask) -> Result<u64, MaskError> {
        same_dims(self.dims(), other.dims())?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a || **b)
            .count() as u64)
    }

    pub fn union(&self, other: &Mask) -> Result<Mask, MaskError> {
        same_dims(self.dims(), other.dims())?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Ok(Mask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    /// First set pixel in raster order.
    pub fn first_pixel(&self) -> Option<(u32, u32)> {
        self.bits
            .iter()
            .position(|&b| b)
            .map(|i| (i as u32 % self.width, i as u32 / self.width))
    }

    /// Iterates the `(x, y)` coordinates of set pixels in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    pub fn rle_encode(&self) -> RleMask {
        RleMask::encode(self)
    }
}

/// Precedence rule for [`LabelMap::compose`] where both inputs are labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precedence {
    BaseWins,
    OverlayWins,
}

/// Per-pixel object-ID image. Label 0 is background.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<u16>,
}

impl fmt::Debug for LabelMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LabelMap")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("areas", &self.areas())
            .finish()
    }
}

impl LabelMap {
    /// All-background map.
    pub fn new(width: u32, height: u32) -> Result<Self, MaskError> {
        let n = check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            labels: vec![0; n],
        })
    }

    pub fn from_labels(width: u32, height: u32, labels: Vec<u16>) -> Result<Self, MaskError> {
        let n = check_dims(width, height)?;
        if labels.len() != n {
            return Err(MaskError::BufferLength {
                expected: n,
                actual: labels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> u16,
    ) -> Result<Self, MaskError> {
        let mut lm = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                lm.labels[(y * width + x) as usize] = f(x, y);
            }
        }
        Ok(lm)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u16] {
        &mut self.labels
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.labels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, label: u16) {
        self.labels[(y * self.width + x) as usize] = label;
    }

    pub fn is_background(&self) -> bool {
        self.labels.iter().all(|&l| l == 0)
    }

    /// Distinct nonzero labels, ascending.
    pub fn ids(&self) -> Vec<u16> {
        self.areas().into_keys().collect()
    }

    /// Pixel count per nonzero label.
    pub fn areas(&self) -> BTreeMap<u16, u64> {
        let mut out = BTreeMap::new();
        for &l in self.labels.iter().filter(|&&l| l != 0) {
            *out.entry(l).or_insert(0) += 1;
        }
        out
    }

    pub fn contains_label(&self, label: u16) -> bool {
        label != 0 && self.labels.contains(&label)
    }

    /// Mask that is set exactly where the map is background.
    pub fn background(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l == 0).collect(),
        }
    }

    /// Mask that is set wherever any object is labeled.
    pub fn foreground(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l != 0).collect(),
        }
    }

    /// Keeps this map's labels where `mask` is set, background elsewhere.
    pub fn restrict(&self, mask: &Mask) -> Result<LabelMap, MaskError> {
        same_dims(self.dims(), mask.dims())?;
        let labels = self
            .labels
            .iter()
            .zip(&mask.bits)
            .map(|(&l, &m)| if m { l } else { 0 })
            .collect();
        Ok(LabelMap {
            width: self.width,
            height: self.height,
            labels,
        })
    }

    /// Merges two maps pixelwise. Where only one side is labeled it wins;
    /// where both are, `precedence` decides.
    pub fn compose(&self, overlay: &LabelMap, precedence: Precedence) -> Result<LabelMap, MaskError> {
        same_dims(self.dims(), overlay.dims())?;
        let labels = self
            .labels
            .iter()
            .zip(&overlay.labels)
            .map(|(&b, &o)| match (b, o, precedence) {
                (0, o, _) => o,
                (b, 0, _) => b,
                (b, _, Precedence::BaseWins) => b,
                (_, o, Precedence::OverlayWins) => o,
            })
            .collect();
        Ok(LabelMap {
            width: self.width,
            height: self.height,
            labels,
        })
    }

    /// Mask of the pixels carrying `label`.
    pub fn extract(&self, label: u16) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l != 0 && l == label).collect(),
        }
    }

    /// Writes `label` onto every set pixel of `mask`.
    pub fn paint(&mut self, mask: &Mask, label: u16) -> Result<(), MaskError> {
        same_dims(self.dims(), mask.dims())?;
        for (dst, &m) in self.labels.iter_mut().zip(&mask.bits) {
            if m {
                *dst = label;
            }
        }
        Ok(())
    }

    /// Applies `f` to every label, keeping background at 0.
    pub fn relabel(&self, mut f: impl FnMut(u16) -> u16) -> LabelMap {
        LabelMap {
            width: self.width,
            height: self.height,
            labels: self
                .labels
                .iter()
                .map(|&l| if l == 0 { 0 } else { f(l) })
                .collect(),
        }
    }

    /// Relabels objects to 1..k in raster order of their first pixel.
    pub fn canonicalize(&self) -> LabelMap {
        let mut order: BTreeMap<u16, u16> = BTreeMap::new();
        let mut next = 0u16;
        for &l in self.labels.iter().filter(|&&l| l != 0) {
            order.entry(l).or_insert_with(|| {
                next += 1;
                next
            });
        }
        self.relabel(|l| order[&l])
    }
}

/// Mask that is 1 exactly where `lm` is background.
pub fn background_of(lm: &LabelMap) -> Mask {
    lm.background()
}

pub fn restrict(lm: &LabelMap, m: &Mask) -> Result<LabelMap, MaskError> {
    lm.restrict(m)
}

pub fn compose(base: &LabelMap, overlay: &LabelMap, precedence: Precedence) -> Result<LabelMap, MaskError> {
    base.compose(overlay, precedence)
}

pub fn extract(lm: &LabelMap, id: ObjectId) -> Mask {
    lm.extract(id.get())
}

pub fn area(m: &Mask) -> u64 {
    m.area()
}

pub fn bounding_box_of(m: &Mask) -> Result<BoundingBox, MaskError> {
    m.bounding_box()
}

/// Rasterizes possibly-overlapping masks into a label map: larger masks are
/// drawn first so smaller ones stay on top, then labels are renumbered
/// 1..k in raster order of each surviving object's first pixel.
pub fn rasterize_by_area(width: u32, height: u32, masks: &[Mask]) -> Result<LabelMap, MaskError> {
    let mut lm = LabelMap::new(width, height)?;
    let mut order: Vec<usize> = (0..masks.len()).collect();
    // stable: equal areas keep input order
    order.sort_by_key(|&i| std::cmp::Reverse(masks[i].area()));
    for (rank, &i) in order.iter().enumerate() {
        let label = u16::try_from(rank + 1).map_err(|_| MaskError::InvalidObjectId(rank as u64 + 1))?;
        lm.paint(&masks[i], label)?;
    }
    Ok(lm.canonicalize())
}
