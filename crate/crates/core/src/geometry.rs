//! Box mathematics: IoU, augmentation transforms with exact inverses, and
//! consensus-ranked non-maximum suppression. No pixel data is touched here.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest and largest scale factor accepted for a `Scale` augmentation.
pub const MIN_SCALE: f64 = 0.25;
pub const MAX_SCALE: f64 = 4.0;

/// A clamped box narrower or shorter than this (in pixels) is discarded.
pub const MIN_BOX_SIDE: f64 = 1.0;

/// IoU threshold above which NMS treats two boxes as redundant.
pub const DEFAULT_NMS_IOU: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]: coordinates must be finite with x1 < x2 and y1 < y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("box collapsed to {width:.3}x{height:.3} px after clamping to the image")]
    DegenerateBox { width: f64, height: f64 },
    #[error("no candidate boxes to suppress")]
    EmptyCandidates,
    #[error("NMS IoU threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("scale factor {0} outside [{MIN_SCALE}, {MAX_SCALE}]")]
    ScaleOutOfRange(f64),
    #[error("image dimensions must be at least 1x1, got {0}x{1}")]
    ZeroDims(u32, u32),
    #[error("unknown augmentation `{0}` (expected identity, hflip or scale:<factor>)")]
    UnknownAugmentation(String),
}

/// Axis-aligned box in absolute pixel coordinates covering `[x1, x2) x [y1, y2)`.
///
/// Construction validates that all coordinates are finite and that the box
/// has strictly positive width and height. Serializes as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(GeometryError::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from two arbitrary corners, swapping coordinates so that
    /// `x1 <= x2` and `y1 <= y2` before validation.
    pub fn from_corners(xa: f64, ya: f64, xb: f64, yb: f64) -> Result<Self, GeometryError> {
        Self::new(xa.min(xb), ya.min(yb), xa.max(xb), ya.max(yb))
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Whether the box lies entirely inside `[0, W] x [0, H]`.
    pub fn within(&self, dims: ImageDims) -> bool {
        self.x1 >= 0.0
            && self.y1 >= 0.0
            && self.x2 <= f64::from(dims.width)
            && self.y2 <= f64::from(dims.height)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::ZeroDims(width, height));
        }
        Ok(Self { width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// The whole frame as a box.
    pub fn full_box(&self) -> BBox {
        BBox {
            x1: 0.0,
            y1: 0.0,
            x2: f64::from(self.width),
            y2: f64::from(self.height),
        }
    }
}

impl fmt::Display for ImageDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// An invertible image-space transform applied before querying the
/// vision-language model. Written as `identity`, `hflip` or `scale:<factor>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Augmentation {
    Identity,
    HorizontalFlip,
    Scale(f64),
}

impl Augmentation {
    pub fn scale(factor: f64) -> Result<Self, GeometryError> {
        if !(MIN_SCALE..=MAX_SCALE).contains(&factor) {
            return Err(GeometryError::ScaleOutOfRange(factor));
        }
        Ok(Augmentation::Scale(factor))
    }

    /// Identity, horizontal flip, and an up- and down-scaled view.
    pub fn default_set() -> Vec<Augmentation> {
        vec![
            Augmentation::Identity,
            Augmentation::HorizontalFlip,
            Augmentation::Scale(1.25),
            Augmentation::Scale(0.75),
        ]
    }

    /// Dimensions of the augmented image for a source image of `dims`.
    /// Returns `None` when scaling would round a side down to zero.
    pub fn output_dims(&self, dims: ImageDims) -> Option<ImageDims> {
        match *self {
            Augmentation::Identity | Augmentation::HorizontalFlip => Some(dims),
            Augmentation::Scale(f) => {
                let w = (f64::from(dims.width) * f).round();
                let h = (f64::from(dims.height) * f).round();
                if w < 1.0 || h < 1.0 {
                    None
                } else {
                    Some(ImageDims { width: w as u32, height: h as u32 })
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        match *self {
            Augmentation::Scale(f) if !(MIN_SCALE..=MAX_SCALE).contains(&f) => {
                Err(GeometryError::ScaleOutOfRange(f))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Augmentation::Identity => write!(f, "identity"),
            Augmentation::HorizontalFlip => write!(f, "hflip"),
            Augmentation::Scale(s) => write!(f, "scale:{s}"),
        }
    }
}

impl FromStr for Augmentation {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "identity" | "id" => Ok(Augmentation::Identity),
            "hflip" | "flip" | "horizontal-flip" => Ok(Augmentation::HorizontalFlip),
            _ => {
                let factor = t
                    .strip_prefix("scale:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| GeometryError::UnknownAugmentation(s.to_string()))?;
                Augmentation::scale(factor)
            }
        }
    }
}

impl From<Augmentation> for String {
    fn from(a: Augmentation) -> Self {
        a.to_string()
    }
}

impl TryFrom<String> for Augmentation {
    type Error = GeometryError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Maps `b` from the source frame (of size `dims`) into the augmented frame.
pub fn forward_box(aug: Augmentation, b: &BBox, dims: ImageDims) -> BBox {
    match aug {
        Augmentation::Identity => *b,
        Augmentation::HorizontalFlip => {
            let w = f64::from(dims.width);
            BBox { x1: w - b.x2, y1: b.y1, x2: w - b.x1, y2: b.y2 }
        }
        Augmentation::Scale(f) => BBox {
            x1: b.x1 * f,
            y1: b.y1 * f,
            x2: b.x2 * f,
            y2: b.y2 * f,
        },
    }
}

/// Maps `b` from the augmented frame back into the original frame of size
/// `original_dims`.
pub fn inverse_box(aug: Augmentation, b: &BBox, original_dims: ImageDims) -> BBox {
    match aug {
        // flipping is its own inverse
        Augmentation::Identity | Augmentation::HorizontalFlip => forward_box(aug, b, original_dims),
        Augmentation::Scale(f) => BBox {
            x1: b.x1 / f,
            y1: b.y1 / f,
            x2: b.x2 / f,
            y2: b.y2 / f,
        },
    }
}

/// Clips `b` to `[0, W] x [0, H]`. Fails with `DegenerateBox` when the
/// clipped box is less than one pixel wide or tall.
pub fn clamp_box(b: &BBox, dims: ImageDims) -> Result<BBox, GeometryError> {
    let w = f64::from(dims.width);
    let h = f64::from(dims.height);
    let x1 = b.x1.clamp(0.0, w);
    let x2 = b.x2.clamp(0.0, w);
    let y1 = b.y1.clamp(0.0, h);
    let y2 = b.y2.clamp(0.0, h);
    if x2 - x1 < MIN_BOX_SIDE || y2 - y1 < MIN_BOX_SIDE {
        return Err(GeometryError::DegenerateBox { width: x2 - x1, height: y2 - y1 });
    }
    Ok(BBox { x1, y1, x2, y2 })
}

/// A box proposal tagged with the index of the augmentation that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcedBox {
    pub bbox: BBox,
    pub source_index: usize,
}

/// A proposal in the original frame together with its agreement score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub bbox: BBox,
    pub source_index: usize,
    /// Sum of IoU against every other candidate in the same set.
    pub consensus: f64,
}

/// Scores every candidate by the sum of its IoU with all other candidates.
/// The output keeps input order.
pub fn score_candidates(candidates: &[SourcedBox]) -> Vec<ScoredCandidate> {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let consensus = candidates
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| iou(&c.bbox, &o.bbox))
                .sum();
            ScoredCandidate { bbox: c.bbox, source_index: c.source_index, consensus }
        })
        .collect()
}

// Consensus values that differ only by summation round-off must tie, so
// ranking compares them on a 1e-9 grid.
fn consensus_key(c: f64) -> i64 {
    (c * 1e9).round() as i64
}

/// Orders candidates by consensus descending, then by lower source index.
/// The sort is stable, so fully tied candidates keep their input order.
pub fn rank_candidates(candidates: &mut [ScoredCandidate]) {
    candidates.sort_by(|a, b| {
        consensus_key(b.consensus)
            .cmp(&consensus_key(a.consensus))
            .then_with(|| a.source_index.cmp(&b.source_index))
    });
}

/// Greedy non-maximum suppression over consensus-ranked candidates.
///
/// Candidates are scored, ranked, and kept unless their IoU with an already
/// kept box exceeds `iou_threshold`. Survivors are returned in keep order.
pub fn consensus_nms(
    candidates: &[SourcedBox],
    iou_threshold: f64,
) -> Result<Vec<ScoredCandidate>, GeometryError> {
    if candidates.is_empty() {
        return Err(GeometryError::EmptyCandidates);
    }
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(GeometryError::BadThreshold(iou_threshold));
    }
    let mut ranked = score_candidates(candidates);
    rank_candidates(&mut ranked);

    let mut kept: Vec<ScoredCandidate> = Vec::with_capacity(ranked.len());
    for cand in ranked {
        if kept.iter().all(|k| iou(&k.bbox, &cand.bbox) <= iou_threshold) {
            kept.push(cand);
        }
    }
    Ok(kept)
}

/// Total order on scored candidates used when a single best one is needed.
pub fn best_candidate(candidates: &[ScoredCandidate]) -> Option<ScoredCandidate> {
    let mut sorted = candidates.to_vec();
    rank_candidates(&mut sorted);
    sorted.first().copied()
}
