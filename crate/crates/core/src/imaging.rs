//! Pixel-level operations: RGB images, augmentation of pixels, Set-of-Mark
//! rendering and binary mask (de)serialization.

use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ColorType, ExtendedColorType, ImageEncoder, ImageFormat};
use thiserror::Error;

use crate::geometry::{Augmentation, BBox, ImageDims};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("failed to read image {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to decode image: {0}")]
    Decode(#[from] image::ImageError),
    #[error("pixel buffer has {actual} bytes, expected {expected} for {dims}")]
    BufferSize { dims: ImageDims, expected: usize, actual: usize },
    #[error("scaling {dims} by {factor} rounds a side to zero")]
    ScaleTooSmall { dims: ImageDims, factor: f64 },
    #[error("bad mask format: {0}")]
    BadMaskFormat(String),
    #[error("image has zero width or height")]
    Empty,
}

/// Row-major 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    dims: ImageDims,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image").field("dims", &self.dims).finish_non_exhaustive()
    }
}

impl Image {
    pub fn from_raw(dims: ImageDims, pixels: Vec<u8>) -> Result<Self, ImagingError> {
        let expected = dims.pixel_count() * 3;
        if pixels.len() != expected {
            return Err(ImagingError::BufferSize { dims, expected, actual: pixels.len() });
        }
        Ok(Self { dims, pixels })
    }

    /// An image filled with a single color.
    pub fn solid(dims: ImageDims, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(dims.pixel_count() * 3).collect();
        Self { dims, pixels }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, ImagingError> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| ImagingError::Read { path: path.display().to_string(), source })?;
        Self::from_dynamic(img)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ImagingError> {
        Self::from_dynamic(image::load_from_memory(bytes)?)
    }

    fn from_dynamic(img: image::DynamicImage) -> Result<Self, ImagingError> {
        let rgb = img.to_rgb8();
        let dims = ImageDims::new(rgb.width(), rgb.height()).map_err(|_| ImagingError::Empty)?;
        Ok(Self { dims, pixels: rgb.into_raw() })
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.index(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.index(x, y);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.dims.width as usize + x as usize) * 3
    }

    pub fn to_png(&self) -> Vec<u8> {
        encode_png(&self.pixels, self.dims, ExtendedColorType::Rgb8)
    }
}

fn encode_png(buf: &[u8], dims: ImageDims, color: ExtendedColorType) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(buf, dims.width, dims.height, color)
        .expect("in-memory PNG encoding of a validated buffer cannot fail");
    out
}

/// Per-pixel `{0, 1}` segmentation mask, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    dims: ImageDims,
    bits: Vec<u8>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("dims", &self.dims)
            .field("area", &self.area())
            .finish()
    }
}

impl BinaryMask {
    pub fn zeros(dims: ImageDims) -> Self {
        Self { dims, bits: vec![0; dims.pixel_count()] }
    }

    /// Builds a mask from `{0, 1}` values. Any other value is rejected.
    pub fn from_bits(dims: ImageDims, bits: Vec<u8>) -> Result<Self, ImagingError> {
        if bits.len() != dims.pixel_count() {
            return Err(ImagingError::BufferSize {
                dims,
                expected: dims.pixel_count(),
                actual: bits.len(),
            });
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(ImagingError::BadMaskFormat("mask values must be 0 or 1".into()));
        }
        Ok(Self { dims, bits })
    }

    pub fn from_fn(dims: ImageDims, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dims.pixel_count());
        for y in 0..dims.height {
            for x in 0..dims.width {
                bits.push(u8::from(f(x, y)));
            }
        }
        Self { dims, bits }
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.dims.width as usize + x as usize] == 1
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.bits.iter().map(|&b| u64::from(b)).sum()
    }

    /// Tight integer bounding box of the foreground, if any.
    pub fn bounding_box(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        for y in 0..self.dims.height {
            for x in 0..self.dims.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        if x0 == u32::MAX {
            return None;
        }
        BBox::new(f64::from(x0), f64::from(y0), f64::from(x1), f64::from(y1)).ok()
    }
}

/// Encodes a mask as a single-channel 8-bit PNG (0 -> 0, 1 -> 255).
pub fn mask_encode(mask: &BinaryMask) -> Vec<u8> {
    let gray: Vec<u8> = mask.bits.iter().map(|&b| b * 255).collect();
    encode_png(&gray, mask.dims, ExtendedColorType::L8)
}

/// Decodes a single-channel 8-bit PNG; values >= 128 become foreground.
pub fn mask_decode(bytes: &[u8]) -> Result<BinaryMask, ImagingError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| ImagingError::BadMaskFormat(format!("not a readable PNG: {e}")))?;
    if img.color() != ColorType::L8 {
        return Err(ImagingError::BadMaskFormat(format!(
            "expected 8-bit single-channel grayscale, got {:?}",
            img.color()
        )));
    }
    let gray = img.into_luma8();
    let dims = ImageDims::new(gray.width(), gray.height()).map_err(|_| ImagingError::Empty)?;
    let bits = gray.into_raw().into_iter().map(|v| u8::from(v >= 128)).collect();
    Ok(BinaryMask { dims, bits })
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask, ImagingError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| {
        ImagingError::BadMaskFormat(format!("cannot read {}: {e}", path.display()))
    })?;
    mask_decode(&bytes)
}

/// Foreground = pixels whose centers `(px + 0.5, py + 0.5)` fall inside the
/// half-open box.
pub fn box_fill_mask(b: &BBox, dims: ImageDims) -> BinaryMask {
    let (x0, x1) = center_span(b.x1(), b.x2(), dims.width);
    let (y0, y1) = center_span(b.y1(), b.y2(), dims.height);
    BinaryMask::from_fn(dims, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
}

// Pixel indices `p` with `lo <= p + 0.5 < hi`, as a half-open range clipped
// to `[0, limit)`.
fn center_span(lo: f64, hi: f64, limit: u32) -> (u32, u32) {
    let clip = |v: f64| v.clamp(0.0, f64::from(limit)) as u32;
    (clip((lo - 0.5).ceil()), clip((hi - 0.5).ceil()))
}

/// Applies an augmentation to the pixels. `Scale` uses bilinear resampling
/// with pixel-center alignment.
pub fn apply_augmentation(img: &Image, aug: Augmentation) -> Result<Image, ImagingError> {
    match aug {
        Augmentation::Identity => Ok(img.clone()),
        Augmentation::HorizontalFlip => {
            let ImageDims { width, height } = img.dims;
            let mut out = img.clone();
            for y in 0..height {
                for x in 0..width {
                    out.put(width - 1 - x, y, img.get(x, y));
                }
            }
            Ok(out)
        }
        Augmentation::Scale(factor) => {
            let out_dims = aug
                .output_dims(img.dims)
                .ok_or(ImagingError::ScaleTooSmall { dims: img.dims, factor })?;
            Ok(resize_bilinear(img, out_dims))
        }
    }
}

/// Bilinear resize. Output pixel centers are mapped back to source
/// coordinates with `src = (dst + 0.5) * in / out - 0.5`, clamped to the
/// image, and channel values are rounded half-up.
pub fn resize_bilinear(img: &Image, out: ImageDims) -> Image {
    let src = img.dims;
    let sx = f64::from(src.width) / f64::from(out.width);
    let sy = f64::from(src.height) / f64::from(out.height);
    let taps = |o: u32, ratio: f64, n: u32| -> (u32, u32, f64) {
        let s = ((f64::from(o) + 0.5) * ratio - 0.5).clamp(0.0, f64::from(n - 1));
        let i0 = s.floor() as u32;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - f64::from(i0))
    };
    let cols: Vec<_> = (0..out.width).map(|x| taps(x, sx, src.width)).collect();
    let mut pixels = Vec::with_capacity(out.pixel_count() * 3);
    for y in 0..out.height {
        let (y0, y1, fy) = taps(y, sy, src.height);
        for &(x0, x1, fx) in &cols {
            let (p00, p10, p01, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
            for c in 0..3 {
                let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
                let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image { dims: out, pixels }
}

/// Visual style for Set-of-Mark overlays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkStyle {
    pub outline_width_px: u32,
    pub palette: Vec<[u8; 3]>,
}

impl Default for MarkStyle {
    fn default() -> Self {
        Self {
            outline_width_px: 3,
            palette: vec![
                [230, 25, 75],
                [60, 180, 75],
                [255, 225, 25],
                [0, 130, 200],
                [245, 130, 48],
                [145, 30, 180],
                [70, 240, 240],
                [240, 50, 230],
            ],
        }
    }
}

const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;
const TAG_PAD: u32 = 2;

// 5x7 bitmaps for '0'..='9'; bit 4 is the leftmost column.
const DIGITS: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
];

/// Inclusive pixel rectangle covered by a box under the pixel-center rule.
/// Always at least one pixel.
fn pixel_rect(b: &BBox, dims: ImageDims) -> (u32, u32, u32, u32) {
    let (x0, x1) = center_span(b.x1(), b.x2(), dims.width);
    let (y0, y1) = center_span(b.y1(), b.y2(), dims.height);
    let x0 = x0.min(dims.width - 1);
    let y0 = y0.min(dims.height - 1);
    (x0, y0, x1.saturating_sub(1).max(x0), y1.saturating_sub(1).max(y0))
}

fn label_ink(bg: [u8; 3]) -> [u8; 3] {
    let luma = 299 * u32::from(bg[0]) + 587 * u32::from(bg[1]) + 114 * u32::from(bg[2]);
    if luma > 128_000 {
        [0, 0, 0]
    } else {
        [255, 255, 255]
    }
}

/// Renders numbered Set-of-Mark boxes over a copy of `img`.
///
/// Box `k` is outlined in `palette[k % len]` and tagged with `k + 1` in a
/// filled label at its top-left corner. Outlines are drawn first, then all
/// labels, so a later outline never hides an earlier label.
pub fn render_som(img: &Image, boxes: &[BBox], style: &MarkStyle) -> Image {
    let mut out = img.clone();
    let dims = img.dims;
    let width = style.outline_width_px.max(1);
    let color = |k: usize| style.palette[k % style.palette.len()];

    for (k, b) in boxes.iter().enumerate() {
        let (left, top, right, bottom) = pixel_rect(b, dims);
        for y in top..=bottom {
            for x in left..=right {
                let edge = (x - left).min(right - x).min(y - top).min(bottom - y);
                if edge < width {
                    out.put(x, y, color(k));
                }
            }
        }
    }

    for (k, b) in boxes.iter().enumerate() {
        let (left, top, _, _) = pixel_rect(b, dims);
        let label = (k + 1).to_string();
        let tag_w = label.len() as u32 * (GLYPH_W + 1) - 1 + 2 * TAG_PAD;
        let tag_h = GLYPH_H + 2 * TAG_PAD;
        // shift the tag back inside the frame when it would overflow
        let tx = left.min(dims.width.saturating_sub(tag_w));
        let ty = top.min(dims.height.saturating_sub(tag_h));
        let bg = color(k);
        let ink = label_ink(bg);
        for y in ty..(ty + tag_h).min(dims.height) {
            for x in tx..(tx + tag_w).min(dims.width) {
                out.put(x, y, bg);
            }
        }
        for (i, ch) in label.bytes().enumerate() {
            let glyph = &DIGITS[usize::from(ch - b'0')];
            let gx0 = tx + TAG_PAD + i as u32 * (GLYPH_W + 1);
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits & (0x10 >> col) == 0 {
                        continue;
                    }
                    let (x, y) = (gx0 + col, ty + TAG_PAD + row as u32);
                    if x < dims.width && y < dims.height {
                        out.put(x, y, ink);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn dims(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    fn gradient(w: u32, h: u32) -> Image {
        let d = dims(w, h);
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                px.extend_from_slice(&[(x * 17 % 256) as u8, (y * 31 % 256) as u8, ((x + y) * 7 % 256) as u8]);
            }
        }
        Image::from_raw(d, px).unwrap()
    }

    #[test]
    fn identity_and_double_flip() {
        let img = gradient(7, 5);
        assert_eq!(apply_augmentation(&img, Augmentation::Identity).unwrap(), img);
        let once = apply_augmentation(&img, Augmentation::HorizontalFlip).unwrap();
        assert_ne!(once, img);
        assert_eq!(once.get(0, 2), img.get(6, 2));
        let twice = apply_augmentation(&once, Augmentation::HorizontalFlip).unwrap();
        assert_eq!(twice, img);
    }

    #[test]
    fn scale_dims_and_errors() {
        let img = gradient(10, 8);
        let up = apply_augmentation(&img, Augmentation::Scale(2.0)).unwrap();
        assert_eq!(up.dims(), dims(20, 16));
        let tiny = Image::solid(dims(1, 1), [9, 9, 9]);
        assert!(matches!(
            apply_augmentation(&tiny, Augmentation::Scale(0.25)),
            Err(ImagingError::ScaleTooSmall { .. })
        ));
    }

    #[test]
    fn bilinear_keeps_constant_images_constant() {
        let img = Image::solid(dims(9, 6), [12, 200, 77]);
        for f in [0.25, 0.75, 1.25, 3.0] {
            let out = apply_augmentation(&img, Augmentation::Scale(f)).unwrap();
            assert!(out.pixels().chunks(3).all(|p| p == [12, 200, 77]));
        }
    }

    #[test]
    fn bilinear_interpolates_midpoints() {
        // 2x1 black/white upscaled to 4x1: centers map to -0.25, 0.25, 0.75, 1.25
        let img = Image::from_raw(dims(2, 1), vec![0, 0, 0, 255, 255, 255]).unwrap();
        let out = resize_bilinear(&img, dims(4, 1));
        let reds: Vec<u8> = out.pixels().chunks(3).map(|p| p[0]).collect();
        // 0.25 * 255 = 63.75 -> 64, 0.75 * 255 = 191.25 -> 191
        assert_eq!(reds, vec![0, 64, 191, 255]);
    }

    #[test]
    fn mask_round_trips() {
        let d = dims(4, 4);
        let zero = BinaryMask::zeros(d);
        assert_eq!(mask_decode(&mask_encode(&zero)).unwrap(), zero);
        let checker = BinaryMask::from_fn(d, |x, y| (x + y) % 2 == 0);
        assert_eq!(mask_decode(&mask_encode(&checker)).unwrap(), checker);
    }

    #[test]
    fn mask_decode_threshold() {
        let gray = image::GrayImage::from_raw(2, 1, vec![200, 10]).unwrap();
        let mut png = Vec::new();
        gray.write_to(&mut Cursor::new(&mut png), ImageFormat::Png).unwrap();
        let m = mask_decode(&png).unwrap();
        assert!(m.get(0, 0));
        assert!(!m.get(1, 0));
    }

    #[test]
    fn mask_decode_rejects_color_and_16bit() {
        let rgb = Image::solid(dims(2, 2), [255, 255, 255]).to_png();
        assert!(matches!(mask_decode(&rgb), Err(ImagingError::BadMaskFormat(_))));

        let g16 = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 2, vec![0u16, 65535, 0, 0]).unwrap();
        let mut png = Vec::new();
        g16.write_to(&mut Cursor::new(&mut png), ImageFormat::Png).unwrap();
        assert!(matches!(mask_decode(&png), Err(ImagingError::BadMaskFormat(_))));

        assert!(matches!(mask_decode(b"not a png"), Err(ImagingError::BadMaskFormat(_))));
    }

    #[test]
    fn mask_from_bits_validates() {
        assert!(BinaryMask::from_bits(dims(2, 2), vec![0, 1, 2, 0]).is_err());
        assert!(BinaryMask::from_bits(dims(2, 2), vec![0, 1, 1]).is_err());
    }

    #[test]
    fn box_fill_examples() {
        let d = dims(4, 4);
        let full = box_fill_mask(&d.full_box(), d);
        assert_eq!(full.area(), 16);

        let m = box_fill_mask(&BBox::new(0.0, 0.0, 2.0, 2.0).unwrap(), d);
        assert_eq!(m.area(), 4);
        for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            assert!(m.get(x, y));
        }

        // centers at 0.5 and 2.5 are on the boundary: [0.5, 2.5) keeps 0.5 and 1.5
        let m = box_fill_mask(&BBox::new(0.5, 0.5, 2.5, 2.5).unwrap(), d);
        let brute = BinaryMask::from_fn(d, |x, y| {
            let (cx, cy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            (0.5..2.5).contains(&cx) && (0.5..2.5).contains(&cy)
        });
        assert_eq!(m, brute);
        assert_eq!(m.area(), 4);
        assert!(m.get(0, 0) && m.get(1, 1) && !m.get(2, 2));
    }

    #[test]
    fn mask_bounding_box() {
        let d = dims(8, 8);
        let m = box_fill_mask(&BBox::new(2.0, 3.0, 5.0, 7.0).unwrap(), d);
        assert_eq!(m.bounding_box(), Some(BBox::new(2.0, 3.0, 5.0, 7.0).unwrap()));
        assert_eq!(BinaryMask::zeros(d).bounding_box(), None);
    }

    #[test]
    fn som_empty_is_copy_and_input_untouched() {
        let img = gradient(30, 20);
        let before = img.clone();
        assert_eq!(render_som(&img, &[], &MarkStyle::default()), img);
        let out = render_som(&img, &[BBox::new(2.0, 2.0, 20.0, 15.0).unwrap()], &MarkStyle::default());
        assert_eq!(img, before);
        assert_eq!(out.dims(), img.dims());
        assert_ne!(out, img);
    }

    #[test]
    fn som_palette_and_label_ink() {
        let style = MarkStyle::default();
        assert!(style.palette.len() >= 8);
        for (i, a) in style.palette.iter().enumerate() {
            for b in &style.palette[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(label_ink([255, 225, 25]), [0, 0, 0]);
        assert_eq!(label_ink([0, 130, 200]), [255, 255, 255]);
    }

    #[test]
    fn som_outline_footprint_on_black() {
        // box far from the tag-covered corner region: count only outline pixels
        // outside the tag rectangle
        let d = dims(100, 100);
        let img = Image::solid(d, [0, 0, 0]);
        let b = BBox::new(20.0, 30.0, 70.0, 80.0).unwrap();
        let out = render_som(&img, &[b], &MarkStyle::default());
        let changed = |x: u32, y: u32| out.get(x, y) != [0, 0, 0];
        // outline ring of a 50x50 box with 3 px width: 50*50 - 44*44
        let tag = |x: u32, y: u32| (20..29).contains(&x) && (30..41).contains(&y);
        let mut ring = 0;
        for y in 0..100 {
            for x in 0..100 {
                let inside = (20..70).contains(&x) && (30..80).contains(&y);
                let inner = (23..67).contains(&x) && (33..77).contains(&y);
                if inside && !inner {
                    ring += 1;
                    assert!(changed(x, y), "outline pixel ({x},{y}) unchanged");
                } else if !inside {
                    assert!(!changed(x, y), "pixel ({x},{y}) outside the box changed");
                } else if !tag(x, y) {
                    assert!(!changed(x, y), "interior pixel ({x},{y}) changed");
                }
            }
        }
        assert_eq!(ring, 50 * 50 - 44 * 44);
    }

    #[test]
    fn som_tag_is_shifted_into_frame() {
        let d = dims(20, 20);
        let img = Image::solid(d, [0, 0, 0]);
        let out = render_som(&img, &[BBox::new(15.0, 15.0, 20.0, 20.0).unwrap()], &MarkStyle::default());
        // tag is 9x11, so it must start at (11, 9) and cover (11, 9)
        assert_eq!(out.get(11, 9), MarkStyle::default().palette[0]);
    }
}
