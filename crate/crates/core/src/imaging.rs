//! Raster primitives: gray/binary images, blur, Otsu, morphology, connected
//! components and ink profiles.

use std::collections::VecDeque;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use thiserror::Error;

use crate::geometry::BBox;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image must be at least 1x1, got {width}x{height}")]
    ZeroSized { width: u32, height: u32 },
    #[error("sample buffer holds {got} values, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("kernel dimensions must be odd and >= 1, got {width}x{height}")]
    EvenKernel { width: u32, height: u32 },
    #[error("crop {bbox:?} exceeds image bounds {width}x{height}")]
    CropOutOfBounds { bbox: BBox, width: u32, height: u32 },
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
}

/// 8-bit gray raster, row-major. 0 is black ink, 255 is white paper.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: u32,
    height: u32,
    samples: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, samples: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::ZeroSized { width, height });
        }
        let expected = width as usize * height as usize;
        if samples.len() != expected {
            return Err(ImagingError::ShapeMismatch { expected, got: samples.len() });
        }
        Ok(Self { width, height, samples })
    }

    /// Uniform image filled with `value`.
    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, ImagingError> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn white(width: u32, height: u32) -> Result<Self, ImagingError> {
        Self::filled(width, height, 255)
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.samples[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.samples[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn crop(&self, bbox: &BBox) -> Result<GrayImage, ImagingError> {
        if !bbox.fits_within(self.width, self.height) {
            return Err(ImagingError::CropOutOfBounds { bbox: *bbox, width: self.width, height: self.height });
        }
        let mut out = Vec::with_capacity(bbox.area() as usize);
        for y in bbox.y0()..bbox.y1() {
            let row = y as usize * self.width as usize;
            out.extend_from_slice(&self.samples[row + bbox.x0() as usize..row + bbox.x1() as usize]);
        }
        GrayImage::new(bbox.width(), bbox.height(), out)
    }

    pub fn to_image(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width, self.height, self.samples.clone())
            .expect("shape checked at construction")
    }

    pub fn from_image(img: &image::GrayImage) -> Result<Self, ImagingError> {
        Self::new(img.width(), img.height(), img.as_raw().clone())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImagingError> {
        let mut buf = Cursor::new(Vec::new());
        self.to_image().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    /// Decode PNG bytes (gray or color) into gray.
    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImagingError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        to_gray(&img)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImagingError> {
        self.to_image().save_with_format(path, ImageFormat::Png)?;
        Ok(())
    }

    pub fn open(path: &Path) -> Result<Self, ImagingError> {
        let img = image::open(path)?;
        to_gray(&img)
    }
}

/// Boolean ink mask, row-major. `true` marks ink.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: u32,
    height: u32,
    ink: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: u32, height: u32, ink: Vec<bool>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::ZeroSized { width, height });
        }
        let expected = width as usize * height as usize;
        if ink.len() != expected {
            return Err(ImagingError::ShapeMismatch { expected, got: ink.len() });
        }
        Ok(Self { width, height, ink })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self, ImagingError> {
        Self::new(width, height, vec![false; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn ink(&self) -> &[bool] {
        &self.ink
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.ink[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.ink[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn ink_count(&self) -> usize {
        self.ink.iter().filter(|&&v| v).count()
    }

    /// Tight box around all ink, `None` for an empty mask.
    pub fn ink_bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != u32::MAX).then(|| BBox::new(x0 as i64, y0 as i64, x1 as i64, y1 as i64).expect("non-empty"))
    }

    pub fn crop(&self, bbox: &BBox) -> Result<BinaryImage, ImagingError> {
        if !bbox.fits_within(self.width, self.height) {
            return Err(ImagingError::CropOutOfBounds { bbox: *bbox, width: self.width, height: self.height });
        }
        let mut out = Vec::with_capacity(bbox.area() as usize);
        for y in bbox.y0()..bbox.y1() {
            let row = y as usize * self.width as usize;
            out.extend_from_slice(&self.ink[row + bbox.x0() as usize..row + bbox.x1() as usize]);
        }
        BinaryImage::new(bbox.width(), bbox.height(), out)
    }

    /// Black ink on white paper.
    pub fn to_gray(&self) -> GrayImage {
        let samples = self.ink.iter().map(|&v| if v { 0 } else { 255 }).collect();
        GrayImage::new(self.width, self.height, samples).expect("same shape")
    }
}

/// Luma conversion `round(0.299 R + 0.587 G + 0.114 B)`. 8-bit gray input
/// passes through unchanged.
pub fn to_gray(img: &DynamicImage) -> Result<GrayImage, ImagingError> {
    if img.width() == 0 || img.height() == 0 {
        return Err(ImagingError::ZeroSized { width: img.width(), height: img.height() });
    }
    if let DynamicImage::ImageLuma8(g) = img {
        return GrayImage::from_image(g);
    }
    let rgb = img.to_rgb8();
    let samples = rgb
        .pixels()
        .map(|p| {
            let [r, g, b] = p.0;
            // integer form of the weighted sum, rounding half up
            let v = (299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000;
            v.min(255) as u8
        })
        .collect();
    GrayImage::new(rgb.width(), rgb.height(), samples)
}

/// 5-tap Gaussian weights for sigma = 1, normalized to sum 1.
pub fn gaussian_kernel() -> [f64; 5] {
    let mut k = [0.0; 5];
    for (i, w) in k.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *w = (-d * d / 2.0).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|w| w / sum)
}

/// Separable 5×5 Gaussian blur (sigma 1) with clamped borders.
pub fn gaussian_blur(img: &GrayImage) -> GrayImage {
    let k = gaussian_kernel();
    let (w, h) = (img.width as i64, img.height as i64);
    let mut tmp = vec![0.0f64; img.samples.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kw) in k.iter().enumerate() {
                let sx = (x + i as i64 - 2).clamp(0, w - 1);
                acc += kw * img.samples[(y * w + sx) as usize] as f64;
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0u8; img.samples.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kw) in k.iter().enumerate() {
                let sy = (y + i as i64 - 2).clamp(0, h - 1);
                acc += kw * tmp[(sy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc.round().clamp(0.0, 255.0) as u8;
        }
    }
    GrayImage { width: img.width, height: img.height, samples: out }
}

/// Otsu threshold over the 256-bin histogram.
///
/// Pixels with intensity `< threshold` are ink. Returns the smallest threshold
/// maximizing between-class variance, or 0 (no ink) when every split has zero
/// variance.
pub fn otsu_threshold(img: &GrayImage) -> u8 {
    let mut hist = [0u64; 256];
    for &v in &img.samples {
        hist[v as usize] += 1;
    }
    otsu_threshold_from_histogram(&hist)
}

pub fn otsu_threshold_from_histogram(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut best_t = 0u8;
    let mut best_var = 0.0f64;
    let mut w0 = 0u64;
    let mut sum0 = 0.0f64;
    // class 0 = intensities [0, t), class 1 = [t, 255]
    for t in 1..=255usize {
        w0 += hist[t - 1];
        sum0 += (t - 1) as f64 * hist[t - 1] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if var > best_var * (1.0 + 1e-12) {
            best_var = var;
            best_t = t as u8;
        }
    }
    best_t
}

pub fn otsu_binarize(img: &GrayImage) -> BinaryImage {
    threshold_below(img, otsu_threshold(img))
}

/// Ink where intensity `< threshold`.
pub fn threshold_below(img: &GrayImage, threshold: u8) -> BinaryImage {
    BinaryImage {
        width: img.width,
        height: img.height,
        ink: img.samples.iter().map(|&v| v < threshold).collect(),
    }
}

fn check_kernel(kernel_w: u32, kernel_h: u32) -> Result<(), ImagingError> {
    if kernel_w == 0 || kernel_h == 0 || kernel_w % 2 == 0 || kernel_h % 2 == 0 {
        return Err(ImagingError::EvenKernel { width: kernel_w, height: kernel_h });
    }
    Ok(())
}

/// One pass of a rectangular max (dilate) or min (erode) filter, done as a
/// row pass followed by a column pass. Out-of-bounds neighbours are ignored.
fn rect_filter(mask: &BinaryImage, kernel_w: u32, kernel_h: u32, dilate: bool) -> BinaryImage {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let (rx, ry) = ((kernel_w / 2) as i64, (kernel_h / 2) as i64);
    let hit = |v: bool| v == dilate;
    let mut tmp = vec![!dilate; mask.ink.len()];
    for y in 0..h {
        let row = &mask.ink[(y * w) as usize..((y + 1) * w) as usize];
        for x in 0..w {
            let lo = (x - rx).max(0) as usize;
            let hi = (x + rx).min(w - 1) as usize;
            if row[lo..=hi].iter().any(|&v| hit(v)) {
                tmp[(y * w + x) as usize] = dilate;
            }
        }
    }
    let mut out = vec![!dilate; mask.ink.len()];
    for x in 0..w {
        for y in 0..h {
            let lo = (y - ry).max(0);
            let hi = (y + ry).min(h - 1);
            if (lo..=hi).any(|sy| hit(tmp[(sy * w + x) as usize])) {
                out[(y * w + x) as usize] = dilate;
            }
        }
    }
    BinaryImage { width: mask.width, height: mask.height, ink: out }
}

/// Morphological dilation with a `kernel_w`×`kernel_h` rectangle, repeated
/// `iterations` times.
pub fn dilate(mask: &BinaryImage, kernel_w: u32, kernel_h: u32, iterations: u32) -> Result<BinaryImage, ImagingError> {
    check_kernel(kernel_w, kernel_h)?;
    let mut cur = mask.clone();
    for _ in 0..iterations {
        cur = rect_filter(&cur, kernel_w, kernel_h, true);
    }
    Ok(cur)
}

/// Morphological erosion; out-of-bounds neighbours do not erode.
pub fn erode(mask: &BinaryImage, kernel_w: u32, kernel_h: u32, iterations: u32) -> Result<BinaryImage, ImagingError> {
    check_kernel(kernel_w, kernel_h)?;
    let mut cur = mask.clone();
    for _ in 0..iterations {
        cur = rect_filter(&cur, kernel_w, kernel_h, false);
    }
    Ok(cur)
}

/// Dilation followed by erosion.
pub fn close(mask: &BinaryImage, kernel_w: u32, kernel_h: u32) -> Result<BinaryImage, ImagingError> {
    erode(&dilate(mask, kernel_w, kernel_h, 1)?, kernel_w, kernel_h, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub id: u32,
    pub bbox: BBox,
    pub area: u64,
}

/// Per-pixel component labels (`None` for paper) alongside the component list.
#[derive(Debug, Clone)]
pub struct Labeling {
    pub labels: Vec<Option<u32>>,
    pub components: Vec<Component>,
}

/// 8-connected labeling. Components are sorted by descending area, then by
/// `(y0, x0)`; ids are positions in that order.
pub fn label_components(mask: &BinaryImage) -> Labeling {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut raw = vec![u32::MAX; mask.ink.len()];
    let mut found: Vec<(BBox, u64)> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.ink.len() {
        if !mask.ink[start] || raw[start] != u32::MAX {
            continue;
        }
        let id = found.len() as u32;
        raw[start] = id;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1, mut area) = (i64::MAX, i64::MAX, 0, 0, 0u64);
        while let Some(p) = queue.pop_front() {
            let (px, py) = (p as i64 % w, p as i64 / w);
            x0 = x0.min(px);
            y0 = y0.min(py);
            x1 = x1.max(px + 1);
            y1 = y1.max(py + 1);
            area += 1;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (px + dx, py + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let q = (ny * w + nx) as usize;
                    if mask.ink[q] && raw[q] == u32::MAX {
                        raw[q] = id;
                        queue.push_back(q);
                    }
                }
            }
        }
        found.push((BBox::new(x0, y0, x1, y1).expect("non-empty component"), area));
    }

    let mut order: Vec<usize> = (0..found.len()).collect();
    order.sort_by(|&a, &b| {
        found[b].1
            .cmp(&found[a].1)
            .then(found[a].0.y0().cmp(&found[b].0.y0()))
            .then(found[a].0.x0().cmp(&found[b].0.x0()))
    });
    let mut remap = vec![0u32; found.len()];
    let components = order
        .iter()
        .enumerate()
        .map(|(new_id, &old)| {
            remap[old] = new_id as u32;
            Component { id: new_id as u32, bbox: found[old].0, area: found[old].1 }
        })
        .collect();
    let labels = raw.into_iter().map(|l| (l != u32::MAX).then(|| remap[l as usize])).collect();
    Labeling { labels, components }
}

pub fn connected_components(mask: &BinaryImage) -> Vec<Component> {
    label_components(mask).components
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Columns,
    Rows,
}

/// Ink counts per column (length = width) or per row (length = height).
pub fn ink_profile(mask: &BinaryImage, axis: Axis) -> Vec<u32> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    match axis {
        Axis::Columns => {
            let mut counts = vec![0u32; w];
            for row in mask.ink.chunks(w) {
                for (c, &v) in counts.iter_mut().zip(row) {
                    *c += v as u32;
                }
            }
            counts
        }
        Axis::Rows => (0..h).map(|y| mask.ink[y * w..(y + 1) * w].iter().filter(|&&v| v).count() as u32).collect(),
    }
}

/// Nearest-neighbour resample of a binary mask to `new_w`×`new_h`.
pub fn resize_nearest(mask: &BinaryImage, new_w: u32, new_h: u32) -> BinaryImage {
    let xs = nearest_map(mask.width, new_w);
    let ys = nearest_map(mask.height, new_h);
    let mut ink = Vec::with_capacity(new_w as usize * new_h as usize);
    for &sy in &ys {
        let row = sy as usize * mask.width as usize;
        ink.extend(xs.iter().map(|&sx| mask.ink[row + sx as usize]));
    }
    BinaryImage { width: new_w, height: new_h, ink }
}

/// Source index for each of `dst` output positions sampling `src` inputs.
pub fn nearest_map(src: u32, dst: u32) -> Vec<u32> {
    (0..dst)
        .map(|i| {
            let s = ((i as u64 * 2 + 1) * src as u64) / (dst as u64 * 2);
            (s as u32).min(src - 1)
        })
        .collect()
}
