//! Word-image cleanup: raw scan in, tight binary word crop out.
//!
//! Stages run in a fixed order: gray, blur, Otsu, border cut, ruled-line
//! trim (columns then rows), dilation-guided speckle removal, tight crop.

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::imaging::{self, Axis, BinaryImage, GrayImage, ImagingError};

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("word image is {width}x{height}; at least 8x8 is required")]
    TooSmall { width: u32, height: u32 },
    #[error("no ink survived preprocessing")]
    EmptyContent,
    #[error("invalid preprocessing config: {0}")]
    InvalidConfig(String),
    #[error("target height {0} is below the minimum of 8")]
    TargetTooSmall(u32),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    /// Percent of the width removed from the left and from the right.
    pub border_cut_x: f64,
    /// Percent of the height removed from the top and from the bottom.
    pub border_cut_y: f64,
    /// Edge columns/rows with fewer ink pixels than this are trimmed.
    pub ruled_line_threshold: u32,
    pub dilation_kernel: u32,
    pub dilation_iterations: u32,
    /// Components with fewer ink pixels than this are discarded.
    pub min_component_area: u64,
    pub blur: bool,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            border_cut_x: 3.5,
            border_cut_y: 3.5,
            ruled_line_threshold: 10,
            dilation_kernel: 3,
            dilation_iterations: 2,
            min_component_area: 9,
            blur: true,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<(), PrepError> {
        for (name, v) in [("border_cut_x", self.border_cut_x), ("border_cut_y", self.border_cut_y)] {
            if !(0.0..25.0).contains(&v) {
                return Err(PrepError::InvalidConfig(format!("{name} = {v} must lie in [0, 25)")));
            }
        }
        if self.ruled_line_threshold < 1 {
            return Err(PrepError::InvalidConfig("ruled_line_threshold must be >= 1".into()));
        }
        if self.dilation_kernel % 2 == 0 {
            return Err(PrepError::InvalidConfig("dilation_kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Preprocessed word: the tight crop and where it sits in the source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedWord {
    pub crop: BinaryImage,
    pub source_box: BBox,
}

pub fn preprocess_word(raw: &DynamicImage, cfg: &PrepConfig) -> Result<PreparedWord, PrepError> {
    let gray = imaging::to_gray(raw)?;
    preprocess_gray(&gray, cfg)
}

/// Same pipeline starting from an already gray image.
pub fn preprocess_gray(gray: &GrayImage, cfg: &PrepConfig) -> Result<PreparedWord, PrepError> {
    cfg.validate()?;
    let (w, h) = (gray.width(), gray.height());
    if w < 8 || h < 8 {
        return Err(PrepError::TooSmall { width: w, height: h });
    }
    let smoothed = if cfg.blur { imaging::gaussian_blur(gray) } else { gray.clone() };
    let mask = imaging::otsu_binarize(&smoothed);

    let cut_x = (w as f64 * cfg.border_cut_x / 100.0).floor() as u32;
    let cut_y = (h as f64 * cfg.border_cut_y / 100.0).floor() as u32;
    let inner = BBox::new(cut_x as i64, cut_y as i64, (w - cut_x) as i64, (h - cut_y) as i64)
        .map_err(|_| PrepError::EmptyContent)?;
    let mask = mask.crop(&inner)?;

    let (cols, rows) = trim_ruled_lines(&mask, cfg.ruled_line_threshold).ok_or(PrepError::EmptyContent)?;
    let trimmed_box = BBox::new(cols.0 as i64, rows.0 as i64, cols.1 as i64, rows.1 as i64)
        .map_err(|_| PrepError::EmptyContent)?;
    let mask = mask.crop(&trimmed_box)?;

    let kept = drop_speckle(&mask, cfg)?;
    let tight = kept.ink_bbox().ok_or(PrepError::EmptyContent)?;
    let crop = kept.crop(&tight)?;
    let source_box = tight
        .translate((inner.x0() + trimmed_box.x0()) as i64, (inner.y0() + trimmed_box.y0()) as i64)
        .expect("offsets are non-negative");
    Ok(PreparedWord { crop, source_box })
}

/// Scan inward from both ends, dropping edge columns (then rows) whose ink
/// count is below `threshold`. Returns the surviving `(x0, x1)` and `(y0, y1)`
/// ranges, or `None` if nothing survives.
pub fn trim_ruled_lines(mask: &BinaryImage, threshold: u32) -> Option<((u32, u32), (u32, u32))> {
    let cols = imaging::ink_profile(mask, Axis::Columns);
    let (x0, x1) = edge_range(&cols, threshold)?;
    let col_box = BBox::new(x0 as i64, 0, x1 as i64, mask.height() as i64).ok()?;
    let narrowed = mask.crop(&col_box).ok()?;
    let rows = imaging::ink_profile(&narrowed, Axis::Rows);
    let (y0, y1) = edge_range(&rows, threshold)?;
    Some(((x0, x1), (y0, y1)))
}

fn edge_range(counts: &[u32], threshold: u32) -> Option<(u32, u32)> {
    let first = counts.iter().position(|&c| c >= threshold)?;
    let last = counts.iter().rposition(|&c| c >= threshold)?;
    Some((first as u32, last as u32 + 1))
}

/// Keep only ink belonging to dilated components that carry at least
/// `min_component_area` original ink pixels.
fn drop_speckle(mask: &BinaryImage, cfg: &PrepConfig) -> Result<BinaryImage, PrepError> {
    let k = cfg.dilation_kernel.max(1);
    let grown = imaging::dilate(mask, k, k, cfg.dilation_iterations)?;
    let labeling = imaging::label_components(&grown);
    let mut ink_per_component = vec![0u64; labeling.components.len()];
    for (i, &v) in mask.ink().iter().enumerate() {
        if v {
            if let Some(l) = labeling.labels[i] {
                ink_per_component[l as usize] += 1;
            }
        }
    }
    let keep: Vec<bool> = ink_per_component.iter().map(|&n| n >= cfg.min_component_area).collect();
    let ink = mask
        .ink()
        .iter()
        .zip(&labeling.labels)
        .map(|(&v, l)| v && l.is_some_and(|l| keep[l as usize]))
        .collect();
    Ok(BinaryImage::new(mask.width(), mask.height(), ink)?)
}

/// Aspect-preserving nearest-neighbour resize to exactly `target_height` rows.
pub fn resize_to_height(crop: &BinaryImage, target_height: u32) -> Result<BinaryImage, PrepError> {
    if target_height < 8 {
        return Err(PrepError::TargetTooSmall(target_height));
    }
    let width = scaled_width(crop.width(), crop.height(), target_height);
    Ok(imaging::resize_nearest(crop, width, target_height))
}

/// `max(1, round(w * target / h))`.
pub fn scaled_width(w: u32, h: u32, target_height: u32) -> u32 {
    let num = w as u64 * target_height as u64;
    let rounded = (2 * num + h as u64) / (2 * h as u64);
    rounded.max(1) as u32
}
