//! Classical stages that need no trained model: a morphological word
//! detector and an atlas template-matching recognizer.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::imaging::{self, BinaryImage, GrayImage};
use crate::synthgen::Atlas;
use crate::wordprep::resize_to_height;

use super::{CropContext, Detection, Detector, PageContext, Recognizer, StageError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub close_kernel_w: u32,
    pub close_kernel_h: u32,
    pub min_area: u64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self { close_kernel_w: 9, close_kernel_h: 3, min_area: 30 }
    }
}

/// Otsu, morphological closing, connected components, area filter.
pub fn detect_builtin(page: &GrayImage, params: &DetectorParams) -> Result<Vec<Detection>, StageError> {
    let mask = imaging::otsu_binarize(page);
    let closed = imaging::close(&mask, params.close_kernel_w, params.close_kernel_h)?;
    let mut dets: Vec<Detection> = imaging::connected_components(&closed)
        .into_iter()
        .filter(|c| c.area >= params.min_area)
        .map(|c| Detection::certain(c.bbox))
        .collect();
    super::reading_order(&mut dets);
    Ok(dets)
}

#[derive(Debug, Clone, Default)]
pub struct BuiltinDetector {
    pub params: DetectorParams,
}

impl Detector for BuiltinDetector {
    fn name(&self) -> &str {
        "builtin"
    }

    fn detect(&mut self, page: &GrayImage, _ctx: &PageContext) -> Result<Vec<Detection>, StageError> {
        detect_builtin(page, &self.params)
    }
}

/// Height every mask is normalized to before comparison.
pub const TEMPLATE_HEIGHT: u32 = 32;

/// A height-normalized mask stored as one bit row per line.
#[derive(Debug, Clone)]
struct Template {
    text: String,
    width: u32,
    rows: Vec<Vec<bool>>,
}

impl Template {
    fn new(text: &str, mask: &BinaryImage) -> Self {
        let m = resize_to_height(mask, TEMPLATE_HEIGHT).expect("template height above minimum");
        let rows = (0..m.height()).map(|y| (0..m.width()).map(|x| m.get(x, y)).collect()).collect();
        Self { text: text.to_string(), width: m.width(), rows }
    }
}

/// Nearest-template recognizer over an [`Atlas`].
#[derive(Debug, Clone)]
pub struct TemplateRecognizer {
    templates: Arc<Vec<Template>>,
}

impl TemplateRecognizer {
    /// Panics on an empty atlas.
    pub fn new(atlas: &Atlas) -> Self {
        assert!(!atlas.is_empty(), "template recognizer needs a non-empty atlas");
        let templates = atlas.iter().map(|(t, m)| Template::new(t, m)).collect();
        Self { templates: Arc::new(templates) }
    }

    /// Best-matching atlas text and its mask IoU.
    ///
    /// The crop and every reference are scaled to height 32; each reference
    /// is then stretched to the crop's width. Ties go to the lexicographically
    /// smaller text.
    pub fn recognize_template(&self, crop: &BinaryImage) -> (String, f64) {
        let first = &self.templates[0];
        let Some(tight) = crop.ink_bbox() else {
            return (first.text.clone(), 0.0);
        };
        let crop = crop.crop(&tight).expect("ink box lies inside the crop");
        let probe = resize_to_height(&crop, TEMPLATE_HEIGHT).expect("template height above minimum");
        let w = probe.width();
        let probe_ink = probe.ink();

        let mut best = (first.text.as_str(), -1.0f64);
        for t in self.templates.iter() {
            let cols = imaging::nearest_map(t.width, w);
            let (mut inter, mut union) = (0u32, 0u32);
            for (y, row) in t.rows.iter().enumerate() {
                let prow = &probe_ink[y * w as usize..(y + 1) * w as usize];
                for (&p, &c) in prow.iter().zip(&cols) {
                    let r = row[c as usize];
                    inter += (p & r) as u32;
                    union += (p | r) as u32;
                }
            }
            let sim = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            // templates iterate in text order, so strict > keeps the smaller text on ties
            if sim > best.1 {
                best = (t.text.as_str(), sim);
            }
        }
        (best.0.to_string(), best.1.max(0.0))
    }
}

impl Recognizer for TemplateRecognizer {
    fn name(&self) -> &str {
        "template"
    }

    fn recognize(&mut self, crop: &GrayImage, _ctx: &CropContext) -> Result<String, StageError> {
        Ok(self.recognize_template(&binarize_crop(crop)).0)
    }
}

/// Otsu mask of a page crop, restricted to the largest connected component's
/// box so that stray neighbour ink at the crop edge does not leak in.
pub fn binarize_crop(crop: &GrayImage) -> BinaryImage {
    let mask = imaging::otsu_binarize(crop);
    let comps = imaging::connected_components(&mask);
    match comps.first() {
        Some(c) if comps.len() > 1 => keep_box(&mask, &c.bbox),
        _ => mask,
    }
}

fn keep_box(mask: &BinaryImage, bbox: &BBox) -> BinaryImage {
    let mut out = BinaryImage::empty(mask.width(), mask.height()).expect("same shape");
    for y in bbox.y0()..bbox.y1() {
        for x in bbox.x0()..bbox.x1() {
            if mask.get(x, y) {
                out.set(x, y, true);
            }
        }
    }
    out
}
