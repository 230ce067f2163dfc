//! Two-stage page inference: a [`Detector`] finds word boxes, a
//! [`Recognizer`] transcribes each cropped box.

pub mod adapter;
pub mod builtin;
pub mod oracle;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::imaging::{GrayImage, ImagingError};

pub use adapter::{AdapterError, AdapterSpec, StageKind};
pub use builtin::{detect_builtin, BuiltinDetector, DetectorParams, TemplateRecognizer};
pub use oracle::{OracleDetector, OracleRecognizer};

/// Crop padding around each detection, in pixels.
pub const DEFAULT_PAD: u32 = 2;
/// Height of the bands used to put detections in reading order.
pub const READING_BAND: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn certain(bbox: BBox) -> Self {
        Self { bbox, score: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordResult {
    pub detection: Detection,
    pub text: String,
    /// Recognition wall-clock time, seconds.
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageResult {
    pub page_id: String,
    pub width: u32,
    pub height: u32,
    /// Words in reading order.
    pub words: Vec<WordResult>,
    /// Seconds.
    pub detect_latency: f64,
    /// Seconds.
    pub total_latency: f64,
}

impl PageResult {
    /// The same result with every latency zeroed, for comparisons.
    pub fn without_timing(&self) -> PageResult {
        let mut r = self.clone();
        r.detect_latency = 0.0;
        r.total_latency = 0.0;
        r.words.iter_mut().for_each(|w| w.latency = 0.0);
        r
    }
}

/// What a stage knows about the page being processed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageContext {
    pub page_id: String,
    pub language: String,
}

/// What a recognizer knows about the crop it receives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CropContext {
    pub page_id: String,
    pub language: String,
    /// The detected box on the page.
    pub bbox: BBox,
    /// The padded region actually cropped.
    pub crop_box: BBox,
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("no label box overlaps {bbox:?} on page {page_id}")]
    OracleMiss { page_id: String, bbox: BBox },
    #[error("no label loaded for page {0}")]
    UnknownPage(String),
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub trait Detector: Send {
    fn name(&self) -> &str;
    fn detect(&mut self, page: &GrayImage, ctx: &PageContext) -> Result<Vec<Detection>, StageError>;
}

pub trait Recognizer: Send {
    fn name(&self) -> &str;
    fn recognize(&mut self, crop: &GrayImage, ctx: &CropContext) -> Result<String, StageError>;
}

#[derive(Debug, Error)]
#[error("page {page_id}{}: {source}", word.map(|w| format!(", word {w}")).unwrap_or_default())]
pub struct PipelineError {
    pub page_id: String,
    pub word: Option<usize>,
    #[source]
    pub source: StageError,
}

/// Sort by 20-px row band of `y0`, then `x0`, then `y0`.
pub fn reading_order(dets: &mut [Detection]) {
    dets.sort_by_key(|d| (d.bbox.y0() / READING_BAND, d.bbox.x0(), d.bbox.y0(), d.bbox.x1(), d.bbox.y1()));
}

/// Clip to the page and put into reading order; boxes entirely off the page
/// are dropped.
pub fn normalize_detections(mut dets: Vec<Detection>, width: u32, height: u32) -> Vec<Detection> {
    let page = BBox::new(0, 0, width as i64, height as i64).expect("page has positive size");
    dets.retain_mut(|d| match d.bbox.intersection(&page) {
        Some(clipped) => {
            d.bbox = clipped;
            true
        }
        None => false,
    });
    reading_order(&mut dets);
    dets
}

/// Run the detector on `page` and return its boxes in reading order with the
/// detection wall-clock time in seconds.
pub fn run_detection(
    page: &GrayImage,
    ctx: &PageContext,
    detector: &mut dyn Detector,
) -> Result<(Vec<Detection>, f64), PipelineError> {
    let t0 = Instant::now();
    let dets = detector
        .detect(page, ctx)
        .map_err(|source| PipelineError { page_id: ctx.page_id.clone(), word: None, source })?;
    let elapsed = t0.elapsed().as_secs_f64();
    Ok((normalize_detections(dets, page.width(), page.height()), elapsed))
}

/// Crop and recognize each detection (already in reading order).
pub fn recognize_detections(
    page: &GrayImage,
    ctx: &PageContext,
    detections: &[Detection],
    detect_latency: f64,
    recognizer: &mut dyn Recognizer,
    pad: u32,
) -> Result<PageResult, PipelineError> {
    let t0 = Instant::now();
    let mut words = Vec::with_capacity(detections.len());
    for (i, det) in detections.iter().enumerate() {
        let wrap = |source: StageError| PipelineError { page_id: ctx.page_id.clone(), word: Some(i), source };
        let crop_box = det.bbox.expand_clipped(pad, page.width(), page.height());
        let crop = page.crop(&crop_box).map_err(|e| wrap(e.into()))?;
        let cctx = CropContext { page_id: ctx.page_id.clone(), language: ctx.language.clone(), bbox: det.bbox, crop_box };
        let started = Instant::now();
        let text = recognizer.recognize(&crop, &cctx).map_err(wrap)?;
        words.push(WordResult { detection: *det, text, latency: started.elapsed().as_secs_f64() });
    }
    Ok(PageResult {
        page_id: ctx.page_id.clone(),
        width: page.width(),
        height: page.height(),
        words,
        detect_latency,
        total_latency: detect_latency + t0.elapsed().as_secs_f64(),
    })
}

/// Detect, crop each box with `pad` pixels of context (clipped to the page),
/// recognize, and time both stages.
pub fn infer_page(
    page: &GrayImage,
    ctx: &PageContext,
    detector: &mut dyn Detector,
    recognizer: &mut dyn Recognizer,
    pad: u32,
) -> Result<PageResult, PipelineError> {
    let (dets, detect_latency) = run_detection(page, ctx, detector)?;
    recognize_detections(page, ctx, &dets, detect_latency, recognizer, pad)
}

/// One detection pass shared by several recognizers; results come back in
/// recognizer order.
pub fn infer_page_multi(
    page: &GrayImage,
    ctx: &PageContext,
    detector: &mut dyn Detector,
    recognizers: &mut [Box<dyn Recognizer>],
    pad: u32,
) -> Result<Vec<PageResult>, PipelineError> {
    let (dets, detect_latency) = run_detection(page, ctx, detector)?;
    recognizers
        .iter_mut()
        .map(|r| recognize_detections(page, ctx, &dets, detect_latency, r.as_mut(), pad))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<Detection>);
    impl Detector for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn detect(&mut self, _: &GrayImage, _: &PageContext) -> Result<Vec<Detection>, StageError> {
            Ok(self.0.clone())
        }
    }

    struct Dims;
    impl Recognizer for Dims {
        fn name(&self) -> &str {
            "dims"
        }
        fn recognize(&mut self, crop: &GrayImage, _: &CropContext) -> Result<String, StageError> {
            Ok(format!("{}x{}", crop.width(), crop.height()))
        }
    }

    struct Failing;
    impl Recognizer for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn recognize(&mut self, _: &GrayImage, ctx: &CropContext) -> Result<String, StageError> {
            Err(StageError::UnknownPage(ctx.page_id.clone()))
        }
    }

    fn ctx() -> PageContext {
        PageContext { page_id: "p1".into(), language: "syn".into() }
    }

    fn det(x0: i64, y0: i64, x1: i64, y1: i64) -> Detection {
        Detection::certain(BBox::new(x0, y0, x1, y1).unwrap())
    }

    #[test]
    fn blank_page_has_no_words() {
        let page = GrayImage::white(64, 64).unwrap();
        let r = infer_page(&page, &ctx(), &mut Fixed(vec![]), &mut Dims, 2).unwrap();
        assert!(r.words.is_empty());
        assert!(r.total_latency >= r.detect_latency);
    }

    #[test]
    fn padding_is_clipped_and_order_is_reading_order() {
        let page = GrayImage::white(50, 50).unwrap();
        let dets = vec![det(30, 1, 49, 10), det(0, 0, 10, 10), det(5, 30, 15, 40)];
        let r = infer_page(&page, &ctx(), &mut Fixed(dets), &mut Dims, 2).unwrap();
        let texts: Vec<&str> = r.words.iter().map(|w| w.text.as_str()).collect();
        // (0,0,10,10) -> (0,0,12,12); (30,1,49,10) -> (28,0,50,12); (5,30,15,40) -> (3,28,17,42)
        assert_eq!(texts, vec!["12x12", "22x12", "14x14"]);
        assert!(r.words.iter().all(|w| w.latency >= 0.0));
    }

    #[test]
    fn off_page_detections_are_clipped_or_dropped() {
        let dets = vec![det(40, 40, 80, 80), det(100, 100, 120, 120)];
        let out = normalize_detections(dets, 50, 50);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox.to_array(), [40, 40, 50, 50]);
    }

    #[test]
    fn errors_carry_page_and_word() {
        let page = GrayImage::white(50, 50).unwrap();
        let err = infer_page(&page, &ctx(), &mut Fixed(vec![det(0, 0, 5, 5)]), &mut Failing, 2).unwrap_err();
        assert_eq!(err.page_id, "p1");
        assert_eq!(err.word, Some(0));
        assert!(err.to_string().contains("page p1, word 0"));
    }
}
