//! Stages that replay ground-truth labels.

use std::collections::HashMap;
use std::sync::Arc;

use crate::composer::PageLabel;
use crate::geometry::BBox;
use crate::imaging::GrayImage;

use super::{CropContext, Detection, Detector, PageContext, Recognizer, StageError};

pub type LabelIndex = Arc<HashMap<String, PageLabel>>;

pub fn index_labels(labels: impl IntoIterator<Item = PageLabel>) -> LabelIndex {
    Arc::new(labels.into_iter().map(|l| (l.page_id.clone(), l)).collect())
}

/// Transcript of the label word overlapping `bbox` the most (ties: earlier
/// word).
pub fn oracle_text(label: &PageLabel, bbox: &BBox) -> Result<String, StageError> {
    let mut best: Option<(u64, &str)> = None;
    for w in &label.words {
        let a = w.bbox.intersection_area(bbox);
        if a > 0 && best.is_none_or(|(b, _)| a > b) {
            best = Some((a, &w.transcript));
        }
    }
    best.map(|(_, t)| t.to_string())
        .ok_or_else(|| StageError::OracleMiss { page_id: label.page_id.clone(), bbox: *bbox })
}

/// Returns exactly the label boxes of the page.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    labels: LabelIndex,
}

impl OracleDetector {
    pub fn new(labels: LabelIndex) -> Self {
        Self { labels }
    }
}

impl Detector for OracleDetector {
    fn name(&self) -> &str {
        "oracle"
    }

    fn detect(&mut self, _page: &GrayImage, ctx: &PageContext) -> Result<Vec<Detection>, StageError> {
        let label = self.labels.get(&ctx.page_id).ok_or_else(|| StageError::UnknownPage(ctx.page_id.clone()))?;
        Ok(label.words.iter().map(|w| Detection::certain(w.bbox)).collect())
    }
}

/// Answers with the transcript of the label word under the crop's source box.
#[derive(Debug, Clone)]
pub struct OracleRecognizer {
    labels: LabelIndex,
}

impl OracleRecognizer {
    pub fn new(labels: LabelIndex) -> Self {
        Self { labels }
    }
}

impl Recognizer for OracleRecognizer {
    fn name(&self) -> &str {
        "oracle"
    }

    fn recognize(&mut self, _crop: &GrayImage, ctx: &CropContext) -> Result<String, StageError> {
        let label = self.labels.get(&ctx.page_id).ok_or_else(|| StageError::UnknownPage(ctx.page_id.clone()))?;
        oracle_text(label, &ctx.bbox)
    }
}
