//! Detection precision/recall/F1, character and word recognition rates, and
//! per-word latency.
//!
//! Everything aggregates through integer counters that are summed before any
//! ratio is taken (micro-averaging), so the order pages are processed in
//! cannot change a result.

use std::collections::HashMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::PageLabel;
use crate::geometry::{match_boxes, BBox};
use crate::pipeline::PageResult;
use crate::text::{codepoints, nfc};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ground-truth text at position {0} is empty")]
    EmptyGroundTruth(usize),
    #[error("IoU threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("no label for page {0}")]
    MissingLabel(String),
    #[error("no recognized words to time")]
    ZeroWords,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl AddAssign for DetectionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

impl DetectionCounts {
    /// One page: matched pairs are true positives.
    pub fn from_boxes(detections: &[BBox], ground_truths: &[BBox], threshold: f64) -> Self {
        let m = match_boxes(detections, ground_truths, threshold);
        Self {
            tp: m.pairs.len() as u64,
            fp: m.unmatched_detections.len() as u64,
            fn_: m.unmatched_ground_truths.len() as u64,
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScores {
    pub threshold: f64,
    #[serde(flatten)]
    pub counts: DetectionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores at each IoU threshold, in the order the thresholds were given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub per_threshold: Vec<ThresholdScores>,
}

impl DetectionMetrics {
    pub fn from_counts(thresholds: &[f64], counts: &[DetectionCounts]) -> Self {
        let per_threshold = thresholds
            .iter()
            .zip(counts)
            .map(|(&threshold, &c)| ThresholdScores {
                threshold,
                counts: c,
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
            })
            .collect();
        Self { per_threshold }
    }

    pub fn at(&self, threshold: f64) -> Option<&ThresholdScores> {
        self.per_threshold.iter().find(|s| s.threshold == threshold)
    }
}

pub fn check_thresholds(thresholds: &[f64]) -> Result<(), MetricsError> {
    match thresholds.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        Some(&t) => Err(MetricsError::BadThreshold(t)),
        None => Ok(()),
    }
}

/// Micro-averaged P/R/F1 over pages of `(detections, ground_truths)`.
pub fn detection_prf(pages: &[(Vec<BBox>, Vec<BBox>)], thresholds: &[f64]) -> Result<DetectionMetrics, MetricsError> {
    check_thresholds(thresholds)?;
    let mut totals = vec![DetectionCounts::default(); thresholds.len()];
    for (dets, gts) in pages {
        for (t, total) in thresholds.iter().zip(totals.iter_mut()) {
            *total += DetectionCounts::from_boxes(dets, gts, *t);
        }
    }
    Ok(DetectionMetrics::from_counts(thresholds, &totals))
}

/// Unit-cost edit distance over Unicode codepoints.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognitionCounts {
    pub gt_char_total: u64,
    pub edit_total: u64,
    pub gt_word_total: u64,
    pub exact_match_total: u64,
    pub spurious_detections: u64,
}

impl AddAssign for RecognitionCounts {
    fn add_assign(&mut self, o: Self) {
        self.gt_char_total += o.gt_char_total;
        self.edit_total += o.edit_total;
        self.gt_word_total += o.gt_word_total;
        self.exact_match_total += o.exact_match_total;
        self.spurious_detections += o.spurious_detections;
    }
}

impl RecognitionCounts {
    fn score(&mut self, gt: &str, pred: &str) {
        let (gt, pred) = (nfc(gt), nfc(pred));
        self.gt_char_total += codepoints(&gt) as u64;
        self.edit_total += levenshtein(&gt, &pred) as u64;
        self.gt_word_total += 1;
        self.exact_match_total += u64::from(gt == pred);
    }

    fn miss(&mut self, gt: &str) {
        let n = codepoints(&nfc(gt)) as u64;
        self.gt_char_total += n;
        self.edit_total += n;
        self.gt_word_total += 1;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RecognitionMetrics {
    /// Percent.
    pub crr: f64,
    /// Percent.
    pub wrr: f64,
    #[serde(flatten)]
    pub counts: RecognitionCounts,
}

impl From<RecognitionCounts> for RecognitionMetrics {
    fn from(c: RecognitionCounts) -> Self {
        let crr = if c.gt_char_total == 0 {
            0.0
        } else {
            100.0 * (1.0 - c.edit_total as f64 / c.gt_char_total as f64).max(0.0)
        };
        let wrr = 100.0 * ratio(c.exact_match_total, c.gt_word_total);
        Self { crr, wrr, counts: c }
    }
}

/// Counters for `(ground truth, prediction)` pairs scored on their own.
pub fn isolated_counts<S: AsRef<str>, T: AsRef<str>>(pairs: &[(S, T)]) -> Result<RecognitionCounts, MetricsError> {
    let mut c = RecognitionCounts::default();
    for (i, (gt, pred)) in pairs.iter().enumerate() {
        if gt.as_ref().is_empty() {
            return Err(MetricsError::EmptyGroundTruth(i));
        }
        c.score(gt.as_ref(), pred.as_ref());
    }
    Ok(c)
}

pub fn isolated_eval<S: AsRef<str>, T: AsRef<str>>(pairs: &[(S, T)]) -> Result<RecognitionMetrics, MetricsError> {
    isolated_counts(pairs).map(Into::into)
}

/// One-to-one pairing of detections to ground truths by descending overlap
/// area (ties: lower detection index, then lower ground-truth index). Pairs
/// with zero overlap are never formed. Returns `(detection, ground_truth)`.
pub fn overlap_pairs(detections: &[BBox], ground_truths: &[BBox]) -> Vec<(usize, usize)> {
    let mut cand = Vec::new();
    for (d, db) in detections.iter().enumerate() {
        for (g, gb) in ground_truths.iter().enumerate() {
            let a = db.intersection_area(gb);
            if a > 0 {
                cand.push((a, d, g));
            }
        }
    }
    cand.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut dused = vec![false; detections.len()];
    let mut gused = vec![false; ground_truths.len()];
    let mut out = Vec::new();
    for (_, d, g) in cand {
        if !dused[d] && !gused[g] {
            dused[d] = true;
            gused[g] = true;
            out.push((d, g));
        }
    }
    out
}

/// End-to-end counters for one page.
///
/// Paired words are scored like isolated pairs; ground-truth words with no
/// detection count as full deletions and WRR misses; detections with no
/// ground truth are only tallied in `spurious_detections`.
pub fn e2e_counts(result: &PageResult, label: &PageLabel) -> RecognitionCounts {
    let dets: Vec<BBox> = result.words.iter().map(|w| w.detection.bbox).collect();
    let gts = label.boxes();
    let pairs = overlap_pairs(&dets, &gts);
    let mut c = RecognitionCounts::default();
    let mut gt_hit = vec![false; gts.len()];
    for &(d, g) in &pairs {
        gt_hit[g] = true;
        c.score(&label.words[g].transcript, &result.words[d].text);
    }
    for (g, hit) in gt_hit.iter().enumerate() {
        if !hit {
            c.miss(&label.words[g].transcript);
        }
    }
    c.spurious_detections = (dets.len() - pairs.len()) as u64;
    c
}

pub fn e2e_eval(results: &[PageResult], labels: &[PageLabel]) -> Result<RecognitionMetrics, MetricsError> {
    let by_id: HashMap<&str, &PageLabel> = labels.iter().map(|l| (l.page_id.as_str(), l)).collect();
    let mut total = RecognitionCounts::default();
    for r in results {
        let label = by_id.get(r.page_id.as_str()).ok_or_else(|| MetricsError::MissingLabel(r.page_id.clone()))?;
        total += e2e_counts(r, label);
    }
    Ok(total.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Seconds.
    pub mean_per_word: f64,
    /// Seconds.
    pub median_per_word: f64,
    pub word_count: u64,
}

/// Per-word time: the word's recognition latency plus its page's detection
/// latency shared equally among the page's words.
pub fn per_word_times(results: &[PageResult]) -> Vec<f64> {
    let mut times = Vec::new();
    for r in results {
        if r.words.is_empty() {
            continue;
        }
        let share = r.detect_latency / r.words.len() as f64;
        times.extend(r.words.iter().map(|w| w.latency + share));
    }
    times
}

pub fn latency_stats(results: &[PageResult]) -> Result<LatencyStats, MetricsError> {
    let mut times = per_word_times(results);
    if times.is_empty() {
        return Err(MetricsError::ZeroWords);
    }
    let n = times.len();
    let mean = times.iter().sum::<f64>() / n as f64;
    times.sort_by(|a, b| a.total_cmp(b));
    let median = if n % 2 == 1 { times[n / 2] } else { (times[n / 2 - 1] + times[n / 2]) / 2.0 };
    Ok(LatencyStats { mean_per_word: mean, median_per_word: median, word_count: n as u64 })
}
