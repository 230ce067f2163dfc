//! Axis-aligned boxes, IoU and one-to-one box matching.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid box [{x0}, {y0}, {x1}, {y1}]: need 0 <= x0 < x1 and 0 <= y0 < y1")]
pub struct InvalidBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

/// Pixel box covering columns `x0..x1` and rows `y0..y1` (end-exclusive).
///
/// Serialized as `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[u32; 4]")]
pub struct BBox {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

impl BBox {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Result<Self, InvalidBox> {
        let ok = x0 >= 0 && y0 >= 0 && x0 < x1 && y0 < y1 && x1 <= u32::MAX as i64 && y1 <= u32::MAX as i64;
        if !ok {
            return Err(InvalidBox { x0, y0, x1, y1 });
        }
        Ok(Self { x0: x0 as u32, y0: y0 as u32, x1: x1 as u32, y1: y1 as u32 })
    }

    /// Box of `width`×`height` pixels with its top-left corner at (`x`, `y`).
    pub fn from_origin_size(x: u32, y: u32, width: u32, height: u32) -> Result<Self, InvalidBox> {
        Self::new(x as i64, y as i64, x as i64 + width as i64, y as i64 + height as i64)
    }

    pub fn x0(&self) -> u32 {
        self.x0
    }
    pub fn y0(&self) -> u32 {
        self.y0
    }
    pub fn x1(&self) -> u32 {
        self.x1
    }
    pub fn y1(&self) -> u32 {
        self.y1
    }
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }
    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn to_array(&self) -> [u32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    /// Overlapping region, if any cells are shared.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        (x0 < x1 && y0 < y1).then_some(BBox { x0, y0, x1, y1 })
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        self.intersection(other).map_or(0, |b| b.area())
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.intersection(other).is_some()
    }

    /// Smallest box covering both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    /// Grow by `pad` on every side, clipped to a `width`×`height` canvas.
    pub fn expand_clipped(&self, pad: u32, width: u32, height: u32) -> BBox {
        BBox {
            x0: self.x0.saturating_sub(pad),
            y0: self.y0.saturating_sub(pad),
            x1: self.x1.saturating_add(pad).min(width).max(self.x0.saturating_sub(pad) + 1),
            y1: self.y1.saturating_add(pad).min(height).max(self.y0.saturating_sub(pad) + 1),
        }
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Result<BBox, InvalidBox> {
        BBox::new(
            self.x0 as i64 + dx,
            self.y0 as i64 + dy,
            self.x1 as i64 + dx,
            self.y1 as i64 + dy,
        )
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x1 <= width && self.y1 <= height
    }
}

impl TryFrom<[i64; 4]> for BBox {
    type Error = InvalidBox;
    fn try_from(v: [i64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union. Areas are exact integers; one division at the end.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub detection: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

/// One-to-one partition of detections and ground truths.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<MatchPair>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_ground_truths: Vec<usize>,
}

/// Greedy one-to-one matching by descending IoU.
///
/// Candidate pairs with `iou >= threshold` are visited in descending IoU order
/// (ties by lower detection index, then lower ground-truth index) and accepted
/// while both sides are still free.
pub fn match_boxes(detections: &[BBox], ground_truths: &[BBox], threshold: f64) -> Matching {
    let mut candidates: Vec<MatchPair> = Vec::new();
    for (d, det) in detections.iter().enumerate() {
        for (g, gt) in ground_truths.iter().enumerate() {
            let v = iou(det, gt);
            if v > 0.0 && v >= threshold {
                candidates.push(MatchPair { detection: d, ground_truth: g, iou: v });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou
            .partial_cmp(&a.iou)
            .unwrap_or(Ordering::Equal)
            .then(a.detection.cmp(&b.detection))
            .then(a.ground_truth.cmp(&b.ground_truth))
    });

    let mut det_used = vec![false; detections.len()];
    let mut gt_used = vec![false; ground_truths.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if !det_used[c.detection] && !gt_used[c.ground_truth] {
            det_used[c.detection] = true;
            gt_used[c.ground_truth] = true;
            pairs.push(c);
        }
    }
    Matching {
        pairs,
        unmatched_detections: (0..detections.len()).filter(|&i| !det_used[i]).collect(),
        unmatched_ground_truths: (0..ground_truths.len()).filter(|&i| !gt_used[i]).collect(),
    }
}
