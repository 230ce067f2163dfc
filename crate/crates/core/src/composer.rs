//! Page synthesis: lay preprocessed word crops onto fixed-size pages and
//! record detection and recognition labels for every placed word.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::imaging::{self, BinaryImage, GrayImage, ImagingError};
use crate::synthgen::WordPool;
use crate::text::{codepoints, mix, nfc};
use crate::wordprep::{self, PrepConfig};

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("invalid composer config: {0}")]
    InvalidConfig(String),
    #[error("word pool is empty")]
    EmptyPool,
    #[error("split fractions must be non-negative and sum to 1, got {0}")]
    BadSplits(f64),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ComposeError + '_ {
    move |source| ComposeError::Io { path: path.to_path_buf(), source }
}

/// Horizontal gap between neighbouring words on a line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SpaceX {
    Fixed { px: u32 },
    /// Uniform multiple of the word's mean glyph width (resized width over
    /// codepoint count).
    CharRelative { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComposerConfig {
    pub page_width: u32,
    pub page_height: u32,
    pub space_x: SpaceX,
    pub space_y: u32,
    pub reference_height_range: (u32, u32),
    pub height_factor_range: (f64, f64),
    pub margin: u32,
    pub seed: u64,
}

impl Default for ComposerConfig {
    fn default() -> Self {
        Self {
            page_width: 1024,
            page_height: 1024,
            space_x: SpaceX::Fixed { px: 32 },
            space_y: 32,
            reference_height_range: (32, 64),
            height_factor_range: (0.8, 1.2),
            margin: 16,
            seed: 0,
        }
    }
}

impl ComposerConfig {
    pub fn validate(&self) -> Result<(), ComposeError> {
        let bad = |m: String| Err(ComposeError::InvalidConfig(m));
        let (rlo, rhi) = self.reference_height_range;
        if rlo == 0 || rlo > rhi {
            return bad(format!("reference_height_range {rlo}..{rhi} is empty"));
        }
        let (flo, fhi) = self.height_factor_range;
        if !(flo > 0.0 && flo <= fhi && fhi < 2.0) {
            return bad(format!("height_factor_range {flo}..{fhi} must lie within (0, 2)"));
        }
        if self.page_width < 4 * rhi || self.page_height < 4 * rhi {
            return bad(format!(
                "page {}x{} must be at least 4x the largest reference height {rhi}",
                self.page_width, self.page_height
            ));
        }
        if 2 * self.margin >= self.page_width.min(self.page_height) {
            return bad(format!("margin {} leaves no usable area", self.margin));
        }
        if let SpaceX::CharRelative { min, max } = self.space_x {
            if !(min >= 0.0 && min <= max) {
                return bad(format!("char-relative spacing range {min}..{max} is empty"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordRecord {
    pub bbox: BBox,
    #[serde(rename = "text")]
    pub transcript: String,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageLabel {
    pub page_id: String,
    pub width: u32,
    pub height: u32,
    pub reference_height: u32,
    pub words: Vec<WordRecord>,
}

impl PageLabel {
    pub fn boxes(&self) -> Vec<BBox> {
        self.words.iter().map(|w| w.bbox).collect()
    }

    /// Page language: the first word's tag, empty for a blank page.
    pub fn language(&self) -> &str {
        self.words.first().map_or("", |w| w.language.as_str())
    }

    pub fn load(path: &Path) -> Result<Self, ComposeError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        serde_json::from_slice(&bytes).map_err(|e| ComposeError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("label serializes")
    }
}

/// A preprocessed word ready for placement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordInput {
    pub crop: BinaryImage,
    pub transcript: String,
    pub language: String,
}

/// A word that could not be placed at its drawn height.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordTooLarge {
    pub index: usize,
    pub transcript: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone)]
pub struct ComposedPage {
    pub image: GrayImage,
    pub label: PageLabel,
    /// Words taken from the front of the input, placed or skipped.
    pub consumed: usize,
    pub skipped: Vec<WordTooLarge>,
}

struct Pending {
    index: usize,
    crop: BinaryImage,
    x: u32,
}

/// Fill one page from the front of `words`.
///
/// Draws a reference height for the page, scales each word by a factor from
/// `height_factor_range`, and packs words left to right into bottom-aligned
/// lines. Stops at the first word whose line would cross the bottom margin.
pub fn compose_page(
    words: &[WordInput],
    cfg: &ComposerConfig,
    rng: &mut ChaCha8Rng,
    page_id: &str,
) -> Result<ComposedPage, ComposeError> {
    cfg.validate()?;
    let (rlo, rhi) = cfg.reference_height_range;
    let (flo, fhi) = cfg.height_factor_range;
    let reference = rng.random_range(rlo..=rhi);
    let right = cfg.page_width - cfg.margin;
    let bottom = cfg.page_height - cfg.margin;

    let mut image = GrayImage::white(cfg.page_width, cfg.page_height)?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut line: Vec<Pending> = Vec::new();
    let mut line_h = 0u32;
    let mut line_y = cfg.margin;
    let mut cursor = cfg.margin;
    let mut consumed = 0;

    let flush = |line: &mut Vec<Pending>, line_y: u32, line_h: u32, image: &mut GrayImage, records: &mut Vec<WordRecord>| {
        for p in line.drain(..) {
            let y = line_y + line_h - p.crop.height();
            paint(image, &p.crop, p.x, y);
            let bbox = BBox::from_origin_size(p.x, y, p.crop.width(), p.crop.height()).expect("non-empty crop");
            let w = &words[p.index];
            records.push(WordRecord { bbox, transcript: nfc(&w.transcript), language: w.language.clone() });
        }
    };

    for (index, word) in words.iter().enumerate() {
        let factor = rng.random_range(flo..=fhi);
        let gap_factor = match cfg.space_x {
            SpaceX::Fixed { .. } => 0.0,
            SpaceX::CharRelative { min, max } => rng.random_range(min..=max),
        };
        let h = word_height(reference, factor, flo, fhi);
        let w = wordprep::scaled_width(word.crop.width(), word.crop.height(), h);
        if w > right - cfg.margin || h > bottom - cfg.margin {
            skipped.push(WordTooLarge { index, transcript: word.transcript.clone(), width: w, height: h });
            consumed += 1;
            continue;
        }
        let gap = match cfg.space_x {
            SpaceX::Fixed { px } => px,
            SpaceX::CharRelative { .. } => {
                let per_char = w as f64 / codepoints(&word.transcript).max(1) as f64;
                (gap_factor * per_char).round() as u32
            }
        };
        let mut x = if line.is_empty() { cfg.margin } else { cursor + gap };
        let mut y = line_y;
        let mut new_h = line_h.max(h);
        if !line.is_empty() && x + w > right {
            // start a new line below the current one
            y = line_y + line_h + cfg.space_y;
            x = cfg.margin;
            new_h = h;
        }
        if y + new_h > bottom {
            break;
        }
        if y != line_y {
            flush(&mut line, line_y, line_h, &mut image, &mut records);
            line_y = y;
        }
        line_h = new_h;
        line.push(Pending { index, crop: imaging::resize_nearest(&word.crop, w, h), x });
        cursor = x + w;
        consumed += 1;
    }
    flush(&mut line, line_y, line_h, &mut image, &mut records);

    let label = PageLabel {
        page_id: page_id.to_string(),
        width: cfg.page_width,
        height: cfg.page_height,
        reference_height: reference,
        words: records,
    };
    Ok(ComposedPage { image, label, consumed, skipped })
}

/// `reference * factor` rounded to whole pixels, then pulled back inside
/// `[lo, hi] * reference` when rounding pushed it out.
fn word_height(reference: u32, factor: f64, lo: f64, hi: f64) -> u32 {
    let r = reference as f64;
    let h = (r * factor).round();
    let (min, max) = ((r * lo).ceil(), (r * hi).floor());
    let h = if min <= max { h.clamp(min, max) } else { h };
    (h as u32).max(1)
}

fn paint(page: &mut GrayImage, crop: &BinaryImage, x0: u32, y0: u32) {
    for y in 0..crop.height() {
        for x in 0..crop.width() {
            if crop.get(x, y) {
                page.set(x0 + x, y0 + y, 0);
            }
        }
    }
}

/// Per-page generator, independent of how many pages came before.
pub fn page_rng(seed: u64, page_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, page_index as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFraction {
    pub name: String,
    pub fraction: f64,
}

pub fn default_splits() -> Vec<SplitFraction> {
    [("train", 0.8), ("val", 0.1), ("test", 0.1)]
        .into_iter()
        .map(|(n, f)| SplitFraction { name: n.into(), fraction: f })
        .collect()
}

/// Page counts per split by largest remainder; earlier splits win ties.
pub fn split_counts(pages: usize, splits: &[SplitFraction]) -> Result<Vec<usize>, ComposeError> {
    let sum: f64 = splits.iter().map(|s| s.fraction).sum();
    if splits.is_empty() || splits.iter().any(|s| s.fraction < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(ComposeError::BadSplits(sum));
    }
    let raw: Vec<f64> = splits.iter().map(|s| s.fraction * pages as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = pages - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..splits.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageEntry {
    /// Paths relative to the dataset directory.
    pub image: String,
    pub label: String,
}

/// A pool entry left out of the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub path: String,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub language: String,
    pub seed: u64,
    pub composer: ComposerConfig,
    pub prep: PrepConfig,
    pub splits: BTreeMap<String, Vec<PageEntry>>,
    pub placed_words: usize,
    pub skipped: Vec<SkipRecord>,
}

pub const DATASET_MANIFEST: &str = "manifest.json";

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self, ComposeError> {
        let path = dir.join(DATASET_MANIFEST);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&bytes).map_err(|e| ComposeError::Parse { path, message: e.to_string() })
    }

    pub fn page_count(&self) -> usize {
        self.splits.values().map(Vec::len).sum()
    }
}

/// Pack the whole pool, in seeded-shuffled order, onto pages under `out`.
///
/// Writes `<split>/page_NNNNN.{png,json}` and `manifest.json`. Output is
/// byte-identical for a fixed pool, config and seed.
pub fn compose_dataset(
    pool: &WordPool,
    cfg: &ComposerConfig,
    prep: &PrepConfig,
    splits: &[SplitFraction],
    seed: u64,
    out: &Path,
) -> Result<DatasetManifest, ComposeError> {
    cfg.validate()?;
    if pool.records.is_empty() {
        return Err(ComposeError::EmptyPool);
    }
    split_counts(1, splits)?;

    let mut order: Vec<usize> = (0..pool.records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 0x5u64)));

    let mut skipped = Vec::new();
    let mut inputs = Vec::new();
    for &i in &order {
        let rec = &pool.records[i];
        let prepared = GrayImage::open(&pool.image_path(rec))
            .map_err(|e| e.to_string())
            .and_then(|img| wordprep::preprocess_gray(&img, prep).map_err(|e| e.to_string()));
        match prepared {
            Ok(p) => inputs.push((rec, WordInput { crop: p.crop, transcript: rec.text.clone(), language: rec.language.clone() })),
            Err(reason) => skipped.push(SkipRecord { path: rec.path.clone(), text: rec.text.clone(), reason }),
        }
    }
    let words: Vec<WordInput> = inputs.iter().map(|(_, w)| w.clone()).collect();

    let mut pages = Vec::new();
    let mut start = 0;
    let mut placed = 0;
    while start < words.len() {
        let page_index = pages.len();
        let mut rng = page_rng(seed, page_index);
        let id = format!("page_{page_index:05}");
        let composed = compose_page(&words[start..], cfg, &mut rng, &id)?;
        for s in &composed.skipped {
            let rec = inputs[start + s.index].0;
            skipped.push(SkipRecord {
                path: rec.path.clone(),
                text: rec.text.clone(),
                reason: format!("word too large at {}x{}", s.width, s.height),
            });
        }
        start += composed.consumed.max(1);
        if !composed.label.words.is_empty() {
            placed += composed.label.words.len();
            pages.push(composed);
        }
    }

    let counts = split_counts(pages.len(), splits)?;
    let mut split_map = BTreeMap::new();
    let mut it = pages.into_iter();
    for (split, n) in splits.iter().zip(counts) {
        let dir = out.join(&split.name);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut entries = Vec::new();
        for page in it.by_ref().take(n) {
            let image = format!("{}/{}.png", split.name, page.label.page_id);
            let label = format!("{}/{}.json", split.name, page.label.page_id);
            page.image.save_png(&out.join(&image))?;
            let lp = out.join(&label);
            fs::write(&lp, page.label.to_json()).map_err(io_err(&lp))?;
            entries.push(PageEntry { image, label });
        }
        split_map.insert(split.name.clone(), entries);
    }

    let manifest = DatasetManifest {
        language: pool.records.first().map(|r| r.language.clone()).unwrap_or_default(),
        seed,
        composer: cfg.clone(),
        prep: prep.clone(),
        splits: split_map,
        placed_words: placed,
        skipped,
    };
    let mp = out.join(DATASET_MANIFEST);
    fs::write(&mp, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(io_err(&mp))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(w: u32, h: u32) -> BinaryImage {
        BinaryImage::new(w, h, vec![true; (w * h) as usize]).unwrap()
    }

    fn word(w: u32, h: u32, t: &str) -> WordInput {
        WordInput { crop: block(w, h), transcript: t.into(), language: "syn".into() }
    }

    #[test]
    fn empty_sequence_gives_blank_page() {
        let cfg = ComposerConfig::default();
        let page = compose_page(&[], &cfg, &mut page_rng(1, 0), "p").unwrap();
        assert_eq!(page.consumed, 0);
        assert!(page.label.words.is_empty());
        assert!(page.image.samples().iter().all(|&v| v == 255));
        assert_eq!((page.image.width(), page.image.height()), (1024, 1024));
    }

    #[test]
    fn single_word_sits_at_margin() {
        let cfg = ComposerConfig { height_factor_range: (1.0, 1.0), ..ComposerConfig::default() };
        let page = compose_page(&[word(120, 40, "abc")], &cfg, &mut page_rng(7, 0), "p").unwrap();
        let r = page.label.reference_height;
        let w = wordprep::scaled_width(120, 40, r);
        assert_eq!(page.label.words[0].bbox.to_array(), [16, 16, 16 + w, 16 + r]);
        assert_eq!(page.consumed, 1);
    }

    #[test]
    fn oversized_word_is_skipped_not_fatal() {
        let cfg = ComposerConfig::default();
        let words = vec![word(4000, 10, "long"), word(30, 30, "ok")];
        let page = compose_page(&words, &cfg, &mut page_rng(3, 0), "p").unwrap();
        assert_eq!(page.skipped.len(), 1);
        assert_eq!(page.skipped[0].index, 0);
        assert_eq!(page.label.words.len(), 1);
        assert_eq!(page.consumed, 2);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ComposerConfig::default();
        c.height_factor_range = (1.5, 2.5);
        assert!(c.validate().is_err());
        let mut c = ComposerConfig::default();
        c.page_width = 200;
        assert!(c.validate().is_err());
        let mut c = ComposerConfig::default();
        c.reference_height_range = (64, 32);
        assert!(c.validate().is_err());
    }

    #[test]
    fn split_counts_largest_remainder() {
        let s = default_splits();
        assert_eq!(split_counts(1, &s).unwrap(), vec![1, 0, 0]);
        assert_eq!(split_counts(10, &s).unwrap(), vec![8, 1, 1]);
        assert_eq!(split_counts(7, &s).unwrap().iter().sum::<usize>(), 7);
        let bad = vec![SplitFraction { name: "a".into(), fraction: 0.5 }];
        assert!(split_counts(3, &bad).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = ComposerConfig { space_x: SpaceX::CharRelative { min: 1.0, max: 3.0 }, ..ComposerConfig::default() };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"mode\":\"char_relative\""));
        let back: ComposerConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let partial: ComposerConfig = serde_json::from_str(r#"{"seed": 5}"#).unwrap();
        assert_eq!(partial.page_width, 1024);
    }
}
