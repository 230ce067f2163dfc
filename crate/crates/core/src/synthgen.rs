//! Procedural handwriting-like word images.
//!
//! Each codepoint hashes to a fixed polyline on an 8×8 control grid. A glyph
//! always opens with an upstroke on its left edge and closes with a downstroke
//! on its right edge; consecutive glyphs are joined along the baseline, so a
//! rendered word is a single connected stroke. Style controls stroke width,
//! per-point jitter and slant.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::{BinaryImage, GrayImage, ImagingError};
use crate::text::{fnv1a64, mix, nfc, splitmix64};
use crate::wordprep::{self, PrepConfig, PrepError};

/// Side of the square glyph box in pixels.
pub const GLYPH_BOX: u32 = 48;
const GRID_STEP: f64 = 6.0;
const GRID_OFFSET: f64 = 3.0;
const GLYPH_GAP: u32 = 6;
const PAD_Y: u32 = 10;
/// Image height for every rendered word.
pub const WORD_IMAGE_HEIGHT: u32 = GLYPH_BOX + 2 * PAD_Y;
/// Baseline sits on the ruled-line rows so a ruled line never widens the word
/// vertically.
const BASELINE_Y: f64 = 57.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cannot render empty text")]
    EmptyText,
    #[error("invalid glyph style: {0}")]
    InvalidStyle(String),
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("styles_per_word must be >= 1")]
    NoStyles,
    #[error("pool manifest line {line}: {message}")]
    BadManifest { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Prep(#[from] PrepError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlyphStyle {
    pub stroke_width: u32,
    /// Maximum per-point displacement in pixels.
    pub jitter_amplitude: f64,
    /// Horizontal shear per pixel of height above the baseline.
    pub slant: f64,
    pub seed: u64,
}

impl Default for GlyphStyle {
    fn default() -> Self {
        Self { stroke_width: 5, jitter_amplitude: 0.0, slant: 0.0, seed: 0 }
    }
}

impl GlyphStyle {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.stroke_width < 1 {
            return Err(SynthError::InvalidStyle("stroke_width must be >= 1".into()));
        }
        if !(0.0..=3.0).contains(&self.jitter_amplitude) {
            return Err(SynthError::InvalidStyle(format!(
                "jitter_amplitude {} outside [0, 3]",
                self.jitter_amplitude
            )));
        }
        if !self.slant.is_finite() || self.slant.abs() > 0.5 {
            return Err(SynthError::InvalidStyle(format!("slant {} outside [-0.5, 0.5]", self.slant)));
        }
        Ok(())
    }

    /// The `index`-th pool style for a word, derived from the pool seed.
    pub fn for_pool(seed: u64, text: &str, index: u32) -> Self {
        let s = mix(mix(seed, fnv1a64(text.as_bytes())), index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        Self {
            stroke_width: rng.random_range(4..=6),
            jitter_amplitude: rng.random_range(0.4..1.2),
            slant: rng.random_range(-0.05..0.05),
            seed: s,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifacts {
    /// Full-width 2-px line at 85% of the image height.
    pub ruled_line: bool,
    /// Sparse specks in the outer 2-px frame.
    pub border_noise: bool,
}

/// Control-grid polyline for one codepoint; `(column, row)` with row 7 on
/// the baseline.
pub fn glyph_pattern(c: char) -> Vec<(u8, u8)> {
    let mut h = splitmix64(fnv1a64(&(c as u32).to_le_bytes()) ^ 0x5eed_9179);
    let mut next = |n: u64| {
        h = splitmix64(h);
        (h % n) as u8
    };
    let mut pts = vec![(0, 7), (0, next(3))];
    let free = 3 + next(3);
    for _ in 0..free {
        let x = 1 + next(6);
        let y = next(7);
        pts.push((x, y));
    }
    pts.push((7, next(4)));
    pts.push((7, 7));
    pts
}

/// Pixel-space stroke path for a whole word (before drawing).
fn word_path(chars: &[char], style: &GlyphStyle, origin_x: f64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(style.seed, fnv1a64(chars.iter().collect::<String>().as_bytes())));
    let j = style.jitter_amplitude;
    let jitter = |rng: &mut ChaCha8Rng| if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let mut path = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        let gx = origin_x + i as f64 * (GLYPH_BOX + GLYPH_GAP) as f64;
        let pattern = glyph_pattern(c);
        let last = pattern.len() - 1;
        for (k, &(cx, cy)) in pattern.iter().enumerate() {
            let mut x = gx + GRID_OFFSET + cx as f64 * GRID_STEP;
            let mut y = BASELINE_Y - (7 - cy) as f64 * GRID_STEP;
            // edge strokes keep their columns and baseline anchors
            let anchored_x = k <= 1 || k >= last - 1;
            let on_baseline = k == 0 || k == last;
            if !anchored_x {
                x += jitter(&mut rng);
            }
            if !on_baseline {
                y += jitter(&mut rng);
            }
            x += style.slant * (BASELINE_Y - y);
            path.push((x, y));
        }
    }
    path
}

fn stamp(ink: &mut [bool], width: u32, height: u32, cx: f64, cy: f64, radius: f64) {
    let r2 = radius * radius;
    let x_lo = (cx - radius).floor().max(0.0) as i64;
    let x_hi = ((cx + radius).ceil() as i64).min(width as i64 - 1);
    let y_lo = (cy - radius).floor().max(0.0) as i64;
    let y_hi = ((cy + radius).ceil() as i64).min(height as i64 - 1);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            if dx * dx + dy * dy <= r2 {
                ink[(y * width as i64 + x) as usize] = true;
            }
        }
    }
}

fn draw_path(ink: &mut [bool], width: u32, height: u32, path: &[(f64, f64)], stroke_width: u32) {
    let radius = (stroke_width as f64 / 2.0).max(0.5);
    for seg in path.windows(2) {
        let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
        let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        let steps = (len * 4.0).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            stamp(ink, width, height, x0 + t * (x1 - x0), y0 + t * (y1 - y0), radius);
        }
    }
}

fn word_width(n: usize) -> u32 {
    n as u32 * GLYPH_BOX + (n as u32).saturating_sub(1) * GLYPH_GAP
}

/// Horizontal padding large enough that the default border cut never
/// reaches the strokes.
fn pad_x(content: u32) -> u32 {
    ((0.04 * content as f64 + 4.0) / 0.92).ceil() as u32 + 2
}

/// Render `text` as black strokes on white paper.
pub fn render_word(text: &str, style: &GlyphStyle, artifacts: Artifacts) -> Result<GrayImage, SynthError> {
    style.validate()?;
    let text = nfc(text);
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return Err(SynthError::EmptyText);
    }
    let content = word_width(chars.len());
    let pad = pad_x(content);
    let (w, h) = (content + 2 * pad, WORD_IMAGE_HEIGHT);
    let mut ink = vec![false; (w * h) as usize];
    let path = word_path(&chars, style, pad as f64);
    draw_path(&mut ink, w, h, &path, style.stroke_width);

    if artifacts.ruled_line {
        let y = (0.85 * h as f64).floor() as u32;
        for row in y..(y + 2).min(h) {
            for x in 0..w {
                ink[(row * w + x) as usize] = true;
            }
        }
    }
    if artifacts.border_noise {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(style.seed ^ 0xb0b0, fnv1a64(text.as_bytes())));
        for y in 0..h {
            for x in 0..w {
                let in_frame = x < 2 || y < 2 || x >= w - 2 || y >= h - 2;
                if in_frame && rng.random_bool(0.08) {
                    ink[(y * w + x) as usize] = true;
                }
            }
        }
    }
    let samples = ink.into_iter().map(|v| if v { 0 } else { 255 }).collect();
    Ok(GrayImage::new(w, h, samples)?)
}

/// Tight clean binary rendering, used to paint recognized text back onto a
/// page.
pub fn render_word_mask(text: &str, style: &GlyphStyle) -> Result<BinaryImage, SynthError> {
    let img = render_word(text, style, Artifacts::default())?;
    let mask = crate::imaging::threshold_below(&img, 128);
    let bbox = mask.ink_bbox().ok_or(SynthError::EmptyText)?;
    Ok(mask.crop(&bbox)?)
}

/// One line of the pool manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolRecord {
    /// Image path relative to the pool directory.
    pub path: String,
    pub text: String,
    pub language: String,
    pub style_seed: u64,
    #[serde(default)]
    pub style: u32,
}

pub const POOL_MANIFEST: &str = "pool.jsonl";

/// Labelled word images on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPool {
    pub root: PathBuf,
    pub records: Vec<PoolRecord>,
}

impl WordPool {
    pub fn load(root: &Path) -> Result<Self, SynthError> {
        let path = root.join(POOL_MANIFEST);
        let file = fs::File::open(&path).map_err(io_err(&path))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PoolRecord = serde_json::from_str(&line)
                .map_err(|e| SynthError::BadManifest { line: i + 1, message: e.to_string() })?;
            records.push(rec);
        }
        Ok(Self { root: root.to_path_buf(), records })
    }

    pub fn image_path(&self, rec: &PoolRecord) -> PathBuf {
        self.root.join(&rec.path)
    }

    /// SHA-256 over the manifest and every referenced image, in order.
    pub fn digest(&self) -> Result<String, SynthError> {
        let mut hasher = Sha256::new();
        let manifest = self.root.join(POOL_MANIFEST);
        hasher.update(fs::read(&manifest).map_err(io_err(&manifest))?);
        for rec in &self.records {
            let p = self.image_path(rec);
            hasher.update(fs::read(&p).map_err(io_err(&p))?);
        }
        Ok(hex_digest(hasher.finalize().as_slice()))
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reference crops per word text, consumed by the template recognizer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Atlas {
    entries: BTreeMap<String, Vec<BinaryImage>>,
}

impl Atlas {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, text: &str, crop: BinaryImage) {
        self.entries.entry(nfc(text)).or_default().push(crop);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&[BinaryImage]> {
        self.entries.get(text).map(Vec::as_slice)
    }

    /// `(text, reference)` pairs in lexicographic text order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &BinaryImage)> {
        self.entries.iter().flat_map(|(t, v)| v.iter().map(move |c| (t.as_str(), c)))
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Preprocess pool images into an atlas. With `styles`, only records whose
    /// style index is listed are used.
    pub fn from_pool(pool: &WordPool, prep: &PrepConfig, styles: Option<&[u32]>) -> Result<Self, SynthError> {
        let mut atlas = Atlas::new();
        for rec in &pool.records {
            if styles.is_some_and(|s| !s.contains(&rec.style)) {
                continue;
            }
            let img = GrayImage::open(&pool.image_path(rec))?;
            let prepared = wordprep::preprocess_gray(&img, prep)?;
            atlas.insert(&rec.text, prepared.crop);
        }
        Ok(atlas)
    }
}

/// Result of [`build_pool`].
#[derive(Debug, Clone)]
pub struct PoolBuild {
    pub pool: WordPool,
    pub atlas: Atlas,
    /// Lexicon entries dropped as duplicates after NFC.
    pub duplicates: Vec<String>,
}

/// Options for [`build_pool`] beyond lexicon and seed.
#[derive(Debug, Clone)]
pub struct PoolOptions {
    pub styles_per_word: u32,
    pub language: String,
    /// Probability of a ruled line / border speckle on each pool image.
    pub artifact_rate: f64,
    pub prep: PrepConfig,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self { styles_per_word: 1, language: "syn".into(), artifact_rate: 0.5, prep: PrepConfig::default() }
    }
}

/// Render every lexicon word in `styles_per_word` styles, write PNGs and the
/// pool manifest under `out`, and return the matching atlas.
pub fn build_pool(lexicon: &[String], seed: u64, opts: &PoolOptions, out: &Path) -> Result<PoolBuild, SynthError> {
    if opts.styles_per_word == 0 {
        return Err(SynthError::NoStyles);
    }
    let mut seen = HashSet::new();
    let mut words = Vec::new();
    let mut duplicates = Vec::new();
    for raw in lexicon {
        let w = nfc(raw.trim());
        if w.is_empty() {
            continue;
        }
        if seen.insert(w.clone()) {
            words.push(w);
        } else {
            duplicates.push(w);
        }
    }
    if words.is_empty() {
        return Err(SynthError::EmptyLexicon);
    }

    let img_dir = out.join("words");
    fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    let mut records = Vec::new();
    let mut atlas = Atlas::new();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xa77f_ac75));
    for (wi, word) in words.iter().enumerate() {
        for s in 0..opts.styles_per_word {
            let style = GlyphStyle::for_pool(seed, word, s);
            let artifacts = Artifacts {
                ruled_line: rng.random_bool(opts.artifact_rate),
                border_noise: rng.random_bool(opts.artifact_rate),
            };
            let img = render_word(word, &style, artifacts)?;
            let rel = format!("words/w{wi:05}_s{s}.png");
            let path = out.join(&rel);
            img.save_png(&path)?;
            atlas.insert(word, wordprep::preprocess_gray(&img, &opts.prep)?.crop);
            records.push(PoolRecord {
                path: rel,
                text: word.clone(),
                language: opts.language.clone(),
                style_seed: style.seed,
                style: s,
            });
        }
    }
    let manifest = out.join(POOL_MANIFEST);
    let mut f = fs::File::create(&manifest).map_err(io_err(&manifest))?;
    for rec in &records {
        let line = serde_json::to_string(rec).expect("plain record serializes");
        writeln!(f, "{line}").map_err(io_err(&manifest))?;
    }
    Ok(PoolBuild { pool: WordPool { root: out.to_path_buf(), records }, atlas, duplicates })
}

/// Deterministic pseudo-words over `a..z`, `count` of them, lengths 3..=7.
pub fn synthetic_lexicon(count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x1e71c0));
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let len = rng.random_range(3..=7);
        let w: String = (0..len).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_rejected() {
        assert!(matches!(render_word("", &GlyphStyle::default(), Artifacts::default()), Err(SynthError::EmptyText)));
    }

    #[test]
    fn style_validation() {
        let bad = GlyphStyle { stroke_width: 0, ..GlyphStyle::default() };
        assert!(bad.validate().is_err());
        let bad = GlyphStyle { jitter_amplitude: 3.5, ..GlyphStyle::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rendering_is_deterministic() {
        let style = GlyphStyle { stroke_width: 4, jitter_amplitude: 1.0, slant: 0.03, seed: 77 };
        let fx = Artifacts { ruled_line: true, border_noise: true };
        assert_eq!(render_word("hello", &style, fx).unwrap(), render_word("hello", &style, fx).unwrap());
    }

    #[test]
    fn patterns_start_and_end_on_baseline() {
        for c in ['a', 'z', 'अ', '字'] {
            let p = glyph_pattern(c);
            assert_eq!(p.first(), Some(&(0, 7)));
            assert_eq!(p.last(), Some(&(7, 7)));
            assert!(p.iter().all(|&(x, y)| x < 8 && y < 8));
        }
    }

    #[test]
    fn rendered_word_is_one_component() {
        let style = GlyphStyle::for_pool(3, "stroke", 1);
        let img = render_word("stroke", &style, Artifacts::default()).unwrap();
        let mask = crate::imaging::threshold_below(&img, 128);
        assert_eq!(crate::imaging::connected_components(&mask).len(), 1);
    }

    #[test]
    fn lexicon_is_unique_and_seeded() {
        let a = synthetic_lexicon(50, 9);
        assert_eq!(a, synthetic_lexicon(50, 9));
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 50);
    }
}
