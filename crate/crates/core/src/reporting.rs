//! Page transcripts (hOCR, JSON, plain text), reconstruction images, and the
//! CSV tables and SVG charts of an evaluation report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::eval::EvalReport;
use crate::geometry::BBox;
use crate::imaging::{self, GrayImage, ImagingError};
use crate::metrics::DetectionMetrics;
use crate::pipeline::{PageResult, READING_BAND};
use crate::synthgen::{self, GlyphStyle};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(|source| ReportError::Io { path: path.to_path_buf(), source })
}

pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn bbox_title(b: &BBox) -> String {
    format!("bbox {} {} {} {}", b.x0(), b.y0(), b.x1(), b.y1())
}

/// hOCR (XHTML) transcript: one `ocr_page` with one `ocrx_word` per word.
pub fn emit_hocr(result: &PageResult, width: u32, height: u32) -> String {
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str("<!DOCTYPE html PUBLIC \"-//W3C//DTD XHTML 1.0 Transitional//EN\" \"http://www.w3.org/TR/xhtml1/DTD/xhtml1-transitional.dtd\">\n");
    s.push_str("<html xmlns=\"http://www.w3.org/1999/xhtml\" xml:lang=\"en\" lang=\"en\">\n<head>\n");
    s.push_str("<title></title>\n<meta http-equiv=\"Content-Type\" content=\"text/html; charset=utf-8\" />\n");
    s.push_str("<meta name=\"ocr-system\" content=\"pageocr\" />\n");
    s.push_str("<meta name=\"ocr-capabilities\" content=\"ocr_page ocrx_word\" />\n</head>\n<body>\n");
    let _ = writeln!(
        s,
        "<div class=\"ocr_page\" id=\"page_1\" title=\"image {}; bbox 0 0 {width} {height}\">",
        xml_escape(&result.page_id)
    );
    for (i, w) in result.words.iter().enumerate() {
        let _ = writeln!(
            s,
            "<span class=\"ocrx_word\" id=\"word_1_{}\" title=\"{}; x_wconf {}\">{}</span>",
            i + 1,
            bbox_title(&w.detection.bbox),
            (w.detection.score * 100.0).round() as i64,
            xml_escape(&w.text)
        );
    }
    s.push_str("</div>\n</body>\n</html>\n");
    s
}

#[derive(Serialize)]
struct JsonWord<'a> {
    bbox: BBox,
    text: &'a str,
}

#[derive(Serialize)]
struct JsonPage<'a> {
    page_id: &'a str,
    words: Vec<JsonWord<'a>>,
}

/// `{page_id, words:[{bbox, text}]}`.
pub fn emit_json(result: &PageResult) -> String {
    let page = JsonPage {
        page_id: &result.page_id,
        words: result.words.iter().map(|w| JsonWord { bbox: w.detection.bbox, text: &w.text }).collect(),
    };
    serde_json::to_string_pretty(&page).expect("transcript serializes")
}

/// Words joined by spaces, one line per reading band.
pub fn emit_text(result: &PageResult) -> String {
    let mut out = String::new();
    let mut band = None;
    for w in &result.words {
        let b = w.detection.bbox.y0() / READING_BAND;
        match band {
            Some(prev) if prev == b => out.push(' '),
            Some(_) => out.push('\n'),
            None => {}
        }
        band = Some(b);
        out.push_str(&w.text);
    }
    if !out.is_empty() {
        out.push('\n');
    }
    out
}

/// White page with each recognized text redrawn in procedural glyphs inside
/// its box and every box outlined in 1-px black.
pub fn emit_reconstruction(result: &PageResult, width: u32, height: u32) -> Result<GrayImage, ReportError> {
    let mut page = GrayImage::white(width, height)?;
    let style = GlyphStyle { stroke_width: 4, ..GlyphStyle::default() };
    for w in &result.words {
        let b = w.detection.bbox;
        if b.x1() > width || b.y1() > height {
            continue;
        }
        if !w.text.is_empty() && b.width() > 2 && b.height() > 2 {
            if let Ok(mask) = synthgen::render_word_mask(&w.text, &style) {
                let scaled = imaging::resize_nearest(&mask, b.width() - 2, b.height() - 2);
                for y in 0..scaled.height() {
                    for x in 0..scaled.width() {
                        if scaled.get(x, y) {
                            page.set(b.x0() + 1 + x, b.y0() + 1 + y, 96);
                        }
                    }
                }
            }
        }
        for x in b.x0()..b.x1() {
            page.set(x, b.y0(), 0);
            page.set(x, b.y1() - 1, 0);
        }
        for y in b.y0()..b.y1() {
            page.set(b.x0(), y, 0);
            page.set(b.x1() - 1, y, 0);
        }
    }
    Ok(page)
}

/// Percent with two decimals, as printed in CSV tables.
pub fn csv_pct(ratio_or_pct: f64) -> String {
    format!("{ratio_or_pct:.2}")
}

/// One decimal, as printed on chart labels.
pub fn chart_label(v: f64) -> String {
    format!("{v:.1}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn tau(t: f64) -> String {
    format!("{t}")
}

/// Rows = languages (plus `overall`), columns = P/R/F1 per IoU threshold, in
/// percent.
pub fn detection_csv(report: &EvalReport) -> String {
    let mut s = String::from("language");
    for t in &report.thresholds {
        let t = tau(*t);
        let _ = write!(s, ",P@{t},R@{t},F1@{t}");
    }
    s.push('\n');
    let mut row = |name: &str, m: &DetectionMetrics| {
        s.push_str(&csv_field(name));
        for sc in &m.per_threshold {
            let _ = write!(s, ",{},{},{}", csv_pct(100.0 * sc.precision), csv_pct(100.0 * sc.recall), csv_pct(100.0 * sc.f1));
        }
        s.push('\n');
    };
    if let Some(det) = &report.detection {
        for (lang, m) in &det.by_language {
            row(lang, m);
        }
        row("overall", &det.overall);
    }
    s
}

/// Rows = languages (plus `overall`), columns = `<model> <mode> CRR/WRR`.
pub fn recognition_csv(report: &EvalReport) -> String {
    let mut s = String::from("language");
    let mut columns = Vec::new();
    for m in &report.models {
        for (mode, block) in [("isolated", &m.isolated), ("e2e", &m.e2e)] {
            if block.is_some() {
                let _ = write!(s, ",{},{}", csv_field(&format!("{} {mode} CRR", m.name)), csv_field(&format!("{} {mode} WRR", m.name)));
                columns.push(block.as_ref().expect("checked"));
            }
        }
    }
    s.push('\n');
    let mut langs: Vec<&str> = Vec::new();
    for c in &columns {
        for l in c.by_language.keys() {
            if !langs.contains(&l.as_str()) {
                langs.push(l);
            }
        }
    }
    langs.sort();
    for lang in langs.iter().copied().chain(std::iter::once("overall")) {
        s.push_str(&csv_field(lang));
        for c in &columns {
            let m = if lang == "overall" { Some(&c.overall) } else { c.by_language.get(lang) };
            match m {
                Some(m) => {
                    let _ = write!(s, ",{},{}", csv_pct(m.crr), csv_pct(m.wrr));
                }
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    s
}

/// One row per model: mean and median milliseconds per word.
pub fn latency_csv(report: &EvalReport) -> String {
    let mut s = String::from("model,mean_ms_per_word,median_ms_per_word,words\n");
    for m in &report.models {
        if let Some(l) = &m.latency {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                csv_field(&m.name),
                csv_pct(1000.0 * l.mean_per_word),
                csv_pct(1000.0 * l.median_per_word),
                l.word_count
            );
        }
    }
    s
}

struct Bar {
    group: String,
    series: String,
    value: f64,
    label: String,
}

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"];

/// Grouped vertical bar chart. `full_scale` maps to the plot height.
fn bar_chart(title: &str, y_label: &str, bars: &[Bar], full_scale: f64) -> String {
    let mut series: Vec<&str> = Vec::new();
    let mut groups: Vec<&str> = Vec::new();
    for b in bars {
        if !series.contains(&b.series.as_str()) {
            series.push(&b.series);
        }
        if !groups.contains(&b.group.as_str()) {
            groups.push(&b.group);
        }
    }
    let (left, top, plot_h, bar_w, gap) = (70.0, 50.0, 300.0, 28.0, 30.0);
    let group_w = series.len().max(1) as f64 * bar_w + gap;
    let width = left + groups.len().max(1) as f64 * group_w + 160.0;
    let height = top + plot_h + 70.0;
    let scale = if full_scale > 0.0 { plot_h / full_scale } else { 0.0 };

    let mut s = String::new();
    let _ = writeln!(s, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{:.0}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">{}</text>", width / 2.0, xml_escape(title));
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.0}\" transform=\"rotate(-90 16 {:.0})\" text-anchor=\"middle\">{}</text>",
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        xml_escape(y_label)
    );
    let base = top + plot_h;
    let _ = writeln!(s, "<line x1=\"{left}\" y1=\"{base}\" x2=\"{:.0}\" y2=\"{base}\" stroke=\"black\"/>", width - 150.0);
    let _ = writeln!(s, "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{base}\" stroke=\"black\"/>");
    for (gi, g) in groups.iter().enumerate() {
        let gx = left + gap / 2.0 + gi as f64 * group_w;
        for b in bars.iter().filter(|b| b.group == *g) {
            let si = series.iter().position(|x| *x == b.series).expect("series collected");
            let x = gx + si as f64 * bar_w;
            let h = (b.value.max(0.0) * scale).min(plot_h);
            let _ = writeln!(
                s,
                "<rect class=\"bar\" x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{}\" data-group=\"{}\" data-series=\"{}\"/>",
                base - h,
                bar_w - 4.0,
                PALETTE[si % PALETTE.len()],
                xml_escape(g),
                xml_escape(&b.series)
            );
            let _ = writeln!(
                s,
                "<text class=\"value\" x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" data-group=\"{}\" data-series=\"{}\">{}</text>",
                x + (bar_w - 4.0) / 2.0,
                base - h - 4.0,
                xml_escape(g),
                xml_escape(&b.series),
                xml_escape(&b.label)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            gx + series.len() as f64 * bar_w / 2.0,
            base + 18.0,
            xml_escape(g)
        );
    }
    for (si, name) in series.iter().enumerate() {
        let y = top + 10.0 + si as f64 * 18.0;
        let x = width - 140.0;
        let _ = writeln!(s, "<rect x=\"{x:.0}\" y=\"{:.0}\" width=\"12\" height=\"12\" fill=\"{}\"/>", y - 10.0, PALETTE[si % PALETTE.len()]);
        let _ = writeln!(s, "<text x=\"{:.0}\" y=\"{y:.0}\">{}</text>", x + 18.0, xml_escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// P/R/F1 bars per IoU threshold, in percent.
pub fn detection_chart(report: &EvalReport) -> String {
    let mut bars = Vec::new();
    if let Some(det) = &report.detection {
        for sc in &det.overall.per_threshold {
            for (series, v) in [("Precision", sc.precision), ("Recall", sc.recall), ("F1", sc.f1)] {
                let pct = 100.0 * v;
                bars.push(Bar { group: format!("IoU {}", tau(sc.threshold)), series: series.into(), value: pct, label: chart_label(pct) });
            }
        }
    }
    bar_chart("Detection", "percent", &bars, 100.0)
}

/// Isolated vs end-to-end CRR and WRR per model.
pub fn recognition_chart(report: &EvalReport) -> String {
    let mut bars = Vec::new();
    for m in &report.models {
        for (mode, block) in [("isolated", &m.isolated), ("e2e", &m.e2e)] {
            if let Some(b) = block {
                for (metric, v) in [("CRR", b.overall.crr), ("WRR", b.overall.wrr)] {
                    bars.push(Bar { group: m.name.clone(), series: format!("{metric} {mode}"), value: v, label: chart_label(v) });
                }
            }
        }
    }
    bar_chart("Recognition", "percent", &bars, 100.0)
}

/// Mean per-word end-to-end latency per model, in milliseconds.
pub fn latency_chart(report: &EvalReport) -> String {
    let bars: Vec<Bar> = report
        .models
        .iter()
        .filter_map(|m| m.latency.map(|l| (m, 1000.0 * l.mean_per_word)))
        .map(|(m, ms)| Bar { group: m.name.clone(), series: "mean ms/word".into(), value: ms, label: chart_label(ms) })
        .collect();
    let max = bars.iter().map(|b| b.value).fold(0.0, f64::max);
    bar_chart("Latency", "ms per word", &bars, if max > 0.0 { max * 1.15 } else { 1.0 })
}

/// Files written for one evaluation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportBundle {
    pub metrics_json: PathBuf,
    pub detection_csv: PathBuf,
    pub recognition_csv: PathBuf,
    pub latency_csv: PathBuf,
    pub charts: Vec<PathBuf>,
}

impl ReportBundle {
    pub fn files(&self) -> Vec<&Path> {
        let mut v = vec![self.metrics_json.as_path(), &self.detection_csv, &self.recognition_csv, &self.latency_csv];
        v.extend(self.charts.iter().map(PathBuf::as_path));
        v
    }
}

pub fn write_bundle(report: &EvalReport, out: &Path) -> Result<ReportBundle, ReportError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    let charts_dir = out.join("charts");
    fs::create_dir_all(&charts_dir).map_err(io(&charts_dir))?;
    let bundle = ReportBundle {
        metrics_json: out.join("metrics.json"),
        detection_csv: out.join("detection.csv"),
        recognition_csv: out.join("recognition.csv"),
        latency_csv: out.join("latency.csv"),
        charts: vec![charts_dir.join("detection.svg"), charts_dir.join("recognition.svg"), charts_dir.join("latency.svg")],
    };
    write_file(&bundle.metrics_json, serde_json::to_string_pretty(report).expect("report serializes"))?;
    write_file(&bundle.detection_csv, detection_csv(report))?;
    write_file(&bundle.recognition_csv, recognition_csv(report))?;
    write_file(&bundle.latency_csv, latency_csv(report))?;
    write_file(&bundle.charts[0], detection_chart(report))?;
    write_file(&bundle.charts[1], recognition_chart(report))?;
    write_file(&bundle.charts[2], latency_chart(report))?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{Detection, WordResult};

    fn page(words: &[([i64; 4], &str)]) -> PageResult {
        PageResult {
            page_id: "p".into(),
            width: 100,
            height: 80,
            words: words
                .iter()
                .map(|(b, t)| WordResult {
                    detection: Detection::certain(BBox::new(b[0], b[1], b[2], b[3]).unwrap()),
                    text: t.to_string(),
                    latency: 0.0,
                })
                .collect(),
            detect_latency: 0.0,
            total_latency: 0.0,
        }
    }

    #[test]
    fn hocr_zero_and_one_word() {
        let empty = emit_hocr(&page(&[]), 100, 80);
        assert!(empty.contains("class=\"ocr_page\""));
        assert!(empty.contains("bbox 0 0 100 80"));
        assert!(!empty.contains("class=\"ocrx_word\""));
        let one = emit_hocr(&page(&[([10, 10, 50, 30], "ab")]), 100, 80);
        assert_eq!(one.matches("class=\"ocrx_word\"").count(), 1);
        assert!(one.contains("title=\"bbox 10 10 50 30; x_wconf 100\">ab</span>"));
    }

    #[test]
    fn hocr_escapes_text() {
        let h = emit_hocr(&page(&[([0, 0, 5, 5], "a<b&\"c")]), 10, 10);
        assert!(h.contains(">a&lt;b&amp;&quot;c</span>"));
    }

    #[test]
    fn text_lines_follow_bands() {
        let r = page(&[([0, 0, 5, 5], "a"), ([10, 3, 15, 8], "b"), ([0, 40, 5, 45], "c")]);
        assert_eq!(emit_text(&r), "a b\nc\n");
        assert_eq!(emit_text(&page(&[])), "");
    }

    #[test]
    fn json_transcript_shape() {
        let j = emit_json(&page(&[([1, 2, 3, 4], "x")]));
        let v: serde_json::Value = serde_json::from_str(&j).unwrap();
        assert_eq!(v["page_id"], "p");
        assert_eq!(v["words"][0]["bbox"], serde_json::json!([1, 2, 3, 4]));
        assert_eq!(v["words"][0]["text"], "x");
    }

    #[test]
    fn reconstruction_outlines_boxes() {
        let blank = emit_reconstruction(&page(&[]), 100, 80).unwrap();
        assert!(blank.samples().iter().all(|&v| v == 255));
        let r = emit_reconstruction(&page(&[([10, 10, 60, 30], "ab")]), 100, 80).unwrap();
        assert_eq!(r.get(10, 10), 0);
        assert_eq!(r.get(59, 29), 0);
        assert_eq!(r.get(9, 9), 255);
        assert!(r.samples().iter().any(|&v| v == 96));
    }

    #[test]
    fn bar_labels_and_full_scale() {
        let bars = vec![Bar { group: "g".into(), series: "s".into(), value: 100.0, label: chart_label(100.0) }];
        let svg = bar_chart("t", "y", &bars, 100.0);
        assert!(svg.contains(">100.0</text>"));
        assert!(svg.contains("height=\"300.0\""));
    }
}
