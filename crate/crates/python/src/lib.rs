//! Python bindings for the pageocr core: box geometry, matching, metrics,
//! word rendering, preprocessing and page composition.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use pageocr::composer::{self, ComposerConfig, WordInput};
use pageocr::geometry;
use pageocr::imaging::{self, BinaryImage, GrayImage};
use pageocr::metrics;
use pageocr::synthgen::{self, Artifacts, GlyphStyle};
use pageocr::wordprep::{self, PrepConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Axis-aligned box with half-open pixel extents `[x0, x1) x [y0, y1)`.
#[pyclass(name = "BBox", frozen, eq, hash, from_py_object)]
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct PyBBox(geometry::BBox);

#[pymethods]
impl PyBBox {
    #[new]
    fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> PyResult<Self> {
        geometry::BBox::new(x0, y0, x1, y1).map(Self).map_err(value_err)
    }

    #[getter]
    fn x0(&self) -> u32 {
        self.0.x0()
    }
    #[getter]
    fn y0(&self) -> u32 {
        self.0.y0()
    }
    #[getter]
    fn x1(&self) -> u32 {
        self.0.x1()
    }
    #[getter]
    fn y1(&self) -> u32 {
        self.0.y1()
    }
    #[getter]
    fn width(&self) -> u32 {
        self.0.width()
    }
    #[getter]
    fn height(&self) -> u32 {
        self.0.height()
    }

    fn area(&self) -> u64 {
        self.0.area()
    }

    fn to_list(&self) -> [u32; 4] {
        self.0.to_array()
    }

    fn __repr__(&self) -> String {
        let [x0, y0, x1, y1] = self.0.to_array();
        format!("BBox({x0}, {y0}, {x1}, {y1})")
    }
}

/// 8-bit grayscale image, row-major, 0 = black ink, 255 = white paper.
#[pyclass(name = "Image", frozen, from_py_object)]
#[derive(Clone)]
struct PyImage(GrayImage);

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: u32, height: u32, data: Vec<u8>) -> PyResult<Self> {
        GrayImage::new(width, height, data).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn from_png(data: &[u8]) -> PyResult<Self> {
        GrayImage::decode_png(data).map(Self).map_err(value_err)
    }

    #[getter]
    fn width(&self) -> u32 {
        self.0.width()
    }
    #[getter]
    fn height(&self) -> u32 {
        self.0.height()
    }

    fn data<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.samples())
    }

    fn to_png<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = self.0.encode_png().map_err(value_err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.0.width(), self.0.height())
    }
}

fn mask_to_image(mask: &BinaryImage) -> GrayImage {
    let samples = mask.ink().iter().map(|&v| if v { 0 } else { 255 }).collect();
    GrayImage::new(mask.width(), mask.height(), samples).expect("mask dimensions are valid")
}

fn boxes(v: &[PyBBox]) -> Vec<geometry::BBox> {
    v.iter().map(|b| b.0).collect()
}

#[pyfunction]
fn iou(a: PyBBox, b: PyBBox) -> f64 {
    geometry::iou(&a.0, &b.0)
}

/// Greedy one-to-one matching. Returns a dict with `pairs` as
/// `(detection, ground_truth, iou)` tuples and the unmatched indices.
#[pyfunction]
fn match_boxes<'py>(py: Python<'py>, detections: Vec<PyBBox>, ground_truths: Vec<PyBBox>, threshold: f64) -> PyResult<Bound<'py, PyDict>> {
    let m = geometry::match_boxes(&boxes(&detections), &boxes(&ground_truths), threshold);
    let d = PyDict::new(py);
    let pairs: Vec<(usize, usize, f64)> = m.pairs.iter().map(|p| (p.detection, p.ground_truth, p.iou)).collect();
    d.set_item("pairs", pairs)?;
    d.set_item("unmatched_detections", m.unmatched_detections)?;
    d.set_item("unmatched_ground_truths", m.unmatched_ground_truths)?;
    Ok(d)
}

/// Precision, recall and F1 over `(detections, ground_truths)` pages, one
/// dict per threshold.
#[pyfunction]
#[pyo3(signature = (pages, thresholds = vec![0.5, 0.75, 0.9]))]
fn detection_metrics<'py>(
    py: Python<'py>,
    pages: Vec<(Vec<PyBBox>, Vec<PyBBox>)>,
    thresholds: Vec<f64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let pages: Vec<_> = pages.iter().map(|(d, g)| (boxes(d), boxes(g))).collect();
    let m = metrics::detection_prf(&pages, &thresholds).map_err(value_err)?;
    m.per_threshold
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("threshold", s.threshold)?;
            d.set_item("tp", s.counts.tp)?;
            d.set_item("fp", s.counts.fp)?;
            d.set_item("fn", s.counts.fn_)?;
            d.set_item("precision", s.precision)?;
            d.set_item("recall", s.recall)?;
            d.set_item("f1", s.f1)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn levenshtein(a: &str, b: &str) -> usize {
    metrics::levenshtein(a, b)
}

/// CRR and WRR (percent) over `(ground_truth, prediction)` pairs.
#[pyfunction]
fn isolated_eval<'py>(py: Python<'py>, pairs: Vec<(String, String)>) -> PyResult<Bound<'py, PyDict>> {
    let m = metrics::isolated_eval(&pairs).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("crr", m.crr)?;
    d.set_item("wrr", m.wrr)?;
    d.set_item("gt_char_total", m.counts.gt_char_total)?;
    d.set_item("edit_total", m.counts.edit_total)?;
    d.set_item("gt_word_total", m.counts.gt_word_total)?;
    d.set_item("exact_match_total", m.counts.exact_match_total)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (text, stroke_width = 5, jitter = 0.0, slant = 0.0, seed = 0, ruled_line = false, border_noise = false))]
fn render_word(
    text: &str,
    stroke_width: u32,
    jitter: f64,
    slant: f64,
    seed: u64,
    ruled_line: bool,
    border_noise: bool,
) -> PyResult<PyImage> {
    let style = GlyphStyle { stroke_width, jitter_amplitude: jitter, slant, seed };
    synthgen::render_word(text, &style, Artifacts { ruled_line, border_noise }).map(PyImage).map_err(value_err)
}

/// Word preprocessing with default settings. Returns the tight binary crop
/// (ink 0, paper 255) and its box in the input image.
#[pyfunction]
#[pyo3(signature = (image, blur = true))]
fn preprocess(image: PyImage, blur: bool) -> PyResult<(PyImage, PyBBox)> {
    let cfg = PrepConfig { blur, ..PrepConfig::default() };
    let w = wordprep::preprocess_gray(&image.0, &cfg).map_err(value_err)?;
    Ok((PyImage(mask_to_image(&w.crop)), PyBBox(w.source_box)))
}

/// Compose one page from `(crop, transcript, language)` words, where each
/// crop is a preprocessed word (ink below 128). Returns the page image, its
/// label as JSON and how many words were consumed.
#[pyfunction]
#[pyo3(signature = (words, seed = 0, page_width = 1024, page_height = 1024, page_id = "page"))]
fn compose_page(
    words: Vec<(PyImage, String, String)>,
    seed: u64,
    page_width: u32,
    page_height: u32,
    page_id: &str,
) -> PyResult<(PyImage, String, usize)> {
    let inputs: Vec<WordInput> = words
        .into_iter()
        .map(|(img, transcript, language)| WordInput { crop: imaging::threshold_below(&img.0, 128), transcript, language })
        .collect();
    let cfg = ComposerConfig { page_width, page_height, seed, ..ComposerConfig::default() };
    let mut rng = composer::page_rng(seed, 0);
    let page = composer::compose_page(&inputs, &cfg, &mut rng, page_id).map_err(value_err)?;
    Ok((PyImage(page.image), page.label.to_json(), page.consumed))
}

#[pymodule]
fn pageocr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBBox>()?;
    m.add_class::<PyImage>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(match_boxes, m)?)?;
    m.add_function(wrap_pyfunction!(detection_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(isolated_eval, m)?)?;
    m.add_function(wrap_pyfunction!(render_word, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(compose_page, m)?)?;
    Ok(())
}
