//! Dataset evaluation: detection P/R/F1, isolated and end-to-end CRR/WRR, and
//! per-word latency, aggregated per language and overall.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::{ComposeError, DatasetManifest, PageLabel};
use crate::config::StageSelection;
use crate::imaging::{GrayImage, ImagingError};
use crate::metrics::{
    self, DetectionCounts, DetectionMetrics, LatencyStats, MetricsError, RecognitionCounts, RecognitionMetrics,
};
use crate::pipeline::oracle::{index_labels, LabelIndex};
use crate::pipeline::{
    recognize_detections, run_detection, AdapterError, AdapterSpec, BuiltinDetector, CropContext, Detector,
    DetectorParams, OracleDetector, OracleRecognizer, PageContext, PageResult, PipelineError, Recognizer, StageError,
    StageKind, TemplateRecognizer,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Detect,
    Isolated,
    E2e,
    All,
}

impl EvalMode {
    fn detects(self) -> bool {
        !matches!(self, Self::Isolated)
    }
    fn isolated(self) -> bool {
        matches!(self, Self::Isolated | Self::All)
    }
    fn e2e(self) -> bool {
        matches!(self, Self::E2e | Self::All)
    }
}

impl std::str::FromStr for EvalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "detect" => Ok(Self::Detect),
            "isolated" => Ok(Self::Isolated),
            "e2e" => Ok(Self::E2e),
            "all" => Ok(Self::All),
            other => Err(format!("unknown eval mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum PageImage {
    InMemory(GrayImage),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct EvalPage {
    pub label: PageLabel,
    pub image: PageImage,
}

impl EvalPage {
    pub fn load_image(&self) -> Result<GrayImage, ImagingError> {
        match &self.image {
            PageImage::InMemory(img) => Ok(img.clone()),
            PageImage::File(p) => GrayImage::open(p),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] ComposeError),
    #[error("dataset has no split `{0}`")]
    UnknownSplit(String),
    #[error("page {page_id}: {source}")]
    Image { page_id: String, source: ImagingError },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("cannot start stage: {0}")]
    Setup(#[source] StageError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("nothing to evaluate: {0}")]
    Empty(&'static str),
}

impl EvalError {
    /// The adapter failure underneath, if any.
    pub fn adapter_error(&self) -> Option<&AdapterError> {
        match self {
            Self::Pipeline(PipelineError { source: StageError::Adapter(e), .. }) | Self::Setup(StageError::Adapter(e)) => {
                Some(e)
            }
            _ => None,
        }
    }
}

/// Pages of one split, with image paths resolved against `dir`.
pub fn load_split(dir: &Path, split: &str) -> Result<Vec<EvalPage>, EvalError> {
    let manifest = DatasetManifest::load(dir)?;
    let entries = manifest.splits.get(split).ok_or_else(|| EvalError::UnknownSplit(split.to_string()))?;
    entries
        .iter()
        .map(|e| {
            Ok(EvalPage { label: PageLabel::load(&dir.join(&e.label))?, image: PageImage::File(dir.join(&e.image)) })
        })
        .collect()
}

/// Builds a private set of stages for each worker thread, so stateful stages
/// such as adapter subprocesses are never shared.
pub trait StageFactory: Sync {
    fn detector(&self) -> Result<Box<dyn Detector>, StageError>;
    fn recognizers(&self) -> Result<Vec<Box<dyn Recognizer>>, StageError>;
}

/// Stages built from textual selections.
#[derive(Debug, Clone)]
pub struct SelectedStages {
    pub detector: StageSelection,
    pub recognizers: Vec<StageSelection>,
    pub detector_params: DetectorParams,
    pub labels: LabelIndex,
    pub template: Option<TemplateRecognizer>,
}

impl SelectedStages {
    pub fn new(detector: StageSelection, recognizers: Vec<StageSelection>, labels: &[PageLabel]) -> Self {
        Self {
            detector,
            recognizers,
            detector_params: DetectorParams::default(),
            labels: index_labels(labels.iter().cloned()),
            template: None,
        }
    }

    pub fn with_template(mut self, template: TemplateRecognizer) -> Self {
        self.template = Some(template);
        self
    }

    /// True if some recognizer is the builtin template matcher.
    pub fn needs_template(&self) -> bool {
        self.recognizers.contains(&StageSelection::Builtin)
    }
}

impl StageFactory for SelectedStages {
    fn detector(&self) -> Result<Box<dyn Detector>, StageError> {
        Ok(match &self.detector {
            StageSelection::Builtin => Box::new(BuiltinDetector { params: self.detector_params }),
            StageSelection::Oracle => Box::new(OracleDetector::new(self.labels.clone())),
            StageSelection::Adapter(cmd) => Box::new(crate::pipeline::adapter::AdapterDetector::with_spec(
                &AdapterSpec::new(StageKind::Detector, cmd),
            )?),
        })
    }

    fn recognizers(&self) -> Result<Vec<Box<dyn Recognizer>>, StageError> {
        self.recognizers
            .iter()
            .map(|sel| -> Result<Box<dyn Recognizer>, StageError> {
                Ok(match sel {
                    StageSelection::Builtin => Box::new(
                        self.template.clone().ok_or_else(|| {
                            StageError::Setup("template recognizer selected but no atlas was given".into())
                        })?,
                    ),
                    StageSelection::Oracle => Box::new(OracleRecognizer::new(self.labels.clone())),
                    StageSelection::Adapter(cmd) => Box::new(crate::pipeline::adapter::AdapterRecognizer::with_spec(
                        &AdapterSpec::new(StageKind::Recognizer, cmd),
                    )?),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub thresholds: Vec<f64>,
    pub pad: u32,
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: EvalMode::All,
            thresholds: crate::config::DEFAULT_THRESHOLDS.to_vec(),
            pad: crate::pipeline::DEFAULT_PAD,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub by_language: BTreeMap<String, DetectionMetrics>,
    pub overall: DetectionMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub by_language: BTreeMap<String, RecognitionMetrics>,
    pub overall: RecognitionMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub isolated: Option<RecognitionReport>,
    pub e2e: Option<RecognitionReport>,
    pub latency: Option<LatencyStats>,
}

/// Aggregated metrics of one run; this is what `metrics.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub pages: usize,
    pub thresholds: Vec<f64>,
    pub detector: Option<String>,
    pub detection: Option<DetectionReport>,
    pub models: Vec<ModelReport>,
}

/// The report plus every end-to-end page result, indexed
/// `[model][page]` in input order.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    pub results: Vec<Vec<PageResult>>,
}

#[derive(Debug, Default)]
struct PageOutcome {
    language: String,
    detection: Vec<DetectionCounts>,
    e2e: Vec<(PageResult, RecognitionCounts)>,
    isolated: Vec<RecognitionCounts>,
}

struct Worker {
    detector: Option<Box<dyn Detector>>,
    recognizers: Vec<Box<dyn Recognizer>>,
}

fn evaluate_page(page: &EvalPage, w: &mut Worker, opts: &EvalOptions) -> Result<PageOutcome, EvalError> {
    let label = &page.label;
    let image = page.load_image().map_err(|source| EvalError::Image { page_id: label.page_id.clone(), source })?;
    let ctx = PageContext { page_id: label.page_id.clone(), language: label.language().to_string() };
    let mut out = PageOutcome { language: ctx.language.clone(), ..PageOutcome::default() };
    let gts = label.boxes();

    if let Some(detector) = w.detector.as_mut() {
        let (dets, detect_latency) = run_detection(&image, &ctx, detector.as_mut())?;
        let boxes: Vec<_> = dets.iter().map(|d| d.bbox).collect();
        out.detection =
            opts.thresholds.iter().map(|&t| DetectionCounts::from_boxes(&boxes, &gts, t)).collect();
        if opts.mode.e2e() {
            for r in w.recognizers.iter_mut() {
                let result = recognize_detections(&image, &ctx, &dets, detect_latency, r.as_mut(), opts.pad)?;
                let counts = metrics::e2e_counts(&result, label);
                out.e2e.push((result, counts));
            }
        }
    }

    if opts.mode.isolated() {
        for r in w.recognizers.iter_mut() {
            let mut pairs = Vec::with_capacity(label.words.len());
            for (i, word) in label.words.iter().enumerate() {
                let wrap = |source: StageError| PipelineError { page_id: label.page_id.clone(), word: Some(i), source };
                let crop_box = word.bbox.expand_clipped(opts.pad, image.width(), image.height());
                let crop = image.crop(&crop_box).map_err(|e| wrap(e.into()))?;
                let cctx = CropContext { page_id: ctx.page_id.clone(), language: word.language.clone(), bbox: word.bbox, crop_box };
                let text = r.recognize(&crop, &cctx).map_err(wrap)?;
                pairs.push((word.transcript.as_str(), text));
            }
            out.isolated.push(metrics::isolated_counts(&pairs)?);
        }
    }
    Ok(out)
}

/// Evaluate `pages` with stages from `factory`, spread over `opts.jobs`
/// worker threads. Results do not depend on the number of workers. On
/// failure the error of the lowest-indexed failing page is returned.
pub fn evaluate(pages: &[EvalPage], factory: &dyn StageFactory, opts: &EvalOptions) -> Result<EvalRun, EvalError> {
    if pages.is_empty() {
        return Err(EvalError::Empty("no pages"));
    }
    metrics::check_thresholds(&opts.thresholds)?;
    let jobs = crate::config::resolve_jobs(opts.jobs).min(pages.len());

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let outcomes: Mutex<Vec<(usize, Result<PageOutcome, EvalError>)>> = Mutex::new(Vec::new());
    let names: Mutex<Option<(Option<String>, Vec<String>)>> = Mutex::new(None);

    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| {
                let setup = || -> Result<Worker, StageError> {
                    let detector = if opts.mode.detects() { Some(factory.detector()?) } else { None };
                    let recognizers = if opts.mode == EvalMode::Detect { Vec::new() } else { factory.recognizers()? };
                    Ok(Worker { detector, recognizers })
                };
                let mut worker = match setup() {
                    Ok(w) => w,
                    Err(e) => {
                        stop.store(true, Ordering::SeqCst);
                        outcomes.lock().expect("outcome lock").push((0, Err(EvalError::Setup(e))));
                        return;
                    }
                };
                names.lock().expect("names lock").get_or_insert_with(|| {
                    (
                        worker.detector.as_ref().map(|d| d.name().to_string()),
                        worker.recognizers.iter().map(|r| r.name().to_string()).collect(),
                    )
                });
                while !stop.load(Ordering::SeqCst) {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= pages.len() {
                        break;
                    }
                    let r = evaluate_page(&pages[i], &mut worker, opts);
                    if r.is_err() {
                        stop.store(true, Ordering::SeqCst);
                    }
                    outcomes.lock().expect("outcome lock").push((i, r));
                }
            });
        }
    });

    let mut outcomes = outcomes.into_inner().expect("outcome lock");
    outcomes.sort_by_key(|(i, r)| (r.is_ok(), *i));
    if matches!(outcomes.first(), Some((_, Err(_)))) {
        return Err(outcomes.swap_remove(0).1.expect_err("checked"));
    }
    outcomes.sort_by_key(|(i, _)| *i);
    let outcomes: Vec<PageOutcome> = outcomes.into_iter().map(|(_, r)| r.expect("all ok")).collect();
    let (detector_name, model_names) = names.into_inner().expect("names lock").unwrap_or_default();
    Ok(aggregate(outcomes, detector_name, unique_names(model_names), opts))
}

/// Append `#2`, `#3`, ... to repeated model names.
fn unique_names(names: Vec<String>) -> Vec<String> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    names
        .into_iter()
        .map(|n| {
            let k = seen.entry(n.clone()).or_insert(0);
            *k += 1;
            if *k == 1 {
                n
            } else {
                format!("{n}#{k}")
            }
        })
        .collect()
}

fn recognition_report(per_page: impl Iterator<Item = (String, RecognitionCounts)>) -> RecognitionReport {
    let mut by_lang: BTreeMap<String, RecognitionCounts> = BTreeMap::new();
    let mut overall = RecognitionCounts::default();
    for (lang, c) in per_page {
        *by_lang.entry(lang).or_default() += c;
        overall += c;
    }
    RecognitionReport {
        by_language: by_lang.into_iter().map(|(l, c)| (l, c.into())).collect(),
        overall: overall.into(),
    }
}

fn aggregate(outcomes: Vec<PageOutcome>, detector: Option<String>, names: Vec<String>, opts: &EvalOptions) -> EvalRun {
    let nt = opts.thresholds.len();
    let detection = opts.mode.detects().then(|| {
        let mut by_lang: BTreeMap<String, Vec<DetectionCounts>> = BTreeMap::new();
        let mut overall = vec![DetectionCounts::default(); nt];
        for o in &outcomes {
            let slot = by_lang.entry(o.language.clone()).or_insert_with(|| vec![DetectionCounts::default(); nt]);
            for (k, c) in o.detection.iter().enumerate() {
                slot[k] += *c;
                overall[k] += *c;
            }
        }
        DetectionReport {
            by_language: by_lang.into_iter().map(|(l, c)| (l, DetectionMetrics::from_counts(&opts.thresholds, &c))).collect(),
            overall: DetectionMetrics::from_counts(&opts.thresholds, &overall),
        }
    });

    let mut models = Vec::new();
    let mut results = Vec::new();
    for (m, name) in names.into_iter().enumerate() {
        let isolated = opts
            .mode
            .isolated()
            .then(|| recognition_report(outcomes.iter().map(|o| (o.language.clone(), o.isolated[m]))));
        let (e2e, latency, pages) = if opts.mode.e2e() {
            let rep = recognition_report(outcomes.iter().map(|o| (o.language.clone(), o.e2e[m].1)));
            let pages: Vec<PageResult> = outcomes.iter().map(|o| o.e2e[m].0.clone()).collect();
            (Some(rep), metrics::latency_stats(&pages).ok(), pages)
        } else {
            (None, None, Vec::new())
        };
        models.push(ModelReport { name, isolated, e2e, latency });
        results.push(pages);
    }

    EvalRun {
        report: EvalReport {
            mode: opts.mode,
            pages: outcomes.len(),
            thresholds: opts.thresholds.clone(),
            detector,
            detection,
            models,
        },
        results,
    }
}

/// Convenience for in-memory pages.
pub fn in_memory_pages(pages: impl IntoIterator<Item = (GrayImage, PageLabel)>) -> Vec<EvalPage> {
    pages.into_iter().map(|(img, label)| EvalPage { label, image: PageImage::InMemory(img) }).collect()
}
