//! `pageocr`: build synthetic word pools, compose labeled pages, run page
//! inference and evaluate detector/recognizer combinations.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 adapter or
//! runtime error.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pageocr::composer::{compose_dataset, ComposeError, PageLabel};
use pageocr::config::{RunConfig, StageSelection};
use pageocr::eval::{evaluate, load_split, EvalError, EvalMode, EvalOptions, SelectedStages, StageFactory};
use pageocr::imaging::GrayImage;
use pageocr::pipeline::{infer_page, PageContext, PipelineError, StageError, TemplateRecognizer};
use pageocr::reporting::{emit_hocr, emit_json, emit_reconstruction, emit_text, write_bundle};
use pageocr::synthgen::{build_pool, Atlas, PoolOptions, WordPool};

#[derive(Parser)]
#[command(name = "pageocr", version, about = "Page-level handwritten OCR: detection, recognition, synthesis and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a lexicon into a word pool of PNG images plus pool.jsonl.
    SynthPool {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long, default_value_t = 1)]
        styles: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "syn")]
        language: String,
        /// Probability of a ruled line and of border speckle per image.
        #[arg(long, default_value_t = 0.5)]
        artifact_rate: f64,
    },
    /// Compose labeled pages from a word pool into train/val/test splits.
    Compose {
        #[arg(long)]
        pool: PathBuf,
        /// JSON run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Detect and recognize the words of one page image.
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "builtin")]
        detector: StageSelection,
        #[arg(long, default_value = "builtin")]
        recognizer: StageSelection,
        #[arg(long, value_enum, default_value_t = Format::Hocr)]
        format: Format,
        /// Transcript destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a reconstruction PNG here.
        #[arg(long)]
        reconstruct: Option<PathBuf>,
        /// Page label JSON, required by oracle stages.
        #[arg(long)]
        label: Option<PathBuf>,
        /// Word pool used as template atlas by the builtin recognizer.
        #[arg(long)]
        atlas: Option<PathBuf>,
        #[arg(long, default_value = "syn")]
        language: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate one detector and one or more recognizers on a dataset split.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "builtin")]
        detector: StageSelection,
        /// Repeat for several recognizers; all share one detection pass.
        #[arg(long = "recognizer", required = true)]
        recognizers: Vec<StageSelection>,
        #[arg(long, value_enum, default_value_t = Mode::All)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        atlas: Option<PathBuf>,
        /// Only pool entries of these style indices enter the atlas.
        #[arg(long, value_delimiter = ',')]
        atlas_styles: Option<Vec<u32>>,
        /// Comma-separated IoU thresholds.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Worker threads; 0 means one per core.
        #[arg(long, env = "PLATTER_JOBS")]
        jobs: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Hocr,
    Json,
    Txt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Detect,
    Isolated,
    E2e,
    All,
}

impl From<Mode> for EvalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Detect => EvalMode::Detect,
            Mode::Isolated => EvalMode::Isolated,
            Mode::E2e => EvalMode::E2e,
            Mode::All => EvalMode::All,
        }
    }
}

/// An error with its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn input(e: impl Display) -> Failure {
    Failure { code: 2, message: e.to_string() }
}

fn runtime(e: impl Display) -> Failure {
    Failure { code: 3, message: e.to_string() }
}

fn stage_failure(e: &StageError, context: String) -> Failure {
    match e {
        StageError::Adapter(a) => {
            let id = a.request_id().map_or("handshake".to_string(), |i| format!("request id {i}"));
            runtime(format!("{context}: adapter failure at {id}: {a}"))
        }
        other => runtime(format!("{context}: {other}")),
    }
}

fn pipeline_failure(e: &PipelineError) -> Failure {
    let ctx = match e.word {
        Some(w) => format!("page {}, word {w}", e.page_id),
        None => format!("page {}", e.page_id),
    };
    stage_failure(&e.source, ctx)
}

fn eval_failure(e: EvalError) -> Failure {
    match e {
        EvalError::Pipeline(p) => pipeline_failure(&p),
        EvalError::Setup(s) => match &s {
            StageError::Setup(_) => input(&s),
            _ => stage_failure(&s, "starting stages".into()),
        },
        EvalError::Image { .. } | EvalError::Dataset(_) | EvalError::UnknownSplit(_) | EvalError::Metrics(_) | EvalError::Empty(_) => {
            input(e)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(input),
        None => Ok(RunConfig::default()),
    }
}

fn load_atlas(dir: &Path, cfg: &RunConfig, styles: Option<&[u32]>) -> Result<TemplateRecognizer, Failure> {
    let pool = WordPool::load(dir).map_err(input)?;
    let atlas = Atlas::from_pool(&pool, &cfg.prep, styles).map_err(input)?;
    if atlas.is_empty() {
        return Err(input(format!("atlas {} has no usable words", dir.display())));
    }
    Ok(TemplateRecognizer::new(&atlas))
}

fn synth_pool(lexicon: &Path, styles: u32, seed: u64, out: &Path, language: String, artifact_rate: f64) -> Result<(), Failure> {
    let text = fs::read_to_string(lexicon).map_err(|e| input(format!("cannot read lexicon {}: {e}", lexicon.display())))?;
    let words: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect();
    if words.is_empty() {
        return Err(input(format!("lexicon {} is empty", lexicon.display())));
    }
    if !(0.0..=1.0).contains(&artifact_rate) {
        return Err(input(format!("artifact rate {artifact_rate} outside [0, 1]")));
    }
    let opts = PoolOptions { styles_per_word: styles, language, artifact_rate, ..PoolOptions::default() };
    let build = build_pool(&words, seed, &opts, out).map_err(input)?;
    let digest = build.pool.digest().map_err(runtime)?;
    println!("pool size: {} ({} words x {} styles)", build.pool.records.len(), build.atlas.len(), styles);
    if !build.duplicates.is_empty() {
        println!("duplicates dropped: {}", build.duplicates.len());
    }
    println!("digest: {digest}");
    Ok(())
}

fn compose(pool: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let pool = WordPool::load(pool).map_err(input)?;
    if pool.records.is_empty() {
        return Err(input("word pool is empty"));
    }
    let seed = seed.unwrap_or(cfg.seed);
    let manifest = compose_dataset(&pool, &cfg.composer, &cfg.prep, &cfg.splits, seed, out).map_err(|e| match e {
        ComposeError::Io { .. } | ComposeError::Imaging(_) => runtime(e),
        other => input(other),
    })?;
    println!("{:<8} {:>6} {:>7}", "split", "pages", "words");
    for split in &cfg.splits {
        let entries = &manifest.splits[&split.name];
        let mut words = 0;
        for e in entries {
            words += PageLabel::load(&out.join(&e.label)).map_err(runtime)?.words.len();
        }
        println!("{:<8} {:>6} {:>7}", split.name, entries.len(), words);
    }
    println!("{:<8} {:>6} {:>7}", "total", manifest.page_count(), manifest.placed_words);
    if !manifest.skipped.is_empty() {
        println!("skipped words: {}", manifest.skipped.len());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn infer(
    image: &Path,
    detector: StageSelection,
    recognizer: StageSelection,
    format: Format,
    out: Option<&Path>,
    reconstruct: Option<&Path>,
    label: Option<&Path>,
    atlas: Option<&Path>,
    language: String,
    config: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let page = GrayImage::open(image).map_err(input)?;
    let uses_oracle = detector == StageSelection::Oracle || recognizer == StageSelection::Oracle;
    let label = match label {
        Some(p) => Some(PageLabel::load(p).map_err(input)?),
        None if uses_oracle => return Err(input("oracle stages need --label")),
        None => None,
    };
    let page_id = label.as_ref().map_or_else(
        || image.file_stem().map_or("page".into(), |s| s.to_string_lossy().into_owned()),
        |l| l.page_id.clone(),
    );
    let labels: Vec<PageLabel> = label.into_iter().collect();
    let mut stages = SelectedStages::new(detector, vec![recognizer], &labels);
    stages.detector_params = cfg.detector_params;
    if stages.needs_template() {
        let dir = atlas.ok_or_else(|| input("the builtin recognizer needs --atlas"))?;
        stages = stages.with_template(load_atlas(dir, &cfg, None)?);
    }
    let mut det = stages.detector().map_err(|e| stage_failure(&e, "starting detector".into()))?;
    let mut rec = stages.recognizers().map_err(|e| stage_failure(&e, "starting recognizer".into()))?.remove(0);
    let ctx = PageContext { page_id, language };
    let result = infer_page(&page, &ctx, det.as_mut(), rec.as_mut(), cfg.pad).map_err(|e| pipeline_failure(&e))?;

    let text = match format {
        Format::Hocr => emit_hocr(&result, page.width(), page.height()),
        Format::Json => emit_json(&result) + "\n",
        Format::Txt => emit_text(&result),
    };
    match out {
        Some(p) => fs::write(p, text).map_err(|e| runtime(format!("{}: {e}", p.display())))?,
        None => print!("{text}"),
    }
    if let Some(p) = reconstruct {
        emit_reconstruction(&result, page.width(), page.height()).map_err(runtime)?.save_png(p).map_err(runtime)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    dataset: &Path,
    split: &str,
    detector: StageSelection,
    recognizers: Vec<StageSelection>,
    mode: Mode,
    out: &Path,
    atlas: Option<&Path>,
    atlas_styles: Option<&[u32]>,
    thresholds: Option<Vec<f64>>,
    jobs: Option<usize>,
    config: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let pages = load_split(dataset, split).map_err(eval_failure)?;
    if pages.is_empty() {
        return Err(input(format!("split `{split}` has no pages")));
    }
    let labels: Vec<PageLabel> = pages.iter().map(|p| p.label.clone()).collect();
    let mut stages = SelectedStages::new(detector, recognizers, &labels);
    stages.detector_params = cfg.detector_params;
    if stages.needs_template() && !matches!(mode, Mode::Detect) {
        let dir = atlas.ok_or_else(|| input("the builtin recognizer needs --atlas"))?;
        stages = stages.with_template(load_atlas(dir, &cfg, atlas_styles)?);
    }
    let opts = EvalOptions {
        mode: mode.into(),
        thresholds: thresholds.unwrap_or(cfg.thresholds),
        pad: cfg.pad,
        jobs: jobs.unwrap_or(cfg.jobs),
    };
    let run = evaluate(&pages, &stages, &opts).map_err(eval_failure)?;
    let bundle = write_bundle(&run.report, out).map_err(runtime)?;

    let r = &run.report;
    println!("pages: {}", r.pages);
    if let Some(det) = &r.detection {
        for s in &det.overall.per_threshold {
            println!(
                "detection @{}: P {:.2} R {:.2} F1 {:.2}",
                s.threshold,
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1
            );
        }
    }
    for m in &r.models {
        for (name, block) in [("isolated", &m.isolated), ("e2e", &m.e2e)] {
            if let Some(b) = block {
                println!("{} {name}: CRR {:.2} WRR {:.2}", m.name, b.overall.crr, b.overall.wrr);
            }
        }
        if let Some(l) = m.latency {
            println!("{} latency: {:.2} ms/word", m.name, 1000.0 * l.mean_per_word);
        }
    }
    println!("report: {}", bundle.metrics_json.parent().unwrap_or(out).display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::SynthPool { lexicon, styles, seed, out, language, artifact_rate } => {
            synth_pool(&lexicon, styles, seed, &out, language, artifact_rate)
        }
        Command::Compose { pool, config, out, seed } => compose(&pool, config.as_deref(), &out, seed),
        Command::Infer { image, detector, recognizer, format, out, reconstruct, label, atlas, language, config } => infer(
            &image,
            detector,
            recognizer,
            format,
            out.as_deref(),
            reconstruct.as_deref(),
            label.as_deref(),
            atlas.as_deref(),
            language,
            config.as_deref(),
        ),
        Command::Eval { dataset, split, detector, recognizers, mode, out, atlas, atlas_styles, thresholds, jobs, config } => {
            eval(
                &dataset,
                &split,
                detector,
                recognizers,
                mode,
                &out,
                atlas.as_deref(),
                atlas_styles.as_deref(),
                thresholds,
                jobs,
                config.as_deref(),
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("pageocr: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
