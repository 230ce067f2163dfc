//! Reference stage adapter speaking the JSON-lines protocol on stdin/stdout.
//!
//! Modes:
//!   echo --text T            detector: one box covering the page; recognizer: always T
//!   replay --dataset DIR     answers from the dataset's labels
//!   builtin [--atlas POOL]   the builtin detector / template recognizer
//!
//! Fault injection (requests counted from 1): --delay-ms N, --malformed-at N,
//! --crash-at N, --hang-at N. --name sets the name reported in `ready`.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use pageocr::composer::{DatasetManifest, PageLabel};
use pageocr::imaging::GrayImage;
use pageocr::pipeline::adapter::{
    decode_image, DetectResponse, FrameworkMessage, Ready, ReadyBody, RecognizeResponse, WireWord, PROTOCOL_VERSION,
};
use pageocr::pipeline::oracle::oracle_text;
use pageocr::pipeline::{detect_builtin, DetectorParams, StageKind, TemplateRecognizer};
use pageocr::synthgen::{Atlas, WordPool};
use pageocr::wordprep::PrepConfig;
use pageocr::BBox;
use sha2::{Digest, Sha256};

enum Mode {
    Echo(String),
    Replay { by_pixels: HashMap<[u8; 32], PageLabel>, by_id: HashMap<String, PageLabel> },
    Builtin(Option<TemplateRecognizer>),
}

#[derive(Default)]
struct Faults {
    delay: Option<Duration>,
    malformed_at: Option<u64>,
    crash_at: Option<u64>,
    hang_at: Option<u64>,
}

fn pixel_key(img: &GrayImage) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.samples());
    h.finalize().into()
}

fn load_replay(dir: &PathBuf) -> Result<Mode, String> {
    let manifest = DatasetManifest::load(dir).map_err(|e| e.to_string())?;
    let mut by_pixels = HashMap::new();
    let mut by_id = HashMap::new();
    for entry in manifest.splits.values().flatten() {
        let label = PageLabel::load(&dir.join(&entry.label)).map_err(|e| e.to_string())?;
        let img = GrayImage::open(&dir.join(&entry.image)).map_err(|e| e.to_string())?;
        by_pixels.insert(pixel_key(&img), label.clone());
        by_id.insert(label.page_id.clone(), label);
    }
    Ok(Mode::Replay { by_pixels, by_id })
}

fn parse_args() -> Result<(Mode, Faults, Option<String>), String> {
    let mut args = std::env::args().skip(1);
    let mode_name = args.next().ok_or("missing mode (echo, replay, builtin)")?;
    let mut opts: HashMap<String, String> = HashMap::new();
    while let Some(flag) = args.next() {
        let key = flag.strip_prefix("--").ok_or_else(|| format!("unexpected argument `{flag}`"))?;
        let value = args.next().ok_or_else(|| format!("--{key} needs a value"))?;
        opts.insert(key.to_string(), value);
    }
    let num = |k: &str| -> Result<Option<u64>, String> {
        opts.get(k).map(|v| v.parse::<u64>().map_err(|e| format!("--{k}: {e}"))).transpose()
    };
    let faults = Faults {
        delay: num("delay-ms")?.map(Duration::from_millis),
        malformed_at: num("malformed-at")?,
        crash_at: num("crash-at")?,
        hang_at: num("hang-at")?,
    };
    let mode = match mode_name.as_str() {
        "echo" => Mode::Echo(opts.get("text").cloned().unwrap_or_default()),
        "replay" => load_replay(&PathBuf::from(opts.get("dataset").ok_or("replay needs --dataset")?))?,
        "builtin" => match opts.get("atlas") {
            Some(dir) => {
                let pool = WordPool::load(&PathBuf::from(dir)).map_err(|e| e.to_string())?;
                let atlas = Atlas::from_pool(&pool, &PrepConfig::default(), None).map_err(|e| e.to_string())?;
                if atlas.is_empty() {
                    return Err("atlas is empty".into());
                }
                Mode::Builtin(Some(TemplateRecognizer::new(&atlas)))
            }
            None => Mode::Builtin(None),
        },
        other => return Err(format!("unknown mode `{other}`")),
    };
    Ok((mode, faults, opts.get("name").cloned()))
}

fn detect(mode: &Mode, img: &GrayImage) -> Result<Vec<WireWord>, String> {
    let boxes: Vec<BBox> = match mode {
        Mode::Echo(_) => vec![BBox::from_origin_size(0, 0, img.width(), img.height()).map_err(|e| e.to_string())?],
        Mode::Replay { by_pixels, .. } => {
            by_pixels.get(&pixel_key(img)).ok_or("page not in replay dataset")?.boxes()
        }
        Mode::Builtin(_) => detect_builtin(img, &DetectorParams::default())
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|d| d.bbox)
            .collect(),
    };
    Ok(boxes.into_iter().map(|bbox| WireWord { bbox, score: 1.0 }).collect())
}

fn recognize(mode: &Mode, img: &GrayImage, page_id: Option<&str>, bbox: Option<&BBox>) -> Result<String, String> {
    match mode {
        Mode::Echo(t) => Ok(t.clone()),
        Mode::Replay { by_id, .. } => {
            let (page_id, bbox) = page_id.zip(bbox).ok_or("replay recognizer needs page_id and bbox")?;
            let label = by_id.get(page_id).ok_or_else(|| format!("unknown page {page_id}"))?;
            oracle_text(label, bbox).map_err(|e| e.to_string())
        }
        Mode::Builtin(Some(t)) => Ok(t.recognize_template(&pageocr::pipeline::builtin::binarize_crop(img)).0),
        Mode::Builtin(None) => Err("builtin recognizer needs --atlas".into()),
    }
}

fn send(out: &mut impl Write, line: &str) -> io::Result<()> {
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()
}

fn serve(mode: Mode, faults: Faults, name: Option<String>) -> Result<(), String> {
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut count = 0u64;
    let mut kind = None;
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = FrameworkMessage::parse(&line)?;
        let reply = match msg {
            FrameworkMessage::Hello(h) => {
                if h.protocol != PROTOCOL_VERSION {
                    return Err(format!("unsupported protocol {}", h.protocol));
                }
                kind = Some(h.kind);
                let default_name = match (&mode, h.kind) {
                    (Mode::Echo(_), _) => "echo",
                    (Mode::Replay { .. }, _) => "replay",
                    (Mode::Builtin(_), StageKind::Detector) => "builtin",
                    (Mode::Builtin(_), StageKind::Recognizer) => "template",
                };
                let ready = Ready { ready: ReadyBody { name: name.clone().unwrap_or_else(|| default_name.into()) } };
                serde_json::to_string(&ready).expect("ready serializes")
            }
            FrameworkMessage::Bye => return Ok(()),
            FrameworkMessage::Detect(req) => {
                count += 1;
                inject(&faults, count);
                if kind != Some(StageKind::Detector) {
                    return Err("detect request to a recognizer adapter".into());
                }
                let img = decode_image(&req.image_png_b64)?;
                serde_json::to_string(&DetectResponse { id: req.id, words: detect(&mode, &img)? }).expect("serializes")
            }
            FrameworkMessage::Recognize(req) => {
                count += 1;
                inject(&faults, count);
                let img = decode_image(&req.image_png_b64)?;
                let text = recognize(&mode, &img, req.page_id.as_deref(), req.bbox.as_ref())?;
                serde_json::to_string(&RecognizeResponse { id: req.id, text }).expect("serializes")
            }
        };
        if faults.malformed_at == Some(count) && count > 0 {
            send(&mut out, "this is not json").map_err(|e| e.to_string())?;
            continue;
        }
        send(&mut out, &reply).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn inject(f: &Faults, n: u64) {
    if let Some(d) = f.delay {
        std::thread::sleep(d);
    }
    if f.crash_at == Some(n) {
        std::process::exit(3);
    }
    if f.hang_at == Some(n) {
        loop {
            std::thread::sleep(Duration::from_secs(3600));
        }
    }
}

fn main() -> ExitCode {
    let result = parse_args().and_then(|(mode, faults, name)| serve(mode, faults, name));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pageocr-adapter: {e}");
            ExitCode::FAILURE
        }
    }
}
