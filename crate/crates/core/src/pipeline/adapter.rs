//! External stages over a line-delimited JSON protocol on the adapter's
//! stdin/stdout.
//!
//! ```text
//! -> {"hello":{"protocol":1,"kind":"detector"|"recognizer"}}
//! <- {"ready":{"name":"..."}}
//! -> {"id":1,"image_png_b64":"..."}                         detector request
//! <- {"id":1,"words":[{"bbox":[x0,y0,x1,y1],"score":0.9}]}
//! -> {"id":2,"image_png_b64":"...","language":"..."}        recognizer request
//! <- {"id":2,"text":"..."}
//! -> {"bye":true}
//! ```
//!
//! Recognizer requests may also carry `page_id` and `bbox` (the crop's
//! detected box in page coordinates). Adapters that do not need them ignore
//! them.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::BBox;
use crate::imaging::{GrayImage, ImagingError};

use super::{CropContext, Detection, Detector, PageContext, Recognizer, StageError};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Detector,
    Recognizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub kind: StageKind,
    /// Program followed by its arguments.
    pub command: Vec<String>,
    /// Seconds allowed for launch plus handshake.
    pub handshake_timeout: f64,
    /// Seconds allowed per response.
    pub request_timeout: f64,
}

impl AdapterSpec {
    /// Whitespace-separated command line.
    pub fn new(kind: StageKind, command_line: &str) -> Self {
        Self {
            kind,
            command: command_line.split_whitespace().map(str::to_string).collect(),
            handshake_timeout: 10.0,
            request_timeout: 120.0,
        }
    }

    pub fn command_line(&self) -> String {
        self.command.join(" ")
    }
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("cannot launch adapter `{command}`: {source}")]
    Launch { command: String, source: io::Error },
    #[error("adapter protocol error at output line {line}{}: {message}", fmt_req(*request_id))]
    Protocol { line: usize, request_id: Option<u64>, message: String },
    #[error("adapter timed out after {seconds:.1}s{}", fmt_req(*request_id))]
    Timeout { request_id: Option<u64>, seconds: f64 },
    #[error("adapter exited unexpectedly{} (status: {status})", fmt_req(*request_id))]
    Crashed { request_id: Option<u64>, status: String },
    #[error(transparent)]
    Image(#[from] ImagingError),
}

fn fmt_req(id: Option<u64>) -> String {
    id.map(|i| format!(" (request {i})")).unwrap_or_else(|| " (handshake)".into())
}

impl AdapterError {
    /// The request being served when the failure happened.
    pub fn request_id(&self) -> Option<u64> {
        match self {
            AdapterError::Protocol { request_id, .. }
            | AdapterError::Timeout { request_id, .. }
            | AdapterError::Crashed { request_id, .. } => *request_id,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloBody {
    pub protocol: u32,
    pub kind: StageKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub hello: HelloBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadyBody {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ready {
    pub ready: ReadyBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bye {
    pub bye: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub id: u64,
    pub image_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognizeRequest {
    pub id: u64,
    pub image_png_b64: String,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireWord {
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub id: u64,
    pub words: Vec<WireWord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognizeResponse {
    pub id: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdapterRequest {
    Recognize(RecognizeRequest),
    Detect(DetectRequest),
}

impl AdapterRequest {
    pub fn id(&self) -> u64 {
        match self {
            AdapterRequest::Detect(r) => r.id,
            AdapterRequest::Recognize(r) => r.id,
        }
    }

    pub fn detect(id: u64, image: &GrayImage) -> Result<Self, ImagingError> {
        Ok(AdapterRequest::Detect(DetectRequest { id, image_png_b64: encode_image(image)? }))
    }

    pub fn recognize(id: u64, crop: &GrayImage, language: &str) -> Result<Self, ImagingError> {
        Ok(AdapterRequest::Recognize(RecognizeRequest {
            id,
            image_png_b64: encode_image(crop)?,
            language: language.to_string(),
            page_id: None,
            bbox: None,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdapterResponse {
    Detect(DetectResponse),
    Recognize(RecognizeResponse),
}

impl AdapterResponse {
    pub fn id(&self) -> u64 {
        match self {
            AdapterResponse::Detect(r) => r.id,
            AdapterResponse::Recognize(r) => r.id,
        }
    }
}

/// A message sent by the framework, as seen from the adapter side.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameworkMessage {
    Hello(HelloBody),
    Detect(DetectRequest),
    Recognize(RecognizeRequest),
    Bye,
}

impl FrameworkMessage {
    pub fn parse(line: &str) -> Result<Self, String> {
        let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let obj = v.as_object().ok_or("message is not a JSON object")?;
        fn de<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, String> {
            serde_json::from_value(v).map_err(|e| e.to_string())
        }
        if obj.contains_key("hello") {
            return de(v).map(|h: Hello| FrameworkMessage::Hello(h.hello));
        }
        if obj.contains_key("bye") {
            return Ok(FrameworkMessage::Bye);
        }
        if obj.contains_key("language") {
            return de(v).map(FrameworkMessage::Recognize);
        }
        if obj.contains_key("id") {
            return de(v).map(FrameworkMessage::Detect);
        }
        Err("unrecognized message".into())
    }
}

pub fn encode_image(img: &GrayImage) -> Result<String, ImagingError> {
    Ok(B64.encode(img.encode_png()?))
}

pub fn decode_image(b64: &str) -> Result<GrayImage, String> {
    let bytes = B64.decode(b64.trim()).map_err(|e| e.to_string())?;
    GrayImage::decode_png(&bytes).map_err(|e| e.to_string())
}

/// A running adapter process that has completed the handshake.
pub struct AdapterClient {
    spec: AdapterSpec,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<io::Result<String>>,
    line_no: usize,
    name: String,
    next_id: u64,
}

impl std::fmt::Debug for AdapterClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterClient").field("command", &self.spec.command).field("name", &self.name).finish()
    }
}

impl AdapterClient {
    /// Spawn the adapter and perform the handshake.
    pub fn launch(spec: &AdapterSpec) -> Result<Self, AdapterError> {
        let launch_err = |source| AdapterError::Launch { command: spec.command_line(), source };
        let (program, args) = spec
            .command
            .split_first()
            .ok_or_else(|| launch_err(io::Error::new(io::ErrorKind::InvalidInput, "empty command")))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(launch_err)?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut client =
            AdapterClient { spec: spec.clone(), child, stdin, lines: rx, line_no: 0, name: String::new(), next_id: 1 };
        let deadline = Instant::now() + Duration::from_secs_f64(spec.handshake_timeout);
        client.write(&Hello { hello: HelloBody { protocol: PROTOCOL_VERSION, kind: spec.kind } }, None)?;
        let line = client.read_until(deadline, spec.handshake_timeout, None)?;
        let ready: Ready = serde_json::from_str(&line).map_err(|e| client.protocol(None, format!("expected ready: {e}")))?;
        client.name = ready.ready.name;
        Ok(client)
    }

    /// Name the adapter reported in its ready message.
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> StageKind {
        self.spec.kind
    }

    fn protocol(&self, request_id: Option<u64>, message: String) -> AdapterError {
        AdapterError::Protocol { line: self.line_no, request_id, message }
    }

    fn crashed(&mut self, request_id: Option<u64>) -> AdapterError {
        let deadline = Instant::now() + Duration::from_millis(500);
        let status = loop {
            match self.child.try_wait() {
                Ok(Some(s)) => break s.to_string(),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                Ok(None) => break "still running, output closed".to_string(),
                Err(e) => break e.to_string(),
            }
        };
        AdapterError::Crashed { request_id, status }
    }

    fn write<T: Serialize>(&mut self, msg: &T, request_id: Option<u64>) -> Result<(), AdapterError> {
        let mut line = serde_json::to_string(msg).expect("protocol messages serialize");
        line.push('\n');
        let ok = match self.stdin.as_mut() {
            Some(stdin) => stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()).is_ok(),
            None => false,
        };
        if ok {
            Ok(())
        } else {
            Err(self.crashed(request_id))
        }
    }

    fn read_until(&mut self, deadline: Instant, seconds: f64, request_id: Option<u64>) -> Result<String, AdapterError> {
        let wait = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(wait) {
            Ok(Ok(line)) => {
                self.line_no += 1;
                Ok(line)
            }
            Ok(Err(e)) => {
                self.line_no += 1;
                Err(self.protocol(request_id, format!("unreadable output: {e}")))
            }
            Err(RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                Err(AdapterError::Timeout { request_id, seconds })
            }
            Err(RecvTimeoutError::Disconnected) => Err(self.crashed(request_id)),
        }
    }

    fn read_response(&mut self, request_id: u64) -> Result<(String, Value), AdapterError> {
        let secs = self.spec.request_timeout;
        let line = self.read_until(Instant::now() + Duration::from_secs_f64(secs), secs, Some(request_id))?;
        let v: Value = serde_json::from_str(&line).map_err(|e| self.protocol(Some(request_id), format!("malformed line: {e}")))?;
        Ok((line, v))
    }

    fn parse_response(&self, v: Value, request_id: u64) -> Result<AdapterResponse, AdapterError> {
        let r = match self.spec.kind {
            StageKind::Detector => serde_json::from_value::<DetectResponse>(v).map(AdapterResponse::Detect),
            StageKind::Recognizer => serde_json::from_value::<RecognizeResponse>(v).map(AdapterResponse::Recognize),
        };
        r.map_err(|e| self.protocol(Some(request_id), format!("bad {:?} response: {e}", self.spec.kind)))
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Send one request and wait for its response.
    pub fn call(&mut self, request: &AdapterRequest) -> Result<AdapterResponse, AdapterError> {
        let id = request.id();
        self.write(request, Some(id))?;
        let (_, v) = self.read_response(id)?;
        let resp = self.parse_response(v, id)?;
        if resp.id() != id {
            return Err(self.protocol(Some(id), format!("response id {} does not match request", resp.id())));
        }
        Ok(resp)
    }

    /// Pipeline all requests, then collect responses, which may arrive in
    /// any order. Output follows request order.
    pub fn call_batch(&mut self, requests: &[AdapterRequest]) -> Result<Vec<AdapterResponse>, AdapterError> {
        let mut pending: HashMap<u64, usize> = HashMap::new();
        for (i, r) in requests.iter().enumerate() {
            if pending.insert(r.id(), i).is_some() {
                return Err(self.protocol(Some(r.id()), "duplicate request id in batch".into()));
            }
        }
        for r in requests {
            self.write(r, Some(r.id()))?;
        }
        let mut out: Vec<Option<AdapterResponse>> = vec![None; requests.len()];
        for _ in 0..requests.len() {
            // attribute failures to the oldest unanswered request
            let waiting = requests.iter().find(|r| out[pending[&r.id()]].is_none()).map_or(0, |r| r.id());
            let (_, v) = self.read_response(waiting)?;
            let id = v.get("id").and_then(Value::as_u64);
            let slot = id.and_then(|id| pending.get(&id).copied()).filter(|&s| out[s].is_none());
            let Some(slot) = slot else {
                return Err(self.protocol(Some(waiting), format!("response for unknown or repeated id {id:?}")));
            };
            out[slot] = Some(self.parse_response(v, requests[slot].id())?);
        }
        Ok(out.into_iter().map(|r| r.expect("every slot filled")).collect())
    }

    pub fn detect(&mut self, page: &GrayImage) -> Result<Vec<Detection>, AdapterError> {
        let id = self.fresh_id();
        match self.call(&AdapterRequest::detect(id, page)?)? {
            AdapterResponse::Detect(r) => Ok(r.words.into_iter().map(|w| Detection { bbox: w.bbox, score: w.score }).collect()),
            AdapterResponse::Recognize(_) => Err(self.protocol(Some(id), "expected detector response".into())),
        }
    }

    pub fn recognize(&mut self, crop: &GrayImage, ctx: &CropContext) -> Result<String, AdapterError> {
        let id = self.fresh_id();
        let mut req = AdapterRequest::recognize(id, crop, &ctx.language)?;
        if let AdapterRequest::Recognize(r) = &mut req {
            r.page_id = Some(ctx.page_id.clone());
            r.bbox = Some(ctx.bbox);
        }
        match self.call(&req)? {
            AdapterResponse::Recognize(r) => Ok(r.text),
            AdapterResponse::Detect(_) => Err(self.protocol(Some(id), "expected recognizer response".into())),
        }
    }

    /// Send `bye` and wait for a clean exit.
    pub fn shutdown(mut self) -> Result<(), AdapterError> {
        self.write(&Bye { bye: true }, None)?;
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_secs_f64(self.spec.handshake_timeout);
        loop {
            match self.child.try_wait() {
                Ok(Some(s)) if s.success() => return Ok(()),
                Ok(Some(s)) => return Err(AdapterError::Crashed { request_id: None, status: s.to_string() }),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                Ok(None) => {
                    let _ = self.child.kill();
                    return Err(AdapterError::Timeout { request_id: None, seconds: self.spec.handshake_timeout });
                }
                Err(e) => return Err(AdapterError::Crashed { request_id: None, status: e.to_string() }),
            }
        }
    }
}

impl Drop for AdapterClient {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            self.stdin.take();
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// Launch, handshake, exchange `requests`, shut down. Responses are returned
/// in request order.
pub fn run_adapter(spec: &AdapterSpec, requests: &[AdapterRequest]) -> Result<Vec<AdapterResponse>, AdapterError> {
    let mut client = AdapterClient::launch(spec)?;
    let out = client.call_batch(requests)?;
    client.shutdown()?;
    Ok(out)
}

/// Detector stage backed by an adapter process.
#[derive(Debug)]
pub struct AdapterDetector {
    client: AdapterClient,
}

impl AdapterDetector {
    pub fn launch(command_line: &str) -> Result<Self, AdapterError> {
        Self::with_spec(&AdapterSpec::new(StageKind::Detector, command_line))
    }

    pub fn with_spec(spec: &AdapterSpec) -> Result<Self, AdapterError> {
        Ok(Self { client: AdapterClient::launch(spec)? })
    }

    pub fn shutdown(self) -> Result<(), AdapterError> {
        self.client.shutdown()
    }
}

impl Detector for AdapterDetector {
    fn name(&self) -> &str {
        self.client.name()
    }

    fn detect(&mut self, page: &GrayImage, _ctx: &PageContext) -> Result<Vec<Detection>, StageError> {
        Ok(self.client.detect(page)?)
    }
}

/// Recognizer stage backed by an adapter process.
#[derive(Debug)]
pub struct AdapterRecognizer {
    client: AdapterClient,
}

impl AdapterRecognizer {
    pub fn launch(command_line: &str) -> Result<Self, AdapterError> {
        Self::with_spec(&AdapterSpec::new(StageKind::Recognizer, command_line))
    }

    pub fn with_spec(spec: &AdapterSpec) -> Result<Self, AdapterError> {
        Ok(Self { client: AdapterClient::launch(spec)? })
    }

    pub fn shutdown(self) -> Result<(), AdapterError> {
        self.client.shutdown()
    }
}

impl Recognizer for AdapterRecognizer {
    fn name(&self) -> &str {
        self.client.name()
    }

    fn recognize(&mut self, crop: &GrayImage, ctx: &CropContext) -> Result<String, StageError> {
        Ok(self.client.recognize(crop, ctx)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framework_messages_parse() {
        let h = FrameworkMessage::parse(r#"{"hello":{"protocol":1,"kind":"detector"}}"#).unwrap();
        assert_eq!(h, FrameworkMessage::Hello(HelloBody { protocol: 1, kind: StageKind::Detector }));
        assert_eq!(FrameworkMessage::parse(r#"{"bye":true}"#).unwrap(), FrameworkMessage::Bye);
        let d = FrameworkMessage::parse(r#"{"id":3,"image_png_b64":"AAAA"}"#).unwrap();
        assert!(matches!(d, FrameworkMessage::Detect(DetectRequest { id: 3, .. })));
        let r = FrameworkMessage::parse(r#"{"id":4,"image_png_b64":"AAAA","language":"hi","bbox":[1,2,3,4]}"#).unwrap();
        match r {
            FrameworkMessage::Recognize(r) => {
                assert_eq!(r.language, "hi");
                assert_eq!(r.bbox.unwrap().to_array(), [1, 2, 3, 4]);
                assert!(r.page_id.is_none());
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(FrameworkMessage::parse("not json").is_err());
        assert!(FrameworkMessage::parse("[1,2]").is_err());
    }

    #[test]
    fn wire_shapes() {
        let req = AdapterRequest::recognize(7, &GrayImage::white(2, 2).unwrap(), "bn").unwrap();
        let s = serde_json::to_string(&req).unwrap();
        assert!(s.starts_with(r#"{"id":7,"image_png_b64":""#));
        assert!(s.ends_with(r#""language":"bn"}"#));
        let resp = DetectResponse { id: 1, words: vec![WireWord { bbox: BBox::new(0, 0, 2, 3).unwrap(), score: 0.5 }] };
        assert_eq!(serde_json::to_string(&resp).unwrap(), r#"{"id":1,"words":[{"bbox":[0,0,2,3],"score":0.5}]}"#);
        assert_eq!(serde_json::to_string(&Bye { bye: true }).unwrap(), r#"{"bye":true}"#);
    }

    #[test]
    fn image_codec_round_trip() {
        let img = GrayImage::new(3, 1, vec![0, 128, 255]).unwrap();
        assert_eq!(decode_image(&encode_image(&img).unwrap()).unwrap(), img);
        assert!(decode_image("!!!").is_err());
    }

    #[test]
    fn missing_program_fails_to_launch() {
        let spec = AdapterSpec::new(StageKind::Recognizer, "/nonexistent/adapter-binary");
        assert!(matches!(AdapterClient::launch(&spec), Err(AdapterError::Launch { .. })));
        let empty = AdapterSpec::new(StageKind::Recognizer, "   ");
        assert!(matches!(AdapterClient::launch(&empty), Err(AdapterError::Launch { .. })));
    }
}
