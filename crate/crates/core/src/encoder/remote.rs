//! Client (and a reference server) for the newline-delimited JSON encoder
//! protocol.
//!
//! ```text
//! -> {"op":"hello","id":0}
//! <- {"id":0,"dim":512,"model":"..."}
//! -> {"op":"encode_text","id":7,"items":["a photo", "..."]}
//! <- {"id":7,"dim":512,"vectors":[[...], [...]]}
//! -> {"op":"vocab","id":8}
//! <- {"id":8,"tokens":["a", "photo", ...]}
//! <- {"id":9,"error":"model load failed"}
//! ```
//!
//! One request is in flight per connection. Responses are matched to
//! requests by id; a mismatch is a protocol error.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};

use super::{EncoderDescriptor, EncoderKind, TextEncoder, TokenSequence, Vocabulary};
use crate::embedding::Embedding;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RemoteItem {
    Text(String),
    ImagePath(String),
}

impl RemoteItem {
    fn op(&self) -> &'static str {
        match self {
            RemoteItem::Text(_) => "encode_text",
            RemoteItem::ImagePath(_) => "encode_image",
        }
    }

    fn payload(&self) -> &str {
        match self {
            RemoteItem::Text(s) | RemoteItem::ImagePath(s) => s,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub max_batch: usize,
    pub timeout: Duration,
    /// Ask the bridge for its token list after the handshake.
    pub fetch_vocab: bool,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            max_batch: DEFAULT_MAX_BATCH,
            timeout: Duration::from_secs(120),
            fetch_vocab: true,
        }
    }
}

struct Connection {
    writer: Option<Box<dyn Write + Send>>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    child: Option<Child>,
}

#[derive(Serialize)]
struct Request<'a> {
    op: &'a str,
    id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    items: Option<Vec<&'a str>>,
}

impl Connection {
    fn new(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        child: Option<Child>,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Self {
            writer: Some(Box::new(writer)),
            lines: rx,
            next_id: 1,
            child,
        }
    }

    fn exchange(&mut self, req: &Request<'_>, timeout: Duration) -> Result<Value> {
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| Error::Protocol("connection closed".into()))?;
        let mut line = serde_json::to_string(req).map_err(|e| Error::Protocol(e.to_string()))?;
        line.push('\n');
        writer.write_all(line.as_bytes())?;
        writer.flush()?;

        let raw = match self.lines.recv_timeout(timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Protocol("encoder closed the connection".into()))
            }
        };
        let value: Value = serde_json::from_str(&raw)
            .map_err(|e| Error::Protocol(format!("malformed response ({e}): {raw}")))?;
        match value.get("id").and_then(Value::as_u64) {
            Some(id) if id == req.id => {}
            Some(id) => {
                return Err(Error::Protocol(format!(
                    "response id {id} does not match request id {}",
                    req.id
                )))
            }
            None => return Err(Error::Protocol(format!("response without id: {raw}"))),
        }
        if let Some(err) = value.get("error") {
            let msg = err
                .as_str()
                .map(str::to_owned)
                .unwrap_or_else(|| err.to_string());
            return Err(Error::Remote(msg));
        }
        Ok(value)
    }

    fn call(&mut self, op: &str, items: Option<Vec<&str>>, timeout: Duration) -> Result<Value> {
        let id = self.next_id;
        self.next_id += 1;
        self.exchange(&Request { op, id, items }, timeout)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        // Closing stdin asks a sidecar to exit.
        self.writer.take();
        if let Some(mut child) = self.child.take() {
            for _ in 0..50 {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Encoder living in another process, reached over stdio or TCP.
pub struct RemoteEncoder {
    conn: Mutex<Connection>,
    dim: usize,
    model: String,
    vocab: Option<Vocabulary>,
    opts: RemoteOptions,
    endpoint: String,
}

impl std::fmt::Debug for RemoteEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEncoder")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl RemoteEncoder {
    /// Performs the handshake (and the vocabulary fetch, if enabled) over an
    /// already-open byte stream pair.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        endpoint: impl Into<String>,
        opts: RemoteOptions,
    ) -> Result<Self> {
        Self::handshake(Connection::new(reader, writer, None), endpoint.into(), opts)
    }

    pub fn connect_tcp(addr: &str, opts: RemoteOptions) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        let reader = stream.try_clone()?;
        Self::from_streams(reader, stream, format!("tcp://{addr}"), opts)
    }

    /// Launches `program args...` and talks to it over its stdin/stdout.
    pub fn spawn(program: &str, args: &[String], opts: RemoteOptions) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let endpoint = std::iter::once(program)
            .chain(args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ");
        Self::handshake(Connection::new(stdout, stdin, Some(child)), endpoint, opts)
    }

    fn handshake(mut conn: Connection, endpoint: String, opts: RemoteOptions) -> Result<Self> {
        if opts.max_batch == 0 {
            return Err(Error::InvalidArgument(
                "max_batch must be at least 1".into(),
            ));
        }
        let hello = conn.exchange(
            &Request {
                op: "hello",
                id: 0,
                items: None,
            },
            opts.timeout,
        )?;
        let dim = hello
            .get("dim")
            .and_then(Value::as_u64)
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::Protocol("handshake missing positive dim".into()))?
            as usize;
        let model = hello
            .get("model")
            .and_then(Value::as_str)
            .unwrap_or("unknown")
            .to_owned();
        let vocab = if opts.fetch_vocab {
            let resp = conn.call("vocab", None, opts.timeout)?;
            let tokens = resp
                .get("tokens")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Protocol("vocab response missing tokens".into()))?
                .iter()
                .map(|t| {
                    t.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| Error::Protocol("non-string token".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(Vocabulary::new(tokens)?)
        } else {
            None
        };
        Ok(Self {
            conn: Mutex::new(conn),
            dim,
            model,
            vocab,
            opts,
            endpoint,
        })
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Encodes `batch` in order. Runs of one item kind are sent together,
    /// split into requests of at most `max_batch` items.
    pub fn encode(&self, batch: &[RemoteItem]) -> Result<Vec<Embedding>> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut out = Vec::with_capacity(batch.len());
        let mut start = 0;
        while start < batch.len() {
            let op = batch[start].op();
            let mut end = start + 1;
            while end < batch.len() && end - start < self.opts.max_batch && batch[end].op() == op {
                end += 1;
            }
            let chunk = &batch[start..end];
            out.extend(self.request_vectors(op, chunk)?);
            start = end;
        }
        Ok(out)
    }

    fn request_vectors(&self, op: &str, chunk: &[RemoteItem]) -> Result<Vec<Embedding>> {
        let items = chunk.iter().map(RemoteItem::payload).collect();
        let resp = self
            .conn
            .lock()
            .map_err(|_| Error::Protocol("connection poisoned".into()))?
            .call(op, Some(items), self.opts.timeout)?;
        if let Some(d) = resp.get("dim").and_then(Value::as_u64) {
            if d as usize != self.dim {
                return Err(Error::Protocol(format!(
                    "response dim {d} != handshake dim {}",
                    self.dim
                )));
            }
        }
        let vectors = resp
            .get("vectors")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol("response missing vectors".into()))?;
        if vectors.len() != chunk.len() {
            return Err(Error::Protocol(format!(
                "expected {} vectors, got {}",
                chunk.len(),
                vectors.len()
            )));
        }
        vectors
            .iter()
            .map(|row| {
                let row = row
                    .as_array()
                    .ok_or_else(|| Error::Protocol("vector is not an array".into()))?;
                if row.len() != self.dim {
                    return Err(Error::Protocol(format!(
                        "vector of length {} != dim {}",
                        row.len(),
                        self.dim
                    )));
                }
                let values = row
                    .iter()
                    .map(|v| {
                        v.as_f64()
                            .ok_or_else(|| Error::Protocol("non-numeric entry".into()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Embedding::new(values).map_err(|e| Error::Protocol(e.to_string()))
            })
            .collect()
    }
}

impl TextEncoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn vocab(&self) -> Option<&Vocabulary> {
        self.vocab.as_ref()
    }

    fn encode_sequences(&self, seqs: &[TokenSequence]) -> Result<Vec<Embedding>> {
        let vocab = super::require_vocab(self)?;
        let items: Vec<RemoteItem> = seqs
            .iter()
            .map(|s| {
                vocab.check(s)?;
                Ok(RemoteItem::Text(vocab.render(s)))
            })
            .collect::<Result<_>>()?;
        self.encode(&items)
    }

    /// The bridge owns tokenisation, so texts are sent as opaque strings.
    fn encode_texts(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        let items: Vec<RemoteItem> = texts.iter().cloned().map(RemoteItem::Text).collect();
        self.encode(&items)
    }

    fn descriptor(&self) -> EncoderDescriptor {
        EncoderDescriptor {
            kind: EncoderKind::Remote,
            dim: self.dim,
            vocab_size: self.vocab.as_ref().map(Vocabulary::len),
            seed: None,
            model: Some(self.model.clone()),
            endpoint: Some(self.endpoint.clone()),
        }
    }
}

/// Serves the protocol on `reader`/`writer` until the reader hits EOF.
///
/// Texts go through `encoder`; `encode_image` items are looked up by key in
/// `images`. Vectors are sent as `f32`, like a real model bridge would.
pub fn serve(
    encoder: &dyn TextEncoder,
    images: &HashMap<String, Embedding>,
    model: &str,
    reader: impl BufRead,
    mut writer: impl Write,
) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle_request(encoder, images, model, &line);
        serde_json::to_writer(&mut writer, &reply)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

fn handle_request(
    encoder: &dyn TextEncoder,
    images: &HashMap<String, Embedding>,
    model: &str,
    line: &str,
) -> Value {
    let req: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return json!({"id": 0, "error": format!("malformed request: {e}")}),
    };
    let id = req.get("id").and_then(Value::as_u64).unwrap_or(0);
    let op = req.get("op").and_then(Value::as_str).unwrap_or("");
    let items: Vec<String> = req
        .get("items")
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .map(|v| v.as_str().unwrap_or_default().to_owned())
                .collect()
        })
        .unwrap_or_default();
    let dim = encoder.dim();
    let to_rows = |vs: Vec<Embedding>| -> Vec<Vec<f32>> {
        vs.iter()
            .map(|e| e.as_slice().iter().map(|&v| v as f32).collect())
            .collect()
    };
    match op {
        "hello" => json!({"id": id, "dim": dim, "model": model}),
        "vocab" => match encoder.vocab() {
            Some(v) => json!({"id": id, "tokens": v.tokens()}),
            None => json!({"id": id, "error": "vocabulary not available"}),
        },
        "encode_text" => {
            let mut out = Vec::with_capacity(items.len());
            for (i, text) in items.iter().enumerate() {
                match encoder.encode_texts(std::slice::from_ref(text)) {
                    Ok(mut v) => out.push(v.remove(0)),
                    Err(e) => return json!({"id": id, "error": format!("item {i}: {e}")}),
                }
            }
            json!({"id": id, "dim": dim, "vectors": to_rows(out)})
        }
        "encode_image" => {
            let mut out = Vec::with_capacity(items.len());
            for (i, key) in items.iter().enumerate() {
                match images.get(key) {
                    Some(e) => out.push(e.clone()),
                    None => return json!({"id": id, "error": format!("item {i}: file not found")}),
                }
            }
            json!({"id": id, "dim": dim, "vectors": to_rows(out)})
        }
        other => json!({"id": id, "error": format!("unknown op {other:?}")}),
    }
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;
    use std::net::TcpListener;

    use super::*;
    use crate::encoder::ToyEncoder;

    fn toy() -> ToyEncoder {
        let vocab = Vocabulary::new(
            ["a", "photo", "of", "cat", "dog"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .unwrap();
        ToyEncoder::new(vocab, 8, 1).unwrap()
    }

    /// A peer that answers each request line with the next canned reply.
    fn scripted_encoder(replies: Vec<&str>) -> Result<RemoteEncoder> {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let replies: Vec<String> = replies.into_iter().map(str::to_owned).collect();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut writer = stream.try_clone().unwrap();
            let mut lines = BufReader::new(stream).lines();
            for reply in replies {
                if lines.next().is_none() {
                    return;
                }
                writer.write_all(reply.as_bytes()).unwrap();
                writer.write_all(b"\n").unwrap();
            }
            // Hold the socket open until the client goes away.
            for _ in lines {}
        });
        let opts = RemoteOptions {
            fetch_vocab: false,
            timeout: Duration::from_secs(5),
            ..Default::default()
        };
        RemoteEncoder::connect_tcp(&addr, opts)
    }

    fn toy_server() -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            let enc = toy();
            let mut images = HashMap::new();
            images.insert("img0".to_string(), Embedding::new(vec![1.0; 8]).unwrap());
            for stream in listener.incoming() {
                let stream = stream.unwrap();
                let writer = stream.try_clone().unwrap();
                serve(&enc, &images, "toy", BufReader::new(stream), writer).unwrap();
            }
        });
        addr
    }

    #[test]
    fn echo_contract() {
        let enc = scripted_encoder(vec![
            r#"{"id":0,"dim":3,"model":"m"}"#,
            r#"{"id":1,"dim":3,"vectors":[[1,0,0],[0,1,0]]}"#,
        ])
        .unwrap();
        assert_eq!(enc.dim(), 3);
        assert_eq!(enc.model(), "m");
        let out = enc
            .encode(&[RemoteItem::Text("a".into()), RemoteItem::Text("b".into())])
            .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn wrong_id_is_protocol_error() {
        let enc = scripted_encoder(vec![
            r#"{"id":0,"dim":3,"model":"m"}"#,
            r#"{"id":8,"dim":3,"vectors":[[1,0,0]]}"#,
        ])
        .unwrap();
        let err = enc.encode(&[RemoteItem::Text("a".into())]).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{err}");
    }

    #[test]
    fn bridge_error_is_remote_error() {
        let enc = scripted_encoder(vec![
            r#"{"id":0,"dim":3,"model":"m"}"#,
            r#"{"id":1,"error":"model load failed"}"#,
        ])
        .unwrap();
        match enc.encode(&[RemoteItem::Text("a".into())]) {
            Err(Error::Remote(msg)) => assert_eq!(msg, "model load failed"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_short_responses() {
        let enc = scripted_encoder(vec![
            r#"{"id":0,"dim":3,"model":"m"}"#,
            r#"{"id":1,"dim":3,"vectors":[[1,0]]}"#,
            r#"not json"#,
        ])
        .unwrap();
        assert!(matches!(
            enc.encode(&[RemoteItem::Text("a".into())]),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            enc.encode(&[RemoteItem::Text("a".into())]),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn silent_peer_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            for _ in BufReader::new(stream).lines() {}
        });
        let opts = RemoteOptions {
            timeout: Duration::from_millis(100),
            ..Default::default()
        };
        assert!(matches!(
            RemoteEncoder::connect_tcp(&addr, opts),
            Err(Error::Timeout(_))
        ));
    }

    #[test]
    fn batches_split_and_match_single_calls() {
        let addr = toy_server();
        let opts = RemoteOptions {
            max_batch: 2,
            ..Default::default()
        };
        let enc = RemoteEncoder::connect_tcp(&addr, opts).unwrap();
        assert_eq!(enc.vocab().unwrap().len(), 5);
        let texts: Vec<String> = ["a photo", "of cat", "dog", "a a a", "cat of photo"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let batch = enc.encode_texts(&texts).unwrap();
        assert_eq!(batch.len(), 5);
        for (t, b) in texts.iter().zip(&batch) {
            let single = enc.encode_texts(std::slice::from_ref(t)).unwrap();
            assert_eq!(&single[0], b);
        }
        let local = toy().encode_texts(&texts).unwrap();
        for (l, r) in local.iter().zip(&batch) {
            for (x, y) in l.as_slice().iter().zip(r.as_slice()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        let seqs: Vec<TokenSequence> = texts
            .iter()
            .map(|t| toy().vocab().unwrap().tokenize(t).unwrap())
            .collect();
        assert_eq!(enc.encode_sequences(&seqs).unwrap(), batch);
    }

    #[test]
    fn image_items_and_missing_paths() {
        let addr = toy_server();
        let enc = RemoteEncoder::connect_tcp(&addr, RemoteOptions::default()).unwrap();
        let out = enc
            .encode(&[
                RemoteItem::ImagePath("img0".into()),
                RemoteItem::Text("cat".into()),
            ])
            .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].as_slice(), &[1.0; 8]);
        match enc.encode(&[RemoteItem::ImagePath("missing.png".into())]) {
            Err(Error::Remote(msg)) => assert_eq!(msg, "item 0: file not found"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn serve_handles_bad_lines() {
        let enc = toy();
        let input = "{\"op\":\"hello\",\"id\":0}\nnonsense\n{\"op\":\"fly\",\"id\":3}\n";
        let mut out = Vec::new();
        serve(&enc, &HashMap::new(), "toy", Cursor::new(input), &mut out).unwrap();
        let lines: Vec<Value> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines[0]["dim"], 8);
        assert!(lines[1]["error"].as_str().unwrap().starts_with("malformed"));
        assert_eq!(lines[2]["id"], 3);
        assert!(lines[2]["error"].is_string());
    }
}
