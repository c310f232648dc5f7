//! Backbone served by an external worker process.
//!
//! The worker reads one JSON request per line on stdin and answers with one
//! JSON line on stdout. Images travel as base64 RGB bytes; tensors as base64
//! little-endian float32.
//!
//! ```text
//! -> {"op":"features","id":"2007_000032","width":500,"height":281,"rgb_b64":"...",
//!     "timestep":0,"resolutions":[16],"include_attention":false}
//! <- {"maps":[{"resolution":16,"kind":"feature","block":"up_blocks.1.resnets.0",
//!     "order":0,"shape":[1280,16,16],"data_b64":"..."}]}
//! -> {"op":"caption", ...image fields...}          <- {"caption":"a dog on a couch"}
//! -> {"op":"embed_image", ...image fields...}      <- {"embedding":[0.1, ...]}
//! -> {"op":"embed_text","text":"a photo of a dog"} <- {"embedding":[0.1, ...]}
//! any failure                                      <- {"error":"message"}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backbone, FeatureMap, MapKind};
use crate::error::{Error, Result};
use crate::imaging::ImageRecord;

struct Worker {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct ProcessBackbone {
    command: Vec<String>,
    worker: Mutex<Option<Worker>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireMap {
    pub resolution: usize,
    pub kind: MapKind,
    pub block: String,
    pub order: usize,
    pub shape: Vec<usize>,
    pub data_b64: String,
}

#[derive(Debug, Default, Deserialize)]
struct Reply {
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    maps: Option<Vec<WireMap>>,
    #[serde(default)]
    caption: Option<String>,
    #[serde(default)]
    embedding: Option<Vec<f32>>,
}

impl WireMap {
    pub fn decode(self) -> Result<FeatureMap> {
        let bytes = B64
            .decode(self.data_b64.as_bytes())
            .map_err(|e| Error::BackendUnavailable(format!("bad base64 tensor: {e}")))?;
        let [c, h, w] = self.shape[..] else {
            return Err(Error::ShapeMismatch(format!(
                "map `{}` has shape {:?}, expected [C, r, r]",
                self.block, self.shape
            )));
        };
        if bytes.len() != c * h * w * 4 {
            return Err(Error::ShapeMismatch(format!(
                "map `{}`: {} payload bytes for shape {:?}",
                self.block,
                bytes.len(),
                self.shape
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(FeatureMap {
            resolution: self.resolution,
            kind: self.kind,
            block: self.block,
            order: self.order,
            tensor: Array3::from_shape_vec((c, h, w), data)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
        })
    }
}

impl ProcessBackbone {
    /// `command[0]` is the program, the rest its arguments. The worker is
    /// started lazily on first use.
    pub fn new(command: Vec<String>) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::InvalidArgument("empty backend command".into()));
        }
        Ok(ProcessBackbone {
            command,
            worker: Mutex::new(None),
        })
    }

    fn spawn(&self) -> Result<Worker> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| {
                Error::BackendUnavailable(format!("cannot start `{}`: {e}", self.command.join(" ")))
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Worker { child, stdin, stdout })
    }

    fn call(&self, request: serde_json::Value) -> Result<Reply> {
        let mut guard = self.worker.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let worker = guard.as_mut().expect("worker just started");
        let lost = |e: std::io::Error| Error::BackendUnavailable(format!("backend worker: {e}"));
        let mut line = serde_json::to_string(&request)?;
        line.push('\n');
        let sent = worker
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| worker.stdin.flush());
        if let Err(e) = sent {
            *guard = None;
            return Err(lost(e));
        }
        let mut reply = String::new();
        match worker.stdout.read_line(&mut reply) {
            Ok(0) => {
                *guard = None;
                return Err(Error::BackendUnavailable("backend worker exited".into()));
            }
            Ok(_) => {}
            Err(e) => {
                *guard = None;
                return Err(lost(e));
            }
        }
        let reply: Reply = serde_json::from_str(&reply)
            .map_err(|e| Error::BackendUnavailable(format!("malformed worker reply: {e}")))?;
        if let Some(msg) = reply.error {
            return Err(Error::BackendUnavailable(msg));
        }
        Ok(reply)
    }

    fn image_request(op: &str, image: &ImageRecord) -> serde_json::Value {
        json!({
            "op": op,
            "id": image.id,
            "width": image.width(),
            "height": image.height(),
            "rgb_b64": B64.encode(image.pixels()),
        })
    }
}

impl Drop for ProcessBackbone {
    fn drop(&mut self) {
        if let Some(mut w) = self.worker.get_mut().ok().and_then(Option::take) {
            drop(w.stdin);
            let _ = w.child.wait();
        }
    }
}

fn missing(field: &str) -> Error {
    Error::BackendUnavailable(format!("worker reply lacks `{field}`"))
}

impl Backbone for ProcessBackbone {
    fn features(
        &self,
        image: &ImageRecord,
        timestep: u32,
        resolutions: &[usize],
        include_attention: bool,
    ) -> Result<Vec<FeatureMap>> {
        let mut req = Self::image_request("features", image);
        req["timestep"] = json!(timestep);
        req["resolutions"] = json!(resolutions);
        req["include_attention"] = json!(include_attention);
        self.call(req)?
            .maps
            .ok_or_else(|| missing("maps"))?
            .into_iter()
            .map(WireMap::decode)
            .collect()
    }

    fn caption(&self, image: &ImageRecord) -> Result<String> {
        self.call(Self::image_request("caption", image))?
            .caption
            .ok_or_else(|| missing("caption"))
    }

    fn embed_image(&self, image: &ImageRecord) -> Result<Vec<f32>> {
        self.call(Self::image_request("embed_image", image))?
            .embedding
            .ok_or_else(|| missing("embedding"))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        self.call(json!({"op": "embed_text", "text": text}))?
            .embedding
            .ok_or_else(|| missing("embedding"))
    }
}
