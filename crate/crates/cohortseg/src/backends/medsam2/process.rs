//! JSON-lines bridge to an external model worker.
//!
//! One request per line on the worker's stdin, one response per line on its
//! stdout. Bulk data travels through temporary files: frames as
//! little-endian `f32` (frame-major, planar RGB), masks as one byte per
//! pixel (frames concatenated in response order).
//!
//! ```text
//! {"op":"load","checkpoint":..,"device":..,"image_size":..}  -> {"ok":true,"negative_points":bool}
//! {"op":"init","frames_path":..,"count":..,"size":..,"seed":..} -> {"ok":true,"session":u64}
//! {"op":"prompt","session":..,"frame":..,"object":..,"box":[4],"points":[[x,y,pos]],"mask_path":..} -> {"ok":true}
//! {"op":"propagate","session":..,"start":..,"end":..,"reverse":..,"mask_path":..} -> {"ok":true,"frames":[..]}
//! {"op":"close","session":..}                                  -> {"ok":true}
//! ```
//! Failures answer `{"ok":false,"error":".."}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde_json::{json, Value};
use tempfile::TempDir;

use super::{resource, FrameStack, ModelConfig, ModelPrompt, VideoPredictor};
use cohortseg_core::engine::BackendError;

pub struct ProcessPredictor {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    scratch: TempDir,
    size: usize,
    negative_points: bool,
}

impl ProcessPredictor {
    pub fn spawn(command: &[String], model: &ModelConfig) -> Result<Self, BackendError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| resource("empty worker command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| resource(format!("cannot start model worker {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let scratch = tempfile::tempdir().map_err(|e| resource(format!("scratch dir: {e}")))?;
        let mut p = Self {
            child,
            stdin,
            stdout,
            scratch,
            size: model.image_size as usize,
            negative_points: false,
        };
        let reply = p
            .call(json!({
                "op": "load",
                "checkpoint": model.checkpoint_path,
                "device": model.device,
                "image_size": model.image_size,
            }))
            .map_err(resource)?;
        p.negative_points = reply["negative_points"].as_bool().unwrap_or(false);
        Ok(p)
    }

    fn call(&mut self, request: Value) -> Result<Value, String> {
        let line = serde_json::to_string(&request).map_err(|e| e.to_string())?;
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| format!("model worker write: {e}"))?;
        let mut reply = String::new();
        let n = self
            .stdout
            .read_line(&mut reply)
            .map_err(|e| format!("model worker read: {e}"))?;
        if n == 0 {
            return Err("model worker exited".into());
        }
        let v: Value = serde_json::from_str(&reply).map_err(|e| format!("model worker reply: {e}"))?;
        if v["ok"].as_bool() == Some(true) {
            Ok(v)
        } else {
            Err(v["error"].as_str().unwrap_or("model worker error").to_string())
        }
    }

    fn read_masks(&self, path: &std::path::Path, count: usize) -> Result<Vec<Vec<bool>>, String> {
        let bytes = std::fs::read(path).map_err(|e| format!("mask file: {e}"))?;
        let n = self.size * self.size;
        if bytes.len() != n * count {
            return Err(format!("mask file has {} bytes, expected {}", bytes.len(), n * count));
        }
        Ok(bytes.chunks(n).map(|c| c.iter().map(|b| *b != 0).collect()).collect())
    }
}

impl VideoPredictor for ProcessPredictor {
    fn supports_negative_points(&self) -> bool {
        self.negative_points
    }

    fn init_session(&mut self, frames: &FrameStack, seed: u64) -> Result<u64, String> {
        let path = self.scratch.path().join("frames.f32");
        let bytes: Vec<u8> = frames
            .frames
            .iter()
            .flatten()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        std::fs::write(&path, bytes).map_err(|e| format!("frame file: {e}"))?;
        let reply = self.call(json!({
            "op": "init",
            "frames_path": path,
            "count": frames.frames.len(),
            "size": frames.size,
            "seed": seed,
        }))?;
        reply["session"].as_u64().ok_or_else(|| "reply lacks session".to_string())
    }

    fn add_prompt(&mut self, session: u64, p: &ModelPrompt) -> Result<Vec<bool>, String> {
        let path = self.scratch.path().join("prompt.u8");
        let points: Vec<Value> = p
            .points
            .iter()
            .map(|(xy, pos)| json!([xy[0], xy[1], u8::from(*pos)]))
            .collect();
        self.call(json!({
            "op": "prompt",
            "session": session,
            "frame": p.frame,
            "object": p.object_id,
            "box": p.bbox,
            "points": points,
            "mask_path": path,
        }))?;
        Ok(self.read_masks(&path, 1)?.remove(0))
    }

    fn propagate(
        &mut self,
        session: u64,
        start: usize,
        end: usize,
        reverse: bool,
    ) -> Result<Vec<(usize, Vec<bool>)>, String> {
        let path = self.scratch.path().join("propagate.u8");
        let reply = self.call(json!({
            "op": "propagate",
            "session": session,
            "start": start,
            "end": end,
            "reverse": reverse,
            "mask_path": path,
        }))?;
        let frames: Vec<usize> = reply["frames"]
            .as_array()
            .ok_or("reply lacks frames")?
            .iter()
            .map(|v| v.as_u64().map(|z| z as usize).ok_or("bad frame index"))
            .collect::<Result<_, _>>()?;
        let masks = self.read_masks(&path, frames.len())?;
        Ok(frames.into_iter().zip(masks).collect())
    }

    fn close_session(&mut self, session: u64) {
        if let Err(e) = self.call(json!({"op": "close", "session": session})) {
            log::warn!("closing model session {session}: {e}");
        }
    }
}

impl Drop for ProcessPredictor {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
