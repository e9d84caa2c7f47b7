//! Adapter for SAM2-style video segmentation models such as Medical-SAM2.
//!
//! The model itself sits behind [`VideoPredictor`]. The adapter conditions
//! slices for it (per-slice 1st..99th percentile window to `[0, 1]`, bilinear
//! resize to `image_size`², grey replicated to three channels) and maps
//! prompts into model pixels. Masks come back at model resolution and are
//! resampled to the native slice grid by nearest neighbour.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use cohortseg_core::engine::{
    BackendError, BackendErrorKind, BackendState, Capabilities, Direction, SegmentationBackend,
    SlicePrompts,
};
use cohortseg_core::mask::Mask2d;
use cohortseg_core::preprocess::percentile;
use cohortseg_core::prompts::{Polarity, SliceSpan};
use cohortseg_core::VolumeImage;

use crate::config::EngineConfig;

#[cfg(feature = "medsam2")]
mod process;
#[cfg(feature = "medsam2")]
pub use process::ProcessPredictor;

pub const MEDSAM2_ID: &str = "medsam2";
/// Environment variable holding the default checkpoint path.
pub const CHECKPOINT_ENV: &str = "MEDSAM2_CHECKPOINT";
pub const DEFAULT_IMAGE_SIZE: u32 = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub checkpoint_path: PathBuf,
    pub device: String,
    pub image_size: u32,
    pub seed: u64,
}

fn resource(message: impl Into<String>) -> BackendError {
    BackendError::new(MEDSAM2_ID, BackendErrorKind::Resource, message)
}

fn inference(message: impl Into<String>) -> BackendError {
    BackendError::new(MEDSAM2_ID, BackendErrorKind::Inference, message)
}

impl ModelConfig {
    /// Takes the checkpoint from the config, else from `MEDSAM2_CHECKPOINT`.
    pub fn from_engine(cfg: &EngineConfig) -> Result<Self, BackendError> {
        Self::from_engine_with_env(cfg, std::env::var_os(CHECKPOINT_ENV).map(PathBuf::from))
    }

    pub fn from_engine_with_env(
        cfg: &EngineConfig,
        env_checkpoint: Option<PathBuf>,
    ) -> Result<Self, BackendError> {
        let checkpoint_path = cfg.checkpoint_path.clone().or(env_checkpoint).ok_or_else(|| {
            resource(format!(
                "checkpoint not found: <unset> (set {CHECKPOINT_ENV} or engine.checkpoint_path)"
            ))
        })?;
        let config = Self {
            checkpoint_path,
            device: cfg.device.clone(),
            image_size: cfg.image_size,
            seed: cfg.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.checkpoint_path.is_file() {
            return Err(resource(format!(
                "checkpoint not found: {}",
                self.checkpoint_path.display()
            )));
        }
        if !valid_device(&self.device) {
            return Err(resource(format!(
                "device {:?} unavailable; use \"cpu\" or select the fallback-geometric backend",
                self.device
            )));
        }
        if self.image_size < 16 {
            return Err(resource(format!("image_size {} too small", self.image_size)));
        }
        Ok(())
    }
}

fn valid_device(device: &str) -> bool {
    match device {
        "cpu" | "cuda" | "mps" => true,
        d => d
            .strip_prefix("cuda:")
            .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit())),
    }
}

/// Slices conditioned for the model: `frames[z]` is planar RGB,
/// `3 × size × size`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub size: usize,
    pub frames: Vec<Vec<f32>>,
}

/// A prompt in model pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPrompt {
    pub frame: usize,
    pub object_id: u16,
    /// `[x0, y0, x1, y1]`.
    pub bbox: [f32; 4],
    /// `(position, positive)`.
    pub points: Vec<([f32; 2], bool)>,
}

/// A promptable video segmentation model. Masks are row-major
/// `size × size` at model resolution.
pub trait VideoPredictor: Send {
    fn supports_negative_points(&self) -> bool;

    /// Encodes the frames and returns a session handle.
    fn init_session(&mut self, frames: &FrameStack, seed: u64) -> Result<u64, String>;

    fn add_prompt(&mut self, session: u64, prompt: &ModelPrompt) -> Result<Vec<bool>, String>;

    /// Masks for frames `start..=end` (walking down when `reverse`).
    fn propagate(
        &mut self,
        session: u64,
        start: usize,
        end: usize,
        reverse: bool,
    ) -> Result<Vec<(usize, Vec<bool>)>, String>;

    fn close_session(&mut self, session: u64);
}

type SharedPredictor = Arc<Mutex<Box<dyn VideoPredictor>>>;

/// Per-object model session; closed when the backend state is dropped.
struct Session {
    id: u64,
    predictor: SharedPredictor,
}

impl Drop for Session {
    fn drop(&mut self) {
        if let Ok(mut p) = self.predictor.lock() {
            p.close_session(self.id);
        }
    }
}

pub struct MedSam2Backend {
    config: ModelConfig,
    predictor: SharedPredictor,
}

impl std::fmt::Debug for MedSam2Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MedSam2Backend").field("config", &self.config).finish()
    }
}

impl MedSam2Backend {
    pub fn new(config: ModelConfig, predictor: Box<dyn VideoPredictor>) -> Self {
        Self {
            config,
            predictor: Arc::new(Mutex::new(predictor)),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn size(&self) -> usize {
        self.config.image_size as usize
    }

    fn with_predictor<T>(
        &self,
        f: impl FnOnce(&mut dyn VideoPredictor) -> Result<T, String>,
    ) -> Result<T, BackendError> {
        let mut guard = self
            .predictor
            .lock()
            .map_err(|_| inference("model worker poisoned by an earlier panic"))?;
        f(guard.as_mut()).map_err(inference)
    }

    fn session(state: &mut BackendState) -> Result<u64, BackendError> {
        state
            .memory_mut::<Session>()
            .map(|s| s.id)
            .ok_or_else(|| inference("object was not started on this backend"))
    }

    fn to_native(&self, mask: &[bool], width: usize, height: usize) -> Result<Mask2d, BackendError> {
        let size = self.size();
        if mask.len() != size * size {
            return Err(inference(format!(
                "model returned {} mask values, expected {}",
                mask.len(),
                size * size
            )));
        }
        Ok(upsample_nearest(mask, size, width, height))
    }
}

/// Checks the model configuration and starts the subprocess model bridge.
#[cfg(feature = "medsam2")]
pub fn build_backend(model: &ModelConfig, cfg: &EngineConfig) -> Result<MedSam2Backend, BackendError> {
    model.validate()?;
    let command = cfg
        .worker
        .clone()
        .filter(|c| !c.is_empty())
        .ok_or_else(|| resource("engine.worker (model worker command) is not configured"))?;
    let predictor = ProcessPredictor::spawn(&command, model)?;
    Ok(MedSam2Backend::new(model.clone(), Box::new(predictor)))
}

/// Checks the model configuration; this build has no model bridge.
#[cfg(not(feature = "medsam2"))]
pub fn build_backend(model: &ModelConfig, _cfg: &EngineConfig) -> Result<MedSam2Backend, BackendError> {
    model.validate()?;
    Err(BackendError::new(
        MEDSAM2_ID,
        BackendErrorKind::Unsupported,
        "built without the `medsam2` feature; rebuild with --features medsam2",
    ))
}

/// Per-slice 1..99 percentile window mapped to `[0, 1]`; a flat slice
/// becomes zeros.
pub fn normalize_slice(slice: &[f32]) -> Vec<f32> {
    let mut sorted: Vec<f64> = slice.iter().map(|v| f64::from(*v)).collect();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, 1.0);
    let hi = percentile(&sorted, 99.0);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; slice.len()];
    }
    slice
        .iter()
        .map(|v| ((f64::from(*v).clamp(lo, hi) - lo) / range) as f32)
        .collect()
}

/// Bilinear resize with pixel-centre alignment.
pub fn resize_bilinear(src: &[f32], width: usize, height: usize, size: usize) -> Vec<f32> {
    let sx = width as f64 / size as f64;
    let sy = height as f64 / size as f64;
    let sample = |pos: f64, n: usize| {
        let p = pos.clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let (y0, y1, fy) = sample((y as f64 + 0.5) * sy - 0.5, height);
        for x in 0..size {
            let (x0, x1, fx) = sample((x as f64 + 0.5) * sx - 0.5, width);
            let at = |xx: usize, yy: usize| f64::from(src[yy * width + xx]);
            let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
            let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

/// Nearest-neighbour resample of a square model mask to `width × height`.
pub fn upsample_nearest(mask: &[bool], size: usize, width: usize, height: usize) -> Mask2d {
    let map = |i: usize, n: usize| (((i as f64 + 0.5) * size as f64 / n as f64) as usize).min(size - 1);
    Mask2d::from_fn(width, height, |x, y| mask[map(y, height) * size + map(x, width)])
}

/// Conditions every slice of `volume` for the model.
pub fn prepare_frames(volume: &VolumeImage, size: usize) -> FrameStack {
    let shape = volume.shape();
    let frames = (0..shape.depth)
        .map(|z| {
            let norm = normalize_slice(volume.slice(z));
            let grey = resize_bilinear(&norm, shape.width, shape.height, size);
            let mut rgb = Vec::with_capacity(3 * grey.len());
            for _ in 0..3 {
                rgb.extend_from_slice(&grey);
            }
            rgb
        })
        .collect();
    FrameStack { size, frames }
}

impl SegmentationBackend for MedSam2Backend {
    fn id(&self) -> &str {
        MEDSAM2_ID
    }

    fn capabilities(&self) -> Capabilities {
        let negatives = self
            .predictor
            .lock()
            .map(|p| p.supports_negative_points())
            .unwrap_or(false);
        Capabilities {
            supports_points: true,
            supports_negative_points: negatives,
            supports_memory_propagation: true,
        }
    }

    fn start_object(&self, volume: &VolumeImage, state: &mut BackendState) -> Result<(), BackendError> {
        let frames = prepare_frames(volume, self.size());
        let seed = self.config.seed;
        let id = self.with_predictor(|p| p.init_session(&frames, seed))?;
        state.set_memory(Session {
            id,
            predictor: Arc::clone(&self.predictor),
        });
        Ok(())
    }

    fn segment_slice(
        &self,
        volume: &VolumeImage,
        state: &mut BackendState,
        prompts: &SlicePrompts,
    ) -> Result<Mask2d, BackendError> {
        let session = Self::session(state)?;
        let shape = volume.shape();
        let size = self.size() as f32;
        let kx = size / shape.width as f32;
        let ky = size / shape.height as f32;
        let b = &prompts.bbox;
        let prompt = ModelPrompt {
            frame: prompts.slice(),
            object_id: state.object_id(),
            bbox: [
                b.min[0] as f32 * kx,
                b.min[1] as f32 * ky,
                b.max[0] as f32 * kx,
                b.max[1] as f32 * ky,
            ],
            points: prompts
                .points
                .iter()
                .map(|p| {
                    (
                        [(p.pos[0] as f32 + 0.5) * kx, (p.pos[1] as f32 + 0.5) * ky],
                        p.polarity == Polarity::Positive,
                    )
                })
                .collect(),
        };
        let mask = self.with_predictor(|p| p.add_prompt(session, &prompt))?;
        self.to_native(&mask, shape.width, shape.height)
    }

    fn propagate_slices(
        &self,
        volume: &VolumeImage,
        state: &mut BackendState,
        direction: Direction,
        span: SliceSpan,
    ) -> Result<Vec<(usize, Mask2d)>, BackendError> {
        let session = Self::session(state)?;
        let shape = volume.shape();
        let reverse = direction == Direction::Backward;
        let masks = self.with_predictor(|p| p.propagate(session, span.first, span.last, reverse))?;
        masks
            .into_iter()
            .filter(|(z, _)| span.contains(*z))
            .map(|(z, m)| Ok((z, self.to_native(&m, shape.width, shape.height)?)))
            .collect()
    }
}
