//! Backend selection by configuration id.

use cohortseg_core::engine::fallback::FALLBACK_ID;
use cohortseg_core::engine::{BackendError, BackendErrorKind, FallbackBackend, SegmentationBackend};

use crate::config::EngineConfig;

pub mod medsam2;

pub use medsam2::{MedSam2Backend, ModelConfig, VideoPredictor, CHECKPOINT_ENV, DEFAULT_IMAGE_SIZE, MEDSAM2_ID};

/// A backend usable from any worker thread.
pub type DynBackend = Box<dyn SegmentationBackend + Send + Sync>;

pub const BACKEND_IDS: [&str; 2] = [FALLBACK_ID, MEDSAM2_ID];

/// Instantiates the backend named by `cfg.backend`.
pub fn build_backend(cfg: &EngineConfig) -> Result<DynBackend, BackendError> {
    match cfg.backend.as_str() {
        FALLBACK_ID => Ok(Box::new(FallbackBackend::new())),
        MEDSAM2_ID => {
            let model = ModelConfig::from_engine(cfg)?;
            Ok(Box::new(medsam2::build_backend(&model, cfg)?))
        }
        other => Err(BackendError::new(
            other,
            BackendErrorKind::Unsupported,
            format!("unknown backend; available: {}", BACKEND_IDS.join(", ")),
        )),
    }
}
