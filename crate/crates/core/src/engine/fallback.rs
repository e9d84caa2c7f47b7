//! Model-free backend: Otsu inside the box on prompted slices and signed
//! distance interpolation between prompted slices.
//!
//! Bright structures are taken as foreground. Deterministic by construction.

use alloc::vec::Vec;

use super::components::{largest_component_with_seeds, remove_components_at, Connectivity};
use super::otsu::otsu_split;
use super::sdf::sdf_interpolate;
use super::{
    BackendError, BackendErrorKind, BackendState, Capabilities, Direction, EngineWarning,
    SegmentationBackend, SlicePrompts,
};
use crate::mask::Mask2d;
use crate::prompts::SliceSpan;
use crate::volume::VolumeImage;

pub const FALLBACK_ID: &str = "fallback-geometric";

#[derive(Debug, Clone, Copy, Default)]
pub struct FallbackBackend {
    pub connectivity: Connectivity,
}

impl FallbackBackend {
    pub fn new() -> Self {
        Self::default()
    }

    fn error(&self, message: impl Into<alloc::string::String>) -> BackendError {
        BackendError::new(FALLBACK_ID, BackendErrorKind::Inference, message)
    }
}

impl SegmentationBackend for FallbackBackend {
    fn id(&self) -> &str {
        FALLBACK_ID
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_points: true,
            supports_negative_points: true,
            supports_memory_propagation: false,
        }
    }

    fn start_object(&self, _volume: &VolumeImage, _state: &mut BackendState) -> Result<(), BackendError> {
        Ok(())
    }

    fn segment_slice(
        &self,
        volume: &VolumeImage,
        state: &mut BackendState,
        prompts: &SlicePrompts,
    ) -> Result<Mask2d, BackendError> {
        let shape = volume.shape();
        let z = prompts.slice();
        let plane = volume.slice(z);
        let (lo, hi) = prompts.box_bounds();
        let (x1, y1) = (hi[0].min(shape.width), hi[1].min(shape.height));
        let mut region = Vec::with_capacity((x1 - lo[0]) * (y1 - lo[1]));
        for y in lo[1]..y1 {
            for x in lo[0]..x1 {
                region.push(plane[y * shape.width + x] as f64);
            }
        }
        let Ok(split) = otsu_split(&region) else {
            state.warn(EngineWarning::UniformRegion {
                object_id: state.object_id(),
                slice: z,
            });
            return Ok(Mask2d::new(shape.width, shape.height));
        };
        let fg = Mask2d::from_fn(shape.width, shape.height, |x, y| {
            x >= lo[0] && x < x1 && y >= lo[1] && y < y1 && split.is_foreground(plane[y * shape.width + x] as f64)
        });
        let fg = remove_components_at(&fg, self.connectivity, &prompts.negative_points());
        Ok(largest_component_with_seeds(
            &fg,
            self.connectivity,
            &prompts.positive_points(),
        ))
    }

    fn propagate_slices(
        &self,
        volume: &VolumeImage,
        state: &mut BackendState,
        direction: Direction,
        span: SliceSpan,
    ) -> Result<Vec<(usize, Mask2d)>, BackendError> {
        let shape = volume.shape();
        let anchors = state.prompted_masks();
        let mut out = Vec::new();
        for z in span.iter() {
            if anchors.contains_key(&z) {
                continue;
            }
            let prev = anchors.range(span.first..z).next_back();
            let next = anchors.range(z + 1..span.last + 1).next();
            let mask = match (prev, next) {
                (Some((&p, a)), Some((&q, b))) if !a.is_blank() && !b.is_blank() => {
                    let alpha = (z - p) as f64 / (q - p) as f64;
                    sdf_interpolate(a, b, alpha).map_err(|e| self.error(alloc::format!("{e}")))?
                }
                (prev, next) => {
                    let source = match direction {
                        Direction::Forward => prev.or(next),
                        Direction::Backward => next.or(prev),
                    };
                    match source {
                        Some((_, m)) => m.clone(),
                        None => Mask2d::new(shape.width, shape.height),
                    }
                }
            };
            out.push((z, mask));
        }
        if direction == Direction::Backward {
            out.reverse();
        }
        Ok(out)
    }
}
