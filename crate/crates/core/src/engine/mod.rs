//! Per-object segmentation: prompted slices, propagation along the slice
//! axis, and fusion of the two propagation directions.
//!
//! The model itself sits behind [`SegmentationBackend`]. The functions in
//! this module own the contract around it: state binding, the box clamp on
//! prompted masks, prompt precedence over propagated masks, and the
//! distance-weighted fusion of forward and backward passes.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::any::Any;
use core::fmt;

use thiserror::Error;

use crate::mask::Mask2d;
use crate::prompts::{BoxPrompt, Polarity, PointPrompt, PromptError, PromptSet, SliceSpan, Violation};
use crate::volume::{VolumeImage, VolumeShape};
use crate::ObjectId;

pub mod components;
pub mod fallback;
pub mod otsu;
pub mod sdf;

pub use components::{largest_component, largest_component_with_seeds, Connectivity};
pub use fallback::FallbackBackend;
pub use otsu::{otsu_split, otsu_threshold, OtsuError, OtsuSplit};
pub use sdf::{sdf_interpolate, signed_distance, SdfError};

/// Default dilation, in pixels, of the box a prompted mask is clamped to.
pub const DEFAULT_BOX_MARGIN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capabilities {
    pub supports_points: bool,
    pub supports_negative_points: bool,
    pub supports_memory_propagation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Prompted,
    PropagatedForward,
    PropagatedBackward,
    Fused,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceMask {
    pub slice_index: usize,
    pub mask: Mask2d,
    pub provenance: Provenance,
}

/// Prompts for one slice of one object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlicePrompts {
    pub bbox: BoxPrompt,
    pub points: Vec<PointPrompt>,
}

impl SlicePrompts {
    pub fn new(bbox: BoxPrompt) -> Self {
        Self {
            bbox,
            points: Vec::new(),
        }
    }

    pub fn with_points(mut self, points: Vec<PointPrompt>) -> Self {
        self.points = points;
        self
    }

    pub fn slice(&self) -> usize {
        self.bbox.slice as usize
    }

    /// Box corners as unsigned pixel indices, `min` inclusive, `max` exclusive.
    pub fn box_bounds(&self) -> ([usize; 2], [usize; 2]) {
        let b = &self.bbox;
        (
            [b.min[0].max(0) as usize, b.min[1].max(0) as usize],
            [b.max[0].max(0) as usize, b.max[1].max(0) as usize],
        )
    }

    pub fn positive_points(&self) -> Vec<(usize, usize)> {
        self.points_with(Polarity::Positive)
    }

    pub fn negative_points(&self) -> Vec<(usize, usize)> {
        self.points_with(Polarity::Negative)
    }

    fn points_with(&self, polarity: Polarity) -> Vec<(usize, usize)> {
        self.points
            .iter()
            .filter(|p| p.polarity == polarity)
            .map(|p| (p.pos[0] as usize, p.pos[1] as usize))
            .collect()
    }
}

/// Something the engine noticed but did not treat as fatal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineWarning {
    /// The prompted slice produced no foreground.
    EmptyPromptedMask { object_id: ObjectId, slice: usize },
    /// The box covered a region without intensity contrast.
    UniformRegion { object_id: ObjectId, slice: usize },
    /// The backend cannot take point prompts; they were dropped.
    PointsIgnored { object_id: ObjectId, slice: usize },
    /// The backend cannot take negative points; they were dropped.
    NegativePointsIgnored { object_id: ObjectId, slice: usize },
}

impl fmt::Display for EngineWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineWarning::EmptyPromptedMask { object_id, slice } => {
                write!(f, "object {object_id}: empty mask on prompted slice {slice}")
            }
            EngineWarning::UniformRegion { object_id, slice } => write!(
                f,
                "object {object_id}: box on slice {slice} covers a uniform region"
            ),
            EngineWarning::PointsIgnored { object_id, slice } => write!(
                f,
                "object {object_id}: backend ignores point prompts (slice {slice})"
            ),
            EngineWarning::NegativePointsIgnored { object_id, slice } => write!(
                f,
                "object {object_id}: backend ignores negative points (slice {slice})"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendErrorKind {
    #[error("resource unavailable")]
    Resource,
    #[error("inference failed")]
    Inference,
    #[error("unsupported request")]
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("backend `{backend}`: {kind}: {message}")]
pub struct BackendError {
    pub backend: String,
    pub kind: BackendErrorKind,
    pub message: String,
}

impl BackendError {
    pub fn new(backend: impl Into<String>, kind: BackendErrorKind, message: impl Into<String>) -> Self {
        Self {
            backend: backend.into(),
            kind,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("prompt set has {} violation(s) for this object", .0.len())]
    Validation(Vec<Violation>),
    #[error("backend state belongs to object {state_object} on another volume or object")]
    StateMismatch { state_object: ObjectId },
    #[error("slice {slice} outside volume of depth {depth}")]
    SliceOutOfRange { slice: usize, depth: usize },
    #[error("span {first}..={last} outside volume of depth {depth}")]
    SpanOutOfRange {
        first: usize,
        last: usize,
        depth: usize,
    },
    #[error("no prompted slice inside span {first}..={last}")]
    NoPromptedSlice { first: usize, last: usize },
    #[error("forward and backward passes cover different slices")]
    CoverageMismatch,
    #[error("mask shape {got:?} does not match slice shape {expected:?}")]
    MaskShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Per-(volume, object) propagation state.
///
/// The engine keeps the prompted masks here so every backend sees them; a
/// backend with its own memory (e.g. a video model's memory bank) stores it
/// in the opaque `memory` slot.
pub struct BackendState {
    object_id: ObjectId,
    volume_fingerprint: u64,
    shape: VolumeShape,
    prompted: BTreeMap<usize, Mask2d>,
    warnings: Vec<EngineWarning>,
    memory: Option<Box<dyn Any + Send>>,
}

impl fmt::Debug for BackendState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendState")
            .field("object_id", &self.object_id)
            .field("shape", &self.shape)
            .field("prompted_slices", &self.prompted_slices())
            .field("has_memory", &self.memory.is_some())
            .finish()
    }
}

impl BackendState {
    fn new(volume: &VolumeImage, object_id: ObjectId) -> Self {
        Self {
            object_id,
            volume_fingerprint: volume.fingerprint(),
            shape: volume.shape(),
            prompted: BTreeMap::new(),
            warnings: Vec::new(),
            memory: None,
        }
    }

    pub fn object_id(&self) -> ObjectId {
        self.object_id
    }

    pub fn shape(&self) -> VolumeShape {
        self.shape
    }

    pub fn prompted_slices(&self) -> BTreeSet<usize> {
        self.prompted.keys().copied().collect()
    }

    pub fn prompted_mask(&self, slice: usize) -> Option<&Mask2d> {
        self.prompted.get(&slice)
    }

    pub fn prompted_masks(&self) -> &BTreeMap<usize, Mask2d> {
        &self.prompted
    }

    pub fn warnings(&self) -> &[EngineWarning] {
        &self.warnings
    }

    pub fn warn(&mut self, warning: EngineWarning) {
        if !self.warnings.contains(&warning) {
            self.warnings.push(warning);
        }
    }

    pub fn set_memory<T: Any + Send>(&mut self, memory: T) {
        self.memory = Some(Box::new(memory));
    }

    pub fn memory_mut<T: Any + Send>(&mut self) -> Option<&mut T> {
        self.memory.as_mut().and_then(|m| m.downcast_mut::<T>())
    }

    fn check_bound(&self, volume: &VolumeImage) -> Result<(), EngineError> {
        if self.shape != volume.shape() || self.volume_fingerprint != volume.fingerprint() {
            return Err(EngineError::StateMismatch {
                state_object: self.object_id,
            });
        }
        Ok(())
    }
}

/// A slice-sequence segmentation model.
///
/// Implementations must be deterministic for identical inputs. The engine
/// guarantees that one [`BackendState`] is only ever used by one caller at a
/// time and always together with the volume it was created for.
pub trait SegmentationBackend {
    /// Stable identifier used for selection in configuration files.
    fn id(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    /// Prepares backend-side resources for one object. The state already
    /// carries the binding to `volume`; backends with memory attach it here.
    fn start_object(&self, volume: &VolumeImage, state: &mut BackendState) -> Result<(), BackendError>;

    /// Segments one slice from its box (and optional points). The result may
    /// exceed the box; the engine clamps it.
    fn segment_slice(
        &self,
        volume: &VolumeImage,
        state: &mut BackendState,
        prompts: &SlicePrompts,
    ) -> Result<Mask2d, BackendError>;

    /// Produces masks for the unprompted slices of `span` walking in
    /// `direction`. Entries for prompted slices are ignored by the engine.
    fn propagate_slices(
        &self,
        volume: &VolumeImage,
        state: &mut BackendState,
        direction: Direction,
        span: SliceSpan,
    ) -> Result<Vec<(usize, Mask2d)>, BackendError>;
}

/// Fresh state for one object on one volume.
pub fn init_object<B: SegmentationBackend + ?Sized>(
    backend: &B,
    volume: &VolumeImage,
    object_id: ObjectId,
) -> Result<BackendState, EngineError> {
    let mut state = BackendState::new(volume, object_id);
    backend.start_object(volume, &mut state)?;
    Ok(state)
}

/// Segments a prompted slice and records it as an anchor for propagation.
///
/// Every set pixel of the result lies inside the box dilated by `margin`
/// pixels (clamped to the slice).
pub fn prompt_slice<B: SegmentationBackend + ?Sized>(
    backend: &B,
    volume: &VolumeImage,
    state: &mut BackendState,
    prompts: &SlicePrompts,
    margin: usize,
) -> Result<SliceMask, EngineError> {
    state.check_bound(volume)?;
    let shape = volume.shape();
    let object_id = state.object_id;
    if prompts.bbox.object_id != object_id {
        return Err(EngineError::StateMismatch {
            state_object: object_id,
        });
    }
    let b = &prompts.bbox;
    if b.min[0] >= b.max[0] || b.min[1] >= b.max[1] {
        return Err(PromptError::DegenerateBox { min: b.min, max: b.max }.into());
    }
    if b.slice < 0
        || b.slice >= shape.depth as i64
        || b.min[0] < 0
        || b.min[1] < 0
        || b.max[0] > shape.width as i64
        || b.max[1] > shape.height as i64
    {
        return Err(PromptError::BoxOutOfBounds {
            slice: b.slice,
            min: b.min,
            max: b.max,
            shape,
        }
        .into());
    }
    let slice = prompts.slice();

    let caps = backend.capabilities();
    let mut effective = SlicePrompts::new(prompts.bbox);
    for p in &prompts.points {
        if p.object_id != object_id || p.slice != b.slice {
            continue;
        }
        if p.pos[0] < 0 || p.pos[1] < 0 || p.pos[0] >= shape.width as i64 || p.pos[1] >= shape.height as i64 {
            return Err(PromptError::PointOutOfBounds {
                slice: p.slice,
                pos: p.pos,
                shape,
            }
            .into());
        }
        if !caps.supports_points {
            state.warn(EngineWarning::PointsIgnored { object_id, slice });
        } else if p.polarity == Polarity::Negative && !caps.supports_negative_points {
            state.warn(EngineWarning::NegativePointsIgnored { object_id, slice });
        } else {
            effective.points.push(*p);
        }
    }

    let mut mask = backend.segment_slice(volume, state, &effective)?;
    if mask.width() != shape.width || mask.height() != shape.height {
        return Err(EngineError::MaskShape {
            expected: (shape.width, shape.height),
            got: (mask.width(), mask.height()),
        });
    }
    let (lo, hi) = effective.box_bounds();
    mask.retain_rect(
        lo[0].saturating_sub(margin),
        lo[1].saturating_sub(margin),
        (hi[0] + margin).min(shape.width),
        (hi[1] + margin).min(shape.height),
    );
    if mask.is_blank() {
        state.warn(EngineWarning::EmptyPromptedMask { object_id, slice });
    }
    state.prompted.insert(slice, mask.clone());
    Ok(SliceMask {
        slice_index: slice,
        mask,
        provenance: Provenance::Prompted,
    })
}

/// Propagates from the prompted slices across `span`, returning one mask per
/// unprompted slice in the order of travel. Prompted slices are never
/// returned, so their masks cannot be overwritten.
pub fn propagate<B: SegmentationBackend + ?Sized>(
    backend: &B,
    volume: &VolumeImage,
    state: &mut BackendState,
    direction: Direction,
    span: SliceSpan,
) -> Result<Vec<SliceMask>, EngineError> {
    state.check_bound(volume)?;
    let shape = volume.shape();
    if span.last >= shape.depth {
        return Err(EngineError::SpanOutOfRange {
            first: span.first,
            last: span.last,
            depth: shape.depth,
        });
    }
    if !state.prompted.keys().any(|z| span.contains(*z)) {
        return Err(EngineError::NoPromptedSlice {
            first: span.first,
            last: span.last,
        });
    }
    let targets: Vec<usize> = span.iter().filter(|z| !state.prompted.contains_key(z)).collect();
    if targets.is_empty() {
        return Ok(Vec::new());
    }

    let produced = backend.propagate_slices(volume, state, direction, span)?;
    let mut by_slice = BTreeMap::new();
    for (z, mask) in produced {
        if !span.contains(z) || state.prompted.contains_key(&z) {
            continue;
        }
        if mask.width() != shape.width || mask.height() != shape.height {
            return Err(EngineError::MaskShape {
                expected: (shape.width, shape.height),
                got: (mask.width(), mask.height()),
            });
        }
        by_slice.insert(z, mask);
    }
    if let Some(missing) = targets.iter().find(|z| !by_slice.contains_key(z)) {
        return Err(BackendError::new(
            backend.id(),
            BackendErrorKind::Inference,
            alloc::format!("propagation produced no mask for slice {missing}"),
        )
        .into());
    }
    let provenance = match direction {
        Direction::Forward => Provenance::PropagatedForward,
        Direction::Backward => Provenance::PropagatedBackward,
    };
    let mut out: Vec<SliceMask> = by_slice
        .into_iter()
        .map(|(slice_index, mask)| SliceMask {
            slice_index,
            mask,
            provenance,
        })
        .collect();
    if direction == Direction::Backward {
        out.reverse();
    }
    Ok(out)
}

/// Combines forward and backward passes over `span`.
///
/// A slice at fraction `α = (z − first) / (last − first)` weighs the forward
/// mask by `1 − α` and the backward mask by `α`; a pixel is set when the
/// weighted vote reaches one half. Weights are evaluated in integers, so
/// `α = 0` reproduces the forward mask exactly.
pub fn fuse_bidirectional(
    forward: &[SliceMask],
    backward: &[SliceMask],
    span: SliceSpan,
) -> Result<Vec<SliceMask>, EngineError> {
    let fwd: BTreeMap<usize, &Mask2d> = forward.iter().map(|m| (m.slice_index, &m.mask)).collect();
    let bwd: BTreeMap<usize, &Mask2d> = backward.iter().map(|m| (m.slice_index, &m.mask)).collect();
    if fwd.len() != forward.len()
        || bwd.len() != backward.len()
        || !fwd.keys().eq(bwd.keys())
        || fwd.keys().any(|z| !span.contains(*z))
    {
        return Err(EngineError::CoverageMismatch);
    }
    let total = (span.last - span.first) as u64;
    let mut out = Vec::with_capacity(fwd.len());
    for (z, f) in fwd {
        let b = bwd[&z];
        if !f.same_shape(b) {
            return Err(EngineError::MaskShape {
                expected: (f.width(), f.height()),
                got: (b.width(), b.height()),
            });
        }
        let mask = if total == 0 {
            f.clone()
        } else {
            let wb = (z - span.first) as u64;
            let wf = total - wb;
            let bits = f
                .bits()
                .iter()
                .zip(b.bits())
                .map(|(&a, &c)| 2 * (wf * a as u64 + wb * c as u64) >= total)
                .collect();
            Mask2d::from_bits(f.width(), f.height(), bits)
        };
        out.push(SliceMask {
            slice_index: z,
            mask,
            provenance: Provenance::Fused,
        });
    }
    Ok(out)
}

/// Binary masks of one object over the whole volume. Slices outside `span`
/// are implicitly empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectMaskVolume {
    pub object_id: ObjectId,
    shape: VolumeShape,
    span: Option<SliceSpan>,
    masks: Vec<SliceMask>,
    pub warnings: Vec<EngineWarning>,
}

impl ObjectMaskVolume {
    /// An object without any mask.
    pub fn empty(object_id: ObjectId, shape: VolumeShape) -> Self {
        Self {
            object_id,
            shape,
            span: None,
            masks: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Builds from slice masks covering a contiguous span.
    pub fn from_slices(
        object_id: ObjectId,
        shape: VolumeShape,
        mut masks: Vec<SliceMask>,
    ) -> Result<Self, EngineError> {
        masks.sort_by_key(|m| m.slice_index);
        for m in &masks {
            if m.slice_index >= shape.depth {
                return Err(EngineError::SliceOutOfRange {
                    slice: m.slice_index,
                    depth: shape.depth,
                });
            }
            if m.mask.width() != shape.width || m.mask.height() != shape.height {
                return Err(EngineError::MaskShape {
                    expected: (shape.width, shape.height),
                    got: (m.mask.width(), m.mask.height()),
                });
            }
        }
        let span = match (masks.first(), masks.last()) {
            (Some(a), Some(b)) => {
                let contiguous = masks
                    .windows(2)
                    .all(|w| w[1].slice_index == w[0].slice_index + 1);
                if !contiguous {
                    return Err(EngineError::CoverageMismatch);
                }
                Some(SliceSpan::new(a.slice_index, b.slice_index))
            }
            _ => None,
        };
        Ok(Self {
            object_id,
            shape,
            span,
            masks,
            warnings: Vec::new(),
        })
    }

    /// Builds from a dense `(z, y, x)` boolean buffer.
    pub fn from_dense(object_id: ObjectId, shape: VolumeShape, dense: &[bool]) -> Result<Self, EngineError> {
        if dense.len() != shape.len() {
            return Err(EngineError::MaskShape {
                expected: (shape.width, shape.height * shape.depth),
                got: (dense.len(), 1),
            });
        }
        let n = shape.slice_len();
        let nonempty: Vec<usize> = (0..shape.depth)
            .filter(|z| dense[z * n..(z + 1) * n].iter().any(|b| *b))
            .collect();
        let (Some(&first), Some(&last)) = (nonempty.first(), nonempty.last()) else {
            return Ok(Self::empty(object_id, shape));
        };
        let masks = (first..=last)
            .map(|z| SliceMask {
                slice_index: z,
                mask: Mask2d::from_bits(shape.width, shape.height, dense[z * n..(z + 1) * n].to_vec()),
                provenance: Provenance::Manual,
            })
            .collect();
        Self::from_slices(object_id, shape, masks)
    }

    pub fn shape(&self) -> VolumeShape {
        self.shape
    }

    pub fn span(&self) -> Option<SliceSpan> {
        self.span
    }

    pub fn masks(&self) -> &[SliceMask] {
        &self.masks
    }

    pub fn slice_mask(&self, z: usize) -> Option<&SliceMask> {
        let span = self.span?;
        if !span.contains(z) {
            return None;
        }
        self.masks.get(z - span.first)
    }

    pub fn is_set(&self, z: usize, y: usize, x: usize) -> bool {
        self.slice_mask(z).is_some_and(|m| m.mask.get(x, y))
    }

    /// Slices holding at least one set pixel, ascending.
    pub fn nonempty_slices(&self) -> Vec<usize> {
        self.masks
            .iter()
            .filter(|m| !m.mask.is_blank())
            .map(|m| m.slice_index)
            .collect()
    }

    pub fn voxel_count(&self) -> usize {
        self.masks.iter().map(|m| m.mask.count()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineOptions {
    pub box_margin: usize,
    /// Propagate over at least this span even with a single boxed slice.
    pub span_override: Option<SliceSpan>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            box_margin: DEFAULT_BOX_MARGIN,
            span_override: None,
        }
    }
}

/// Full pipeline for one object: segment every boxed slice, then propagate
/// forward and backward between the first and last box and fuse the passes
/// on the unprompted slices in between.
pub fn run_object_pipeline<B: SegmentationBackend + ?Sized>(
    volume: &VolumeImage,
    prompts: &PromptSet,
    object_id: ObjectId,
    backend: &B,
    options: &PipelineOptions,
) -> Result<ObjectMaskVolume, EngineError> {
    let shape = volume.shape();
    if prompts.object(object_id).is_none() {
        return Err(PromptError::UnknownObject(object_id).into());
    }
    let violations: Vec<Violation> = prompts
        .validate(shape)
        .into_iter()
        .filter(|v| v.object_id == object_id)
        .collect();
    if !violations.is_empty() {
        return Err(EngineError::Validation(violations));
    }
    let boxes = prompts.boxes_for(object_id);
    if boxes.is_empty() {
        return Err(PromptError::NoBoxes(object_id).into());
    }

    let mut state = init_object(backend, volume, object_id)?;
    let mut prompted = Vec::with_capacity(boxes.len());
    for b in &boxes {
        let sp = SlicePrompts::new(*b).with_points(prompts.points_on(object_id, b.slice));
        prompted.push(prompt_slice(backend, volume, &mut state, &sp, options.box_margin)?);
    }

    let mut span = prompts.propagation_span(object_id)?;
    if let Some(o) = options.span_override {
        if o.last >= shape.depth {
            return Err(EngineError::SpanOutOfRange {
                first: o.first,
                last: o.last,
                depth: shape.depth,
            });
        }
        span = SliceSpan::new(span.first.min(o.first), span.last.max(o.last));
    }

    let mut masks = prompted;
    if !span.is_single() {
        let forward = propagate(backend, volume, &mut state, Direction::Forward, span)?;
        let backward = propagate(backend, volume, &mut state, Direction::Backward, span)?;
        masks.extend(fuse_bidirectional(&forward, &backward, span)?);
    }
    let mut out = ObjectMaskVolume::from_slices(object_id, shape, masks)?;
    out.warnings = state.warnings.clone();
    Ok(out)
}
