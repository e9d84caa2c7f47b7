//! Algorithmic core for prompt-driven annotation of 3D medical volumes.
//!
//! A volume is handled as an ordered sequence of 2D slices (index order
//! `(z, y, x)`, `z` being the slice axis). Users place box prompts, and
//! optionally point prompts, on a few slices per object; a
//! [`engine::SegmentationBackend`] turns each prompted slice into a mask and
//! propagates masks along the slice axis. Per-object results are merged into a
//! [`labels::LabelMap`], corrected with a brush, locked, and measured by
//! [`quant::compute_volumetry`].
//!
//! The crate is `no_std` and only needs `alloc`. Everything touching the
//! filesystem (NIfTI/DICOM, session files, CLI) lives in the `cohortseg`
//! companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod engine;
pub mod geometry;
pub mod labels;
pub mod mask;
mod math;
pub mod preprocess;
pub mod prompts;
pub mod quant;
pub mod volume;

pub use geometry::{geometry_equal, GeometryError, VolumeGeometry};
pub use mask::Mask2d;
pub use volume::{VolumeError, VolumeImage, VolumeShape};

/// Identifier of an annotated object. Label value `k` in a label map marks
/// object `k`; `0` is background.
pub type ObjectId = u16;
