//! In-memory scalar volumes in canonical `(z, y, x)` order.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::geometry::{GeometryError, VolumeGeometry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VolumeError {
    #[error("voxel buffer holds {got} values, shape {shape:?} needs {expected}")]
    ShapeMismatch {
        shape: VolumeShape,
        expected: usize,
        got: usize,
    },
    #[error("volume has a zero-sized axis: {0:?}")]
    Empty(VolumeShape),
    #[error("volume contains {0} non-finite voxels")]
    NonFinite(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Extent of a volume. `depth` counts slices (z), `height` rows (y) and
/// `width` columns (x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VolumeShape {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl VolumeShape {
    pub const fn new(depth: usize, height: usize, width: usize) -> Self {
        Self {
            depth,
            height,
            width,
        }
    }

    pub const fn slice_len(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat offset of `(z, y, x)`; x varies fastest.
    #[inline]
    pub const fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.height + y) * self.width + x
    }
}

/// 3D intensity array plus the geometry that places it in patient space.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeImage {
    shape: VolumeShape,
    voxels: Vec<f32>,
    pub geometry: VolumeGeometry,
    pub modality_hint: Option<String>,
}

impl VolumeImage {
    /// Wraps a voxel buffer laid out `(z, y, x)` with x fastest.
    pub fn new(
        shape: VolumeShape,
        voxels: Vec<f32>,
        geometry: VolumeGeometry,
    ) -> Result<Self, VolumeError> {
        if shape.is_empty() {
            return Err(VolumeError::Empty(shape));
        }
        if voxels.len() != shape.len() {
            return Err(VolumeError::ShapeMismatch {
                shape,
                expected: shape.len(),
                got: voxels.len(),
            });
        }
        let non_finite = voxels.iter().filter(|v| !v.is_finite()).count();
        if non_finite > 0 {
            return Err(VolumeError::NonFinite(non_finite));
        }
        geometry.validate()?;
        Ok(Self {
            shape,
            voxels,
            geometry,
            modality_hint: None,
        })
    }

    pub fn with_modality(mut self, modality: impl Into<String>) -> Self {
        self.modality_hint = Some(modality.into());
        self
    }

    /// Same geometry and shape, different intensities.
    pub fn with_voxels(&self, voxels: Vec<f32>) -> Result<Self, VolumeError> {
        let mut v = Self::new(self.shape, voxels, self.geometry)?;
        v.modality_hint = self.modality_hint.clone();
        Ok(v)
    }

    pub fn shape(&self) -> VolumeShape {
        self.shape
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.shape.index(z, y, x)]
    }

    /// Row-major `height × width` view of slice `z`.
    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.shape.slice_len();
        &self.voxels[z * n..(z + 1) * n]
    }

    /// Cheap FNV-1a digest of shape and voxel bits. Used to bind backend
    /// state to the volume it was created for.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        eat(self.shape.depth as u64);
        eat(self.shape.height as u64);
        eat(self.shape.width as u64);
        for v in &self.voxels {
            eat(v.to_bits() as u64);
        }
        h
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.voxels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}
