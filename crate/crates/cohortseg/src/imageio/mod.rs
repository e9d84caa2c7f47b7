//! Loading DICOM series and NIfTI volumes, and exporting label maps.
//!
//! Loaded volumes use the core conventions: voxels in `(z, y, x)` order and
//! ITK/LPS geometry. NIfTI files store RAS affines; the conversion flips the
//! first two patient axes in both directions.

use std::fmt;
use std::path::{Path, PathBuf};

use cohortseg_core::{GeometryError, VolumeError, VolumeImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod dicom;
pub mod nifti;

pub use self::dicom::{load_dicom_series, scan_dicom_dir, SeriesInfo};
pub use self::nifti::{export_labelmap, load_labelmap, load_nifti, write_volume_nifti};

/// Where a case's voxels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    DicomSeries,
    NiftiFile,
}

impl SourceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceKind::DicomSeries => "dicom_series",
            SourceKind::NiftiFile => "nifti_file",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Non-fatal findings while loading.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadWarning {
    /// Position or orientation tags missing; slices ordered by InstanceNumber
    /// with unit slice spacing and identity direction.
    InstanceNumberOrdering { missing: usize },
    /// Adjacent-slice distances deviate from the median by more than 1%.
    IrregularSpacing { median: f64, min: f64, max: f64 },
}

impl fmt::Display for LoadWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadWarning::InstanceNumberOrdering { missing } => write!(
                f,
                "{missing} slice(s) lack position/orientation; ordered by InstanceNumber"
            ),
            LoadWarning::IrregularSpacing { median, min, max } => write!(
                f,
                "slice spacing varies from {min:.4} to {max:.4} mm; using median {median:.4} mm"
            ),
        }
    }
}

#[derive(Debug)]
pub struct Loaded {
    pub volume: VolumeImage,
    pub warnings: Vec<LoadWarning>,
}

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: NIfTI error: {message}")]
    Nifti { path: PathBuf, message: String },
    #[error("{path}: DICOM error: {message}")]
    Dicom { path: PathBuf, message: String },
    #[error("{path}: expected 3D volume, got dimensions {dims:?}")]
    NotThreeD { path: PathBuf, dims: Vec<usize> },
    #[error("{path}: {count} non-finite voxel(s)")]
    NonFinite { path: PathBuf, count: usize },
    #[error("{path}: {source}")]
    Geometry {
        path: PathBuf,
        #[source]
        source: GeometryError,
    },
    #[error("{path}: {source}")]
    Volume {
        path: PathBuf,
        #[source]
        source: VolumeError,
    },
    #[error("{path}: no DICOM series with at least one image")]
    NoSeries { path: PathBuf },
    #[error("{path}: series {uid} not found")]
    SeriesNotFound { path: PathBuf, uid: String },
    #[error("{path}: multiple series present, choose one of: {}", uids.join(", "))]
    MultipleSeries { path: PathBuf, uids: Vec<String> },
    #[error("{path}: slices have mixed in-plane shapes {shapes:?}")]
    MixedShapes {
        path: PathBuf,
        shapes: Vec<(usize, usize)>,
    },
    #[error("{path}: multi-frame DICOM ({frames} frames) is not supported")]
    MultiFrame { path: PathBuf, frames: u32 },
    #[error("{path}: unsupported pixel data: {message}")]
    PixelData { path: PathBuf, message: String },
    #[error("label map must be locked before export")]
    NotLocked,
    #[error("label value {value} exceeds 255 and cannot be stored as 8-bit")]
    LabelValue { value: u16 },
    #[error("{path}: cannot infer the source kind")]
    UnknownFormat { path: PathBuf },
}

impl ImageIoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ImageIoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// True for `.nii` and `.nii.gz` file names (case-insensitive).
pub fn is_nifti_path(path: &Path) -> bool {
    nifti_stem(path).is_some()
}

/// File name without the `.nii` / `.nii.gz` extension.
pub fn nifti_stem(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    let lower = name.to_ascii_lowercase();
    for ext in [".nii.gz", ".nii"] {
        if lower.ends_with(ext) && name.len() > ext.len() {
            return Some(name[..name.len() - ext.len()].to_string());
        }
    }
    None
}

/// Loads a case source: a NIfTI file, or a DICOM directory (optionally
/// restricted to one series).
pub fn load_volume(
    kind: SourceKind,
    path: &Path,
    series_uid: Option<&str>,
) -> Result<Loaded, ImageIoError> {
    match kind {
        SourceKind::NiftiFile => Ok(Loaded {
            volume: load_nifti(path)?,
            warnings: Vec::new(),
        }),
        SourceKind::DicomSeries => load_dicom_series(path, series_uid),
    }
}
