//! NIfTI-1 reading and writing.
//!
//! Geometry comes from the sform when `sform_code > 0`, else the qform, else
//! `pixdim` alone (zero origin, identity direction). Spacing is `pixdim[1..4]`
//! and direction columns are the normalised affine columns. Writers set both
//! sform and qform with code 1 (scanner anatomical).

use std::path::Path;

use ::nifti::writer::WriterOptions;
use ::nifti::{IntoNdArray, NiftiHeader, NiftiObject, ReaderOptions, XForm};
use cohortseg_core::labels::LabelMap;
use cohortseg_core::{VolumeGeometry, VolumeImage, VolumeShape};
use nalgebra::Matrix4;
use ndarray::Array3;

use super::ImageIoError;
use crate::fsutil;

/// NIfTI `xyzt_units` code for millimetres.
const UNITS_MM: u8 = 2;

fn nifti_err(path: &Path, e: ::nifti::NiftiError) -> ImageIoError {
    match e {
        ::nifti::NiftiError::Io(source) => ImageIoError::io(path, source),
        other => ImageIoError::Nifti {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

fn squeezed_dims(path: &Path, header: &NiftiHeader) -> Result<[usize; 3], ImageIoError> {
    let ndim = usize::from(header.dim[0]).min(7);
    let raw: Vec<usize> = header.dim[1..=ndim].iter().map(|d| usize::from(*d)).collect();
    let mut dims = raw.clone();
    while dims.len() > 3 && dims.last() == Some(&1) {
        dims.pop();
    }
    match dims[..] {
        [x, y, z] => Ok([x, y, z]),
        _ => Err(ImageIoError::NotThreeD {
            path: path.to_path_buf(),
            dims: raw,
        }),
    }
}

/// Reads only the header and checks that the file holds a 3D volume.
pub fn probe_nifti(path: &Path) -> Result<(), ImageIoError> {
    let header = NiftiHeader::from_file(path).map_err(|e| nifti_err(path, e))?;
    squeezed_dims(path, &header).map(|_| ())
}

/// Reads a 3D NIfTI-1 volume (`.nii` or `.nii.gz`). Trailing singleton
/// dimensions are squeezed; anything else that is not 3D is rejected.
pub fn load_nifti(path: &Path) -> Result<VolumeImage, ImageIoError> {
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| nifti_err(path, e))?;
    let header = obj.header().clone();
    let dims = squeezed_dims(path, &header)?;
    let geometry = read_geometry(&header).map_err(|source| ImageIoError::Geometry {
        path: path.to_path_buf(),
        source,
    })?;
    let data = obj
        .into_volume()
        .into_ndarray::<f32>()
        .map_err(|e| nifti_err(path, e))?;
    let voxels: Vec<f32> = data.reversed_axes().iter().copied().collect();
    let count = voxels.iter().filter(|v| !v.is_finite()).count();
    if count > 0 {
        return Err(ImageIoError::NonFinite {
            path: path.to_path_buf(),
            count,
        });
    }
    let shape = VolumeShape::new(dims[2], dims[1], dims[0]);
    VolumeImage::new(shape, voxels, geometry).map_err(|source| ImageIoError::Volume {
        path: path.to_path_buf(),
        source,
    })
}

fn read_geometry(header: &NiftiHeader) -> Result<VolumeGeometry, cohortseg_core::GeometryError> {
    let spacing = [
        f64::from(header.pixdim[1]),
        f64::from(header.pixdim[2]),
        f64::from(header.pixdim[3]),
    ];
    let affine: Option<Matrix4<f64>> = if header.sform_code > 0 {
        Some(header.sform_affine())
    } else if header.qform_code > 0 && spacing.iter().all(|s| *s > 0.0) {
        let mut h = header.clone();
        if h.pixdim[0] != -1.0 {
            h.pixdim[0] = 1.0;
        }
        Some(h.qform_affine())
    } else {
        None
    };
    let Some(a) = affine else {
        return VolumeGeometry::new(spacing, [0.0; 3], cohortseg_core::geometry::IDENTITY);
    };
    // RAS -> LPS: negate the first two patient rows.
    let flip = [-1.0, -1.0, 1.0];
    let mut direction = [[0.0; 3]; 3];
    for col in 0..3 {
        let c = [a[(0, col)], a[(1, col)], a[(2, col)]];
        let norm = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        for row in 0..3 {
            direction[row][col] = if norm > 0.0 { flip[row] * c[row] / norm } else { 0.0 };
        }
    }
    let origin = [-a[(0, 3)], -a[(1, 3)], a[(2, 3)]];
    VolumeGeometry::new(spacing, origin, direction)
}

/// RAS affine `[D·diag(s) | o]` for an LPS geometry.
fn ras_affine(g: &VolumeGeometry) -> Matrix4<f64> {
    let flip = [-1.0, -1.0, 1.0];
    let mut m = Matrix4::identity();
    for row in 0..3 {
        for col in 0..3 {
            m[(row, col)] = flip[row] * g.direction[row][col] * g.spacing[col];
        }
        m[(row, 3)] = flip[row] * g.origin[row];
    }
    m
}

fn header_for(geometry: &VolumeGeometry) -> NiftiHeader {
    let affine = ras_affine(geometry);
    let mut h = NiftiHeader::default();
    h.set_qform(&affine, XForm::ScannerAnat);
    h.set_sform(&affine, XForm::ScannerAnat);
    for axis in 0..3 {
        h.pixdim[axis + 1] = geometry.spacing[axis] as f32;
    }
    h.xyzt_units = UNITS_MM;
    h
}

fn to_io(e: ::nifti::NiftiError) -> std::io::Error {
    match e {
        ::nifti::NiftiError::Io(io) => io,
        other => std::io::Error::other(other.to_string()),
    }
}

/// Writes through `write(tmp_path, header)` and atomically moves the result
/// to `path`.
fn write_with<F>(path: &Path, geometry: &VolumeGeometry, write: F) -> Result<(), ImageIoError>
where
    F: FnOnce(&Path, &NiftiHeader) -> Result<(), ::nifti::NiftiError>,
{
    geometry.validate().map_err(|source| ImageIoError::Geometry {
        path: path.to_path_buf(),
        source,
    })?;
    let header = header_for(geometry);
    let suffix = if path.to_string_lossy().to_ascii_lowercase().ends_with(".gz") {
        ".nii.gz"
    } else {
        ".nii"
    };
    fsutil::persist_with(path, suffix, |tmp| write(tmp, &header).map_err(to_io))
        .map_err(|e| ImageIoError::io(path, e))
}

fn zyx_array<T>(shape: VolumeShape, data: Vec<T>) -> Array3<T> {
    Array3::from_shape_vec((shape.depth, shape.height, shape.width), data)
        .expect("buffer length matches shape")
}

/// Writes an intensity volume as float32 NIfTI. The suffix of `path`
/// (`.nii` or `.nii.gz`) selects compression.
pub fn write_volume_nifti(volume: &VolumeImage, path: &Path) -> Result<(), ImageIoError> {
    let arr = zyx_array(volume.shape(), volume.voxels().to_vec());
    write_with(path, &volume.geometry, |tmp, h| {
        WriterOptions::new(tmp)
            .reference_header(h)
            .write_nifti(&arr.view().reversed_axes())
    })
}

/// Writes a locked label map as unsigned 8-bit compressed NIfTI.
pub fn export_labelmap(
    labels: &LabelMap,
    geometry: &VolumeGeometry,
    path: &Path,
) -> Result<(), ImageIoError> {
    if !labels.is_locked() {
        return Err(ImageIoError::NotLocked);
    }
    if let Some(&value) = labels.voxels().iter().find(|v| **v > 255) {
        return Err(ImageIoError::LabelValue { value });
    }
    let bytes: Vec<u8> = labels.voxels().iter().map(|v| *v as u8).collect();
    let arr = zyx_array(labels.shape(), bytes);
    write_with(path, geometry, |tmp, h| {
        WriterOptions::new(tmp)
            .reference_header(h)
            .write_nifti(&arr.view().reversed_axes())
    })
}

/// Loads a label map written by [`export_labelmap`].
pub fn load_labelmap(path: &Path) -> Result<(LabelMap, VolumeGeometry), ImageIoError> {
    let volume = load_nifti(path)?;
    let voxels: Vec<u16> = volume.voxels().iter().map(|v| *v as u16).collect();
    let labels = LabelMap::from_voxels(volume.shape(), voxels).map_err(|e| ImageIoError::Nifti {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok((labels, volume.geometry))
}
