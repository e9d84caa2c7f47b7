//! DICOM series discovery and volume reconstruction.
//!
//! Slices are ordered by the projection of ImagePositionPatient onto the
//! slice normal (row cosine × column cosine). The slice spacing is the median
//! adjacent distance. Only native (uncompressed) single-frame grayscale
//! images are decoded.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cohortseg_core::{VolumeGeometry, VolumeImage, VolumeShape};
use dicom_core::value::PrimitiveValue;
use dicom_core::value::DicomValueType;
use dicom_core::Tag;
use dicom_dictionary_std::tags;
use dicom_object::{DefaultDicomObject, OpenFileOptions};

use super::{ImageIoError, LoadWarning, Loaded};

/// Relative deviation from the median slice distance that triggers a warning.
const SPACING_TOLERANCE: f64 = 0.01;

/// One series found in a directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeriesInfo {
    pub uid: String,
    /// Sorted by file name.
    pub files: Vec<PathBuf>,
}

fn dicom_err(path: &Path, message: impl ToString) -> ImageIoError {
    ImageIoError::Dicom {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn text(obj: &DefaultDicomObject, tag: Tag) -> Option<String> {
    let e = obj.element_opt(tag).ok().flatten()?;
    let s = e.to_str().ok()?;
    let s = s.trim_matches(|c: char| c.is_whitespace() || c == '\0');
    (!s.is_empty()).then(|| s.to_string())
}

fn floats(obj: &DefaultDicomObject, tag: Tag) -> Option<Vec<f64>> {
    obj.element_opt(tag)
        .ok()
        .flatten()?
        .to_multi_float64()
        .ok()
        .filter(|v| !v.is_empty())
}

fn int(obj: &DefaultDicomObject, tag: Tag) -> Option<i64> {
    obj.element_opt(tag).ok().flatten()?.to_int::<i64>().ok()
}

/// Lists the DICOM series whose files sit directly in `dir`. Files that do
/// not parse as DICOM, or lack a SeriesInstanceUID, are ignored.
pub fn scan_dicom_dir(dir: &Path) -> Result<Vec<SeriesInfo>, ImageIoError> {
    let mut by_uid: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| ImageIoError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| ImageIoError::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let Ok(obj) = OpenFileOptions::new()
            .read_until(tags::PIXEL_DATA)
            .open_file(&path)
        else {
            continue;
        };
        if let Some(uid) = text(&obj, tags::SERIES_INSTANCE_UID) {
            by_uid.entry(uid).or_default().push(path);
        }
    }
    Ok(by_uid
        .into_iter()
        .map(|(uid, mut files)| {
            files.sort();
            SeriesInfo { uid, files }
        })
        .collect())
}

struct Slice {
    file: PathBuf,
    rows: usize,
    cols: usize,
    position: Option<[f64; 3]>,
    orientation: Option<[f64; 6]>,
    pixel_spacing: Option<[f64; 2]>,
    thickness: Option<f64>,
    instance: i64,
    modality: Option<String>,
    pixels: Vec<f32>,
}

fn read_slice(path: &Path) -> Result<Slice, ImageIoError> {
    let obj = OpenFileOptions::new()
        .open_file(path)
        .map_err(|e| dicom_err(path, e))?;
    let frames = int(&obj, tags::NUMBER_OF_FRAMES).unwrap_or(1);
    if frames > 1 {
        return Err(ImageIoError::MultiFrame {
            path: path.to_path_buf(),
            frames: frames as u32,
        });
    }
    let samples = int(&obj, tags::SAMPLES_PER_PIXEL).unwrap_or(1);
    if samples != 1 {
        return Err(ImageIoError::PixelData {
            path: path.to_path_buf(),
            message: format!("{samples} samples per pixel"),
        });
    }
    let rows = int(&obj, tags::ROWS).ok_or_else(|| dicom_err(path, "missing Rows"))? as usize;
    let cols = int(&obj, tags::COLUMNS).ok_or_else(|| dicom_err(path, "missing Columns"))? as usize;
    let bits = int(&obj, tags::BITS_ALLOCATED).unwrap_or(16);
    let signed = int(&obj, tags::PIXEL_REPRESENTATION).unwrap_or(0) == 1;
    let slope = floats(&obj, tags::RESCALE_SLOPE).map_or(1.0, |v| v[0]);
    let intercept = floats(&obj, tags::RESCALE_INTERCEPT).map_or(0.0, |v| v[0]);

    let pixel_elem = obj
        .element(tags::PIXEL_DATA)
        .map_err(|_| dicom_err(path, "missing PixelData"))?;
    let Some(value) = pixel_elem.value().primitive() else {
        return Err(ImageIoError::PixelData {
            path: path.to_path_buf(),
            message: format!(
                "encapsulated transfer syntax {}",
                obj.meta().transfer_syntax()
            ),
        });
    };
    let raw: Vec<f64> = match (value, bits, signed) {
        (PrimitiveValue::U16(v), 16, false) => v.iter().map(|x| f64::from(*x)).collect(),
        (PrimitiveValue::U16(v), 16, true) => v.iter().map(|x| f64::from(*x as i16)).collect(),
        (PrimitiveValue::I16(v), 16, _) => v.iter().map(|x| f64::from(*x)).collect(),
        (PrimitiveValue::U8(v), 16, _) => v
            .chunks_exact(2)
            .map(|b| {
                let u = u16::from_le_bytes([b[0], b[1]]);
                if signed {
                    f64::from(u as i16)
                } else {
                    f64::from(u)
                }
            })
            .collect(),
        (PrimitiveValue::U8(v), 8, false) => v.iter().map(|x| f64::from(*x)).collect(),
        (PrimitiveValue::U8(v), 8, true) => v.iter().map(|x| f64::from(*x as i8)).collect(),
        _ => {
            return Err(ImageIoError::PixelData {
                path: path.to_path_buf(),
                message: format!("{bits}-bit samples with value type {:?}", value.value_type()),
            })
        }
    };
    if raw.len() < rows * cols {
        return Err(ImageIoError::PixelData {
            path: path.to_path_buf(),
            message: format!("{} samples for a {rows}x{cols} image", raw.len()),
        });
    }
    let pixels = raw[..rows * cols]
        .iter()
        .map(|v| (v * slope + intercept) as f32)
        .collect();

    Ok(Slice {
        file: path.to_path_buf(),
        rows,
        cols,
        position: floats(&obj, tags::IMAGE_POSITION_PATIENT)
            .filter(|v| v.len() >= 3)
            .map(|v| [v[0], v[1], v[2]]),
        orientation: floats(&obj, tags::IMAGE_ORIENTATION_PATIENT)
            .filter(|v| v.len() >= 6)
            .map(|v| [v[0], v[1], v[2], v[3], v[4], v[5]]),
        pixel_spacing: floats(&obj, tags::PIXEL_SPACING)
            .filter(|v| v.len() >= 2)
            .map(|v| [v[0], v[1]]),
        thickness: floats(&obj, tags::SLICE_THICKNESS).map(|v| v[0]).filter(|t| *t > 0.0),
        instance: int(&obj, tags::INSTANCE_NUMBER).unwrap_or(0),
        modality: text(&obj, tags::MODALITY),
        pixels,
    })
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n > 0.0 {
        [v[0] / n, v[1] / n, v[2] / n]
    } else {
        v
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Reconstructs one series from `dir`. With several series present,
/// `series_uid` must name one of them.
pub fn load_dicom_series(dir: &Path, series_uid: Option<&str>) -> Result<Loaded, ImageIoError> {
    let series = scan_dicom_dir(dir)?;
    let chosen = match series_uid {
        Some(uid) => series
            .iter()
            .find(|s| s.uid == uid)
            .ok_or_else(|| ImageIoError::SeriesNotFound {
                path: dir.to_path_buf(),
                uid: uid.to_string(),
            })?,
        None => match series.as_slice() {
            [] => return Err(ImageIoError::NoSeries { path: dir.to_path_buf() }),
            [one] => one,
            many => {
                return Err(ImageIoError::MultipleSeries {
                    path: dir.to_path_buf(),
                    uids: many.iter().map(|s| s.uid.clone()).collect(),
                })
            }
        },
    };
    let slices = chosen
        .files
        .iter()
        .map(|f| read_slice(f))
        .collect::<Result<Vec<_>, _>>()?;
    assemble(dir, slices)
}

fn assemble(dir: &Path, mut slices: Vec<Slice>) -> Result<Loaded, ImageIoError> {
    let mut shapes: Vec<(usize, usize)> = slices.iter().map(|s| (s.rows, s.cols)).collect();
    shapes.sort_unstable();
    shapes.dedup();
    if shapes.len() > 1 {
        return Err(ImageIoError::MixedShapes {
            path: dir.to_path_buf(),
            shapes,
        });
    }
    let (rows, cols) = shapes[0];
    let mut warnings = Vec::new();
    let in_plane = slices[0].pixel_spacing.unwrap_or([1.0, 1.0]);
    // PixelSpacing is (row spacing, column spacing) = (sy, sx).
    let (sx, sy) = (in_plane[1], in_plane[0]);

    let oriented = slices.iter().all(|s| s.position.is_some() && s.orientation.is_some());
    let (origin, direction, sz) = if oriented {
        let o = slices[0].orientation.expect("checked");
        let row = normalize([o[0], o[1], o[2]]);
        let col = normalize([o[3], o[4], o[5]]);
        let normal = normalize(cross(row, col));
        let key = |s: &Slice| dot(s.position.expect("checked"), normal);
        slices.sort_by(|a, b| {
            key(a)
                .total_cmp(&key(b))
                .then(a.instance.cmp(&b.instance))
                .then_with(|| a.file.cmp(&b.file))
        });
        let proj: Vec<f64> = slices.iter().map(key).collect();
        let mut gaps: Vec<f64> = proj.windows(2).map(|w| w[1] - w[0]).collect();
        let sz = if gaps.is_empty() {
            slices[0].thickness.unwrap_or(1.0)
        } else {
            let (lo, hi) = gaps
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), g| (l.min(*g), h.max(*g)));
            let m = median(&mut gaps);
            if gaps.iter().any(|g| (g - m).abs() > SPACING_TOLERANCE * m.abs()) {
                warnings.push(LoadWarning::IrregularSpacing {
                    median: m,
                    min: lo,
                    max: hi,
                });
            }
            m
        };
        let direction = [
            [row[0], col[0], normal[0]],
            [row[1], col[1], normal[1]],
            [row[2], col[2], normal[2]],
        ];
        (slices[0].position.expect("checked"), direction, sz)
    } else {
        let missing = slices
            .iter()
            .filter(|s| s.position.is_none() || s.orientation.is_none())
            .count();
        warnings.push(LoadWarning::InstanceNumberOrdering { missing });
        slices.sort_by(|a, b| a.instance.cmp(&b.instance).then_with(|| a.file.cmp(&b.file)));
        let sz = slices[0].thickness.unwrap_or(1.0);
        (
            slices[0].position.unwrap_or([0.0; 3]),
            cohortseg_core::geometry::IDENTITY,
            sz,
        )
    };

    let geometry = VolumeGeometry::new([sx, sy, sz], origin, direction).map_err(|source| {
        ImageIoError::Geometry {
            path: dir.to_path_buf(),
            source,
        }
    })?;
    let shape = VolumeShape::new(slices.len(), rows, cols);
    let modality = slices[0].modality.clone();
    let mut voxels = Vec::with_capacity(shape.len());
    for s in slices {
        voxels.extend(s.pixels);
    }
    let mut volume =
        VolumeImage::new(shape, voxels, geometry).map_err(|source| ImageIoError::Volume {
            path: dir.to_path_buf(),
            source,
        })?;
    if let Some(m) = modality {
        volume = volume.with_modality(m);
    }
    Ok(Loaded { volume, warnings })
}
