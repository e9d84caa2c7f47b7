//! Synthetic fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cohortseg::imageio::write_volume_nifti;
use cohortseg_core::{VolumeGeometry, VolumeImage, VolumeShape};
use dicom_core::value::PrimitiveValue;
use dicom_core::{DataElement, VR};
use dicom_dictionary_std::tags;
use dicom_object::{FileMetaTableBuilder, InMemDicomObject};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MR_IMAGE_STORAGE: &str = "1.2.840.10008.5.1.4.1.1.4";
pub const EXPLICIT_VR_LE: &str = "1.2.840.10008.1.2.1";

#[derive(Debug, Clone)]
pub struct SeriesSpec {
    pub rows: usize,
    pub cols: usize,
    pub slices: usize,
    /// `(row spacing, column spacing)` as stored in PixelSpacing.
    pub pixel_spacing: [f64; 2],
    /// Distance between consecutive slice positions.
    pub step: f64,
    pub origin: [f64; 3],
    pub row_cos: [f64; 3],
    pub col_cos: [f64; 3],
    pub series_uid: String,
    /// Write ImagePositionPatient / ImageOrientationPatient.
    pub with_position: bool,
    /// Explicit per-slice offsets along the normal; overrides `step`.
    pub offsets: Option<Vec<f64>>,
}

impl SeriesSpec {
    pub fn axial(rows: usize, cols: usize, slices: usize, uid: &str) -> Self {
        Self {
            rows,
            cols,
            slices,
            pixel_spacing: [0.8, 0.8],
            step: 1.5,
            origin: [-100.0, -120.0, 30.0],
            row_cos: [1.0, 0.0, 0.0],
            col_cos: [0.0, 1.0, 0.0],
            series_uid: uid.to_string(),
            with_position: true,
            offsets: None,
        }
    }

    pub fn normal(&self) -> [f64; 3] {
        let (a, b) = (self.row_cos, self.col_cos);
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    pub fn offset(&self, z: usize) -> f64 {
        self.offsets.as_ref().map_or(z as f64 * self.step, |o| o[z])
    }

    pub fn position(&self, z: usize) -> [f64; 3] {
        let n = self.normal();
        let d = self.offset(z);
        [
            self.origin[0] + d * n[0],
            self.origin[1] + d * n[1],
            self.origin[2] + d * n[2],
        ]
    }
}

fn ds(values: &[f64]) -> PrimitiveValue {
    PrimitiveValue::Strs(values.iter().map(|v| format!("{v}")).collect())
}

fn us(v: u16) -> PrimitiveValue {
    PrimitiveValue::U16(vec![v].into())
}

/// Writes one file per slice. Slice `z` goes to `slice_<perm[z]>.dcm` with
/// InstanceNumber `perm[z] + 1`, so neither file names nor instance numbers
/// follow the anatomical order.
pub fn write_dicom_series(
    dir: &Path,
    spec: &SeriesSpec,
    perm: &[usize],
    pixel: impl Fn(usize, usize, usize) -> u16,
) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    assert_eq!(perm.len(), spec.slices);
    let mut files = Vec::new();
    for z in 0..spec.slices {
        let mut pixels = Vec::with_capacity(spec.rows * spec.cols);
        for y in 0..spec.rows {
            for x in 0..spec.cols {
                pixels.push(pixel(z, y, x));
            }
        }
        let sop_uid = format!("{}.{}", spec.series_uid, perm[z] + 1);
        let mut elements = vec![
            DataElement::new(tags::SOP_CLASS_UID, VR::UI, PrimitiveValue::from(MR_IMAGE_STORAGE)),
            DataElement::new(tags::SOP_INSTANCE_UID, VR::UI, PrimitiveValue::from(sop_uid.as_str())),
            DataElement::new(tags::MODALITY, VR::CS, PrimitiveValue::from("MR")),
            DataElement::new(tags::SERIES_INSTANCE_UID, VR::UI, PrimitiveValue::from(spec.series_uid.as_str())),
            DataElement::new(tags::INSTANCE_NUMBER, VR::IS, PrimitiveValue::from(format!("{}", perm[z] + 1))),
            DataElement::new(tags::PIXEL_SPACING, VR::DS, ds(&spec.pixel_spacing)),
            DataElement::new(tags::SLICE_THICKNESS, VR::DS, ds(&[spec.step])),
            DataElement::new(tags::SAMPLES_PER_PIXEL, VR::US, us(1)),
            DataElement::new(tags::PHOTOMETRIC_INTERPRETATION, VR::CS, PrimitiveValue::from("MONOCHROME2")),
            DataElement::new(tags::ROWS, VR::US, us(spec.rows as u16)),
            DataElement::new(tags::COLUMNS, VR::US, us(spec.cols as u16)),
            DataElement::new(tags::BITS_ALLOCATED, VR::US, us(16)),
            DataElement::new(tags::BITS_STORED, VR::US, us(16)),
            DataElement::new(tags::HIGH_BIT, VR::US, us(15)),
            DataElement::new(tags::PIXEL_REPRESENTATION, VR::US, us(0)),
            DataElement::new(tags::PIXEL_DATA, VR::OW, PrimitiveValue::U16(pixels.into())),
        ];
        if spec.with_position {
            let p = spec.position(z);
            let (r, c) = (spec.row_cos, spec.col_cos);
            elements.push(DataElement::new(tags::IMAGE_POSITION_PATIENT, VR::DS, ds(&p)));
            elements.push(DataElement::new(
                tags::IMAGE_ORIENTATION_PATIENT,
                VR::DS,
                ds(&[r[0], r[1], r[2], c[0], c[1], c[2]]),
            ));
        }
        let obj = InMemDicomObject::from_element_iter(elements)
            .with_meta(FileMetaTableBuilder::new().transfer_syntax(EXPLICIT_VR_LE))
            .unwrap();
        let path = dir.join(format!("slice_{:03}.dcm", perm[z]));
        obj.write_to_file(&path).unwrap();
        files.push(path);
    }
    files
}

/// Deterministic permutation of `0..n`.
pub fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

/// Bright disk of `radius` centred at `(cx, cy)` on slices `z0..=z1`, on a
/// darker background, with optional uniform noise of amplitude `noise`.
pub fn cylinder_volume(
    shape: VolumeShape,
    center: [f64; 2],
    radius: f64,
    slices: (usize, usize),
    geometry: VolumeGeometry,
    noise: f32,
    seed: u64,
) -> VolumeImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Vec::with_capacity(shape.len());
    for z in 0..shape.depth {
        for y in 0..shape.height {
            for x in 0..shape.width {
                let inside = (slices.0..=slices.1).contains(&z) && in_disk(x, y, center, radius);
                let base = if inside { 200.0 } else { 50.0 };
                let n = if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
                v.push(base + n);
            }
        }
    }
    VolumeImage::new(shape, v, geometry).unwrap()
}

pub fn in_disk(x: usize, y: usize, center: [f64; 2], radius: f64) -> bool {
    let dx = x as f64 - center[0];
    let dy = y as f64 - center[1];
    dx * dx + dy * dy <= radius * radius
}

/// Pixel count of the rasterised disk.
pub fn disk_area(width: usize, height: usize, center: [f64; 2], radius: f64) -> usize {
    (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .filter(|&(x, y)| in_disk(x, y, center, radius))
        .count()
}

/// Random orthonormal matrix; about half come out improper (det -1).
pub fn random_direction(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let mut cols: Vec<[f64; 3]> = Vec::new();
    while cols.len() < 3 {
        let mut v = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        for c in &cols {
            let d = v[0] * c[0] + v[1] * c[1] + v[2] * c[2];
            for i in 0..3 {
                v[i] -= d * c[i];
            }
        }
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 {
            cols.push([v[0] / n, v[1] / n, v[2] / n]);
        }
    }
    let mut d = [[0.0; 3]; 3];
    for (c, col) in cols.iter().enumerate() {
        for r in 0..3 {
            d[r][c] = col[r];
        }
    }
    d
}

pub fn random_geometry(rng: &mut impl Rng) -> VolumeGeometry {
    let spacing = [
        rng.random_range(0.3..=5.0),
        rng.random_range(0.3..=5.0),
        rng.random_range(0.3..=5.0),
    ];
    let origin = [
        rng.random_range(-500.0..=500.0),
        rng.random_range(-500.0..=500.0),
        rng.random_range(-500.0..=500.0),
    ];
    VolumeGeometry::new(spacing, origin, random_direction(rng)).unwrap()
}

/// Writes `volume` as `<root>/<name>.nii.gz` and returns the path.
pub fn write_nifti_case(root: &Path, name: &str, volume: &VolumeImage) -> PathBuf {
    let path = root.join(format!("{name}.nii.gz"));
    write_volume_nifti(volume, &path).unwrap();
    path
}

/// Standard two-box cylinder case: 12 slices of 48×48, disk radius 10 at
/// (24, 24) on slices 2..=8, boxes on 2 and 8.
pub struct CylinderCase {
    pub volume: VolumeImage,
    pub center: [f64; 2],
    pub radius: f64,
    pub slices: (usize, usize),
}

pub fn cylinder_case(spacing: [f64; 3], noise: f32) -> CylinderCase {
    let shape = VolumeShape::new(12, 48, 48);
    let center = [24.0, 24.0];
    let radius = 10.0;
    let slices = (2, 8);
    let geometry = VolumeGeometry::new(spacing, [-20.0, 15.0, 40.0], identity()).unwrap();
    CylinderCase {
        volume: cylinder_volume(shape, center, radius, slices, geometry, noise, 7),
        center,
        radius,
        slices,
    }
}

pub fn identity() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// Prompt file text: object 1 ("lesion"), one box per listed slice around
/// the cylinder disk with a 3 px margin.
pub fn cylinder_prompts_json(slices: &[i64]) -> String {
    let boxes: Vec<String> = slices
        .iter()
        .map(|s| format!(r#"{{"id": 1, "slice": {s}, "min": [11, 11], "max": [38, 38]}}"#))
        .collect();
    format!(
        r#"{{"objects": [{{"id": 1, "name": "lesion", "color": [255, 0, 0]}}], "boxes": [{}], "points": []}}"#,
        boxes.join(", ")
    )
}

/// Runs the CLI in-process and returns `(exit code, stdout, stderr)`.
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("cohortseg").chain(args.iter().copied());
    let code = cohortseg::cli::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

/// `n` tiny NIfTI cases `case_00.nii.gz`, `case_01.nii.gz`, ... under `root`.
pub fn tiny_nifti_cohort(root: &Path, n: usize) {
    let shape = VolumeShape::new(1, 2, 2);
    for i in 0..n {
        let v = VolumeImage::new(shape, vec![i as f32; 4], VolumeGeometry::with_spacing([1.0; 3])).unwrap();
        write_nifti_case(root, &format!("case_{i:02}"), &v);
    }
}
