mod common;

use cohortseg::imageio::{
    export_labelmap, load_dicom_series, load_labelmap, load_nifti, scan_dicom_dir, ImageIoError, LoadWarning,
};
use cohortseg_core::labels::LabelMap;
use cohortseg_core::{geometry_equal, VolumeGeometry, VolumeImage, VolumeShape};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Geometry as it comes back from disk (NIfTI-1 stores it in f32).
fn loaded_geometry(dir: &std::path::Path, shape: VolumeShape, g: VolumeGeometry) -> VolumeGeometry {
    let vol = VolumeImage::new(shape, vec![0.0; shape.len()], g).unwrap();
    load_nifti(&write_nifti_case(dir, "geom", &vol)).unwrap().geometry
}

/// Agreement at single precision.
fn close_f32(a: &VolumeGeometry, b: &VolumeGeometry) -> bool {
    (0..3).all(|i| {
        (a.spacing[i] - b.spacing[i]).abs() <= 1e-6 * a.spacing[i]
            && (a.origin[i] - b.origin[i]).abs() <= 1e-4
            && (0..3).all(|j| (a.direction[i][j] - b.direction[i][j]).abs() <= 1e-6)
    })
}

fn ramp(z: usize, y: usize, x: usize) -> u16 {
    (z * 1000 + y * 30 + x) as u16
}

#[test]
fn dicom_series_spacing_origin_and_order() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SeriesSpec::axial(6, 5, 7, "1.2.3.4");
    write_dicom_series(dir.path(), &spec, &shuffled(7, 3), ramp);
    let loaded = load_dicom_series(dir.path(), None).unwrap();
    let v = &loaded.volume;
    assert!(loaded.warnings.is_empty(), "{:?}", loaded.warnings);
    assert_eq!(v.shape(), VolumeShape::new(7, 6, 5));
    assert_eq!(v.geometry.spacing, [0.8, 0.8, 1.5]);
    assert_eq!(v.geometry.origin, spec.origin);
    for z in 0..7 {
        for y in 0..6 {
            for x in 0..5 {
                assert_eq!(v.get(z, y, x), f32::from(ramp(z, y, x)));
            }
        }
    }
    assert_eq!(v.modality_hint.as_deref(), Some("MR"));
}

#[test]
fn dicom_oblique_direction_and_reverse_positions() {
    let dir = tempfile::tempdir().unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut spec = SeriesSpec::axial(4, 4, 5, "1.2.9");
    spec.row_cos = [s, s, 0.0];
    spec.col_cos = [0.0, 0.0, -1.0];
    spec.step = 2.0;
    write_dicom_series(dir.path(), &spec, &shuffled(5, 11), ramp);
    let v = load_dicom_series(dir.path(), None).unwrap().volume;
    let n = spec.normal();
    let expect = [
        [spec.row_cos[0], spec.col_cos[0], n[0]],
        [spec.row_cos[1], spec.col_cos[1], n[1]],
        [spec.row_cos[2], spec.col_cos[2], n[2]],
    ];
    for r in 0..3 {
        for c in 0..3 {
            assert!((v.geometry.direction[r][c] - expect[r][c]).abs() < 1e-9);
        }
    }
    assert!((v.geometry.spacing[2] - 2.0).abs() < 1e-9);
    // Index (0,0,z) maps onto each slice position.
    for z in 0..5 {
        let p = v.geometry.index_to_physical([0.0, 0.0, z as f64]);
        let q = spec.position(z);
        for i in 0..3 {
            assert!((p[i] - q[i]).abs() < 1e-6);
        }
        assert_eq!(v.get(z, 0, 0), f32::from(ramp(z, 0, 0)));
    }
}

#[test]
fn irregular_gap_warns_with_median_spacing() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SeriesSpec::axial(3, 3, 5, "1.2.5");
    spec.offsets = Some(vec![0.0, 1.5, 3.0, 6.0, 7.5]);
    write_dicom_series(dir.path(), &spec, &[0, 1, 2, 3, 4], ramp);
    let loaded = load_dicom_series(dir.path(), None).unwrap();
    assert_eq!(loaded.volume.geometry.spacing[2], 1.5);
    assert!(loaded
        .warnings
        .iter()
        .any(|w| matches!(w, LoadWarning::IrregularSpacing { .. })));
}

#[test]
fn missing_positions_fall_back_to_instance_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SeriesSpec::axial(3, 3, 4, "1.2.6");
    spec.with_position = false;
    let perm = [2, 0, 3, 1];
    write_dicom_series(dir.path(), &spec, &perm, ramp);
    let loaded = load_dicom_series(dir.path(), None).unwrap();
    assert!(matches!(
        loaded.warnings[0],
        LoadWarning::InstanceNumberOrdering { .. }
    ));
    // Slices come back in instance-number order: perm[z] is the rank of z.
    for (z, rank) in perm.iter().enumerate() {
        assert_eq!(loaded.volume.get(*rank, 0, 0), f32::from(ramp(z, 0, 0)));
    }
}

#[test]
fn several_series_need_a_uid() {
    let dir = tempfile::tempdir().unwrap();
    write_dicom_series(dir.path(), &SeriesSpec::axial(3, 3, 2, "1.2.7"), &[0, 1], ramp);
    let other = dir.path().join("b");
    write_dicom_series(&other, &SeriesSpec::axial(3, 3, 2, "1.2.8"), &[0, 1], ramp);
    for f in std::fs::read_dir(&other).unwrap() {
        let f = f.unwrap().path();
        std::fs::rename(&f, dir.path().join(format!("b_{}", f.file_name().unwrap().to_str().unwrap()))).unwrap();
    }
    let series = scan_dicom_dir(dir.path()).unwrap();
    assert_eq!(series.len(), 2);
    assert!(matches!(
        load_dicom_series(dir.path(), None),
        Err(ImageIoError::MultipleSeries { .. })
    ));
    let v = load_dicom_series(dir.path(), Some("1.2.8")).unwrap();
    assert_eq!(v.volume.shape().depth, 2);
    assert!(matches!(
        load_dicom_series(dir.path(), Some("9.9")),
        Err(ImageIoError::SeriesNotFound { .. })
    ));
}

#[test]
fn mixed_shapes_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_dicom_series(dir.path(), &SeriesSpec::axial(3, 3, 2, "1.3.1"), &[0, 1], ramp);
    let mut big = SeriesSpec::axial(4, 3, 1, "1.3.1");
    big.origin[2] += 10.0;
    let sub = dir.path().join("x");
    write_dicom_series(&sub, &big, &[0], ramp);
    std::fs::rename(sub.join("slice_000.dcm"), dir.path().join("extra.dcm")).unwrap();
    assert!(matches!(
        load_dicom_series(dir.path(), None),
        Err(ImageIoError::MixedShapes { .. })
    ));
}

#[test]
fn empty_dir_has_no_series() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("notes.txt"), "hello").unwrap();
    assert!(matches!(
        load_dicom_series(dir.path(), None),
        Err(ImageIoError::NoSeries { .. })
    ));
}

#[test]
fn export_requires_lock_and_preserves_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shape = VolumeShape::new(3, 4, 5);
    let g = loaded_geometry(dir.path(), shape, random_geometry(&mut rng));
    let voxels: Vec<u16> = (0..shape.len()).map(|i| (i % 3) as u16).collect();
    let lm = LabelMap::from_voxels(shape, voxels.clone()).unwrap();
    let path = dir.path().join("m.nii.gz");
    assert!(matches!(export_labelmap(&lm, &g, &path), Err(ImageIoError::NotLocked)));
    assert!(!path.exists());
    export_labelmap(&lm.lock(), &g, &path).unwrap();
    let (back, g2) = load_labelmap(&path).unwrap();
    assert_eq!(back.voxels(), &voxels[..]);
    assert!(geometry_equal(&g, &g2, 1e-6));
    std::fs::remove_file(dir.path().join("geom.nii.gz")).unwrap();
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 1, "temp files left: {names:?}");
}

#[test]
fn export_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let shape = VolumeShape::new(2, 3, 4);
    let lm = LabelMap::from_voxels(shape, (0..24).map(|i| (i % 2) as u16).collect())
        .unwrap()
        .lock();
    let g = VolumeGeometry::with_spacing([0.5, 0.7, 2.0]);
    let (a, b) = (dir.path().join("a.nii.gz"), dir.path().join("b.nii.gz"));
    export_labelmap(&lm, &g, &a).unwrap();
    export_labelmap(&lm, &g, &b).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn non_nifti_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.nii");
    std::fs::write(&p, b"definitely not nifti").unwrap();
    assert!(load_nifti(&p).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn nifti_volume_round_trip(seed in any::<u64>(), d in 1usize..4, h in 1usize..6, w in 1usize..6) {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_geometry(&mut rng);
        let shape = VolumeShape::new(d, h, w);
        let voxels: Vec<f32> = (0..shape.len()).map(|i| (i as f32) * 1.25 - 3.0).collect();
        let vol = VolumeImage::new(shape, voxels.clone(), g.clone()).unwrap();
        let p = write_nifti_case(dir.path(), "v", &vol);
        let back = load_nifti(&p).unwrap();
        prop_assert_eq!(back.shape(), shape);
        prop_assert_eq!(back.voxels(), &voxels[..]);
        prop_assert!(close_f32(&g, &back.geometry), "{:?} vs {:?}", g, back.geometry);
        // Once on disk, geometry is stable under further round trips.
        let again = load_nifti(&write_nifti_case(dir.path(), "w", &back)).unwrap();
        prop_assert!(geometry_equal(&back.geometry, &again.geometry, 1e-6));
        prop_assert_eq!(again.voxels(), &voxels[..]);
    }
}
