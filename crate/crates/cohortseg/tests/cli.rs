mod common;

use std::fs;
use std::path::Path;

use cohortseg::cohort::{resume_session, CaseStatus, SESSION_FILE};
use cohortseg::formats::read_report;
use cohortseg::imageio::load_labelmap;
use common::*;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Root with the cylinder case `cyl` plus two tiny NIfTI cases.
fn cylinder_root() -> (tempfile::TempDir, CylinderCase) {
    let dir = tempfile::tempdir().unwrap();
    let case = cylinder_case([0.7, 0.7, 1.5], 8.0);
    write_nifti_case(dir.path(), "cyl", &case.volume);
    tiny_nifti_cohort(dir.path(), 2);
    (dir, case)
}

fn prompts_file(dir: &Path, slices: &[i64]) -> std::path::PathBuf {
    let p = dir.join("prompts_in.json");
    fs::write(&p, cylinder_prompts_json(slices)).unwrap();
    p
}

#[test]
fn discover_table_and_idempotence() {
    let dir = tempfile::tempdir().unwrap();
    tiny_nifti_cohort(dir.path(), 2);
    write_dicom_series(&dir.path().join("scan"), &SeriesSpec::axial(4, 4, 3, "1.9"), &[2, 0, 1], |z, _, _| z as u16);
    let (code, out, _) = run_cli(&["discover", "--root", s(dir.path())]);
    assert_eq!(code, 0);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{out}");
    assert!(rows[2].starts_with("scan") && rows[2].contains("dicom_series") && rows[2].ends_with("pending"));
    let session = fs::read(dir.path().join(SESSION_FILE)).unwrap();
    let (code, again, _) = run_cli(&["discover", "--root", s(dir.path())]);
    assert_eq!(code, 0);
    assert_eq!(again, out);
    assert_eq!(fs::read(dir.path().join(SESSION_FILE)).unwrap(), session);
}

#[test]
fn discover_missing_root() {
    let (code, out, err) = run_cli(&["discover", "--root", "/no/such/cohort"]);
    assert_eq!(code, 2);
    assert!(out.is_empty());
    assert!(err.contains("/no/such/cohort"), "{err}");
}

#[test]
fn annotate_cylinder_end_to_end() {
    let (dir, case) = cylinder_root();
    let root = dir.path();
    assert_eq!(run_cli(&["discover", "--root", s(root)]).0, 0);
    let prompts = prompts_file(root, &[2, 8]);
    let (code, out, err) = run_cli(&["annotate", "cyl", "--root", s(root), "--prompts", s(&prompts)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("lesion"));

    let out_dir = root.join("derived").join("cyl");
    let report = read_report(&out_dir.join("cyl_volumetry.json")).unwrap();
    let (labels, geometry) = load_labelmap(&out_dir.join("cyl_mask.nii.gz")).unwrap();
    assert!(out_dir.join("cyl_prompts.json").is_file());
    assert_eq!(report.objects.len(), 1);
    let o = &report.objects[0];
    assert_eq!(o.voxel_count, labels.count(1));
    assert_eq!(o.slice_extent, (2, 8));
    let analytic = 7.0 * disk_area(48, 48, case.center, case.radius) as f64 * 0.7 * 0.7 * 1.5;
    assert!((o.volume_mm3 - analytic).abs() <= 0.1 * analytic, "{} vs {analytic}", o.volume_mm3);
    assert!(cohortseg_core::geometry_equal(&geometry, &report.geometry, 1e-6));

    let session = resume_session(&root.join(SESSION_FILE)).unwrap();
    assert_eq!(session.case("cyl").unwrap().status, CaseStatus::Annotated);
    drop(session);

    // Not pending any more.
    let (code, _, err) = run_cli(&["annotate", "cyl", "--root", s(root), "--prompts", s(&prompts)]);
    assert_eq!(code, 3, "{err}");

    let (code, out, _) = run_cli(&["report", "--root", s(root)]);
    assert_eq!(code, 0);
    assert!(out.contains("1 annotated"), "{out}");
    let (code, out, err) = run_cli(&["report", "cyl", "--root", s(root)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("lesion"));
    assert_eq!(read_report(&out_dir.join("cyl_volumetry.json")).unwrap().objects, report.objects);
}

#[test]
fn annotate_out_of_bounds_box_lists_violation() {
    let (dir, _) = cylinder_root();
    let root = dir.path();
    run_cli(&["discover", "--root", s(root)]);
    let p = root.join("bad.json");
    fs::write(
        &p,
        r#"{"objects":[{"id":1,"name":"a","color":[1,2,3]}],"boxes":[{"id":1,"slice":3,"min":[40,40],"max":[60,60]}],"points":[]}"#,
    )
    .unwrap();
    let (code, _, err) = run_cli(&["annotate", "cyl", "--root", s(root), "--prompts", s(&p)]);
    assert_eq!(code, 3);
    assert!(err.contains("violation"), "{err}");
    assert!(!root.join("derived").join("cyl").join("cyl_mask.nii.gz").exists());
    let session = resume_session(&root.join(SESSION_FILE)).unwrap();
    assert_eq!(session.case("cyl").unwrap().status, CaseStatus::Pending);
}

#[test]
fn backend_failures_exit_4() {
    let (dir, _) = cylinder_root();
    let root = dir.path();
    run_cli(&["discover", "--root", s(root)]);
    let prompts = prompts_file(root, &[2, 8]);
    for backend in ["medsam2", "no-such-backend"] {
        let (code, _, err) = run_cli(&[
            "annotate", "cyl", "--root", s(root), "--prompts", s(&prompts), "--backend", backend,
        ]);
        assert_eq!(code, 4, "{backend}: {err}");
        assert!(err.contains(backend), "{err}");
    }
}

#[test]
fn input_errors_exit_2() {
    let (dir, _) = cylinder_root();
    let root = dir.path();
    let prompts = prompts_file(root, &[2, 8]);
    // No session yet.
    let (code, _, err) = run_cli(&["annotate", "cyl", "--root", s(root), "--prompts", s(&prompts)]);
    assert_eq!(code, 2);
    assert!(err.contains("discover"), "{err}");
    run_cli(&["discover", "--root", s(root)]);
    let missing = root.join("nope.json");
    assert_eq!(run_cli(&["annotate", "cyl", "--root", s(root), "--prompts", s(&missing)]).0, 2);
    let cfg = root.join("c.toml");
    fs::write(&cfg, "[engine]\nbakend = 1\n").unwrap();
    assert_eq!(run_cli(&["discover", "--root", s(root), "--config", s(&cfg)]).0, 2);
    assert_eq!(run_cli(&["frobnicate"]).0, 2);
    let (code, out, _) = run_cli(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("annotate"));
}

#[test]
fn skip_and_unskip_rules() {
    let dir = tempfile::tempdir().unwrap();
    tiny_nifti_cohort(dir.path(), 2);
    let root = s(dir.path());
    run_cli(&["discover", "--root", root]);
    let (code, out, _) = run_cli(&["skip", "case_00", "--root", root]);
    assert_eq!((code, out.trim()), (0, "case_00: skipped"));
    assert_eq!(run_cli(&["skip", "case_00", "--root", root]).0, 3);
    assert_eq!(run_cli(&["skip", "nobody", "--root", root]).0, 3);
    assert_eq!(run_cli(&["unskip", "case_01", "--root", root]).0, 3);
    assert_eq!(run_cli(&["unskip", "case_00", "--root", root]).0, 0);
    let (_, out, _) = run_cli(&["report", "--root", root]);
    assert!(out.contains("2 pending") && out.contains("next: case_00"), "{out}");
}

#[test]
fn edits_and_n4_flags() {
    let (dir, _) = cylinder_root();
    let root = dir.path();
    run_cli(&["discover", "--root", s(root)]);
    let prompts = prompts_file(root, &[2, 8]);
    let edits = root.join("edits.json");
    fs::write(&edits, r#"[{"kind":"erase","id":1,"slice":5,"center":[24,24],"radius":3}]"#).unwrap();
    let out_dir = root.join("out");
    let (code, _, err) = run_cli(&[
        "annotate", "cyl", "--root", s(root), "--prompts", s(&prompts), "--edits", s(&edits),
        "--out-dir", s(&out_dir), "--n4", "--n4-levels", "1", "--n4-iters", "5",
    ]);
    assert_eq!(code, 0, "{err}");
    let (labels, _) = load_labelmap(&out_dir.join("cyl_mask.nii.gz")).unwrap();
    for y in 21..=27 {
        for x in 21..=27 {
            let d2 = (x as i64 - 24).pow(2) + (y as i64 - 24).pow(2);
            if d2 <= 9 {
                assert_eq!(labels.get(5, y, x), 0);
            }
        }
    }
    assert_eq!(labels.get(4, 24, 24), 1);
    assert!(!root.join("derived").exists());
}
