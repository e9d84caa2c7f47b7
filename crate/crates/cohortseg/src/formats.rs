//! JSON documents exchanged with the viewer and with scripts: prompt files,
//! edit scripts and volumetry reports.

use std::fs;
use std::path::{Path, PathBuf};

use cohortseg_core::labels::{EditKind, EditOp};
use cohortseg_core::prompts::{BoxPrompt, ObjectSpec, PointPrompt, Polarity, PromptSet};
use cohortseg_core::quant::{ObjectStats, VolumetryReport};
use cohortseg_core::{ObjectId, VolumeGeometry};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    fsutil::write_atomic(path, &bytes).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---- prompts ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDoc {
    pub id: ObjectId,
    pub name: String,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDoc {
    pub id: ObjectId,
    pub slice: i64,
    pub min: [i64; 2],
    pub max: [i64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityDoc {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointDoc {
    pub id: ObjectId,
    pub slice: i64,
    pub pos: [i64; 2],
    pub polarity: PolarityDoc,
}

/// `<case_id>_prompts.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptsDoc {
    pub objects: Vec<ObjectDoc>,
    #[serde(default)]
    pub boxes: Vec<BoxDoc>,
    #[serde(default)]
    pub points: Vec<PointDoc>,
}

impl PromptsDoc {
    /// The prompt set as written; invariants are checked later by
    /// validation against the volume.
    pub fn to_prompt_set(&self) -> PromptSet {
        PromptSet::from_parts(
            self.objects
                .iter()
                .map(|o| ObjectSpec::new(o.id, o.name.clone(), o.color))
                .collect(),
            self.boxes
                .iter()
                .map(|b| BoxPrompt {
                    object_id: b.id,
                    slice: b.slice,
                    min: b.min,
                    max: b.max,
                })
                .collect(),
            self.points
                .iter()
                .map(|p| PointPrompt {
                    object_id: p.id,
                    slice: p.slice,
                    pos: p.pos,
                    polarity: match p.polarity {
                        PolarityDoc::Positive => Polarity::Positive,
                        PolarityDoc::Negative => Polarity::Negative,
                    },
                })
                .collect(),
        )
    }

    pub fn from_prompt_set(ps: &PromptSet) -> Self {
        Self {
            objects: ps
                .objects()
                .iter()
                .map(|o| ObjectDoc {
                    id: o.id,
                    name: o.name.clone(),
                    color: o.color,
                })
                .collect(),
            boxes: ps
                .boxes()
                .iter()
                .map(|b| BoxDoc {
                    id: b.object_id,
                    slice: b.slice,
                    min: b.min,
                    max: b.max,
                })
                .collect(),
            points: ps
                .points()
                .iter()
                .map(|p| PointDoc {
                    id: p.object_id,
                    slice: p.slice,
                    pos: p.pos,
                    polarity: match p.polarity {
                        Polarity::Positive => PolarityDoc::Positive,
                        Polarity::Negative => PolarityDoc::Negative,
                    },
                })
                .collect(),
        }
    }
}

pub fn read_prompts(path: &Path) -> Result<PromptSet, FormatError> {
    Ok(read_json::<PromptsDoc>(path)?.to_prompt_set())
}

pub fn write_prompts(path: &Path, ps: &PromptSet) -> Result<(), FormatError> {
    write_json(path, &PromptsDoc::from_prompt_set(ps))
}

// ---- edits ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKindDoc {
    Paint,
    Erase,
}

/// One brush stroke in an edit script (a JSON array of these).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditDoc {
    pub kind: EditKindDoc,
    pub id: ObjectId,
    pub slice: usize,
    pub center: [i64; 2],
    pub radius: u32,
}

impl From<&EditDoc> for EditOp {
    fn from(d: &EditDoc) -> Self {
        EditOp {
            kind: match d.kind {
                EditKindDoc::Paint => EditKind::Paint,
                EditKindDoc::Erase => EditKind::Erase,
            },
            object_id: d.id,
            slice: d.slice,
            center: d.center,
            radius: d.radius,
        }
    }
}

impl From<&EditOp> for EditDoc {
    fn from(op: &EditOp) -> Self {
        EditDoc {
            kind: match op.kind {
                EditKind::Paint => EditKindDoc::Paint,
                EditKind::Erase => EditKindDoc::Erase,
            },
            id: op.object_id,
            slice: op.slice,
            center: op.center,
            radius: op.radius,
        }
    }
}

pub fn read_edits(path: &Path) -> Result<Vec<EditOp>, FormatError> {
    Ok(read_json::<Vec<EditDoc>>(path)?.iter().map(EditOp::from).collect())
}

pub fn write_edits(path: &Path, edits: &[EditOp]) -> Result<(), FormatError> {
    let docs: Vec<EditDoc> = edits.iter().map(EditDoc::from).collect();
    write_json(path, &docs)
}

// ---- volumetry report ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectStatsDoc {
    pub id: u16,
    pub name: String,
    pub voxels: usize,
    pub mm3: f64,
    pub ml: f64,
    /// `[[x0, y0, z0], [x1, y1, z1]]`, inclusive.
    pub bbox: [[usize; 3]; 2],
    pub slices: [usize; 2],
}

/// `<case_id>_volumetry.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDoc {
    pub case_id: String,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    /// Row-major.
    pub direction: [f64; 9],
    pub objects: Vec<ObjectStatsDoc>,
    pub created_at: String,
    pub version: String,
}

impl From<&VolumetryReport> for ReportDoc {
    fn from(r: &VolumetryReport) -> Self {
        ReportDoc {
            case_id: r.case_id.clone(),
            spacing: r.geometry.spacing,
            origin: r.geometry.origin,
            direction: r.geometry.direction_row_major(),
            objects: r
                .objects
                .iter()
                .map(|o| ObjectStatsDoc {
                    id: o.object_id,
                    name: o.name.clone(),
                    voxels: o.voxel_count,
                    mm3: o.volume_mm3,
                    ml: o.volume_ml,
                    bbox: [o.bbox_index.0, o.bbox_index.1],
                    slices: [o.slice_extent.0, o.slice_extent.1],
                })
                .collect(),
            created_at: r.created_at.clone(),
            version: r.tool_version.clone(),
        }
    }
}

impl From<&ReportDoc> for VolumetryReport {
    fn from(d: &ReportDoc) -> Self {
        VolumetryReport {
            case_id: d.case_id.clone(),
            geometry: VolumeGeometry::from_row_major(d.spacing, d.origin, d.direction),
            objects: d
                .objects
                .iter()
                .map(|o| ObjectStats {
                    object_id: o.id,
                    name: o.name.clone(),
                    voxel_count: o.voxels,
                    volume_mm3: o.mm3,
                    volume_ml: o.ml,
                    bbox_index: (o.bbox[0], o.bbox[1]),
                    slice_extent: (o.slices[0], o.slices[1]),
                })
                .collect(),
            created_at: d.created_at.clone(),
            tool_version: d.version.clone(),
        }
    }
}

/// Writes the report atomically. Numbers use the shortest representation
/// that round-trips, so no precision is lost.
pub fn write_report(report: &VolumetryReport, path: &Path) -> Result<(), FormatError> {
    write_json(path, &ReportDoc::from(report))
}

pub fn read_report(path: &Path) -> Result<VolumetryReport, FormatError> {
    Ok(VolumetryReport::from(&read_json::<ReportDoc>(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cohortseg_core::quant::{compute_volumetry, ReportMeta};
    use cohortseg_core::labels::LabelMap;
    use cohortseg_core::VolumeShape;
    use std::collections::BTreeMap;

    #[test]
    fn prompts_round_trip() {
        let shape = VolumeShape::new(10, 32, 32);
        let ps = PromptSet::new()
            .add_object(ObjectSpec::new(1, "tumor", [255, 0, 0]))
            .unwrap()
            .add_box(shape, 1, 2, [3, 4], [10, 12])
            .unwrap()
            .add_point(shape, 1, 2, [5, 6], Polarity::Negative)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c_prompts.json");
        write_prompts(&p, &ps).unwrap();
        assert_eq!(read_prompts(&p).unwrap(), ps);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"polarity\": \"negative\""));
        assert!(text.contains("\"min\""));
    }

    #[test]
    fn unknown_prompt_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        fs::write(&p, r#"{"objects": [], "boxes": [{"id":1,"slice":0,"min":[0,0],"max":[1,1],"z":3}]}"#).unwrap();
        assert!(matches!(read_prompts(&p), Err(FormatError::Json { .. })));
    }

    fn report(n_objects: u16) -> VolumetryReport {
        let shape = VolumeShape::new(4, 5, 6);
        let mut voxels = vec![0u16; shape.len()];
        for id in 1..=n_objects {
            voxels[shape.index(id as usize, 1, 2)] = id;
            voxels[shape.index(id as usize, 3, 4)] = id;
        }
        let labels = LabelMap::from_voxels(shape, voxels).unwrap();
        let mut g = VolumeGeometry::with_spacing([0.3, 0.7, 1.1]);
        g.origin = [-12.25, 3.0e-7, 499.999];
        let meta = ReportMeta {
            case_id: "c1".into(),
            created_at: "2026-01-01T00:00:00Z".into(),
            tool_version: "0.1.0".into(),
        };
        let mut names = BTreeMap::new();
        names.insert(1, "liver".to_string());
        compute_volumetry(&labels, shape, &g, meta, &names).unwrap()
    }

    #[test]
    fn report_round_trip_is_exact() {
        let r = report(2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c1_volumetry.json");
        write_report(&r, &p).unwrap();
        assert_eq!(read_report(&p).unwrap(), r);
        let v: serde_json::Value = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
        let objs = v["objects"].as_array().unwrap();
        assert_eq!(objs.len(), 2);
        assert_eq!(objs[0]["id"], 1);
        assert_eq!(objs[1]["id"], 2);
        assert_eq!(v["direction"].as_array().unwrap().len(), 9);
    }

    #[test]
    fn report_to_unwritable_dir_names_path() {
        let r = report(1);
        let p = Path::new("/nonexistent-dir-for-test/x.json");
        let err = write_report(&r, p).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir-for-test/x.json"));
    }

    #[test]
    fn edits_round_trip() {
        let ops = vec![
            EditOp {
                kind: EditKind::Paint,
                object_id: 2,
                slice: 3,
                center: [4, 5],
                radius: 2,
            },
            EditOp {
                kind: EditKind::Erase,
                object_id: 1,
                slice: 0,
                center: [0, 0],
                radius: 1,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("edits.json");
        write_edits(&p, &ops).unwrap();
        assert_eq!(read_edits(&p).unwrap(), ops);
    }
}
