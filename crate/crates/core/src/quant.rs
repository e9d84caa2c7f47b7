//! Per-object volumetry of a label map.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::geometry::VolumeGeometry;
use crate::labels::LabelMap;
use crate::volume::VolumeShape;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuantError {
    #[error("label map shape {labels:?} does not match image shape {image:?}")]
    ShapeMismatch {
        labels: VolumeShape,
        image: VolumeShape,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectStats {
    pub object_id: u16,
    pub name: String,
    pub voxel_count: usize,
    pub volume_mm3: f64,
    pub volume_ml: f64,
    /// Inclusive index bounds `((x0, y0, z0), (x1, y1, z1))`.
    pub bbox_index: ([usize; 3], [usize; 3]),
    /// First and last slice holding at least one voxel.
    pub slice_extent: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumetryReport {
    pub case_id: String,
    pub geometry: VolumeGeometry,
    pub objects: Vec<ObjectStats>,
    pub created_at: String,
    pub tool_version: String,
}

impl VolumetryReport {
    pub fn object(&self, id: u16) -> Option<&ObjectStats> {
        self.objects.iter().find(|o| o.object_id == id)
    }

    pub fn total_voxels(&self) -> usize {
        self.objects.iter().map(|o| o.voxel_count).sum()
    }
}

/// Provenance fields copied into the report unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportMeta {
    pub case_id: String,
    pub created_at: String,
    pub tool_version: String,
}

/// Counts, physical volumes and extents for every label present in `labels`,
/// ascending by id. `names` supplies display names; unnamed labels get
/// `object_<id>`.
pub fn compute_volumetry(
    labels: &LabelMap,
    image_shape: VolumeShape,
    geometry: &VolumeGeometry,
    meta: ReportMeta,
    names: &BTreeMap<u16, String>,
) -> Result<VolumetryReport, QuantError> {
    let shape = labels.shape();
    if shape != image_shape {
        return Err(QuantError::ShapeMismatch {
            labels: shape,
            image: image_shape,
        });
    }
    // (count, min xyz, max xyz)
    let mut acc: BTreeMap<u16, (usize, [usize; 3], [usize; 3])> = BTreeMap::new();
    let voxels = labels.voxels();
    for z in 0..shape.depth {
        for y in 0..shape.height {
            let row = shape.index(z, y, 0);
            for x in 0..shape.width {
                let v = voxels[row + x];
                if v == 0 {
                    continue;
                }
                let e = acc.entry(v).or_insert((0, [x, y, z], [x, y, z]));
                e.0 += 1;
                for (a, c) in [x, y, z].into_iter().enumerate() {
                    e.1[a] = e.1[a].min(c);
                    e.2[a] = e.2[a].max(c);
                }
            }
        }
    }
    let voxel_mm3 = geometry.voxel_volume_mm3();
    let objects = acc
        .into_iter()
        .map(|(id, (count, lo, hi))| {
            let mm3 = count as f64 * voxel_mm3;
            ObjectStats {
                object_id: id,
                name: names
                    .get(&id)
                    .cloned()
                    .unwrap_or_else(|| alloc::format!("object_{id}")),
                voxel_count: count,
                volume_mm3: mm3,
                volume_ml: mm3 / 1000.0,
                bbox_index: (lo, hi),
                slice_extent: (lo[2], hi[2]),
            }
        })
        .collect();
    Ok(VolumetryReport {
        case_id: meta.case_id,
        geometry: *geometry,
        objects,
        created_at: meta.created_at,
        tool_version: meta.tool_version,
    })
}
