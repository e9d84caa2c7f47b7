//! Multi-object label maps: merging per-object masks, brush edits, lock.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::engine::ObjectMaskVolume;
use crate::volume::VolumeShape;
use crate::ObjectId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("mask of object {object_id} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        object_id: ObjectId,
        expected: VolumeShape,
        got: VolumeShape,
    },
    #[error("object {0} missing from precedence order")]
    MissingPrecedence(ObjectId),
    #[error("object {0} appears more than once")]
    DuplicateObject(ObjectId),
    #[error("label locked")]
    Locked,
    #[error("slice {slice} outside volume of depth {depth}")]
    SliceOutOfRange { slice: usize, depth: usize },
    #[error("brush centre {center:?} outside slice of {width}x{height}")]
    CenterOutOfBounds {
        center: [i64; 2],
        width: usize,
        height: usize,
    },
    #[error("brush radius must be at least 1")]
    Radius,
    #[error("object id 0 is background")]
    Background,
    #[error("voxel count {got} does not match shape {shape:?}")]
    Voxels { got: usize, shape: VolumeShape },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditKind {
    Paint,
    Erase,
}

/// A disk brush stroke on one slice. `center` is `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditOp {
    pub kind: EditKind,
    pub object_id: ObjectId,
    pub slice: usize,
    pub center: [i64; 2],
    pub radius: u32,
}

/// Voxel labels in `(z, y, x)` order; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    shape: VolumeShape,
    voxels: Vec<u16>,
    locked: bool,
    counts: BTreeMap<u16, usize>,
}

impl LabelMap {
    pub fn empty(shape: VolumeShape) -> Self {
        Self {
            shape,
            voxels: vec![0; shape.len()],
            locked: false,
            counts: BTreeMap::new(),
        }
    }

    pub fn from_voxels(shape: VolumeShape, voxels: Vec<u16>) -> Result<Self, LabelError> {
        if voxels.len() != shape.len() {
            return Err(LabelError::Voxels {
                got: voxels.len(),
                shape,
            });
        }
        let mut map = Self {
            shape,
            voxels,
            locked: false,
            counts: BTreeMap::new(),
        };
        map.recount();
        Ok(map)
    }

    fn recount(&mut self) {
        self.counts.clear();
        for &v in &self.voxels {
            if v != 0 {
                *self.counts.entry(v).or_default() += 1;
            }
        }
    }

    pub fn shape(&self) -> VolumeShape {
        self.shape
    }

    pub fn voxels(&self) -> &[u16] {
        &self.voxels
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> u16 {
        self.voxels[self.shape.index(z, y, x)]
    }

    pub fn is_locked(&self) -> bool {
        self.locked
    }

    /// Non-zero labels with their voxel counts, ascending by label.
    pub fn counts(&self) -> &BTreeMap<u16, usize> {
        &self.counts
    }

    pub fn count(&self, id: u16) -> usize {
        self.counts.get(&id).copied().unwrap_or(0)
    }

    /// Labels present in the map, ascending.
    pub fn labels(&self) -> Vec<u16> {
        self.counts.keys().copied().collect()
    }

    /// Freezes the map. Locking twice is a no-op.
    pub fn lock(&self) -> Self {
        let mut next = self.clone();
        next.locked = true;
        next
    }

    /// Applies one brush stroke, returning the edited map. Painting assigns
    /// the object to every voxel in the disk; erasing clears only voxels of
    /// that object.
    pub fn apply_edit(&self, op: &EditOp) -> Result<Self, LabelError> {
        if self.locked {
            return Err(LabelError::Locked);
        }
        if op.object_id == 0 {
            return Err(LabelError::Background);
        }
        if op.radius == 0 {
            return Err(LabelError::Radius);
        }
        if op.slice >= self.shape.depth {
            return Err(LabelError::SliceOutOfRange {
                slice: op.slice,
                depth: self.shape.depth,
            });
        }
        let (w, h) = (self.shape.width as i64, self.shape.height as i64);
        let [cx, cy] = op.center;
        if cx < 0 || cy < 0 || cx >= w || cy >= h {
            return Err(LabelError::CenterOutOfBounds {
                center: op.center,
                width: self.shape.width,
                height: self.shape.height,
            });
        }
        let mut next = self.clone();
        let r = op.radius as i64;
        for y in (cy - r).max(0)..(cy + r + 1).min(h) {
            for x in (cx - r).max(0)..(cx + r + 1).min(w) {
                let (dx, dy) = (x - cx, y - cy);
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let i = self.shape.index(op.slice, y as usize, x as usize);
                let v = &mut next.voxels[i];
                match op.kind {
                    EditKind::Paint => *v = op.object_id,
                    EditKind::Erase if *v == op.object_id => *v = 0,
                    EditKind::Erase => {}
                }
            }
        }
        next.recount();
        Ok(next)
    }
}

/// Merges per-object masks into one label map. Where masks overlap, the
/// object appearing later in `precedence` wins.
pub fn merge_objects(
    shape: VolumeShape,
    masks: &[ObjectMaskVolume],
    precedence: &[ObjectId],
) -> Result<LabelMap, LabelError> {
    for (i, m) in masks.iter().enumerate() {
        if m.shape() != shape {
            return Err(LabelError::ShapeMismatch {
                object_id: m.object_id,
                expected: shape,
                got: m.shape(),
            });
        }
        if m.object_id == 0 {
            return Err(LabelError::Background);
        }
        if masks[..i].iter().any(|o| o.object_id == m.object_id) {
            return Err(LabelError::DuplicateObject(m.object_id));
        }
        if !precedence.contains(&m.object_id) {
            return Err(LabelError::MissingPrecedence(m.object_id));
        }
    }
    let mut map = LabelMap::empty(shape);
    let n = shape.slice_len();
    for id in precedence {
        let Some(m) = masks.iter().find(|m| m.object_id == *id) else {
            continue;
        };
        for sm in m.masks() {
            let base = sm.slice_index * n;
            for (i, &b) in sm.mask.bits().iter().enumerate() {
                if b {
                    map.voxels[base + i] = *id;
                }
            }
        }
    }
    map.recount();
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SHAPE: VolumeShape = VolumeShape::new(3, 10, 12);

    fn cube(id: ObjectId, z: core::ops::Range<usize>, y: core::ops::Range<usize>, x: core::ops::Range<usize>) -> ObjectMaskVolume {
        let mut dense = vec![false; SHAPE.len()];
        for zz in z {
            for yy in y.clone() {
                for xx in x.clone() {
                    dense[SHAPE.index(zz, yy, xx)] = true;
                }
            }
        }
        ObjectMaskVolume::from_dense(id, SHAPE, &dense).unwrap()
    }

    #[test]
    fn later_precedence_wins_overlap() {
        let a = cube(1, 0..2, 0..5, 0..5);
        let b = cube(2, 1..3, 3..8, 3..8);
        let m = merge_objects(SHAPE, &[a.clone(), b.clone()], &[1, 2]).unwrap();
        assert_eq!(m.get(1, 4, 4), 2);
        let m2 = merge_objects(SHAPE, &[a, b], &[2, 1]).unwrap();
        assert_eq!(m2.get(1, 4, 4), 1);
        assert_eq!(m.count(1) + m.count(2), m2.count(1) + m2.count(2));
    }

    #[test]
    fn missing_precedence_rejected() {
        let a = cube(1, 0..1, 0..2, 0..2);
        assert_eq!(
            merge_objects(SHAPE, &[a], &[2]),
            Err(LabelError::MissingPrecedence(1))
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let other = ObjectMaskVolume::empty(4, VolumeShape::new(2, 2, 2));
        assert!(matches!(
            merge_objects(SHAPE, &[other], &[4]),
            Err(LabelError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn paint_disk_matches_euclidean_oracle() {
        let m = LabelMap::empty(SHAPE);
        let op = EditOp {
            kind: EditKind::Paint,
            object_id: 3,
            slice: 1,
            center: [5, 4],
            radius: 3,
        };
        let out = m.apply_edit(&op).unwrap();
        let mut expect = 0;
        for y in 0..10i64 {
            for x in 0..12i64 {
                let inside = (x - 5).pow(2) + (y - 4).pow(2) <= 9;
                expect += inside as usize;
                assert_eq!(out.get(1, y as usize, x as usize) == 3, inside);
            }
        }
        assert_eq!(out.count(3), expect);
        assert_eq!(out.get(0, 4, 5), 0);
    }

    #[test]
    fn unit_brush_is_five_voxel_cross() {
        let op = EditOp {
            kind: EditKind::Paint,
            object_id: 1,
            slice: 0,
            center: [4, 4],
            radius: 1,
        };
        let out = LabelMap::empty(SHAPE).apply_edit(&op).unwrap();
        assert_eq!(out.count(1), 5);
        assert_eq!(out.get(0, 3, 3), 0);
        let off = EditOp { center: [12, 0], ..op };
        assert!(matches!(
            LabelMap::empty(SHAPE).apply_edit(&off),
            Err(LabelError::CenterOutOfBounds { .. })
        ));
    }

    #[test]
    fn erase_touches_only_own_object() {
        let a = cube(1, 0..1, 0..10, 0..6);
        let b = cube(2, 0..1, 0..10, 6..12);
        let m = merge_objects(SHAPE, &[a, b], &[1, 2]).unwrap();
        let op = EditOp {
            kind: EditKind::Erase,
            object_id: 1,
            slice: 0,
            center: [6, 5],
            radius: 4,
        };
        let out = m.apply_edit(&op).unwrap();
        assert_eq!(out.count(2), m.count(2));
        assert!(out.count(1) < m.count(1));
    }

    #[test]
    fn locked_map_rejects_edits() {
        let m = LabelMap::empty(SHAPE).lock().lock();
        assert!(m.is_locked());
        let op = EditOp {
            kind: EditKind::Paint,
            object_id: 1,
            slice: 0,
            center: [1, 1],
            radius: 1,
        };
        let err = m.apply_edit(&op).unwrap_err();
        assert_eq!(err.to_string(), "label locked");
    }

    proptest! {
        #[test]
        fn merge_covers_union(
            a in (0usize..3, 0usize..10, 0usize..12, 1usize..4),
            b in (0usize..3, 0usize..10, 0usize..12, 1usize..4),
        ) {
            let ma = cube(1, a.0..(a.0 + 1), a.1..(a.1 + a.3).min(10), a.2..(a.2 + a.3).min(12));
            let mb = cube(2, b.0..(b.0 + 1), b.1..(b.1 + b.3).min(10), b.2..(b.2 + b.3).min(12));
            let m = merge_objects(SHAPE, &[ma.clone(), mb.clone()], &[1, 2]).unwrap();
            for z in 0..3 { for y in 0..10 { for x in 0..12 {
                let expect = if mb.is_set(z, y, x) { 2 } else if ma.is_set(z, y, x) { 1 } else { 0 };
                prop_assert_eq!(m.get(z, y, x), expect);
            }}}
        }

        #[test]
        fn paint_then_erase_restores_background(cx in 0i64..12, cy in 0i64..10, r in 1u32..5) {
            let m = LabelMap::empty(SHAPE);
            let paint = EditOp { kind: EditKind::Paint, object_id: 5, slice: 2, center: [cx, cy], radius: r };
            let erase = EditOp { kind: EditKind::Erase, ..paint };
            let out = m.apply_edit(&paint).unwrap().apply_edit(&erase).unwrap();
            prop_assert_eq!(out, m);
        }
    }
}
