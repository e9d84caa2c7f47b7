//! Box and point prompts per object and slice.
//!
//! Coordinates are integer pixel indices in the slice plane: `x` is the
//! column, `y` the row. Box corners are `min` inclusive, `max` exclusive.
//! Indices are signed so that malformed prompt files can be represented and
//! reported by [`PromptSet::validate`] instead of failing to parse.
//!
//! All mutating operations return a new set and leave the receiver untouched,
//! which is what the undo stack in an interactive editor relies on.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::volume::VolumeShape;
use crate::ObjectId;

/// Largest object id a label map can be exported with.
pub const MAX_OBJECT_ID: ObjectId = 255;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectSpec {
    pub id: ObjectId,
    pub name: String,
    pub color: [u8; 3],
}

impl ObjectSpec {
    pub fn new(id: ObjectId, name: impl Into<String>, color: [u8; 3]) -> Self {
        Self {
            id,
            name: name.into(),
            color,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoxPrompt {
    pub object_id: ObjectId,
    pub slice: i64,
    pub min: [i64; 2],
    pub max: [i64; 2],
}

impl BoxPrompt {
    pub fn contains(&self, pos: [i64; 2]) -> bool {
        (0..2).all(|a| pos[a] >= self.min[a] && pos[a] < self.max[a])
    }

    fn is_degenerate(&self) -> bool {
        self.min[0] >= self.max[0] || self.min[1] >= self.max[1]
    }

    fn within(&self, shape: &VolumeShape) -> bool {
        slice_in_bounds(self.slice, shape)
            && self.min[0] >= 0
            && self.min[1] >= 0
            && self.max[0] <= shape.width as i64
            && self.max[1] <= shape.height as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PointPrompt {
    pub object_id: ObjectId,
    pub slice: i64,
    pub pos: [i64; 2],
    pub polarity: Polarity,
}

impl PointPrompt {
    fn within(&self, shape: &VolumeShape) -> bool {
        slice_in_bounds(self.slice, shape)
            && self.pos[0] >= 0
            && self.pos[1] >= 0
            && self.pos[0] < shape.width as i64
            && self.pos[1] < shape.height as i64
    }
}

fn slice_in_bounds(slice: i64, shape: &VolumeShape) -> bool {
    slice >= 0 && slice < shape.depth as i64
}

/// Inclusive slice interval `[first, last]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SliceSpan {
    pub first: usize,
    pub last: usize,
}

impl SliceSpan {
    /// # Panics
    /// If `first > last`.
    pub fn new(first: usize, last: usize) -> Self {
        assert!(first <= last, "span start after end");
        Self { first, last }
    }

    pub fn single(slice: usize) -> Self {
        Self::new(slice, slice)
    }

    pub fn contains(&self, slice: usize) -> bool {
        slice >= self.first && slice <= self.last
    }

    /// Number of slices covered.
    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_single(&self) -> bool {
        self.first == self.last
    }

    pub fn iter(&self) -> core::ops::RangeInclusive<usize> {
        self.first..=self.last
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("object id {0} outside 1..=255")]
    InvalidObjectId(ObjectId),
    #[error("object {0} already registered")]
    DuplicateObject(ObjectId),
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("degenerate box {min:?}-{max:?}")]
    DegenerateBox { min: [i64; 2], max: [i64; 2] },
    #[error("box {min:?}-{max:?} on slice {slice} outside volume {shape:?}")]
    BoxOutOfBounds {
        slice: i64,
        min: [i64; 2],
        max: [i64; 2],
        shape: VolumeShape,
    },
    #[error("point {pos:?} on slice {slice} outside volume {shape:?}")]
    PointOutOfBounds {
        slice: i64,
        pos: [i64; 2],
        shape: VolumeShape,
    },
    #[error("box required before points (object {object_id}, slice {slice})")]
    BoxRequired { object_id: ObjectId, slice: i64 },
    #[error("object {0} has no box prompts")]
    NoBoxes(ObjectId),
    #[error("negative slice index {0}")]
    NegativeSlice(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    OutOfBounds,
    DegenerateBox,
    UnknownObject,
    InvalidObjectId,
    DuplicateObject,
    DuplicateBox,
    PointWithoutBox,
}

impl ViolationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationKind::OutOfBounds => "out_of_bounds",
            ViolationKind::DegenerateBox => "degenerate_box",
            ViolationKind::UnknownObject => "unknown_object",
            ViolationKind::InvalidObjectId => "invalid_object_id",
            ViolationKind::DuplicateObject => "duplicate_object",
            ViolationKind::DuplicateBox => "duplicate_box",
            ViolationKind::PointWithoutBox => "point_without_box",
        }
    }
}

/// One broken invariant found by [`PromptSet::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub object_id: ObjectId,
    pub slice_index: Option<i64>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: object {}", self.kind.as_str(), self.object_id)?;
        if let Some(s) = self.slice_index {
            write!(f, ", slice {s}")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Per-case prompts. Boxes are kept sorted by `(object_id, slice)` and
/// points by insertion order within each object.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptSet {
    objects: Vec<ObjectSpec>,
    boxes: Vec<BoxPrompt>,
    points: Vec<PointPrompt>,
}

impl PromptSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assembles a set without checking any invariant, e.g. from a prompt
    /// file. Run [`validate`](Self::validate) before using it.
    pub fn from_parts(
        objects: Vec<ObjectSpec>,
        boxes: Vec<BoxPrompt>,
        points: Vec<PointPrompt>,
    ) -> Self {
        Self {
            objects,
            boxes,
            points,
        }
    }

    pub fn objects(&self) -> &[ObjectSpec] {
        &self.objects
    }

    pub fn boxes(&self) -> &[BoxPrompt] {
        &self.boxes
    }

    pub fn points(&self) -> &[PointPrompt] {
        &self.points
    }

    pub fn object(&self, id: ObjectId) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Boxes of one object in ascending slice order.
    pub fn boxes_for(&self, object_id: ObjectId) -> Vec<BoxPrompt> {
        let mut v: Vec<_> = self
            .boxes
            .iter()
            .filter(|b| b.object_id == object_id)
            .copied()
            .collect();
        v.sort_by_key(|b| b.slice);
        v
    }

    pub fn box_on(&self, object_id: ObjectId, slice: i64) -> Option<&BoxPrompt> {
        self.boxes
            .iter()
            .find(|b| b.object_id == object_id && b.slice == slice)
    }

    pub fn points_on(&self, object_id: ObjectId, slice: i64) -> Vec<PointPrompt> {
        self.points
            .iter()
            .filter(|p| p.object_id == object_id && p.slice == slice)
            .copied()
            .collect()
    }

    pub fn add_object(&self, spec: ObjectSpec) -> Result<Self, PromptError> {
        if spec.id == 0 || spec.id > MAX_OBJECT_ID {
            return Err(PromptError::InvalidObjectId(spec.id));
        }
        if self.object(spec.id).is_some() {
            return Err(PromptError::DuplicateObject(spec.id));
        }
        let mut next = self.clone();
        next.objects.push(spec);
        next.objects.sort_by_key(|o| o.id);
        Ok(next)
    }

    /// Inserts a box, replacing any existing box of the same object on the
    /// same slice.
    pub fn add_box(
        &self,
        shape: VolumeShape,
        object_id: ObjectId,
        slice: i64,
        min: [i64; 2],
        max: [i64; 2],
    ) -> Result<Self, PromptError> {
        if self.object(object_id).is_none() {
            return Err(PromptError::UnknownObject(object_id));
        }
        let b = BoxPrompt {
            object_id,
            slice,
            min,
            max,
        };
        if b.is_degenerate() {
            return Err(PromptError::DegenerateBox { min, max });
        }
        if !b.within(&shape) {
            return Err(PromptError::BoxOutOfBounds {
                slice,
                min,
                max,
                shape,
            });
        }
        let mut next = self.clone();
        next.boxes
            .retain(|o| !(o.object_id == object_id && o.slice == slice));
        next.boxes.push(b);
        next.boxes.sort_by_key(|b| (b.object_id, b.slice));
        Ok(next)
    }

    /// Appends a point on a slice that already carries a box for the same
    /// object. An identical point (position and polarity) is stored once.
    pub fn add_point(
        &self,
        shape: VolumeShape,
        object_id: ObjectId,
        slice: i64,
        pos: [i64; 2],
        polarity: Polarity,
    ) -> Result<Self, PromptError> {
        if self.object(object_id).is_none() {
            return Err(PromptError::UnknownObject(object_id));
        }
        let p = PointPrompt {
            object_id,
            slice,
            pos,
            polarity,
        };
        if !p.within(&shape) {
            return Err(PromptError::PointOutOfBounds { slice, pos, shape });
        }
        if self.box_on(object_id, slice).is_none() {
            return Err(PromptError::BoxRequired { object_id, slice });
        }
        let mut next = self.clone();
        if !next.points.contains(&p) {
            next.points.push(p);
        }
        Ok(next)
    }

    /// Drops an object together with all of its prompts.
    pub fn remove_object(&self, object_id: ObjectId) -> Self {
        let mut next = self.clone();
        next.objects.retain(|o| o.id != object_id);
        next.boxes.retain(|b| b.object_id != object_id);
        next.points.retain(|p| p.object_id != object_id);
        next
    }

    /// First and last slice carrying a box for the object.
    pub fn propagation_span(&self, object_id: ObjectId) -> Result<SliceSpan, PromptError> {
        let mut slices = self
            .boxes
            .iter()
            .filter(|b| b.object_id == object_id)
            .map(|b| b.slice);
        let first = slices.next().ok_or(PromptError::NoBoxes(object_id))?;
        let (lo, hi) = slices.fold((first, first), |(lo, hi), s| (lo.min(s), hi.max(s)));
        if lo < 0 {
            return Err(PromptError::NegativeSlice(lo));
        }
        Ok(SliceSpan::new(lo as usize, hi as usize))
    }

    /// Checks every invariant against a volume shape. An empty result means
    /// the set is usable as-is.
    pub fn validate(&self, shape: VolumeShape) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |kind, object_id, slice_index, message: String| {
            out.push(Violation {
                kind,
                object_id,
                slice_index,
                message,
            })
        };

        for (i, o) in self.objects.iter().enumerate() {
            if o.id == 0 || o.id > MAX_OBJECT_ID {
                push(
                    ViolationKind::InvalidObjectId,
                    o.id,
                    None,
                    format!("object id must be in 1..={MAX_OBJECT_ID}"),
                );
            }
            if self.objects[..i].iter().any(|p| p.id == o.id) {
                push(
                    ViolationKind::DuplicateObject,
                    o.id,
                    None,
                    String::from("object registered twice"),
                );
            }
        }

        for (i, b) in self.boxes.iter().enumerate() {
            if self.object(b.object_id).is_none() {
                push(
                    ViolationKind::UnknownObject,
                    b.object_id,
                    Some(b.slice),
                    String::from("box references an unregistered object"),
                );
            }
            if b.is_degenerate() {
                push(
                    ViolationKind::DegenerateBox,
                    b.object_id,
                    Some(b.slice),
                    format!("box {:?}-{:?} has no area", b.min, b.max),
                );
            } else if !b.within(&shape) {
                push(
                    ViolationKind::OutOfBounds,
                    b.object_id,
                    Some(b.slice),
                    format!(
                        "box {:?}-{:?} exceeds {}x{}x{} (depth x height x width)",
                        b.min, b.max, shape.depth, shape.height, shape.width
                    ),
                );
            }
            if self.boxes[..i]
                .iter()
                .any(|o| o.object_id == b.object_id && o.slice == b.slice)
            {
                push(
                    ViolationKind::DuplicateBox,
                    b.object_id,
                    Some(b.slice),
                    String::from("more than one box on this slice"),
                );
            }
        }

        for p in &self.points {
            if self.object(p.object_id).is_none() {
                push(
                    ViolationKind::UnknownObject,
                    p.object_id,
                    Some(p.slice),
                    String::from("point references an unregistered object"),
                );
            }
            if !p.within(&shape) {
                push(
                    ViolationKind::OutOfBounds,
                    p.object_id,
                    Some(p.slice),
                    format!("point {:?} outside the volume", p.pos),
                );
            }
            if self.box_on(p.object_id, p.slice).is_none() {
                push(
                    ViolationKind::PointWithoutBox,
                    p.object_id,
                    Some(p.slice),
                    String::from("box required before points"),
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    const SHAPE: VolumeShape = VolumeShape::new(20, 64, 64);

    fn with_object() -> PromptSet {
        PromptSet::new()
            .add_object(ObjectSpec::new(1, "lesion", [255, 0, 0]))
            .unwrap()
    }

    #[test]
    fn add_box_inserts() {
        let ps = with_object().add_box(SHAPE, 1, 0, [10, 10], [20, 20]).unwrap();
        assert_eq!(ps.boxes().len(), 1);
    }

    #[test]
    fn add_box_replaces_same_slice() {
        let ps = with_object()
            .add_box(SHAPE, 1, 0, [10, 10], [20, 20])
            .unwrap()
            .add_box(SHAPE, 1, 0, [12, 12], [30, 30])
            .unwrap();
        assert_eq!(ps.boxes().len(), 1);
        assert_eq!(ps.boxes()[0].min, [12, 12]);
    }

    #[test]
    fn degenerate_and_out_of_bounds_boxes_rejected() {
        let ps = with_object();
        assert!(matches!(
            ps.add_box(SHAPE, 1, 0, [10, 10], [10, 10]),
            Err(PromptError::DegenerateBox { .. })
        ));
        assert!(matches!(
            ps.add_box(SHAPE, 1, 0, [10, 10], [65, 20]),
            Err(PromptError::BoxOutOfBounds { .. })
        ));
        assert!(matches!(
            ps.add_box(SHAPE, 1, 20, [10, 10], [20, 20]),
            Err(PromptError::BoxOutOfBounds { .. })
        ));
        assert!(matches!(
            ps.add_box(SHAPE, 2, 0, [10, 10], [20, 20]),
            Err(PromptError::UnknownObject(2))
        ));
    }

    #[test]
    fn object_ids_limited() {
        let ps = PromptSet::new();
        assert!(ps.add_object(ObjectSpec::new(0, "bg", [0; 3])).is_err());
        assert!(ps.add_object(ObjectSpec::new(256, "big", [0; 3])).is_err());
        let ps = ps.add_object(ObjectSpec::new(255, "last", [0; 3])).unwrap();
        assert_eq!(
            ps.add_object(ObjectSpec::new(255, "again", [0; 3])),
            Err(PromptError::DuplicateObject(255))
        );
    }

    #[test]
    fn point_inside_box_stored() {
        let ps = with_object()
            .add_box(SHAPE, 1, 3, [10, 10], [20, 20])
            .unwrap()
            .add_point(SHAPE, 1, 3, [15, 15], Polarity::Positive)
            .unwrap();
        assert_eq!(ps.points().len(), 1);
    }

    #[test]
    fn point_needs_box() {
        let err = with_object()
            .add_point(SHAPE, 1, 3, [15, 15], Polarity::Positive)
            .unwrap_err();
        assert_eq!(
            err,
            PromptError::BoxRequired {
                object_id: 1,
                slice: 3
            }
        );
        assert!(err.to_string().contains("box required before points"));
    }

    #[test]
    fn duplicate_point_collapses() {
        let ps = with_object()
            .add_box(SHAPE, 1, 3, [10, 10], [20, 20])
            .unwrap()
            .add_point(SHAPE, 1, 3, [15, 15], Polarity::Positive)
            .unwrap()
            .add_point(SHAPE, 1, 3, [15, 15], Polarity::Positive)
            .unwrap();
        assert_eq!(ps.points().len(), 1);
        let ps = ps
            .add_point(SHAPE, 1, 3, [15, 15], Polarity::Negative)
            .unwrap();
        assert_eq!(ps.points().len(), 2);
    }

    #[test]
    fn spans() {
        let base = with_object();
        let ps = base
            .add_box(SHAPE, 1, 3, [1, 1], [5, 5])
            .unwrap()
            .add_box(SHAPE, 1, 17, [1, 1], [5, 5])
            .unwrap();
        assert_eq!(ps.propagation_span(1).unwrap(), SliceSpan::new(3, 17));
        let single = base.add_box(SHAPE, 1, 5, [1, 1], [5, 5]).unwrap();
        assert_eq!(single.propagation_span(1).unwrap(), SliceSpan::new(5, 5));
        let three = ps.add_box(SHAPE, 1, 9, [1, 1], [5, 5]).unwrap();
        assert_eq!(three.propagation_span(1).unwrap(), SliceSpan::new(3, 17));
        assert_eq!(base.propagation_span(1), Err(PromptError::NoBoxes(1)));
    }

    #[test]
    fn validate_well_formed_is_empty() {
        let ps = with_object()
            .add_box(SHAPE, 1, 3, [10, 10], [20, 20])
            .unwrap()
            .add_point(SHAPE, 1, 3, [12, 12], Polarity::Negative)
            .unwrap();
        assert!(ps.validate(SHAPE).is_empty());
    }

    #[test]
    fn validate_reports_deep_box() {
        let ps = PromptSet::from_parts(
            vec![ObjectSpec::new(1, "a", [1, 2, 3])],
            vec![BoxPrompt {
                object_id: 1,
                slice: 20,
                min: [0, 0],
                max: [4, 4],
            }],
            vec![],
        );
        let v = ps.validate(SHAPE);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::OutOfBounds);
        assert_eq!(v[0].slice_index, Some(20));
    }

    #[test]
    fn validate_reports_unknown_object_point() {
        let ps = PromptSet::from_parts(
            vec![ObjectSpec::new(1, "a", [1, 2, 3])],
            vec![BoxPrompt {
                object_id: 1,
                slice: 2,
                min: [0, 0],
                max: [4, 4],
            }],
            vec![PointPrompt {
                object_id: 7,
                slice: 2,
                pos: [1, 1],
                polarity: Polarity::Positive,
            }],
        );
        let kinds: Vec<_> = ps.validate(SHAPE).iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::UnknownObject));
    }

    #[test]
    fn operations_do_not_mutate_input() {
        let ps = with_object();
        let before = ps.clone();
        let _ = ps.add_box(SHAPE, 1, 3, [1, 1], [5, 5]).unwrap();
        assert_eq!(ps, before);
    }

    proptest! {
        #[test]
        fn empty_set_valid_for_any_shape(d in 0usize..40, h in 0usize..40, w in 0usize..40) {
            prop_assert!(PromptSet::new().validate(VolumeShape::new(d, h, w)).is_empty());
        }

        #[test]
        fn adding_boxes_never_shrinks_span(slices in proptest::collection::vec(0i64..20, 1..12)) {
            let mut ps = with_object();
            let mut prev: Option<SliceSpan> = None;
            for s in slices {
                ps = ps.add_box(SHAPE, 1, s, [1, 1], [4, 4]).unwrap();
                let span = ps.propagation_span(1).unwrap();
                if let Some(p) = prev {
                    prop_assert!(span.first <= p.first && span.last >= p.last);
                }
                prev = Some(span);
            }
        }
    }
}
