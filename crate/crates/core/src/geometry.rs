//! Voxel-to-patient geometry: spacing, origin and direction.
//!
//! Conventions follow ITK: patient space is LPS millimetres, and column `c` of
//! the direction matrix is the patient-space direction of index axis `c`
//! (`0 = x` column, `1 = y` row, `2 = z` slice). A voxel at integer index
//! `(x, y, z)` sits at `origin + D · diag(spacing) · (x, y, z)ᵀ`.

use thiserror::Error;

use crate::math;

/// Tolerance on the norm of each direction column.
pub const DIRECTION_UNIT_TOL: f64 = 1e-3;
/// Tolerance on `|det(direction)| - 1`.
pub const DIRECTION_DET_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("spacing must be strictly positive and finite, got {0:?}")]
    NonPositiveSpacing([f64; 3]),
    #[error("origin must be finite, got {0:?}")]
    NonFiniteOrigin([f64; 3]),
    #[error("direction column {axis} has norm {norm}, expected 1")]
    NonUnitDirection { axis: usize, norm: f64 },
    #[error("direction determinant {0} is not ±1")]
    Determinant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeGeometry {
    /// `(sx, sy, sz)` in millimetres.
    pub spacing: [f64; 3],
    /// Patient-space position of voxel `(0, 0, 0)`.
    pub origin: [f64; 3],
    /// Row-major 3×3 matrix; `direction[row][col]`.
    pub direction: [[f64; 3]; 3],
}

pub const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl VolumeGeometry {
    /// Builds a geometry and checks its invariants.
    pub fn new(
        spacing: [f64; 3],
        origin: [f64; 3],
        direction: [[f64; 3]; 3],
    ) -> Result<Self, GeometryError> {
        let g = Self {
            spacing,
            origin,
            direction,
        };
        g.validate()?;
        Ok(g)
    }

    /// Axis-aligned geometry with the given spacing and a zero origin.
    pub fn with_spacing(spacing: [f64; 3]) -> Self {
        Self {
            spacing,
            origin: [0.0; 3],
            direction: IDENTITY,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(GeometryError::NonPositiveSpacing(self.spacing));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(GeometryError::NonFiniteOrigin(self.origin));
        }
        for axis in 0..3 {
            let norm = norm3(self.direction_column(axis));
            if !(math::abs(norm - 1.0) <= DIRECTION_UNIT_TOL) {
                return Err(GeometryError::NonUnitDirection { axis, norm });
            }
        }
        let det = self.determinant();
        if !(math::abs(math::abs(det) - 1.0) <= DIRECTION_DET_TOL) {
            return Err(GeometryError::Determinant(det));
        }
        Ok(())
    }

    pub fn direction_column(&self, axis: usize) -> [f64; 3] {
        [
            self.direction[0][axis],
            self.direction[1][axis],
            self.direction[2][axis],
        ]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.direction;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Direction flattened row-major, as written to reports.
    pub fn direction_row_major(&self) -> [f64; 9] {
        let m = &self.direction;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_row_major(spacing: [f64; 3], origin: [f64; 3], d: [f64; 9]) -> Self {
        Self {
            spacing,
            origin,
            direction: [[d[0], d[1], d[2]], [d[3], d[4], d[5]], [d[6], d[7], d[8]]],
        }
    }

    /// Physical volume of one voxel. Exact for orthonormal directions, which
    /// [`validate`](Self::validate) enforces.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Maps a continuous index `(x, y, z)` to patient coordinates.
    pub fn index_to_physical(&self, index: [f64; 3]) -> [f64; 3] {
        let mut p = self.origin;
        for (row, out) in p.iter_mut().enumerate() {
            for axis in 0..3 {
                *out += self.direction[row][axis] * self.spacing[axis] * index[axis];
            }
        }
        p
    }

    /// Inverse of [`index_to_physical`](Self::index_to_physical), using the
    /// transpose of the (orthonormal) direction matrix.
    pub fn physical_to_index(&self, point: [f64; 3]) -> [f64; 3] {
        let d = [
            point[0] - self.origin[0],
            point[1] - self.origin[1],
            point[2] - self.origin[2],
        ];
        let mut idx = [0.0; 3];
        for (axis, out) in idx.iter_mut().enumerate() {
            let proj: f64 = (0..3).map(|row| self.direction[row][axis] * d[row]).sum();
            *out = proj / self.spacing[axis];
        }
        idx
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    math::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
}

/// Componentwise comparison of spacing, origin and direction.
pub fn geometry_equal(g1: &VolumeGeometry, g2: &VolumeGeometry, tol: f64) -> bool {
    let close = |a: f64, b: f64| math::abs(a - b) <= tol;
    g1.spacing.iter().zip(&g2.spacing).all(|(a, b)| close(*a, *b))
        && g1.origin.iter().zip(&g2.origin).all(|(a, b)| close(*a, *b))
        && g1
            .direction_row_major()
            .iter()
            .zip(&g2.direction_row_major())
            .all(|(a, b)| close(*a, *b))
}
