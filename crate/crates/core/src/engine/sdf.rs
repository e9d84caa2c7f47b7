//! Signed Euclidean distance fields and shape interpolation between slices.
//!
//! Distances are exact (Felzenszwalb–Huttenlocher lower-envelope transform)
//! between pixel centres, shifted by half a pixel so the zero level sits on
//! the boundary between an inside and an outside pixel. Inside is negative.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::mask::Mask2d;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SdfError {
    #[error("mask is empty")]
    EmptyMask,
    #[error("masks differ in shape: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("alpha {0} outside [0, 1]")]
    Alpha(f64),
}

/// Stand-in for an infinite distance; large enough that no finite parabola
/// inside a slice can reach it, small enough to keep intersections finite.
const FAR: f64 = 1e20;

/// One-dimensional squared distance transform of `f` into `d`.
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let intersect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
}

/// Squared distance from every pixel to the nearest pixel where `target` is
/// set. At least [`FAR`] when `target` is blank.
fn squared_edt(target: &Mask2d) -> Vec<f64> {
    let (w, h) = (target.width(), target.height());
    let mut grid: Vec<f64> = target
        .bits()
        .iter()
        .map(|b| if *b { 0.0 } else { FAR })
        .collect();
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
    }
    grid
}

/// Signed distance field of a non-empty mask: negative inside, positive
/// outside, magnitude at least 0.5 everywhere.
pub fn signed_distance(mask: &Mask2d) -> Result<Vec<f64>, SdfError> {
    if mask.is_blank() {
        return Err(SdfError::EmptyMask);
    }
    let (w, h) = (mask.width(), mask.height());
    let outside = Mask2d::from_bits(w, h, mask.bits().iter().map(|b| !b).collect());
    let to_inside = squared_edt(mask);
    let to_outside = squared_edt(&outside);
    // a full mask has no outside pixel; anything beyond the diagonal will do
    let far = (w + h) as f64;
    Ok(mask
        .bits()
        .iter()
        .enumerate()
        .map(|(i, &inside)| {
            if inside {
                let d = to_outside[i];
                let d = if d < FAR { math::sqrt(d) } else { far };
                -(d - 0.5)
            } else {
                math::sqrt(to_inside[i]) - 0.5
            }
        })
        .collect())
}

/// Blends two shapes: `{(1 − alpha)·d_a + alpha·d_b ≤ 0}`.
pub fn sdf_interpolate(a: &Mask2d, b: &Mask2d, alpha: f64) -> Result<Mask2d, SdfError> {
    if !a.same_shape(b) {
        return Err(SdfError::ShapeMismatch(
            (a.width(), a.height()),
            (b.width(), b.height()),
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SdfError::Alpha(alpha));
    }
    let da = signed_distance(a)?;
    let db = signed_distance(b)?;
    let bits = da
        .iter()
        .zip(&db)
        .map(|(x, y)| (1.0 - alpha) * x + alpha * y <= 0.0)
        .collect();
    Ok(Mask2d::from_bits(a.width(), a.height(), bits))
}
