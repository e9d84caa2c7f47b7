//! Tensor-product cubic B-spline lattices over a regular grid: scattered-data
//! approximation (Lee, Wolberg & Shin) and dyadic refinement.
//!
//! Every axis maps grid index `0..n` onto the parametric interval
//! `[0, spans]`; a lattice with `spans` intervals has `spans + 3` control
//! points on that axis. Arrays are in `(z, y, x)` order.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

fn basis(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let u = 1.0 - t;
    [
        u * u * u / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// Control point offsets and basis weights for sample positions along one
/// axis.
#[derive(Debug, Clone)]
pub(crate) struct AxisWeights {
    first: Vec<usize>,
    weights: Vec<[f64; 4]>,
}

impl AxisWeights {
    /// `positions` are grid indices in `[0, extent - 1]`.
    pub(crate) fn new(positions: &[usize], extent: usize, spans: usize) -> Self {
        let scale = if extent > 1 {
            spans as f64 / (extent - 1) as f64
        } else {
            0.0
        };
        let mut first = Vec::with_capacity(positions.len());
        let mut weights = Vec::with_capacity(positions.len());
        for &p in positions {
            let u = p as f64 * scale;
            let i = (math::floor(u) as usize).min(spans - 1);
            first.push(i);
            weights.push(basis(u - i as f64));
        }
        Self { first, weights }
    }

    pub(crate) fn len(&self) -> usize {
        self.first.len()
    }
}

/// Control points of a cubic B-spline function on a 3D grid.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Lattice {
    /// Intervals per axis, `(z, y, x)`.
    spans: [usize; 3],
    dims: [usize; 3],
    points: Vec<f64>,
}

impl Lattice {
    pub(crate) fn zeros(spans: [usize; 3]) -> Self {
        let dims = [spans[0] + 3, spans[1] + 3, spans[2] + 3];
        Self {
            spans,
            dims,
            points: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub(crate) fn spans(&self) -> [usize; 3] {
        self.spans
    }

    fn at(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub(crate) fn add_assign(&mut self, other: &Lattice) {
        assert_eq!(self.spans, other.spans, "lattice size mismatch");
        for (a, b) in self.points.iter_mut().zip(&other.points) {
            *a += b;
        }
    }

    /// Evaluates on the grid `axes[0] × axes[1] × axes[2]`.
    pub(crate) fn evaluate(&self, axes: &[AxisWeights; 3]) -> Vec<f64> {
        let [az, ay, ax] = axes;
        let mut out = Vec::with_capacity(az.len() * ay.len() * ax.len());
        for (zi, wz) in az.first.iter().zip(&az.weights) {
            for (yi, wy) in ay.first.iter().zip(&ay.weights) {
                for (xi, wx) in ax.first.iter().zip(&ax.weights) {
                    let mut acc = 0.0;
                    for (c, wzc) in wz.iter().enumerate() {
                        for (b, wyb) in wy.iter().enumerate() {
                            let row = self.at(zi + c, yi + b, *xi);
                            let w = wzc * wyb;
                            for (a, wxa) in wx.iter().enumerate() {
                                acc += w * wxa * self.points[row + a];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    /// Single-level B-spline approximation of scattered grid samples.
    /// `values[i]` is `None` where the sample is excluded.
    pub(crate) fn fit(spans: [usize; 3], axes: &[AxisWeights; 3], values: &[Option<f64>]) -> Self {
        let [az, ay, ax] = axes;
        let mut lattice = Self::zeros(spans);
        let mut delta = vec![0.0; lattice.points.len()];
        let mut omega = vec![0.0; lattice.points.len()];
        let mut i = 0;
        for (zi, wz) in az.first.iter().zip(&az.weights) {
            for (yi, wy) in ay.first.iter().zip(&ay.weights) {
                for (xi, wx) in ax.first.iter().zip(&ax.weights) {
                    let value = values[i];
                    i += 1;
                    let Some(r) = value else { continue };
                    let mut w2_sum = 0.0;
                    for wzc in wz {
                        for wyb in wy {
                            for wxa in wx {
                                let w = wzc * wyb * wxa;
                                w2_sum += w * w;
                            }
                        }
                    }
                    for (c, wzc) in wz.iter().enumerate() {
                        for (b, wyb) in wy.iter().enumerate() {
                            let row = lattice.at(zi + c, yi + b, *xi);
                            for (a, wxa) in wx.iter().enumerate() {
                                let w = wzc * wyb * wxa;
                                let phi = w * r / w2_sum;
                                delta[row + a] += w * w * phi;
                                omega[row + a] += w * w;
                            }
                        }
                    }
                }
            }
        }
        for ((p, d), o) in lattice.points.iter_mut().zip(&delta).zip(&omega) {
            if *o > 0.0 {
                *p = d / o;
            }
        }
        lattice
    }

    /// The same function on a lattice with twice as many intervals per axis.
    pub(crate) fn refine(&self) -> Self {
        let mut cur = self.clone();
        for axis in 0..3 {
            cur = cur.refine_axis(axis);
        }
        cur
    }

    fn refine_axis(&self, axis: usize) -> Self {
        let mut spans = self.spans;
        spans[axis] *= 2;
        let mut out = Self::zeros(spans);
        let m = self.spans[axis];
        let [dz, dy, dx] = out.dims;
        for z in 0..dz {
            for y in 0..dy {
                for x in 0..dx {
                    let mut idx = [z, y, x];
                    let k2 = idx[axis];
                    let get = |k: usize, idx: &mut [usize; 3]| {
                        idx[axis] = k;
                        self.points[self.at(idx[0], idx[1], idx[2])]
                    };
                    let v = if k2 % 2 == 0 {
                        let k = k2 / 2;
                        0.5 * (get(k, &mut idx) + get(k + 1, &mut idx))
                    } else {
                        let k = k2.div_ceil(2);
                        debug_assert!(k >= 1 && k <= m + 1);
                        (get(k - 1, &mut idx) + 6.0 * get(k, &mut idx) + get(k + 1, &mut idx)) / 8.0
                    };
                    let at = out.at(z, y, x);
                    out.points[at] = v;
                }
            }
        }
        out
    }
}
