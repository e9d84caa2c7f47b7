//! N4 bias-field correction.
//!
//! Model: `v = u · b` with a smooth multiplicative field `b`. Working on
//! `log v`, each iteration sharpens the intensity histogram of the current
//! estimate of `log u` by Wiener deconvolution of a Gaussian, maps every
//! sample to its conditional expectation `E[u | v]`, and fits a cubic
//! B-spline to the residual. Control lattices are summed across iterations
//! and refined dyadically between fitting levels.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use super::bspline::{AxisWeights, Lattice};
use super::fft::{fft, ifft};
use super::PreprocessError;
use crate::math;
use crate::volume::VolumeImage;

const HISTOGRAM_BINS: usize = 200;
const BIAS_FWHM: f64 = 0.15;
const WIENER_NOISE: f64 = 0.01;
/// Control points per axis on the first fitting level.
const INITIAL_CONTROL_POINTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct N4Params {
    pub shrink_factor: usize,
    /// One entry per fitting level.
    pub iterations_per_level: Vec<usize>,
    pub convergence_threshold: f64,
}

impl Default for N4Params {
    fn default() -> Self {
        Self {
            shrink_factor: 4,
            iterations_per_level: vec![50; 4],
            convergence_threshold: 1e-3,
        }
    }
}

impl N4Params {
    /// `levels` fitting levels with `iterations` each.
    pub fn new(
        shrink_factor: usize,
        levels: usize,
        iterations: usize,
        convergence_threshold: f64,
    ) -> Result<Self, PreprocessError> {
        let p = Self {
            shrink_factor,
            iterations_per_level: vec![iterations; levels],
            convergence_threshold,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn fitting_levels(&self) -> usize {
        self.iterations_per_level.len()
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.shrink_factor == 0 {
            return Err(PreprocessError::InvalidParams("shrink factor must be >= 1"));
        }
        if self.iterations_per_level.is_empty() {
            return Err(PreprocessError::InvalidParams("at least one fitting level"));
        }
        if self.iterations_per_level.len() > 10 {
            return Err(PreprocessError::InvalidParams("at most 10 fitting levels"));
        }
        if !(self.convergence_threshold > 0.0) {
            return Err(PreprocessError::InvalidParams("convergence threshold must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum N4Warning {
    /// No intensity variation inside the mask; the field is identity.
    ConstantVolume,
    /// No positive voxel to estimate from; the field is identity.
    EmptyMask,
    /// A level hit its iteration limit before converging.
    NotConverged { level: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct N4Output {
    pub corrected: VolumeImage,
    pub field: VolumeImage,
    pub warnings: Vec<N4Warning>,
    /// Iterations run on each level.
    pub iterations: Vec<usize>,
}

/// Estimates and removes a smooth multiplicative bias field.
///
/// Negative inputs are shifted by `s = −min` before estimation; the output
/// satisfies `(corrected + s) · field = volume + s`. Voxels at or below zero
/// after the shift are excluded from estimation but still corrected. The
/// field is normalised to unit geometric mean over the estimation mask.
pub fn n4_correct(volume: &VolumeImage, params: &N4Params) -> Result<N4Output, PreprocessError> {
    params.validate()?;
    let shape = volume.shape();
    let min = volume.min_max().0 as f64;
    let shift = if min < 0.0 { -min } else { 0.0 };
    let shifted: Vec<f64> = volume.voxels().iter().map(|v| *v as f64 + shift).collect();
    let mask: Vec<bool> = shifted.iter().map(|v| *v > 0.0).collect();

    let identity = |warning| -> Result<N4Output, PreprocessError> {
        Ok(N4Output {
            corrected: volume.clone(),
            field: volume.with_voxels(vec![1.0; shape.len()])?,
            warnings: vec![warning],
            iterations: Vec::new(),
        })
    };

    let dims = [shape.depth, shape.height, shape.width];
    let f = params.shrink_factor;
    let sampled: [Vec<usize>; 3] = core::array::from_fn(|a| (0..dims[a]).step_by(f).collect());
    let mut log_v: Vec<Option<f64>> = Vec::new();
    for &z in &sampled[0] {
        for &y in &sampled[1] {
            for &x in &sampled[2] {
                let i = shape.index(z, y, x);
                log_v.push(mask[i].then(|| math::ln(shifted[i])));
            }
        }
    }
    if log_v.iter().flatten().count() < 2 {
        return identity(N4Warning::EmptyMask);
    }
    let (lo, hi) = range(log_v.iter().flatten().copied());
    if !(hi - lo > 1e-12 * lo.abs().max(1.0)) {
        return identity(N4Warning::ConstantVolume);
    }

    let mut warnings = Vec::new();
    let mut iterations = Vec::new();
    let mut spans = [INITIAL_CONTROL_POINTS - 3; 3];
    let mut lattice = Lattice::zeros(spans);
    let mut log_b = vec![0.0; log_v.len()];
    for (level, &max_iter) in params.iterations_per_level.iter().enumerate() {
        if level > 0 {
            lattice = lattice.refine();
            spans = lattice.spans();
        }
        let axes: [AxisWeights; 3] = core::array::from_fn(|a| AxisWeights::new(&sampled[a], dims[a], spans[a]));
        let mut converged = false;
        let mut done = 0;
        while done < max_iter {
            done += 1;
            let log_u: Vec<Option<f64>> = log_v
                .iter()
                .zip(&log_b)
                .map(|(v, b)| v.map(|v| v - b))
                .collect();
            let sharpened = sharpen(&log_u);
            let residual: Vec<Option<f64>> = log_u
                .iter()
                .zip(&sharpened)
                .map(|(u, s)| u.zip(*s).map(|(u, s)| u - s))
                .collect();
            lattice.add_assign(&Lattice::fit(spans, &axes, &residual));
            let next = lattice.evaluate(&axes);
            let measure = convergence_measure(&log_b, &next, &log_v);
            log_b = next;
            if measure < params.convergence_threshold {
                converged = true;
                break;
            }
        }
        iterations.push(done);
        if !converged && max_iter > 0 {
            warnings.push(N4Warning::NotConverged { level });
        }
    }

    let full: [Vec<usize>; 3] = core::array::from_fn(|a| (0..dims[a]).collect());
    let axes: [AxisWeights; 3] = core::array::from_fn(|a| AxisWeights::new(&full[a], dims[a], spans[a]));
    let mut log_field = lattice.evaluate(&axes);
    let (sum, n) = log_field
        .iter()
        .zip(&mask)
        .filter(|(_, m)| **m)
        .fold((0.0, 0usize), |(s, n), (b, _)| (s + b, n + 1));
    let mean = sum / n as f64;
    for b in &mut log_field {
        *b = math::exp(*b - mean);
    }
    let corrected: Vec<f32> = shifted
        .iter()
        .zip(&log_field)
        .map(|(v, b)| (v / b - shift) as f32)
        .collect();
    let field: Vec<f32> = log_field.iter().map(|b| *b as f32).collect();
    Ok(N4Output {
        corrected: volume.with_voxels(corrected)?,
        field: volume.with_voxels(field)?,
        warnings,
        iterations,
    })
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Coefficient of variation of `exp(new − old)` over the samples in use.
fn convergence_measure(old: &[f64], new: &[f64], used: &[Option<f64>]) -> f64 {
    let ratios: Vec<f64> = old
        .iter()
        .zip(new)
        .zip(used)
        .filter(|(_, u)| u.is_some())
        .map(|((a, b), _)| math::exp(b - a))
        .collect();
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    math::sqrt(var) / mean
}

/// Maps each log intensity to its expected unbiased value under a Gaussian
/// bias-spreading model of the histogram.
fn sharpen(log_u: &[Option<f64>]) -> Vec<Option<f64>> {
    let (lo, hi) = range(log_u.iter().flatten().copied());
    let bins = HISTOGRAM_BINS;
    let slope = (hi - lo) / (bins - 1) as f64;
    if !(slope > 0.0) {
        return log_u.to_vec();
    }

    let mut histogram = vec![0.0; bins];
    for &v in log_u.iter().flatten() {
        let c = (v - lo) / slope;
        let i = (math::floor(c) as usize).min(bins - 1);
        let off = c - i as f64;
        histogram[i] += 1.0 - off;
        if i + 1 < bins {
            histogram[i + 1] += off;
        }
    }

    let padded = 1usize << (math::ceil(math::log2(bins as f64)) as u32 + 1);
    let offset = (padded - bins) / 2;
    let mut v = vec![Complex64::new(0.0, 0.0); padded];
    for (i, h) in histogram.iter().enumerate() {
        v[offset + i] = Complex64::new(*h, 0.0);
    }
    fft(&mut v);

    // Gaussian with the bias FWHM, measured in bins, wrapped around zero
    let fwhm = BIAS_FWHM / slope;
    let exp_factor = 4.0 * core::f64::consts::LN_2 / (fwhm * fwhm);
    let scale = 2.0 * math::sqrt(core::f64::consts::LN_2 / core::f64::consts::PI) / fwhm;
    let mut filter = vec![Complex64::new(0.0, 0.0); padded];
    filter[0] = Complex64::new(scale, 0.0);
    for n in 1..=padded / 2 {
        let g = scale * math::exp(-((n * n) as f64) * exp_factor);
        filter[n] = Complex64::new(g, 0.0);
        filter[padded - n] = Complex64::new(g, 0.0);
    }
    fft(&mut filter);

    let mut u: Vec<Complex64> = v
        .iter()
        .zip(&filter)
        .map(|(v, f)| v * f.conj() / (f.norm_sqr() + WIENER_NOISE))
        .collect();
    ifft(&mut u);
    for c in &mut u {
        *c = Complex64::new(c.re.max(0.0), 0.0);
    }

    let mut numerator: Vec<Complex64> = u
        .iter()
        .enumerate()
        .map(|(n, c)| Complex64::new((lo + (n as f64 - offset as f64) * slope) * c.re, 0.0))
        .collect();
    fft(&mut numerator);
    let mut denominator = u;
    fft(&mut denominator);
    for ((num, den), f) in numerator.iter_mut().zip(&mut denominator).zip(&filter) {
        *num *= f;
        *den *= f;
    }
    ifft(&mut numerator);
    ifft(&mut denominator);
    let expected: Vec<f64> = (0..bins)
        .map(|i| {
            let d = denominator[offset + i].re;
            if d != 0.0 {
                numerator[offset + i].re / d
            } else {
                0.0
            }
        })
        .collect();

    log_u
        .iter()
        .map(|v| {
            v.map(|v| {
                let c = (v - lo) / slope;
                let i = math::floor(c) as usize;
                if i + 1 < bins {
                    expected[i] + (expected[i + 1] - expected[i]) * (c - i as f64)
                } else {
                    expected[bins - 1]
                }
            })
        })
        .collect()
}
