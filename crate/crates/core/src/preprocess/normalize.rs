//! Intensity normalization for display and backend input.

use alloc::vec::Vec;

use super::PreprocessError;
use crate::math;
use crate::volume::VolumeImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizeMethod {
    /// Clip to the 1st..99th percentile and rescale to `[0, 1]`.
    #[default]
    PercentileClip,
    /// `(v - mean) / std` with the population standard deviation.
    ZScore,
}

/// Linearly interpolated percentile of sorted data (`q` in `[0, 100]`).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q / 100.0 * (n - 1) as f64;
            let lo = math::floor(pos) as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

/// `[lo, hi]` percentile window of the volume.
pub fn percentile_window(volume: &VolumeImage, lo: f64, hi: f64) -> (f64, f64) {
    let mut v: Vec<f64> = volume.voxels().iter().map(|x| *x as f64).collect();
    v.sort_by(f64::total_cmp);
    (percentile(&v, lo), percentile(&v, hi))
}

pub fn normalize_intensity(
    volume: &VolumeImage,
    method: NormalizeMethod,
) -> Result<VolumeImage, PreprocessError> {
    let out: Vec<f32> = match method {
        NormalizeMethod::PercentileClip => {
            let (p1, p99) = percentile_window(volume, 1.0, 99.0);
            let range = p99 - p1;
            if !(range > 0.0) {
                alloc::vec![0.0; volume.voxels().len()]
            } else {
                volume
                    .voxels()
                    .iter()
                    .map(|&v| ((v as f64).clamp(p1, p99) - p1) / range)
                    .map(|v| v as f32)
                    .collect()
            }
        }
        NormalizeMethod::ZScore => {
            let n = volume.voxels().len() as f64;
            let mean = volume.voxels().iter().map(|v| *v as f64).sum::<f64>() / n;
            let var = volume
                .voxels()
                .iter()
                .map(|v| (*v as f64 - mean) * (*v as f64 - mean))
                .sum::<f64>()
                / n;
            let std = math::sqrt(var);
            if !(std > 0.0) {
                return Err(PreprocessError::ZeroVariance);
            }
            volume
                .voxels()
                .iter()
                .map(|&v| ((v as f64 - mean) / std) as f32)
                .collect()
        }
    };
    Ok(volume.with_voxels(out)?)
}
