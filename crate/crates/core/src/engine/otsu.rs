//! Otsu threshold over a fixed 256-bin histogram.

use thiserror::Error;

use crate::math;

pub const OTSU_BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum OtsuError {
    #[error("need at least two distinct finite values")]
    Degenerate,
}

/// Result of a histogram split: values in bins `0..=cut_bin` are background,
/// the rest foreground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuSplit {
    /// Upper edge of the last background bin.
    pub threshold: f64,
    pub cut_bin: usize,
    lo: f64,
    bin_width: f64,
}

impl OtsuSplit {
    pub fn bin_of(&self, v: f64) -> usize {
        bin_index(v, self.lo, self.bin_width)
    }

    pub fn is_foreground(&self, v: f64) -> bool {
        self.bin_of(v) > self.cut_bin
    }
}

fn bin_index(v: f64, lo: f64, width: f64) -> usize {
    let b = math::floor((v - lo) / width);
    if b <= 0.0 {
        0
    } else if b >= (OTSU_BINS - 1) as f64 {
        OTSU_BINS - 1
    } else {
        b as usize
    }
}

/// Chooses the histogram cut maximising between-class variance. Class means
/// use the exact values that fell into each bin. Among equal variances the
/// lowest cut wins.
pub fn otsu_split(values: &[f64]) -> Result<OtsuSplit, OtsuError> {
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return Err(OtsuError::Degenerate);
    }
    let width = (hi - lo) / OTSU_BINS as f64;

    let mut counts = [0u64; OTSU_BINS];
    let mut sums = [0.0f64; OTSU_BINS];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let b = bin_index(v, lo, width);
        counts[b] += 1;
        sums[b] += v;
    }
    let total_n: u64 = counts.iter().sum();
    let total_s: f64 = sums.iter().sum();

    let mut best: Option<(usize, f64)> = None;
    let (mut n0, mut s0) = (0u64, 0.0f64);
    for cut in 0..OTSU_BINS - 1 {
        n0 += counts[cut];
        s0 += sums[cut];
        let n1 = total_n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_s - s0;
        let w0 = n0 as f64 / total_n as f64;
        let w1 = n1 as f64 / total_n as f64;
        let d = s0 / n0 as f64 - s1 / n1 as f64;
        let var = w0 * w1 * d * d;
        if best.is_none_or(|(_, b)| var > b) {
            best = Some((cut, var));
        }
    }
    let (cut_bin, _) = best.ok_or(OtsuError::Degenerate)?;
    Ok(OtsuSplit {
        threshold: lo + (cut_bin + 1) as f64 * width,
        cut_bin,
        lo,
        bin_width: width,
    })
}

/// Threshold value of [`otsu_split`].
pub fn otsu_threshold(values: &[f64]) -> Result<f64, OtsuError> {
    otsu_split(values).map(|s| s.threshold)
}
