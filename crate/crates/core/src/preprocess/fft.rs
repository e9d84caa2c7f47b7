//! Radix-2 FFT for the short power-of-two histograms used by N4.

use core::f64::consts::PI;

use num_complex::Complex64;

use crate::math;

/// In-place forward transform, `X[k] = Σ x[n]·e^{−2πikn/N}`.
///
/// # Panics
/// If the length is not a power of two.
pub(crate) fn fft(data: &mut [Complex64]) {
    transform(data, false);
}

/// In-place inverse transform, scaled by `1/N`.
pub(crate) fn ifft(data: &mut [Complex64]) {
    transform(data, true);
    let scale = 1.0 / data.len() as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

fn transform(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    if n <= 1 {
        return;
    }
    assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let angle = sign * 2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let a = angle * k as f64;
                let w = Complex64::new(math::cos(a), math::sin(a));
                let u = data[start + k];
                let t = data[start + k + len / 2] * w;
                data[start + k] = u + t;
                data[start + k + len / 2] = u - t;
            }
        }
        len <<= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let a = -2.0 * PI * (k * j) as f64 / n as f64;
                        v * Complex64::new(a.cos(), a.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let x: Vec<Complex64> = (0..64)
            .map(|i| Complex64::new((i as f64 * 0.37).sin() + 0.1 * i as f64, (i as f64).cos()))
            .collect();
        let mut y = x.clone();
        fft(&mut y);
        for (a, b) in y.iter().zip(naive_dft(&x)) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let x: Vec<Complex64> = (0..512).map(|i| Complex64::new(i as f64 % 7.0, 0.0)).collect();
        let mut y = x.clone();
        fft(&mut y);
        ifft(&mut y);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}
