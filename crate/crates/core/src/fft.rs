//! Two-dimensional FFT on flat row-major buffers, with plan caching.
//!
//! Convention: `forward` maps physical samples u(x_ab) on the uniform grid
//! to Fourier-series coefficients u_k with u(x) = sum_k u_k e^{i k.x}
//! (forward DFT scaled by 1/n^2); `inverse` is the exact inverse.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

type PlanKey = (usize, bool);

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut cache = cache.lock().unwrap();
    cache
        .entry((n, forward))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            planner.plan_fft(
                n,
                if forward {
                    FftDirection::Forward
                } else {
                    FftDirection::Inverse
                },
            )
        })
        .clone()
}

fn transpose(data: &mut [Complex64], n: usize) {
    for j in 0..n {
        for i in (j + 1)..n {
            data.swap(j * n + i, i * n + j);
        }
    }
}

fn fft2(data: &mut [Complex64], n: usize, forward: bool) {
    debug_assert_eq!(data.len(), n * n);
    let fft = plan(n, forward);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    transpose(data, n);
    fft.process_with_scratch(data, &mut scratch);
    transpose(data, n);
}

/// Physical samples -> Fourier coefficients (includes the 1/n^2 scaling).
pub fn forward(data: &mut [Complex64], n: usize) {
    fft2(data, n, true);
    let scale = 1.0 / (n * n) as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Fourier coefficients -> physical samples.
pub fn inverse(data: &mut [Complex64], n: usize) {
    fft2(data, n, false);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mode_synthesis() {
        // coefficients for cos(2x): u_{(2,0)} = u_{(-2,0)} = 1/2
        let n = 16;
        let mut data = vec![Complex64::default(); n * n];
        data[2] = Complex64::new(0.5, 0.0);
        data[n - 2] = Complex64::new(0.5, 0.0);
        inverse(&mut data, n);
        for b in 0..n {
            for a in 0..n {
                let x = std::f64::consts::TAU * a as f64 / n as f64;
                let got = data[b * n + a];
                assert!((got.re - (2.0 * x).cos()).abs() < 1e-12);
                assert!(got.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip() {
        let n = 32;
        let mut data: Vec<Complex64> = (0..n * n)
            .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let orig = data.clone();
        forward(&mut data, n);
        inverse(&mut data, n);
        for (a, b) in data.iter().zip(orig.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
