//! Mean-zero periodic vector fields on the torus [0, 2*pi)^2, stored as
//! Fourier coefficients with conjugate symmetry.
//!
//! Norm convention (Parseval): |u| = 2*pi * (sum_k |u_k|^2)^{1/2}, which is
//! the continuum L^2 norm of u(x) = sum_k u_k e^{i k.x}.  The same 2*pi
//! factor is carried by every Sobolev norm below.

use crate::error::{Error, Result};
use crate::fft;
use crate::grid::Grid;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

/// Velocity field in spectral space: two components, full n x n lattice,
/// row-major with the k1 index fastest (see `Grid` for the k layout).
/// The k = 0 mode is stored but pinned to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    data: [Vec<Complex64>; 2],
}

/// Values of a two-component field on the physical grid, row-major with the
/// x index fastest: `data[c][b*n + a]` is component c at (2*pi*a/n, 2*pi*b/n).
#[derive(Debug, Clone)]
pub struct PhysicalField {
    grid: Grid,
    data: [Vec<f64>; 2],
}

/// The four norms used throughout: L^2, H^1, H^2 and H^{-1/2}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub h1: f64,
    pub h2: f64,
    pub h_neg_half: f64,
}

const TWO_PI: f64 = std::f64::consts::TAU;

impl SpectralField {
    pub fn zero(grid: Grid) -> Self {
        let len = grid.len();
        SpectralField {
            grid,
            data: [vec![Complex64::default(); len], vec![Complex64::default(); len]],
        }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn component(&self, c: usize) -> &[Complex64] {
        &self.data[c]
    }

    #[inline]
    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.data[c]
    }

    #[inline]
    pub fn coeff(&self, k1: i64, k2: i64) -> [Complex64; 2] {
        let idx = self.grid.mode_index(k1, k2);
        [self.data[0][idx], self.data[1][idx]]
    }

    pub fn set_coeff(&mut self, k1: i64, k2: i64, value: [Complex64; 2]) {
        let idx = self.grid.mode_index(k1, k2);
        self.data[0][idx] = value[0];
        self.data[1][idx] = value[1];
    }

    fn check_grid(&self, other: &SpectralField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(self.grid.n(), other.grid.n()));
        }
        Ok(())
    }

    /// Orthogonal projection onto divergence-free mean-zero fields:
    /// u_k -> (I - k k^T / |k|^2) u_k, with the k = 0 mode zeroed.
    pub fn project_leray(&mut self) {
        let n = self.grid.n();
        for j in 0..n {
            let k2 = self.grid.wavenumber(j) as f64;
            for i in 0..n {
                let k1 = self.grid.wavenumber(i) as f64;
                let idx = j * n + i;
                let ksq = k1 * k1 + k2 * k2;
                if ksq == 0.0 {
                    self.data[0][idx] = Complex64::default();
                    self.data[1][idx] = Complex64::default();
                    continue;
                }
                let dot = (self.data[0][idx] * k1 + self.data[1][idx] * k2) / ksq;
                self.data[0][idx] -= dot * k1;
                self.data[1][idx] -= dot * k2;
            }
        }
    }

    pub fn leray_projected(&self) -> Self {
        let mut out = self.clone();
        out.project_leray();
        out
    }

    /// Zero every mode with |k| beyond the 2/3-rule cutoff (circular mask),
    /// and pin k = 0.
    pub fn dealias(&mut self) {
        let n = self.grid.n();
        let cutoff_sq = (self.grid.dealias_cutoff() * self.grid.dealias_cutoff()) as i64;
        for j in 0..n {
            let k2 = self.grid.wavenumber(j);
            for i in 0..n {
                let k1 = self.grid.wavenumber(i);
                let ksq = k1 * k1 + k2 * k2;
                if ksq > cutoff_sq || ksq == 0 {
                    let idx = j * n + i;
                    self.data[0][idx] = Complex64::default();
                    self.data[1][idx] = Complex64::default();
                }
            }
        }
    }

    /// Mode-wise multiplication by |k|^{2*power} (powers of the Stokes
    /// operator).  The pinned k = 0 mode is left at zero, so negative powers
    /// are well defined.
    pub fn stokes_apply(&self, power: f64) -> Self {
        let mut out = self.clone();
        let n = self.grid.n();
        for j in 0..n {
            let k2 = self.grid.wavenumber(j) as f64;
            for i in 0..n {
                let k1 = self.grid.wavenumber(i) as f64;
                let ksq = k1 * k1 + k2 * k2;
                let idx = j * n + i;
                let factor = if ksq == 0.0 { 0.0 } else { ksq.powf(power) };
                out.data[0][idx] *= factor;
                out.data[1][idx] *= factor;
            }
        }
        out
    }

    pub fn norms(&self) -> Norms {
        let n = self.grid.n();
        let (mut s0, mut s1, mut s2, mut sneg) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..n {
            let k2 = self.grid.wavenumber(j) as f64;
            for i in 0..n {
                let k1 = self.grid.wavenumber(i) as f64;
                let idx = j * n + i;
                let e = self.data[0][idx].norm_sqr() + self.data[1][idx].norm_sqr();
                if e == 0.0 {
                    continue;
                }
                let ksq = k1 * k1 + k2 * k2;
                s0 += e;
                s1 += ksq * e;
                s2 += ksq * ksq * e;
                if ksq > 0.0 {
                    sneg += e / ksq.sqrt();
                }
            }
        }
        Norms {
            l2: TWO_PI * s0.sqrt(),
            h1: TWO_PI * s1.sqrt(),
            h2: TWO_PI * s2.sqrt(),
            h_neg_half: TWO_PI * sneg.sqrt(),
        }
    }

    /// L^2 norm |u| (cheaper than `norms` when only one is needed).
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.data[0]
            .iter()
            .zip(&self.data[1])
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .sum();
        TWO_PI * s.sqrt()
    }

    /// H^1 norm ||u||.
    pub fn h1_norm(&self) -> f64 {
        let n = self.grid.n();
        let mut s = 0.0;
        for j in 0..n {
            let k2 = self.grid.wavenumber(j) as f64;
            for i in 0..n {
                let k1 = self.grid.wavenumber(i) as f64;
                let idx = j * n + i;
                let e = self.data[0][idx].norm_sqr() + self.data[1][idx].norm_sqr();
                s += (k1 * k1 + k2 * k2) * e;
            }
        }
        TWO_PI * s.sqrt()
    }

    /// L^2 inner product (u, v) = 4*pi^2 sum_k Re(u_k . conj(v_k)).
    pub fn inner_l2(&self, other: &SpectralField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let mut s = 0.0;
        for c in 0..2 {
            for (a, b) in self.data[c].iter().zip(&other.data[c]) {
                s += a.re * b.re + a.im * b.im;
            }
        }
        TWO_PI * TWO_PI * s
    }

    /// Largest coefficient magnitude, for blow-up detection.
    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for c in 0..2 {
            for v in &self.data[c] {
                let a = v.norm_sqr();
                if !a.is_finite() {
                    return f64::INFINITY;
                }
                if a > m {
                    m = a;
                }
            }
        }
        m.sqrt()
    }

    /// max_k |k . u_k|, the divergence residual in spectral space.
    pub fn divergence_max(&self) -> f64 {
        let n = self.grid.n();
        let mut m: f64 = 0.0;
        for j in 0..n {
            let k2 = self.grid.wavenumber(j) as f64;
            for i in 0..n {
                let k1 = self.grid.wavenumber(i) as f64;
                let idx = j * n + i;
                let d = (self.data[0][idx] * k1 + self.data[1][idx] * k2).norm();
                if d > m {
                    m = d;
                }
            }
        }
        m
    }

    /// Number of nonzero modes inside the dealiasing shell, and the shell size.
    pub fn populated_modes(&self) -> (usize, usize) {
        let n = self.grid.n();
        let cutoff_sq = (self.grid.dealias_cutoff() * self.grid.dealias_cutoff()) as i64;
        let mut populated = 0;
        let mut total = 0;
        for j in 0..n {
            let k2 = self.grid.wavenumber(j);
            for i in 0..n {
                let k1 = self.grid.wavenumber(i);
                let ksq = k1 * k1 + k2 * k2;
                if ksq == 0 || ksq > cutoff_sq {
                    continue;
                }
                total += 1;
                let idx = j * n + i;
                if self.data[0][idx] != Complex64::default()
                    || self.data[1][idx] != Complex64::default()
                {
                    populated += 1;
                }
            }
        }
        (populated, total)
    }

    pub fn scale(&mut self, a: f64) {
        for c in 0..2 {
            for v in self.data[c].iter_mut() {
                *v *= a;
            }
        }
    }

    /// self += a * other
    pub fn axpy(&mut self, a: f64, other: &SpectralField) -> Result<()> {
        self.check_grid(other)?;
        for c in 0..2 {
            for (x, y) in self.data[c].iter_mut().zip(&other.data[c]) {
                *x += a * y;
            }
        }
        Ok(())
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.check_grid(other)?;
        let mut out = self.clone();
        for c in 0..2 {
            for (x, y) in out.data[c].iter_mut().zip(&other.data[c]) {
                *x -= y;
            }
        }
        Ok(out)
    }

    pub fn to_physical(&self) -> PhysicalField {
        let n = self.grid.n();
        let mut out = PhysicalField::zero(self.grid);
        let mut buf = vec![Complex64::default(); n * n];
        for c in 0..2 {
            buf.copy_from_slice(&self.data[c]);
            fft::inverse(&mut buf, n);
            for (o, v) in out.data[c].iter_mut().zip(&buf) {
                *o = v.re;
            }
        }
        out
    }

    /// Inverse-transform a single component into an existing buffer.
    pub(crate) fn component_to_physical(&self, c: usize, out: &mut [Complex64]) {
        out.copy_from_slice(&self.data[c]);
        fft::inverse(out, self.grid.n());
    }

    /// Forward-transform physical samples of both components; the mean mode
    /// is pinned to zero afterwards.
    pub fn from_physical(phys: &PhysicalField) -> SpectralField {
        let n = phys.grid.n();
        let mut out = SpectralField::zero(phys.grid);
        let mut buf = vec![Complex64::default(); n * n];
        for c in 0..2 {
            for (b, v) in buf.iter_mut().zip(&phys.data[c]) {
                *b = Complex64::new(*v, 0.0);
            }
            fft::forward(&mut buf, n);
            out.data[c].copy_from_slice(&buf);
            out.data[c][0] = Complex64::default();
        }
        out
    }

    /// Divergence-free field with independent complex Gaussian modes on the
    /// shell kmin_sq <= |k|^2 <= kmax_sq, built with exact conjugate symmetry.
    pub fn random_div_free<R: Rng>(
        grid: Grid,
        kmin_sq: f64,
        kmax_sq: f64,
        rng: &mut R,
    ) -> SpectralField {
        let mut out = SpectralField::zero(grid);
        let kmax = kmax_sq.sqrt().floor() as i64;
        // iterate the canonical half-lattice (k2 > 0, or k2 == 0 and k1 > 0)
        for k2 in 0..=kmax {
            for k1 in -kmax..=kmax {
                if k2 == 0 && k1 <= 0 {
                    continue;
                }
                let ksq = (k1 * k1 + k2 * k2) as f64;
                if ksq < kmin_sq || ksq > kmax_sq {
                    continue;
                }
                let g = |rng: &mut R| {
                    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                };
                let v = [g(rng), g(rng)];
                out.set_coeff(k1, k2, v);
                out.set_coeff(-k1, -k2, [v[0].conj(), v[1].conj()]);
            }
        }
        out.project_leray();
        out
    }

    /// Maximum relative conjugate-symmetry violation, for tests.
    pub fn conjugate_symmetry_residual(&self) -> f64 {
        let n = self.grid.n();
        let mut worst: f64 = 0.0;
        let scale = self.max_abs().max(1e-300);
        for j in 0..n {
            let k2 = self.grid.wavenumber(j);
            for i in 0..n {
                let k1 = self.grid.wavenumber(i);
                // skip Nyquist rows where -k aliases onto k itself
                if k1 == (n as i64) / 2 || k2 == (n as i64) / 2 {
                    continue;
                }
                let a = self.coeff(k1, k2);
                let b = self.coeff(-k1, -k2);
                for c in 0..2 {
                    let r = (a[c] - b[c].conj()).norm() / scale;
                    if r > worst {
                        worst = r;
                    }
                }
            }
        }
        worst
    }
}

impl PhysicalField {
    pub fn zero(grid: Grid) -> Self {
        let len = grid.len();
        PhysicalField {
            grid,
            data: [vec![0.0; len], vec![0.0; len]],
        }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn component(&self, c: usize) -> &[f64] {
        &self.data[c]
    }

    #[inline]
    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c]
    }

    /// Fill from a closure of the physical coordinate.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let n = grid.n();
        let mut out = PhysicalField::zero(grid);
        for b in 0..n {
            for a in 0..n {
                let v = f(grid.point(a, b));
                out.data[0][b * n + a] = v[0];
                out.data[1][b * n + a] = v[1];
            }
        }
        out
    }

    /// Grid-quadrature L^2 norm squared: cell area times sum of |values|^2.
    pub fn l2_norm_sq_quadrature(&self) -> f64 {
        let n = self.grid.n();
        let cell = (TWO_PI / n as f64) * (TWO_PI / n as f64);
        let s: f64 = self.data[0]
            .iter()
            .zip(&self.data[1])
            .map(|(a, b)| a * a + b * b)
            .sum();
        cell * s
    }
}
