//! Dealiased pseudo-spectral evaluation of the Navier-Stokes nonlinearity
//! B(u,v) = P_H (u . grad v).

use crate::error::{Error, Result};
use crate::fft;
use crate::field::SpectralField;
use rustfft::num_complex::Complex64;

/// B(u, v): transform to physical space, form (u . grad) v pointwise,
/// transform back, dealias, project onto H.
pub fn nonlinear_b(u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    if u.grid() != v.grid() {
        return Err(Error::GridMismatch(u.grid().n(), v.grid().n()));
    }
    let grid = u.grid();
    let n = grid.n();
    let len = grid.len();

    let mut u1 = vec![Complex64::default(); len];
    let mut u2 = vec![Complex64::default(); len];
    u.component_to_physical(0, &mut u1);
    u.component_to_physical(1, &mut u2);

    let mut out = SpectralField::zero(grid);
    let mut dx = vec![Complex64::default(); len];
    let mut dy = vec![Complex64::default(); len];
    for c in 0..2 {
        // spectral derivatives of v_c
        for j in 0..n {
            let k2 = grid.wavenumber(j) as f64;
            for i in 0..n {
                let k1 = grid.wavenumber(i) as f64;
                let idx = j * n + i;
                let vc = v.component(c)[idx];
                let ivc = Complex64::new(-vc.im, vc.re); // i * v
                dx[idx] = ivc * k1;
                dy[idx] = ivc * k2;
            }
        }
        fft::inverse(&mut dx, n);
        fft::inverse(&mut dy, n);
        let buf = out.component_mut(c);
        for idx in 0..len {
            buf[idx] = Complex64::new(u1[idx].re * dx[idx].re + u2[idx].re * dy[idx].re, 0.0);
        }
        fft::forward(out.component_mut(c), n);
    }
    out.dealias();
    out.project_leray();
    Ok(out)
}

/// B(u, u) in rotation form: P_H kills the gradient part of
/// (u . grad) u = grad(|u|^2 / 2) + omega * u_perp, so only the vorticity
/// term is formed.  Agrees with `nonlinear_b(u, u)` to rounding; costs
/// 5 transforms instead of 8.
pub fn nonlinear_self(u: &SpectralField, ws: &mut SelfAdvectionScratch) -> SpectralField {
    let grid = u.grid();
    let n = grid.n();
    debug_assert_eq!(ws.omega.len(), grid.len());

    // omega = i (k1 u2 - k2 u1)
    for j in 0..n {
        let k2 = grid.wavenumber(j) as f64;
        for i in 0..n {
            let k1 = grid.wavenumber(i) as f64;
            let idx = j * n + i;
            let w = u.component(0)[idx] * (-k2) + u.component(1)[idx] * k1;
            ws.omega[idx] = Complex64::new(-w.im, w.re);
        }
    }
    fft::inverse(&mut ws.omega, n);
    u.component_to_physical(0, &mut ws.u1);
    u.component_to_physical(1, &mut ws.u2);

    let mut out = SpectralField::zero(grid);
    {
        let b1 = out.component_mut(0);
        for idx in 0..grid.len() {
            b1[idx] = Complex64::new(-ws.omega[idx].re * ws.u2[idx].re, 0.0);
        }
        fft::forward(b1, n);
    }
    {
        let b2 = out.component_mut(1);
        for idx in 0..grid.len() {
            b2[idx] = Complex64::new(ws.omega[idx].re * ws.u1[idx].re, 0.0);
        }
        fft::forward(b2, n);
    }
    out.dealias();
    out.project_leray();
    out
}

pub struct SelfAdvectionScratch {
    omega: Vec<Complex64>,
    u1: Vec<Complex64>,
    u2: Vec<Complex64>,
}

impl SelfAdvectionScratch {
    pub fn new(len: usize) -> Self {
        SelfAdvectionScratch {
            omega: vec![Complex64::default(); len],
            u1: vec![Complex64::default(); len],
            u2: vec![Complex64::default(); len],
        }
    }
}
