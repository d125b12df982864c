//! Observation networks of local disc averages on a periodic Voronoi
//! tessellation, the piecewise-constant interpolant I_h, the spectral
//! filter P_lambda, and the composite observable J_h = P_lambda P_H I_h.
//!
//! Measurement points are snapped to the nearest grid coordinate, so cell
//! assignment and all distances reduce to exact integer arithmetic in grid
//! units.  On a 512 grid the regular 9x9 layout then yields
//! h = 56*pi*sqrt(2)/512 and exactly 21 grid points per disc of radius
//! 2*pi*sqrt(6)/512.

use crate::error::{Error, Result};
use crate::field::{PhysicalField, SpectralField};
use crate::grid::{shell_mode_count, Grid};
use crate::rng;
use rand::Rng;
use std::fmt::Write as _;
use std::path::Path;

const TWO_PI: f64 = std::f64::consts::TAU;

/// Spectral low-pass: keeps modes with 0 < |k|^2 <= lambda.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    lambda: f64,
}

impl FilterSpec {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "filter cutoff lambda = {lambda} must be >= 1"
            )));
        }
        Ok(FilterSpec { lambda })
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn keeps(&self, k1: i64, k2: i64) -> bool {
        let ksq = (k1 * k1 + k2 * k2) as f64;
        ksq > 0.0 && ksq <= self.lambda
    }

    /// Number of retained lattice modes (conjugate pairs counted separately).
    pub fn retained_mode_count(&self) -> usize {
        shell_mode_count(self.lambda)
    }
}

/// Distance on the 2*pi-periodic torus.
pub fn periodic_distance(x: [f64; 2], y: [f64; 2]) -> f64 {
    let mut s = 0.0;
    for c in 0..2 {
        let d = (x[c] - y[c]).rem_euclid(TWO_PI);
        let d = d.min(TWO_PI - d);
        s += d * d;
    }
    s.sqrt()
}

#[derive(Debug, Clone)]
pub struct ObservationNetwork {
    grid: Grid,
    points: Vec<[f64; 2]>,
    point_cells: Vec<[usize; 2]>,
    r: f64,
    h: f64,
    gamma: f64,
    cell_of: Vec<u32>,
    cell_counts: Vec<usize>,
    disc_members: Vec<Vec<u32>>,
}

/// Build the network: snap points to the grid, assign every grid point to
/// its nearest measurement point (ties to the lowest index), compute the
/// grid-sampled sup-min distance h and the disc membership lists.
pub fn build_network(points: &[[f64; 2]], r: f64, grid: Grid) -> Result<ObservationNetwork> {
    if points.is_empty() {
        return Err(Error::BadNetwork("no measurement points".into()));
    }
    if !(r > 0.0) {
        return Err(Error::BadNetwork(format!("disc radius r = {r} must be > 0")));
    }
    let n = grid.n();
    let cell = TWO_PI / n as f64;
    let snap = |x: f64| -> usize {
        let i = (x.rem_euclid(TWO_PI) / cell).round() as usize;
        i % n
    };
    let point_cells: Vec<[usize; 2]> = points.iter().map(|p| [snap(p[0]), snap(p[1])]).collect();
    for (j, pc) in point_cells.iter().enumerate() {
        for (i, other) in point_cells[..j].iter().enumerate() {
            if pc == other {
                return Err(Error::BadNetwork(format!(
                    "points {i} and {j} coincide after snapping to the grid"
                )));
            }
        }
    }
    let snapped: Vec<[f64; 2]> = point_cells
        .iter()
        .map(|pc| [pc[0] as f64 * cell, pc[1] as f64 * cell])
        .collect();

    // wrapped per-axis integer distance, squared
    let axis_sq = |a: usize, b: usize| -> u64 {
        let d = a.abs_diff(b);
        let d = d.min(n - d) as u64;
        d * d
    };
    let r_cells_sq = (r / cell) * (r / cell);
    let mut cell_of = vec![0u32; n * n];
    let mut max_min_sq = 0u64;
    let mut disc_members: Vec<Vec<u32>> = vec![Vec::new(); points.len()];
    for b in 0..n {
        for a in 0..n {
            let idx = b * n + a;
            let mut best = u64::MAX;
            let mut owner = 0u32;
            for (j, pc) in point_cells.iter().enumerate() {
                let d = axis_sq(a, pc[0]) + axis_sq(b, pc[1]);
                if d < best {
                    best = d;
                    owner = j as u32;
                }
                if (d as f64) < r_cells_sq {
                    disc_members[j].push(idx as u32);
                }
            }
            cell_of[idx] = owner;
            if best > max_min_sq {
                max_min_sq = best;
            }
        }
    }
    let h = (max_min_sq as f64).sqrt() * cell;
    let gamma = r / h;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::GammaOutOfRange { gamma });
    }
    let mut cell_counts = vec![0usize; points.len()];
    for &o in &cell_of {
        cell_counts[o as usize] += 1;
    }
    for (j, d) in disc_members.iter().enumerate() {
        if d.is_empty() {
            return Err(Error::BadNetwork(format!("disc {j} contains no grid points")));
        }
    }
    Ok(ObservationNetwork {
        grid,
        points: snapped,
        point_cells,
        r,
        h,
        gamma,
        cell_of,
        cell_counts,
        disc_members,
    })
}

impl ObservationNetwork {
    pub fn grid(&self) -> Grid {
        self.grid
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    /// Grid-sampled sup-min distance to the measurement points.
    pub fn h(&self) -> f64 {
        self.h
    }
    /// Aspect ratio r/h of Theorem-type certification, in (0,1).
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn cell_counts(&self) -> &[usize] {
        &self.cell_counts
    }
    pub fn disc_point_counts(&self) -> Vec<usize> {
        self.disc_members.iter().map(|d| d.len()).collect()
    }
    pub fn cell_of(&self) -> &[u32] {
        &self.cell_of
    }

    /// Grid indices of the snapped measurement points.
    pub fn point_grid_indices(&self) -> &[[usize; 2]] {
        &self.point_cells
    }

    /// Indicator of Voronoi cell j sampled on the grid.
    pub fn cell_mask(&self, j: usize) -> Vec<f64> {
        self.cell_of
            .iter()
            .map(|&o| if o as usize == j { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Local-average measurements: the mean of the field over the grid points of
/// each open disc d(y, x_j) < r.
pub fn measure(field: &SpectralField, net: &ObservationNetwork) -> Vec<[f64; 2]> {
    measure_physical(&field.to_physical(), net)
}

pub fn measure_physical(phys: &PhysicalField, net: &ObservationNetwork) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(net.len());
    for members in &net.disc_members {
        let mut m = [0.0; 2];
        for c in 0..2 {
            let data = phys.component(c);
            let mut s = 0.0;
            for &idx in members {
                s += data[idx as usize];
            }
            m[c] = s / members.len() as f64;
        }
        out.push(m);
    }
    out
}

/// Piecewise-constant interpolant: value m_j on Voronoi cell j.
pub fn interpolate(m: &[[f64; 2]], net: &ObservationNetwork) -> Result<PhysicalField> {
    if m.len() != net.len() {
        return Err(Error::MeasurementLength {
            got: m.len(),
            want: net.len(),
        });
    }
    let mut out = PhysicalField::zero(net.grid);
    for (idx, &owner) in net.cell_of.iter().enumerate() {
        let v = m[owner as usize];
        out.component_mut(0)[idx] = v[0];
        out.component_mut(1)[idx] = v[1];
    }
    Ok(out)
}

/// P_lambda: zero all modes with |k|^2 > lambda (and the mean mode).
pub fn spectral_filter(field: &SpectralField, spec: &FilterSpec) -> SpectralField {
    let mut out = field.clone();
    spectral_filter_in_place(&mut out, spec);
    out
}

pub fn spectral_filter_in_place(field: &mut SpectralField, spec: &FilterSpec) {
    let grid = field.grid();
    let n = grid.n();
    for j in 0..n {
        let k2 = grid.wavenumber(j);
        for i in 0..n {
            let k1 = grid.wavenumber(i);
            if !spec.keeps(k1, k2) {
                let idx = j * n + i;
                field.component_mut(0)[idx] = Default::default();
                field.component_mut(1)[idx] = Default::default();
            }
        }
    }
}

/// The interpolant observable J_h U = P_lambda P_H I_h U.
pub fn observe(field: &SpectralField, net: &ObservationNetwork, spec: &FilterSpec) -> SpectralField {
    let m = measure(field, net);
    let interp = interpolate(&m, net).expect("measurement count matches network");
    let mut out = SpectralField::from_physical(&interp);
    out.project_leray();
    spectral_filter_in_place(&mut out, spec);
    out
}

/// Result of the type-I certification of I_h.
#[derive(Debug, Clone, Copy)]
pub struct TypeOneCertificate {
    /// max over trials of ||Phi - I_h Phi||_{L2}^2 / (h^2 ||Phi||_{H1}^2)
    pub c_measured: f64,
    /// bound by the conditional rule: the exact-case constant when h = 2*pi/kappa
    /// for integer kappa, otherwise the general-case constant (16x larger)
    pub c0_bound: f64,
    /// 2 * 3^6 / (pi gamma^2): the constant for h of the form 2*pi/kappa
    pub c0_exact_case: f64,
    /// 2^5 * 3^6 / (pi gamma^2): the constant valid for arbitrary h
    pub c0_general: f64,
    pub gamma: f64,
    pub h: f64,
    pub trials: usize,
}

pub fn type_one_c0(gamma: f64, exact_case: bool) -> f64 {
    let base = if exact_case { 2.0 } else { 32.0 };
    base * 729.0 / (std::f64::consts::PI * gamma * gamma)
}

/// Monte-Carlo certification of the type-I property of the piecewise
/// constant interpolant over random band-limited divergence-free fields.
pub fn certify_type1(net: &ObservationNetwork, trials: usize, seed: u64) -> TypeOneCertificate {
    let grid = net.grid();
    let kmax_sq = (grid.dealias_cutoff() * grid.dealias_cutoff()) as f64;
    let run_trial = |t: usize| -> f64 {
        let mut r = rng::keyed("certify", seed, t as u64, 0, 0);
        let mut phi = SpectralField::random_div_free(grid, 1.0, kmax_sq, &mut r);
        let h1 = phi.h1_norm();
        phi.scale(1.0 / h1);
        let phys = phi.to_physical();
        let m = measure_physical(&phys, net);
        let interp = interpolate(&m, net).expect("lengths match");
        let mut diff = phys;
        for c in 0..2 {
            for (d, i) in diff.component_mut(c).iter_mut().zip(interp.component(c)) {
                *d -= i;
            }
        }
        diff.l2_norm_sq_quadrature() / (net.h * net.h)
    };
    let ratios = crate::parallel::map_indexed(trials, run_trial);
    let c_measured = ratios.into_iter().fold(0.0f64, f64::max);
    let kappa = TWO_PI / net.h;
    let exact = (kappa - kappa.round()).abs() <= 1e-9 * kappa;
    TypeOneCertificate {
        c_measured,
        c0_bound: type_one_c0(net.gamma, exact),
        c0_exact_case: type_one_c0(net.gamma, true),
        c0_general: type_one_c0(net.gamma, false),
        gamma: net.gamma,
        h: net.h,
        trials,
    }
}

/// Uniform k x k measurement grid on [0, 2*pi)^2.
pub fn uniform_grid_points(k: usize) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            pts.push([TWO_PI * a as f64 / k as f64, TWO_PI * b as f64 / k as f64]);
        }
    }
    pts
}

/// Uniformly random measurement points from the keyed stream.
pub fn random_points(count: usize, seed: u64) -> Vec<[f64; 2]> {
    (0..count)
        .map(|i| {
            let mut r = rng::keyed("network", seed, i as u64, 0, 0);
            [r.gen::<f64>() * TWO_PI, r.gen::<f64>() * TWO_PI]
        })
        .collect()
}

/// Parsed network definition file: header fields plus explicit points.
///
/// Format: lines of `key = value` headers (`r` required; `seed` and `count`
/// optional, used to generate a random layout when no points are listed),
/// then one `x y` record per point.  `#` starts a comment.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub r: f64,
    pub seed: Option<u64>,
    pub count: Option<usize>,
    pub points: Vec<[f64; 2]>,
}

impl NetworkSpec {
    pub fn parse(text: &str) -> Result<NetworkSpec> {
        let mut r = None;
        let mut seed = None;
        let mut count = None;
        let mut points = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::ConfigParse {
                line: lineno + 1,
                msg,
            };
            if let Some((key, value)) = line.split_once('=') {
                let (key, value) = (key.trim(), value.trim());
                match key {
                    "r" => r = Some(value.parse::<f64>().map_err(|e| err(e.to_string()))?),
                    "seed" => seed = Some(value.parse::<u64>().map_err(|e| err(e.to_string()))?),
                    "count" => {
                        count = Some(value.parse::<usize>().map_err(|e| err(e.to_string()))?)
                    }
                    other => return Err(err(format!("unknown header field `{other}`"))),
                }
            } else {
                let mut it = line.split_whitespace();
                let x = it
                    .next()
                    .ok_or_else(|| err("expected `x y`".into()))?
                    .parse::<f64>()
                    .map_err(|e| err(e.to_string()))?;
                let y = it
                    .next()
                    .ok_or_else(|| err("expected `x y`".into()))?
                    .parse::<f64>()
                    .map_err(|e| err(e.to_string()))?;
                if it.next().is_some() {
                    return Err(err("trailing tokens after `x y`".into()));
                }
                points.push([x, y]);
            }
        }
        let r = r.ok_or(Error::ConfigParse {
            line: 0,
            msg: "missing required header field `r`".into(),
        })?;
        Ok(NetworkSpec {
            r,
            seed,
            count,
            points,
        })
    }

    pub fn load(path: &Path) -> Result<NetworkSpec> {
        NetworkSpec::parse(&std::fs::read_to_string(path)?)
    }

    /// Materialize the point list (explicit points, or a seeded random layout).
    pub fn resolve_points(&self) -> Result<Vec<[f64; 2]>> {
        if !self.points.is_empty() {
            return Ok(self.points.clone());
        }
        match (self.seed, self.count) {
            (Some(seed), Some(count)) if count > 0 => Ok(random_points(count, seed)),
            _ => Err(Error::BadNetwork(
                "network file lists no points and no usable `seed`/`count` pair".into(),
            )),
        }
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "r = {}", self.r);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed = {seed}");
        }
        if let Some(count) = self.count {
            let _ = writeln!(s, "count = {count}");
        }
        for p in &self.points {
            let _ = writeln!(s, "{} {}", p[0], p[1]);
        }
        s
    }
}
