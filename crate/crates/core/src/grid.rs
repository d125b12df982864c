use crate::error::{Error, Result};

/// Square periodic grid on [0, 2*pi)^2 with `n` points per dimension.
///
/// Wavenumbers are stored in the usual FFT layout: index `i` holds
/// `k = i` for `i <= n/2` and `k = i - n` otherwise.  Dealiasing keeps the
/// circular shell `|k| <= floor(n/3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    n: usize,
    dealias_cutoff: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(n));
        }
        Ok(Grid {
            n,
            dealias_cutoff: n / 3,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Largest retained wavenumber magnitude under the 2/3 rule.
    #[inline]
    pub fn dealias_cutoff(&self) -> usize {
        self.dealias_cutoff
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Wavenumber for FFT index `i`.
    #[inline]
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i <= self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// FFT index for wavenumber `k` (must satisfy |k| < n/2 or k = n/2).
    #[inline]
    pub fn index_of(&self, k: i64) -> usize {
        let n = self.n as i64;
        debug_assert!(k > -n / 2 && k <= n / 2);
        k.rem_euclid(n) as usize
    }

    /// Flat index of wavevector (k1, k2).
    #[inline]
    pub fn mode_index(&self, k1: i64, k2: i64) -> usize {
        self.index_of(k2) * self.n + self.index_of(k1)
    }

    /// Iterate (flat index, k1, k2) over the whole stored lattice.
    pub fn modes(&self) -> impl Iterator<Item = (usize, i64, i64)> + '_ {
        let n = self.n;
        (0..n * n).map(move |idx| {
            let k1 = self.wavenumber(idx % n);
            let k2 = self.wavenumber(idx / n);
            (idx, k1, k2)
        })
    }

    /// Physical coordinate of grid index (a, b).
    #[inline]
    pub fn point(&self, a: usize, b: usize) -> [f64; 2] {
        let step = std::f64::consts::TAU / self.n as f64;
        [a as f64 * step, b as f64 * step]
    }
}

/// Number of lattice points k with 0 < |k|^2 <= lambda.
pub fn shell_mode_count(lambda: f64) -> usize {
    if lambda < 1.0 {
        return 0;
    }
    let kmax = lambda.sqrt().floor() as i64;
    let mut count = 0;
    for k1 in -kmax..=kmax {
        for k2 in -kmax..=kmax {
            let ksq = (k1 * k1 + k2 * k2) as f64;
            if ksq > 0.0 && ksq <= lambda {
                count += 1;
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(Grid::new(7).is_err());
        assert!(Grid::new(12).is_err());
        assert!(Grid::new(4).is_err());
        let g = Grid::new(8).unwrap();
        assert_eq!(g.dealias_cutoff(), 2);
        let g = Grid::new(512).unwrap();
        assert_eq!(g.dealias_cutoff(), 170);
    }

    #[test]
    fn wavenumber_round_trip() {
        let g = Grid::new(16).unwrap();
        for i in 0..16 {
            let k = g.wavenumber(i);
            assert_eq!(g.index_of(k), i);
        }
        assert_eq!(g.wavenumber(0), 0);
        assert_eq!(g.wavenumber(8), 8);
        assert_eq!(g.wavenumber(9), -7);
        assert_eq!(g.wavenumber(15), -1);
    }

    #[test]
    fn shell_counts() {
        // |k|^2 = 1 has 4 points, |k|^2 <= 2 has 8
        assert_eq!(shell_mode_count(1.0), 4);
        assert_eq!(shell_mode_count(2.0), 8);
        // the filter cutoff used throughout the experiments
        assert_eq!(shell_mode_count(80.0), 248);
    }
}
