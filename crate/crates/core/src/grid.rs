//! Uniform cell-centered grid on the truncated cube [-L, L]^3.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Geometry of the truncated computational box: a cube of half-width `L`
/// with `n` cells per axis and samples at cell centers.
///
/// `n` must be even and at least 8 so the domain-doubling convolution in the
/// Poisson solver is well formed. Two fields are sample-compatible exactly
/// when they share a `GridSpec`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    half_width: T,
    n: usize,
}

impl<T: Real> GridSpec<T> {
    pub fn new(half_width: T, n: usize) -> Result<Self> {
        if !(half_width > T::zero()) || !half_width.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "half width must be positive and finite, got {}",
                half_width.f64()
            )));
        }
        if n < 8 || !n.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "cells per axis must be even and >= 8, got {n}"
            )));
        }
        Ok(Self { half_width, n })
    }

    /// Half-width L of the box.
    pub fn half_width(&self) -> T {
        self.half_width
    }

    /// Cells per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Cell spacing h = 2L/n.
    pub fn spacing(&self) -> T {
        (T::of(2.0) * self.half_width) / T::of_usize(self.n)
    }

    /// Cell volume h^3.
    pub fn cell_volume(&self) -> T {
        let h = self.spacing();
        h * h * h
    }

    /// Total number of samples n^3.
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of the i-th cell center along one axis.
    pub fn center(&self, i: usize) -> T {
        debug_assert!(i < self.n);
        -self.half_width + (T::of_usize(i) + T::of(0.5)) * self.spacing()
    }

    /// Flat index of cell (i, j, k), x-fastest.
    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.n && j < self.n && k < self.n);
        i + self.n * (j + self.n * k)
    }

    /// Position of the cell center for a flat index.
    pub fn position(&self, flat: usize) -> [T; 3] {
        let n = self.n;
        let i = flat % n;
        let j = (flat / n) % n;
        let k = flat / (n * n);
        [self.center(i), self.center(j), self.center(k)]
    }

    /// Iterator over (i, j, k) triples in flat (x-fastest) order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |k| (0..n).flat_map(move |j| (0..n).map(move |i| (i, j, k))))
    }

    pub fn same_grid(&self, other: &Self) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "L = {} n = {} vs L = {} n = {}",
                self.half_width.f64(),
                self.n,
                other.half_width.f64(),
                other.n
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_and_centers() {
        let g = GridSpec::<f64>::new(4.0, 64).unwrap();
        assert_eq!(g.spacing(), 0.125);
        assert_eq!(g.center(0), -4.0 + 0.0625);
        assert_eq!(g.center(63), 4.0 - 0.0625);
        assert_eq!(g.len(), 64 * 64 * 64);
    }

    #[test]
    fn rejects_odd_or_small_n() {
        assert!(GridSpec::<f64>::new(1.0, 7).is_err());
        assert!(GridSpec::<f64>::new(1.0, 9).is_err());
        assert!(GridSpec::<f64>::new(1.0, 6).is_err());
        assert!(GridSpec::<f64>::new(0.0, 16).is_err());
        assert!(GridSpec::<f64>::new(1.0, 8).is_ok());
    }

    #[test]
    fn flat_index_is_x_fastest() {
        let g = GridSpec::<f64>::new(1.0, 8).unwrap();
        assert_eq!(g.idx(1, 0, 0), 1);
        assert_eq!(g.idx(0, 1, 0), 8);
        assert_eq!(g.idx(0, 0, 1), 64);
        assert_eq!(g.position(1)[0], g.center(1));
    }

    #[test]
    fn mismatch_is_reported() {
        let a = GridSpec::<f64>::new(1.0, 8).unwrap();
        let b = GridSpec::<f64>::new(1.0, 16).unwrap();
        assert!(a.same_grid(&b).is_err());
        assert!(a.same_grid(&a).is_ok());
    }
}
