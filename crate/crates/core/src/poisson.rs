//! Free-space Poisson solver on the truncated box.
//!
//! The solution of -lap(u) = rho is the kernel convolution u = K * rho h^3,
//! evaluated either by FFT on a zero-padded doubled grid or (for small n) by
//! direct O(n^6) summation against the same kernel table. The kernel is the
//! free-space lattice Green function of the 7-point Laplacian rather than the
//! pointwise-sampled continuum kernel 1/(4 pi |x|): the two agree in the far
//! field to O((h/r)^2), but only the lattice kernel makes the discrete
//! residual lap_h(u) + rho vanish to machine precision, which the residual
//! certificates require. See `lattice_green_octant` for the construction.

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::Result;
#[cfg(test)]
use crate::error::Error;
use crate::fft::Fft3;
use crate::field::ScalarField;
use crate::grid::GridSpec;
use crate::scalar::Real;

/// Free-space lattice Green function of the 7-point Laplacian at the origin
/// (Watson's integral, (1/2pi)^3 int 1/(2 sum(1-cos)) dtheta =
/// sqrt(6) Gamma(1/24) Gamma(5/24) Gamma(7/24) Gamma(11/24) / (192 pi^3)).
pub const LATTICE_GREEN_ORIGIN: f64 = 0.252_731_009_858_663;

/// Mass fraction in the outer shell above which the free-space truncation is
/// considered violated and a warning is emitted.
pub const TRUNCATION_WARN_FRACTION: f64 = 1e-6;

/// Octant table of the free-space lattice Green function G(m) for
/// m in [0, max_disp]^3, in lattice units (spacing 1, unit point charge).
///
/// Construction: the periodic lattice Green function on an M^3 lattice
/// (M = 4(max_disp + 1)) is the inverse DFT of 1/D(theta) with the zero mode
/// dropped, computed here as three passes of even-symmetric 1-D transforms
/// over the octant. It differs from the free-space function by a smooth image
/// contribution whose discrete Laplacian is exactly the compensating uniform
/// background 1/M^3; subtracting |m|^2/(6 M^3) cancels that background
/// exactly (the second difference of m^2 is 2 per axis), and the remaining
/// additive constant is calibrated at the origin against Watson's value.
/// What is left satisfies lap_1 G = -delta exactly and deviates from the
/// free-space function only by a residual discrete-harmonic term of relative
/// size O((m/M)^4), far below every tolerance used here.
fn lattice_green_octant<T: Real>(max_disp: usize) -> Vec<T> {
    let m_big = 4 * (max_disp + 1);
    let half = m_big / 2;
    let side = half + 1;
    let out_side = max_disp + 1;

    // symbol 1/D on the octant of the theta grid, zero mode dropped
    let inv_d: Vec<T> = {
        let cosines: Vec<T> = (0..side)
            .map(|k| (T::of(2.0) * T::PI() * T::of_usize(k) / T::of_usize(m_big)).cos())
            .collect();
        let mut a = vec![T::zero(); side * side * side];
        for k3 in 0..side {
            for k2 in 0..side {
                for k1 in 0..side {
                    if k1 == 0 && k2 == 0 && k3 == 0 {
                        continue;
                    }
                    let d = T::of(2.0)
                        * (T::of(3.0) - cosines[k1] - cosines[k2] - cosines[k3]);
                    a[k1 + side * (k2 + side * k3)] = T::one() / d;
                }
            }
        }
        a
    };

    // three cosine-transform passes: axis lengths shrink from `side` to `out_side`
    let mut planner = rustfft::FftPlanner::<T>::new();
    let plan = planner.plan_fft_forward(m_big);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); m_big];
    let mut scratch =
        vec![Complex::new(T::zero(), T::zero()); plan.get_inplace_scratch_len()];

    // pass over the first (fastest) axis of a [len0, d1, d2] array, producing
    // [out_side, d1, d2]
    let mut pass = |data: &[T], len0: usize, rest: usize| -> Vec<T> {
        let mut out = vec![T::zero(); out_side * rest];
        for r in 0..rest {
            let line = &data[r * len0..(r + 1) * len0];
            for k in 0..m_big {
                let fold = k.min(m_big - k);
                buf[k] = Complex::new(line[fold], T::zero());
            }
            plan.process_with_scratch(&mut buf, &mut scratch);
            for m in 0..out_side {
                out[r * out_side + m] = buf[m].re;
            }
        }
        out
    };

    // data layout is x-fastest; transform axis 0, then rotate the roles by
    // transposing so each pass always works on the fastest axis
    fn transpose_to_front<T: Real>(data: &[T], d0: usize, d1: usize, d2: usize) -> Vec<T> {
        // [d0, d1, d2] -> [d1, d2, d0]
        let mut out = vec![T::zero(); data.len()];
        for k in 0..d2 {
            for j in 0..d1 {
                for i in 0..d0 {
                    out[j + d1 * (k + d2 * i)] = data[i + d0 * (j + d1 * k)];
                }
            }
        }
        out
    }

    let a = pass(&inv_d, side, side * side); // [out, side, side] along axis0
    let a = transpose_to_front(&a, out_side, side, side); // [side, side, out]
    let a = pass(&a, side, side * out_side); // [out, side, out]
    let a = transpose_to_front(&a, out_side, side, out_side); // [side, out, out]
    let a = pass(&a, side, out_side * out_side); // [out, out, out]
    // the final layout is an axis permutation of (m1, m2, m3); the symbol is
    // symmetric under coordinate exchange, so the table is too

    let m3 = T::of_usize(m_big) * T::of_usize(m_big) * T::of_usize(m_big);
    let background = T::one() / (T::of(6.0) * m3);
    let mut table = vec![T::zero(); out_side * out_side * out_side];
    for k in 0..out_side {
        for j in 0..out_side {
            for i in 0..out_side {
                let periodic = a[i + out_side * (j + out_side * k)] / m3;
                let m2 = T::of_usize(i * i + j * j + k * k);
                table[i + out_side * (j + out_side * k)] = periodic - m2 * background;
            }
        }
    }
    let shift = table[0] - T::of(LATTICE_GREEN_ORIGIN);
    for v in &mut table {
        *v -= shift;
    }
    table
}

/// Potential samples on the box plus a one-cell ghost ring, so the 7-point
/// Laplacian is defined at every box node.
#[derive(Debug, Clone)]
pub struct GhostedPotential<T> {
    grid: GridSpec<T>,
    values: Vec<T>, // (n+2)^3, x-fastest, index shifted by +1
}

impl<T: Real> GhostedPotential<T> {
    fn side(&self) -> usize {
        self.grid.n() + 2
    }

    /// Value at box node (i, j, k); ghost nodes addressed with -1 and n.
    #[inline]
    pub fn at(&self, i: isize, j: isize, k: isize) -> T {
        let s = self.side() as isize;
        debug_assert!(i >= -1 && j >= -1 && k >= -1 && i < s - 1 && j < s - 1 && k < s - 1);
        let s = self.side();
        self.values[(i + 1) as usize + s * ((j + 1) as usize + s * (k + 1) as usize)]
    }

    /// The box samples as a plain field.
    pub fn field(&self) -> ScalarField<T> {
        let n = self.grid.n();
        let mut values = Vec::with_capacity(self.grid.len());
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    values.push(self.at(i as isize, j as isize, k as isize));
                }
            }
        }
        ScalarField::from_values(self.grid, values).expect("sized to grid")
    }

    ///7-point discrete Laplacian, defined on every box node via the ghosts.
    pub fn laplacian(&self) -> ScalarField<T> {
        let n = self.grid.n();
        let h = self.grid.spacing();
        let inv_h2 = T::one() / (h * h);
        let mut values = Vec::with_capacity(self.grid.len());
        for k in 0..n as isize {
            for j in 0..n as isize {
                for i in 0..n as isize {
                    let c = self.at(i, j, k);
                    let s = self.at(i + 1, j, k)
                        + self.at(i - 1, j, k)
                        + self.at(i, j + 1, k)
                        + self.at(i, j - 1, k)
                        + self.at(i, j, k + 1)
                        + self.at(i, j, k - 1)
                        - T::of(6.0) * c;
                    values.push(s * inv_h2);
                }
            }
        }
        ScalarField::from_values(self.grid, values).expect("sized to grid")
    }
}

/// FFT convolution solver for -lap(u) = rho with free-space behavior,
/// immutable after construction and safe to share across threads.
pub struct PoissonSolver<T> {
    grid: GridSpec<T>,
    p: usize,
    khat: Vec<Complex<T>>, // FFT of wrapped kernel, scale h^2 / p^3 folded in
    fft: Fft3<T>,
    table: Vec<T>, // octant, side table_max + 1
    table_max: usize,
}

impl<T: Real> PoissonSolver<T> {
    pub fn new(grid: GridSpec<T>) -> Self {
        let n = grid.n();
        let table_max = n + 2; // ghost ring adds one displacement on each side
        let table = lattice_green_octant::<T>(table_max);
        let p = 2 * n + 4;
        let fft = Fft3::new(p);

        let side = table_max + 1;
        let h = grid.spacing();
        let scale = h * h / (T::of_usize(p) * T::of_usize(p) * T::of_usize(p));
        let mut khat = vec![Complex::new(T::zero(), T::zero()); p * p * p];
        for k in 0..p {
            let fk = k.min(p - k);
            for j in 0..p {
                let fj = j.min(p - j);
                for i in 0..p {
                    let fi = i.min(p - i);
                    khat[i + p * (j + p * k)] =
                        Complex::new(table[fi + side * (fj + side * fk)] * scale, T::zero());
                }
            }
        }
        fft.forward(&mut khat);

        Self {
            grid,
            p,
            khat,
            fft,
            table,
            table_max,
        }
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    /// Kernel table entry at componentwise displacement (lattice units).
    pub fn kernel_value(&self, d: [usize; 3]) -> T {
        let s = self.table_max + 1;
        assert!(d.iter().all(|&c| c <= self.table_max));
        self.table[d[0] + s * (d[1] + s * d[2])]
    }

    fn check_source(&self, rho: &ScalarField<T>) -> Result<()> {
        rho.grid().same_grid(&self.grid)?;
        rho.check_finite()?;
        let frac = rho.outer_shell_fraction();
        if frac.f64() > TRUNCATION_WARN_FRACTION {
            log::warn!(
                "source has {:.3e} of its mass in the outer 25% shell; \
                 free-space truncation may be inaccurate",
                frac.f64()
            );
        }
        Ok(())
    }

    /// Solve with a one-cell ghost ring in the output.
    pub fn solve_ghosted(&self, rho: &ScalarField<T>) -> Result<GhostedPotential<T>> {
        self.check_source(rho)?;
        let n = self.grid.n();
        let p = self.p;
        let mut work = vec![Complex::new(T::zero(), T::zero()); p * p * p];
        // sources occupy slots [1, n] so the ghost ring at slots {0, n+1} stays causal
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    work[(i + 1) + p * ((j + 1) + p * (k + 1))] =
                        Complex::new(rho.values()[i + n * (j + n * k)], T::zero());
                }
            }
        }
        self.fft.forward(&mut work);
        for (w, k) in work.iter_mut().zip(&self.khat) {
            *w *= k;
        }
        self.fft.inverse(&mut work);

        let side = n + 2;
        let mut values = vec![T::zero(); side * side * side];
        for k in 0..side {
            for j in 0..side {
                for i in 0..side {
                    values[i + side * (j + side * k)] = work[i + p * (j + p * k)].re;
                }
            }
        }
        Ok(GhostedPotential {
            grid: self.grid,
            values,
        })
    }

    /// FFT-convolution solve restricted to the box.
    pub fn solve(&self, rho: &ScalarField<T>) -> Result<ScalarField<T>> {
        Ok(self.solve_ghosted(rho)?.field())
    }

    /// Direct O(n^6) summation against the same kernel table; the oracle path
    /// for the fast solver, practical for n <= 32.
    pub fn solve_direct(&self, rho: &ScalarField<T>) -> Result<ScalarField<T>> {
        self.check_source(rho)?;
        let n = self.grid.n();
        let h = self.grid.spacing();
        let scale = h * h;
        let side = self.table_max + 1;
        let table = &self.table;
        let src = rho.values();
        let values: Vec<T> = (0..n * n * n)
            .into_par_iter()
            .map(|flat| {
                let i = flat % n;
                let j = (flat / n) % n;
                let k = flat / (n * n);
                let mut acc = T::zero();
                let mut idx = 0usize;
                for kk in 0..n {
                    let dk = kk.max(k) - kk.min(k);
                    for jj in 0..n {
                        let dj = jj.max(j) - jj.min(j);
                        let base = side * (dj + side * dk);
                        for ii in 0..n {
                            let di = ii.max(i) - ii.min(i);
                            acc += table[di + base] * src[idx];
                            idx += 1;
                        }
                    }
                }
                acc * scale
            })
            .collect();
        ScalarField::from_values(self.grid, values)
    }
}

/// One-shot free-space Poisson solve; builds a solver internally. Iterative
/// callers should construct a [`PoissonSolver`] once and reuse it.
pub fn solve_free_space_poisson<T: Real>(rho: &ScalarField<T>) -> Result<ScalarField<T>> {
    PoissonSolver::new(*rho.grid()).solve(rho)
}

/// 7-point Laplacian of a plain box field. Face nodes, where the stencil
/// would leave the box, are set to zero; use [`GhostedPotential::laplacian`]
/// when exact boundary handling is needed.
pub fn laplacian_interior<T: Real>(u: &ScalarField<T>) -> ScalarField<T> {
    let grid = *u.grid();
    let n = grid.n();
    let h = grid.spacing();
    let inv_h2 = T::one() / (h * h);
    let v = u.values();
    let mut out = vec![T::zero(); grid.len()];
    for k in 1..n - 1 {
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let f = i + n * (j + n * k);
                let s = v[f + 1] + v[f - 1] + v[f + n] + v[f - n] + v[f + n * n]
                    + v[f - n * n]
                    - T::of(6.0) * v[f];
                out[f] = s * inv_h2;
            }
        }
    }
    ScalarField::from_values(grid, out).expect("sized to grid")
}
