//! Grid-sampled scalar and vector fields with norm and quasi-norm calculators.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::scalar::Real;

/// Scalar samples at the cell centers of a [`GridSpec`], x-fastest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    grid: GridSpec<T>,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn zeros(grid: GridSpec<T>) -> Self {
        Self {
            grid,
            values: vec![T::zero(); grid.len()],
        }
    }

    pub fn from_values(grid: GridSpec<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Sample an analytic profile at every cell center.
    pub fn from_fn(grid: GridSpec<T>, mut f: impl FnMut([T; 3]) -> T) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..n {
            let z = grid.center(k);
            for j in 0..n {
                let y = grid.center(j);
                for i in 0..n {
                    values.push(f([grid.center(i), y, z]));
                }
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> T {
        self.values[self.grid.idx(i, j, k)]
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidField("field contains NaN or Inf".into()))
        }
    }

    /// Precondition check for fields representing a density (rho_f or g).
    pub fn check_nonnegative(&self) -> Result<()> {
        self.check_finite()?;
        if self.values.iter().all(|v| *v >= T::zero()) {
            Ok(())
        } else {
            Err(Error::InvalidField("density field has negative samples".into()))
        }
    }

    pub fn min_value(&self) -> T {
        self.values.iter().fold(T::infinity(), |a, &b| a.min(b))
    }

    pub fn max_value(&self) -> T {
        self.values.iter().fold(T::neg_infinity(), |a, &b| a.max(b))
    }

    /// Midpoint-rule integral: sum of samples times h^3.
    pub fn integral(&self) -> T {
        let s: T = self.values.iter().copied().sum();
        s * self.grid.cell_volume()
    }

    /// Rescale samples in place so that the midpoint integral is exactly `target`.
    pub fn normalize_to(&mut self, target: T) -> Result<()> {
        let total = self.integral();
        if !(total > T::zero()) {
            return Err(Error::InvalidField(format!(
                "cannot normalize field with integral {}",
                total.f64()
            )));
        }
        let scale = target / total;
        for v in &mut self.values {
            *v *= scale;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T + Sync) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.grid.same_grid(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scaled(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// L2 norm of the difference, relative to the L2 norm of `other`.
    pub fn relative_l2_error(&self, other: &Self) -> Result<T> {
        self.grid.same_grid(&other.grid)?;
        let mut num = T::zero();
        let mut den = T::zero();
        for (&a, &b) in self.values.iter().zip(&other.values) {
            let d = a - b;
            num += d * d;
            den += b * b;
        }
        if den == T::zero() {
            return Ok(num.sqrt());
        }
        Ok((num / den).sqrt())
    }

    /// Fraction of |field| mass lying in the outer 25% shell of the box
    /// (cells with max coordinate magnitude above 0.75 L). Used to warn when
    /// wrap-around would pollute the free-space solve.
    pub fn outer_shell_fraction(&self) -> T {
        let n = self.grid.n();
        let lo = n / 8; // centers with |x| > 0.75 L are the outer n/8 cells per side
        let hi = n - 1 - lo;
        let mut outer = T::zero();
        let mut total = T::zero();
        for (flat, &v) in self.values.iter().enumerate() {
            let i = flat % n;
            let j = (flat / n) % n;
            let k = flat / (n * n);
            let a = v.abs();
            total += a;
            if i < lo || i > hi || j < lo || j > hi || k < lo || k > hi {
                outer += a;
            }
        }
        if total == T::zero() {
            T::zero()
        } else {
            outer / total
        }
    }
}

/// Three scalar component arrays on a shared grid, x-fastest order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<T> {
    grid: GridSpec<T>,
    components: [Vec<T>; 3],
}

impl<T: Real> VectorField<T> {
    pub fn zeros(grid: GridSpec<T>) -> Self {
        let len = grid.len();
        Self {
            grid,
            components: [vec![T::zero(); len], vec![T::zero(); len], vec![T::zero(); len]],
        }
    }

    pub fn from_components(grid: GridSpec<T>, components: [Vec<T>; 3]) -> Result<Self> {
        for c in &components {
            if c.len() != grid.len() {
                return Err(Error::InvalidField(format!(
                    "expected {} samples per component, got {}",
                    grid.len(),
                    c.len()
                )));
            }
        }
        Ok(Self { grid, components })
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[T] {
        &self.components[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut [T] {
        &mut self.components[axis]
    }

    #[inline]
    pub fn at(&self, flat: usize) -> [T; 3] {
        [
            self.components[0][flat],
            self.components[1][flat],
            self.components[2][flat],
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        for c in &self.components {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidField("vector field contains NaN or Inf".into()));
            }
        }
        Ok(())
    }

    /// Pointwise Euclidean magnitude as a scalar field.
    pub fn magnitude(&self) -> ScalarField<T> {
        let values = (0..self.grid.len())
            .map(|f| {
                let [x, y, z] = self.at(f);
                (x * x + y * y + z * z).sqrt()
            })
            .collect();
        ScalarField {
            grid: self.grid,
            values,
        }
    }

    pub fn max_magnitude(&self) -> T {
        (0..self.grid.len()).fold(T::zero(), |acc, f| {
            let [x, y, z] = self.at(f);
            acc.max((x * x + y * y + z * z).sqrt())
        })
    }

    /// Quadrature of |v|^2 over the box.
    pub fn l2_norm_squared(&self) -> T {
        let mut s = T::zero();
        for c in &self.components {
            for &v in c {
                s += v * v;
            }
        }
        s * self.grid.cell_volume()
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.grid.same_grid(&other.grid)?;
        let components = [0, 1, 2].map(|a| {
            self.components[a]
                .iter()
                .zip(&other.components[a])
                .map(|(&x, &y)| x - y)
                .collect()
        });
        Ok(Self {
            grid: self.grid,
            components,
        })
    }
}

/// E = -grad(u): second-order central differences in the interior, one-sided
/// second-order stencils at the faces.
pub fn negative_gradient<T: Real>(u: &ScalarField<T>) -> Result<VectorField<T>> {
    u.check_finite()?;
    let grid = *u.grid();
    let n = grid.n();
    let h = grid.spacing();
    let half = T::of(0.5) / h;
    let inv2h = T::of(0.5) / h;
    let mut out = VectorField::zeros(grid);

    // strides per axis in the flat layout
    let stride = [1usize, n, n * n];
    for axis in 0..3 {
        let s = stride[axis];
        let comp = out.component_mut(axis);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let flat = i + n * (j + n * k);
                    let pos = [i, j, k][axis];
                    let d = if pos == 0 {
                        // one-sided: (-3 u0 + 4 u1 - u2) / (2h)
                        (T::of(-3.0) * u.values[flat] + T::of(4.0) * u.values[flat + s]
                            - u.values[flat + 2 * s])
                            * inv2h
                    } else if pos == n - 1 {
                        (T::of(3.0) * u.values[flat] - T::of(4.0) * u.values[flat - s]
                            + u.values[flat - 2 * s])
                            * inv2h
                    } else {
                        (u.values[flat + s] - u.values[flat - s]) * half
                    };
                    comp[flat] = -d;
                }
            }
        }
    }
    Ok(out)
}

/// Midpoint-rule L^p norm, p in [1, inf]. Pass `T::infinity()` for the sup norm.
pub fn lp_norm<T: Real>(u: &ScalarField<T>, p: T) -> Result<T> {
    u.check_finite()?;
    if p.is_infinite() && p > T::zero() {
        return Ok(u.values().iter().fold(T::zero(), |a, &v| a.max(v.abs())));
    }
    if !(p >= T::one()) {
        return Err(Error::InvalidParameter(format!(
            "Lp exponent must satisfy p >= 1, got {}",
            p.f64()
        )));
    }
    let mut s = T::zero();
    for &v in u.values() {
        s += v.abs().powf(p);
    }
    Ok((s * u.grid().cell_volume()).powf(T::one() / p))
}

/// Weak-L^p quasi-norm: sup over thresholds t of t (h^3 #{|u| >= t})^{1/p},
/// the thresholds swept over the sorted distinct sample magnitudes (the sup
/// over continuous t is attained in the limit from below at a sample value,
/// which counts the level set inclusively).
pub fn weak_lp_quasinorm<T: Real>(u: &ScalarField<T>, p: T) -> Result<T> {
    u.check_finite()?;
    if !(p > T::zero()) || p.is_infinite() {
        return Err(Error::InvalidParameter(format!(
            "weak-Lp exponent must be finite and positive, got {}",
            p.f64()
        )));
    }
    let mut mags: Vec<T> = u.values().iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let h3 = u.grid().cell_volume();
    let inv_p = T::one() / p;
    let mut best = T::zero();
    for (count0, &t) in mags.iter().enumerate() {
        if t == T::zero() {
            break;
        }
        // skip duplicates: only the largest count per magnitude matters,
        // so evaluate at the last occurrence
        if count0 + 1 < mags.len() && mags[count0 + 1] == t {
            continue;
        }
        let measure = h3 * T::of_usize(count0 + 1);
        best = best.max(t * measure.powf(inv_p));
    }
    Ok(best)
}

/// The L^p and weak-L^p sizes reported for densities and potentials.
#[derive(Debug, Clone, Copy)]
pub struct NormReport<T> {
    pub l1: T,
    pub l53: T,
    pub l2: T,
    pub linf: T,
    pub weak_l3: T,
    pub weak_l32: T,
}

impl<T: Real> NormReport<T> {
    pub fn of(u: &ScalarField<T>) -> Result<Self> {
        Ok(Self {
            l1: lp_norm(u, T::one())?,
            l53: lp_norm(u, T::of(5.0 / 3.0))?,
            l2: lp_norm(u, T::of(2.0))?,
            linf: lp_norm(u, T::infinity())?,
            weak_l3: weak_lp_quasinorm(u, T::of(3.0))?,
            weak_l32: weak_lp_quasinorm(u, T::of(1.5))?,
        })
    }
}
