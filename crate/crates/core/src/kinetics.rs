//! Particle representation of the phase-space density and the characteristic
//! flow: low-discrepancy sampling of initial data, cloud-in-cell deposition,
//! field gathering, and kick-drift-kick time stepping with self-consistent
//! field re-solves.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::electrostatics::{solve_split_field_with, ChargeMode, PotentialSplit, SolverSettings};
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::GridSpec;
use crate::poisson::PoissonSolver;
use crate::scalar::Real;

/// Equally weighted particles (X_i, V_i) with stable identities. Total mass
/// is exactly 1: each particle carries weight 1/N.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble<T> {
    positions: Vec<[T; 3]>,
    velocities: Vec<[T; 3]>,
    ids: Vec<u64>,
}

impl<T: Real> ParticleEnsemble<T> {
    pub fn new(positions: Vec<[T; 3]>, velocities: Vec<[T; 3]>, ids: Vec<u64>) -> Result<Self> {
        if positions.len() != velocities.len() || positions.len() != ids.len() {
            return Err(Error::InvalidSpec(
                "positions, velocities and ids must have equal length".into(),
            ));
        }
        if positions.is_empty() {
            return Err(Error::InvalidSpec("ensemble must hold at least one particle".into()));
        }
        let mut seen = vec![false; ids.len()];
        for &id in &ids {
            let i = id as usize;
            if i >= ids.len() || seen[i] {
                return Err(Error::InvalidSpec(
                    "ids must form a permutation of 0..N-1".into(),
                ));
            }
            seen[i] = true;
        }
        Ok(Self {
            positions,
            velocities,
            ids,
        })
    }

    pub fn count(&self) -> usize {
        self.positions.len()
    }

    /// Per-particle weight 1/N.
    pub fn weight(&self) -> T {
        T::one() / T::of_usize(self.count())
    }

    pub fn positions(&self) -> &[[T; 3]] {
        &self.positions
    }

    pub fn velocities(&self) -> &[[T; 3]] {
        &self.velocities
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn positions_mut(&mut self) -> &mut [[T; 3]] {
        &mut self.positions
    }

    pub fn velocities_mut(&mut self) -> &mut [[T; 3]] {
        &mut self.velocities
    }

    /// Map from particle id to storage index.
    pub fn index_by_id(&self) -> Vec<usize> {
        let mut map = vec![0usize; self.count()];
        for (idx, &id) in self.ids.iter().enumerate() {
            map[id as usize] = idx;
        }
        map
    }

    pub fn max_speed(&self) -> T {
        self.velocities.iter().fold(T::zero(), |acc, v| {
            acc.max((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
        })
    }
}

/// Spatial part of the initial data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpatialProfile<T> {
    Gaussian { sigma: T, center: [T; 3] },
    Ball { radius: T, center: [T; 3] },
    /// Two equal-width Gaussian bumps at x = -separation/2 and +separation/2.
    TwoBump { sigma: T, separation: T, weight_first: T },
    Point { position: [T; 3] },
}

impl<T: Real> SpatialProfile<T> {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            SpatialProfile::Gaussian { sigma, .. } => *sigma > T::zero(),
            SpatialProfile::Ball { radius, .. } => *radius > T::zero(),
            SpatialProfile::TwoBump {
                sigma,
                separation,
                weight_first,
            } => {
                *sigma > T::zero()
                    && *separation > T::zero()
                    && *weight_first >= T::zero()
                    && *weight_first <= T::one()
            }
            SpatialProfile::Point { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("invalid spatial profile {self:?}")))
        }
    }

    /// Normalized density at x. Point profiles have no density.
    pub fn density(&self, x: [T; 3]) -> T {
        match self {
            SpatialProfile::Gaussian { sigma, center } => gaussian_pdf3(x, *center, *sigma),
            SpatialProfile::Ball { radius, center } => {
                let r2 = dist2(x, *center);
                if r2 <= *radius * *radius {
                    let vol = T::of(4.0 / 3.0) * T::PI() * radius.powi(3);
                    T::one() / vol
                } else {
                    T::zero()
                }
            }
            SpatialProfile::TwoBump {
                sigma,
                separation,
                weight_first,
            } => {
                let half = *separation * T::of(0.5);
                let c1 = [-half, T::zero(), T::zero()];
                let c2 = [half, T::zero(), T::zero()];
                *weight_first * gaussian_pdf3(x, c1, *sigma)
                    + (T::one() - *weight_first) * gaussian_pdf3(x, c2, *sigma)
            }
            SpatialProfile::Point { .. } => T::zero(),
        }
    }

    /// Supremum of the density; none for point profiles.
    pub fn sup_density(&self) -> Option<T> {
        match self {
            SpatialProfile::Gaussian { sigma, .. } => Some(gaussian_peak3(*sigma)),
            SpatialProfile::Ball { radius, .. } => {
                Some(T::one() / (T::of(4.0 / 3.0) * T::PI() * radius.powi(3)))
            }
            SpatialProfile::TwoBump {
                sigma,
                separation,
                weight_first,
            } => {
                let peak = gaussian_peak3(*sigma);
                let half = *separation * T::of(0.5);
                let overlap = (-(half * half) * T::of(2.0)
                    / (T::of(2.0) * *sigma * *sigma))
                    .exp();
                let wmax = weight_first.max(T::one() - *weight_first);
                Some(peak * (wmax + (T::one() - wmax) * overlap))
            }
            SpatialProfile::Point { .. } => None,
        }
    }
}

/// Velocity part of the initial data. `PowerLaw { r }` has radial density
/// proportional to 1/(1+|v|)^r, normalizable only for r > 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityProfile<T> {
    Maxwellian { sigma: T },
    PowerLaw { r: T },
    Cold,
    Point { velocity: [T; 3] },
}

impl<T: Real> VelocityProfile<T> {
    fn validate(&self) -> Result<()> {
        match self {
            VelocityProfile::Maxwellian { sigma } => {
                if *sigma >= T::zero() {
                    Ok(())
                } else {
                    Err(Error::InvalidSpec("maxwellian sigma must be nonnegative".into()))
                }
            }
            VelocityProfile::PowerLaw { r } => {
                if *r > T::of(3.0) {
                    Ok(())
                } else {
                    Err(Error::InvalidSpec(format!(
                        "power-law decay exponent must exceed 3 for a normalizable tail, got {}",
                        r.f64()
                    )))
                }
            }
            _ => Ok(()),
        }
    }

    /// Supremum of the velocity density; none for degenerate profiles.
    pub fn sup_density(&self) -> Option<T> {
        match self {
            VelocityProfile::Maxwellian { sigma } => {
                if *sigma > T::zero() {
                    Some(gaussian_peak3(*sigma))
                } else {
                    None
                }
            }
            VelocityProfile::PowerLaw { r } => {
                // density c_r / (1+s)^r with c_r = (r-1)(r-2)(r-3) / 8 pi
                let rf = *r;
                let c = (rf - T::one()) * (rf - T::of(2.0)) * (rf - T::of(3.0))
                    / (T::of(8.0) * T::PI());
                Some(c)
            }
            VelocityProfile::Cold | VelocityProfile::Point { .. } => None,
        }
    }
}

/// Full initial-data description: spatial profile, velocity profile, and the
/// highest velocity-moment order tracked for envelope checks (must exceed 6).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialDataSpec<T> {
    pub spatial: SpatialProfile<T>,
    pub velocity: VelocityProfile<T>,
    pub moment_order: T,
}

impl<T: Real> InitialDataSpec<T> {
    pub fn new(spatial: SpatialProfile<T>, velocity: VelocityProfile<T>, moment_order: T) -> Result<Self> {
        let spec = Self {
            spatial,
            velocity,
            moment_order,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.spatial.validate()?;
        self.velocity.validate()?;
        if !(self.moment_order > T::of(6.0)) {
            return Err(Error::InvalidSpec(format!(
                "tracked moment order must exceed 6, got {}",
                self.moment_order.f64()
            )));
        }
        Ok(())
    }

    /// Analytic supremum of f0 = rho(x) q(v); none for degenerate profiles.
    pub fn f_sup(&self) -> Option<T> {
        Some(self.spatial.sup_density()? * self.velocity.sup_density()?)
    }
}

fn dist2<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    (0..3).fold(T::zero(), |acc, i| {
        let d = a[i] - b[i];
        acc + d * d
    })
}

fn gaussian_pdf3<T: Real>(x: [T; 3], center: [T; 3], sigma: T) -> T {
    let r2 = dist2(x, center);
    gaussian_peak3(sigma) * (-r2 / (T::of(2.0) * sigma * sigma)).exp()
}

fn gaussian_peak3<T: Real>(sigma: T) -> T {
    (T::of(2.0) * T::PI() * sigma * sigma).powf(T::of(-1.5))
}

/// Van der Corput radical inverse in the given base.
fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

const HALTON_BASES: [u64; 7] = [2, 3, 5, 7, 11, 13, 17];

/// Inverse CDF of the radial speed law s^2 (1+s)^{-r} ds, by bisection.
fn power_law_speed(u: f64, r: f64) -> f64 {
    let antider = |s: f64| -> f64 {
        let b = 1.0 + s;
        (b.powf(3.0 - r) - 1.0) / (3.0 - r) - 2.0 * (b.powf(2.0 - r) - 1.0) / (2.0 - r)
            + (b.powf(1.0 - r) - 1.0) / (1.0 - r)
    };
    let total = 2.0 / ((r - 1.0) * (r - 2.0) * (r - 3.0));
    let target = u * total;
    let mut hi = 1.0;
    while antider(hi) < target && hi < 1e12 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..70 {
        let mid = 0.5 * (lo + hi);
        if antider(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn unit_vector_from(u1: f64, u2: f64) -> [f64; 3] {
    let cos_t = 2.0 * u1 - 1.0;
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = 2.0 * std::f64::consts::PI * u2;
    [sin_t * phi.cos(), sin_t * phi.sin(), cos_t]
}

/// Draw N particles from the initial data by a randomized Halton sequence:
/// the low-discrepancy coordinates are shifted modulo 1 by a seed-derived
/// rotation, so the ensemble is deterministic in the seed and stratified in
/// every coordinate. Weights are uniform, so the empirical mass is exactly 1.
pub fn sample_initial<T: Real>(
    spec: &InitialDataSpec<T>,
    n: usize,
    seed: u64,
) -> Result<ParticleEnsemble<T>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidSpec("particle count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts: [f64; 7] = std::array::from_fn(|_| rng.gen::<f64>());
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let coord = |i: usize, d: usize| -> f64 {
        let v = radical_inverse(i as u64 + 1, HALTON_BASES[d]) + shifts[d];
        let f = v.fract();
        // keep strictly inside (0, 1) for inverse-CDF maps
        f.max(1e-15).min(1.0 - 1e-15)
    };

    let spatial = spec.spatial;
    let velocity = spec.velocity;
    let samples: Vec<([T; 3], [T; 3])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x: [f64; 3] = match spatial {
                SpatialProfile::Gaussian { sigma, center } => {
                    let s = sigma.f64();
                    std::array::from_fn(|a| {
                        center[a].f64() + s * normal.inverse_cdf(coord(i, a))
                    })
                }
                SpatialProfile::Ball { radius, center } => {
                    let rad = radius.f64() * coord(i, 0).powf(1.0 / 3.0);
                    let dir = unit_vector_from(coord(i, 1), coord(i, 2));
                    std::array::from_fn(|a| center[a].f64() + rad * dir[a])
                }
                SpatialProfile::TwoBump {
                    sigma,
                    separation,
                    weight_first,
                } => {
                    let s = sigma.f64();
                    let half = separation.f64() * 0.5;
                    let cx = if coord(i, 3) < weight_first.f64() {
                        -half
                    } else {
                        half
                    };
                    let c = [cx, 0.0, 0.0];
                    std::array::from_fn(|a| c[a] + s * normal.inverse_cdf(coord(i, a)))
                }
                SpatialProfile::Point { position } => std::array::from_fn(|a| position[a].f64()),
            };
            let v: [f64; 3] = match velocity {
                VelocityProfile::Maxwellian { sigma } => {
                    let s = sigma.f64();
                    std::array::from_fn(|a| s * normal.inverse_cdf(coord(i, 4 + a)))
                }
                VelocityProfile::PowerLaw { r } => {
                    let speed = power_law_speed(coord(i, 4), r.f64());
                    let dir = unit_vector_from(coord(i, 5), coord(i, 6));
                    std::array::from_fn(|a| speed * dir[a])
                }
                VelocityProfile::Cold => [0.0; 3],
                VelocityProfile::Point { velocity } => std::array::from_fn(|a| velocity[a].f64()),
            };
            (x.map(T::of), v.map(T::of))
        })
        .collect();

    let positions = samples.iter().map(|s| s.0).collect();
    let velocities = samples.iter().map(|s| s.1).collect();
    ParticleEnsemble::new(positions, velocities, (0..n as u64).collect())
}

/// CIC stencil of a position: base cell, weights, and in-box flag. A particle
/// is in-box when all 8 stencil cells exist.
#[inline]
fn cic_stencil<T: Real>(grid: &GridSpec<T>, x: [T; 3]) -> Option<([usize; 3], [T; 3])> {
    let n = grid.n();
    let h = grid.spacing();
    let l = grid.half_width();
    let mut base = [0usize; 3];
    let mut frac = [T::zero(); 3];
    for a in 0..3 {
        let xi = (x[a] + l) / h - T::of(0.5);
        let fl = xi.floor();
        let b = fl.to_f64().unwrap();
        if b < 0.0 || b + 1.0 > (n - 1) as f64 {
            return None;
        }
        base[a] = b as usize;
        frac[a] = xi - fl;
    }
    Some((base, frac))
}

/// Outcome of a deposition: the density field plus out-of-box accounting.
#[derive(Debug, Clone)]
pub struct Deposit<T> {
    pub rho: ScalarField<T>,
    pub out_of_box: usize,
    /// Total weight deposited (the in-box mass).
    pub mass: T,
}

/// Fraction of particle mass allowed outside the box before deposition fails.
pub const MAX_OUT_OF_BOX_FRACTION: f64 = 0.01;

/// Trilinear (cloud-in-cell) deposition. The deposited field integrates to
/// exactly the in-box mass; particles whose stencil leaves the box are
/// excluded and counted.
pub fn deposit_density<T: Real>(
    ens: &ParticleEnsemble<T>,
    grid: GridSpec<T>,
) -> Result<Deposit<T>> {
    let n = grid.n();
    let w = ens.weight();
    let inv_h3 = T::one() / grid.cell_volume();
    let mut values = vec![T::zero(); grid.len()];
    let mut out = 0usize;
    for x in ens.positions() {
        match cic_stencil(&grid, *x) {
            None => out += 1,
            Some((base, frac)) => {
                let wx = [T::one() - frac[0], frac[0]];
                let wy = [T::one() - frac[1], frac[1]];
                let wz = [T::one() - frac[2], frac[2]];
                for dk in 0..2 {
                    for dj in 0..2 {
                        for di in 0..2 {
                            let f = (base[0] + di) + n * ((base[1] + dj) + n * (base[2] + dk));
                            values[f] += w * wx[di] * wy[dj] * wz[dk] * inv_h3;
                        }
                    }
                }
            }
        }
    }
    let fraction = out as f64 / ens.count() as f64;
    if fraction > MAX_OUT_OF_BOX_FRACTION {
        return Err(Error::Truncation {
            fraction,
            max_percent: MAX_OUT_OF_BOX_FRACTION * 100.0,
        });
    }
    let mass = w * T::of_usize(ens.count() - out);
    Ok(Deposit {
        rho: ScalarField::from_values(grid, values)?,
        out_of_box: out,
        mass,
    })
}

/// Trilinear gather of a grid vector field at particle positions, the adjoint
/// of [`deposit_density`]: same stencil weights, zero for out-of-box
/// particles. Returns the per-particle vectors and the out-of-box count.
pub fn interpolate_acceleration<T: Real>(
    field: &VectorField<T>,
    positions: &[[T; 3]],
) -> (Vec<[T; 3]>, usize) {
    let grid = *field.grid();
    let n = grid.n();
    let acc: Vec<[T; 3]> = positions
        .par_iter()
        .map(|x| match cic_stencil(&grid, *x) {
            None => [T::zero(); 3],
            Some((base, frac)) => {
                let wx = [T::one() - frac[0], frac[0]];
                let wy = [T::one() - frac[1], frac[1]];
                let wz = [T::one() - frac[2], frac[2]];
                let mut v = [T::zero(); 3];
                for dk in 0..2 {
                    for dj in 0..2 {
                        for di in 0..2 {
                            let f = (base[0] + di) + n * ((base[1] + dj) + n * (base[2] + dk));
                            let wgt = wx[di] * wy[dj] * wz[dk];
                            let e = field.at(f);
                            for a in 0..3 {
                                v[a] += wgt * e[a];
                            }
                        }
                    }
                }
                v
            }
        })
        .collect();
    let out = positions
        .iter()
        .filter(|x| cic_stencil(&grid, **x).is_none())
        .count();
    (acc, out)
}

/// Everything needed to re-solve the self-consistent field during a run.
pub struct FieldContext<T> {
    pub grid: GridSpec<T>,
    pub g: ScalarField<T>,
    pub mode: ChargeMode,
    pub settings: SolverSettings<T>,
    solver: Arc<PoissonSolver<T>>,
}

impl<T: Real> FieldContext<T> {
    pub fn new(
        g: ScalarField<T>,
        mode: ChargeMode,
        settings: SolverSettings<T>,
    ) -> Result<Self> {
        g.check_nonnegative()?;
        let grid = *g.grid();
        Ok(Self {
            grid,
            g,
            mode,
            settings,
            solver: Arc::new(PoissonSolver::new(grid)),
        })
    }

    pub fn solver(&self) -> &PoissonSolver<T> {
        &self.solver
    }

    pub fn solve(
        &self,
        rho: &ScalarField<T>,
        warm: Option<&ScalarField<T>>,
    ) -> Result<PotentialSplit<T>> {
        solve_split_field_with(&self.solver, rho, &self.g, self.mode, &self.settings, warm)
    }
}

/// Particle ensemble together with its self-consistently solved field.
#[derive(Debug, Clone)]
pub struct SimulationState<T> {
    pub time: T,
    pub ensemble: ParticleEnsemble<T>,
    pub split: PotentialSplit<T>,
    pub step_count: u64,
    fresh: bool,
}

impl<T: Real> SimulationState<T> {
    /// Deposit the ensemble and solve the field, producing a fresh state.
    pub fn init(ctx: &FieldContext<T>, ensemble: ParticleEnsemble<T>) -> Result<Self> {
        let dep = deposit_density(&ensemble, ctx.grid)?;
        let split = ctx.solve(&dep.rho, None)?;
        Ok(Self {
            time: T::zero(),
            ensemble,
            split,
            step_count: 0,
            fresh: true,
        })
    }

    /// The cached field corresponds to the current ensemble.
    pub fn is_fresh(&self) -> bool {
        self.fresh
    }

    /// Swap in a different ensemble, marking the cached field stale.
    pub fn replace_ensemble(&mut self, ensemble: ParticleEnsemble<T>) {
        self.ensemble = ensemble;
        self.fresh = false;
    }

    /// Re-deposit and re-solve after an ensemble replacement.
    pub fn refresh(&mut self, ctx: &FieldContext<T>) -> Result<()> {
        let dep = deposit_density(&self.ensemble, ctx.grid)?;
        self.split = ctx.solve(&dep.rho, Some(&self.split.u_hat))?;
        self.fresh = true;
        Ok(())
    }
}

/// Maximum number of CFL halvings per step.
const MAX_HALVINGS: u32 = 8;

/// Advance one kick-drift-kick leapfrog step of length dt, re-depositing and
/// re-solving the split field at the drifted positions. The step fraction is
/// auto-halved (at most 8 times) to keep dt <= h / (4 max|V|). On error the
/// input state is left untouched.
pub fn step<T: Real>(
    ctx: &FieldContext<T>,
    state: &SimulationState<T>,
    dt: T,
) -> Result<SimulationState<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidParameter("dt must be positive".into()));
    }
    if !state.fresh {
        return Err(Error::StaleState);
    }
    let h = ctx.grid.spacing();
    let vmax = state.ensemble.max_speed();
    let bound = if vmax > T::zero() {
        h / (T::of(4.0) * vmax)
    } else {
        T::infinity()
    };
    let mut substeps = 1u32;
    let mut sub_dt = dt;
    while sub_dt > bound {
        if substeps >= 1 << MAX_HALVINGS {
            return Err(Error::InvalidParameter(format!(
                "dt = {} exceeds the CFL bound {} even after {} halvings",
                dt.f64(),
                bound.f64(),
                MAX_HALVINGS
            )));
        }
        substeps *= 2;
        sub_dt *= T::of(0.5);
    }

    let mut cur = state.clone();
    for _ in 0..substeps {
        cur = kdk_substep(ctx, &cur, sub_dt)?;
    }
    cur.step_count = state.step_count + 1;
    Ok(cur)
}

fn kdk_substep<T: Real>(
    ctx: &FieldContext<T>,
    state: &SimulationState<T>,
    dt: T,
) -> Result<SimulationState<T>> {
    let half = dt * T::of(0.5);
    let (acc, _) = interpolate_acceleration(&state.split.e_total, state.ensemble.positions());

    let n = state.ensemble.count();
    let mut positions = Vec::with_capacity(n);
    let mut half_kicked = Vec::with_capacity(n);
    for i in 0..n {
        let v = state.ensemble.velocities()[i];
        let a = acc[i];
        let vh = [v[0] + half * a[0], v[1] + half * a[1], v[2] + half * a[2]];
        let x = state.ensemble.positions()[i];
        positions.push([x[0] + dt * vh[0], x[1] + dt * vh[1], x[2] + dt * vh[2]]);
        half_kicked.push(vh);
    }

    let drifted = ParticleEnsemble::new(positions, half_kicked, state.ensemble.ids().to_vec())?;
    let dep = deposit_density(&drifted, ctx.grid).map_err(|e| Error::StepFailure {
        time: state.time.f64(),
        source: Box::new(e),
    })?;
    let split = ctx
        .solve(&dep.rho, Some(&state.split.u_hat))
        .map_err(|e| Error::StepFailure {
            time: state.time.f64(),
            source: Box::new(e),
        })?;

    let (acc2, _) = interpolate_acceleration(&split.e_total, drifted.positions());
    let mut ens = drifted;
    for i in 0..n {
        let a = acc2[i];
        let v = &mut ens.velocities_mut()[i];
        v[0] += half * a[0];
        v[1] += half * a[1];
        v[2] += half * a[2];
    }

    Ok(SimulationState {
        time: state.time + dt,
        ensemble: ens,
        split,
        step_count: state.step_count,
        fresh: true,
    })
}

/// Kick-drift-kick step against a frozen grid field (no re-solve).
pub fn step_frozen_grid<T: Real>(
    ens: &ParticleEnsemble<T>,
    field: &VectorField<T>,
    dt: T,
) -> Result<ParticleEnsemble<T>> {
    let (acc, _) = interpolate_acceleration(field, ens.positions());
    let half = dt * T::of(0.5);
    let n = ens.count();
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    for i in 0..n {
        let v = ens.velocities()[i];
        let a = acc[i];
        let vh = [v[0] + half * a[0], v[1] + half * a[1], v[2] + half * a[2]];
        let x = ens.positions()[i];
        positions.push([x[0] + dt * vh[0], x[1] + dt * vh[1], x[2] + dt * vh[2]]);
        velocities.push(vh);
    }
    let (acc2, _) = interpolate_acceleration(field, &positions);
    for i in 0..n {
        for a in 0..3 {
            velocities[i][a] += half * acc2[i][a];
        }
    }
    ParticleEnsemble::new(positions, velocities, ens.ids().to_vec())
}

/// Kick-drift-kick step against an analytic field; test hook for frozen
/// smooth fields such as the harmonic well E = -x.
pub fn step_analytic<T: Real>(
    ens: &ParticleEnsemble<T>,
    e: impl Fn([T; 3]) -> [T; 3],
    dt: T,
) -> ParticleEnsemble<T> {
    let half = dt * T::of(0.5);
    let n = ens.count();
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    for i in 0..n {
        let x = ens.positions()[i];
        let v = ens.velocities()[i];
        let a = e(x);
        let vh = [v[0] + half * a[0], v[1] + half * a[1], v[2] + half * a[2]];
        let xn = [x[0] + dt * vh[0], x[1] + dt * vh[1], x[2] + dt * vh[2]];
        positions.push(xn);
        velocities.push(vh);
    }
    for i in 0..n {
        let a = e(positions[i]);
        for ax in 0..3 {
            velocities[i][ax] += half * a[ax];
        }
    }
    ParticleEnsemble::new(positions, velocities, ens.ids().to_vec()).expect("sizes preserved")
}

/// A labeled point of a run's trajectory.
#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    pub time: T,
    pub ensemble: ParticleEnsemble<T>,
}

/// Advance to `t_final`, emitting a snapshot at t = 0, every
/// `snapshot_every` steps, and at the final time. The observer sees every
/// intermediate state (including the initial one) and may record diagnostics.
pub fn run<T: Real>(
    ctx: &FieldContext<T>,
    initial: SimulationState<T>,
    dt: T,
    t_final: T,
    snapshot_every: usize,
    mut observer: impl FnMut(&SimulationState<T>) -> Result<()>,
) -> Result<(Vec<Snapshot<T>>, SimulationState<T>)> {
    if t_final < T::zero() {
        return Err(Error::InvalidParameter("final time must be nonnegative".into()));
    }
    let every = snapshot_every.max(1);
    let n_steps = (t_final / dt).round().to_f64().unwrap() as usize;

    let mut snapshots = vec![Snapshot {
        time: initial.time,
        ensemble: initial.ensemble.clone(),
    }];
    observer(&initial)?;
    let mut state = initial;
    for s in 1..=n_steps {
        state = step(ctx, &state, dt).map_err(|e| match e {
            err @ Error::StepFailure { .. } => err,
            other => Error::StepFailure {
                time: state.time.f64(),
                source: Box::new(other),
            },
        })?;
        observer(&state)?;
        if s % every == 0 || s == n_steps {
            snapshots.push(Snapshot {
                time: state.time,
                ensemble: state.ensemble.clone(),
            });
        }
    }
    Ok((snapshots, state))
}
