//! Nonlinear screening solvers for the smooth part of the potential.
//!
//! The total electrostatic potential splits as U = Ubar + Uhat, where
//! -lap(Ubar) = rho is the Newtonian part and Uhat solves the screening
//! equation lap(Uhat) = g e^{Ubar + Uhat} (variable total charge) or
//! lap(Uhat) = g e^{Ubar + Uhat} / m with m the self-consistent electron
//! normalization (fixed total charge). Both are solved by damped Picard
//! iteration on the kernel representation Uhat = -G * (g e^{Ubar + Uhat}),
//! so every iterate is a nonpositive combination of image potentials and the
//! discrete Laplacian of the iterate is tracked algebraically, exactly.

use crate::error::{Error, Result};
use crate::field::{lp_norm, negative_gradient, weak_lp_quasinorm, NormReport, ScalarField, VectorField};
use crate::poisson::PoissonSolver;
use crate::scalar::Real;

/// Which closure the electron background uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChargeMode {
    /// Electron density g e^U; total charge may drift.
    VariableCharge,
    /// Electron density g e^U / int(g e^U); global neutrality enforced.
    FixedCharge,
}

impl ChargeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChargeMode::VariableCharge => "variable",
            ChargeMode::FixedCharge => "fixed",
        }
    }
}

impl std::str::FromStr for ChargeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variable" => Ok(ChargeMode::VariableCharge),
            "fixed" => Ok(ChargeMode::FixedCharge),
            other => Err(Error::InvalidParameter(format!(
                "mode must be 'variable' or 'fixed', got '{other}'"
            ))),
        }
    }
}

/// Settings for the damped Picard iteration.
#[derive(Debug, Clone, Copy)]
pub struct SolverSettings<T> {
    /// Relative residual ||lap(Uhat) - rhs||_2 / ||rhs||_2 at convergence.
    pub tolerance: T,
    pub max_iterations: usize,
    /// Initial step fraction theta in (0, 1]; backtracking halves it down to
    /// 1/64 whenever a step would increase the residual.
    pub damping: T,
    /// Cutoff K of the logarithm floor; the fixed-charge normalization must
    /// stay above e^{-(K-1)}.
    pub k_cutoff: u32,
    /// Renormalize g to unit mass instead of rejecting it.
    pub normalize_g: bool,
}

impl<T: Real> Default for SolverSettings<T> {
    fn default() -> Self {
        Self {
            tolerance: T::of(1e-8),
            max_iterations: 500,
            damping: T::one(),
            k_cutoff: 30,
            normalize_g: false,
        }
    }
}

impl<T: Real> SolverSettings<T> {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > T::zero()) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        if !(self.damping > T::zero() && self.damping <= T::one()) {
            return Err(Error::InvalidParameter("damping must lie in (0, 1]".into()));
        }
        if self.k_cutoff < 2 {
            return Err(Error::InvalidParameter("K cutoff must be at least 2".into()));
        }
        Ok(())
    }
}

const THETA_FLOOR_DENOM: f64 = 64.0;

/// Converged screening potential with its tracked discrete Laplacian.
#[derive(Debug, Clone)]
pub struct HatSolution<T> {
    pub u_hat: ScalarField<T>,
    /// Exact 7-point Laplacian of `u_hat`, tracked through the iteration.
    pub laplacian: ScalarField<T>,
    pub residual: T,
    pub iterations: usize,
    pub residual_history: Vec<T>,
    /// Electron normalization m = int(g e^{Ubar + Uhat}); fixed charge only.
    pub m: Option<T>,
}

fn raw_l2<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt()
}

fn check_hat_inputs<T: Real>(u_bar: &ScalarField<T>, g: &ScalarField<T>) -> Result<()> {
    u_bar.grid().same_grid(g.grid())?;
    g.check_nonnegative()?;
    u_bar.check_finite()?;
    let floor = T::of(-1e-10) * (T::one() + u_bar.max_value().abs());
    if u_bar.min_value() < floor {
        return Err(Error::InvalidField(
            "Newtonian part must be nonnegative".into(),
        ));
    }
    Ok(())
}

/// Shared Picard driver. `normalized` selects the fixed-charge closure.
fn picard_hat<T: Real>(
    solver: &PoissonSolver<T>,
    u_bar: &ScalarField<T>,
    g: &ScalarField<T>,
    s: &SolverSettings<T>,
    normalized: bool,
    warm_start: Option<&ScalarField<T>>,
) -> Result<HatSolution<T>> {
    s.validate()?;
    check_hat_inputs(u_bar, g)?;
    u_bar.grid().same_grid(solver.grid())?;

    let grid = *u_bar.grid();
    let guard = T::of((-(s.k_cutoff as f64 - 1.0)).exp());

    // rhs(u) = g e^{Ubar + u} (divided by its own integral m when normalized)
    let rhs_of = |u: &ScalarField<T>| -> Result<(ScalarField<T>, Option<T>)> {
        let w = ScalarField::from_values(
            grid,
            g.values()
                .iter()
                .zip(u_bar.values())
                .zip(u.values())
                .map(|((&gv, &ub), &uh)| gv * (ub + uh).exp())
                .collect(),
        )?;
        if !normalized {
            return Ok((w, None));
        }
        let m: T = w.integral();
        if m <= guard {
            let c_g = bouchut_integral(g, &u_bar.add(u)?);
            return Err(Error::GuardViolation {
                m: m.f64(),
                guard: guard.f64(),
                c_g: c_g.f64(),
            });
        }
        Ok((w.scaled(T::one() / m), Some(m)))
    };

    let mut u = match warm_start {
        Some(w0) => {
            w0.grid().same_grid(&grid)?;
            // warm starts must stay in the nonpositive cone
            w0.map(|v| v.min(T::zero()))
        }
        None => ScalarField::zeros(grid),
    };
    // exact discrete Laplacian of u, maintained algebraically
    let mut lap = if warm_start.is_some() {
        // one image step rebuilds the pure-image form and its Laplacian
        let (rhs0, _) = rhs_of(&u)?;
        let img = solver.solve_ghosted(&rhs0)?.field().scaled(-T::one());
        u = img;
        rhs0
    } else {
        ScalarField::zeros(grid)
    };

    let (mut rhs, mut m) = rhs_of(&u)?;
    let rhs_norm = raw_l2(rhs.values());
    if rhs_norm == T::zero() {
        // degenerate g = 0: the screening correction vanishes identically
        return Ok(HatSolution {
            u_hat: ScalarField::zeros(grid),
            laplacian: ScalarField::zeros(grid),
            residual: T::zero(),
            iterations: 0,
            residual_history: vec![T::zero()],
            m,
        });
    }
    let mut residual = raw_l2(lap.sub(&rhs)?.values()) / rhs_norm;
    let mut history = vec![residual];

    let theta_floor = T::of(1.0 / THETA_FLOOR_DENOM);
    for iter in 1..=s.max_iterations {
        // the fixed-charge closure makes int(lap) converge to 1; require it
        // at the same relative scale as the residual before stopping
        let mass_ok = if normalized {
            (lap.integral() - T::one()).abs() < s.tolerance
        } else {
            true
        };
        if residual < s.tolerance && mass_ok {
            return Ok(HatSolution {
                u_hat: u,
                laplacian: lap,
                residual,
                iterations: iter - 1,
                residual_history: history,
                m,
            });
        }

        // Picard image of the current rhs: lap(v) = rhs exactly
        let v = solver.solve_ghosted(&rhs)?.field().scaled(-T::one());

        let mut theta = s.damping;
        loop {
            let one_m = T::one() - theta;
            let u_trial = u.scaled(one_m).add(&v.scaled(theta))?;
            let lap_trial = lap.scaled(one_m).add(&rhs.scaled(theta))?;
            let (rhs_trial, m_trial) = rhs_of(&u_trial)?;
            let rhs_trial_norm = raw_l2(rhs_trial.values());
            let r_trial = raw_l2(lap_trial.sub(&rhs_trial)?.values()) / rhs_trial_norm;
            if r_trial <= residual || theta <= theta_floor {
                if r_trial > residual {
                    return Err(Error::ConvergenceFailure {
                        iterations: iter,
                        residual: r_trial.f64(),
                    });
                }
                u = u_trial;
                lap = lap_trial;
                rhs = rhs_trial;
                m = m_trial;
                residual = r_trial;
                history.push(residual);
                break;
            }
            theta *= T::of(0.5);
        }
    }

    Err(Error::ConvergenceFailure {
        iterations: s.max_iterations,
        residual: residual.f64(),
    })
}

/// Screening potential for the variable-charge closure:
/// lap(Uhat) = g e^{Ubar + Uhat}, Uhat <= 0.
pub fn solve_hat_variable<T: Real>(
    u_bar: &ScalarField<T>,
    g: &ScalarField<T>,
    s: &SolverSettings<T>,
) -> Result<ScalarField<T>> {
    let solver = PoissonSolver::new(*u_bar.grid());
    Ok(picard_hat(&solver, u_bar, g, s, false, None)?.u_hat)
}

/// Screening potential for the fixed-charge closure:
/// lap(Uhat) = g e^{Ubar + Uhat} / m with m = int(g e^{Ubar + Uhat}).
/// Returns the potential and m.
pub fn solve_hat_fixed<T: Real>(
    u_bar: &ScalarField<T>,
    g: &ScalarField<T>,
    s: &SolverSettings<T>,
) -> Result<(ScalarField<T>, T)> {
    let solver = PoissonSolver::new(*u_bar.grid());
    let (g_checked, _) = check_g_normalization(g, s)?;
    let sol = picard_hat(&solver, u_bar, &g_checked, s, true, None)?;
    let m = sol.m.expect("fixed-charge solve carries m");
    Ok((sol.u_hat, m))
}

fn check_g_normalization<T: Real>(
    g: &ScalarField<T>,
    s: &SolverSettings<T>,
) -> Result<(ScalarField<T>, T)> {
    g.check_nonnegative()?;
    let total = g.integral();
    let dev = (total - T::one()).abs();
    if dev > T::of(1e-3) && !s.normalize_g {
        return Err(Error::InvalidNormalization {
            integral: total.f64(),
            tolerance: 1e-3,
        });
    }
    if s.normalize_g && dev > T::zero() {
        let mut gn = g.clone();
        gn.normalize_to(T::one())?;
        Ok((gn, total))
    } else {
        Ok((g.clone(), total))
    }
}

/// Monotone floor of the logarithm at -K: log x for x > e^{-K}, constant -K
/// below, so L_K(1) = 0, L_K(e^{-K}) = -K, and 0 <= x L_K'(x) <= 1.
pub fn l_k<T: Real>(x: T, k: u32) -> Result<T> {
    check_k(k)?;
    if x < T::zero() || x.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "L_K argument must be nonnegative, got {}",
            x.f64()
        )));
    }
    let floor = -T::of(k as f64);
    if x <= T::zero() {
        return Ok(floor);
    }
    Ok(x.ln().max(floor))
}

/// Derivative selector of [`l_k`]: 1/x on the logarithmic branch, 0 on the
/// constant branch.
pub fn l_k_prime<T: Real>(x: T, k: u32) -> Result<T> {
    check_k(k)?;
    let cut = T::of(-(k as f64)).exp();
    if x > cut {
        Ok(T::one() / x)
    } else {
        Ok(T::zero())
    }
}

/// M_K(x) = x L_K'(x); bounded by 1 in magnitude.
pub fn m_k<T: Real>(x: T, k: u32) -> Result<T> {
    Ok(x * l_k_prime(x, k)?)
}

fn check_k(k: u32) -> Result<()> {
    if k < 2 {
        Err(Error::InvalidParameter(format!(
            "cutoff K must be at least 2, got {k}"
        )))
    } else {
        Ok(())
    }
}

/// Staggered midpoint quadrature of int |grad h|^2: squared forward
/// differences on interior faces times cell volume.
pub fn dirichlet_energy<T: Real>(h: &ScalarField<T>) -> T {
    dirichlet_inner(h, h)
}

/// The bilinear form associated to [`dirichlet_energy`].
pub fn dirichlet_inner<T: Real>(a: &ScalarField<T>, b: &ScalarField<T>) -> T {
    let grid = *a.grid();
    let n = grid.n();
    let inv_h = T::one() / grid.spacing();
    let av = a.values();
    let bv = b.values();
    let stride = [1usize, n, n * n];
    let mut acc = T::zero();
    for axis in 0..3 {
        let s = stride[axis];
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    if [i, j, k][axis] == n - 1 {
                        continue;
                    }
                    let f = i + n * (j + n * k);
                    let da = (av[f + s] - av[f]) * inv_h;
                    let db = (bv[f + s] - bv[f]) * inv_h;
                    acc += da * db;
                }
            }
        }
    }
    acc * grid.cell_volume()
}

/// Variational functional of the variable-charge closure:
/// J_V[h] = int |grad h|^2 + g e^{h + Ubar}.
pub fn evaluate_jv<T: Real>(
    h: &ScalarField<T>,
    u_bar: &ScalarField<T>,
    g: &ScalarField<T>,
) -> Result<T> {
    h.grid().same_grid(u_bar.grid())?;
    h.grid().same_grid(g.grid())?;
    let mut exp_part = T::zero();
    for ((&gv, &ub), &hv) in g.values().iter().zip(u_bar.values()).zip(h.values()) {
        exp_part += gv * (ub + hv).exp();
    }
    Ok(dirichlet_energy(h) + exp_part * h.grid().cell_volume())
}

/// First variation of J_V at `h` in direction `delta`:
/// 2 <grad h, grad delta> + int g e^{Ubar + h} delta.
pub fn jv_gateaux<T: Real>(
    h: &ScalarField<T>,
    u_bar: &ScalarField<T>,
    g: &ScalarField<T>,
    delta: &ScalarField<T>,
) -> Result<T> {
    h.grid().same_grid(delta.grid())?;
    let mut exp_part = T::zero();
    for (((&gv, &ub), &hv), &dv) in g
        .values()
        .iter()
        .zip(u_bar.values())
        .zip(h.values())
        .zip(delta.values())
    {
        exp_part += gv * (ub + hv).exp() * dv;
    }
    Ok(T::of(2.0) * dirichlet_inner(h, delta) + exp_part * h.grid().cell_volume())
}

/// Variational functional of the fixed-charge closure:
/// J_K[h] = int |grad h|^2 + L_K(int g e^{Ubar + h}).
pub fn evaluate_jk<T: Real>(
    h: &ScalarField<T>,
    u_bar: &ScalarField<T>,
    g: &ScalarField<T>,
    k: u32,
) -> Result<T> {
    check_k(k)?;
    h.grid().same_grid(u_bar.grid())?;
    h.grid().same_grid(g.grid())?;
    let mut exp_part = T::zero();
    for ((&gv, &ub), &hv) in g.values().iter().zip(u_bar.values()).zip(h.values()) {
        exp_part += gv * (ub + hv).exp();
    }
    Ok(dirichlet_energy(h) + l_k(exp_part * h.grid().cell_volume(), k)?)
}

/// Positivity certificate for the electron normalization.
#[derive(Debug, Clone, Copy)]
pub struct BouchutCertificate<T> {
    /// Measured int g e^{-|U|}; a strictly positive lower bound on the
    /// normalization integral int g e^{Uhat + Ubar} whenever Ubar >= 0.
    pub lower_bound: T,
    pub u_weak_l3: T,
    pub g_linf: T,
}

impl<T: Real> BouchutCertificate<T> {
    /// The modeled bound exp(-c ||U||_{L^{3,inf}} ||g||_inf^{1/3}) for a
    /// battery-fitted constant c.
    pub fn bound_with(&self, c: T) -> T {
        (-c * self.u_weak_l3 * self.g_linf.powf(T::of(1.0 / 3.0))).exp()
    }

    /// The constant c that makes the modeled bound equal the measurement.
    pub fn fitted_c(&self) -> T {
        let scale = self.u_weak_l3 * self.g_linf.powf(T::of(1.0 / 3.0));
        if scale == T::zero() {
            T::zero()
        } else {
            -self.lower_bound.ln() / scale
        }
    }
}

fn bouchut_integral<T: Real>(g: &ScalarField<T>, u: &ScalarField<T>) -> T {
    let s: T = g
        .values()
        .iter()
        .zip(u.values())
        .map(|(&gv, &uv)| gv * (-uv.abs()).exp())
        .sum();
    s * g.grid().cell_volume()
}

/// Measure int g e^{-|u|} and the quantities entering its exponential lower
/// bound model.
pub fn bouchut_certificate<T: Real>(
    g: &ScalarField<T>,
    u: &ScalarField<T>,
) -> Result<BouchutCertificate<T>> {
    g.grid().same_grid(u.grid())?;
    g.check_nonnegative()?;
    u.check_finite()?;
    let total = g.integral();
    if (total - T::one()).abs() > T::of(1e-3) {
        return Err(Error::InvalidNormalization {
            integral: total.f64(),
            tolerance: 1e-3,
        });
    }
    Ok(BouchutCertificate {
        lower_bound: bouchut_integral(g, u),
        u_weak_l3: weak_lp_quasinorm(u, T::of(3.0))?,
        g_linf: lp_norm(g, T::infinity())?,
    })
}

/// The assembled electrostatic solution: Newtonian and screening parts,
/// their fields, and the solver certificates.
#[derive(Debug, Clone)]
pub struct PotentialSplit<T> {
    pub u_bar: ScalarField<T>,
    pub u_hat: ScalarField<T>,
    pub e_bar: VectorField<T>,
    pub e_hat: VectorField<T>,
    /// E = Ebar + Ehat, summed componentwise.
    pub e_total: VectorField<T>,
    pub mode: ChargeMode,
    /// Electron normalization; present in fixed-charge mode.
    pub m: Option<T>,
    pub residual: T,
    pub iterations: usize,
    /// Exact 7-point Laplacian of u_hat.
    pub lap_u_hat: ScalarField<T>,
    pub rho_l1: T,
    pub rho_l53: T,
}

impl<T: Real> PotentialSplit<T> {
    pub fn u_total(&self) -> ScalarField<T> {
        self.u_bar.add(&self.u_hat).expect("same grid")
    }

    /// Largest sample of u_hat; nonpositive for a valid solution.
    pub fn u_hat_max(&self) -> T {
        self.u_hat.max_value()
    }

    /// Quadrature of lap(u_hat); equals 1 for a converged fixed-charge solve.
    pub fn lap_u_hat_integral(&self) -> T {
        self.lap_u_hat.integral()
    }
}

/// Solve the full split-field problem with a caller-provided Poisson solver
/// (reused across the Picard sweeps and by time-stepping callers).
pub fn solve_split_field_with<T: Real>(
    solver: &PoissonSolver<T>,
    rho: &ScalarField<T>,
    g: &ScalarField<T>,
    mode: ChargeMode,
    s: &SolverSettings<T>,
    warm_start: Option<&ScalarField<T>>,
) -> Result<PotentialSplit<T>> {
    rho.check_nonnegative()?;
    rho.grid().same_grid(g.grid())?;
    let mass = rho.integral();
    if (mass - T::one()).abs() > T::of(1e-3) {
        log::warn!("ion density mass is {}, not 1", mass.f64());
    }

    let u_bar = solver.solve_ghosted(rho)?.field();
    let hat = match mode {
        ChargeMode::VariableCharge => {
            g.check_nonnegative()?;
            picard_hat(solver, &u_bar, g, s, false, warm_start)?
        }
        ChargeMode::FixedCharge => {
            let (gn, _) = check_g_normalization(g, s)?;
            picard_hat(solver, &u_bar, &gn, s, true, warm_start)?
        }
    };

    let e_bar = negative_gradient(&u_bar)?;
    let e_hat = negative_gradient(&hat.u_hat)?;
    let mut e_total = e_bar.clone();
    for axis in 0..3 {
        let src = e_hat.component(axis).to_vec();
        for (t, s) in e_total.component_mut(axis).iter_mut().zip(src) {
            *t += s;
        }
    }

    Ok(PotentialSplit {
        rho_l1: lp_norm(rho, T::one())?,
        rho_l53: lp_norm(rho, T::of(5.0 / 3.0))?,
        u_bar,
        u_hat: hat.u_hat,
        e_bar,
        e_hat,
        e_total,
        mode,
        m: hat.m,
        residual: hat.residual,
        iterations: hat.iterations,
        lap_u_hat: hat.laplacian,
    })
}

/// Solve the full split-field problem, building the Poisson solver internally.
pub fn solve_split_field<T: Real>(
    rho: &ScalarField<T>,
    g: &ScalarField<T>,
    mode: ChargeMode,
    s: &SolverSettings<T>,
) -> Result<PotentialSplit<T>> {
    let solver = PoissonSolver::new(*rho.grid());
    solve_split_field_with(&solver, rho, g, mode, s, None)
}

/// Regularity measurements on the screening part, with the exponent entering
/// the modeled bound exp(C ||rho||_1^{1/6} ||rho||_{5/3}^{5/6}).
#[derive(Debug, Clone, Copy)]
pub struct RegularityReport<T> {
    pub u_hat_weak_l3: T,
    pub u_hat_linf: T,
    pub e_hat_weak_l32: T,
    pub e_hat_linf: T,
    /// max |Ehat(x) - Ehat(y)| / |x - y|^{1/2} over sampled grid pairs.
    pub e_hat_holder_half: T,
    /// int |lap u_hat|; equals 1 in fixed-charge mode.
    pub lap_u_hat_l1: T,
    /// ||rho||_1^{1/6} ||rho||_{5/3}^{5/6}.
    pub bound_exponent: T,
    pub u_bar_norms: NormReport<T>,
    pub u_hat_norms: NormReport<T>,
}

pub fn regularity_report<T: Real>(split: &PotentialSplit<T>) -> Result<RegularityReport<T>> {
    let e_hat_mag = split.e_hat.magnitude();
    let grid = *split.u_hat.grid();
    let n = grid.n();
    let h = grid.spacing();

    // Hoelder difference quotient at alpha = 1/2: axis-neighbor pairs plus a
    // deterministic selection of longer-range pairs
    let mut quot = T::zero();
    let stride = [1usize, n, n * n];
    let sqrt_h = h.sqrt();
    for axis in 0..3 {
        let s = stride[axis];
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    if [i, j, k][axis] == n - 1 {
                        continue;
                    }
                    let f = i + n * (j + n * k);
                    let a = split.e_hat.at(f);
                    let b = split.e_hat.at(f + s);
                    let d = ((a[0] - b[0]) * (a[0] - b[0])
                        + (a[1] - b[1]) * (a[1] - b[1])
                        + (a[2] - b[2]) * (a[2] - b[2]))
                        .sqrt();
                    quot = quot.max(d / sqrt_h);
                }
            }
        }
    }
    let len = grid.len();
    let mut state = 0x9e3779b97f4a7c15u64;
    for _ in 0..4096 {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let fa = (state >> 16) as usize % len;
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let fb = (state >> 16) as usize % len;
        if fa == fb {
            continue;
        }
        let pa = grid.position(fa);
        let pb = grid.position(fb);
        let dist2 = (0..3).fold(T::zero(), |acc, a| {
            let d = pa[a] - pb[a];
            acc + d * d
        });
        let va = split.e_hat.at(fa);
        let vb = split.e_hat.at(fb);
        let d = (0..3)
            .fold(T::zero(), |acc, a| {
                let d = va[a] - vb[a];
                acc + d * d
            })
            .sqrt();
        quot = quot.max(d / dist2.sqrt().sqrt());
    }

    Ok(RegularityReport {
        u_hat_weak_l3: weak_lp_quasinorm(&split.u_hat, T::of(3.0))?,
        u_hat_linf: lp_norm(&split.u_hat, T::infinity())?,
        e_hat_weak_l32: weak_lp_quasinorm(&e_hat_mag, T::of(1.5))?,
        e_hat_linf: lp_norm(&e_hat_mag, T::infinity())?,
        e_hat_holder_half: quot,
        lap_u_hat_l1: lp_norm(&split.lap_u_hat, T::one())?,
        bound_exponent: split.rho_l1.powf(T::of(1.0 / 6.0))
            * split.rho_l53.powf(T::of(5.0 / 6.0)),
        u_bar_norms: NormReport::of(&split.u_bar)?,
        u_hat_norms: NormReport::of(&split.u_hat)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use approx::assert_relative_eq;

    fn grid(l: f64, n: usize) -> GridSpec<f64> {
        GridSpec::new(l, n).unwrap()
    }

    fn gaussian(g: GridSpec<f64>, sigma: f64, center: [f64; 3]) -> ScalarField<f64> {
        let mut f = ScalarField::from_fn(g, |x| {
            let r2 = (0..3).map(|a| (x[a] - center[a]).powi(2)).sum::<f64>();
            (-r2 / (2.0 * sigma * sigma)).exp()
        });
        f.normalize_to(1.0).unwrap();
        f
    }

    #[test]
    fn zero_g_gives_zero_hat() {
        let g = grid(2.0, 16);
        let u_bar = ScalarField::zeros(g);
        let zero_g = ScalarField::zeros(g);
        let sol = solve_hat_variable(&u_bar, &zero_g, &SolverSettings::default()).unwrap();
        assert_eq!(sol.max_value(), 0.0);
        assert_eq!(sol.min_value(), 0.0);
    }

    #[test]
    fn neutral_equilibrium_forces_u_hat_minus_u_bar() {
        let g = grid(4.0, 24);
        let dens = gaussian(g, 0.5, [0.0; 3]);
        let solver = PoissonSolver::new(g);
        let u_bar = solver.solve(&dens).unwrap();
        let settings = SolverSettings::default();
        let sol = picard_hat(&solver, &u_bar, &dens, &settings, false, None).unwrap();
        let rel = sol.u_hat.relative_l2_error(&u_bar.scaled(-1.0)).unwrap();
        assert!(rel < 1e-7, "u_hat != -u_bar: rel {rel:e}");
        assert!(sol.residual < 1e-8);

        let (hat_f, m) = {
            let s2 = picard_hat(&solver, &u_bar, &dens, &settings, true, None).unwrap();
            (s2.u_hat.clone(), s2.m.unwrap())
        };
        assert!(hat_f.relative_l2_error(&u_bar.scaled(-1.0)).unwrap() < 1e-6);
        assert_relative_eq!(m, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn hat_is_nonpositive_and_residual_monotone() {
        let g = grid(4.0, 24);
        let dens = gaussian(g, 0.4, [0.0; 3]);
        let rho = gaussian(g, 0.6, [0.5, 0.0, 0.0]);
        let solver = PoissonSolver::new(g);
        let u_bar = solver.solve(&rho).unwrap();
        let sol = picard_hat(&solver, &u_bar, &dens, &SolverSettings::default(), false, None)
            .unwrap();
        assert!(sol.u_hat.max_value() <= 1e-12);
        for w in sol.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "residual not monotone: {w:?}");
        }
        // comparison g e^{Ubar+Uhat} <= g e^{Ubar} samplewise
        for ((&gv, &ub), &uh) in dens
            .values()
            .iter()
            .zip(u_bar.values())
            .zip(sol.u_hat.values())
        {
            assert!(gv * (ub + uh).exp() <= gv * ub.exp() + 1e-15);
        }
    }

    #[test]
    fn fixed_mode_total_laplacian_is_unit() {
        // electron background in the left half-box, ions in the right
        let g = grid(4.0, 48);
        let dens = gaussian(g, 0.3, [-1.0, 0.0, 0.0]);
        let rho = gaussian(g, 0.3, [1.0, 0.0, 0.0]);
        let solver = PoissonSolver::new(g);
        let u_bar = solver.solve(&rho).unwrap();
        let sol = picard_hat(&solver, &u_bar, &dens, &SolverSettings::default(), true, None)
            .unwrap();
        assert!((sol.laplacian.integral() - 1.0).abs() < 1e-6);
        assert!(sol.u_hat.max_value() <= 1e-12);
        let m = sol.m.unwrap();
        assert!(m > (-29.0f64).exp());
        // m <= ||g||_1 e^{||Ubar||_inf}
        let ub_max = u_bar.max_value();
        assert!(m <= ub_max.exp() + 1e-12);
        assert!(m >= bouchut_integral(&dens, &u_bar.add(&sol.u_hat).unwrap()) - 1e-12);
    }

    #[test]
    fn negative_g_is_rejected() {
        let g = grid(1.0, 8);
        let u_bar = ScalarField::zeros(g);
        let mut bad = ScalarField::zeros(g);
        bad.values_mut()[0] = -1.0;
        assert!(matches!(
            solve_hat_variable(&u_bar, &bad, &SolverSettings::default()),
            Err(Error::InvalidField(_))
        ));
    }

    #[test]
    fn fixed_mode_rejects_unnormalized_g() {
        let g = grid(2.0, 16);
        let u_bar = ScalarField::zeros(g);
        let mut dens = gaussian(g, 0.4, [0.0; 3]);
        dens.normalize_to(1.5).unwrap();
        let err = solve_hat_fixed(&u_bar, &dens, &SolverSettings::default());
        assert!(matches!(err, Err(Error::InvalidNormalization { .. })));
        let mut s = SolverSettings::default();
        s.normalize_g = true;
        assert!(solve_hat_fixed(&u_bar, &dens, &s).is_ok());
        assert!(matches!(
            bouchut_certificate(&dens, &u_bar),
            Err(Error::InvalidNormalization { .. })
        ));
    }

    #[test]
    fn guard_violation_reports_lower_bound() {
        // a single-cell electron background on a fine grid screens itself to
        // m = e^{u_hat} ~ e^{-G(0)/h}, far below the K = 2 guard e^{-1}
        let g = grid(2.0, 32);
        let mut dens = ScalarField::zeros(g);
        dens.values_mut()[g.idx(16, 16, 16)] = 1.0;
        dens.normalize_to(1.0).unwrap();
        let u_bar = ScalarField::zeros(g);
        let s = SolverSettings {
            k_cutoff: 2,
            ..SolverSettings::default()
        };
        match solve_hat_fixed(&u_bar, &dens, &s) {
            Err(Error::GuardViolation { m, guard, c_g }) => {
                assert!(m < guard);
                assert!(c_g > 0.0);
            }
            other => panic!("expected guard violation, got {other:?}"),
        }
        // the default cutoff K = 30 leaves the same input solvable
        let (_, m) = solve_hat_fixed(&u_bar, &dens, &SolverSettings::default()).unwrap();
        assert!(m > (-29.0f64).exp());
    }

    #[test]
    fn hat_solver_works_in_single_precision() {
        let g = GridSpec::<f32>::new(2.0, 16).unwrap();
        let mut dens = ScalarField::from_fn(g, |x: [f32; 3]| {
            (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 0.3).exp()
        });
        dens.normalize_to(1.0).unwrap();
        let u_bar = ScalarField::zeros(g);
        let settings = SolverSettings::<f32> {
            tolerance: 1e-5,
            ..SolverSettings::default()
        };
        let u_hat = solve_hat_variable(&u_bar, &dens, &settings).unwrap();
        assert!(u_hat.max_value() <= 0.0);
        assert!(u_hat.min_value() < -0.01);
    }

    #[test]
    fn jv_with_zero_h_is_g_mass() {
        let g = grid(2.0, 16);
        let dens = gaussian(g, 0.4, [0.0; 3]);
        let zero = ScalarField::zeros(g);
        let jv = evaluate_jv(&zero, &zero, &dens).unwrap();
        assert_relative_eq!(jv, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn jv_at_minus_u_bar_matches_closed_form() {
        let g = grid(4.0, 24);
        let dens = gaussian(g, 0.5, [0.0; 3]);
        let rho = gaussian(g, 0.5, [0.0; 3]);
        let u_bar = PoissonSolver::new(g).solve(&rho).unwrap();
        let h = u_bar.scaled(-1.0);
        let jv = evaluate_jv(&h, &u_bar, &dens).unwrap();
        let expect = dirichlet_energy(&u_bar) + dens.integral();
        assert_relative_eq!(jv, expect, epsilon = 1e-12);
    }

    #[test]
    fn l_k_point_values() {
        for k in [2u32, 10, 30] {
            assert_eq!(l_k(1.0, k).unwrap(), 0.0);
            assert_relative_eq!(
                l_k((-(k as f64)).exp(), k).unwrap(),
                -(k as f64),
                epsilon = 1e-12
            );
        }
        assert!(l_k(1.0, 1).is_err());
        assert!(l_k(-0.5, 4).is_err());
        assert!(evaluate_jk(
            &ScalarField::zeros(grid(1.0, 8)),
            &ScalarField::zeros(grid(1.0, 8)),
            &ScalarField::zeros(grid(1.0, 8)),
            1
        )
        .is_err());
    }

    #[test]
    fn m_k_is_bounded_by_one() {
        for k in [2u32, 10, 30] {
            let mut x = 1e-16f64;
            while x < 1e3 {
                let m = m_k(x, k).unwrap();
                assert!((0.0..=1.0).contains(&m), "M_K({x}) = {m}");
                x *= 1.37;
            }
        }
    }

    #[test]
    fn l_k_matches_log_above_cutoff_and_floor_below() {
        let k = 5u32;
        assert_relative_eq!(l_k(0.5, k).unwrap(), 0.5f64.ln(), epsilon = 1e-14);
        // above e^{-(K-1)} the value is exactly log x
        let x = (-(k as f64 - 1.0)).exp() * 1.001;
        assert_relative_eq!(l_k(x, k).unwrap(), x.ln(), epsilon = 1e-14);
        // below e^{-K} the value is exactly -K
        let x = (-(k as f64)).exp() * 0.5;
        assert_eq!(l_k(x, k).unwrap(), -(k as f64));
        assert_eq!(l_k(0.0, k).unwrap(), -(k as f64));
    }

    #[test]
    fn bouchut_monotone_in_potential_scale() {
        let g = grid(2.0, 16);
        let dens = gaussian(g, 0.4, [0.0; 3]);
        let u = ScalarField::from_fn(g, |x| {
            1.0 / (4.0 * std::f64::consts::PI * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt())
        });
        let zero = ScalarField::zeros(g);
        let c0 = bouchut_certificate(&dens, &zero).unwrap();
        assert_relative_eq!(c0.lower_bound, 1.0, epsilon = 1e-12);
        let c1 = bouchut_certificate(&dens, &u).unwrap();
        let c2 = bouchut_certificate(&dens, &u.scaled(2.0)).unwrap();
        assert!(c1.lower_bound > 0.0 && c1.lower_bound < 1.0);
        assert!(c2.lower_bound < c1.lower_bound);
    }

    #[test]
    fn split_field_neutral_equilibrium_has_tiny_field() {
        let g = grid(4.0, 24);
        let dens = gaussian(g, 0.5, [0.0; 3]);
        for mode in [ChargeMode::VariableCharge, ChargeMode::FixedCharge] {
            let split =
                solve_split_field(&dens, &dens, mode, &SolverSettings::default()).unwrap();
            let e_max = split.e_total.max_magnitude();
            let e_bar_max = split.e_bar.max_magnitude();
            assert!(
                e_max < 1e-5 * e_bar_max,
                "{mode:?}: |E| = {e_max:e} vs |Ebar| = {e_bar_max:e}"
            );
        }
    }

    #[test]
    fn split_field_composition_is_bit_exact() {
        let g = grid(4.0, 16);
        let rho = gaussian(g, 0.6, [0.3, 0.0, 0.0]);
        let dens = gaussian(g, 0.5, [0.0; 3]);
        let split = solve_split_field(
            &rho,
            &dens,
            ChargeMode::VariableCharge,
            &SolverSettings::default(),
        )
        .unwrap();
        let e_bar = negative_gradient(&split.u_bar).unwrap();
        let e_hat = negative_gradient(&split.u_hat).unwrap();
        for axis in 0..3 {
            for (idx, (&a, &b)) in e_bar
                .component(axis)
                .iter()
                .zip(e_hat.component(axis))
                .enumerate()
            {
                assert_eq!(
                    split.e_total.component(axis)[idx],
                    a + b,
                    "component {axis} sample {idx}"
                );
            }
        }
    }

    #[test]
    fn regularity_report_neutral_identity() {
        let g = grid(4.0, 24);
        let dens = gaussian(g, 0.5, [0.0; 3]);
        let split = solve_split_field(
            &dens,
            &dens,
            ChargeMode::FixedCharge,
            &SolverSettings::default(),
        )
        .unwrap();
        let rep = regularity_report(&split).unwrap();
        // u_hat = -u_bar forces equal weak-L3 quasi-norms
        assert_relative_eq!(
            rep.u_hat_weak_l3,
            rep.u_bar_norms.weak_l3,
            max_relative = 1e-5
        );
        assert!((rep.lap_u_hat_l1 - 1.0).abs() < 1e-6);
    }
}
