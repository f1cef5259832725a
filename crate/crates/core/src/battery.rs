//! The acceptance battery: ten pass/fail criteria covering the solver
//! oracles, the electrostatic certificates, conservation, moment
//! propagation, transport correctness, and the stability envelope. The CLI
//! `verify` subcommand and the acceptance test suite both run these.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ScenarioConfig;
use crate::diagnostics::{energy_of_parts, interpolation_check, moment_envelope_check, moments};
use crate::electrostatics::{
    evaluate_jv, jv_gateaux, solve_split_field_with, ChargeMode, SolverSettings,
};
use crate::error::Result;
use crate::field::ScalarField;
use crate::grid::GridSpec;
use crate::kinetics::{run, FieldContext, SimulationState, Snapshot};
use crate::poisson::PoissonSolver;
use crate::stability::{
    field_stability_rows, gronwall_envelope, gronwall_t0, h_modulus, verify_stability, Coupling,
    StabilityParams, w2_entropic, w2_exact,
};
use crate::{Field, Grid, ParticleEnsemble, Scalar};

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub index: usize,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:2} {:<28} {:>8.2}s  {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.index,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

fn finish(
    index: usize,
    name: &'static str,
    budget_seconds: f64,
    started: Instant,
    outcome: Result<(bool, String)>,
) -> CriterionReport {
    let seconds = started.elapsed().as_secs_f64();
    let (mut pass, detail) = match outcome {
        Ok((p, d)) => (p, d),
        Err(e) => (false, format!("error: {e}")),
    };
    if seconds > budget_seconds {
        pass = false;
    }
    CriterionReport {
        index,
        name,
        pass,
        detail,
        seconds,
        budget_seconds,
    }
}

fn grid(l: f64, n: usize) -> Grid {
    GridSpec::new(l, n).expect("battery grid")
}

fn normalized(mut f: Field) -> Field {
    f.normalize_to(1.0).expect("positive mass");
    f
}

fn gaussian(g: Grid, sigma: f64, center: [f64; 3]) -> Field {
    normalized(ScalarField::from_fn(g, |x| {
        let r2: f64 = (0..3).map(|a| (x[a] - center[a]).powi(2)).sum();
        (-r2 / (2.0 * sigma * sigma)).exp()
    }))
}

fn ball(g: Grid, radius: f64, center: [f64; 3]) -> Field {
    normalized(ScalarField::from_fn(g, |x| {
        let r2: f64 = (0..3).map(|a| (x[a] - center[a]).powi(2)).sum();
        if r2 <= radius * radius {
            1.0
        } else {
            0.0
        }
    }))
}

fn two_bump(g: Grid, sigma: f64, separation: f64) -> Field {
    normalized(ScalarField::from_fn(g, |x| {
        let half = separation / 2.0;
        let r1: f64 =
            (x[0] + half).powi(2) + x[1].powi(2) + x[2].powi(2);
        let r2: f64 = (x[0] - half).powi(2) + x[1].powi(2) + x[2].powi(2);
        (-r1 / (2.0 * sigma * sigma)).exp() + (-r2 / (2.0 * sigma * sigma)).exp()
    }))
}

/// Random superposition of Gaussians, the "random smooth source" family.
fn random_smooth_source(g: Grid, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<([f64; 3], f64, f64)> = (0..5)
        .map(|_| {
            let c = [
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
            ];
            (c, rng.gen_range(0.3..0.6), rng.gen_range(0.2..1.0))
        })
        .collect();
    ScalarField::from_fn(g, |x| {
        bumps
            .iter()
            .map(|(c, s, w)| {
                let r2: f64 = (0..3).map(|a| (x[a] - c[a]).powi(2)).sum();
                w * (-r2 / (2.0 * s * s)).exp()
            })
            .sum()
    })
}

// 1. FFT-convolution solution against direct summation on random sources.
pub fn criterion_poisson_oracle() -> CriterionReport {
    let started = Instant::now();
    let outcome = (|| {
        let mut worst: f64 = 0.0;
        for (n, seed) in [(16usize, 101u64), (16, 102), (32, 103), (32, 104)] {
            let g = grid(3.0, n);
            let rho = random_smooth_source(g, seed);
            let solver = PoissonSolver::new(g);
            let fast = solver.solve(&rho)?;
            let slow = solver.solve_direct(&rho)?;
            worst = worst.max(fast.relative_l2_error(&slow)?);
        }
        Ok((worst < 1e-6, format!("max rel L2 err {worst:.3e} (tol 1e-6)")))
    })();
    finish(1, "poisson-oracle-equivalence", 30.0, started, outcome)
}

// 2. Neutral equilibrium rho_f = g forces U = 0 and u_hat = -u_bar.
pub fn criterion_neutral_equilibrium() -> CriterionReport {
    let started = Instant::now();
    let outcome = (|| {
        let g = grid(4.0, 32);
        let dens = gaussian(g, 0.5, [0.0; 3]);
        let solver = PoissonSolver::new(g);
        let settings = SolverSettings {
            tolerance: 1e-10,
            ..SolverSettings::default()
        };
        let mut worst_field: f64 = 0.0;
        let mut worst_hat: f64 = 0.0;
        for mode in [ChargeMode::VariableCharge, ChargeMode::FixedCharge] {
            let split = solve_split_field_with(&solver, &dens, &dens, mode, &settings, None)?;
            let e_ratio = split.e_total.max_magnitude() / split.e_bar.max_magnitude();
            let hat_err = split
                .u_hat
                .relative_l2_error(&split.u_bar.scaled(-1.0))?;
            worst_field = worst_field.max(e_ratio);
            worst_hat = worst_hat.max(hat_err);
        }
        Ok((
            worst_field < 1e-6 && worst_hat < 1e-6,
            format!("|E|/|Ebar| {worst_field:.3e}, |u_hat + u_bar| rel {worst_hat:.3e} (tol 1e-6)"),
        ))
    })();
    finish(2, "neutral-equilibrium-identity", 10.0, started, outcome)
}

struct HatScenario {
    name: &'static str,
    rho: Field,
    g: Field,
    mode: ChargeMode,
}

fn hat_scenarios() -> Vec<HatScenario> {
    let g = grid(4.0, 32);
    vec![
        HatScenario {
            name: "gauss-offset-var",
            rho: gaussian(g, 0.4, [0.8, 0.0, 0.0]),
            g: gaussian(g, 0.5, [0.0; 3]),
            mode: ChargeMode::VariableCharge,
        },
        HatScenario {
            name: "ball-var",
            rho: ball(g, 0.8, [0.0; 3]),
            g: gaussian(g, 0.5, [0.0; 3]),
            mode: ChargeMode::VariableCharge,
        },
        HatScenario {
            name: "twobump-var",
            rho: two_bump(g, 0.35, 2.4),
            g: gaussian(g, 0.6, [0.0; 3]),
            mode: ChargeMode::VariableCharge,
        },
        HatScenario {
            name: "split-halves-fixed",
            rho: gaussian(g, 0.3, [1.0, 0.0, 0.0]),
            g: gaussian(g, 0.3, [-1.0, 0.0, 0.0]),
            mode: ChargeMode::FixedCharge,
        },
        HatScenario {
            name: "twobump-fixed",
            rho: two_bump(g, 0.35, 2.4),
            g: gaussian(g, 0.5, [0.0; 3]),
            mode: ChargeMode::FixedCharge,
        },
        HatScenario {
            name: "ball-twobump-fixed",
            rho: ball(g, 0.7, [0.0; 3]),
            g: two_bump(g, 0.4, 2.0),
            mode: ChargeMode::FixedCharge,
        },
    ]
}

// 3. Sign and mass certificates across the scenario battery.
pub fn criterion_sign_and_mass() -> CriterionReport {
    let started = Instant::now();
    let outcome = (|| {
        let settings = SolverSettings::default();
        let k_guard = (-(settings.k_cutoff as f64 - 1.0)).exp();
        let mut details = Vec::new();
        let mut pass = true;
        for sc in hat_scenarios() {
            let solver = PoissonSolver::new(*sc.rho.grid());
            let split = solve_split_field_with(&solver, &sc.rho, &sc.g, sc.mode, &settings, None)?;
            let sign_ok = split.u_hat_max() <= 1e-12;
            pass &= sign_ok;
            if !sign_ok {
                details.push(format!("{}: max u_hat {:.2e}", sc.name, split.u_hat_max()));
            }
            if sc.mode == ChargeMode::FixedCharge {
                let mass = split.lap_u_hat_integral();
                let m = split.m.expect("fixed-charge m");
                let mass_ok = (mass - 1.0).abs() < 1e-6;
                let guard_ok = m > k_guard;
                let upper_ok = m <= split.u_bar.max_value().exp() + 1e-12;
                pass &= mass_ok && guard_ok && upper_ok;
                if !(mass_ok && guard_ok && upper_ok) {
                    details.push(format!("{}: mass {mass:.8}, m {m:.3e}", sc.name));
                }
            }
        }
        let detail = if details.is_empty() {
            "6 scenarios: sign <= 1e-12, fixed-charge mass within 1e-6, m above guard".to_string()
        } else {
            details.join("; ")
        };
        Ok((pass, detail))
    })();
    finish(3, "sign-and-mass-certificates", 120.0, started, outcome)
}

/// Smooth random bump of amplitude `amp`, used as a variational perturbation.
fn random_bump(g: Grid, seed: u64, amp: f64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = [
        rng.gen_range(-1.5..1.5),
        rng.gen_range(-1.5..1.5),
        rng.gen_range(-1.5..1.5),
    ];
    let s = rng.gen_range(0.3..0.8);
    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    ScalarField::from_fn(g, |x| {
        let r2: f64 = (0..3).map(|a| (x[a] - c[a]).powi(2)).sum();
        sign * amp * (-r2 / (2.0 * s * s)).exp()
    })
}

// 4. Variational optimality of the screened potential and the consistency of
// the first variation with its weak form.
pub fn criterion_variational_optimality() -> CriterionReport {
    let started = Instant::now();
    let outcome = (|| {
        let settings = SolverSettings::default();
        let mut pass = true;
        let mut worst_gap = f64::INFINITY;
        let mut worst_gateaux: f64 = 0.0;
        for sc in hat_scenarios()
            .into_iter()
            .filter(|s| s.mode == ChargeMode::VariableCharge)
        {
            let g = *sc.rho.grid();
            let solver = PoissonSolver::new(g);
            let split =
                solve_split_field_with(&solver, &sc.rho, &sc.g, sc.mode, &settings, None)?;
            let j_min = evaluate_jv(&split.u_hat, &split.u_bar, &sc.g)?;
            for pert in 0..20u64 {
                let delta = random_bump(g, 1000 + pert, 0.1);
                let j_pert = evaluate_jv(&split.u_hat.add(&delta)?, &split.u_bar, &sc.g)?;
                worst_gap = worst_gap.min(j_pert - j_min);
                pass &= j_pert >= j_min;
            }
            for dir in 0..10u64 {
                let delta = random_bump(g, 2000 + dir, 0.1);
                let weak = jv_gateaux(&split.u_hat, &split.u_bar, &sc.g, &delta)?;
                let eps = 1e-4;
                let jp = evaluate_jv(&split.u_hat.add(&delta.scaled(eps))?, &split.u_bar, &sc.g)?;
                let jm =
                    evaluate_jv(&split.u_hat.add(&delta.scaled(-eps))?, &split.u_bar, &sc.g)?;
                let fd = (jp - jm) / (2.0 * eps);
                // scale of the constituent terms; at the minimizer the weak
                // form itself nearly cancels
                let grad_part = 2.0
                    * crate::electrostatics::dirichlet_inner(&split.u_hat, &delta).abs();
                let exp_part: f64 = sc
                    .g
                    .values()
                    .iter()
                    .zip(split.u_bar.values())
                    .zip(split.u_hat.values())
                    .zip(delta.values())
                    .map(|(((&gv, &ub), &uh), &dv)| gv * (ub + uh).exp() * dv)
                    .sum::<f64>()
                    .abs()
                    * g.cell_volume();
                let scale = grad_part + exp_part;
                let rel = (fd - weak).abs() / scale.max(1e-300);
                worst_gateaux = worst_gateaux.max(rel);
                pass &= rel < 1e-6;
            }
        }
        Ok((
            pass,
            format!(
                "min J gap {worst_gap:.3e} (>= 0), worst first-variation rel err {worst_gateaux:.3e} (tol 1e-6)"
            ),
        ))
    })();
    finish(4, "variational-optimality", 60.0, started, outcome)
}

fn scenario_text(
    n: usize,
    particles: usize,
    seed: u64,
    mode: &str,
    dt: f64,
    t_final: f64,
    every: usize,
    g_part: &str,
    f0_part: &str,
    delta: f64,
) -> String {
    format!(
        "grid.L = 4.0\ngrid.n = {n}\nparticles.N = {particles}\nseed = {seed}\n\
         mode = {mode}\ndt = {dt}\nT = {t_final}\nsnapshot.every = {every}\n\
         {g_part}\n{f0_part}\nperturb.delta = {delta}\nperturb.seed = 77\n"
    )
}

const G_GAUSS: &str = "g.kind = gaussian\ng.sigma = 0.6";
const F0_TWOBUMP: &str = "f0.spatial.kind = twobump\nf0.spatial.sigma = 0.3\n\
                          f0.spatial.separation = 2.0\nf0.velocity.kind = maxwellian\n\
                          f0.velocity.sigma = 0.3";

/// In-memory run of a scenario config: per-step states observed, snapshots
/// collected.
fn run_scenario(
    cfg: &ScenarioConfig,
    mut per_step: impl FnMut(&SimulationState<Scalar>) -> Result<()>,
) -> Result<(Vec<Snapshot<Scalar>>, FieldContext<Scalar>)> {
    let ctx = cfg.field_context()?;
    let state = SimulationState::init(&ctx, cfg.initial_ensemble()?)?;
    let (snaps, _) = run(&ctx, state, cfg.dt, cfg.t_final, cfg.snapshot_every, |s| {
        per_step(s)
    })?;
    Ok((snaps, ctx))
}

// 5. Energy conservation over T = 1 at the reference resolution.
pub fn criterion_energy_conservation() -> CriterionReport {
    let started = Instant::now();
    let outcome = (|| {
        let mut details = Vec::new();
        let mut pass = true;
        for mode in ["variable", "fixed"] {
            let text = scenario_text(
                48,
                200_000,
                11,
                mode,
                0.01,
                1.0,
                25,
                "g.kind = gaussian\ng.sigma = 0.5",
                "f0.spatial.kind = gaussian\nf0.spatial.sigma = 0.5\n\
                 f0.spatial.center = 0.4,0,0\nf0.velocity.kind = maxwellian\n\
                 f0.velocity.sigma = 0.4",
                0.0,
            );
            let cfg = ScenarioConfig::parse(&text)?;
            let g_field = cfg.g_field()?;
            let fixed = cfg.mode == ChargeMode::FixedCharge;
            let mut e0: Option<f64> = None;
            let mut worst: f64 = 0.0;
            run_scenario(&cfg, |s| {
                let rep = energy_of_parts(&s.ensemble, &s.split, &g_field, s.time)?;
                let total = if fixed { rep.total_f } else { rep.total_v };
                match e0 {
                    None => e0 = Some(total),
                    Some(base) => {
                        worst = worst.max((total - base).abs() / base.abs());
                    }
                }
                Ok(())
            })?;
            pass &= worst < 0.01;
            details.push(format!("{mode}: drift {worst:.3e}"));
        }
        Ok((pass, format!("{} (tol 1e-2)", details.join(", "))))
    })();
    finish(5, "energy-conservation", 600.0, started, outcome)
}

// 6. Moment propagation envelope and the interpolation inequality along runs.
pub fn criterion_moment_envelope() -> CriterionReport {
    let started = Instant::now();
    let outcome = (|| {
        let orders = [2.0, 4.0, 6.0];
        let scenarios = [
            scenario_text(32, 50_000, 21, "variable", 0.01, 2.0, 20, G_GAUSS, F0_TWOBUMP, 0.0),
            scenario_text(
                32,
                50_000,
                22,
                "fixed",
                0.01,
                2.0,
                20,
                "g.kind = gaussian\ng.sigma = 0.35\ng.center = -1,0,0",
                "f0.spatial.kind = gaussian\nf0.spatial.sigma = 0.35\n\
                 f0.spatial.center = 1,0,0\nf0.velocity.kind = maxwellian\n\
                 f0.velocity.sigma = 0.3",
                0.0,
            ),
        ];
        let mut shared_c: f64 = 0.0;
        let mut min_margin = f64::INFINITY;
        let mut pass = true;
        for text in &scenarios {
            let cfg = ScenarioConfig::parse(text)?;
            let f_sup = cfg.initial_spec().f_sup().expect("analytic bound");
            let mut times = Vec::new();
            let mut histories: Vec<Vec<f64>> = vec![Vec::new(); orders.len()];
            let (snaps, ctx) = run_scenario(&cfg, |s| {
                let ms = moments(&s.ensemble, &orders)?;
                times.push(s.time);
                for (h, v) in histories.iter_mut().zip(ms) {
                    h.push(v);
                }
                Ok(())
            })?;
            for hist in &histories {
                let verdict = moment_envelope_check(&times, hist)?;
                pass &= verdict.holds;
                shared_c = shared_c.max(verdict.c);
            }
            for snap in &snaps {
                let dep = crate::kinetics::deposit_density(&snap.ensemble, ctx.grid)?;
                for &k in &orders {
                    let v = interpolation_check(&dep.rho, &snap.ensemble, k, f_sup)?;
                    min_margin = min_margin.min(v.margin);
                    pass &= v.holds && v.margin >= 1.0;
                }
            }
        }
        pass &= shared_c <= 10.0;
        Ok((
            pass,
            format!("shared C {shared_c:.3} (cap 10), min interpolation margin {min_margin:.3}"),
        ))
    })();
    finish(6, "moment-propagation-envelope", 900.0, started, outcome)
}

// 7. Transport solver correctness: brute force at N = 8, entropic at N = 512.
pub fn criterion_w2_solvers() -> CriterionReport {
    let started = Instant::now();
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut make = |n: usize| -> Result<ParticleEnsemble<Scalar>> {
            let positions = (0..n)
                .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
                .collect();
            let velocities = (0..n)
                .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
                .collect();
            ParticleEnsemble::new(positions, velocities, (0..n as u64).collect())
        };

        // exhaustive assignment search at N = 8
        let a8 = make(8)?;
        let b8 = make(8)?;
        let fast = w2_exact(&a8, &b8)?;
        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (0..8).collect();
        permute_costs(&mut perm, 0, &a8, &b8, &mut best);
        let brute = (best / 8.0).sqrt();
        let exact_err = (fast - brute).abs();

        // entropic estimate at N = 512
        let a = make(512)?;
        let b = make(512)?;
        let exact = w2_exact(&a, &b)?;
        let ent = w2_entropic(&a, &b, 1e-3, 300)?;
        let ent_rel = (ent.value - exact).abs() / exact;

        Ok((
            exact_err < 1e-12 && ent_rel < 0.02,
            format!(
                "N=8 exact vs brute force {exact_err:.2e} (tol 1e-12); \
                 N=512 entropic rel err {ent_rel:.3e} (tol 2e-2, gap bound {:.2e})",
                ent.gap_bound
            ),
        ))
    })();
    finish(7, "w2-solver-correctness", 120.0, started, outcome)
}

fn permute_costs(
    perm: &mut Vec<usize>,
    k: usize,
    a: &ParticleEnsemble<Scalar>,
    b: &ParticleEnsemble<Scalar>,
    best: &mut f64,
) {
    if k == perm.len() {
        let mut cost = 0.0;
        for (i, &j) in perm.iter().enumerate() {
            let xa = a.positions()[i];
            let xb = b.positions()[j];
            let va = a.velocities()[i];
            let vb = b.velocities()[j];
            for c in 0..3 {
                cost += (xa[c] - xb[c]).powi(2) + (va[c] - vb[c]).powi(2);
            }
        }
        if cost < *best {
            *best = cost;
        }
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute_costs(perm, k + 1, a, b, best);
        perm.swap(k, i);
    }
}

/// The paired perturbation runs shared by criteria 8 and 9.
struct PairedRuns {
    base: Vec<Snapshot<Scalar>>,
    perturbed: Vec<(f64, Vec<Snapshot<Scalar>>)>,
    ctx: FieldContext<Scalar>,
}

fn paired_runs() -> Result<PairedRuns> {
    let make = |delta: f64| {
        scenario_text(32, 1024, 33, "variable", 0.01, 1.0, 10, G_GAUSS, F0_TWOBUMP, delta)
    };
    let base_cfg = ScenarioConfig::parse(&make(0.0))?;
    let (base, ctx) = run_scenario(&base_cfg, |_| Ok(()))?;
    let mut perturbed = Vec::new();
    for delta in [1e-3, 1e-4] {
        let cfg = ScenarioConfig::parse(&make(delta))?;
        let (snaps, _) = run_scenario(&cfg, |_| Ok(()))?;
        perturbed.push((delta, snaps));
    }
    Ok(PairedRuns {
        base,
        perturbed,
        ctx,
    })
}

// 8. The two-regime stability envelope over paired perturbation runs.
fn criterion_stability_envelope_with(runs: &PairedRuns, started: Instant) -> CriterionReport {
    let outcome = (|| {
        let params = StabilityParams::default();
        let mut pass = true;
        let mut details = Vec::new();
        let mut final_w2 = Vec::new();
        for (delta, snaps) in &runs.perturbed {
            let report =
                verify_stability(&runs.base, snaps, &runs.ctx, &Coupling::Identity, &params)?;
            pass &= report.all_w2_squared_below_d;
            pass &= report.envelope_verified;
            final_w2.push(report.rows.last().expect("nonempty").w2);
            details.push(format!(
                "delta {delta:.0e}: C {:.3}, W2(0) {:.2e}, W2(T) {:.2e}",
                report.fitted_c,
                report.w2_initial,
                report.rows.last().expect("nonempty").w2
            ));
        }
        // monotonicity of the final distance in the perturbation size
        pass &= final_w2[1] < final_w2[0];
        Ok((pass, details.join("; ")))
    })();
    finish(8, "stability-gronwall-envelope", 1200.0, started, outcome)
}

// 9. Field stability inequalities along the paired runs.
fn criterion_field_stability_with(runs: &PairedRuns, started: Instant) -> CriterionReport {
    let outcome = (|| {
        let mut max_bar: f64 = 0.0;
        let mut max_hat: f64 = 0.0;
        for (_, snaps) in &runs.perturbed {
            let rows = field_stability_rows(&runs.base, snaps, &runs.ctx, 2048)?;
            for r in rows {
                max_bar = max_bar.max(r.ratio_bar);
                max_hat = max_hat.max(r.ratio_hat);
            }
        }
        let pass = max_bar <= 1.1 && max_hat <= 10.0;
        Ok((
            pass,
            format!("max Newtonian ratio {max_bar:.3e} (cap 1.1), screening ratio {max_hat:.3e} (battery cap 10)"),
        ))
    })();
    finish(9, "field-stability-inequalities", 300.0, started, outcome)
}

pub fn criterion_stability_envelope() -> CriterionReport {
    let started = Instant::now();
    match paired_runs() {
        Ok(runs) => criterion_stability_envelope_with(&runs, started),
        Err(e) => finish(8, "stability-gronwall-envelope", 1200.0, started, Err(e)),
    }
}

pub fn criterion_field_stability() -> CriterionReport {
    let started = Instant::now();
    match paired_runs() {
        Ok(runs) => criterion_field_stability_with(&runs, started),
        Err(e) => finish(9, "field-stability-inequalities", 300.0, started, Err(e)),
    }
}

// 10. Closed-form checks of the modulus and envelope functions.
pub fn criterion_modulus_and_envelope() -> CriterionReport {
    let started = Instant::now();
    let outcome = (|| {
        let knee: f64 = (-2.0f64).exp();
        let branch_gap = (h_modulus(knee)? - 4.0 * knee).abs();
        let mut monotone = true;
        let mut concave = true;
        let mut prev = 0.0;
        let mut vals = Vec::with_capacity(1000);
        for i in 0..1000 {
            let s = (i as f64 + 0.5) / 1000.0;
            let v = h_modulus(s)?;
            monotone &= v >= prev - 1e-15;
            prev = v;
            vals.push(v);
        }
        for i in 1..vals.len() - 1 {
            concave &= vals[i + 1] - 2.0 * vals[i] + vals[i - 1] <= 1e-12;
        }

        let c = 1.3;
        // continuity across the 1/2 starting point
        let jump_half = (gronwall_envelope(0.5, c, 0.7)? - 0.5 * (c * 0.7f64).exp()).abs();
        // branch agreement at the crossover time
        let w0 = 0.08;
        let t0 = gronwall_t0(w0, c)?.expect("below 1/2");
        let first = (w0.ln() * (-c * t0).exp()).exp();
        let second = 0.5;
        let jump_t0 = (first - second).abs()
            .max((gronwall_envelope(w0, c, t0)? - 0.5).abs());
        let pass = branch_gap < 1e-15 && monotone && concave && jump_half < 1e-12 && jump_t0 < 1e-12;
        Ok((
            pass,
            format!(
                "H branch gap {branch_gap:.1e}, monotone {monotone}, concave {concave}, \
                 envelope continuity {:.1e} / {:.1e} (tol 1e-12)",
                jump_half, jump_t0
            ),
        ))
    })();
    finish(10, "modulus-and-envelope", 1.0, started, outcome)
}

/// Run all ten criteria in order, sharing the paired runs of 8 and 9.
pub fn run_all() -> Vec<CriterionReport> {
    let mut reports = vec![
        criterion_poisson_oracle(),
        criterion_neutral_equilibrium(),
        criterion_sign_and_mass(),
        criterion_variational_optimality(),
        criterion_energy_conservation(),
        criterion_moment_envelope(),
        criterion_w2_solvers(),
    ];
    let started = Instant::now();
    match paired_runs() {
        Ok(runs) => {
            reports.push(criterion_stability_envelope_with(&runs, started));
            reports.push(criterion_field_stability_with(&runs, Instant::now()));
        }
        Err(e) => {
            let msg = format!("paired runs failed: {e}");
            reports.push(CriterionReport {
                index: 8,
                name: "stability-gronwall-envelope",
                pass: false,
                detail: msg.clone(),
                seconds: 0.0,
                budget_seconds: 1200.0,
            });
            reports.push(CriterionReport {
                index: 9,
                name: "field-stability-inequalities",
                pass: false,
                detail: msg,
                seconds: 0.0,
                budget_seconds: 300.0,
            });
        }
    }
    reports.push(criterion_modulus_and_envelope());
    reports
}
