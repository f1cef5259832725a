//! Independent oracles for the nonlinear screening solvers: a 1-D radial
//! shooting method for the spherically symmetric problem, and battery fits
//! of the positivity and regularity certificates.

use vpme_core::electrostatics::{
    bouchut_certificate, regularity_report, solve_hat_fixed, solve_hat_variable,
    solve_split_field, ChargeMode, SolverSettings,
};
use vpme_core::field::ScalarField;
use vpme_core::grid::GridSpec;
use vpme_core::{Field, Grid};

fn grid(l: f64, n: usize) -> Grid {
    GridSpec::new(l, n).unwrap()
}

fn gaussian(g: Grid, sigma: f64, center: [f64; 3]) -> Field {
    let mut f = ScalarField::from_fn(g, |x| {
        let r2: f64 = (0..3).map(|a| (x[a] - center[a]).powi(2)).sum();
        (-r2 / (2.0 * sigma * sigma)).exp()
    });
    f.normalize_to(1.0).unwrap();
    f
}

/// Radial density of the unit-mass Gaussian.
fn gaussian_radial(sigma: f64) -> impl Fn(f64) -> f64 {
    let peak = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma).powf(1.5);
    move |r: f64| peak * (-r * r / (2.0 * sigma * sigma)).exp()
}

/// Integrate u'' + (2/r) u' = g(r) e^{u} / m outward from u(0) = a, u'(0) = 0
/// with RK4; returns (u(R), u'(R), u(r_probe)).
fn integrate_radial(
    a: f64,
    m: f64,
    g: &impl Fn(f64) -> f64,
    r_max: f64,
    steps: usize,
    r_probe: f64,
) -> (f64, f64, f64) {
    let h = r_max / steps as f64;
    // series start around r = 0: u = a + g(0) e^a r^2 / (6 m)
    let mut r = 1e-6;
    let mut u = a + g(0.0) * a.exp() * r * r / (6.0 * m);
    let mut du = g(0.0) * a.exp() * r / (3.0 * m);
    let rhs = |r: f64, u: f64, du: f64| -> (f64, f64) {
        (du, g(r) * u.exp() / m - 2.0 * du / r)
    };
    let mut probe = a;
    let mut probe_done = r_probe <= r;
    while r < r_max {
        let (k1u, k1d) = rhs(r, u, du);
        let (k2u, k2d) = rhs(r + 0.5 * h, u + 0.5 * h * k1u, du + 0.5 * h * k1d);
        let (k3u, k3d) = rhs(r + 0.5 * h, u + 0.5 * h * k2u, du + 0.5 * h * k2d);
        let (k4u, k4d) = rhs(r + h, u + h * k3u, du + h * k3d);
        let u_next = u + h * (k1u + 2.0 * k2u + 2.0 * k3u + k4u) / 6.0;
        if !probe_done && r + h >= r_probe {
            let frac = (r_probe - r) / h;
            probe = u + frac * (u_next - u);
            probe_done = true;
        }
        u = u_next;
        du += h * (k1d + 2.0 * k2d + 2.0 * k3d + k4d) / 6.0;
        r += h;
    }
    (u, du, probe)
}

/// Shooting solve of lap(u) = g(|x|) e^u / m with decay at infinity: find
/// u(0) = a such that the far field matches u ~ -A/r (i.e. r u' + u = 0).
/// Returns (u(0), u(r_probe)).
fn shoot_radial(m: f64, g: &impl Fn(f64) -> f64, r_max: f64, r_probe: f64) -> (f64, f64) {
    let score = |a: f64| -> f64 {
        let (u, du, _) = integrate_radial(a, m, g, r_max, 40_000, r_probe);
        r_max * du + u
    };
    // the decay defect is monotone in a: bracket and bisect
    let mut lo = -3.0;
    let mut hi = 0.0;
    assert!(score(lo) < 0.0 && score(hi) > 0.0, "shooting bracket failed");
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if score(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    let (_, _, probe) = integrate_radial(a, m, g, r_max, 40_000, r_probe);
    (a, probe)
}

/// Average of the eight cells around the origin (cell centers straddle 0).
fn origin_value(f: &Field) -> f64 {
    let g = f.grid();
    let n = g.n();
    let c = n / 2;
    let mut acc = 0.0;
    for k in [c - 1, c] {
        for j in [c - 1, c] {
            for i in [c - 1, c] {
                acc += f.at(i, j, k);
            }
        }
    }
    acc / 8.0
}

// Variable-charge screening of a radial Gaussian with no Newtonian part:
// the grid solution at the origin against the 1-D shooting oracle.
#[test]
fn variable_hat_matches_radial_shooting() {
    let g = grid(4.0, 48);
    let dens = gaussian(g, 0.4, [0.0; 3]);
    let u_bar = ScalarField::zeros(g);
    let settings = SolverSettings::default();
    let u_hat = solve_hat_variable(&u_bar, &dens, &settings).unwrap();

    // the eight samples nearest the origin sit at radius sqrt(3)/2 h;
    // compare against the radial solution probed there
    let r_probe = 3.0f64.sqrt() / 2.0 * g.spacing();
    let (_, oracle) = shoot_radial(1.0, &gaussian_radial(0.4), 40.0, r_probe);
    let got = origin_value(&u_hat);
    let rel = (got - oracle).abs() / oracle.abs();
    assert!(
        rel < 0.01,
        "u_hat(0): grid {got:.6}, shooting {oracle:.6}, rel {rel:.4}"
    );
}

// Fixed-charge screening: the self-consistent normalization m against the
// shooting oracle iterated on m, plus the unit-Laplacian identity.
#[test]
fn fixed_hat_matches_radial_shooting() {
    let g = grid(4.0, 48);
    let dens = gaussian(g, 0.4, [0.0; 3]);
    let u_bar = ScalarField::zeros(g);
    let settings = SolverSettings::default();
    let (u_hat, m) = solve_hat_fixed(&u_bar, &dens, &settings).unwrap();

    // oracle: iterate m -> int g e^{u_m} with u_m the radial solution
    let radial = gaussian_radial(0.4);
    let mut m_oracle = 1.0;
    for _ in 0..40 {
        let (a, _) = shoot_radial(m_oracle, &radial, 40.0, 0.1);
        let steps = 40_000;
        let r_max = 40.0;
        let h = r_max / steps as f64;
        // quadrature of g e^u over radii, advancing u alongside
        let mut integral = 0.0;
        let mut r = 1e-6;
        let mut u = a;
        let mut du = 0.0;
        let rhs = |r: f64, u: f64, du: f64| -> (f64, f64) {
            (du, radial(r) * u.exp() / m_oracle - 2.0 * du / r)
        };
        while r < r_max {
            integral += radial(r) * u.exp() * 4.0 * std::f64::consts::PI * r * r * h;
            let (k1u, k1d) = rhs(r, u, du);
            let (k2u, k2d) = rhs(r + 0.5 * h, u + 0.5 * h * k1u, du + 0.5 * h * k1d);
            let (k3u, k3d) = rhs(r + 0.5 * h, u + 0.5 * h * k2u, du + 0.5 * h * k2d);
            let (k4u, k4d) = rhs(r + h, u + h * k3u, du + h * k3d);
            u += h * (k1u + 2.0 * k2u + 2.0 * k3u + k4u) / 6.0;
            du += h * (k1d + 2.0 * k2d + 2.0 * k3d + k4d) / 6.0;
            r += h;
        }
        if (integral - m_oracle).abs() < 1e-10 {
            m_oracle = integral;
            break;
        }
        m_oracle = integral;
    }

    let rel_m = (m - m_oracle).abs() / m_oracle;
    assert!(rel_m < 0.01, "m: grid {m:.6}, oracle {m_oracle:.6}, rel {rel_m:.4}");
    assert!(u_hat.max_value() <= 1e-12);
}

// Battery fit of the positivity certificate: one constant c makes the
// modeled lower bound hold across scenarios.
#[test]
fn bouchut_bound_battery_fit() {
    let g = grid(4.0, 32);
    let dens = gaussian(g, 0.4, [0.0; 3]);
    let potentials = [
        ScalarField::zeros(g),
        ScalarField::from_fn(g, |x| {
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            1.0 / (4.0 * std::f64::consts::PI * r.max(0.05))
        }),
        ScalarField::from_fn(g, |x| {
            2.0 * (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 0.8).exp()
        }),
    ];
    let certs: Vec<_> = potentials
        .iter()
        .map(|u| bouchut_certificate(&dens, u).unwrap())
        .collect();
    // fit the battery constant and verify every certificate with it
    let fitted_c = certs
        .iter()
        .map(|c| c.fitted_c())
        .fold(0.0f64, f64::max);
    for (i, c) in certs.iter().enumerate() {
        assert!(c.lower_bound > 0.0, "scenario {i}: vanished");
        assert!(
            c.lower_bound >= c.bound_with(fitted_c) * (1.0 - 1e-9),
            "scenario {i}: measured {} below modeled {}",
            c.lower_bound,
            c.bound_with(fitted_c)
        );
    }
}

// Battery fit of the screening regularity estimates: one constant C makes
// the three modeled bounds exp(C ||rho||_1^{1/6} ||rho||_{5/3}^{5/6}) hold
// across five scenarios simultaneously.
#[test]
fn regularity_battery_single_constant() {
    let g = grid(4.0, 32);
    let dens = gaussian(g, 0.5, [0.0; 3]);
    let rhos = [
        gaussian(g, 0.3, [0.0; 3]),
        gaussian(g, 0.5, [0.6, 0.0, 0.0]),
        gaussian(g, 0.7, [0.0, -0.5, 0.3]),
        gaussian(g, 0.45, [0.9, 0.4, 0.0]),
        gaussian(g, 0.6, [0.0, 0.0, 1.0]),
    ];
    let settings = SolverSettings::default();
    let mut fitted_c: f64 = 0.0;
    let mut reports = Vec::new();
    for rho in &rhos {
        let split =
            solve_split_field(rho, &dens, ChargeMode::VariableCharge, &settings).unwrap();
        let rep = regularity_report(&split).unwrap();
        // smallest C making the three modeled bounds hold for this scenario:
        // measured <= exp(C * exponent), with the measured quantities
        // u_hat_weak_l3, e_hat_weak_l32, u_hat_linf
        for measured in [rep.u_hat_weak_l3, rep.e_hat_weak_l32, rep.u_hat_linf] {
            if measured > 1.0 {
                fitted_c = fitted_c.max(measured.ln() / rep.bound_exponent);
            }
        }
        reports.push(rep);
    }
    // the modeled bounds hold with a single battery constant (at least the
    // trivial fit); verify and check the constant is modest
    let c = fitted_c.max(1.0);
    for (i, rep) in reports.iter().enumerate() {
        let bound = (c * rep.bound_exponent).exp();
        assert!(rep.u_hat_weak_l3 <= bound, "scenario {i} weak-L3");
        assert!(rep.e_hat_weak_l32 <= bound, "scenario {i} field weak-L3/2");
        assert!(rep.u_hat_linf <= bound, "scenario {i} sup");
    }
    assert!(c < 10.0, "battery constant too large: {c}");
}

// Fixed-charge runs report unit L1 mass of the screening Laplacian.
#[test]
fn fixed_mode_unit_laplacian_l1() {
    let g = grid(4.0, 32);
    let dens = gaussian(g, 0.5, [-0.8, 0.0, 0.0]);
    let rho = gaussian(g, 0.4, [0.8, 0.0, 0.0]);
    let split =
        solve_split_field(&rho, &dens, ChargeMode::FixedCharge, &SolverSettings::default())
            .unwrap();
    let rep = regularity_report(&split).unwrap();
    assert!((rep.lap_u_hat_l1 - 1.0).abs() < 1e-6, "L1 = {}", rep.lap_u_hat_l1);
}
