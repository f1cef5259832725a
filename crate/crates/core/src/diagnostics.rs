//! Conserved energies, velocity moments, and the interpolation/propagation
//! inequalities checked along runs.

use crate::electrostatics::PotentialSplit;
use crate::error::{Error, Result};
use crate::field::{lp_norm, ScalarField};
use crate::kinetics::{ParticleEnsemble, SimulationState};
use crate::scalar::Real;

/// Components of the conserved energy for both charge closures.
///
/// kinetic is int |v|^2 f (twice the usual kinetic energy), field is
/// int |E|^2, and the electron terms are 2 int (U-1) g e^U (variable) and
/// 2 int phi g e^phi with phi = U - log m (fixed).
#[derive(Debug, Clone, Copy)]
pub struct EnergyReport<T> {
    pub time: T,
    pub kinetic: T,
    pub field: T,
    pub electron_v: T,
    pub electron_f: T,
    pub total_v: T,
    pub total_f: T,
    /// Electron normalization used for phi; the solver's m when present.
    pub m: T,
}

/// Energy components from an ensemble and its solved split field. `g` must be
/// the same electron background the split was solved against.
pub fn energy_of_parts<T: Real>(
    ens: &ParticleEnsemble<T>,
    split: &PotentialSplit<T>,
    g: &ScalarField<T>,
    time: T,
) -> Result<EnergyReport<T>> {
    g.grid().same_grid(split.u_hat.grid())?;
    let w = ens.weight();
    let kinetic = ens
        .velocities()
        .iter()
        .fold(T::zero(), |acc, v| acc + w * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]));

    let field = split.e_total.l2_norm_squared();

    let u = split.u_total();
    let h3 = g.grid().cell_volume();
    let m = match split.m {
        Some(m) => m,
        None => {
            let s: T = g
                .values()
                .iter()
                .zip(u.values())
                .map(|(&gv, &uv)| gv * uv.exp())
                .sum();
            s * h3
        }
    };
    let log_m = m.ln();

    let mut electron_v = T::zero();
    let mut electron_f = T::zero();
    for (&gv, &uv) in g.values().iter().zip(u.values()) {
        electron_v += (uv - T::one()) * gv * uv.exp();
        let phi = uv - log_m;
        electron_f += phi * gv * phi.exp();
    }
    electron_v = electron_v * T::of(2.0) * h3;
    electron_f = electron_f * T::of(2.0) * h3;

    Ok(EnergyReport {
        time,
        kinetic,
        field,
        electron_v,
        electron_f,
        total_v: kinetic + field + electron_v,
        total_f: kinetic + field + electron_f,
        m,
    })
}

/// Energy of a simulation state; fails if the cached field is stale.
pub fn energy<T: Real>(
    state: &SimulationState<T>,
    g: &ScalarField<T>,
) -> Result<EnergyReport<T>> {
    if !state.is_fresh() {
        return Err(Error::StaleState);
    }
    energy_of_parts(&state.ensemble, &state.split, g, state.time)
}

/// Particle-sum velocity moments M_k = sum w |V_i|^k for the given orders.
pub fn moments<T: Real>(ens: &ParticleEnsemble<T>, orders: &[T]) -> Result<Vec<T>> {
    for &k in orders {
        if k < T::zero() || !k.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "moment order must be finite and nonnegative, got {}",
                k.f64()
            )));
        }
    }
    let w = ens.weight();
    Ok(orders
        .iter()
        .map(|&k| {
            ens.velocities().iter().fold(T::zero(), |acc, v| {
                let speed2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                acc + w * speed2.powf(k * T::of(0.5))
            })
        })
        .collect())
}

/// Time series of velocity moments with their running suprema.
#[derive(Debug, Clone)]
pub struct MomentReport<T> {
    pub orders: Vec<T>,
    pub times: Vec<T>,
    /// values[s][j] is M_{orders[j]} at times[s].
    pub values: Vec<Vec<T>>,
    /// Running sup over time of each order.
    pub sup_values: Vec<Vec<T>>,
}

impl<T: Real> MomentReport<T> {
    pub fn new(orders: Vec<T>) -> Self {
        Self {
            orders,
            times: Vec::new(),
            values: Vec::new(),
            sup_values: Vec::new(),
        }
    }

    pub fn record(&mut self, time: T, ens: &ParticleEnsemble<T>) -> Result<()> {
        let row = moments(ens, &self.orders)?;
        let sup = match self.sup_values.last() {
            None => row.clone(),
            Some(prev) => prev.iter().zip(&row).map(|(&a, &b)| a.max(b)).collect(),
        };
        self.times.push(time);
        self.values.push(row);
        self.sup_values.push(sup);
        Ok(())
    }

    pub fn series(&self, order_index: usize) -> Vec<T> {
        self.values.iter().map(|r| r[order_index]).collect()
    }
}

/// Explicit constant in the pointwise interpolation bound
/// rho(x) <= kappa m_k(x)^{3/(k+3)}, obtained by optimizing
/// R^{-k} m_k + (4 pi / 3) f_sup R^3 over R.
pub fn interpolation_constant<T: Real>(f_sup: T, k: T) -> T {
    let c_inf = T::of(4.0 / 3.0) * T::PI() * f_sup;
    let e_k = k / (k + T::of(3.0));
    let e_3 = T::of(3.0) / (k + T::of(3.0));
    let k3 = k / T::of(3.0);
    c_inf.powf(e_k) * (k3.powf(-e_k) + k3.powf(e_3))
}

/// Outcome of the density interpolation inequality
/// ||rho||_{(k+3)/3} <= kappa(f_sup, k) M_k^{3/(k+3)}.
#[derive(Debug, Clone, Copy)]
pub struct InterpolationVerdict<T> {
    pub left: T,
    pub right: T,
    /// right / left; at least 1 when the inequality holds.
    pub margin: T,
    pub holds: bool,
    /// The bound degenerated to zero (vanishing moment), as for cold data.
    pub degenerate: bool,
}

pub fn interpolation_check<T: Real>(
    rho: &ScalarField<T>,
    ens: &ParticleEnsemble<T>,
    k: T,
    f_sup: T,
) -> Result<InterpolationVerdict<T>> {
    if !(k > T::zero()) {
        return Err(Error::InvalidParameter("interpolation order k must be positive".into()));
    }
    if !(f_sup > T::zero()) {
        return Err(Error::InvalidParameter(
            "phase-space density bound must be positive".into(),
        ));
    }
    let m_k = moments(ens, &[k])?[0];
    let p = (k + T::of(3.0)) / T::of(3.0);
    let left = lp_norm(rho, p)?;
    let right = interpolation_constant(f_sup, k) * m_k.powf(T::of(3.0) / (k + T::of(3.0)));
    let degenerate = right == T::zero();
    let tol = T::of(1e-12);
    let holds = left <= right + tol;
    let margin = if left > T::zero() {
        right / left
    } else {
        T::infinity()
    };
    Ok(InterpolationVerdict {
        left,
        right,
        margin,
        holds,
        degenerate,
    })
}

/// Fit of the double-exponential moment envelope
/// M_k(t) <= exp[C (1 + log(1 + M_k(0))) e^{C t}].
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeVerdict<T> {
    /// Smallest constant in [C_MIN, C_MAX] satisfying the envelope.
    pub c: T,
    pub holds: bool,
    /// Worst signed violation of log M_k(t) minus the log-envelope at the
    /// fitted constant.
    pub max_violation: T,
}

pub const ENVELOPE_C_MIN: f64 = 1e-3;
pub const ENVELOPE_C_MAX: f64 = 1e3;

/// Smallest envelope constant covering a recorded moment history.
/// The violation is monotone decreasing in C, so the fit is a bisection.
pub fn moment_envelope_check<T: Real>(times: &[T], values: &[T]) -> Result<EnvelopeVerdict<T>> {
    if times.is_empty() || times.len() != values.len() {
        return Err(Error::EmptyHistory);
    }
    let m0 = values[0];
    let amp = T::one() + (T::one() + m0).ln();
    let violation = |c: T| -> T {
        let mut worst = T::neg_infinity();
        for (&t, &m) in times.iter().zip(values) {
            if m <= T::zero() {
                continue;
            }
            let v = m.ln() - c * amp * (c * t).exp();
            worst = worst.max(v);
        }
        worst
    };
    let c_min = T::of(ENVELOPE_C_MIN);
    let c_max = T::of(ENVELOPE_C_MAX);
    if violation(c_min) <= T::zero() {
        return Ok(EnvelopeVerdict {
            c: c_min,
            holds: true,
            max_violation: violation(c_min),
        });
    }
    if violation(c_max) > T::zero() {
        return Ok(EnvelopeVerdict {
            c: c_max,
            holds: false,
            max_violation: violation(c_max),
        });
    }
    let mut lo = c_min;
    let mut hi = c_max;
    for _ in 0..200 {
        let mid = (lo + hi) * T::of(0.5);
        if violation(mid) <= T::zero() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(EnvelopeVerdict {
        c: hi,
        holds: true,
        max_violation: violation(hi),
    })
}

/// Upper bound on ||rho||_{5/3} implied by an energy bound: the electron term
/// is bounded below (x e^x >= -1/e and (x-1) e^x >= -1 pointwise), so
/// int |v|^2 f <= E + c ||g||_1, and the k = 2 interpolation inequality turns
/// that into a density bound.
pub fn rho_l53_bound_from_energy<T: Real>(
    energy_bound: T,
    g_l1: T,
    f_sup: T,
    fixed_charge: bool,
) -> T {
    let slack = if fixed_charge {
        T::of(2.0) * g_l1 / T::E()
    } else {
        T::of(2.0) * g_l1
    };
    let m2 = (energy_bound + slack).max(T::zero());
    interpolation_constant(f_sup, T::of(2.0)) * m2.powf(T::of(0.6))
}
