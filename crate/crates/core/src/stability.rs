//! Distance between paired runs: couplings, exact and entropic Wasserstein-2
//! transport, the log-Lipschitz modulus H, and the two-regime Gronwall
//! envelope fit.


use crate::error::{Error, Result};
use crate::field::lp_norm;
use crate::kinetics::{
    deposit_density, interpolate_acceleration, FieldContext, ParticleEnsemble, Snapshot,
};
use crate::scalar::Real;

/// Pairing between the particles of two ensembles.
#[derive(Debug, Clone)]
pub enum Coupling {
    /// Pair particles sharing an id; realizes the matched-seed initial
    /// coupling. Requires equal counts.
    Identity,
    /// Explicit id pairs (id_a, id_b); must form a bijection.
    Explicit(Vec<(u64, u64)>),
}

impl Coupling {
    /// Resolve to index pairs (idx_a, idx_b).
    fn resolve<T: Real>(
        &self,
        a: &ParticleEnsemble<T>,
        b: &ParticleEnsemble<T>,
    ) -> Result<Vec<(usize, usize)>> {
        if a.count() != b.count() {
            return Err(Error::SizeMismatch(a.count(), b.count()));
        }
        let by_id_a = a.index_by_id();
        let by_id_b = b.index_by_id();
        match self {
            Coupling::Identity => Ok((0..a.count()).map(|id| (by_id_a[id], by_id_b[id])).collect()),
            Coupling::Explicit(pairs) => {
                if pairs.len() != a.count() {
                    return Err(Error::CouplingMismatch(format!(
                        "expected {} pairs, got {}",
                        a.count(),
                        pairs.len()
                    )));
                }
                let mut seen_a = vec![false; a.count()];
                let mut seen_b = vec![false; b.count()];
                let mut out = Vec::with_capacity(pairs.len());
                for &(ia, ib) in pairs {
                    let (ia, ib) = (ia as usize, ib as usize);
                    if ia >= a.count() || ib >= b.count() || seen_a[ia] || seen_b[ib] {
                        return Err(Error::CouplingMismatch(
                            "pairs must form a bijection between the id sets".into(),
                        ));
                    }
                    seen_a[ia] = true;
                    seen_b[ib] = true;
                    out.push((by_id_a[ia], by_id_b[ib]));
                }
                Ok(out)
            }
        }
    }
}

/// Coupled squared phase-space displacement
/// D = sum w (|X1 - X2|^2 + |V1 - V2|^2) over paired particles.
pub fn coupled_distance<T: Real>(
    a: &ParticleEnsemble<T>,
    b: &ParticleEnsemble<T>,
    coupling: &Coupling,
) -> Result<T> {
    let pairs = coupling.resolve(a, b)?;
    let w = a.weight();
    let mut d = T::zero();
    for (ia, ib) in pairs {
        let xa = a.positions()[ia];
        let xb = b.positions()[ib];
        let va = a.velocities()[ia];
        let vb = b.velocities()[ib];
        for c in 0..3 {
            let dx = xa[c] - xb[c];
            let dv = va[c] - vb[c];
            d += w * (dx * dx + dv * dv);
        }
    }
    Ok(d)
}

/// Dense shortest-augmenting-path assignment (Jonker-Volgenant style with
/// dual potentials, O(n^3)). Returns the minimum total cost and, per row,
/// the assigned column.
pub fn solve_assignment<T: Real>(n: usize, cost: &[T]) -> (T, Vec<usize>) {
    assert_eq!(cost.len(), n * n);
    let inf = T::infinity();
    // 1-based with a virtual column 0
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut matched_row = vec![0usize; n + 1]; // row matched to column j
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    let mut total = T::zero();
    for j in 1..=n {
        let i = matched_row[j];
        row_to_col[i - 1] = j - 1;
        total += cost[(i - 1) * n + (j - 1)];
    }
    (total, row_to_col)
}

/// Default particle-count cap of the exact transport solver.
pub const EXACT_W2_CAP: usize = 2048;

fn phase_cost2<T: Real>(a: &ParticleEnsemble<T>, ia: usize, b: &ParticleEnsemble<T>, ib: usize) -> T {
    let xa = a.positions()[ia];
    let xb = b.positions()[ib];
    let va = a.velocities()[ia];
    let vb = b.velocities()[ib];
    let mut c = T::zero();
    for k in 0..3 {
        let dx = xa[k] - xb[k];
        let dv = va[k] - vb[k];
        c += dx * dx + dv * dv;
    }
    c
}

fn position_cost2<T: Real>(
    a: &ParticleEnsemble<T>,
    ia: usize,
    b: &ParticleEnsemble<T>,
    ib: usize,
) -> T {
    let xa = a.positions()[ia];
    let xb = b.positions()[ib];
    let mut c = T::zero();
    for k in 0..3 {
        let dx = xa[k] - xb[k];
        c += dx * dx;
    }
    c
}

fn w2_exact_with<T: Real>(
    a: &ParticleEnsemble<T>,
    b: &ParticleEnsemble<T>,
    cap: usize,
    cost2: impl Fn(&ParticleEnsemble<T>, usize, &ParticleEnsemble<T>, usize) -> T,
) -> Result<T> {
    let n = a.count();
    if n != b.count() {
        return Err(Error::SizeMismatch(n, b.count()));
    }
    if n > cap {
        return Err(Error::ExactCapExceeded { n, cap });
    }
    let mut cost = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = cost2(a, i, b, j);
        }
    }
    let (total, _) = solve_assignment(n, &cost);
    Ok((total / T::of_usize(n)).max(T::zero()).sqrt())
}

/// Exact Wasserstein-2 distance between equally weighted ensembles on the
/// squared phase-space cost, by optimal assignment. Capped at `cap`
/// particles (cubic cost); above that use [`w2_entropic`].
pub fn w2_exact_capped<T: Real>(
    a: &ParticleEnsemble<T>,
    b: &ParticleEnsemble<T>,
    cap: usize,
) -> Result<T> {
    w2_exact_with(a, b, cap, phase_cost2)
}

/// [`w2_exact_capped`] at the default cap.
pub fn w2_exact<T: Real>(a: &ParticleEnsemble<T>, b: &ParticleEnsemble<T>) -> Result<T> {
    w2_exact_capped(a, b, EXACT_W2_CAP)
}

/// Exact Wasserstein-2 between the position marginals.
pub fn w2_exact_positions<T: Real>(
    a: &ParticleEnsemble<T>,
    b: &ParticleEnsemble<T>,
    cap: usize,
) -> Result<T> {
    w2_exact_with(a, b, cap, position_cost2)
}

/// Entropic transport estimate.
#[derive(Debug, Clone, Copy)]
pub struct EntropicW2<T> {
    /// sqrt of the transport cost of the rounded (exactly feasible) plan;
    /// its square upper-bounds the exact squared distance.
    pub value: T,
    /// Upper estimate of the suboptimality of the squared cost.
    pub gap_bound: T,
    /// L1 marginal error of the unrounded plan.
    pub marginal_error: T,
}

/// Entropic-regularized Wasserstein-2 with annealed regularization, in log
/// domain. `epsilon` is the final regularization in squared-distance units;
/// `iterations` bounds the sweeps per annealing level. The returned plan is
/// rounded to exact feasibility, so value^2 >= W2_exact^2 always.
pub fn w2_entropic<T: Real>(
    a: &ParticleEnsemble<T>,
    b: &ParticleEnsemble<T>,
    epsilon: T,
    iterations: usize,
) -> Result<EntropicW2<T>> {
    let n = a.count();
    if n != b.count() {
        return Err(Error::SizeMismatch(n, b.count()));
    }
    if !(epsilon > T::zero()) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    const DENSE_CAP: usize = 4096;
    if n > DENSE_CAP {
        return Err(Error::InvalidParameter(format!(
            "entropic solver holds a dense {n}x{n} cost matrix; capped at {DENSE_CAP}"
        )));
    }

    let mut cost = vec![T::zero(); n * n];
    let mut cmax = T::zero();
    for i in 0..n {
        for j in 0..n {
            let c = phase_cost2(a, i, b, j);
            cost[i * n + j] = c;
            cmax = cmax.max(c);
        }
    }
    if cmax == T::zero() {
        return Ok(EntropicW2 {
            value: T::zero(),
            gap_bound: T::zero(),
            marginal_error: T::zero(),
        });
    }

    // log-domain Sinkhorn with geometric annealing of epsilon
    let mut f = vec![T::zero(); n];
    let mut g = vec![T::zero(); n];
    let ln_n = T::of_usize(n).ln();
    let mut eps = (cmax * T::of(0.1)).max(epsilon);
    let tol = T::of(1e-9);
    loop {
        for _ in 0..iterations.max(1) {
            // g update: g_j = -eps (LSE_i (f_i - C_ij)/eps - ln n)
            for j in 0..n {
                let mut m = T::neg_infinity();
                for i in 0..n {
                    m = m.max((f[i] - cost[i * n + j]) / eps);
                }
                let mut s = T::zero();
                for i in 0..n {
                    s += ((f[i] - cost[i * n + j]) / eps - m).exp();
                }
                g[j] = -eps * (m + s.ln() - ln_n);
            }
            // f update and row-marginal error of the implied plan
            let mut err = T::zero();
            for i in 0..n {
                let mut m = T::neg_infinity();
                for j in 0..n {
                    m = m.max((g[j] - cost[i * n + j]) / eps);
                }
                let mut s = T::zero();
                for j in 0..n {
                    s += ((g[j] - cost[i * n + j]) / eps - m).exp();
                }
                let new_f = -eps * (m + s.ln() - ln_n);
                err += (new_f - f[i]).abs();
                f[i] = new_f;
            }
            if err / eps < tol {
                break;
            }
        }
        if eps <= epsilon {
            break;
        }
        eps = (eps * T::of(0.5)).max(epsilon);
    }

    // implied plan, then rounding to exact feasibility
    let inv_n = T::one() / T::of_usize(n);
    let mut plan = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            plan[i * n + j] =
                ((f[i] + g[j] - cost[i * n + j]) / eps).exp() * inv_n * inv_n;
        }
    }
    let mut row: Vec<T> = (0..n)
        .map(|i| (0..n).fold(T::zero(), |s, j| s + plan[i * n + j]))
        .collect();
    let mut marginal_error = T::zero();
    for r in &row {
        marginal_error += (*r - inv_n).abs();
    }
    // scale rows down to their targets
    for i in 0..n {
        let scale = if row[i] > inv_n { inv_n / row[i] } else { T::one() };
        if scale < T::one() {
            for j in 0..n {
                plan[i * n + j] *= scale;
            }
        }
    }
    let mut col: Vec<T> = vec![T::zero(); n];
    for i in 0..n {
        for j in 0..n {
            col[j] += plan[i * n + j];
        }
    }
    for j in 0..n {
        let scale = if col[j] > inv_n { inv_n / col[j] } else { T::one() };
        if scale < T::one() {
            for i in 0..n {
                plan[i * n + j] *= scale;
            }
        }
    }
    // distribute the leftover mass as a rank-one correction
    row = (0..n)
        .map(|i| (0..n).fold(T::zero(), |s, j| s + plan[i * n + j]))
        .collect();
    col = vec![T::zero(); n];
    for i in 0..n {
        for j in 0..n {
            col[j] += plan[i * n + j];
        }
    }
    let def_row: Vec<T> = row.iter().map(|&r| inv_n - r).collect();
    let def_col: Vec<T> = col.iter().map(|&c| inv_n - c).collect();
    let total_def: T = def_row.iter().copied().sum();
    if total_def > T::zero() {
        for i in 0..n {
            if def_row[i] <= T::zero() {
                continue;
            }
            for j in 0..n {
                if def_col[j] <= T::zero() {
                    continue;
                }
                plan[i * n + j] += def_row[i] * def_col[j] / total_def;
            }
        }
    }

    let mut value2 = T::zero();
    for i in 0..n {
        for j in 0..n {
            value2 += plan[i * n + j] * cost[i * n + j];
        }
    }
    let gap_bound = eps * (T::of(2.0) * ln_n + T::one()) + marginal_error * cmax;
    Ok(EntropicW2 {
        value: value2.max(T::zero()).sqrt(),
        gap_bound,
        marginal_error,
    })
}

/// Log-Lipschitz modulus H(s) = s (log s)^2 for s <= e^{-2}, plateau 4 e^{-2}
/// beyond; continuous, concave and non-decreasing, with H(0) = 0.
pub fn h_modulus<T: Real>(s: T) -> Result<T> {
    if s < T::zero() || s.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "H is defined for nonnegative arguments, got {}",
            s.f64()
        )));
    }
    let knee = T::of((-2.0f64).exp());
    if s == T::zero() {
        Ok(T::zero())
    } else if s <= knee {
        let l = s.ln();
        Ok(s * l * l)
    } else {
        Ok(T::of(4.0) * knee)
    }
}

/// Two-regime stability envelope. For initial distance above 1/2 the bound
/// is exponential; below, it is the double-exponential branch
/// exp[log(w0) e^{-C t}] until the crossover time t0 where it reaches 1/2,
/// then (1/2) e^{C (t - t0)}.
pub fn gronwall_envelope<T: Real>(w2_0: T, c: T, t: T) -> Result<T> {
    check_envelope_args(w2_0, c, t)?;
    if w2_0 == T::zero() {
        return Ok(T::zero());
    }
    let half = T::of(0.5);
    if w2_0 > half {
        return Ok(w2_0 * (c * t).exp());
    }
    match gronwall_t0(w2_0, c)? {
        Some(t0) if t > t0 => Ok(half * (c * (t - t0)).exp()),
        _ => Ok((w2_0.ln() * (-c * t).exp()).exp()),
    }
}

/// Crossover time t0 solving log(w0) e^{-C t0} = log(1/2); none when the
/// initial distance already exceeds 1/2.
pub fn gronwall_t0<T: Real>(w2_0: T, c: T) -> Result<Option<T>> {
    check_envelope_args(w2_0, c, T::zero())?;
    let half = T::of(0.5);
    if w2_0 == T::zero() || w2_0 > half {
        return Ok(None);
    }
    Ok(Some((w2_0.ln() / half.ln()).ln() / c))
}

fn check_envelope_args<T: Real>(w2_0: T, c: T, t: T) -> Result<()> {
    if w2_0 < T::zero() || w2_0.is_nan() {
        return Err(Error::InvalidParameter("initial distance must be nonnegative".into()));
    }
    if !(c > T::zero()) {
        return Err(Error::InvalidParameter("envelope constant must be positive".into()));
    }
    if t < T::zero() {
        return Err(Error::InvalidParameter("time must be nonnegative".into()));
    }
    Ok(())
}

/// Per-snapshot stability measurements.
#[derive(Debug, Clone, Copy)]
pub struct StabilityRow<T> {
    pub time: T,
    /// Coupled squared displacement D(t).
    pub d: T,
    /// Wasserstein-2 distance between the phase-space ensembles.
    pub w2: T,
    /// Envelope value at the fitted constant.
    pub envelope: T,
    /// Field-difference integrals I1..I4 as particle sums.
    pub i_terms: [T; 4],
    pub w2_squared_below_d: bool,
}

/// Full report of a paired-run stability analysis.
#[derive(Debug, Clone)]
pub struct StabilityReport<T> {
    pub rows: Vec<StabilityRow<T>>,
    pub w2_initial: T,
    /// Smallest envelope constant covering the measured W2 series.
    pub fitted_c: T,
    pub t0: Option<T>,
    pub all_w2_squared_below_d: bool,
    /// Fitted constant stayed within the battery cap.
    pub envelope_verified: bool,
}

/// Options for [`verify_stability`].
#[derive(Debug, Clone, Copy)]
pub struct StabilityParams<T> {
    /// Cap for the exact transport solver; larger ensembles fall back to the
    /// entropic estimate.
    pub exact_cap: usize,
    /// Battery cap on the fitted envelope constant.
    pub battery_c_max: T,
    /// Final entropic regularization (used only above the exact cap).
    pub entropic_epsilon: T,
    pub entropic_iterations: usize,
    /// Slack added to the W2^2 <= D check for transport/quadrature roundoff.
    pub w2_tolerance: T,
}

impl<T: Real> Default for StabilityParams<T> {
    fn default() -> Self {
        Self {
            exact_cap: EXACT_W2_CAP,
            battery_c_max: T::of(10.0),
            entropic_epsilon: T::of(1e-3),
            entropic_iterations: 200,
            w2_tolerance: T::of(1e-9),
        }
    }
}

const ENVELOPE_FIT_C_MIN: f64 = 1e-6;
const ENVELOPE_FIT_C_MAX: f64 = 1e6;

/// Smallest C such that w2(t) stays below the envelope from w2(0); the
/// envelope is monotone in C, so the fit is a bisection.
fn fit_envelope_c<T: Real>(times: &[T], w2: &[T]) -> Result<T> {
    let w0 = w2[0];
    let slack = T::one() + T::of(1e-9);
    let ok = |c: T| -> bool {
        times.iter().zip(w2).skip(1).all(|(&t, &w)| {
            gronwall_envelope(w0, c, t)
                .map(|env| w <= env * slack)
                .unwrap_or(false)
        })
    };
    if w0 == T::zero() {
        // exact coincidence at t = 0: uniqueness forces the whole series to 0
        let all_zero = w2.iter().all(|&w| w <= T::of(1e-12));
        return if all_zero {
            Ok(T::of(ENVELOPE_FIT_C_MIN))
        } else {
            Ok(T::of(ENVELOPE_FIT_C_MAX))
        };
    }
    let c_min = T::of(ENVELOPE_FIT_C_MIN);
    let c_max = T::of(ENVELOPE_FIT_C_MAX);
    if ok(c_min) {
        return Ok(c_min);
    }
    if !ok(c_max) {
        return Ok(c_max);
    }
    let mut lo = c_min;
    let mut hi = c_max;
    for _ in 0..200 {
        let mid = (lo + hi) * T::of(0.5);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Analyze two synchronized snapshot series sharing a scenario context:
/// computes D(t) under the coupling, W2(t), checks W2^2 <= D at every
/// snapshot, fits the envelope constant, and reports the field-splitting
/// integrals I1..I4 alongside.
pub fn verify_stability<T: Real>(
    run_a: &[Snapshot<T>],
    run_b: &[Snapshot<T>],
    ctx: &FieldContext<T>,
    coupling: &Coupling,
    params: &StabilityParams<T>,
) -> Result<StabilityReport<T>> {
    if run_a.len() != run_b.len() || run_a.is_empty() {
        return Err(Error::SizeMismatch(run_a.len(), run_b.len()));
    }
    let mut times = Vec::with_capacity(run_a.len());
    let mut w2s = Vec::with_capacity(run_a.len());
    let mut rows = Vec::with_capacity(run_a.len());

    for (sa, sb) in run_a.iter().zip(run_b) {
        if (sa.time - sb.time).abs() > T::of(1e-9) {
            return Err(Error::UnsynchronizedSnapshots(sa.time.f64(), sb.time.f64()));
        }
        let d = coupled_distance(&sa.ensemble, &sb.ensemble, coupling)?;
        let w2 = if sa.ensemble.count() <= params.exact_cap {
            w2_exact_capped(&sa.ensemble, &sb.ensemble, params.exact_cap)?
        } else {
            w2_entropic(
                &sa.ensemble,
                &sb.ensemble,
                params.entropic_epsilon,
                params.entropic_iterations,
            )?
            .value
        };

        // field-splitting integrals as particle sums under the coupling
        let split_a = ctx.solve(&deposit_density(&sa.ensemble, ctx.grid)?.rho, None)?;
        let split_b = ctx.solve(&deposit_density(&sb.ensemble, ctx.grid)?.rho, None)?;
        let pairs = coupling.resolve(&sa.ensemble, &sb.ensemble)?;
        let w = sa.ensemble.weight();
        let (bar_a_at_a, _) = interpolate_acceleration(&split_a.e_bar, sa.ensemble.positions());
        let (bar_a_at_b, _) = interpolate_acceleration(&split_a.e_bar, sb.ensemble.positions());
        let (bar_b_at_b, _) = interpolate_acceleration(&split_b.e_bar, sb.ensemble.positions());
        let (hat_a_at_a, _) = interpolate_acceleration(&split_a.e_hat, sa.ensemble.positions());
        let (hat_a_at_b, _) = interpolate_acceleration(&split_a.e_hat, sb.ensemble.positions());
        let (hat_b_at_b, _) = interpolate_acceleration(&split_b.e_hat, sb.ensemble.positions());
        let mut i_terms = [T::zero(); 4];
        for &(ia, ib) in &pairs {
            for c in 0..3 {
                let d1 = bar_a_at_a[ia][c] - bar_a_at_b[ib][c];
                let d2 = bar_a_at_b[ib][c] - bar_b_at_b[ib][c];
                let d3 = hat_a_at_a[ia][c] - hat_a_at_b[ib][c];
                let d4 = hat_a_at_b[ib][c] - hat_b_at_b[ib][c];
                i_terms[0] += w * d1 * d1;
                i_terms[1] += w * d2 * d2;
                i_terms[2] += w * d3 * d3;
                i_terms[3] += w * d4 * d4;
            }
        }

        times.push(sa.time);
        w2s.push(w2);
        rows.push(StabilityRow {
            time: sa.time,
            d,
            w2,
            envelope: T::nan(),
            i_terms,
            w2_squared_below_d: w2 * w2 <= d + params.w2_tolerance,
        });
    }

    let fitted_c = fit_envelope_c(&times, &w2s)?;
    let w2_initial = w2s[0];
    let t0 = if w2_initial > T::zero() {
        gronwall_t0(w2_initial, fitted_c)?
    } else {
        None
    };
    for row in &mut rows {
        row.envelope = if w2_initial == T::zero() {
            T::zero()
        } else {
            gronwall_envelope(w2_initial, fitted_c, row.time)?
        };
    }
    let all_below = rows.iter().all(|r| r.w2_squared_below_d);
    Ok(StabilityReport {
        rows,
        w2_initial,
        fitted_c,
        t0,
        all_w2_squared_below_d: all_below,
        envelope_verified: fitted_c <= params.battery_c_max,
    })
}

/// One snapshot of the field stability inequalities: the Newtonian part obeys
/// ||Ebar_1 - Ebar_2||_2 <= (max_i ||rho_i||_inf)^{1/2} W2(rho_1, rho_2) and
/// the screening part the same shape with a battery constant.
#[derive(Debug, Clone, Copy)]
pub struct FieldStabilityRow<T> {
    pub time: T,
    pub lhs_bar: T,
    pub lhs_hat: T,
    /// (max_i ||rho_i||_inf)^{1/2} W2(rho_1, rho_2).
    pub rhs_scale: T,
    /// lhs_bar / rhs_scale.
    pub ratio_bar: T,
    /// lhs_hat / rhs_scale.
    pub ratio_hat: T,
    pub w2_rho: T,
}

/// Evaluate the field stability ratios over two synchronized runs. W2 is
/// taken between position marginals via exact assignment.
pub fn field_stability_rows<T: Real>(
    run_a: &[Snapshot<T>],
    run_b: &[Snapshot<T>],
    ctx: &FieldContext<T>,
    exact_cap: usize,
) -> Result<Vec<FieldStabilityRow<T>>> {
    if run_a.len() != run_b.len() {
        return Err(Error::SizeMismatch(run_a.len(), run_b.len()));
    }
    let mut rows = Vec::with_capacity(run_a.len());
    for (sa, sb) in run_a.iter().zip(run_b) {
        if (sa.time - sb.time).abs() > T::of(1e-9) {
            return Err(Error::UnsynchronizedSnapshots(sa.time.f64(), sb.time.f64()));
        }
        let rho_a = deposit_density(&sa.ensemble, ctx.grid)?.rho;
        let rho_b = deposit_density(&sb.ensemble, ctx.grid)?.rho;
        let split_a = ctx.solve(&rho_a, None)?;
        let split_b = ctx.solve(&rho_b, None)?;
        let lhs_bar = split_a.e_bar.sub(&split_b.e_bar)?.l2_norm_squared().sqrt();
        let lhs_hat = split_a.e_hat.sub(&split_b.e_hat)?.l2_norm_squared().sqrt();
        let rho_inf = lp_norm(&rho_a, T::infinity())?.max(lp_norm(&rho_b, T::infinity())?);
        let w2_rho = w2_exact_positions(&sa.ensemble, &sb.ensemble, exact_cap)?;
        let rhs_scale = rho_inf.sqrt() * w2_rho;
        let (ratio_bar, ratio_hat) = if rhs_scale > T::zero() {
            (lhs_bar / rhs_scale, lhs_hat / rhs_scale)
        } else {
            (T::zero(), T::zero())
        };
        rows.push(FieldStabilityRow {
            time: sa.time,
            lhs_bar,
            lhs_hat,
            rhs_scale,
            ratio_bar,
            ratio_hat,
            w2_rho,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ensemble(n: usize, seed: u64, scale: f64) -> ParticleEnsemble<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..n)
            .map(|_| std::array::from_fn(|_| scale * (rng.gen::<f64>() - 0.5)))
            .collect();
        let velocities = (0..n)
            .map(|_| std::array::from_fn(|_| scale * (rng.gen::<f64>() - 0.5)))
            .collect();
        ParticleEnsemble::new(positions, velocities, (0..n as u64).collect()).unwrap()
    }

    fn translated(ens: &ParticleEnsemble<f64>, delta: [f64; 3]) -> ParticleEnsemble<f64> {
        let positions = ens
            .positions()
            .iter()
            .map(|x| [x[0] + delta[0], x[1] + delta[1], x[2] + delta[2]])
            .collect();
        ParticleEnsemble::new(positions, ens.velocities().to_vec(), ens.ids().to_vec()).unwrap()
    }

    #[test]
    fn coupled_distance_identities() {
        let ens = random_ensemble(64, 1, 2.0);
        assert_eq!(coupled_distance(&ens, &ens, &Coupling::Identity).unwrap(), 0.0);
        let delta = 0.25;
        let shifted = translated(&ens, [delta, 0.0, 0.0]);
        assert_relative_eq!(
            coupled_distance(&ens, &shifted, &Coupling::Identity).unwrap(),
            delta * delta,
            epsilon = 1e-13
        );
    }

    #[test]
    fn coupled_distance_matches_double_loop() {
        let a = random_ensemble(32, 2, 1.0);
        let b = random_ensemble(32, 3, 1.0);
        let d = coupled_distance(&a, &b, &Coupling::Identity).unwrap();
        // brute-force re-summation over id pairs
        let ia = a.index_by_id();
        let ib = b.index_by_id();
        let mut expect = 0.0;
        for id in 0..32 {
            let pa = a.positions()[ia[id]];
            let pb = b.positions()[ib[id]];
            let va = a.velocities()[ia[id]];
            let vb = b.velocities()[ib[id]];
            for c in 0..3 {
                expect += ((pa[c] - pb[c]).powi(2) + (va[c] - vb[c]).powi(2)) / 32.0;
            }
        }
        assert_relative_eq!(d, expect, epsilon = 1e-13);
    }

    #[test]
    fn explicit_coupling_validation() {
        let a = random_ensemble(4, 4, 1.0);
        let b = random_ensemble(4, 5, 1.0);
        let bad = Coupling::Explicit(vec![(0, 0), (1, 1), (2, 2), (2, 3)]);
        assert!(coupled_distance(&a, &b, &bad).is_err());
        let good = Coupling::Explicit(vec![(0, 1), (1, 0), (2, 2), (3, 3)]);
        assert!(coupled_distance(&a, &b, &good).is_ok());
        let short = random_ensemble(3, 6, 1.0);
        assert!(matches!(
            coupled_distance(&a, &short, &Coupling::Identity),
            Err(Error::SizeMismatch(4, 3))
        ));
    }

    #[test]
    fn w2_single_pair_distance() {
        let a = ParticleEnsemble::new(vec![[0.0; 3]], vec![[0.0; 3]], vec![0]).unwrap();
        let b = ParticleEnsemble::new(vec![[3.0, 0.0, 0.0]], vec![[0.0, 4.0, 0.0]], vec![0]).unwrap();
        assert_relative_eq!(w2_exact(&a, &b).unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn w2_is_permutation_invariant() {
        let ens = random_ensemble(32, 7, 1.0);
        // same phase-space cloud with shuffled storage and fresh ids
        let mut order: Vec<usize> = (0..32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for i in (1..32usize).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let positions = order.iter().map(|&i| ens.positions()[i]).collect();
        let velocities = order.iter().map(|&i| ens.velocities()[i]).collect();
        let shuffled =
            ParticleEnsemble::new(positions, velocities, (0..32).collect()).unwrap();
        assert!(w2_exact(&ens, &shuffled).unwrap() < 1e-12);
    }

    #[test]
    fn w2_matches_factorial_brute_force_at_n8() {
        let a = random_ensemble(8, 10, 1.5);
        let b = random_ensemble(8, 11, 1.5);
        let fast = w2_exact(&a, &b).unwrap();

        // exhaustive search over all 8! assignments
        let mut perm: Vec<usize> = (0..8).collect();
        let mut best = f64::INFINITY;
        fn visit(perm: &mut Vec<usize>, k: usize, a: &ParticleEnsemble<f64>, b: &ParticleEnsemble<f64>, best: &mut f64) {
            if k == perm.len() {
                let mut cost = 0.0;
                for (i, &j) in perm.iter().enumerate() {
                    cost += super::phase_cost2(a, i, b, j);
                }
                if cost < *best {
                    *best = cost;
                }
                return;
            }
            for i in k..perm.len() {
                perm.swap(k, i);
                visit(perm, k + 1, a, b, best);
                perm.swap(k, i);
            }
        }
        visit(&mut perm, 0, &a, &b, &mut best);
        assert_relative_eq!(fast, (best / 8.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn w2_exact_respects_cap() {
        let a = random_ensemble(64, 12, 1.0);
        let b = random_ensemble(64, 13, 1.0);
        assert!(matches!(
            w2_exact_capped(&a, &b, 32),
            Err(Error::ExactCapExceeded { n: 64, cap: 32 })
        ));
    }

    #[test]
    fn identity_coupling_is_optimal_for_translations() {
        let ens = random_ensemble(128, 14, 2.0);
        let shifted = translated(&ens, [0.125, -0.0625, 0.25]);
        let d = coupled_distance(&ens, &shifted, &Coupling::Identity).unwrap();
        let w2 = w2_exact(&ens, &shifted).unwrap();
        assert_relative_eq!(w2, d.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn entropic_identical_ensembles_near_zero() {
        let ens = random_ensemble(128, 15, 1.0);
        let est = w2_entropic(&ens, &ens, 1e-4, 300).unwrap();
        assert!(est.value <= 1e-3, "entropic floor {e}", e = est.value);
    }

    #[test]
    fn entropic_translation_close_to_exact() {
        let ens = random_ensemble(256, 16, 1.0);
        let delta = 0.5;
        let shifted = translated(&ens, [delta, 0.0, 0.0]);
        let est = w2_entropic(&ens, &shifted, 1e-4, 300).unwrap();
        assert_relative_eq!(est.value, delta, max_relative = 0.02);
        // upper bound property of the rounded plan
        assert!(est.value >= delta * (1.0 - 1e-9));
    }

    #[test]
    fn h_modulus_branches() {
        assert_eq!(h_modulus(0.0).unwrap(), 0.0);
        let e2 = (-2.0f64).exp();
        assert_relative_eq!(h_modulus(e2).unwrap(), 4.0 * e2, epsilon = 1e-15);
        let e4 = (-4.0f64).exp();
        assert_relative_eq!(h_modulus(e4).unwrap(), 16.0 * e4, epsilon = 1e-15);
        assert_eq!(h_modulus(1.0).unwrap(), 4.0 * e2);
        assert!(h_modulus(-0.1).is_err());
    }

    #[test]
    fn h_modulus_concave_nondecreasing_on_grid() {
        let pts: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let vals: Vec<f64> = pts.iter().map(|&s| h_modulus(s).unwrap()).collect();
        for w in vals.windows(2) {
            assert!(w[1] >= w[0] - 1e-15);
        }
        for i in 1..pts.len() - 1 {
            let second = vals[i + 1] - 2.0 * vals[i] + vals[i - 1];
            assert!(second <= 1e-12, "convex kink at {}", pts[i]);
        }
    }

    #[test]
    fn gronwall_envelope_branch_values() {
        // half starting point: t0 = 0 and the bound is (1/2) e^{Ct}
        let c = 1.7;
        assert_relative_eq!(gronwall_t0(0.5, c).unwrap().unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(
            gronwall_envelope(0.5, c, 0.3).unwrap(),
            0.5 * (c * 0.3f64).exp(),
            epsilon = 1e-12
        );
        // t = 0 returns the initial value on both branches
        assert_relative_eq!(gronwall_envelope(0.25, c, 0.0).unwrap(), 0.25, epsilon = 1e-12);
        assert_relative_eq!(gronwall_envelope(0.75, c, 0.0).unwrap(), 0.75, epsilon = 1e-12);
        // frozen closed-form spot check: w0 = e^{-4}, C = 1, t = log 2
        let w0 = (-4.0f64).exp();
        let t = 2.0f64.ln();
        assert_relative_eq!(
            gronwall_envelope(w0, 1.0, t).unwrap(),
            (-2.0f64).exp(),
            epsilon = 1e-12
        );
        let t0 = gronwall_t0(w0, 1.0).unwrap().unwrap();
        assert_relative_eq!(t0, (4.0f64 / 2.0f64.ln().abs()).ln(), epsilon = 1e-12);
        assert!(t < t0);
        // uniqueness case
        assert_eq!(gronwall_envelope(0.0, 1.0, 5.0).unwrap(), 0.0);
        assert!(gronwall_envelope(0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn gronwall_envelope_continuity() {
        let c = 2.0;
        // continuity across w0 = 1/2
        let eps = 1e-9;
        for t in [0.0f64, 0.5, 2.0] {
            let lo = gronwall_envelope(0.5 - eps, c, t).unwrap();
            let hi = gronwall_envelope(0.5 + eps, c, t).unwrap();
            assert!((lo - hi).abs() < 1e-6, "jump at w0=1/2, t={t}");
        }
        // continuity across t = t0
        let w0 = 0.1;
        let t0 = gronwall_t0(w0, c).unwrap().unwrap();
        let lo: f64 = gronwall_envelope(w0, c, t0 - eps).unwrap();
        let hi = gronwall_envelope(w0, c, t0 + eps).unwrap();
        assert!((lo - hi).abs() < 1e-6);
        assert_relative_eq!(gronwall_envelope(w0, c, t0).unwrap(), 0.5, epsilon = 1e-6);
    }
}
