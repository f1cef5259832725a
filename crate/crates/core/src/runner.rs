//! Run orchestration: execute a scenario config into a run directory with
//! snapshots, per-step diagnostics, and a reproducibility manifest; load runs
//! back; and derive diagnostic / stability / benchmark tables from them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::diagnostics::{energy_of_parts, interpolation_check, moments};
use crate::electrostatics::ChargeMode;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::GridSpec;
use crate::io::{read_snapshot, write_snapshot};
use crate::kinetics::{
    deposit_density, run, sample_initial, step_frozen_grid, SimulationState,
    Snapshot, SpatialProfile, VelocityProfile,
};
use crate::poisson::PoissonSolver;
use crate::stability::{
    field_stability_rows, verify_stability, Coupling, FieldStabilityRow, StabilityParams,
    StabilityReport,
};
use crate::{InitialDataSpec, Scalar};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_string(&h.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Index of an executed run: config hash, snapshot files, and a determinism
/// hash covering every deterministic artifact (wall-clock metadata excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub config_sha256: String,
    pub determinism_hash: String,
    pub snapshots: Vec<(String, f64)>,
    pub diagnostics_file: String,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "version = {}", self.version).unwrap();
        writeln!(s, "config_sha256 = {}", self.config_sha256).unwrap();
        writeln!(s, "determinism_hash = {}", self.determinism_hash).unwrap();
        writeln!(s, "snapshot_count = {}", self.snapshots.len()).unwrap();
        for (i, (file, time)) in self.snapshots.iter().enumerate() {
            writeln!(s, "snapshot.{i}.file = {file}").unwrap();
            writeln!(s, "snapshot.{i}.time = {time:.17e}").unwrap();
        }
        writeln!(s, "diagnostics = {}", self.diagnostics_file).unwrap();
        writeln!(s, "wall_clock_seconds = {:.3}", self.wall_clock_seconds).unwrap();
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: lineno + 1,
                msg: format!("bad manifest line '{raw}'"),
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<String> {
            map.get(k).cloned().ok_or_else(|| Error::ConfigParse {
                line: 0,
                msg: format!("manifest missing key '{k}'"),
            })
        };
        let count: usize = get("snapshot_count")?.parse().map_err(|_| Error::ConfigParse {
            line: 0,
            msg: "bad snapshot_count".into(),
        })?;
        let mut snapshots = Vec::with_capacity(count);
        for i in 0..count {
            let file = get(&format!("snapshot.{i}.file"))?;
            let time: f64 = get(&format!("snapshot.{i}.time"))?
                .parse()
                .map_err(|_| Error::ConfigParse {
                    line: 0,
                    msg: format!("bad snapshot.{i}.time"),
                })?;
            snapshots.push((file, time));
        }
        Ok(Self {
            version: get("version")?,
            config_sha256: get("config_sha256")?,
            determinism_hash: get("determinism_hash")?,
            snapshots,
            diagnostics_file: get("diagnostics")?,
            wall_clock_seconds: get("wall_clock_seconds")?.parse().unwrap_or(0.0),
        })
    }
}

/// Execute a scenario into `out_dir`. The directory receives `config.cfg`
/// (byte copy of the input), `snapshots/snap_NNNNN.vpmep`, per-step
/// `diagnostics.csv`, and `manifest.txt`. Nothing is written when the config
/// fails to parse.
pub fn execute_run(config_text: &str, out_dir: &Path) -> Result<RunManifest> {
    let config = ScenarioConfig::parse(config_text)?;
    let started = Instant::now();

    let ctx = config.field_context()?;
    let ensemble = config.initial_ensemble()?;
    let state = SimulationState::init(&ctx, ensemble)?;

    let mut diag_csv = String::new();
    let order_names: Vec<String> = config
        .orders
        .iter()
        .map(|k| format!("M_{}", format_order(*k)))
        .collect();
    writeln!(
        diag_csv,
        "t,E_total,kinetic,field,electron_V,electron_F,m,{},rho_l53",
        order_names.join(",")
    )
    .unwrap();

    let g = ctx.g.clone();
    let orders = config.orders.clone();
    let mode = config.mode;
    use std::cell::RefCell;
    let diag = RefCell::new(diag_csv);
    let (snapshots, _final_state) = run(
        &ctx,
        state,
        config.dt,
        config.t_final,
        config.snapshot_every,
        |s| {
            let rep = energy_of_parts(&s.ensemble, &s.split, &g, s.time)?;
            let ms = moments(&s.ensemble, &orders)?;
            let total = match mode {
                ChargeMode::VariableCharge => rep.total_v,
                ChargeMode::FixedCharge => rep.total_f,
            };
            let m_cols = ms
                .iter()
                .map(|m| format!("{m:.17e}"))
                .collect::<Vec<_>>()
                .join(",");
            writeln!(
                diag.borrow_mut(),
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e}",
                s.time,
                total,
                rep.kinetic,
                rep.field,
                rep.electron_v,
                rep.electron_f,
                rep.m,
                m_cols,
                s.split.rho_l53
            )
            .unwrap();
            Ok(())
        },
    )?;
    let diag_csv = diag.into_inner();

    fs::create_dir_all(out_dir.join("snapshots"))?;
    fs::write(out_dir.join("config.cfg"), config_text.as_bytes())?;
    fs::write(out_dir.join("diagnostics.csv"), diag_csv.as_bytes())?;

    let mut determinism = Sha256::new();
    determinism.update(config_text.as_bytes());
    determinism.update(diag_csv.as_bytes());

    let mut snapshot_index = Vec::with_capacity(snapshots.len());
    for (i, snap) in snapshots.iter().enumerate() {
        let rel = format!("snapshots/snap_{i:05}.vpmep");
        let path = out_dir.join(&rel);
        write_snapshot(snap, &path)?;
        determinism.update(fs::read(&path)?);
        snapshot_index.push((rel, snap.time));
    }

    let manifest = RunManifest {
        version: ARTIFACT_VERSION.to_string(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        determinism_hash: hex_string(&determinism.finalize()),
        snapshots: snapshot_index,
        diagnostics_file: "diagnostics.csv".to_string(),
        // rounded to the precision stored in the manifest text
        wall_clock_seconds: (started.elapsed().as_secs_f64() * 1e3).round() / 1e3,
    };
    fs::write(out_dir.join("manifest.txt"), manifest.to_text())?;
    Ok(manifest)
}

fn format_order(k: f64) -> String {
    if k.fract() == 0.0 {
        format!("{}", k as i64)
    } else {
        format!("{k}")
    }
}

/// A run directory loaded back into memory.
pub struct LoadedRun {
    pub config: ScenarioConfig,
    pub manifest: RunManifest,
    pub snapshots: Vec<Snapshot<Scalar>>,
    pub dir: PathBuf,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let config_text = fs::read_to_string(dir.join("config.cfg"))?;
    let config = ScenarioConfig::parse(&config_text)?;
    let manifest = RunManifest::parse(&fs::read_to_string(dir.join("manifest.txt"))?)?;
    if manifest.config_sha256 != sha256_hex(config_text.as_bytes()) {
        return Err(Error::Format {
            path: dir.join("manifest.txt").display().to_string(),
            msg: "config hash does not match stored config.cfg".into(),
        });
    }
    let mut snapshots = Vec::with_capacity(manifest.snapshots.len());
    for (rel, time) in &manifest.snapshots {
        let snap: Snapshot<Scalar> = read_snapshot(&dir.join(rel))?;
        if (snap.time - time).abs() > 1e-12 {
            return Err(Error::Format {
                path: dir.join(rel).display().to_string(),
                msg: "snapshot time disagrees with manifest".into(),
            });
        }
        snapshots.push(snap);
    }
    Ok(LoadedRun {
        config,
        manifest,
        snapshots,
        dir: dir.to_path_buf(),
    })
}

/// One row of the post-hoc diagnostic table: both energy functionals (each
/// from its own charge closure), the tracked moments, the density L^{5/3}
/// size, and the interpolation-inequality verdicts.
pub struct DiagnoseRow {
    pub time: f64,
    pub e_v: f64,
    pub e_f: f64,
    pub moments: Vec<f64>,
    pub rho_l53: f64,
    pub interp_margins: Vec<f64>,
    pub interp_ok: bool,
}

/// Recompute diagnostics for a stored run at the requested moment orders.
pub fn diagnose(run: &LoadedRun, orders: &[f64]) -> Result<Vec<DiagnoseRow>> {
    let grid = run.config.grid();
    let g = run.config.g_field()?;
    let settings = run.config.solver_settings();
    let solver = PoissonSolver::new(grid);
    let f_sup = run.config.initial_spec().f_sup();

    let mut rows = Vec::with_capacity(run.snapshots.len());
    for snap in &run.snapshots {
        let dep = deposit_density(&snap.ensemble, grid)?;
        let split_v = crate::electrostatics::solve_split_field_with(
            &solver,
            &dep.rho,
            &g,
            ChargeMode::VariableCharge,
            &settings,
            None,
        )?;
        let split_f = crate::electrostatics::solve_split_field_with(
            &solver,
            &dep.rho,
            &g,
            ChargeMode::FixedCharge,
            &settings,
            None,
        )?;
        let rep_v = energy_of_parts(&snap.ensemble, &split_v, &g, snap.time)?;
        let rep_f = energy_of_parts(&snap.ensemble, &split_f, &g, snap.time)?;
        let ms = moments(&snap.ensemble, orders)?;
        let (margins, ok) = match f_sup {
            Some(fs) => {
                let mut margins = Vec::with_capacity(orders.len());
                let mut all_ok = true;
                for &k in orders {
                    if k <= 0.0 {
                        margins.push(f64::NAN);
                        continue;
                    }
                    let v = interpolation_check(&dep.rho, &snap.ensemble, k, fs)?;
                    margins.push(v.margin);
                    all_ok &= v.holds;
                }
                (margins, all_ok)
            }
            None => (vec![f64::NAN; orders.len()], true),
        };
        rows.push(DiagnoseRow {
            time: snap.time,
            e_v: rep_v.total_v,
            e_f: rep_f.total_f,
            moments: ms,
            rho_l53: split_v.rho_l53,
            interp_margins: margins,
            interp_ok: ok,
        });
    }
    Ok(rows)
}

pub fn diagnose_csv(rows: &[DiagnoseRow], orders: &[f64]) -> String {
    let mut s = String::new();
    let names: Vec<String> = orders.iter().map(|k| format!("M_{}", format_order(*k))).collect();
    let margin_names: Vec<String> = orders
        .iter()
        .map(|k| format!("interp_margin_{}", format_order(*k)))
        .collect();
    writeln!(
        s,
        "t,E_V,E_F,{},rho_l53,{},verdict",
        names.join(","),
        margin_names.join(",")
    )
    .unwrap();
    for r in rows {
        let ms = r
            .moments
            .iter()
            .map(|m| format!("{m:.17e}"))
            .collect::<Vec<_>>()
            .join(",");
        let margins = r
            .interp_margins
            .iter()
            .map(|m| format!("{m:.6e}"))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            s,
            "{:.17e},{:.17e},{:.17e},{},{:.17e},{},{}",
            r.time,
            r.e_v,
            r.e_f,
            ms,
            r.rho_l53,
            margins,
            if r.interp_ok { "pass" } else { "fail" }
        )
        .unwrap();
    }
    s
}

/// Paired-run stability analysis of two stored runs sharing a scenario.
pub struct StabilityAnalysis {
    pub report: StabilityReport<Scalar>,
    pub field_rows: Vec<FieldStabilityRow<Scalar>>,
}

pub fn analyze_stability(
    run_a: &LoadedRun,
    run_b: &LoadedRun,
    exact_cap: usize,
) -> Result<StabilityAnalysis> {
    if run_a.config.grid() != run_b.config.grid() || run_a.config.mode != run_b.config.mode {
        return Err(Error::CouplingMismatch(
            "paired runs must share grid and charge mode".into(),
        ));
    }
    let ctx = run_a.config.field_context()?;
    let params = StabilityParams {
        exact_cap,
        ..StabilityParams::default()
    };
    let report = verify_stability(
        &run_a.snapshots,
        &run_b.snapshots,
        &ctx,
        &Coupling::Identity,
        &params,
    )?;
    let field_rows = field_stability_rows(&run_a.snapshots, &run_b.snapshots, &ctx, exact_cap)?;
    Ok(StabilityAnalysis { report, field_rows })
}

pub fn stability_csv(analysis: &StabilityAnalysis) -> String {
    let mut s = String::new();
    writeln!(s, "t,D,W2,envelope,I1,I2,I3,I4,verdict").unwrap();
    for r in &analysis.report.rows {
        writeln!(
            s,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.6e},{:.6e},{:.6e},{:.6e},{}",
            r.time,
            r.d,
            r.w2,
            r.envelope,
            r.i_terms[0],
            r.i_terms[1],
            r.i_terms[2],
            r.i_terms[3],
            if r.w2_squared_below_d { "pass" } else { "fail" }
        )
        .unwrap();
    }
    s
}

pub fn stability_summary(analysis: &StabilityAnalysis) -> String {
    let rep = &analysis.report;
    let mut s = String::new();
    writeln!(s, "w2_initial = {:.6e}", rep.w2_initial).unwrap();
    writeln!(s, "fitted_C = {:.6e}", rep.fitted_c).unwrap();
    match rep.t0 {
        Some(t0) => writeln!(s, "t0 = {t0:.6e}").unwrap(),
        None => writeln!(s, "t0 = n/a").unwrap(),
    }
    writeln!(s, "w2_squared_below_d = {}", rep.all_w2_squared_below_d).unwrap();
    writeln!(s, "envelope_verified = {}", rep.envelope_verified).unwrap();
    let max_bar = analysis
        .field_rows
        .iter()
        .map(|r| r.ratio_bar)
        .fold(0.0, f64::max);
    let max_hat = analysis
        .field_rows
        .iter()
        .map(|r| r.ratio_hat)
        .fold(0.0, f64::max);
    writeln!(s, "max_ratio_bar = {max_bar:.6e}").unwrap();
    writeln!(s, "max_ratio_hat = {max_hat:.6e}").unwrap();
    s
}

/// One benchmark measurement.
pub struct BenchRow {
    pub op: String,
    pub size: usize,
    pub rep: usize,
    pub seconds: f64,
}

/// Wall-time the free-space solve at the given grid sizes and one frozen
/// leapfrog push (gather + drift + kick) at the given particle counts.
pub fn bench(grid_sizes: &[usize], particle_counts: &[usize], reps: usize) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in grid_sizes {
        let grid = GridSpec::<Scalar>::new(4.0, n)?;
        // memory estimate: doubled complex grid + kernel table, in bytes
        let p = 2 * n + 4;
        let estimate = 16 * p * p * p * 3 + 8 * (n + 3) * (n + 3) * (n + 3);
        if estimate > 8 << 30 {
            return Err(Error::InvalidParameter(format!(
                "grid n = {n} exceeds the benchmark memory budget"
            )));
        }
        let solver = PoissonSolver::new(grid);
        let mut rho = ScalarField::from_fn(grid, |x: [Scalar; 3]| {
            (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 0.5).exp()
        });
        rho.normalize_to(1.0)?;
        for rep in 0..reps {
            let t = Instant::now();
            let u = solver.solve(&rho)?;
            let dt = t.elapsed().as_secs_f64();
            std::hint::black_box(&u);
            rows.push(BenchRow {
                op: "poisson_solve".into(),
                size: n,
                rep,
                seconds: dt,
            });
        }
    }

    let grid = GridSpec::<Scalar>::new(4.0, 32)?;
    let mut rho = ScalarField::from_fn(grid, |x: [Scalar; 3]| {
        (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 0.5).exp()
    });
    rho.normalize_to(1.0)?;
    let field = crate::field::negative_gradient(&PoissonSolver::new(grid).solve(&rho)?)?;
    for &count in particle_counts {
        if count.saturating_mul(48) > 8 << 30 {
            return Err(Error::InvalidParameter(format!(
                "N = {count} exceeds the benchmark memory budget"
            )));
        }
        let spec = InitialDataSpec::new(
            SpatialProfile::Gaussian {
                sigma: 0.5,
                center: [0.0; 3],
            },
            VelocityProfile::Maxwellian { sigma: 0.3 },
            8.0,
        )?;
        let ens = sample_initial(&spec, count, 1)?;
        for rep in 0..reps {
            let t = Instant::now();
            let stepped = step_frozen_grid(&ens, &field, 1e-3)?;
            let dt = t.elapsed().as_secs_f64();
            std::hint::black_box(&stepped);
            rows.push(BenchRow {
                op: "particle_push".into(),
                size: count,
                rep,
                seconds: dt,
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("op,size,rep,seconds\n");
    for r in rows {
        writeln!(s, "{},{},{},{:.6e}", r.op, r.size, r.rep, r.seconds).unwrap();
    }
    s
}
