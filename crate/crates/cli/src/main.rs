//! Command line front end: scenario runs, one-shot field solves, run
//! diagnostics, paired-run stability analysis, benchmarks, and the
//! acceptance battery.
//!
//! Exit codes: 0 when all verdicts pass, 1 when any fails, 2 on usage errors.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use vpme_core::electrostatics::{
    bouchut_certificate, regularity_report, solve_split_field, ChargeMode, SolverSettings,
};
use vpme_core::io::{field_to_csv, read_field, write_field};
use vpme_core::runner;
use vpme_core::Field;

#[derive(Parser)]
#[command(
    name = "vpme",
    version,
    about = "Kinetic simulator for Vlasov-Poisson systems with massless electrons"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario config into a run directory.
    Run {
        /// Scenario config file (flat key = value text).
        #[arg(long)]
        config: PathBuf,
        /// Output run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the split electrostatic field for stored density files.
    SolveField {
        /// Ion density field file (VPMEF1).
        #[arg(long)]
        rho: PathBuf,
        /// Electron background field file (VPMEF1).
        #[arg(long)]
        g: PathBuf,
        /// Charge closure: variable | fixed.
        #[arg(long)]
        mode: String,
        /// Relative residual tolerance.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Output directory for the potential and field files.
        #[arg(long)]
        out: PathBuf,
        /// Also export the potentials as (x,y,z,value) CSV for plotting.
        #[arg(long, default_value_t = false)]
        csv: bool,
    },
    /// Recompute diagnostics for a stored run.
    Diagnose {
        /// Run directory produced by `vpme run`.
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated velocity moment orders.
        #[arg(long, default_value = "2,4,6")]
        orders: String,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired-run stability analysis.
    Stability {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
        /// Particle-count cap for the exact transport solver.
        #[arg(long, default_value_t = 2048)]
        exact_w2_cap: usize,
        /// Output CSV path (stdout when omitted); the summary always prints.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wall-time the field solve and the particle push.
    Bench {
        /// Comma-separated grid sizes.
        #[arg(long, default_value = "32,48,64")]
        grid_sizes: String,
        /// Comma-separated particle counts.
        #[arg(long, default_value = "10000,100000,1000000")]
        particles: String,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance battery; prints one pass/fail line per criterion.
    Verify,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(threads) = std::env::var("VPME_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("warning: could not set thread pool size: {e}");
                }
            }
            _ => {
                eprintln!("error: VPME_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    // clap exits with code 2 on usage errors by itself
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(all_passed) => {
            if all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| anyhow::anyhow!("cannot parse {what} entry '{p}'"))
        })
        .collect()
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            let manifest = runner::execute_run(&text, &out)?;
            println!(
                "run complete: {} snapshots, determinism hash {}",
                manifest.snapshots.len(),
                manifest.determinism_hash
            );
            println!("manifest: {}", out.join("manifest.txt").display());
            Ok(true)
        }
        Command::SolveField {
            rho,
            g,
            mode,
            tol,
            out,
            csv,
        } => {
            let rho: Field = read_field(&rho)?;
            let g: Field = read_field(&g)?;
            let mode: ChargeMode = mode.parse()?;
            let settings = SolverSettings {
                tolerance: tol,
                ..SolverSettings::default()
            };
            let split = solve_split_field(&rho, &g, mode, &settings)?;
            fs::create_dir_all(&out)?;
            write_field(&split.u_bar, &out.join("u_bar.vpmef"))?;
            write_field(&split.u_hat, &out.join("u_hat.vpmef"))?;
            if csv {
                field_to_csv(&split.u_bar, &out.join("u_bar.csv"))?;
                field_to_csv(&split.u_hat, &out.join("u_hat.csv"))?;
            }
            for (axis, name) in ["e_x", "e_y", "e_z"].iter().enumerate() {
                let comp = Field::from_values(
                    *split.u_bar.grid(),
                    split.e_total.component(axis).to_vec(),
                )?;
                write_field(&comp, &out.join(format!("{name}.vpmef")))?;
            }
            let reg = regularity_report(&split)?;
            let cert = bouchut_certificate(&g, &split.u_total())?;
            let certificate = serde_json::json!({
                "mode": mode.as_str(),
                "residual": split.residual,
                "iterations": split.iterations,
                "m": split.m,
                "u_hat_max": split.u_hat_max(),
                "lap_u_hat_integral": split.lap_u_hat_integral(),
                "rho_l1": split.rho_l1,
                "rho_l53": split.rho_l53,
                "u_hat_weak_l3": reg.u_hat_weak_l3,
                "u_hat_linf": reg.u_hat_linf,
                "e_hat_weak_l32": reg.e_hat_weak_l32,
                "e_hat_linf": reg.e_hat_linf,
                "e_hat_holder_half": reg.e_hat_holder_half,
                "bouchut_lower_bound": cert.lower_bound,
                "u_weak_l3": cert.u_weak_l3,
                "g_linf": cert.g_linf,
            });
            fs::write(
                out.join("certificate.json"),
                serde_json::to_string_pretty(&certificate)?,
            )?;
            println!(
                "solved ({} mode): residual {:.3e} in {} iterations",
                mode.as_str(),
                split.residual,
                split.iterations
            );
            println!("certificate: {}", out.join("certificate.json").display());
            Ok(true)
        }
        Command::Diagnose { run, orders, out } => {
            let orders: Vec<f64> = parse_list(&orders, "order")?;
            let loaded = runner::load_run(&run)?;
            let rows = runner::diagnose(&loaded, &orders)?;
            let all_ok = rows.iter().all(|r| r.interp_ok);
            let csv = runner::diagnose_csv(&rows, &orders);
            match out {
                Some(path) => fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            Ok(all_ok)
        }
        Command::Stability {
            run_a,
            run_b,
            exact_w2_cap,
            out,
        } => {
            let a = runner::load_run(&run_a)?;
            let b = runner::load_run(&run_b)?;
            let analysis = runner::analyze_stability(&a, &b, exact_w2_cap)?;
            let csv = runner::stability_csv(&analysis);
            match out {
                Some(path) => fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            print!("{}", runner::stability_summary(&analysis));
            Ok(analysis.report.all_w2_squared_below_d && analysis.report.envelope_verified)
        }
        Command::Bench {
            grid_sizes,
            particles,
            reps,
            out,
        } => {
            let ns: Vec<usize> = parse_list(&grid_sizes, "grid size")?;
            let counts: Vec<usize> = parse_list(&particles, "particle count")?;
            let rows = runner::bench(&ns, &counts, reps)?;
            let csv = runner::bench_csv(&rows);
            match out {
                Some(path) => fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            Ok(true)
        }
        Command::Verify => {
            let reports = vpme_core::battery::run_all();
            let mut all = true;
            for r in &reports {
                println!("{}", r.line());
                all &= r.pass;
            }
            println!(
                "{} / {} criteria passed",
                reports.iter().filter(|r| r.pass).count(),
                reports.len()
            );
            Ok(all)
        }
    }
}
