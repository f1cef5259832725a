//! End-to-end exercises of the vpme binary: run, diagnose, stability,
//! solve-field, bench, and the exit-code contract.

use std::fs;
use std::path::Path;
use std::process::Command;

fn vpme() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vpme"))
}

const CONFIG: &str = "\
grid.L = 4.0
grid.n = 16
particles.N = 512
seed = 5
mode = variable
dt = 0.02
T = 0.2
snapshot.every = 5
g.kind = gaussian
g.sigma = 0.6
f0.spatial.kind = gaussian
f0.spatial.sigma = 0.5
f0.velocity.kind = maxwellian
f0.velocity.sigma = 0.3
";

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("scenario.cfg");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_then_diagnose_and_stability() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);

    let out_a = dir.path().join("run_a");
    let status = vpme()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_a)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out_a.join("manifest.txt").exists());

    // perturbed partner run
    let cfg_b = write_config(
        dir.path(),
        &format!("{CONFIG}perturb.delta = 0.001\nperturb.seed = 3\n"),
    );
    let out_b = dir.path().join("run_b");
    assert!(vpme()
        .args(["run", "--config"])
        .arg(&cfg_b)
        .arg("--out")
        .arg(&out_b)
        .status()
        .unwrap()
        .success());

    let diag = vpme()
        .args(["diagnose", "--run"])
        .arg(&out_a)
        .args(["--orders", "2,4"])
        .output()
        .unwrap();
    assert!(diag.status.success());
    let text = String::from_utf8(diag.stdout).unwrap();
    assert!(text.starts_with("t,E_V,E_F,M_2,M_4"));
    assert!(text.lines().count() >= 2);

    let stab = vpme()
        .args(["stability", "--run-a"])
        .arg(&out_a)
        .arg("--run-b")
        .arg(&out_b)
        .output()
        .unwrap();
    assert!(stab.status.success());
    let text = String::from_utf8(stab.stdout).unwrap();
    assert!(text.contains("t,D,W2,envelope,I1,I2,I3,I4,verdict"));
    assert!(text.contains("fitted_C"));
}

#[test]
fn solve_field_writes_certificate() {
    let dir = tempfile::tempdir().unwrap();
    // build density files through the library's own writer
    let grid = vpme_core::Grid::new(4.0, 16).unwrap();
    let mut rho = vpme_core::Field::from_fn(grid, |x: [f64; 3]| {
        (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 0.5).exp()
    });
    rho.normalize_to(1.0).unwrap();
    let rho_path = dir.path().join("rho.vpmef");
    vpme_core::io::write_field(&rho, &rho_path).unwrap();

    let out = dir.path().join("field");
    let status = vpme()
        .args(["solve-field", "--rho"])
        .arg(&rho_path)
        .arg("--g")
        .arg(&rho_path)
        .args(["--mode", "fixed", "--tol", "1e-9", "--out"])
        .arg(&out)
        .arg("--csv")
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["u_bar.vpmef", "u_hat.vpmef", "e_x.vpmef", "certificate.json", "u_hat.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("certificate.json")).unwrap()).unwrap();
    assert!(cert["residual"].as_f64().unwrap() < 1e-9);
    // neutral equilibrium: m = 1
    assert!((cert["m"].as_f64().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn bench_emits_csv() {
    let out = vpme()
        .args(["bench", "--grid-sizes", "16", "--particles", "1000", "--reps", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("op,size,rep,seconds"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn usage_errors_exit_with_code_2() {
    let out = vpme().arg("unknown-subcommand").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = vpme().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn determinism_hash_is_thread_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let mut hashes = Vec::new();
    for (threads, sub) in [("1", "t1"), ("4", "t4")] {
        let out = dir.path().join(sub);
        let res = vpme()
            .env("VPME_THREADS", threads)
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(res.status.success());
        let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
        let hash = manifest
            .lines()
            .find(|l| l.starts_with("determinism_hash"))
            .unwrap()
            .to_string();
        hashes.push(hash);
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn bad_config_exits_with_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("dt = 0.02", "dt = -1"));
    let out_dir = dir.path().join("run");
    let out = vpme()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir.exists());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line"), "stderr should carry the line number: {err}");
}
