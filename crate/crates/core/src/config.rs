//! Flat key-value scenario configuration: diffable, hashable text.
//!
//! Lines are `key = value`; `#` starts a comment. Documented keys:
//!
//! ```text
//! grid.L                 box half-width (positive real)
//! grid.n                 cells per axis (even, >= 8)
//! particles.N            particle count
//! seed                   sampling seed (u64)
//! mode                   variable | fixed
//! dt                     time step (positive)
//! T                      final time (nonnegative)
//! snapshot.every         steps between snapshots (default 10)
//! solver.tol             hat-solver relative residual (default 1e-8)
//! solver.max_iter        hat-solver iteration cap (default 500)
//! solver.damping         initial Picard step fraction (default 1.0)
//! solver.K               logarithm cutoff (default 30)
//! diag.orders            comma list of moment orders (default 2,4,6)
//! g.kind                 gaussian | ball | twobump | matched
//! g.sigma g.center g.radius g.separation g.weight_first   per kind
//! f0.spatial.kind        gaussian | ball | twobump | point
//! f0.spatial.sigma f0.spatial.center f0.spatial.radius
//! f0.spatial.separation f0.spatial.weight_first f0.spatial.position
//! f0.velocity.kind       maxwellian | powerlaw | cold | point
//! f0.velocity.sigma f0.velocity.r f0.velocity.velocity
//! f0.m0                  tracked moment order (> 6, default 8)
//! perturb.delta          initial position perturbation magnitude (default 0)
//! perturb.seed           perturbation direction seed (default 1)
//! ```
//!
//! `g.kind = matched` sets the electron background to the deposited initial
//! ion density (normalized to unit mass), which realizes the neutral
//! equilibrium rho_f = g exactly at the grid level.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::electrostatics::{ChargeMode, SolverSettings};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::GridSpec;
use crate::kinetics::{
    deposit_density, sample_initial, FieldContext, InitialDataSpec, ParticleEnsemble,
    SpatialProfile, VelocityProfile,
};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum GProfile {
    Gaussian { sigma: Scalar, center: [Scalar; 3] },
    Ball { radius: Scalar, center: [Scalar; 3] },
    TwoBump { sigma: Scalar, separation: Scalar, weight_first: Scalar },
    /// The deposited initial ion density, normalized to unit mass.
    Matched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub grid_l: Scalar,
    pub grid_n: usize,
    pub n_particles: usize,
    pub seed: u64,
    pub mode: ChargeMode,
    pub dt: Scalar,
    pub t_final: Scalar,
    pub snapshot_every: usize,
    pub solver_tol: Scalar,
    pub solver_max_iter: usize,
    pub solver_damping: Scalar,
    pub solver_k: u32,
    pub orders: Vec<Scalar>,
    pub g: GProfile,
    pub f0_spatial: SpatialProfile<Scalar>,
    pub f0_velocity: VelocityProfile<Scalar>,
    pub m0: Scalar,
    pub perturb_delta: Scalar,
    pub perturb_seed: u64,
    /// The raw text this config was parsed from, byte-for-byte.
    pub source_text: String,
}

struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::ConfigParse {
                    line: lineno + 1,
                    msg: format!("expected 'key = value', got '{raw}'"),
                });
            };
            let key = key.trim().to_string();
            if entries.contains_key(&key) {
                return Err(Error::ConfigParse {
                    line: lineno + 1,
                    msg: format!("duplicate key '{key}'"),
                });
            }
            entries.insert(key, (lineno + 1, value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    fn get(&self, key: &str) -> Option<&(usize, String)> {
        self.entries.get(key)
    }

    fn required(&self, key: &str) -> Result<&(usize, String)> {
        self.get(key).ok_or_else(|| Error::ConfigParse {
            line: 0,
            msg: format!("missing required key '{key}'"),
        })
    }

    fn parse_with<V>(&self, key: &str, f: impl Fn(&str) -> Option<V>) -> Result<V> {
        let (line, value) = self.required(key)?;
        f(value).ok_or_else(|| Error::ConfigParse {
            line: *line,
            msg: format!("cannot parse value '{value}' for key '{key}'"),
        })
    }

    fn parse_or<V>(&self, key: &str, default: V, f: impl Fn(&str) -> Option<V>) -> Result<V> {
        match self.get(key) {
            None => Ok(default),
            Some((line, value)) => f(value).ok_or_else(|| Error::ConfigParse {
                line: *line,
                msg: format!("cannot parse value '{value}' for key '{key}'"),
            }),
        }
    }

    fn f64_key(&self, key: &str) -> Result<Scalar> {
        self.parse_with(key, |s| s.parse::<Scalar>().ok().filter(|v| v.is_finite()))
    }

    fn f64_or(&self, key: &str, default: Scalar) -> Result<Scalar> {
        self.parse_or(key, default, |s| {
            s.parse::<Scalar>().ok().filter(|v| v.is_finite())
        })
    }

    fn usize_key(&self, key: &str) -> Result<usize> {
        self.parse_with(key, |s| s.parse::<usize>().ok())
    }

    fn vec3_or(&self, key: &str, default: [Scalar; 3]) -> Result<[Scalar; 3]> {
        self.parse_or(key, default, |s| {
            let parts: Vec<_> = s.split(',').map(|p| p.trim().parse::<Scalar>()).collect();
            if parts.len() != 3 || parts.iter().any(|p| p.is_err()) {
                return None;
            }
            Some([
                *parts[0].as_ref().unwrap(),
                *parts[1].as_ref().unwrap(),
                *parts[2].as_ref().unwrap(),
            ])
        })
    }
}

fn err_at(line: usize, msg: impl Into<String>) -> Error {
    Error::ConfigParse {
        line,
        msg: msg.into(),
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;

        let grid_l = kv.f64_key("grid.L")?;
        let grid_n = kv.usize_key("grid.n")?;
        GridSpec::new(grid_l, grid_n)?;

        let n_particles = kv.usize_key("particles.N")?;
        if n_particles == 0 {
            return Err(err_at(kv.required("particles.N")?.0, "particles.N must be positive"));
        }
        let seed = kv.parse_with("seed", |s| s.parse::<u64>().ok())?;
        let mode: ChargeMode = {
            let (line, value) = kv.required("mode")?;
            value.parse().map_err(|_| {
                err_at(*line, format!("mode must be 'variable' or 'fixed', got '{value}'"))
            })?
        };
        let dt = kv.f64_key("dt")?;
        if !(dt > 0.0) {
            return Err(err_at(kv.required("dt")?.0, "dt must be positive"));
        }
        let t_final = kv.f64_key("T")?;
        if t_final < 0.0 {
            return Err(err_at(kv.required("T")?.0, "T must be nonnegative"));
        }
        let snapshot_every = kv.parse_or("snapshot.every", 10, |s| s.parse().ok())?;
        let solver_tol = kv.f64_or("solver.tol", 1e-8)?;
        let solver_max_iter = kv.parse_or("solver.max_iter", 500usize, |s| s.parse().ok())?;
        let solver_damping = kv.f64_or("solver.damping", 1.0)?;
        let solver_k = kv.parse_or("solver.K", 30u32, |s| s.parse().ok())?;
        let orders = kv.parse_or("diag.orders", vec![2.0, 4.0, 6.0], |s| {
            let parsed: Vec<_> = s.split(',').map(|p| p.trim().parse::<Scalar>()).collect();
            if parsed.iter().any(|p| p.is_err()) {
                None
            } else {
                Some(parsed.into_iter().map(|p| p.unwrap()).collect())
            }
        })?;

        let g = {
            let (line, kind) = kv.required("g.kind")?;
            match kind.as_str() {
                "gaussian" => GProfile::Gaussian {
                    sigma: kv.f64_key("g.sigma")?,
                    center: kv.vec3_or("g.center", [0.0; 3])?,
                },
                "ball" => GProfile::Ball {
                    radius: kv.f64_key("g.radius")?,
                    center: kv.vec3_or("g.center", [0.0; 3])?,
                },
                "twobump" => GProfile::TwoBump {
                    sigma: kv.f64_key("g.sigma")?,
                    separation: kv.f64_key("g.separation")?,
                    weight_first: kv.f64_or("g.weight_first", 0.5)?,
                },
                "matched" => GProfile::Matched,
                other => {
                    return Err(err_at(*line, format!("unknown g.kind '{other}'")));
                }
            }
        };

        let f0_spatial = {
            let (line, kind) = kv.required("f0.spatial.kind")?;
            match kind.as_str() {
                "gaussian" => SpatialProfile::Gaussian {
                    sigma: kv.f64_key("f0.spatial.sigma")?,
                    center: kv.vec3_or("f0.spatial.center", [0.0; 3])?,
                },
                "ball" => SpatialProfile::Ball {
                    radius: kv.f64_key("f0.spatial.radius")?,
                    center: kv.vec3_or("f0.spatial.center", [0.0; 3])?,
                },
                "twobump" => SpatialProfile::TwoBump {
                    sigma: kv.f64_key("f0.spatial.sigma")?,
                    separation: kv.f64_key("f0.spatial.separation")?,
                    weight_first: kv.f64_or("f0.spatial.weight_first", 0.5)?,
                },
                "point" => SpatialProfile::Point {
                    position: kv.vec3_or("f0.spatial.position", [0.0; 3])?,
                },
                other => {
                    return Err(err_at(*line, format!("unknown f0.spatial.kind '{other}'")));
                }
            }
        };

        let f0_velocity = {
            let (line, kind) = kv.required("f0.velocity.kind")?;
            match kind.as_str() {
                "maxwellian" => VelocityProfile::Maxwellian {
                    sigma: kv.f64_key("f0.velocity.sigma")?,
                },
                "powerlaw" => VelocityProfile::PowerLaw {
                    r: kv.f64_key("f0.velocity.r")?,
                },
                "cold" => VelocityProfile::Cold,
                "point" => VelocityProfile::Point {
                    velocity: kv.vec3_or("f0.velocity.velocity", [0.0; 3])?,
                },
                other => {
                    return Err(err_at(*line, format!("unknown f0.velocity.kind '{other}'")));
                }
            }
        };
        let m0 = kv.f64_or("f0.m0", 8.0)?;

        // fail fast on invalid profile parameters
        InitialDataSpec::new(f0_spatial, f0_velocity, m0)?;

        let perturb_delta = kv.f64_or("perturb.delta", 0.0)?;
        let perturb_seed = kv.parse_or("perturb.seed", 1u64, |s| s.parse().ok())?;

        Ok(Self {
            grid_l,
            grid_n,
            n_particles,
            seed,
            mode,
            dt,
            t_final,
            snapshot_every,
            solver_tol,
            solver_max_iter,
            solver_damping,
            solver_k,
            orders,
            g,
            f0_spatial,
            f0_velocity,
            m0,
            perturb_delta,
            perturb_seed,
            source_text: text.to_string(),
        })
    }

    pub fn grid(&self) -> GridSpec<Scalar> {
        GridSpec::new(self.grid_l, self.grid_n).expect("validated at parse time")
    }

    pub fn initial_spec(&self) -> InitialDataSpec<Scalar> {
        InitialDataSpec::new(self.f0_spatial, self.f0_velocity, self.m0)
            .expect("validated at parse time")
    }

    pub fn solver_settings(&self) -> SolverSettings<Scalar> {
        SolverSettings {
            tolerance: self.solver_tol,
            max_iterations: self.solver_max_iter,
            damping: self.solver_damping,
            k_cutoff: self.solver_k,
            normalize_g: false,
        }
    }

    /// Sample the initial ensemble, applying the configured position
    /// perturbation (delta times deterministic unit vectors).
    pub fn initial_ensemble(&self) -> Result<ParticleEnsemble<Scalar>> {
        let mut ens = sample_initial(&self.initial_spec(), self.n_particles, self.seed)?;
        if self.perturb_delta != 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.perturb_seed);
            for x in ens.positions_mut() {
                let mut u = [0.0; 3];
                let mut norm = 0.0;
                for c in &mut u {
                    *c = rng.gen::<Scalar>() - 0.5;
                    norm += *c * *c;
                }
                let norm = norm.sqrt().max(1e-30);
                for a in 0..3 {
                    x[a] += self.perturb_delta * u[a] / norm;
                }
            }
        }
        Ok(ens)
    }

    /// Build the electron background field on the grid, normalized to unit
    /// mass. `matched` deposits the (unperturbed) initial ensemble.
    pub fn g_field(&self) -> Result<ScalarField<Scalar>> {
        let grid = self.grid();
        let mut field = match &self.g {
            GProfile::Gaussian { sigma, center } => {
                let profile = SpatialProfile::Gaussian {
                    sigma: *sigma,
                    center: *center,
                };
                ScalarField::from_fn(grid, |x| profile.density(x))
            }
            GProfile::Ball { radius, center } => {
                let profile = SpatialProfile::Ball {
                    radius: *radius,
                    center: *center,
                };
                ScalarField::from_fn(grid, |x| profile.density(x))
            }
            GProfile::TwoBump {
                sigma,
                separation,
                weight_first,
            } => {
                let profile = SpatialProfile::TwoBump {
                    sigma: *sigma,
                    separation: *separation,
                    weight_first: *weight_first,
                };
                ScalarField::from_fn(grid, |x| profile.density(x))
            }
            GProfile::Matched => {
                let base = sample_initial(&self.initial_spec(), self.n_particles, self.seed)?;
                deposit_density(&base, grid)?.rho
            }
        };
        field.normalize_to(1.0)?;
        Ok(field)
    }

    pub fn field_context(&self) -> Result<FieldContext<Scalar>> {
        FieldContext::new(self.g_field()?, self.mode, self.solver_settings())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
grid.L = 4.0
grid.n = 16
particles.N = 1000
seed = 7
mode = variable
dt = 0.01
T = 0.1
g.kind = gaussian
g.sigma = 0.5
f0.spatial.kind = gaussian
f0.spatial.sigma = 0.5
f0.velocity.kind = maxwellian
f0.velocity.sigma = 0.4
";

    #[test]
    fn parses_minimal_config() {
        let cfg = ScenarioConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.grid_n, 16);
        assert_eq!(cfg.mode, ChargeMode::VariableCharge);
        assert_eq!(cfg.orders, vec![2.0, 4.0, 6.0]);
        assert_eq!(cfg.snapshot_every, 10);
        assert_eq!(cfg.source_text, MINIMAL);
        let g = cfg.g_field().unwrap();
        assert!((g.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_dt_with_line_number() {
        let text = MINIMAL.replace("dt = 0.01", "dt = -0.5");
        match ScenarioConfig::parse(&text) {
            Err(Error::ConfigParse { line, msg }) => {
                assert_eq!(line, 6);
                assert!(msg.contains("dt"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_kinds_and_bad_values() {
        let text = MINIMAL.replace("g.kind = gaussian", "g.kind = blob");
        assert!(ScenarioConfig::parse(&text).is_err());
        let text = MINIMAL.replace("grid.n = 16", "grid.n = 15");
        assert!(ScenarioConfig::parse(&text).is_err());
        let text = MINIMAL.replace("mode = variable", "mode = both");
        assert!(ScenarioConfig::parse(&text).is_err());
        let text = format!("{MINIMAL}unclosed line\n");
        assert!(ScenarioConfig::parse(&text).is_err());
        let text = format!("{MINIMAL}dt = 0.5\n");
        assert!(matches!(
            ScenarioConfig::parse(&text),
            Err(Error::ConfigParse { msg, .. }) if msg.contains("duplicate")
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = format!("# leading comment\n\n{MINIMAL}\n# trailing\nperturb.delta = 0.001 # inline\n");
        let cfg = ScenarioConfig::parse(&text).unwrap();
        assert_eq!(cfg.perturb_delta, 0.001);
    }

    #[test]
    fn perturbation_preserves_velocities_and_shifts_positions() {
        let text = format!("{MINIMAL}perturb.delta = 0.001\n");
        let cfg = ScenarioConfig::parse(&text).unwrap();
        let base = ScenarioConfig::parse(MINIMAL).unwrap();
        let a = base.initial_ensemble().unwrap();
        let b = cfg.initial_ensemble().unwrap();
        assert_eq!(a.velocities(), b.velocities());
        for (xa, xb) in a.positions().iter().zip(b.positions()) {
            let d2: f64 = (0..3).map(|c| (xa[c] - xb[c]).powi(2)).sum();
            assert!((d2.sqrt() - 0.001).abs() < 1e-12);
        }
    }

    #[test]
    fn matched_g_equals_normalized_deposit() {
        let text = MINIMAL.replace("g.kind = gaussian\ng.sigma = 0.5", "g.kind = matched");
        let cfg = ScenarioConfig::parse(&text).unwrap();
        let g = cfg.g_field().unwrap();
        let dep = deposit_density(&cfg.initial_ensemble().unwrap(), cfg.grid()).unwrap();
        let mut expect = dep.rho;
        expect.normalize_to(1.0).unwrap();
        assert_eq!(g, expect);
    }
}