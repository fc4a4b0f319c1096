//! Scenario configuration files.

use std::path::{Path, PathBuf};

use aggflow::dynamics::{DEFAULT_DT, DEFAULT_MERGE_TOL};
use aggflow::potentials::DEFAULT_KINK_TOL;
use aggflow::scenarios::{circle_measure, circle_radius, three_particle_family};
use aggflow::selection::SelectionOptions;
use aggflow::{ParticleMeasure, PotentialSpec};
use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Masses in config files may miss unit total by this much; they are then
/// rescaled exactly.
pub const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    Inline {
        positions: Vec<Vec<f64>>,
        masses: Vec<f64>,
    },
    /// `.json` or `.csv`, relative to the config file.
    File(PathBuf),
    ThreeParticle {
        alpha: f64,
    },
    /// Equal atoms on a circle; the radius defaults to the stationary one.
    Circle {
        n_atoms: usize,
        #[serde(default)]
        radius: Option<f64>,
    },
    /// Equal atoms drawn uniformly from the cube `[low, high]^dim`.
    Random {
        n_atoms: usize,
        #[serde(default = "one")]
        dim: usize,
        #[serde(default = "minus_one")]
        low: f64,
        #[serde(default = "one_f")]
        high: f64,
    },
}

fn one() -> usize {
    1
}
fn minus_one() -> f64 {
    -1.0
}
fn one_f() -> f64 {
    1.0
}

impl MeasureSpec {
    pub fn resolve(&self, base_dir: &Path, seed: u64) -> Result<ParticleMeasure> {
        let mu = match self {
            MeasureSpec::Inline { positions, masses } => {
                ParticleMeasure::normalized(positions.clone(), masses.clone(), MASS_TOL)?
            }
            MeasureSpec::File(path) => {
                let full = base_dir.join(path);
                aggflow::io::read_measure(&full, MASS_TOL)
                    .with_context(|| format!("reading measure from {}", full.display()))?
            }
            MeasureSpec::ThreeParticle { alpha } => three_particle_family(*alpha)?,
            MeasureSpec::Circle { n_atoms, radius } => {
                circle_measure(*n_atoms, radius.unwrap_or_else(circle_radius))?
            }
            MeasureSpec::Random {
                n_atoms,
                dim,
                low,
                high,
            } => {
                if *n_atoms == 0 || *dim == 0 || !(low < high) {
                    bail!("random measure needs n_atoms >= 1, dim >= 1 and low < high");
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let positions = (0..*n_atoms)
                    .map(|_| (0..*dim).map(|_| rng.gen_range(*low..*high)).collect())
                    .collect();
                ParticleMeasure::uniform(positions)?
            }
        };
        Ok(mu)
    }
}

/// Every field has a default, so a serialized `Config` is fully resolved.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub potential: Option<PotentialSpec>,
    #[serde(default)]
    pub measure: Option<MeasureSpec>,
    /// Second initial datum for `contraction`.
    #[serde(default)]
    pub other_measure: Option<MeasureSpec>,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_t_end")]
    pub t_end: f64,
    #[serde(default = "d_merge_tol")]
    pub merge_tol: f64,
    #[serde(default = "d_stride")]
    pub save_stride: usize,
    #[serde(default = "d_kink_tol")]
    pub kink_tol: f64,
    #[serde(default = "d_qp_tol")]
    pub qp_tol: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "d_steps")]
    pub steps: usize,
    /// Threshold for `stationary`.
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_radius_tol")]
    pub radius_tol: f64,
    #[serde(default = "d_t_max")]
    pub t_max: f64,
    #[serde(default = "d_theta")]
    pub theta: f64,
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    /// Discretisations evaluated by `circle-radius`.
    #[serde(default)]
    pub circle_atoms: Vec<usize>,
    /// Also report the Moreau–Yosida energy with this parameter (`energy`).
    #[serde(default)]
    pub moreau_n: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Each entry overrides top-level fields for one run of the sweep.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<Value>,
}

fn d_dt() -> f64 {
    DEFAULT_DT
}
fn d_t_end() -> f64 {
    1.0
}
fn d_merge_tol() -> f64 {
    DEFAULT_MERGE_TOL
}
fn d_stride() -> usize {
    1
}
fn d_kink_tol() -> f64 {
    DEFAULT_KINK_TOL
}
fn d_qp_tol() -> f64 {
    SelectionOptions::default().qp_tol
}
fn d_max_iter() -> usize {
    SelectionOptions::default().max_iter
}
fn d_tau() -> f64 {
    0.05
}
fn d_inner_tol() -> f64 {
    1e-12
}
fn d_steps() -> usize {
    1
}
fn d_tol() -> f64 {
    1e-10
}
fn d_radius_tol() -> f64 {
    1e-3
}
fn d_t_max() -> f64 {
    10.0
}
fn d_theta() -> f64 {
    3.0
}
fn d_epsilon() -> f64 {
    0.01
}

impl Default for Config {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all config fields have defaults")
    }
}

impl Config {
    pub fn selection_options(&self) -> SelectionOptions {
        SelectionOptions {
            kink_tol: self.kink_tol,
            qp_tol: self.qp_tol,
            max_iter: self.max_iter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("t_end", self.t_end),
            ("merge_tol", self.merge_tol),
            ("kink_tol", self.kink_tol),
            ("qp_tol", self.qp_tol),
            ("tau", self.tau),
            ("inner_tol", self.inner_tol),
            ("tol", self.tol),
            ("radius_tol", self.radius_tol),
            ("t_max", self.t_max),
            ("epsilon", self.epsilon),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                bail!("{name} must be a positive finite number, got {value}");
            }
        }
        if let Some(n) = self.moreau_n {
            if !(n > 0.0) || !n.is_finite() {
                bail!("moreau_n must be a positive finite number, got {n}");
            }
        }
        for (name, value) in [
            ("save_stride", self.save_stride),
            ("max_iter", self.max_iter),
            ("steps", self.steps),
        ] {
            if value == 0 {
                bail!("{name} must be at least 1");
            }
        }
        Ok(())
    }
}

/// Splits a config document into one config per sweep entry (or a single
/// config when there is no sweep). Overrides replace top-level fields.
pub fn expand(doc: Value) -> Result<Vec<Config>> {
    let Value::Object(mut base) = doc else {
        bail!("config must be a JSON object");
    };
    let sweep = match base.remove("sweep") {
        None => return Ok(vec![parse(Value::Object(base))?]),
        Some(Value::Array(items)) => items,
        Some(_) => bail!("sweep must be a list of objects"),
    };
    if sweep.is_empty() {
        bail!("sweep must not be empty");
    }
    sweep
        .into_iter()
        .enumerate()
        .map(|(k, item)| {
            let Value::Object(overrides) = item else {
                bail!("sweep entry {k} must be an object");
            };
            if overrides.contains_key("sweep") {
                bail!("sweep entry {k} may not contain a nested sweep");
            }
            let mut merged = base.clone();
            merged.extend(overrides);
            parse(Value::Object(merged)).with_context(|| format!("sweep entry {k}"))
        })
        .collect()
}

fn parse(value: Value) -> Result<Config> {
    let cfg: Config = serde_json::from_value(value).context("invalid config")?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_and_validation() {
        let cfg = Config::default();
        assert_eq!(cfg.dt, 1e-3);
        assert_eq!(cfg.seed, 0);
        assert!(cfg.validate().is_ok());
        assert!(expand(json!({"dt": -1.0})).is_err());
        assert!(expand(json!({"unknown": 1})).is_err());
        assert!(expand(json!([1, 2])).is_err());
    }

    #[test]
    fn sweep_overrides_fields() {
        let cfgs = expand(json!({"dt": 0.01, "sweep": [{"dt": 0.02}, {"t_end": 3.0}]})).unwrap();
        assert_eq!(cfgs.len(), 2);
        assert_eq!((cfgs[0].dt, cfgs[0].t_end), (0.02, 1.0));
        assert_eq!((cfgs[1].dt, cfgs[1].t_end), (0.01, 3.0));
        assert!(expand(json!({"sweep": []})).is_err());
        assert!(expand(json!({"sweep": [{"dt": 0.0}]})).is_err());
    }

    #[test]
    fn measure_specs() {
        let dir = Path::new(".");
        let spec: MeasureSpec = serde_json::from_value(json!({"inline": {
            "positions": [[0.0], [1.0]], "masses": [0.5, 0.5000000001]}}))
        .unwrap();
        let mu = spec.resolve(dir, 0).unwrap();
        assert_eq!(mu.masses().iter().sum::<f64>(), 1.0);
        let bad: MeasureSpec = serde_json::from_value(json!({"inline": {
            "positions": [[0.0], [1.0]], "masses": [-0.5, 1.5]}}))
        .unwrap();
        assert!(bad.resolve(dir, 0).is_err());

        let random: MeasureSpec =
            serde_json::from_value(json!({"random": {"n_atoms": 5, "dim": 2}})).unwrap();
        assert_eq!(
            random.resolve(dir, 7).unwrap(),
            random.resolve(dir, 7).unwrap()
        );
        assert_ne!(
            random.resolve(dir, 7).unwrap(),
            random.resolve(dir, 8).unwrap()
        );

        let three: MeasureSpec =
            serde_json::from_value(json!({"three_particle": {"alpha": 0.1}})).unwrap();
        assert_eq!(three.resolve(dir, 0).unwrap().len(), 3);
        let circle: MeasureSpec =
            serde_json::from_value(json!({"circle": {"n_atoms": 12}})).unwrap();
        assert!((circle.resolve(dir, 0).unwrap().radius() - circle_radius()).abs() < 1e-12);
    }
}
