//! Experiment configuration file.
//!
//! One JSON (or TOML, by file extension) document describes the model once;
//! the simulator, the limit solver and the checks all derive their settings
//! from it. See `configs/` for annotated examples.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abm::{InitialInfected, Model, SimConfig};
use crate::error::{Error, Result};
use crate::infectivity::InfectivityLaw;
use crate::limit_solver::{InitialCondition, LimitConfig, Solver};

fn default_record_step() -> f64 {
    0.1
}

fn default_population() -> u64 {
    1000
}

fn default_one() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_cutoff() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_population")]
    pub population: u64,
    #[serde(default = "default_record_step")]
    pub record_step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_bin: Option<f64>,
    #[serde(default = "default_one")]
    pub replications: usize,
    #[serde(default)]
    pub record_events: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            population: default_population(),
            record_step: default_record_step(),
            age_bin: None,
            replications: 1,
            record_events: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSection {
    pub dt: f64,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iid_remaining: Option<crate::lifetime::LifetimeDistribution>,
    /// Final size is reported only once `Ῡ(T)` is below this.
    #[serde(default = "default_cutoff")]
    pub final_size_cutoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "sup_S")]
    SupS,
    #[serde(rename = "sup_I")]
    SupI,
    #[serde(rename = "sup_R")]
    SupR,
    #[serde(rename = "sup_curlyI")]
    SupCurlyI,
    #[serde(rename = "sup_age_dist")]
    SupAgeDist,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::SupS => "sup_S",
            Metric::SupI => "sup_I",
            Metric::SupR => "sup_R",
            Metric::SupCurlyI => "sup_curlyI",
            Metric::SupAgeDist => "sup_age_dist",
        }
    }
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::SupS, Metric::SupI]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub ladder: Vec<u64>,
    pub replications: usize,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleSection {
    pub population: u64,
    pub replications: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSection {
    /// Largest age column of exported density grids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_age: Option<f64>,
    /// Keep every `row_stride`-th pair of consecutive rows in checks and exports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_stride: Option<usize>,
    /// Transport with `G^c` instead of `F^c`.
    #[serde(default)]
    pub left_continuous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: Model,
    pub law: InfectivityLaw,
    pub initial: InitialCondition,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output: PathBuf,
    #[serde(default)]
    pub simulation: SimulationSection,
    pub limit: LimitSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub martingale: Option<MartingaleSection>,
    #[serde(default)]
    pub pde: PdeSection,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        let cfg: ExperimentConfig = if is_toml {
            toml::from_str(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.limit_config().validate()?;
        self.sim_config(self.simulation.population).validate()?;
        if self.simulation.replications == 0 {
            return Err(Error::config("simulation.replications must be at least 1"));
        }
        let ratio = self.simulation.record_step / self.limit.dt;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return Err(Error::config("simulation.record_step must be a multiple of limit.dt"));
        }
        if let Some(bin) = self.simulation.age_bin {
            let ratio = bin / self.limit.dt;
            if (ratio - ratio.round()).abs() > 1e-6 {
                return Err(Error::config("simulation.age_bin must be a multiple of limit.dt"));
            }
        }
        if let Some(conv) = &self.convergence {
            if conv.ladder.is_empty() || conv.ladder.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config("convergence.ladder must be nonempty and strictly increasing"));
            }
            if conv.replications == 0 {
                return Err(Error::config("convergence.replications must be at least 1"));
            }
            if conv.metrics.contains(&Metric::SupAgeDist) && self.simulation.age_bin.is_none() {
                return Err(Error::config("sup_age_dist needs simulation.age_bin"));
            }
            for &n in &conv.ladder {
                self.sim_config(n).validate()?;
            }
        }
        if let Some(m) = &self.martingale {
            self.sim_config(m.population).validate()?;
            if !(m.t > 0.0 && m.t <= self.horizon) {
                return Err(Error::config("martingale.t must lie in (0, horizon]"));
            }
        }
        Ok(())
    }

    pub fn sim_config(&self, population: u64) -> SimConfig {
        SimConfig {
            population,
            horizon: self.horizon,
            model: self.model,
            law: self.law.clone(),
            initial: InitialInfected::Fraction {
                fraction: self.initial.fraction,
                age_distribution: self.initial.age_distribution.clone(),
            },
            record_step: self.simulation.record_step,
            age_bin: self.simulation.age_bin,
            seed: self.seed,
            record_events: self.simulation.record_events,
        }
    }

    pub fn limit_config(&self) -> LimitConfig {
        LimitConfig {
            law: self.law.clone(),
            model: self.model,
            initial: self.initial.clone(),
            horizon: self.horizon,
            dt: self.limit.dt,
            solver: self.limit.solver,
            iid_remaining: self.limit.iid_remaining.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form, in hex. The output directory is
    /// left out: where results go does not change them.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
        }
        let canonical = serde_json::to_string(&value).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "model": "sir",
        "law": {"family": "separable", "lambda_tilde": {"constant": 2.0},
                "period": {"kind": "exponential", "rate": 1.0}},
        "initial": {"fraction": 0.01,
                    "age_distribution": {"kind": "piecewise_cdf", "knots": [[0, 0], [1, 1]]}},
        "horizon": 20.0,
        "seed": 7,
        "simulation": {"population": 500, "record_step": 0.1, "age_bin": 0.5},
        "limit": {"dt": 0.01},
        "convergence": {"ladder": [100, 1000], "replications": 3, "metrics": ["sup_S", "sup_age_dist"]}
    }"#;

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::from_json(SAMPLE).unwrap();
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_eq!(cfg.hash().len(), 64);
        let mut moved = cfg.clone();
        moved.output = PathBuf::from("elsewhere");
        assert_eq!(moved.hash(), cfg.hash());
        moved.seed += 1;
        assert_ne!(moved.hash(), cfg.hash());
        let toml_text = toml::to_string(&cfg).unwrap();
        let from_toml: ExperimentConfig = toml::from_str(&toml_text).unwrap();
        assert_eq!(from_toml, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = SAMPLE.replace("[100, 1000]", "[1000, 100]");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::ConfigInvalid(_))));
        let bad = SAMPLE.replace("\"seed\": 7", "\"sed\": 7");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = SAMPLE.replace("\"record_step\": 0.1", "\"record_step\": 0.015");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = ExperimentConfig::from_path(Path::new("/nonexistent/cfg.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cfg.json"));
    }
}
