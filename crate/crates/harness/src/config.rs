use std::collections::BTreeMap;
use std::path::Path;

use rlar::trainer::TrainerConfig;
use rlar::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_full_scale() -> usize {
    100
}

/// Axes of the discrepancy grid: parameter name to multipliers of the
/// planning model's value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axes: BTreeMap<String, Vec<f64>>,
}

impl SweepConfig {
    /// Cartesian product of the axes, in lexicographic axis order.
    pub fn cells(&self) -> Vec<BTreeMap<String, f64>> {
        let mut cells = vec![BTreeMap::new()];
        for (name, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|cell| {
                    values.iter().map(move |v| {
                        let mut c = cell.clone();
                        c.insert(name.clone(), *v);
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Normalized training return counted as "reached".
    pub return_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_full_scale")]
    pub full_scale_episodes: usize,
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub ablation: Option<AblationConfig>,
}

impl ExperimentConfig {
    pub fn new(trainer: TrainerConfig) -> Self {
        Self {
            seeds: default_seeds(),
            full_scale_episodes: default_full_scale(),
            trainer,
            sweep: None,
            ablation: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Toml(inner) => Error::Config(format!("{}: {inner}", path.display())),
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.full_scale_episodes == 0 {
            return Err(Error::Config("full_scale_episodes must be positive".into()));
        }
        self.trainer.validate()?;
        if let Some(sweep) = &self.sweep {
            if sweep.axes.is_empty() || sweep.axes.values().any(|v| v.is_empty()) {
                return Err(Error::Config("sweep axes must be non-empty".into()));
            }
            for cell in sweep.cells() {
                let mut t = self.trainer.clone();
                t.plant_perturb = cell;
                t.validate()?;
            }
        }
        Ok(())
    }

    /// The trainer configuration for one seed, after command-line overrides.
    pub fn trainer_for(&self, seed: u64, episodes: Option<usize>, full_scale: bool) -> TrainerConfig {
        let mut t = self.trainer.clone();
        t.seed = seed;
        if full_scale {
            t.episodes = self.full_scale_episodes;
        }
        if let Some(n) = episodes {
            t.episodes = n;
        }
        t
    }
}

/// SHA-256 of the canonical TOML form with the seed zeroed, so runs that
/// differ only by seed share a hash.
pub fn config_hash(cfg: &TrainerConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.seed = 0;
    let digest = Sha256::digest(c.to_toml()?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
