//! Optional TOML config file, overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use tapdecode::dnd::{DndConfig, Variant};
use tapdecode::simulator::BenchmarkConfig;
use tapdecode::train::TrainConfig;

/// Everything a run depends on, with all defaults materialized.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub benchmark: BenchmarkConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.benchmark.sim.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct SimArgs {
    /// Plain-text corpus, one sentence per line (default: bundled corpus).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Seed for simulation, splitting, augmentation and training.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub phrases: Option<usize>,
}

impl SimArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.benchmark.sim.seed = s;
            cfg.train.seed = s;
        }
        if let Some(u) = self.users {
            cfg.benchmark.sim.n_users = u;
        }
        if let Some(p) = self.phrases {
            cfg.benchmark.sim.phrases_per_user = p;
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct ModelArgs {
    /// dnd, bi-rnn, uni-rnn or gaussian-baseline.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Decoding GRU stacks.
    #[arg(long)]
    pub stacks: Option<usize>,
    /// GRU units per direction.
    #[arg(long)]
    pub units: Option<usize>,
    /// Weight of the intermediate loss (0 disables it).
    #[arg(long)]
    pub aux: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
}

impl ModelArgs {
    pub fn is_empty(&self) -> bool {
        self.variant.is_none() && self.stacks.is_none() && self.units.is_none() && self.aux.is_none() && self.window.is_none()
    }

    pub fn apply(&self, m: &mut DndConfig) {
        if let Some(v) = self.variant {
            m.variant = v;
        }
        if let Some(s) = self.stacks {
            m.dec_stacks = s;
        }
        if let Some(u) = self.units {
            m.units = u;
        }
        if let Some(a) = self.aux {
            m.aux_loss_weight = a;
        }
        if let Some(w) = self.window {
            m.window = w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.train.model.units = 32;
        cfg.benchmark.sim.seed = 9;
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_keep_defaults() {
        let cfg: RunConfig = toml::from_str("[train]\nmax_epochs = 3\n[train.model]\nvariant = \"bi-rnn\"\n").unwrap();
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.model.variant, Variant::BiRnn);
        assert_eq!(cfg.train.model.units, 64);
        assert_eq!(cfg.benchmark, BenchmarkConfig::default());
    }

    #[test]
    fn flags_override_file() {
        let mut cfg: RunConfig = toml::from_str("[train.model]\nunits = 16\n").unwrap();
        ModelArgs {
            units: Some(8),
            ..Default::default()
        }
        .apply(&mut cfg.train.model);
        SimArgs {
            seed: Some(5),
            ..Default::default()
        }
        .apply(&mut cfg);
        assert_eq!((cfg.train.model.units, cfg.train.seed, cfg.benchmark.sim.seed), (8, 5, 5));
    }
}
