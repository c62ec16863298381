//! Run configuration: a TOML file plus command-line overrides, with the
//! flags winning over file values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use latentmorph_core::embed::WeightMode;
use latentmorph_core::nav::GradMode;
use latentmorph_core::vae::ModelConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory (holding manifest.jsonl and samples/).
    pub dataset_dir: PathBuf,
    /// Where checkpoints are written.
    pub checkpoint_dir: PathBuf,
    /// Where metrics, reports, traces, and plots are written.
    pub output_dir: PathBuf,
    /// Model preset: "desk32" or "full80".
    pub preset: String,
    pub seed: u64,
    pub data: DataSection,
    pub train: TrainSection,
    pub nav: NavSection,
    pub embed: EmbedSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub samples_per_class: usize,
    /// train/val/test fractions; must sum to 1.
    pub split: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch: usize,
    pub max_iters: u64,
    pub eval_every: u64,
    pub patience: usize,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavSection {
    pub lambda: f64,
    pub p_stop: f64,
    pub max_iters: usize,
    /// "probability" or "logit".
    pub mode: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    pub k: usize,
    /// "heat" or "binary".
    pub weight_mode: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_dir: PathBuf::from("data"),
            checkpoint_dir: PathBuf::from("runs/checkpoints"),
            output_dir: PathBuf::from("runs/output"),
            preset: "desk32".to_string(),
            seed: 42,
            data: DataSection::default(),
            train: TrainSection::default(),
            nav: NavSection::default(),
            embed: EmbedSection::default(),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        // 200 train / 60 val / 60 test, balanced.
        DataSection { samples_per_class: 160, split: [0.625, 0.1875, 0.1875] }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 1e-4,
            batch: 16,
            max_iters: 700,
            eval_every: 200,
            patience: 10,
            alpha: 0.1,
            beta: 1.0,
        }
    }
}

impl Default for NavSection {
    fn default() -> Self {
        NavSection {
            lambda: 0.1,
            p_stop: 0.999,
            max_iters: 200,
            mode: "probability".to_string(),
            threshold: 0.5,
        }
    }
}

impl Default for EmbedSection {
    fn default() -> Self {
        EmbedSection { k: 10, weight_mode: "heat".to_string() }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.lr <= 0.0 {
            bail!("learning rate must be positive, got {}", self.train.lr);
        }
        if self.train.batch == 0 {
            bail!("batch size must be at least 1");
        }
        if self.train.alpha < 0.0 || self.train.beta < 0.0 {
            bail!("loss weights must be nonnegative");
        }
        if self.nav.lambda <= 0.0 {
            bail!("navigation step size must be positive, got {}", self.nav.lambda);
        }
        if !(0.0..=1.0).contains(&self.nav.p_stop) {
            bail!("p_stop must lie in [0, 1], got {}", self.nav.p_stop);
        }
        if self.embed.k == 0 {
            bail!("embedding neighborhood size must be at least 1");
        }
        self.model_config()?;
        self.grad_mode()?;
        self.weight_mode()?;
        Ok(())
    }

    /// Model topology for the selected preset, with this run's loss weights.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut mc = match self.preset.as_str() {
            "desk32" => ModelConfig::desk32(),
            "full80" => ModelConfig::full80(),
            other => bail!("unknown preset '{other}' (expected desk32 or full80)"),
        };
        mc.alpha = self.train.alpha;
        mc.beta = self.train.beta;
        Ok(mc)
    }

    pub fn grad_mode(&self) -> Result<GradMode> {
        match self.nav.mode.as_str() {
            "probability" => Ok(GradMode::Probability),
            "logit" => Ok(GradMode::Logit),
            other => bail!("unknown navigation mode '{other}' (expected probability or logit)"),
        }
    }

    pub fn weight_mode(&self) -> Result<WeightMode> {
        match self.embed.weight_mode.as_str() {
            "heat" => Ok(WeightMode::Heat),
            "binary" => Ok(WeightMode::Binary),
            other => bail!("unknown weight mode '{other}' (expected heat or binary)"),
        }
    }
}
