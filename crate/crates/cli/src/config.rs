//! The JSON run file. Every key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use echosr::train::{RunConfig, Schedule};
use echosr::ModelConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// `echosr` or `echosr-lite`; mutually exclusive with `model`.
    pub preset: Option<String>,
    /// Overrides the scale of the preset or model section.
    pub scale: Option<usize>,
    pub model: Option<ModelConfig>,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Directory holding `HR/*.png`.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub iters: u64,
    /// Multiplies `iters` and every learning-rate milestone.
    pub iter_scale: f64,
    pub batch: usize,
    pub patch: usize,
    /// Data-order and augmentation seed.
    pub seed: u64,
    pub init_seed: u64,
    pub lr: f64,
    pub lr_decay: f64,
    pub milestones: Vec<u64>,
    pub alpha: f64,
    pub augment: bool,
    pub ckpt_every: u64,
    pub log_every: u64,
    pub val_every: u64,
    pub val_images: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let run = RunConfig::default();
        TrainSection {
            data_dir: None,
            out_dir: PathBuf::from("runs/echosr"),
            iters: run.iterations,
            iter_scale: 1.0,
            batch: run.batch.batch_size,
            patch: run.batch.patch,
            seed: run.batch.seed,
            init_seed: run.init_seed,
            lr: run.schedule.initial_lr,
            lr_decay: run.schedule.decay_factor,
            milestones: run.schedule.milestones,
            alpha: run.alpha,
            augment: run.batch.augment,
            ckpt_every: run.checkpoint_every,
            log_every: run.log_every,
            val_every: run.val_every,
            val_images: run.val_images,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub hr_dir: Option<PathBuf>,
    pub lr_dir: Option<PathBuf>,
    /// Must match the checkpoint when given.
    pub scale: Option<usize>,
    /// Defaults to the scale.
    pub crop_border: Option<usize>,
}

impl CliConfig {
    /// Reads `path`; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: CliConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.train.data_dir.as_mut().map(rebase);
        rebase(&mut cfg.train.out_dir);
        cfg.eval.hr_dir.as_mut().map(rebase);
        cfg.eval.lr_dir.as_mut().map(rebase);
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(CliConfig::default()), CliConfig::load)
    }

    /// Resolves the architecture; `preset` and `scale` flags win over the file.
    pub fn model_config(&self, preset: Option<&str>, scale: Option<usize>) -> Result<ModelConfig> {
        let scale = scale.or(self.scale);
        let mut cfg = match (preset.or(self.preset.as_deref()), &self.model) {
            (Some(_), Some(_)) if preset.is_none() => bail!("config sets both `preset` and `model`"),
            (Some(name), _) => ModelConfig::preset(name, scale.unwrap_or(2))?,
            (None, Some(m)) => m.clone(),
            (None, None) => ModelConfig::echosr(2),
        };
        if let Some(r) = scale {
            cfg.scale = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Trainer settings after applying `iter_scale`.
    pub fn run_config(&self) -> Result<RunConfig> {
        let t = &self.train;
        let mut run = RunConfig {
            iterations: t.iters,
            schedule: Schedule {
                initial_lr: t.lr,
                decay_factor: t.lr_decay,
                milestones: t.milestones.clone(),
            },
            alpha: t.alpha,
            init_seed: t.init_seed,
            log_every: t.log_every,
            checkpoint_every: t.ckpt_every,
            val_every: t.val_every,
            val_images: t.val_images,
            ..RunConfig::default()
        };
        run.batch.batch_size = t.batch;
        run.batch.patch = t.patch;
        run.batch.seed = t.seed;
        run.batch.augment = t.augment;
        run.schedule.validate()?;
        if !(t.iter_scale > 0.0 && t.iter_scale.is_finite()) {
            bail!("iter_scale must be positive, got {}", t.iter_scale);
        }
        if t.iter_scale == 1.0 {
            return Ok(run);
        }
        Ok(run.scaled(t.iter_scale)?)
    }
}
