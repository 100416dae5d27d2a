//! Adam, the milestone schedule, checkpoints and the training loop.

pub mod checkpoint;
pub mod optim;
pub mod schedule;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, load_params_for, save_checkpoint, Checkpoint};
pub use optim::{AdamConfig, OptimState};
pub use schedule::{Schedule, FULL_ITERATIONS};

use crate::data::{BatchConfig, Dataset, PairBatch, Prefetcher};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossReport, DEFAULT_ALPHA};
use crate::metrics::psnr_y;
use crate::nn::{apply_stat_updates, echosr_forward, infer, Bound, Mode, ModelParams};
use crate::tensor::{Graph, Tensor4};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: u64,
    pub batch: BatchConfig,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub alpha: f64,
    /// Parameter initialization seed.
    pub init_seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    /// Held-out validation on centered crops; 0 disables it.
    pub val_every: u64,
    pub val_images: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            iterations: FULL_ITERATIONS,
            batch: BatchConfig::default(),
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
            alpha: DEFAULT_ALPHA,
            init_seed: 0,
            log_every: 100,
            checkpoint_every: 5_000,
            val_every: 0,
            val_images: 8,
        }
    }
}

impl RunConfig {
    /// Scales total iterations and milestones together.
    pub fn scaled(&self, factor: f64) -> Result<RunConfig> {
        Ok(RunConfig {
            iterations: ((self.iterations as f64 * factor).round() as u64).max(1),
            schedule: self.schedule.scaled(factor)?,
            ..self.clone()
        })
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    pub pixel: f64,
    pub freq: f64,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_psnr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub params: ModelParams,
    pub optim: OptimState,
    pub step: u64,
    pub run: RunConfig,
}

impl Trainer {
    pub fn new(params: ModelParams, run: RunConfig) -> Result<Self> {
        run.schedule.validate()?;
        let optim = OptimState::new(&params.store, run.adam);
        Ok(Trainer {
            params,
            optim,
            step: 0,
            run,
        })
    }

    /// Resumes from a checkpoint; moments are reset if the checkpoint carries none.
    pub fn from_checkpoint(ckpt: Checkpoint, run: RunConfig) -> Result<Self> {
        run.schedule.validate()?;
        let optim = ckpt
            .optim
            .unwrap_or_else(|| OptimState::new(&ckpt.params.store, run.adam));
        Ok(Trainer {
            params: ckpt.params,
            optim,
            step: ckpt.step,
            run,
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            params: self.params.clone(),
            step: self.step,
            optim: Some(self.optim.clone()),
            meta: serde_json::to_value(&self.run)?,
        })
    }

    /// Forward, backward and one Adam update on `batch`. Returns the loss
    /// measured before the update.
    pub fn train_step(&mut self, batch: &PairBatch) -> Result<LossReport> {
        let lr = self.run.schedule.lr_at(self.step);
        let (report, grads, stats) = {
            let g = Graph::<f32>::new();
            let bound = Bound::new(&g, &self.params.store, Mode::Train, true);
            let x = g.constant(batch.lr.clone());
            let gt = g.constant(batch.hr.clone());
            let sr = echosr_forward(&bound.root(), &x, &self.params.config)?;
            let (loss, report) = total_loss(&sr, &gt, self.run.alpha)?;
            if !report.total.is_finite() {
                return Err(Error::NonFinite(format!("loss at step {}", self.step)));
            }
            let grads = g.backward(&loss)?;
            let by_name: BTreeMap<String, Tensor4<f32>> = bound
                .vars()
                .iter()
                .filter_map(|(k, v)| grads.get(v).map(|t| (k.clone(), t.clone())))
                .collect();
            (report, by_name, bound.take_stat_updates())
        };
        self.optim.step(&mut self.params.store, &grads, lr)?;
        apply_stat_updates(&mut self.params.store, &stats)?;
        self.step += 1;
        Ok(report)
    }

    /// Mean Y-channel PSNR of eval-mode outputs on `batch`, border `scale` cropped.
    pub fn evaluate(&self, batch: &PairBatch) -> Result<f64> {
        let sr = infer(&self.params, &batch.lr)?;
        psnr_y(&sr, &batch.hr, self.params.config.scale)
    }

    /// Trains until `self.run.iterations`, drawing batch `k` for step `k`.
    /// Writes `last.ckpt` every `checkpoint_every` steps and at the end, and
    /// appends records to `train_log.ndjson`. A non-finite loss or gradient
    /// stops the run and leaves the last good checkpoint untouched.
    pub fn run(&mut self, dataset: Arc<Dataset>, out_dir: &Path) -> Result<RunSummary> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let ckpt_path = out_dir.join("last.ckpt");
        let log_path = out_dir.join("train_log.ndjson");
        let mut log = open_log(&log_path, self.step == 0)?;
        let val = if self.run.val_every > 0 {
            Some(dataset.center_batch(self.run.batch.patch, self.run.val_images)?)
        } else {
            None
        };
        if self.step == 0 {
            save_checkpoint(&ckpt_path, &self.checkpoint()?)?;
        }
        let mut batches = Prefetcher::spawn(dataset, self.run.batch, self.step, 2);
        let mut last = None;
        while self.step < self.run.iterations {
            let batch = batches
                .next()
                .ok_or_else(|| Error::Internal("batch stream ended".into()))??;
            let lr = self.run.schedule.lr_at(self.step);
            let report = self.train_step(&batch)?;
            let step = self.step;
            let val_psnr = match &val {
                Some(v) if step.is_multiple_of(self.run.val_every) => Some(self.evaluate(v)?),
                _ => None,
            };
            let every = self.run.log_every.max(1);
            if step.is_multiple_of(every) || val_psnr.is_some() || step == self.run.iterations {
                let rec = LogRecord {
                    step,
                    lr,
                    pixel: report.pixel,
                    freq: report.freq,
                    total: report.total,
                    val_psnr,
                };
                writeln!(log, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&log_path, e))?;
                log.flush().map_err(|e| Error::io(&log_path, e))?;
                log::info!("step {step} lr {lr:.2e} loss {:.5}", report.total);
            }
            if self.run.checkpoint_every > 0 && step.is_multiple_of(self.run.checkpoint_every) {
                save_checkpoint(&ckpt_path, &self.checkpoint()?)?;
            }
            last = Some(report);
        }
        save_checkpoint(&ckpt_path, &self.checkpoint()?)?;
        Ok(RunSummary {
            steps: self.step,
            last,
            checkpoint: ckpt_path,
            log: log_path,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub steps: u64,
    pub last: Option<LossReport>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

fn open_log(path: &Path, fresh: bool) -> Result<BufWriter<File>> {
    let file = if fresh {
        File::create(path)
    } else {
        OpenOptions::new().create(true).append(true).open(path)
    };
    Ok(BufWriter::new(file.map_err(|e| Error::io(path, e))?))
}
