//! Data ingestion, the joint training step, optimisation schedule and
//! checkpointing.

pub mod checkpoint;
pub mod dataset;
pub mod optim;
pub mod step;

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

pub use checkpoint::{load_model, save_checkpoint, Checkpoint, CheckpointParts};
pub use dataset::{collate, ingest_manifest, parse_manifest, Batch, ManifestEntry, TrainingExample};
pub use optim::{AdamW, AdamWConfig};
pub use step::{forward_pass, train_step, ForwardPass, StepMetrics};

use crate::audio::MelTransform;
use crate::config::Config;
use crate::frontend::Frontend;
use crate::model::{Discriminator, ParaStyleTts};
use crate::prompt::PromptCache;
use crate::{rng, Error, Result};

/// Append-only CSV of per-step metrics.
pub struct MetricsLog {
    writer: csv::Writer<std::fs::File>,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let exists = path.metadata().map(|m| m.len() > 0).unwrap_or(false);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let writer = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
        Ok(Self { writer })
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        self.writer.serialize(m).map_err(|e| Error::Invalid(format!("metrics: {e}")))?;
        self.writer.flush().map_err(|e| Error::Invalid(format!("metrics: {e}")))?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let err = |e: csv::Error| Error::Invalid(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().map(|row| row.map_err(err)).collect()
}

/// Owns the models, optimizers and data of one run. The batch order and
/// learning rate are pure functions of the step counter, so a resumed run
/// continues exactly where the saved one stopped.
pub struct Trainer {
    pub cfg: Config,
    pub model: ParaStyleTts,
    pub disc: Discriminator,
    pub opt_g: AdamW,
    pub opt_d: AdamW,
    pub examples: Vec<TrainingExample>,
    pub step: u64,
    mel: MelTransform,
}

impl Trainer {
    pub fn new(cfg: &Config, examples: Vec<TrainingExample>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Invalid("no training examples".into()));
        }
        let model = ParaStyleTts::new(cfg, &Frontend::bundled().vocab, rng::derive(cfg.seed, "generator"))?;
        let disc = Discriminator::new(cfg, rng::derive(cfg.seed, "discriminator"))?;
        let oc = AdamWConfig {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            clip: cfg.grad_clip,
        };
        let opt_g = AdamW::new(model.store.trainable(), oc)?;
        let opt_d = AdamW::new(disc.store.trainable(), oc)?;
        let mel = MelTransform::new(cfg.mel(), model.dtype(), model.device())?;
        Ok(Self {
            cfg: cfg.clone(),
            model,
            disc,
            opt_g,
            opt_d,
            examples,
            step: 0,
            mel,
        })
    }

    /// Restores parameters, optimizer moments and the step counter.
    pub fn resume(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.restore_model(&self.model)?;
        ck.restore_disc(&self.disc)?;
        ck.restore_optimizer("opt_g", &mut self.opt_g)?;
        ck.restore_optimizer("opt_d", &mut self.opt_d)?;
        self.step = ck.step();
        Ok(())
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.examples.len().div_ceil(self.cfg.batch_size) as u64
    }

    pub fn epoch(&self, step: u64) -> u64 {
        step / self.batches_per_epoch()
    }

    /// Example indices of the batch used at `step`. Each epoch is a fresh
    /// shuffle; the last batch of an epoch may be short.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let epoch = self.epoch(step);
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut rng::stream(rng::derive(self.cfg.seed, "shuffle"), epoch));
        let k = (step % self.batches_per_epoch()) as usize * self.cfg.batch_size;
        order[k..(k + self.cfg.batch_size).min(order.len())].to_vec()
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        self.cfg.learning_rate * self.cfg.lr_decay.powi(self.epoch(step) as i32)
    }

    pub fn batch(&self, step: u64) -> Result<Batch> {
        let idx = self.batch_indices(step);
        let refs: Vec<&TrainingExample> = idx.iter().map(|&i| &self.examples[i]).collect();
        collate(&refs, self.model.dtype(), self.model.device())
    }

    /// Runs one step and advances the counter.
    pub fn step_once(&mut self) -> Result<StepMetrics> {
        let step = self.step;
        let lr = self.lr_at(step);
        self.opt_g.set_lr(lr);
        self.opt_d.set_lr(lr);
        let batch = self.batch(step)?;
        let m = train_step(
            &self.model,
            &self.disc,
            &mut self.opt_g,
            &mut self.opt_d,
            &self.mel,
            &batch,
            self.cfg.seed,
            step,
        )?;
        self.step += 1;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(
            path,
            &CheckpointParts {
                model: &self.model,
                disc: Some(&self.disc),
                opt_g: Some(&self.opt_g),
                opt_d: Some(&self.opt_d),
                step: self.step,
            },
        )
    }

    /// Trains until `cfg.total_steps`, logging every step to
    /// `output_dir/metrics.csv` and checkpointing on the interval and at the end.
    pub fn run(&mut self, output_dir: &Path, mut on_step: impl FnMut(&StepMetrics)) -> Result<PathBuf> {
        std::fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
        let mut log = MetricsLog::open(&output_dir.join("metrics.csv"))?;
        let latest = output_dir.join("latest.ckpt");
        while self.step < self.cfg.total_steps {
            let m = self.step_once()?;
            log.write(&m)?;
            if self.cfg.log_interval > 0 && m.step % self.cfg.log_interval == 0 {
                log::info!(
                    "step {} recon {:.4} kl {:.4} dur {:.4} adv {:.4} fm {:.4} disc {:.4} ({:.2}s)",
                    m.step,
                    m.recon,
                    m.kl,
                    m.dur,
                    m.adv,
                    m.fm,
                    m.disc,
                    m.seconds
                );
            }
            on_step(&m);
            if self.cfg.checkpoint_interval > 0 && self.step % self.cfg.checkpoint_interval == 0 {
                self.save(&output_dir.join(format!("step{:07}.ckpt", self.step)))?;
                self.save(&latest)?;
            }
        }
        self.save(&latest)?;
        Ok(latest)
    }
}

/// Ingests the configured manifest and trains, resuming from
/// `output_dir/latest.ckpt` when present.
pub fn train(cfg: &Config) -> Result<PathBuf> {
    if cfg.manifest.is_empty() {
        return Err(Error::Config("training needs `manifest`".into()));
    }
    let backend = cfg.prompt_backend()?;
    let cache = if cfg.prompt_cache.is_empty() {
        None
    } else {
        Some(PromptCache::open(&cfg.prompt_cache)?)
    };
    let examples = ingest_manifest(Path::new(&cfg.manifest), cfg, Frontend::bundled(), backend.as_ref(), cache.as_ref())?;
    log::info!("ingested {} utterances", examples.len());
    let out = PathBuf::from(&cfg.output_dir);
    let mut trainer = Trainer::new(cfg, examples)?;
    let latest = out.join("latest.ckpt");
    if latest.is_file() {
        let ck = Checkpoint::read(&latest)?;
        trainer.resume(&ck)?;
        log::info!("resumed from step {}", trainer.step);
    }
    trainer.run(&out, |_| {})
}
