//! Optimization loop: AdamW with a cosine schedule over sampler batches,
//! epoch metrics, checkpoints, and resume.

mod checkpoint;
mod optim;

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::{default_class_names, AnchorConfig, AnchorSpace};
use crate::datagen::{Split, World};
use crate::encoder::{compute_prototypes, forward, normalize_rows, resolve_sensor, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::objective::{loss_gradient, total_loss};
use crate::sampler::{draw_batch, draw_uniform, SamplerConfig};

pub use checkpoint::{Checkpoint, DatasetRef, OptimizerHeader, RngState, CHECKPOINT_FORMAT_VERSION, CHECKPOINT_JSON, METRICS_JSONL, WEIGHTS_BIN};
pub use checkpoint::write_metrics;
pub use optim::{clip_global_norm, AdamHyper, AdamW};

/// Architecture knobs of the touch encoder; image size and sensor count come
/// from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub patch_size: usize,
    pub dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    /// Embedding width `C`, shared with the anchor space.
    pub out_dim: usize,
    /// Prefix tokens per sensor (`L`).
    pub tokens_per_sensor: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self {
            patch_size: e.patch_size,
            dim: e.dim,
            n_blocks: e.n_blocks,
            n_heads: e.n_heads,
            out_dim: e.out_dim,
            tokens_per_sensor: e.tokens_per_sensor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub sigma: f64,
    pub batch_size: usize,
    pub use_sensor_tokens: bool,
    pub use_mix_sampling: bool,
    pub seed: u64,
    pub temperature: f64,
    /// Global gradient norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub model: ModelSettings,
    pub anchor_beta: f64,
    pub anchor_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.05,
            epochs: 30,
            warmup_steps: 0,
            sigma: 0.75,
            batch_size: 48,
            use_sensor_tokens: true,
            use_mix_sampling: true,
            seed: 0,
            temperature: 0.07,
            grad_clip: 1.0,
            model: ModelSettings::default(),
            anchor_beta: 0.3,
            anchor_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be nonnegative".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be nonnegative".into()));
        }
        self.sampler().validate()
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            sigma: self.sigma,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    /// Full encoder configuration for a dataset; `L = 0` without sensor tokens.
    pub fn encoder_config(&self, image_size: usize, num_sensors: usize) -> Result<EncoderConfig> {
        let m = &self.model;
        let config = EncoderConfig {
            height: image_size,
            width: image_size,
            patch_size: m.patch_size,
            dim: m.dim,
            n_blocks: m.n_blocks,
            n_heads: m.n_heads,
            out_dim: m.out_dim,
            tokens_per_sensor: if self.use_sensor_tokens { m.tokens_per_sensor } else { 0 },
            num_sensors,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn anchor_config(&self, num_classes: usize) -> AnchorConfig {
        AnchorConfig {
            dim: self.model.out_dim,
            beta: self.anchor_beta,
            seed: self.anchor_seed,
            class_names: default_class_names(num_classes),
        }
    }
}

/// `base * 0.5 * (1 + cos(pi * step / total))`, after an optional linear
/// warmup.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    lr_with_warmup(step, total_steps, 0, base_lr)
}

pub fn lr_with_warmup(step: usize, total_steps: usize, warmup: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidArgument(format!("step {step} beyond total {total_steps}")));
    }
    if step < warmup {
        return Ok(base_lr * (step + 1) as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup.min(total_steps)).max(1) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Optimizer steps completed when the epoch ended.
    pub step: usize,
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub train_loss: f64,
    pub val_loss: f64,
}

/// One training batch: raw pixels, sensor indices, and the anchor targets.
pub struct TrainBatch<'a> {
    pub images: Vec<&'a [f32]>,
    pub sensors: Vec<usize>,
    pub anchors: Array2<f64>,
}

/// One AdamW update on a batch; returns the pre-update loss.
pub fn train_step(
    params: &mut EncoderParams<f32>,
    optimizer: &mut AdamW,
    config: &EncoderConfig,
    batch: &TrainBatch,
    temperature: f64,
    lr: f64,
    grad_clip: f64,
) -> Result<f64> {
    let (loss, mut grads) = loss_gradient(params, config, &batch.images, &batch.sensors, &batch.anchors, temperature)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss} or its gradient is not finite")));
    }
    if grad_clip > 0.0 {
        clip_global_norm(&mut grads, grad_clip);
    }
    optimizer.update(params, &grads, lr);
    Ok(loss)
}

/// Anchor-space targets for every sample of a world, `[N, C]`.
pub fn anchor_targets(anchor: &AnchorSpace, world: &World) -> Result<Array2<f64>> {
    let c = anchor.dim();
    let mut out = Array2::zeros((world.samples.len(), c));
    for (i, s) in world.samples.iter().enumerate() {
        let e = anchor.anchor_vision(&s.latent)?;
        out.row_mut(i).assign(&ndarray::ArrayView1::from(e.as_slice()));
    }
    Ok(out)
}

/// Stateful training run over an in-memory world.
pub struct Trainer<'w> {
    world: &'w World,
    config: TrainConfig,
    encoder: EncoderConfig,
    anchor: AnchorSpace,
    anchor_fingerprint: u64,
    targets: Array2<f64>,
    pools: Vec<Vec<usize>>,
    steps_per_epoch: usize,
    params: EncoderParams<f32>,
    optimizer: AdamW,
    rng: ChaCha8Rng,
    step: usize,
    history: Vec<EpochRecord>,
    step_losses: Vec<f64>,
}

impl<'w> Trainer<'w> {
    pub fn new(world: &'w World, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        world.manifest.validate()?;
        let encoder = config.encoder_config(world.manifest.image_size, world.manifest.num_sensors)?;
        let params = EncoderParams::init(&encoder, config.seed)?;
        let optimizer = AdamW::new(&params, config.weight_decay);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Self::assemble(world, config, encoder, params, optimizer, rng, 0, Vec::new())
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(world: &'w World, ckpt: &Checkpoint) -> Result<Self> {
        ckpt.dataset.check(&world.manifest)?;
        if ckpt.dataset != DatasetRef::of(&world.manifest) {
            return Err(Error::Mismatch("resuming needs the dataset the run started on".into()));
        }
        let optimizer = ckpt
            .optimizer
            .clone()
            .ok_or_else(|| Error::CorruptHeader("checkpoint has no optimizer state".into()))?;
        Self::assemble(
            world,
            ckpt.train.clone(),
            ckpt.encoder,
            ckpt.params.clone(),
            optimizer,
            ckpt.rng.restore(),
            ckpt.step,
            ckpt.history.clone(),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        world: &'w World,
        config: TrainConfig,
        encoder: EncoderConfig,
        params: EncoderParams<f32>,
        optimizer: AdamW,
        rng: ChaCha8Rng,
        step: usize,
        history: Vec<EpochRecord>,
    ) -> Result<Self> {
        let anchor = AnchorSpace::new(config.anchor_config(world.manifest.num_classes))?;
        let targets = anchor_targets(&anchor, world)?;
        let pools = world.pools(Split::Train);
        let train_count: usize = pools.iter().map(Vec::len).sum();
        if train_count == 0 {
            return Err(Error::Empty("training split is empty".into()));
        }
        if config.use_mix_sampling {
            if let Some(n) = pools.iter().position(Vec::is_empty) {
                return Err(Error::Empty(format!("dataset {n} has no training samples")));
            }
        }
        let steps_per_epoch = train_count.div_ceil(config.batch_size);
        Ok(Self {
            world,
            anchor_fingerprint: anchor.fingerprint(),
            config,
            encoder,
            anchor,
            targets,
            pools,
            steps_per_epoch,
            params,
            optimizer,
            rng,
            step,
            history,
            step_losses: Vec::new(),
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch * self.config.epochs
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// Losses of every step run by this trainer instance.
    pub fn step_losses(&self) -> &[f64] {
        &self.step_losses
    }

    pub fn params(&self) -> &EncoderParams<f32> {
        &self.params
    }

    pub fn anchor(&self) -> &AnchorSpace {
        &self.anchor
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    fn next_batch(&mut self) -> Result<TrainBatch<'w>> {
        let indices = if self.config.use_mix_sampling {
            draw_batch(&self.pools, &self.config.sampler(), &mut self.rng)?.indices
        } else {
            draw_uniform(&self.pools, self.config.batch_size, &mut self.rng)?
        };
        let world = self.world;
        let images = indices.iter().map(|&i| world.samples[i].touch.pixels.as_slice()).collect();
        let sensors = indices.iter().map(|&i| world.samples[i].touch.sensor_id).collect();
        let anchors = self.targets.select(ndarray::Axis(0), &indices);
        Ok(TrainBatch { images, sensors, anchors })
    }

    /// Runs up to `epochs` more epochs, stopping at the configured budget.
    pub fn run_epochs(&mut self, epochs: usize) -> Result<()> {
        let total = self.total_steps();
        for _ in 0..epochs {
            if self.is_done() {
                break;
            }
            let epoch = self.step / self.steps_per_epoch + 1;
            let mut sum = 0.0;
            let mut lr = 0.0;
            for _ in 0..self.steps_per_epoch {
                let batch = self.next_batch()?;
                lr = lr_with_warmup(self.step, total, self.config.warmup_steps, self.config.learning_rate)?;
                let loss = train_step(
                    &mut self.params,
                    &mut self.optimizer,
                    &self.encoder,
                    &batch,
                    self.config.temperature,
                    lr,
                    self.config.grad_clip,
                )
                .map_err(|e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("step {}: {msg}", self.step)),
                    other => other,
                })?;
                sum += loss;
                self.step_losses.push(loss);
                self.step += 1;
            }
            let record = EpochRecord {
                step: self.step,
                epoch,
                loss: sum / self.steps_per_epoch as f64,
                lr,
            };
            log::info!("epoch {} step {} loss {:.4} lr {:.3e}", record.epoch, record.step, record.loss, record.lr);
            self.history.push(record);
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        self.run_epochs(usize::MAX)
    }

    /// Mean loss over fixed, seed-independent batches of the validation split,
    /// with sensors resolved from pixel prototypes.
    pub fn validation_loss(&self, prototypes: &[[f64; 3]]) -> Result<f64> {
        let mut indices = self.world.indices_in(Split::Val);
        if indices.is_empty() {
            return Err(Error::Empty("validation split is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        rand::seq::SliceRandom::shuffle(indices.as_mut_slice(), &mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in indices.chunks(self.config.batch_size) {
            let images: Vec<&[f32]> = chunk.iter().map(|&i| self.world.samples[i].touch.pixels.as_slice()).collect();
            let sensors = chunk
                .iter()
                .map(|&i| resolve_sensor(&self.world.samples[i].touch, prototypes))
                .collect::<Result<Vec<_>>>()?;
            let cache = forward(&self.params, &self.encoder, &images, &sensors)?;
            let (unit, _) = normalize_rows(&cache.raw)?;
            let anchors = self.targets.select(ndarray::Axis(0), chunk);
            sum += total_loss(unit.view(), anchors.view(), self.config.temperature)?;
            batches += 1;
        }
        Ok(sum / batches as f64)
    }

    /// Snapshot of the current state, resumable with [`Trainer::resume`].
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            encoder: self.encoder,
            train: self.config.clone(),
            anchor: self.anchor.config().clone(),
            anchor_fingerprint: self.anchor_fingerprint,
            dataset: DatasetRef::of(&self.world.manifest),
            step: self.step,
            total_steps: self.total_steps(),
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
            rng: RngState::capture(&self.rng),
            history: self.history.clone(),
            final_metrics: None,
        }
    }

    /// Computes sensor prototypes and final metrics; the run must be done.
    pub fn finish(mut self) -> Result<Checkpoint> {
        if !self.is_done() {
            return Err(Error::InvalidArgument(format!(
                "run stopped at step {} of {}",
                self.step,
                self.total_steps()
            )));
        }
        if self.anchor.fingerprint() != self.anchor_fingerprint {
            return Err(Error::CorruptHeader("anchor space changed during training".into()));
        }
        let train = self.world.indices_in(Split::Train);
        let prototypes = compute_prototypes(
            train.iter().map(|&i| &self.world.samples[i].touch),
            self.world.manifest.num_sensors,
        )?;
        self.params.sensors.prototypes = prototypes.clone();
        let val_loss = self.validation_loss(&prototypes)?;
        let train_loss = self.history.last().map(|r| r.loss).unwrap_or(f64::NAN);
        let mut ckpt = self.checkpoint();
        ckpt.final_metrics = Some(FinalMetrics { train_loss, val_loss });
        Ok(ckpt)
    }
}

/// Trains from scratch to the configured epoch budget.
pub fn fit(world: &World, config: &TrainConfig) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(world, config.clone())?;
    trainer.run_to_end()?;
    trainer.finish()
}

/// [`fit`], then writes the checkpoint and its metrics log to `dir`.
pub fn fit_to_dir(world: &World, config: &TrainConfig, dir: &Path) -> Result<Checkpoint> {
    let ckpt = fit(world, config)?;
    ckpt.save(dir)?;
    Ok(ckpt)
}
