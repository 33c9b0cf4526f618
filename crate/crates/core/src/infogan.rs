//! InfoGAN for class-targeted synthetic beats.
//!
//! The generator maps `noise (64) ++ one-hot code (C)` through a dense seed
//! map and a stack of upsample/conv stages to a Tanh image in `[-1, 1]`. The
//! discriminator is a strided conv trunk with two heads sharing it: a single
//! real/fake logit (Sigmoid) and the auxiliary Q head, fully connected layers
//! ending in a softmax over the C codes.
//!
//! One training epoch is one discriminator step followed by one generator
//! step on one minibatch:
//!
//! * D-step: binary cross-entropy on a real batch (target 1) and a fake batch
//!   (target 0), plus `lambda` times the code cross-entropy of Q on the fake
//!   batch. Updates trunk, D head and Q head; the generator is untouched.
//! * G-step: with the trunk and D head frozen, minimizes the non-saturating
//!   adversarial loss `-ln D(G(z, c))` plus `lambda` times the code
//!   cross-entropy `-ln Q(c | G(z, c))`, the variational lower bound on the
//!   mutual information between code and sample. Updates G and the Q head.
//!
//! Every epoch draws its randomness from a ChaCha stream keyed by
//! `(seed, epoch)`, so a run resumed from a snapshot continues exactly as the
//! uninterrupted run would have.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::class::HeartbeatClass;
use crate::dataset::{BeatImage, Provenance, SyntheticMethod};
use crate::error::{ensure, Error, Result};
use crate::nn::layers::sigmoid;
use crate::nn::loss::{bce_with_logits, softmax, softmax_cross_entropy};
use crate::nn::{Adam, AdamConfig, Init, LayerSpec, Mode, Network, TensorArchive, Tensor};
use crate::oversample::{Oversampler, SyntheticBatch};
use crate::dataset::{BeatDataset, Split};
use crate::pgm;

pub const NOISE_DIM: usize = 64;
pub const DESK_NOISE_DIM: usize = 4;

const GAN_ADAM: AdamConfig = AdamConfig {
    learning_rate: 2e-4,
    beta1: 0.5,
    beta2: 0.999,
    epsilon: 1e-7,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub image_size: usize,
    pub noise_dim: usize,
    pub code_dim: usize,
    /// Side of the generator's first feature map; doubled by every stage.
    pub seed_size: usize,
    /// Input channels of each x2 upsampling stage, starting with the seed
    /// map. The last stage outputs the single image channel.
    pub generator_channels: Vec<usize>,
    /// Output channels of each stride-2 discriminator conv.
    pub discriminator_channels: Vec<usize>,
    /// Fully connected layer closing the trunk, shared by both heads.
    pub shared_hidden: usize,
    pub q_hidden: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub lambda_info: f64,
    /// Optimizer for the trunk, real/fake head and Q head.
    pub discriminator_adam: AdamConfig,
    pub generator_adam: AdamConfig,
    pub batch_size: usize,
    pub init: Init,
}

impl Default for GanConfig {
    /// Full-resolution 112x112 model: 7x7 seed, four x2 upsampling stages.
    fn default() -> Self {
        GanConfig {
            image_size: 112,
            noise_dim: NOISE_DIM,
            code_dim: 2,
            seed_size: 7,
            generator_channels: vec![128, 64, 32, 16],
            discriminator_channels: vec![16, 32, 64, 64],
            shared_hidden: 256,
            q_hidden: 128,
            dropout: 0.25,
            leaky_slope: 0.2,
            bn_momentum: 0.9,
            lambda_info: 1.0,
            discriminator_adam: GAN_ADAM,
            generator_adam: GAN_ADAM,
            batch_size: 32,
            init: Init::Normal { std: 0.02 },
        }
    }
}

impl GanConfig {
    /// 28x28 model small enough to train on a laptop CPU in minutes.
    pub fn desk() -> Self {
        GanConfig {
            image_size: 28,
            generator_channels: vec![32, 16],
            discriminator_channels: vec![16, 32],
            shared_hidden: 128,
            q_hidden: 64,
            // With 64 noise dims the code stops tracking the dominant mode
            // at this size.
            noise_dim: DESK_NOISE_DIM,
            ..GanConfig::default()
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.noise_dim + self.code_dim
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.noise_dim > 0, "noise_dim must be positive");
        ensure!(self.code_dim >= 1, "code_dim must be at least 1");
        ensure!(!self.generator_channels.is_empty(), "generator needs an upsampling stage");
        let stages = self.generator_channels.len();
        ensure!(
            self.seed_size << stages == self.image_size,
            "seed {} doubled {stages} times does not reach image size {}",
            self.seed_size,
            self.image_size
        );
        ensure!(!self.discriminator_channels.is_empty(), "discriminator needs a conv stage");
        ensure!(self.shared_hidden > 0 && self.q_hidden > 0, "hidden layers must be non-empty");
        ensure!(self.batch_size >= 1, "batch_size must be positive");
        ensure!(self.lambda_info >= 0.0, "lambda_info must be non-negative");
        ensure!((0.0..1.0).contains(&self.dropout), "dropout must be in [0, 1)");
        Ok(())
    }

    fn bn(&self, channels: usize) -> LayerSpec {
        LayerSpec::BatchNorm {
            channels,
            momentum: self.bn_momentum,
            eps: 1e-5,
        }
    }

    pub fn generator_specs(&self) -> Vec<LayerSpec> {
        let c0 = self.generator_channels[0];
        let s = self.seed_size;
        let mut specs = vec![
            LayerSpec::Dense {
                inputs: self.latent_dim(),
                outputs: c0 * s * s,
            },
            LayerSpec::Reshape {
                channels: c0,
                height: s,
                width: s,
            },
            self.bn(c0),
            LayerSpec::Relu,
        ];
        let stages = self.generator_channels.len();
        for i in 0..stages {
            let last = i + 1 == stages;
            let out = if last { 1 } else { self.generator_channels[i + 1] };
            specs.push(LayerSpec::Upsample { factor: 2 });
            specs.push(LayerSpec::Conv2d {
                in_channels: self.generator_channels[i],
                out_channels: out,
                kernel: 3,
                stride: 1,
                padding: 1,
            });
            if !last {
                specs.push(self.bn(out));
                specs.push(LayerSpec::Relu);
            }
        }
        specs.push(LayerSpec::Tanh);
        specs
    }

    fn trunk_output(&self) -> (usize, usize) {
        let mut side = self.image_size;
        for _ in &self.discriminator_channels {
            side = (side + 2 - 3) / 2 + 1;
        }
        (*self.discriminator_channels.last().expect("validated"), side)
    }

    fn conv_features(&self) -> usize {
        let (c, side) = self.trunk_output();
        c * side * side
    }

    /// Width of the shared layer both heads read.
    pub fn feature_dim(&self) -> usize {
        self.shared_hidden
    }

    pub fn trunk_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut in_channels = 1;
        for (i, &out) in self.discriminator_channels.iter().enumerate() {
            specs.push(LayerSpec::Conv2d {
                in_channels,
                out_channels: out,
                kernel: 3,
                stride: 2,
                padding: 1,
            });
            if i > 0 {
                specs.push(self.bn(out));
            }
            specs.push(LayerSpec::LeakyRelu {
                slope: self.leaky_slope,
            });
            specs.push(LayerSpec::Dropout { rate: self.dropout });
            in_channels = out;
        }
        specs.extend([
            LayerSpec::Reshape {
                channels: self.conv_features(),
                height: 1,
                width: 1,
            },
            LayerSpec::Dense {
                inputs: self.conv_features(),
                outputs: self.shared_hidden,
            },
            self.bn(self.shared_hidden),
            LayerSpec::LeakyRelu {
                slope: self.leaky_slope,
            },
        ]);
        specs
    }

    pub fn d_head_specs(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::Dense {
            inputs: self.feature_dim(),
            outputs: 1,
        }]
    }

    pub fn q_head_specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Dense {
                inputs: self.feature_dim(),
                outputs: self.q_hidden,
            },
            LayerSpec::LeakyRelu {
                slope: self.leaky_slope,
            },
            LayerSpec::Dense {
                inputs: self.q_hidden,
                outputs: self.code_dim,
            },
        ]
    }
}

/// Generator input: standard-normal noise plus a categorical code.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentInput {
    pub noise: Vec<f64>,
    pub code: usize,
}

impl LatentInput {
    pub fn sample(config: &GanConfig, code: usize, rng: &mut impl Rng) -> Self {
        LatentInput {
            noise: (0..config.noise_dim).map(|_| rng.sample(StandardNormal)).collect(),
            code,
        }
    }

    fn write_into(&self, code_dim: usize, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.noise);
        out.extend((0..code_dim).map(|c| if c == self.code { 1.0 } else { 0.0 }));
    }
}

fn latent_tensor(config: &GanConfig, latents: &[LatentInput]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(latents.len() * config.latent_dim());
    for latent in latents {
        ensure!(
            latent.noise.len() == config.noise_dim,
            "noise has {} entries, expected {}",
            latent.noise.len(),
            config.noise_dim
        );
        ensure!(
            latent.code < config.code_dim,
            "code {} out of range for {} categories",
            latent.code,
            config.code_dim
        );
        latent.write_into(config.code_dim, &mut data);
    }
    Ok(Tensor::from_rows(latents.len(), config.latent_dim(), data))
}

/// Rejects images that are not in `[-1, 1]`, or that look like raw `{0, 1}`
/// rasters that skipped the `{-1, +1}` mapping.
fn check_scaled(images: &Tensor) -> Result<()> {
    let data = images.data();
    ensure!(
        data.iter().all(|v| (-1.0..=1.0).contains(v)),
        "discriminator input must lie in [-1, 1]"
    );
    let unscaled = data.iter().all(|&v| v == 0.0 || v == 1.0) && data.contains(&0.0);
    ensure!(
        !unscaled,
        "discriminator input looks like an unscaled {{0, 1}} image; map it to {{-1, +1}} first"
    );
    Ok(())
}

/// Maps binary beat images to a `[n, 1, h, w]` tensor in `{-1, +1}`.
pub fn images_to_tensor(images: &[&BeatImage]) -> Result<Tensor> {
    ensure!(!images.is_empty(), "no images");
    let (h, w) = images[0].size();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        ensure!(img.size() == (h, w), "mixed image sizes");
        data.extend(img.to_signed());
    }
    Ok(Tensor::from_vec([images.len(), 1, h, w], data))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorLosses {
    /// Mean of the real and fake binary cross-entropies.
    pub d_loss: f64,
    pub info_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLosses {
    /// Non-saturating adversarial loss.
    pub g_loss: f64,
    pub info_loss: f64,
}

impl GeneratorLosses {
    /// The minimized objective, `g_loss + lambda * info_loss`.
    pub fn objective(&self, lambda: f64) -> f64 {
        self.g_loss + lambda * self.info_loss
    }
}

#[derive(Debug, Clone)]
pub struct InfoGan {
    config: GanConfig,
    pub generator: Network,
    pub trunk: Network,
    pub d_head: Network,
    pub q_head: Network,
    g_opt: Adam,
    trunk_opt: Adam,
    d_head_opt: Adam,
    q_opt: Adam,
    epoch: u64,
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

impl InfoGan {
    pub fn new(config: GanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = Network::new(config.generator_specs(), config.init, &mut rng);
        let trunk = Network::new(config.trunk_specs(), config.init, &mut rng);
        let d_head = Network::new(config.d_head_specs(), config.init, &mut rng);
        let q_head = Network::new(config.q_head_specs(), config.init, &mut rng);
        let d_adam = Adam::new(config.discriminator_adam);
        Ok(InfoGan {
            generator,
            trunk,
            d_head,
            q_head,
            g_opt: Adam::new(config.generator_adam),
            trunk_opt: d_adam.clone(),
            d_head_opt: d_adam.clone(),
            q_opt: d_adam,
            epoch: 0,
            config,
        })
    }

    pub fn config(&self) -> &GanConfig {
        &self.config
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.config.lambda_info = lambda;
    }

    /// Parameter values of G; used to check freeze contracts.
    pub fn generator_values(&self) -> Vec<f64> {
        self.generator.snapshot_values()
    }

    /// Trunk and real/fake head values (the Q head is excluded).
    pub fn discriminator_values(&self) -> Vec<f64> {
        let mut v = self.trunk.snapshot_values();
        v.extend(self.d_head.snapshot_values());
        v
    }

    pub fn q_values(&self) -> Vec<f64> {
        self.q_head.snapshot_values()
    }

    /// Deterministic inference: `[n, 1, h, w]` images in `[-1, 1]`.
    pub fn generate(&self, latents: &[LatentInput]) -> Result<Tensor> {
        generate_with(&self.generator, &self.config, latents)
    }

    /// Real/fake probability and Q logits for each image, in inference mode.
    pub fn discriminate(&self, images: &Tensor) -> Result<Vec<(f64, Vec<f64>)>> {
        let side = self.config.image_size;
        ensure!(
            images.channels() == 1 && images.height() == side && images.width() == side,
            "discriminator expects [n, 1, {side}, {side}] input, got {:?}",
            images.shape()
        );
        check_scaled(images)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut trunk = self.trunk.clone();
        let mut d_head = self.d_head.clone();
        let mut q_head = self.q_head.clone();
        let feats = trunk.forward(images, Mode::Eval, &mut rng);
        let logits = d_head.forward(&feats, Mode::Eval, &mut rng);
        let q = q_head.forward(&feats, Mode::Eval, &mut rng);
        Ok((0..images.batch())
            .map(|i| {
                let p = sigmoid(logits.sample(i)[0]).clamp(f64::EPSILON, 1.0 - f64::EPSILON);
                (p, q.sample(i).to_vec())
            })
            .collect())
    }

    /// Q's code distribution for each image.
    pub fn q_probabilities(&self, images: &Tensor) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .discriminate(images)?
            .into_iter()
            .map(|(_, logits)| softmax(&logits))
            .collect())
    }

    fn sample_latents(&self, n: usize, rng: &mut impl Rng) -> Vec<LatentInput> {
        let codes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..self.config.code_dim)).collect();
        codes
            .into_iter()
            .map(|c| LatentInput::sample(&self.config, c, rng))
            .collect()
    }

    fn zero_all(&mut self) {
        self.generator.zero_grad();
        self.trunk.zero_grad();
        self.d_head.zero_grad();
        self.q_head.zero_grad();
    }

    /// Accumulates discriminator-step gradients for a real batch and given
    /// fake latents without stepping any optimizer.
    pub(crate) fn discriminator_gradients(
        &mut self,
        real: &Tensor,
        latents: &[LatentInput],
        rng: &mut dyn RngCore,
    ) -> Result<DiscriminatorLosses> {
        let n = real.batch();
        let lambda = self.config.lambda_info;
        self.zero_all();
        let codes: Vec<usize> = latents.iter().map(|l| l.code).collect();
        let z = latent_tensor(&self.config, latents)?;
        let fake = self.generator.forward(&z, Mode::Frozen, rng);

        let feats = self.trunk.forward(real, Mode::Train, rng);
        let logits = self.d_head.forward(&feats, Mode::Train, rng);
        let (real_loss, grad) = bce_with_logits(&logits, &vec![1.0; n]);
        let dfeat = self.d_head.backward(&grad.map(|g| 0.5 * g));
        self.trunk.backward(&dfeat);

        let feats = self.trunk.forward(&fake, Mode::Train, rng);
        let logits = self.d_head.forward(&feats, Mode::Train, rng);
        let (fake_loss, grad) = bce_with_logits(&logits, &vec![0.0; latents.len()]);
        let mut dfeat = self.d_head.backward(&grad.map(|g| 0.5 * g));
        let q_logits = self.q_head.forward(&feats, Mode::Train, rng);
        let (info_loss, q_grad) = softmax_cross_entropy(&q_logits, &codes);
        let dq = self.q_head.backward(&q_grad.map(|g| lambda * g));
        dfeat.data_mut().iter_mut().zip(dq.data()).for_each(|(a, b)| *a += b);
        self.trunk.backward(&dfeat);

        let d_loss = 0.5 * (real_loss + fake_loss);
        if !d_loss.is_finite() || !info_loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("discriminator step of epoch {}", self.epoch + 1),
            });
        }
        Ok(DiscriminatorLosses { d_loss, info_loss })
    }

    /// One discriminator/Q update. `real` must already be scaled to `[-1, 1]`.
    pub fn train_step_discriminator(
        &mut self,
        real: &Tensor,
        rng: &mut impl RngCore,
    ) -> Result<DiscriminatorLosses> {
        ensure!(real.batch() > 0, "empty real batch");
        check_scaled(real)?;
        let latents = self.sample_latents(real.batch(), rng);
        let losses = self.discriminator_gradients(real, &latents, rng)?;
        self.trunk_opt.step(&mut self.trunk);
        self.d_head_opt.step(&mut self.d_head);
        self.q_opt.step(&mut self.q_head);
        Ok(losses)
    }

    /// Accumulates generator-step gradients (G and Q head) for the given
    /// latents without stepping any optimizer.
    pub(crate) fn generator_gradients(
        &mut self,
        latents: &[LatentInput],
        rng: &mut dyn RngCore,
    ) -> Result<GeneratorLosses> {
        let lambda = self.config.lambda_info;
        self.zero_all();
        let codes: Vec<usize> = latents.iter().map(|l| l.code).collect();
        let z = latent_tensor(&self.config, latents)?;
        let fake = self.generator.forward(&z, Mode::Train, rng);
        let feats = self.trunk.forward(&fake, Mode::Frozen, rng);
        let logits = self.d_head.forward(&feats, Mode::Frozen, rng);
        let (g_loss, grad) = bce_with_logits(&logits, &vec![1.0; latents.len()]);
        let mut dfeat = self.d_head.backward(&grad);
        let q_logits = self.q_head.forward(&feats, Mode::Train, rng);
        let (info_loss, q_grad) = softmax_cross_entropy(&q_logits, &codes);
        let dq = self.q_head.backward(&q_grad.map(|g| lambda * g));
        dfeat.data_mut().iter_mut().zip(dq.data()).for_each(|(a, b)| *a += b);
        let dimg = self.trunk.backward(&dfeat);
        self.generator.backward(&dimg);

        if !g_loss.is_finite() || !info_loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("generator step of epoch {}", self.epoch + 1),
            });
        }
        Ok(GeneratorLosses { g_loss, info_loss })
    }

    /// One generator/Q update through the frozen discriminator.
    pub fn train_step_generator(&mut self, rng: &mut impl RngCore) -> Result<GeneratorLosses> {
        let latents = self.sample_latents(self.config.batch_size, rng);
        let losses = self.generator_gradients(&latents, rng)?;
        self.g_opt.step(&mut self.generator);
        self.q_opt.step(&mut self.q_head);
        Ok(losses)
    }

    /// Runs one epoch (D-step then G-step) with the epoch's own rng stream.
    pub fn train_epoch(
        &mut self,
        real: &Tensor,
        seed: u64,
    ) -> Result<(DiscriminatorLosses, GeneratorLosses)> {
        let next = self.epoch + 1;
        let mut rng = epoch_rng(seed, next);
        let n = real.batch();
        let picks: Vec<usize> = (0..self.config.batch_size.min(n.max(1)))
            .map(|_| rng.gen_range(0..n))
            .collect();
        let mut data = Vec::with_capacity(picks.len() * real.sample_len());
        for &i in &picks {
            data.extend_from_slice(real.sample(i));
        }
        let batch = Tensor::from_vec([picks.len(), 1, real.height(), real.width()], data);
        let d = self.train_step_discriminator(&batch, &mut rng)?;
        let g = self.train_step_generator(&mut rng)?;
        self.epoch = next;
        Ok((d, g))
    }

    /// Trains until `schedule.max_epochs`, snapshotting every
    /// `schedule.snapshot_period` epochs (and persisting when `store` is set).
    pub fn train(
        &mut self,
        images: &[&BeatImage],
        schedule: &TrainSchedule,
        store: Option<&SnapshotStore>,
    ) -> Result<Vec<Snapshot>> {
        ensure!(schedule.snapshot_period > 0, "snapshot_period must be positive");
        let real = images_to_tensor(images)?;
        ensure!(
            real.height() == self.config.image_size && real.width() == self.config.image_size,
            "training images are {}x{}, model expects {}",
            real.height(),
            real.width(),
            self.config.image_size
        );
        let mut snapshots = Vec::new();
        let mut last = None;
        while self.epoch < schedule.max_epochs {
            let losses = match self.train_epoch(&real, schedule.seed) {
                Ok(l) => l,
                Err(err @ Error::NonFinite { .. }) => {
                    if let Some(store) = store {
                        let diag = self.snapshot(schedule, last, true);
                        store.save_diagnostic(&diag, self)?;
                    }
                    return Err(err);
                }
                Err(e) => return Err(e),
            };
            last = Some(losses);
            if self.epoch % schedule.snapshot_period == 0 {
                let snap = self.snapshot(schedule, last, false);
                if let Some(store) = store {
                    store.save(&snap, self, schedule)?;
                }
                log::info!(
                    "epoch {}: d_loss {:.4} g_loss {:.4} info {:.4}",
                    self.epoch,
                    losses.0.d_loss,
                    losses.1.g_loss,
                    losses.1.info_loss
                );
                snapshots.push(snap);
            }
        }
        Ok(snapshots)
    }

    fn snapshot(
        &self,
        schedule: &TrainSchedule,
        losses: Option<(DiscriminatorLosses, GeneratorLosses)>,
        diverged: bool,
    ) -> Snapshot {
        Snapshot {
            epoch: self.epoch,
            config: self.config.clone(),
            generator: self.generator.clone(),
            metrics: SnapshotMetrics {
                epoch: self.epoch,
                seed: schedule.seed,
                d_loss: losses.map(|l| l.0.d_loss),
                g_loss: losses.map(|l| l.1.g_loss),
                info_loss: losses.map(|l| l.1.info_loss),
                d_info_loss: losses.map(|l| l.0.info_loss),
                quality_score: None,
                diverged,
            },
        }
    }

    fn to_archive(&self, seed: u64) -> TensorArchive {
        let meta = serde_json::json!({
            "kind": "infogan_state",
            "config": self.config,
            "epoch": self.epoch,
            "seed": seed,
            "optimizers": {
                "generator": self.g_opt,
                "trunk": self.trunk_opt,
                "d_head": self.d_head_opt,
                "q_head": self.q_opt,
            },
        });
        let mut archive = TensorArchive::new(meta);
        self.generator.export("generator", true, &mut archive);
        self.trunk.export("trunk", true, &mut archive);
        self.d_head.export("d_head", true, &mut archive);
        self.q_head.export("q_head", true, &mut archive);
        archive
    }

    /// Restores the full training state saved alongside a snapshot; returns
    /// the state and the training seed it was saved with.
    pub fn load_state(dir: &Path) -> Result<(Self, u64)> {
        let archive = TensorArchive::load(dir, STATE_STEM)?;
        let meta = &archive.meta;
        let field = |name: &str| {
            meta.get(name)
                .cloned()
                .ok_or_else(|| Error::Config(format!("{}: state is missing {name}", dir.display())))
        };
        fn parse<T: serde::de::DeserializeOwned>(dir: &Path, v: serde_json::Value) -> Result<T> {
            serde_json::from_value(v).map_err(|e| Error::json(dir.join(format!("{STATE_STEM}.json")), e))
        }
        let config: GanConfig = parse(dir, field("config")?)?;
        let epoch: u64 = parse(dir, field("epoch")?)?;
        let seed: u64 = parse(dir, field("seed")?)?;
        let opts = field("optimizers")?;
        let opt = |name: &str| -> Result<Adam> {
            parse(dir, opts.get(name).cloned().unwrap_or(serde_json::Value::Null))
        };
        let mut gan = InfoGan::new(config, 0)?;
        gan.generator.import("generator", &archive)?;
        gan.trunk.import("trunk", &archive)?;
        gan.d_head.import("d_head", &archive)?;
        gan.q_head.import("q_head", &archive)?;
        gan.g_opt = opt("generator")?;
        gan.trunk_opt = opt("trunk")?;
        gan.d_head_opt = opt("d_head")?;
        gan.q_opt = opt("q_head")?;
        gan.epoch = epoch;
        Ok((gan, seed))
    }
}

fn generate_with(generator: &Network, config: &GanConfig, latents: &[LatentInput]) -> Result<Tensor> {
    ensure!(!latents.is_empty(), "no latents");
    let z = latent_tensor(config, latents)?;
    let mut net = generator.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(net.forward(&z, Mode::Eval, &mut rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub max_epochs: u64,
    pub snapshot_period: u64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            max_epochs: 100_000,
            snapshot_period: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SnapshotMetrics {
    pub epoch: u64,
    pub seed: u64,
    pub d_loss: Option<f64>,
    pub g_loss: Option<f64>,
    pub info_loss: Option<f64>,
    pub d_info_loss: Option<f64>,
    /// Filled in by snapshot selection.
    pub quality_score: Option<f64>,
    pub diverged: bool,
}

/// A saved generator at one epoch.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub epoch: u64,
    pub config: GanConfig,
    pub generator: Network,
    pub metrics: SnapshotMetrics,
}

/// Fixed latents used for snapshot sample grids: codes cycle through the
/// categories, noise comes from `seed`.
pub fn grid_latents(config: &GanConfig, n: usize, seed: u64) -> Vec<LatentInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| LatentInput::sample(config, i % config.code_dim, &mut rng))
        .collect()
}

impl Snapshot {
    pub fn generate(&self, latents: &[LatentInput]) -> Result<Tensor> {
        generate_with(&self.generator, &self.config, latents)
    }

    /// Generates `n` binary images of `class`, thresholding the Tanh output at 0.
    pub fn sample_images(
        &self,
        class: HeartbeatClass,
        latents: &[LatentInput],
    ) -> Result<Vec<BeatImage>> {
        if latents.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.generate(latents)?;
        let side = self.config.image_size;
        (0..out.batch())
            .map(|i| {
                BeatImage::from_values(
                    side,
                    side,
                    out.sample(i),
                    0.0,
                    class,
                    Provenance::Synthetic {
                        method: SyntheticMethod::Adversarial,
                        index: i,
                    },
                )
            })
            .collect()
    }

    /// Tiles thresholded samples into one PGM grid.
    pub fn sample_grid(&self, n: usize, seed: u64) -> Result<Vec<u8>> {
        let latents = grid_latents(&self.config, n, seed);
        let out = self.generate(&latents)?;
        let side = self.config.image_size;
        let cols = (n as f64).sqrt().ceil() as usize;
        let rows = n.div_ceil(cols);
        let (gw, gh) = (cols * (side + 1) - 1, rows * (side + 1) - 1);
        let mut raster = vec![128u8; gw * gh];
        for i in 0..n {
            let (gy, gx) = ((i / cols) * (side + 1), (i % cols) * (side + 1));
            for y in 0..side {
                for x in 0..side {
                    let v = out.sample(i)[y * side + x];
                    raster[(gy + y) * gw + gx + x] = if v >= 0.0 { 255 } else { 0 };
                }
            }
        }
        Ok(pgm::encode(gw, gh, &raster))
    }

    /// Writes the generator, a sample grid and the metrics; enough for
    /// `load` but not for resuming training.
    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut generator = TensorArchive::new(serde_json::json!({
            "kind": "infogan_generator",
            "config": self.config,
            "layers": self.config.generator_specs(),
        }));
        self.generator.export("generator", false, &mut generator);
        generator.save(dir, GENERATOR_STEM)?;
        let grid_path = dir.join(GRID_FILE);
        let grid = self.sample_grid(GRID_SAMPLES, seed)?;
        fs::write(&grid_path, grid).map_err(|e| Error::io(&grid_path, e))?;
        write_metrics(dir, &self.metrics)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let archive = TensorArchive::load(dir, GENERATOR_STEM)?;
        let config: GanConfig = serde_json::from_value(
            archive
                .meta
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Config(format!("{}: generator has no config", dir.display())))?,
        )
        .map_err(|e| Error::json(dir.join(format!("{GENERATOR_STEM}.json")), e))?;
        config.validate()?;
        let mut generator = Network::new(config.generator_specs(), config.init, &mut ChaCha8Rng::seed_from_u64(0));
        generator.import("generator", &archive)?;
        let metrics_path = dir.join(METRICS_FILE);
        let text = fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let metrics: SnapshotMetrics =
            serde_json::from_str(&text).map_err(|e| Error::json(&metrics_path, e))?;
        Ok(Snapshot {
            epoch: metrics.epoch,
            config,
            generator,
            metrics,
        })
    }
}

pub const GENERATOR_STEM: &str = "generator";
pub const STATE_STEM: &str = "state";
pub const METRICS_FILE: &str = "metrics.json";
pub const GRID_FILE: &str = "samples.pgm";
pub const GRID_SAMPLES: usize = 16;

/// Snapshot directory tree for one class: `<root>/<epoch>/`.
#[derive(Debug, Clone)]
pub struct SnapshotStore {
    root: PathBuf,
}

impl SnapshotStore {
    /// `gan/<class>` under `out_dir`.
    pub fn for_class(out_dir: &Path, class: HeartbeatClass) -> Self {
        SnapshotStore {
            root: out_dir.join("gan").join(class.name()),
        }
    }

    pub fn at(root: impl Into<PathBuf>) -> Self {
        SnapshotStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir_for(&self, epoch: u64) -> PathBuf {
        self.root.join(epoch.to_string())
    }

    fn write_snapshot(&self, dir: &Path, snap: &Snapshot, gan: &InfoGan, seed: u64) -> Result<()> {
        snap.save(dir, seed)?;
        gan.to_archive(seed).save(dir, STATE_STEM).map(|_| ())
    }

    pub fn save(&self, snap: &Snapshot, gan: &InfoGan, schedule: &TrainSchedule) -> Result<PathBuf> {
        let dir = self.dir_for(snap.epoch);
        self.write_snapshot(&dir, snap, gan, schedule.seed)?;
        Ok(dir)
    }

    fn save_diagnostic(&self, snap: &Snapshot, gan: &InfoGan) -> Result<PathBuf> {
        let dir = self.root.join(format!("{}-diverged", snap.epoch));
        self.write_snapshot(&dir, snap, gan, snap.metrics.seed)?;
        Ok(dir)
    }

    /// Saved snapshot epochs, ascending.
    pub fn epochs(&self) -> Result<Vec<u64>> {
        let mut epochs = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(epochs),
            Err(e) => return Err(Error::io(&self.root, e)),
        };
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            if let Some(epoch) = entry.file_name().to_str().and_then(|s| s.parse::<u64>().ok()) {
                epochs.push(epoch);
            }
        }
        epochs.sort_unstable();
        Ok(epochs)
    }

    pub fn load_all(&self) -> Result<Vec<Snapshot>> {
        self.epochs()?
            .into_iter()
            .map(|e| Snapshot::load(&self.dir_for(e)))
            .collect()
    }

    /// Loads the latest saved training state, if any.
    pub fn resume(&self) -> Result<Option<(InfoGan, u64)>> {
        match self.epochs()?.last() {
            Some(&epoch) => InfoGan::load_state(&self.dir_for(epoch)).map(Some),
            None => Ok(None),
        }
    }
}

pub fn write_metrics(dir: &Path, metrics: &SnapshotMetrics) -> Result<()> {
    let path = dir.join(METRICS_FILE);
    let mut text = serde_json::to_string_pretty(metrics).map_err(|e| Error::json(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Labels generated images during automated snapshot selection.
pub trait SnapshotScorer {
    fn classify(&mut self, images: &[BeatImage]) -> Result<Vec<HeartbeatClass>>;
}

/// Latents scored per snapshot during selection.
pub const SELECTION_SAMPLES: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub epoch: u64,
    /// Score of every candidate, in input order.
    pub scores: Vec<f64>,
}

/// Picks the snapshot whose samples the scorer most often assigns to
/// `target`; ties go to the latest epoch. Scores are written into each
/// snapshot's metrics.
pub fn select_snapshot(
    snapshots: &mut [Snapshot],
    scorer: &mut dyn SnapshotScorer,
    target: HeartbeatClass,
    seed: u64,
) -> Result<Selection> {
    ensure!(!snapshots.is_empty(), "no snapshots to select from");
    let mut scores = Vec::with_capacity(snapshots.len());
    for snap in snapshots.iter_mut() {
        let latents = grid_latents(&snap.config, SELECTION_SAMPLES, seed);
        let images = snap.sample_images(target, &latents)?;
        let labels = scorer.classify(&images)?;
        let hits = labels.iter().filter(|&&l| l == target).count();
        let score = hits as f64 / labels.len().max(1) as f64;
        snap.metrics.quality_score = Some(score);
        scores.push(score);
    }
    let mut best = 0;
    for i in 1..snapshots.len() {
        let better = scores[i] > scores[best]
            || (scores[i] == scores[best] && snapshots[i].epoch >= snapshots[best].epoch);
        if better {
            best = i;
        }
    }
    Ok(Selection {
        index: best,
        epoch: snapshots[best].epoch,
        scores,
    })
}

/// Manual override: the snapshot saved at `epoch`, chosen by inspecting the
/// sample grids.
pub fn select_snapshot_by_epoch(snapshots: &[Snapshot], epoch: u64) -> Result<usize> {
    snapshots
        .iter()
        .position(|s| s.epoch == epoch)
        .ok_or_else(|| Error::contract(format!("no snapshot at epoch {epoch}")))
}

/// `n` synthetic train images of `class` from a selected generator. Codes
/// are drawn uniformly over the categories; outputs are thresholded at 0.
pub fn adversarial_oversample(
    selected: &Snapshot,
    class: HeartbeatClass,
    n: usize,
    seed: u64,
) -> Result<SyntheticBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents: Vec<LatentInput> = (0..n)
        .map(|_| {
            let code = rng.gen_range(0..selected.config.code_dim);
            LatentInput::sample(&selected.config, code, &mut rng)
        })
        .collect();
    let images = selected
        .sample_images(class, &latents)?
        .into_iter()
        .map(|img| img.with_split(Split::Train))
        .collect();
    Ok(SyntheticBatch {
        method: SyntheticMethod::Adversarial,
        images,
    })
}

/// Where the adversarial oversampler gets its generator for a class.
#[derive(Debug, Clone)]
pub enum GeneratorSource {
    /// Pre-selected snapshots, one per class.
    Snapshots(Vec<(HeartbeatClass, Snapshot)>),
    /// Train a fresh InfoGAN on the class's train split and use its final snapshot.
    Train {
        config: GanConfig,
        epochs: u64,
    },
}

#[derive(Debug, Clone)]
pub struct AdversarialOversampler {
    pub source: GeneratorSource,
}

impl Oversampler for AdversarialOversampler {
    fn method(&self) -> SyntheticMethod {
        SyntheticMethod::Adversarial
    }

    fn synthesize(
        &self,
        dataset: &BeatDataset,
        class: HeartbeatClass,
        count: usize,
        seed: u64,
    ) -> Result<SyntheticBatch> {
        match &self.source {
            GeneratorSource::Snapshots(snaps) => {
                let snap = snaps
                    .iter()
                    .find(|(c, _)| *c == class)
                    .map(|(_, s)| s)
                    .ok_or_else(|| Error::Config(format!("no selected GAN snapshot for {class}")))?;
                adversarial_oversample(snap, class, count, seed)
            }
            GeneratorSource::Train { config, epochs } => {
                if count == 0 {
                    return adversarial_oversample_empty();
                }
                let images: Vec<&BeatImage> = dataset
                    .items()
                    .iter()
                    .filter(|i| i.label == class && i.split == Split::Train)
                    .collect();
                ensure!(!images.is_empty(), "no {class} train images to fit the GAN on");
                let mut gan = InfoGan::new(config.clone(), seed)?;
                let schedule = TrainSchedule {
                    max_epochs: *epochs,
                    snapshot_period: *epochs,
                    seed,
                };
                let snaps = gan.train(&images, &schedule, None)?;
                let last = snaps.last().ok_or_else(|| Error::contract("GAN produced no snapshot"))?;
                adversarial_oversample(last, class, count, seed.wrapping_add(1))
            }
        }
    }
}

fn adversarial_oversample_empty() -> Result<SyntheticBatch> {
    Ok(SyntheticBatch {
        method: SyntheticMethod::Adversarial,
        images: Vec::new(),
    })
}

#[cfg(test)]
mod tests;
