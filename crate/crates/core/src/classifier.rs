//! Two-stage convolutional beat classifier, its training loop with early
//! stopping, and per-class evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::class::{HeartbeatClass, CLASS_COUNT};
use crate::dataset::{BeatDataset, BeatImage, Split};
use crate::error::{ensure, Error, Result};
use crate::infogan::SnapshotScorer;
use crate::nn::loss::{cross_entropy, softmax, softmax_cross_entropy};
use crate::nn::{Adam, AdamConfig, Init, LayerSpec, Mode, Network, Tensor, TensorArchive};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvStage {
    pub filters: usize,
    pub kernel: usize,
    pub batch_norm: bool,
    pub pool: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub height: usize,
    pub width: usize,
    pub stages: Vec<ConvStage>,
    pub dense: usize,
    pub dense_dropout: f64,
    pub classes: usize,
    pub he_init: bool,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub bn_momentum: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            height: 112,
            width: 112,
            stages: vec![
                ConvStage {
                    filters: 16,
                    kernel: 5,
                    batch_norm: true,
                    pool: 2,
                    dropout: 0.25,
                },
                ConvStage {
                    filters: 32,
                    kernel: 5,
                    batch_norm: true,
                    pool: 2,
                    dropout: 0.25,
                },
            ],
            dense: 128,
            dense_dropout: 0.5,
            classes: CLASS_COUNT,
            he_init: true,
            adam: AdamConfig::default(),
            max_epochs: 20,
            patience: 1,
            batch_size: 32,
            bn_momentum: 0.9,
        }
    }
}

impl CnnConfig {
    /// 28x28 input with narrower layers.
    pub fn desk() -> Self {
        let mut config = CnnConfig {
            height: 28,
            width: 28,
            dense: 64,
            ..CnnConfig::default()
        };
        config.stages[0].filters = 8;
        config.stages[1].filters = 16;
        config
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.stages.len() == 2, "the classifier has exactly two conv stages");
        ensure!(self.classes == CLASS_COUNT, "output dimension must be {CLASS_COUNT}");
        ensure!(self.batch_size > 0, "batch_size must be positive");
        ensure!(self.max_epochs > 0, "max_epochs must be positive");
        let (mut h, mut w) = (self.height, self.width);
        for s in &self.stages {
            ensure!(s.kernel % 2 == 1, "kernel sizes must be odd");
            ensure!(s.pool >= 1, "pool size must be positive");
            ensure!((0.0..1.0).contains(&s.dropout), "dropout must be in [0, 1)");
            h /= s.pool;
            w /= s.pool;
        }
        ensure!(h > 0 && w > 0, "input {}x{} too small for the pooling stack", self.height, self.width);
        Ok(())
    }

    fn feature_shape(&self) -> (usize, usize, usize) {
        let (mut h, mut w) = (self.height, self.width);
        for s in &self.stages {
            h /= s.pool;
            w /= s.pool;
        }
        (self.stages[1].filters, h, w)
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut channels = 1;
        for s in &self.stages {
            specs.push(LayerSpec::Conv2d {
                in_channels: channels,
                out_channels: s.filters,
                kernel: s.kernel,
                stride: 1,
                padding: s.kernel / 2,
            });
            if s.batch_norm {
                specs.push(LayerSpec::BatchNorm {
                    channels: s.filters,
                    momentum: self.bn_momentum,
                    eps: 1e-3,
                });
            }
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::AvgPool { size: s.pool });
            specs.push(LayerSpec::Dropout { rate: s.dropout });
            channels = s.filters;
        }
        let (c, h, w) = self.feature_shape();
        specs.extend([
            LayerSpec::Reshape {
                channels: c * h * w,
                height: 1,
                width: 1,
            },
            LayerSpec::Dense {
                inputs: c * h * w,
                outputs: self.dense,
            },
            LayerSpec::Relu,
            LayerSpec::Dropout {
                rate: self.dense_dropout,
            },
            LayerSpec::Dense {
                inputs: self.dense,
                outputs: self.classes,
            },
        ]);
        specs
    }
}

/// Mean categorical cross-entropy of probability rows against labels.
pub fn loss(probabilities: &[Vec<f64>], labels: &[HeartbeatClass]) -> f64 {
    let total: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(p, l)| cross_entropy(p, l.index()))
        .sum();
    total / probabilities.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once validation loss has failed to improve on the best value for
/// `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience: patience.max(1),
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if val_loss >= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, val_loss));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    /// `(epoch, loss)` of the best epoch so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct Cnn {
    config: CnnConfig,
    net: Network,
    adam: Adam,
}

fn stack(images: &[&BeatImage], h: usize, w: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        ensure!(
            img.size() == (h, w),
            "classifier expects {h}x{w} images, got {}x{}",
            img.height(),
            img.width()
        );
        data.extend(img.to_vector());
    }
    Ok(Tensor::from_vec([images.len(), 1, h, w], data))
}

const INFERENCE_BATCH: usize = 128;

impl Cnn {
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let init = if config.he_init {
            Init::He
        } else {
            Init::Normal { std: 0.05 }
        };
        let net = Network::new(config.layer_specs(), init, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Cnn {
            adam: Adam::new(config.adam),
            config,
            net,
        })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Class probability rows, inference mode.
    pub fn forward(&self, images: &[&BeatImage]) -> Result<Vec<Vec<f64>>> {
        let mut net = self.net.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFERENCE_BATCH) {
            let x = stack(chunk, self.config.height, self.config.width)?;
            let logits = net.forward(&x, Mode::Eval, &mut rng);
            out.extend((0..chunk.len()).map(|i| softmax(logits.sample(i))));
        }
        Ok(out)
    }

    pub fn predict(&self, images: &[&BeatImage]) -> Result<Vec<HeartbeatClass>> {
        Ok(self.forward(images)?.iter().map(|p| argmax_class(p)).collect())
    }

    /// Trains on the train split, early-stopping on the val split, and
    /// leaves the best-validation weights in place.
    pub fn train(&mut self, dataset: &BeatDataset, seed: u64) -> Result<TrainHistory> {
        let train = dataset.indices(Split::Train);
        let val = dataset.indices(Split::Val);
        ensure!(!train.is_empty(), "train split is empty");
        ensure!(!val.is_empty(), "val split is empty");
        for &i in &val {
            ensure!(!dataset.items()[i].is_synthetic(), "synthetic item {i} in the val split");
        }
        let items = dataset.items();
        let val_images: Vec<&BeatImage> = val.iter().map(|&i| &items[i]).collect();
        let val_labels: Vec<HeartbeatClass> = val_images.iter().map(|i| i.label).collect();

        let mut stopper = EarlyStopping::new(self.config.patience);
        let mut best_net = self.net.clone();
        let mut history = Vec::new();
        let mut stopped_early = false;
        let mut order = train.clone();
        for epoch in 1..=self.config.max_epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            for batch in order.chunks(self.config.batch_size) {
                let imgs: Vec<&BeatImage> = batch.iter().map(|&i| &items[i]).collect();
                let labels: Vec<usize> = imgs.iter().map(|i| i.label.index()).collect();
                let x = stack(&imgs, self.config.height, self.config.width)?;
                self.net.zero_grad();
                let logits = self.net.forward(&x, Mode::Train, &mut rng);
                let (l, grad) = softmax_cross_entropy(&logits, &labels);
                if !l.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("classifier training loss at epoch {epoch}"),
                    });
                }
                correct += (0..batch.len())
                    .filter(|&i| argmax(logits.sample(i)) == labels[i])
                    .count();
                loss_sum += l * batch.len() as f64;
                self.net.backward(&grad);
                self.adam.step(&mut self.net);
            }
            let val_loss = loss(&self.forward(&val_images)?, &val_labels);
            if !val_loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("classifier validation loss at epoch {epoch}"),
                });
            }
            history.push(EpochRecord {
                epoch,
                train_loss: loss_sum / order.len() as f64,
                train_accuracy: correct as f64 / order.len() as f64,
                val_loss,
            });
            log::debug!("epoch {epoch}: val_loss {val_loss:.5}");
            match stopper.observe(epoch, val_loss) {
                StopDecision::Improved => best_net = self.net.clone(),
                StopDecision::Continue => {}
                StopDecision::Stop => {
                    stopped_early = true;
                    break;
                }
            }
        }
        self.net = best_net;
        let (best_epoch, best_val_loss) = stopper.best().expect("at least one epoch ran");
        Ok(TrainHistory {
            epochs: history,
            best_epoch,
            best_val_loss,
            stopped_early,
        })
    }

    /// Per-class metrics on `split` (normally the test split).
    pub fn evaluate(
        &self,
        dataset: &BeatDataset,
        split: Split,
        metadata: ReportMetadata,
    ) -> Result<EvalReport> {
        let images: Vec<&BeatImage> = dataset
            .indices(split)
            .into_iter()
            .map(|i| &dataset.items()[i])
            .collect();
        ensure!(!images.is_empty(), "{split:?} split is empty");
        ensure!(
            images.iter().all(|i| !i.is_synthetic()),
            "evaluation split contains synthetic items"
        );
        let truth: Vec<HeartbeatClass> = images.iter().map(|i| i.label).collect();
        let predicted = self.predict(&images)?;
        EvalReport::from_predictions(&truth, &predicted, metadata)
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "cnn",
            "config": self.config,
            "layers": self.config.layer_specs(),
            "optimizer": self.adam,
        });
        let mut archive = TensorArchive::new(meta);
        self.net.export("cnn", false, &mut archive);
        archive.save(dir, stem)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let archive = TensorArchive::load(dir, stem)?;
        let json = dir.join(format!("{stem}.json"));
        let config: CnnConfig = serde_json::from_value(
            archive
                .meta
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Config(format!("{}: no classifier config", json.display())))?,
        )
        .map_err(|e| Error::json(&json, e))?;
        let mut cnn = Cnn::new(config, 0)?;
        cnn.net.import("cnn", &archive)?;
        Ok(cnn)
    }
}

impl SnapshotScorer for Cnn {
    fn classify(&mut self, images: &[BeatImage]) -> Result<Vec<HeartbeatClass>> {
        self.predict(&images.iter().collect::<Vec<_>>())
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn argmax_class(probs: &[f64]) -> HeartbeatClass {
    HeartbeatClass::from_index(argmax(probs)).expect("seven outputs")
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: HeartbeatClass,
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False when the class has no test items; excluded from macro-F1.
    pub defined: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub method: String,
    /// Synthetic train items added per class.
    pub synthetic_counts: BTreeMap<HeartbeatClass, usize>,
    pub train_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub classes: Vec<ClassMetrics>,
    pub macro_f1: f64,
    /// Support-weighted mean F1.
    pub weighted_f1: f64,
    /// `confusion[true][predicted]`, in class index order.
    pub confusion: Vec<Vec<usize>>,
    pub test_size: usize,
    pub metadata: ReportMetadata,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_predictions(
        truth: &[HeartbeatClass],
        predicted: &[HeartbeatClass],
        metadata: ReportMetadata,
    ) -> Result<Self> {
        ensure!(truth.len() == predicted.len(), "prediction count mismatch");
        ensure!(!truth.is_empty(), "nothing to evaluate");
        let mut confusion = vec![vec![0usize; CLASS_COUNT]; CLASS_COUNT];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.index()][p.index()] += 1;
        }
        let classes: Vec<ClassMetrics> = HeartbeatClass::ALL
            .iter()
            .map(|&class| {
                let k = class.index();
                let support: usize = confusion[k].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[k]).sum();
                let tp = confusion[k][k];
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics {
                    class,
                    support,
                    predicted,
                    true_positives: tp,
                    precision,
                    recall,
                    f1,
                    defined: support > 0,
                }
            })
            .collect();
        let defined: Vec<&ClassMetrics> = classes.iter().filter(|c| c.defined).collect();
        let macro_f1 = defined.iter().map(|c| c.f1).sum::<f64>() / defined.len() as f64;
        let weighted_f1 = classes
            .iter()
            .map(|c| c.f1 * c.support as f64)
            .sum::<f64>()
            / truth.len() as f64;
        Ok(EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            classes,
            macro_f1,
            weighted_f1,
            confusion,
            test_size: truth.len(),
            metadata,
        })
    }

    pub fn class(&self, class: HeartbeatClass) -> &ClassMetrics {
        &self.classes[class.index()]
    }

    pub fn f1(&self, class: HeartbeatClass) -> f64 {
        self.class(class).f1
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("reports serialize");
        text.push('\n');
        text
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: EvalReport = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported report schema {}",
                path.display(),
                report.schema_version
            )));
        }
        Ok(report)
    }
}
