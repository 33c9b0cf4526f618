//! A small CPU neural-network engine: NCHW f64 tensors, layers with explicit
//! backward passes, Adam, and a flat binary checkpoint format.

pub mod archive;
mod gemm;
pub mod layers;
pub mod loss;
pub mod tensor;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use archive::TensorArchive;
pub use layers::{Init, Layer, LayerSpec, Mode};
pub use tensor::{Param, Tensor};

use crate::error::{Error, Result};

/// A feed-forward stack of layers.
#[derive(Debug, Clone)]
pub struct Network {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(specs: Vec<LayerSpec>, init: Init, rng: &mut dyn RngCore) -> Self {
        let layers = specs.iter().map(|s| Layer::build(s, init, rng)).collect();
        Network { specs, layers }
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Tensor {
        let mut out = x.clone();
        for layer in &mut self.layers {
            out = layer.forward(&out, mode, rng);
        }
        out
    }

    /// Backpropagates `grad` (d loss / d output) and returns d loss / d input.
    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Parameters named `<layer index>.<block>`, in layer order.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params()
                    .into_iter()
                    .map(move |(name, p)| (format!("{i}.{name}"), p))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.named_params()
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.len())
            .sum()
    }

    /// Flattened copy of every parameter value, trainable or not.
    pub fn snapshot_values(&self) -> Vec<f64> {
        self.named_params()
            .iter()
            .flat_map(|(_, p)| p.value.iter().copied())
            .collect()
    }

    /// Appends this network's tensors to `archive` under `prefix`.
    pub fn export(&self, prefix: &str, with_moments: bool, archive: &mut TensorArchive) {
        for (name, p) in self.named_params() {
            let key = format!("{prefix}.{name}");
            archive.push(&key, p.shape.clone(), p.value.clone());
            if with_moments && p.trainable {
                archive.push(&format!("{key}.adam_m"), p.shape.clone(), p.m.clone());
                archive.push(&format!("{key}.adam_v"), p.shape.clone(), p.v.clone());
            }
        }
    }

    /// Restores values (and moments when present) exported under `prefix`.
    pub fn import(&mut self, prefix: &str, archive: &TensorArchive) -> Result<()> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(self.params_mut()) {
            let key = format!("{prefix}.{name}");
            let (shape, values) = archive
                .get(&key)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing tensor {key}")))?;
            if shape != p.shape.as_slice() {
                return Err(Error::Config(format!(
                    "tensor {key} has shape {shape:?}, network expects {:?}",
                    p.shape
                )));
            }
            p.value.copy_from_slice(values);
            if let Some((_, m)) = archive.get(&format!("{key}.adam_m")) {
                p.m.copy_from_slice(m);
            }
            if let Some((_, v)) = archive.get(&format!("{key}.adam_v")) {
                p.v.copy_from_slice(v);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Adam with bias correction. One instance per network; the step counter is
/// part of the checkpointed state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, steps: 0 }
    }

    /// Applies accumulated gradients to every trainable parameter of `net`.
    pub fn step(&mut self, net: &mut Network) {
        self.steps += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for p in net.params_mut().into_iter().filter(|p| p.trainable) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = beta1 * p.m[i] + (1.0 - beta1) * g;
                p.v[i] = beta2 * p.v[i] + (1.0 - beta2) * g * g;
                let m_hat = p.m[i] / c1;
                let v_hat = p.v[i] / c2;
                p.value[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}
