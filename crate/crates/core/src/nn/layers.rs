//! Layers with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`, so a
//! `backward` call must follow the matching `forward`. Parameter gradients
//! accumulate until `zero_grad`.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Layout};
use super::tensor::{Param, Tensor};

/// How a forward pass treats stochastic and stateful layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch norm uses and updates batch statistics.
    Train,
    /// Dropout active, batch norm uses batch statistics but leaves its running
    /// statistics alone. Used when backpropagating through a frozen network.
    Frozen,
    /// Deterministic inference with running statistics.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    /// Zero-mean normal with variance `2 / fan_in`.
    He,
    Normal { std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Upsample {
        factor: usize,
    },
    BatchNorm {
        channels: usize,
        momentum: f64,
        eps: f64,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Sigmoid,
    Dropout {
        rate: f64,
    },
    AvgPool {
        size: usize,
    },
    /// Reinterprets each item as `[channels, height, width]`.
    Reshape {
        channels: usize,
        height: usize,
        width: usize,
    },
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Upsample(Upsample),
    BatchNorm(BatchNorm),
    Activation(Activation),
    Dropout(Dropout),
    AvgPool(AvgPool),
    Reshape(Reshape),
}

fn init_weights(init: Init, fan_in: usize, n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let std = match init {
        Init::He => (2.0 / fan_in as f64).sqrt(),
        Init::Normal { std } => std,
    };
    let normal = Normal::new(0.0, std).expect("finite init std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

impl Layer {
    pub fn build(spec: &LayerSpec, init: Init, rng: &mut dyn RngCore) -> Layer {
        match *spec {
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense {
                inputs,
                outputs,
                weight: Param::new(
                    vec![outputs, inputs],
                    init_weights(init, inputs, inputs * outputs, rng),
                    true,
                ),
                bias: Param::filled(vec![outputs], 0.0, true),
                input: None,
            }),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let fan_in = in_channels * kernel * kernel;
                Layer::Conv2d(Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weight: Param::new(
                        vec![out_channels, in_channels, kernel, kernel],
                        init_weights(init, fan_in, out_channels * fan_in, rng),
                        true,
                    ),
                    bias: Param::filled(vec![out_channels], 0.0, true),
                    input: None,
                })
            }
            LayerSpec::Upsample { factor } => Layer::Upsample(Upsample {
                factor,
                input_shape: [0; 4],
            }),
            LayerSpec::BatchNorm {
                channels,
                momentum,
                eps,
            } => Layer::BatchNorm(BatchNorm {
                channels,
                momentum,
                eps,
                gamma: Param::filled(vec![channels], 1.0, true),
                beta: Param::filled(vec![channels], 0.0, true),
                running_mean: Param::filled(vec![channels], 0.0, false),
                running_var: Param::filled(vec![channels], 1.0, false),
                cache: None,
            }),
            LayerSpec::Relu => Layer::Activation(Activation::new(ActivationKind::Relu)),
            LayerSpec::LeakyRelu { slope } => {
                Layer::Activation(Activation::new(ActivationKind::LeakyRelu(slope)))
            }
            LayerSpec::Tanh => Layer::Activation(Activation::new(ActivationKind::Tanh)),
            LayerSpec::Sigmoid => Layer::Activation(Activation::new(ActivationKind::Sigmoid)),
            LayerSpec::Dropout { rate } => Layer::Dropout(Dropout { rate, mask: None }),
            LayerSpec::AvgPool { size } => Layer::AvgPool(AvgPool {
                size,
                input_shape: [0; 4],
            }),
            LayerSpec::Reshape {
                channels,
                height,
                width,
            } => Layer::Reshape(Reshape {
                target: [channels, height, width],
                input_shape: [0; 4],
            }),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Tensor {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Conv2d(l) => l.forward(x),
            Layer::Upsample(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Activation(l) => l.forward(x),
            Layer::Dropout(l) => l.forward(x, mode, rng),
            Layer::AvgPool(l) => l.forward(x),
            Layer::Reshape(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        match self {
            Layer::Dense(l) => l.backward(grad),
            Layer::Conv2d(l) => l.backward(grad),
            Layer::Upsample(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Activation(l) => l.backward(grad),
            Layer::Dropout(l) => l.backward(grad),
            Layer::AvgPool(l) => l.backward(grad),
            Layer::Reshape(l) => l.backward(grad),
        }
    }

    /// Named parameter blocks in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        match self {
            Layer::Dense(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::Conv2d(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::BatchNorm(l) => vec![
                ("gamma", &l.gamma),
                ("beta", &l.beta),
                ("running_mean", &l.running_mean),
                ("running_var", &l.running_var),
            ],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![
                &mut l.gamma,
                &mut l.beta,
                &mut l.running_mean,
                &mut l.running_var,
            ],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.sample_len(), self.inputs, "dense input width");
        let n = x.batch();
        let mut y = vec![0.0; n * self.outputs];
        gemm(
            x.data(),
            Layout::rm(n, self.inputs),
            &self.weight.value,
            Layout::rm_t(self.outputs, self.inputs),
            0.0,
            &mut y,
        );
        for row in y.chunks_mut(self.outputs) {
            for (v, b) in row.iter_mut().zip(&self.bias.value) {
                *v += b;
            }
        }
        self.input = Some(x.clone());
        Tensor::from_rows(n, self.outputs, y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("dense backward before forward");
        let n = x.batch();
        gemm(
            grad.data(),
            Layout::rm_t(n, self.outputs),
            x.data(),
            Layout::rm(n, self.inputs),
            1.0,
            &mut self.weight.grad,
        );
        for row in grad.data().chunks(self.outputs) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; n * self.inputs];
        gemm(
            grad.data(),
            Layout::rm(n, self.outputs),
            &self.weight.value,
            Layout::rm(self.outputs, self.inputs),
            0.0,
            &mut dx,
        );
        Tensor::from_vec(x.shape(), dx)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Conv2d {
    fn out_dim(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Output positions `o` along one axis whose input tap
    /// `o * stride + offset - padding` lies in `[0, size)`.
    fn valid(&self, offset: usize, size: usize, out: usize) -> (usize, usize) {
        let (p, s) = (self.padding, self.stride);
        let lo = if p > offset { (p - offset).div_ceil(s) } else { 0 };
        let hi = if size + p > offset {
            ((size + p - offset - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Writes the patches of one sample into columns `[at, at + ho * wo)` of
    /// a zeroed row-major `col` with leading dimension `ld`.
    #[allow(clippy::too_many_arguments)]
    fn im2col(&self, x: &[f64], h: usize, w: usize, ho: usize, wo: usize, col: &mut [f64], ld: usize, at: usize) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        for c in 0..self.in_channels {
            let src = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = self.valid(ky, h, ho);
                for kx in 0..k {
                    let (x0, x1) = self.valid(kx, w, wo);
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * ld + at..row * ld + at + ho * wo];
                    for oy in y0..y1 {
                        let iy = oy * s + ky - p;
                        let out = &mut dst[oy * wo + x0..oy * wo + x1];
                        let base = iy * w + x0 * s + kx - p;
                        if s == 1 {
                            out.copy_from_slice(&src[base..base + out.len()]);
                        } else {
                            for (j, v) in out.iter_mut().enumerate() {
                                *v = src[base + j * s];
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im(&self, col: &[f64], h: usize, w: usize, ho: usize, wo: usize, ld: usize, at: usize, dx: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        for c in 0..self.in_channels {
            let dst = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = self.valid(ky, h, ho);
                for kx in 0..k {
                    let (x0, x1) = self.valid(kx, w, wo);
                    let row = (c * k + ky) * k + kx;
                    let src = &col[row * ld + at..row * ld + at + ho * wo];
                    for oy in y0..y1 {
                        let iy = oy * s + ky - p;
                        let base = iy * w + x0 * s + kx - p;
                        for (j, v) in src[oy * wo + x0..oy * wo + x1].iter().enumerate() {
                            dst[base + j * s] += v;
                        }
                    }
                }
            }
        }
    }

    /// Samples per GEMM so the patch matrix stays near `COL_BUDGET` values.
    fn chunk(&self, n: usize, plane: usize) -> usize {
        (COL_BUDGET / (self.col_rows() * plane).max(1)).clamp(1, n.max(1))
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels(), self.in_channels, "conv input channels");
        let (n, h, w) = (x.batch(), x.height(), x.width());
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let (plane, rows, cout) = (ho * wo, self.col_rows(), self.out_channels);
        let mut y = Tensor::zeros([n, cout, ho, wo]);
        let step = self.chunk(n, plane);
        let mut col = Vec::new();
        let mut out = vec![0.0; cout * step * plane];
        for start in (0..n).step_by(step) {
            let m = step.min(n - start);
            let ld = m * plane;
            if col.len() != rows * ld {
                // Padding taps are never written, so zeros survive reuse.
                col = vec![0.0; rows * ld];
            }
            for j in 0..m {
                self.im2col(x.sample(start + j), h, w, ho, wo, &mut col, ld, j * plane);
            }
            gemm(&self.weight.value, Layout::rm(cout, rows), &col, Layout::rm(rows, ld), 0.0, &mut out);
            for j in 0..m {
                let ys = y.sample_mut(start + j);
                for (co, b) in self.bias.value.iter().enumerate() {
                    let src = &out[co * ld + j * plane..co * ld + (j + 1) * plane];
                    for (d, v) in ys[co * plane..(co + 1) * plane].iter_mut().zip(src) {
                        *d = v + b;
                    }
                }
            }
        }
        self.input = Some(x.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.take().expect("conv backward before forward");
        let (n, h, w) = (x.batch(), x.height(), x.width());
        let (ho, wo) = (grad.height(), grad.width());
        let (plane, rows, cout) = (ho * wo, self.col_rows(), self.out_channels);
        let mut dx = Tensor::zeros(x.shape());
        let step = self.chunk(n, plane);
        let mut col = Vec::new();
        let mut dcol = Vec::new();
        let mut dy = vec![0.0; cout * step * plane];
        for start in (0..n).step_by(step) {
            let m = step.min(n - start);
            let ld = m * plane;
            if col.len() != rows * ld {
                col = vec![0.0; rows * ld];
                dcol = vec![0.0; rows * ld];
            }
            for j in 0..m {
                self.im2col(x.sample(start + j), h, w, ho, wo, &mut col, ld, j * plane);
                let g = grad.sample(start + j);
                for co in 0..cout {
                    dy[co * ld + j * plane..co * ld + (j + 1) * plane]
                        .copy_from_slice(&g[co * plane..(co + 1) * plane]);
                }
            }
            gemm(&dy, Layout::rm(cout, ld), &col, Layout::rm_t(rows, ld), 1.0, &mut self.weight.grad);
            for (b, row) in self.bias.grad.iter_mut().zip(dy.chunks(ld)) {
                *b += row.iter().sum::<f64>();
            }
            gemm(&self.weight.value, Layout::rm_t(cout, rows), &dy, Layout::rm(cout, ld), 0.0, &mut dcol);
            for j in 0..m {
                self.col2im(&dcol, h, w, ho, wo, ld, j * plane, dx.sample_mut(start + j));
            }
        }
        self.input = Some(x);
        dx
    }
}

/// Upper bound on the values held by one conv patch matrix.
const COL_BUDGET: usize = 1 << 16;

/// Nearest-neighbour upsampling by an integer factor.
#[derive(Debug, Clone)]
pub struct Upsample {
    factor: usize,
    input_shape: [usize; 4],
}

impl Upsample {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        let f = self.factor;
        let (oh, ow) = (h * f, w * f);
        let mut y = Tensor::zeros([n, c, oh, ow]);
        let src = x.data();
        let dst = y.data_mut();
        for plane in 0..n * c {
            for iy in 0..h {
                let row = &src[(plane * h + iy) * w..(plane * h + iy + 1) * w];
                let first = (plane * oh + iy * f) * ow;
                for (ix, &v) in row.iter().enumerate() {
                    dst[first + ix * f..first + (ix + 1) * f].fill(v);
                }
                for r in 1..f {
                    dst.copy_within(first..first + ow, first + r * ow);
                }
            }
        }
        self.input_shape = x.shape();
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let [n, c, h, w] = self.input_shape;
        let f = self.factor;
        let (oh, ow) = (h * f, w * f);
        let mut dx = Tensor::zeros(self.input_shape);
        let src = grad.data();
        let dst = dx.data_mut();
        for plane in 0..n * c {
            for oy in 0..oh {
                let row = &src[(plane * oh + oy) * ow..(plane * oh + oy + 1) * ow];
                let out = &mut dst[(plane * h + oy / f) * w..(plane * h + oy / f + 1) * w];
                for (d, block) in out.iter_mut().zip(row.chunks_exact(f)) {
                    *d += block.iter().sum::<f64>();
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
    shape: [usize; 4],
}

/// Per-channel batch normalization. Running statistics follow
/// `running = momentum * running + (1 - momentum) * batch`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    channels: usize,
    momentum: f64,
    eps: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<BnCache>,
}

impl BatchNorm {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels, "batch norm channels");
        let plane = h * w;
        let count = (n * plane) as f64;
        let data = x.data();
        let batch_stats = mode != Mode::Eval;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if batch_stats {
            for i in 0..n {
                for ch in 0..c {
                    let s = &data[(i * c + ch) * plane..(i * c + ch + 1) * plane];
                    mean[ch] += s.iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for i in 0..n {
                for ch in 0..c {
                    let s = &data[(i * c + ch) * plane..(i * c + ch + 1) * plane];
                    var[ch] += s.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            if mode == Mode::Train {
                let m = self.momentum;
                for ch in 0..c {
                    self.running_mean.value[ch] = m * self.running_mean.value[ch] + (1.0 - m) * mean[ch];
                    self.running_var.value[ch] = m * self.running_var.value[ch] + (1.0 - m) * var[ch];
                }
            }
        } else {
            mean.copy_from_slice(&self.running_mean.value);
            var.copy_from_slice(&self.running_var.value);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; data.len()];
        let mut y = Tensor::zeros(x.shape());
        let out = y.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                for j in base..base + plane {
                    let xh = (data[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = xh;
                    out[j] = g * xh + b;
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            batch_stats,
            shape: x.shape(),
        });
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let cache = self.cache.as_ref().expect("batch norm backward before forward");
        let [n, c, h, w] = cache.shape;
        let plane = h * w;
        let count = (n * plane) as f64;
        let dy = grad.data();
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                for j in base..base + plane {
                    sum_dy[ch] += dy[j];
                    sum_dy_xhat[ch] += dy[j] * cache.xhat[j];
                }
            }
        }
        for ch in 0..c {
            self.gamma.grad[ch] += sum_dy_xhat[ch];
            self.beta.grad[ch] += sum_dy[ch];
        }
        let mut dx = Tensor::zeros(cache.shape);
        let out = dx.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                let scale = self.gamma.value[ch] * cache.inv_std[ch];
                for j in base..base + plane {
                    out[j] = if cache.batch_stats {
                        scale / count
                            * (count * dy[j] - sum_dy[ch] - cache.xhat[j] * sum_dy_xhat[ch])
                    } else {
                        scale * dy[j]
                    };
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct Activation {
    kind: ActivationKind,
    input: Option<Tensor>,
    output: Option<Tensor>,
}

impl Activation {
    fn new(kind: ActivationKind) -> Self {
        Activation {
            kind,
            input: None,
            output: None,
        }
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = match self.kind {
            ActivationKind::Relu => x.map(relu),
            ActivationKind::LeakyRelu(a) => x.map(|v| if v > 0.0 { v } else { a * v }),
            ActivationKind::Tanh => x.map(f64::tanh),
            ActivationKind::Sigmoid => x.map(sigmoid),
        };
        match self.kind {
            ActivationKind::Relu | ActivationKind::LeakyRelu(_) => self.input = Some(x.clone()),
            ActivationKind::Tanh | ActivationKind::Sigmoid => self.output = Some(y.clone()),
        }
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut dx = grad.clone();
        let d = dx.data_mut();
        match self.kind {
            ActivationKind::Relu => {
                let x = self.input.as_ref().expect("activation backward before forward");
                for (g, &v) in d.iter_mut().zip(x.data()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            ActivationKind::LeakyRelu(a) => {
                let x = self.input.as_ref().expect("activation backward before forward");
                for (g, &v) in d.iter_mut().zip(x.data()) {
                    if v <= 0.0 {
                        *g *= a;
                    }
                }
            }
            ActivationKind::Tanh => {
                let y = self.output.as_ref().expect("activation backward before forward");
                for (g, &v) in d.iter_mut().zip(y.data()) {
                    *g *= 1.0 - v * v;
                }
            }
            ActivationKind::Sigmoid => {
                let y = self.output.as_ref().expect("activation backward before forward");
                for (g, &v) in d.iter_mut().zip(y.data()) {
                    *g *= v * (1.0 - v);
                }
            }
        }
        dx
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Tensor {
        if mode == Mode::Eval || self.rate <= 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..x.data().len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut y = x.clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.mask = Some(mask);
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut dx = grad.clone();
        if let Some(mask) = &self.mask {
            dx.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        dx
    }
}

/// Non-overlapping average pooling; trailing rows/columns that do not fill a
/// window are dropped.
#[derive(Debug, Clone)]
pub struct AvgPool {
    size: usize,
    input_shape: [usize; 4],
}

impl AvgPool {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        let k = self.size;
        let (oh, ow) = (h / k, w / k);
        let norm = 1.0 / (k * k) as f64;
        let mut y = Tensor::zeros([n, c, oh, ow]);
        let src = x.data();
        let dst = y.data_mut();
        for plane in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for dy in 0..k {
                        let row = (plane * h + oy * k + dy) * w + ox * k;
                        s += src[row..row + k].iter().sum::<f64>();
                    }
                    dst[(plane * oh + oy) * ow + ox] = s * norm;
                }
            }
        }
        self.input_shape = x.shape();
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let [n, c, h, w] = self.input_shape;
        let k = self.size;
        let (oh, ow) = (h / k, w / k);
        let norm = 1.0 / (k * k) as f64;
        let mut dx = Tensor::zeros(self.input_shape);
        let src = grad.data();
        let dst = dx.data_mut();
        for plane in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = src[(plane * oh + oy) * ow + ox] * norm;
                    for dy in 0..k {
                        let row = (plane * h + oy * k + dy) * w + ox * k;
                        dst[row..row + k].iter_mut().for_each(|v| *v += g);
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct Reshape {
    target: [usize; 3],
    input_shape: [usize; 4],
}

impl Reshape {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        self.input_shape = x.shape();
        let [c, h, w] = self.target;
        x.clone().reshaped([x.batch(), c, h, w])
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        grad.clone().reshaped(self.input_shape)
    }
}
