//! Minimal differentiable network: a feature extractor built from dense,
//! convolutional and ReLU layers, followed by a bias-free linear head that
//! grows by one row per new class.
//!
//! Gradients are available both for the parameters (training) and for the
//! input batch (adversarial perturbation).

mod checkpoint;
mod layers;
mod optim;

use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

pub use layers::{Conv2d, Dense, Layer};
pub use optim::Sgd;

use crate::error::{Error, Result};
use crate::loss;
use crate::tensor::Tensor;

/// Feature-extractor layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Dense/ReLU stack. The embedding is the output of the last dense layer,
    /// passed through a ReLU when `final_relu` is set.
    Mlp {
        hidden: Vec<usize>,
        feature_dim: usize,
        #[serde(default)]
        final_relu: bool,
    },
    /// One convolution + ReLU, then a dense block to `feature_dim`.
    Conv {
        channels: usize,
        kernel: usize,
        feature_dim: usize,
    },
}

impl Architecture {
    pub fn default_mlp() -> Self {
        Architecture::Mlp {
            hidden: vec![64, 64],
            feature_dim: 32,
            final_relu: false,
        }
    }

    pub fn default_conv() -> Self {
        Architecture::Conv {
            channels: 8,
            kernel: 3,
            feature_dim: 64,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Architecture::Mlp { feature_dim, .. } | Architecture::Conv { feature_dim, .. } => {
                *feature_dim
            }
        }
    }
}

/// Differentiable objective over the input batch.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// `Σ_i ‖f(x_i) − p‖²`, divided by the batch size when `mean` is set.
    PrototypeDistance { prototype: &'a [f32], mean: bool },
    /// Mean softmax cross-entropy of the head logits.
    CrossEntropy { labels: &'a [usize] },
}

/// Training loss over the head logits.
#[derive(Debug, Clone, Copy)]
pub enum LossSpec<'a> {
    CrossEntropy,
    /// `CE + lambda · KD(student[:, :old], teacher)` with temperature-softened KD.
    Distillation {
        teacher_logits: &'a Tensor,
        lambda: f64,
        temperature: f64,
    },
}

/// One gradient buffer per parameter tensor, in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<Vec<f32>>,
}

impl GradientSet {
    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn flat(&self) -> Vec<f32> {
        self.tensors.iter().flatten().copied().collect()
    }
}

/// Activations recorded during a forward pass; `acts[0]` is the input.
struct Trace {
    n: usize,
    acts: Vec<Vec<f32>>,
}

impl Trace {
    fn features(&self) -> &[f32] {
        self.acts.last().expect("trace holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// Row-major `(head_rows × feature_dim)`.
    head: Vec<f32>,
    head_rows: usize,
    feature_dim: usize,
}

impl Network {
    /// Builds a randomly initialized network for samples of `input_shape`.
    pub fn new<R: Rng + ?Sized>(
        input_shape: &[usize],
        arch: &Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        let input_len: usize = input_shape.iter().product();
        if input_len == 0 {
            return Err(Error::config("input shape must be non-empty"));
        }
        let mut layers = Vec::new();
        match arch {
            Architecture::Mlp {
                hidden,
                feature_dim,
                final_relu,
            } => {
                let mut width = input_len;
                for &h in hidden {
                    if h == 0 {
                        return Err(Error::config("hidden width must be > 0"));
                    }
                    layers.push(Layer::Dense(Dense::init(width, h, rng)));
                    layers.push(Layer::Relu { len: h });
                    width = h;
                }
                layers.push(Layer::Dense(Dense::init(width, *feature_dim, rng)));
                if *final_relu {
                    layers.push(Layer::Relu { len: *feature_dim });
                }
            }
            Architecture::Conv {
                channels,
                kernel,
                feature_dim,
            } => {
                let geometry = match input_shape {
                    [c, h, w] => (*c, *h, *w),
                    [h, w] => (1, *h, *w),
                    _ => {
                        return Err(Error::config(format!(
                            "conv architecture needs (c, h, w) samples, got {input_shape:?}"
                        )))
                    }
                };
                let conv = Conv2d::init(geometry, *channels, *kernel, rng)?;
                let conv_len = conv.out_height() * conv.out_width() * channels;
                layers.push(Layer::Conv2d(conv));
                layers.push(Layer::Relu { len: conv_len });
                layers.push(Layer::Dense(Dense::init(conv_len, *feature_dim, rng)));
                layers.push(Layer::Relu { len: *feature_dim });
            }
        }
        Self::from_layers(input_shape.to_vec(), layers)
    }

    /// Assembles a network from explicit layers; the head starts empty.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut width: usize = input_shape.iter().product();
        if width == 0 {
            return Err(Error::config("input shape must be non-empty"));
        }
        for layer in &layers {
            if layer.input_len() != width {
                return Err(Error::Dimension {
                    context: "layer chaining",
                    expected: width,
                    actual: layer.input_len(),
                });
            }
            width = layer.output_len();
        }
        Ok(Self {
            input_shape,
            layers,
            head: Vec::new(),
            head_rows: 0,
            feature_dim: width,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.head_rows
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn head(&self) -> &[f32] {
        &self.head
    }

    /// Replaces the head with explicit weights `(rows × feature_dim)`.
    pub fn set_head(&mut self, rows: usize, weights: Vec<f32>) -> Result<()> {
        if weights.len() != rows * self.feature_dim {
            return Err(Error::Dimension {
                context: "head weights",
                expected: rows * self.feature_dim,
                actual: weights.len(),
            });
        }
        self.head = weights;
        self.head_rows = rows;
        Ok(())
    }

    /// Appends `new_classes` randomly initialized rows to the classifier head.
    pub fn extend_head<R: Rng + ?Sized>(&mut self, new_classes: usize, rng: &mut R) {
        let bound = 1.0 / (self.feature_dim as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        self.head
            .extend((0..new_classes * self.feature_dim).map(|_| dist.sample(rng)));
        self.head_rows += new_classes;
    }

    /// Parameter tensors in a fixed order: each layer's (weight, bias), then the head.
    pub fn params(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = self.layers.iter().flat_map(Layer::params).collect();
        out.push(&self.head);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = self.layers.iter_mut().flat_map(Layer::params_mut).collect();
        out.push(&mut self.head);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Hash over every parameter bit pattern and the architecture shape.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.input_shape.hash(&mut h);
        self.head_rows.hash(&mut h);
        for p in self.params() {
            p.len().hash(&mut h);
            for v in p {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.sample_shape() != self.input_shape.as_slice() {
            let mut expected = vec![batch.batch_size()];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::InputShape {
                expected,
                actual: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn trace(&self, batch: &Tensor) -> Result<Trace> {
        self.check_batch(batch)?;
        let n = batch.batch_size();
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(batch.data().to_vec());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("non-empty"), n);
            acts.push(next);
        }
        Ok(Trace { n, acts })
    }

    fn head_logits(&self, features: &[f32], n: usize) -> Vec<f32> {
        let d = self.feature_dim;
        let mut out = vec![0.0f32; n * self.head_rows];
        for s in 0..n {
            let f = &features[s * d..(s + 1) * d];
            for r in 0..self.head_rows {
                let w = &self.head[r * d..(r + 1) * d];
                let acc: f64 = w
                    .iter()
                    .zip(f)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum();
                out[s * self.head_rows + r] = acc as f32;
            }
        }
        out
    }

    /// Embeddings `f(x)` of shape `(batch × feature_dim)`.
    pub fn forward_features(&self, batch: &Tensor) -> Result<Tensor> {
        let n = batch.batch_size();
        let trace = self.trace(batch)?;
        let out = Tensor::matrix(
            n,
            self.feature_dim,
            trace.acts.into_iter().last().expect("input"),
        )?;
        out.ensure_finite("forward_features")?;
        Ok(out)
    }

    /// Pre-softmax logits `W f(x)` of shape `(batch × num_classes)`.
    pub fn forward_logits(&self, batch: &Tensor) -> Result<Tensor> {
        if self.head_rows == 0 {
            return Err(Error::UninitializedHead);
        }
        let trace = self.trace(batch)?;
        let logits = self.head_logits(trace.features(), trace.n);
        let out = Tensor::matrix(trace.n, self.head_rows, logits)?;
        out.ensure_finite("forward_logits")?;
        Ok(out)
    }

    /// Value of an input objective; used by the finite-difference self-checks.
    pub fn objective_value(&self, batch: &Tensor, objective: &Objective<'_>) -> Result<f64> {
        let trace = self.trace(batch)?;
        Ok(self.objective_grad(&trace, objective)?.0)
    }

    fn objective_grad(&self, trace: &Trace, objective: &Objective<'_>) -> Result<(f64, Vec<f32>)> {
        let n = trace.n;
        let d = self.feature_dim;
        let feats = trace.features();
        match *objective {
            Objective::PrototypeDistance { prototype, mean } => {
                if prototype.len() != d {
                    return Err(Error::Dimension {
                        context: "objective prototype",
                        expected: d,
                        actual: prototype.len(),
                    });
                }
                let scale = if mean { 1.0 / n as f64 } else { 1.0 };
                let mut value = 0.0;
                let mut grad = vec![0.0f32; n * d];
                for s in 0..n {
                    for j in 0..d {
                        let diff = f64::from(feats[s * d + j]) - f64::from(prototype[j]);
                        value += diff * diff;
                        grad[s * d + j] = (2.0 * diff * scale) as f32;
                    }
                }
                Ok((value * scale, grad))
            }
            Objective::CrossEntropy { labels } => {
                if self.head_rows == 0 {
                    return Err(Error::UninitializedHead);
                }
                if labels.len() != n {
                    return Err(Error::Dimension {
                        context: "objective labels",
                        expected: n,
                        actual: labels.len(),
                    });
                }
                let logits = self.head_logits(feats, n);
                let (value, dlogits) = loss::cross_entropy(&logits, self.head_rows, labels)?;
                Ok((value, self.head_backward(feats, &dlogits, n, None)))
            }
        }
    }

    /// Backpropagates logit gradients through the head; returns the feature gradient.
    fn head_backward(
        &self,
        feats: &[f32],
        dlogits: &[f32],
        n: usize,
        head_grad: Option<&mut [f64]>,
    ) -> Vec<f32> {
        let d = self.feature_dim;
        let c = self.head_rows;
        if let Some(gh) = head_grad {
            for s in 0..n {
                let f = &feats[s * d..(s + 1) * d];
                for r in 0..c {
                    let g = f64::from(dlogits[s * c + r]);
                    if g == 0.0 {
                        continue;
                    }
                    for (dst, &fj) in gh[r * d..(r + 1) * d].iter_mut().zip(f) {
                        *dst += g * f64::from(fj);
                    }
                }
            }
        }
        let mut dfeat = vec![0.0f32; n * d];
        let mut acc = vec![0.0f64; d];
        for s in 0..n {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for r in 0..c {
                let g = f64::from(dlogits[s * c + r]);
                if g == 0.0 {
                    continue;
                }
                for (a, &w) in acc.iter_mut().zip(&self.head[r * d..(r + 1) * d]) {
                    *a += g * f64::from(w);
                }
            }
            for (dst, a) in dfeat[s * d..(s + 1) * d].iter_mut().zip(&acc) {
                *dst = *a as f32;
            }
        }
        dfeat
    }

    /// Runs the feature-extractor backward pass from a feature gradient.
    fn extractor_backward(
        &self,
        trace: &Trace,
        dfeat: Vec<f32>,
        mut param_grads: Option<&mut [Vec<f64>]>,
        want_input: bool,
    ) -> Option<Vec<f32>> {
        let mut grad = dfeat;
        // Parameter slots for layer i start at the running sum of earlier param counts.
        let mut slot: usize = self.layers.iter().map(Layer::param_count).sum();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            slot -= layer.param_count();
            let need_input = want_input || i > 0;
            let pg = match (&mut param_grads, layer.param_count()) {
                (Some(buffers), 2) => {
                    let (w, rest) = buffers[slot..].split_at_mut(1);
                    Some((w[0].as_mut_slice(), rest[0].as_mut_slice()))
                }
                _ => None,
            };
            grad = layer.backward(&trace.acts[i], &grad, trace.n, pg, need_input)?;
        }
        Some(grad)
    }

    /// Gradient of `objective` with respect to the input batch, same shape as `batch`.
    pub fn input_gradient(&self, batch: &Tensor, objective: &Objective<'_>) -> Result<Tensor> {
        let trace = self.trace(batch)?;
        let (_, dfeat) = self.objective_grad(&trace, objective)?;
        let grad = self
            .extractor_backward(&trace, dfeat, None, true)
            .expect("input gradient requested");
        let out = Tensor::new(batch.shape().to_vec(), grad)?;
        out.ensure_finite("input_gradient")?;
        Ok(out)
    }

    /// Loss value and per-parameter gradients for a labeled batch.
    pub fn loss_and_gradient(
        &self,
        batch: &Tensor,
        labels: &[usize],
        spec: &LossSpec<'_>,
    ) -> Result<(f64, GradientSet)> {
        if self.head_rows == 0 {
            return Err(Error::UninitializedHead);
        }
        if labels.len() != batch.batch_size() {
            return Err(Error::Dimension {
                context: "labels",
                expected: batch.batch_size(),
                actual: labels.len(),
            });
        }
        let trace = self.trace(batch)?;
        let n = trace.n;
        let c = self.head_rows;
        let logits = self.head_logits(trace.features(), n);
        let (mut value, mut dlogits) = loss::cross_entropy(&logits, c, labels)?;
        if let LossSpec::Distillation {
            teacher_logits,
            lambda,
            temperature,
        } = *spec
        {
            if lambda > 0.0 {
                if teacher_logits.batch_size() != n {
                    return Err(Error::Dimension {
                        context: "teacher logits batch",
                        expected: n,
                        actual: teacher_logits.batch_size(),
                    });
                }
                let old = teacher_logits.row_len();
                let (kd, dkd) =
                    loss::distillation(&logits, c, teacher_logits.data(), old, temperature)?;
                value += lambda * kd;
                for (g, k) in dlogits.iter_mut().zip(dkd) {
                    *g += (lambda * f64::from(k)) as f32;
                }
            }
        }
        if !value.is_finite() {
            return Err(Error::Numeric("loss"));
        }

        let params = self.params();
        let mut acc: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        let head_slot = acc.len() - 1;
        let dfeat = self.head_backward(trace.features(), &dlogits, n, Some(&mut acc[head_slot]));
        self.extractor_backward(&trace, dfeat, Some(&mut acc[..head_slot]), false);
        let grads = GradientSet {
            tensors: acc
                .into_iter()
                .map(|g| g.into_iter().map(|v| v as f32).collect())
                .collect(),
        };
        Ok((value, grads))
    }

    pub fn param_gradient(
        &self,
        batch: &Tensor,
        labels: &[usize],
        spec: &LossSpec<'_>,
    ) -> Result<GradientSet> {
        Ok(self.loss_and_gradient(batch, labels, spec)?.1)
    }
}
