//! Independent `f64` forward evaluator and central finite differences.
//!
//! This module re-implements the forward pass naively from a network's
//! weights and never calls into the backward code, so it can serve as a
//! gradient oracle. Coordinates whose finite-difference stencil straddles a
//! ReLU kink are flagged rather than compared: the objective is not
//! differentiable inside such a stencil.

use crate::net::{Layer, Network};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone)]
enum RefLayer {
    Dense {
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Conv {
        channels: usize,
        height: usize,
        width: usize,
        out_channels: usize,
        kernel: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
}

/// `f64` copy of a network.
#[derive(Debug, Clone)]
pub struct RefNet {
    layers: Vec<RefLayer>,
    head: Vec<f64>,
    head_rows: usize,
    feature_dim: usize,
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

impl RefNet {
    pub fn from_network(net: &Network) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => RefLayer::Dense {
                    in_dim: d.in_dim,
                    out_dim: d.out_dim,
                    weight: widen(&d.weight),
                    bias: widen(&d.bias),
                },
                Layer::Conv2d(c) => RefLayer::Conv {
                    channels: c.in_channels,
                    height: c.height,
                    width: c.width,
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    weight: widen(&c.weight),
                    bias: widen(&c.bias),
                },
                Layer::Relu { .. } => RefLayer::Relu,
            })
            .collect();
        Self {
            layers,
            head: widen(net.head()),
            head_rows: net.num_classes(),
            feature_dim: net.feature_dim(),
        }
    }

    /// Parameter vectors in the same order as `Network::params`.
    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                RefLayer::Dense { weight, bias, .. } | RefLayer::Conv { weight, bias, .. } => {
                    out.push(weight);
                    out.push(bias);
                }
                RefLayer::Relu => {}
            }
        }
        out.push(&mut self.head);
        out
    }

    /// Embedding of one sample, plus the sign pattern of every ReLU input.
    pub fn features_with_pattern(&self, x: &[f64]) -> (Vec<f64>, Vec<bool>) {
        let mut a = x.to_vec();
        let mut pattern = Vec::new();
        for l in &self.layers {
            a = match l {
                RefLayer::Dense {
                    in_dim,
                    out_dim,
                    weight,
                    bias,
                } => (0..*out_dim)
                    .map(|j| {
                        bias[j]
                            + (0..*in_dim)
                                .map(|i| weight[j * in_dim + i] * a[i])
                                .sum::<f64>()
                    })
                    .collect(),
                RefLayer::Conv {
                    channels,
                    height,
                    width,
                    out_channels,
                    kernel,
                    weight,
                    bias,
                } => {
                    let (k, h, w) = (*kernel, *height, *width);
                    let (oh, ow) = (h - k + 1, w - k + 1);
                    let mut out = vec![0.0; out_channels * oh * ow];
                    for o in 0..*out_channels {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let mut s = bias[o];
                                for c in 0..*channels {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            s += weight[((o * channels + c) * k + ky) * k + kx]
                                                * a[(c * h + y + ky) * w + xx + kx];
                                        }
                                    }
                                }
                                out[(o * oh + y) * ow + xx] = s;
                            }
                        }
                    }
                    out
                }
                RefLayer::Relu => {
                    pattern.extend(a.iter().map(|&v| v > 0.0));
                    a.iter().map(|&v| v.max(0.0)).collect()
                }
            };
        }
        (a, pattern)
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.features_with_pattern(x).0
    }

    pub fn logits(&self, feats: &[f64]) -> Vec<f64> {
        let d = self.feature_dim;
        (0..self.head_rows)
            .map(|r| (0..d).map(|j| self.head[r * d + j] * feats[j]).sum())
            .collect()
    }
}

fn log_softmax(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().map(|v| v / t).fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v / t - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v / t - lse).collect()
}

/// Scalar objectives evaluated by the reference network.
#[derive(Debug, Clone)]
pub enum RefObjective {
    /// `Σ ‖f(x) − p‖²`, divided by `n` when `mean`.
    PrototypeDistance { prototype: Vec<f64>, mean: bool },
    /// Mean cross-entropy over all head rows.
    CrossEntropy { labels: Vec<usize> },
    /// Cross-entropy plus `lambda` times the temperature-softened distillation term.
    Distillation {
        labels: Vec<usize>,
        teacher_logits: Vec<Vec<f64>>,
        lambda: f64,
        temperature: f64,
    },
}

impl RefObjective {
    fn evaluate(&self, net: &RefNet, samples: &[Vec<f64>]) -> (f64, Vec<bool>) {
        let n = samples.len() as f64;
        let mut total = 0.0;
        let mut pattern = Vec::new();
        for (i, x) in samples.iter().enumerate() {
            let (f, p) = net.features_with_pattern(x);
            pattern.extend(p);
            total += match self {
                RefObjective::PrototypeDistance { prototype, mean } => {
                    let s: f64 = f.iter().zip(prototype).map(|(a, b)| (a - b).powi(2)).sum();
                    if *mean {
                        s / n
                    } else {
                        s
                    }
                }
                RefObjective::CrossEntropy { labels } => {
                    -log_softmax(&net.logits(&f), 1.0)[labels[i]] / n
                }
                RefObjective::Distillation {
                    labels,
                    teacher_logits,
                    lambda,
                    temperature,
                } => {
                    let z = net.logits(&f);
                    let ce = -log_softmax(&z, 1.0)[labels[i]];
                    let t = &teacher_logits[i];
                    let lq = log_softmax(&z[..t.len()], *temperature);
                    let lp = log_softmax(t, *temperature);
                    let kd: f64 = -lp.iter().zip(&lq).map(|(p, q)| p.exp() * q).sum::<f64>();
                    (ce + lambda * kd) / n
                }
            };
        }
        (total, pattern)
    }
}

/// Finite-difference gradient with per-coordinate kink flags.
#[derive(Debug, Clone)]
pub struct FdGradient {
    pub grad: Vec<f64>,
    pub kinked: Vec<bool>,
}

fn batch_rows(batch: &Tensor) -> Vec<Vec<f64>> {
    batch.rows().map(widen).collect()
}

/// Central differences of `objective` with respect to every input scalar.
pub fn fd_input_gradient(
    net: &Network,
    batch: &Tensor,
    objective: &RefObjective,
    step: f64,
) -> FdGradient {
    let rnet = RefNet::from_network(net);
    let mut rows = batch_rows(batch);
    let mut grad = Vec::with_capacity(batch.data().len());
    let mut kinked = Vec::with_capacity(batch.data().len());
    for s in 0..rows.len() {
        for i in 0..rows[s].len() {
            let orig = rows[s][i];
            rows[s][i] = orig + step;
            let (plus, pp) = objective.evaluate(&rnet, &rows);
            rows[s][i] = orig - step;
            let (minus, pm) = objective.evaluate(&rnet, &rows);
            rows[s][i] = orig;
            grad.push((plus - minus) / (2.0 * step));
            kinked.push(pp != pm);
        }
    }
    FdGradient { grad, kinked }
}

/// Central differences of `objective` with respect to every parameter, in
/// `Network::params` order, flattened.
pub fn fd_param_gradient(
    net: &Network,
    batch: &Tensor,
    objective: &RefObjective,
    step: f64,
) -> FdGradient {
    let mut rnet = RefNet::from_network(net);
    let rows = batch_rows(batch);
    let sizes: Vec<usize> = rnet.params_mut().iter().map(|p| p.len()).collect();
    let mut grad = Vec::new();
    let mut kinked = Vec::new();
    for (t, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = rnet.params_mut()[t][i];
            rnet.params_mut()[t][i] = orig + step;
            let (plus, pp) = objective.evaluate(&rnet, &rows);
            rnet.params_mut()[t][i] = orig - step;
            let (minus, pm) = objective.evaluate(&rnet, &rows);
            rnet.params_mut()[t][i] = orig;
            grad.push((plus - minus) / (2.0 * step));
            kinked.push(pp != pm);
        }
    }
    FdGradient { grad, kinked }
}

/// Tally of an analytic-vs-finite-difference comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradCheck {
    pub coords: usize,
    /// Coordinates whose stencil crossed a ReLU kink (not compared).
    pub kinked: usize,
    /// Compared coordinates with relative error below `rel_tol`.
    pub rel_ok: usize,
    /// Compared coordinates failing `rel_tol` but within `abs_tol`.
    pub abs_ok: usize,
    pub max_rel: f64,
}

impl GradCheck {
    pub const REL_TOL: f64 = 1e-4;
    pub const ABS_TOL: f64 = 1e-6;

    pub fn compare(analytic: &[f32], fd: &FdGradient) -> Self {
        let mut out = GradCheck {
            coords: analytic.len(),
            ..Default::default()
        };
        for ((&a, &b), &k) in analytic.iter().zip(&fd.grad).zip(&fd.kinked) {
            if k {
                out.kinked += 1;
                continue;
            }
            let a = f64::from(a);
            let diff = (a - b).abs();
            let scale = a.abs().max(b.abs());
            let rel = if scale == 0.0 { 0.0 } else { diff / scale };
            if rel < Self::REL_TOL {
                out.rel_ok += 1;
                out.max_rel = out.max_rel.max(rel);
            } else if diff < Self::ABS_TOL {
                out.abs_ok += 1;
            }
        }
        out
    }

    pub fn merge(self, other: Self) -> Self {
        GradCheck {
            coords: self.coords + other.coords,
            kinked: self.kinked + other.kinked,
            rel_ok: self.rel_ok + other.rel_ok,
            abs_ok: self.abs_ok + other.abs_ok,
            max_rel: self.max_rel.max(other.max_rel),
        }
    }

    pub fn compared(&self) -> usize {
        self.coords - self.kinked
    }

    /// Fraction of compared coordinates within the relative tolerance.
    pub fn rel_fraction(&self) -> f64 {
        if self.compared() == 0 {
            1.0
        } else {
            self.rel_ok as f64 / self.compared() as f64
        }
    }

    /// ≥ 99% within relative tolerance, every other compared coordinate within
    /// the absolute tolerance, and at most 1% of coordinates lost to kinks.
    pub fn passes(&self) -> bool {
        self.rel_fraction() >= 0.99
            && self.rel_ok + self.abs_ok == self.compared()
            && (self.kinked as f64) <= 0.01 * self.coords as f64
    }
}
