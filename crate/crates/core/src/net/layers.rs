//! Layer primitives with explicit forward and backward passes.
//!
//! All layers operate on flat batches: `n` samples laid out contiguously,
//! each sample `input_len()` scalars long. Dot products and parameter
//! gradient reductions accumulate in `f64`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu { len: usize },
}

/// Fully connected layer `y = W x + b`, with `W` stored row-major `(out × in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) weight: Vec<f32>,
    pub(crate) bias: Vec<f32>,
}

/// Valid (unpadded), stride-1 2-D convolution over `(channels × height × width)` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub(crate) in_channels: usize,
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) out_channels: usize,
    pub(crate) kernel: usize,
    /// `(out_channels × in_channels × kernel × kernel)`
    pub(crate) weight: Vec<f32>,
    pub(crate) bias: Vec<f32>,
}

/// He-uniform bound for a ReLU network.
fn he_uniform<R: Rng + ?Sized>(fan_in: usize, len: usize, rng: &mut R) -> Vec<f32> {
    let limit = (6.0 / fan_in as f32).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bound");
    (0..len).map(|_| dist.sample(rng)).collect()
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config("dense layer dims must be > 0"));
        }
        if weight.len() != in_dim * out_dim {
            return Err(Error::Dimension {
                context: "dense weight",
                expected: in_dim * out_dim,
                actual: weight.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::Dimension {
                context: "dense bias",
                expected: out_dim,
                actual: bias.len(),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: he_uniform(in_dim, in_dim * out_dim, rng),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    fn forward(&self, input: &[f32], n: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; n * self.out_dim];
        for s in 0..n {
            let x = &input[s * self.in_dim..(s + 1) * self.in_dim];
            let y = &mut out[s * self.out_dim..(s + 1) * self.out_dim];
            for (j, yj) in y.iter_mut().enumerate() {
                let w = &self.weight[j * self.in_dim..(j + 1) * self.in_dim];
                let acc: f64 = w
                    .iter()
                    .zip(x)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum();
                *yj = (acc + f64::from(self.bias[j])) as f32;
            }
        }
        out
    }

    fn backward(
        &self,
        input: &[f32],
        grad_out: &[f32],
        n: usize,
        param_grads: Option<(&mut [f64], &mut [f64])>,
        want_input: bool,
    ) -> Option<Vec<f32>> {
        if let Some((gw, gb)) = param_grads {
            for s in 0..n {
                let x = &input[s * self.in_dim..(s + 1) * self.in_dim];
                let g = &grad_out[s * self.out_dim..(s + 1) * self.out_dim];
                for (j, &gj) in g.iter().enumerate() {
                    if gj == 0.0 {
                        continue;
                    }
                    let gj = f64::from(gj);
                    gb[j] += gj;
                    let row = &mut gw[j * self.in_dim..(j + 1) * self.in_dim];
                    for (r, &xi) in row.iter_mut().zip(x) {
                        *r += gj * f64::from(xi);
                    }
                }
            }
        }
        if !want_input {
            return None;
        }
        let mut grad_in = vec![0.0f32; n * self.in_dim];
        let mut acc = vec![0.0f64; self.in_dim];
        for s in 0..n {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let g = &grad_out[s * self.out_dim..(s + 1) * self.out_dim];
            for (j, &gj) in g.iter().enumerate() {
                if gj == 0.0 {
                    continue;
                }
                let gj = f64::from(gj);
                let w = &self.weight[j * self.in_dim..(j + 1) * self.in_dim];
                for (a, &wji) in acc.iter_mut().zip(w) {
                    *a += gj * f64::from(wji);
                }
            }
            for (d, a) in grad_in[s * self.in_dim..(s + 1) * self.in_dim]
                .iter_mut()
                .zip(&acc)
            {
                *d = *a as f32;
            }
        }
        Some(grad_in)
    }
}

impl Conv2d {
    pub fn new(
        input: (usize, usize, usize),
        out_channels: usize,
        kernel: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        let (in_channels, height, width) = input;
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(Error::config("conv dims must be > 0"));
        }
        if kernel > height || kernel > width {
            return Err(Error::config(format!(
                "kernel {kernel} larger than input {height}x{width}"
            )));
        }
        let wlen = out_channels * in_channels * kernel * kernel;
        if weight.len() != wlen {
            return Err(Error::Dimension {
                context: "conv weight",
                expected: wlen,
                actual: weight.len(),
            });
        }
        if bias.len() != out_channels {
            return Err(Error::Dimension {
                context: "conv bias",
                expected: out_channels,
                actual: bias.len(),
            });
        }
        Ok(Self {
            in_channels,
            height,
            width,
            out_channels,
            kernel,
            weight,
            bias,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        input: (usize, usize, usize),
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = input.0 * kernel * kernel;
        let weight = he_uniform(fan_in, out_channels * fan_in, rng);
        Self::new(input, out_channels, kernel, weight, vec![0.0; out_channels])
    }

    pub fn out_height(&self) -> usize {
        self.height - self.kernel + 1
    }

    pub fn out_width(&self) -> usize {
        self.width - self.kernel + 1
    }

    fn input_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn output_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    #[inline]
    fn w_index(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + c) * self.kernel + ky) * self.kernel + kx
    }

    fn forward(&self, input: &[f32], n: usize) -> Vec<f32> {
        let (oh, ow) = (self.out_height(), self.out_width());
        let (il, ol) = (self.input_len(), self.output_len());
        let mut out = vec![0.0f32; n * ol];
        for s in 0..n {
            let x = &input[s * il..(s + 1) * il];
            let y = &mut out[s * ol..(s + 1) * ol];
            for o in 0..self.out_channels {
                for py in 0..oh {
                    for px in 0..ow {
                        let mut acc = f64::from(self.bias[o]);
                        for c in 0..self.in_channels {
                            for ky in 0..self.kernel {
                                let row = (c * self.height + py + ky) * self.width + px;
                                for kx in 0..self.kernel {
                                    acc += f64::from(self.weight[self.w_index(o, c, ky, kx)])
                                        * f64::from(x[row + kx]);
                                }
                            }
                        }
                        y[(o * oh + py) * ow + px] = acc as f32;
                    }
                }
            }
        }
        out
    }

    fn backward(
        &self,
        input: &[f32],
        grad_out: &[f32],
        n: usize,
        param_grads: Option<(&mut [f64], &mut [f64])>,
        want_input: bool,
    ) -> Option<Vec<f32>> {
        let (oh, ow) = (self.out_height(), self.out_width());
        let (il, ol) = (self.input_len(), self.output_len());
        if let Some((gw, gb)) = param_grads {
            for s in 0..n {
                let x = &input[s * il..(s + 1) * il];
                let g = &grad_out[s * ol..(s + 1) * ol];
                for o in 0..self.out_channels {
                    for py in 0..oh {
                        for px in 0..ow {
                            let go = g[(o * oh + py) * ow + px];
                            if go == 0.0 {
                                continue;
                            }
                            let go = f64::from(go);
                            gb[o] += go;
                            for c in 0..self.in_channels {
                                for ky in 0..self.kernel {
                                    let row = (c * self.height + py + ky) * self.width + px;
                                    for kx in 0..self.kernel {
                                        gw[self.w_index(o, c, ky, kx)] +=
                                            go * f64::from(x[row + kx]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if !want_input {
            return None;
        }
        let mut grad_in = vec![0.0f32; n * il];
        let mut acc = vec![0.0f64; il];
        for s in 0..n {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let g = &grad_out[s * ol..(s + 1) * ol];
            for o in 0..self.out_channels {
                for py in 0..oh {
                    for px in 0..ow {
                        let go = g[(o * oh + py) * ow + px];
                        if go == 0.0 {
                            continue;
                        }
                        let go = f64::from(go);
                        for c in 0..self.in_channels {
                            for ky in 0..self.kernel {
                                let row = (c * self.height + py + ky) * self.width + px;
                                for kx in 0..self.kernel {
                                    acc[row + kx] +=
                                        go * f64::from(self.weight[self.w_index(o, c, ky, kx)]);
                                }
                            }
                        }
                    }
                }
            }
            for (d, a) in grad_in[s * il..(s + 1) * il].iter_mut().zip(&acc) {
                *d = *a as f32;
            }
        }
        Some(grad_in)
    }
}

impl Layer {
    pub fn input_len(&self) -> usize {
        match self {
            Layer::Dense(d) => d.in_dim,
            Layer::Conv2d(c) => c.input_len(),
            Layer::Relu { len } => *len,
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Layer::Dense(d) => d.out_dim,
            Layer::Conv2d(c) => c.output_len(),
            Layer::Relu { len } => *len,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(_) | Layer::Conv2d(_) => 2,
            Layer::Relu { .. } => 0,
        }
    }

    pub(crate) fn params(&self) -> Vec<&[f32]> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Relu { .. } => vec![],
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f32]> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Relu { .. } => vec![],
        }
    }

    pub(crate) fn forward(&self, input: &[f32], n: usize) -> Vec<f32> {
        match self {
            Layer::Dense(d) => d.forward(input, n),
            Layer::Conv2d(c) => c.forward(input, n),
            Layer::Relu { .. } => input.iter().map(|&v| v.max(0.0)).collect(),
        }
    }

    /// Backpropagates `grad_out` through this layer.
    ///
    /// `input` is the activation that entered the layer during the forward
    /// pass. ReLU uses a zero subgradient at the kink.
    pub(crate) fn backward(
        &self,
        input: &[f32],
        grad_out: &[f32],
        n: usize,
        param_grads: Option<(&mut [f64], &mut [f64])>,
        want_input: bool,
    ) -> Option<Vec<f32>> {
        match self {
            Layer::Dense(d) => d.backward(input, grad_out, n, param_grads, want_input),
            Layer::Conv2d(c) => c.backward(input, grad_out, n, param_grads, want_input),
            Layer::Relu { .. } => Some(
                input
                    .iter()
                    .zip(grad_out)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
            ),
        }
    }
}
