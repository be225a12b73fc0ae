//! Dense multilayer networks with hand-written reverse-mode gradients, plus a
//! moment-adaptive optimizer with a stepwise learning-rate decay.
//!
//! Parameters for every layer live in one flat `Vec<f64>`: for each layer the
//! row-major weight matrix (`rows = fan_out`, `cols = fan_in`) followed by the
//! bias vector. The same layout is used for gradients.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputTransform {
    Identity,
    Softmax,
}

/// Network topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub output_transform: OutputTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub bias: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols + self.bias
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        output_transform: OutputTransform,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden,
            output_dim,
            activation,
            output_transform,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::Config("network needs at least one hidden layer".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "all layer widths must be >= 1 (input {}, hidden {:?}, output {})",
                self.input_dim, self.hidden, self.output_dim
            )));
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2)
            .map(|w| LayerShape {
                rows: w[1],
                cols: w[0],
                bias: w[1],
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::len).sum()
    }
}

/// Flat parameter storage with per-layer shape metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub shapes: Vec<LayerShape>,
}

impl ParamVector {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let shapes = spec.layer_shapes();
        let n = shapes.iter().map(LayerShape::len).sum();
        Self {
            values: vec![0.0; n],
            shapes,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check(&self, spec: &MlpSpec) -> Result<()> {
        let expected = spec.layer_shapes();
        let total: usize = expected.iter().map(LayerShape::len).sum();
        if self.shapes != expected || self.values.len() != total {
            return Err(Error::Config(format!(
                "parameter vector of length {} does not match network with {} parameters",
                self.values.len(),
                total
            )));
        }
        Ok(())
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `layer_inputs[k]` is the input to layer `k`; hidden entries are post-activation.
    layer_inputs: Vec<Vec<f64>>,
    /// Output layer pre-transform values.
    pub logits: Vec<f64>,
    /// Final output (after the output transform).
    pub output: Vec<f64>,
}

/// A network: topology plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: ParamVector,
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = ParamVector::zeros(&spec);
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        params.check(&spec)?;
        Ok(Self { spec, params })
    }

    /// Orthogonal initialization: hidden layers scaled by `hidden_gain`, the
    /// output layer by `output_gain`; biases start at zero.
    pub fn orthogonal<R: Rng + ?Sized>(
        spec: MlpSpec,
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let n_layers = net.params.shapes.len();
        let mut offset = 0;
        for (k, shape) in net.params.shapes.clone().iter().enumerate() {
            let gain = if k + 1 == n_layers {
                output_gain
            } else {
                hidden_gain
            };
            let w = orthogonal_matrix(shape.rows, shape.cols, rng);
            for (dst, src) in net.params.values[offset..offset + shape.rows * shape.cols]
                .iter_mut()
                .zip(w)
            {
                *dst = gain * src;
            }
            offset += shape.len();
        }
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.spec.input_dim {
            return Err(Error::Config(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.spec.input_dim
            )));
        }
        let shapes = &self.params.shapes;
        let mut layer_inputs = Vec::with_capacity(shapes.len());
        let mut current = input.to_vec();
        let mut offset = 0;
        for (k, shape) in shapes.iter().enumerate() {
            let (w, rest) = self.params.values[offset..].split_at(shape.rows * shape.cols);
            let b = &rest[..shape.bias];
            let mut out = b.to_vec();
            for (r, o) in out.iter_mut().enumerate() {
                let row = &w[r * shape.cols..(r + 1) * shape.cols];
                *o += row.iter().zip(&current).map(|(a, x)| a * x).sum::<f64>();
            }
            if k + 1 < shapes.len() {
                match self.spec.activation {
                    Activation::Tanh => out.iter_mut().for_each(|v| *v = v.tanh()),
                    Activation::Relu => out.iter_mut().for_each(|v| *v = v.max(0.0)),
                }
            }
            layer_inputs.push(std::mem::replace(&mut current, out));
            offset += shape.len();
        }
        let logits = current;
        let output = match self.spec.output_transform {
            OutputTransform::Identity => logits.clone(),
            OutputTransform::Softmax => softmax(&logits),
        };
        Ok(ForwardCache {
            layer_inputs,
            logits,
            output,
        })
    }

    /// Accumulates `d(output . output_grad)/d(params)` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64], grad: &mut [f64]) -> Result<()> {
        if output_grad.len() != self.spec.output_dim {
            return Err(Error::Config(format!(
                "output gradient has length {}, network output is {}",
                output_grad.len(),
                self.spec.output_dim
            )));
        }
        let logit_grad = match self.spec.output_transform {
            OutputTransform::Identity => output_grad.to_vec(),
            OutputTransform::Softmax => {
                let p = &cache.output;
                let dot: f64 = p.iter().zip(output_grad).map(|(a, b)| a * b).sum();
                p.iter().zip(output_grad).map(|(pi, gi)| pi * (gi - dot)).collect()
            }
        };
        self.backward_logits(cache, &logit_grad, grad)
    }

    /// Accumulates the parameter gradient given the gradient with respect to
    /// the pre-transform output layer values.
    pub fn backward_logits(&self, cache: &ForwardCache, logit_grad: &[f64], grad: &mut [f64]) -> Result<()> {
        if logit_grad.len() != self.spec.output_dim {
            return Err(Error::Config(format!(
                "logit gradient has length {}, network output is {}",
                logit_grad.len(),
                self.spec.output_dim
            )));
        }
        if grad.len() != self.params.len() {
            return Err(Error::Config(format!(
                "gradient buffer has length {}, network has {} parameters",
                grad.len(),
                self.params.len()
            )));
        }
        let shapes = &self.params.shapes;
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut acc = 0;
        for s in shapes {
            offsets.push(acc);
            acc += s.len();
        }

        let mut delta = logit_grad.to_vec();
        for k in (0..shapes.len()).rev() {
            let shape = shapes[k];
            let off = offsets[k];
            let x = &cache.layer_inputs[k];
            let wlen = shape.rows * shape.cols;
            {
                let (gw, gb) = grad[off..off + shape.len()].split_at_mut(wlen);
                for (r, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    gb[r] += d;
                    for (g, xi) in gw[r * shape.cols..(r + 1) * shape.cols].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            if k == 0 {
                break;
            }
            let w = &self.params.values[off..off + wlen];
            let mut prev = vec![0.0; shape.cols];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[r * shape.cols..(r + 1) * shape.cols]) {
                    *p += d * wi;
                }
            }
            // x is the post-activation output of layer k-1
            match self.spec.activation {
                Activation::Tanh => prev.iter_mut().zip(x).for_each(|(p, h)| *p *= 1.0 - h * h),
                Activation::Relu => prev
                    .iter_mut()
                    .zip(x)
                    .for_each(|(p, h)| if *h <= 0.0 { *p = 0.0 }),
            }
            delta = prev;
        }
        Ok(())
    }
}

/// Stateless forward pass over explicit `(spec, params)`.
pub fn forward(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    let net = Mlp::from_parts(spec.clone(), params.clone())?;
    net.forward(input)
}

/// Stateless gradient of `output . output_grad` with respect to the parameters.
pub fn backward(spec: &MlpSpec, params: &ParamVector, input: &[f64], output_grad: &[f64]) -> Result<ParamVector> {
    let net = Mlp::from_parts(spec.clone(), params.clone())?;
    let cache = net.forward_cached(input)?;
    let mut g = ParamVector::zeros(spec);
    net.backward(&cache, output_grad, &mut g.values)?;
    Ok(g)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let (tall, wide) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(tall, wide, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..wide {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(q[(i, j)]);
        }
    }
    out
}

/// Moment-adaptive optimizer state with bias correction and a stepwise
/// learning-rate decay.
///
/// `step` performs gradient *ascent*: pass the gradient of the quantity to
/// maximize. Use [`OptimState::descend`] for losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_interval: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(n_params: usize, base_lr: f64, decay_factor: f64, decay_interval: u64) -> Result<Self> {
        if !(base_lr > 0.0) || !(decay_factor > 0.0 && decay_factor <= 1.0) || decay_interval == 0 {
            return Err(Error::Config(format!(
                "invalid optimizer settings: lr {base_lr}, decay factor {decay_factor}, interval {decay_interval}"
            )));
        }
        Ok(Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step: 0,
            base_lr,
            decay_factor,
            decay_interval,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        })
    }

    pub fn effective_lr(&self) -> f64 {
        let k = (self.step / self.decay_interval) as i32;
        self.base_lr * self.decay_factor.powi(k)
    }

    /// One ascent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grad.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer holds {} moments but got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            let max_abs = grad
                .iter()
                .filter(|g| g.is_finite())
                .fold(0.0_f64, |m, g| m.max(g.abs()));
            return Err(Error::Training {
                step: self.step,
                max_abs_grad: if bad.is_nan() { max_abs } else { f64::INFINITY },
                message: "non-finite gradient".into(),
            });
        }
        let lr = self.effective_lr();
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            params[i] += lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }

    /// One descent step: minimizes the loss whose gradient is `grad`.
    pub fn descend(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.step(params, &neg)
    }
}
