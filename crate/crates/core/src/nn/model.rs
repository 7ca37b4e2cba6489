use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{LayerSpec, Shape};
use crate::error::{Error, Result};
use crate::matrix::LogitMatrix;

/// Training FLOPs per sample as a multiple of inference FLOPs (forward plus a
/// backward pass costing roughly twice the forward).
pub const TRAIN_FLOP_MULTIPLIER: u64 = 3;

/// Per-sample FLOP costs of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopProfile {
    pub infer_per_sample: u64,
    pub train_per_sample: u64,
}

impl std::ops::Add for FlopProfile {
    type Output = FlopProfile;

    fn add(self, rhs: Self) -> Self {
        FlopProfile {
            infer_per_sample: self.infer_per_sample + rhs.infer_per_sample,
            train_per_sample: self.train_per_sample + rhs.train_per_sample,
        }
    }
}

/// Feed-forward network over single-channel signals with a flat parameter vector.
///
/// Parameter layout per layer: dense weights are `[input][output]` followed by
/// `outputs` biases; conv1d weights are `[out_channel][in_channel][tap]`
/// followed by `out_channels` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    layers: Vec<LayerSpec>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output.
    shapes: Vec<Shape>,
    /// `offsets[i]` is where layer `i`'s parameters start; the last entry is the total.
    offsets: Vec<usize>,
    params: Vec<f64>,
    input_len: usize,
    num_classes: usize,
}

/// Cached activations of one sample's forward pass (output of every layer).
#[derive(Debug, Clone)]
pub struct Trace {
    outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or_default()
    }

    /// Output of layer `i`.
    pub fn layer_output(&self, i: usize) -> &[f64] {
        &self.outputs[i]
    }
}

impl Model {
    /// Validate the layer chain and build a model with all-zero parameters.
    pub fn new(layers: Vec<LayerSpec>, input_len: usize, num_classes: usize) -> Result<Self> {
        if input_len == 0 || num_classes == 0 {
            return Err(Error::shape("input length and class count must be positive"));
        }
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut shape = Shape::new(1, input_len);
        let mut offset = 0;
        for (i, layer) in layers.iter().enumerate() {
            shapes.push(shape);
            offsets.push(offset);
            shape = layer
                .output_shape(shape)
                .map_err(|e| Error::shape(format!("layer {i}: {e}")))?;
            offset += layer.param_count();
        }
        shapes.push(shape);
        offsets.push(offset);
        if shape.size() != num_classes {
            return Err(Error::shape(format!(
                "network emits {} values but {num_classes} classes were requested",
                shape.size()
            )));
        }
        Ok(Self {
            layers,
            shapes,
            offsets,
            params: vec![0.0; offset],
            input_len,
            num_classes,
        })
    }

    pub fn with_params(mut self, params: Vec<f64>) -> Result<Self> {
        self.set_params(params)?;
        Ok(self)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_glorot<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (i, layer) in self.layers.iter().enumerate() {
            let Some((fan_in, fan_out)) = layer.fans() else {
                continue;
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let start = self.offsets[i];
            let weights = layer.weight_count();
            for w in &mut self.params[start..start + weights] {
                *w = rng.random_range(-limit..=limit);
            }
            for b in &mut self.params[start + weights..self.offsets[i + 1]] {
                *b = 0.0;
            }
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape(format!(
                "model has {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn flop_profile(&self) -> FlopProfile {
        flop_profile(&self.layers, self.input_len)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len {
            return Err(Error::shape(format!(
                "sample has {} points, model expects {}",
                x.len(),
                self.input_len
            )));
        }
        Ok(())
    }

    /// Logits for a batch of samples, one row per sample.
    pub fn forward(&self, batch: &[&[f64]]) -> Result<LogitMatrix> {
        let mut data = Vec::with_capacity(batch.len() * self.num_classes);
        for x in batch {
            self.check_input(x)?;
            data.extend_from_slice(self.trace(x).logits());
        }
        LogitMatrix::from_vec(batch.len(), self.num_classes, data)
    }

    /// Forward pass for one sample, retaining every intermediate activation.
    ///
    /// The caller guarantees `x.len() == input_len`.
    pub fn trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.input_len);
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &outputs[i - 1] };
            let out = self.layer_forward(i, layer, input);
            outputs.push(out);
        }
        if self.layers.is_empty() {
            outputs.push(x.to_vec());
        }
        Trace { outputs }
    }

    fn layer_forward(&self, i: usize, layer: &LayerSpec, x: &[f64]) -> Vec<f64> {
        let p = &self.params[self.offsets[i]..self.offsets[i + 1]];
        let in_shape = self.shapes[i];
        let out_shape = self.shapes[i + 1];
        match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, b) = p.split_at(inputs * outputs);
                let mut out = b.to_vec();
                for (xi, row) in x.iter().zip(w.chunks_exact(outputs)) {
                    if *xi == 0.0 {
                        continue;
                    }
                    for (o, wij) in out.iter_mut().zip(row) {
                        *o += xi * wij;
                    }
                }
                out
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let (w, b) = p.split_at(out_channels * in_channels * kernel);
                let in_len = in_shape.len;
                let out_len = out_shape.len;
                let mut out = vec![0.0; out_channels * out_len];
                for o in 0..out_channels {
                    let dst = &mut out[o * out_len..(o + 1) * out_len];
                    dst.iter_mut().for_each(|v| *v = b[o]);
                    for c in 0..in_channels {
                        let src = &x[c * in_len..(c + 1) * in_len];
                        let taps = &w[(o * in_channels + c) * kernel..(o * in_channels + c + 1) * kernel];
                        for (t, d) in dst.iter_mut().enumerate() {
                            let window = &src[t * stride..t * stride + kernel];
                            let mut acc = 0.0;
                            for (a, b) in window.iter().zip(taps) {
                                acc += a * b;
                            }
                            *d += acc;
                        }
                    }
                }
                out
            }
            LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::Flatten => x.to_vec(),
            LayerSpec::MaxPool1d { window, stride } => {
                let in_len = in_shape.len;
                let out_len = out_shape.len;
                let mut out = Vec::with_capacity(out_shape.size());
                for c in 0..in_shape.channels {
                    let src = &x[c * in_len..(c + 1) * in_len];
                    for t in 0..out_len {
                        let w = &src[t * stride..t * stride + window];
                        out.push(w[max_index(w)]);
                    }
                }
                out
            }
        }
    }

    /// Add this sample's parameter gradient to `grads`, given the upstream
    /// gradient at the logits.
    pub fn accumulate_gradient(&self, x: &[f64], trace: &Trace, grad_logits: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let mut upstream = grad_logits.to_vec();
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 { x } else { &trace.outputs[i - 1] };
            let need_input_grad = i > 0;
            let g = &mut grads[self.offsets[i]..self.offsets[i + 1]];
            upstream = self.layer_backward(i, input, &trace.outputs[i], &upstream, g, need_input_grad);
        }
    }

    fn layer_backward(
        &self,
        i: usize,
        x: &[f64],
        out: &[f64],
        g_out: &[f64],
        g_params: &mut [f64],
        need_input_grad: bool,
    ) -> Vec<f64> {
        let p = &self.params[self.offsets[i]..self.offsets[i + 1]];
        let in_shape = self.shapes[i];
        let out_shape = self.shapes[i + 1];
        match self.layers[i] {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, _) = p.split_at(inputs * outputs);
                let (gw, gb) = g_params.split_at_mut(inputs * outputs);
                for (gbj, g) in gb.iter_mut().zip(g_out) {
                    *gbj += g;
                }
                for (xi, grow) in x.iter().zip(gw.chunks_exact_mut(outputs)) {
                    if *xi == 0.0 {
                        continue;
                    }
                    for (gij, g) in grow.iter_mut().zip(g_out) {
                        *gij += xi * g;
                    }
                }
                if !need_input_grad {
                    return Vec::new();
                }
                w.chunks_exact(outputs)
                    .map(|row| row.iter().zip(g_out).map(|(a, b)| a * b).sum())
                    .collect()
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let wc = out_channels * in_channels * kernel;
                let (w, _) = p.split_at(wc);
                let (gw, gb) = g_params.split_at_mut(wc);
                let in_len = in_shape.len;
                let out_len = out_shape.len;
                let mut g_in = if need_input_grad {
                    vec![0.0; in_shape.size()]
                } else {
                    Vec::new()
                };
                for o in 0..out_channels {
                    let go = &g_out[o * out_len..(o + 1) * out_len];
                    gb[o] += go.iter().sum::<f64>();
                    for c in 0..in_channels {
                        let src = &x[c * in_len..(c + 1) * in_len];
                        let base = (o * in_channels + c) * kernel;
                        let gtaps = &mut gw[base..base + kernel];
                        for (t, &g) in go.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            let window = &src[t * stride..t * stride + kernel];
                            for (gt, a) in gtaps.iter_mut().zip(window) {
                                *gt += g * a;
                            }
                        }
                        if need_input_grad {
                            let taps = &w[base..base + kernel];
                            let gsrc = &mut g_in[c * in_len..(c + 1) * in_len];
                            for (t, &g) in go.iter().enumerate() {
                                if g == 0.0 {
                                    continue;
                                }
                                let dst = &mut gsrc[t * stride..t * stride + kernel];
                                for (d, tap) in dst.iter_mut().zip(taps) {
                                    *d += g * tap;
                                }
                            }
                        }
                    }
                }
                g_in
            }
            LayerSpec::Relu => g_out
                .iter()
                .zip(out)
                .map(|(&g, &o)| if o > 0.0 { g } else { 0.0 })
                .collect(),
            LayerSpec::Flatten => g_out.to_vec(),
            LayerSpec::MaxPool1d { window, stride } => {
                let in_len = in_shape.len;
                let out_len = out_shape.len;
                let mut g_in = vec![0.0; in_shape.size()];
                for c in 0..in_shape.channels {
                    let src = &x[c * in_len..(c + 1) * in_len];
                    for t in 0..out_len {
                        let start = t * stride;
                        let k = max_index(&src[start..start + window]);
                        g_in[c * in_len + start + k] += g_out[c * out_len + t];
                    }
                }
                g_in
            }
        }
    }

    /// Gradient over all parameters of a batch loss whose gradient with respect
    /// to the logits is `grad_logits` (one row per sample, already carrying any
    /// averaging factor of the loss).
    pub fn backward(&self, batch: &[&[f64]], grad_logits: &LogitMatrix) -> Result<Vec<f64>> {
        if grad_logits.rows() != batch.len() || grad_logits.cols() != self.num_classes {
            return Err(Error::shape(format!(
                "loss gradient is {}x{}, expected {}x{}",
                grad_logits.rows(),
                grad_logits.cols(),
                batch.len(),
                self.num_classes
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        for (x, g) in batch.iter().zip(grad_logits.iter_rows()) {
            self.check_input(x)?;
            let trace = self.trace(x);
            self.accumulate_gradient(x, &trace, g, &mut grads);
        }
        Ok(grads)
    }

    /// Forward pass over a batch keeping the traces for [`Model::backward_traced`].
    pub fn trace_batch(&self, batch: &[&[f64]]) -> Result<(Vec<Trace>, LogitMatrix)> {
        let mut traces = Vec::with_capacity(batch.len());
        let mut data = Vec::with_capacity(batch.len() * self.num_classes);
        for x in batch {
            self.check_input(x)?;
            let t = self.trace(x);
            data.extend_from_slice(t.logits());
            traces.push(t);
        }
        Ok((traces, LogitMatrix::from_vec(batch.len(), self.num_classes, data)?))
    }

    /// Like [`Model::backward`], reusing traces from [`Model::trace_batch`].
    pub fn backward_traced(&self, batch: &[&[f64]], traces: &[Trace], grad_logits: &LogitMatrix) -> Result<Vec<f64>> {
        if grad_logits.rows() != batch.len() || traces.len() != batch.len() || grad_logits.cols() != self.num_classes {
            return Err(Error::shape(format!(
                "loss gradient is {}x{} with {} traces, expected {}x{}",
                grad_logits.rows(),
                grad_logits.cols(),
                traces.len(),
                batch.len(),
                self.num_classes
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        for ((x, t), g) in batch.iter().zip(traces).zip(grad_logits.iter_rows()) {
            self.accumulate_gradient(x, t, g, &mut grads);
        }
        Ok(grads)
    }
}

fn max_index(w: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in w.iter().enumerate().skip(1) {
        if v > w[best] {
            best = k;
        }
    }
    best
}

/// Per-sample FLOP profile of a layer chain over a single-channel input.
///
/// Layers that do not chain (which `Model::new` would reject) stop the sum.
pub fn flop_profile(layers: &[LayerSpec], input_len: usize) -> FlopProfile {
    let mut shape = Shape::new(1, input_len);
    let mut infer = 0u64;
    for layer in layers {
        let Ok(out) = layer.output_shape(shape) else {
            break;
        };
        infer += layer.forward_flops(out);
        shape = out;
    }
    FlopProfile {
        infer_per_sample: infer,
        train_per_sample: TRAIN_FLOP_MULTIPLIER * infer,
    }
}
