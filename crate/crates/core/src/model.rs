//! Tiny dense networks used as on-device fault detectors.
//!
//! Two heads are supported: an autoencoder with a linear output, scored by
//! its reconstruction error, and a classifier with a single sigmoid output.
//! Hidden layers use ReLU. Parameters are stored as `f64` but kept on the
//! `f32` grid by every constructor and training step, so a 32-bit
//! checkpoint round-trips exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Output head of a [`DenseModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Linear output of the same width as the input.
    Autoencoder,
    /// One sigmoid unit estimating the fault probability.
    Classifier,
}

/// Bit width of transmitted weights and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuantLevel {
    Q8,
    Q32,
}

impl QuantLevel {
    pub fn bits(self) -> u32 {
        match self {
            QuantLevel::Q8 => 8,
            QuantLevel::Q32 => 32,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(QuantLevel::Q8),
            32 => Ok(QuantLevel::Q32),
            other => Err(Error::InvalidArgument(format!(
                "quantization level {other} not in {{8, 32}}"
            ))),
        }
    }
}

/// Pruning and quantization applied to a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionMeta {
    pub prune_level: f64,
    pub quant: QuantLevel,
}

impl Default for CompressionMeta {
    fn default() -> Self {
        Self {
            prune_level: 0.0,
            quant: QuantLevel::Q32,
        }
    }
}

/// One fully connected layer, weights stored row-major as `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) inputs: usize,
    pub(crate) outputs: usize,
    pub(crate) weights: Vec<f64>,
    pub(crate) biases: Vec<f64>,
    /// Quantization step of the weight and bias tensors (8-bit models).
    pub(crate) steps: Option<(f32, f32)>,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.inputs
    }
    pub fn outputs(&self) -> usize {
        self.outputs
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn biases(&self) -> &[f64] {
        &self.biases
    }
    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }
    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }
}

pub(crate) fn to_f32_grid(v: f64) -> f64 {
    v as f32 as f64
}

/// A small feed-forward network with its fault-score calibration and
/// compression metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseModel {
    pub(crate) dims: Vec<usize>,
    pub(crate) layers: Vec<Layer>,
    pub(crate) head: Head,
    pub(crate) e_ref: Option<f64>,
    pub(crate) meta: CompressionMeta,
    /// Per hidden layer activation grid step, set by 8-bit quantization.
    pub(crate) activation_steps: Option<Vec<f64>>,
}

impl DenseModel {
    /// Fresh model with Glorot-uniform weights and zero biases.
    pub fn new(dims: &[usize], head: Head, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(dims, head, |fan_in, fan_out| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            to_f32_grid(rng.gen_range(-limit..limit))
        })
    }

    /// Model with every weight and bias zero.
    pub fn zeros(dims: &[usize], head: Head) -> Result<Self> {
        Self::build(dims, head, |_, _| 0.0)
    }

    /// Assembles a model from explicit `(weights, biases)` per layer. Values
    /// are snapped to the `f32` grid.
    pub fn from_parts(dims: &[usize], head: Head, params: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let mut model = Self::zeros(dims, head)?;
        if params.len() != model.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} layers, got {}",
                model.layers.len(),
                params.len()
            )));
        }
        for (layer, (w, b)) in model.layers.iter_mut().zip(params) {
            if w.len() != layer.weights.len() || b.len() != layer.biases.len() {
                return Err(Error::DimensionMismatch {
                    expected: layer.weights.len() + layer.biases.len(),
                    actual: w.len() + b.len(),
                });
            }
            layer.weights = w.into_iter().map(to_f32_grid).collect();
            layer.biases = b.into_iter().map(to_f32_grid).collect();
        }
        Ok(model)
    }

    fn build(dims: &[usize], head: Head, mut init: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer dims {dims:?} need at least two positive entries"
            )));
        }
        match head {
            Head::Autoencoder if dims[0] != dims[dims.len() - 1] => {
                return Err(Error::InvalidArgument(
                    "autoencoder output width must equal its input width".into(),
                ))
            }
            Head::Classifier if dims[dims.len() - 1] != 1 => {
                return Err(Error::InvalidArgument(
                    "classifier head must have exactly one output".into(),
                ))
            }
            _ => {}
        }
        let layers = dims
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                Layer {
                    inputs: fan_in,
                    outputs: fan_out,
                    weights: (0..fan_in * fan_out).map(|_| init(fan_in, fan_out)).collect(),
                    biases: vec![0.0; fan_out],
                    steps: None,
                }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            head,
            e_ref: None,
            meta: CompressionMeta::default(),
            activation_steps: None,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
    pub fn head(&self) -> Head {
        self.head
    }
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }
    /// Raw parameter access. Values written here are not snapped to the
    /// `f32` grid.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }
    pub fn compression(&self) -> CompressionMeta {
        self.meta
    }
    pub fn e_ref(&self) -> Option<f64> {
        self.e_ref
    }
    pub fn set_e_ref(&mut self, e_ref: f64) -> Result<()> {
        if !(e_ref > 0.0 && e_ref.is_finite()) {
            return Err(Error::InvalidArgument(format!("e_ref {e_ref} must be positive")));
        }
        self.e_ref = Some(e_ref);
        Ok(())
    }
    pub fn activation_steps(&self) -> Option<&[f64]> {
        self.activation_steps.as_deref()
    }

    /// Number of weights, biases excluded.
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }
    /// Weights plus biases.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }
    /// Multiply-accumulate operations per inference.
    pub fn mac_count(&self) -> usize {
        self.weight_count()
    }
    /// Activations produced per inference.
    pub fn activation_count(&self) -> usize {
        self.dims[1..].iter().sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Runs inference. Hidden outputs are snapped to the activation grid
    /// when the model carries one.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = layer.biases.clone();
            affine(layer, &current, &mut next);
            if l < last {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
                if let Some(steps) = &self.activation_steps {
                    quantize_activations(&mut next, steps[l]);
                }
            } else if self.head == Head::Classifier {
                for v in next.iter_mut() {
                    *v = sigmoid(*v);
                }
            }
            current = next;
        }
        Ok(current)
    }

    /// Mean squared reconstruction error `||x - x̂||² / N`.
    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64> {
        if self.head != Head::Autoencoder {
            return Err(Error::InvalidArgument(
                "reconstruction error needs an autoencoder".into(),
            ));
        }
        let out = self.forward(x)?;
        Ok(mean_squared(x, &out))
    }

    /// Fault score in `[0, 1)`: the sigmoid output for a classifier,
    /// `e / (e + e_ref)` for an autoencoder.
    pub fn fault_score(&self, x: &[f64]) -> Result<f64> {
        match self.head {
            Head::Classifier => Ok(self.forward(x)?[0]),
            Head::Autoencoder => {
                let e_ref = self.e_ref.ok_or(Error::Uncalibrated)?;
                let e = self.reconstruction_error(x)?;
                Ok(error_to_score(e, e_ref))
            }
        }
    }

    /// `true` iff the fault score exceeds `tau`.
    pub fn classify(&self, x: &[f64], tau: f64) -> Result<bool> {
        Ok(self.fault_score(x)? > tau)
    }
}

pub fn error_to_score(e: f64, e_ref: f64) -> f64 {
    e / (e + e_ref)
}

fn affine(layer: &Layer, input: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(layer.weights.chunks_exact(layer.inputs)) {
        *o += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

pub(crate) fn quantize_activations(values: &mut [f64], step: f64) {
    if step <= 0.0 {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let limit = 127.0 * step;
    for v in values.iter_mut() {
        *v = ((*v).clamp(-limit, limit) / step).round() * step;
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn mean_squared(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Weights of the label-dependent reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub fault: f64,
    pub normal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            fault: -0.1,
            normal: 1.0,
        }
    }
}

/// Label-weighted reconstruction loss. A negative fault weight pushes the
/// autoencoder away from reconstructing faulty samples.
pub fn ae_loss(x: &[f64], x_hat: &[f64], faulty: bool, weights: LossWeights) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: x_hat.len(),
        });
    }
    let w = if faulty { weights.fault } else { weights.normal };
    Ok(w * mean_squared(x, x_hat))
}

/// Labelled training examples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainBatch {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl TrainBatch {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<bool>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                actual: labels.len(),
            });
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, label: bool) {
        self.inputs.push(x);
        self.labels.push(label);
    }
}

/// Per-layer parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &DenseModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

fn check_batch(model: &DenseModel, inputs: &[Vec<f64>], labels: &[bool]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if inputs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            actual: labels.len(),
        });
    }
    inputs.iter().try_for_each(|x| model.check_input(x))
}

/// Mean training loss of the head over a batch: weighted reconstruction
/// loss for an autoencoder, binary cross-entropy for a classifier.
/// Activation quantization is not applied.
pub fn batch_loss(model: &DenseModel, batch: &TrainBatch, weights: LossWeights) -> Result<f64> {
    check_batch(model, &batch.inputs, &batch.labels)?;
    let mut scratch = Scratch::new(model);
    let total: f64 = batch
        .inputs
        .iter()
        .zip(&batch.labels)
        .map(|(x, &s)| {
            scratch.forward(model, x);
            sample_loss(model, x, s, scratch.output_logits(), weights)
        })
        .sum();
    Ok(total / batch.len() as f64)
}

fn sample_loss(model: &DenseModel, x: &[f64], faulty: bool, out: &[f64], weights: LossWeights) -> f64 {
    match model.head {
        Head::Autoencoder => {
            let w = if faulty { weights.fault } else { weights.normal };
            w * mean_squared(x, out)
        }
        Head::Classifier => {
            // BCE on the logit: softplus(z) - s z
            let z = out[0];
            let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
            softplus - if faulty { z } else { 0.0 }
        }
    }
}

struct Scratch {
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    /// Post-activations per layer (hidden only meaningful).
    post: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(model: &DenseModel) -> Self {
        let shape = || model.layers.iter().map(|l| vec![0.0; l.outputs]).collect();
        Self {
            pre: shape(),
            post: shape(),
            delta: shape(),
        }
    }

    fn forward(&mut self, model: &DenseModel, x: &[f64]) {
        let last = model.layers.len() - 1;
        for (l, layer) in model.layers.iter().enumerate() {
            let (done, rest) = self.post.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &done[l - 1] };
            let pre = &mut self.pre[l];
            pre.copy_from_slice(&layer.biases);
            affine(layer, input, pre);
            let post = &mut rest[0];
            if l < last {
                for (p, z) in post.iter_mut().zip(pre.iter()) {
                    *p = z.max(0.0);
                }
            } else {
                post.copy_from_slice(pre);
            }
        }
    }

    /// Linear output for the autoencoder, the logit for the classifier.
    fn output_logits(&self) -> &[f64] {
        &self.pre[self.pre.len() - 1]
    }

    fn backward(&mut self, model: &DenseModel, x: &[f64], faulty: bool, scale: f64, weights: LossWeights, grads: &mut Gradients) {
        let last = model.layers.len() - 1;
        {
            let out = &self.pre[last];
            let delta = &mut self.delta[last];
            match model.head {
                Head::Autoencoder => {
                    let w = if faulty { weights.fault } else { weights.normal };
                    let k = 2.0 * w * scale / x.len() as f64;
                    for ((d, o), xi) in delta.iter_mut().zip(out).zip(x) {
                        *d = k * (o - xi);
                    }
                }
                Head::Classifier => {
                    let s = if faulty { 1.0 } else { 0.0 };
                    delta[0] = scale * (sigmoid(out[0]) - s);
                }
            }
        }
        for l in (0..=last).rev() {
            let layer = &model.layers[l];
            let input: &[f64] = if l == 0 { x } else { &self.post[l - 1] };
            let (lower, upper) = self.delta.split_at_mut(l);
            let delta = &upper[0];
            let gw = &mut grads.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.biases[l][o] += d;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            if l > 0 {
                let below = &mut lower[l - 1];
                below.iter_mut().for_each(|v| *v = 0.0);
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (b, w) in below.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
                for (b, z) in below.iter_mut().zip(&self.pre[l - 1]) {
                    if *z <= 0.0 {
                        *b = 0.0;
                    }
                }
            }
        }
    }
}

fn gradient_over(
    model: &DenseModel,
    inputs: &[&[f64]],
    labels: &[bool],
    weights: LossWeights,
    scratch: &mut Scratch,
) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(model);
    let scale = 1.0 / inputs.len() as f64;
    let mut loss = 0.0;
    for (x, &s) in inputs.iter().zip(labels) {
        scratch.forward(model, x);
        loss += sample_loss(model, x, s, scratch.output_logits(), weights);
        scratch.backward(model, x, s, scale, weights, &mut grads);
    }
    (loss * scale, grads)
}

/// Exact gradient of [`batch_loss`] with respect to every parameter.
pub fn gradient(model: &DenseModel, batch: &TrainBatch, weights: LossWeights) -> Result<Gradients> {
    check_batch(model, &batch.inputs, &batch.labels)?;
    let inputs: Vec<&[f64]> = batch.inputs.iter().map(Vec::as_slice).collect();
    let mut scratch = Scratch::new(model);
    Ok(gradient_over(model, &inputs, &batch.labels, weights, &mut scratch).1)
}

/// Gradient-descent settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Minibatch size; `None` runs full-batch descent.
    pub batch_size: Option<usize>,
    pub loss: LossWeights,
    /// Percentile of normal-sample reconstruction errors used as `e_ref`.
    pub calibration_percentile: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.05,
            batch_size: Some(32),
            loss: LossWeights::default(),
            calibration_percentile: 0.95,
        }
    }
}

/// Training epochs for a round that shipped `2W+1` samples:
/// `floor(2000 / (2W+1))`, clamped to `[5, 16]`.
pub fn epochs_for_window(w: usize) -> usize {
    (2000 / (2 * w + 1)).clamp(5, 16)
}

/// Trains a copy of `model` and returns it. See [`train_with_history`].
pub fn train(model: &DenseModel, data: &TrainBatch, config: &TrainConfig, seed: u64) -> Result<DenseModel> {
    train_with_history(model, data, config, seed).map(|(m, _)| m)
}

/// Gradient descent over `data`, returning the trained model and the mean
/// loss seen in each epoch. `seed` drives the minibatch order. Autoencoders
/// are recalibrated afterwards on the normal part of `data`.
pub fn train_with_history(
    model: &DenseModel,
    data: &TrainBatch,
    config: &TrainConfig,
    seed: u64,
) -> Result<(DenseModel, Vec<f64>)> {
    if config.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    check_batch(model, &data.inputs, &data.labels)?;
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let chunk = config.batch_size.unwrap_or(data.len()).clamp(1, data.len());
    let mut scratch = Scratch::new(&model);
    let mut history = Vec::with_capacity(config.epochs);
    let mut inputs: Vec<&[f64]> = Vec::with_capacity(chunk);
    let mut labels: Vec<bool> = Vec::with_capacity(chunk);

    for _ in 0..config.epochs {
        if config.batch_size.is_some() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for idx in order.chunks(chunk) {
            inputs.clear();
            labels.clear();
            for &i in idx {
                inputs.push(&data.inputs[i]);
                labels.push(data.labels[i]);
            }
            let (loss, grads) = gradient_over(&model, &inputs, &labels, config.loss, &mut scratch);
            if !loss.is_finite() {
                return Err(Error::Divergence);
            }
            epoch_loss += loss * idx.len() as f64;
            apply_step(&mut model, &grads, config.learning_rate);
        }
        history.push(epoch_loss / data.len() as f64);
    }
    if model
        .layers
        .iter()
        .any(|l| l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()))
    {
        return Err(Error::Divergence);
    }
    if model.head == Head::Autoencoder {
        calibrate(&mut model, data, config.calibration_percentile)?;
    }
    Ok((model, history))
}

fn apply_step(model: &mut DenseModel, grads: &Gradients, lr: f64) {
    if lr == 0.0 {
        return;
    }
    for (l, layer) in model.layers.iter_mut().enumerate() {
        for (w, g) in layer.weights.iter_mut().zip(&grads.weights[l]) {
            *w = to_f32_grid(*w - lr * g);
        }
        for (b, g) in layer.biases.iter_mut().zip(&grads.biases[l]) {
            *b = to_f32_grid(*b - lr * g);
        }
    }
}

/// Sets `e_ref` to the given percentile (nearest rank) of reconstruction
/// errors over the normal samples of `data`. Leaves it untouched when
/// `data` has no normal sample.
pub fn calibrate(model: &mut DenseModel, data: &TrainBatch, percentile: f64) -> Result<()> {
    let mut errors = data
        .inputs
        .iter()
        .zip(&data.labels)
        .filter(|(_, &s)| !s)
        .map(|(x, _)| model.reconstruction_error(x))
        .collect::<Result<Vec<f64>>>()?;
    if errors.is_empty() {
        return Ok(());
    }
    errors.sort_by(f64::total_cmp);
    let rank = ((percentile.clamp(0.0, 1.0) * errors.len() as f64).ceil() as usize).clamp(1, errors.len());
    model.e_ref = Some(errors[rank - 1].max(1e-12));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_classifier_outputs_half() {
        let m = DenseModel::zeros(&[3, 4, 1], Head::Classifier).unwrap();
        assert_eq!(m.forward(&[0.2, 0.4, 0.9]).unwrap(), vec![0.5]);
    }

    #[test]
    fn zero_autoencoder_outputs_zeros() {
        let m = DenseModel::zeros(&[3, 2, 3], Head::Autoencoder).unwrap();
        assert_eq!(m.forward(&[0.2, 0.4, 0.9]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_autoencoder_reproduces_input() {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let m = DenseModel::from_parts(
            &[2, 2, 2],
            Head::Autoencoder,
            vec![(eye.clone(), vec![0.0; 2]), (eye, vec![0.0; 2])],
        )
        .unwrap();
        assert_eq!(m.forward(&[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = DenseModel::zeros(&[3, 1], Head::Classifier).unwrap();
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, actual: 1 })
        ));
    }

    #[test]
    fn head_shape_rules() {
        assert!(DenseModel::zeros(&[3, 2, 4], Head::Autoencoder).is_err());
        assert!(DenseModel::zeros(&[3, 2], Head::Classifier).is_err());
        assert!(DenseModel::zeros(&[3], Head::Classifier).is_err());
    }

    fn scaled_identity(scale: f64) -> DenseModel {
        // output = scale * x for x >= 0
        DenseModel::from_parts(
            &[2, 2, 2],
            Head::Autoencoder,
            vec![
                (vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 2]),
                (vec![scale, 0.0, 0.0, scale], vec![0.0; 2]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn fault_score_fixed_points() {
        let mut m = scaled_identity(1.0);
        assert!(matches!(m.fault_score(&[0.5, 0.5]), Err(Error::Uncalibrated)));
        m.set_e_ref(0.01).unwrap();
        assert_eq!(m.fault_score(&[0.5, 0.5]).unwrap(), 0.0);

        // x = (1, 1), output = (0.5, 0.5): e = 0.25
        let mut m = scaled_identity(0.5);
        m.set_e_ref(0.25).unwrap();
        assert_eq!(m.fault_score(&[1.0, 1.0]).unwrap(), 0.5);
        m.set_e_ref(0.25 / 3.0).unwrap();
        assert!((m.fault_score(&[1.0, 1.0]).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn classify_thresholds() {
        let mut m = scaled_identity(0.0);
        // e = 0.5, e_ref chosen so the score is 0.9
        m.set_e_ref(0.5 / 9.0).unwrap();
        let x = [1.0, 0.0];
        assert!((m.fault_score(&x).unwrap() - 0.9).abs() < 1e-12);
        assert!(m.classify(&x, 0.5).unwrap());
        assert!(!m.classify(&x, 1.0).unwrap());
        assert!(m.classify(&x, 0.0).unwrap());
    }

    #[test]
    fn ae_loss_examples() {
        let w = LossWeights::default();
        let x = [1.0, 2.0, 3.0];
        assert_eq!(ae_loss(&x, &x, false, w).unwrap(), 0.0);
        assert_eq!(ae_loss(&x, &x, true, w).unwrap(), 0.0);
        // ||x - x̂||² / N = (4 + 4) / 4 = 2
        let a = [0.0, 0.0, 0.0, 0.0];
        let b = [2.0, 2.0, 0.0, 0.0];
        assert_eq!(ae_loss(&a, &b, false, w).unwrap(), 2.0);
        assert!((ae_loss(&a, &b, true, w).unwrap() + 0.2).abs() < 1e-15);
        assert!(ae_loss(&a, &x, false, w).is_err());
    }

    #[test]
    fn epoch_rule() {
        assert_eq!(epochs_for_window(200), 5);
        assert_eq!(epochs_for_window(0), 16);
        assert_eq!(epochs_for_window(62), 16);
        assert_eq!(epochs_for_window(100), 9);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let m = DenseModel::new(&[4, 3, 4], Head::Autoencoder, 1).unwrap();
        let batch = TrainBatch::new(vec![vec![0.1, 0.2, 0.3, 0.4]; 5], vec![false; 5]).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, ..TrainConfig::default() };
        let out = train(&m, &batch, &cfg, 7).unwrap();
        assert_eq!(out.layers, m.layers);
    }

    #[test]
    fn train_rejects_empty_and_divergent() {
        let m = DenseModel::new(&[2, 2], Head::Classifier.clone(), 1);
        assert!(m.is_err());
        let m = DenseModel::new(&[2, 3, 1], Head::Classifier, 1).unwrap();
        assert!(matches!(
            train(&m, &TrainBatch::default(), &TrainConfig::default(), 0),
            Err(Error::EmptyBatch)
        ));
        let ae = DenseModel::new(&[2, 3, 2], Head::Autoencoder, 1).unwrap();
        let batch = TrainBatch::new(vec![vec![5.0, -3.0]; 4], vec![false; 4]).unwrap();
        let cfg = TrainConfig { learning_rate: 1e6, epochs: 50, batch_size: None, ..TrainConfig::default() };
        assert!(matches!(train(&ae, &batch, &cfg, 0), Err(Error::Divergence)));
    }

    #[test]
    fn zero_error_batch_has_zero_gradient() {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let m = DenseModel::from_parts(
            &[2, 2, 2],
            Head::Autoencoder,
            vec![(eye.clone(), vec![0.0; 2]), (eye, vec![0.0; 2])],
        )
        .unwrap();
        let batch = TrainBatch::new(vec![vec![0.3, 0.7], vec![0.1, 0.2]], vec![false, true]).unwrap();
        let g = gradient(&m, &batch, LossWeights::default()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn zero_fault_weight_annihilates_faulty_terms() {
        let m = DenseModel::new(&[3, 4, 3], Head::Autoencoder, 5).unwrap();
        let w = LossWeights { fault: 0.0, normal: 1.0 };
        let normal = vec![vec![0.1, 0.5, 0.9]];
        let faulty = vec![vec![0.9, 0.1, 0.4], vec![0.3, 0.3, 0.8]];
        let only_normal = TrainBatch::new(normal.clone(), vec![false]).unwrap();
        let only_faulty = TrainBatch::new(faulty.clone(), vec![true, true]).unwrap();
        assert_eq!(gradient(&m, &only_faulty, w).unwrap().max_abs(), 0.0);
        // mixing in faulty samples only rescales the normal contribution
        let mixed = TrainBatch::new(
            normal.into_iter().chain(faulty).collect(),
            vec![false, true, true],
        )
        .unwrap();
        let g_normal = gradient(&m, &only_normal, w).unwrap();
        let g_mixed = gradient(&m, &mixed, w).unwrap();
        for (a, b) in g_normal.weights.iter().flatten().zip(g_mixed.weights.iter().flatten()) {
            assert!((a / 3.0 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn calibration_uses_normal_percentile() {
        let mut m = scaled_identity(0.0);
        // errors are x² / 2 for x = (v, 0)
        let inputs: Vec<Vec<f64>> = (1..=20).map(|v| vec![v as f64, 0.0]).collect();
        let mut labels = vec![false; 20];
        labels[19] = true;
        let batch = TrainBatch::new(inputs, labels).unwrap();
        calibrate(&mut m, &batch, 0.95).unwrap();
        // 19 normal errors, rank ceil(0.95 * 19) = 19 -> v = 19
        assert_eq!(m.e_ref(), Some(19.0 * 19.0 / 2.0));
    }
}
