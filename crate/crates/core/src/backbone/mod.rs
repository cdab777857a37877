//! Volumetric regressor contract and the reference convolutional backbone.
//!
//! A [`RegressorModel`] maps a volume to a `d_m`-dimensional embedding and
//! reads an age (in years) out of it with a final linear head:
//! `predict_age = head(embed(x))`. The teacher is a trained regressor; the
//! student reuses its `embed` map with the head removed.

pub mod checkpoint;
pub(crate) mod layers;
pub mod optim;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seed;
use crate::volume::{Shape, Volume};
use layers::{relu_backward, relu_inplace, Conv3d, Dense};
pub use optim::{LossHistory, OptimizerConfig, TrainError, Trainable};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("model is frozen")]
    Frozen,
    #[error("parameter count mismatch: descriptor needs {expected}, got {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("input shape {found:?} does not match model input {expected:?}")]
    InputShape { expected: Shape, found: Shape },
}

/// Final linear readout `age = bias + weights · e`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearHead {
    pub fn apply(&self, embedding: &[f64]) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(embedding)
                .map(|(w, e)| w * e)
                .sum::<f64>()
    }
}

pub trait RegressorModel {
    /// Serializable architecture description.
    fn descriptor(&self) -> serde_json::Value;
    fn embed_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    /// Mutable parameters; fails once the model is frozen.
    fn params_mut(&mut self) -> Result<&mut [f64], ModelError>;
    fn is_frozen(&self) -> bool;
    fn freeze(&mut self);
    fn head(&self) -> LinearHead;
    fn embed(&self, input: &Volume) -> Vec<f64>;

    fn predict_age(&self, input: &Volume) -> f64 {
        self.head().apply(&self.embed(input))
    }

    /// Forward pass, then backward with `dloss(prediction)` as the upstream
    /// gradient; parameter gradients are added into `grad`. Returns the
    /// prediction.
    fn backprop(&self, input: &Volume, dloss: &mut dyn FnMut(f64) -> f64, grad: &mut [f64]) -> f64;
}

/// SHA-256 over the little-endian f64 bytes of a parameter vector.
pub fn params_sha256(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub trait Loss {
    fn value(&self, pred: f64, target: f64) -> f64;
    fn derivative(&self, pred: f64, target: f64) -> f64;
}

/// Absolute error; the subgradient at the kink is 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mae;

impl Loss for Mae {
    fn value(&self, pred: f64, target: f64) -> f64 {
        (pred - target).abs()
    }

    fn derivative(&self, pred: f64, target: f64) -> f64 {
        sign(pred - target)
    }
}

/// `signum` with `sign(0) = 0`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Activation between the two perceptron layers.
///
/// With `Identity` the map from pooled features to age is linear, so a region
/// shown in isolation moves the prediction in the same direction it does
/// inside the whole brain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

pub const REFERENCE_KIND: &str = "conv3d-regressor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDescriptor {
    pub kind: String,
    pub input_shape: Shape,
    /// Output channels of each stride-2 convolution stage.
    pub channels: Vec<usize>,
    pub hidden: usize,
    pub hidden_activation: Activation,
    pub embed_dim: usize,
    /// Inputs are divided by this constant before the first convolution.
    pub input_scale: f64,
    /// Multiplies the head weights, so the readout works in years while the
    /// trainable weights stay O(1).
    pub age_scale: f64,
}

impl ArchDescriptor {
    pub fn reference(shape: Shape, embed_dim: usize) -> Self {
        ArchDescriptor {
            kind: REFERENCE_KIND.to_string(),
            input_shape: shape,
            channels: vec![4, 8, 16],
            hidden: 32,
            hidden_activation: Activation::Identity,
            embed_dim,
            input_scale: 1.0,
            age_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidArchitecture(m));
        if self.kind != REFERENCE_KIND {
            return bad(format!("unknown model kind {:?}", self.kind));
        }
        if self.embed_dim < 4 {
            return bad(format!("embed_dim must be >= 4, got {}", self.embed_dim));
        }
        if self.channels.is_empty() || self.channels.contains(&0) || self.hidden == 0 {
            return bad("channels and hidden width must be positive".into());
        }
        let min = 1usize << self.channels.len();
        let s = self.input_shape;
        if s.d < min || s.h < min || s.w < min {
            return bad(format!(
                "input {:?} too small for {} downsampling stages (need >= {min} per axis)",
                <[usize; 3]>::from(s),
                self.channels.len()
            ));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0)
            || !(self.age_scale.is_finite() && self.age_scale > 0.0)
        {
            return bad("input_scale and age_scale must be positive".into());
        }
        Ok(())
    }
}

/// Strided 3D convolutions, global average pooling, a two-layer perceptron
/// producing the embedding, and a linear age head.
#[derive(Debug, Clone)]
pub struct ConvRegressor {
    arch: ArchDescriptor,
    params: Vec<f64>,
    frozen: bool,
    convs: Vec<Conv3d>,
    fc1: Dense,
    fc2: Dense,
}

struct Offsets {
    convs: Vec<usize>,
    fc1: usize,
    fc2: usize,
    head: usize,
    total: usize,
}

struct Trace {
    cols: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    embedding: Vec<f64>,
}

impl ConvRegressor {
    fn build(arch: ArchDescriptor) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut convs = Vec::new();
        let mut shape = arch.input_shape;
        let mut in_c = 1;
        for &c in &arch.channels {
            let conv = Conv3d::new(in_c, c, shape);
            shape = conv.out_shape;
            in_c = c;
            convs.push(conv);
        }
        let fc1 = Dense::new(in_c, arch.hidden);
        let fc2 = Dense::new(arch.hidden, arch.embed_dim);
        Ok(ConvRegressor {
            arch,
            params: Vec::new(),
            frozen: false,
            convs,
            fc1,
            fc2,
        })
    }

    /// Freshly initialised model: He-normal convolutions and hidden layer,
    /// `1/fan_in` variance for the embedding and head, zero biases.
    pub fn new(arch: ArchDescriptor, seed: u64) -> Result<Self, ModelError> {
        let mut model = Self::build(arch)?;
        let off = model.offsets();
        let mut rng = seed::rng(seed);
        let mut params = vec![0.0; off.total];
        let mut fill = |range: std::ops::Range<usize>, var: f64| {
            for p in &mut params[range] {
                let z: f64 = rng.sample(StandardNormal);
                *p = optim::to_f32_grid(z * var.sqrt());
            }
        };
        for (conv, &o) in model.convs.iter().zip(&off.convs) {
            fill(o..o + conv.out_c * conv.k_len(), 2.0 / conv.k_len() as f64);
        }
        fill(off.fc1..off.fc1 + model.fc1.n_in * model.fc1.n_out, 2.0 / model.fc1.n_in as f64);
        fill(off.fc2..off.fc2 + model.fc2.n_in * model.fc2.n_out, 1.0 / model.fc2.n_in as f64);
        let d_m = model.arch.embed_dim;
        fill(off.head..off.head + d_m, 1.0 / d_m as f64);
        model.params = params;
        Ok(model)
    }

    pub fn from_parts(arch: ArchDescriptor, params: Vec<f64>) -> Result<Self, ModelError> {
        let mut model = Self::build(arch)?;
        let expected = model.offsets().total;
        if params.len() != expected {
            return Err(ModelError::ParamCount {
                expected,
                found: params.len(),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self) -> Offsets {
        let mut convs = Vec::new();
        let mut at = 0;
        for c in &self.convs {
            convs.push(at);
            at += c.n_params();
        }
        let fc1 = at;
        at += self.fc1.n_params();
        let fc2 = at;
        at += self.fc2.n_params();
        let head = at;
        at += self.arch.embed_dim + 1;
        Offsets {
            convs,
            fc1,
            fc2,
            head,
            total: at,
        }
    }

    /// Set the head bias (in years), e.g. to the mean training age.
    pub fn set_head_bias(&mut self, bias: f64) -> Result<(), ModelError> {
        let i = self.offsets().total - 1;
        self.params_mut()?[i] = optim::to_f32_grid(bias);
        Ok(())
    }

    /// Zero the head weights, leaving `predict_age` equal to the head bias.
    pub fn zero_head_weights(&mut self) -> Result<(), ModelError> {
        let off = self.offsets();
        let d_m = self.arch.embed_dim;
        self.params_mut()?[off.head..off.head + d_m].fill(0.0);
        Ok(())
    }

    fn trace(&self, input: &Volume) -> Trace {
        assert_eq!(
            input.shape(),
            self.arch.input_shape,
            "input shape must match the model"
        );
        let off = self.offsets();
        let scale = 1.0 / self.arch.input_scale;
        let mut x: Vec<f64> = input.data().iter().map(|&v| v as f64 * scale).collect();
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut acts = Vec::with_capacity(self.convs.len());
        for (conv, &o) in self.convs.iter().zip(&off.convs) {
            let col = conv.im2col(&x);
            let out = conv.forward_relu(&self.params[o..o + conv.n_params()], &col);
            cols.push(col);
            acts.push(out.clone());
            x = out;
        }
        let last = self.convs.last().expect("at least one stage");
        let p = last.p_len();
        let pooled: Vec<f64> = x.chunks(p).map(|c| c.iter().sum::<f64>() / p as f64).collect();
        let mut hidden = self
            .fc1
            .forward(&self.params[off.fc1..off.fc1 + self.fc1.n_params()], &pooled);
        if self.arch.hidden_activation == Activation::Relu {
            relu_inplace(&mut hidden);
        }
        let embedding = self
            .fc2
            .forward(&self.params[off.fc2..off.fc2 + self.fc2.n_params()], &hidden);
        Trace {
            cols,
            acts,
            pooled,
            hidden,
            embedding,
        }
    }
}

impl RegressorModel for ConvRegressor {
    fn descriptor(&self) -> serde_json::Value {
        serde_json::to_value(&self.arch).expect("descriptor serializes")
    }

    fn embed_dim(&self) -> usize {
        self.arch.embed_dim
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> Result<&mut [f64], ModelError> {
        if self.frozen {
            return Err(ModelError::Frozen);
        }
        Ok(&mut self.params)
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn freeze(&mut self) {
        self.frozen = true;
    }

    fn head(&self) -> LinearHead {
        let off = self.offsets();
        let d_m = self.arch.embed_dim;
        LinearHead {
            weights: self.params[off.head..off.head + d_m]
                .iter()
                .map(|w| w * self.arch.age_scale)
                .collect(),
            bias: self.params[off.head + d_m],
        }
    }

    fn embed(&self, input: &Volume) -> Vec<f64> {
        self.trace(input).embedding
    }

    fn backprop(&self, input: &Volume, dloss: &mut dyn FnMut(f64) -> f64, grad: &mut [f64]) -> f64 {
        let off = self.offsets();
        let t = self.trace(input);
        let head = self.head();
        let pred = head.apply(&t.embedding);
        let g = dloss(pred);
        if g == 0.0 {
            return pred;
        }
        let d_m = self.arch.embed_dim;
        let s = self.arch.age_scale;
        for i in 0..d_m {
            grad[off.head + i] += g * s * t.embedding[i];
        }
        grad[off.head + d_m] += g;
        let de: Vec<f64> = head.weights.iter().map(|w| g * w).collect();

        let fc2_p = off.fc2..off.fc2 + self.fc2.n_params();
        let mut dh = self
            .fc2
            .backward(&self.params[fc2_p.clone()], &t.hidden, &de, &mut grad[fc2_p]);
        if self.arch.hidden_activation == Activation::Relu {
            relu_backward(&t.hidden, &mut dh);
        }
        let fc1_p = off.fc1..off.fc1 + self.fc1.n_params();
        let dpool = self
            .fc1
            .backward(&self.params[fc1_p.clone()], &t.pooled, &dh, &mut grad[fc1_p]);

        let last = self.convs.last().expect("at least one stage");
        let p = last.p_len();
        let mut dact: Vec<f64> = dpool
            .iter()
            .flat_map(|&d| std::iter::repeat_n(d / p as f64, p))
            .collect();
        for (stage, conv) in self.convs.iter().enumerate().rev() {
            let range = off.convs[stage]..off.convs[stage] + conv.n_params();
            let din = conv.backward_relu(
                &self.params[range.clone()],
                &t.cols[stage],
                &t.acts[stage],
                &mut dact,
                &mut grad[range],
                stage > 0,
            );
            match din {
                Some(d) => dact = d,
                None => break,
            }
        }
        pred
    }
}

/// Desk-scale reference backbone with unit input/age scaling.
pub fn reference_backbone(shape: Shape, embed_dim: usize, seed: u64) -> Result<ConvRegressor, ModelError> {
    ConvRegressor::new(ArchDescriptor::reference(shape, embed_dim), seed)
}

struct RegressionObjective<'a, M: RegressorModel + ?Sized> {
    model: &'a mut M,
    data: &'a [(&'a Volume, f64)],
    loss: &'a dyn Loss,
}

impl<M: RegressorModel + ?Sized> Trainable for RegressionObjective<'_, M> {
    fn params(&self) -> &[f64] {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.model.params_mut().expect("checked unfrozen before training")
    }

    fn n_samples(&self) -> usize {
        self.data.len()
    }

    fn term_names(&self) -> Vec<&'static str> {
        vec!["loss"]
    }

    fn sample(&self, idx: usize, weight: f64, grad: &mut [f64]) -> Vec<f64> {
        let (volume, target) = self.data[idx];
        let mut value = 0.0;
        let loss = self.loss;
        self.model.backprop(
            volume,
            &mut |pred| {
                value = loss.value(pred, target);
                weight * loss.derivative(pred, target)
            },
            grad,
        );
        vec![value]
    }
}

/// Mini-batch training of `model` on `(volume, target)` pairs.
pub fn train_regressor<M: RegressorModel + ?Sized>(
    model: &mut M,
    data: &[(&Volume, f64)],
    loss: &dyn Loss,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<LossHistory, TrainError> {
    if model.is_frozen() {
        return Err(TrainError::Frozen);
    }
    let mut objective = RegressionObjective { model, data, loss };
    optim::train(&mut objective, cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> ArchDescriptor {
        ArchDescriptor {
            channels: vec![2, 3],
            hidden: 5,
            ..ArchDescriptor::reference(Shape::new(6, 5, 4), 4)
        }
    }

    fn volume(shape: Shape, seed: u64) -> Volume {
        let mut rng = seed::rng(seed);
        let data = (0..shape.len()).map(|_| rng.random_range(0.0f32..2.0)).collect();
        Volume::new(shape, data).unwrap()
    }

    #[test]
    fn reference_contract() {
        let m = reference_backbone(Shape::cube(32), 32, 0).unwrap();
        assert_eq!(m.embed(&Volume::zeros(Shape::cube(32))).len(), 32);
        assert!(m.n_params() <= 100_000, "{}", m.n_params());
        let again = reference_backbone(Shape::cube(32), 32, 0).unwrap();
        assert_eq!(m.params(), again.params());
        assert!(m.params().iter().all(|&p| p == p as f32 as f64));
    }

    #[test]
    fn rejects_bad_architectures() {
        assert!(reference_backbone(Shape::cube(32), 3, 0).is_err());
        assert!(reference_backbone(Shape::cube(4), 8, 0).is_err());
        let m = reference_backbone(Shape::cube(8), 8, 0).unwrap();
        assert!(ConvRegressor::from_parts(m.arch().clone(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_head_predicts_bias() {
        let mut m = ConvRegressor::new(tiny_arch(), 1).unwrap();
        m.zero_head_weights().unwrap();
        m.set_head_bias(42.5).unwrap();
        for s in 0..3 {
            assert_eq!(m.predict_age(&volume(Shape::new(6, 5, 4), s)), 42.5);
        }
    }

    /// Central finite differences on every parameter of a tiny model.
    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Identity, Activation::Relu] {
            check_gradients(ArchDescriptor {
                age_scale: 3.0,
                input_scale: 1.5,
                hidden_activation: act,
                ..tiny_arch()
            });
        }
    }

    fn check_gradients(arch: ArchDescriptor) {
        let mut m = ConvRegressor::new(arch, 4).unwrap();
        m.set_head_bias(1.0).unwrap();
        let v = volume(Shape::new(6, 5, 4), 9);
        let target = -7.0;
        let mut grad = vec![0.0; m.n_params()];
        m.backprop(&v, &mut |p| Mae.derivative(p, target), &mut grad);
        let base = m.params().to_vec();
        let h = 1e-4;
        let mut checked = 0;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let f = |p: Vec<f64>| {
                let mm = ConvRegressor::from_parts(m.arch().clone(), p).unwrap();
                Mae.value(mm.predict_age(&v), target)
            };
            let fd = (f(plus) - f(minus)) / (2.0 * h);
            let tol = 1e-3 * fd.abs().max(grad[i].abs()).max(1e-2);
            assert!((fd - grad[i]).abs() <= tol, "param {i}: analytic {} fd {fd}", grad[i]);
            checked += 1;
        }
        assert_eq!(checked, m.n_params());
    }

    #[test]
    fn frozen_model_rejects_training() {
        let mut m = ConvRegressor::new(tiny_arch(), 1).unwrap();
        m.freeze();
        let v = volume(Shape::new(6, 5, 4), 0);
        let r = train_regressor(&mut m, &[(&v, 1.0)], &Mae, &OptimizerConfig::default(), 0);
        assert_eq!(r.unwrap_err(), TrainError::Frozen);
        assert!(m.set_head_bias(1.0).is_err());
        let a = m.predict_age(&v);
        assert_eq!(a.to_bits(), m.predict_age(&v).to_bits());
    }

    #[test]
    fn training_reduces_error_on_constant_target() {
        let mut m = ConvRegressor::new(tiny_arch(), 2).unwrap();
        let vols: Vec<Volume> = (0..8).map(|s| volume(Shape::new(6, 5, 4), s)).collect();
        let data: Vec<(&Volume, f64)> = vols.iter().map(|v| (v, 3.0)).collect();
        let cfg = OptimizerConfig {
            lr: 1e-2,
            epochs: 30,
            ..OptimizerConfig::default()
        };
        let h = train_regressor(&mut m, &data, &Mae, &cfg, 0).unwrap();
        let t = h.totals();
        assert!(t.last().unwrap() < &t[0], "{t:?}");
    }

    #[test]
    fn zero_lr_leaves_parameters_untouched() {
        let mut m = ConvRegressor::new(tiny_arch(), 2).unwrap();
        let before = m.params().to_vec();
        let vols: Vec<Volume> = (0..5).map(|s| volume(Shape::new(6, 5, 4), s)).collect();
        let data: Vec<(&Volume, f64)> = vols.iter().map(|v| (v, 3.0)).collect();
        let cfg = OptimizerConfig {
            lr: 0.0,
            epochs: 3,
            ..OptimizerConfig::default()
        };
        let h = train_regressor(&mut m, &data, &Mae, &cfg, 0).unwrap();
        assert_eq!(m.params(), &before[..]);
        let t = h.totals();
        assert!(t.iter().all(|&x| x == t[0]));
    }

    #[test]
    fn training_is_deterministic() {
        let vols: Vec<Volume> = (0..6).map(|s| volume(Shape::new(6, 5, 4), s)).collect();
        let data: Vec<(&Volume, f64)> = vols.iter().enumerate().map(|(i, v)| (v, i as f64)).collect();
        let cfg = OptimizerConfig {
            lr: 1e-3,
            epochs: 4,
            ..OptimizerConfig::default()
        };
        let run = || {
            let mut m = ConvRegressor::new(tiny_arch(), 5).unwrap();
            let h = train_regressor(&mut m, &data, &Mae, &cfg, 11).unwrap();
            (h, params_sha256(m.params()))
        };
        assert_eq!(run(), run());
    }
}
