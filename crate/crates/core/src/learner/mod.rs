//! The CVR model: an embedding + MLP network trained with per-sample weighted
//! cross-entropy and Adam, in double precision.

pub mod checkpoint;
mod network;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use network::{FeatureSchema, NetConfig, Network, Standardizer, Workspace};

use crate::datagen::{sigmoid, ClickEvent, Features};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_strength: f64,
    pub batch_size: usize,
    /// Predictions are clamped to `[clamp_eps, 1 - clamp_eps]`.
    pub clamp_eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Passes over each chunk of training data.
    pub passes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            l2_strength: 1e-6,
            batch_size: 1024,
            clamp_eps: 1e-7,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            passes: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("must be > 0, got {v}")));
            }
        }
        if !(self.l2_strength.is_finite() && self.l2_strength >= 0.0) {
            return Err(Error::config("l2_strength", "must be finite and >= 0"));
        }
        for (field, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(field, format!("must be in [0, 1), got {v}")));
            }
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::config("clamp_eps", format!("must be in (0, 0.5), got {}", self.clamp_eps)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.passes == 0 {
            return Err(Error::config("passes", "must be >= 1"));
        }
        Ok(())
    }
}

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` along `grad`.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], config: &TrainConfig) {
        debug_assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
    }
}

/// Labeled, weighted training examples.
#[derive(Debug, Clone)]
pub struct WeightedBatch<'a> {
    features: Vec<&'a Features>,
    labels: Vec<u8>,
    weights: Vec<f64>,
}

impl<'a> WeightedBatch<'a> {
    pub fn new(features: Vec<&'a Features>, labels: Vec<u8>, weights: Vec<f64>) -> Result<Self> {
        if features.len() != labels.len() || labels.len() != weights.len() {
            return Err(Error::Input(format!(
                "batch lengths differ: {} features, {} labels, {} weights",
                features.len(),
                labels.len(),
                weights.len()
            )));
        }
        if let Some(y) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Input(format!("label {y} is not binary")));
        }
        check_weights(&weights)?;
        Ok(WeightedBatch {
            features,
            labels,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[&'a Features] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    match weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        Some(i) => Err(Error::Numeric(format!("weight {} at position {i} is not finite and >= 0", weights[i]))),
        None => Ok(()),
    }
}

fn ce_term(p: f64, y: u8) -> f64 {
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Data term `-Σ w·[y ln p + (1-y) ln(1-p)]` of the weighted cross-entropy.
///
/// Zero-weight samples contribute exactly zero, even at `p ∈ {0, 1}`.
pub fn weighted_ce(probs: &[f64], labels: &[u8], weights: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() || labels.len() != weights.len() {
        return Err(Error::Input("probs, labels and weights must have equal length".into()));
    }
    check_weights(weights)?;
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Numeric(format!("probability {p} outside [0, 1]")));
    }
    Ok(probs
        .iter()
        .zip(labels)
        .zip(weights)
        .filter(|(_, &w)| w != 0.0)
        .map(|((&p, &y), &w)| w * ce_term(p, y))
        .sum())
}

pub(crate) fn clamp_prob(z: f64, eps: f64) -> (f64, bool) {
    let p = sigmoid(z);
    if p < eps {
        (eps, true)
    } else if p > 1.0 - eps {
        (1.0 - eps, true)
    } else {
        (p, false)
    }
}

/// Binary CVR model `f_θ(x) = clamp(σ(net(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    net: Network,
    clamp_eps: f64,
}

impl MlpModel {
    pub fn new(schema: FeatureSchema, config: NetConfig, clamp_eps: f64, seed: u64) -> Result<Self> {
        Self::from_network(Network::new(schema, config, 1, seed)?, clamp_eps)
    }

    pub fn from_network(net: Network, clamp_eps: f64) -> Result<Self> {
        if net.n_outputs() != 1 {
            return Err(Error::Input(format!("CVR model needs 1 output, network has {}", net.n_outputs())));
        }
        if !(clamp_eps > 0.0 && clamp_eps < 0.5) {
            return Err(Error::config("clamp_eps", "must be in (0, 0.5)"));
        }
        Ok(MlpModel { net, clamp_eps })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn clamp_eps(&self) -> f64 {
        self.clamp_eps
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        checkpoint::Checkpoint::new("cvr", self.net.clone(), self.clamp_eps).save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let ck = checkpoint::Checkpoint::load(path)?.expect_kind("cvr")?;
        Self::from_network(ck.network, ck.clamp_eps)
    }

    /// Zero the final layer so every prediction starts at 0.5.
    pub fn zero_output_layer(&mut self) {
        let range = self.net.output_layer();
        self.net.params_mut()[range].iter_mut().for_each(|p| *p = 0.0);
    }

    pub fn logit(&self, x: &Features, ws: &mut Workspace) -> Result<f64> {
        Ok(self.net.forward(x, ws)?[0])
    }

    pub fn forward(&self, x: &Features) -> Result<f64> {
        let mut ws = self.net.workspace();
        self.forward_with(x, &mut ws)
    }

    pub fn forward_with(&self, x: &Features, ws: &mut Workspace) -> Result<f64> {
        Ok(clamp_prob(self.logit(x, ws)?, self.clamp_eps).0)
    }

    pub fn predict_many<'a>(&self, xs: impl IntoIterator<Item = &'a Features>) -> Result<Vec<f64>> {
        let mut ws = self.net.workspace();
        xs.into_iter().map(|x| self.forward_with(x, &mut ws)).collect()
    }

    /// Objective `mean_i(w_i·ce_i) + l2·‖θ‖²` and its gradient.
    pub fn loss_and_grad(&self, batch: &WeightedBatch<'_>, l2: f64) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.net.params().len()];
        let mut ws = self.net.workspace();
        let eps = self.clamp_eps;
        let data = self.net.accumulate(batch.features(), &mut ws, &mut grad, |i, logits, dlogits| {
            let w = batch.weights[i];
            if w == 0.0 {
                return Ok(0.0);
            }
            let y = batch.labels[i];
            let (p, clamped) = clamp_prob(logits[0], eps);
            if !clamped {
                dlogits[0] = w * (p - f64::from(y));
            }
            Ok(w * ce_term(p, y))
        })?;
        let n = batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        let penalty = self.net.l2_penalty(l2, &mut grad);
        Ok((data / n + penalty, grad))
    }
}

/// Apply one Adam step to `net` along `grad`, refusing non-finite losses.
pub fn apply_update(net: &mut Network, loss: f64, grad: &[f64], adam: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        let max_grad = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        return Err(Error::Training {
            step: adam.step() + 1,
            loss,
            detail: format!("max |grad| = {max_grad}"),
        });
    }
    adam.update(net.params_mut(), grad, config);
    Ok(())
}

/// One Adam step on the weighted-CE objective; returns the pre-update loss.
pub fn train_step(model: &mut MlpModel, batch: &WeightedBatch<'_>, adam: &mut AdamState, config: &TrainConfig) -> Result<f64> {
    let (loss, grad) = model.loss_and_grad(batch, config.l2_strength)?;
    apply_update(&mut model.net, loss, &grad, adam, config)?;
    Ok(loss)
}

/// A model trainable on samples of type `S` by mini-batch Adam.
pub trait Trainable<S> {
    /// Objective averaged over `batch` plus `l2·‖θ‖²`, with its gradient.
    fn batch_loss_and_grad(&self, batch: &[&S], l2: f64) -> Result<(f64, Vec<f64>)>;
    fn trainable_network(&mut self) -> &mut Network;
}

impl Trainable<ClickEvent> for MlpModel {
    /// Unit-weight cross-entropy against the eventual label of each click.
    fn batch_loss_and_grad(&self, batch: &[&ClickEvent], l2: f64) -> Result<(f64, Vec<f64>)> {
        let features = batch.iter().map(|e| &e.features).collect();
        let labels = batch.iter().map(|e| e.label()).collect();
        let weighted = WeightedBatch::new(features, labels, vec![1.0; batch.len()])?;
        self.loss_and_grad(&weighted, l2)
    }

    fn trainable_network(&mut self) -> &mut Network {
        &mut self.net
    }
}

/// `config.passes` passes of mini-batch Adam over `samples`, shuffled per pass
/// when `rng` is given and in order otherwise. Returns the mean batch loss of
/// the last pass.
pub fn fit<S, M: Trainable<S>>(
    model: &mut M,
    samples: &[S],
    adam: &mut AdamState,
    config: &TrainConfig,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<f64> {
    config.validate()?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut last = 0.0;
    for _ in 0..config.passes {
        if let Some(rng) = rng.as_deref_mut() {
            order.shuffle(rng);
        }
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&S> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grad) = model.batch_loss_and_grad(&batch, config.l2_strength)?;
            apply_update(model.trainable_network(), loss, &grad, adam, config)?;
            total += loss;
            batches += 1;
        }
        last = total / batches.max(1) as f64;
    }
    Ok(last)
}
