//! Feed-forward network with per-field embeddings and leaky-ReLU hidden layers.
//!
//! All parameters live in one flat `Vec<f64>`; tensors are contiguous ranges of
//! it. Dense weights are row-major `[fan_out][fan_in]`. The network emits raw
//! logits; heads and losses are layered on top by the model types.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::{ClickEvent, Features};
use crate::error::{Error, Result};

/// Declared input space of a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    /// Vocabulary size of each categorical field.
    pub categorical_vocab: Vec<usize>,
    pub n_continuous: usize,
}

impl FeatureSchema {
    pub fn discrete(cells: usize) -> Self {
        FeatureSchema {
            categorical_vocab: vec![cells],
            n_continuous: 0,
        }
    }

    pub fn continuous(dims: usize) -> Self {
        FeatureSchema {
            categorical_vocab: Vec::new(),
            n_continuous: dims,
        }
    }

    pub fn check(&self, x: &Features) -> Result<()> {
        if x.categorical.len() != self.categorical_vocab.len() {
            return Err(Error::Input(format!(
                "expected {} categorical fields, got {}",
                self.categorical_vocab.len(),
                x.categorical.len()
            )));
        }
        if let Some((field, (&id, &vocab))) = x
            .categorical
            .iter()
            .zip(&self.categorical_vocab)
            .enumerate()
            .find(|(_, (&id, &vocab))| id as usize >= vocab)
        {
            return Err(Error::Input(format!("categorical field {field}: id {id} outside vocabulary of {vocab}")));
        }
        if x.continuous.len() != self.n_continuous {
            return Err(Error::Input(format!(
                "expected {} continuous features, got {}",
                self.n_continuous,
                x.continuous.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            embedding_dim: 8,
            hidden: vec![256, 256, 128],
            leaky_slope: 0.01,
        }
    }
}

/// Fixed per-feature standardization of continuous inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dims: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dims],
            std: vec![1.0; dims],
        }
    }

    /// Column means and standard deviations over the given events.
    pub fn fit(events: &[ClickEvent], dims: usize) -> Self {
        let n = events.len().max(1) as f64;
        let mut mean = vec![0.0; dims];
        for e in events {
            for (m, v) in mean.iter_mut().zip(&e.features.continuous) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dims];
        for e in events {
            for ((s, v), m) in var.iter_mut().zip(&e.features.continuous).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    schema: FeatureSchema,
    config: NetConfig,
    n_outputs: usize,
    standardizer: Standardizer,
    params: Vec<f64>,
    embeddings: Vec<usize>,
    layers: Vec<Dense>,
}

/// Scratch buffers for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    dlogits: Vec<f64>,
}

impl Network {
    pub fn new(schema: FeatureSchema, config: NetConfig, n_outputs: usize, seed: u64) -> Result<Self> {
        let mut net = Self::layout(schema, config, n_outputs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = |sd: f64| Normal::new(0.0, sd).expect("positive sd");
        let emb = normal(0.05);
        for (f, &vocab) in net.schema.categorical_vocab.iter().enumerate() {
            let start = net.embeddings[f];
            for p in &mut net.params[start..start + vocab * net.config.embedding_dim] {
                *p = emb.sample(&mut rng);
            }
        }
        let last = net.layers.len() - 1;
        for (l, layer) in net.layers.clone().into_iter().enumerate() {
            let gain = if l == last { 1.0 } else { 2.0 };
            let dist = normal((gain / layer.fan_in as f64).sqrt());
            for p in &mut net.params[layer.w..layer.w + layer.fan_in * layer.fan_out] {
                *p = dist.sample(&mut rng);
            }
        }
        Ok(net)
    }

    /// Zero-filled network with the given shape.
    pub(crate) fn layout(schema: FeatureSchema, config: NetConfig, n_outputs: usize) -> Result<Self> {
        if n_outputs == 0 {
            return Err(Error::config("n_outputs", "must be >= 1"));
        }
        if config.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden", "layer widths must be >= 1"));
        }
        if !config.leaky_slope.is_finite() || config.leaky_slope < 0.0 {
            return Err(Error::config("leaky_slope", "must be finite and >= 0"));
        }
        let input_dim = schema.categorical_vocab.len() * config.embedding_dim + schema.n_continuous;
        if input_dim == 0 {
            return Err(Error::config("schema", "network has no inputs"));
        }
        let mut offset = 0;
        let mut embeddings = Vec::new();
        for &vocab in &schema.categorical_vocab {
            embeddings.push(offset);
            offset += vocab * config.embedding_dim;
        }
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for &fan_out in config.hidden.iter().chain(std::iter::once(&n_outputs)) {
            let w = offset;
            let b = w + fan_in * fan_out;
            offset = b + fan_out;
            layers.push(Dense { w, b, fan_in, fan_out });
            fan_in = fan_out;
        }
        let standardizer = Standardizer::identity(schema.n_continuous);
        Ok(Network {
            schema,
            config,
            n_outputs,
            standardizer,
            params: vec![0.0; offset],
            embeddings,
            layers,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn set_standardizer(&mut self, standardizer: Standardizer) -> Result<()> {
        let dims = self.schema.n_continuous;
        if standardizer.mean.len() != dims || standardizer.std.len() != dims {
            return Err(Error::Input(format!("standardizer must have {dims} entries")));
        }
        if standardizer.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Numeric("standardizer std must be finite and > 0".into()));
        }
        self.standardizer = standardizer;
        Ok(())
    }

    /// Named parameter tensors as ranges into [`Self::params`].
    pub fn tensors(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        for (f, (&start, &vocab)) in self.embeddings.iter().zip(&self.schema.categorical_vocab).enumerate() {
            out.push((format!("embedding.{f}"), start..start + vocab * self.config.embedding_dim));
        }
        for (l, d) in self.layers.iter().enumerate() {
            out.push((format!("dense.{l}.weight"), d.w..d.b));
            out.push((format!("dense.{l}.bias"), d.b..d.b + d.fan_out));
        }
        out
    }

    /// Range of the output layer's parameters (weights then bias).
    pub fn output_layer(&self) -> Range<usize> {
        let d = self.layers.last().expect("at least the output layer");
        d.w..d.b + d.fan_out
    }

    pub fn workspace(&self) -> Workspace {
        let mut acts = vec![vec![0.0; self.layers[0].fan_in]];
        acts.extend(self.layers.iter().map(|d| vec![0.0; d.fan_out]));
        let pre = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|d| vec![0.0; d.fan_out])
            .collect();
        let widest = self.layers.iter().map(|d| d.fan_in.max(d.fan_out)).max().unwrap_or(1);
        Workspace {
            acts,
            pre,
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
            dlogits: vec![0.0; self.n_outputs],
        }
    }

    /// Logits for one input; the workspace keeps the activations for [`Self::backward`].
    pub fn forward<'w>(&self, x: &Features, ws: &'w mut Workspace) -> Result<&'w [f64]> {
        self.schema.check(x)?;
        let d = self.config.embedding_dim;
        {
            let input = &mut ws.acts[0];
            for (f, &id) in x.categorical.iter().enumerate() {
                let row = self.embeddings[f] + id as usize * d;
                input[f * d..(f + 1) * d].copy_from_slice(&self.params[row..row + d]);
            }
            let base = x.categorical.len() * d;
            for (i, v) in x.continuous.iter().enumerate() {
                input[base + i] = (v - self.standardizer.mean[i]) / self.standardizer.std[i];
            }
        }
        let last = self.layers.len() - 1;
        let slope = self.config.leaky_slope;
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            let w = &self.params[layer.w..layer.b];
            let b = &self.params[layer.b..layer.b + layer.fan_out];
            for o in 0..layer.fan_out {
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                let s = b[o] + row.iter().zip(input.iter()).map(|(a, x)| a * x).sum::<f64>();
                if l == last {
                    out[o] = s;
                } else {
                    ws.pre[l][o] = s;
                    out[o] = if s > 0.0 { s } else { slope * s };
                }
            }
        }
        Ok(&ws.acts[last + 1])
    }

    /// Add `∂(dlogits · logits)/∂θ` into `grad`, using activations from the preceding forward pass on `x`.
    pub fn backward(&self, x: &Features, ws: &mut Workspace, dlogits: &[f64], grad: &mut [f64]) {
        let slope = self.config.leaky_slope;
        let Workspace {
            acts,
            pre,
            delta,
            delta_prev,
            ..
        } = ws;
        delta[..dlogits.len()].copy_from_slice(dlogits);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[l];
            for o in 0..layer.fan_out {
                let g = delta[o];
                if g == 0.0 {
                    continue;
                }
                grad[layer.b + o] += g;
                let row = &mut grad[layer.w + o * layer.fan_in..layer.w + (o + 1) * layer.fan_in];
                for (r, xi) in row.iter_mut().zip(input.iter()) {
                    *r += g * xi;
                }
            }
            let w = &self.params[layer.w..layer.b];
            for i in 0..layer.fan_in {
                let mut s = 0.0;
                for o in 0..layer.fan_out {
                    s += w[o * layer.fan_in + i] * delta[o];
                }
                delta_prev[i] = if l > 0 {
                    if pre[l - 1][i] > 0.0 {
                        s
                    } else {
                        slope * s
                    }
                } else {
                    s
                };
            }
            std::mem::swap(delta, delta_prev);
        }
        // `delta` now holds the gradient w.r.t. the input vector
        let d = self.config.embedding_dim;
        for (f, &id) in x.categorical.iter().enumerate() {
            let row = self.embeddings[f] + id as usize * d;
            for j in 0..d {
                grad[row + j] += delta[f * d + j];
            }
        }
    }

    /// Sum of per-sample losses over `inputs`, accumulating their gradient into `grad`.
    ///
    /// `loss_fn(i, logits, dlogits)` returns the loss of sample `i` and writes
    /// `∂loss/∂logits` into the zeroed `dlogits`.
    pub fn accumulate<F>(&self, inputs: &[&Features], ws: &mut Workspace, grad: &mut [f64], mut loss_fn: F) -> Result<f64>
    where
        F: FnMut(usize, &[f64], &mut [f64]) -> Result<f64>,
    {
        let mut total = 0.0;
        let mut dlogits = std::mem::take(&mut ws.dlogits);
        for (i, x) in inputs.iter().enumerate() {
            let logits = self.forward(x, ws)?;
            dlogits.iter_mut().for_each(|g| *g = 0.0);
            total += loss_fn(i, logits, &mut dlogits)?;
            if dlogits.iter().any(|g| *g != 0.0) {
                self.backward(x, ws, &dlogits, grad);
            }
        }
        ws.dlogits = dlogits;
        Ok(total)
    }

    /// Add `l2 · ‖θ‖²` to the objective: returns the penalty and adds its gradient.
    pub fn l2_penalty(&self, l2: f64, grad: &mut [f64]) -> f64 {
        if l2 == 0.0 {
            return 0.0;
        }
        let mut sq = 0.0;
        for (g, p) in grad.iter_mut().zip(&self.params) {
            sq += p * p;
            *g += 2.0 * l2 * p;
        }
        l2 * sq
    }

    /// Pre-activations of all hidden units for `x`, used to stay clear of kinks in gradient checks.
    pub fn hidden_preactivations(&self, x: &Features) -> Result<Vec<f64>> {
        let mut ws = self.workspace();
        self.forward(x, &mut ws)?;
        Ok(ws.pre.concat())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Network {
        let schema = FeatureSchema {
            categorical_vocab: vec![3, 2],
            n_continuous: 2,
        };
        let config = NetConfig {
            embedding_dim: 2,
            hidden: vec![4, 3],
            leaky_slope: 0.01,
        };
        Network::new(schema, config, 2, 7).unwrap()
    }

    #[test]
    fn layout_counts_parameters() {
        let net = tiny();
        // emb 3*2 + 2*2 = 10; input 6 -> 4: 28; 4 -> 3: 15; 3 -> 2: 8
        assert_eq!(net.params().len(), 10 + 28 + 15 + 8);
        let total: usize = net.tensors().iter().map(|(_, r)| r.len()).sum();
        assert_eq!(total, net.params().len());
    }

    #[test]
    fn rejects_out_of_schema_inputs() {
        let net = tiny();
        let mut ws = net.workspace();
        let bad_id = Features {
            categorical: vec![3, 0],
            continuous: vec![0.0, 0.0],
        };
        assert!(matches!(net.forward(&bad_id, &mut ws), Err(Error::Input(_))));
        let missing_field = Features {
            categorical: vec![0],
            continuous: vec![0.0, 0.0],
        };
        assert!(net.forward(&missing_field, &mut ws).is_err());
    }

    #[test]
    fn zero_output_layer_gives_zero_logits() {
        let mut net = tiny();
        let out = net.output_layer();
        net.params_mut()[out].iter_mut().for_each(|p| *p = 0.0);
        let mut ws = net.workspace();
        let x = Features {
            categorical: vec![1, 1],
            continuous: vec![0.3, -2.0],
        };
        assert_eq!(net.forward(&x, &mut ws).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn standardizer_fit() {
        let events: Vec<ClickEvent> = [1.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| ClickEvent {
                id: i as u64,
                click_ts: 0.0,
                conversion_ts: None,
                features: Features {
                    categorical: vec![],
                    continuous: vec![v, 5.0],
                },
            })
            .collect();
        let s = Standardizer::fit(&events, 2);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
    }
}
