//! Two-head auxiliary classifiers: the ES-DFM `f_dp`/`f_rn` estimator and the
//! FSIW `f_obs`/`f_tn` pair. Both share a trunk and train each head with
//! cross-entropy on the samples where that head's label is defined.

use rand::RngCore;

use crate::datagen::{ClickEvent, Features};
use crate::error::{Error, Result};
use crate::learner::checkpoint::Checkpoint;
use crate::learner::{clamp_prob, FeatureSchema, NetConfig, Network, Trainable, Workspace};
use crate::relabel::{draw_elapsed, ElapsedPolicy};

/// Labels for the dual-head estimator derived from one click.
#[derive(Debug, Clone, PartialEq)]
pub struct DpRnSample {
    pub features: Features,
    /// 1 iff the click converts after its elapsed time but within the attribution window.
    pub dp_label: u8,
    /// 1 iff the click never converts within the attribution window.
    pub rn_label: u8,
    /// 0 for observed positives, which carry no real-negative information.
    pub rn_mask: u8,
}

/// Labels for the FSIW estimators derived from one click.
#[derive(Debug, Clone, PartialEq)]
pub struct FsiwSample {
    pub features: Features,
    /// 1 iff the conversion is observed within the elapsed time.
    pub obs_label: u8,
    /// 1 for eventual converters.
    pub obs_mask: u8,
    /// 1 iff the click never converts.
    pub tn_label: u8,
    /// 1 for samples observed as negative.
    pub tn_mask: u8,
}

/// Delay within the attribution window, if any.
fn attributed_delay(event: &ClickEvent, window: f64) -> Option<f64> {
    event.delay().filter(|&h| h <= window)
}

fn check_window(window: f64) -> Result<()> {
    if window.is_finite() && window > 0.0 {
        Ok(())
    } else {
        Err(Error::config("attribution_window", format!("must be finite and > 0, got {window}")))
    }
}

pub fn build_dp_rn_dataset(
    stream: &[ClickEvent],
    policy: &ElapsedPolicy,
    attribution_window: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<DpRnSample>> {
    check_window(attribution_window)?;
    policy.validate()?;
    stream
        .iter()
        .map(|event| {
            let e = draw_elapsed(event, policy, rng)?;
            let (dp, rn, mask) = match attributed_delay(event, attribution_window) {
                Some(h) if h <= e => (0, 0, 0),
                Some(_) => (1, 0, 1),
                None => (0, 1, 1),
            };
            Ok(DpRnSample {
                features: event.features.clone(),
                dp_label: dp,
                rn_label: rn,
                rn_mask: mask,
            })
        })
        .collect()
}

pub fn build_fsiw_dataset(
    stream: &[ClickEvent],
    policy: &ElapsedPolicy,
    attribution_window: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<FsiwSample>> {
    check_window(attribution_window)?;
    policy.validate()?;
    stream
        .iter()
        .map(|event| {
            let e = draw_elapsed(event, policy, rng)?;
            let s = match attributed_delay(event, attribution_window) {
                Some(h) if h <= e => (1, 1, 0, 0),
                Some(_) => (0, 1, 0, 1),
                None => (0, 0, 1, 1),
            };
            Ok(FsiwSample {
                features: event.features.clone(),
                obs_label: s.0,
                obs_mask: s.1,
                tn_label: s.2,
                tn_mask: s.3,
            })
        })
        .collect()
}

/// Shared-trunk network with two sigmoid heads and masked cross-entropy.
#[derive(Debug, Clone, PartialEq)]
struct TwoHead {
    net: Network,
    clamp_eps: f64,
}

impl TwoHead {
    fn new(schema: FeatureSchema, config: NetConfig, clamp_eps: f64, seed: u64) -> Result<Self> {
        Self::from_network(Network::new(schema, config, 2, seed)?, clamp_eps)
    }

    fn from_network(net: Network, clamp_eps: f64) -> Result<Self> {
        if net.n_outputs() != 2 {
            return Err(Error::Input(format!("two-head model needs 2 outputs, network has {}", net.n_outputs())));
        }
        if !(clamp_eps > 0.0 && clamp_eps < 0.5) {
            return Err(Error::config("clamp_eps", "must be in (0, 0.5)"));
        }
        Ok(TwoHead { net, clamp_eps })
    }

    fn predict(&self, x: &Features, ws: &mut Workspace) -> Result<(f64, f64)> {
        let z = self.net.forward(x, ws)?;
        Ok((clamp_prob(z[0], self.clamp_eps).0, clamp_prob(z[1], self.clamp_eps).0))
    }

    /// `labels[i][k]` is used for head `k` only where `masks[i][k]` is set.
    fn loss_and_grad(&self, features: &[&Features], labels: &[[u8; 2]], masks: &[[u8; 2]], l2: f64) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.net.params().len()];
        let mut ws = self.net.workspace();
        let eps = self.clamp_eps;
        let data = self.net.accumulate(features, &mut ws, &mut grad, |i, logits, dlogits| {
            let mut loss = 0.0;
            for k in 0..2 {
                if masks[i][k] == 0 {
                    continue;
                }
                let y = f64::from(labels[i][k]);
                let (p, clamped) = clamp_prob(logits[k], eps);
                loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
                if !clamped {
                    dlogits[k] = p - y;
                }
            }
            Ok(loss)
        })?;
        let n = features.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        let penalty = self.net.l2_penalty(l2, &mut grad);
        Ok((data / n + penalty, grad))
    }

    fn checkpoint(&self, kind: &str) -> Checkpoint {
        Checkpoint::new(kind, self.net.clone(), self.clamp_eps)
    }
}

macro_rules! two_head_model {
    ($name:ident, $kind:literal, $sample:ty, |$s:ident| $labels:expr, $masks:expr) => {
        impl $name {
            pub fn new(schema: FeatureSchema, config: NetConfig, clamp_eps: f64, seed: u64) -> Result<Self> {
                Ok($name(TwoHead::new(schema, config, clamp_eps, seed)?))
            }

            pub fn network(&self) -> &Network {
                &self.0.net
            }

            pub fn network_mut(&mut self) -> &mut Network {
                &mut self.0.net
            }

            pub fn workspace(&self) -> Workspace {
                self.0.net.workspace()
            }

            pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
                self.0.checkpoint($kind).save(path)
            }

            pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
                let ck = Checkpoint::load(path)?.expect_kind($kind)?;
                Ok($name(TwoHead::from_network(ck.network, ck.clamp_eps)?))
            }
        }

        impl Trainable<$sample> for $name {
            fn batch_loss_and_grad(&self, batch: &[&$sample], l2: f64) -> Result<(f64, Vec<f64>)> {
                let features: Vec<&Features> = batch.iter().map(|s| &s.features).collect();
                let labels: Vec<[u8; 2]> = batch.iter().map(|$s| $labels).collect();
                let masks: Vec<[u8; 2]> = batch.iter().map(|$s| $masks).collect();
                self.0.loss_and_grad(&features, &labels, &masks, l2)
            }

            fn trainable_network(&mut self) -> &mut Network {
                &mut self.0.net
            }
        }
    };
}

/// Jointly trained `f_dp(x)` and `f_rn(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualHeadEstimator(TwoHead);

two_head_model!(DualHeadEstimator, "dual_head", DpRnSample, |s| [s.dp_label, s.rn_label], [1, s.rn_mask]);

impl DualHeadEstimator {
    /// `(f_dp(x), f_rn(x))`.
    pub fn predict(&self, x: &Features, ws: &mut Workspace) -> Result<(f64, f64)> {
        self.0.predict(x, ws)
    }
}

/// FSIW auxiliaries `f_obs(x) ≈ P(h ≤ e | x, y=1)` and `f_tn(x) ≈ p(y=0|x) / q(y=0|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FsiwEstimators(TwoHead);

two_head_model!(FsiwEstimators, "fsiw", FsiwSample, |s| [s.obs_label, s.tn_label], [s.obs_mask, s.tn_mask]);

impl FsiwEstimators {
    /// `(f_obs(x), f_tn(x))`.
    pub fn predict(&self, x: &Features, ws: &mut Workspace) -> Result<(f64, f64)> {
        self.0.predict(x, ws)
    }
}
