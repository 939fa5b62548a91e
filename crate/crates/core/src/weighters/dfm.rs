//! Delayed feedback model: a CVR head `p(x)` and an exponential delay head
//! `λ(x)` fitted jointly by the censored likelihood
//!
//! ```text
//! converted after d:     -[ln p + ln λ - λ d]
//! unconverted at e:      -ln[(1 - p) + p · exp(-λ e)]
//! ```

use serde::{Deserialize, Serialize};

use crate::datagen::{ClickEvent, Features};
use crate::error::{Error, Result};
use crate::learner::checkpoint::Checkpoint;
use crate::learner::{clamp_prob, FeatureSchema, NetConfig, Network, Trainable, Workspace};
use crate::relabel::TrainingSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DfmConfig {
    /// Delays are measured in units of this many seconds inside the network,
    /// so an untrained delay head predicts a mean delay of one unit.
    pub time_scale: f64,
}

impl Default for DfmConfig {
    fn default() -> Self {
        DfmConfig { time_scale: 3600.0 }
    }
}

/// One DFM observation: a conversion after `time` seconds, or none up to `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct DfmSample {
    pub features: Features,
    pub converted: bool,
    pub time: f64,
}

impl DfmSample {
    /// The stream view: observed conversions carry their delay, the rest are censored at the elapsed time.
    pub fn from_training(s: &TrainingSample) -> Result<Self> {
        let (converted, time) = match (s.observed_label, s.observed_delay) {
            (1, Some(d)) => (true, d),
            (1, None) => return Err(Error::Input(format!("positive sample {} has no observed delay", s.source_id))),
            _ => (false, s.elapsed),
        };
        Ok(DfmSample {
            features: s.features.clone(),
            converted,
            time,
        })
    }

    /// Full-information view of a click, censored at the attribution window.
    pub fn from_event(e: &ClickEvent, attribution_window: f64) -> Self {
        match e.delay().filter(|&h| h <= attribution_window) {
            Some(h) => DfmSample {
                features: e.features.clone(),
                converted: true,
                time: h,
            },
            None => DfmSample {
                features: e.features.clone(),
                converted: false,
                time: attribution_window,
            },
        }
    }
}

/// Negative log-likelihood of one observation under CVR `p` and delay rate `rate` (per second).
pub fn dfm_loss(p: f64, rate: f64, converted: bool, time: f64) -> Result<f64> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Numeric(format!("delay rate {rate} must be finite and > 0")));
    }
    if !(0.0..=1.0).contains(&p) || !(time >= 0.0) {
        return Err(Error::Numeric(format!("invalid DFM input p={p}, time={time}")));
    }
    Ok(if converted {
        -(p.ln() + rate.ln() - rate * time)
    } else {
        -((1.0 - p) + p * (-rate * time).exp()).ln()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DfmModel {
    net: Network,
    clamp_eps: f64,
    config: DfmConfig,
}

impl DfmModel {
    pub fn new(schema: FeatureSchema, net_config: NetConfig, clamp_eps: f64, config: DfmConfig, seed: u64) -> Result<Self> {
        Self::from_network(Network::new(schema, net_config, 2, seed)?, clamp_eps, config)
    }

    fn from_network(net: Network, clamp_eps: f64, config: DfmConfig) -> Result<Self> {
        if !(config.time_scale.is_finite() && config.time_scale > 0.0) {
            return Err(Error::config("time_scale", "must be finite and > 0"));
        }
        if net.n_outputs() != 2 {
            return Err(Error::Input("DFM needs a 2-output network".into()));
        }
        if !(clamp_eps > 0.0 && clamp_eps < 0.5) {
            return Err(Error::config("clamp_eps", "must be in (0, 0.5)"));
        }
        Ok(DfmModel { net, clamp_eps, config })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn workspace(&self) -> Workspace {
        self.net.workspace()
    }

    fn rate_from_logit(&self, u: f64) -> Result<f64> {
        let rate = u.exp() / self.config.time_scale;
        if rate.is_finite() && rate > 0.0 {
            Ok(rate)
        } else {
            Err(Error::Numeric(format!("delay rate exp({u}) / {} is not finite and positive", self.config.time_scale)))
        }
    }

    /// `(p(y=1|x), λ(x))`, with `λ` per second.
    pub fn predict(&self, x: &Features, ws: &mut Workspace) -> Result<(f64, f64)> {
        let z = self.net.forward(x, ws)?;
        let (z, u) = (z[0], z[1]);
        Ok((clamp_prob(z, self.clamp_eps).0, self.rate_from_logit(u)?))
    }

    /// Serving prediction: the CVR head only.
    pub fn predict_cvr(&self, x: &Features, ws: &mut Workspace) -> Result<f64> {
        Ok(self.predict(x, ws)?.0)
    }

    pub fn loss(&self, sample: &DfmSample) -> Result<f64> {
        let mut ws = self.workspace();
        let (p, rate) = self.predict(&sample.features, &mut ws)?;
        dfm_loss(p, rate, sample.converted, sample.time)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut ck = Checkpoint::new("dfm", self.net.clone(), self.clamp_eps);
        ck.extra.insert("time_scale".into(), self.config.time_scale);
        ck.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?.expect_kind("dfm")?;
        let config = DfmConfig {
            time_scale: ck.extra("time_scale")?,
        };
        Self::from_network(ck.network, ck.clamp_eps, config)
    }
}

impl Trainable<DfmSample> for DfmModel {
    fn batch_loss_and_grad(&self, batch: &[&DfmSample], l2: f64) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.net.params().len()];
        let mut ws = self.net.workspace();
        let features: Vec<&Features> = batch.iter().map(|s| &s.features).collect();
        let ln_scale = self.config.time_scale.ln();
        let data = self.net.accumulate(&features, &mut ws, &mut grad, |i, logits, dlogits| {
            let s = batch[i];
            let (p, clamped) = clamp_prob(logits[0], self.clamp_eps);
            let u = logits[1];
            let rate = self.rate_from_logit(u)?;
            // λ in network time units
            let lam = u.exp();
            let t = s.time / self.config.time_scale;
            if s.converted {
                if !clamped {
                    dlogits[0] = -(1.0 - p);
                }
                dlogits[1] = lam * t - 1.0;
                // -ln p - ln(rate) + rate·d, with ln(rate) = u - ln(scale)
                Ok(-p.ln() - u + ln_scale + rate * s.time)
            } else {
                let surv = (-lam * t).exp();
                let total = (1.0 - p) + p * surv;
                if !clamped {
                    dlogits[0] = p * (1.0 - p) * (1.0 - surv) / total;
                }
                dlogits[1] = p * lam * t * surv / total;
                Ok(-total.ln())
            }
        })?;
        let n = batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        let penalty = self.net.l2_penalty(l2, &mut grad);
        Ok((data / n + penalty, grad))
    }

    fn trainable_network(&mut self) -> &mut Network {
        &mut self.net
    }
}
