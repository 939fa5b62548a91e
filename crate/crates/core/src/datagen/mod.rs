//! Click/conversion event streams.
//!
//! Two sources are supported: synthetic streams drawn from a [`SyntheticTruth`]
//! whose conversion probability and delay law are known exactly, and logged
//! streams in the Criteo conversion-log format (see [`criteo`]).
//!
//! Every event carries its click time, its (possibly absent) conversion time and
//! its features. Synthetic conversions are kept even when they land after the
//! generation horizon so that relabeling transforms stay exact.

pub mod bucket;
pub mod criteo;
pub mod records;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bucket::{bucketize, bucketize_window, split_at, split_pretrain_stream, Bucket, StreamSplit, Timed};

/// Feature vector of one click.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Features {
    pub categorical: Vec<u32>,
    pub continuous: Vec<f64>,
}

impl Features {
    pub fn cell(cell: u32) -> Self {
        Features {
            categorical: vec![cell],
            continuous: Vec::new(),
        }
    }
}

/// One logged click.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickEvent {
    pub id: u64,
    /// Seconds since the stream epoch.
    pub click_ts: f64,
    /// Absent when the click never converts.
    pub conversion_ts: Option<f64>,
    pub features: Features,
}

impl ClickEvent {
    pub fn converted(&self) -> bool {
        self.conversion_ts.is_some()
    }

    /// Click-to-conversion delay `h`.
    pub fn delay(&self) -> Option<f64> {
        self.conversion_ts.map(|v| v - self.click_ts)
    }

    pub fn label(&self) -> u8 {
        u8::from(self.converted())
    }
}

/// Shape of the synthetic feature space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    /// `k` distinct feature vectors, encoded as one categorical field with ids `0..k`.
    Discrete(usize),
    /// `dims` standard-normal continuous features.
    Continuous(usize),
}

impl FeatureSpace {
    pub fn cells(&self) -> Option<usize> {
        match *self {
            FeatureSpace::Discrete(k) => Some(k),
            FeatureSpace::Continuous(_) => None,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Features {
        match *self {
            FeatureSpace::Discrete(k) => Features::cell(rng.random_range(0..k as u32)),
            FeatureSpace::Continuous(dims) => Features {
                categorical: Vec::new(),
                continuous: (0..dims).map(|_| rng.sample(StandardNormal)).collect(),
            },
        }
    }
}

/// Periodic modulation `1 + amplitude * sin(2π t / period + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seasonality {
    pub amplitude: f64,
    /// Seconds.
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Seasonality {
    fn angle(&self, t: f64) -> f64 {
        2.0 * PI * t / self.period + self.phase
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_events: usize,
    /// Seconds; click times fall in `[0, horizon]`.
    pub horizon: f64,
    pub feature_space: FeatureSpace,
    pub target_avg_cvr: f64,
    /// Mean conversion delay scale in seconds, used by [`SyntheticTruth::random`].
    pub delay_scale: f64,
    pub seed: u64,
    /// Optional non-uniform click intensity (uniform when absent).
    pub click_intensity: Option<Seasonality>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_events: 100_000,
            horizon: 48.0 * 3600.0,
            feature_space: FeatureSpace::Discrete(8),
            target_avg_cvr: 0.2269,
            delay_scale: 3600.0,
            seed: 0,
            click_intensity: None,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_events == 0 {
            return Err(Error::config("n_events", "must be > 0"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config("horizon", format!("must be finite and > 0, got {}", self.horizon)));
        }
        if !(self.target_avg_cvr > 0.0 && self.target_avg_cvr < 1.0) {
            return Err(Error::config(
                "target_avg_cvr",
                format!("must lie in (0, 1), got {}", self.target_avg_cvr),
            ));
        }
        if !(self.delay_scale.is_finite() && self.delay_scale > 0.0) {
            return Err(Error::config("delay_scale", format!("must be > 0, got {}", self.delay_scale)));
        }
        match self.feature_space {
            FeatureSpace::Discrete(0) => return Err(Error::config("feature_space", "discrete space needs k >= 1")),
            FeatureSpace::Continuous(0) => {
                return Err(Error::config("feature_space", "continuous space needs dims >= 1"))
            }
            _ => {}
        }
        if let Some(s) = &self.click_intensity {
            if !(0.0..1.0).contains(&s.amplitude) || !(s.period > 0.0) {
                return Err(Error::config(
                    "click_intensity",
                    "amplitude must lie in [0, 1) and period must be > 0",
                ));
            }
        }
        Ok(())
    }
}

/// Ground-truth conversion probability `p(y=1|x)` before drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvrFn {
    PerCell(Vec<f64>),
    /// `sigmoid(weights · x + bias)` over continuous features.
    Logistic { weights: Vec<f64>, bias: f64 },
}

/// Exponential delay rate `λ(x)` in 1/second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayRateFn {
    PerCell(Vec<f64>),
    /// `exp(weights · x + log_rate)` over continuous features.
    LogLinear { weights: Vec<f64>, log_rate: f64 },
}

/// Time-varying shift of the conversion logit: `amplitude * sin(2π t / period + phase_x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvrDrift {
    pub amplitude: f64,
    pub period: f64,
    /// Per-cell phase offsets (indexed modulo length); empty means zero phase.
    #[serde(default)]
    pub phases: Vec<f64>,
}

impl CvrDrift {
    fn offset(&self, x: &Features, t: f64) -> f64 {
        let phase = if self.phases.is_empty() {
            0.0
        } else {
            let cell = x.categorical.first().copied().unwrap_or(0) as usize;
            self.phases[cell % self.phases.len()]
        };
        self.amplitude * (2.0 * PI * t / self.period + phase).sin()
    }
}

/// Known conversion law of a synthetic stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub cvr: CvrFn,
    pub delay_rate: DelayRateFn,
    #[serde(default)]
    pub drift: Option<CvrDrift>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cell_of(x: &Features) -> usize {
    x.categorical.first().copied().unwrap_or(0) as usize
}

impl SyntheticTruth {
    /// Stationary discrete truth with explicit per-cell CVRs and delay rates.
    pub fn per_cell(cvrs: Vec<f64>, rates: Vec<f64>) -> Self {
        SyntheticTruth {
            cvr: CvrFn::PerCell(cvrs),
            delay_rate: DelayRateFn::PerCell(rates),
            drift: None,
        }
    }

    pub fn with_drift(mut self, drift: CvrDrift) -> Self {
        self.drift = Some(drift);
        self
    }

    /// Random logistic truth whose population-average CVR equals `target_avg_cvr`.
    ///
    /// Scores are standard normal per cell (discrete) or a random linear map
    /// (continuous); the shared bias is found by bisection. Delay rates scatter
    /// log-normally around `1 / delay_scale`.
    pub fn random(space: FeatureSpace, target_avg_cvr: f64, delay_scale: f64, seed: u64) -> Result<Self> {
        if !(target_avg_cvr > 0.0 && target_avg_cvr < 1.0) {
            return Err(Error::config("target_avg_cvr", "must lie in (0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7275_7468);
        match space {
            FeatureSpace::Discrete(k) => {
                let scores: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let bias = solve_bias(&scores, target_avg_cvr);
                let cvrs = scores.iter().map(|s| sigmoid(s + bias)).collect();
                let rates = (0..k)
                    .map(|_| (0.5 * rng.sample::<f64, _>(StandardNormal)).exp() / delay_scale)
                    .collect();
                Ok(SyntheticTruth::per_cell(cvrs, rates))
            }
            FeatureSpace::Continuous(dims) => {
                let scale = 1.0 / (dims as f64).sqrt();
                let weights: Vec<f64> = (0..dims).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
                // Monte Carlo population for the bias search.
                let scores: Vec<f64> = (0..20_000)
                    .map(|_| {
                        let x: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
                        dot(&weights, &x)
                    })
                    .collect();
                let bias = solve_bias(&scores, target_avg_cvr);
                let delay_weights = (0..dims).map(|_| 0.3 * scale * rng.sample::<f64, _>(StandardNormal)).collect();
                Ok(SyntheticTruth {
                    cvr: CvrFn::Logistic { weights, bias },
                    delay_rate: DelayRateFn::LogLinear {
                        weights: delay_weights,
                        log_rate: -delay_scale.ln(),
                    },
                    drift: None,
                })
            }
        }
    }

    /// `p(y=1 | x)` at click time `t`.
    pub fn cvr(&self, x: &Features, t: f64) -> f64 {
        let base = match &self.cvr {
            CvrFn::PerCell(table) => table[cell_of(x)],
            CvrFn::Logistic { weights, bias } => sigmoid(dot(weights, &x.continuous) + bias),
        };
        match &self.drift {
            None => base,
            Some(_) if base <= 0.0 || base >= 1.0 => base,
            Some(d) => sigmoid(logit(base) + d.offset(x, t)),
        }
    }

    /// Exponential delay rate `λ(x)`.
    pub fn delay_rate(&self, x: &Features) -> f64 {
        match &self.delay_rate {
            DelayRateFn::PerCell(table) => table[cell_of(x)],
            DelayRateFn::LogLinear { weights, log_rate } => (dot(weights, &x.continuous) + log_rate).exp(),
        }
    }

    /// Survival `p(h > e | x, y=1) = exp(-λ(x) e)`.
    pub fn p_delay_exceeds(&self, x: &Features, elapsed: f64) -> f64 {
        (-self.delay_rate(x) * elapsed).exp()
    }

    /// Converter-weighted mean delay over a discrete space (stationary CVRs).
    pub fn mean_delay(&self, space: FeatureSpace) -> Result<f64> {
        let k = space
            .cells()
            .ok_or_else(|| Error::Unsupported("mean_delay needs a discrete feature space".into()))?;
        let (mut num, mut den) = (0.0, 0.0);
        for cell in 0..k as u32 {
            let x = Features::cell(cell);
            let p = self.cvr(&x, 0.0);
            num += p / self.delay_rate(&x);
            den += p;
        }
        if den <= 0.0 {
            return Err(Error::Numeric("no converting cell".into()));
        }
        Ok(num / den)
    }

    pub fn validate(&self, space: FeatureSpace) -> Result<()> {
        match (space, &self.cvr, &self.delay_rate) {
            (FeatureSpace::Discrete(k), CvrFn::PerCell(c), DelayRateFn::PerCell(r)) => {
                if c.len() != k || r.len() != k {
                    return Err(Error::config(
                        "truth",
                        format!("per-cell tables must have {k} entries (cvr {}, rate {})", c.len(), r.len()),
                    ));
                }
                if let Some(p) = c.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                    return Err(Error::config("truth.cvr", format!("probability {p} outside [0, 1]")));
                }
                if let Some(l) = r.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
                    return Err(Error::config("truth.delay_rate", format!("rate {l} must be finite and > 0")));
                }
            }
            (
                FeatureSpace::Continuous(d),
                CvrFn::Logistic { weights, .. },
                DelayRateFn::LogLinear { weights: dw, .. },
            ) => {
                if weights.len() != d || dw.len() != d {
                    return Err(Error::config("truth", format!("linear maps must have {d} weights")));
                }
            }
            _ => {
                return Err(Error::config("truth", "truth does not match the configured feature space"));
            }
        }
        if let Some(d) = &self.drift {
            if !(d.period > 0.0 && d.amplitude.is_finite()) {
                return Err(Error::config("truth.drift", "period must be > 0 and amplitude finite"));
            }
        }
        Ok(())
    }
}

fn solve_bias(scores: &[f64], target: f64) -> f64 {
    let mean = |b: f64| scores.iter().map(|s| sigmoid(s + b)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Ground truth available for a stream: exact for synthetic data, the log itself otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Synthetic(SyntheticTruth),
    Logged,
}

/// Draw a synthetic click/conversion stream.
///
/// Clicks are uniform over `[0, horizon]` (or follow the configured intensity),
/// `y ~ Bernoulli(cvr(x, t))` and converters get `h ~ Exponential(λ(x))`.
/// Output is sorted by click time with ids `0..n` in that order.
pub fn synth_stream(config: &GenConfig, truth: &SyntheticTruth) -> Result<Vec<ClickEvent>> {
    config.validate()?;
    truth.validate(config.feature_space)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut events = Vec::with_capacity(config.n_events);
    for _ in 0..config.n_events {
        let click_ts = draw_click_time(config, &mut rng);
        let features = config.feature_space.sample(&mut rng);
        let p = truth.cvr(&features, click_ts);
        let conversion_ts = if rng.random::<f64>() < p {
            let rate = truth.delay_rate(&features);
            let exp = Exp::new(rate).map_err(|e| Error::Numeric(format!("delay rate {rate}: {e}")))?;
            Some(click_ts + exp.sample(&mut rng))
        } else {
            None
        };
        events.push(ClickEvent {
            id: 0,
            click_ts,
            conversion_ts,
            features,
        });
    }
    events.sort_by(|a, b| a.click_ts.total_cmp(&b.click_ts));
    for (i, e) in events.iter_mut().enumerate() {
        e.id = i as u64;
    }
    Ok(events)
}

fn draw_click_time(config: &GenConfig, rng: &mut impl Rng) -> f64 {
    match &config.click_intensity {
        None => rng.random::<f64>() * config.horizon,
        Some(s) => loop {
            // rejection sampling against the envelope 1 + amplitude
            let t = rng.random::<f64>() * config.horizon;
            let accept = (1.0 + s.amplitude * s.angle(t).sin()) / (1.0 + s.amplitude);
            if rng.random::<f64>() < accept {
                break t;
            }
        },
    }
}
