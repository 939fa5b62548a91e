//! From a config and a seed to streamed reports.

use std::fs::File;
use std::io::BufReader;
use std::sync::Arc;

use esdfm_core::datagen::criteo::{self, load_criteo};
use esdfm_core::datagen::{
    split_at, split_pretrain_stream, synth_stream, Bucket, ClickEvent, FeatureSpace, SyntheticTruth,
};
use esdfm_core::learner::{fit, AdamState, FeatureSchema, MlpModel, Standardizer, TrainConfig};
use esdfm_core::methods::{build_method, EstimatorFeed, Estimators, Method, MethodName, MethodSpec, Weighting};
use esdfm_core::protocol::{run_with_matured, stream_buckets, StreamReport};
use esdfm_core::relabel::{disturb, DisturbConfig, ElapsedPolicy};
use esdfm_core::weighters::{
    build_dp_rn_dataset, build_fsiw_dataset, DfmModel, DfmSample, DualHeadEstimator, FsiwEstimators,
};
use esdfm_core::{Error, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DataSource, EsWeightSource, ExperimentConfig, TruthSpec};

/// Independent random streams per purpose, all derived from the run seed.
pub mod stream {
    pub const PRETRAIN: u64 = 1;
    pub const DUAL_HEAD: u64 = 2;
    pub const FSIW: u64 = 3;
    pub const DFM: u64 = 4;
    pub const DISTURB: u64 = 5;
    /// Method `m` uses `METHOD + m`.
    pub const METHOD: u64 = 100;
}

pub fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Build the synthetic ground truth described by the config, if any.
pub fn synthetic_truth(config: &ExperimentConfig) -> Result<Option<SyntheticTruth>> {
    let DataSource::Synthetic { generator, truth } = &config.data else {
        return Ok(None);
    };
    let truth = match truth {
        TruthSpec::Random { seed, drift } => {
            let t = SyntheticTruth::random(generator.feature_space, generator.target_avg_cvr, generator.delay_scale, *seed)?;
            match drift {
                Some(d) => t.with_drift(d.clone()),
                None => t,
            }
        }
        TruthSpec::PerCell { cvr, delay_rate, drift } => {
            let t = SyntheticTruth::per_cell(cvr.clone(), delay_rate.clone());
            match drift {
                Some(d) => t.with_drift(d.clone()),
                None => t,
            }
        }
    };
    truth.validate(generator.feature_space)?;
    Ok(Some(truth))
}

pub fn feature_schema(config: &ExperimentConfig) -> FeatureSchema {
    match &config.data {
        DataSource::Synthetic { generator, .. } => match generator.feature_space {
            FeatureSpace::Discrete(k) => FeatureSchema::discrete(k),
            FeatureSpace::Continuous(d) => FeatureSchema::continuous(d),
        },
        DataSource::Criteo { .. } => criteo::schema(),
    }
}

/// The full click stream for one run seed. Synthetic streams are redrawn per
/// seed from a fixed truth; logged data is the same for every seed.
pub fn load_events(config: &ExperimentConfig, seed: u64, truth: Option<&SyntheticTruth>) -> Result<Vec<ClickEvent>> {
    match &config.data {
        DataSource::Synthetic { generator, .. } => {
            let truth = truth.ok_or_else(|| Error::Input("synthetic data needs its truth".into()))?;
            let mut gen = generator.clone();
            gen.seed = gen.seed.wrapping_add(seed);
            synth_stream(&gen, truth)
        }
        DataSource::Criteo { path } => load_criteo(BufReader::new(File::open(path)?)),
    }
}

/// A stream split into its pre-training and streaming halves on the bucket grid.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub truth: Option<SyntheticTruth>,
    pub schema: FeatureSchema,
    /// Pre-training half followed by the (possibly disturbed) streaming half.
    pub all: Vec<ClickEvent>,
    pub n_pretrain: usize,
    pub start: f64,
    pub n_buckets: usize,
}

impl Prepared {
    pub fn pretrain(&self) -> &[ClickEvent] {
        &self.all[..self.n_pretrain]
    }

    pub fn streaming(&self) -> &[ClickEvent] {
        &self.all[self.n_pretrain..]
    }

    /// Share of streaming-half conversions observable within `c` seconds.
    pub fn observable_fraction(&self, c: f64) -> f64 {
        let delays: Vec<f64> = self.streaming().iter().filter_map(ClickEvent::delay).collect();
        if delays.is_empty() {
            return f64::NAN;
        }
        delays.iter().filter(|&&h| h <= c).count() as f64 / delays.len() as f64
    }
}

/// Load, split at the median click time snapped down to the bucket grid, and
/// disturb the streaming half with strength `disturbance`.
pub fn prepare(config: &ExperimentConfig, seed: u64, disturbance: f64) -> Result<Prepared> {
    let truth = synthetic_truth(config)?;
    let events = load_events(config, seed, truth.as_ref())?;
    if events.len() < 2 {
        return Err(Error::Input(format!("{} events; need at least 2 to split", events.len())));
    }
    let width = config.bucket_width;
    let median = split_pretrain_stream(events.clone()).split_ts;
    let start = (median / width).floor() * width;
    let split = split_at(events, start);
    if split.pretrain.is_empty() || split.streaming.is_empty() {
        return Err(Error::Input("bucket width too coarse: one half of the stream is empty".into()));
    }
    let end = split.streaming.last().map(|e| e.click_ts).unwrap_or(start);
    let n_buckets = ((end - start) / width).floor() as usize + 1;
    let streaming = if disturbance > 0.0 {
        let seed = sub_rng(seed, stream::DISTURB).next_u64();
        disturb(&split.streaming, &DisturbConfig { strength: disturbance, seed })?
    } else {
        split.streaming
    };
    let n_pretrain = split.pretrain.len();
    let mut all = split.pretrain;
    all.extend(streaming);
    Ok(Prepared {
        seed,
        truth,
        schema: feature_schema(config),
        all,
        n_pretrain,
        start,
        n_buckets,
    })
}

fn standardizer(prepared: &Prepared) -> Standardizer {
    Standardizer::fit(prepared.pretrain(), prepared.schema.n_continuous)
}

fn shuffle_rng(prepared: &Prepared, config: &TrainConfig, stream: u64) -> ChaCha8Rng {
    sub_rng(prepared.seed.wrapping_add(config.seed), stream)
}

/// The CVR model trained on the true labels of the pre-training half.
pub fn pretrain_model(config: &ExperimentConfig, prepared: &Prepared) -> Result<MlpModel> {
    let mut model = MlpModel::new(prepared.schema.clone(), config.model.clone(), config.pretrain.clamp_eps, prepared.seed)?;
    model.network_mut().set_standardizer(standardizer(prepared))?;
    let mut adam = AdamState::new(model.network().params().len());
    let mut rng = shuffle_rng(prepared, &config.pretrain, stream::PRETRAIN);
    let loss = fit(&mut model, prepared.pretrain(), &mut adam, &config.pretrain, Some(&mut rng))?;
    log::info!("seed {}: pre-trained CVR model, last-pass loss {loss:.5}", prepared.seed);
    Ok(model)
}

fn needs(methods: &[MethodName], config: &ExperimentConfig) -> (bool, bool, bool) {
    let dual = config.es_weights == EsWeightSource::Estimated && methods.contains(&MethodName::EsDfm);
    (dual, methods.contains(&MethodName::Fsiw), methods.contains(&MethodName::Dfm))
}

/// Train the auxiliary models the given methods need, for elapsed time `c`.
pub fn train_estimators(
    config: &ExperimentConfig,
    prepared: &Prepared,
    methods: &[MethodName],
    c: f64,
) -> Result<Estimators> {
    let (dual, fsiw, dfm) = needs(methods, config);
    let policy = ElapsedPolicy::Dirac(c);
    let window = config.attribution_window();
    let cfg = &config.estimator;
    let schema = &prepared.schema;
    let mut est = Estimators {
        truth: prepared.truth.clone(),
        ..Estimators::default()
    };
    if dual {
        let mut rng = shuffle_rng(prepared, cfg, stream::DUAL_HEAD);
        let data = build_dp_rn_dataset(prepared.pretrain(), &policy, window, &mut rng)?;
        let mut m = DualHeadEstimator::new(schema.clone(), config.model.clone(), cfg.clamp_eps, prepared.seed ^ 0xd0a1)?;
        m.network_mut().set_standardizer(standardizer(prepared))?;
        let mut adam = AdamState::new(m.network().params().len());
        fit(&mut m, &data, &mut adam, cfg, Some(&mut rng))?;
        est.dual_head = Some(m);
    }
    if fsiw {
        let mut rng = shuffle_rng(prepared, cfg, stream::FSIW);
        let data = build_fsiw_dataset(prepared.pretrain(), &policy, window, &mut rng)?;
        let mut m = FsiwEstimators::new(schema.clone(), config.model.clone(), cfg.clamp_eps, prepared.seed ^ 0xf51)?;
        m.network_mut().set_standardizer(standardizer(prepared))?;
        let mut adam = AdamState::new(m.network().params().len());
        fit(&mut m, &data, &mut adam, cfg, Some(&mut rng))?;
        est.fsiw = Some(m);
    }
    if dfm {
        let mut rng = shuffle_rng(prepared, cfg, stream::DFM);
        let data: Vec<DfmSample> = prepared.pretrain().iter().map(|e| DfmSample::from_event(e, window)).collect();
        let mut m = DfmModel::new(schema.clone(), config.model.clone(), cfg.clamp_eps, config.dfm, prepared.seed ^ 0xdf)?;
        m.network_mut().set_standardizer(standardizer(prepared))?;
        let mut adam = AdamState::new(m.network().params().len());
        fit(&mut m, &data, &mut adam, cfg, Some(&mut rng))?;
        est.dfm = Some(m);
    }
    Ok(est)
}

/// The configured spec of a method.
pub fn method_spec(config: &ExperimentConfig, name: MethodName) -> MethodSpec {
    let spec = MethodSpec::standard(name);
    if name == MethodName::EsDfm && config.es_weights == EsWeightSource::Ideal {
        spec.with_weighting(Weighting::EsIdeal)
    } else {
        spec
    }
}

/// Clicks whose attribution window closes in each streaming bucket.
pub fn matured_buckets(prepared: &Prepared, width: f64, window: f64) -> Vec<Bucket<ClickEvent>> {
    let mut buckets: Vec<Bucket<ClickEvent>> = (0..prepared.n_buckets).map(|index| Bucket { index, items: Vec::new() }).collect();
    for e in &prepared.all {
        let t = e.click_ts + window - prepared.start;
        if t >= 0.0 {
            let i = (t / width).floor() as usize;
            if i < buckets.len() {
                buckets[i].items.push(e.clone());
            }
        }
    }
    buckets
}

/// Stream one method over the prepared data with elapsed time `c`.
pub fn run_method(
    config: &ExperimentConfig,
    prepared: &Prepared,
    pretrained: &MlpModel,
    estimators: Arc<Estimators>,
    spec: MethodSpec,
    c: f64,
) -> Result<StreamReport> {
    let name = spec.name;
    let tag = stream::METHOD + MethodName::ALL.iter().position(|&m| m == name).unwrap_or(0) as u64;
    let mut rng = sub_rng(prepared.seed, tag);
    let window = config.attribution_window();
    let mut method: Method = build_method(spec, pretrained, estimators, ElapsedPolicy::Dirac(c), config.train.clone())?;
    let feed = config.estimator_feed && method.estimators().dual_head.is_some() && name == MethodName::EsDfm;
    if feed {
        method = method.with_estimator_feed(EstimatorFeed {
            attribution_window: window,
            config: config.estimator.clone(),
        })?;
    }
    let (train, eval) = stream_buckets(
        &method,
        &prepared.all,
        prepared.streaming(),
        prepared.start,
        config.bucket_width,
        prepared.n_buckets,
        &mut rng,
    )?;
    let matured = if feed {
        matured_buckets(prepared, config.bucket_width, window)
    } else {
        Vec::new()
    };
    let report = run_with_matured(&mut method, &train, &eval, &matured, &mut rng)?;
    log::info!(
        "seed {} {name} c={c}: auc {:.4} pr_auc {:.4} nll {:.5}",
        prepared.seed,
        report.pooled.auc,
        report.pooled.pr_auc,
        report.pooled.nll
    );
    Ok(report)
}

/// Everything shared by the methods of one (seed, disturbance) run.
pub struct SeedContext {
    pub prepared: Prepared,
    pub pretrained: MlpModel,
    pub estimators: Arc<Estimators>,
}

pub fn seed_context(config: &ExperimentConfig, seed: u64, disturbance: f64) -> Result<SeedContext> {
    let prepared = prepare(config, seed, disturbance)?;
    let pretrained = pretrain_model(config, &prepared)?;
    let estimators = Arc::new(train_estimators(config, &prepared, &config.methods, config.elapsed)?);
    Ok(SeedContext {
        prepared,
        pretrained,
        estimators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use esdfm_core::datagen::GenConfig;

    fn config() -> ExperimentConfig {
        ExperimentConfig::new(
            DataSource::Synthetic {
                generator: GenConfig {
                    n_events: 2_000,
                    horizon: 20.0 * 3600.0,
                    ..GenConfig::default()
                },
                truth: TruthSpec::Random { seed: 3, drift: None },
            },
            vec![MethodName::Vanilla],
        )
    }

    #[test]
    fn split_lands_on_the_bucket_grid() {
        let c = config();
        let p = prepare(&c, 0, 0.0).unwrap();
        assert_eq!(p.start % c.bucket_width, 0.0);
        assert!(p.pretrain().iter().all(|e| e.click_ts < p.start));
        assert!(p.streaming().iter().all(|e| e.click_ts >= p.start));
        let last = p.streaming().last().unwrap().click_ts;
        assert!(last < p.start + p.n_buckets as f64 * c.bucket_width);
        assert!(last >= p.start + (p.n_buckets - 1) as f64 * c.bucket_width);
        assert_eq!(p.all.len(), 2_000);
    }

    #[test]
    fn disturbance_touches_only_the_streaming_half() {
        let c = config();
        let clean = prepare(&c, 4, 0.0).unwrap();
        let noisy = prepare(&c, 4, 0.5).unwrap();
        assert_eq!(clean.pretrain(), noisy.pretrain());
        assert_ne!(clean.streaming(), noisy.streaming());
        let pos = |p: &Prepared| p.streaming().iter().filter(|e| e.converted()).count();
        assert_eq!(pos(&clean), pos(&noisy));
    }

    #[test]
    fn seeds_redraw_the_stream_but_not_the_truth() {
        let c = config();
        let (a, b) = (prepare(&c, 0, 0.0).unwrap(), prepare(&c, 1, 0.0).unwrap());
        assert_eq!(a.truth, b.truth);
        assert_ne!(a.all, b.all);
    }

    #[test]
    fn matured_clicks_land_when_their_window_closes() {
        let c = config();
        let p = prepare(&c, 0, 0.0).unwrap();
        let window = 2.0 * 3600.0;
        for b in matured_buckets(&p, c.bucket_width, window) {
            let lo = p.start + b.index as f64 * c.bucket_width;
            assert!(b.items.iter().all(|e| e.click_ts + window >= lo && e.click_ts + window < lo + c.bucket_width));
        }
    }
}
