//! The compared methods as (stream transform × weight source × loss).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::datagen::{ClickEvent, Features, SyntheticTruth};
use crate::error::{Error, Result};
use crate::learner::{apply_update, fit, train_step, AdamState, MlpModel, TrainConfig, Trainable, WeightedBatch, Workspace};
use crate::relabel::{transform_es, transform_fnw, transform_fsiw, transform_oracle, ElapsedPolicy, TrainingSample};
use crate::weighters::{
    build_dp_rn_dataset, es_weight, fsiw_weight, ideal_dp_rn, DfmModel, DfmSample, DualHeadEstimator, FsiwEstimators,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Pretrained,
    Vanilla,
    Oracle,
    Dfm,
    Fsiw,
    Fnw,
    Fnc,
    EsDfm,
}

impl MethodName {
    pub const ALL: [MethodName; 8] = [
        MethodName::Pretrained,
        MethodName::Vanilla,
        MethodName::Oracle,
        MethodName::Dfm,
        MethodName::Fsiw,
        MethodName::Fnw,
        MethodName::Fnc,
        MethodName::EsDfm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Pretrained => "pretrained",
            MethodName::Vanilla => "vanilla",
            MethodName::Oracle => "oracle",
            MethodName::Dfm => "dfm",
            MethodName::Fsiw => "fsiw",
            MethodName::Fnw => "fnw",
            MethodName::Fnc => "fnc",
            MethodName::EsDfm => "es_dfm",
        }
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config("methods", format!("unknown method `{s}`")))
    }
}

/// Which view of the click stream a method trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// No training data.
    None,
    Es,
    Fnw,
    Fsiw,
    Oracle,
}

/// `(f_dp, f_rn)` for a training sample, used to freeze the ES factors at chosen values.
pub type DpRnFn = Arc<dyn Fn(&TrainingSample) -> Result<(f64, f64)> + Send + Sync>;

#[derive(Clone)]
pub enum Weighting {
    /// No updates at all.
    None,
    Unit,
    /// ES weights from the trained dual-head estimator.
    Es,
    /// ES weights from the closed forms of a synthetic truth.
    EsIdeal,
    /// ES weights from caller-supplied factors.
    EsFixed(DpRnFn),
    Fsiw,
    /// `1 + p̂` / `(1 + p̂)(1 − p̂)` with `p̂` the model's own detached prediction.
    FnwLaw,
}

impl fmt::Debug for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Weighting::None => "None",
            Weighting::Unit => "Unit",
            Weighting::Es => "Es",
            Weighting::EsIdeal => "EsIdeal",
            Weighting::EsFixed(_) => "EsFixed(..)",
            Weighting::Fsiw => "Fsiw",
            Weighting::FnwLaw => "FnwLaw",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    WeightedCe,
    Dfm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    None,
    /// Invert the fake-negative distortion: `q / (1 − q)`.
    Fnc,
}

#[derive(Debug, Clone)]
pub struct MethodSpec {
    pub name: MethodName,
    pub transform: Transform,
    pub weighting: Weighting,
    pub loss: LossKind,
    pub calibration: Calibration,
}

impl MethodSpec {
    /// The standard configuration of each method.
    pub fn standard(name: MethodName) -> Self {
        let (transform, weighting, loss, calibration) = match name {
            MethodName::Pretrained => (Transform::None, Weighting::None, LossKind::WeightedCe, Calibration::None),
            MethodName::Vanilla => (Transform::Es, Weighting::Unit, LossKind::WeightedCe, Calibration::None),
            MethodName::Oracle => (Transform::Oracle, Weighting::Unit, LossKind::WeightedCe, Calibration::None),
            MethodName::Dfm => (Transform::Fsiw, Weighting::Unit, LossKind::Dfm, Calibration::None),
            MethodName::Fsiw => (Transform::Fsiw, Weighting::Fsiw, LossKind::WeightedCe, Calibration::None),
            MethodName::Fnw => (Transform::Fnw, Weighting::FnwLaw, LossKind::WeightedCe, Calibration::None),
            MethodName::Fnc => (Transform::Fnw, Weighting::Unit, LossKind::WeightedCe, Calibration::Fnc),
            MethodName::EsDfm => (Transform::Es, Weighting::Es, LossKind::WeightedCe, Calibration::None),
        };
        MethodSpec {
            name,
            transform,
            weighting,
            loss,
            calibration,
        }
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }
}

/// FNW weight with `p̂` the model's current CVR estimate.
pub fn fnw_weight(observed_label: u8, p_hat: f64) -> Result<f64> {
    es_weight(observed_label, p_hat, 1.0 - p_hat)
}

/// Largest input accepted by [`fnc_calibrate`]; larger values are clamped to it.
pub const FNC_MAX_INPUT: f64 = 0.5 - 1e-9;

/// Map a prediction trained on fake-negative labels back to a CVR.
pub fn fnc_calibrate(q: f64) -> f64 {
    let q = if q > FNC_MAX_INPUT {
        log::debug!("FNC input {q} clamped to {FNC_MAX_INPUT}");
        FNC_MAX_INPUT
    } else {
        q.max(0.0)
    };
    q / (1.0 - q)
}

/// Frozen auxiliary models and truth a method may draw weights from.
#[derive(Clone, Default)]
pub struct Estimators {
    pub dual_head: Option<DualHeadEstimator>,
    pub fsiw: Option<FsiwEstimators>,
    pub dfm: Option<DfmModel>,
    /// Known law of a synthetic stream, for ideal weights.
    pub truth: Option<SyntheticTruth>,
}

/// Dual-head training on matured clicks during streaming.
#[derive(Debug, Clone)]
pub struct EstimatorFeed {
    pub attribution_window: f64,
    pub config: TrainConfig,
}

#[derive(Debug, Clone)]
enum Model {
    Cvr(MlpModel),
    Dfm(DfmModel),
}

impl Model {
    fn params(&self) -> &[f64] {
        match self {
            Model::Cvr(m) => m.network().params(),
            Model::Dfm(m) => m.network().params(),
        }
    }

    fn workspace(&self) -> Workspace {
        match self {
            Model::Cvr(m) => m.network().workspace(),
            Model::Dfm(m) => m.workspace(),
        }
    }
}

/// A method ready to be streamed: its model, optimizer state and weight sources.
pub struct Method {
    spec: MethodSpec,
    policy: ElapsedPolicy,
    model: Model,
    adam: AdamState,
    config: TrainConfig,
    estimators: Arc<Estimators>,
    feed: Option<(EstimatorFeed, AdamState)>,
}

/// Assemble a method around a copy of the pre-trained model.
///
/// `policy` is the elapsed-time policy of the ES and FSIW transforms.
pub fn build_method(
    spec: MethodSpec,
    pretrained: &MlpModel,
    estimators: Arc<Estimators>,
    policy: ElapsedPolicy,
    config: TrainConfig,
) -> Result<Method> {
    config.validate()?;
    policy.validate()?;
    let missing = |what: &str| Error::config("methods", format!("method `{}` needs {what}", spec.name));
    match &spec.weighting {
        Weighting::Es if estimators.dual_head.is_none() => return Err(missing("a dual-head estimator")),
        Weighting::EsIdeal if estimators.truth.is_none() => return Err(missing("a synthetic ground truth")),
        Weighting::Fsiw if estimators.fsiw.is_none() => return Err(missing("FSIW estimators")),
        _ => {}
    }
    let model = match spec.loss {
        LossKind::Dfm => Model::Dfm(estimators.dfm.clone().ok_or_else(|| missing("a DFM model"))?),
        LossKind::WeightedCe => Model::Cvr(pretrained.clone()),
    };
    if matches!((&model, &spec.calibration), (Model::Dfm(_), Calibration::Fnc)) {
        return Err(Error::config("methods", "FNC calibration applies to CVR models only"));
    }
    let adam = AdamState::new(model.params().len());
    Ok(Method {
        spec,
        policy,
        model,
        adam,
        config,
        estimators,
        feed: None,
    })
}

impl Method {
    pub fn name(&self) -> MethodName {
        self.spec.name
    }

    pub fn spec(&self) -> &MethodSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        self.model.params()
    }

    pub fn workspace(&self) -> Workspace {
        self.model.workspace()
    }

    /// Keep training the dual-head estimator on clicks whose attribution window has closed.
    pub fn with_estimator_feed(mut self, feed: EstimatorFeed) -> Result<Self> {
        feed.config.validate()?;
        let n = self
            .estimators
            .dual_head
            .as_ref()
            .ok_or_else(|| Error::config("estimator_feed", "no dual-head estimator to continue"))?
            .network()
            .params()
            .len();
        self.feed = Some((feed, AdamState::new(n)));
        Ok(self)
    }

    /// The stream this method observes for the given clicks.
    pub fn training_stream(&self, events: &[ClickEvent], rng: &mut dyn RngCore) -> Result<Vec<TrainingSample>> {
        match self.spec.transform {
            Transform::None => Ok(Vec::new()),
            Transform::Es => transform_es(events, &self.policy, rng),
            Transform::Fnw => transform_fnw(events, rng),
            Transform::Fsiw => transform_fsiw(events, &self.policy, rng),
            Transform::Oracle => transform_oracle(events),
        }
    }

    /// Served CVR, calibrated where the method calls for it.
    pub fn predict(&self, x: &Features, ws: &mut Workspace) -> Result<f64> {
        match &self.model {
            Model::Cvr(m) => {
                let p = m.forward_with(x, ws)?;
                Ok(match self.spec.calibration {
                    Calibration::None => p,
                    Calibration::Fnc => fnc_calibrate(p).clamp(m.clamp_eps(), 1.0 - m.clamp_eps()),
                })
            }
            Model::Dfm(m) => m.predict_cvr(x, ws),
        }
    }

    pub fn predict_many<'a>(&self, xs: impl IntoIterator<Item = &'a Features>) -> Result<Vec<f64>> {
        let mut ws = self.workspace();
        xs.into_iter().map(|x| self.predict(x, &mut ws)).collect()
    }

    fn weights(&self, batch: &[&TrainingSample], ws: &mut Workspace) -> Result<Vec<f64>> {
        let est = &self.estimators;
        batch
            .iter()
            .map(|s| {
                let y = s.observed_label;
                match &self.spec.weighting {
                    Weighting::None | Weighting::Unit => Ok(1.0),
                    Weighting::Es => {
                        let (dp, rn) = est.dual_head.as_ref().expect("checked at build").predict(&s.features, ws)?;
                        es_weight(y, dp, rn)
                    }
                    Weighting::EsIdeal => {
                        let truth = est.truth.as_ref().expect("checked at build");
                        let (dp, rn) = ideal_dp_rn(truth, &s.features, s.click_ts, s.elapsed);
                        es_weight(y, dp, rn)
                    }
                    Weighting::EsFixed(f) => {
                        let (dp, rn) = f(s)?;
                        es_weight(y, dp, rn)
                    }
                    Weighting::Fsiw => {
                        let (obs, tn) = est.fsiw.as_ref().expect("checked at build").predict(&s.features, ws)?;
                        fsiw_weight(y, obs, tn)
                    }
                    Weighting::FnwLaw => {
                        let Model::Cvr(m) = &self.model else {
                            return Err(Error::Unsupported("FNW weights need a CVR model".into()));
                        };
                        fnw_weight(y, m.forward_with(&s.features, ws)?)
                    }
                }
            })
            .collect()
    }

    /// Train on one bucket of samples, in stream order, `passes` times.
    pub fn train_bucket(&mut self, samples: &[TrainingSample]) -> Result<()> {
        if matches!(self.spec.weighting, Weighting::None) || samples.is_empty() {
            return Ok(());
        }
        let mut aux_ws = self.estimators.dual_head.as_ref().map(|d| d.workspace());
        let mut fsiw_ws = self.estimators.fsiw.as_ref().map(|d| d.workspace());
        let mut own_ws = self.model.workspace();
        for _ in 0..self.config.passes {
            for chunk in samples.chunks(self.config.batch_size) {
                let batch: Vec<&TrainingSample> = chunk.iter().collect();
                match self.spec.loss {
                    LossKind::WeightedCe => {
                        let ws = match self.spec.weighting {
                            Weighting::Es => aux_ws.as_mut().expect("dual head present"),
                            Weighting::Fsiw => fsiw_ws.as_mut().expect("fsiw present"),
                            _ => &mut own_ws,
                        };
                        let weights = self.weights(&batch, ws)?;
                        let features = batch.iter().map(|s| &s.features).collect();
                        let labels = batch.iter().map(|s| s.observed_label).collect();
                        let wb = WeightedBatch::new(features, labels, weights)?;
                        let Model::Cvr(m) = &mut self.model else {
                            unreachable!("weighted CE methods hold a CVR model")
                        };
                        train_step(m, &wb, &mut self.adam, &self.config)?;
                    }
                    LossKind::Dfm => {
                        let Model::Dfm(m) = &mut self.model else {
                            unreachable!("DFM methods hold a DFM model")
                        };
                        let dfm: Vec<DfmSample> = batch.iter().map(|s| DfmSample::from_training(s)).collect::<Result<_>>()?;
                        let refs: Vec<&DfmSample> = dfm.iter().collect();
                        let (loss, grad) = m.batch_loss_and_grad(&refs, self.config.l2_strength)?;
                        apply_update(m.network_mut(), loss, &grad, &mut self.adam, &self.config)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Feed clicks whose attribution window closed during the current bucket to the estimator.
    ///
    /// A no-op unless the method was built with an [`EstimatorFeed`].
    pub fn feed_matured(&mut self, matured: &[ClickEvent], rng: &mut dyn RngCore) -> Result<()> {
        let Some((feed, adam)) = self.feed.as_mut() else {
            return Ok(());
        };
        if matured.is_empty() {
            return Ok(());
        }
        let data = build_dp_rn_dataset(matured, &self.policy, feed.attribution_window, rng)?;
        let estimators = Arc::make_mut(&mut self.estimators);
        let dual = estimators.dual_head.as_mut().expect("checked when the feed was attached");
        fit(dual, &data, adam, &feed.config, None)?;
        Ok(())
    }

    pub fn estimators(&self) -> &Estimators {
        &self.estimators
    }

    /// The CVR model, for methods that train one.
    pub fn cvr_model(&self) -> Option<&MlpModel> {
        match &self.model {
            Model::Cvr(m) => Some(m),
            Model::Dfm(_) => None,
        }
    }

    pub fn dfm_model(&self) -> Option<&DfmModel> {
        match &self.model {
            Model::Dfm(m) => Some(m),
            Model::Cvr(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{FeatureSchema, NetConfig};

    #[test]
    fn names_round_trip() {
        for m in MethodName::ALL {
            assert_eq!(m.as_str().parse::<MethodName>().unwrap(), m);
        }
        assert!(matches!("esdfm".parse::<MethodName>(), Err(Error::Config { .. })));
    }

    #[test]
    fn fnw_weight_examples() {
        assert_eq!(fnw_weight(1, 0.0).unwrap(), 1.0);
        assert_eq!(fnw_weight(0, 0.0).unwrap(), 1.0);
        assert_eq!(fnw_weight(1, 0.5).unwrap(), 1.5);
        assert_eq!(fnw_weight(0, 0.5).unwrap(), 0.75);
    }

    #[test]
    fn fnc_calibrate_examples() {
        assert!((fnc_calibrate(1.0 / 3.0) - 0.5).abs() < 1e-15);
        assert_eq!(fnc_calibrate(0.0), 0.0);
        for i in 1..10 {
            let p = i as f64 / 10.0;
            assert!((fnc_calibrate(p / (1.0 + p)) - p).abs() < 1e-12);
        }
        assert!(fnc_calibrate(0.7).is_finite());
    }

    fn tiny_model() -> MlpModel {
        MlpModel::new(
            FeatureSchema::discrete(2),
            NetConfig {
                embedding_dim: 2,
                hidden: vec![],
                leaky_slope: 0.01,
            },
            1e-7,
            0,
        )
        .unwrap()
    }

    #[test]
    fn missing_estimators_name_the_method() {
        let m = tiny_model();
        let empty = Arc::new(Estimators::default());
        for name in [MethodName::EsDfm, MethodName::Fsiw, MethodName::Dfm] {
            let err = build_method(
                MethodSpec::standard(name),
                &m,
                empty.clone(),
                ElapsedPolicy::Dirac(0.0),
                TrainConfig::default(),
            )
            .err()
            .expect("must fail");
            assert!(err.to_string().contains(name.as_str()), "{err}");
        }
        let ideal = MethodSpec::standard(MethodName::EsDfm).with_weighting(Weighting::EsIdeal);
        assert!(build_method(ideal, &m, empty, ElapsedPolicy::Dirac(0.0), TrainConfig::default()).is_err());
    }
}
