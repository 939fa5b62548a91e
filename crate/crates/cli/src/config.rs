//! Experiment configuration, read from a TOML document.
//!
//! ```toml
//! schema_version = 1
//! methods = ["vanilla", "oracle", "es_dfm"]
//! elapsed = 900          # seconds
//! seeds = [1, 2, 3]
//!
//! [data]
//! source = "synthetic"
//! generator = { n_events = 50000, horizon = 172800, feature_space = { discrete = 8 } }
//! truth = { kind = "random", seed = 7 }
//! ```

use std::path::{Path, PathBuf};

use esdfm_core::datagen::{CvrDrift, GenConfig};
use esdfm_core::learner::{NetConfig, TrainConfig};
use esdfm_core::methods::MethodName;
use esdfm_core::weighters::DfmConfig;
use esdfm_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// 30 days, the attribution window used for logged data.
pub const DEFAULT_ATTRIBUTION_WINDOW: f64 = 30.0 * 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSpec {
    /// Random logistic truth matching the generator's average CVR and delay scale.
    Random {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        drift: Option<CvrDrift>,
    },
    PerCell {
        cvr: Vec<f64>,
        delay_rate: Vec<f64>,
        #[serde(default)]
        drift: Option<CvrDrift>,
    },
}

impl Default for TruthSpec {
    fn default() -> Self {
        TruthSpec::Random { seed: 0, drift: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// The generator seed is offset by the run seed, so each seed draws a fresh stream from a fixed truth.
    Synthetic {
        #[serde(default)]
        generator: GenConfig,
        #[serde(default)]
        truth: TruthSpec,
    },
    Criteo {
        path: PathBuf,
    },
}

/// Where the ES factors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EsWeightSource {
    #[default]
    Estimated,
    /// Closed forms from the synthetic truth.
    Ideal,
}

fn default_elapsed() -> f64 {
    900.0
}

fn default_bucket_width() -> f64 {
    3600.0
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub data: DataSource,
    pub methods: Vec<MethodName>,
    /// Dirac elapsed time `c`, seconds.
    #[serde(default = "default_elapsed")]
    pub elapsed: f64,
    #[serde(default = "default_bucket_width")]
    pub bucket_width: f64,
    /// Disturbance strength applied to the streaming half.
    #[serde(default)]
    pub disturbance: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seconds; defaults to 30 days for logged data and the horizon for synthetic data.
    #[serde(default)]
    pub attribution_window: Option<f64>,
    #[serde(default)]
    pub es_weights: EsWeightSource,
    /// Keep training the dual-head estimator on matured clicks while streaming.
    #[serde(default)]
    pub estimator_feed: bool,
    #[serde(default)]
    pub model: NetConfig,
    /// Streaming updates.
    #[serde(default)]
    pub train: TrainConfig,
    /// Offline training of the CVR model on the pre-training half.
    #[serde(default)]
    pub pretrain: TrainConfig,
    /// Offline training of the auxiliary estimators.
    #[serde(default)]
    pub estimator: TrainConfig,
    #[serde(default)]
    pub dfm: DfmConfig,
}

impl ExperimentConfig {
    /// Defaults for a given data source and method list.
    pub fn new(data: DataSource, methods: Vec<MethodName>) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            data,
            methods,
            elapsed: default_elapsed(),
            bucket_width: default_bucket_width(),
            disturbance: 0.0,
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            attribution_window: None,
            es_weights: EsWeightSource::default(),
            estimator_feed: false,
            model: NetConfig::default(),
            train: TrainConfig::default(),
            pretrain: TrainConfig::default(),
            estimator: TrainConfig::default(),
            dfm: DfmConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            field: "config".into(),
            reason: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            field: "config".into(),
            reason: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::Config {
                field: field.into(),
                reason,
            })
        };
        if self.schema_version != SCHEMA_VERSION {
            return bad(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            );
        }
        if self.methods.is_empty() {
            return bad("methods", "at least one method is required".into());
        }
        if !(self.elapsed.is_finite() && self.elapsed >= 0.0) {
            return bad("elapsed", format!("must be finite and >= 0, got {}", self.elapsed));
        }
        if !(self.bucket_width.is_finite() && self.bucket_width > 0.0) {
            return bad("bucket_width", format!("must be > 0, got {}", self.bucket_width));
        }
        if !(0.0..=1.0).contains(&self.disturbance) {
            return bad("disturbance", format!("must lie in [0, 1], got {}", self.disturbance));
        }
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required".into());
        }
        if let Some(w) = self.attribution_window {
            if !(w.is_finite() && w > 0.0) {
                return bad("attribution_window", format!("must be > 0, got {w}"));
            }
        }
        if let DataSource::Synthetic { generator, .. } = &self.data {
            generator.validate()?;
        }
        if self.es_weights == EsWeightSource::Ideal && matches!(self.data, DataSource::Criteo { .. }) {
            return bad("es_weights", "ideal weights need synthetic data".into());
        }
        self.train.validate()?;
        self.pretrain.validate()?;
        self.estimator.validate()?;
        Ok(())
    }

    pub fn attribution_window(&self) -> f64 {
        match (&self.attribution_window, &self.data) {
            (Some(w), _) => *w,
            (None, DataSource::Synthetic { generator, .. }) => generator.horizon,
            (None, DataSource::Criteo { .. }) => DEFAULT_ATTRIBUTION_WINDOW,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        schema_version = 1
        methods = ["vanilla", "oracle", "es_dfm"]
        [data]
        source = "synthetic"
    "#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.elapsed, 900.0);
        assert_eq!(c.bucket_width, 3600.0);
        assert_eq!(c.train.learning_rate, 1e-3);
        assert_eq!(c.model.hidden, vec![256, 256, 128]);
        assert_eq!(c.methods, vec![MethodName::Vanilla, MethodName::Oracle, MethodName::EsDfm]);
        assert_eq!(c.attribution_window(), 48.0 * 3600.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.data = DataSource::Synthetic {
            generator: GenConfig::default(),
            truth: TruthSpec::PerCell {
                cvr: vec![0.1, 0.2],
                delay_rate: vec![1e-3, 2e-3],
                drift: Some(CvrDrift {
                    amplitude: 0.5,
                    period: 86_400.0,
                    phases: vec![0.0, 1.0],
                }),
            },
        };
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_values_name_the_field() {
        let cases = [
            ("methods = []", "methods"),
            ("methods = [\"vanilla\"]\nelapsed = -1.0", "elapsed"),
            ("methods = [\"vanilla\"]\ndisturbance = 1.5", "disturbance"),
        ];
        for (body, field) in cases {
            let text = format!("schema_version = 1\n{body}\n[data]\nsource = \"synthetic\"\n");
            match ExperimentConfig::from_toml(&text) {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{body}: {other:?}"),
            }
        }
        let wrong_version = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(ExperimentConfig::from_toml(&wrong_version).is_err());
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("es_dfm", "esdfm")).is_err());
    }
}
