//! Flat `key = value` configuration for θ and its priors.
//!
//! Recognized keys: `alpha`, `beta`, `obs_variance`, `gain_precision`,
//! `alpha_mean`, `alpha_var`, `beta_mean`, `beta_var`,
//! `obs_variance_shape`, `obs_variance_scale`, `gain_precision_shape`,
//! `gain_precision_rate`. Lines starting with `#` and blank lines are
//! ignored. Missing keys keep their defaults.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::dist::{DistError, GammaMessage, GaussianMessage, InverseGammaMessage};
use crate::model::{ModelError, Theta, ThetaPriors};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: {key} is not a number: {value:?}")]
    NotANumber { line: usize, key: String, value: String },
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Dist(#[from] DistError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const KEYS: [&str; 12] = [
    "alpha",
    "beta",
    "obs_variance",
    "gain_precision",
    "alpha_mean",
    "alpha_var",
    "beta_mean",
    "beta_var",
    "obs_variance_shape",
    "obs_variance_scale",
    "gain_precision_shape",
    "gain_precision_rate",
];

/// θ together with its priors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub theta: Theta,
    pub priors: ThetaPriors,
}

impl Default for ModelConfig {
    /// α = 2, β = −90, ϑ = 10, γ = 1 with the default priors.
    fn default() -> Self {
        Self {
            theta: Theta::new(2.0, -90.0, 10.0, 1.0).expect("valid default"),
            priors: ThetaPriors::default(),
        }
    }
}

impl ModelConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line: i + 1, key: key.to_string() });
            }
            let number: f64 = value.parse().map_err(|_| ConfigError::NotANumber {
                line: i + 1,
                key: key.to_string(),
                value: value.to_string(),
            })?;
            values.insert(key, number);
        }
        let d = Self::default();
        let get = |k: &str, default: f64| values.get(k).copied().unwrap_or(default);
        let theta = Theta::new(
            get("alpha", d.theta.hearing.alpha),
            get("beta", d.theta.hearing.beta),
            get("obs_variance", d.theta.obs_variance),
            get("gain_precision", d.theta.gain_precision),
        )?;
        let p = d.priors;
        let priors = ThetaPriors {
            alpha: GaussianMessage::new(
                get("alpha_mean", p.alpha.mean()),
                get("alpha_var", p.alpha.variance()),
            )?,
            beta: GaussianMessage::new(get("beta_mean", p.beta.mean()), get("beta_var", p.beta.variance()))?,
            obs_variance: InverseGammaMessage::new(
                get("obs_variance_shape", p.obs_variance.shape()),
                get("obs_variance_scale", p.obs_variance.scale()),
            )?,
            gain_precision: GammaMessage::new(
                get("gain_precision_shape", p.gain_precision.shape()),
                get("gain_precision_rate", p.gain_precision.rate()),
            )?,
        };
        Ok(Self { theta, priors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn to_kv_string(&self) -> String {
        let t = &self.theta;
        let p = &self.priors;
        let values = [
            t.hearing.alpha,
            t.hearing.beta,
            t.obs_variance,
            t.gain_precision,
            p.alpha.mean(),
            p.alpha.variance(),
            p.beta.mean(),
            p.beta.variance(),
            p.obs_variance.shape(),
            p.obs_variance.scale(),
            p.gain_precision.shape(),
            p.gain_precision.rate(),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
