//! Bayesian comparison of the reference model against the nested model
//! without a gain constraint.
//!
//! The nested model corresponds to a transition precision γ in O = [0, ω].
//! With an encompassing prior, its Bayes factor against the reference model
//! is the posterior mass of O divided by the prior mass of O. Both masses are
//! regularized lower incomplete gamma functions, evaluated in log space.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::dist::{DistError, GammaMessage};
use crate::model::ThetaPriors;
use crate::pe::{estimate_detailed, PeConfig, PeError, TrainingSet};

#[derive(Debug, Error)]
pub enum McError {
    #[error("omega must be positive and finite, got {0}")]
    InvalidOmega(f64),
    #[error("prior mass in O is {0:e}, below 1e-300; use the log-space evaluation")]
    Underflow(f64),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Pe(#[from] PeError),
}

pub type Result<T> = std::result::Result<T, McError>;

/// The nested region O = [0, ω] for γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NestingSpec {
    pub omega: f64,
}

impl NestingSpec {
    pub fn new(omega: f64) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(McError::InvalidOmega(omega));
        }
        Ok(Self { omega })
    }
}

impl Default for NestingSpec {
    fn default() -> Self {
        Self { omega: 0.25 }
    }
}

/// Bayes factor of the nested model over the reference model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BFResult {
    /// May underflow to 0 or overflow to infinity; `ln_ratio` is exact.
    pub ratio: f64,
    /// 10·log10(ratio).
    pub deci_hartley: f64,
    pub ln_ratio: f64,
    pub posterior_mass: f64,
    pub prior_mass: f64,
    pub ln_posterior_mass: f64,
    pub ln_prior_mass: f64,
}

impl BFResult {
    /// Key/value report for the command line.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "BF_ratio = {:e}", self.ratio);
        let _ = writeln!(out, "BF_dHart = {}", self.deci_hartley);
        let _ = writeln!(out, "posterior_mass_in_O = {:e}", self.posterior_mass);
        let _ = writeln!(out, "prior_mass_in_O = {:e}", self.prior_mass);
        out
    }
}

fn ln_mass(g: &GammaMessage, spec: &NestingSpec) -> Result<f64> {
    Ok(g.ln_cdf(spec.omega)?)
}

/// Encompassing-prior Bayes factor, computed in log space.
pub fn bayes_factor(posterior: &GammaMessage, prior: &GammaMessage, spec: &NestingSpec) -> Result<BFResult> {
    NestingSpec::new(spec.omega)?;
    let ln_post = ln_mass(posterior, spec)?;
    let ln_prior = ln_mass(prior, spec)?;
    let ln_ratio = ln_post - ln_prior;
    Ok(BFResult {
        ratio: ln_ratio.exp(),
        deci_hartley: 10.0 * ln_ratio / std::f64::consts::LN_10,
        ln_ratio,
        posterior_mass: ln_post.exp(),
        prior_mass: ln_prior.exp(),
        ln_posterior_mass: ln_post,
        ln_prior_mass: ln_prior,
    })
}

/// Same ratio from the masses themselves; fails when the prior mass is not
/// representable.
pub fn bayes_factor_direct(
    posterior: &GammaMessage,
    prior: &GammaMessage,
    spec: &NestingSpec,
) -> Result<BFResult> {
    NestingSpec::new(spec.omega)?;
    let post = posterior.cdf(spec.omega)?;
    let pri = prior.cdf(spec.omega)?;
    if pri < 1e-300 {
        return Err(McError::Underflow(pri));
    }
    let ratio = post / pri;
    Ok(BFResult {
        ratio,
        deci_hartley: 10.0 * ratio.log10(),
        ln_ratio: ratio.ln(),
        posterior_mass: post,
        prior_mass: pri,
        ln_posterior_mass: post.ln(),
        ln_prior_mass: pri.ln(),
    })
}

/// Estimates q(γ) on `data` and scores the nested model against it.
pub fn compare_models(
    data: &TrainingSet,
    priors: &ThetaPriors,
    spec: &NestingSpec,
    cfg: &PeConfig,
) -> Result<BFResult> {
    let est = estimate_detailed(data, priors, cfg)?;
    bayes_factor(&est.posterior.q_gain_precision, &priors.gain_precision, spec)
}
