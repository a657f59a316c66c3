//! Hearing-loss compensation as Bayesian inference on a generative model.
//!
//! The gain applied by the hearing aid is inferred by message passing on a
//! Forney-style factor graph of the model. The same graph machinery fits the
//! model parameters from preferred input/output examples, scores a nested
//! model variant with a Bayes factor, and drives an in-situ personalization
//! loop with Thompson sampling.
//!
//! Module map:
//!
//! * [`dist`]: exponential-family message types and their closed-form algebra.
//! * [`ffg`]: factor graph, node update rules and schedule execution.
//! * [`model`]: the hearing-loss model (Zurek loss curve, per-step graphs,
//!   synthetic training data).
//! * [`sp`]: recursive gain inference (message schedule and Kalman form).
//! * [`pe`]: variational forward/backward parameter estimation.
//! * [`mc`]: nested model comparison by the encompassing-prior ratio.
//! * [`hada`]: the trial/appraisal personalization agent.
//! * [`audio`]: frame-based WAV processing.
//! * [`config`]: `key = value` files for parameters and priors.

pub mod audio;
pub mod config;
pub mod dist;
pub mod ffg;
pub mod hada;
pub mod mc;
pub mod model;
pub mod pe;
pub mod sp;

pub use dist::{DeltaMessage, GammaMessage, GaussianMessage, InverseGammaMessage};
pub use model::{HearingLossParams, ModelId, Theta, ThetaPriors};
pub use pe::{PeConfig, PosteriorSet, TrainingSet};
pub use sp::GainState;
