//! Signal processing: recursive inference of the compensation gain.
//!
//! The posterior over g_k after observing s_1..s_k stays Gaussian,
//! N(ḡ_k, ϑ_g,k). It can be computed two ways that agree to rounding:
//! [`kalman_step`], the closed-form recursion, and [`MessageFilter`], which
//! runs the thirteen-message schedule on the per-step factor graph.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::GaussianMessage;
use crate::model::{ClampedSlice, ModelError, ModelId, Theta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("gain precision is zero; use the alternative-model path")]
    ZeroGainPrecision,
    #[error("invalid gain state: {0}")]
    InvalidState(String),
    #[error("level {level} dB is outside the characterization domain [0, {limit}) dB")]
    CharacterizationDomain { level: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, SpError>;

/// Posterior N(mean, variance) over the gain, in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainState {
    pub mean: f64,
    pub variance: f64,
}

impl GainState {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !variance.is_finite() || variance <= 0.0 {
            return Err(SpError::InvalidState(format!("N({mean}, {variance})")));
        }
        Ok(Self { mean, variance })
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn to_message(self) -> GaussianMessage {
        GaussianMessage::new(self.mean, self.variance).expect("gain state is a valid Gaussian")
    }
}

impl Default for GainState {
    /// The vague initial gain prior N(0, 1e4).
    fn default() -> Self {
        Self { mean: 0.0, variance: 1e4 }
    }
}

impl TryFrom<GaussianMessage> for GainState {
    type Error = SpError;

    fn try_from(m: GaussianMessage) -> Result<Self> {
        GainState::new(m.mean(), m.variance())
    }
}

/// One step of the closed-form gain recursion:
///
/// ```text
/// a   = α if s < β/(1 − α) else 1
/// ϑ_u = 1/γ + ϑ_g
/// K   = a ϑ_u / (ϑ + a² ϑ_u)
/// ḡ'  = ḡ + K (s − L(s + ḡ))
/// ϑ_g' = (1 − K a) ϑ_u
/// ```
pub fn kalman_step(prior: GainState, s: f64, theta: &Theta) -> Result<GainState> {
    if theta.gain_precision == 0.0 {
        return Err(SpError::ZeroGainPrecision);
    }
    let h = &theta.hearing;
    let a = h.active_slope(s);
    let predicted = 1.0 / theta.gain_precision + prior.variance;
    let k = a * predicted / (theta.obs_variance + a * a * predicted);
    let mean = prior.mean + k * (s - h.zurek_l(s + prior.mean));
    let variance = (1.0 - k * a) * predicted;
    GainState::new(mean, variance)
}

/// Gain inference by message passing on the clamped per-step graph.
#[derive(Debug, Clone)]
pub struct MessageFilter {
    theta: Theta,
    slice: ClampedSlice,
}

impl MessageFilter {
    pub fn new(theta: Theta) -> Result<Self> {
        Ok(Self { theta, slice: ClampedSlice::new(ModelId::Reference, theta)? })
    }

    pub fn slice(&self) -> &ClampedSlice {
        &self.slice
    }

    /// Runs the thirteen-message schedule for one observed level.
    pub fn step(&mut self, prior: GainState, s: f64) -> Result<GainState> {
        self.slice.set_prior(prior.to_message())?;
        self.slice.observe(s, &self.theta.hearing, prior.mean)?;
        self.slice.run()?;
        self.slice.posterior()?.try_into()
    }
}

/// One message-passing step with a freshly built graph.
pub fn sp_message_step(prior: GainState, s: f64, theta: &Theta) -> Result<GainState> {
    MessageFilter::new(*theta)?.step(prior, s)
}

/// Streaming gain tracker: constant memory per band.
#[derive(Debug, Clone, Copy)]
pub struct GainTracker {
    pub theta: Theta,
    pub state: GainState,
}

impl GainTracker {
    pub fn new(theta: Theta, initial: GainState) -> Self {
        Self { theta, state: initial }
    }

    pub fn update(&mut self, s: f64) -> Result<GainState> {
        self.state = kalman_step(self.state, s, &self.theta)?;
        Ok(self.state)
    }
}

/// Folds [`kalman_step`] over `levels`; one posterior per input.
pub fn run_sequence(levels: &[f64], theta: &Theta, initial: GainState) -> Result<Vec<GainState>> {
    let mut tracker = GainTracker::new(*theta, initial);
    levels.iter().map(|&s| tracker.update(s)).collect()
}

/// Trace as CSV with header `k,s_dB,g_mean_dB,g_sd_dB`, k counted from 1.
pub fn trace_csv(levels: &[f64], states: &[GainState]) -> String {
    let mut out = String::from("k,s_dB,g_mean_dB,g_sd_dB\n");
    for (k, (s, st)) in levels.iter().zip(states).enumerate() {
        let _ = writeln!(out, "{},{},{},{}", k + 1, s, st.mean, st.sd());
    }
    out
}

const STEADY_TOL: f64 = 1e-13;
const STEADY_MAX_ITER: usize = 100_000;

/// Fixed point of the recursion under a constant input level.
pub fn steady_state(s: f64, theta: &Theta) -> Result<GainState> {
    let mut state = GainState::default();
    for _ in 0..STEADY_MAX_ITER {
        let next = kalman_step(state, s, theta)?;
        let moved = (next.mean - state.mean).abs() + (next.variance - state.variance).abs();
        state = next;
        if moved < STEADY_TOL {
            break;
        }
    }
    Ok(state)
}

/// Steps until the gain stays within 2 dB of its final value when the
/// input jumps from `from` to `to` dB, starting at the `from` steady state.
pub fn settling_steps(from: f64, to: f64, theta: &Theta) -> Result<usize> {
    let start = steady_state(from, theta)?;
    let target = steady_state(to, theta)?.mean;
    let mut state = start;
    let mut settled_at = None;
    for k in 1..=STEADY_MAX_ITER {
        state = kalman_step(state, to, theta)?;
        let inside = (state.mean - target).abs() <= 2.0;
        match (inside, settled_at) {
            (true, None) => settled_at = Some(k),
            (false, Some(_)) => settled_at = None,
            _ => {}
        }
        if settled_at.is_some() && (state.mean - target).abs() < 1e-9 {
            break;
        }
    }
    Ok(settled_at.unwrap_or(STEADY_MAX_ITER))
}

/// Dynamic-range-compression summary of a parameter setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionCharacterization {
    /// Δinput / Δ(input + gain) between the two steady states.
    pub compression_ratio: f64,
    /// Settling steps after a rise from the low to the high level.
    pub attack_steps: usize,
    /// Settling steps after a fall from the high to the low level.
    pub release_steps: usize,
    /// (level dB, steady gain dB), ascending by level.
    pub steady_gain_per_level: Vec<(f64, f64)>,
}

/// Compression ratio, settling times and steady gains for two levels in the
/// recruitment image [0, RT).
pub fn characterize(theta: &Theta, low: f64, high: f64) -> Result<CompressionCharacterization> {
    let (low, high) = if low <= high { (low, high) } else { (high, low) };
    let limit = theta.hearing.beta / (1.0 - theta.hearing.alpha);
    for level in [low, high] {
        if !(0.0..limit).contains(&level) {
            return Err(SpError::CharacterizationDomain { level, limit });
        }
    }
    let g_low = steady_state(low, theta)?.mean;
    let g_high = steady_state(high, theta)?.mean;
    let compression_ratio = (high - low) / ((high + g_high) - (low + g_low));
    Ok(CompressionCharacterization {
        compression_ratio,
        attack_steps: settling_steps(low, high, theta)?,
        release_steps: settling_steps(high, low, theta)?,
        steady_gain_per_level: vec![(low, g_low), (high, g_high)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_theta() -> Theta {
        Theta::new(2.0, -90.0, 10.0, 1.0).unwrap()
    }

    #[test]
    fn hand_evaluated_step() {
        let post = kalman_step(GainState::new(0.0, 4.0).unwrap(), 80.0, &reference_theta()).unwrap();
        assert!((post.mean - 10.0 / 3.0).abs() < 1e-12);
        assert!((post.variance - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_has_zero_residual() {
        let post = kalman_step(GainState::new(5.0, 2.0).unwrap(), 80.0, &reference_theta()).unwrap();
        assert_eq!(post.mean, 5.0);
    }

    #[test]
    fn zero_precision_is_rejected() {
        let theta = Theta::new(2.0, -90.0, 10.0, 0.0).unwrap();
        assert_eq!(
            kalman_step(GainState::default(), 80.0, &theta),
            Err(SpError::ZeroGainPrecision)
        );
    }

    #[test]
    fn vague_observation_barely_moves() {
        let theta = Theta::new(2.0, -90.0, 1e12, 1e12).unwrap();
        let post = kalman_step(GainState::new(0.0, 1e-12).unwrap(), 80.0, &theta).unwrap();
        assert!(post.mean.abs() < 1e-9);
    }

    #[test]
    fn message_step_matches_example() {
        let post = sp_message_step(GainState::new(0.0, 4.0).unwrap(), 80.0, &reference_theta()).unwrap();
        assert!((post.mean - 10.0 / 3.0).abs() < 1e-9);
        assert!((post.variance - 5.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn characterize_rejects_identity_levels() {
        assert!(matches!(
            characterize(&reference_theta(), 55.0, 95.0),
            Err(SpError::CharacterizationDomain { .. })
        ));
    }

    #[test]
    fn csv_layout() {
        let states = [GainState::new(1.0, 4.0).unwrap()];
        assert_eq!(trace_csv(&[80.0], &states), "k,s_dB,g_mean_dB,g_sd_dB\n1,80,1,2\n");
    }
}
