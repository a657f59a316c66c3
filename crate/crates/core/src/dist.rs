//! Message types that flow on factor-graph edges, and the closed-form algebra
//! that every message update in this crate reduces to.
//!
//! Gaussians are handed out as (mean, variance) but kept in natural form
//! (mean, precision) internally so that products add precisions exactly.
//! Improper messages (flat likelihood factors) exist only behind explicit
//! constructors ([`GaussianMessage::vague`], [`GammaMessage::improper`],
//! [`InverseGammaMessage::improper`]); no raw infinity is ever stored.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::Serialize;
use thiserror::Error;

/// Gaussians with a variance below this are treated as point masses.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Variance used for "vague" but proper Gaussian priors.
pub const VAGUE_VARIANCE: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("argument outside the domain: {0}")]
    Domain(String),
    #[error("moment undefined: {0}")]
    UndefinedMoment(String),
}

type Result<T> = std::result::Result<T, DistError>;

fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(DistError::InvalidMessage(format!("{name} must be finite, got {value}")))
    }
}

/// Normal message N(mean, variance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMessage {
    mean: f64,
    // 0.0 marks the vague (flat) message; never negative.
    precision: f64,
}

impl GaussianMessage {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        ensure_finite("mean", mean)?;
        ensure_finite("variance", variance)?;
        if variance <= 0.0 {
            return Err(DistError::InvalidMessage(format!(
                "variance must be positive, got {variance}"
            )));
        }
        Ok(Self { mean, precision: 1.0 / variance })
    }

    /// Builds a message from its natural parameters (precision and
    /// precision-weighted mean). Zero precision gives the vague message.
    pub fn from_natural(precision: f64, weighted_mean: f64) -> Result<Self> {
        ensure_finite("precision", precision)?;
        ensure_finite("weighted mean", weighted_mean)?;
        if precision < 0.0 {
            return Err(DistError::InvalidMessage(format!(
                "precision must be non-negative, got {precision}"
            )));
        }
        if precision == 0.0 {
            if weighted_mean != 0.0 {
                return Err(DistError::InvalidMessage(
                    "flat message cannot carry a weighted mean".into(),
                ));
            }
            return Ok(Self::vague());
        }
        let mean = weighted_mean / precision;
        ensure_finite("mean", mean)?;
        Ok(Self { mean, precision })
    }

    /// The flat (improper) message; neutral under products.
    pub const fn vague() -> Self {
        Self { mean: 0.0, precision: 0.0 }
    }

    pub fn is_vague(&self) -> bool {
        self.precision == 0.0
    }

    /// True when the variance is below [`VARIANCE_FLOOR`].
    pub fn is_point(&self) -> bool {
        !self.is_vague() && self.variance() < VARIANCE_FLOOR
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Variance; `f64::INFINITY` for the vague message.
    pub fn variance(&self) -> f64 {
        if self.is_vague() {
            f64::INFINITY
        } else {
            1.0 / self.precision
        }
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    pub fn weighted_mean(&self) -> f64 {
        self.precision * self.mean
    }

    /// E[x²] under a proper message.
    pub fn second_moment(&self) -> f64 {
        self.mean * self.mean + self.variance()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let v = self.variance();
        (-(x - self.mean).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
    }

    fn require_proper(&self, what: &str) -> Result<()> {
        if self.is_vague() {
            Err(DistError::InvalidMessage(format!("{what} needs a proper Gaussian")))
        } else {
            Ok(())
        }
    }
}

/// Product of two Gaussian messages (equality-node rule).
///
/// Precisions add; the mean is precision-weighted. A vague operand is neutral.
pub fn gaussian_product(a: &GaussianMessage, b: &GaussianMessage) -> Result<GaussianMessage> {
    if a.is_vague() {
        return Ok(*b);
    }
    if b.is_vague() {
        return Ok(*a);
    }
    let precision = a.precision + b.precision;
    let mean = (a.precision * a.mean + b.precision * b.mean) / precision;
    ensure_finite("product mean", mean)?;
    Ok(GaussianMessage { mean, precision })
}

/// Sum of two independent Gaussian variables.
pub fn gaussian_sum(a: &GaussianMessage, b: &GaussianMessage) -> GaussianMessage {
    if a.is_vague() || b.is_vague() {
        return GaussianMessage::vague();
    }
    let variance = a.variance() + b.variance();
    GaussianMessage { mean: a.mean + b.mean, precision: 1.0 / variance }
}

/// Gamma message over a precision, Gam(shape, rate), density ∝ x^(shape-1) e^(-rate x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaMessage {
    shape: f64,
    rate: f64,
}

impl GammaMessage {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        ensure_finite("shape", shape)?;
        ensure_finite("rate", rate)?;
        if shape <= 0.0 || rate <= 0.0 {
            return Err(DistError::InvalidMessage(format!(
                "gamma needs shape > 0 and rate > 0, got ({shape}, {rate})"
            )));
        }
        Ok(Self { shape, rate })
    }

    /// Likelihood-type message that may have zero rate (not normalizable).
    pub fn improper(shape: f64, rate: f64) -> Result<Self> {
        ensure_finite("shape", shape)?;
        ensure_finite("rate", rate)?;
        if shape <= 0.0 || rate < 0.0 {
            return Err(DistError::InvalidMessage(format!(
                "gamma factor needs shape > 0 and rate >= 0, got ({shape}, {rate})"
            )));
        }
        Ok(Self { shape, rate })
    }

    /// Gam(1, 0): the flat factor.
    pub const fn vague() -> Self {
        Self { shape: 1.0, rate: 0.0 }
    }

    /// Gamma with the given mean and variance (moment matching).
    pub fn from_mean_variance(mean: f64, variance: f64) -> Result<Self> {
        if mean <= 0.0 || variance <= 0.0 {
            return Err(DistError::InvalidMessage(format!(
                "gamma moments must be positive, got mean {mean}, variance {variance}"
            )));
        }
        Self::new(mean * mean / variance, mean / variance)
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn is_proper(&self) -> bool {
        self.rate > 0.0
    }

    pub fn mean(&self) -> Result<f64> {
        self.require_proper()?;
        Ok(self.shape / self.rate)
    }

    pub fn variance(&self) -> Result<f64> {
        self.require_proper()?;
        Ok(self.shape / (self.rate * self.rate))
    }

    /// P(X <= x).
    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.require_proper()?;
        regularized_lower_gamma(self.shape, self.rate * x.max(0.0))
    }

    /// ln P(X <= x), accurate far into the lower tail.
    pub fn ln_cdf(&self, x: f64) -> Result<f64> {
        self.require_proper()?;
        ln_regularized_lower_gamma(self.shape, self.rate * x.max(0.0))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 || !self.is_proper() {
            return 0.0;
        }
        (self.shape * self.rate.ln() + (self.shape - 1.0) * x.ln()
            - self.rate * x
            - ln_gamma(self.shape))
        .exp()
    }

    fn require_proper(&self) -> Result<()> {
        if self.is_proper() {
            Ok(())
        } else {
            Err(DistError::InvalidMessage("gamma factor with zero rate is not normalizable".into()))
        }
    }
}

/// Product of two Gamma messages: shapes add minus one, rates add.
pub fn gamma_product(a: &GammaMessage, b: &GammaMessage) -> Result<GammaMessage> {
    let shape = a.shape + b.shape - 1.0;
    if shape <= 0.0 {
        return Err(DistError::InvalidMessage(format!(
            "gamma product has non-positive shape {shape}"
        )));
    }
    GammaMessage::improper(shape, a.rate + b.rate)
}

/// Inverse-Gamma message over a variance, Ig(shape, scale),
/// density ∝ x^(-shape-1) e^(-scale / x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InverseGammaMessage {
    shape: f64,
    scale: f64,
}

impl InverseGammaMessage {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        ensure_finite("shape", shape)?;
        ensure_finite("scale", scale)?;
        if shape <= 0.0 || scale <= 0.0 {
            return Err(DistError::InvalidMessage(format!(
                "inverse gamma needs shape > 0 and scale > 0, got ({shape}, {scale})"
            )));
        }
        Ok(Self { shape, scale })
    }

    /// Likelihood-type factor. A Gaussian likelihood contributes shape -1/2,
    /// so shapes down to -1 (the flat factor) are accepted here.
    pub fn improper(shape: f64, scale: f64) -> Result<Self> {
        ensure_finite("shape", shape)?;
        ensure_finite("scale", scale)?;
        if shape < -1.0 || scale < 0.0 {
            return Err(DistError::InvalidMessage(format!(
                "inverse gamma factor needs shape >= -1 and scale >= 0, got ({shape}, {scale})"
            )));
        }
        Ok(Self { shape, scale })
    }

    /// Ig(-1, 0): the flat factor.
    pub const fn vague() -> Self {
        Self { shape: -1.0, scale: 0.0 }
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_proper(&self) -> bool {
        self.shape > 0.0 && self.scale > 0.0
    }

    pub fn mean(&self) -> Result<f64> {
        if !self.is_proper() || self.shape <= 1.0 {
            return Err(DistError::UndefinedMoment(format!(
                "inverse gamma mean needs shape > 1, got {}",
                self.shape
            )));
        }
        Ok(self.scale / (self.shape - 1.0))
    }

    pub fn variance(&self) -> Result<f64> {
        if !self.is_proper() || self.shape <= 2.0 {
            return Err(DistError::UndefinedMoment(format!(
                "inverse gamma variance needs shape > 2, got {}",
                self.shape
            )));
        }
        let d = self.shape - 1.0;
        Ok(self.scale * self.scale / (d * d * (self.shape - 2.0)))
    }

    /// E[1/x], the expected precision.
    pub fn mean_inverse(&self) -> Result<f64> {
        if !self.is_proper() {
            return Err(DistError::InvalidMessage("improper inverse gamma has no moments".into()));
        }
        Ok(self.shape / self.scale)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 || !self.is_proper() {
            return 0.0;
        }
        (self.shape * self.scale.ln() - (self.shape + 1.0) * x.ln()
            - self.scale / x
            - ln_gamma(self.shape))
        .exp()
    }
}

/// Product of two inverse-Gamma messages: shapes add plus one, scales add.
pub fn inverse_gamma_product(
    a: &InverseGammaMessage,
    b: &InverseGammaMessage,
) -> Result<InverseGammaMessage> {
    InverseGammaMessage::improper(a.shape + b.shape + 1.0, a.scale + b.scale)
}

/// Point mass on an observed or clamped value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaMessage {
    point: f64,
}

impl DeltaMessage {
    pub fn new(point: f64) -> Result<Self> {
        ensure_finite("point", point)?;
        Ok(Self { point })
    }

    pub fn point(&self) -> f64 {
        self.point
    }
}

/// Draws from a message treated as a distribution.
pub trait Sample {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64>;

    /// Deterministic single draw from a ChaCha8 stream seeded with `seed`.
    fn sample_seeded(&self, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample(&mut rng)
    }
}

impl Sample for GaussianMessage {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        self.require_proper("sampling")?;
        if self.is_point() {
            return Ok(self.mean);
        }
        let z: f64 = StandardNormal.sample(rng);
        Ok(self.mean + self.variance().sqrt() * z)
    }
}

// Gamma draws use rand_distr's Marsaglia-Tsang squeeze/rejection sampler
// (with the shape + 1 boost for shape < 1).
impl Sample for GammaMessage {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        if self.variance()? < VARIANCE_FLOOR {
            return self.mean();
        }
        let dist = Gamma::new(self.shape, 1.0 / self.rate)
            .map_err(|e| DistError::InvalidMessage(e.to_string()))?;
        Ok(dist.sample(rng))
    }
}

impl Sample for InverseGammaMessage {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        if !self.is_proper() {
            return Err(DistError::InvalidMessage("cannot sample an improper inverse gamma".into()));
        }
        if let Ok(v) = self.variance() {
            if v < VARIANCE_FLOOR {
                return self.mean();
            }
        }
        let dist = Gamma::new(self.shape, 1.0 / self.scale)
            .map_err(|e| DistError::InvalidMessage(e.to_string()))?;
        let precision: f64 = dist.sample(rng);
        Ok(1.0 / precision)
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x) Γ(1 - x) = π / sin(πx).
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const MAX_ITER: usize = 10_000;
const EPS: f64 = 1e-16;

fn check_gamma_args(shape: f64, x: f64) -> Result<()> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(DistError::Domain(format!("shape must be positive and finite, got {shape}")));
    }
    if !(x >= 0.0) {
        return Err(DistError::Domain(format!("x must be non-negative, got {x}")));
    }
    Ok(())
}

// ln of Σ_n x^n / ((a+1)...(a+n)); valid for x < a + 1.
fn ln_lower_series(shape: f64, x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut ap = shape;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term < sum * EPS {
            break;
        }
    }
    sum.ln()
}

// Lentz continued fraction for Γ(a, x) e^x x^-a; valid for x >= a + 1.
fn upper_continued_fraction(shape: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - shape;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - shape);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// ln P(shape, x), the log of the regularized lower incomplete gamma function.
/// Returns `-inf` at x = 0.
pub fn ln_regularized_lower_gamma(shape: f64, x: f64) -> Result<f64> {
    check_gamma_args(shape, x)?;
    if x == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let ln_prefix = shape * x.ln() - x;
    if x < shape + 1.0 {
        Ok(ln_prefix - ln_gamma(shape + 1.0) + ln_lower_series(shape, x))
    } else {
        let q = (ln_prefix - ln_gamma(shape)).exp() * upper_continued_fraction(shape, x);
        Ok((-q).ln_1p())
    }
}

/// P(shape, x) = γ(shape, x) / Γ(shape).
pub fn regularized_lower_gamma(shape: f64, x: f64) -> Result<f64> {
    Ok(ln_regularized_lower_gamma(shape, x)?.exp())
}

/// Q(shape, x) = 1 - P(shape, x), computed without cancellation.
pub fn regularized_upper_gamma(shape: f64, x: f64) -> Result<f64> {
    check_gamma_args(shape, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x < shape + 1.0 {
        Ok(-(ln_regularized_lower_gamma(shape, x)?.exp_m1()))
    } else {
        let ln_prefix = shape * x.ln() - x - ln_gamma(shape);
        Ok(ln_prefix.exp() * upper_continued_fraction(shape, x))
    }
}
