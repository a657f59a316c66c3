//! Parameter estimation: mean-field variational message passing over the
//! chain of per-step graphs, producing q(α) q(β) q(ϑ) q(γ) from preferred
//! (s̃, g̃) examples.
//!
//! Every slice is one [`VariationalSlice`]. The parameters run along
//! equality chains; `fwd[k]` is the chain message entering slice k from the
//! left and `bwd[k]` the one entering from the right. A sweep is a forward
//! pass (slices 1..n, refreshing each slice's local parameter messages and
//! pushing `fwd` right) followed by a backward pass (n..1, pushing `bwd`
//! left). Between slices the parameter transition is applied: identity for
//! the delta transition, or a Gaussian random walk on (α, β).

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DistError, GammaMessage, GaussianMessage, InverseGammaMessage};
use crate::ffg::{FfgError, Message, PairMessage, Scalar};
use crate::model::{HearingLossParams, ModelError, ModelId, Region, Theta, ThetaPriors, VariationalSlice};

#[derive(Debug, Error)]
pub enum PeError {
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("training data line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("slice {slice}: {source}")]
    Slice {
        slice: usize,
        #[source]
        source: ModelError,
    },
    #[error("iteration {sweep} produced an invalid posterior for {parameter}: {reason}")]
    IterationFailure { sweep: usize, parameter: &'static str, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

pub type Result<T> = std::result::Result<T, PeError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SegmentMeta {
    pub trial_id: u64,
    pub timestamp: String,
}

/// One preferred stretch of levels and gains (dB).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub s: Vec<f64>,
    pub g: Vec<f64>,
    #[serde(default)]
    pub meta: SegmentMeta,
}

impl Segment {
    pub fn validate(&self) -> Result<()> {
        if self.s.len() != self.g.len() {
            return Err(PeError::InvalidData(format!(
                "segment has {} levels but {} gains",
                self.s.len(),
                self.g.len()
            )));
        }
        if self.s.len() < 2 {
            return Err(PeError::InvalidData("segments need at least two steps".into()));
        }
        if self.s.iter().chain(&self.g).any(|v| !v.is_finite()) {
            return Err(PeError::InvalidData("segment contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// The training set D: a list of segments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSet {
    pub segments: Vec<Segment>,
}

impl TrainingSet {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        segments.iter().try_for_each(Segment::validate)?;
        Ok(Self { segments })
    }

    pub fn steps(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.steps() == 0
    }

    /// Parses JSON Lines, one segment per line; blank lines are skipped.
    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut segments = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let seg: Segment =
                serde_json::from_str(&line).map_err(|source| PeError::Parse { line: i + 1, source })?;
            segments.push(seg);
        }
        Self::new(segments)
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_jsonl(std::io::BufReader::new(file))
    }

    pub fn write_jsonl(&self, mut writer: impl Write) -> Result<()> {
        for seg in &self.segments {
            let line = serde_json::to_string(seg).map_err(std::io::Error::other)?;
            writeln!(writer, "{line}")?;
        }
        Ok(())
    }

    /// Flattens into slices; the first slice of each segment has no
    /// predecessor gain.
    pub fn slices(&self) -> Vec<Slice> {
        let mut out = Vec::with_capacity(self.steps());
        for seg in &self.segments {
            for k in 0..seg.len() {
                out.push(Slice {
                    s: seg.s[k],
                    g: seg.g[k],
                    g_prev: (k > 0).then(|| seg.g[k - 1]),
                });
            }
        }
        out
    }
}

/// One observed time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slice {
    pub s: f64,
    pub g: f64,
    /// Observed gain of the previous step, if this is not a segment start.
    pub g_prev: Option<f64>,
}

/// Factorized posterior q(α) q(β) q(ϑ) q(γ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSet {
    pub q_alpha: GaussianMessage,
    pub q_beta: GaussianMessage,
    pub q_obs_variance: InverseGammaMessage,
    pub q_gain_precision: GammaMessage,
}

impl From<ThetaPriors> for PosteriorSet {
    fn from(p: ThetaPriors) -> Self {
        Self {
            q_alpha: p.alpha,
            q_beta: p.beta,
            q_obs_variance: p.obs_variance,
            q_gain_precision: p.gain_precision,
        }
    }
}

impl PosteriorSet {
    /// Reuses the posterior as a prior.
    pub fn as_priors(&self) -> ThetaPriors {
        ThetaPriors {
            alpha: self.q_alpha,
            beta: self.q_beta,
            obs_variance: self.q_obs_variance,
            gain_precision: self.q_gain_precision,
        }
    }

    /// Key/value report: mean and variance per parameter plus the
    /// distribution parameters.
    pub fn report(&self) -> String {
        let fmt = |r: std::result::Result<f64, DistError>| match r {
            Ok(v) => v.to_string(),
            Err(_) => "undefined".to_string(),
        };
        let ig = &self.q_obs_variance;
        let gam = &self.q_gain_precision;
        [
            ("alpha_mean", self.q_alpha.mean().to_string()),
            ("alpha_var", self.q_alpha.variance().to_string()),
            ("beta_mean", self.q_beta.mean().to_string()),
            ("beta_var", self.q_beta.variance().to_string()),
            ("obs_variance_mean", fmt(ig.mean())),
            ("obs_variance_var", fmt(ig.variance())),
            ("obs_variance_shape", ig.shape().to_string()),
            ("obs_variance_scale", ig.scale().to_string()),
            ("gain_precision_mean", fmt(gam.mean())),
            ("gain_precision_var", fmt(gam.variance())),
            ("gain_precision_shape", gam.shape().to_string()),
            ("gain_precision_rate", gam.rate().to_string()),
        ]
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
    }
}

/// Posterior means as a runnable parameter setting.
pub fn point_estimate(post: &PosteriorSet) -> Result<Theta> {
    Ok(Theta::new(
        post.q_alpha.mean(),
        post.q_beta.mean(),
        post.q_obs_variance.mean()?,
        post.q_gain_precision.mean()?,
    )?)
}

/// How parameters evolve from one slice to the next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParameterTransition {
    /// θ_k = θ_{k−1}: one posterior for the whole data set.
    Delta,
    /// α_k ~ N(α_{k−1}, v) and β_k ~ N(β_{k−1}, v); ϑ and γ stay fixed.
    RandomWalk { variance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeConfig {
    pub iterations: usize,
    pub transition: ParameterTransition,
    /// Stop once every posterior mean moves less than this between sweeps.
    pub early_stop: Option<f64>,
}

impl Default for PeConfig {
    fn default() -> Self {
        Self { iterations: 200, transition: ParameterTransition::Delta, early_stop: None }
    }
}

/// Full result of an estimation run.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub posterior: PosteriorSet,
    /// Marginals of (α, β) at each slice after the last sweep.
    pub slice_marginals: Vec<(GaussianMessage, GaussianMessage)>,
    pub sweeps: usize,
    pub warnings: Vec<String>,
}

/// Posterior over θ given the training set.
pub fn estimate(data: &TrainingSet, priors: &ThetaPriors, cfg: &PeConfig) -> Result<PosteriorSet> {
    Ok(estimate_detailed(data, priors, cfg)?.posterior)
}

pub fn estimate_detailed(data: &TrainingSet, priors: &ThetaPriors, cfg: &PeConfig) -> Result<Estimate> {
    data.segments.iter().try_for_each(Segment::validate)?;
    estimate_slices(&data.slices(), priors, cfg)
}

/// Runs the estimator on an explicit list of slices.
pub fn estimate_slices(slices: &[Slice], priors: &ThetaPriors, cfg: &PeConfig) -> Result<Estimate> {
    if cfg.iterations == 0 {
        return Err(PeError::InvalidData("iterations must be at least 1".into()));
    }
    if slices.is_empty() {
        log::warn!("empty training set; returning the priors");
        return Ok(Estimate {
            posterior: (*priors).into(),
            slice_marginals: Vec::new(),
            sweeps: 0,
            warnings: vec!["empty training set: posterior equals prior".into()],
        });
    }
    if let ParameterTransition::RandomWalk { variance } = cfg.transition {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(PeError::InvalidData(format!(
                "random-walk variance must be positive, got {variance}"
            )));
        }
    }
    let mut engine = Engine::new(slices, priors, cfg)?;
    let mut sweeps = 0;
    let mut last = engine.posterior_at_start()?;
    for sweep in 1..=cfg.iterations {
        engine.forward_pass()?;
        engine.backward_pass()?;
        sweeps = sweep;
        let current = engine.posterior_at_start()?;
        audit(&current, sweep)?;
        if let Some(tol) = cfg.early_stop {
            if max_mean_shift(&last, &current) < tol {
                break;
            }
        }
        last = current;
    }
    let (posterior, slice_marginals) = engine.finish()?;
    audit(&posterior, sweeps)?;
    Ok(Estimate { posterior, slice_marginals, sweeps, warnings: Vec::new() })
}

fn max_mean_shift(a: &PosteriorSet, b: &PosteriorSet) -> f64 {
    let ig = |p: &PosteriorSet| p.q_obs_variance.scale() / p.q_obs_variance.shape();
    let gam = |p: &PosteriorSet| p.q_gain_precision.shape() / p.q_gain_precision.rate();
    [
        (a.q_alpha.mean() - b.q_alpha.mean()).abs(),
        (a.q_beta.mean() - b.q_beta.mean()).abs(),
        (ig(a) - ig(b)).abs(),
        (gam(a) - gam(b)).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn audit(p: &PosteriorSet, sweep: usize) -> Result<()> {
    let fail = |parameter, reason: String| Err(PeError::IterationFailure { sweep, parameter, reason });
    for (name, g) in [("alpha", &p.q_alpha), ("beta", &p.q_beta)] {
        if g.is_vague() || !g.mean().is_finite() || !g.variance().is_finite() {
            return fail(name, format!("N({}, {})", g.mean(), g.variance()));
        }
    }
    if !p.q_obs_variance.is_proper() {
        return fail(
            "obs_variance",
            format!("Ig({}, {})", p.q_obs_variance.shape(), p.q_obs_variance.scale()),
        );
    }
    if !p.q_gain_precision.is_proper() {
        return fail(
            "gain_precision",
            format!("Gam({}, {})", p.q_gain_precision.shape(), p.q_gain_precision.rate()),
        );
    }
    Ok(())
}

// Messages of one parameter chain.
struct Chain {
    fwd: Vec<Message>,
    bwd: Vec<Message>,
    local: Vec<Message>,
    vague: Message,
}

impl Chain {
    fn new(prior: Message, vague: Message, n: usize) -> Self {
        let mut fwd = vec![vague; n];
        fwd[0] = prior;
        Self { fwd, bwd: vec![vague; n], local: vec![vague; n], vague }
    }

    fn belief(&self, k: usize) -> std::result::Result<Message, FfgError> {
        self.fwd[k].product(&self.local[k])?.product(&self.bwd[k])
    }
}

struct Engine<'a> {
    slices: &'a [Slice],
    transition: ParameterTransition,
    reference: VariationalSlice,
    start: VariationalSlice,
    gamma: Chain,
    vartheta: Chain,
    hearing: Chain,
}

impl<'a> Engine<'a> {
    fn new(slices: &'a [Slice], priors: &ThetaPriors, cfg: &PeConfig) -> Result<Self> {
        let n = slices.len();
        Ok(Self {
            slices,
            transition: cfg.transition,
            reference: VariationalSlice::new(ModelId::Reference, *priors)?,
            start: VariationalSlice::new(ModelId::AlternativeUnconstrainedGain, *priors)?,
            gamma: Chain::new(Message::Gamma(priors.gain_precision), Message::Gamma(GammaMessage::vague()), n),
            vartheta: Chain::new(
                Message::InverseGamma(priors.obs_variance),
                Message::InverseGamma(InverseGammaMessage::vague()),
                n,
            ),
            hearing: Chain::new(
                Message::Pair(PairMessage::gaussian(priors.alpha, priors.beta)),
                Message::Pair(PairMessage::vague()),
                n,
            ),
        })
    }

    fn transit(&self, m: Message) -> std::result::Result<Message, DistError> {
        match (self.transition, m) {
            (ParameterTransition::RandomWalk { variance }, Message::Pair(p)) => {
                let widen = |s: Scalar| -> std::result::Result<Scalar, DistError> {
                    if s.is_vague() {
                        Ok(s)
                    } else {
                        Ok(Scalar::Gaussian(GaussianMessage::new(s.mean(), s.variance() + variance)?))
                    }
                };
                Ok(Message::Pair(PairMessage { alpha: widen(p.alpha)?, beta: widen(p.beta)? }))
            }
            _ => Ok(m),
        }
    }

    // Zurek branch for slice k under the current (α, β) belief means.
    fn region(&self, k: usize) -> std::result::Result<Region, FfgError> {
        let belief = self.hearing.belief(k)?.as_pair().expect("pair chain");
        let sl = &self.slices[k];
        Ok(match HearingLossParams::new(belief.alpha.mean(), belief.beta.mean()) {
            Ok(h) => h.region(sl.s + sl.g),
            Err(_) => Region::Flat,
        })
    }

    // Refreshes the local messages of slice k; returns the chain messages
    // leaving it to the right and to the left.
    fn visit(&mut self, k: usize) -> std::result::Result<([Message; 3], [Message; 3]), ModelError> {
        let sl = self.slices[k];
        let region = self.region(k)?;
        let graph = if sl.g_prev.is_some() { &mut self.reference } else { &mut self.start };
        graph.observe(sl.s, sl.g, sl.g_prev.unwrap_or(sl.g), region)?;
        if let Some(c) = graph.gain_precision {
            graph.load_chain(c, self.gamma.fwd[k], self.gamma.bwd[k], self.gamma.local[k])?;
        }
        let (v, h) = (graph.obs_variance, graph.hearing);
        graph.load_chain(v, self.vartheta.fwd[k], self.vartheta.bwd[k], self.vartheta.local[k])?;
        graph.load_chain(h, self.hearing.fwd[k], self.hearing.bwd[k], self.hearing.local[k])?;
        graph.run()?;

        let missing = |what: &str| ModelError::Ffg(FfgError::Structure(format!("{what} not computed")));
        let take = |m: Option<Message>, what: &str| m.ok_or_else(|| missing(what));
        let (right_g, left_g) = match graph.gain_precision {
            Some(c) => {
                self.gamma.local[k] = take(graph.local_message(c), "gamma local")?;
                (take(graph.rightward(c), "gamma'")?, take(graph.leftward(c), "gamma''")?)
            }
            None => {
                self.gamma.local[k] = self.gamma.vague;
                (self.gamma.fwd[k], self.gamma.bwd[k])
            }
        };
        self.vartheta.local[k] = take(graph.local_message(v), "vartheta local")?;
        self.hearing.local[k] = take(graph.local_message(h), "alpha_beta local")?;
        Ok((
            [right_g, take(graph.rightward(v), "vartheta''")?, take(graph.rightward(h), "alpha_beta''")?],
            [left_g, take(graph.leftward(v), "vartheta'")?, take(graph.leftward(h), "alpha_beta'")?],
        ))
    }

    /// Left-to-right sweep: refresh each slice, then pass its rightward
    /// chain messages through the transition.
    fn forward_pass(&mut self) -> Result<()> {
        let n = self.slices.len();
        for k in 0..n {
            let (right, _) = self.visit(k).map_err(|source| PeError::Slice { slice: k, source })?;
            if k + 1 < n {
                self.gamma.fwd[k + 1] = self.transit(right[0])?;
                self.vartheta.fwd[k + 1] = self.transit(right[1])?;
                self.hearing.fwd[k + 1] = self.transit(right[2])?;
            }
        }
        Ok(())
    }

    /// Right-to-left sweep, mirroring [`Engine::forward_pass`].
    fn backward_pass(&mut self) -> Result<()> {
        for k in (0..self.slices.len()).rev() {
            let (_, left) = self.visit(k).map_err(|source| PeError::Slice { slice: k, source })?;
            if k > 0 {
                self.gamma.bwd[k - 1] = self.transit(left[0])?;
                self.vartheta.bwd[k - 1] = self.transit(left[1])?;
                self.hearing.bwd[k - 1] = self.transit(left[2])?;
            }
        }
        Ok(())
    }

    fn posterior_from(g: Message, v: Message, h: Message) -> Result<PosteriorSet> {
        let bad = |name: &str, m: &Message| {
            PeError::InvalidData(format!("{name} posterior has family {}", m.family()))
        };
        let pair = h.as_pair().ok_or_else(|| bad("alpha_beta", &h))?;
        let gauss = |s: Scalar| -> Result<GaussianMessage> {
            match s {
                Scalar::Gaussian(g) => Ok(g),
                Scalar::Delta(d) => Ok(GaussianMessage::new(d.point(), crate::dist::VARIANCE_FLOOR)?),
            }
        };
        Ok(PosteriorSet {
            q_alpha: gauss(pair.alpha)?,
            q_beta: gauss(pair.beta)?,
            q_obs_variance: v.as_inverse_gamma().ok_or_else(|| bad("obs_variance", &v))?,
            q_gain_precision: g.as_gamma().ok_or_else(|| bad("gain_precision", &g))?,
        })
    }

    fn posterior_at_start(&self) -> Result<PosteriorSet> {
        let belief = |c: &Chain| c.belief(0).map_err(|e| PeError::Model(e.into()));
        Self::posterior_from(belief(&self.gamma)?, belief(&self.vartheta)?, belief(&self.hearing)?)
    }

    /// Re-propagates the forward chain with the final local messages and
    /// reports the marginal at the last slice plus per-slice (α, β).
    fn finish(mut self) -> Result<(PosteriorSet, Vec<(GaussianMessage, GaussianMessage)>)> {
        let n = self.slices.len();
        let wrap = |e: FfgError| PeError::Model(e.into());
        for k in 0..n - 1 {
            for c in [&mut self.gamma, &mut self.vartheta] {
                c.fwd[k + 1] = c.fwd[k].product(&c.local[k]).map_err(wrap)?;
            }
            let next = self.hearing.fwd[k].product(&self.hearing.local[k]).map_err(wrap)?;
            self.hearing.fwd[k + 1] = self.transit(next)?;
        }
        let mut marginals = Vec::with_capacity(n);
        for k in 0..n {
            let p = self.hearing.belief(k).map_err(wrap)?.as_pair().expect("pair chain");
            match (p.alpha, p.beta) {
                (Scalar::Gaussian(a), Scalar::Gaussian(b)) => marginals.push((a, b)),
                _ => return Err(PeError::InvalidData("point-mass (alpha, beta) marginal".into())),
            }
        }
        let last = |c: &Chain| c.fwd[n - 1].product(&c.local[n - 1]).map_err(wrap);
        let post = Self::posterior_from(last(&self.gamma)?, last(&self.vartheta)?, last(&self.hearing)?)?;
        Ok((post, marginals))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(s: &[f64], g: &[f64]) -> Segment {
        Segment { s: s.to_vec(), g: g.to_vec(), meta: SegmentMeta::default() }
    }

    #[test]
    fn training_set_validation() {
        assert!(TrainingSet::new(vec![seg(&[1.0, 2.0], &[1.0])]).is_err());
        assert!(TrainingSet::new(vec![seg(&[1.0], &[1.0])]).is_err());
        assert!(TrainingSet::new(vec![seg(&[1.0, f64::NAN], &[1.0, 2.0])]).is_err());
        assert!(TrainingSet::new(vec![seg(&[1.0, 2.0], &[3.0, 4.0])]).is_ok());
    }

    #[test]
    fn jsonl_round_trip() {
        let data = TrainingSet::new(vec![seg(&[60.0, 61.0], &[10.0, 9.5])]).unwrap();
        let mut buf = Vec::new();
        data.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"s\":[60.0,61.0],\"g\":[10.0,9.5],\"meta\":{\"trial_id\":0"));
        assert_eq!(TrainingSet::from_jsonl(&buf[..]).unwrap(), data);
        let err = TrainingSet::from_jsonl("\n{oops}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, PeError::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_data_returns_priors() {
        let priors = ThetaPriors::default();
        let est = estimate_detailed(&TrainingSet::default(), &priors, &PeConfig::default()).unwrap();
        assert_eq!(est.posterior, PosteriorSet::from(priors));
        assert_eq!(est.warnings.len(), 1);
    }

    #[test]
    fn point_estimate_of_priors() {
        let theta = point_estimate(&ThetaPriors::default().into()).unwrap();
        assert_eq!(theta, Theta::new(1.5, -50.0, 10.0, 10.0).unwrap());
    }

    #[test]
    fn point_estimate_needs_shape_above_one() {
        let mut post = PosteriorSet::from(ThetaPriors::default());
        post.q_obs_variance = InverseGammaMessage::new(1.0, 3.0).unwrap();
        assert!(point_estimate(&post).is_err());
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = PeConfig { iterations: 0, ..PeConfig::default() };
        let slices = [Slice { s: 60.0, g: 10.0, g_prev: None }];
        assert!(estimate_slices(&slices, &ThetaPriors::default(), &cfg).is_err());
    }

    #[test]
    fn report_keys() {
        let text = PosteriorSet::from(ThetaPriors::default()).report();
        for key in ["alpha_mean = 1.5", "beta_var = 100", "obs_variance_mean = 10", "gain_precision_rate = 1"] {
            assert!(text.contains(key), "{text}");
        }
    }
}
