//! The hearing-loss-compensation generative model.
//!
//! Per time step k the model ties the input level s_k (dB) and the gain g_k
//! (dB) together through Zurek's loss curve L and Gaussian observation noise:
//!
//! ```text
//! g_k ~ N(g_{k-1}, 1/γ)
//! s_k ~ N(L(s_k + g_k; α, β), ϑ)
//! ```
//!
//! This module holds the loss curve, the parameter bundles, the per-step
//! factor graphs and a synthetic-data generator built on the oracle gain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DistError, GammaMessage, GaussianMessage, InverseGammaMessage};
use crate::ffg::{
    Direction, EdgeId, FactorKind, FfgError, Graph, Linearization, Message, NodeId, NoiseParam,
    PairMessage, Rule, Schedule,
};
use crate::pe::{Segment, SegmentMeta, TrainingSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("degenerate parameters: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Ffg(#[from] FfgError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Branch of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// Below the hearing threshold: nothing is heard.
    Flat,
    /// Between the thresholds: loudness grows with slope α.
    Recruitment,
    /// Above the recruitment threshold: normal hearing.
    Identity,
}

impl Region {
    pub fn slope(self, alpha: f64) -> f64 {
        match self {
            Region::Flat => 0.0,
            Region::Recruitment => alpha,
            Region::Identity => 1.0,
        }
    }
}

/// Slope α and offset β (dB) of Zurek's loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HearingLossParams {
    pub alpha: f64,
    pub beta: f64,
}

impl HearingLossParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() || alpha == 0.0 {
            return Err(ModelError::Degenerate(format!(
                "need finite alpha != 0 and finite beta, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// HT = −β/α.
    pub fn hearing_threshold(&self) -> f64 {
        -self.beta / self.alpha
    }

    /// RT = −β/(α − 1); `None` when α = 1.
    pub fn recruitment_threshold(&self) -> Option<f64> {
        (self.alpha != 1.0).then(|| -self.beta / (self.alpha - 1.0))
    }

    /// (HT, RT) in dB.
    pub fn thresholds(&self) -> Result<(f64, f64)> {
        if self.alpha == 0.0 || self.alpha == 1.0 {
            return Err(ModelError::Degenerate(format!(
                "thresholds undefined for alpha = {}",
                self.alpha
            )));
        }
        Ok((self.hearing_threshold(), -self.beta / (self.alpha - 1.0)))
    }

    /// Zurek's loss L(x): perceived level for a presented level x.
    pub fn zurek_l(&self, x: f64) -> f64 {
        if x < self.hearing_threshold() {
            return 0.0;
        }
        match self.recruitment_threshold() {
            Some(rt) if x >= rt => x,
            _ => self.alpha * x + self.beta,
        }
    }

    /// Which branch of L contains x.
    pub fn region(&self, x: f64) -> Region {
        if x < self.hearing_threshold() {
            Region::Flat
        } else if self.recruitment_threshold().is_some_and(|rt| x >= rt) {
            Region::Identity
        } else {
            Region::Recruitment
        }
    }

    /// Region used by the gain recursion: recruitment when x < β/(1 − α),
    /// identity otherwise. Never flat.
    pub fn slope_region(&self, x: f64) -> Region {
        if x < self.beta / (1.0 - self.alpha) {
            Region::Recruitment
        } else {
            Region::Identity
        }
    }

    /// a = α when x < β/(1 − α), else 1.
    pub fn active_slope(&self, x: f64) -> f64 {
        self.slope_region(x).slope(self.alpha)
    }
}

/// The tuning parameters θ = {α, β, ϑ, γ}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub hearing: HearingLossParams,
    /// ϑ, observation noise variance in dB².
    pub obs_variance: f64,
    /// γ, gain transition precision in dB⁻².
    pub gain_precision: f64,
}

impl Theta {
    pub fn new(alpha: f64, beta: f64, obs_variance: f64, gain_precision: f64) -> Result<Self> {
        let theta = Self {
            hearing: HearingLossParams::new(alpha, beta)?,
            obs_variance,
            gain_precision,
        };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        HearingLossParams::new(self.hearing.alpha, self.hearing.beta)?;
        if !(self.obs_variance > 0.0) || !self.obs_variance.is_finite() {
            return Err(ModelError::Degenerate(format!(
                "observation variance must be positive, got {}",
                self.obs_variance
            )));
        }
        if !(self.gain_precision >= 0.0) || !self.gain_precision.is_finite() {
            return Err(ModelError::Degenerate(format!(
                "gain precision must be non-negative, got {}",
                self.gain_precision
            )));
        }
        Ok(())
    }
}

/// Independent priors over the four tuning parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaPriors {
    pub alpha: GaussianMessage,
    pub beta: GaussianMessage,
    pub obs_variance: InverseGammaMessage,
    pub gain_precision: GammaMessage,
}

impl Default for ThetaPriors {
    /// α ~ N(1.5, 0.2), β ~ N(−50, 100), ϑ ~ Ig(12, 110), γ ~ Gam(10, 1).
    fn default() -> Self {
        Self {
            alpha: GaussianMessage::new(1.5, 0.2).expect("valid prior"),
            beta: GaussianMessage::new(-50.0, 100.0).expect("valid prior"),
            obs_variance: InverseGammaMessage::new(12.0, 110.0).expect("valid prior"),
            gain_precision: GammaMessage::new(10.0, 1.0).expect("valid prior"),
        }
    }
}

/// Default vague prior on the initial gain, N(0, 1e4).
pub fn initial_gain_prior() -> GaussianMessage {
    GaussianMessage::new(0.0, 1e4).expect("valid prior")
}

/// Model architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelId {
    /// Gains follow a Gaussian random walk with precision γ.
    Reference,
    /// No constraint between consecutive gains.
    AlternativeUnconstrainedGain,
}

/// How θ enters the per-step graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaMode {
    Clamped(Theta),
    Variational(ThetaPriors),
}

#[derive(Debug, Clone)]
pub enum TimestepGraph {
    Clamped(ClampedSlice),
    Variational(VariationalSlice),
}

impl TimestepGraph {
    pub fn graph(&self) -> &Graph {
        match self {
            TimestepGraph::Clamped(s) => &s.graph,
            TimestepGraph::Variational(s) => &s.graph,
        }
    }
}

/// Builds the factor graph of one time step.
///
/// The alternative model keeps the graph shape but pins the transition
/// precision to zero, which turns the gain transition into a flat factor:
/// g_k then carries a vague prior and nothing flows back to g_{k−1}.
pub fn build_timestep_graph(model: ModelId, mode: ThetaMode) -> Result<TimestepGraph> {
    Ok(match mode {
        ThetaMode::Clamped(theta) => TimestepGraph::Clamped(ClampedSlice::new(model, theta)?),
        ThetaMode::Variational(priors) => {
            TimestepGraph::Variational(VariationalSlice::new(model, priors)?)
        }
    })
}

fn point(v: f64) -> Result<Message> {
    Ok(Message::point(v)?)
}

/// Edges of the clamped-θ graph used for gain inference.
#[derive(Debug, Clone, Copy)]
pub struct ClampedEdges {
    pub g_prev: EdgeId,
    pub gain_precision: EdgeId,
    pub transition_mean: EdgeId,
    pub step: EdgeId,
    pub g_sum: EdgeId,
    pub g_k: EdgeId,
    pub g_branch: EdgeId,
    pub s_in: EdgeId,
    pub s_branch: EdgeId,
    pub x: EdgeId,
    pub hearing: EdgeId,
    pub y: EdgeId,
    pub obs_variance: EdgeId,
    pub s_obs: EdgeId,
}

#[derive(Debug, Clone, Copy)]
pub struct ClampedNodes {
    pub g_prev: NodeId,
    pub gain_precision: NodeId,
    pub transition: NodeId,
    pub g_plus: NodeId,
    pub g_eq: NodeId,
    pub g_next: NodeId,
    pub s_clamp: NodeId,
    pub s_eq: NodeId,
    pub s_plus: NodeId,
    pub zurek: NodeId,
    pub hearing: NodeId,
    pub obs_noise: NodeId,
    pub obs_variance: NodeId,
}

/// One time step with θ observed: the thirteen-message gain update.
#[derive(Debug, Clone)]
pub struct ClampedSlice {
    pub model: ModelId,
    pub graph: Graph,
    pub nodes: ClampedNodes,
    pub edges: ClampedEdges,
    pub schedule: Schedule,
}

impl ClampedSlice {
    pub fn new(model: ModelId, theta: Theta) -> Result<Self> {
        theta.validate()?;
        let gamma = match model {
            ModelId::Reference => theta.gain_precision,
            ModelId::AlternativeUnconstrainedGain => 0.0,
        };
        let mut g = Graph::new();
        let e = ClampedEdges {
            g_prev: g.add_edge("g_prev"),
            gain_precision: g.add_edge("gamma"),
            transition_mean: g.add_edge("transition_mean"),
            step: g.add_edge("step"),
            g_sum: g.add_edge("g_sum"),
            g_k: g.add_edge("g_k"),
            g_branch: g.add_edge("g_branch"),
            s_in: g.add_edge("s_in"),
            s_branch: g.add_edge("s_branch"),
            x: g.add_edge("x"),
            hearing: g.add_edge("alpha_beta"),
            y: g.add_edge("y"),
            obs_variance: g.add_edge("vartheta"),
            s_obs: g.add_edge("s_obs"),
        };
        let vague = Message::Gaussian(GaussianMessage::vague());
        let n = ClampedNodes {
            g_prev: g.add_node("g_prev", FactorKind::Prior(Message::Gaussian(initial_gain_prior())), &[e.g_prev])?,
            gain_precision: g.add_node("gamma_clamp", FactorKind::Clamp(point(gamma)?), &[e.gain_precision])?,
            transition: {
                g.add_node("zero_transition", FactorKind::Clamp(point(0.0)?), &[e.transition_mean])?;
                g.add_node(
                    "transition_noise",
                    FactorKind::GaussianNoise(NoiseParam::Precision),
                    &[e.step, e.transition_mean, e.gain_precision],
                )?
            },
            g_plus: g.add_node("g_plus", FactorKind::Addition, &[e.g_prev, e.step, e.g_sum])?,
            g_eq: g.add_node("g_eq", FactorKind::Equality, &[e.g_sum, e.g_k, e.g_branch])?,
            g_next: g.add_node("g_next", FactorKind::Prior(vague), &[e.g_k])?,
            s_clamp: g.add_node("s_clamp", FactorKind::Clamp(point(0.0)?), &[e.s_in])?,
            s_eq: g.add_node("s_eq", FactorKind::Equality, &[e.s_in, e.s_branch, e.s_obs])?,
            s_plus: g.add_node("s_plus", FactorKind::Addition, &[e.s_branch, e.g_branch, e.x])?,
            zurek: g.add_node(
                "L",
                FactorKind::Zurek(Linearization { region: Region::Recruitment, expansion_point: 0.0 }),
                &[e.x, e.y, e.hearing],
            )?,
            hearing: g.add_node(
                "alpha_beta_clamp",
                FactorKind::Clamp(Message::Pair(PairMessage::point(theta.hearing)?)),
                &[e.hearing],
            )?,
            obs_noise: g.add_node(
                "obs_noise",
                FactorKind::GaussianNoise(NoiseParam::Variance),
                &[e.s_obs, e.y, e.obs_variance],
            )?,
            obs_variance: g.add_node(
                "vartheta_clamp",
                FactorKind::Clamp(point(theta.obs_variance)?),
                &[e.obs_variance],
            )?,
        };
        let sp = Rule::SumProduct;
        let mut s = Schedule::new();
        s.push(n.g_prev, e.g_prev, sp)
            .push(n.gain_precision, e.gain_precision, sp)
            .push(n.transition, e.step, sp)
            .push(n.g_plus, e.g_sum, sp)
            .push(n.s_clamp, e.s_in, sp)
            .push(n.s_eq, e.s_branch, sp)
            .push(n.hearing, e.hearing, sp)
            .push(n.obs_variance, e.obs_variance, sp)
            .push(n.s_eq, e.s_obs, sp)
            .push(n.obs_noise, e.y, sp)
            .push(n.zurek, e.x, sp)
            .push(n.s_plus, e.g_branch, sp)
            .push(n.g_eq, e.g_k, sp);
        Ok(Self { model, graph: g, nodes: n, edges: e, schedule: s })
    }

    /// Sets the belief over g_{k−1}.
    pub fn set_prior(&mut self, prior: GaussianMessage) -> Result<()> {
        Ok(self.graph.set_source(self.nodes.g_prev, Message::Gaussian(prior))?)
    }

    /// Clamps the observed level s_k and picks the Zurek branch from it.
    pub fn observe(&mut self, s: f64, hearing: &HearingLossParams, prior_mean: f64) -> Result<()> {
        self.graph.set_source(self.nodes.s_clamp, point(s)?)?;
        let lin = Linearization { region: hearing.slope_region(s), expansion_point: s + prior_mean };
        Ok(self.graph.set_linearization(self.nodes.zurek, lin)?)
    }

    pub fn run(&mut self) -> Result<()> {
        Ok(self.graph.execute(&self.schedule)?)
    }

    /// Posterior over g_k (product of the two messages on the g_k edge).
    pub fn posterior(&self) -> Result<GaussianMessage> {
        let m = self.graph.marginal(self.edges.g_k)?;
        m.as_gaussian().ok_or_else(|| {
            ModelError::Ffg(FfgError::Incompatible(format!("gain posterior is {}", m.family())))
        })
    }
}

/// Parameter edges on one slice: the equality node joining the chain
/// (`incoming` from the left, `outgoing` to the right) with the local edge
/// that runs to the factor using the parameter.
#[derive(Debug, Clone, Copy)]
pub struct ChainEdges {
    pub node: NodeId,
    pub incoming: EdgeId,
    pub outgoing: EdgeId,
    pub local: EdgeId,
}

#[derive(Debug, Clone, Copy)]
pub struct VariationalEdges {
    pub g_prev: EdgeId,
    pub transition_mean: EdgeId,
    pub step: EdgeId,
    pub g_sum: EdgeId,
    pub g_k: EdgeId,
    pub g_branch: EdgeId,
    pub s_in: EdgeId,
    pub s_branch: EdgeId,
    pub s_obs: EdgeId,
    pub x: EdgeId,
    pub y: EdgeId,
}

#[derive(Debug, Clone, Copy)]
pub struct VariationalNodes {
    pub g_prev: NodeId,
    pub zero: NodeId,
    pub transition: NodeId,
    pub g_plus: NodeId,
    pub g_eq: NodeId,
    pub g_k: NodeId,
    pub s_clamp: NodeId,
    pub s_eq: NodeId,
    pub s_plus: NodeId,
    pub zurek: NodeId,
    pub obs: NodeId,
}

/// One time step of the training chain with (s̃_k, g̃_k, g̃_{k−1}) observed
/// and θ on equality chains.
///
/// `seed` hands the chain belief to the local parameter edges, `left` is the
/// observation-side schedule ending in the variational parameter messages,
/// and `mix` pushes the updated parameter messages along the chain in both
/// directions.
#[derive(Debug, Clone)]
pub struct VariationalSlice {
    pub model: ModelId,
    pub priors: ThetaPriors,
    pub graph: Graph,
    pub nodes: VariationalNodes,
    pub edges: VariationalEdges,
    /// Absent in the alternative model, whose γ edge is pinned to zero.
    pub gain_precision: Option<ChainEdges>,
    pub obs_variance: ChainEdges,
    pub hearing: ChainEdges,
    pub seed: Schedule,
    pub left: Schedule,
    pub mix: Schedule,
}

impl VariationalSlice {
    pub fn new(model: ModelId, priors: ThetaPriors) -> Result<Self> {
        let mut g = Graph::new();
        let chain = |g: &mut Graph, name: &str| -> Result<ChainEdges> {
            let incoming = g.add_open_edge(format!("{name}'"));
            let outgoing = g.add_edge(format!("{name}''"));
            let local = g.add_edge(name.to_string());
            let node = g.add_node(format!("{name}_eq"), FactorKind::Equality, &[incoming, outgoing, local])?;
            Ok(ChainEdges { node, incoming, outgoing, local })
        };
        let gain_precision = match model {
            ModelId::Reference => Some(chain(&mut g, "gamma")?),
            ModelId::AlternativeUnconstrainedGain => None,
        };
        let obs_variance = chain(&mut g, "vartheta")?;
        let hearing = chain(&mut g, "alpha_beta")?;
        let gamma_edge = match gain_precision {
            Some(c) => c.local,
            None => {
                let edge = g.add_edge("gamma");
                g.add_node("gamma_clamp", FactorKind::Clamp(point(0.0)?), &[edge])?;
                edge
            }
        };
        let e = VariationalEdges {
            g_prev: g.add_edge("g_prev"),
            transition_mean: g.add_edge("transition_mean"),
            step: g.add_edge("step"),
            g_sum: g.add_edge("g_sum"),
            g_k: g.add_edge("g_k"),
            g_branch: g.add_edge("g_branch"),
            s_in: g.add_edge("s_in"),
            s_branch: g.add_edge("s_branch"),
            s_obs: g.add_edge("s_obs"),
            x: g.add_edge("x"),
            y: g.add_edge("y"),
        };
        let n = VariationalNodes {
            g_prev: g.add_node("g_prev_clamp", FactorKind::Clamp(point(0.0)?), &[e.g_prev])?,
            zero: g.add_node("zero_transition", FactorKind::Clamp(point(0.0)?), &[e.transition_mean])?,
            transition: g.add_node(
                "transition_noise",
                FactorKind::GaussianNoise(NoiseParam::Precision),
                &[e.step, e.transition_mean, gamma_edge],
            )?,
            g_plus: g.add_node("g_plus", FactorKind::Addition, &[e.g_prev, e.step, e.g_sum])?,
            g_eq: g.add_node("g_eq", FactorKind::Equality, &[e.g_sum, e.g_k, e.g_branch])?,
            g_k: g.add_node("g_k_clamp", FactorKind::Clamp(point(0.0)?), &[e.g_k])?,
            s_clamp: g.add_node("s_clamp", FactorKind::Clamp(point(0.0)?), &[e.s_in])?,
            s_eq: g.add_node("s_eq", FactorKind::Equality, &[e.s_in, e.s_branch, e.s_obs])?,
            s_plus: g.add_node("s_plus", FactorKind::Addition, &[e.s_branch, e.g_branch, e.x])?,
            zurek: g.add_node(
                "L",
                FactorKind::Zurek(Linearization { region: Region::Recruitment, expansion_point: 0.0 }),
                &[e.x, e.y, hearing.local],
            )?,
            obs: g.add_node(
                "obs_noise",
                FactorKind::GaussianNoise(NoiseParam::Variance),
                &[e.s_obs, e.y, obs_variance.local],
            )?,
        };

        let (sp, vmp) = (Rule::SumProduct, Rule::Variational);
        let mut left = Schedule::new();
        left.push(n.g_prev, e.g_prev, sp)
            .push(n.transition, e.step, vmp)
            .push(n.g_plus, e.g_sum, sp)
            .push(n.g_k, e.g_k, sp)
            .push(n.g_eq, e.g_branch, sp)
            .push(n.s_clamp, e.s_in, sp)
            .push(n.s_eq, e.s_branch, sp)
            .push(n.s_plus, e.x, sp)
            .push(n.zurek, e.y, vmp)
            .push(n.g_eq, e.g_sum, sp)
            .push(n.g_plus, e.step, sp)
            .push(n.s_eq, e.s_obs, sp)
            .push(n.obs, e.y, vmp)
            .push(n.zero, e.transition_mean, sp);
        if let Some(c) = gain_precision {
            left.push(n.transition, c.local, vmp);
        }
        left.push(n.obs, obs_variance.local, vmp).push(n.zurek, hearing.local, vmp);

        let chains: Vec<ChainEdges> =
            gain_precision.into_iter().chain([obs_variance, hearing]).collect();
        let mut seed = Schedule::new();
        let mut mix = Schedule::new();
        for c in &chains {
            seed.push(c.node, c.local, sp);
        }
        for c in &chains {
            mix.push(c.node, c.outgoing, sp);
        }
        for c in &chains {
            mix.push(c.node, c.incoming, sp);
        }

        Ok(Self {
            model,
            priors,
            graph: g,
            nodes: n,
            edges: e,
            gain_precision,
            obs_variance,
            hearing,
            seed,
            left,
            mix,
        })
    }

    /// Clamps the observations of one slice and sets the Zurek branch.
    pub fn observe(&mut self, s: f64, g: f64, g_prev: f64, region: Region) -> Result<()> {
        self.graph.set_source(self.nodes.s_clamp, point(s)?)?;
        self.graph.set_source(self.nodes.g_k, point(g)?)?;
        self.graph.set_source(self.nodes.g_prev, point(g_prev)?)?;
        let lin = Linearization { region, expansion_point: s + g };
        Ok(self.graph.set_linearization(self.nodes.zurek, lin)?)
    }

    /// Loads the chain messages arriving from both sides and the previous
    /// local message, so the local edge's belief is the full q of the
    /// parameter.
    pub fn load_chain(&mut self, c: ChainEdges, from_left: Message, from_right: Message, local: Message) -> Result<()> {
        self.graph.set_message(c.incoming, Direction::Forward, from_left)?;
        self.graph.set_message(c.outgoing, Direction::Backward, from_right)?;
        self.graph.set_message(c.local, Direction::Backward, local)?;
        Ok(())
    }

    /// Local parameter message produced by the last `left` run.
    pub fn local_message(&self, c: ChainEdges) -> Option<Message> {
        self.graph.message(c.local, Direction::Backward).copied()
    }

    /// Chain message leaving the slice to the right after `mix`.
    pub fn rightward(&self, c: ChainEdges) -> Option<Message> {
        self.graph.message(c.outgoing, Direction::Forward).copied()
    }

    /// Chain message leaving the slice to the left after `mix`.
    pub fn leftward(&self, c: ChainEdges) -> Option<Message> {
        self.graph.message(c.incoming, Direction::Backward).copied()
    }

    pub fn run(&mut self) -> Result<()> {
        self.graph.execute(&self.seed)?;
        self.graph.execute(&self.left)?;
        self.graph.execute(&self.mix)?;
        Ok(())
    }
}

/// Gain that makes the impaired listener perceive s: L*(s + g) = s.
///
/// In the recruitment image this is g = ((1 − α)s − β)/α. Levels too low to
/// reach audibility get the gain that lifts s + g to the hearing threshold,
/// and levels already in the identity region need no gain.
pub fn oracle_gain(s: f64, target: &HearingLossParams) -> f64 {
    let (a, b) = (target.alpha, target.beta);
    match target.recruitment_threshold() {
        Some(rt) if s >= rt => 0.0,
        _ => {
            let g = ((1.0 - a) * s - b) / a;
            g.max(target.hearing_threshold() - s)
        }
    }
}

/// Level s whose oracle gain is g, inverting g = ((1 − α)s − β)/α.
pub fn level_for_gain(g: f64, target: &HearingLossParams) -> Result<f64> {
    if target.alpha == 1.0 {
        return Err(ModelError::Degenerate("alpha = 1 has no recruitment region".into()));
    }
    Ok((target.alpha * g + target.beta) / (1.0 - target.alpha))
}

/// How clean gains (and levels) are drawn by [`synthesize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainProcess {
    /// Levels i.i.d. uniform on [low, high] dB; gains from the oracle.
    UniformLevels { low: f64, high: f64 },
    /// Gains follow a random walk with the given precision, reflected into
    /// [low, high] dB; levels are those whose oracle gain it is.
    RandomWalk { precision: f64, low: f64, high: f64 },
    /// Gains i.i.d. uniform on [low, high] dB with matching levels.
    Independent { low: f64, high: f64 },
}

/// Synthetic preference data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub target: HearingLossParams,
    pub steps: usize,
    /// Slices per segment; the last segment takes the remainder.
    pub segment_len: usize,
    /// Standard deviation (dB) of the observation noise.
    pub noise_sd: f64,
    pub process: GainProcess,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(target: HearingLossParams, steps: usize, process: GainProcess) -> Self {
        Self { target, steps, segment_len: steps.max(2), noise_sd: 3.0, process, seed: 0 }
    }
}

fn reflect(x: f64, low: f64, high: f64) -> f64 {
    let width = high - low;
    if width <= 0.0 {
        return low;
    }
    let t = (x - low).rem_euclid(2.0 * width);
    if t <= width {
        low + t
    } else {
        low + 2.0 * width - t
    }
}

/// Generates noisy (s̃, g̃) pairs around clean oracle pairs (s*, g*).
///
/// The noise e is applied as s̃ = s* + e and g̃ = g* − e, which keeps
/// s̃ + g̃ = s* + g* and makes s̃ = L*(s̃ + g̃) + e an exact regression.
pub fn synthesize(spec: &SyntheticSpec) -> Result<TrainingSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd.max(0.0))
        .map_err(|e| ModelError::Degenerate(e.to_string()))?;
    let mut clean = Vec::with_capacity(spec.steps);
    match spec.process {
        GainProcess::UniformLevels { low, high } => {
            for _ in 0..spec.steps {
                let s = rng.random_range(low..=high);
                clean.push((s, oracle_gain(s, &spec.target)));
            }
        }
        GainProcess::RandomWalk { precision, low, high } => {
            let step = Normal::new(0.0, precision.recip().sqrt())
                .map_err(|e| ModelError::Degenerate(e.to_string()))?;
            let mut g = rng.random_range(low..=high);
            for _ in 0..spec.steps {
                clean.push((level_for_gain(g, &spec.target)?, g));
                g = reflect(g + step.sample(&mut rng), low, high);
            }
        }
        GainProcess::Independent { low, high } => {
            for _ in 0..spec.steps {
                let g = rng.random_range(low..=high);
                clean.push((level_for_gain(g, &spec.target)?, g));
            }
        }
    }
    let mut segments: Vec<Segment> = Vec::new();
    for (i, chunk) in clean.chunks(spec.segment_len.max(1)).enumerate() {
        let mut seg = Segment {
            s: Vec::with_capacity(chunk.len()),
            g: Vec::with_capacity(chunk.len()),
            meta: SegmentMeta { trial_id: i as u64 + 1, timestamp: "synthetic".into() },
        };
        for &(s, g) in chunk {
            let e = noise.sample(&mut rng);
            seg.s.push(s + e);
            seg.g.push(g - e);
        }
        match segments.last_mut() {
            // A one-step tail cannot stand alone; fold it into the previous segment.
            Some(prev) if seg.len() < 2 => {
                prev.s.extend(seg.s);
                prev.g.extend(seg.g);
            }
            _ => segments.push(seg),
        }
    }
    TrainingSet::new(segments).map_err(|e| ModelError::Degenerate(e.to_string()))
}
