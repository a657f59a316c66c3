//! Forney-style factor graphs: edges are variables, nodes are factors.
//!
//! Each edge carries up to two directed messages. `Forward` travels from the
//! edge's tail node to its head node, `Backward` the other way. Open (half)
//! edges have a missing endpoint and receive their message from outside the
//! graph via [`Graph::set_message`].
//!
//! Schedules are plain data: an ordered list of (node, outgoing edge, rule)
//! steps, executed by [`Graph::execute`].
//!
//! # Zurek node messages
//!
//! The node y = L(x; α, β) is piecewise linear. Within one region it is the
//! affine map y = a·x + c with slope a ∈ {0, α, 1}. The region is part of the
//! node configuration ([`Linearization`]) together with an expansion point
//! x₀, and the offset is c = L(x₀) − a·x₀ so the line passes through the loss
//! curve at x₀. With a Gaussian N(m, v) on the input the forward
//! sum-product message is N(a·m + c, a²·v). Backward, a message N(m, v) on y
//! constrains x through a·x + c = y, which as a function of x is
//! N(x | (m − c)/a, v/a²) up to the constant 1/|a|. On the flat branch
//! (a = 0) the output carries no information about x and the backward
//! message is vague.
//!
//! Variationally, with x observed, the recruitment branch y = α·x + β is
//! linear in the parameters. Against a Gaussian message N(m, v) on y the
//! mean-field messages are N(α | (m − E[β])/x, v/x²) and
//! N(β | m − E[α]·x, v), where E[α] already includes the new α message.
//! The forward message is the pushforward
//! N(E[α]·x + E[β], x²·V[α] + V[β]). The other two branches do not involve
//! (α, β) and send vague parameter messages.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::dist::{
    gamma_product, gaussian_product, inverse_gamma_product, DeltaMessage, DistError, GammaMessage,
    GaussianMessage, InverseGammaMessage,
};
use crate::model::{HearingLossParams, Region};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FfgError {
    #[error("node '{node}' is missing the incoming message on edge '{edge}'")]
    MissingInput { node: String, edge: String },
    #[error("node '{node}' has no {rule:?} rule toward edge '{edge}'")]
    Unsupported { node: String, edge: String, rule: Rule },
    #[error("edge '{edge}' lacks its {direction:?} message")]
    MissingDirection { edge: String, direction: Direction },
    #[error("incompatible messages: {0}")]
    Incompatible(String),
    #[error("graph structure: {0}")]
    Structure(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("schedule step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<FfgError>,
    },
}

pub type Result<T> = std::result::Result<T, FfgError>;

/// A one-dimensional message component: Gaussian (possibly vague) or a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    Gaussian(GaussianMessage),
    Delta(DeltaMessage),
}

impl Scalar {
    pub fn mean(&self) -> f64 {
        match self {
            Scalar::Gaussian(g) => g.mean(),
            Scalar::Delta(d) => d.point(),
        }
    }

    /// Variance; zero for a point, infinite for a vague Gaussian.
    pub fn variance(&self) -> f64 {
        match self {
            Scalar::Gaussian(g) => g.variance(),
            Scalar::Delta(_) => 0.0,
        }
    }

    pub fn is_vague(&self) -> bool {
        matches!(self, Scalar::Gaussian(g) if g.is_vague())
    }

    fn point(value: f64) -> Result<Self> {
        Ok(Scalar::Delta(DeltaMessage::new(value)?))
    }

    fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        if variance == 0.0 {
            Self::point(mean)
        } else {
            Ok(Scalar::Gaussian(GaussianMessage::new(mean, variance)?))
        }
    }

    fn vague() -> Self {
        Scalar::Gaussian(GaussianMessage::vague())
    }

    fn product(&self, other: &Scalar) -> Result<Scalar> {
        match (self, other) {
            (Scalar::Delta(a), Scalar::Delta(b)) => {
                let (p, q) = (a.point(), b.point());
                if (p - q).abs() <= 1e-9 * p.abs().max(q.abs()).max(1.0) {
                    Ok(*self)
                } else {
                    Err(FfgError::Incompatible(format!("point masses at {p} and {q}")))
                }
            }
            (Scalar::Delta(_), _) => Ok(*self),
            (_, Scalar::Delta(_)) => Ok(*other),
            (Scalar::Gaussian(a), Scalar::Gaussian(b)) => {
                Ok(Scalar::Gaussian(gaussian_product(a, b)?))
            }
        }
    }

    // Distribution of u + sign·w for independent u (self) and w (other).
    fn combine(&self, other: &Scalar, sign: f64) -> Result<Scalar> {
        if self.is_vague() || other.is_vague() {
            return Ok(Scalar::vague());
        }
        Scalar::gaussian(self.mean() + sign * other.mean(), self.variance() + other.variance())
    }
}

impl From<Scalar> for Message {
    fn from(s: Scalar) -> Self {
        match s {
            Scalar::Gaussian(g) => Message::Gaussian(g),
            Scalar::Delta(d) => Message::Delta(d),
        }
    }
}

/// Joint message on the (α, β) edge, factorized into its two coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMessage {
    pub alpha: Scalar,
    pub beta: Scalar,
}

impl PairMessage {
    pub fn vague() -> Self {
        Self { alpha: Scalar::vague(), beta: Scalar::vague() }
    }

    pub fn point(params: HearingLossParams) -> Result<Self> {
        Ok(Self { alpha: Scalar::point(params.alpha)?, beta: Scalar::point(params.beta)? })
    }

    pub fn gaussian(alpha: GaussianMessage, beta: GaussianMessage) -> Self {
        Self { alpha: Scalar::Gaussian(alpha), beta: Scalar::Gaussian(beta) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    Gaussian(GaussianMessage),
    Gamma(GammaMessage),
    InverseGamma(InverseGammaMessage),
    Delta(DeltaMessage),
    Pair(PairMessage),
}

impl Message {
    pub fn point(value: f64) -> Result<Self> {
        Ok(Message::Delta(DeltaMessage::new(value)?))
    }

    pub fn as_scalar(&self) -> Option<Scalar> {
        match self {
            Message::Gaussian(g) => Some(Scalar::Gaussian(*g)),
            Message::Delta(d) => Some(Scalar::Delta(*d)),
            _ => None,
        }
    }

    pub fn as_gaussian(&self) -> Option<GaussianMessage> {
        match self {
            Message::Gaussian(g) => Some(*g),
            _ => None,
        }
    }

    pub fn as_gamma(&self) -> Option<GammaMessage> {
        match self {
            Message::Gamma(g) => Some(*g),
            _ => None,
        }
    }

    pub fn as_inverse_gamma(&self) -> Option<InverseGammaMessage> {
        match self {
            Message::InverseGamma(g) => Some(*g),
            _ => None,
        }
    }

    pub fn as_pair(&self) -> Option<PairMessage> {
        match self {
            Message::Pair(p) => Some(*p),
            _ => None,
        }
    }

    pub fn is_vague(&self) -> bool {
        match self {
            Message::Gaussian(g) => g.is_vague(),
            Message::Gamma(g) => !g.is_proper(),
            Message::InverseGamma(g) => !g.is_proper(),
            Message::Delta(_) => false,
            Message::Pair(p) => p.alpha.is_vague() && p.beta.is_vague(),
        }
    }

    /// Product of two messages on the same edge. A point mass absorbs any
    /// compatible scalar message.
    pub fn product(&self, other: &Message) -> Result<Message> {
        use Message::*;
        match (self, other) {
            (Gamma(a), Gamma(b)) => Ok(Gamma(gamma_product(a, b)?)),
            (InverseGamma(a), InverseGamma(b)) => Ok(InverseGamma(inverse_gamma_product(a, b)?)),
            (Pair(a), Pair(b)) => Ok(Pair(PairMessage {
                alpha: a.alpha.product(&b.alpha)?,
                beta: a.beta.product(&b.beta)?,
            })),
            (Delta(_), Gamma(_) | InverseGamma(_)) => Ok(*self),
            (Gamma(_) | InverseGamma(_), Delta(_)) => Ok(*other),
            _ => match (self.as_scalar(), other.as_scalar()) {
                (Some(a), Some(b)) => Ok(a.product(&b)?.into()),
                _ => Err(FfgError::Incompatible(format!(
                    "cannot multiply {} and {}",
                    self.family(),
                    other.family()
                ))),
            },
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Message::Gaussian(_) => "Gaussian",
            Message::Gamma(_) => "Gamma",
            Message::InverseGamma(_) => "InverseGamma",
            Message::Delta(_) => "Delta",
            Message::Pair(_) => "Pair",
        }
    }

    fn describe(&self) -> String {
        fn scalar(s: &Scalar) -> String {
            match s {
                Scalar::Gaussian(g) if g.is_vague() => "N(vague)".into(),
                Scalar::Gaussian(g) => format!("N({}, {})", g.mean(), g.variance()),
                Scalar::Delta(d) => format!("δ({})", d.point()),
            }
        }
        match self {
            Message::Gamma(g) => format!("Gam({}, {})", g.shape(), g.rate()),
            Message::InverseGamma(g) => format!("Ig({}, {})", g.shape(), g.scale()),
            Message::Pair(p) => format!("({}, {})", scalar(&p.alpha), scalar(&p.beta)),
            other => scalar(&other.as_scalar().expect("scalar message")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EdgeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    SumProduct,
    Variational,
}

/// Which parameterization the third edge of a Gaussian-noise node carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseParam {
    Precision,
    Variance,
}

/// Region and expansion point for the Zurek node's affine form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization {
    pub region: Region,
    pub expansion_point: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorKind {
    /// δ(x − y) δ(x − z).
    Equality,
    /// z = x + y, edges ordered (x, y, z).
    Addition,
    /// N(out | mean, param), edges ordered (out, mean, param).
    GaussianNoise(NoiseParam),
    /// y = L(x; α, β), edges ordered (x, y, (α, β)).
    Zurek(Linearization),
    /// Observed value.
    Clamp(Message),
    /// Fixed distribution.
    Prior(Message),
}

impl FactorKind {
    fn arity(&self) -> usize {
        match self {
            FactorKind::Clamp(_) | FactorKind::Prior(_) => 1,
            _ => 3,
        }
    }

    fn is_source(&self) -> bool {
        matches!(self, FactorKind::Clamp(_) | FactorKind::Prior(_))
    }

    fn label(&self) -> String {
        match self {
            FactorKind::Equality => "equality".into(),
            FactorKind::Addition => "addition".into(),
            FactorKind::GaussianNoise(NoiseParam::Precision) => "gaussian-noise(precision)".into(),
            FactorKind::GaussianNoise(NoiseParam::Variance) => "gaussian-noise(variance)".into(),
            FactorKind::Zurek(l) => {
                format!("zurek({:?} @ {})", l.region, l.expansion_point)
            }
            FactorKind::Clamp(m) => format!("clamp {}", m.describe()),
            FactorKind::Prior(m) => format!("prior {}", m.describe()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub name: String,
    tail: Option<NodeId>,
    head: Option<NodeId>,
    open_tail: bool,
    forward: Option<Message>,
    backward: Option<Message>,
    marginal: Option<Message>,
}

impl Edge {
    pub fn message(&self, direction: Direction) -> Option<&Message> {
        match direction {
            Direction::Forward => self.forward.as_ref(),
            Direction::Backward => self.backward.as_ref(),
        }
    }

    /// Product of both directed messages, refreshed whenever both exist.
    pub fn cached_marginal(&self) -> Option<&Message> {
        self.marginal.as_ref()
    }

    pub fn tail(&self) -> Option<NodeId> {
        self.tail
    }

    pub fn head(&self) -> Option<NodeId> {
        self.head
    }
}

#[derive(Debug, Clone)]
pub struct FactorNode {
    pub name: String,
    pub kind: FactorKind,
    pub edges: Vec<EdgeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub node: NodeId,
    pub edge: EdgeId,
    pub rule: Rule,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schedule {
    pub steps: Vec<Step>,
}

impl Schedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, node: NodeId, edge: EdgeId, rule: Rule) -> &mut Self {
        self.steps.push(Step { node, edge, rule });
        self
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<FactorNode>,
    edges: Vec<Edge>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// An edge whose tail is the first node attached to it.
    pub fn add_edge(&mut self, name: impl Into<String>) -> EdgeId {
        self.push_edge(name.into(), false)
    }

    /// An edge entering the graph from outside: its tail stays empty and
    /// the forward message is supplied with [`Graph::set_message`].
    pub fn add_open_edge(&mut self, name: impl Into<String>) -> EdgeId {
        self.push_edge(name.into(), true)
    }

    fn push_edge(&mut self, name: String, open_tail: bool) -> EdgeId {
        self.edges.push(Edge {
            name,
            tail: None,
            head: None,
            open_tail,
            forward: None,
            backward: None,
            marginal: None,
        });
        EdgeId(self.edges.len() - 1)
    }

    /// Adds a factor and attaches it to `edges`. Source nodes (clamps and
    /// priors) emit their message immediately.
    pub fn add_node(
        &mut self,
        name: impl Into<String>,
        kind: FactorKind,
        edges: &[EdgeId],
    ) -> Result<NodeId> {
        let name = name.into();
        if edges.len() != kind.arity() {
            return Err(FfgError::Structure(format!(
                "{} node '{name}' needs {} edges, got {}",
                kind.label(),
                kind.arity(),
                edges.len()
            )));
        }
        let id = NodeId(self.nodes.len());
        for &e in edges {
            let edge = self
                .edges
                .get_mut(e.0)
                .ok_or_else(|| FfgError::Structure(format!("unknown edge {}", e.0)))?;
            if edge.tail.is_none() && !edge.open_tail {
                edge.tail = Some(id);
            } else if edge.head.is_none() {
                edge.head = Some(id);
            } else {
                return Err(FfgError::Structure(format!(
                    "edge '{}' already connects two factors",
                    edge.name
                )));
            }
        }
        let source = match &kind {
            FactorKind::Clamp(m) | FactorKind::Prior(m) => Some(*m),
            _ => None,
        };
        self.nodes.push(FactorNode { name, kind, edges: edges.to_vec() });
        if let Some(m) = source {
            self.store(id, edges[0], m)?;
        }
        Ok(id)
    }

    pub fn node(&self, id: NodeId) -> &FactorNode {
        &self.nodes[id.0]
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.0]
    }

    pub fn nodes(&self) -> &[FactorNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Number of non-source factor nodes.
    pub fn factor_count(&self) -> usize {
        self.nodes.iter().filter(|n| !n.kind.is_source()).count()
    }

    /// Replaces the value of a clamp or prior and re-emits its message.
    pub fn set_source(&mut self, node: NodeId, message: Message) -> Result<()> {
        let n = &mut self.nodes[node.0];
        match &mut n.kind {
            FactorKind::Clamp(m) | FactorKind::Prior(m) => *m = message,
            _ => {
                return Err(FfgError::Structure(format!("node '{}' is not a source", n.name)))
            }
        }
        let edge = n.edges[0];
        self.store(node, edge, message)
    }

    pub fn set_linearization(&mut self, node: NodeId, lin: Linearization) -> Result<()> {
        let n = &mut self.nodes[node.0];
        match &mut n.kind {
            FactorKind::Zurek(l) => {
                *l = lin;
                Ok(())
            }
            _ => Err(FfgError::Structure(format!("node '{}' is not a Zurek node", n.name))),
        }
    }

    /// Writes a directed message directly (used for open edges and seeding).
    pub fn set_message(&mut self, edge: EdgeId, direction: Direction, message: Message) -> Result<()> {
        let e = &mut self.edges[edge.0];
        match direction {
            Direction::Forward => e.forward = Some(message),
            Direction::Backward => e.backward = Some(message),
        }
        Self::refresh(e)
    }

    pub fn message(&self, edge: EdgeId, direction: Direction) -> Option<&Message> {
        self.edges[edge.0].message(direction)
    }

    /// Message leaving `node` along `edge`, if computed.
    pub fn outgoing(&self, node: NodeId, edge: EdgeId) -> Option<&Message> {
        let e = &self.edges[edge.0];
        e.message(Self::direction_from(e, node))
    }

    /// Message arriving at `node` along `edge`, if present.
    pub fn incoming(&self, node: NodeId, edge: EdgeId) -> Option<&Message> {
        let e = &self.edges[edge.0];
        match Self::direction_from(e, node) {
            Direction::Forward => e.backward.as_ref(),
            Direction::Backward => e.forward.as_ref(),
        }
    }

    fn direction_from(edge: &Edge, node: NodeId) -> Direction {
        if edge.tail == Some(node) {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }

    /// Product of both directed messages; errors when one is missing.
    pub fn marginal(&self, edge: EdgeId) -> Result<Message> {
        let e = &self.edges[edge.0];
        match (&e.forward, &e.backward) {
            (Some(f), Some(b)) => f.product(b),
            (None, _) => Err(FfgError::MissingDirection {
                edge: e.name.clone(),
                direction: Direction::Forward,
            }),
            (_, None) => Err(FfgError::MissingDirection {
                edge: e.name.clone(),
                direction: Direction::Backward,
            }),
        }
    }

    /// Current belief on an edge: the marginal when both directions exist,
    /// otherwise whichever single message is present.
    pub fn belief(&self, edge: EdgeId) -> Result<Message> {
        let e = &self.edges[edge.0];
        match (&e.forward, &e.backward) {
            (Some(_), Some(_)) => self.marginal(edge),
            (Some(m), None) | (None, Some(m)) => Ok(*m),
            (None, None) => Err(FfgError::MissingDirection {
                edge: e.name.clone(),
                direction: Direction::Forward,
            }),
        }
    }

    fn store(&mut self, node: NodeId, edge: EdgeId, message: Message) -> Result<()> {
        let e = &mut self.edges[edge.0];
        match Self::direction_from(e, node) {
            Direction::Forward => e.forward = Some(message),
            Direction::Backward => e.backward = Some(message),
        }
        Self::refresh(e)
    }

    fn refresh(e: &mut Edge) -> Result<()> {
        e.marginal = match (&e.forward, &e.backward) {
            (Some(f), Some(b)) => Some(f.product(b)?),
            _ => None,
        };
        Ok(())
    }

    /// Runs every step of `schedule` in order, storing each outgoing message.
    pub fn execute(&mut self, schedule: &Schedule) -> Result<()> {
        for (index, step) in schedule.steps.iter().enumerate() {
            let wrap = |e: FfgError| FfgError::Step { index, source: Box::new(e) };
            let msg = self.compute_message(step.node, step.edge, step.rule).map_err(wrap)?;
            self.store(step.node, step.edge, msg).map_err(wrap)?;
        }
        Ok(())
    }

    /// Computes (without storing) the message from `node` toward `edge`.
    pub fn compute_message(&self, node: NodeId, edge: EdgeId, rule: Rule) -> Result<Message> {
        let n = &self.nodes[node.0];
        let port = n.edges.iter().position(|&e| e == edge).ok_or_else(|| {
            FfgError::Structure(format!(
                "edge '{}' is not attached to node '{}'",
                self.edges[edge.0].name, n.name
            ))
        })?;
        match (&n.kind, rule) {
            (FactorKind::Clamp(m) | FactorKind::Prior(m), _) => Ok(*m),
            (FactorKind::Equality, _) => self.equality(node, port),
            (FactorKind::Addition, _) => self.addition(node, port),
            (FactorKind::GaussianNoise(p), Rule::SumProduct) => self.noise_sp(node, port, *p),
            (FactorKind::GaussianNoise(p), Rule::Variational) => self.noise_vmp(node, port, *p),
            (FactorKind::Zurek(l), Rule::SumProduct) => self.zurek_sp(node, port, *l),
            (FactorKind::Zurek(l), Rule::Variational) => self.zurek_vmp(node, port, *l),
        }
    }

    fn input(&self, node: NodeId, port: usize) -> Result<Message> {
        let n = &self.nodes[node.0];
        let e = n.edges[port];
        self.incoming(node, e).copied().ok_or_else(|| FfgError::MissingInput {
            node: n.name.clone(),
            edge: self.edges[e.0].name.clone(),
        })
    }

    fn scalar_input(&self, node: NodeId, port: usize) -> Result<Scalar> {
        let m = self.input(node, port)?;
        m.as_scalar().ok_or_else(|| self.wrong_family(node, port, &m))
    }

    fn wrong_family(&self, node: NodeId, port: usize, m: &Message) -> FfgError {
        let n = &self.nodes[node.0];
        FfgError::Incompatible(format!(
            "node '{}' received a {} message on edge '{}'",
            n.name,
            m.family(),
            self.edges[n.edges[port].0].name
        ))
    }

    fn unsupported(&self, node: NodeId, port: usize, rule: Rule) -> FfgError {
        let n = &self.nodes[node.0];
        FfgError::Unsupported {
            node: n.name.clone(),
            edge: self.edges[n.edges[port].0].name.clone(),
            rule,
        }
    }

    fn equality(&self, node: NodeId, port: usize) -> Result<Message> {
        let n = &self.nodes[node.0];
        let others: Vec<Option<Message>> = (0..3)
            .filter(|&p| p != port)
            .map(|p| self.incoming(node, n.edges[p]).copied())
            .collect();
        // A point mass on either branch pins the variable on its own.
        if let Some(d) = others.iter().flatten().find(|m| matches!(m, Message::Delta(_))) {
            return Ok(*d);
        }
        match (&others[0], &others[1]) {
            (Some(a), Some(b)) => a.product(b),
            _ => {
                let missing = (0..3).filter(|&p| p != port).find(|&p| {
                    self.incoming(node, n.edges[p]).is_none()
                });
                Err(self.input(node, missing.unwrap_or(0)).unwrap_err())
            }
        }
    }

    fn addition(&self, node: NodeId, port: usize) -> Result<Message> {
        let out = match port {
            2 => self.scalar_input(node, 0)?.combine(&self.scalar_input(node, 1)?, 1.0)?,
            0 => self.scalar_input(node, 2)?.combine(&self.scalar_input(node, 1)?, -1.0)?,
            _ => self.scalar_input(node, 2)?.combine(&self.scalar_input(node, 0)?, -1.0)?,
        };
        Ok(out.into())
    }

    // Noise variance implied by a point-valued parameter; None when the
    // precision is zero (flat factor).
    fn noise_variance(&self, node: NodeId, param: NoiseParam) -> Result<Option<f64>> {
        let m = self.input(node, 2)?;
        let value = match m {
            Message::Delta(d) => d.point(),
            _ => return Err(self.unsupported(node, 2, Rule::SumProduct)),
        };
        match param {
            NoiseParam::Precision if value == 0.0 => Ok(None),
            NoiseParam::Precision if value > 0.0 => Ok(Some(1.0 / value)),
            NoiseParam::Variance if value > 0.0 => Ok(Some(value)),
            _ => Err(FfgError::Dist(DistError::InvalidMessage(format!(
                "noise parameter must be positive, got {value}"
            )))),
        }
    }

    fn noise_sp(&self, node: NodeId, port: usize, param: NoiseParam) -> Result<Message> {
        if port == 2 {
            return Err(self.unsupported(node, port, Rule::SumProduct));
        }
        let other = self.scalar_input(node, 1 - port)?;
        match self.noise_variance(node, param)? {
            None => Ok(Message::Gaussian(GaussianMessage::vague())),
            Some(_) if other.is_vague() => Ok(Message::Gaussian(GaussianMessage::vague())),
            Some(v) => Ok(Message::Gaussian(GaussianMessage::new(
                other.mean(),
                other.variance() + v,
            )?)),
        }
    }

    // E[precision] under the current belief of the parameter edge.
    fn expected_precision(&self, node: NodeId, param: NoiseParam) -> Result<f64> {
        let e = self.nodes[node.0].edges[2];
        let belief = self.belief(e)?;
        match (param, belief) {
            (NoiseParam::Precision, Message::Gamma(g)) => Ok(g.mean()?),
            (NoiseParam::Precision, Message::Delta(d)) => Ok(d.point()),
            (NoiseParam::Variance, Message::InverseGamma(g)) => Ok(g.mean_inverse()?),
            (NoiseParam::Variance, Message::Delta(d)) if d.point() > 0.0 => Ok(1.0 / d.point()),
            (_, m) => Err(self.wrong_family(node, 2, &m)),
        }
    }

    fn noise_vmp(&self, node: NodeId, port: usize, param: NoiseParam) -> Result<Message> {
        if port == 2 {
            let out = self.scalar_input(node, 0)?;
            let mean = self.scalar_input(node, 1)?;
            if out.is_vague() || mean.is_vague() {
                return Err(FfgError::Dist(DistError::InvalidMessage(
                    "variational parameter update needs proper neighbours".into(),
                )));
            }
            let diff = out.mean() - mean.mean();
            let half_sq = 0.5 * (diff * diff + out.variance() + mean.variance());
            return Ok(match param {
                NoiseParam::Precision => Message::Gamma(GammaMessage::improper(1.5, half_sq)?),
                NoiseParam::Variance => {
                    Message::InverseGamma(InverseGammaMessage::improper(-0.5, half_sq)?)
                }
            });
        }
        let other = self.scalar_input(node, 1 - port)?;
        let w = self.expected_precision(node, param)?;
        if w == 0.0 || other.is_vague() {
            return Ok(Message::Gaussian(GaussianMessage::vague()));
        }
        Ok(Message::Gaussian(GaussianMessage::new(other.mean(), 1.0 / w)?))
    }

    fn point_params(&self, node: NodeId) -> Result<HearingLossParams> {
        let m = self.input(node, 2)?;
        match m {
            Message::Pair(PairMessage { alpha: Scalar::Delta(a), beta: Scalar::Delta(b) }) => {
                Ok(HearingLossParams { alpha: a.point(), beta: b.point() })
            }
            _ => Err(self.unsupported(node, 2, Rule::SumProduct)),
        }
    }

    fn zurek_sp(&self, node: NodeId, port: usize, lin: Linearization) -> Result<Message> {
        let params = self.point_params(node)?;
        let a = lin.region.slope(params.alpha);
        let x0 = lin.expansion_point;
        let c = params.zurek_l(x0) - a * x0;
        match port {
            1 => {
                let x = self.scalar_input(node, 0)?;
                let out = if a == 0.0 {
                    Scalar::point(c)?
                } else if x.is_vague() {
                    Scalar::vague()
                } else {
                    Scalar::gaussian(a * x.mean() + c, a * a * x.variance())?
                };
                Ok(out.into())
            }
            0 => {
                let y = self.scalar_input(node, 1)?;
                let out = if a == 0.0 || y.is_vague() {
                    Scalar::vague()
                } else {
                    Scalar::gaussian((y.mean() - c) / a, y.variance() / (a * a))?
                };
                Ok(out.into())
            }
            _ => Err(self.unsupported(node, port, Rule::SumProduct)),
        }
    }

    fn zurek_vmp(&self, node: NodeId, port: usize, lin: Linearization) -> Result<Message> {
        let x = match self.scalar_input(node, 0)? {
            Scalar::Delta(d) => d.point(),
            Scalar::Gaussian(_) => return Err(self.unsupported(node, port, Rule::Variational)),
        };
        match port {
            1 => {
                let out = match lin.region {
                    Region::Flat => Scalar::point(0.0)?,
                    Region::Identity => Scalar::point(x)?,
                    Region::Recruitment => {
                        let theta = self.pair_belief(node)?;
                        if theta.alpha.is_vague() || theta.beta.is_vague() {
                            Scalar::vague()
                        } else {
                            Scalar::gaussian(
                                theta.alpha.mean() * x + theta.beta.mean(),
                                x * x * theta.alpha.variance() + theta.beta.variance(),
                            )?
                        }
                    }
                };
                Ok(out.into())
            }
            2 => {
                if lin.region != Region::Recruitment {
                    return Ok(Message::Pair(PairMessage::vague()));
                }
                let y = match self.scalar_input(node, 1)? {
                    Scalar::Gaussian(g) if !g.is_vague() => g,
                    _ => return Ok(Message::Pair(PairMessage::vague())),
                };
                let theta = self.pair_belief(node)?;
                let alpha = if x == 0.0 {
                    GaussianMessage::vague()
                } else {
                    GaussianMessage::new((y.mean() - theta.beta.mean()) / x, y.variance() / (x * x))?
                };
                // q(α) is refreshed before q(β) is, as in coordinate ascent.
                let cavity = self.input(node, 2)?;
                let cavity = cavity.as_pair().ok_or_else(|| self.wrong_family(node, 2, &cavity))?;
                let fresh_alpha = cavity.alpha.product(&Scalar::Gaussian(alpha))?.mean();
                let beta = GaussianMessage::new(y.mean() - fresh_alpha * x, y.variance())?;
                Ok(Message::Pair(PairMessage::gaussian(alpha, beta)))
            }
            _ => Err(self.unsupported(node, port, Rule::Variational)),
        }
    }

    fn pair_belief(&self, node: NodeId) -> Result<PairMessage> {
        let e = self.nodes[node.0].edges[2];
        let m = self.belief(e)?;
        m.as_pair().ok_or_else(|| self.wrong_family(node, 2, &m))
    }

    /// Human-readable listing of nodes, edges and (optionally) a schedule.
    pub fn dump(&self, schedule: Option<&Schedule>) -> String {
        let mut out = String::new();
        let name = |id: Option<NodeId>| id.map_or("-".to_string(), |n| self.nodes[n.0].name.clone());
        let _ = writeln!(out, "nodes:");
        for (i, n) in self.nodes.iter().enumerate() {
            let edges: Vec<&str> = n.edges.iter().map(|e| self.edges[e.0].name.as_str()).collect();
            let _ = writeln!(out, "  n{i} {} [{}] ({})", n.name, n.kind.label(), edges.join(", "));
        }
        let _ = writeln!(out, "edges:");
        for (i, e) in self.edges.iter().enumerate() {
            let msg = |m: &Option<Message>| m.as_ref().map_or("-".into(), Message::describe);
            let _ = writeln!(
                out,
                "  e{i} {}: {} -> {}  fwd {}  bwd {}",
                e.name,
                name(e.tail),
                name(e.head),
                msg(&e.forward),
                msg(&e.backward)
            );
        }
        if let Some(s) = schedule {
            let _ = writeln!(out, "schedule:");
            for (i, step) in s.steps.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "  {:>2}. {} -> {} ({:?})",
                    i + 1,
                    self.nodes[step.node.0].name,
                    self.edges[step.edge.0].name,
                    step.rule
                );
            }
        }
        out
    }
}
