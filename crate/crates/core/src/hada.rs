//! The hearing-aid design agent: a trial loop driven by binary appraisals.
//!
//! A negative appraisal draws a new θ from the current posterior (Thompson
//! sampling) and opens a new trial. A positive appraisal stores the recent
//! (level, gain) frames as a preferred segment and refreshes the posterior
//! on the whole preference database.

use std::collections::VecDeque;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DistError, Sample};
use crate::model::{ModelError, Theta, ThetaPriors};
use crate::pe::{estimate, point_estimate, PeConfig, PeError, PosteriorSet, Segment, SegmentMeta, TrainingSet};

#[derive(Debug, Error)]
pub enum HadaError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pe(#[from] PeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, HadaError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialSource {
    Initial,
    Sampled,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialState {
    pub trial_id: u64,
    pub theta: Theta,
    pub started_at: String,
    pub source: TrialSource,
}

/// One line of the appraisal log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppraisalRecord {
    pub trial_id: u64,
    pub polarity: Polarity,
    pub t: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let io = |source| HadaError::Io { path: path.display().to_string(), source };
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    writeln!(f, "{line}").map_err(io)
}

/// Draws θ̂ ~ q(α) q(β) q(ϑ) q(γ), each factor independently.
pub fn thompson_sample<R: Rng + ?Sized>(post: &PosteriorSet, rng: &mut R) -> Result<Theta> {
    let alpha = post.q_alpha.sample(rng)?;
    let beta = post.q_beta.sample(rng)?;
    let obs_variance = post.q_obs_variance.sample(rng)?.max(f64::MIN_POSITIVE);
    let gain_precision = post.q_gain_precision.sample(rng)?.max(f64::MIN_POSITIVE);
    Ok(Theta::new(alpha, beta, obs_variance, gain_precision)?)
}

/// [`thompson_sample`] from a fresh ChaCha8 stream.
pub fn thompson_sample_seeded(post: &PosteriorSet, seed: u64) -> Result<Theta> {
    thompson_sample(post, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Append-only store of preferred segments, optionally mirrored to a JSON
/// Lines file.
#[derive(Debug, Clone, Default)]
pub struct PreferenceDb {
    segments: Vec<Segment>,
    path: Option<PathBuf>,
}

impl PreferenceDb {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a database file, loading any existing segments.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let segments = if path.exists() { TrainingSet::read_jsonl(&path)?.segments } else { Vec::new() };
        Ok(Self { segments, path: Some(path) })
    }

    pub fn append(&mut self, segment: Segment) -> Result<()> {
        segment.validate()?;
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&segment).expect("segment serializes");
            append_line(path, &line)?;
        }
        self.segments.push(segment);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn training_set(&self) -> TrainingSet {
        TrainingSet { segments: self.segments.clone() }
    }
}

/// Ring buffer of the most recent (level, applied gain) frames.
#[derive(Debug, Clone)]
pub struct IoBuffer {
    capacity: usize,
    frames: VecDeque<(f64, f64)>,
}

impl IoBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), frames: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, level: f64, gain: f64) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back((level, gain));
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.frames.iter()
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub seed: u64,
    pub priors: ThetaPriors,
    pub pe: PeConfig,
    /// Frames kept for a positive appraisal (3 s at a 5 ms hop).
    pub window_frames: usize,
    pub db_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            priors: ThetaPriors::default(),
            pe: PeConfig { early_stop: Some(1e-6), ..PeConfig::default() },
            window_frames: 600,
            db_path: None,
            log_path: None,
        }
    }
}

/// What an appraisal did.
#[derive(Debug, Clone, PartialEq)]
pub struct AppraisalOutcome {
    pub trial: TrialState,
    pub new_trial: bool,
    pub db_appended: bool,
    pub warning: Option<String>,
}

/// Single-writer state machine of the design loop.
#[derive(Debug)]
pub struct Agent {
    cfg: AgentConfig,
    rng: ChaCha8Rng,
    posterior: PosteriorSet,
    trial: TrialState,
    history: Vec<TrialState>,
    appraisals: Vec<AppraisalRecord>,
    db: PreferenceDb,
}

impl Agent {
    /// Starts at trial 1 with θ at the prior means.
    pub fn new(cfg: AgentConfig) -> Result<Self> {
        let db = match &cfg.db_path {
            Some(p) => PreferenceDb::open(p.clone())?,
            None => PreferenceDb::in_memory(),
        };
        let posterior = if db.is_empty() {
            PosteriorSet::from(cfg.priors)
        } else {
            estimate(&db.training_set(), &cfg.priors, &cfg.pe)?
        };
        let trial = TrialState {
            trial_id: 1,
            theta: point_estimate(&cfg.priors.into())?,
            started_at: now(),
            source: TrialSource::Initial,
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            posterior,
            history: vec![trial.clone()],
            trial,
            appraisals: Vec::new(),
            db,
        })
    }

    pub fn trial(&self) -> &TrialState {
        &self.trial
    }

    pub fn posterior(&self) -> &PosteriorSet {
        &self.posterior
    }

    pub fn priors(&self) -> &ThetaPriors {
        &self.cfg.priors
    }

    pub fn history(&self) -> &[TrialState] {
        &self.history
    }

    pub fn appraisals(&self) -> &[AppraisalRecord] {
        &self.appraisals
    }

    pub fn db(&self) -> &PreferenceDb {
        &self.db
    }

    pub fn window_frames(&self) -> usize {
        self.cfg.window_frames
    }

    /// Replaces θ by hand and opens a new trial.
    pub fn set_theta(&mut self, theta: Theta) -> Result<&TrialState> {
        theta.validate()?;
        self.open_trial(theta, TrialSource::Manual);
        Ok(&self.trial)
    }

    fn open_trial(&mut self, theta: Theta, source: TrialSource) {
        self.trial = TrialState {
            trial_id: self.trial.trial_id + 1,
            theta,
            started_at: now(),
            source,
        };
        self.history.push(self.trial.clone());
    }

    /// Handles one appraisal. `buffer` holds the recent (level, gain) frames.
    pub fn on_appraisal(&mut self, polarity: Polarity, buffer: &IoBuffer) -> Result<AppraisalOutcome> {
        let record = AppraisalRecord { trial_id: self.trial.trial_id, polarity, t: now() };
        if let Some(path) = &self.cfg.log_path {
            append_line(path, &serde_json::to_string(&record).expect("record serializes"))?;
        }
        self.appraisals.push(record);
        match polarity {
            Polarity::Negative => {
                let theta = thompson_sample(&self.posterior, &mut self.rng)?;
                self.open_trial(theta, TrialSource::Sampled);
                Ok(AppraisalOutcome {
                    trial: self.trial.clone(),
                    new_trial: true,
                    db_appended: false,
                    warning: None,
                })
            }
            Polarity::Positive => {
                let skip = buffer.len().saturating_sub(self.cfg.window_frames);
                let (s, g): (Vec<f64>, Vec<f64>) = buffer.frames().skip(skip).copied().unzip();
                if s.len() < 2 {
                    let warning = "positive appraisal with too little buffered audio; nothing stored";
                    log::warn!("{warning}");
                    return Ok(AppraisalOutcome {
                        trial: self.trial.clone(),
                        new_trial: false,
                        db_appended: false,
                        warning: Some(warning.into()),
                    });
                }
                let meta = SegmentMeta { trial_id: self.trial.trial_id, timestamp: now() };
                self.db.append(Segment { s, g, meta })?;
                self.posterior = estimate(&self.db.training_set(), &self.cfg.priors, &self.cfg.pe)?;
                Ok(AppraisalOutcome {
                    trial: self.trial.clone(),
                    new_trial: false,
                    db_appended: true,
                    warning: None,
                })
            }
        }
    }
}

/// Reads an appraisal log written by [`Agent`].
pub fn read_appraisal_log(path: impl AsRef<Path>) -> Result<Vec<AppraisalRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| HadaError::Io { path: path.display().to_string(), source })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| HadaError::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })
        })
        .collect()
}
