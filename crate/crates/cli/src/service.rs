//! HTTP + JSON front end of the design agent.
//!
//! All mutations go through one agent behind an async mutex. An appraisal
//! that finds the mutex taken is answered with 409 instead of queueing.
//! Reads are served from a snapshot replaced after every mutation.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hlc_core::audio::{estimate_log_power, process, tone, AudioError, FrameConfig, SampleFormat, Wav};
use hlc_core::hada::{Agent, AgentConfig, AppraisalRecord, HadaError, IoBuffer, Polarity, TrialState};
use hlc_core::pe::{PeConfig, PosteriorSet};
use hlc_core::sp::run_sequence;
use hlc_core::{GainState, ThetaPriors};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::Mutex as AsyncMutex;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Hada(#[from] HadaError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Sp(#[from] hlc_core::sp::SpError),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: IpAddr,
    pub port: u16,
    /// Demo WAV; a synthetic 55/80 dB tone when `None`.
    pub audio: Option<PathBuf>,
    pub db_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
    pub seed: u64,
    pub priors: ThetaPriors,
    pub iterations: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            audio: None,
            db_path: None,
            log_path: None,
            seed: 0,
            priors: ThetaPriors::default(),
            iterations: 200,
        }
    }
}

/// Alternating 55 and 80 dB blocks of a 1 kHz tone, half a second each.
pub fn demo_audio(frames: &FrameConfig) -> Wav {
    let block = frames.sample_rate as usize / 2;
    let samples = (0..8)
        .flat_map(|i| tone(1000.0, if i % 2 == 0 { 55.0 } else { 80.0 }, block, frames))
        .collect();
    Wav { sample_rate: frames.sample_rate, format: SampleFormat::Float32, channels: vec![samples] }
}

// What the read endpoints see.
#[derive(Debug, Clone)]
struct Snapshot {
    trial: TrialState,
    history: Vec<TrialState>,
    appraisals: Vec<AppraisalRecord>,
    posterior: PosteriorSet,
    priors: ThetaPriors,
    db_size: usize,
}

impl Snapshot {
    fn of(agent: &Agent) -> Self {
        Self {
            trial: agent.trial().clone(),
            history: agent.history().to_vec(),
            appraisals: agent.appraisals().to_vec(),
            posterior: *agent.posterior(),
            priors: *agent.priors(),
            db_size: agent.db().len(),
        }
    }
}

pub struct AppState {
    agent: Arc<AsyncMutex<Agent>>,
    snapshot: RwLock<Arc<Snapshot>>,
    frames: FrameConfig,
    original: Wav,
    original_wav: Bytes,
    levels: Vec<f64>,
    // Processed audio of the trial it was rendered for.
    rendered: Mutex<Option<(u64, Bytes)>>,
}

impl AppState {
    pub fn new(cfg: &ServerConfig) -> Result<Arc<Self>, ServiceError> {
        let mut frames = FrameConfig::default();
        let original = match &cfg.audio {
            Some(path) => Wav::from_path(path)?,
            None => demo_audio(&frames),
        };
        frames.sample_rate = original.sample_rate;
        let levels = estimate_log_power(&original.mixdown(), &frames)?;
        let agent = Agent::new(AgentConfig {
            seed: cfg.seed,
            priors: cfg.priors,
            pe: PeConfig { iterations: cfg.iterations, early_stop: Some(1e-6), ..PeConfig::default() },
            window_frames: frames.frames_for_seconds(3.0),
            db_path: cfg.db_path.clone(),
            log_path: cfg.log_path.clone(),
        })?;
        let snapshot = RwLock::new(Arc::new(Snapshot::of(&agent)));
        Ok(Arc::new(Self {
            agent: Arc::new(AsyncMutex::new(agent)),
            snapshot,
            frames,
            original_wav: Bytes::from(original.to_bytes()),
            original,
            levels,
            rendered: Mutex::new(None),
        }))
    }

    fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn publish(&self, agent: &Agent) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(Snapshot::of(agent));
    }

    // The levels of the demo audio and the gains the listener heard on them.
    fn heard(&self, trial: &TrialState) -> Result<IoBuffer, ServiceError> {
        let gains = run_sequence(&self.levels, &trial.theta, GainState::default())?;
        let mut buf = IoBuffer::new(self.levels.len());
        for (s, g) in self.levels.iter().zip(&gains) {
            buf.push(*s, g.mean);
        }
        Ok(buf)
    }

    fn render(&self, trial: &TrialState) -> Result<Bytes, ServiceError> {
        let mut cache = self.rendered.lock().expect("render cache lock");
        if let Some((id, bytes)) = cache.as_ref() {
            if *id == trial.trial_id {
                return Ok(bytes.clone());
            }
        }
        let out = process(&self.original, &trial.theta, &self.frames)?;
        let bytes = Bytes::from(out.wav.to_bytes());
        *cache = Some((trial.trial_id, bytes.clone()));
        Ok(bytes)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/state", get(get_state))
        .route("/api/appraisal", post(post_appraisal))
        .route("/api/audio/current", get(get_current_audio))
        .route("/api/audio/original", get(get_original_audio))
        .route("/api/history", get(get_history))
        .route("/api/posterior", get(get_posterior))
        .with_state(state)
}

pub async fn serve(cfg: ServerConfig) -> Result<(), ServiceError> {
    let state = AppState::new(&cfg)?;
    let addr = SocketAddr::new(cfg.bind, cfg.port);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| ServiceError::Io(format!("{addr}: {e}")))?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, router(state)).await.map_err(|e| ServiceError::Io(e.to_string()))
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn internal(e: impl std::fmt::Display) -> Response {
    error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

#[derive(Debug, Serialize)]
struct ThetaView {
    alpha: f64,
    beta: f64,
    obs_variance: f64,
    gain_precision: f64,
}

#[derive(Debug, Serialize)]
struct TrialView<'a> {
    trial_id: u64,
    source: hlc_core::hada::TrialSource,
    started_at: &'a str,
    theta: ThetaView,
}

impl<'a> From<&'a TrialState> for TrialView<'a> {
    fn from(t: &'a TrialState) -> Self {
        Self {
            trial_id: t.trial_id,
            source: t.source,
            started_at: &t.started_at,
            theta: ThetaView {
                alpha: t.theta.hearing.alpha,
                beta: t.theta.hearing.beta,
                obs_variance: t.theta.obs_variance,
                gain_precision: t.theta.gain_precision,
            },
        }
    }
}

fn posterior_summary(p: &PosteriorSet) -> serde_json::Value {
    let ig = &p.q_obs_variance;
    let gam = &p.q_gain_precision;
    json!({
        "alpha": { "mean": p.q_alpha.mean(), "variance": p.q_alpha.variance() },
        "beta": { "mean": p.q_beta.mean(), "variance": p.q_beta.variance() },
        "obs_variance": {
            "mean": ig.mean().ok(), "variance": ig.variance().ok(),
            "shape": ig.shape(), "scale": ig.scale(),
        },
        "gain_precision": {
            "mean": gam.mean().ok(), "variance": gam.variance().ok(),
            "shape": gam.shape(), "rate": gam.rate(),
        },
    })
}

fn state_json(s: &Snapshot, busy: bool) -> serde_json::Value {
    let trial = TrialView::from(&s.trial);
    json!({
        "trial_id": trial.trial_id,
        "source": trial.source,
        "started_at": trial.started_at,
        "theta": trial.theta,
        "posterior": posterior_summary(&s.posterior),
        "db_size": s.db_size,
        "busy": busy,
    })
}

async fn get_state(State(app): State<Arc<AppState>>) -> Response {
    let busy = app.agent.try_lock().is_err();
    Json(state_json(&app.snapshot(), busy)).into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AppraisalRequest {
    polarity: Polarity,
}

async fn post_appraisal(State(app): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: AppraisalRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("expected {{\"polarity\": \"pos\"|\"neg\"}}: {e}")),
    };
    let Ok(mut agent) = app.agent.clone().try_lock_owned() else {
        return error(StatusCode::CONFLICT, "the previous appraisal is still being processed");
    };
    let worker = app.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let buffer = worker.heard(agent.trial())?;
        let outcome = agent.on_appraisal(req.polarity, &buffer)?;
        worker.publish(&agent);
        Ok::<_, ServiceError>(outcome)
    })
    .await;
    match outcome {
        Ok(Ok(o)) => Json(json!({
            "new_trial": o.new_trial,
            "db_appended": o.db_appended,
            "warning": o.warning,
            "state": state_json(&app.snapshot(), false),
        }))
        .into_response(),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

fn wav_response(bytes: Bytes) -> Response {
    ([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response()
}

async fn get_current_audio(State(app): State<Arc<AppState>>) -> Response {
    let trial = app.snapshot().trial.clone();
    let worker = app.clone();
    match tokio::task::spawn_blocking(move || worker.render(&trial)).await {
        Ok(Ok(bytes)) => wav_response(bytes),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

async fn get_original_audio(State(app): State<Arc<AppState>>) -> Response {
    wav_response(app.original_wav.clone())
}

async fn get_history(State(app): State<Arc<AppState>>) -> Response {
    let s = app.snapshot();
    let trials: Vec<TrialView> = s.history.iter().map(TrialView::from).collect();
    Json(json!({ "trials": trials, "appraisals": s.appraisals, "db_size": s.db_size })).into_response()
}

const GRID_POINTS: usize = 101;

// Evenly spaced points over both spans, merged, so that a narrow posterior
// and a wide prior are each resolved.
fn grid(spans: [(f64, f64); 2]) -> Vec<f64> {
    let mut xs: Vec<f64> = spans
        .iter()
        .flat_map(|&(lo, hi)| (0..GRID_POINTS).map(move |i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64))
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

fn span(mean: Option<f64>, variance: Option<f64>, positive: bool, fallback: (f64, f64)) -> (f64, f64) {
    match (mean, variance) {
        (Some(m), Some(v)) if m.is_finite() && v.is_finite() => {
            let sd = v.sqrt();
            let lo = m - 5.0 * sd;
            (if positive { lo.max(m * 1e-3) } else { lo }, m + 5.0 * sd)
        }
        _ => fallback,
    }
}

fn parameter(name: &str, mean: Option<f64>, variance: Option<f64>, xs: Vec<f64>, post: impl Fn(f64) -> f64, prior: impl Fn(f64) -> f64) -> serde_json::Value {
    let density: Vec<f64> = xs.iter().map(|&x| post(x)).collect();
    let prior_density: Vec<f64> = xs.iter().map(|&x| prior(x)).collect();
    json!({
        "name": name,
        "mean": mean,
        "variance": variance,
        "grid": xs,
        "density": density,
        "prior_density": prior_density,
    })
}

async fn get_posterior(State(app): State<Arc<AppState>>) -> Response {
    let s = app.snapshot();
    let (q, p) = (&s.posterior, &s.priors);
    let gauss_span = |g: &hlc_core::GaussianMessage| {
        span(Some(g.mean()), Some(g.variance()), false, (g.mean() - 1.0, g.mean() + 1.0))
    };
    let ig_span = |g: &hlc_core::InverseGammaMessage| {
        let mode = g.scale() / (g.shape() + 1.0);
        span(g.mean().ok(), g.variance().ok(), true, (mode / 10.0, mode * 10.0))
    };
    let gam_span = |g: &hlc_core::GammaMessage| {
        let m = g.mean().unwrap_or(1.0);
        span(g.mean().ok(), g.variance().ok(), true, (m / 10.0, m * 10.0))
    };
    let params = vec![
        parameter(
            "alpha",
            Some(q.q_alpha.mean()),
            Some(q.q_alpha.variance()),
            grid([gauss_span(&q.q_alpha), gauss_span(&p.alpha)]),
            |x| q.q_alpha.pdf(x),
            |x| p.alpha.pdf(x),
        ),
        parameter(
            "beta",
            Some(q.q_beta.mean()),
            Some(q.q_beta.variance()),
            grid([gauss_span(&q.q_beta), gauss_span(&p.beta)]),
            |x| q.q_beta.pdf(x),
            |x| p.beta.pdf(x),
        ),
        parameter(
            "obs_variance",
            q.q_obs_variance.mean().ok(),
            q.q_obs_variance.variance().ok(),
            grid([ig_span(&q.q_obs_variance), ig_span(&p.obs_variance)]),
            |x| q.q_obs_variance.pdf(x),
            |x| p.obs_variance.pdf(x),
        ),
        parameter(
            "gain_precision",
            q.q_gain_precision.mean().ok(),
            q.q_gain_precision.variance().ok(),
            grid([gam_span(&q.q_gain_precision), gam_span(&p.gain_precision)]),
            |x| q.q_gain_precision.pdf(x),
            |x| p.gain_precision.pdf(x),
        ),
    ];
    Json(json!({ "parameters": params })).into_response()
}
