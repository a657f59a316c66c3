//! Python bindings: gain inference, parameter estimation, model comparison,
//! the personalization agent and WAV processing.

use std::path::PathBuf;

use hlc_core::audio::{process_file, FrameConfig};
use hlc_core::hada::{self, AgentConfig, IoBuffer, Polarity};
use hlc_core::mc::{compare_models, NestingSpec};
use hlc_core::model::{synthesize, GainProcess, SyntheticSpec};
use hlc_core::pe::{estimate_detailed, point_estimate, Segment, SegmentMeta};
use hlc_core::sp::{characterize, kalman_step, run_sequence};
use hlc_core::{GainState, HearingLossParams, PeConfig, PosteriorSet, ThetaPriors};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(hlc, HlcError, PyValueError, "Raised for invalid parameters, data or files.");

fn err(e: impl std::fmt::Display) -> PyErr {
    HlcError::new_err(e.to_string())
}

/// Tuning parameters: alpha, beta of the loss curve, observation variance
/// and gain precision.
#[pyclass(frozen, from_py_object, name = "Theta", module = "hlc")]
#[derive(Clone, Copy)]
pub struct PyTheta(pub hlc_core::Theta);

#[pymethods]
impl PyTheta {
    #[new]
    #[pyo3(signature = (alpha=2.0, beta=-90.0, obs_variance=10.0, gain_precision=1.0))]
    fn new(alpha: f64, beta: f64, obs_variance: f64, gain_precision: f64) -> PyResult<Self> {
        hlc_core::Theta::new(alpha, beta, obs_variance, gain_precision).map(Self).map_err(err)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.hearing.alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.hearing.beta
    }

    #[getter]
    fn obs_variance(&self) -> f64 {
        self.0.obs_variance
    }

    #[getter]
    fn gain_precision(&self) -> f64 {
        self.0.gain_precision
    }

    /// Compression ratio, attack/release steps and steady gains between two
    /// input levels.
    fn characterize<'py>(&self, py: Python<'py>, low: f64, high: f64) -> PyResult<Bound<'py, PyDict>> {
        let c = characterize(&self.0, low, high).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("compression_ratio", c.compression_ratio)?;
        d.set_item("attack_steps", c.attack_steps)?;
        d.set_item("release_steps", c.release_steps)?;
        d.set_item("steady_gains", c.steady_gain_per_level)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Theta(alpha={}, beta={}, obs_variance={}, gain_precision={})",
            self.alpha(),
            self.beta(),
            self.0.obs_variance,
            self.0.gain_precision
        )
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

/// One Kalman update of the gain belief; returns (mean, variance).
#[pyfunction]
fn gain_step(mean: f64, variance: f64, level: f64, theta: PyTheta) -> PyResult<(f64, f64)> {
    let prior = GainState::new(mean, variance).map_err(err)?;
    let post = kalman_step(prior, level, &theta.0).map_err(err)?;
    Ok((post.mean, post.variance))
}

/// Gain beliefs over a sequence of input levels (dB SPL).
#[pyfunction]
#[pyo3(signature = (levels, theta, mean=0.0, variance=1e4))]
fn gain_trace(levels: Vec<f64>, theta: PyTheta, mean: f64, variance: f64) -> PyResult<Vec<(f64, f64)>> {
    let initial = GainState::new(mean, variance).map_err(err)?;
    let states = run_sequence(&levels, &theta.0, initial).map_err(err)?;
    Ok(states.iter().map(|g| (g.mean, g.variance)).collect())
}

/// Preferred (level, gain) segments.
#[pyclass(frozen, from_py_object, name = "TrainingSet", module = "hlc")]
#[derive(Clone)]
pub struct PyTrainingSet(pub hlc_core::TrainingSet);

#[pymethods]
impl PyTrainingSet {
    /// Builds a set from `[(levels, gains), ...]`.
    #[new]
    fn new(segments: Vec<(Vec<f64>, Vec<f64>)>) -> PyResult<Self> {
        let segments = segments
            .into_iter()
            .map(|(s, g)| Segment { s, g, meta: SegmentMeta::default() })
            .collect();
        hlc_core::TrainingSet::new(segments).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        hlc_core::TrainingSet::read_jsonl(&path).map(Self).map_err(err)
    }

    /// Noisy pairs around the gains a target (alpha, beta) listener prefers,
    /// with levels uniform on [low, high] dB.
    #[staticmethod]
    #[pyo3(signature = (alpha, beta, steps, noise_sd=3.0, seed=0, low=30.0, high=100.0, segment_len=None))]
    #[allow(clippy::too_many_arguments)]
    fn synthesize(
        alpha: f64,
        beta: f64,
        steps: usize,
        noise_sd: f64,
        seed: u64,
        low: f64,
        high: f64,
        segment_len: Option<usize>,
    ) -> PyResult<Self> {
        let target = HearingLossParams::new(alpha, beta).map_err(err)?;
        let mut spec = SyntheticSpec::new(target, steps, GainProcess::UniformLevels { low, high });
        spec.noise_sd = noise_sd;
        spec.seed = seed;
        if let Some(n) = segment_len {
            spec.segment_len = n;
        }
        synthesize(&spec).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        self.0.write_jsonl(file).map_err(err)
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps()
    }

    fn segments(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.0.segments.iter().map(|seg| (seg.s.clone(), seg.g.clone())).collect()
    }

    fn __len__(&self) -> usize {
        self.0.segments.len()
    }
}

/// Factorized posterior over theta.
#[pyclass(frozen, from_py_object, name = "Posterior", module = "hlc")]
#[derive(Clone, Copy)]
pub struct PyPosterior(pub PosteriorSet);

#[pymethods]
impl PyPosterior {
    /// The default priors as a posterior with no data.
    #[staticmethod]
    fn prior() -> Self {
        Self(ThetaPriors::default().into())
    }

    /// (mean, variance)
    #[getter]
    fn alpha(&self) -> (f64, f64) {
        (self.0.q_alpha.mean(), self.0.q_alpha.variance())
    }

    /// (mean, variance)
    #[getter]
    fn beta(&self) -> (f64, f64) {
        (self.0.q_beta.mean(), self.0.q_beta.variance())
    }

    /// Inverse-gamma (shape, scale).
    #[getter]
    fn obs_variance(&self) -> (f64, f64) {
        (self.0.q_obs_variance.shape(), self.0.q_obs_variance.scale())
    }

    /// Gamma (shape, rate).
    #[getter]
    fn gain_precision(&self) -> (f64, f64) {
        (self.0.q_gain_precision.shape(), self.0.q_gain_precision.rate())
    }

    fn point_estimate(&self) -> PyResult<PyTheta> {
        point_estimate(&self.0).map(PyTheta).map_err(err)
    }

    /// One Thompson draw of theta.
    fn sample(&self, seed: u64) -> PyResult<PyTheta> {
        hada::thompson_sample_seeded(&self.0, seed).map(PyTheta).map_err(err)
    }

    fn report(&self) -> String {
        self.0.report()
    }

    fn __repr__(&self) -> String {
        format!("Posterior(alpha={:?}, beta={:?})", self.alpha(), self.beta())
    }
}

/// Variational estimate of theta from preferred segments. Returns the
/// posterior and any warnings.
#[pyfunction]
#[pyo3(signature = (data, iterations=200, early_stop=None))]
fn estimate(
    py: Python<'_>,
    data: &PyTrainingSet,
    iterations: usize,
    early_stop: Option<f64>,
) -> PyResult<(PyPosterior, Vec<String>)> {
    let cfg = PeConfig { iterations, early_stop, ..PeConfig::default() };
    let est = py
        .detach(|| estimate_detailed(&data.0, &ThetaPriors::default(), &cfg))
        .map_err(err)?;
    Ok((PyPosterior(est.posterior), est.warnings))
}

/// Bayes factor of the model with gamma fixed at zero against the full
/// model, by the encompassing-prior ratio over [0, omega].
#[pyfunction]
#[pyo3(signature = (data, omega=0.25, iterations=200))]
fn bayes_factor<'py>(
    py: Python<'py>,
    data: &PyTrainingSet,
    omega: f64,
    iterations: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = NestingSpec::new(omega).map_err(err)?;
    let cfg = PeConfig { iterations, ..PeConfig::default() };
    let bf = py
        .detach(|| compare_models(&data.0, &ThetaPriors::default(), &spec, &cfg))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("deci_hartley", bf.deci_hartley)?;
    d.set_item("ln_ratio", bf.ln_ratio)?;
    d.set_item("posterior_mass", bf.posterior_mass)?;
    d.set_item("prior_mass", bf.prior_mass)?;
    Ok(d)
}

/// Processes a WAV file with a fixed theta. Returns (frames, clipped samples).
#[pyfunction]
fn process_wav(py: Python<'_>, input: PathBuf, output: PathBuf, theta: PyTheta) -> PyResult<(usize, usize)> {
    let out = py
        .detach(|| process_file(&input, &output, &theta.0, &FrameConfig::default()))
        .map_err(err)?;
    Ok((out.levels.len(), out.clipped))
}

/// Trial/appraisal loop with Thompson sampling.
#[pyclass(name = "Agent", module = "hlc")]
pub struct PyAgent(hada::Agent);

#[pymethods]
impl PyAgent {
    #[new]
    #[pyo3(signature = (seed=0, iterations=200, window_frames=600, db_path=None, log_path=None))]
    fn new(
        seed: u64,
        iterations: usize,
        window_frames: usize,
        db_path: Option<PathBuf>,
        log_path: Option<PathBuf>,
    ) -> PyResult<Self> {
        let cfg = AgentConfig {
            seed,
            priors: ThetaPriors::default(),
            pe: PeConfig { iterations, early_stop: Some(1e-6), ..PeConfig::default() },
            window_frames,
            db_path,
            log_path,
        };
        hada::Agent::new(cfg).map(Self).map_err(err)
    }

    #[getter]
    fn trial_id(&self) -> u64 {
        self.0.trial().trial_id
    }

    #[getter]
    fn theta(&self) -> PyTheta {
        PyTheta(self.0.trial().theta)
    }

    #[getter]
    fn posterior(&self) -> PyPosterior {
        PyPosterior(*self.0.posterior())
    }

    #[getter]
    fn db_size(&self) -> usize {
        self.0.db().len()
    }

    /// Thetas of all trials so far, oldest first.
    fn history(&self) -> Vec<PyTheta> {
        self.0.history().iter().map(|t| PyTheta(t.theta)).collect()
    }

    /// Records "pos" or "neg" for the current trial. `levels` and `gains`
    /// are the recently heard frames. Returns (new_trial, db_appended).
    fn appraise(&mut self, py: Python<'_>, polarity: &str, levels: Vec<f64>, gains: Vec<f64>) -> PyResult<(bool, bool)> {
        let polarity = match polarity {
            "pos" => Polarity::Positive,
            "neg" => Polarity::Negative,
            other => return Err(err(format!("polarity must be \"pos\" or \"neg\", got {other:?}"))),
        };
        if levels.len() != gains.len() {
            return Err(err(format!("{} levels but {} gains", levels.len(), gains.len())));
        }
        let mut buf = IoBuffer::new(levels.len());
        for (s, g) in levels.iter().zip(&gains) {
            buf.push(*s, *g);
        }
        let agent = &mut self.0;
        let out = py.detach(|| agent.on_appraisal(polarity, &buf)).map_err(err)?;
        Ok((out.new_trial, out.db_appended))
    }
}

#[pymodule]
pub fn hlc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HlcError", m.py().get_type::<HlcError>())?;
    m.add_class::<PyTheta>()?;
    m.add_class::<PyTrainingSet>()?;
    m.add_class::<PyPosterior>()?;
    m.add_class::<PyAgent>()?;
    m.add_function(wrap_pyfunction!(gain_step, m)?)?;
    m.add_function(wrap_pyfunction!(gain_trace, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(bayes_factor, m)?)?;
    m.add_function(wrap_pyfunction!(process_wav, m)?)?;
    Ok(())
}
