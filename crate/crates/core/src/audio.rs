//! Frame-based audio plumbing: WAV I/O, per-frame log power, gain
//! application, and an optional uniform FFT filter bank.
//!
//! Frame k covers samples [k·hop, k·hop + frame_length), zero-padded past
//! the end, and there are ceil(N / hop) frames for N samples.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Theta;
use crate::sp::{run_sequence, GainState, SpError};

/// Guards the logarithm of digital silence.
pub const POWER_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported or malformed WAV ({chunk} chunk): {reason}")]
    Format { chunk: String, reason: String },
    #[error("gain track has {gains} frames but the audio has {frames}")]
    Alignment { gains: usize, frames: usize },
    #[error("invalid frame configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sp(#[from] SpError),
}

pub type Result<T> = std::result::Result<T, AudioError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub hop: usize,
    /// dB added to 10·log10(mean square) so digital full scale maps to SPL.
    pub calibration_offset: f64,
}

impl Default for FrameConfig {
    /// 16 kHz, 10 ms frames, 5 ms hop, 100 dB calibration.
    fn default() -> Self {
        Self { sample_rate: 16_000, frame_length: 160, hop: 80, calibration_offset: 100.0 }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop == 0 || self.hop > self.frame_length {
            return Err(AudioError::Config(format!(
                "need sample_rate > 0 and 0 < hop <= frame_length, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn frame_count(&self, samples: usize) -> usize {
        samples.div_ceil(self.hop)
    }

    /// Duration of `steps` hops in milliseconds.
    pub fn steps_to_ms(&self, steps: usize) -> f64 {
        steps as f64 * self.hop as f64 * 1000.0 / self.sample_rate as f64
    }

    /// Frames covering `seconds` of audio.
    pub fn frames_for_seconds(&self, seconds: f64) -> usize {
        (seconds * self.sample_rate as f64 / self.hop as f64).round() as usize
    }
}

/// Per-frame level s_k in dB: 10·log10(mean square + ε) + calibration.
pub fn estimate_log_power(samples: &[f64], cfg: &FrameConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = samples.len();
    Ok((0..cfg.frame_count(n))
        .map(|k| {
            let start = k * cfg.hop;
            let end = (start + cfg.frame_length).min(n);
            let energy: f64 = samples[start..end].iter().map(|x| x * x).sum();
            10.0 * (energy / cfg.frame_length as f64 + POWER_EPSILON).log10() + cfg.calibration_offset
        })
        .collect())
}

/// Output of [`apply_gain`].
#[derive(Debug, Clone, PartialEq)]
pub struct GainOutput {
    pub samples: Vec<f64>,
    /// Number of samples that had to be clipped to [−1, 1].
    pub clipped: usize,
}

/// Applies per-frame gains (dB). The linear gain 10^(g/20) is anchored at
/// the start of each frame and interpolated linearly across the hop.
pub fn apply_gain(samples: &[f64], gains_db: &[f64], cfg: &FrameConfig) -> Result<GainOutput> {
    cfg.validate()?;
    let frames = cfg.frame_count(samples.len());
    if gains_db.len() != frames {
        return Err(AudioError::Alignment { gains: gains_db.len(), frames });
    }
    let linear: Vec<f64> = gains_db.iter().map(|g| 10f64.powf(g / 20.0)).collect();
    let mut clipped = 0;
    let out = samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let k = i / cfg.hop;
            let frac = (i % cfg.hop) as f64 / cfg.hop as f64;
            let g0 = linear[k];
            let g = match linear.get(k + 1) {
                Some(&g1) if g1 != g0 => g0 + (g1 - g0) * frac,
                _ => g0,
            };
            let y = x * g;
            if y.abs() > 1.0 {
                clipped += 1;
                y.clamp(-1.0, 1.0)
            } else {
                y
            }
        })
        .collect();
    Ok(GainOutput { samples: out, clipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

/// Decoded WAV audio, one vector per channel, samples in [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Wav {
    pub sample_rate: u32,
    pub format: SampleFormat,
    pub channels: Vec<Vec<f64>>,
}

fn format_err(chunk: &str, reason: impl Into<String>) -> AudioError {
    AudioError::Format { chunk: chunk.to_string(), reason: reason.into() }
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

impl Wav {
    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Self {
        Self { sample_rate, format: SampleFormat::Pcm16, channels: vec![samples] }
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Average of the channels.
    pub fn mixdown(&self) -> Vec<f64> {
        let c = self.channels.len().max(1) as f64;
        (0..self.len()).map(|i| self.channels.iter().map(|ch| ch[i]).sum::<f64>() / c).collect()
    }

    pub fn read(mut reader: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < 12 || &b[0..4] != b"RIFF" || &b[8..12] != b"WAVE" {
            return Err(format_err("RIFF", "missing RIFF/WAVE header"));
        }
        let mut fmt: Option<(u16, u16, u32, u16)> = None;
        let mut pos = 12;
        while pos + 8 <= b.len() {
            let id = &b[pos..pos + 4];
            let size = u32_at(b, pos + 4) as usize;
            let body = pos + 8;
            let name = String::from_utf8_lossy(id).into_owned();
            if body + size > b.len() {
                return Err(format_err(&name, "chunk extends past end of file"));
            }
            match id {
                b"fmt " => {
                    if size < 16 {
                        return Err(format_err("fmt ", "chunk shorter than 16 bytes"));
                    }
                    let mut tag = u16_at(b, body);
                    if tag == WAVE_FORMAT_EXTENSIBLE {
                        if size < 40 {
                            return Err(format_err("fmt ", "extensible format without subformat"));
                        }
                        tag = u16_at(b, body + 24);
                    }
                    fmt = Some((tag, u16_at(b, body + 2), u32_at(b, body + 4), u16_at(b, body + 14)));
                }
                b"data" => {
                    let (tag, channels, rate, bits) =
                        fmt.ok_or_else(|| format_err("data", "data chunk before fmt chunk"))?;
                    return Self::decode(&b[body..body + size], tag, channels, rate, bits);
                }
                _ => {}
            }
            pos = body + size + (size & 1);
        }
        Err(format_err("data", "no data chunk"))
    }

    fn decode(data: &[u8], tag: u16, channels: u16, rate: u32, bits: u16) -> Result<Self> {
        if channels == 0 || channels > 2 {
            return Err(format_err("fmt ", format!("{channels} channels; only mono and stereo are supported")));
        }
        if rate == 0 {
            return Err(format_err("fmt ", "zero sample rate"));
        }
        let (format, width) = match (tag, bits) {
            (WAVE_FORMAT_PCM, 16) => (SampleFormat::Pcm16, 2),
            (WAVE_FORMAT_IEEE_FLOAT, 32) => (SampleFormat::Float32, 4),
            _ => {
                return Err(format_err(
                    "fmt ",
                    format!("format tag {tag} with {bits} bits; need 16-bit PCM or 32-bit float"),
                ))
            }
        };
        let nch = channels as usize;
        let frame = width * nch;
        let count = data.len() / frame;
        let mut out = vec![Vec::with_capacity(count); nch];
        for i in 0..count {
            for (c, ch) in out.iter_mut().enumerate() {
                let at = i * frame + c * width;
                let v = match format {
                    SampleFormat::Pcm16 => i16::from_le_bytes([data[at], data[at + 1]]) as f64 / 32768.0,
                    SampleFormat::Float32 => f32::from_le_bytes([
                        data[at],
                        data[at + 1],
                        data[at + 2],
                        data[at + 3],
                    ]) as f64,
                };
                ch.push(v);
            }
        }
        Ok(Self { sample_rate: rate, format, channels: out })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let nch = self.channels.len() as u16;
        let (tag, width) = match self.format {
            SampleFormat::Pcm16 => (WAVE_FORMAT_PCM, 2u16),
            SampleFormat::Float32 => (WAVE_FORMAT_IEEE_FLOAT, 4u16),
        };
        let data_len = self.len() * nch as usize * width as usize;
        let mut b = Vec::with_capacity(44 + data_len);
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&tag.to_le_bytes());
        b.extend_from_slice(&nch.to_le_bytes());
        b.extend_from_slice(&self.sample_rate.to_le_bytes());
        b.extend_from_slice(&(self.sample_rate * (nch * width) as u32).to_le_bytes());
        b.extend_from_slice(&(nch * width).to_le_bytes());
        b.extend_from_slice(&(width * 8).to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data_len as u32).to_le_bytes());
        for i in 0..self.len() {
            for ch in &self.channels {
                let x = ch[i];
                match self.format {
                    SampleFormat::Pcm16 => {
                        let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                        b.extend_from_slice(&v.to_le_bytes());
                    }
                    SampleFormat::Float32 => b.extend_from_slice(&(x as f32).to_le_bytes()),
                }
            }
        }
        b
    }

    pub fn write(&self, mut writer: impl Write) -> Result<()> {
        writer.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn to_path(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Sine of the given frequency whose frame level is `level_db`.
pub fn tone(freq: f64, level_db: f64, samples: usize, cfg: &FrameConfig) -> Vec<f64> {
    let amp = (2.0 * 10f64.powf((level_db - cfg.calibration_offset) / 10.0)).sqrt();
    let w = 2.0 * std::f64::consts::PI * freq / cfg.sample_rate as f64;
    (0..samples).map(|i| amp * (w * i as f64).sin()).collect()
}

/// Result of running the compressor over a file.
#[derive(Debug, Clone, PartialEq)]
pub struct Processed {
    pub wav: Wav,
    pub levels: Vec<f64>,
    pub gains: Vec<GainState>,
    pub clipped: usize,
}

/// Level estimation, gain inference and gain application on one signal.
/// Stereo input is analysed on its mixdown and both channels get the same
/// gain.
pub fn process(input: &Wav, theta: &Theta, cfg: &FrameConfig) -> Result<Processed> {
    let cfg = FrameConfig { sample_rate: input.sample_rate, ..*cfg };
    let levels = estimate_log_power(&input.mixdown(), &cfg)?;
    let gains = run_sequence(&levels, theta, GainState::default())?;
    let means: Vec<f64> = gains.iter().map(|g| g.mean).collect();
    let mut clipped = 0;
    let mut channels = Vec::with_capacity(input.channels.len());
    for ch in &input.channels {
        let out = apply_gain(ch, &means, &cfg)?;
        clipped += out.clipped;
        channels.push(out.samples);
    }
    Ok(Processed {
        wav: Wav { sample_rate: input.sample_rate, format: input.format, channels },
        levels,
        gains,
        clipped,
    })
}

/// Reads `input`, processes it, writes `output`.
pub fn process_file(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    theta: &Theta,
    cfg: &FrameConfig,
) -> Result<Processed> {
    let wav = Wav::from_path(input)?;
    let processed = process(&wav, theta, cfg)?;
    processed.wav.to_path(output)?;
    Ok(processed)
}

/// Uniform FFT filter bank: periodic Hann analysis window of
/// `frame_length` samples, hop of half a frame, overlap-add synthesis.
/// With that window and hop the analysis windows sum to one, so unmodified
/// spectra reconstruct the input exactly.
pub struct FilterBank {
    frame: usize,
    bands: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FilterBank {
    pub fn new(frame_length: usize, bands: usize) -> Result<Self> {
        if frame_length < 4 || !frame_length.is_multiple_of(2) {
            return Err(AudioError::Config("filter-bank frame length must be even and >= 4".into()));
        }
        if bands == 0 || bands > frame_length / 2 + 1 {
            return Err(AudioError::Config(format!("cannot split into {bands} bands")));
        }
        let window = (0..frame_length)
            .map(|i| {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame_length as f64).cos()
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            frame: frame_length,
            bands,
            window,
            forward: planner.plan_fft_forward(frame_length),
            inverse: planner.plan_fft_inverse(frame_length),
        })
    }

    pub fn hop(&self) -> usize {
        self.frame / 2
    }

    // Band of bin k (k in 0..=frame/2).
    fn band_of(&self, k: usize) -> usize {
        (k * self.bands / (self.frame / 2 + 1)).min(self.bands - 1)
    }

    fn spectra(&self, samples: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let hop = self.hop();
        let padded_len = samples.len() + self.frame;
        let mut padded = vec![0.0; padded_len + hop];
        padded[hop..hop + samples.len()].copy_from_slice(samples);
        let frames = (samples.len() + hop).div_ceil(hop);
        (0..frames)
            .map(|f| {
                let mut buf: Vec<Complex<f64>> = (0..self.frame)
                    .map(|i| Complex::new(padded.get(f * hop + i).copied().unwrap_or(0.0) * self.window[i], 0.0))
                    .collect();
                self.forward.process(&mut buf);
                buf
            })
            .collect()
    }

    /// Per-band levels (dB) for each analysis frame: band power scaled so
    /// that summing all bands gives the windowed mean square.
    pub fn band_levels(&self, samples: &[f64], calibration: f64) -> Vec<Vec<f64>> {
        let norm: f64 = self.window.iter().map(|w| w * w).sum::<f64>() * self.frame as f64;
        let half = self.frame / 2;
        self.spectra(samples)
            .iter()
            .map(|spec| {
                let mut power = vec![0.0; self.bands];
                for (k, z) in spec.iter().enumerate().take(half + 1) {
                    let weight = if k == 0 || k == half { 1.0 } else { 2.0 };
                    power[self.band_of(k)] += weight * z.norm_sqr() / norm;
                }
                power.iter().map(|p| 10.0 * (p + POWER_EPSILON).log10() + calibration).collect()
            })
            .collect()
    }

    /// Applies per-frame, per-band gains (dB) and resynthesizes.
    pub fn apply(&self, samples: &[f64], gains_db: &[Vec<f64>]) -> Result<Vec<f64>> {
        let spectra = self.spectra(samples);
        if gains_db.len() != spectra.len() || gains_db.iter().any(|g| g.len() != self.bands) {
            return Err(AudioError::Alignment { gains: gains_db.len(), frames: spectra.len() });
        }
        let hop = self.hop();
        let mut out = vec![0.0; (spectra.len() + 1) * hop + self.frame];
        let scale = 1.0 / self.frame as f64;
        for (f, (mut spec, gains)) in spectra.into_iter().zip(gains_db).enumerate() {
            for (k, z) in spec.iter_mut().enumerate() {
                let bin = if k <= self.frame / 2 { k } else { self.frame - k };
                *z *= 10f64.powf(gains[self.band_of(bin)] / 20.0);
            }
            self.inverse.process(&mut spec);
            for (i, z) in spec.iter().enumerate() {
                out[f * hop + i] += z.re * scale;
            }
        }
        Ok(out[hop..hop + samples.len()].to_vec())
    }

    /// Runs an independent compressor per band.
    pub fn process(&self, samples: &[f64], theta: &Theta, calibration: f64) -> Result<(Vec<f64>, Vec<Vec<GainState>>)> {
        let levels = self.band_levels(samples, calibration);
        let mut per_band = Vec::with_capacity(self.bands);
        for b in 0..self.bands {
            let track: Vec<f64> = levels.iter().map(|l| l[b]).collect();
            per_band.push(run_sequence(&track, theta, GainState::default())?);
        }
        let gains: Vec<Vec<f64>> =
            (0..levels.len()).map(|f| per_band.iter().map(|band| band[f].mean).collect()).collect();
        Ok((self.apply(samples, &gains)?, per_band))
    }
}
