//! STFT analysis, log compression, Griffin-Lim phase retrieval and WAV I/O.

mod griffin_lim;
mod stft;
mod wav;

pub use griffin_lim::{griffin_lim, griffin_lim_traced};
pub use stft::{frame_count, Stft};
pub use wav::{wav_read, wav_write};

use ndarray::Array2;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 44_100;
pub const N_FFT: usize = 2048;
pub const HOP: usize = 256;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const HOP_SECONDS: f64 = HOP as f64 / SAMPLE_RATE as f64;

/// Frames per training chunk.
pub const CHUNK_FRAMES: usize = 860;
/// Samples per training chunk, `(CHUNK_FRAMES - 1) * HOP`, so a centred STFT
/// of one chunk has exactly `CHUNK_FRAMES` frames.
pub const CHUNK_SAMPLES: usize = (CHUNK_FRAMES - 1) * HOP;

pub const LOG_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

/// `|STFT|`, bins by frames.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub mag: Array2<f64>,
    pub sample_rate: u32,
}

impl MagnitudeSpectrogram {
    pub fn new(mag: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if mag.nrows() != N_BINS {
            return Err(Error::shape(format!(
                "magnitude spectrogram needs {N_BINS} bins, got {}",
                mag.nrows()
            )));
        }
        if mag.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("magnitudes must be finite and non-negative"));
        }
        Ok(Self { mag, sample_rate })
    }

    pub fn frames(&self) -> usize {
        self.mag.ncols()
    }
}

/// `ln(mag + eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogSpectrogram {
    pub logmag: Array2<f64>,
    pub eps: f64,
}

impl LogSpectrogram {
    pub fn frames(&self) -> usize {
        self.logmag.ncols()
    }
}

pub fn log_compress(spec: &MagnitudeSpectrogram, eps: f64) -> Result<LogSpectrogram> {
    if !(eps > 0.0) {
        return Err(Error::invalid("log compression eps must be > 0"));
    }
    Ok(LogSpectrogram {
        logmag: spec.mag.mapv(|m| (m + eps).ln()),
        eps,
    })
}

pub fn log_expand(log: &LogSpectrogram, sample_rate: u32) -> Result<MagnitudeSpectrogram> {
    if log.logmag.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log spectrogram".into()));
    }
    MagnitudeSpectrogram::new(log.logmag.mapv(|l| (l.exp() - log.eps).max(0.0)), sample_rate)
}

/// `||ref - est||_F / ||ref||_F`.
pub fn spectral_convergence(reference: &Array2<f64>, estimate: &Array2<f64>) -> Result<f64> {
    if reference.dim() != estimate.dim() {
        return Err(Error::shape(format!(
            "spectral_convergence: {:?} vs {:?}",
            reference.dim(),
            estimate.dim()
        )));
    }
    let norm = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("spectral_convergence: reference has zero norm"));
    }
    let diff = reference
        .iter()
        .zip(estimate.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}
