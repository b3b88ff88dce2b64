//! Objective evaluation: spectral distances and a harmonic-product-spectrum
//! pitch check against a pianoroll.

use ndarray::{Array2, ArrayView1};

use crate::dsp::{spectral_convergence, AudioClip, Stft, LOG_EPS};
use crate::error::{Error, Result};
use crate::score::{pitch_to_hz, Pianoroll};

/// Harmonic-product-spectrum detector settings.
#[derive(Clone, Debug, PartialEq)]
pub struct PitchDetector {
    /// Number of harmonics multiplied together.
    pub order: usize,
    pub min_hz: f64,
    pub max_hz: f64,
    /// Candidate spacing in bins.
    pub grid: f64,
    /// A candidate's own bin must reach this fraction of the frame maximum.
    pub peak_floor: f64,
    /// Frames whose energy is this far below the loudest frame are unvoiced.
    pub silence_db: f64,
}

impl Default for PitchDetector {
    fn default() -> Self {
        Self {
            order: 4,
            min_hz: 50.0,
            max_hz: 2000.0,
            grid: 0.25,
            peak_floor: 0.1,
            silence_db: -60.0,
        }
    }
}

impl PitchDetector {
    /// f0 of one magnitude frame, or `None` if the frame holds no energy or no
    /// candidate clears the peak floor. Silence gating across a clip is done
    /// by [`PitchDetector::frame_pitches`].
    pub fn detect(&self, frame: ArrayView1<'_, f64>, sample_rate: u32, n_fft: usize) -> Option<f64> {
        let bins = frame.len();
        let max = frame.iter().fold(0.0f64, |m, &v| m.max(v));
        if !(max > 0.0) || bins < 3 {
            return None;
        }
        let hz_per_bin = f64::from(sample_rate) / n_fft as f64;
        let lo = (self.min_hz / hz_per_bin / self.grid).ceil() as usize;
        let hi = (self.max_hz / hz_per_bin / self.grid).floor() as usize;
        let tiny = max * 1e-12;
        let mut best: Option<(f64, f64)> = None;
        for step in lo..=hi {
            let b = step as f64 * self.grid;
            let own = b.round() as usize;
            if own >= bins || frame[own] < self.peak_floor * max {
                continue;
            }
            let mut score = 0.0;
            for h in 1..=self.order {
                let k = (h as f64 * b).round() as usize;
                score += (frame.get(k).copied().unwrap_or(0.0) + tiny).ln();
            }
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, b));
            }
        }
        let (_, b) = best?;
        Some(refine_peak(frame, b.round() as usize) * hz_per_bin)
    }

    /// Per-frame f0 with frames more than `silence_db` below the loudest
    /// frame of the clip treated as unvoiced.
    pub fn frame_pitches(&self, mag: &Array2<f64>, sample_rate: u32) -> Vec<Option<f64>> {
        let energy: Vec<f64> = mag.columns().into_iter().map(|c| c.dot(&c)).collect();
        let peak = energy.iter().fold(0.0f64, |m, &e| m.max(e));
        let gate = peak * 10f64.powf(self.silence_db / 10.0);
        let n_fft = 2 * (mag.nrows() - 1);
        mag.columns()
            .into_iter()
            .zip(&energy)
            .map(|(col, &e)| {
                if peak > 0.0 && e >= gate {
                    self.detect(col, sample_rate, n_fft)
                } else {
                    None
                }
            })
            .collect()
    }
}

/// Climbs from `start` to the nearest local maximum and interpolates a
/// parabola through the log magnitudes around it.
fn refine_peak(frame: ArrayView1<'_, f64>, start: usize) -> f64 {
    let n = frame.len();
    let mut k = start.min(n - 1);
    loop {
        if k + 1 < n && frame[k + 1] > frame[k] {
            k += 1;
        } else if k > 0 && frame[k - 1] > frame[k] {
            k -= 1;
        } else {
            break;
        }
    }
    if k == 0 || k + 1 >= n {
        return k as f64;
    }
    let l = |i: usize| (frame[i] + f64::MIN_POSITIVE).ln();
    let (a, b, c) = (l(k - 1), l(k), l(k + 1));
    let denom = a - 2.0 * b + c;
    let delta = if denom < 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    k as f64 + delta.clamp(-0.5, 0.5)
}

/// [`PitchDetector::detect`] with default settings.
pub fn detect_pitch(frame: &[f64], sample_rate: u32, n_fft: usize) -> Option<f64> {
    PitchDetector::default().detect(ArrayView1::from(frame), sample_rate, n_fft)
}

/// Outcome of scoring detected pitches against a pianoroll.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitchScore {
    /// `None` when no frame was scored.
    pub accuracy: Option<f64>,
    /// Frames with exactly one active pitch.
    pub scored_frames: usize,
    /// Frames with two or more active pitches, skipped.
    pub polyphonic_frames: usize,
}

/// Scores per-frame detections against the roll. Only frames where the roll
/// has exactly one active pitch count; a frame is correct when its detected
/// f0 lies within one semitone of that pitch. Unvoiced detections count as
/// wrong. Frames beyond the shorter of the two sequences are ignored.
pub fn score_pitches(pitches: &[Option<f64>], roll: &Pianoroll) -> PitchScore {
    let frames = pitches.len().min(roll.frames());
    let (mut scored, mut poly, mut correct) = (0usize, 0usize, 0usize);
    for (t, detected) in pitches.iter().enumerate().take(frames) {
        match roll.pitches_at(t).as_slice() {
            [] => {}
            [p] => {
                scored += 1;
                if let Some(f) = detected {
                    if (12.0 * (f / pitch_to_hz(*p)).log2()).abs() <= 1.0 {
                        correct += 1;
                    }
                }
            }
            _ => poly += 1,
        }
    }
    PitchScore {
        accuracy: (scored > 0).then(|| correct as f64 / scored as f64),
        scored_frames: scored,
        polyphonic_frames: poly,
    }
}

/// Fraction of monophonic roll frames whose detected pitch matches.
pub fn pitch_accuracy(audio: &AudioClip, roll: &Pianoroll) -> Result<PitchScore> {
    let mag = Stft::new().magnitude(audio)?;
    let pitches = PitchDetector::default().frame_pitches(&mag.mag, audio.sample_rate);
    Ok(score_pitches(&pitches, roll))
}

/// RMS difference of `ln(mag + eps)`.
pub fn log_spectral_distance(reference: &Array2<f64>, estimate: &Array2<f64>) -> Result<f64> {
    if reference.dim() != estimate.dim() || reference.is_empty() {
        return Err(Error::shape(format!(
            "log_spectral_distance: {:?} vs {:?}",
            reference.dim(),
            estimate.dim()
        )));
    }
    let sum: f64 = reference
        .iter()
        .zip(estimate.iter())
        .map(|(a, b)| {
            let d = (a + LOG_EPS).ln() - (b + LOG_EPS).ln();
            d * d
        })
        .sum();
    Ok((sum / reference.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub spectral_convergence: f64,
    pub log_spectral_distance: f64,
    pub pitch_accuracy: Option<f64>,
    pub voiced_frame_count: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "spectral_convergence,log_spectral_distance,pitch_accuracy,voiced_frames";

    pub fn to_csv(&self) -> String {
        let acc = self
            .pitch_accuracy
            .map(|a| a.to_string())
            .unwrap_or_else(|| "none".into());
        format!(
            "{},{},{},{}",
            self.spectral_convergence, self.log_spectral_distance, acc, self.voiced_frame_count
        )
    }
}

/// Compares `estimate` against `reference` over their common frames and, if
/// a roll is given, scores the estimate's pitch against it.
pub fn evaluate(reference: &AudioClip, estimate: &AudioClip, roll: Option<&Pianoroll>) -> Result<EvalReport> {
    if reference.sample_rate != estimate.sample_rate {
        return Err(Error::invalid(format!(
            "sample rates differ: {} vs {}",
            reference.sample_rate, estimate.sample_rate
        )));
    }
    let stft = Stft::new();
    let r = stft.magnitude(reference)?.mag;
    let e = stft.magnitude(estimate)?.mag;
    let frames = r.ncols().min(e.ncols());
    let r = r.slice(ndarray::s![.., ..frames]).to_owned();
    let e_common = e.slice(ndarray::s![.., ..frames]).to_owned();
    let (pitch_accuracy, voiced_frame_count) = match roll {
        Some(roll) => {
            let pitches = PitchDetector::default().frame_pitches(&e, estimate.sample_rate);
            let s = score_pitches(&pitches, roll);
            (s.accuracy, s.scored_frames)
        }
        None => (None, 0),
    };
    Ok(EvalReport {
        spectral_convergence: spectral_convergence(&r, &e_common)?,
        log_spectral_distance: log_spectral_distance(&r, &e_common)?,
        pitch_accuracy,
        voiced_frame_count,
    })
}
