use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{AudioClip, MagnitudeSpectrogram, HOP, N_BINS, N_FFT};
use crate::error::{Error, Result};

/// Frames of a centred STFT over `len` samples.
pub fn frame_count(len: usize) -> usize {
    len / HOP + 1
}

/// Mirror an index into `[0, len)` the way numpy's `reflect` padding does.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Centred, reflect-padded, Hann-windowed STFT with `N_FFT = 2048` and
/// `HOP = 256`, plus the matching least-squares inverse.
pub struct Stft {
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Default for Stft {
    fn default() -> Self {
        Self::new()
    }
}

impl Stft {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        // periodic Hann
        let window = (0..N_FFT)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / N_FFT as f64).cos())
            .collect();
        Self {
            window,
            forward: planner.plan_fft_forward(N_FFT),
            inverse: planner.plan_fft_inverse(N_FFT),
        }
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Complex spectrum `[N_BINS, frames]`.
    pub fn analyze(&self, samples: &[f64]) -> Result<Array2<Complex64>> {
        if samples.is_empty() {
            return Err(Error::invalid("stft of empty audio"));
        }
        let len = samples.len();
        let frames = frame_count(len);
        let half = (N_FFT / 2) as isize;
        let mut out = Array2::zeros((N_BINS, frames));
        let mut buf = vec![Complex64::default(); N_FFT];
        let mut scratch = vec![Complex64::default(); self.forward.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = (t * HOP) as isize - half;
            for (n, b) in buf.iter_mut().enumerate() {
                let idx = start + n as isize;
                let s = if (0..len as isize).contains(&idx) {
                    samples[idx as usize]
                } else {
                    samples[reflect(idx, len)]
                };
                *b = Complex64::new(s * self.window[n], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..N_BINS {
                out[[k, t]] = buf[k];
            }
        }
        Ok(out)
    }

    pub fn magnitude(&self, audio: &AudioClip) -> Result<MagnitudeSpectrogram> {
        let spec = self.analyze(&audio.samples)?;
        MagnitudeSpectrogram::new(spec.mapv(|c| c.norm()), audio.sample_rate)
    }

    /// Least-squares inverse producing `(frames - 1) * HOP` samples.
    ///
    /// Windowed overlap-add divided by the summed squared window; contributions
    /// that fell in the reflected padding are folded back onto the samples they
    /// mirror, which makes this the exact minimiser of
    /// `||analyze(x) - spec||` over signals of that length.
    pub fn synthesize(&self, spec: &Array2<Complex64>) -> Result<Vec<f64>> {
        if spec.nrows() != N_BINS {
            return Err(Error::shape(format!("istft needs {N_BINS} bins, got {}", spec.nrows())));
        }
        let frames = spec.ncols();
        if frames < 2 {
            return Err(Error::shape("istft needs at least two frames"));
        }
        let len = (frames - 1) * HOP;
        let padded = len + N_FFT;
        let mut acc = vec![0.0; padded];
        let mut wsum = vec![0.0; padded];
        let mut buf = vec![Complex64::default(); N_FFT];
        let mut scratch = vec![Complex64::default(); self.inverse.get_inplace_scratch_len()];
        let scale = 1.0 / N_FFT as f64;
        for t in 0..frames {
            for k in 0..N_BINS {
                buf[k] = spec[[k, t]];
            }
            // Hermitian completion; DC and Nyquist imaginary parts drop out
            buf[0].im = 0.0;
            buf[N_FFT / 2].im = 0.0;
            for k in 1..N_FFT / 2 {
                buf[N_FFT - k] = buf[k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = t * HOP;
            for n in 0..N_FFT {
                let w = self.window[n];
                acc[start + n] += buf[n].re * scale * w;
                wsum[start + n] += w * w;
            }
        }
        let half = (N_FFT / 2) as isize;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        for m in 0..padded {
            let i = reflect(m as isize - half, len);
            out[i] += acc[m];
            norm[i] += wsum[m];
        }
        for (o, w) in out.iter_mut().zip(&norm) {
            if *w > 1e-11 {
                *o /= w;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;

    #[test]
    fn reflect_matches_numpy() {
        // numpy.pad([0,1,2,3], 3, 'reflect') -> [3,2,1,0,1,2,3,2,1,0]
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn frame_counts() {
        assert_eq!(frame_count(219_904), 860);
        assert_eq!(frame_count(1), 1);
        assert_eq!(frame_count(255), 1);
        assert_eq!(frame_count(256), 2);
    }

    #[test]
    fn zero_audio_has_zero_magnitude() {
        let stft = Stft::new();
        let clip = AudioClip::new(vec![0.0; 5000], SAMPLE_RATE).unwrap();
        let m = stft.magnitude(&clip).unwrap();
        assert_eq!(m.mag.dim(), (N_BINS, frame_count(5000)));
        assert!(m.mag.iter().all(|&v| v == 0.0));
        assert!(stft.analyze(&[]).is_err());
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let stft = Stft::new();
        let sr = f64::from(SAMPLE_RATE);
        let samples: Vec<f64> = (0..44_100).map(|n| (2.0 * PI * 440.0 * n as f64 / sr).sin()).collect();
        let m = stft.magnitude(&AudioClip::new(samples.clone(), SAMPLE_RATE).unwrap()).unwrap();
        let expected = (440.0 * N_FFT as f64 / sr).round() as usize;
        assert_eq!(expected, 20);
        for t in 8..m.frames() - 8 {
            let col = m.mag.column(t);
            let arg = (0..N_BINS).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert_eq!(arg, expected, "frame {t}");
        }
        // one interior frame against a direct DFT
        let t = 40;
        let direct = |k: usize| {
            let mut acc = Complex64::default();
            for n in 0..N_FFT {
                let s = samples[t * HOP + n - N_FFT / 2] * stft.window()[n];
                acc += Complex64::from_polar(s, -2.0 * PI * (k * n) as f64 / N_FFT as f64);
            }
            acc.norm()
        };
        for k in [0, 19, 20, 21, 100] {
            assert!((direct(k) - m.mag[[k, t]]).abs() < 1e-8 * direct(20));
        }
    }

    #[test]
    fn perfect_reconstruction() {
        let stft = Stft::new();
        let len = 40 * HOP;
        let x: Vec<f64> = (0..len)
            .map(|n| ((n * 7919) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        let spec = stft.analyze(&x).unwrap();
        let y = stft.synthesize(&spec).unwrap();
        assert_eq!(y.len(), len);
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn frame_energy_bound() {
        let stft = Stft::new();
        let x: Vec<f64> = (0..10_000).map(|n| ((n as f64) * 0.37).sin() * 0.5).collect();
        let spec = stft.analyze(&x).unwrap();
        for t in 5..spec.ncols() - 5 {
            let energy: f64 = (0..N_FFT).map(|n| x[t * HOP + n - N_FFT / 2].powi(2)).sum();
            let mag2: f64 = spec.column(t).iter().map(|c| c.norm_sqr()).sum();
            assert!(mag2 <= N_FFT as f64 * energy);
        }
    }
}
