use std::f64::consts::TAU;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AudioClip, MagnitudeSpectrogram, Stft};
use crate::error::{Error, Result};

/// Classic Griffin-Lim phase retrieval from a seeded uniform random phase.
pub fn griffin_lim(spec: &MagnitudeSpectrogram, iters: usize, seed: u64) -> Result<AudioClip> {
    griffin_lim_traced(spec, iters, seed).map(|(clip, _)| clip)
}

/// As [`griffin_lim`], also returning `||S - |STFT(x_k)|||_F` after each of the
/// `iters` resynthesis steps.
pub fn griffin_lim_traced(
    spec: &MagnitudeSpectrogram,
    iters: usize,
    seed: u64,
) -> Result<(AudioClip, Vec<f64>)> {
    if spec.frames() < 2 {
        return Err(Error::shape("griffin_lim needs at least two frames"));
    }
    let stft = Stft::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mag = &spec.mag;
    let mut phase: Array2<f64> = Array2::from_shape_simple_fn(mag.dim(), || rng.random_range(0.0..TAU));
    let mut trace = Vec::with_capacity(iters);

    let combine = |phase: &Array2<f64>| -> Array2<Complex64> {
        let mut out = Array2::zeros(mag.dim());
        Zip::from(&mut out)
            .and(mag)
            .and(phase)
            .for_each(|o, &m, &p| *o = Complex64::from_polar(m, p));
        out
    };

    for _ in 0..iters {
        let x = stft.synthesize(&combine(&phase))?;
        let rebuilt = stft.analyze(&x)?;
        let mut dist = 0.0;
        Zip::from(&mut phase)
            .and(&rebuilt)
            .and(mag)
            .for_each(|p, c, &m| {
                let d = m - c.norm();
                dist += d * d;
                *p = c.arg();
            });
        trace.push(dist.sqrt());
    }
    let samples = stft.synthesize(&combine(&phase))?;
    Ok((AudioClip::new(samples, spec.sample_rate)?, trace))
}
