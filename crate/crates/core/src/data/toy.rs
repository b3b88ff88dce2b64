use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::score::{NoteEvent, ScoreTrack};

const ATTACK_S: f64 = 0.030;
const DECAY_S: f64 = 0.070;
const SUSTAIN: f64 = 0.7;
const RELEASE_S: f64 = 0.080;
const PEAK: f64 = 0.9;

/// ADSR level `t` seconds after onset for a note held `held` seconds.
fn envelope(t: f64, held: f64) -> f64 {
    let gate = |t: f64| {
        if t < ATTACK_S {
            t / ATTACK_S
        } else if t < ATTACK_S + DECAY_S {
            1.0 - (1.0 - SUSTAIN) * (t - ATTACK_S) / DECAY_S
        } else {
            SUSTAIN
        }
    };
    if t < held {
        gate(t)
    } else {
        (gate(held) * (1.0 - (t - held) / RELEASE_S)).max(0.0)
    }
}

/// Additive toy instrument: `n_harmonics` partials at `1/h` amplitude with
/// seeded random phases, an ADSR envelope whose release follows the offset,
/// and the sum peak-normalized to 0.9. The clip spans `track.duration_s()`.
pub fn toy_render(track: &ScoreTrack, n_harmonics: usize, seed: u64) -> Result<AudioClip> {
    if let Some(n) = track.notes().iter().find(|n| !(21..=108).contains(&n.pitch)) {
        return Err(Error::invalid(format!(
            "toy instrument covers pitches 21..=108, got {}",
            n.pitch
        )));
    }
    let sr = f64::from(SAMPLE_RATE);
    let len = (track.duration_s() * sr).round() as usize;
    let mut out = vec![0.0; len];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nyquist = sr / 2.0;
    for note in track.notes() {
        let f0 = note.frequency();
        let phases: Vec<f64> = (0..n_harmonics).map(|_| rng.random_range(0.0..TAU)).collect();
        let held = note.offset_s - note.onset_s;
        let first = (note.onset_s * sr).ceil() as usize;
        let last = (((note.offset_s + RELEASE_S) * sr).ceil() as usize).min(len);
        for (i, s) in out.iter_mut().enumerate().take(last).skip(first) {
            let t = i as f64 / sr - note.onset_s;
            let env = envelope(t, held);
            if env == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for (h, phase) in phases.iter().enumerate() {
                let k = (h + 1) as f64;
                if k * f0 >= nyquist {
                    break;
                }
                acc += (TAU * k * f0 * t + phase).sin() / k;
            }
            *s += env * acc;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let g = PEAK / peak;
        out.iter_mut().for_each(|s| *s *= g);
    }
    AudioClip::new(out, SAMPLE_RATE)
}

/// Parameters of the random monophonic melodies used as toy scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyMelody {
    pub lowest: u8,
    pub highest: u8,
    /// Note lengths are drawn from multiples of `grid_s` in this range.
    pub note_s: (f64, f64),
    pub gap_s: (f64, f64),
    pub grid_s: f64,
}

impl Default for ToyMelody {
    fn default() -> Self {
        Self {
            lowest: 55,
            highest: 79,
            note_s: (0.2, 0.8),
            gap_s: (0.1, 0.3),
            grid_s: 0.05,
        }
    }
}

/// A random monophonic melody filling `duration_s`. Times are multiples of
/// 50 ms, which are whole ticks at 480 ticks per quarter and 120 BPM.
pub fn toy_melody(duration_s: f64, spec: &ToyMelody, seed: u64) -> Result<ScoreTrack> {
    if spec.lowest > spec.highest || spec.note_s.0 <= 0.0 || spec.note_s.0 > spec.note_s.1 {
        return Err(Error::invalid("invalid toy melody parameters"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = |(lo, hi): (f64, f64), rng: &mut ChaCha8Rng| -> u32 {
        let lo = (lo / spec.grid_s).round() as u32;
        let hi = (hi / spec.grid_s).round() as u32;
        rng.random_range(lo..=hi)
    };
    let mut notes = Vec::new();
    let mut at = steps(spec.gap_s, &mut rng);
    loop {
        let len = steps(spec.note_s, &mut rng);
        let on = f64::from(at) * spec.grid_s;
        let off = f64::from(at + len) * spec.grid_s;
        if off > duration_s - spec.gap_s.0 {
            break;
        }
        let pitch = rng.random_range(spec.lowest..=spec.highest);
        notes.push(NoteEvent::new(pitch, on, off)?);
        at += len + steps(spec.gap_s, &mut rng).max(1);
    }
    Ok(ScoreTrack::new(notes, duration_s))
}
