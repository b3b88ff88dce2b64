use ndarray::Array2;

use super::ScoreTrack;
use crate::error::{Error, Result};

pub const NUM_PITCHES: usize = 128;

/// Binary note-activity matrix `[128, T]` on the STFT frame grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Pianoroll {
    active: Array2<u8>,
    hop_s: f64,
}

impl Pianoroll {
    pub fn new(active: Array2<u8>, hop_s: f64) -> Result<Self> {
        if active.nrows() != NUM_PITCHES {
            return Err(Error::shape(format!(
                "pianoroll needs {NUM_PITCHES} rows, got {}",
                active.nrows()
            )));
        }
        if active.iter().any(|&v| v > 1) {
            return Err(Error::invalid("pianoroll entries must be 0 or 1"));
        }
        Ok(Self { active, hop_s })
    }

    pub fn active(&self) -> &Array2<u8> {
        &self.active
    }

    pub fn frames(&self) -> usize {
        self.active.ncols()
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_s
    }

    /// Pitches sounding at frame `t`.
    pub fn pitches_at(&self, t: usize) -> Vec<u8> {
        (0..NUM_PITCHES)
            .filter(|&p| self.active[[p, t]] == 1)
            .map(|p| p as u8)
            .collect()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.active.iter().map(|&v| f32::from(v)).collect()
    }
}

/// Ternary onset (+1) / offset (-1) marks derived from a [`Pianoroll`].
#[derive(Clone, Debug, PartialEq)]
pub struct OnsetOffsetRoll {
    marks: Array2<i8>,
}

impl OnsetOffsetRoll {
    pub fn marks(&self) -> &Array2<i8> {
        &self.marks
    }

    pub fn frames(&self) -> usize {
        self.marks.ncols()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.marks.iter().map(|&v| f32::from(v)).collect()
    }

    /// Rebuilds activity: on from a +1, off from a -1, except that a -1 on the
    /// final frame closes a run that reaches the end.
    pub fn to_activity(&self) -> Array2<u8> {
        let frames = self.frames();
        let mut out = Array2::zeros((NUM_PITCHES, frames));
        for p in 0..NUM_PITCHES {
            let mut on = false;
            for t in 0..frames {
                match self.marks[[p, t]] {
                    1 => on = true,
                    -1 if t + 1 == frames => {}
                    -1 => on = false,
                    _ => {}
                }
                out[[p, t]] = u8::from(on);
            }
        }
        out
    }
}

/// Frame `t` (centred at `t * hop_s`) is active for pitch `p` iff some note of
/// that pitch has `onset_s <= t * hop_s < offset_s`.
pub fn notes_to_pianoroll(track: &ScoreTrack, hop_s: f64, frames: usize) -> Result<Pianoroll> {
    if !(hop_s > 0.0) || frames == 0 {
        return Err(Error::invalid(format!(
            "pianoroll needs hop > 0 and at least one frame (hop {hop_s}, frames {frames})"
        )));
    }
    let mut active = Array2::zeros((NUM_PITCHES, frames));
    // first frame whose centre is >= s
    let first_at_or_after = |s: f64| -> usize {
        let mut t = (s / hop_s).floor().max(0.0) as usize;
        while (t as f64) * hop_s < s {
            t += 1;
        }
        while t > 0 && ((t - 1) as f64) * hop_s >= s {
            t -= 1;
        }
        t
    };
    for note in track.notes() {
        let lo = first_at_or_after(note.onset_s).min(frames);
        let hi = first_at_or_after(note.offset_s).min(frames);
        for t in lo..hi {
            active[[note.pitch as usize, t]] = 1;
        }
    }
    Pianoroll::new(active, hop_s)
}

/// Roll for `frames` frames whose centres sit at sample `start + t * hop` of
/// a clip sampled at `sample_rate`, with times measured from the clip start.
/// Each centre is one division of an exact integer, so rolls of overlapping
/// windows of the same clip agree wherever their frames coincide.
pub fn pianoroll_at_samples(
    track: &ScoreTrack,
    start: usize,
    hop: usize,
    sample_rate: u32,
    frames: usize,
) -> Result<Pianoroll> {
    if hop == 0 || sample_rate == 0 || frames == 0 {
        return Err(Error::invalid("pianoroll needs hop, sample rate and frame count > 0"));
    }
    let sr = f64::from(sample_rate);
    let centres: Vec<f64> = (0..frames).map(|t| (start + t * hop) as f64 / sr).collect();
    let mut active = Array2::zeros((NUM_PITCHES, frames));
    for note in track.notes() {
        let lo = centres.partition_point(|&c| c < note.onset_s);
        let hi = centres.partition_point(|&c| c < note.offset_s);
        for t in lo..hi {
            active[[note.pitch as usize, t]] = 1;
        }
    }
    Pianoroll::new(active, hop as f64 / sr)
}

/// Each maximal run `[a, b]` becomes +1 at `a` and -1 at `b + 1`; a run that
/// reaches the last frame puts its -1 on that frame unless its +1 is already
/// there.
pub fn pianoroll_to_onoff(roll: &Pianoroll) -> OnsetOffsetRoll {
    let frames = roll.frames();
    let active = roll.active();
    let mut marks = Array2::zeros((NUM_PITCHES, frames));
    for p in 0..NUM_PITCHES {
        let mut t = 0;
        while t < frames {
            if active[[p, t]] == 0 {
                t += 1;
                continue;
            }
            let start = t;
            while t < frames && active[[p, t]] == 1 {
                t += 1;
            }
            marks[[p, start]] = 1;
            let off = t.min(frames - 1);
            if off != start {
                marks[[p, off]] = -1;
            }
        }
    }
    OnsetOffsetRoll { marks }
}
