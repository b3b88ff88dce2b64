//! Symbolic scores: note events, Standard MIDI Files, and pianoroll derivation.

mod midi;
mod roll;

pub use midi::{parse_midi, read_vlq, write_midi, DEFAULT_TEMPO_US};
pub use roll::{notes_to_pianoroll, pianoroll_at_samples, pianoroll_to_onoff, OnsetOffsetRoll, Pianoroll, NUM_PITCHES};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset_s: f64,
    pub offset_s: f64,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset_s: f64, offset_s: f64) -> Result<Self> {
        if pitch > 127 {
            return Err(Error::invalid(format!("pitch {pitch} outside 0..=127")));
        }
        if !(onset_s >= 0.0 && offset_s > onset_s && offset_s.is_finite()) {
            return Err(Error::invalid(format!(
                "note {pitch}: need 0 <= onset < offset, got {onset_s}..{offset_s}"
            )));
        }
        Ok(Self {
            pitch,
            onset_s,
            offset_s,
        })
    }

    /// Equal-tempered fundamental, A4 = 440 Hz.
    pub fn frequency(&self) -> f64 {
        pitch_to_hz(self.pitch)
    }
}

pub fn pitch_to_hz(pitch: u8) -> f64 {
    440.0 * 2f64.powf((pitch as f64 - 69.0) / 12.0)
}

/// Notes of one monophonic or polyphonic part, sorted by onset.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ScoreTrack {
    notes: Vec<NoteEvent>,
    duration_s: f64,
}

impl ScoreTrack {
    /// Sorts the notes and extends `duration_s` to cover the last offset.
    pub fn new(mut notes: Vec<NoteEvent>, duration_s: f64) -> Self {
        notes.sort_by(|a, b| {
            a.onset_s
                .total_cmp(&b.onset_s)
                .then(a.pitch.cmp(&b.pitch))
                .then(a.offset_s.total_cmp(&b.offset_s))
        });
        let last = notes.iter().map(|n| n.offset_s).fold(0.0, f64::max);
        Self {
            notes,
            duration_s: duration_s.max(last),
        }
    }

    pub fn notes(&self) -> &[NoteEvent] {
        &self.notes
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Parses the plain-text note list: one `pitch onset_s offset_s` per line.
    /// Blank lines and `#` comments are ignored.
    pub fn from_note_list(text: &str) -> Result<Self> {
        let mut notes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Data(format!("note list line {}: expected `pitch onset offset`", lineno + 1));
            if fields.len() != 3 {
                return Err(bad());
            }
            let pitch: u8 = fields[0].parse().map_err(|_| bad())?;
            let onset: f64 = fields[1].parse().map_err(|_| bad())?;
            let offset: f64 = fields[2].parse().map_err(|_| bad())?;
            notes.push(NoteEvent::new(pitch, onset, offset)?);
        }
        Ok(Self::new(notes, 0.0))
    }

    pub fn to_note_list(&self) -> String {
        self.notes
            .iter()
            .map(|n| format!("{} {} {}\n", n.pitch, n.onset_s, n.offset_s))
            .collect()
    }

    /// Notes intersecting `[start_s, start_s + len_s)`, re-timed to start at zero
    /// and clipped to the window.
    pub fn window(&self, start_s: f64, len_s: f64) -> Self {
        let end = start_s + len_s;
        let notes = self
            .notes
            .iter()
            .filter(|n| n.offset_s > start_s && n.onset_s < end)
            .filter_map(|n| {
                let on = (n.onset_s - start_s).max(0.0);
                let off = (n.offset_s - start_s).min(len_s);
                NoteEvent::new(n.pitch, on, off).ok()
            })
            .collect();
        Self::new(notes, len_s)
    }
}
