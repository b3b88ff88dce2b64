//! Standard MIDI File reader/writer for the subset the pipeline needs: formats
//! 0 and 1, PPQN division, note on/off and set-tempo events.

use std::collections::{HashMap, VecDeque};

use log::warn;

use super::{NoteEvent, ScoreTrack};
use crate::error::{Error, Result};

/// 120 BPM, in microseconds per quarter note.
pub const DEFAULT_TEMPO_US: u32 = 500_000;

fn err(msg: impl Into<String>) -> Error {
    Error::Midi(msg.into())
}

/// Decodes a variable-length quantity, returning the value and bytes consumed.
pub fn read_vlq(bytes: &[u8]) -> Result<(u32, usize)> {
    let mut value: u32 = 0;
    for (i, &b) in bytes.iter().enumerate().take(4) {
        value = (value << 7) | u32::from(b & 0x7f);
        if b & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    if bytes.len() < 4 {
        Err(err("truncated variable-length quantity"))
    } else {
        Err(err("variable-length quantity longer than 4 bytes"))
    }
}

fn write_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7f) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(buf[i] | if i > 0 { 0x80 } else { 0 });
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(err(format!("truncated {what}")));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let (v, n) = read_vlq(&self.data[self.pos..])?;
        self.pos += n;
        Ok(v)
    }

    fn done(&self) -> bool {
        self.pos >= self.data.len()
    }
}

#[derive(Debug)]
enum Event {
    NoteOn { channel: u8, pitch: u8 },
    NoteOff { channel: u8, pitch: u8 },
    Tempo(u32),
}

struct RawTrack {
    events: Vec<(u64, Event)>,
    end_tick: u64,
}

fn parse_track(data: &[u8]) -> Result<RawTrack> {
    let mut c = Cursor { data, pos: 0 };
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut events = Vec::new();
    while !c.done() {
        tick += u64::from(c.vlq()?);
        let first = c.u8("event")?;
        let (status, first_data) = if first & 0x80 != 0 {
            (first, None)
        } else {
            let s = running.ok_or_else(|| err("data byte without running status"))?;
            (s, Some(first))
        };
        match status {
            0xff => {
                running = None;
                let kind = c.u8("meta type")?;
                let len = c.vlq()? as usize;
                let body = c.take(len, "meta event")?;
                match kind {
                    0x51 => {
                        if len != 3 {
                            return Err(err("set-tempo event must carry 3 bytes"));
                        }
                        let us = u32::from_be_bytes([0, body[0], body[1], body[2]]);
                        if us == 0 {
                            return Err(err("zero tempo"));
                        }
                        events.push((tick, Event::Tempo(us)));
                    }
                    0x2f => {
                        return Ok(RawTrack {
                            events,
                            end_tick: tick,
                        })
                    }
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = c.vlq()? as usize;
                c.take(len, "sysex event")?;
            }
            0x80..=0xef => {
                running = Some(status);
                let channel = status & 0x0f;
                let nbytes = match status & 0xf0 {
                    0xc0 | 0xd0 => 1,
                    _ => 2,
                };
                let mut data = [0u8; 2];
                let mut idx = 0;
                if let Some(d) = first_data {
                    data[0] = d;
                    idx = 1;
                }
                while idx < nbytes {
                    data[idx] = c.u8("channel message")?;
                    idx += 1;
                }
                if data[..nbytes].iter().any(|b| b & 0x80 != 0) {
                    return Err(err("status byte inside channel message data"));
                }
                let pitch = data[0];
                match status & 0xf0 {
                    0x90 if data[1] > 0 => events.push((tick, Event::NoteOn { channel, pitch })),
                    0x90 | 0x80 => events.push((tick, Event::NoteOff { channel, pitch })),
                    _ => {}
                }
            }
            other => return Err(err(format!("unsupported status byte {other:#04x}"))),
        }
    }
    warn!("track ended without an end-of-track event");
    Ok(RawTrack {
        events,
        end_tick: tick,
    })
}

/// Piecewise-constant tempo map converting ticks to seconds.
struct TempoMap {
    division: u64,
    /// (start tick, tempo, microsecond-ticks elapsed before start)
    segments: Vec<(u64, u64, u128)>,
}

impl TempoMap {
    fn new(division: u16, mut changes: Vec<(u64, u32)>) -> Self {
        changes.sort_by_key(|&(t, _)| t);
        let mut segments: Vec<(u64, u64, u128)> = vec![(0, u64::from(DEFAULT_TEMPO_US), 0)];
        for (tick, tempo) in changes {
            let &(start, cur, acc) = segments.last().unwrap();
            let acc = acc + u128::from(tick - start) * u128::from(cur);
            if tick == start {
                segments.pop();
            }
            segments.push((tick, u64::from(tempo), acc));
        }
        Self {
            division: u64::from(division),
            segments,
        }
    }

    fn seconds(&self, tick: u64) -> f64 {
        let i = self.segments.partition_point(|&(start, _, _)| start <= tick) - 1;
        let (start, tempo, acc) = self.segments[i];
        let us_ticks = acc + u128::from(tick - start) * u128::from(tempo);
        us_ticks as f64 / (self.division as f64 * 1e6)
    }
}

/// Parses a format 0/1 Standard MIDI File into a single merged track.
pub fn parse_midi(bytes: &[u8]) -> Result<ScoreTrack> {
    let mut c = Cursor { data: bytes, pos: 0 };
    if c.take(4, "header").map_err(|_| err("missing MThd header"))? != b"MThd" {
        return Err(err("missing MThd header"));
    }
    let header_len = c.u32("header length")? as usize;
    if header_len < 6 {
        return Err(err(format!("header length {header_len} < 6")));
    }
    let header = c.take(header_len, "header")?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let ntracks = u16::from_be_bytes([header[2], header[3]]);
    let division = u16::from_be_bytes([header[4], header[5]]);
    match format {
        0 | 1 => {}
        2 => return Err(err("format 2 files are not supported")),
        f => return Err(err(format!("unknown format {f}"))),
    }
    if division & 0x8000 != 0 {
        return Err(err("SMPTE time division is not supported"));
    }
    if division == 0 {
        return Err(err("zero ticks per quarter note"));
    }

    let mut tracks = Vec::new();
    while tracks.len() < ntracks as usize {
        let id = c.take(4, "chunk id")?;
        let len = c.u32("chunk length")? as usize;
        let body = c.take(len, "track chunk")?;
        if id == b"MTrk" {
            tracks.push(parse_track(body)?);
        }
    }

    let tempo_changes = tracks
        .iter()
        .flat_map(|t| t.events.iter())
        .filter_map(|(tick, e)| match e {
            Event::Tempo(us) => Some((*tick, *us)),
            _ => None,
        })
        .collect();
    let tempo = TempoMap::new(division, tempo_changes);

    let mut notes = Vec::new();
    let mut end_s: f64 = 0.0;
    for track in &tracks {
        let mut open: HashMap<(u8, u8), VecDeque<u64>> = HashMap::new();
        let mut push = |pitch: u8, on: u64, off: u64| {
            let (onset, offset) = (tempo.seconds(on), tempo.seconds(off));
            match NoteEvent::new(pitch, onset, offset) {
                Ok(n) => notes.push(n),
                Err(_) => warn!("dropping zero-length note {pitch} at tick {on}"),
            }
        };
        for (tick, event) in &track.events {
            match *event {
                Event::NoteOn { channel, pitch } => {
                    open.entry((channel, pitch)).or_default().push_back(*tick);
                }
                Event::NoteOff { channel, pitch } => {
                    if let Some(on) = open.get_mut(&(channel, pitch)).and_then(VecDeque::pop_front) {
                        push(pitch, on, *tick);
                    }
                }
                Event::Tempo(_) => {}
            }
        }
        let mut dangling: Vec<_> = open
            .into_iter()
            .flat_map(|((_, pitch), ons)| ons.into_iter().map(move |on| (on, pitch)))
            .collect();
        dangling.sort_unstable();
        for (on, pitch) in dangling {
            warn!("note {pitch} at tick {on} never released; closing at end of track");
            push(pitch, on, track.end_tick);
        }
        end_s = end_s.max(tempo.seconds(track.end_tick));
    }
    Ok(ScoreTrack::new(notes, end_s))
}

/// Writes a format-0 file at 120 BPM. Times are rounded to the nearest tick;
/// notes shorter than one tick are lengthened to one tick.
pub fn write_midi(track: &ScoreTrack, division: u16) -> Result<Vec<u8>> {
    if !(24..0x8000).contains(&division) {
        return Err(Error::invalid(format!("division {division} outside 24..32768")));
    }
    let ticks_per_s = f64::from(division) * 1e6 / f64::from(DEFAULT_TEMPO_US);
    let to_tick = |s: f64| (s * ticks_per_s).round() as u64;

    // (tick, 0 = off / 1 = on, pitch)
    let mut events: Vec<(u64, u8, u8)> = Vec::with_capacity(track.notes().len() * 2);
    for n in track.notes() {
        let on = to_tick(n.onset_s);
        let off = to_tick(n.offset_s).max(on + 1);
        events.push((on, 1, n.pitch));
        events.push((off, 0, n.pitch));
    }
    events.sort_unstable();
    let last = events.last().map_or(0, |e| e.0);
    let end_tick = last.max(to_tick(track.duration_s()));

    let mut body = Vec::new();
    write_vlq(&mut body, 0);
    body.extend_from_slice(&[0xff, 0x51, 0x03]);
    body.extend_from_slice(&DEFAULT_TEMPO_US.to_be_bytes()[1..]);
    let mut now = 0;
    for (tick, kind, pitch) in events {
        write_vlq(&mut body, (tick - now) as u32);
        now = tick;
        if kind == 1 {
            body.extend_from_slice(&[0x90, pitch, 64]);
        } else {
            body.extend_from_slice(&[0x80, pitch, 0]);
        }
    }
    write_vlq(&mut body, (end_tick - now) as u32);
    body.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(body.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&division.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smf(format: u16, division: u16, tracks: &[Vec<u8>]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&format.to_be_bytes());
        out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&division.to_be_bytes());
        for t in tracks {
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(t.len() as u32).to_be_bytes());
            out.extend_from_slice(t);
        }
        out
    }

    #[test]
    fn vlq_values() {
        assert_eq!(read_vlq(&[0x81, 0x00]).unwrap(), (128, 2));
        assert_eq!(read_vlq(&[0x00]).unwrap(), (0, 1));
        assert_eq!(read_vlq(&[0xff, 0xff, 0xff, 0x7f]).unwrap(), (0x0fff_ffff, 4));
        assert!(read_vlq(&[0x81]).is_err());
        assert!(read_vlq(&[0x81, 0x81, 0x81, 0x81, 0x01]).is_err());
        for v in [0u32, 1, 127, 128, 300, 16383, 16384, 0x0fff_ffff] {
            let mut buf = Vec::new();
            write_vlq(&mut buf, v);
            assert_eq!(read_vlq(&buf).unwrap(), (v, buf.len()));
        }
    }

    #[test]
    fn hand_built_format0() {
        let track = vec![
            0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, // tempo 500000
            0x00, 0x90, 60, 100, // C4 on
            0x83, 0x60, 0x80, 60, 0, // 480 ticks later, off
            0x00, 0xff, 0x2f, 0x00,
        ];
        let t = parse_midi(&smf(0, 480, &[track])).unwrap();
        assert_eq!(t.notes(), &[NoteEvent::new(60, 0.0, 0.5).unwrap()]);
        assert_eq!(t.duration_s(), 0.5);
    }

    #[test]
    fn running_status_and_velocity_zero_off() {
        let track = vec![
            0x00, 0x90, 60, 100, // on
            0x00, 64, 90, // running status: E4 on
            0x83, 0x60, 60, 0, // C4 velocity-0 off
            0x83, 0x60, 64, 0, // E4 off
            0x00, 0xff, 0x2f, 0x00,
        ];
        let t = parse_midi(&smf(0, 480, &[track])).unwrap();
        assert_eq!(t.notes().len(), 2);
        assert_eq!(t.notes()[0], NoteEvent::new(60, 0.0, 0.5).unwrap());
        assert_eq!(t.notes()[1], NoteEvent::new(64, 0.0, 1.0).unwrap());
    }

    #[test]
    fn format1_tempo_map_applies_to_all_tracks() {
        // conductor track: 120 BPM, then 60 BPM from tick 480
        let conductor = vec![
            0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, 0x83, 0x60, 0xff, 0x51, 0x03, 0x0f, 0x42, 0x40, 0x00, 0xff,
            0x2f, 0x00,
        ];
        let notes = vec![
            0x00, 0x91, 62, 80, 0x87, 0x40, 0x81, 62, 0, // 960 ticks
            0x00, 0xff, 0x2f, 0x00,
        ];
        let t = parse_midi(&smf(1, 480, &[conductor, notes])).unwrap();
        // first 480 ticks at 0.5 s, next 480 at 1 s
        assert_eq!(t.notes(), &[NoteEvent::new(62, 0.0, 1.5).unwrap()]);
    }

    #[test]
    fn overlapping_same_pitch_is_fifo() {
        let track = vec![
            0x00, 0x90, 60, 100, 0x60, 0x90, 60, 100, // second on at 96
            0x60, 0x80, 60, 0, // first off at 192 closes the first on
            0x60, 0x80, 60, 0, // 288
            0x00, 0xff, 0x2f, 0x00,
        ];
        let t = parse_midi(&smf(0, 96, &[track])).unwrap();
        let got: Vec<(f64, f64)> = t.notes().iter().map(|n| (n.onset_s, n.offset_s)).collect();
        assert_eq!(got, vec![(0.0, 1.0), (0.5, 1.5)]);
    }

    #[test]
    fn dangling_note_closes_at_track_end() {
        let track = vec![0x00, 0x90, 60, 100, 0x83, 0x60, 0xff, 0x2f, 0x00];
        let t = parse_midi(&smf(0, 480, &[track])).unwrap();
        assert_eq!(t.notes(), &[NoteEvent::new(60, 0.0, 0.5).unwrap()]);
    }

    #[test]
    fn header_errors() {
        assert!(parse_midi(b"RIFF").is_err());
        assert!(parse_midi(&smf(2, 480, &[])).is_err());
        assert!(parse_midi(&smf(0, 0xe728, &[])).is_err());
        let mut truncated = smf(0, 480, &[vec![0x00, 0xff, 0x2f, 0x00]]);
        truncated.pop();
        assert!(parse_midi(&truncated).is_err());
        let mut short_header = smf(0, 480, &[]);
        short_header.truncate(10);
        assert!(parse_midi(&short_header).is_err());
    }

    #[test]
    fn empty_track_round_trip() {
        let bytes = write_midi(&ScoreTrack::default(), 480).unwrap();
        let t = parse_midi(&bytes).unwrap();
        assert!(t.is_empty());
        assert!(write_midi(&ScoreTrack::default(), 12).is_err());
    }

    #[test]
    fn simultaneous_notes_round_trip() {
        let track = ScoreTrack::new(
            vec![
                NoteEvent::new(60, 0.25, 1.0).unwrap(),
                NoteEvent::new(67, 0.25, 1.0).unwrap(),
            ],
            1.0,
        );
        let back = parse_midi(&write_midi(&track, 480).unwrap()).unwrap();
        assert_eq!(back, track);
    }
}
