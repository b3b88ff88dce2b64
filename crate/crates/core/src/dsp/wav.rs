//! 16-bit PCM RIFF/WAVE reading and writing.

use super::AudioClip;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xfffe;

fn err(msg: impl Into<String>) -> Error {
    Error::Wav(msg.into())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads mono or stereo 16-bit PCM; stereo is averaged down to mono.
pub fn wav_read(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(err("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u32)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        if bytes.len() - body_start < size {
            return Err(err(format!(
                "chunk {:?} truncated",
                String::from_utf8_lossy(id)
            )));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(err("fmt chunk shorter than 16 bytes"));
                }
                let mut format = u16_at(body, 0);
                if format == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(err("extensible fmt chunk too short"));
                    }
                    format = u16_at(body, 24);
                }
                if format != FORMAT_PCM {
                    return Err(err(format!("unsupported encoding {format:#06x} (PCM only)")));
                }
                let channels = u16_at(body, 2);
                let sample_rate = u32_at(body, 4);
                let bits = u16_at(body, 14);
                if bits != 16 {
                    return Err(err(format!("unsupported bit depth {bits} (16 only)")));
                }
                if !(1..=2).contains(&channels) {
                    return Err(err(format!("unsupported channel count {channels}")));
                }
                fmt = Some((channels, sample_rate));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start + size + (size & 1);
    }
    let (channels, sample_rate) = fmt.ok_or_else(|| err("missing fmt chunk"))?;
    let data = data.ok_or_else(|| err("missing data chunk"))?;
    let frame_bytes = 2 * channels as usize;
    let samples = data
        .chunks_exact(frame_bytes)
        .map(|frame| {
            let sum: f64 = frame
                .chunks_exact(2)
                .map(|s| f64::from(i16::from_le_bytes([s[0], s[1]])) / 32768.0)
                .sum();
            sum / f64::from(channels)
        })
        .collect();
    AudioClip::new(samples, sample_rate)
}

/// Canonical 44-byte-header mono 16-bit PCM. Samples are clamped to
/// `[-1, 1 - 1/32768]` before quantization.
pub fn wav_write(clip: &AudioClip) -> Vec<u8> {
    let data_len = (clip.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    let max = 1.0 - 1.0 / 32768.0;
    for &s in &clip.samples {
        let q = (s.clamp(-1.0, max) * 32768.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}
