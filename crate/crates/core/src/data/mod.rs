//! Aligned (pianoroll, log-spectrogram) training pairs, dataset bookkeeping
//! and a small additive-synthesis instrument for desk-scale experiments.

mod manifest;
mod toy;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use manifest::{ClipEntry, DatasetManifest, Split};
pub use toy::{toy_melody, toy_render, ToyMelody};

use crate::container::Container;
use crate::dsp::{
    log_compress, AudioClip, LogSpectrogram, Stft, CHUNK_FRAMES, CHUNK_SAMPLES, HOP, LOG_EPS,
    SAMPLE_RATE,
};
use crate::error::{Error, Result};
use crate::score::{pianoroll_at_samples, pianoroll_to_onoff, OnsetOffsetRoll, Pianoroll, ScoreTrack};

/// Chunk length in seconds (`CHUNK_SAMPLES / SAMPLE_RATE`).
pub const CHUNK_SECONDS: f64 = CHUNK_SAMPLES as f64 / SAMPLE_RATE as f64;

/// One training example on a shared 860-frame grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkPair {
    pub roll: Pianoroll,
    pub onoff: OnsetOffsetRoll,
    pub target: LogSpectrogram,
    pub source_id: String,
    pub start_s: f64,
}

/// Hop between chunk starts in samples for a given overlap.
pub fn chunk_stride(overlap_s: f64) -> Result<usize> {
    if !(0.0..CHUNK_SECONDS).contains(&overlap_s) {
        return Err(Error::invalid(format!(
            "overlap {overlap_s} s must lie in [0, {CHUNK_SECONDS:.4}) s"
        )));
    }
    let stride = CHUNK_SAMPLES - (overlap_s * f64::from(SAMPLE_RATE)).round() as usize;
    Ok(stride.max(1))
}

/// Number of whole chunks that fit in `len` samples.
pub fn chunk_count(len: usize, overlap_s: f64) -> Result<usize> {
    let stride = chunk_stride(overlap_s)?;
    Ok(if len < CHUNK_SAMPLES {
        0
    } else {
        (len - CHUNK_SAMPLES) / stride + 1
    })
}

/// Cuts a clip and its score into overlapping fixed-length chunks.
pub fn chunk_pairs(
    audio: &AudioClip,
    track: &ScoreTrack,
    overlap_s: f64,
    source_id: &str,
) -> Result<Vec<ChunkPair>> {
    if audio.sample_rate != SAMPLE_RATE {
        return Err(Error::Data(format!(
            "{source_id}: audio is sampled at {} Hz, expected {SAMPLE_RATE}",
            audio.sample_rate
        )));
    }
    let stride = chunk_stride(overlap_s)?;
    let count = chunk_count(audio.len(), overlap_s)?;
    let stft = Stft::new();
    let sr = f64::from(SAMPLE_RATE);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * stride;
        let start_s = start as f64 / sr;
        let piece = AudioClip::new(audio.samples[start..start + CHUNK_SAMPLES].to_vec(), SAMPLE_RATE)?;
        let target = log_compress(&stft.magnitude(&piece)?, LOG_EPS)?;
        let roll = pianoroll_at_samples(track, start, HOP, SAMPLE_RATE, CHUNK_FRAMES)?;
        let onoff = pianoroll_to_onoff(&roll);
        out.push(ChunkPair {
            roll,
            onoff,
            target,
            source_id: source_id.to_string(),
            start_s,
        });
    }
    Ok(out)
}

/// Global scalar statistics of log-magnitudes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std <= 0.0 {
            return Err(Error::Data(format!(
                "normalization needs finite mean and positive std, got {mean} and {std}"
            )));
        }
        Ok(Self { mean, std })
    }

    /// Mean and population standard deviation over every target cell.
    pub fn from_chunks(chunks: &[ChunkPair]) -> Result<Self> {
        Self::from_values(chunks.iter().flat_map(|c| c.target.logmag.iter().copied()))
    }

    pub fn from_values(values: impl Iterator<Item = f64> + Clone) -> Result<Self> {
        let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
        if n == 0 {
            return Err(Error::Data("cannot compute statistics of an empty dataset".into()));
        }
        let mean = sum / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Self::new(mean, var.sqrt())
    }

    pub fn normalize(&self, x: &Array2<f64>) -> Array2<f64> {
        x.mapv(|v| (v - self.mean) / self.std)
    }

    pub fn denormalize(&self, x: &Array2<f64>) -> Array2<f64> {
        x.mapv(|v| v * self.std + self.mean)
    }
}

/// Normalizes every chunk target in place.
pub fn normalize(chunks: &mut [ChunkPair], stats: &NormStats) {
    for c in chunks {
        c.target.logmag = stats.normalize(&c.target.logmag);
    }
}

/// Distinct source ids in order of first appearance.
pub fn source_ids(chunks: &[ChunkPair]) -> Vec<String> {
    let mut seen = Vec::new();
    for c in chunks {
        if !seen.contains(&c.source_id) {
            seen.push(c.source_id.clone());
        }
    }
    seen
}

/// Seeded assignment of whole sources to the validation side. With at least
/// two sources, at least one goes to each side.
pub fn split_sources(sources: &[String], fraction: f64, seed: u64) -> Result<BTreeMap<String, Split>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("validation fraction {fraction} outside [0, 1)")));
    }
    let n = sources.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = if n < 2 || fraction == 0.0 {
        if n == 1 {
            log::warn!("only one source clip; the validation split is empty");
        }
        0
    } else {
        ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
    };
    Ok(order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let side = if rank < n_val { Split::Val } else { Split::Train };
            (sources[i].clone(), side)
        })
        .collect())
}

/// Splits chunks into (train, val) by source clip.
pub fn split(chunks: Vec<ChunkPair>, fraction: f64, seed: u64) -> Result<(Vec<ChunkPair>, Vec<ChunkPair>)> {
    let sides = split_sources(&source_ids(&chunks), fraction, seed)?;
    Ok(chunks
        .into_iter()
        .partition(|c| sides[&c.source_id] == Split::Train))
}

fn to_f32(a: &Array2<f64>) -> Vec<f32> {
    a.iter().map(|&v| v as f32).collect()
}

/// Stores one chunk as `chunk.{index}.roll`, `chunk.{index}.onoff` and
/// `chunk.{index}.target` (un-normalized log-magnitude).
pub fn push_chunk(c: &mut Container, index: usize, chunk: &ChunkPair) -> Result<()> {
    let frames = chunk.roll.frames();
    c.push(format!("chunk.{index}.roll"), vec![chunk.roll.active().nrows(), frames], chunk.roll.to_f32())?;
    c.push(format!("chunk.{index}.onoff"), vec![chunk.onoff.marks().nrows(), frames], chunk.onoff.to_f32())?;
    let t = &chunk.target.logmag;
    c.push(format!("chunk.{index}.target"), vec![t.nrows(), t.ncols()], to_f32(t))
}

/// All chunks, numbered from zero, as by [`push_chunk`].
pub fn chunks_to_container(chunks: &[ChunkPair]) -> Result<Container> {
    let mut c = Container::new();
    for (i, ch) in chunks.iter().enumerate() {
        push_chunk(&mut c, i, ch)?;
    }
    Ok(c)
}

/// Tensors of one stored chunk: roll and onset/offset `[128, T]`, target `[F, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredChunk {
    pub roll: Vec<f32>,
    pub onoff: Vec<f32>,
    pub target: Vec<f32>,
    pub frames: usize,
    pub bins: usize,
}

pub fn chunks_from_container(c: &Container, count: usize) -> Result<Vec<StoredChunk>> {
    (0..count)
        .map(|i| {
            let roll = c.require(&format!("chunk.{i}.roll"))?;
            let onoff = c.require(&format!("chunk.{i}.onoff"))?;
            let target = c.require(&format!("chunk.{i}.target"))?;
            let frames = *roll.shape.last().unwrap_or(&0);
            if roll.shape != onoff.shape || target.shape.len() != 2 || target.shape[1] != frames {
                return Err(Error::Data(format!(
                    "chunk {i}: inconsistent shapes {:?}, {:?}, {:?}",
                    roll.shape, onoff.shape, target.shape
                )));
            }
            Ok(StoredChunk {
                roll: roll.data.clone(),
                onoff: onoff.data.clone(),
                target: target.data.clone(),
                frames,
                bins: target.shape[0],
            })
        })
        .collect()
}
