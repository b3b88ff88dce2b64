use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ndarray::Array2;

use performancenet::container::Container;
use performancenet::data::{
    chunk_pairs, chunks_from_container, push_chunk, split_sources, toy_melody, toy_render, ClipEntry,
    DatasetManifest, NormStats, Split, ToyMelody,
};
use performancenet::dsp::{
    frame_count, griffin_lim, log_expand, wav_read, wav_write, AudioClip, LogSpectrogram, MagnitudeSpectrogram,
    CHUNK_FRAMES, CHUNK_SAMPLES, HOP, LOG_EPS, N_BINS, SAMPLE_RATE,
};
use performancenet::metrics::evaluate;
use performancenet::model::{ModelConfig, PerformanceNet};
use performancenet::score::{parse_midi, pianoroll_at_samples, pianoroll_to_onoff, write_midi, NUM_PITCHES};
use performancenet::training::{self, load_checkpoint, stack, Example, TrainConfig, TrainOutputs};
use performancenet::Tensor;

use crate::Instrument;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CHUNKS_FILE: &str = "chunks.pfnw";
pub const METRICS_FILE: &str = "metrics.csv";

/// Cross-fade between generated chunks: 0.5 s rounded to whole hops so
/// chunk boundaries stay on the STFT frame grid.
const XFADE_FRAMES: usize = 86;
const XFADE: usize = XFADE_FRAMES * HOP;
const CHUNK_STRIDE: usize = CHUNK_SAMPLES - XFADE;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn path_str(path: &Path) -> Result<String> {
    path.to_str()
        .map(str::to_string)
        .with_context(|| format!("path {} is not valid UTF-8", path.display()))
}

/// `<root>/<instrument>` if it exists, else `root`.
fn instrument_dir(root: &Path, instrument: Instrument) -> PathBuf {
    let sub = root.join(instrument.name());
    if sub.is_dir() {
        sub
    } else {
        root.to_path_buf()
    }
}

pub struct PrepareArgs {
    pub midi_dir: PathBuf,
    pub audio_dir: PathBuf,
    pub out: PathBuf,
    pub instrument: Instrument,
    pub overlap_s: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    let inst = a.instrument.name();
    let midi_root = instrument_dir(&a.midi_dir, a.instrument);
    let audio_root = instrument_dir(&a.audio_dir, a.instrument);
    let mut midis: Vec<(String, PathBuf)> = fs::read_dir(&midi_root)
        .with_context(|| format!("listing {}", midi_root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("mid" | "midi")))
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
        .collect();
    midis.sort();
    ensure!(!midis.is_empty(), "no .mid files in {}", midi_root.display());

    let ids: Vec<String> = midis.iter().map(|(stem, _)| format!("{inst}/{stem}")).collect();
    let sides = split_sources(&ids, a.val_fraction, a.seed)?;
    let mut manifest = DatasetManifest::default();
    manifest.overlaps.insert(inst.to_string(), a.overlap_s);
    let mut container = Container::new();
    let mut train_chunks = Vec::new();
    for ((stem, midi_path), id) in midis.iter().zip(&ids) {
        let wav_path = audio_root.join(format!("{stem}.wav"));
        let track = parse_midi(&read(midi_path)?).with_context(|| format!("parsing {}", midi_path.display()))?;
        let audio = wav_read(&read(&wav_path)?).with_context(|| format!("reading {}", wav_path.display()))?;
        let chunks = chunk_pairs(&audio, &track, a.overlap_s, id)?;
        if chunks.is_empty() {
            log::warn!("{id}: shorter than one chunk, no training pairs");
        }
        let split = sides[id];
        for c in &chunks {
            let index = manifest.chunks.len();
            push_chunk(&mut container, index, c)?;
            manifest.chunks.push((id.clone(), c.start_s));
            if split == Split::Train {
                train_chunks.push(index);
            }
        }
        manifest.clips.push(ClipEntry {
            id: id.clone(),
            instrument: inst.to_string(),
            split,
            midi_path: path_str(midi_path)?,
            wav_path: path_str(&wav_path)?,
        });
    }
    ensure!(!train_chunks.is_empty(), "the training split has no chunks");
    let targets: Vec<&[f32]> = train_chunks
        .iter()
        .map(|i| container.require(&format!("chunk.{i}.target")).map(|e| e.data.as_slice()))
        .collect::<performancenet::Result<_>>()?;
    let stats = NormStats::from_values(targets.iter().flat_map(|t| t.iter().map(|&v| f64::from(v))))?;
    manifest.stats = Some(stats);

    write(&a.out.join(MANIFEST_FILE), manifest.to_text()?.as_bytes())?;
    write(&a.out.join(CHUNKS_FILE), &container.to_bytes())?;
    let val = manifest.chunk_indices(Split::Val).len();
    println!(
        "{} chunks from {} clips ({} train, {} validation), log-magnitude mean {:.4} std {:.4}",
        manifest.chunks.len(),
        manifest.clips.len(),
        train_chunks.len(),
        val,
        stats.mean,
        stats.std
    );
    Ok(())
}

pub fn synth_toy(out: &Path, num_clips: usize, clip_s: f64, harmonics: usize, seed: u64) -> Result<()> {
    ensure!(clip_s > 0.0 && clip_s.is_finite(), "--clip-s must be positive");
    ensure!(harmonics >= 1, "--harmonics must be at least 1");
    let dir = out.join(Instrument::Toy.name());
    for i in 0..num_clips {
        let clip_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let track = toy_melody(clip_s, &ToyMelody::default(), clip_seed)?;
        let audio = toy_render(&track, harmonics, clip_seed)?;
        write(&dir.join(format!("clip_{i:03}.mid")), &write_midi(&track, 480)?)?;
        write(&dir.join(format!("clip_{i:03}.wav")), &wav_write(&audio))?;
    }
    println!("{num_clips} toy clips of {clip_s} s in {}", dir.display());
    Ok(())
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub reduced: bool,
    pub checkpoint_every: usize,
    pub seed: u64,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let text = String::from_utf8(read(&a.data.join(MANIFEST_FILE))?).context("manifest is not UTF-8")?;
    let manifest = DatasetManifest::from_text(&text)?;
    let stats = manifest.stats.context("manifest has no normalization statistics")?;
    let container = Container::from_bytes(&read(&a.data.join(CHUNKS_FILE))?)?;
    let stored = chunks_from_container(&container, manifest.chunks.len())?;
    let select = |side| -> Result<Vec<Example>> {
        manifest
            .chunk_indices(side)
            .into_iter()
            .map(|i| Ok(Example::from_stored(&stored[i], &stats)?))
            .collect()
    };
    let train_set = select(Split::Train)?;
    let val_set = select(Split::Val)?;
    drop(stored);
    drop(container);

    let config = if a.reduced {
        ModelConfig::reduced()
    } else {
        ModelConfig::default()
    };
    let mut net = PerformanceNet::new(config, a.seed)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        aux_weight: a.lambda,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        ..TrainConfig::default()
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let metrics_path = a.out.join(METRICS_FILE);
    let file = fs::File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    let mut metrics = BufWriter::new(file);
    log::info!(
        "training {} parameters on {} chunks ({} validation)",
        net.parameter_count(),
        train_set.len(),
        val_set.len()
    );
    let report = training::train(
        &mut net,
        &train_set,
        &val_set,
        &cfg,
        TrainOutputs {
            metrics: &mut metrics,
            checkpoint_dir: Some(&a.out),
            norm: Some(stats),
        },
    )?;
    metrics.flush()?;
    let val = report
        .best_val_loss
        .map_or_else(|| "none".to_string(), |v| v.to_string());
    println!(
        "train loss {} -> {} over {} steps; best validation loss {val}",
        report.initial_train_loss,
        report.final_train_loss,
        report.step_losses.len()
    );
    Ok(())
}

/// Number of generated chunks and output length for a score of `samples`.
pub fn generation_grid(samples: usize) -> (usize, usize) {
    let chunks = 1 + samples.saturating_sub(CHUNK_SAMPLES).div_ceil(CHUNK_STRIDE);
    (chunks, CHUNK_SAMPLES + (chunks - 1) * CHUNK_STRIDE)
}

fn ramp(j: usize, len: usize) -> f64 {
    (j as f64 + 0.5) / len as f64
}

pub fn generate(
    checkpoint: &Path,
    midi: &Path,
    out: &Path,
    iters: usize,
    spec_out: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let (net, stats) = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let stats = stats.context("checkpoint has no normalization statistics")?;
    ensure!(
        net.config().contour.in_channels == NUM_PITCHES && net.config().contour.out_channels() == N_BINS,
        "checkpoint maps {} pitches to {} bins; generation needs {NUM_PITCHES} to {N_BINS}",
        net.config().contour.in_channels,
        net.config().contour.out_channels()
    );
    let track = parse_midi(&read(midi)?).with_context(|| format!("parsing {}", midi.display()))?;
    let score_samples = (track.duration_s() * f64::from(SAMPLE_RATE)).round() as usize;
    let (chunks, len) = generation_grid(score_samples);
    let stride_frames = CHUNK_STRIDE / HOP;
    let mut audio = vec![0.0; len];
    let mut spec = Array2::<f64>::zeros((N_BINS, frame_count(len)));
    for i in 0..chunks {
        let start = i * CHUNK_STRIDE;
        let roll = pianoroll_at_samples(&track, start, HOP, SAMPLE_RATE, CHUNK_FRAMES)?;
        let onoff = pianoroll_to_onoff(&roll);
        let shape = vec![NUM_PITCHES, CHUNK_FRAMES];
        let roll = Tensor::new(shape.clone(), roll.to_f32())?;
        let onoff = Tensor::new(shape, onoff.to_f32())?;
        let (_, output) = net.infer(&stack(&[&roll])?, &stack(&[&onoff])?)?;
        let normalized = Array2::from_shape_vec(
            (N_BINS, CHUNK_FRAMES),
            output.data().iter().map(|&v| f64::from(v)).collect(),
        )?;
        let log = LogSpectrogram {
            logmag: stats.denormalize(&normalized),
            eps: LOG_EPS,
        };
        let mag = log_expand(&log, SAMPLE_RATE)?;
        let piece = griffin_lim(&mag, iters, seed.wrapping_add(i as u64))?;
        for (j, &s) in piece.samples.iter().enumerate() {
            let at = &mut audio[start + j];
            *at = if i > 0 && j < XFADE {
                let w = ramp(j, XFADE);
                *at * (1.0 - w) + s * w
            } else {
                s
            };
        }
        for (t, col) in mag.mag.columns().into_iter().enumerate() {
            let w = if i > 0 && t < XFADE_FRAMES { ramp(t, XFADE_FRAMES) } else { 1.0 };
            let mut dst = spec.column_mut(i * stride_frames + t);
            dst.zip_mut_with(&col, |d, &m| *d = *d * (1.0 - w) + m * w);
        }
        log::info!("chunk {}/{chunks} done", i + 1);
    }
    write(out, &wav_write(&AudioClip::new(audio, SAMPLE_RATE)?))?;
    if let Some(path) = spec_out {
        let mut c = Container::new();
        c.push("magnitude", vec![N_BINS, spec.ncols()], spec.iter().map(|&v| v as f32).collect())?;
        write(path, &c.to_bytes())?;
    }
    Ok(())
}

/// Reads a spectrogram container holding `magnitude` or `logmag` (`ln(mag + 1e-5)`).
fn read_spectrogram(path: &Path) -> Result<MagnitudeSpectrogram> {
    let c = Container::from_bytes(&read(path)?)?;
    let (entry, is_log) = match (c.get("magnitude"), c.get("logmag")) {
        (Some(e), _) => (e, false),
        (None, Some(e)) => (e, true),
        (None, None) => bail!("{} holds neither a magnitude nor a logmag array", path.display()),
    };
    ensure!(
        entry.shape.len() == 2 && entry.shape[0] == N_BINS,
        "{}: spectrogram must be [{N_BINS}, frames], got {:?}",
        entry.name,
        entry.shape
    );
    let a = Array2::from_shape_vec(
        (entry.shape[0], entry.shape[1]),
        entry.data.iter().map(|&v| f64::from(v)).collect(),
    )?;
    Ok(if is_log {
        log_expand(&LogSpectrogram { logmag: a, eps: LOG_EPS }, SAMPLE_RATE)?
    } else {
        MagnitudeSpectrogram::new(a, SAMPLE_RATE)?
    })
}

pub fn griffinlim(spec: &Path, out: &Path, iters: usize, seed: u64) -> Result<()> {
    let mag = read_spectrogram(spec)?;
    let audio = griffin_lim(&mag, iters, seed)?;
    write(out, &wav_write(&audio))
}

pub fn eval(reference: &Path, est: &Path, roll: Option<&Path>, header: bool) -> Result<()> {
    let r = wav_read(&read(reference)?).with_context(|| format!("reading {}", reference.display()))?;
    let e = wav_read(&read(est)?).with_context(|| format!("reading {}", est.display()))?;
    let roll = roll
        .map(|p| -> Result<_> {
            let track = parse_midi(&read(p)?).with_context(|| format!("parsing {}", p.display()))?;
            Ok(pianoroll_at_samples(&track, 0, HOP, e.sample_rate, frame_count(e.len()))?)
        })
        .transpose()?;
    let report = evaluate(&r, &e, roll.as_ref())?;
    if header {
        println!("{}", performancenet::metrics::EvalReport::CSV_HEADER);
    }
    println!("{}", report.to_csv());
    Ok(())
}

pub fn inspect(checkpoint: &Path) -> Result<()> {
    let (net, stats) = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let cfg = net.config();
    println!("# encoder channels {:?}", cfg.contour.encoder_channels);
    println!("# decoder channels {:?}", cfg.contour.decoder_channels);
    println!("# band schedule {:?}", cfg.texture.band_schedule);
    if let Some(s) = stats {
        println!("# normalization mean {} std {}", s.mean, s.std);
    }
    let rows = net.describe();
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4);
    for r in &rows {
        let shape = r.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        println!("{:<width$}  {:>16}  {:>12}", r.name, shape, r.count);
    }
    let total: usize = rows.iter().map(|r| r.count).sum();
    println!("{:<width$}  {:>16}  {:>12}", "total", "", total);
    Ok(())
}
