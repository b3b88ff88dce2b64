//! Acceptance report. Prints one PASS/FAIL line per criterion and a summary.
//!
//! The process exits 0 once every criterion has been evaluated, so the
//! report runs as part of `cargo test`. Set `ACCEPTANCE_STRICT=1` to exit
//! non-zero when any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{ensure, Result};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use performancenet::container::Container;
use performancenet::data::{
    chunk_count, chunk_pairs, split, toy_melody, toy_render, ChunkPair, NormStats, ToyMelody, CHUNK_SECONDS,
};
use performancenet::dsp::{
    griffin_lim, griffin_lim_traced, log_expand, spectral_convergence, wav_read, wav_write, AudioClip,
    LogSpectrogram, Stft, CHUNK_FRAMES, CHUNK_SAMPLES, HOP, LOG_EPS, N_BINS, SAMPLE_RATE,
};
use performancenet::metrics::pitch_accuracy;
use performancenet::model::{ModelConfig, PerformanceNet};
use performancenet::score::{parse_midi, pianoroll_at_samples, pianoroll_to_onoff, write_midi, NoteEvent};
use performancenet::testing::{check_input_gradients, dot, random_tensor, rel_err, rng};
use performancenet::training::{self, load_checkpoint, save_checkpoint, stack, Example, TrainConfig, TrainOutputs};
use performancenet::{Graph, NodeId, ParamStore, Scalar, Tensor};

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------- 1

fn toy_inputs(seed: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let track = toy_melody(CHUNK_SECONDS, &ToyMelody::default(), seed)?;
    let roll = pianoroll_at_samples(&track, 0, HOP, SAMPLE_RATE, CHUNK_FRAMES)?;
    let onoff = pianoroll_to_onoff(&roll);
    let shape = vec![1, 128, CHUNK_FRAMES];
    Ok((Tensor::new(shape.clone(), roll.to_f32())?, Tensor::new(shape, onoff.to_f32())?))
}

fn shape_contract() -> Result<Check> {
    let t0 = Instant::now();
    let net: PerformanceNet<f32> = PerformanceNet::new(ModelConfig::default(), 0)?;
    let (roll, onoff) = toy_inputs(1)?;
    let (contour, output) = net.infer(&roll, &onoff)?;
    let elapsed = t0.elapsed();
    let want = [1, N_BINS, CHUNK_FRAMES];
    let ok = roll.shape() == [1, 128, 860]
        && contour.shape() == want
        && output.shape() == want
        && output.is_finite()
        && elapsed < Duration::from_secs(30);
    Ok(check(
        ok,
        format!(
            "[1,128,860] -> contour {:?}, output {:?}, {} parameters, {:.1} s (limit 30 s)",
            contour.shape(),
            output.shape(),
            net.parameter_count(),
            secs(elapsed)
        ),
    ))
}

// ---------------------------------------------------------------- 2

const OP_STEP: f64 = 1e-6;
const OP_FLOOR: f64 = 1e-3;
/// Model steps: start here and halve while a step flips the sign of any
/// leaky-ReLU input, down to `MODEL_MIN_STEP`.
const MODEL_STEP: f64 = 1e-4;
const MODEL_MIN_STEP: f64 = 1.25e-5;
/// The loss of the reduced model carries ~5e-14 of evaluation noise, i.e.
/// ~2.5e-9 in a difference quotient at the smallest step, so gradients below
/// this are held to an absolute `GRAD_TOL * MODEL_FLOOR` = 1e-8.
const MODEL_FLOOR: f64 = 1e-4;
const MODEL_FRAMES: usize = 128;
const ENTRIES_PER_SEED: usize = 12;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;

fn project(g: &mut Graph<f64>, y: NodeId, seed: u64) -> performancenet::Result<NodeId> {
    let shape = g.value(y)?.shape().to_vec();
    let t = g.constant(random_tensor(&shape, &mut rng(seed)));
    g.mse_loss(y, t)
}

/// Worst relative error over every differentiable op for one seed.
fn op_gradients(seed: u64) -> Result<(f64, usize)> {
    let mut r = rng(5000 + seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut record = |inputs: &[Tensor<f64>],
                      build: &dyn Fn(&mut Graph<f64>, &[NodeId]) -> performancenet::Result<NodeId>|
     -> Result<()> {
        let rep = check_input_gradients(inputs, OP_STEP, OP_FLOOR, build)?;
        worst = worst.max(rep.max_rel_err);
        checked += rep.checked;
        Ok(())
    };
    let x = random_tensor(&[2, 3, 9], &mut r);
    let stride = 1 + (seed as usize % 3);
    record(
        &[x.clone(), random_tensor(&[5, 3, 4], &mut r), random_tensor(&[5], &mut r)],
        &|g, v| {
            let y = g.conv1d(v[0], v[1], v[2], stride, 1)?;
            project(g, y, seed)
        },
    )?;
    record(
        &[x.clone(), random_tensor(&[3, 2, 4], &mut r), random_tensor(&[2], &mut r)],
        &|g, v| {
            let y = g.tconv1d(v[0], v[1], v[2], stride, 1, stride - 1)?;
            project(g, y, seed)
        },
    )?;
    let away = x.map(|v: f64| if v.abs() < 0.05 { v + 0.1_f64.copysign(v) } else { v });
    record(&[away], &|g, v| {
        let y = g.leaky_relu(v[0], 0.2)?;
        project(g, y, seed)
    })?;
    record(
        &[x.clone(), random_tensor(&[3], &mut r), random_tensor(&[3], &mut r)],
        &|g, v| {
            let y = g.instance_norm(v[0], v[1], v[2], 1e-5)?;
            project(g, y, seed)
        },
    )?;
    record(&[x.clone(), random_tensor(&[2, 4, 9], &mut r)], &|g, v| {
        let y = g.concat_channels(&[v[1], v[0]])?;
        let y = g.slice_channels(y, 1, 6)?;
        project(g, y, seed)
    })?;
    record(&[x.clone()], &|g, v| {
        let y = g.pad_time(v[0], 13)?;
        let y = g.crop_time(y, 6)?;
        project(g, y, seed)
    })?;
    record(&[x.clone(), random_tensor(&[2, 3, 9], &mut r)], &|g, v| {
        let y = g.add(v[0], v[1])?;
        let y = g.scale(y, 1.7)?;
        project(g, y, seed)
    })?;
    record(&[x, random_tensor(&[2, 3, 9], &mut r)], &|g, v| g.mse_loss(v[0], v[1]))?;
    Ok((worst, checked))
}

/// Moves every parameter off its initial value; norm gains land in [0.5, 1.5].
fn randomize(store: &mut ParamStore<f64>, seed: u64) -> Result<()> {
    let mut r = rng(seed);
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name().to_string())).collect();
    for (id, name) in ids {
        let shape = store.get(id).value().shape().to_vec();
        let t = random_tensor(&shape, &mut r);
        let t = if name.ends_with(".gamma") {
            t.map(|v| 1.0 + 0.5 * v)
        } else if name.ends_with(".weight") {
            let fan_in: usize = shape[1..].iter().product();
            t.map(|v| v * (3.0 / fan_in as f64).sqrt())
        } else {
            t.map(|v| 0.1 * v)
        };
        store.set_value(id, t)?;
    }
    Ok(())
}

struct ModelProblem {
    net: PerformanceNet<f64>,
    roll: Tensor<f64>,
    onoff: Tensor<f64>,
    target: Tensor<f64>,
}

impl ModelProblem {
    fn new(seed: u64, frames: usize) -> Result<Self> {
        let mut net = PerformanceNet::new(ModelConfig::reduced(), seed)?;
        randomize(net.params_mut(), 100 + seed)?;
        let mut r = rng(200 + seed);
        let n = 128 * frames;
        let roll: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..2u8))).collect();
        let onoff: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(-1..2i8))).collect();
        Ok(Self {
            net,
            roll: Tensor::new(vec![1, 128, frames], roll)?,
            onoff: Tensor::new(vec![1, 128, frames], onoff)?,
            target: random_tensor(&[1, N_BINS, frames], &mut r),
        })
    }

    fn graph(&self) -> Result<(Graph<f64>, NodeId)> {
        let mut g = Graph::new();
        let r = g.constant(self.roll.clone());
        let o = g.constant(self.onoff.clone());
        let t = g.constant(self.target.clone());
        let out = self.net.forward(&mut g, r, o)?;
        let l = training::loss(&mut g, out.contour, out.output, t, 0.5)?;
        Ok((g, l))
    }

    fn loss_and_kinks(&self) -> Result<(f64, Vec<bool>)> {
        let (g, l) = self.graph()?;
        Ok((g.value(l)?.item()?, g.kink_pattern()))
    }

    fn gradients(&mut self) -> Result<Vec<Vec<f64>>> {
        let (g, l) = self.graph()?;
        let store = self.net.params_mut();
        store.zero_grad();
        g.backward(l, store)?;
        Ok(store.iter().map(|(_, p)| p.grad().to_vec()).collect())
    }
}

struct EntryChecks {
    checked: usize,
    skipped: usize,
    worst: f64,
    at: String,
}

/// Central differences of single parameter entries of the reduced model. A
/// step is accepted only when neither side changes the sign pattern of the
/// leaky-ReLU inputs, so the difference never straddles a kink; entries with
/// no such step down to `MODEL_MIN_STEP` are skipped and counted.
fn model_gradients(seed: u64) -> Result<EntryChecks> {
    let mut p = ModelProblem::new(seed, MODEL_FRAMES)?;
    let grads = p.gradients()?;
    let (_, base) = p.loss_and_kinks()?;
    let params: Vec<_> = p.net.params().iter().map(|(id, q)| (id, q.name().to_string())).collect();
    let mut r = rng(300 + seed);
    let mut out = EntryChecks {
        checked: 0,
        skipped: 0,
        worst: 0.0,
        at: String::new(),
    };
    for _ in 0..ENTRIES_PER_SEED {
        let k = r.random_range(0..params.len());
        let idx = r.random_range(0..grads[k].len());
        let (id, name) = &params[k];
        let original = p.net.params().get(*id).value().clone();
        let theta = original.data()[idx];
        let mut h = MODEL_STEP;
        let mut numeric = None;
        while h >= MODEL_MIN_STEP {
            let mut side = |v: f64| -> Result<(f64, Vec<bool>)> {
                let mut t = original.clone();
                t.data_mut()[idx] = v;
                p.net.params_mut().set_value(*id, t)?;
                p.loss_and_kinks()
            };
            let (lp, kp) = side(theta + h)?;
            let (lm, km) = side(theta - h)?;
            if kp == base && km == base {
                numeric = Some((lp - lm) / (2.0 * h));
                break;
            }
            h /= 2.0;
        }
        p.net.params_mut().set_value(*id, original)?;
        let Some(numeric) = numeric else {
            out.skipped += 1;
            continue;
        };
        let analytic = grads[k][idx];
        let e = rel_err(analytic, numeric, MODEL_FLOOR);
        out.checked += 1;
        if e >= out.worst {
            out.worst = e;
            out.at = format!("{name}[{idx}], h {h:.2e}: {analytic:.6e} vs {numeric:.6e}");
        }
    }
    Ok(out)
}

fn gradient_suite() -> Result<Check> {
    let t0 = Instant::now();
    let (mut op_worst, mut op_count) = (0.0_f64, 0);
    for seed in 0..GRAD_SEEDS {
        let (w, n) = op_gradients(seed)?;
        op_worst = op_worst.max(w);
        op_count += n;
    }
    let (mut model_worst, mut model_count, mut skipped, mut where_) = (0.0_f64, 0, 0, String::new());
    for seed in 0..GRAD_SEEDS {
        let c = model_gradients(seed)?;
        if c.worst >= model_worst {
            model_worst = c.worst;
            where_ = format!("seed {seed}, {}", c.at);
        }
        model_count += c.checked;
        skipped += c.skipped;
    }
    let elapsed = t0.elapsed();
    // the kink guard may not discard more than a tenth of the sample
    let enough = model_count * 10 >= 9 * ENTRIES_PER_SEED * GRAD_SEEDS as usize;
    let ok = op_worst < GRAD_TOL && model_worst < GRAD_TOL && enough && elapsed < Duration::from_secs(300);
    Ok(check(
        ok,
        format!(
            "{GRAD_SEEDS} seeds; ops: {op_count} entries, max rel err {op_worst:.2e}; reduced model (f64, T={MODEL_FRAMES}): \
             {model_count} kink-free entries ({skipped} skipped), max rel err {model_worst:.2e} ({where_}); tol {GRAD_TOL:e}; \
             {:.0} s (limit 300 s)",
            secs(elapsed)
        ),
    ))
}

// ---------------------------------------------------------------- 3

fn adjoint_identity() -> Result<Check> {
    let mut r = rng(31);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let batch = r.random_range(1..3);
        let cin = r.random_range(1..6);
        let cout = r.random_range(1..6);
        let kernel = r.random_range(1..8);
        let stride = r.random_range(1..5);
        let pad = r.random_range(0..kernel);
        let len = r.random_range(kernel.max(2)..40);
        let x = random_tensor(&[batch, cin, len], &mut r);
        let w = random_tensor(&[cout, cin, kernel], &mut r);

        let mut g = Graph::new();
        let (xn, wn, zb) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(Tensor::zeros(&[cout])));
        let ax = g.conv1d(xn, wn, zb, stride, pad)?;
        let ax = g.value(ax)?.clone();
        let out_len = ax.shape()[2];
        let y = random_tensor(ax.shape(), &mut r);
        let rem = len + 2 * pad - kernel - (out_len - 1) * stride;
        let (yn, zc) = (g.constant(y.clone()), g.constant(Tensor::zeros(&[cin])));
        let aty = g.tconv1d(yn, wn, zc, stride, pad, rem)?;
        let aty = g.value(aty)?;
        ensure!(aty.shape() == x.shape(), "tconv1d shape {:?} vs {:?}", aty.shape(), x.shape());
        worst = worst.max((dot(ax.data(), y.data()) - dot(x.data(), aty.data())).abs());
    }
    Ok(check(worst <= 1e-10, format!("50 random shape/stride/pad cases, max |<Ax,y> - <x,A'y>| = {worst:.2e} (tol 1e-10)")))
}

// ---------------------------------------------------------------- 4

fn single(t: Tensor<f64>) -> Tensor<f32> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v as f32).collect()).unwrap()
}

fn bits<T: Scalar + Into<f64>>(t: &Tensor<T>) -> Vec<u64> {
    t.data().iter().map(|&v| v.into().to_bits()).collect()
}

fn texture_identity() -> Result<Check> {
    let mut cases = 0;
    let mut ok = true;
    for seed in 0..2 {
        let net: PerformanceNet<f32> = PerformanceNet::new(ModelConfig::default(), seed)?;
        let mut r = rng(600 + seed);
        let roll = single(random_tensor(&[1, 128, CHUNK_FRAMES], &mut r));
        let onoff = single(random_tensor(&[1, 128, CHUNK_FRAMES], &mut r));
        let (c, o) = net.infer(&roll, &onoff)?;
        ok &= bits(&c) == bits(&o);
        cases += 1;
    }
    for seed in 0..3 {
        let net: PerformanceNet<f64> = PerformanceNet::new(ModelConfig::reduced(), seed)?;
        let mut r = rng(700 + seed);
        let roll = random_tensor(&[2, 128, 128], &mut r);
        let onoff = random_tensor(&[2, 128, 128], &mut r);
        let (c, o) = net.infer(&roll, &onoff)?;
        ok &= bits(&c) == bits(&o);
        cases += 1;
    }
    Ok(check(
        ok,
        format!("{cases} random-input cases (full config f32, reduced config f64): final output bit-identical to contour output: {ok}"),
    ))
}

// ---------------------------------------------------------------- 5

const GL_CLIPS: u64 = 8;

fn griffin_lim_quality() -> Result<Check> {
    let mut scs = Vec::new();
    let mut worst_rise = f64::NEG_INFINITY;
    let mut slowest: f64 = 0.0;
    for i in 0..GL_CLIPS {
        let track = toy_melody(CHUNK_SECONDS, &ToyMelody::default(), 100 + i)?;
        let clip = toy_render(&track, 8, 100 + i)?;
        let stft = Stft::new();
        let t0 = Instant::now();
        let mag = stft.magnitude(&clip)?;
        let (audio, trace) = griffin_lim_traced(&mag, 60, i)?;
        slowest = slowest.max(secs(t0.elapsed()));
        scs.push(spectral_convergence(&mag.mag, &stft.magnitude(&audio)?.mag)?);
        worst_rise = worst_rise.max(trace.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max));
    }
    let worst_sc = scs.iter().copied().fold(0.0, f64::max);
    let mean = scs.iter().sum::<f64>() / scs.len() as f64;
    let ok = worst_sc <= 0.15 && worst_rise <= 1e-6 && slowest < 60.0;
    let list: Vec<String> = scs.iter().map(|s| format!("{s:.4}")).collect();
    Ok(check(
        ok,
        format!(
            "{GL_CLIPS} toy clips, 60 iterations: spectral convergence [{}] (mean {mean:.4}, max {worst_sc:.4}, tol 0.15); \
             largest per-iteration rise {worst_rise:.2e} (slack 1e-6); slowest clip {slowest:.1} s (limit 60 s)",
            list.join(", ")
        ),
    ))
}

// ---------------------------------------------------------------- 6 and 7

const OVERFIT_CHUNKS: u64 = 8;
const OVERFIT_EPOCHS: usize = 75;

struct Overfit {
    net: PerformanceNet<f32>,
    stats: NormStats,
    chunks: Vec<ChunkPair>,
    examples: Vec<Example>,
}

fn toy_chunks() -> Result<Vec<ChunkPair>> {
    let mut chunks = Vec::new();
    for i in 0..OVERFIT_CHUNKS {
        let track = toy_melody(CHUNK_SECONDS, &ToyMelody::default(), 100 + i)?;
        let clip = toy_render(&track, 8, 100 + i)?;
        let mut c = chunk_pairs(&clip, &track, 4.0, &format!("toy/{i}"))?;
        ensure!(c.len() == 1, "a chunk-length clip should give one chunk");
        chunks.append(&mut c);
    }
    Ok(chunks)
}

fn overfit(slot: &mut Option<Overfit>) -> Result<Check> {
    let t0 = Instant::now();
    let chunks = toy_chunks()?;
    let stats = NormStats::from_chunks(&chunks)?;
    let examples = chunks
        .iter()
        .map(|c| Example::from_chunk(c, &stats))
        .collect::<performancenet::Result<Vec<_>>>()?;
    let mut net = PerformanceNet::new(ModelConfig::reduced(), 0)?;
    let cfg = TrainConfig {
        epochs: OVERFIT_EPOCHS,
        batch_size: 2,
        lr: 1e-3,
        aux_weight: 0.0,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut sink = Vec::new();
    let rep = training::train(
        &mut net,
        &examples,
        &[],
        &cfg,
        TrainOutputs {
            metrics: &mut sink,
            checkpoint_dir: None,
            norm: Some(stats),
        },
    )?;
    let elapsed = t0.elapsed();
    let steps = rep.step_losses.len();
    let ratio = rep.final_train_loss / rep.initial_train_loss;
    let ok = ratio <= 0.1 && steps <= 300 && elapsed <= Duration::from_secs(600);
    *slot = Some(Overfit {
        net,
        stats,
        chunks,
        examples,
    });
    Ok(check(
        ok,
        format!(
            "reduced model, {OVERFIT_CHUNKS} toy chunks, {steps} Adam steps (lr 1e-3, batch 2, seed 0): loss {:.4} -> {:.4}, \
             ratio {ratio:.4} (tol 0.1); {:.0} s (limit 600 s)",
            rep.initial_train_loss,
            rep.final_train_loss,
            secs(elapsed)
        ),
    ))
}

fn render(o: &Overfit, k: usize) -> Result<AudioClip> {
    let ex = &o.examples[k];
    let (_, out) = o.net.infer(&stack(&[&ex.roll])?, &stack(&[&ex.onoff])?)?;
    let normalized = Array2::from_shape_vec((N_BINS, CHUNK_FRAMES), out.data().iter().map(|&v| f64::from(v)).collect())?;
    let log = LogSpectrogram {
        logmag: o.stats.denormalize(&normalized),
        eps: LOG_EPS,
    };
    Ok(griffin_lim(&log_expand(&log, SAMPLE_RATE)?, 60, 0)?)
}

fn pitch_fidelity(slot: &Option<Overfit>) -> Result<Check> {
    let Some(o) = slot else {
        return Ok(check(false, "overfit model unavailable"));
    };
    let mut model = Vec::new();
    let mut noise = Vec::new();
    let mut pooled = (0.0, 0usize);
    let normal = Normal::new(0.0, 0.3)?;
    for (k, chunk) in o.chunks.iter().enumerate() {
        let audio = render(o, k)?;
        let score = pitch_accuracy(&audio, &chunk.roll)?;
        let acc = score.accuracy.unwrap_or(0.0);
        pooled.0 += acc * score.scored_frames as f64;
        pooled.1 += score.scored_frames;
        model.push(acc);
        let mut r = rng(900 + k as u64);
        let white = AudioClip::new((0..audio.len()).map(|_| normal.sample(&mut r)).collect(), SAMPLE_RATE)?;
        noise.push(pitch_accuracy(&white, &chunk.roll)?.accuracy.unwrap_or(0.0));
    }
    let min_model = model.iter().copied().fold(1.0, f64::min);
    let max_noise = noise.iter().copied().fold(0.0, f64::max);
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(", ");
    Ok(check(
        min_model >= 0.9 && max_noise < 0.2,
        format!(
            "held-in chunks through model + Griffin-Lim(60): accuracy [{}] (min {min_model:.3}, tol 0.9 for every chunk; \
             pooled over {} frames {:.3}); white noise [{}] (max {max_noise:.3}, tol < 0.2)",
            fmt(&model),
            pooled.1,
            pooled.0 / pooled.1.max(1) as f64,
            fmt(&noise)
        ),
    ))
}

// ---------------------------------------------------------------- 8

fn data_pipeline() -> Result<Check> {
    let track = toy_melody(60.0, &ToyMelody::default(), 8)?;
    let clip = toy_render(&track, 8, 8)?;
    let chunks = chunk_pairs(&clip, &track, 4.0, "toy/long")?;
    let stride = CHUNK_SAMPLES - (4.0 * f64::from(SAMPLE_RATE)).round() as usize;
    let oracle = (60 * SAMPLE_RATE as usize - CHUNK_SAMPLES) / stride + 1;
    let counted = chunk_count(clip.len(), 4.0)?;

    let mut leaks = 0;
    let mut val_sources = Vec::new();
    for (n_sources, seeds) in [(5usize, 0..10u64), (10, 10..30)] {
        let mut pool = Vec::new();
        for s in 0..n_sources {
            let t = toy_melody(6.0, &ToyMelody::default(), 50 + s as u64)?;
            let a = toy_render(&t, 4, 50 + s as u64)?;
            pool.extend(chunk_pairs(&a, &t, 4.0, &format!("toy/src{s}"))?);
        }
        for seed in seeds {
            let (train, val) = split(pool.clone(), 0.2, seed)?;
            let train_ids: std::collections::BTreeSet<_> = train.iter().map(|c| &c.source_id).collect();
            let val_ids: std::collections::BTreeSet<_> = val.iter().map(|c| &c.source_id).collect();
            leaks += train_ids.intersection(&val_ids).count();
            ensure!(train.len() + val.len() == pool.len(), "split lost chunks");
            if n_sources == 5 {
                val_sources.push(val_ids.len());
            }
        }
    }
    let one_of_five = val_sources.iter().all(|&n| n == 1);
    Ok(check(
        chunks.len() == 56 && oracle == 56 && counted == 56 && leaks == 0 && one_of_five,
        format!(
            "60 s clip, overlap 4.0 s: {} chunk pairs (arithmetic oracle {oracle}); 30 seeded splits: {leaks} shared \
             sources, 5-source splits hold out exactly one source: {one_of_five}",
            chunks.len()
        ),
    ))
}

// ---------------------------------------------------------------- 9

/// Type-1 file, 96 ticks per quarter, tempo 120 bpm then 60 bpm at tick 192,
/// with running status and a velocity-0 note-off.
const MIDI_FIXTURE: &[u8] = &[
    b'M', b'T', b'h', b'd', 0, 0, 0, 6, 0, 1, 0, 2, 0, 96, //
    b'M', b'T', b'r', b'k', 0, 0, 0, 19, //
    0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20, //
    0x81, 0x40, 0xFF, 0x51, 0x03, 0x0F, 0x42, 0x40, //
    0x00, 0xFF, 0x2F, 0x00, //
    b'M', b'T', b'r', b'k', 0, 0, 0, 26, //
    0x00, 0x90, 0x3C, 0x64, //
    0x60, 0x3C, 0x00, //
    0x00, 0x43, 0x50, //
    0x60, 0x80, 0x43, 0x40, //
    0x00, 0x90, 0x45, 0x60, //
    0x60, 0x80, 0x45, 0x00, //
    0x00, 0xFF, 0x2F, 0x00,
];

fn serialization() -> Result<Check> {
    let dir = tempfile::tempdir()?;
    let mut net = PerformanceNet::<f32>::new(ModelConfig::reduced(), 12)?;
    let mut r = rng(12);
    let ids: Vec<_> = net.params().iter().map(|(id, _)| id).collect();
    for id in ids {
        let shape = net.params().get(id).value().shape().to_vec();
        net.params_mut().set_value(id, single(random_tensor(&shape, &mut r)))?;
    }
    let path = dir.path().join("ck.pfnw");
    let stats = NormStats::new(-3.25, 1.5)?;
    save_checkpoint(&net, Some(stats), &path)?;
    let (back, back_stats) = load_checkpoint(&path)?;
    let params_equal = net.params().len() == back.params().len()
        && net.params().iter().zip(back.params().iter()).all(|((_, a), (_, b))| {
            a.name() == b.name()
                && a.value().shape() == b.value().shape()
                && a.value().data().iter().zip(b.value().data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    let ckpt_ok = params_equal && back_stats == Some(stats);

    let parsed = parse_midi(MIDI_FIXTURE)?;
    let want = vec![
        NoteEvent::new(60, 0.0, 0.5)?,
        NoteEvent::new(67, 0.5, 1.0)?,
        NoteEvent::new(69, 1.0, 2.0)?,
    ];
    let fixture_ok = parsed.notes() == want.as_slice();
    let again = parse_midi(&write_midi(&parsed, 480)?)?;
    let midi_ok = fixture_ok && again == parsed;
    let container_ok = Container::from_bytes(&std::fs::read(&path)?)?.to_bytes() == std::fs::read(&path)?;

    let mut r = rng(13);
    let samples: Vec<f64> = (0..44_100).map(|_| r.random_range(-1.0..=1.0)).collect();
    let clip = AudioClip::new(samples, SAMPLE_RATE)?;
    let wav = wav_read(&wav_write(&clip))?;
    let wav_err = clip
        .samples
        .iter()
        .zip(&wav.samples)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let wav_ok = wav.len() == clip.len() && wav.sample_rate == SAMPLE_RATE && wav_err <= 1.0 / 32768.0;
    Ok(check(
        ckpt_ok && midi_ok && wav_ok && container_ok,
        format!(
            "checkpoint ({} tensors) bitwise: {ckpt_ok}; MIDI fixture parsed as expected: {fixture_ok}, \
             write/parse exact: {}; WAV max error {wav_err:.3e} (tol {:.3e})",
            net.params().len(),
            again == parsed,
            1.0 / 32768.0
        ),
    ))
}

// ---------------------------------------------------------------- 10

fn determinism() -> Result<Check> {
    let a = tempfile::tempdir()?;
    let b = tempfile::tempdir()?;
    let c = tempfile::tempdir()?;
    let out_a = common::pipeline(a.path(), 7);
    let out_b = common::pipeline(b.path(), 7);
    let files_a = common::files(a.path());
    let files_b = common::files(b.path());
    let differing: Vec<String> = files_a
        .iter()
        .zip(&files_b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let same = files_a.len() == files_b.len() && differing.is_empty() && out_a == out_b;
    common::run_ok(c.path(), &["synth-toy", "--out", "raw", "--num-clips", "3", "--clip-s", "8", "--seed", "8"]);
    let seed_matters = common::files(c.path()) != common::files(&a.path().join("raw")).into_iter().map(|(p, d)| (std::path::Path::new("raw").join(p), d)).collect::<Vec<_>>();
    Ok(check(
        same && seed_matters,
        format!(
            "synth-toy, prepare, train, generate, griffinlim, eval, inspect run twice with --seed 7: {} artifacts, \
             {} differing{}; a different seed changes the output: {seed_matters}",
            files_a.len(),
            differing.len(),
            if out_a == out_b { ", stdout identical" } else { ", stdout differs" }
        ),
    ))
}

fn main() -> ExitCode {
    let strict = std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v != "0");
    // numeric arguments select criteria; cargo's harness flags are ignored
    let mut only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if only.contains(&7) && !only.contains(&6) {
        only.push(6);
    }
    let selected = |n: usize| only.is_empty() || only.contains(&n);

    let mut trained = None;
    let mut results = Vec::new();
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Result<Check>| {
        if !selected(n) {
            return;
        }
        let t0 = Instant::now();
        let c = match panic::catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(c)) => c,
            Ok(Err(e)) => check(false, format!("error: {e:#}")),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                check(false, format!("panicked: {msg}"))
            }
        };
        let tag = if c.pass { "PASS" } else { "FAIL" };
        println!("{tag} {n:>2} {name}: {} [{:.1} s]", c.detail, secs(t0.elapsed()));
        results.push(c.pass);
    };
    report(1, "shape contract", &mut shape_contract);
    report(2, "gradient suite", &mut gradient_suite);
    report(3, "adjoint identity", &mut adjoint_identity);
    report(4, "texture identity at init", &mut texture_identity);
    report(5, "Griffin-Lim quality", &mut griffin_lim_quality);
    report(6, "overfit smoke test", &mut || overfit(&mut trained));
    report(7, "end-to-end pitch fidelity", &mut || pitch_fidelity(&trained));
    report(8, "data pipeline", &mut data_pipeline);
    report(9, "serialization", &mut serialization);
    report(10, "CLI determinism", &mut determinism);

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if strict && passed < results.len() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
