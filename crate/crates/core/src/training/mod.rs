//! Loss, optimisation loop and checkpoints.

mod checkpoint;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    checkpoint_container, config_from_container, load_checkpoint, load_into, norm_from_container,
    save_checkpoint, META_PREFIX,
};

use crate::data::{ChunkPair, NormStats, StoredChunk};
use crate::error::{Error, Result};
use crate::model::PerformanceNet;
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, NodeId, Scalar, Tensor};

pub const METRICS_HEADER: &str = "epoch,step,train_loss,val_loss";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Weight of the auxiliary ContourNet loss.
    pub aux_weight: f64,
    pub seed: u64,
    pub val_fraction: f64,
    /// Write `latest.pfnw` every this many epochs (and always at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 2,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            aux_weight: 0.0,
            seed: 0,
            val_fraction: 0.2,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::invalid("batch size and checkpoint interval must be at least 1"));
        }
        if !(self.aux_weight >= 0.0 && self.aux_weight.is_finite()) {
            return Err(Error::invalid(format!("auxiliary weight {} must be >= 0", self.aux_weight)));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// One model input/target pair: rolls `[128, T]`, normalized target `[F, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub roll: Tensor<f32>,
    pub onoff: Tensor<f32>,
    pub target: Tensor<f32>,
}

impl Example {
    pub fn from_chunk(chunk: &ChunkPair, stats: &NormStats) -> Result<Self> {
        let frames = chunk.roll.frames();
        let rows = chunk.roll.active().nrows();
        let target = stats.normalize(&chunk.target.logmag);
        Ok(Self {
            roll: Tensor::new(vec![rows, frames], chunk.roll.to_f32())?,
            onoff: Tensor::new(vec![rows, frames], chunk.onoff.to_f32())?,
            target: Tensor::new(
                vec![target.nrows(), target.ncols()],
                target.iter().map(|&v| v as f32).collect(),
            )?,
        })
    }

    pub fn from_stored(chunk: &StoredChunk, stats: &NormStats) -> Result<Self> {
        let rows = chunk.roll.len() / chunk.frames.max(1);
        let (mean, std) = (stats.mean as f32, stats.std as f32);
        Ok(Self {
            roll: Tensor::new(vec![rows, chunk.frames], chunk.roll.clone())?,
            onoff: Tensor::new(vec![rows, chunk.frames], chunk.onoff.clone())?,
            target: Tensor::new(
                vec![chunk.bins, chunk.frames],
                chunk.target.iter().map(|&v| (v - mean) / std).collect(),
            )?,
        })
    }
}

/// Stacks `[C, T]` tensors along a new leading batch axis.
pub fn stack<T: Scalar>(items: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = items
        .first()
        .ok_or_else(|| Error::invalid("cannot stack an empty batch"))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(items.len() * first.numel());
    for t in items {
        if t.shape() != shape.as_slice() {
            return Err(Error::shape(format!("batch items differ: {:?} vs {:?}", shape, t.shape())));
        }
        data.extend_from_slice(t.data());
    }
    let mut full = vec![items.len()];
    full.extend(shape);
    Tensor::new(full, data)
}

/// `mse(output, target) + aux_weight * mse(contour, target)`.
pub fn loss<T: Scalar>(
    g: &mut Graph<T>,
    contour: NodeId,
    output: NodeId,
    target: NodeId,
    aux_weight: f64,
) -> Result<NodeId> {
    let main = g.mse_loss(output, target)?;
    if aux_weight == 0.0 {
        return Ok(main);
    }
    let aux = g.mse_loss(contour, target)?;
    let aux = g.scale(aux, aux_weight)?;
    g.add(main, aux)
}

fn batch_loss(
    net: &PerformanceNet<f32>,
    batch: &[&Example],
    aux_weight: f64,
) -> Result<(Graph<f32>, NodeId)> {
    let rolls: Vec<_> = batch.iter().map(|e| &e.roll).collect();
    let onoffs: Vec<_> = batch.iter().map(|e| &e.onoff).collect();
    let targets: Vec<_> = batch.iter().map(|e| &e.target).collect();
    let mut g = Graph::new();
    let roll = g.constant(stack(&rolls)?);
    let onoff = g.constant(stack(&onoffs)?);
    let target = g.constant(stack(&targets)?);
    let out = net.forward(&mut g, roll, onoff)?;
    let l = loss(&mut g, out.contour, out.output, target, aux_weight)?;
    Ok((g, l))
}

/// Mean loss over a dataset, evaluated in fixed order.
pub fn evaluate(net: &PerformanceNet<f32>, set: &[Example], batch_size: usize, aux_weight: f64) -> Result<Option<f64>> {
    if set.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for chunk in set.chunks(batch_size.max(1)) {
        let batch: Vec<&Example> = chunk.iter().collect();
        let (g, l) = batch_loss(net, &batch, aux_weight)?;
        total += f64::from(g.value(l)?.item()?) * batch.len() as f64;
    }
    Ok(Some(total / set.len() as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let val = self.val_loss.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.epoch, self.step, self.train_loss, val)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Full training-set loss before the first step.
    pub initial_train_loss: f64,
    /// Full training-set loss after the last step.
    pub final_train_loss: f64,
    /// Mean loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub rows: Vec<MetricsRow>,
    pub best_val_loss: Option<f64>,
}

/// Where [`train`] writes its artifacts.
pub struct TrainOutputs<'a> {
    pub metrics: &'a mut dyn Write,
    /// Directory for `latest.pfnw` and `best.pfnw`.
    pub checkpoint_dir: Option<&'a Path>,
    pub norm: Option<NormStats>,
}

/// Seeded-shuffle minibatch Adam. Row 0 of the metrics holds the losses
/// before training; every later row is one epoch, with the mean step loss as
/// `train_loss`.
pub fn train(
    net: &mut PerformanceNet<f32>,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    out: TrainOutputs<'_>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let adam = cfg.adam();
    let mut state = AdamState::new(net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    writeln!(out.metrics, "{METRICS_HEADER}")?;
    let initial = evaluate(net, train_set, cfg.batch_size, cfg.aux_weight)?.expect("non-empty");
    let val0 = evaluate(net, val_set, cfg.batch_size, cfg.aux_weight)?;
    let mut rows = vec![MetricsRow {
        epoch: 0,
        step: 0,
        train_loss: initial,
        val_loss: val0,
    }];
    writeln!(out.metrics, "{}", rows[0].to_csv())?;
    // best-so-far selection score: validation loss, or epoch train loss without a validation set
    let mut best: Option<f64> = None;
    let mut step_losses = Vec::new();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_n = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let step = step_losses.len() + 1;
            let (g, l) = batch_loss(net, &batch, cfg.aux_weight).map_err(|e| at_step(e, step))?;
            let value = f64::from(g.value(l)?.item()?);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training step {step}: loss is {value}")));
            }
            net.params_mut().zero_grad();
            g.backward(l, net.params_mut()).map_err(|e| at_step(e, step))?;
            drop(g);
            adam_step(net.params_mut(), &mut state, &adam).map_err(|e| at_step(e, step))?;
            step_losses.push(value);
            epoch_sum += value;
            epoch_n += 1;
        }
        let val = evaluate(net, val_set, cfg.batch_size, cfg.aux_weight)?;
        let row = MetricsRow {
            epoch,
            step: step_losses.len(),
            train_loss: epoch_sum / epoch_n as f64,
            val_loss: val,
        };
        writeln!(out.metrics, "{}", row.to_csv())?;
        log::info!("epoch {epoch}: {}", row.to_csv());
        let score = val.unwrap_or(row.train_loss);
        let improved = best.is_none_or(|b| score < b);
        if improved {
            best = Some(score);
        }
        if let Some(dir) = out.checkpoint_dir {
            if improved {
                save_checkpoint(net, out.norm, &dir.join("best.pfnw"))?;
            }
            if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
                save_checkpoint(net, out.norm, &dir.join("latest.pfnw"))?;
            }
        }
        rows.push(row);
    }
    if let (Some(dir), 0) = (out.checkpoint_dir, cfg.epochs) {
        save_checkpoint(net, out.norm, &dir.join("best.pfnw"))?;
        save_checkpoint(net, out.norm, &dir.join("latest.pfnw"))?;
    }
    out.metrics.flush()?;
    let final_train = evaluate(net, train_set, cfg.batch_size, cfg.aux_weight)?.expect("non-empty");
    let best_val_loss = rows.iter().filter_map(|r| r.val_loss).reduce(f64::min);
    Ok(TrainReport {
        initial_train_loss: initial,
        final_train_loss: final_train,
        step_losses,
        rows,
        best_val_loss,
    })
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("training step {step}: {msg}")),
        other => other,
    }
}
