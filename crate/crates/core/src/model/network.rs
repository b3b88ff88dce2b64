use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{band_partition, padded_frames, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{kaiming_uniform, Graph, NodeId, ParamId, ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Stage {
    conv: Conv,
    norm: Option<Norm>,
}

#[derive(Clone, Debug)]
struct SubBlock {
    conv1: Conv,
    norm1: Norm,
    conv2: Conv,
    norm2: Norm,
}

#[derive(Clone, Debug)]
struct Mbr {
    bands: Vec<Range<usize>>,
    subs: Vec<SubBlock>,
}

/// Graph nodes produced by [`PerformanceNet::forward`].
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    pub contour: NodeId,
    pub output: NodeId,
}

/// One row of [`PerformanceNet::describe`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

/// The full network and its parameters.
#[derive(Clone, Debug)]
pub struct PerformanceNet<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    encoder: Vec<(Conv, Norm)>,
    decoder: Vec<Stage>,
    onoff: [Conv; 2],
    texture: Vec<Mbr>,
}

struct Init<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Init<'_, T> {
    /// `out` is the bias width: `shape[0]` for convolutions, `shape[1]` for
    /// transposed ones.
    fn conv(&mut self, prefix: &str, shape: [usize; 3], out: usize, zero: bool) -> Result<Conv> {
        let weight = if zero {
            Tensor::zeros(&shape)
        } else {
            // fan-in counts input channels times taps for both layer kinds
            let fan_in = if out == shape[0] { shape[1] * shape[2] } else { shape[0] * shape[2] };
            kaiming_uniform(&shape, fan_in, &mut self.rng)
        };
        Ok(Conv {
            weight: self.store.register(format!("{prefix}.weight"), weight)?,
            bias: self.store.register(format!("{prefix}.bias"), Tensor::zeros(&[out]))?,
        })
    }

    fn norm(&mut self, prefix: &str, channels: usize) -> Result<Norm> {
        Ok(Norm {
            gamma: self
                .store
                .register(format!("{prefix}.gamma"), Tensor::full(&[channels], T::one()))?,
            beta: self
                .store
                .register(format!("{prefix}.beta"), Tensor::zeros(&[channels]))?,
        })
    }
}

impl<T: Scalar> PerformanceNet<T> {
    /// Kaiming-uniform weights from `seed`, zero biases, unit norm gains, and
    /// zero second convolutions in every residual sub-block.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let c = &config.contour;
        let k = c.kernel;

        let mut encoder = Vec::new();
        let mut cin = c.in_channels;
        for (i, &cout) in c.encoder_channels.iter().enumerate() {
            let prefix = format!("contour.enc.{i}");
            let conv = init.conv(&prefix, [cout, cin, k], cout, false)?;
            let norm = init.norm(&format!("{prefix}.norm"), cout)?;
            encoder.push((conv, norm));
            cin = cout;
        }

        let o = &config.onoff;
        let onoff = [
            init.conv("contour.onoff.0", [o.width, c.in_channels, o.kernel1], o.width, false)?,
            init.conv("contour.onoff.1", [o.width, o.width, o.kernel2], o.width, false)?,
        ];

        let enc = &c.encoder_channels;
        let dec = &c.decoder_channels;
        let mut decoder = Vec::new();
        for (i, &cout) in dec.iter().enumerate() {
            let cin = decoder_in_channels(&config, i);
            let prefix = format!("contour.dec.{i}");
            let conv = init.conv(&prefix, [cin, cout, k], cout, false)?;
            let norm = if i + 1 < dec.len() {
                Some(init.norm(&format!("{prefix}.norm"), cout)?)
            } else {
                None
            };
            decoder.push(Stage { conv, norm });
        }
        debug_assert_eq!(enc.len(), dec.len());

        let t = &config.texture;
        let f = c.out_channels();
        let mut texture = Vec::new();
        for (i, &k_bands) in t.band_schedule.iter().enumerate() {
            let bands = band_partition(f, k_bands)?;
            let mut subs = Vec::new();
            for (j, band) in bands.iter().enumerate() {
                let w = band.len();
                let prefix = format!("texture.mbr.{i}.band.{j}");
                let shape = [w, w, t.kernel];
                subs.push(SubBlock {
                    conv1: init.conv(&format!("{prefix}.conv1"), shape, w, false)?,
                    norm1: init.norm(&format!("{prefix}.norm1"), w)?,
                    conv2: init.conv(&format!("{prefix}.conv2"), shape, w, true)?,
                    norm2: init.norm(&format!("{prefix}.norm2"), w)?,
                });
            }
            texture.push(Mbr { bands, subs });
        }

        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            onoff,
            texture,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.num_values()
    }

    /// Name, shape and element count of every parameter in registration order.
    pub fn describe(&self) -> Vec<LayerInfo> {
        self.params
            .iter()
            .map(|(_, p)| LayerInfo {
                name: p.name().to_string(),
                shape: p.value().shape().to_vec(),
                count: p.value().numel(),
            })
            .collect()
    }

    fn conv(&self, g: &mut Graph<T>, x: NodeId, conv: Conv, stride: usize, pad: usize) -> Result<NodeId> {
        let w = g.param(&self.params, conv.weight);
        let b = g.param(&self.params, conv.bias);
        g.conv1d(x, w, b, stride, pad)
    }

    fn norm(&self, g: &mut Graph<T>, x: NodeId, norm: Norm, eps: f64) -> Result<NodeId> {
        let gamma = g.param(&self.params, norm.gamma);
        let beta = g.param(&self.params, norm.beta);
        g.instance_norm(x, gamma, beta, eps)
    }

    /// Returns `(deep, shallow)` features on the `T/16` and `T/8` grids.
    pub fn onoff_encode(&self, g: &mut Graph<T>, onoff: NodeId) -> Result<(NodeId, NodeId)> {
        let o = &self.config.onoff;
        let (_, _, len) = g.value(onoff)?.dims3()?;
        let grid = o.stride1 * o.stride2;
        if len % grid != 0 {
            return Err(Error::shape(format!(
                "onset/offset encoder needs a time length divisible by {grid}, got {len}"
            )));
        }
        let h = self.conv(g, onoff, self.onoff[0], o.stride1, 0)?;
        let shallow = g.leaky_relu(h, o.leaky_slope)?;
        let h = self.conv(g, shallow, self.onoff[1], o.stride2, 0)?;
        let deep = g.leaky_relu(h, o.leaky_slope)?;
        Ok((deep, shallow))
    }

    /// ContourNet on inputs whose time length is a multiple of 32.
    fn contour_aligned(&self, g: &mut Graph<T>, roll: NodeId, onoff: NodeId) -> Result<NodeId> {
        let c = &self.config.contour;
        let (deep, shallow) = self.onoff_encode(g, onoff)?;

        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = roll;
        for &(conv, norm) in &self.encoder {
            h = self.conv(g, h, conv, c.stride, c.pad)?;
            h = self.norm(g, h, norm, c.norm_eps)?;
            h = g.leaky_relu(h, c.leaky_slope)?;
            skips.push(h);
        }

        // Decoder stage i upsamples; its output joins the mirrored encoder
        // feature, plus the onset/offset features after the first two stages.
        let last = self.decoder.len() - 1;
        for (i, stage) in self.decoder.iter().enumerate() {
            if i > 0 {
                let mut parts = vec![h, skips[last - i]];
                match i {
                    1 => parts.push(deep),
                    2 => parts.push(shallow),
                    _ => {}
                }
                h = g.concat_channels(&parts)?;
            }
            let w = g.param(&self.params, stage.conv.weight);
            let b = g.param(&self.params, stage.conv.bias);
            h = g.tconv1d(h, w, b, c.stride, c.pad, 0)?;
            if let Some(norm) = stage.norm {
                h = self.norm(g, h, norm, c.norm_eps)?;
                h = g.leaky_relu(h, c.leaky_slope)?;
            }
        }
        Ok(h)
    }

    /// ContourNet for any time length: inputs are right-padded with zeros to
    /// a multiple of 32 (at least 64) and the output is cropped back.
    pub fn contour_forward(&self, g: &mut Graph<T>, roll: NodeId, onoff: NodeId) -> Result<NodeId> {
        let (_, _, len) = g.value(roll)?.dims3()?;
        let (_, _, onoff_len) = g.value(onoff)?.dims3()?;
        if len != onoff_len {
            return Err(Error::shape(format!(
                "pianoroll has {len} frames but onset/offset roll has {onoff_len}"
            )));
        }
        let padded = padded_frames(len);
        if padded == len {
            return self.contour_aligned(g, roll, onoff);
        }
        let roll = g.pad_time(roll, padded)?;
        let onoff = g.pad_time(onoff, padded)?;
        let out = self.contour_aligned(g, roll, onoff)?;
        g.crop_time(out, len)
    }

    /// Multi-band residual block `index` of TextureNet.
    pub fn mbr_forward(&self, g: &mut Graph<T>, x: NodeId, index: usize) -> Result<NodeId> {
        let t = &self.config.texture;
        let block = self
            .texture
            .get(index)
            .ok_or_else(|| Error::invalid(format!("no residual block {index}")))?;
        let (_, ch, _) = g.value(x)?.dims3()?;
        if block.bands.last().map(|r| r.end) != Some(ch) {
            return Err(Error::shape(format!(
                "residual block {index} expects {} bins, got {ch}",
                block.bands.last().map_or(0, |r| r.end)
            )));
        }
        let pad = t.kernel / 2;
        let mut outs = Vec::with_capacity(block.bands.len());
        for (band, sub) in block.bands.iter().zip(&block.subs) {
            let mut h = if block.bands.len() == 1 {
                x
            } else {
                g.slice_channels(x, band.start, band.end)?
            };
            h = self.conv(g, h, sub.conv1, 1, pad)?;
            h = self.norm(g, h, sub.norm1, t.norm_eps)?;
            h = g.leaky_relu(h, t.leaky_slope)?;
            h = self.conv(g, h, sub.conv2, 1, pad)?;
            h = self.norm(g, h, sub.norm2, t.norm_eps)?;
            outs.push(h);
        }
        let branch = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_channels(&outs)?
        };
        g.add(x, branch)
    }

    pub fn texture_forward(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for i in 0..self.texture.len() {
            h = self.mbr_forward(g, h, i)?;
        }
        Ok(h)
    }

    /// ContourNet then TextureNet; both outputs are `[B, F, T]`.
    pub fn forward(&self, g: &mut Graph<T>, roll: NodeId, onoff: NodeId) -> Result<ModelOutput> {
        let (_, rc, _) = g.value(roll)?.dims3()?;
        let (_, oc, _) = g.value(onoff)?.dims3()?;
        let want = self.config.contour.in_channels;
        if rc != want || oc != want {
            return Err(Error::shape(format!(
                "model expects {want} pitch rows, got {rc} and {oc}"
            )));
        }
        let contour = self.contour_forward(g, roll, onoff)?;
        let output = self.texture_forward(g, contour)?;
        Ok(ModelOutput { contour, output })
    }

    /// Forward pass without gradient bookkeeping; returns (contour, output).
    pub fn infer(&self, roll: &Tensor<T>, onoff: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let r = g.constant(roll.clone());
        let o = g.constant(onoff.clone());
        let out = self.forward(&mut g, r, o)?;
        Ok((g.value(out.contour)?.clone(), g.value(out.output)?.clone()))
    }
}

/// Input width of decoder stage `i`.
fn decoder_in_channels(config: &ModelConfig, i: usize) -> usize {
    let c = &config.contour;
    let (enc, dec) = (&c.encoder_channels, &c.decoder_channels);
    let last = enc.len() - 1;
    if i == 0 {
        return enc[last];
    }
    let extra = if i <= 2 { config.onoff.width } else { 0 };
    dec[i - 1] + enc[last - i] + extra
}
