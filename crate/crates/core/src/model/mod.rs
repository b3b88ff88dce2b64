//! ContourNet (a five-level 1D U-Net with an onset/offset encoder) followed by
//! TextureNet (a stack of multi-band residual blocks).

mod network;

use std::ops::Range;

pub use network::{LayerInfo, ModelOutput, PerformanceNet};

use crate::dsp::N_BINS;
use crate::error::{Error, Result};
use crate::score::NUM_PITCHES;

/// Number of stride-2 levels in the U-Net.
pub const DEPTH: usize = 5;
/// Time lengths fed to ContourNet are padded to a multiple of this.
pub const TIME_MULTIPLE: usize = 1 << DEPTH;

#[derive(Clone, Debug, PartialEq)]
pub struct ContourNetConfig {
    pub in_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub leaky_slope: f64,
    pub norm_eps: f64,
}

impl Default for ContourNetConfig {
    fn default() -> Self {
        Self {
            in_channels: NUM_PITCHES,
            encoder_channels: vec![256, 512, 1024, 2048, 4096],
            decoder_channels: vec![2048, N_BINS, N_BINS, N_BINS, N_BINS],
            kernel: 4,
            stride: 2,
            pad: 1,
            leaky_slope: 0.2,
            norm_eps: 1e-5,
        }
    }
}

impl ContourNetConfig {
    pub fn out_channels(&self) -> usize {
        self.decoder_channels.last().copied().unwrap_or(0)
    }
}

/// Two strided convolutions over the onset/offset roll. The first lands on
/// the time grid of decoder stage 2's output, the second on stage 1's.
#[derive(Clone, Debug, PartialEq)]
pub struct OnOffEncoderConfig {
    pub width: usize,
    pub kernel1: usize,
    pub stride1: usize,
    pub kernel2: usize,
    pub stride2: usize,
    pub leaky_slope: f64,
}

impl Default for OnOffEncoderConfig {
    fn default() -> Self {
        Self {
            width: 64,
            kernel1: 8,
            stride1: 8,
            kernel2: 2,
            stride2: 2,
            leaky_slope: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextureNetConfig {
    pub band_schedule: Vec<usize>,
    pub kernel: usize,
    pub leaky_slope: f64,
    pub norm_eps: f64,
}

impl Default for TextureNetConfig {
    fn default() -> Self {
        Self {
            band_schedule: vec![2, 4, 8, 16],
            kernel: 3,
            leaky_slope: 0.2,
            norm_eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub contour: ContourNetConfig,
    pub onoff: OnOffEncoderConfig,
    pub texture: TextureNetConfig,
}

impl ModelConfig {
    /// Desk-scale model used for the overfit experiment and `train --reduced`.
    pub fn reduced() -> Self {
        Self {
            contour: ContourNetConfig {
                encoder_channels: vec![32, 64, 128, 256, 512],
                decoder_channels: vec![256, 128, 64, 32, N_BINS],
                ..ContourNetConfig::default()
            },
            onoff: OnOffEncoderConfig::default(),
            texture: TextureNetConfig {
                band_schedule: vec![2, 4],
                ..TextureNetConfig::default()
            },
        }
    }

    /// Every width divided by 32, for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            contour: ContourNetConfig {
                in_channels: NUM_PITCHES / 32,
                encoder_channels: vec![8, 16, 32, 64, 128],
                decoder_channels: vec![64, 33, 33, 33, 33],
                ..ContourNetConfig::default()
            },
            onoff: OnOffEncoderConfig {
                width: 2,
                ..OnOffEncoderConfig::default()
            },
            texture: TextureNetConfig {
                band_schedule: vec![2, 4],
                ..TextureNetConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.contour;
        if c.encoder_channels.len() != DEPTH || c.decoder_channels.len() != DEPTH {
            return Err(Error::invalid(format!(
                "encoder and decoder need {DEPTH} levels, got {} and {}",
                c.encoder_channels.len(),
                c.decoder_channels.len()
            )));
        }
        let widths = c
            .encoder_channels
            .iter()
            .chain(&c.decoder_channels)
            .chain([&c.in_channels, &self.onoff.width]);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if (c.kernel, c.stride, c.pad) != (4, 2, 1) {
            return Err(Error::invalid(
                "ContourNet layers must use kernel 4, stride 2, pad 1 to halve time exactly",
            ));
        }
        let o = &self.onoff;
        if o.stride1 * o.stride2 != TIME_MULTIPLE / 2 || o.stride2 != c.stride {
            return Err(Error::invalid(format!(
                "onset/offset strides {}x{} must reach decoder grids T/{} and T/{}",
                o.stride1,
                o.stride2,
                TIME_MULTIPLE / 4,
                TIME_MULTIPLE / 2
            )));
        }
        if o.kernel1 != o.stride1 || o.kernel2 != o.stride2 {
            return Err(Error::invalid("onset/offset kernels must equal their strides"));
        }
        for slope in [c.leaky_slope, o.leaky_slope, self.texture.leaky_slope] {
            if !(0.0..1.0).contains(&slope) {
                return Err(Error::invalid(format!("leaky slope {slope} outside [0, 1)")));
            }
        }
        let t = &self.texture;
        if t.kernel.is_multiple_of(2) {
            return Err(Error::invalid("TextureNet kernel must be odd to preserve time"));
        }
        if t.band_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "band schedule {:?} must be strictly increasing",
                t.band_schedule
            )));
        }
        for &k in &t.band_schedule {
            band_partition(c.out_channels(), k)?;
        }
        Ok(())
    }
}

/// Splits `[0, f)` into `k` contiguous ranges whose sizes differ by at most
/// one, larger ranges first.
pub fn band_partition(f: usize, k: usize) -> Result<Vec<Range<usize>>> {
    if k == 0 || k > f {
        return Err(Error::invalid(format!("cannot split {f} bins into {k} bands")));
    }
    let (base, extra) = (f / k, f % k);
    let mut start = 0;
    Ok((0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Smallest multiple of [`TIME_MULTIPLE`] that is at least `frames`, and at
/// least two multiples so the bottleneck keeps two frames for normalization.
pub fn padded_frames(frames: usize) -> usize {
    frames.div_ceil(TIME_MULTIPLE).max(2) * TIME_MULTIPLE
}
