use std::path::Path;

use crate::container::Container;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PerformanceNet};
use crate::tensor::Tensor;

/// Entries with this prefix carry configuration, not parameters.
pub const META_PREFIX: &str = "meta.";

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn meta_usizes(c: &Container, key: &str) -> Result<Vec<usize>> {
    let e = c.require(&format!("{META_PREFIX}{key}"))?;
    e.data
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(err(format!("{META_PREFIX}{key}: {v} is not a count")))
            }
        })
        .collect()
}

/// Parameters plus architecture metadata and optional normalization stats.
pub fn checkpoint_container(net: &PerformanceNet<f32>, norm: Option<NormStats>) -> Result<Container> {
    let cfg = net.config();
    let as_f32 = |v: &[usize]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
    let mut c = Container::new();
    let mut meta = |key: &str, values: Vec<f32>| c.push(format!("{META_PREFIX}{key}"), vec![values.len()], values);
    meta("in_channels", vec![cfg.contour.in_channels as f32])?;
    meta("encoder_channels", as_f32(&cfg.contour.encoder_channels))?;
    meta("decoder_channels", as_f32(&cfg.contour.decoder_channels))?;
    meta("onoff_width", vec![cfg.onoff.width as f32])?;
    meta("band_schedule", as_f32(&cfg.texture.band_schedule))?;
    if let Some(s) = norm {
        meta("norm", vec![s.mean as f32, s.std as f32])?;
    }
    for (_, p) in net.params().iter() {
        c.push(p.name(), p.value().shape().to_vec(), p.value().data().to_vec())?;
    }
    Ok(c)
}

pub fn config_from_container(c: &Container) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    cfg.contour.in_channels = meta_usizes(c, "in_channels")?.first().copied().unwrap_or(0);
    cfg.contour.encoder_channels = meta_usizes(c, "encoder_channels")?;
    cfg.contour.decoder_channels = meta_usizes(c, "decoder_channels")?;
    cfg.onoff.width = meta_usizes(c, "onoff_width")?.first().copied().unwrap_or(0);
    cfg.texture.band_schedule = meta_usizes(c, "band_schedule")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn norm_from_container(c: &Container) -> Result<Option<NormStats>> {
    match c.get(&format!("{META_PREFIX}norm")) {
        None => Ok(None),
        Some(e) if e.data.len() == 2 => Ok(Some(NormStats::new(f64::from(e.data[0]), f64::from(e.data[1]))?)),
        Some(e) => Err(err(format!("{META_PREFIX}norm has {} values, expected 2", e.data.len()))),
    }
}

/// Copies every parameter from `c` into `net`, checking names and shapes
/// against the model's registry.
pub fn load_into(net: &mut PerformanceNet<f32>, c: &Container) -> Result<()> {
    let store = net.params_mut();
    let mut seen = 0;
    for e in c.iter().filter(|e| !e.name.starts_with(META_PREFIX)) {
        let id = store
            .id(&e.name)
            .ok_or_else(|| err(format!("unknown parameter {:?}", e.name)))?;
        let want = store.get(id).value().shape();
        if want != e.shape.as_slice() {
            return Err(err(format!(
                "shape mismatch for parameter {:?}: checkpoint has {:?}, model expects {:?}",
                e.name, e.shape, want
            )));
        }
        store.set_value(id, Tensor::new(e.shape.clone(), e.data.clone())?)?;
        seen += 1;
    }
    if seen != store.len() {
        let missing = store
            .iter()
            .find(|(_, p)| c.get(p.name()).is_none())
            .map(|(_, p)| p.name().to_string())
            .unwrap_or_default();
        return Err(err(format!("checkpoint lacks parameter {missing:?}")));
    }
    Ok(())
}

pub fn save_checkpoint(net: &PerformanceNet<f32>, norm: Option<NormStats>, path: &Path) -> Result<()> {
    checkpoint_container(net, norm)?.save(path)
}

/// Rebuilds the model described by the checkpoint's metadata and loads it.
pub fn load_checkpoint(path: &Path) -> Result<(PerformanceNet<f32>, Option<NormStats>)> {
    let c = Container::load(path)?;
    let mut net = PerformanceNet::new(config_from_container(&c)?, 0)?;
    load_into(&mut net, &c)?;
    Ok((net, norm_from_container(&c)?))
}
