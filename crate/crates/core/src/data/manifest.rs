use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::NormStats;
use crate::error::{Error, Result};

const HEADER: &str = "# performancenet dataset manifest v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipEntry {
    pub id: String,
    pub instrument: String,
    pub split: Split,
    pub midi_path: String,
    pub wav_path: String,
}

/// Line-oriented, tab-separated description of a prepared dataset:
///
/// ```text
/// overlap <instrument> <seconds>
/// clip    <id> <instrument> <train|val> <midi path> <wav path>
/// stats   <mean> <std>
/// chunk   <index> <clip id> <start seconds>
/// ```
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub overlaps: BTreeMap<String, f64>,
    pub clips: Vec<ClipEntry>,
    pub stats: Option<NormStats>,
    /// `(clip id, start seconds)` of every stored chunk, in storage order.
    pub chunks: Vec<(String, f64)>,
}

fn field_ok(s: &str) -> bool {
    !s.is_empty() && s.is_ascii() && !s.contains(['\t', '\n', '\r'])
}

impl DatasetManifest {
    pub fn split_of(&self, clip_id: &str) -> Option<Split> {
        self.clips.iter().find(|c| c.id == clip_id).map(|c| c.split)
    }

    /// Indices of stored chunks whose clip is on `side`.
    pub fn chunk_indices(&self, side: Split) -> Vec<usize> {
        self.chunks
            .iter()
            .enumerate()
            .filter(|(_, (id, _))| self.split_of(id) == Some(side))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("{HEADER}\n");
        for (inst, o) in &self.overlaps {
            if !field_ok(inst) {
                return Err(Error::Data(format!("instrument name {inst:?} is not a plain ASCII field")));
            }
            writeln!(out, "overlap\t{inst}\t{o}").expect("string write");
        }
        for c in &self.clips {
            for f in [&c.id, &c.instrument, &c.midi_path, &c.wav_path] {
                if !field_ok(f) {
                    return Err(Error::Data(format!("manifest field {f:?} is not a plain ASCII field")));
                }
            }
            writeln!(
                out,
                "clip\t{}\t{}\t{}\t{}\t{}",
                c.id,
                c.instrument,
                c.split.as_str(),
                c.midi_path,
                c.wav_path
            )
            .expect("string write");
        }
        if let Some(s) = self.stats {
            writeln!(out, "stats\t{}\t{}", s.mean, s.std).expect("string write");
        }
        for (i, (id, start)) in self.chunks.iter().enumerate() {
            writeln!(out, "chunk\t{i}\t{id}\t{start}").expect("string write");
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::Data(format!("manifest line {}: {what}", n + 1));
            let f: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad(&format!("bad number {s:?}"))) };
            match (f[0], f.len()) {
                ("overlap", 3) => {
                    m.overlaps.insert(f[1].to_string(), num(f[2])?);
                }
                ("clip", 6) => {
                    let split = match f[3] {
                        "train" => Split::Train,
                        "val" => Split::Val,
                        other => return Err(bad(&format!("unknown split {other:?}"))),
                    };
                    m.clips.push(ClipEntry {
                        id: f[1].to_string(),
                        instrument: f[2].to_string(),
                        split,
                        midi_path: f[4].to_string(),
                        wav_path: f[5].to_string(),
                    });
                }
                ("stats", 3) => m.stats = Some(NormStats::new(num(f[1])?, num(f[2])?)?),
                ("chunk", 4) => {
                    let idx: usize = f[1].parse().map_err(|_| bad("bad chunk index"))?;
                    if idx != m.chunks.len() {
                        return Err(bad("chunk indices must be consecutive from 0"));
                    }
                    m.chunks.push((f[2].to_string(), num(f[3])?));
                }
                _ => return Err(bad(&format!("unrecognized record {:?}", f[0]))),
            }
        }
        for (id, _) in &m.chunks {
            if m.split_of(id).is_none() {
                return Err(Error::Data(format!("chunk refers to unknown clip {id:?}")));
            }
        }
        Ok(m)
    }
}
