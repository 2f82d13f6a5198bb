//! Binary checkpoints.
//!
//! Layout (little-endian): magic `BNMC`, `u32` version, `u32` tensor count,
//! then per tensor a `u16` name length, the UTF-8 name, a `u8` rank, `rank`
//! `u64` dims and the `f64` payload. A `u32`-length-prefixed UTF-8 JSON
//! trailer carries the run configuration text, layer indices, optimizer
//! scalars and the step counter.
//!
//! Tensor names are prefixed by role: `theta/`, `adam_m/`, `adam_v/`, `phi/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{OptimKind, OptimState};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BNMC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet,
    pub optimizer: Option<OptimState>,
    /// Hyperparameter generator, when the run has one.
    pub generator: Option<ParameterSet>,
    /// Completed training iterations.
    pub step: usize,
    /// Snapshot of the run configuration.
    pub config: String,
}

impl Checkpoint {
    pub fn new(params: ParameterSet, config: impl Into<String>) -> Self {
        Checkpoint {
            params,
            optimizer: None,
            generator: None,
            step: 0,
            config: config.into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct OptimMeta {
    kind: String,
    lr: f64,
    weight_decay: f64,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    config: String,
    step: usize,
    theta_layers: Vec<usize>,
    phi_layers: Option<Vec<usize>>,
    optimizer: Option<OptimMeta>,
}

fn layers(p: &ParameterSet) -> Vec<usize> {
    p.iter().map(|e| e.layer).collect()
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Serialised checkpoint bytes.
pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut tensors: Vec<(String, &Tensor)> = ck
        .params
        .iter()
        .map(|p| (format!("theta/{}", p.name), &p.tensor))
        .collect();
    let mut optimizer = None;
    if let Some(opt) = &ck.optimizer {
        let (m, v) = opt.moments();
        tensors.extend(m.iter().map(|p| (format!("adam_m/{}", p.name), &p.tensor)));
        tensors.extend(v.iter().map(|p| (format!("adam_v/{}", p.name), &p.tensor)));
        optimizer = Some(OptimMeta {
            kind: opt.kind.tag().into(),
            lr: opt.lr,
            weight_decay: opt.weight_decay,
            t: opt.steps(),
        });
    }
    if let Some(g) = &ck.generator {
        tensors.extend(g.iter().map(|p| (format!("phi/{}", p.name), &p.tensor)));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        put_tensor(&mut out, name, t)?;
    }
    let trailer = Trailer {
        config: ck.config.clone(),
        step: ck.step,
        theta_layers: layers(&ck.params),
        phi_layers: ck.generator.as_ref().map(layers),
        optimizer,
    };
    let text = serde_json::to_string(&trailer).expect("trailer serializes");
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn text(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = u16::from_le_bytes(self.array()?) as usize;
        let name = self.text(len)?;
        let rank = self.array::<1>()?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(
                usize::try_from(self.u64()?)
                    .map_err(|_| Error::Checkpoint("dimension overflow".into()))?,
            );
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|c| {
                c.checked_mul(8)
                    .is_some_and(|b| b <= self.buf.len() - self.pos)
            })
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` payload exceeds file")))?;
        let data = self
            .take(count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
        Ok((name, t))
    }
}

fn build(tensors: &[(String, Tensor)], prefix: &str, layer_of: &[usize]) -> Result<ParameterSet> {
    let mut p = ParameterSet::new();
    for (name, t) in tensors
        .iter()
        .filter_map(|(n, t)| n.strip_prefix(prefix).map(|n| (n, t)))
    {
        let layer = *layer_of
            .get(p.len())
            .ok_or_else(|| Error::Checkpoint(format!("no layer recorded for `{prefix}{name}`")))?;
        p.push(name, t.clone(), layer)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if p.len() != layer_of.len() {
        return Err(Error::Checkpoint(format!(
            "{} `{prefix}` tensors but {} layers",
            p.len(),
            layer_of.len()
        )));
    }
    Ok(p)
}

/// Parses checkpoint bytes; any damage is an error.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        tensors.push(r.tensor()?);
    }
    let len = r.u32()? as usize;
    let text = r.text(len)?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let trailer: Trailer =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("trailer: {e}")))?;
    let known = ["theta/", "adam_m/", "adam_v/", "phi/"];
    if let Some((n, _)) = tensors
        .iter()
        .find(|(n, _)| !known.iter().any(|k| n.starts_with(k)))
    {
        return Err(Error::Checkpoint(format!("unexpected tensor `{n}`")));
    }
    let params = build(&tensors, "theta/", &trailer.theta_layers)?;
    let optimizer = match trailer.optimizer {
        None => None,
        Some(o) => {
            let kind = match o.kind.as_str() {
                "adam" => OptimKind::Adam,
                "sgd" => OptimKind::Sgd,
                k => return Err(Error::Checkpoint(format!("unknown optimizer `{k}`"))),
            };
            let (m, v) = if kind == OptimKind::Adam {
                let m = build(&tensors, "adam_m/", &trailer.theta_layers)?;
                let v = build(&tensors, "adam_v/", &trailer.theta_layers)?;
                params
                    .check_layout(&m)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                (m, v)
            } else {
                (ParameterSet::new(), ParameterSet::new())
            };
            Some(
                OptimState::from_parts(kind, o.lr, o.weight_decay, m, v, o.t)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
            )
        }
    };
    let generator = trailer
        .phi_layers
        .map(|l| build(&tensors, "phi/", &l))
        .transpose()?;
    Ok(Checkpoint {
        params,
        optimizer,
        generator,
        step: trailer.step,
        config: trailer.config,
    })
}

/// Writes via a temporary file and rename, so readers never see a partial file.
pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ck)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
