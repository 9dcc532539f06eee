//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SPLB" | version: u32 | header_len: u64 | header: canonical JSON
//! then, until EOF, per tensor:
//!   name_len: u32 | name (UTF-8) | rank: u32 | dims: u64 × rank | payload
//! ```
//!
//! The header holds the architecture spec, the init seed, and mask metadata.
//! Payloads are `f32` except tensors named `<weight>.mask`, stored as `u8`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, ArchSpec, Model, RunningStats};
use crate::error::{Error, Result};
use crate::sparsity::{MaskSet, Schedule};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SPLB";
pub const VERSION: u32 = 1;
const MASK_SUFFIX: &str = ".mask";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: ArchSpec,
    seed: u64,
    masks: Option<MaskMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskMeta {
    keep_fraction: f64,
    seed: u64,
    schedule: Schedule,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], payload: impl FnOnce(&mut Vec<u8>)) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    payload(out);
}

fn put_f32(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    put_tensor(out, name, shape, |o| {
        for v in data {
            o.extend_from_slice(&v.to_le_bytes());
        }
    });
}

/// Serializes a model and optional masks.
pub fn encode(model: &Model, masks: Option<&MaskSet>) -> Result<Vec<u8>> {
    if let Some(m) = masks {
        m.check_matches(model)?;
    }
    let header = Header {
        spec: model.spec().clone(),
        seed: model.seed(),
        masks: masks.map(|m| MaskMeta {
            keep_fraction: m.keep_fraction(),
            seed: m.seed(),
            schedule: m.schedule(),
        }),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (spec, t) in model.param_specs().iter().zip(model.params()) {
        put_f32(&mut out, &spec.name, t.shape(), t.data());
    }
    for r in model.running_stats() {
        put_f32(&mut out, &format!("{}.running_mean", r.name), &[r.mean.len()], &r.mean);
        put_f32(&mut out, &format!("{}.running_var", r.name), &[r.var.len()], &r.var);
    }
    if let Some(m) = masks {
        for (name, t) in m.names().iter().zip(m.masks()) {
            put_tensor(&mut out, &format!("{name}{MASK_SUFFIX}"), t.shape(), |o| {
                o.extend(t.data().iter().map(|&v| v as u8));
            });
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Parses a checkpoint produced by [`encode`].
pub fn decode(buf: &[u8]) -> Result<(Model, Option<MaskSet>)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic (expected \"SPLB\")"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let len = r.u64("header length")? as usize;
    let header_at = r.pos as u64;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| Error::format(header_at, format!("bad header: {e}")))?;
    let mut model = build_model(&header.spec, header.seed)?;

    let mut params: Vec<Option<Tensor>> = vec![None; model.params().len()];
    let mut running: Vec<RunningStats> = model.running_stats().to_vec();
    let mut seen_stats = vec![[false; 2]; running.len()];
    let weight_names: Vec<String> = model
        .weight_indices()
        .into_iter()
        .map(|i| model.param_specs()[i].name.clone())
        .collect();
    let mut masks: Vec<Option<Tensor>> = vec![None; weight_names.len()];

    while !r.done() {
        let at = r.pos as u64;
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        if let Some(base) = name.strip_suffix(MASK_SUFFIX) {
            let bytes = r.take(n, "mask payload")?;
            let slot = weight_names
                .iter()
                .position(|w| w == base)
                .ok_or_else(|| Error::format(at, format!("mask for unknown weight {base}")))?;
            let t = Tensor::from_raw(&shape, bytes.iter().map(|&b| b as f32).collect())
                .map_err(|e| Error::format(at, e.to_string()))?;
            masks[slot] = Some(t);
            continue;
        }
        let bytes = r.take(n * 4, "tensor payload")?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = model.param_index(&name) {
            let t = Tensor::from_raw(&shape, data).map_err(|e| Error::format(at, e.to_string()))?;
            params[i] = Some(t);
            continue;
        }
        let stat = running.iter().position(|s| {
            name == format!("{}.running_mean", s.name) || name == format!("{}.running_var", s.name)
        });
        match stat {
            Some(i) if data.len() == running[i].mean.len() => {
                if name.ends_with("_mean") {
                    running[i].mean = data;
                    seen_stats[i][0] = true;
                } else {
                    running[i].var = data;
                    seen_stats[i][1] = true;
                }
            }
            _ => return Err(Error::format(at, format!("unexpected tensor {name} {shape:?}"))),
        }
    }

    let params: Vec<Tensor> = params
        .into_iter()
        .zip(model.param_specs())
        .map(|(p, s)| p.ok_or_else(|| Error::format(buf.len() as u64, format!("missing tensor {}", s.name))))
        .collect::<Result<_>>()?;
    if seen_stats.iter().any(|s| !s[0] || !s[1]) {
        return Err(Error::format(buf.len() as u64, "missing running statistics"));
    }
    model.load_state(params, running)?;

    let masks = match header.masks {
        None => None,
        Some(meta) => {
            let tensors: Vec<Tensor> = masks
                .into_iter()
                .zip(&weight_names)
                .map(|(m, n)| m.ok_or_else(|| Error::format(buf.len() as u64, format!("missing mask {n}"))))
                .collect::<Result<_>>()?;
            let set = MaskSet::new(weight_names, tensors, meta.keep_fraction, meta.seed, meta.schedule)?;
            set.check_matches(&model)?;
            Some(set)
        }
    };
    Ok((model, masks))
}

pub fn save(path: &Path, model: &Model, masks: Option<&MaskSet>) -> Result<()> {
    let bytes = encode(model, masks)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model, Option<MaskSet>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
