//! Binary tensor archive.
//!
//! Layout: `"MSWT"`, u32 version, u32 tensor count, then per tensor a u16
//! name length, the UTF-8 name, a u8 rank, u32 extents and the values as
//! little-endian f64. All integers are little-endian.

use std::fs;
use std::path::Path;

use super::{ModelConfig, MswtModel, FUSION_LEVELS, NUM_STAGES};
use crate::error::{Error, Result};
use crate::fsf::AblationMode;
use crate::nn::FFN_EXPANSION;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MSWT";
pub const CHECKPOINT_VERSION: u32 = 1;
const META: &str = "meta.config";

pub fn encode_tensors(entries: &[(&str, &Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(entries.len()).map_err(|_| Error::invalid("too many tensors"))?.to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::invalid(format!("rank of {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| Error::invalid(format!("extent of {name}")))?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("bad magic, not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?.to_string();
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let bytes = n.and_then(|n| n.checked_mul(8)).ok_or_else(|| Error::Format(format!("{name}: shape overflow")))?;
        let data = r.take(bytes)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((name, Tensor::from_vec(data, &shape)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(out)
}

pub fn write_tensors(path: &Path, entries: &[(&str, &Tensor)]) -> Result<()> {
    fs::write(path, encode_tensors(entries)?)?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode_tensors(&fs::read(path)?)
}

fn config_tensor(c: &ModelConfig) -> Tensor {
    let mut v = vec![c.image_size, c.image_channels];
    v.extend(c.widths);
    v.push(c.blocks_per_stage);
    v.extend(c.dims);
    v.extend(c.heads);
    v.push(c.mode.index());
    v.push(FFN_EXPANSION);
    let n = v.len();
    Tensor::from_vec(v.into_iter().map(|x| x as f64).collect(), &[n]).expect("rank 1")
}

fn parse_config(t: &Tensor) -> Result<ModelConfig> {
    let bad = || Error::Format("malformed model configuration record".into());
    let expected = 2 + NUM_STAGES + 1 + 2 * FUSION_LEVELS + 2;
    if t.shape() != [expected] || t.data().iter().any(|v| v.fract() != 0.0 || *v < 0.0 || *v > 1e9) {
        return Err(bad());
    }
    let v: Vec<usize> = t.data().iter().map(|&x| x as usize).collect();
    if v[expected - 1] != FFN_EXPANSION {
        return Err(Error::Format(format!("checkpoint uses FFN expansion {}", v[expected - 1])));
    }
    let mut it = v.into_iter();
    let mut next = || it.next().expect("length checked");
    let image_size = next();
    let image_channels = next();
    let widths = std::array::from_fn(|_| next());
    let blocks_per_stage = next();
    let dims = std::array::from_fn(|_| next());
    let heads = std::array::from_fn(|_| next());
    let mode = AblationMode::from_index(next()).ok_or_else(bad)?;
    Ok(ModelConfig { image_size, image_channels, widths, blocks_per_stage, dims, heads, mode })
}

/// Writes configuration, parameters and batch-norm buffers.
pub fn save_checkpoint(model: &MswtModel, path: &Path) -> Result<()> {
    let meta = config_tensor(&model.config);
    let mut entries = vec![(META, &meta)];
    entries.extend(model.store.ids().map(|id| (model.store.name(id), model.store.get(id))));
    write_tensors(path, &entries)
}

pub fn load_checkpoint(path: &Path) -> Result<MswtModel> {
    let tensors = read_tensors(path)?;
    let (first, rest) = tensors.split_first().ok_or_else(|| Error::Format("empty checkpoint".into()))?;
    if first.0 != META {
        return Err(Error::Format(format!("expected {META} first, found {}", first.0)));
    }
    let config = parse_config(&first.1)?;
    let mut model = MswtModel::new(config, 0).map_err(|e| Error::Format(format!("invalid stored configuration: {e}")))?;
    let mut seen = vec![false; model.store.len()];
    for (name, t) in rest {
        let id = model.store.find(name).ok_or_else(|| Error::Format(format!("unknown tensor name {name}")))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
        model.store.set(id, t.clone()).map_err(|e| Error::Format(e.to_string()))?;
    }
    if let Some(missing) = model.store.ids().find(|id| !seen[id.index()]) {
        return Err(Error::Format(format!("missing tensor {}", model.store.name(missing))));
    }
    Ok(model)
}
