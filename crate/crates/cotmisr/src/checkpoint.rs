//! Binary model checkpoints and optimizer state, all little-endian.
//!
//! Checkpoint: `"COTM"`, u16 version, u32 config length, canonical config
//! text, u32 tensor count, then per tensor: u32 name length, name bytes,
//! u32 rank, u32 extents, f32 data.
//!
//! State: `"COTS"`, u16 version, u64 next epoch, f64 best validation cPSNR,
//! u64 Adam step, u32 tensor count, then per tensor: u32 length, first
//! moments, second moments.

use std::fs;
use std::path::Path;

use cotmisr_core::model::{CotConfig, CotMisr, ModelParams};
use cotmisr_core::train::Adam;
use cotmisr_core::Tensor;

use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"COTM";
const STATE_MAGIC: &[u8; 4] = b"COTS";
const VERSION: u16 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("length fits in u32").to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, String> {
        let raw = self.take(n.checked_mul(4).ok_or("tensor too large")?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> std::result::Result<(), String> {
        if self.take(4)? != magic {
            return Err(format!("not a {} file", String::from_utf8_lossy(magic)));
        }
        match self.u16()? {
            VERSION => Ok(()),
            v => Err(format!("unsupported version {v}")),
        }
    }

    fn finish(&self) -> std::result::Result<(), String> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(format!("{} trailing bytes", self.bytes.len() - self.pos))
        }
    }
}

pub fn encode_checkpoint(cfg: &CotConfig, params: &ModelParams<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = cfg.to_text();
    put_u32(&mut out, text.len());
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, params.len());
    for p in params.iter() {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.rank());
        for &d in p.value.shape() {
            put_u32(&mut out, d);
        }
        put_f32s(&mut out, p.value.data());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<(CotMisr, ModelParams<f32>), String> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(MODEL_MAGIC)?;
    let len = r.u32()?;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| "config text is not UTF-8")?;
    let cfg = CotConfig::from_text(text).map_err(|e| format!("embedded config: {e}"))?;
    let model = CotMisr::new(cfg).map_err(|e| format!("embedded config: {e}"))?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u32()?;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("tensor too large")?;
        let data = r.f32s(numel)?;
        tensors.push((name, Tensor::new(shape, data).map_err(|e| e.to_string())?));
    }
    r.finish()?;
    let params = ModelParams::from_tensors(model.param_specs(), tensors).map_err(|e| e.to_string())?;
    Ok((model, params))
}

/// Writes via a temporary sibling so a crash never leaves a torn file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(path: &Path, cfg: &CotConfig, params: &ModelParams<f32>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(cfg, params))
}

pub fn load_checkpoint(path: &Path) -> Result<(CotMisr, ModelParams<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::data(path, format!("cannot read checkpoint: {e}")))?;
    decode_checkpoint(&bytes).map_err(|m| Error::data(path, m))
}

/// Everything besides the weights needed to continue a run bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub next_epoch: u64,
    pub best_cpsnr: f64,
    pub adam: Adam,
}

pub fn encode_state(state: &TrainState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(STATE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&state.next_epoch.to_le_bytes());
    out.extend_from_slice(&state.best_cpsnr.to_le_bytes());
    out.extend_from_slice(&state.adam.step.to_le_bytes());
    put_u32(&mut out, state.adam.m.len());
    for (m, v) in state.adam.m.iter().zip(&state.adam.v) {
        put_u32(&mut out, m.len());
        put_f32s(&mut out, m);
        put_f32s(&mut out, v);
    }
    out
}

pub fn decode_state(bytes: &[u8]) -> std::result::Result<TrainState, String> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(STATE_MAGIC)?;
    let next_epoch = r.u64()?;
    let best_cpsnr = r.f64()?;
    let step = r.u64()?;
    let count = r.u32()?;
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for _ in 0..count {
        let n = r.u32()?;
        m.push(r.f32s(n)?);
        v.push(r.f32s(n)?);
    }
    r.finish()?;
    Ok(TrainState { next_epoch, best_cpsnr, adam: Adam { step, m, v } })
}

pub fn save_state(path: &Path, state: &TrainState) -> Result<()> {
    write_atomic(path, &encode_state(state))
}

pub fn load_state(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::data(path, format!("cannot read training state: {e}")))?;
    decode_state(&bytes).map_err(|m| Error::data(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cotmisr_core::model::Architecture;
    use cotmisr_core::rng;

    fn toy() -> (CotMisr, ModelParams<f32>) {
        let cfg = CotConfig { k: 2, c_e: 8, arch: Architecture::parse("(1c1t)x1").unwrap(), ..CotConfig::default() };
        let mut cfg = cfg;
        cfg.tblock.heads = 2;
        cfg.tblock.ff_dim = 16;
        let model = CotMisr::new(cfg).unwrap();
        let params = model.init_params(&mut rng::stream(3, 0));
        (model, params)
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let (model, mut params) = toy();
        params.get_mut("encoder.reconstruct.conv.bias").unwrap().value.data_mut()[0] = -0.0;
        let bytes = encode_checkpoint(model.config(), &params);
        assert_eq!(&bytes[..4], b"COTM");
        let (m2, p2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(m2.config(), model.config());
        assert_eq!(encode_checkpoint(m2.config(), &p2), bytes);
    }

    #[test]
    fn damaged_checkpoints_are_rejected() {
        let (model, params) = toy();
        let bytes = encode_checkpoint(model.config(), &params);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).unwrap_err().contains("truncated"));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_checkpoint(&magic).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(decode_checkpoint(&version).unwrap_err().contains("version"));
    }

    #[test]
    fn state_round_trip() {
        let (_, params) = toy();
        let mut adam = Adam::new(&params);
        adam.step = 17;
        adam.m[0][0] = 0.25;
        adam.v[1][0] = 1e-9;
        let state = TrainState { next_epoch: 3, best_cpsnr: 31.5, adam };
        let bytes = encode_state(&state);
        assert_eq!(decode_state(&bytes).unwrap(), state);
        assert!(decode_state(&bytes[..10]).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (model, params) = toy();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, model.config(), &params).unwrap();
        let (_, back) = load_checkpoint(&p).unwrap();
        assert_eq!(back, params);
        assert_eq!(load_checkpoint(&dir.path().join("missing")).unwrap_err().exit_code(), 3);
    }
}
