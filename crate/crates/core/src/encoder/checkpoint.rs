//! Model checkpoint format.
//!
//! ```text
//! "TCBPMDL"  version:u32  method:u8  sampling:u8
//! n_modalities:u8  { tag:u8  channels:u32 } * n
//! t:u32  reduce_dim:u32  sketch_dim:u32  hidden_dim:u32  out_dim:u32  seed:u64
//! sketch_len:u32  sketch blob (0 bytes for non-sketch methods)
//! n_params:u32  { rows:u32  cols:u32  f32 LE row-major } * n
//! crc64:u64   (CRC-64/XZ over everything before it)
//! ```
//! All integers are little-endian.

use std::path::Path;

use super::{EncoderModel, EncodingMethod, ModelConfig, Sampling};
use crate::sketch::SketchParams;
use crate::{Error, Modality, Result, CRC64};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"TCBPMDL";
const VERSION: u32 = 1;

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(truncated)?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn truncated() -> Error {
    format_err("truncated checkpoint")
}

fn format_err(detail: &str) -> Error {
    Error::Format { path: "<checkpoint>".into(), detail: detail.to_string() }
}

impl EncoderModel {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let cfg = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(cfg.method.tag());
        out.push(cfg.sampling.tag());
        out.push(cfg.modalities.len() as u8);
        for &(m, c) in &cfg.modalities {
            out.push(m.tag());
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        for v in [cfg.t, cfg.reduce_dim, cfg.sketch_dim, cfg.hidden_dim, cfg.out_dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&cfg.seed.to_le_bytes());
        let blob = self.sketch.as_ref().map(SketchParams::to_bytes).unwrap_or_default();
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(&blob);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.value.rows as u32).to_le_bytes());
            out.extend_from_slice(&(p.value.cols as u32).to_le_bytes());
            for &v in &p.value.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let crc = CRC64.checksum(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Only the parameter tensors, as they appear on disk. Useful for comparing
    /// the learned state of two models whose headers differ.
    pub fn parameter_bytes(&self) -> Vec<u8> {
        self.params.iter().flat_map(|p| p.value.data.iter().flat_map(|&v| (v as f32).to_le_bytes())).collect()
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
            return Err(truncated());
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if CRC64.checksum(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::Checksum { path: "<checkpoint>".into() });
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(7)? != CHECKPOINT_MAGIC {
            return Err(format_err("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format_err(&format!("unsupported version {version}")));
        }
        let method = EncodingMethod::from_tag(r.u8()?).ok_or_else(|| format_err("unknown method"))?;
        let sampling = Sampling::from_tag(r.u8()?).ok_or_else(|| format_err("unknown sampling"))?;
        let n_mod = r.u8()? as usize;
        let mut modalities = Vec::with_capacity(n_mod);
        for _ in 0..n_mod {
            let m = Modality::from_tag(r.u8()?).ok_or_else(|| format_err("unknown modality tag"))?;
            modalities.push((m, r.u32()? as usize));
        }
        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            *d = r.u32()? as usize;
        }
        let seed = r.u64()?;
        let [t, reduce_dim, sketch_dim, hidden_dim, out_dim] = dims;
        let config = ModelConfig { method, modalities, t, sampling, reduce_dim, sketch_dim, hidden_dim, out_dim, seed };
        let mut model = EncoderModel::new(config)?;

        let blob_len = r.u32()? as usize;
        let blob = r.take(blob_len)?;
        match &model.sketch {
            Some(sk) => {
                if SketchParams::from_bytes(blob)? != *sk {
                    return Err(format_err("stored sketch does not match the model configuration"));
                }
            }
            None if blob_len != 0 => return Err(format_err("unexpected sketch blob")),
            None => {}
        }

        let n_params = r.u32()? as usize;
        if n_params != model.params.len() {
            return Err(format_err(&format!("expected {} tensors, found {n_params}", model.params.len())));
        }
        for p in model.params.iter_mut() {
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            if (rows, cols) != p.value.shape() {
                return Err(format_err(&format!(
                    "{}: stored shape {rows}x{cols}, expected {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
            let raw = r.take(rows * cols * 4)?;
            for (dst, chunk) in p.value.data.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            }
        }
        if r.pos != body.len() {
            return Err(format_err("trailing bytes"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        Self::from_checkpoint_bytes(&bytes).map_err(|e| match e {
            Error::Format { detail, .. } => Error::Format { path: path.into(), detail },
            Error::Checksum { .. } => Error::Checksum { path: path.into() },
            other => other,
        })
    }
}
