//! Per-modality feature files.
//!
//! ```text
//! "MMFE"  version:u32  modality:u8  c:u32  t_full:u32  dtype:u8 (0 = f32)
//! payload: c * t_full f32 LE, row-major
//! crc64:u64 (CRC-64/XZ over everything before it)
//! ```

use std::path::Path;

use crate::{Error, FeatureMap, Modality, Result, CRC64};

pub const FEATURE_MAGIC: &[u8; 4] = b"MMFE";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 1;

pub fn encode_feature_file(modality: Modality, map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * map.data().len() + 8);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(modality.tag());
    out.extend_from_slice(&(map.channels() as u32).to_le_bytes());
    out.extend_from_slice(&(map.segments() as u32).to_le_bytes());
    out.push(DTYPE_F32);
    for &v in map.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let crc = CRC64.checksum(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_feature_file(bytes: &[u8], path: &Path) -> Result<(Modality, FeatureMap)> {
    let bad = |detail: String| Error::Format { path: path.into(), detail };
    if bytes.len() < HEADER_LEN + 8 {
        return Err(bad(format!("file too short ({} bytes)", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if &body[..4] != FEATURE_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let modality = Modality::from_tag(body[8]).ok_or_else(|| bad(format!("unknown modality tag {}", body[8])))?;
    let (c, t_full) = (u32_at(9) as usize, u32_at(13) as usize);
    if body[17] != DTYPE_F32 {
        return Err(bad(format!("unsupported dtype {}", body[17])));
    }
    let payload = &body[HEADER_LEN..];
    if payload.len() != 4 * c * t_full {
        return Err(bad(format!("payload is {} bytes, expected {}", payload.len(), 4 * c * t_full)));
    }
    if CRC64.checksum(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::Checksum { path: path.into() });
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
    let map = FeatureMap::new(c, t_full, data).map_err(|e| bad(e.to_string()))?;
    Ok((modality, map))
}

pub fn write_feature_file(path: &Path, modality: Modality, map: &FeatureMap) -> Result<()> {
    std::fs::write(path, encode_feature_file(modality, map)).map_err(Error::io(path))
}

pub fn read_feature_file(path: &Path) -> Result<(Modality, FeatureMap)> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode_feature_file(&bytes, path)
}
