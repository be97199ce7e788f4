//! Weight file format: magic `GCNN`, little-endian, f64 payloads.
//!
//! # Layout
//!
//! * magic `b"GCNN"`, then `u16` version (currently 1)
//! * 13 `u32` config fields: in_channels, doppler_bins, time_steps,
//!   fuse kernel h/w, pool h/w, embed_dim, gate_taps, content_channels,
//!   cascade kernel h/w, num_classes
//! * 18 tensor records in `WEIGHT_NAMES` order: `u16` name length, name
//!   bytes, `u8` rank, rank `u32` extents, then row-major `f64` values
//!
//! Values are stored as f64 regardless of the in-memory scalar type, so
//! loading with the same type round-trips bit for bit for f64 and
//! value-exactly for f32.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::config::GateCnnConfig;
use super::weights::{expected_extents, ModelWeights};

const MAGIC: &[u8; 4] = b"GCNN";
const VERSION: u16 = 1;

/// Serializes a config and its weights.
pub fn weights_to_bytes<T: Real>(cfg: &GateCnnConfig, w: &ModelWeights<T>) -> Result<Vec<u8>> {
    w.validate(cfg)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for field in config_fields(cfg) {
        let v = u32::try_from(field)
            .map_err(|_| Error::Format(format!("config field {field} exceeds u32 range")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (name, extents, data) in w.entries() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(extents.len() as u8);
        for e in &extents {
            let v = u32::try_from(*e)
                .map_err(|_| Error::Format(format!("extent {e} exceeds u32 range")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        for x in data {
            out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a weight file produced by [`weights_to_bytes`].
pub fn weights_from_bytes<T: Real>(bytes: &[u8]) -> Result<(GateCnnConfig, ModelWeights<T>)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported weight file version {version}")));
    }
    let mut fields = [0usize; 13];
    for f in &mut fields {
        *f = r.u32()? as usize;
    }
    let cfg = GateCnnConfig {
        in_channels: fields[0],
        doppler_bins: fields[1],
        time_steps: fields[2],
        fuse_kernel: (fields[3], fields[4]),
        pool: (fields[5], fields[6]),
        embed_dim: fields[7],
        gate_taps: fields[8],
        content_channels: fields[9],
        cascade_kernel: (fields[10], fields[11]),
        num_classes: fields[12],
    };
    cfg.validate().map_err(|e| Error::Format(format!("stored config is invalid: {e}")))?;

    let mut w = ModelWeights::<T>::zeros(&cfg)?;
    {
        let expected = expected_extents(&cfg);
        let mut slots = w.entries_mut();
        for ((exp_name, exp_extents), slot) in expected.iter().zip(slots.iter_mut()) {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            if name != *exp_name {
                return Err(Error::Format(format!(
                    "tensor {name:?} out of order, expected {exp_name:?}"
                )));
            }
            let rank = r.u8()? as usize;
            let mut extents = Vec::with_capacity(rank);
            for _ in 0..rank {
                extents.push(r.u32()? as usize);
            }
            if extents != *exp_extents {
                return Err(Error::Format(format!(
                    "tensor {name} has extents {extents:?}, config implies {exp_extents:?}"
                )));
            }
            for x in slot.iter_mut() {
                *x = T::from_f64_lossy(r.f64()?);
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    w.validate(&cfg)?;
    Ok((cfg, w))
}

pub fn save_weights<T: Real>(
    path: &Path,
    cfg: &GateCnnConfig,
    w: &ModelWeights<T>,
) -> Result<()> {
    fs::write(path, weights_to_bytes(cfg, w)?)?;
    Ok(())
}

pub fn load_weights<T: Real>(path: &Path) -> Result<(GateCnnConfig, ModelWeights<T>)> {
    weights_from_bytes(&fs::read(path)?)
}

fn config_fields(cfg: &GateCnnConfig) -> [usize; 13] {
    [
        cfg.in_channels,
        cfg.doppler_bins,
        cfg.time_steps,
        cfg.fuse_kernel.0,
        cfg.fuse_kernel.1,
        cfg.pool.0,
        cfg.pool.1,
        cfg.embed_dim,
        cfg.gate_taps,
        cfg.content_channels,
        cfg.cascade_kernel.0,
        cfg.cascade_kernel.1,
        cfg.num_classes,
    ]
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated file: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_exact() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 77).unwrap();
        let bytes = weights_to_bytes(&cfg, &w).unwrap();
        let (cfg2, w2) = weights_from_bytes::<f64>(&bytes).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(w, w2);
        let bytes2 = weights_to_bytes(&cfg2, &w2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn file_size_is_deterministic() {
        // Header 4+2+52, then per tensor: 2 + name + 1 + 4*rank + 8*len.
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 1).unwrap();
        let bytes = weights_to_bytes(&cfg, &w).unwrap();
        let names: usize = w.entries().iter().map(|(n, _, _)| n.len()).sum();
        let ranks: usize = w.entries().iter().map(|(_, e, _)| e.len()).sum();
        let expected = 58 + 18 * 3 + names + 4 * ranks + 8 * 2678;
        assert_eq!(bytes.len(), expected);
    }

    #[test]
    fn rejects_corruption() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 5).unwrap();
        let good = weights_to_bytes(&cfg, &w).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(weights_from_bytes::<f64>(&bad_magic).is_err());

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(weights_from_bytes::<f64>(&bad_version).is_err());

        let truncated = &good[..good.len() - 3];
        assert!(weights_from_bytes::<f64>(truncated).is_err());

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(weights_from_bytes::<f64>(&trailing).is_err());

        // NaN payload: first f64 after the first tensor header
        // (4+2+52 header, 2+4 name, 1 rank byte, 4*4 extents).
        let mut nan_payload = good;
        let off = 58 + 2 + 4 + 1 + 16;
        nan_payload[off..off + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(weights_from_bytes::<f64>(&nan_payload).is_err());
    }

    #[test]
    fn file_round_trip_on_disk() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 13).unwrap();
        let dir = std::env::temp_dir().join(format!("gatecnn-io-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.gcnn");
        save_weights(&path, &cfg, &w).unwrap();
        let (cfg2, w2) = load_weights::<f64>(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(w, w2);
        std::fs::remove_dir_all(&dir).ok();
    }
}
