//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `ASRFM`, `u32` version, a config block of
//! six `u32` (input_dim, num_classes, channels, layers, asb_stages,
//! brb_stages) followed by the dropout rate as `f32`, a `u32` tensor count,
//! then per tensor: `u32` name length, name bytes (UTF-8), `u32` rank,
//! `rank` x `u32` dims, and the `f32` values.

use std::fs;
use std::path::Path;

use super::{AsrfModel, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"ASRFM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(model: &AsrfModel<f32>) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::new();
    let put = |v: u32, out: &mut Vec<u8>| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put(CHECKPOINT_VERSION, &mut out);
    for v in [
        cfg.input_dim,
        cfg.num_classes,
        cfg.channels,
        cfg.layers,
        cfg.asb_stages,
        cfg.brb_stages,
    ] {
        put(v as u32, &mut out);
    }
    out.extend_from_slice(&(cfg.dropout as f32).to_le_bytes());
    put(model.params().len() as u32, &mut out);
    for p in model.params().iter() {
        put(p.name.len() as u32, &mut out);
        out.extend_from_slice(p.name.as_bytes());
        put(p.dims.len() as u32, &mut out);
        for &d in &p.dims {
            put(d as u32, &mut out);
        }
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("unexpected end of file reading {n} bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<AsrfModel<f32>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    if r.take(5)? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return Err(r.fail("bad magic, expected \"ASRFM\""));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = ModelConfig {
        input_dim: dims[0],
        num_classes: dims[1],
        channels: dims[2],
        layers: dims[3],
        asb_stages: dims[4],
        brb_stages: dims[5],
        dropout: r.f32()? as f64,
    };
    let mut model = AsrfModel::<f32>::zeros(config).map_err(|e| r.fail(e.to_string()))?;
    let count = r.u32()? as usize;
    if count != model.params().len() {
        return Err(r.fail(format!(
            "checkpoint has {count} tensors, configuration implies {}",
            model.params().len()
        )));
    }
    for p in model.params_mut().iter_mut() {
        let len = r.u32()? as usize;
        let raw = r.take(len)?.to_vec();
        let name = String::from_utf8(raw).map_err(|_| r.fail("tensor name is not UTF-8"))?;
        if name != p.name {
            return Err(r.fail(format!("expected tensor '{}', found '{name}'", p.name)));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if shape != p.dims {
            return Err(r.fail(format!(
                "tensor '{name}' has dims {shape:?}, expected {:?}",
                p.dims
            )));
        }
        for v in &mut p.value {
            *v = r.f32()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save(path: &Path, model: &AsrfModel<f32>) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<AsrfModel<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> AsrfModel<f32> {
        let cfg = ModelConfig {
            channels: 5,
            layers: 3,
            asb_stages: 2,
            brb_stages: 1,
            ..ModelConfig::new(4, 3)
        };
        AsrfModel::new(cfg, 17).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let m = model();
        let bytes = encode(&m);
        assert_eq!(&bytes[..5], b"ASRFM");
        let back = decode(&bytes, Path::new("m.ckpt")).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.params(), m.params());
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let bytes = encode(&model());
        let err = decode(&bytes[..bytes.len() - 2], Path::new("m.ckpt")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("m.ckpt"));

        let mut bad = bytes.clone();
        bad[5] = 9;
        assert!(matches!(
            decode(&bad, Path::new("m")),
            Err(Error::Format { offset: 9, .. })
        ));

        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra, Path::new("m")).is_err());
    }
}
