//! Binary checkpoint: magic, format version, configuration, then each
//! parameter tensor (weights then bias, layer by layer) as a little-endian
//! `u64` length followed by little-endian `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{FcnConfig, FcnParams};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SCORENET";
const VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar>(params: &FcnParams<T>, mut out: impl Write) -> std::io::Result<()> {
    let c = params.config;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for v in [c.depth as u64, c.conv_channels as u64, c.deconv_channels as u64, c.seed] {
        out.write_all(&v.to_le_bytes())?;
    }
    for t in params.tensors() {
        out.write_all(&(t.len() as u64).to_le_bytes())?;
        for &v in t {
            out.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<T: Scalar>(mut input: impl Read) -> Result<FcnParams<T>> {
    let bad = |reason: String| Error::Parse(format!("checkpoint: {reason}"));
    let io = |e: std::io::Error| Error::Parse(format!("checkpoint: {e}"));
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut ver = [0u8; 4];
    input.read_exact(&mut ver).map_err(io)?;
    let ver = u32::from_le_bytes(ver);
    if ver != VERSION {
        return Err(bad(format!("unsupported version {ver}")));
    }
    let mut head = [0u64; 4];
    for h in &mut head {
        *h = read_u64(&mut input).map_err(io)?;
    }
    let config = FcnConfig {
        depth: head[0] as usize,
        conv_channels: head[1] as usize,
        deconv_channels: head[2] as usize,
        seed: head[3],
    };
    let mut params = FcnParams::<T>::zeros(config)?;
    for t in params.tensors_mut() {
        let len = read_u64(&mut input).map_err(io)? as usize;
        if len != t.len() {
            return Err(bad(format!("tensor of {len} values where {} expected", t.len())));
        }
        let mut buf = vec![0u8; 4 * len];
        input.read_exact(&mut buf).map_err(io)?;
        for (v, b) in t.iter_mut().zip(buf.chunks_exact(4)) {
            let x = f32::from_le_bytes(b.try_into().unwrap());
            if !x.is_finite() {
                return Err(bad("non-finite parameter".into()));
            }
            *v = T::from_f64_lossy(x as f64);
        }
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(params)
}

pub fn save_checkpoint<T: Scalar>(params: &FcnParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<FcnParams<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let p = FcnParams::<f32>::init(FcnConfig { depth: 4, conv_channels: 3, deconv_channels: 5, seed: 8 }).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&p, &mut bytes).unwrap();
        let q: FcnParams<f32> = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(p, q);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(load_checkpoint::<f32>(&path).unwrap(), p);
    }

    #[test]
    fn corrupt_inputs_fail() {
        let p = FcnParams::<f32>::init(FcnConfig { depth: 2, conv_channels: 2, deconv_channels: 2, seed: 0 }).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&p, &mut bytes).unwrap();
        assert!(read_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint::<f32>(&extra[..]).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(read_checkpoint::<f32>(&magic[..]).is_err());
    }
}
