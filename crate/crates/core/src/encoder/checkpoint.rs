//! Versioned little-endian checkpoint container.
//!
//! ```text
//! "FASR" | version u32 | config (10 × u32) | tensor count u32 |
//!   per tensor: name len u32, name bytes, rank u32, dims u32 × rank, f32 × numel
//! ```
//! The dropout rate is stored as the bit pattern of its f32 value.

use std::io::{Read, Write};

use xxhash_rust::xxh3::xxh3_128;

use super::config::EncoderConfig;
use super::model::Encoder;
use super::params::Parameters;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FASR";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "checkpoint",
        reason: reason.into(),
    }
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| bad(format!("value {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn config_fields(c: &EncoderConfig) -> [u32; 10] {
    [
        c.input_len as u32,
        c.num_blocks as u32,
        c.hidden_dim as u32,
        c.intermediate_dim as u32,
        c.num_heads as u32,
        c.window as u32,
        c.embed_dim as u32,
        c.vocab_size as u32,
        c.dropout.to_bits(),
        c.tie_global_projections as u32,
    ]
}

pub fn write_checkpoint<W: Write>(mut w: W, enc: &Encoder) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in config_fields(&enc.config) {
        w.write_all(&v.to_le_bytes())?;
    }
    let named = enc.params.named();
    put_u32(&mut w, named.len())?;
    for (name, t) in named {
        put_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, t.dims().len())?;
        for &d in t.dims() {
            put_u32(&mut w, d)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Encoder> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("missing magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = get_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut f = [0u32; 10];
    for v in f.iter_mut() {
        *v = get_u32(&mut r)?;
    }
    let config = EncoderConfig {
        input_len: f[0] as usize,
        num_blocks: f[1] as usize,
        hidden_dim: f[2] as usize,
        intermediate_dim: f[3] as usize,
        num_heads: f[4] as usize,
        window: f[5] as usize,
        embed_dim: f[6] as usize,
        vocab_size: f[7] as usize,
        dropout: f32::from_bits(f[8]),
        tie_global_projections: f[9] != 0,
    };
    config.validate().map_err(|e| bad(e.to_string()))?;
    let mut params = Parameters::zeros(&config);
    let names = params.names();
    let count = get_u32(&mut r)? as usize;
    if count != names.len() {
        return Err(bad(format!("expected {} tensors, found {count}", names.len())));
    }
    for (want, slot) in names.iter().zip(params.tensors_mut()) {
        let len = get_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| bad("truncated tensor name"))?;
        if name != want.as_bytes() {
            return Err(bad(format!(
                "expected tensor {want}, found {}",
                String::from_utf8_lossy(&name)
            )));
        }
        let rank = get_u32(&mut r)? as usize;
        let dims = (0..rank)
            .map(|_| get_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims != slot.dims() {
            return Err(bad(format!("tensor {want} has shape {dims:?}, expected {:?}", slot.dims())));
        }
        let mut bytes = vec![0u8; slot.len() * 4];
        r.read_exact(&mut bytes).map_err(|_| bad(format!("truncated data for {want}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        *slot = Tensor::from_vec(&dims, data).expect("shape checked");
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Encoder::from_parts(config, params)
}

/// 128-bit content fingerprint of a serialized checkpoint.
pub fn fingerprint(enc: &Encoder) -> u128 {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, enc).expect("in-memory write");
    xxh3_128(&buf)
}
