//! Parameter files: `"MGNP"`, version, config block, then every tensor as raw
//! little-endian f64 in declaration order.

use std::fs;
use std::path::Path;

use super::{init_params, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};

pub const PARAMS_MAGIC: &[u8; 4] = b"MGNP";
const PARAMS_VERSION: u32 = 1;

pub(crate) fn write_params_into(params: &ModelParams, w: &mut ByteWriter) {
    let c = &params.config;
    w.bytes(PARAMS_MAGIC);
    w.u32(PARAMS_VERSION);
    for v in [c.message_passing_steps, c.latent, c.node_in, c.edge_in, c.node_out, c.hidden_layers] {
        w.u32(v as u32);
    }
    w.u8(c.layer_norm as u8);
    for (_, t) in params.tensors() {
        w.f64s(t);
    }
}

pub(crate) fn read_params_from(r: &mut ByteReader<'_>) -> Result<ModelParams> {
    r.magic(PARAMS_MAGIC)?;
    let at = r.offset();
    let version = r.u32("params version")?;
    if version != PARAMS_VERSION {
        return Err(Error::format(at, format!("unsupported params version {version}")));
    }
    let at = r.offset();
    let mut f = [0usize; 6];
    for v in &mut f {
        *v = r.u32("model config")? as usize;
    }
    let ln_at = r.offset();
    let layer_norm = match r.u8("layer norm flag")? {
        0 => false,
        1 => true,
        b => return Err(Error::format(ln_at, format!("layer norm flag {b} is not 0 or 1"))),
    };
    let config = ModelConfig {
        message_passing_steps: f[0],
        latent: f[1],
        node_in: f[2],
        edge_in: f[3],
        node_out: f[4],
        hidden_layers: f[5],
        layer_norm,
    };
    config
        .validate()
        .map_err(|e| Error::format(at, format!("invalid config block: {e}")))?;
    let mut params = init_params(&config, 0)?;
    for t in params.tensors_mut() {
        let vals = r.f64s(t.len(), "tensor data")?;
        t.copy_from_slice(&vals);
    }
    Ok(params)
}

pub fn encode_params(params: &ModelParams) -> Vec<u8> {
    let mut w = ByteWriter::default();
    write_params_into(params, &mut w);
    w.buf
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = ByteReader::new(bytes);
    let p = read_params_from(&mut r)?;
    r.finish()?;
    Ok(p)
}

pub fn write_params(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            message_passing_steps: 2,
            latent: 5,
            node_in: 4,
            edge_in: 3,
            node_out: 2,
            hidden_layers: 2,
            layer_norm: true,
        }
    }

    #[test]
    fn round_trip_bit_exact() {
        let p = init_params(&cfg(), 42).unwrap();
        let bytes = encode_params(&p);
        let q = decode_params(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(encode_params(&q), bytes);
    }

    #[test]
    fn corrupted_header() {
        let mut bytes = encode_params(&init_params(&cfg(), 1).unwrap());
        assert!(matches!(decode_params(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_params(&bytes), Err(Error::Format { offset: 8, .. })));
        bytes[0] = b'Z';
        assert!(matches!(decode_params(&bytes), Err(Error::Format { offset: 0, .. })));
    }
}
