//! CNNW weight files: `"CNNW"`, `u16` version, `u16` layer count, then per
//! layer `c_in, c_out, kernel, stride, pad` as `u32`, followed by the layer's
//! `f32` weights and biases.

use std::path::Path;

use super::bin::{read_all, write_all, ByteReader, ByteWriter};
use crate::basecaller::{CnnSpec, LayerWeights, Weights};
use crate::tensor::ConvLayerSpec;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CNNW";
pub const VERSION: u16 = 1;

pub fn encode(spec: &CnnSpec, weights: &Weights) -> Result<Vec<u8>> {
    spec.validate()?;
    weights.check(spec)?;
    let count = u16::try_from(spec.layers.len())
        .map_err(|_| Error::InvalidArgument("too many layers".into()))?;
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u16(count);
    for (l, lw) in spec.layers.iter().zip(&weights.layers) {
        for v in [l.c_in, l.c_out, l.kernel, l.stride, l.pad] {
            w.u32(u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{l:?}")))?);
        }
        w.f32s(&lw.weight);
        w.f32s(&lw.bias);
    }
    Ok(w.buf)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(CnnSpec, Weights)> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let count = r.u16("layer count")?;
    let mut layers = Vec::with_capacity(count as usize);
    let mut weights = Vec::with_capacity(count as usize);
    for i in 0..count {
        let at = r.offset();
        let mut g = [0usize; 5];
        for v in &mut g {
            *v = r.u32("layer geometry")? as usize;
        }
        let l = ConvLayerSpec {
            c_in: g[0],
            c_out: g[1],
            kernel: g[2],
            stride: g[3],
            pad: g[4],
        };
        l.validate()
            .map_err(|e| r.error_at(at, format!("layer {i}: {e}")))?;
        let weight = r.f32_vec(l.weight_count(), "weights")?;
        let bias = r.f32_vec(l.c_out, "biases")?;
        layers.push(l);
        weights.push(LayerWeights { weight, bias });
    }
    r.finish()?;
    let spec = CnnSpec { layers };
    let weights = Weights { layers: weights };
    spec.validate()
        .and_then(|_| weights.check(&spec))
        .map_err(|e| r.error_at(6, e.to_string()))?;
    Ok((spec, weights))
}

pub fn write_file(path: &Path, spec: &CnnSpec, weights: &Weights) -> Result<()> {
    write_all(path, &encode(spec, weights)?)
}

pub fn read_file(path: &Path) -> Result<(CnnSpec, Weights)> {
    decode(&read_all(path)?, path)
}
