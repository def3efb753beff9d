//! AEMD model checkpoints (little-endian).
//!
//! `"AEMD"`, u32 version, u32 depth, u32 input channels, then for every layer
//! (encoders `f_1..f_N`, then decoders `g_1..g_N`): four u32 kernel dims
//! `(3, 3, c_in, c_out)`, the f32 kernel payload, and the f32 bias payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::conv::{ConvLayer, KERNEL_SIDE};
use super::model::AutoEncoderModel;

pub const AEMD_MAGIC: &[u8; 4] = b"AEMD";
pub const AEMD_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    w.write_all(&(v as u32).to_le_bytes())?;
    Ok(())
}

fn put_f32s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::format("truncated AEMD file"))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|_| Error::format("truncated AEMD payload"))?;
    Ok(buf.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect())
}

pub fn write_model<W: Write>(model: &AutoEncoderModel, mut w: W) -> Result<()> {
    w.write_all(AEMD_MAGIC)?;
    put_u32(&mut w, AEMD_VERSION as usize)?;
    put_u32(&mut w, model.depth())?;
    put_u32(&mut w, model.input_channels())?;
    for layer in model.layers() {
        for d in [KERNEL_SIDE, KERNEL_SIDE, layer.c_in, layer.c_out] {
            put_u32(&mut w, d)?;
        }
        put_f32s(&mut w, &layer.kernel)?;
        put_f32s(&mut w, &layer.bias)?;
    }
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<AutoEncoderModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::format("truncated AEMD header"))?;
    if &magic != AEMD_MAGIC {
        return Err(Error::format("bad AEMD magic"));
    }
    let version = get_u32(&mut r)?;
    if version != AEMD_VERSION as usize {
        return Err(Error::format(format!("unsupported AEMD version {version}")));
    }
    let depth = get_u32(&mut r)?;
    let c1 = get_u32(&mut r)?;
    let mut model =
        AutoEncoderModel::zeros(c1, depth).map_err(|e| Error::format(format!("invalid AEMD header: {e}")))?;
    for layer in model.layers_mut() {
        let dims = [get_u32(&mut r)?, get_u32(&mut r)?, get_u32(&mut r)?, get_u32(&mut r)?];
        if dims != [KERNEL_SIDE, KERNEL_SIDE, layer.c_in, layer.c_out] {
            return Err(Error::format(format!("unexpected AEMD layer dims {dims:?}")));
        }
        let kernel = get_f32s(&mut r, layer.kernel.len())?;
        let bias = get_f32s(&mut r, layer.bias.len())?;
        *layer = ConvLayer { kernel, bias, ..layer.clone() };
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format("trailing bytes after AEMD payload"));
    }
    Ok(model)
}

pub fn save_model(model: &AutoEncoderModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AutoEncoderModel> {
    read_model(BufReader::new(File::open(path)?))
}
