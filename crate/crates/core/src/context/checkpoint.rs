//! CTXM checkpoints: cluster centroids plus the selector network.
//!
//! Little-endian: `"CTXM"`, u32 version, u32 `N_e`, u32 descriptor length,
//! the f32 centroid payload (`N_e x dim`), u32 hidden width, then the f32
//! payloads of `w1`, `b1`, `w2`, `b2`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::cluster::Descriptor;
use super::selector::SelectorNetwork;

pub const CTXM_MAGIC: &[u8; 4] = b"CTXM";
pub const CTXM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ContextModel {
    pub centroids: Vec<Descriptor>,
    pub selector: SelectorNetwork,
}

impl ContextModel {
    pub fn new(centroids: Vec<Descriptor>, selector: SelectorNetwork) -> Result<Self> {
        if centroids.len() != selector.classes {
            return Err(Error::shape("centroid count differs from selector classes"));
        }
        if centroids.iter().any(|c| c.dim() != selector.dim) {
            return Err(Error::shape("centroid length differs from selector input"));
        }
        Ok(Self { centroids, selector })
    }

    pub fn experts(&self) -> usize {
        self.centroids.len()
    }
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format("dimension exceeds u32"))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let buf: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    w.write_all(&buf)?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::format("truncated CTXM file"))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|_| Error::format("truncated CTXM payload"))?;
    Ok(buf.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect())
}

pub fn write_context<W: Write>(model: &ContextModel, mut w: W) -> Result<()> {
    let net = &model.selector;
    w.write_all(CTXM_MAGIC)?;
    put_u32(&mut w, CTXM_VERSION as usize)?;
    put_u32(&mut w, model.experts())?;
    put_u32(&mut w, net.dim)?;
    for c in &model.centroids {
        put_f32s(&mut w, c.as_slice())?;
    }
    put_u32(&mut w, net.hidden)?;
    for p in [&net.w1, &net.b1, &net.w2, &net.b2] {
        put_f32s(&mut w, p)?;
    }
    Ok(())
}

pub fn read_context<R: Read>(mut r: R) -> Result<ContextModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::format("truncated CTXM header"))?;
    if &magic != CTXM_MAGIC {
        return Err(Error::format("bad CTXM magic"));
    }
    let version = get_u32(&mut r)?;
    if version != CTXM_VERSION as usize {
        return Err(Error::format(format!("unsupported CTXM version {version}")));
    }
    let experts = get_u32(&mut r)?;
    let dim = get_u32(&mut r)?;
    if experts == 0 || dim == 0 {
        return Err(Error::format("CTXM dimensions must be positive"));
    }
    let centroids = (0..experts).map(|_| get_f32s(&mut r, dim).map(Descriptor)).collect::<Result<Vec<_>>>()?;
    let hidden = get_u32(&mut r)?;
    if hidden == 0 {
        return Err(Error::format("CTXM hidden width must be positive"));
    }
    let mut net = SelectorNetwork::zeros(dim, hidden, experts);
    net.w1 = get_f32s(&mut r, dim * hidden)?;
    net.b1 = get_f32s(&mut r, hidden)?;
    net.w2 = get_f32s(&mut r, hidden * experts)?;
    net.b2 = get_f32s(&mut r, experts)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format("trailing bytes after CTXM payload"));
    }
    ContextModel::new(centroids, net)
}

pub fn save_context(model: &ContextModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_context(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_context(path: &Path) -> Result<ContextModel> {
    read_context(BufReader::new(File::open(path)?))
}
