//! FMAP: little-endian feature-map files.
//!
//! ```text
//! 0..4    magic "FMAP"
//! 4..8    u32 version (1)
//! 8..12   u32 width
//! 12..16  u32 height
//! 16..20  u32 channels
//! 20..24  u32 reserved (0)
//! 24..    width*height*channels f32, index (y*width + x)*channels + k
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::FeatureMap;

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u32 = 1;
pub const FMAP_HEADER_LEN: usize = 24;

pub fn write_fmap<W: Write>(m: &FeatureMap, mut w: W) -> Result<()> {
    w.write_all(FMAP_MAGIC)?;
    for v in [FMAP_VERSION, m.width() as u32, m.height() as u32, m.channels() as u32, 0] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(m.data().len() * 4);
    for v in m.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_fmap<R: Read>(mut r: R) -> Result<FeatureMap> {
    let mut header = [0u8; FMAP_HEADER_LEN];
    r.read_exact(&mut header).map_err(|_| Error::format("truncated FMAP header"))?;
    if &header[0..4] != FMAP_MAGIC {
        return Err(Error::format("bad FMAP magic"));
    }
    let field = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = field(4);
    if version != FMAP_VERSION {
        return Err(Error::format(format!("unsupported FMAP version {version}")));
    }
    let (w, h, c) = (field(8) as usize, field(12) as usize, field(16) as usize);
    if field(20) != 0 {
        return Err(Error::format("FMAP reserved field is not zero"));
    }
    if w == 0 || h == 0 || c == 0 {
        return Err(Error::format("FMAP dimensions must be positive"));
    }
    let n = w.checked_mul(h).and_then(|v| v.checked_mul(c)).ok_or_else(|| Error::format("FMAP dimensions overflow"))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != n * 4 {
        return Err(Error::format(format!("FMAP payload is {} bytes, header implies {}", payload.len(), n * 4)));
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    FeatureMap::new(w, h, c, data)
}

pub fn save_fmap(m: &FeatureMap, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_fmap(m, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_fmap(path: &Path) -> Result<FeatureMap> {
    read_fmap(BufReader::new(File::open(path)?))
}
