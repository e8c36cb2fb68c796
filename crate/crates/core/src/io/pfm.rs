//! PFM raster I/O (little-endian float32, bottom-up row order per the
//! format's convention; negative scale marks little-endian).

use crate::scene::{ScalarMap, VectorMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PfmError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad PFM header: {0}")]
    Header(String),
    #[error("PFM payload truncated: expected {expected} floats")]
    Truncated { expected: usize },
}

fn write_header<W: Write>(w: &mut W, color: bool, width: usize, height: usize) -> std::io::Result<()> {
    write!(w, "{}\n{} {}\n-1.0\n", if color { "PF" } else { "Pf" }, width, height)
}

pub fn write_scalar(path: &Path, map: &ScalarMap) -> Result<(), PfmError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, false, map.width, map.height)?;
    for v in (0..map.height).rev() {
        for u in 0..map.width {
            w.write_all(&(map.get(u, v) as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_vector(path: &Path, map: &VectorMap) -> Result<(), PfmError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, true, map.width, map.height)?;
    for v in (0..map.height).rev() {
        for u in 0..map.width {
            let n = map.get(u, v);
            for c in 0..3 {
                w.write_all(&(n[c] as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

struct Header {
    color: bool,
    width: usize,
    height: usize,
    little_endian: bool,
}

fn read_token<R: Read>(r: &mut R) -> Result<String, PfmError> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(byte[0]);
    }
    String::from_utf8(tok).map_err(|e| PfmError::Header(e.to_string()))
}

fn read_header<R: Read>(r: &mut R) -> Result<Header, PfmError> {
    let magic = read_token(r)?;
    let color = match magic.as_str() {
        "PF" => true,
        "Pf" => false,
        other => return Err(PfmError::Header(format!("magic {other:?}"))),
    };
    let width: usize = read_token(r)?
        .parse()
        .map_err(|_| PfmError::Header("width".into()))?;
    let height: usize = read_token(r)?
        .parse()
        .map_err(|_| PfmError::Header("height".into()))?;
    let scale: f64 = read_token(r)?
        .parse()
        .map_err(|_| PfmError::Header("scale".into()))?;
    Ok(Header {
        color,
        width,
        height,
        little_endian: scale < 0.0,
    })
}

fn read_payload<R: Read>(r: &mut R, h: &Header, channels: usize) -> Result<Vec<f64>, PfmError> {
    let count = h.width * h.height * channels;
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw)
        .map_err(|_| PfmError::Truncated { expected: count })?;
    let mut vals = Vec::with_capacity(count);
    for chunk in raw.chunks_exact(4) {
        let bytes: [u8; 4] = chunk.try_into().unwrap();
        let x = if h.little_endian {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        };
        vals.push(x as f64);
    }
    Ok(vals)
}

pub fn read_scalar(path: &Path) -> Result<ScalarMap, PfmError> {
    let mut r = BufReader::new(File::open(path)?);
    let h = read_header(&mut r)?;
    if h.color {
        return Err(PfmError::Header("expected grayscale PFM".into()));
    }
    let vals = read_payload(&mut r, &h, 1)?;
    let mut map = ScalarMap::new(h.width, h.height);
    for v in 0..h.height {
        for u in 0..h.width {
            map.set(u, v, vals[(h.height - 1 - v) * h.width + u]);
        }
    }
    Ok(map)
}

pub fn read_vector(path: &Path) -> Result<VectorMap, PfmError> {
    let mut r = BufReader::new(File::open(path)?);
    let h = read_header(&mut r)?;
    if !h.color {
        return Err(PfmError::Header("expected 3-channel PFM".into()));
    }
    let vals = read_payload(&mut r, &h, 3)?;
    let mut map = VectorMap::new(h.width, h.height);
    for v in 0..h.height {
        for u in 0..h.width {
            let i = ((h.height - 1 - v) * h.width + u) * 3;
            map.set(
                u,
                v,
                &crate::math::Vec3::new(vals[i], vals[i + 1], vals[i + 2]),
            );
        }
    }
    Ok(map)
}
