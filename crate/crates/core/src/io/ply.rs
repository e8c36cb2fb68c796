//! PLY point-cloud I/O.
//!
//! Two schemas are used: plain clouds with `x y z` plus optional
//! `red green blue`, and SfM clouds that append a `visibility` element whose
//! rows are `property list uchar int view_indices`.

use crate::math::Vec3;
use crate::scene::SfmPoint;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad PLY: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Empty, or one RGB triple in [0,1] per point.
    pub colors: Vec<[f64; 3]>,
}

pub fn write_cloud_ascii(path: &Path, cloud: &PointCloud) -> Result<(), PlyError> {
    let has_color = !cloud.colors.is_empty();
    if has_color && cloud.colors.len() != cloud.points.len() {
        return Err(PlyError::Format("color/point count mismatch".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.points.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if has_color {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        if has_color {
            let c = cloud.colors[i];
            writeln!(
                w,
                "{} {} {} {} {} {}",
                p[0] as f32,
                p[1] as f32,
                p[2] as f32,
                to_u8(c[0]),
                to_u8(c[1]),
                to_u8(c[2])
            )?;
        } else {
            writeln!(w, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32)?;
        }
    }
    Ok(())
}

pub fn write_cloud_binary(path: &Path, cloud: &PointCloud) -> Result<(), PlyError> {
    let has_color = !cloud.colors.is_empty();
    if has_color && cloud.colors.len() != cloud.points.len() {
        return Err(PlyError::Format("color/point count mismatch".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply\nformat binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", cloud.points.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if has_color {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        for a in 0..3 {
            w.write_all(&(p[a] as f32).to_le_bytes())?;
        }
        if has_color {
            let c = cloud.colors[i];
            w.write_all(&[to_u8(c[0]), to_u8(c[1]), to_u8(c[2])])?;
        }
    }
    Ok(())
}

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Prop {
    X,
    Y,
    Z,
    Red,
    Green,
    Blue,
    OtherScalar,
}

struct PlyHeader {
    binary: bool,
    vertex_count: usize,
    vertex_props: Vec<Prop>,
    visibility_count: usize,
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<PlyHeader, PlyError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(PlyError::Format("missing ply magic".into()));
    }
    let mut binary = false;
    let mut vertex_count = 0usize;
    let mut visibility_count = 0usize;
    let mut vertex_props = Vec::new();
    let mut current_element = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(PlyError::Format("header truncated".into()));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", kind, _] => match *kind {
                "ascii" => binary = false,
                "binary_little_endian" => binary = true,
                other => return Err(PlyError::Format(format!("unsupported format {other}"))),
            },
            ["comment", ..] => {}
            ["element", name, count] => {
                current_element = name.to_string();
                let n: usize = count
                    .parse()
                    .map_err(|_| PlyError::Format("bad element count".into()))?;
                match current_element.as_str() {
                    "vertex" => vertex_count = n,
                    "visibility" => visibility_count = n,
                    other => {
                        return Err(PlyError::Format(format!("unsupported element {other}")))
                    }
                }
            }
            ["property", "list", "uchar", "int", "view_indices"]
                if current_element == "visibility" => {}
            ["property", _ty, name] if current_element == "vertex" => {
                vertex_props.push(match *name {
                    "x" => Prop::X,
                    "y" => Prop::Y,
                    "z" => Prop::Z,
                    "red" => Prop::Red,
                    "green" => Prop::Green,
                    "blue" => Prop::Blue,
                    _ => Prop::OtherScalar,
                });
            }
            _ => return Err(PlyError::Format(format!("unsupported header line {line:?}"))),
        }
    }
    Ok(PlyHeader {
        binary,
        vertex_count,
        vertex_props,
        visibility_count,
    })
}

pub fn read_cloud(path: &Path) -> Result<PointCloud, PlyError> {
    let mut r = BufReader::new(File::open(path)?);
    let h = parse_header(&mut r)?;
    let has_color = h.vertex_props.contains(&Prop::Red);
    let mut cloud = PointCloud::default();
    cloud.points.reserve(h.vertex_count);
    if has_color {
        cloud.colors.reserve(h.vertex_count);
    }
    if h.binary {
        for _ in 0..h.vertex_count {
            let mut p = Vec3::zeros();
            let mut c = [0.0; 3];
            for prop in &h.vertex_props {
                match prop {
                    Prop::X | Prop::Y | Prop::Z | Prop::OtherScalar => {
                        let mut b = [0u8; 4];
                        r.read_exact(&mut b)?;
                        let val = f32::from_le_bytes(b) as f64;
                        match prop {
                            Prop::X => p[0] = val,
                            Prop::Y => p[1] = val,
                            Prop::Z => p[2] = val,
                            _ => {}
                        }
                    }
                    Prop::Red | Prop::Green | Prop::Blue => {
                        let mut b = [0u8; 1];
                        r.read_exact(&mut b)?;
                        let val = b[0] as f64 / 255.0;
                        match prop {
                            Prop::Red => c[0] = val,
                            Prop::Green => c[1] = val,
                            Prop::Blue => c[2] = val,
                            _ => unreachable!(),
                        }
                    }
                }
            }
            cloud.points.push(p);
            if has_color {
                cloud.colors.push(c);
            }
        }
    } else {
        for _ in 0..h.vertex_count {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(PlyError::Format("vertex data truncated".into()));
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() < h.vertex_props.len() {
                return Err(PlyError::Format("short vertex row".into()));
            }
            let mut p = Vec3::zeros();
            let mut c = [0.0; 3];
            for (tok, prop) in toks.iter().zip(&h.vertex_props) {
                match prop {
                    Prop::X => p[0] = parse_f64(tok)?,
                    Prop::Y => p[1] = parse_f64(tok)?,
                    Prop::Z => p[2] = parse_f64(tok)?,
                    Prop::Red => c[0] = parse_f64(tok)? / 255.0,
                    Prop::Green => c[1] = parse_f64(tok)? / 255.0,
                    Prop::Blue => c[2] = parse_f64(tok)? / 255.0,
                    Prop::OtherScalar => {}
                }
            }
            cloud.points.push(p);
            if has_color {
                cloud.colors.push(c);
            }
        }
    }
    Ok(cloud)
}

fn parse_f64(tok: &str) -> Result<f64, PlyError> {
    tok.parse()
        .map_err(|_| PlyError::Format(format!("bad float {tok:?}")))
}

/// Write SfM points: vertex element with positions followed by a visibility
/// element holding each point's observing-view index list.
pub fn write_sfm_points(path: &Path, points: &[SfmPoint]) -> Result<(), PlyError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    writeln!(w, "element visibility {}", points.len())?;
    writeln!(w, "property list uchar int view_indices")?;
    writeln!(w, "end_header")?;
    for p in points {
        writeln!(
            w,
            "{} {} {}",
            p.position[0] as f32, p.position[1] as f32, p.position[2] as f32
        )?;
    }
    for p in points {
        write!(w, "{}", p.views.len())?;
        for v in &p.views {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_sfm_points(path: &Path) -> Result<Vec<SfmPoint>, PlyError> {
    let mut r = BufReader::new(File::open(path)?);
    let h = parse_header(&mut r)?;
    if h.binary {
        return Err(PlyError::Format("sfm points must be ascii".into()));
    }
    if h.visibility_count != h.vertex_count {
        return Err(PlyError::Format(
            "visibility element count must match vertex count".into(),
        ));
    }
    let mut positions = Vec::with_capacity(h.vertex_count);
    for _ in 0..h.vertex_count {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(PlyError::Format("vertex data truncated".into()));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(PlyError::Format("short vertex row".into()));
        }
        positions.push(Vec3::new(
            parse_f64(toks[0])?,
            parse_f64(toks[1])?,
            parse_f64(toks[2])?,
        ));
    }
    let mut out = Vec::with_capacity(h.vertex_count);
    for pos in positions {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(PlyError::Format("visibility data truncated".into()));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            return Err(PlyError::Format("empty visibility row".into()));
        }
        let count: usize = toks[0]
            .parse()
            .map_err(|_| PlyError::Format("bad list count".into()))?;
        if toks.len() != count + 1 {
            return Err(PlyError::Format("visibility list length mismatch".into()));
        }
        let views = toks[1..]
            .iter()
            .map(|t| t.parse().map_err(|_| PlyError::Format("bad view index".into())))
            .collect::<Result<Vec<u32>, _>>()?;
        out.push(SfmPoint {
            position: pos,
            views,
        });
    }
    Ok(out)
}
