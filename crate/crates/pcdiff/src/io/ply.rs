//! PLY point-cloud I/O. The writer emits binary-little-endian with float32
//! x, y, z; the reader accepts that layout plus its ascii equivalent.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// Write `cloud` as binary-little-endian PLY with float32 x, y, z.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = Vec::with_capacity(128 + cloud.len() * 12);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    )?;
    for p in &cloud.points {
        out.extend_from_slice(&(p.x as f32).to_le_bytes());
        out.extend_from_slice(&(p.y as f32).to_le_bytes());
        out.extend_from_slice(&(p.z as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

enum PlyFormat {
    Ascii,
    BinaryLe,
}

/// Read an ascii or binary-little-endian PLY whose vertex element carries
/// exactly float x, y, z.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    let err = |msg: String| Error::Format(format!("{}: {msg}", path.display()));

    // The header is ascii lines terminated by "end_header".
    let mut offset = 0usize;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err("missing end_header".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| err("non-ascii header line".into()))?
            .trim_end_matches('\r')
            .to_string();
        offset += nl + 1;
        if line == "end_header" {
            break;
        }
        lines.push(line);
    }

    if lines.first().map(String::as_str) != Some("ply") {
        return Err(err("missing ply magic line".into()));
    }
    let mut format = None;
    let mut count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    for line in &lines[1..] {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", "1.0"] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", "1.0"] => format = Some(PlyFormat::BinaryLe),
            ["format", other, ..] => {
                return Err(err(format!("unsupported format {other:?}")));
            }
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                count = Some(
                    n.parse()
                        .map_err(|_| err(format!("bad vertex count {n:?}")))?,
                );
                in_vertex_element = true;
            }
            ["element", ..] => in_vertex_element = false,
            ["property", ty, name] if in_vertex_element => {
                if *ty != "float" {
                    return Err(err(format!(
                        "unsupported property type {ty:?} for {name:?}"
                    )));
                }
                properties.push((*name).to_string());
            }
            ["property", ..] => {}
            _ => return Err(err(format!("unrecognized header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| err("missing format line".into()))?;
    let count = count.ok_or_else(|| err("missing element vertex line".into()))?;
    if properties != ["x", "y", "z"] {
        return Err(err(format!(
            "vertex element must carry exactly float x, y, z; got {properties:?}"
        )));
    }

    let points = match format {
        PlyFormat::BinaryLe => {
            let body = &bytes[offset..];
            let need = count * 12;
            if body.len() < need {
                return Err(err(format!(
                    "body holds {} bytes, {} vertices need {need}",
                    body.len(),
                    count
                )));
            }
            body[..need]
                .chunks_exact(12)
                .map(|rec| {
                    let f = |i: usize| {
                        f32::from_le_bytes([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]) as f64
                    };
                    Point3::new(f(0), f(4), f(8))
                })
                .collect()
        }
        PlyFormat::Ascii => {
            let body = std::str::from_utf8(&bytes[offset..])
                .map_err(|_| err("non-ascii body in ascii ply".into()))?;
            let mut points = Vec::with_capacity(count);
            for (row, line) in body.lines().filter(|l| !l.trim().is_empty()).enumerate() {
                if row == count {
                    break;
                }
                let vals: Vec<&str> = line.split_whitespace().collect();
                if vals.len() != 3 {
                    return Err(err(format!(
                        "vertex row {}: expected 3 values, got {}",
                        row + 1,
                        vals.len()
                    )));
                }
                let mut p = [0.0f64; 3];
                for (i, v) in vals.iter().enumerate() {
                    p[i] = v
                        .parse::<f32>()
                        .map_err(|_| err(format!("vertex row {}: bad number {v:?}", row + 1)))?
                        as f64;
                }
                points.push(Point3::new(p[0], p[1], p[2]));
            }
            if points.len() != count {
                return Err(err(format!(
                    "body holds {} vertex rows, header promised {count}",
                    points.len()
                )));
            }
            points
        }
    };
    Ok(PointCloud::new(points))
}
