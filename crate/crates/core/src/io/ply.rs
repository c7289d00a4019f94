//! PLY reader/writer for oriented point clouds.
//!
//! Supports ASCII and binary little-endian files whose vertex element
//! carries x, y, z, nx, ny, nz as float32 or float64. Extra properties and
//! extra elements are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{OrientedPoint, SurfaceCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(word: &str) -> Option<Scalar> {
        Some(match word {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 => 4,
            Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, buf: &[u8]) -> f64 {
        match self {
            Scalar::I8 => buf[0] as i8 as f64,
            Scalar::U8 => buf[0] as f64,
            Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes([
                buf[0], buf[1], buf[2], buf[3], buf[4], buf[5], buf[6], buf[7],
            ]),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { ty: Scalar, name: String },
    List { count_ty: Scalar, item_ty: Scalar },
}

#[derive(Debug, Clone)]
struct ElementDecl {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: Format,
    elements: Vec<ElementDecl>,
    header_len: usize,
}

fn parse_header(bytes: &[u8], path: &str) -> Result<Header> {
    let mut reader = BufReader::new(bytes);
    let mut line = String::new();
    let mut offset = 0usize;
    let read_line = |reader: &mut BufReader<&[u8]>, line: &mut String| -> Result<usize> {
        line.clear();
        let n = reader.read_line(line)?;
        Ok(n)
    };

    let n = read_line(&mut reader, &mut line)?;
    offset += n;
    if line.trim() != "ply" {
        return Err(Error::parse(path, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<ElementDecl> = Vec::new();
    loop {
        let n = read_line(&mut reader, &mut line)?;
        if n == 0 {
            return Err(Error::parse(path, "header ended before end_header"));
        }
        offset += n;
        let trimmed = line.trim();
        let mut words = trimmed.split_whitespace();
        match words.next() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                format = match words.next() {
                    Some("ascii") => Some(Format::Ascii),
                    Some("binary_little_endian") => Some(Format::BinaryLe),
                    Some(other) => {
                        return Err(Error::parse(
                            path,
                            format!("unsupported format '{other}'"),
                        ))
                    }
                    None => return Err(Error::parse(path, "format line missing kind")),
                };
            }
            Some("element") => {
                let name = words
                    .next()
                    .ok_or_else(|| Error::parse(path, "element missing name"))?;
                let count: usize = words
                    .next()
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| Error::parse(path, "element missing count"))?;
                elements.push(ElementDecl {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, "property before any element"))?;
                let kind = words
                    .next()
                    .ok_or_else(|| Error::parse(path, "property missing type"))?;
                if kind == "list" {
                    let count_ty = words
                        .next()
                        .and_then(Scalar::parse)
                        .ok_or_else(|| Error::parse(path, "bad list count type"))?;
                    let item_ty = words
                        .next()
                        .and_then(Scalar::parse)
                        .ok_or_else(|| Error::parse(path, "bad list item type"))?;
                    element.properties.push(Property::List { count_ty, item_ty });
                } else {
                    let ty = Scalar::parse(kind)
                        .ok_or_else(|| Error::parse(path, format!("bad type '{kind}'")))?;
                    let name = words
                        .next()
                        .ok_or_else(|| Error::parse(path, "property missing name"))?;
                    element.properties.push(Property::Scalar {
                        ty,
                        name: name.to_string(),
                    });
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::parse(path, format!("unknown header line '{other}'")))
            }
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| Error::parse(path, "missing format line"))?,
        elements,
        header_len: offset,
    })
}

/// Reads an oriented cloud from a PLY file. The vertex element must carry
/// x, y, z, nx, ny, nz.
pub fn read_ply(path: impl AsRef<Path>) -> Result<SurfaceCloud> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    read_ply_bytes(&bytes, &path_str)
}

fn read_ply_bytes(bytes: &[u8], path: &str) -> Result<SurfaceCloud> {
    let header = parse_header(bytes, path)?;
    let vertex = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(path, "no vertex element"))?;

    let mut field_slots: [Option<usize>; 6] = [None; 6];
    const FIELDS: [&str; 6] = ["x", "y", "z", "nx", "ny", "nz"];
    for (pi, prop) in vertex.properties.iter().enumerate() {
        if let Property::Scalar { name, .. } = prop {
            if let Some(f) = FIELDS.iter().position(|w| w == name) {
                field_slots[f] = Some(pi);
            }
        }
    }
    let slots: Vec<usize> = FIELDS
        .iter()
        .zip(field_slots.iter())
        .map(|(name, slot)| slot.ok_or_else(|| Error::parse(path, format!("missing vertex property '{name}'"))))
        .collect::<Result<_>>()?;

    let body = &bytes[header.header_len..];
    let rows = match header.format {
        Format::Ascii => read_ascii_rows(body, &header, path)?,
        Format::BinaryLe => read_binary_rows(body, &header, path)?,
    };

    let points = rows
        .iter()
        .map(|row| {
            OrientedPoint::new(
                Vector3::new(row[slots[0]], row[slots[1]], row[slots[2]]),
                Vector3::new(row[slots[3]], row[slots[4]], row[slots[5]]),
            )
        })
        .collect();
    let cloud = SurfaceCloud::new(points, "ply");
    cloud.validate()?;
    Ok(cloud)
}

fn read_ascii_rows(body: &[u8], header: &Header, path: &str) -> Result<Vec<Vec<f64>>> {
    let text = std::str::from_utf8(body)
        .map_err(|_| Error::parse(path, "ascii body is not valid UTF-8"))?;
    let mut lines = text.lines();
    let mut vertex_rows = Vec::new();
    for element in &header.elements {
        for row_idx in 0..element.count {
            let line = lines.next().ok_or_else(|| {
                Error::parse(
                    path,
                    format!("element '{}' truncated at row {row_idx}", element.name),
                )
            })?;
            if element.name != "vertex" {
                continue;
            }
            let mut row = Vec::with_capacity(element.properties.len());
            let mut words = line.split_whitespace();
            for prop in &element.properties {
                match prop {
                    Property::Scalar { .. } => {
                        let v: f64 = words
                            .next()
                            .and_then(|w| w.parse().ok())
                            .ok_or_else(|| Error::parse(path, "bad vertex scalar"))?;
                        row.push(v);
                    }
                    Property::List { .. } => {
                        let n: usize = words
                            .next()
                            .and_then(|w| w.parse().ok())
                            .ok_or_else(|| Error::parse(path, "bad list count"))?;
                        for _ in 0..n {
                            words.next();
                        }
                        row.push(f64::NAN);
                    }
                }
            }
            vertex_rows.push(row);
        }
    }
    Ok(vertex_rows)
}

fn read_binary_rows(body: &[u8], header: &Header, path: &str) -> Result<Vec<Vec<f64>>> {
    let mut cursor = 0usize;
    let mut vertex_rows = Vec::new();
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        let end = *cursor + n;
        if end > body.len() {
            return Err(Error::parse(path, "binary body truncated"));
        }
        let s = &body[*cursor..end];
        *cursor = end;
        Ok(s)
    };
    for element in &header.elements {
        let keep = element.name == "vertex";
        for _ in 0..element.count {
            let mut row = Vec::new();
            for prop in &element.properties {
                match prop {
                    Property::Scalar { ty, .. } => {
                        let raw = take(&mut cursor, ty.size())?;
                        if keep {
                            row.push(ty.read_le(raw));
                        }
                    }
                    Property::List { count_ty, item_ty } => {
                        let raw = take(&mut cursor, count_ty.size())?;
                        let n = count_ty.read_le(raw) as usize;
                        take(&mut cursor, n * item_ty.size())?;
                        if keep {
                            row.push(f64::NAN);
                        }
                    }
                }
            }
            if keep {
                vertex_rows.push(row);
            }
        }
    }
    Ok(vertex_rows)
}

/// Writes the cloud as ASCII PLY with float64 precision.
pub fn write_ply_ascii(cloud: &SurfaceCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for name in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(w, "property double {name}")?;
    }
    writeln!(w, "end_header")?;
    for p in &cloud.points {
        writeln!(
            w,
            "{} {} {} {} {} {}",
            p.position.x, p.position.y, p.position.z, p.normal.x, p.normal.y, p.normal.z
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the cloud as binary little-endian PLY with float64 precision.
pub fn write_ply_binary(cloud: &SurfaceCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        cloud.len()
    )?;
    for name in ["x", "y", "z", "nx", "ny", "nz"] {
        write!(w, "property double {name}\n")?;
    }
    write!(w, "end_header\n")?;
    for p in &cloud.points {
        for v in [
            p.position.x,
            p.position.y,
            p.position.z,
            p.normal.x,
            p.normal.y,
            p.normal.z,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_cloud(n: usize) -> SurfaceCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let points = (0..n)
            .map(|_| {
                let n = Vector3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                )
                .normalize();
                OrientedPoint::new(
                    Vector3::new(rng.random(), rng.random(), rng.random()),
                    n,
                )
            })
            .collect();
        SurfaceCloud::new(points, "sample")
    }

    #[test]
    fn ascii_round_trip_is_lossless() {
        let cloud = sample_cloud(64);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        write_ply_ascii(&cloud, &path).unwrap();
        let back = read_ply(&path).unwrap();
        assert_eq!(back.points, cloud.points);
    }

    #[test]
    fn binary_round_trip_is_lossless() {
        let cloud = sample_cloud(64);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        write_ply_binary(&cloud, &path).unwrap();
        let back = read_ply(&path).unwrap();
        assert_eq!(back.points, cloud.points);
    }

    #[test]
    fn float32_and_extra_properties_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.ply");
        let text = "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\n\
                    property float x\nproperty float y\nproperty float z\n\
                    property float nx\nproperty float ny\nproperty float nz\n\
                    property uchar red\nend_header\n\
                    0 0 0 0 0 1 255\n1 2 3 1 0 0 0\n";
        std::fs::write(&path, text).unwrap();
        let cloud = read_ply(&path).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points[1].position, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn missing_normals_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nonorm.ply");
        let text = "ply\nformat ascii 1.0\nelement vertex 1\n\
                    property float x\nproperty float y\nproperty float z\n\
                    end_header\n0 0 0\n";
        std::fs::write(&path, text).unwrap();
        let err = read_ply(&path).unwrap_err();
        assert!(err.to_string().contains("nx"));
    }
}
