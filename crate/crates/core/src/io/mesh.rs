//! Minimal OBJ/OFF triangle-mesh loading and area-weighted surface
//! sampling into oriented clouds.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{OrientedPoint, SurfaceCloud};

/// Indexed triangle mesh. Faces with more than three vertices are
/// fan-triangulated at load time.
#[derive(Debug, Clone, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn face_area(&self, f: &[u32; 3]) -> f64 {
        let a = self.vertices[f[0] as usize];
        let b = self.vertices[f[1] as usize];
        let c = self.vertices[f[2] as usize];
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_area(f)).sum()
    }

    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        Some((lo, hi))
    }

    /// Uniform area-weighted sampling of `n` oriented points; normals are
    /// face normals under counter-clockwise winding. Deterministic in
    /// `seed`.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<SurfaceCloud> {
        if self.faces.is_empty() {
            return Err(Error::invalid("mesh has no faces to sample"));
        }
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in &self.faces {
            total += self.face_area(f);
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Err(Error::invalid("mesh has zero surface area"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let target = rng.random::<f64>() * total;
            let fi = cumulative.partition_point(|&c| c < target);
            let f = &self.faces[fi.min(self.faces.len() - 1)];
            let a = self.vertices[f[0] as usize];
            let b = self.vertices[f[1] as usize];
            let c = self.vertices[f[2] as usize];
            let normal = (b - a).cross(&(c - a));
            let norm = normal.norm();
            if norm <= 0.0 {
                continue;
            }
            let normal = normal / norm;
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
            points.push(OrientedPoint::new(a * wa + b * wb + c * wc, normal));
        }
        Ok(SurfaceCloud::new(points, "mesh-sample"))
    }
}

/// Loads a Wavefront OBJ mesh (vertices and faces only).
pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut mesh = TriMesh::default();
    for (ln, line) in text.lines().enumerate() {
        let mut words = line.split_whitespace();
        match words.next() {
            Some("v") => {
                let mut coord = [0.0f64; 3];
                for c in &mut coord {
                    *c = words
                        .next()
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| {
                            Error::parse(&name, format!("bad vertex on line {}", ln + 1))
                        })?;
                }
                mesh.vertices.push(Vector3::from(coord));
            }
            Some("f") => {
                let idx: Vec<u32> = words
                    .map(|w| {
                        let first = w.split('/').next().unwrap_or(w);
                        first.parse::<i64>().ok().and_then(|i| {
                            let n = mesh.vertices.len() as i64;
                            let i = if i < 0 { n + i } else { i - 1 };
                            (i >= 0 && i < n).then_some(i as u32)
                        })
                    })
                    .collect::<Option<_>>()
                    .ok_or_else(|| {
                        Error::parse(&name, format!("bad face on line {}", ln + 1))
                    })?;
                if idx.len() < 3 {
                    return Err(Error::parse(
                        &name,
                        format!("face with fewer than 3 vertices on line {}", ln + 1),
                    ));
                }
                for i in 1..idx.len() - 1 {
                    mesh.faces.push([idx[0], idx[i], idx[i + 1]]);
                }
            }
            _ => {}
        }
    }
    if mesh.vertices.is_empty() {
        return Err(Error::parse(&name, "no vertices"));
    }
    Ok(mesh)
}

/// Loads an OFF mesh.
pub fn load_off(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut words = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split_whitespace());
    if words.next() != Some("OFF") {
        return Err(Error::parse(&name, "missing OFF magic"));
    }
    let mut next_usize = |what: &str| -> Result<usize> {
        words
            .next()
            .and_then(|w| w.parse().ok())
            .ok_or_else(|| Error::parse(&name, format!("bad {what}")))
    };
    let nv = next_usize("vertex count")?;
    let nf = next_usize("face count")?;
    let _ne = next_usize("edge count")?;
    let mut mesh = TriMesh::default();
    for _ in 0..nv {
        let mut coord = [0.0f64; 3];
        for c in &mut coord {
            *c = words
                .next()
                .and_then(|w| w.parse().ok())
                .ok_or_else(|| Error::parse(&name, "bad vertex coordinate"))?;
        }
        mesh.vertices.push(Vector3::from(coord));
    }
    for _ in 0..nf {
        let n = words
            .next()
            .and_then(|w| w.parse::<usize>().ok())
            .ok_or_else(|| Error::parse(&name, "bad face vertex count"))?;
        let idx: Vec<u32> = (0..n)
            .map(|_| {
                words.next().and_then(|w| w.parse::<u32>().ok()).and_then(|i| {
                    ((i as usize) < mesh.vertices.len()).then_some(i)
                })
            })
            .collect::<Option<_>>()
            .ok_or_else(|| Error::parse(&name, "bad face index"))?;
        if idx.len() < 3 {
            return Err(Error::parse(&name, "face with fewer than 3 vertices"));
        }
        for i in 1..idx.len() - 1 {
            mesh.faces.push([idx[0], idx[i], idx[i + 1]]);
        }
    }
    Ok(mesh)
}

/// Loads a mesh by extension (`.obj` or `.off`).
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("obj") => load_obj(path),
        Some("off") => load_off(path),
        other => Err(Error::parse(
            path.display().to_string(),
            format!("unsupported mesh extension {other:?}"),
        )),
    }
}

/// Writes a mesh as Wavefront OBJ (used by the asset generator).
pub fn write_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}
