//! Static mesh maps: ASCII PLY loading and writing, and the voxel-surface mesher used
//! to turn a final occupancy snapshot into an offline map.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::occupancy::{height_color_u8, VoxelCoord};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("triangle {triangle} references vertex {index}, but only {vertex_count} vertices exist")]
    IndexOutOfRange {
        triangle: usize,
        index: i64,
        vertex_count: usize,
    },
    #[error("vertex {0} has a zero-length normal")]
    ZeroNormal(usize),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeshAsset {
    pub vertices: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedMesh {
    pub asset: MeshAsset,
    pub degenerate_dropped: usize,
}

/// Flat-array form published on `/mesh_map`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshWire {
    pub vertices: Vec<f64>,
    pub normals: Vec<f64>,
    pub colors: Vec<u8>,
    pub indices: Vec<u32>,
}

impl MeshAsset {
    pub fn to_wire(&self) -> MeshWire {
        MeshWire {
            vertices: self.vertices.iter().flatten().copied().collect(),
            normals: self.normals.iter().flatten().copied().collect(),
            colors: self.colors.iter().flatten().copied().collect(),
            indices: self.triangles.iter().flatten().copied().collect(),
        }
    }

    pub fn to_wire_json(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("mesh serializes")
    }

    pub fn from_wire(wire: &MeshWire) -> Self {
        let triples = |v: &[f64]| v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self {
            vertices: triples(&wire.vertices),
            normals: triples(&wire.normals),
            colors: wire.colors.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            triangles: wire.indices.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        }
    }

    pub fn to_ply(&self) -> String {
        let mut out = String::new();
        out.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(out, "element vertex {}", self.vertices.len());
        for p in ["x", "y", "z", "nx", "ny", "nz"] {
            let _ = writeln!(out, "property double {p}");
        }
        for p in ["red", "green", "blue"] {
            let _ = writeln!(out, "property uchar {p}");
        }
        let _ = writeln!(out, "element face {}", self.triangles.len());
        out.push_str("property list uchar int vertex_indices\nend_header\n");
        for i in 0..self.vertices.len() {
            let [x, y, z] = self.vertices[i];
            let [nx, ny, nz] = self.normals[i];
            let [r, g, b] = self.colors[i];
            let _ = writeln!(out, "{x} {y} {z} {nx} {ny} {nz} {r} {g} {b}");
        }
        for [a, b, c] in &self.triangles {
            let _ = writeln!(out, "3 {a} {b} {c}");
        }
        out
    }
}

pub fn load_mesh(path: &Path) -> Result<LoadedMesh, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_ply(&text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VertexProp {
    X,
    Y,
    Z,
    Nx,
    Ny,
    Nz,
    Red,
    Green,
    Blue,
    Ignored,
}

/// Parses an ASCII PLY mesh. Polygons are fan-triangulated; zero-area triangles are
/// dropped and counted. Missing normals are computed from the faces; missing colors
/// default to light grey.
pub fn parse_ply(text: &str) -> Result<LoadedMesh, MeshError> {
    let err = |line: usize, message: &str| MeshError::Parse {
        line,
        message: message.to_owned(),
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(1, "missing 'ply' magic")),
    }

    let mut vertex_count = None;
    let mut face_count = 0usize;
    let mut props = Vec::new();
    let mut current = "";
    let mut header_done = false;
    for (n, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(err(n, "only ascii PLY is supported")),
            ["element", "vertex", count] => {
                vertex_count = Some(count.parse::<usize>().map_err(|_| err(n, "bad vertex count"))?);
                current = "vertex";
            }
            ["element", "face", count] => {
                face_count = count.parse().map_err(|_| err(n, "bad face count"))?;
                current = "face";
            }
            ["element", _, _] => current = "other",
            ["property", "list", ..] => {
                if current != "face" {
                    return Err(err(n, "list property outside the face element"));
                }
            }
            ["property", _, name] if current == "vertex" => props.push(match *name {
                "x" => VertexProp::X,
                "y" => VertexProp::Y,
                "z" => VertexProp::Z,
                "nx" => VertexProp::Nx,
                "ny" => VertexProp::Ny,
                "nz" => VertexProp::Nz,
                "red" => VertexProp::Red,
                "green" => VertexProp::Green,
                "blue" => VertexProp::Blue,
                _ => VertexProp::Ignored,
            }),
            ["property", ..] => {}
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(err(n, &format!("unexpected header line {line:?}"))),
        }
    }
    if !header_done {
        return Err(err(0, "missing end_header"));
    }
    let vertex_count = vertex_count.ok_or_else(|| err(0, "missing vertex element"))?;
    for p in [VertexProp::X, VertexProp::Y, VertexProp::Z] {
        if !props.contains(&p) {
            return Err(err(0, "vertex element lacks x/y/z"));
        }
    }
    let has_normals = [VertexProp::Nx, VertexProp::Ny, VertexProp::Nz].iter().all(|p| props.contains(p));
    let has_colors = [VertexProp::Red, VertexProp::Green, VertexProp::Blue].iter().all(|p| props.contains(p));

    let mut body = lines.filter(|(_, l)| !l.is_empty());
    let mut asset = MeshAsset::default();
    for _ in 0..vertex_count {
        let (n, line) = body.next().ok_or_else(|| err(0, "unexpected end of vertex data"))?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| err(n, &format!("bad number {w:?}"))))
            .collect::<Result<_, _>>()?;
        if values.len() < props.len() {
            return Err(err(n, "vertex line has too few values"));
        }
        let mut pos = [0.0; 3];
        let mut normal = [0.0; 3];
        let mut color = [200u8; 3];
        for (prop, v) in props.iter().zip(&values) {
            match prop {
                VertexProp::X => pos[0] = *v,
                VertexProp::Y => pos[1] = *v,
                VertexProp::Z => pos[2] = *v,
                VertexProp::Nx => normal[0] = *v,
                VertexProp::Ny => normal[1] = *v,
                VertexProp::Nz => normal[2] = *v,
                VertexProp::Red => color[0] = *v as u8,
                VertexProp::Green => color[1] = *v as u8,
                VertexProp::Blue => color[2] = *v as u8,
                VertexProp::Ignored => {}
            }
        }
        asset.vertices.push(pos);
        asset.normals.push(normal);
        asset.colors.push(color);
    }

    let mut degenerate = 0;
    let mut triangle_index = 0usize;
    for _ in 0..face_count {
        let (n, line) = body.next().ok_or_else(|| err(0, "unexpected end of face data"))?;
        let values: Vec<i64> = line
            .split_whitespace()
            .map(|w| w.parse::<i64>().map_err(|_| err(n, &format!("bad index {w:?}"))))
            .collect::<Result<_, _>>()?;
        let (&k, rest) = values.split_first().ok_or_else(|| err(n, "empty face"))?;
        if k < 3 || rest.len() < k as usize {
            return Err(err(n, "face needs at least three indices"));
        }
        let poly = &rest[..k as usize];
        for i in 1..poly.len() - 1 {
            let tri = [poly[0], poly[i], poly[i + 1]];
            for &index in &tri {
                if index < 0 || index as usize >= vertex_count {
                    return Err(MeshError::IndexOutOfRange {
                        triangle: triangle_index,
                        index,
                        vertex_count,
                    });
                }
            }
            triangle_index += 1;
            let tri = tri.map(|i| i as u32);
            if triangle_area(&asset, &tri) <= 0.0 {
                degenerate += 1;
            } else {
                asset.triangles.push(tri);
            }
        }
    }

    if has_normals {
        for (i, n) in asset.normals.iter_mut().enumerate() {
            let v = Vec3::from(*n);
            let len = v.norm();
            if len == 0.0 || !len.is_finite() {
                return Err(MeshError::ZeroNormal(i));
            }
            if (len - 1.0).abs() > 1e-6 {
                *n = (v / len).into();
            }
        }
    } else {
        compute_normals(&mut asset);
    }
    if !has_colors {
        asset.colors.iter_mut().for_each(|c| *c = [200; 3]);
    }
    Ok(LoadedMesh {
        asset,
        degenerate_dropped: degenerate,
    })
}

fn triangle_area(asset: &MeshAsset, tri: &[u32; 3]) -> f64 {
    let [a, b, c] = tri.map(|i| Vec3::from(asset.vertices[i as usize]));
    (b - a).cross(&(c - a)).norm() * 0.5
}

fn compute_normals(asset: &mut MeshAsset) {
    let mut acc = vec![Vec3::zeros(); asset.vertices.len()];
    for tri in &asset.triangles {
        let [a, b, c] = tri.map(|i| Vec3::from(asset.vertices[i as usize]));
        let n = (b - a).cross(&(c - a));
        for &i in tri {
            acc[i as usize] += n;
        }
    }
    for (slot, n) in asset.normals.iter_mut().zip(acc) {
        *slot = if n.norm() > 0.0 { n.normalize().into() } else { [0.0, 0.0, 1.0] };
    }
}

const FACES: [([i32; 3], [[f64; 3]; 4]); 6] = [
    ([1, 0, 0], [[1., 0., 0.], [1., 1., 0.], [1., 1., 1.], [1., 0., 1.]]),
    ([-1, 0, 0], [[0., 0., 0.], [0., 0., 1.], [0., 1., 1.], [0., 1., 0.]]),
    ([0, 1, 0], [[0., 1., 0.], [0., 1., 1.], [1., 1., 1.], [1., 1., 0.]]),
    ([0, -1, 0], [[0., 0., 0.], [1., 0., 0.], [1., 0., 1.], [0., 0., 1.]]),
    ([0, 0, 1], [[0., 0., 1.], [1., 0., 1.], [1., 1., 1.], [0., 1., 1.]]),
    ([0, 0, -1], [[0., 0., 0.], [0., 1., 0.], [1., 1., 0.], [1., 0., 0.]]),
];

/// Extrudes every voxel face not shared with another occupied voxel into two
/// outward-facing triangles, colored by voxel height over `[z_min, z_max]`.
pub fn voxel_surface_mesh(voxels: &[VoxelCoord], resolution: f64, z_min: f64, z_max: f64) -> MeshAsset {
    let set: HashSet<VoxelCoord> = voxels.iter().copied().collect();
    let mut sorted: Vec<VoxelCoord> = set.iter().copied().collect();
    sorted.sort_unstable();
    let mut asset = MeshAsset::default();
    for v in sorted {
        let color = height_color_u8(&v, resolution, z_min, z_max);
        for (dir, corners) in FACES {
            if set.contains(&v.offset(dir[0], dir[1], dir[2])) {
                continue;
            }
            let base = asset.vertices.len() as u32;
            for c in corners {
                asset.vertices.push([
                    (v.ix as f64 + c[0]) * resolution,
                    (v.iy as f64 + c[1]) * resolution,
                    (v.iz as f64 + c[2]) * resolution,
                ]);
                asset.normals.push(dir.map(|d| d as f64));
                asset.colors.push(color);
            }
            asset.triangles.push([base, base + 1, base + 2]);
            asset.triangles.push([base, base + 2, base + 3]);
        }
    }
    asset
}
