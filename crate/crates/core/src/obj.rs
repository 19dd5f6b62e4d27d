//! Wavefront OBJ subset: `v`/`vt`/`vn`/`f` lines with `#` comments.
//! Enough to move geometry between this tool and external renderers;
//! materials and groups are out of scope because shading is defined by the
//! renderer configs, not by assets.

use glam::{DVec2, DVec3};
use std::fmt::Write as _;
use std::path::Path;

use crate::mesh::{compute_vertex_normals, validate_mesh, Face, Mesh, MeshError};

/// One `f`-line corner before triangulation.
struct Corner {
    vertex: u32,
    uv: u32,
    normal: Option<u32>,
}

/// Parses the OBJ subset. Polygons are fan-triangulated; if any corner
/// lacks a normal index the whole mesh gets computed smooth normals.
/// Normals read from the file are normalized.
pub fn parse_obj(text: &str) -> Result<Mesh, MeshError> {
    let mut vertices: Vec<DVec3> = Vec::new();
    let mut uvs: Vec<DVec2> = Vec::new();
    let mut normals: Vec<DVec3> = Vec::new();
    let mut faces: Vec<Face> = Vec::new();
    let mut all_corners_have_normals = true;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let malformed =
            || MeshError::MalformedLine { line, content: content.to_string() };
        let mut tokens = content.split_whitespace();
        let directive = tokens.next().expect("non-empty line has a first token");
        let rest: Vec<&str> = tokens.collect();
        match directive {
            "v" => {
                let [x, y, z] = parse_floats::<3>(&rest).ok_or_else(malformed)?;
                vertices.push(DVec3::new(x, y, z));
            }
            "vt" => {
                let [u, v] = parse_floats::<2>(&rest).ok_or_else(malformed)?;
                uvs.push(DVec2::new(u, v));
            }
            "vn" => {
                let [x, y, z] = parse_floats::<3>(&rest).ok_or_else(malformed)?;
                let n = DVec3::new(x, y, z);
                if n.length() < 1e-12 {
                    return Err(malformed());
                }
                normals.push(n.normalize());
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(malformed());
                }
                let corners = rest
                    .iter()
                    .map(|c| parse_corner(c, line, &vertices, &uvs, &normals))
                    .collect::<Result<Vec<_>, _>>()?;
                all_corners_have_normals &= corners.iter().all(|c| c.normal.is_some());
                for i in 1..corners.len() - 1 {
                    let tri = [&corners[0], &corners[i], &corners[i + 1]];
                    faces.push(Face {
                        vertices: [tri[0].vertex, tri[1].vertex, tri[2].vertex],
                        uvs: [tri[0].uv, tri[1].uv, tri[2].uv],
                        normals: [
                            tri[0].normal.unwrap_or(0),
                            tri[1].normal.unwrap_or(0),
                            tri[2].normal.unwrap_or(0),
                        ],
                    });
                }
            }
            _ => return Err(malformed()),
        }
    }

    let mut mesh = Mesh { vertices, uvs, normals, faces };
    if !all_corners_have_normals || mesh.normals.is_empty() {
        mesh = compute_vertex_normals(&mesh)?;
    }
    let violations = validate_mesh(&mesh);
    if !violations.is_empty() {
        return Err(MeshError::InvalidMesh(violations));
    }
    Ok(mesh)
}

fn parse_floats<const N: usize>(tokens: &[&str]) -> Option<[f64; N]> {
    if tokens.len() != N {
        return None;
    }
    let mut out = [0.0; N];
    for (slot, tok) in out.iter_mut().zip(tokens) {
        let v: f64 = tok.parse().ok()?;
        if !v.is_finite() {
            return None;
        }
        *slot = v;
    }
    Some(out)
}

fn parse_corner(
    corner: &str,
    line: usize,
    vertices: &[DVec3],
    uvs: &[DVec2],
    normals: &[DVec3],
) -> Result<Corner, MeshError> {
    let malformed = || MeshError::MalformedLine { line, content: corner.to_string() };
    let parts: Vec<&str> = corner.split('/').collect();
    if parts.len() > 3 || parts.is_empty() {
        return Err(malformed());
    }
    // `a` and `a//c` both omit the UV index, which the texture attack
    // cannot work without.
    if parts.len() == 1 || parts[1].is_empty() {
        return Err(MeshError::MissingUv { line });
    }
    let index = |tok: &str, kind: &'static str, count: usize| -> Result<u32, MeshError> {
        let i: usize = tok.parse().map_err(|_| malformed())?;
        if i == 0 {
            return Err(malformed()); // OBJ indices are 1-based
        }
        if i > count {
            return Err(MeshError::IndexOutOfRange { line, kind, index: i, count });
        }
        Ok((i - 1) as u32)
    };
    let vertex = index(parts[0], "vertex", vertices.len())?;
    let uv = index(parts[1], "uv", uvs.len())?;
    let normal = match parts.get(2) {
        Some(tok) if !tok.is_empty() => Some(index(tok, "normal", normals.len())?),
        _ => None,
    };
    Ok(Corner { vertex, uv, normal })
}

/// Serializes with enough digits (9 significant) that a round trip
/// reproduces coordinates to ~1e-8 relative.
pub fn serialize_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", sig9(v.x), sig9(v.y), sig9(v.z)).unwrap();
    }
    for t in &mesh.uvs {
        writeln!(out, "vt {} {}", sig9(t.x), sig9(t.y)).unwrap();
    }
    for n in &mesh.normals {
        writeln!(out, "vn {} {} {}", sig9(n.x), sig9(n.y), sig9(n.z)).unwrap();
    }
    for f in &mesh.faces {
        writeln!(
            out,
            "f {}/{}/{} {}/{}/{} {}/{}/{}",
            f.vertices[0] + 1,
            f.uvs[0] + 1,
            f.normals[0] + 1,
            f.vertices[1] + 1,
            f.uvs[1] + 1,
            f.normals[1] + 1,
            f.vertices[2] + 1,
            f.uvs[2] + 1,
            f.normals[2] + 1,
        )
        .unwrap();
    }
    out
}

/// Decimal formatting with 9 significant digits and trailing zeros trimmed.
/// Plain decimal (no exponents) keeps the files friendly to other OBJ
/// readers.
fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let mut s = format!("{v:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

pub fn load_obj(path: &Path) -> Result<Mesh, MeshError> {
    parse_obj(&std::fs::read_to_string(path)?)
}
