//! Triangle meshes with per-corner UVs, validation, and the procedural
//! object corpus (cube, uv-sphere, torus, cylinder, cone).

use glam::{DVec2, DVec3};
use std::fmt;
use std::str::FromStr;

use crate::texture::{PatternSpec, Texture};

/// Object-space triangle area below this is considered degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Unit-normal length tolerance.
pub const NORMAL_LEN_TOL: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("malformed line {line}: {content:?}")]
    MalformedLine { line: usize, content: String },
    #[error("line {line}: {kind} index {index} out of range (have {count})")]
    IndexOutOfRange {
        line: usize,
        kind: &'static str,
        index: usize,
        count: usize,
    },
    #[error("line {line}: face corner has no UV index; textured attack requires UVs")]
    MissingUv { line: usize },
    #[error("vertex {vertex} belongs to no face")]
    IsolatedVertex { vertex: usize },
    #[error("unsupported primitive kind {0:?}")]
    UnsupportedKind(String),
    #[error("{kind} requires resolution >= {min}, got {got}")]
    InvalidResolution { kind: PrimitiveKind, min: u32, got: u32 },
    #[error("mesh violates invariants: {}", format_violations(.0))]
    InvalidMesh(Vec<Violation>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// One violated mesh invariant, naming the offending element.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    VertexIndexOutOfRange { face: usize, corner: usize, index: u32 },
    UvIndexOutOfRange { face: usize, corner: usize, index: u32 },
    NormalIndexOutOfRange { face: usize, corner: usize, index: u32 },
    UvOutOfBounds { uv: usize, value: [f64; 2] },
    NonUnitNormal { normal: usize, length: f64 },
    DegenerateFace { face: usize, area: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::VertexIndexOutOfRange { face, corner, index } => {
                write!(f, "face {face} corner {corner}: vertex index {index} out of range")
            }
            Violation::UvIndexOutOfRange { face, corner, index } => {
                write!(f, "face {face} corner {corner}: uv index {index} out of range")
            }
            Violation::NormalIndexOutOfRange { face, corner, index } => {
                write!(f, "face {face} corner {corner}: normal index {index} out of range")
            }
            Violation::UvOutOfBounds { uv, value } => {
                write!(f, "uv {uv} = ({}, {}) outside [0,1]^2", value[0], value[1])
            }
            Violation::NonUnitNormal { normal, length } => {
                write!(f, "normal {normal} has length {length}")
            }
            Violation::DegenerateFace { face, area } => {
                write!(f, "face {face} is degenerate (area {area:e})")
            }
        }
    }
}

/// Triangle with per-corner vertex/uv/normal indices (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub vertices: [u32; 3],
    pub uvs: [u32; 3],
    pub normals: [u32; 3],
}

/// Indexed triangle mesh. The attack never modifies geometry; meshes are
/// immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<DVec3>,
    pub uvs: Vec<DVec2>,
    pub normals: Vec<DVec3>,
    pub faces: Vec<Face>,
}

impl Mesh {
    pub fn face_positions(&self, face: &Face) -> [DVec3; 3] {
        [
            self.vertices[face.vertices[0] as usize],
            self.vertices[face.vertices[1] as usize],
            self.vertices[face.vertices[2] as usize],
        ]
    }

    pub fn face_area(&self, face: &Face) -> f64 {
        let [a, b, c] = self.face_positions(face);
        (b - a).cross(c - a).length() * 0.5
    }

    pub fn surface_area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_area(f)).sum()
    }
}

/// Checks every `Mesh` invariant and reports each violation found.
pub fn validate_mesh(mesh: &Mesh) -> Vec<Violation> {
    let mut out = Vec::new();
    for (fi, face) in mesh.faces.iter().enumerate() {
        for c in 0..3 {
            if face.vertices[c] as usize >= mesh.vertices.len() {
                out.push(Violation::VertexIndexOutOfRange {
                    face: fi,
                    corner: c,
                    index: face.vertices[c],
                });
            }
            if face.uvs[c] as usize >= mesh.uvs.len() {
                out.push(Violation::UvIndexOutOfRange { face: fi, corner: c, index: face.uvs[c] });
            }
            if face.normals[c] as usize >= mesh.normals.len() {
                out.push(Violation::NormalIndexOutOfRange {
                    face: fi,
                    corner: c,
                    index: face.normals[c],
                });
            }
        }
    }
    for (ui, uv) in mesh.uvs.iter().enumerate() {
        if !(0.0..=1.0).contains(&uv.x) || !(0.0..=1.0).contains(&uv.y) {
            out.push(Violation::UvOutOfBounds { uv: ui, value: [uv.x, uv.y] });
        }
    }
    for (ni, n) in mesh.normals.iter().enumerate() {
        let len = n.length();
        if (len - 1.0).abs() > NORMAL_LEN_TOL {
            out.push(Violation::NonUnitNormal { normal: ni, length: len });
        }
    }
    for (fi, face) in mesh.faces.iter().enumerate() {
        if face.vertices.iter().any(|&v| v as usize >= mesh.vertices.len()) {
            continue; // cannot measure area with broken indices
        }
        let area = mesh.face_area(face);
        if area <= DEGENERATE_AREA {
            out.push(Violation::DegenerateFace { face: fi, area });
        }
    }
    out
}

/// Replaces the mesh's normals with smooth per-vertex normals: the
/// area-weighted average of incident face normals, normalized.
///
/// The cross product of two triangle edges has magnitude 2x the face area,
/// so summing raw cross products per vertex is exactly the area weighting.
pub fn compute_vertex_normals(mesh: &Mesh) -> Result<Mesh, MeshError> {
    let mut accum = vec![DVec3::ZERO; mesh.vertices.len()];
    let mut touched = vec![false; mesh.vertices.len()];
    for face in &mesh.faces {
        let [a, b, c] = self_positions(mesh, face);
        let cross = (b - a).cross(c - a);
        for &vi in &face.vertices {
            accum[vi as usize] += cross;
            touched[vi as usize] = true;
        }
    }
    if let Some(vertex) = touched.iter().position(|&t| !t) {
        return Err(MeshError::IsolatedVertex { vertex });
    }
    let normals: Vec<DVec3> = accum
        .iter()
        .map(|n| {
            if n.length() < 1e-12 {
                DVec3::Z // opposing faces cancelled; arbitrary but deterministic
            } else {
                n.normalize()
            }
        })
        .collect();
    let faces = mesh
        .faces
        .iter()
        .map(|f| Face { vertices: f.vertices, uvs: f.uvs, normals: f.vertices })
        .collect();
    Ok(Mesh { vertices: mesh.vertices.clone(), uvs: mesh.uvs.clone(), normals, faces })
}

fn self_positions(mesh: &Mesh, face: &Face) -> [DVec3; 3] {
    mesh.face_positions(face)
}

/// Procedural primitive kinds standing in for an object library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimitiveKind {
    Cube,
    UvSphere,
    Torus,
    Cylinder,
    Cone,
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PrimitiveKind::Cube => "cube",
            PrimitiveKind::UvSphere => "uv-sphere",
            PrimitiveKind::Torus => "torus",
            PrimitiveKind::Cylinder => "cylinder",
            PrimitiveKind::Cone => "cone",
        };
        f.write_str(s)
    }
}

impl FromStr for PrimitiveKind {
    type Err = MeshError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cube" => Ok(PrimitiveKind::Cube),
            "uv-sphere" => Ok(PrimitiveKind::UvSphere),
            "torus" => Ok(PrimitiveKind::Torus),
            "cylinder" => Ok(PrimitiveKind::Cylinder),
            "cone" => Ok(PrimitiveKind::Cone),
            other => Err(MeshError::UnsupportedKind(other.to_string())),
        }
    }
}

impl PrimitiveKind {
    pub fn min_resolution(self) -> u32 {
        match self {
            PrimitiveKind::Cube => 1,
            PrimitiveKind::UvSphere => 2,
            PrimitiveKind::Torus | PrimitiveKind::Cylinder | PrimitiveKind::Cone => 3,
        }
    }
}

/// Builds a watertight primitive mesh with a non-overlapping UV atlas plus
/// its deterministic base texture. Identical inputs give bitwise-identical
/// outputs.
pub fn generate_primitive(
    kind: PrimitiveKind,
    resolution: u32,
    base_texture: &PatternSpec,
) -> Result<(Mesh, Texture), MeshError> {
    let min = kind.min_resolution();
    if resolution < min {
        return Err(MeshError::InvalidResolution { kind, min, got: resolution });
    }
    let mesh = match kind {
        PrimitiveKind::Cube => cube(resolution),
        PrimitiveKind::UvSphere => uv_sphere(resolution),
        PrimitiveKind::Torus => torus(resolution),
        PrimitiveKind::Cylinder => cylinder(resolution),
        PrimitiveKind::Cone => cone(resolution),
    };
    debug_assert!(validate_mesh(&mesh).is_empty(), "generator produced invalid {kind}");
    Ok((mesh, base_texture.generate()))
}

struct MeshBuilder {
    vertices: Vec<DVec3>,
    uvs: Vec<DVec2>,
    normals: Vec<DVec3>,
    faces: Vec<Face>,
}

impl MeshBuilder {
    fn new() -> Self {
        MeshBuilder { vertices: Vec::new(), uvs: Vec::new(), normals: Vec::new(), faces: Vec::new() }
    }

    fn vertex(&mut self, p: DVec3) -> u32 {
        self.vertices.push(p);
        (self.vertices.len() - 1) as u32
    }

    fn uv(&mut self, u: f64, v: f64) -> u32 {
        self.uvs.push(DVec2::new(u, v));
        (self.uvs.len() - 1) as u32
    }

    fn normal(&mut self, n: DVec3) -> u32 {
        self.normals.push(n.normalize());
        (self.normals.len() - 1) as u32
    }

    /// Emits (a, b, c) with corner tuples (vertex, uv, normal).
    fn tri(&mut self, a: (u32, u32, u32), b: (u32, u32, u32), c: (u32, u32, u32)) {
        self.faces.push(Face {
            vertices: [a.0, b.0, c.0],
            uvs: [a.1, b.1, c.1],
            normals: [a.2, b.2, c.2],
        });
    }

    fn build(self) -> Mesh {
        Mesh { vertices: self.vertices, uvs: self.uvs, normals: self.normals, faces: self.faces }
    }
}

/// Axis-aligned cube, half extent 0.6, per-face UV cells in a 3x2 atlas,
/// flat face normals. `resolution` subdivides each face into r x r quads.
fn cube(resolution: u32) -> Mesh {
    const HALF: f64 = 0.6;
    // (normal, tangent u, tangent v) per face
    const FACES: [(DVec3, DVec3, DVec3); 6] = [
        (DVec3::X, DVec3::NEG_Z, DVec3::Y),
        (DVec3::NEG_X, DVec3::Z, DVec3::Y),
        (DVec3::Y, DVec3::X, DVec3::NEG_Z),
        (DVec3::NEG_Y, DVec3::X, DVec3::Z),
        (DVec3::Z, DVec3::X, DVec3::Y),
        (DVec3::NEG_Z, DVec3::NEG_X, DVec3::Y),
    ];
    let r = resolution as usize;
    let mut b = MeshBuilder::new();
    for (fi, &(n, tu, tv)) in FACES.iter().enumerate() {
        let ni = b.normal(n);
        let cell_u0 = (fi % 3) as f64 / 3.0;
        let cell_v0 = (fi / 3) as f64 / 2.0;
        let mut grid = Vec::with_capacity((r + 1) * (r + 1));
        for j in 0..=r {
            for i in 0..=r {
                let fu = i as f64 / r as f64;
                let fv = j as f64 / r as f64;
                let p = n * HALF + tu * HALF * (2.0 * fu - 1.0) + tv * HALF * (2.0 * fv - 1.0);
                let vi = b.vertex(p);
                let ui = b.uv(cell_u0 + fu / 3.0, cell_v0 + fv / 2.0);
                grid.push((vi, ui, ni));
            }
        }
        for j in 0..r {
            for i in 0..r {
                let a = grid[j * (r + 1) + i];
                let bb = grid[j * (r + 1) + i + 1];
                let c = grid[(j + 1) * (r + 1) + i + 1];
                let d = grid[(j + 1) * (r + 1) + i];
                // (tangent u) x (tangent v) = normal, so this winding is
                // counter-clockwise seen from outside.
                b.tri(a, bb, c);
                b.tri(a, c, d);
            }
        }
    }
    b.build()
}

/// UV sphere of radius 1 with n longitude segments and n+1 latitude bands
/// (n interior rows plus per-segment pole vertices); exactly 2n^2
/// triangles including the pole fans.
fn uv_sphere(resolution: u32) -> Mesh {
    let n = resolution as usize;
    let mut b = MeshBuilder::new();
    // Interior latitude rows i = 1..=n of the (n+2)-row parameterization.
    let mut grid = vec![(0u32, 0u32, 0u32); n * (n + 1)];
    for i in 1..=n {
        let theta = -std::f64::consts::FRAC_PI_2
            + std::f64::consts::PI * i as f64 / (n + 1) as f64;
        let (y, c) = (theta.sin(), theta.cos());
        for j in 0..=n {
            let phi = std::f64::consts::TAU * j as f64 / n as f64;
            let p = DVec3::new(c * phi.sin(), y, c * phi.cos());
            let vi = b.vertex(p);
            let ui = b.uv(j as f64 / n as f64, i as f64 / (n + 1) as f64);
            let ni = b.normal(p);
            grid[(i - 1) * (n + 1) + j] = (vi, ui, ni);
        }
    }
    // One pole vertex per longitude segment so every vertex is referenced
    // and each fan triangle gets a seam-free UV.
    let pole = |b: &mut MeshBuilder, y: f64, j: usize| {
        let vi = b.vertex(DVec3::new(0.0, y, 0.0));
        let ui = b.uv((j as f64 + 0.5) / n as f64, (y + 1.0) / 2.0);
        let ni = b.normal(DVec3::new(0.0, y, 0.0));
        (vi, ui, ni)
    };
    for j in 0..n {
        let south = pole(&mut b, -1.0, j);
        let t0 = grid[j];
        let t1 = grid[j + 1];
        b.tri(south, t1, t0);
    }
    for i in 0..n - 1 {
        for j in 0..n {
            let s0 = grid[i * (n + 1) + j];
            let s1 = grid[i * (n + 1) + j + 1];
            let t0 = grid[(i + 1) * (n + 1) + j];
            let t1 = grid[(i + 1) * (n + 1) + j + 1];
            b.tri(s0, s1, t1);
            b.tri(s0, t1, t0);
        }
    }
    for j in 0..n {
        let north = pole(&mut b, 1.0, j);
        let s0 = grid[(n - 1) * (n + 1) + j];
        let s1 = grid[(n - 1) * (n + 1) + j + 1];
        b.tri(s0, s1, north);
    }
    b.build()
}

/// Torus with major radius 0.75 and minor radius 0.3, both directions
/// wrapped; 2n^2 triangles.
fn torus(resolution: u32) -> Mesh {
    const MAJOR: f64 = 0.75;
    const MINOR: f64 = 0.3;
    let n = resolution as usize;
    let mut b = MeshBuilder::new();
    let mut grid = vec![(0u32, 0u32, 0u32); (n + 1) * (n + 1)];
    for i in 0..=n {
        let phi = std::f64::consts::TAU * i as f64 / n as f64; // around the tube
        let (sp, cp) = (phi.sin(), phi.cos());
        for j in 0..=n {
            let theta = std::f64::consts::TAU * j as f64 / n as f64; // around the ring
            let (st, ct) = (theta.sin(), theta.cos());
            let p = DVec3::new((MAJOR + MINOR * cp) * st, MINOR * sp, (MAJOR + MINOR * cp) * ct);
            let normal = DVec3::new(cp * st, sp, cp * ct);
            let vi = b.vertex(p);
            let ui = b.uv(j as f64 / n as f64, i as f64 / n as f64);
            let ni = b.normal(normal);
            grid[i * (n + 1) + j] = (vi, ui, ni);
        }
    }
    for i in 0..n {
        for j in 0..n {
            let s0 = grid[i * (n + 1) + j];
            let s1 = grid[i * (n + 1) + j + 1];
            let t0 = grid[(i + 1) * (n + 1) + j];
            let t1 = grid[(i + 1) * (n + 1) + j + 1];
            b.tri(s0, s1, t1);
            b.tri(s0, t1, t0);
        }
    }
    b.build()
}

/// Disc helper for caps: fan around `center` with ring positions supplied
/// by `ring`, UVs on a disc of radius 0.24 centered at (cu, cv).
fn cap(
    b: &mut MeshBuilder,
    center: DVec3,
    normal: DVec3,
    ring: &[DVec3],
    cu: f64,
    cv: f64,
    flip: bool,
) {
    const UV_R: f64 = 0.24;
    let n = ring.len();
    let ni = b.normal(normal);
    let ci = b.vertex(center);
    let cui = b.uv(cu, cv);
    let mut rim = Vec::with_capacity(n + 1);
    for (k, &p) in ring.iter().chain(ring.first()).enumerate() {
        let ang = std::f64::consts::TAU * k as f64 / n as f64;
        let vi = b.vertex(p);
        let ui = b.uv(cu + UV_R * ang.sin(), cv + UV_R * ang.cos());
        rim.push((vi, ui, ni));
    }
    for k in 0..n {
        if flip {
            b.tri((ci, cui, ni), rim[k + 1], rim[k]);
        } else {
            b.tri((ci, cui, ni), rim[k], rim[k + 1]);
        }
    }
}

/// Cylinder, radius 0.6 and half height 0.8: side band (2n triangles) plus
/// two cap fans (n each), 4n triangles total. Side UVs occupy the top half
/// of the atlas, cap discs the two bottom quadrants.
fn cylinder(resolution: u32) -> Mesh {
    const R: f64 = 0.6;
    const H: f64 = 0.8;
    let n = resolution as usize;
    let mut b = MeshBuilder::new();
    let mut bottom = Vec::with_capacity(n + 1);
    let mut top = Vec::with_capacity(n + 1);
    let mut ring = Vec::with_capacity(n);
    for j in 0..=n {
        let theta = std::f64::consts::TAU * j as f64 / n as f64;
        let (s, c) = (theta.sin(), theta.cos());
        let radial = DVec3::new(s, 0.0, c);
        let ni = b.normal(radial);
        let u = j as f64 / n as f64;
        let vb = b.vertex(DVec3::new(R * s, -H, R * c));
        let ub = b.uv(u, 0.5);
        let vt = b.vertex(DVec3::new(R * s, H, R * c));
        let ut = b.uv(u, 1.0);
        bottom.push((vb, ub, ni));
        top.push((vt, ut, ni));
        if j < n {
            ring.push(DVec3::new(R * s, 0.0, R * c));
        }
    }
    for j in 0..n {
        b.tri(bottom[j], bottom[j + 1], top[j + 1]);
        b.tri(bottom[j], top[j + 1], top[j]);
    }
    let top_ring: Vec<DVec3> = ring.iter().map(|p| DVec3::new(p.x, H, p.z)).collect();
    let bottom_ring: Vec<DVec3> = ring.iter().map(|p| DVec3::new(p.x, -H, p.z)).collect();
    cap(&mut b, DVec3::new(0.0, H, 0.0), DVec3::Y, &top_ring, 0.25, 0.25, false);
    cap(&mut b, DVec3::new(0.0, -H, 0.0), DVec3::NEG_Y, &bottom_ring, 0.75, 0.25, true);
    b.build()
}

/// Cone with base radius 0.8 and height 1.4 centered on the origin: n side
/// triangles (apex duplicated per segment for smooth slant normals) plus an
/// n-triangle base fan, 2n total.
fn cone(resolution: u32) -> Mesh {
    const R: f64 = 0.8;
    const H: f64 = 1.4;
    let n = resolution as usize;
    let apex = DVec3::new(0.0, H / 2.0, 0.0);
    let base_y = -H / 2.0;
    let slant = (H * H + R * R).sqrt();
    let mut b = MeshBuilder::new();
    const UV_R: f64 = 0.24;
    let mut rim = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let theta = std::f64::consts::TAU * j as f64 / n as f64;
        let (s, c) = (theta.sin(), theta.cos());
        let vi = b.vertex(DVec3::new(R * s, base_y, R * c));
        let ui = b.uv(0.25 + UV_R * s, 0.75 + UV_R * c);
        let ni = b.normal(DVec3::new(s * H / slant, R / slant, c * H / slant));
        rim.push((vi, ui, ni));
    }
    for j in 0..n {
        let mid = std::f64::consts::TAU * (j as f64 + 0.5) / n as f64;
        let apex_n =
            b.normal(DVec3::new(mid.sin() * H / slant, R / slant, mid.cos() * H / slant));
        let apex_v = b.vertex(apex);
        let apex_u = b.uv(0.25, 0.75);
        b.tri(rim[j], rim[j + 1], (apex_v, apex_u, apex_n));
    }
    let ring: Vec<DVec3> = (0..n)
        .map(|j| {
            let theta = std::f64::consts::TAU * j as f64 / n as f64;
            DVec3::new(R * theta.sin(), base_y, R * theta.cos())
        })
        .collect();
    cap(&mut b, DVec3::new(0.0, base_y, 0.0), DVec3::NEG_Y, &ring, 0.75, 0.75, true);
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture::PatternSpec;

    fn checker8() -> PatternSpec {
        "checker-8".parse().unwrap()
    }

    #[test]
    fn cube_counts_match_construction() {
        let (mesh, tex) = generate_primitive(PrimitiveKind::Cube, 1, &checker8()).unwrap();
        assert_eq!(mesh.faces.len(), 12);
        assert_eq!(mesh.uvs.len(), 24);
        assert_eq!(tex.width(), 64);
        assert_eq!(tex.height(), 64);
    }

    #[test]
    fn sphere_triangle_count_is_grid_tessellation() {
        let (mesh, _) = generate_primitive(PrimitiveKind::UvSphere, 16, &checker8()).unwrap();
        assert_eq!(mesh.faces.len(), 16 * 16 * 2);
    }

    #[test]
    fn generators_are_deterministic() {
        for kind in [
            PrimitiveKind::Cube,
            PrimitiveKind::UvSphere,
            PrimitiveKind::Torus,
            PrimitiveKind::Cylinder,
            PrimitiveKind::Cone,
        ] {
            let spec: PatternSpec = "noise-6@9".parse().unwrap();
            let (m1, t1) = generate_primitive(kind, 8, &spec).unwrap();
            let (m2, t2) = generate_primitive(kind, 8, &spec).unwrap();
            assert_eq!(m1, m2, "{kind} mesh not deterministic");
            assert_eq!(t1.data(), t2.data(), "{kind} texture not deterministic");
        }
    }

    #[test]
    fn generators_pass_validation() {
        for (kind, res) in [
            (PrimitiveKind::Cube, 1),
            (PrimitiveKind::Cube, 3),
            (PrimitiveKind::UvSphere, 2),
            (PrimitiveKind::UvSphere, 16),
            (PrimitiveKind::Torus, 12),
            (PrimitiveKind::Cylinder, 16),
            (PrimitiveKind::Cone, 16),
        ] {
            let (mesh, _) = generate_primitive(kind, res, &checker8()).unwrap();
            let violations = validate_mesh(&mesh);
            assert!(violations.is_empty(), "{kind}@{res}: {violations:?}");
        }
    }

    #[test]
    fn generator_windings_face_outward() {
        // All primitives are star-shaped around a point on their axis, so
        // the face normal of every triangle must point away from the
        // nearest axis point (torus: away from the tube center).
        for (kind, res) in [
            (PrimitiveKind::Cube, 2),
            (PrimitiveKind::UvSphere, 8),
            (PrimitiveKind::Cylinder, 12),
            (PrimitiveKind::Cone, 12),
        ] {
            let (mesh, _) = generate_primitive(kind, res, &checker8()).unwrap();
            for (fi, face) in mesh.faces.iter().enumerate() {
                let [a, b, c] = mesh.face_positions(face);
                let centroid = (a + b + c) / 3.0;
                let outward = (b - a).cross(c - a);
                // reference point on the vertical axis at centroid height,
                // clamped inside the solid
                let axis_point = DVec3::new(0.0, centroid.y * 0.5, 0.0);
                assert!(
                    outward.dot(centroid - axis_point) > 0.0,
                    "{kind} face {fi} winds inward"
                );
            }
        }
        let (mesh, _) = generate_primitive(PrimitiveKind::Torus, 12, &checker8()).unwrap();
        for (fi, face) in mesh.faces.iter().enumerate() {
            let [a, b, c] = mesh.face_positions(face);
            let centroid = (a + b + c) / 3.0;
            let ring = DVec3::new(centroid.x, 0.0, centroid.z).normalize() * 0.75;
            let outward = (b - a).cross(c - a);
            assert!(outward.dot(centroid - ring) > 0.0, "torus face {fi} winds inward");
        }
    }

    #[test]
    fn resolution_below_minimum_is_rejected() {
        let err = generate_primitive(PrimitiveKind::UvSphere, 1, &checker8()).unwrap_err();
        assert!(matches!(err, MeshError::InvalidResolution { .. }));
    }

    #[test]
    fn validate_flags_uv_out_of_bounds() {
        let (mut mesh, _) = generate_primitive(PrimitiveKind::Cube, 1, &checker8()).unwrap();
        mesh.uvs[3].x = 1.2;
        let violations = validate_mesh(&mesh);
        assert_eq!(violations.len(), 1);
        assert!(matches!(violations[0], Violation::UvOutOfBounds { uv: 3, .. }));
    }

    #[test]
    fn validate_flags_degenerate_triangle() {
        let (mut mesh, _) = generate_primitive(PrimitiveKind::Cube, 1, &checker8()).unwrap();
        let v0 = mesh.faces[0].vertices[0] as usize;
        let v1 = mesh.faces[0].vertices[1] as usize;
        mesh.vertices[v1] = mesh.vertices[v0];
        let violations = validate_mesh(&mesh);
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::DegenerateFace { face: 0, .. })));
    }

    #[test]
    fn flat_triangle_normals_point_up() {
        let mesh = Mesh {
            vertices: vec![
                DVec3::new(0.0, 0.0, 0.0),
                DVec3::new(1.0, 0.0, 0.0),
                DVec3::new(0.0, 1.0, 0.0),
            ],
            uvs: vec![DVec2::ZERO, DVec2::X, DVec2::Y],
            normals: vec![],
            faces: vec![Face { vertices: [0, 1, 2], uvs: [0, 1, 2], normals: [0, 0, 0] }],
        };
        let smooth = compute_vertex_normals(&mesh).unwrap();
        for n in &smooth.normals {
            assert!((*n - DVec3::Z).length() < 1e-12);
        }
    }

    #[test]
    fn isolated_vertex_is_reported() {
        let mesh = Mesh {
            vertices: vec![
                DVec3::ZERO,
                DVec3::X,
                DVec3::Y,
                DVec3::new(5.0, 5.0, 5.0), // unused
            ],
            uvs: vec![DVec2::ZERO, DVec2::X, DVec2::Y],
            normals: vec![],
            faces: vec![Face { vertices: [0, 1, 2], uvs: [0, 1, 2], normals: [0, 0, 0] }],
        };
        let err = compute_vertex_normals(&mesh).unwrap_err();
        assert!(matches!(err, MeshError::IsolatedVertex { vertex: 3 }));
    }

    /// Hand computation for the shared-vertex unit cube: when every quad's
    /// fan diagonal joins two corners of the alternating tetrad, each vertex
    /// collects equal area weight from its three incident faces, so the
    /// averaged normal is exactly the normalized corner diagonal.
    #[test]
    fn shared_cube_corner_normals_are_diagonals() {
        let corners = [
            DVec3::new(-1.0, -1.0, -1.0),
            DVec3::new(1.0, -1.0, -1.0),
            DVec3::new(1.0, 1.0, -1.0),
            DVec3::new(-1.0, 1.0, -1.0),
            DVec3::new(-1.0, -1.0, 1.0),
            DVec3::new(1.0, -1.0, 1.0),
            DVec3::new(1.0, 1.0, 1.0),
            DVec3::new(-1.0, 1.0, 1.0),
        ];
        // Each quad is listed starting from a tetrad corner {0, 2, 5, 7}.
        let quads: [[usize; 4]; 6] = [
            [0, 3, 2, 1], // -z
            [5, 6, 7, 4], // +z
            [0, 4, 7, 3], // -x
            [2, 6, 5, 1], // +x
            [7, 6, 2, 3], // +y
            [0, 1, 5, 4], // -y
        ];
        let mut faces = Vec::new();
        for q in quads {
            faces.push(Face {
                vertices: [q[0] as u32, q[1] as u32, q[2] as u32],
                uvs: [0, 0, 0],
                normals: [0, 0, 0],
            });
            faces.push(Face {
                vertices: [q[0] as u32, q[2] as u32, q[3] as u32],
                uvs: [0, 0, 0],
                normals: [0, 0, 0],
            });
        }
        let mesh = Mesh {
            vertices: corners.to_vec(),
            uvs: vec![DVec2::ZERO],
            normals: vec![],
            faces,
        };
        let smooth = compute_vertex_normals(&mesh).unwrap();
        for (i, corner) in corners.iter().enumerate() {
            let expected = corner.normalize();
            assert!(
                (smooth.normals[i] - expected).length() < 1e-12,
                "corner {i}: got {:?}, want {:?}",
                smooth.normals[i],
                expected
            );
        }
    }

    /// Brute-force comparison against analytic sphere normals on a
    /// subdivided icosahedron. Area-weighted averaging converges linearly
    /// in edge length here (the subdivision is irregular around the
    /// original corners); level 4 sits at ~6e-3.
    #[test]
    fn icosphere_normals_match_positions() {
        let mesh = icosphere(4);
        let smooth = compute_vertex_normals(&mesh).unwrap();
        for (i, p) in mesh.vertices.iter().enumerate() {
            let analytic = p.normalize();
            assert!(
                (smooth.normals[i] - analytic).length() < 1e-2,
                "vertex {i} deviates: {:?} vs {:?}",
                smooth.normals[i],
                analytic
            );
        }
    }

    /// Test-only icosphere: subdivided icosahedron projected to the unit
    /// sphere, with shared vertices so smooth normals average correctly.
    fn icosphere(subdivisions: u32) -> Mesh {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<DVec3> = [
            (-1.0, phi, 0.0),
            (1.0, phi, 0.0),
            (-1.0, -phi, 0.0),
            (1.0, -phi, 0.0),
            (0.0, -1.0, phi),
            (0.0, 1.0, phi),
            (0.0, -1.0, -phi),
            (0.0, 1.0, -phi),
            (phi, 0.0, -1.0),
            (phi, 0.0, 1.0),
            (-phi, 0.0, -1.0),
            (-phi, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| DVec3::new(x, y, z).normalize())
        .collect();
        let mut tris: Vec<[u32; 3]> = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        let mut midpoints = std::collections::HashMap::new();
        for _ in 0..subdivisions {
            let mut next = Vec::with_capacity(tris.len() * 4);
            for t in &tris {
                let mut mid = [0u32; 3];
                for k in 0..3 {
                    let (a, b) = (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]));
                    mid[k] = *midpoints.entry((a, b)).or_insert_with(|| {
                        let m = ((vertices[a as usize] + vertices[b as usize]) / 2.0).normalize();
                        vertices.push(m);
                        (vertices.len() - 1) as u32
                    });
                }
                next.push([t[0], mid[0], mid[2]]);
                next.push([t[1], mid[1], mid[0]]);
                next.push([t[2], mid[2], mid[1]]);
                next.push([mid[0], mid[1], mid[2]]);
            }
            tris = next;
        }
        let faces = tris
            .iter()
            .map(|t| Face { vertices: *t, uvs: [0, 0, 0], normals: [0, 0, 0] })
            .collect();
        Mesh { vertices, uvs: vec![DVec2::ZERO], normals: vec![], faces }
    }
}
