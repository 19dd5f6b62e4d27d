//! Hard rasterization shared by both renderers: z-buffered,
//! perspective-correct, backface-culled. One `Fragment` per covered pixel
//! records everything needed to shade, to splat gradients back onto the
//! texture, and to project pixel saliency onto texels.

use glam::{DVec2, DVec3, DVec4};

use crate::mesh::Mesh;
use crate::scene::{Camera, DirectionalLight, Z_NEAR};
use crate::texture::bilinear_footprint;

/// Screen-space triangles with |signed area| below this are skipped
/// (degenerate or edge-on).
const MIN_SCREEN_AREA2: f64 = 1e-12;

/// Per-pixel rasterization record.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub face: u32,
    /// Perspective-correct barycentrics; nonnegative, sum 1 ± 1e-6.
    pub bary: [f64; 3],
    /// Interpolated unit shading normal.
    pub normal: DVec3,
    /// Depth in [0,1] after projection; smaller is nearer.
    pub depth: f64,
    /// Component offsets of the 4 bilinear-footprint texels (each the
    /// index of a texel's R channel in the texture's flat data).
    pub texels: [u32; 4],
    /// Bilinear weights; nonnegative, sum 1 ± 1e-6.
    pub weights: [f64; 4],
    /// ambient + diffuse·max(0, n·l), in [0,1] by the light invariant.
    pub shading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentBuffer {
    pub width: u32,
    pub height: u32,
    pub tex_width: u32,
    pub tex_height: u32,
    /// Row-major, length width*height; `None` = background.
    pub fragments: Vec<Option<Fragment>>,
}

impl FragmentBuffer {
    pub fn coverage(&self) -> f64 {
        let covered = self.fragments.iter().filter(|f| f.is_some()).count();
        covered as f64 / self.fragments.len() as f64
    }
}

/// 2D edge function: positive when `p` is on the left of v0→v1.
#[inline]
fn edge(v0: DVec2, v1: DVec2, p: DVec2) -> f64 {
    (v1.x - v0.x) * (p.y - v0.y) - (v1.y - v0.y) * (p.x - v0.x)
}

/// Rasterizes every front-facing triangle into a fragment buffer.
///
/// Triangles touching the near plane are skipped rather than clipped; the
/// orbit rigs keep objects far inside the frustum, so clipping would be
/// dead code here. The z-buffer uses strict comparison, so depth ties are
/// kept by the lower face id (faces are visited in index order). The
/// shading scalar is evaluated here because it is a per-fragment constant
/// of the geometry and light, independent of the texture being attacked.
pub fn rasterize(
    mesh: &Mesh,
    camera: &Camera,
    light: &DirectionalLight,
    tex_width: u32,
    tex_height: u32,
) -> FragmentBuffer {
    let (width, height) = camera.resolution;
    let clip_from_world = camera.clip_from_world();
    let light_dir = light.direction();
    let mut depth_buffer = vec![f64::INFINITY; (width * height) as usize];
    let mut fragments: Vec<Option<Fragment>> = vec![None; (width * height) as usize];

    for (fi, face) in mesh.faces.iter().enumerate() {
        let positions = mesh.face_positions(face);
        let clip: [DVec4; 3] =
            [0, 1, 2].map(|i| clip_from_world * positions[i].extend(1.0));
        // clip.w = distance along the view axis; anything at or behind the
        // near plane is skipped outright (no clipping).
        if clip.iter().any(|c| c.w < Z_NEAR) {
            continue;
        }
        let inv_w = [1.0 / clip[0].w, 1.0 / clip[1].w, 1.0 / clip[2].w];
        let ndc: [DVec3; 3] = [0, 1, 2].map(|i| clip[i].truncate() * inv_w[i]);
        let screen: [DVec2; 3] = [0, 1, 2].map(|i| {
            DVec2::new(
                (ndc[i].x + 1.0) * 0.5 * width as f64,
                (1.0 - ndc[i].y) * 0.5 * height as f64,
            )
        });

        // Outward-wound triangles are clockwise in y-down screen space,
        // giving negative signed area; nonnegative area = back-facing.
        let area2 = edge(screen[0], screen[1], screen[2]);
        if area2 > -MIN_SCREEN_AREA2 {
            continue;
        }

        let min_x = screen.iter().map(|s| s.x).fold(f64::INFINITY, f64::min);
        let max_x = screen.iter().map(|s| s.x).fold(f64::NEG_INFINITY, f64::max);
        let min_y = screen.iter().map(|s| s.y).fold(f64::INFINITY, f64::min);
        let max_y = screen.iter().map(|s| s.y).fold(f64::NEG_INFINITY, f64::max);
        let px0 = ((min_x - 0.5).floor().max(0.0)) as u32;
        let px1 = ((max_x - 0.5).ceil().min((width - 1) as f64)).max(0.0) as u32;
        let py0 = ((min_y - 0.5).floor().max(0.0)) as u32;
        let py1 = ((max_y - 0.5).ceil().min((height - 1) as f64)).max(0.0) as u32;
        if px0 > px1 || py0 > py1 || max_x < 0.0 || max_y < 0.0 {
            continue;
        }

        let corner_normals: [DVec3; 3] =
            [0, 1, 2].map(|i| mesh.normals[face.normals[i] as usize]);
        let corner_uvs = [0, 1, 2].map(|i| mesh.uvs[face.uvs[i] as usize]);

        for py in py0..=py1 {
            for px in px0..=px1 {
                let p = DVec2::new(px as f64 + 0.5, py as f64 + 0.5);
                // Normalizing by the signed area makes all three
                // barycentrics nonnegative inside, regardless of winding;
                // the >= 0 test keeps shared-edge pixels in both faces and
                // lets the z-tie rule pick one deterministically.
                let l0 = edge(screen[1], screen[2], p) / area2;
                let l1 = edge(screen[2], screen[0], p) / area2;
                let l2 = edge(screen[0], screen[1], p) / area2;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                // NDC depth is affine in screen space.
                let depth = l0 * ndc[0].z + l1 * ndc[1].z + l2 * ndc[2].z;
                let idx = (py * width + px) as usize;
                if depth >= depth_buffer[idx] {
                    continue;
                }

                let pw = [l0 * inv_w[0], l1 * inv_w[1], l2 * inv_w[2]];
                let inv_sum = 1.0 / (pw[0] + pw[1] + pw[2]);
                let bary = [pw[0] * inv_sum, pw[1] * inv_sum, pw[2] * inv_sum];

                let normal_raw = bary[0] * corner_normals[0]
                    + bary[1] * corner_normals[1]
                    + bary[2] * corner_normals[2];
                let normal = if normal_raw.length() > 1e-12 {
                    normal_raw.normalize()
                } else {
                    // Opposing corner normals cancelled; fall back to the
                    // geometric face normal.
                    (positions[1] - positions[0])
                        .cross(positions[2] - positions[0])
                        .normalize()
                };

                let uv = bary[0] * corner_uvs[0]
                    + bary[1] * corner_uvs[1]
                    + bary[2] * corner_uvs[2];
                let (texels, weights) = bilinear_footprint(tex_width, tex_height, uv.x, uv.y);

                let shading = light.ambient_strength
                    + light.diffuse_strength * normal.dot(light_dir).max(0.0);

                depth_buffer[idx] = depth;
                fragments[idx] = Some(Fragment {
                    face: fi as u32,
                    bary,
                    normal,
                    depth,
                    texels,
                    weights,
                    shading,
                });
            }
        }
    }

    FragmentBuffer { width, height, tex_width, tex_height, fragments }
}
