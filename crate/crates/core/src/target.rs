//! The black-box target renderer: same rasterizer as the surrogate, but
//! with a white Blinn-Phong highlight and gamma encoding stacked on top of
//! the shared diffuse core. It exposes images only — no fragment buffers,
//! no gradients — so attack code cannot peek through it even by accident.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mesh::Mesh;
use crate::raster::rasterize;
use crate::render::{fragment_base_color, fragment_world_position, render_surrogate, Image};
use crate::scene::{Camera, DirectionalLight, TargetParams, ViewRig};
use crate::texture::Texture;

/// Which side of the render gap to evaluate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RendererKind {
    Surrogate,
    Target,
}

impl std::fmt::Display for RendererKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RendererKind::Surrogate => f.write_str("surrogate"),
            RendererKind::Target => f.write_str("target"),
        }
    }
}

impl std::str::FromStr for RendererKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "surrogate" => Ok(RendererKind::Surrogate),
            "target" => Ok(RendererKind::Target),
            other => Err(format!("unknown renderer {other:?} (want surrogate|target)")),
        }
    }
}

const INV_GAMMA: f64 = 1.0 / 2.2;

/// Renders one view through the target model: diffuse core + white
/// specular + gamma, clamped to [0,1].
///
/// Specular and gamma are applied behind `if` guards rather than as
/// no-op arithmetic so that the degenerate configuration (both off)
/// reproduces the surrogate bitwise.
pub fn render_target(
    mesh: &Mesh,
    texture: &Texture,
    camera: &Camera,
    light: &DirectionalLight,
    background: [f64; 3],
    params: &TargetParams,
) -> Image {
    let fragments = rasterize(mesh, camera, light, texture.width(), texture.height());
    let mut image = Image::filled(fragments.width, fragments.height, background);
    let light_dir = light.direction();
    let eye = camera.position();
    for (i, frag) in fragments.fragments.iter().enumerate() {
        if let Some(frag) = frag {
            let mut c = fragment_base_color(frag, texture);
            if params.spec_strength > 0.0 {
                let world = fragment_world_position(mesh, frag);
                let view_dir = (eye - world).normalize();
                let half = (light_dir + view_dir).normalize();
                let spec = params.spec_strength
                    * frag.normal.dot(half).max(0.0).powf(params.shininess);
                for ch in &mut c {
                    *ch += spec;
                }
            }
            if params.gamma {
                // Encode shaded surface colors only; the background is
                // already a display color (and the corpus uses white or
                // black, which gamma fixes anyway).
                for ch in &mut c {
                    *ch = ch.powf(INV_GAMMA);
                }
            }
            for ch in &mut c {
                *ch = ch.clamp(0.0, 1.0);
            }
            image.data[i * 3..i * 3 + 3].copy_from_slice(&c);
        }
    }
    image
}

/// Maps the chosen renderer over every rig view, in rig order. Views are
/// independent, so they may render in parallel; collecting into a Vec
/// keeps the ordering.
pub fn render_rig(
    mesh: &Mesh,
    texture: &Texture,
    rig: &ViewRig,
    kind: RendererKind,
    params: &TargetParams,
) -> Vec<Image> {
    rig.views
        .par_iter()
        .enumerate()
        .map(|(i, camera)| {
            let light = rig.light_for_view(i);
            match kind {
                RendererKind::Surrogate => {
                    render_surrogate(mesh, texture, camera, light, rig.background, i).image
                }
                RendererKind::Target => {
                    render_target(mesh, texture, camera, light, rig.background, params)
                }
            }
        })
        .collect()
}
