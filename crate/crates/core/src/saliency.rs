//! Saliency-guided texel masking.
//!
//! The mask marks texels the *target* renderer is demonstrably sensitive to:
//! loss gradients are taken on target-rendered views, but projected onto the
//! texture through the *surrogate* rasterizer's fragment buffers — the same
//! projection the attack itself uses. Thresholding the normalized per-texel
//! saliency yields a binary mask that confines the attack to the texels that
//! matter, at some cost in attack strength.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::classifier::{ClassifierError, ClassifierModel};
use crate::raster::{rasterize, FragmentBuffer};
use crate::render::Image;
use crate::scene::Scene;
use crate::target::{render_rig, RendererKind};
use crate::texture::{Texture, TextureError};

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("threshold must lie strictly inside (0,1), got {0}")]
    BadThreshold(f64),
    #[error("rig mismatch: {saliencies} saliency grids vs {buffers} fragment buffers")]
    RigMismatch { saliencies: usize, buffers: usize },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Texture(#[from] TextureError),
}

/// Per-texel saliency plus the binary mask derived from it.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    tex_width: u32,
    tex_height: u32,
    /// One grid per rig view: per-pixel max-channel |dL/dpixel|, raw
    /// (normalization happens once, after texel accumulation).
    pub pixel_saliency: Vec<Vec<f64>>,
    /// Accumulated per-texel saliency, normalized to [0,1].
    pub texel_saliency: Vec<f64>,
    pub threshold: f64,
    /// keep[texel] = true where the attack may modify the texture.
    pub keep: Vec<bool>,
}

impl SaliencyMap {
    pub fn tex_width(&self) -> u32 {
        self.tex_width
    }

    pub fn tex_height(&self) -> u32 {
        self.tex_height
    }

    /// Number of texels the mask allows the attack to touch.
    pub fn kept_texels(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// Whether a flat texture *component* index may change.
    #[inline]
    pub fn allows_component(&self, component: usize) -> bool {
        self.keep[component / 3]
    }

    /// Grayscale heat map of the normalized texel saliency.
    pub fn save_heatmap(&self, path: &Path) -> Result<(), SaliencyError> {
        let data: Vec<f64> = self.texel_saliency.iter().flat_map(|&s| [s, s, s]).collect();
        let tex = Texture::from_data(self.tex_width, self.tex_height, data)?;
        tex.save_png(path)?;
        Ok(())
    }

    /// Black/white mask image (white = modifiable).
    pub fn save_mask(&self, path: &Path) -> Result<(), SaliencyError> {
        let data: Vec<f64> = self
            .keep
            .iter()
            .flat_map(|&k| if k { [1.0; 3] } else { [0.0; 3] })
            .collect();
        let tex = Texture::from_data(self.tex_width, self.tex_height, data)?;
        tex.save_png(path)?;
        Ok(())
    }
}

/// Per-pixel saliency of one rendered view: max over color channels of the
/// absolute loss gradient. Raw values; no normalization here.
pub fn view_saliency(
    model: &ClassifierModel,
    image: &Image,
    label: u32,
) -> Result<Vec<f64>, ClassifierError> {
    let grad = model.grad_input(image, label)?.grad;
    Ok(grad
        .data
        .chunks_exact(3)
        .map(|px| px[0].abs().max(px[1].abs()).max(px[2].abs()))
        .collect())
}

/// Projects per-pixel saliencies onto texels via the bilinear footprints in
/// the fragment buffers, sums over all views in (view, pixel) order, then
/// rescales the grid to [0,1] by its maximum (an all-zero grid stays zero).
pub fn splat_to_texels(
    pixel_saliencies: &[Vec<f64>],
    fragment_buffers: &[FragmentBuffer],
) -> Result<Vec<f64>, SaliencyError> {
    if pixel_saliencies.len() != fragment_buffers.len() {
        return Err(SaliencyError::RigMismatch {
            saliencies: pixel_saliencies.len(),
            buffers: fragment_buffers.len(),
        });
    }
    let (tw, th) = (fragment_buffers[0].tex_width, fragment_buffers[0].tex_height);
    let mut acc = vec![0.0f64; (tw * th) as usize];
    for (saliency, buffer) in pixel_saliencies.iter().zip(fragment_buffers) {
        for (pixel, frag) in saliency.iter().zip(&buffer.fragments) {
            if let Some(frag) = frag {
                for k in 0..4 {
                    // frag.texels holds component offsets; /3 is the texel.
                    acc[frag.texels[k] as usize / 3] += pixel * frag.weights[k];
                }
            }
        }
    }
    let max = acc.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in &mut acc {
            *v /= max;
        }
    }
    Ok(acc)
}

/// mask[i] = saliency[i] >= threshold.
pub fn binarize(texel_saliency: &[f64], threshold: f64) -> Result<Vec<bool>, SaliencyError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(SaliencyError::BadThreshold(threshold));
    }
    Ok(texel_saliency.iter().map(|&s| s >= threshold).collect())
}

/// Full pipeline: target-render the rig, take loss gradients per view,
/// project them through surrogate fragment buffers, normalize, binarize.
pub fn build_saliency_mask(
    scene: &Scene,
    model: &ClassifierModel,
    threshold: f64,
) -> Result<SaliencyMap, SaliencyError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(SaliencyError::BadThreshold(threshold));
    }
    let target_images = render_rig(
        &scene.mesh,
        &scene.base_texture,
        &scene.rig,
        RendererKind::Target,
        &scene.target,
    );
    let pixel_saliency = target_images
        .iter()
        .map(|img| view_saliency(model, img, scene.label))
        .collect::<Result<Vec<_>, _>>()?;

    let (tw, th) = (scene.base_texture.width(), scene.base_texture.height());
    let buffers: Vec<FragmentBuffer> = scene
        .rig
        .views
        .par_iter()
        .enumerate()
        .map(|(i, camera)| rasterize(&scene.mesh, camera, scene.rig.light_for_view(i), tw, th))
        .collect();

    let texel_saliency = splat_to_texels(&pixel_saliency, &buffers)?;
    let keep = binarize(&texel_saliency, threshold)?;
    Ok(SaliencyMap {
        tex_width: tw,
        tex_height: th,
        pixel_saliency,
        texel_saliency,
        threshold,
        keep,
    })
}
