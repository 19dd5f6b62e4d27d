//! The differentiable surrogate renderer: rasterize, shade with
//! ambient+diffuse only, and splat image-space gradients back onto the
//! texture exactly. Geometry and lighting are constants with respect to
//! the texture, so the pixel→texel gradient is just (bilinear weight ×
//! shading scalar) — no approximation involved.

use glam::DVec3;
use std::path::Path;

use crate::mesh::Mesh;
use crate::raster::{rasterize, Fragment, FragmentBuffer};
use crate::scene::{Camera, DirectionalLight};
use crate::texture::{Texture, TextureError};

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("gradient shape {got:?} does not match fragment buffer {expected:?}")]
    ShapeMismatch { expected: (u32, u32), got: (u32, u32) },
}

/// Plain H x W x 3 scalar grid. Rendered images stay in [0,1]; gradient
/// images may hold any finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity((width as usize) * (height as usize) * 3);
        for _ in 0..(width as usize) * (height as usize) {
            data.extend_from_slice(&rgb);
        }
        Image { width, height, data }
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        let i = ((y * self.width + x) as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [f64; 3] {
        let i = ((y * self.width + x) as usize) * 3;
        (&mut self.data[i..i + 3]).try_into().unwrap()
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let total: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        total / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// 8-bit PNG export for goldens and eyeballing; components are
    /// clamped and rounded.
    pub fn save_png(&self, path: &Path) -> Result<(), TextureError> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = image::RgbImage::from_raw(self.width, self.height, bytes)
            .expect("dimensions match by construction");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self, TextureError> {
        let img = image::ImageReader::open(path)?.decode()?.into_rgb8();
        let (width, height) = img.dimensions();
        let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        Ok(Image { width, height, data })
    }
}

/// One surrogate render with its gradient plumbing retained.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: Image,
    pub fragments: FragmentBuffer,
    pub camera_id: usize,
}

/// Diffuse color of one fragment: bilinear texture sample times the
/// shading scalar. This is the single shading core both renderers use;
/// the target renderer layers specular and gamma on top of exactly this
/// value, which is what makes its degenerate configuration bitwise equal
/// to the surrogate.
#[inline]
pub(crate) fn fragment_base_color(frag: &Fragment, texture: &Texture) -> [f64; 3] {
    let data = texture.data();
    let mut c = [0.0; 3];
    for k in 0..4 {
        let t = frag.texels[k] as usize;
        let w = frag.weights[k];
        c[0] += w * data[t];
        c[1] += w * data[t + 1];
        c[2] += w * data[t + 2];
    }
    [c[0] * frag.shading, c[1] * frag.shading, c[2] * frag.shading]
}

/// Shades a fragment buffer: covered pixels get the diffuse fragment
/// color, uncovered pixels the background. No gamma; outputs stay in
/// [0,1] because the shading scalar and bilinear weights are each bounded
/// by 1.
pub fn shade(fragments: &FragmentBuffer, texture: &Texture, background: [f64; 3]) -> Image {
    debug_assert_eq!(fragments.tex_width, texture.width());
    debug_assert_eq!(fragments.tex_height, texture.height());
    let mut image = Image::filled(fragments.width, fragments.height, background);
    for (i, frag) in fragments.fragments.iter().enumerate() {
        if let Some(frag) = frag {
            let c = fragment_base_color(frag, texture);
            image.data[i * 3..i * 3 + 3].copy_from_slice(&c);
        }
    }
    image
}

/// Rasterize + shade, keeping the fragments for backprop.
pub fn render_surrogate(
    mesh: &Mesh,
    texture: &Texture,
    camera: &Camera,
    light: &DirectionalLight,
    background: [f64; 3],
    camera_id: usize,
) -> RenderedView {
    let fragments = rasterize(mesh, camera, light, texture.width(), texture.height());
    let image = shade(&fragments, texture, background);
    RenderedView { image, fragments, camera_id }
}

/// Pulls an image-space gradient back onto the texture: each covered
/// pixel's gradient lands on its 4 footprint texels scaled by
/// (bilinear weight × shading scalar). Accumulation runs in pixel-scan
/// order, so the result is bitwise deterministic.
pub fn backprop_texture(
    fragments: &FragmentBuffer,
    image_gradient: &Image,
) -> Result<Vec<f64>, RenderError> {
    if (image_gradient.width, image_gradient.height) != (fragments.width, fragments.height) {
        return Err(RenderError::ShapeMismatch {
            expected: (fragments.width, fragments.height),
            got: (image_gradient.width, image_gradient.height),
        });
    }
    let mut grad =
        vec![0.0; (fragments.tex_width as usize) * (fragments.tex_height as usize) * 3];
    for (i, frag) in fragments.fragments.iter().enumerate() {
        if let Some(frag) = frag {
            let g = &image_gradient.data[i * 3..i * 3 + 3];
            for k in 0..4 {
                let t = frag.texels[k] as usize;
                let scale = frag.weights[k] * frag.shading;
                grad[t] += scale * g[0];
                grad[t + 1] += scale * g[1];
                grad[t + 2] += scale * g[2];
            }
        }
    }
    Ok(grad)
}

/// Interpolated world position of a fragment (perspective-correct
/// barycentrics interpolate world-space attributes affinely).
pub(crate) fn fragment_world_position(mesh: &Mesh, frag: &Fragment) -> DVec3 {
    let p = mesh.face_positions(&mesh.faces[frag.face as usize]);
    frag.bary[0] * p[0] + frag.bary[1] * p[1] + frag.bary[2] * p[2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_primitive, Face, PrimitiveKind};
    use crate::scene::camera_from_orbit;
    use glam::DVec2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frontal_camera(resolution: u32) -> Camera {
        camera_from_orbit(2.0, 0.0, 0.0, 50.0, (resolution, resolution)).unwrap()
    }

    /// Camera-facing triangle with an overridable shading normal.
    fn facing_triangle(normal: DVec3) -> Mesh {
        Mesh {
            vertices: vec![
                DVec3::new(-0.8, -0.8, 0.0),
                DVec3::new(0.8, -0.8, 0.0),
                DVec3::new(0.0, 0.8, 0.0),
            ],
            uvs: vec![DVec2::new(0.1, 0.1), DVec2::new(0.9, 0.1), DVec2::new(0.5, 0.9)],
            normals: vec![normal],
            faces: vec![Face { vertices: [0, 1, 2], uvs: [0, 1, 2], normals: [0, 0, 0] }],
        }
    }

    fn center_pixel(image: &Image) -> [f64; 3] {
        image.pixel(image.width / 2, image.height / 2)
    }

    #[test]
    fn shading_anchors() {
        let white = Texture::constant(8, 8, [1.0, 1.0, 1.0]).unwrap();
        // Light straight down the +Z axis, aligned with the normal.
        let light = DirectionalLight {
            azimuth: 0.0,
            elevation: 0.0,
            diffuse_strength: 0.7,
            ambient_strength: 0.3,
        };
        let view =
            render_surrogate(&facing_triangle(DVec3::Z), &white, &frontal_camera(33), &light, [0.0; 3], 0);
        assert_eq!(center_pixel(&view.image), [1.0, 1.0, 1.0]);

        // Normal perpendicular to the light: ambient only.
        let view =
            render_surrogate(&facing_triangle(DVec3::Y), &white, &frontal_camera(33), &light, [0.0; 3], 0);
        assert_eq!(center_pixel(&view.image), [0.3, 0.3, 0.3]);
    }

    #[test]
    fn uncovered_pixels_show_background() {
        let tex = Texture::constant(8, 8, [0.5, 0.5, 0.5]).unwrap();
        let mesh = facing_triangle(DVec3::Z);
        let view = render_surrogate(
            &mesh,
            &tex,
            &frontal_camera(32),
            &DirectionalLight::default(),
            [1.0, 1.0, 1.0],
            0,
        );
        assert_eq!(view.image.pixel(0, 0), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = "noise-8@3".parse().unwrap();
        let (mesh, tex) = generate_primitive(PrimitiveKind::Cube, 2, &spec).unwrap();
        let cam = camera_from_orbit(2.5, 40.0, 20.0, 50.0, (64, 64)).unwrap();
        let a = render_surrogate(&mesh, &tex, &cam, &DirectionalLight::default(), [1.0; 3], 0);
        let b = render_surrogate(&mesh, &tex, &cam, &DirectionalLight::default(), [1.0; 3], 0);
        assert_eq!(a.image, b.image);
    }

    #[test]
    fn rendering_is_linear_in_the_texture() {
        let spec = "noise-8@3".parse().unwrap();
        let (mesh, tex) = generate_primitive(PrimitiveKind::UvSphere, 12, &spec).unwrap();
        let half = Texture::from_data(
            tex.width(),
            tex.height(),
            tex.data().iter().map(|v| v * 0.5).collect(),
        )
        .unwrap();
        let cam = camera_from_orbit(2.5, 70.0, 15.0, 50.0, (64, 64)).unwrap();
        let light = DirectionalLight::default();
        let full = render_surrogate(&mesh, &tex, &cam, &light, [1.0; 3], 0);
        let halved = render_surrogate(&mesh, &half, &cam, &light, [1.0; 3], 0);
        let mut covered = 0;
        for (i, frag) in full.fragments.fragments.iter().enumerate() {
            if frag.is_some() {
                covered += 1;
                for ch in 0..3 {
                    // Scaling by a power of two is exact in binary floats,
                    // so "halve exactly" means bitwise equality here.
                    assert_eq!(halved.image.data[i * 3 + ch], 0.5 * full.image.data[i * 3 + ch]);
                }
            }
        }
        assert!(covered > 0);
    }

    #[test]
    fn golden_cube_render() {
        let golden_path =
            Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/cube_frontal.png");
        let spec = "checker-8:E8E8E8/903010".parse().unwrap();
        let (mesh, tex) = generate_primitive(PrimitiveKind::Cube, 2, &spec).unwrap();
        let cam = camera_from_orbit(2.5, 30.0, 25.0, 50.0, (128, 128)).unwrap();
        let view =
            render_surrogate(&mesh, &tex, &cam, &DirectionalLight::default(), [1.0; 3], 0);
        if !golden_path.exists() {
            view.image.save_png(&golden_path).unwrap();
            panic!(
                "golden image was missing; wrote {} — review it and re-run",
                golden_path.display()
            );
        }
        let golden = Image::load_png(&golden_path).unwrap();
        // Compare through the same 8-bit quantization the PNG stores.
        let quant = |img: &Image| -> Vec<u8> {
            img.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
        };
        assert_eq!(quant(&view.image), quant(&golden), "render drifted from golden image");
    }

    #[test]
    fn zero_image_gradient_gives_zero_texture_gradient() {
        let spec = "checker-8".parse().unwrap();
        let (mesh, tex) = generate_primitive(PrimitiveKind::Cube, 1, &spec).unwrap();
        let cam = frontal_camera(32);
        let view = render_surrogate(&mesh, &tex, &cam, &DirectionalLight::default(), [1.0; 3], 0);
        let zero = Image::filled(32, 32, [0.0; 3]);
        let grad = backprop_texture(&view.fragments, &zero).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_pixel_backprop_formula() {
        // One hand-built fragment: footprint concentrated on texel 7 with
        // weight 1, shading 0.5, image gradient (1,0,0).
        let frag = Fragment {
            face: 0,
            bary: [1.0, 0.0, 0.0],
            normal: DVec3::Z,
            depth: 0.5,
            texels: [7 * 3, 7 * 3, 7 * 3, 7 * 3],
            weights: [1.0, 0.0, 0.0, 0.0],
            shading: 0.5,
        };
        let mut fragments = FragmentBuffer {
            width: 16,
            height: 16,
            tex_width: 4,
            tex_height: 4,
            fragments: vec![None; 256],
        };
        fragments.fragments[40] = Some(frag);
        let mut grad_img = Image::filled(16, 16, [0.0; 3]);
        grad_img.data[40 * 3] = 1.0;
        let grad = backprop_texture(&fragments, &grad_img).unwrap();
        assert_eq!(grad[7 * 3], 0.5);
        assert_eq!(grad.iter().filter(|&&g| g != 0.0).count(), 1);
    }

    #[test]
    fn gradient_shape_mismatch_is_rejected() {
        let spec = "checker-8".parse().unwrap();
        let (mesh, tex) = generate_primitive(PrimitiveKind::Cube, 1, &spec).unwrap();
        let view = render_surrogate(
            &mesh,
            &tex,
            &frontal_camera(32),
            &DirectionalLight::default(),
            [1.0; 3],
            0,
        );
        let wrong = Image::filled(16, 16, [0.0; 3]);
        assert!(matches!(
            backprop_texture(&view.fragments, &wrong),
            Err(RenderError::ShapeMismatch { .. })
        ));
    }

    /// Finite-difference oracle for the analytic texture gradient, using a
    /// squared-error image loss (genuinely curved in pixel space, exactly
    /// differentiated by central differences only up to O(h^2) — the
    /// analytic gradient must sit inside that envelope).
    #[test]
    fn texture_gradient_matches_central_differences()  {
        let spec = "noise-16@11:FF8800/2244AA".parse().unwrap();
        let (mesh, tex) = generate_primitive(PrimitiveKind::UvSphere, 12, &spec).unwrap();
        let cam = camera_from_orbit(2.5, 25.0, 30.0, 50.0, (48, 48)).unwrap();
        let light = DirectionalLight::default();
        let bg = [1.0, 1.0, 1.0];

        // Fixed random target image defines loss = sum((I - T)^2).
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let target: Vec<f64> = (0..48 * 48 * 3).map(|_| rng.gen::<f64>()).collect();
        let loss = |texture: &Texture| -> f64 {
            let view = render_surrogate(&mesh, texture, &cam, &light, bg, 0);
            view.image.data.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum()
        };

        let view = render_surrogate(&mesh, &tex, &cam, &light, bg, 0);
        let grad_image = Image {
            width: 48,
            height: 48,
            data: view
                .image
                .data
                .iter()
                .zip(&target)
                .map(|(a, b)| 2.0 * (a - b))
                .collect(),
        };
        let analytic = backprop_texture(&view.fragments, &grad_image).unwrap();

        // Sample coordinates the render actually touches (most texels are
        // off-screen for any single view and legitimately have zero grad).
        let touched: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i] != 0.0).collect();
        assert!(touched.len() >= 100, "need >= 100 touched texels, got {}", touched.len());
        let h = 1e-3;
        let mut checked = 0;
        for &i in touched.iter().step_by((touched.len() / 120).max(1)) {
            let mut up = tex.clone();
            up.data_mut()[i] += h;
            let mut down = tex.clone();
            down.data_mut()[i] -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs());
            if denom > 1e-6 {
                let rel = (analytic[i] - fd).abs() / denom;
                assert!(
                    rel < 1e-3,
                    "texel component {i}: analytic {} vs fd {} (rel {rel})",
                    analytic[i],
                    fd
                );
                checked += 1;
            }
        }
        assert!(checked >= 100, "only {checked} coordinates exceeded the gradient floor");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        /// Textures within an ℓ∞ ball render to images within the same
        /// ball: the attack's image-space constraint is inherited from the
        /// texture ball rather than enforced by projection.
        #[test]
        fn view_constraint_bounds_image_change(seed in 0u64..500, eps in 0.01f64..0.3) {
            let spec = "checker-8".parse().unwrap();
            let (mesh, tex) = generate_primitive(PrimitiveKind::Cube, 2, &spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perturbed = tex.clone();
            for v in perturbed.data_mut() {
                *v = (*v + rng.gen_range(-eps..=eps)).clamp(0.0, 1.0);
            }
            let cam = camera_from_orbit(
                2.5,
                rng.gen_range(0.0..360.0),
                rng.gen_range(-45.0..60.0),
                50.0,
                (32, 32),
            ).unwrap();
            let light = DirectionalLight::default();
            let a = render_surrogate(&mesh, &tex, &cam, &light, [1.0; 3], 0);
            let b = render_surrogate(&mesh, &perturbed, &cam, &light, [1.0; 3], 0);
            let max_diff = a.image.max_abs_diff(&b.image);
            prop_assert!(
                max_diff <= eps * (1.0 + 1e-12) + 1e-15,
                "image moved {max_diff} > texture ball {eps}"
            );
        }
    }
}
