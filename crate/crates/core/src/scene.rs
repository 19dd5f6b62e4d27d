//! Cameras, lights, backgrounds, and the multi-view rig over which the
//! attack's expectation is taken. Scene configs are TOML with fail-closed
//! parsing: unknown keys are errors.

use glam::{DMat4, DVec3};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::mesh::{Mesh, MeshError};
use crate::obj;
use crate::texture::{Texture, TextureError};

/// Near/far planes shared by every view; the corpus keeps objects well
/// inside this range.
pub const Z_NEAR: f64 = 0.05;
pub const Z_FAR: f64 = 100.0;

pub const MIN_RESOLUTION: u32 = 16;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("camera elevation {elevation}° too close to the pole (up vector degenerates)")]
    GimbalLock { elevation: f64 },
    #[error("invalid camera: {reason}")]
    InvalidCamera { reason: String },
    #[error("invalid scene config field {field:?}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Texture(#[from] TextureError),
}

/// Orbit camera: position on a sphere around the origin, looking at the
/// origin with up = +Y, right-handed perspective projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub distance: f64,
    /// Degrees in [0, 360).
    pub azimuth: f64,
    /// Degrees in (-90, 90), excluding the poles.
    pub elevation: f64,
    pub fov_y: f64,
    pub resolution: (u32, u32),
}

/// Builds an orbit camera, normalizing azimuth into [0, 360).
pub fn camera_from_orbit(
    distance: f64,
    azimuth: f64,
    elevation: f64,
    fov_y: f64,
    resolution: (u32, u32),
) -> Result<Camera, SceneError> {
    if elevation.abs() > 89.0 {
        return Err(SceneError::GimbalLock { elevation });
    }
    if !(distance > 0.0) {
        return Err(SceneError::InvalidCamera { reason: format!("distance {distance} <= 0") });
    }
    if !(fov_y > 1.0 && fov_y < 179.0) {
        return Err(SceneError::InvalidCamera {
            reason: format!("fov_y {fov_y} outside (1, 179)"),
        });
    }
    if resolution.0 < MIN_RESOLUTION || resolution.1 < MIN_RESOLUTION {
        return Err(SceneError::InvalidCamera {
            reason: format!("resolution {resolution:?} below {MIN_RESOLUTION}"),
        });
    }
    Ok(Camera { distance, azimuth: azimuth.rem_euclid(360.0), elevation, fov_y, resolution })
}

impl Camera {
    pub fn position(&self) -> DVec3 {
        self.distance * orbit_direction(self.azimuth, self.elevation)
    }

    pub fn forward(&self) -> DVec3 {
        (-self.position()).normalize()
    }

    pub fn view_matrix(&self) -> DMat4 {
        DMat4::look_at_rh(self.position(), DVec3::ZERO, DVec3::Y)
    }

    /// Right-handed perspective with depth mapped to [0, 1].
    pub fn projection_matrix(&self) -> DMat4 {
        let aspect = self.resolution.0 as f64 / self.resolution.1 as f64;
        DMat4::perspective_rh(self.fov_y.to_radians(), aspect, Z_NEAR, Z_FAR)
    }

    pub fn clip_from_world(&self) -> DMat4 {
        self.projection_matrix() * self.view_matrix()
    }
}

/// Unit vector at the given spherical angles: azimuth 0 looks down -Z
/// (camera on +Z), azimuth 90° puts the camera on +X.
pub fn orbit_direction(azimuth_deg: f64, elevation_deg: f64) -> DVec3 {
    let a = azimuth_deg.to_radians();
    let e = elevation_deg.to_radians();
    DVec3::new(e.cos() * a.sin(), e.sin(), e.cos() * a.cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionalLight {
    pub azimuth: f64,
    pub elevation: f64,
    pub diffuse_strength: f64,
    pub ambient_strength: f64,
}

impl Default for DirectionalLight {
    /// Frontal light high above the object, strengths summing below 1 so
    /// the shading scalar can never push a texel color past its own value.
    fn default() -> Self {
        DirectionalLight {
            azimuth: 0.0,
            elevation: 75.0,
            diffuse_strength: 0.6,
            ambient_strength: 0.4,
        }
    }
}

impl DirectionalLight {
    /// Unit vector from the surface toward the light.
    pub fn direction(&self) -> DVec3 {
        orbit_direction(self.azimuth, self.elevation)
    }

    fn validate(&self) -> Result<(), SceneError> {
        let bad = |reason: String| SceneError::InvalidConfig { field: "light", reason };
        for (name, v) in
            [("diffuse_strength", self.diffuse_strength), ("ambient_strength", self.ambient_strength)]
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(format!("{name} {v} outside [0,1]")));
            }
        }
        if self.diffuse_strength + self.ambient_strength > 1.0 {
            return Err(bad(format!(
                "diffuse {} + ambient {} exceeds 1; the shading scalar must stay in [0,1]",
                self.diffuse_strength, self.ambient_strength
            )));
        }
        Ok(())
    }
}

/// The ordered set of views the attack averages over. Lights cycle across
/// views when more than one is configured (the default is a single light).
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRig {
    pub views: Vec<Camera>,
    pub lights: Vec<DirectionalLight>,
    pub background: [f64; 3],
}

impl ViewRig {
    pub fn light_for_view(&self, view: usize) -> &DirectionalLight {
        &self.lights[view % self.lights.len()]
    }

    pub fn resolution(&self) -> (u32, u32) {
        self.views[0].resolution
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    /// Class index the classifier should assign to this object.
    pub label: u32,
    pub mesh: PathBuf,
    pub texture: PathBuf,
}

fn default_n_elevations() -> u32 {
    4
}
fn default_fov_y() -> f64 {
    50.0
}
fn default_resolution() -> u32 {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    pub n_views: u32,
    pub distance: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    #[serde(default = "default_n_elevations")]
    pub n_elevations: u32,
    #[serde(default = "default_fov_y")]
    pub fov_y: f64,
    /// Square images; width = height = resolution.
    #[serde(default = "default_resolution")]
    pub resolution: u32,
}

/// `[light]` accepts a single table or an array of tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LightsConfig {
    One(DirectionalLight),
    Many(Vec<DirectionalLight>),
}

impl Default for LightsConfig {
    fn default() -> Self {
        LightsConfig::One(DirectionalLight::default())
    }
}

impl LightsConfig {
    pub fn as_vec(&self) -> Vec<DirectionalLight> {
        match self {
            LightsConfig::One(l) => vec![*l],
            LightsConfig::Many(ls) => ls.clone(),
        }
    }
}

fn default_background() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundConfig {
    pub color: [f64; 3],
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig { color: default_background() }
    }
}

fn default_spec_strength() -> f64 {
    0.25
}
fn default_shininess() -> f64 {
    24.0
}
fn default_gamma() -> bool {
    true
}

/// Shading gap between the two renderers. The attack must never read
/// these; they exist so evaluation can sweep transfer difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetParams {
    #[serde(default = "default_spec_strength")]
    pub spec_strength: f64,
    #[serde(default = "default_shininess")]
    pub shininess: f64,
    #[serde(default = "default_gamma")]
    pub gamma: bool,
}

impl Default for TargetParams {
    fn default() -> Self {
        TargetParams {
            spec_strength: default_spec_strength(),
            shininess: default_shininess(),
            gamma: default_gamma(),
        }
    }
}

impl TargetParams {
    /// No specular, no gamma: the target collapses to the surrogate
    /// exactly. Used to validate that the two renderers share their core.
    pub fn degenerate() -> Self {
        TargetParams { spec_strength: 0.0, shininess: default_shininess(), gamma: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub object: ObjectConfig,
    pub rig: RigConfig,
    #[serde(default)]
    pub light: LightsConfig,
    #[serde(default)]
    pub background: BackgroundConfig,
    #[serde(default)]
    pub target: TargetParams,
}

impl SceneConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, SceneError> {
        let config: SceneConfig = toml::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        SceneConfig::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scene config serializes")
    }

    fn validate(&self) -> Result<(), SceneError> {
        let bad = |field: &'static str, reason: String| SceneError::InvalidConfig { field, reason };
        let rig = &self.rig;
        if rig.n_views < 1 {
            return Err(bad("rig.n_views", "must be >= 1".into()));
        }
        if rig.elevation_min > rig.elevation_max {
            return Err(bad(
                "rig.elevation_min",
                format!("{} exceeds elevation_max {}", rig.elevation_min, rig.elevation_max),
            ));
        }
        if rig.elevation_min.abs() > 89.0 || rig.elevation_max.abs() > 89.0 {
            return Err(bad("rig.elevation_min", "elevations must stay within ±89°".into()));
        }
        if rig.n_elevations < 1 {
            return Err(bad("rig.n_elevations", "must be >= 1".into()));
        }
        let lights = self.light.as_vec();
        if lights.is_empty() {
            return Err(bad("light", "at least one light required".into()));
        }
        for light in &lights {
            light.validate()?;
        }
        for c in self.background.color {
            if !(0.0..=1.0).contains(&c) {
                return Err(bad("background.color", format!("component {c} outside [0,1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.target.spec_strength) {
            return Err(bad(
                "target.spec_strength",
                format!("{} outside [0,1]", self.target.spec_strength),
            ));
        }
        if !(self.target.shininess > 0.0) {
            return Err(bad("target.shininess", "must be > 0".into()));
        }
        // Camera-level invariants (distance, fov, resolution) are checked
        // by building a probe camera.
        camera_from_orbit(
            rig.distance,
            0.0,
            rig.elevation_min,
            rig.fov_y,
            (rig.resolution, rig.resolution),
        )?;
        Ok(())
    }
}

/// Evenly spaced elevation levels, inclusive of both ends.
fn elevation_levels(min: f64, max: f64, n: u32) -> Vec<f64> {
    if n == 1 {
        return vec![min];
    }
    (0..n)
        .map(|i| min + (max - min) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Deterministic rig: azimuths evenly spaced over [0, 360), elevations
/// cycling through an even grid over the configured range.
pub fn build_view_rig(config: &SceneConfig) -> Result<ViewRig, SceneError> {
    config.validate()?;
    let rig = &config.rig;
    let levels = elevation_levels(rig.elevation_min, rig.elevation_max, rig.n_elevations);
    let views = (0..rig.n_views)
        .map(|i| {
            camera_from_orbit(
                rig.distance,
                360.0 * i as f64 / rig.n_views as f64,
                levels[i as usize % levels.len()],
                rig.fov_y,
                (rig.resolution, rig.resolution),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ViewRig { views, lights: config.light.as_vec(), background: config.background.color })
}

/// A loaded scene: geometry, base texture, rig, and the target renderer's
/// gap parameters. Mesh/texture paths in the config resolve relative to
/// the config file's directory.
#[derive(Debug, Clone)]
pub struct Scene {
    /// Object id used in reports and file names; the config file stem.
    pub name: String,
    pub label: u32,
    pub mesh: Mesh,
    pub base_texture: Texture,
    pub rig: ViewRig,
    pub target: TargetParams,
    pub config: SceneConfig,
}

pub fn load_scene(config_path: &Path) -> Result<Scene, SceneError> {
    let config = SceneConfig::load(config_path)?;
    let dir = config_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
    let mesh = obj::load_obj(&resolve(&config.object.mesh))?;
    let base_texture = Texture::load_png(&resolve(&config.object.texture))?;
    let rig = build_view_rig(&config)?;
    let name = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".to_string());
    Ok(Scene {
        name,
        label: config.object.label,
        mesh,
        base_texture,
        rig,
        target: config.target,
        config,
    })
}

/// Picks white or black, whichever gives the higher clean rig accuracy under
/// the given renderer; ties go to black.
pub fn choose_background(
    scene: &Scene,
    model: &crate::classifier::ClassifierModel,
    kind: crate::target::RendererKind,
) -> Result<[f64; 3], crate::classifier::ClassifierError> {
    let accuracy_with = |color: [f64; 3]| -> Result<f64, crate::classifier::ClassifierError> {
        let mut rig = scene.rig.clone();
        rig.background = color;
        let images = crate::target::render_rig(&scene.mesh, &scene.base_texture, &rig, kind, &scene.target);
        let mut correct = 0;
        for image in &images {
            let logits = model.forward(image)?;
            if crate::classifier::predict(&logits) == scene.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / images.len() as f64)
    };
    let white = [1.0, 1.0, 1.0];
    let black = [0.0, 0.0, 0.0];
    if accuracy_with(white)? > accuracy_with(black)? {
        Ok(white)
    } else {
        Ok(black)
    }
}
