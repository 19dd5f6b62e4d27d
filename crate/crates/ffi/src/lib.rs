//! C ABI over the attack pipeline: load a scene and a classifier, run the
//! attack, measure rig accuracy, export saliency maps.
//!
//! Conventions:
//! - objects cross the boundary as opaque pointers created by `*_load` and
//!   released by the matching `*_free`; every other function only borrows;
//! - every fallible call returns an [`AdvtexStatus`]; on failure a
//!   human-readable message is stored per thread and can be fetched with
//!   [`advtex_last_error`];
//! - panics never unwind across the boundary: they are caught and reported
//!   as `AdvtexStatus::Panicked`.
//!
//! The matching C header lives at `include/advtex.h`.

use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use advtex::attack::{run_attack, AttackConfig};
use advtex::classifier::ClassifierModel;
use advtex::manifest::sha256_hex;
use advtex::metrics::accuracy_over_rig;
use advtex::saliency::build_saliency_mask;
use advtex::scene::{load_scene, Scene};
use advtex::target::RendererKind;
use advtex::texture::Texture;

/// Result of every fallible FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvtexStatus {
    Ok = 0,
    /// A required pointer was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidString = 2,
    /// Bad configuration or unreadable/invalid input file.
    ConfigError = 3,
    /// Failure while computing or writing.
    RuntimeError = 4,
    /// An internal panic was caught at the boundary.
    Panicked = 5,
}

/// Renderer selector mirroring the library's two-sided render gap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvtexRenderer {
    Surrogate = 0,
    Target = 1,
}

impl From<AdvtexRenderer> for RendererKind {
    fn from(r: AdvtexRenderer) -> Self {
        match r {
            AdvtexRenderer::Surrogate => RendererKind::Surrogate,
            AdvtexRenderer::Target => RendererKind::Target,
        }
    }
}

/// Attack parameters; a zeroed struct is invalid — fill every field.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AdvtexAttackParams {
    /// l-inf budget in texture space, in (0, 1].
    pub epsilon: f64,
    /// Step size, at most epsilon.
    pub alpha: f64,
    pub n_steps: u64,
    /// Views per gradient estimate; 0 = the full rig each step.
    pub view_batch: u64,
    /// Saliency threshold in (0, 1); any value <= 0 disables the mask.
    pub saliency_tau: f64,
    pub seed: u64,
    /// Nonzero = start from a random point inside the ball.
    pub random_start: u8,
}

/// Scalar attack results; accuracy_drop is NaN when the clean accuracy was 0.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AdvtexAttackOutcome {
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub accuracy_drop: f64,
    pub n_pct: f64,
    pub changed_texel_fraction: f64,
}

/// Opaque scene handle (mesh, base texture, view rig).
pub struct AdvtexScene {
    scene: Scene,
}

/// Opaque classifier handle; keeps the id that attack reports carry.
pub struct AdvtexModel {
    model: ClassifierModel,
    classifier_id: String,
}

thread_local! {
    static LAST_ERROR: std::cell::RefCell<CString> =
        std::cell::RefCell::new(CString::default());
}

fn set_last_error(message: impl std::fmt::Display) {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
}

fn fail(status: AdvtexStatus, message: impl std::fmt::Display) -> AdvtexStatus {
    set_last_error(message);
    status
}

/// Copies the current thread's last error message into `buf` (NUL
/// terminated, truncated to `cap` bytes) and returns the full length of the
/// message including the NUL. Call with `buf == NULL` or `cap == 0` to query
/// the required size.
///
/// # Safety
/// `buf` must either be null or point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn advtex_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Static version string of the underlying library, e.g. "0.1.0".
#[no_mangle]
pub extern "C" fn advtex_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn path_arg<'a>(raw: *const c_char) -> Result<&'a Path, AdvtexStatus> {
    if raw.is_null() {
        return Err(fail(AdvtexStatus::NullArgument, "path argument is null"));
    }
    match CStr::from_ptr(raw).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(fail(AdvtexStatus::InvalidString, "path argument is not valid UTF-8")),
    }
}

fn guard<T>(
    body: impl FnOnce() -> Result<T, AdvtexStatus>,
) -> Result<T, AdvtexStatus> {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(result) => result,
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            Err(fail(AdvtexStatus::Panicked, format!("internal panic: {message}")))
        }
    }
}

/// Loads a scene config (TOML) plus the mesh and texture it references.
/// Returns null on failure; see [`advtex_last_error`].
///
/// # Safety
/// `config_path` must be a NUL-terminated string or null.
#[no_mangle]
pub unsafe extern "C" fn advtex_scene_load(config_path: *const c_char) -> *mut AdvtexScene {
    let result = guard(|| {
        let path = path_arg(config_path)?;
        let scene = load_scene(path)
            .map_err(|e| fail(AdvtexStatus::ConfigError, format!("{}: {e}", path.display())))?;
        Ok(Box::into_raw(Box::new(AdvtexScene { scene })))
    });
    result.unwrap_or(ptr::null_mut())
}

/// Releases a scene handle. Null is a no-op.
///
/// # Safety
/// `scene` must be null or a pointer from [`advtex_scene_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn advtex_scene_free(scene: *mut AdvtexScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Loads a classifier weight file. Returns null on failure.
///
/// # Safety
/// `weights_path` must be a NUL-terminated string or null.
#[no_mangle]
pub unsafe extern "C" fn advtex_model_load(weights_path: *const c_char) -> *mut AdvtexModel {
    let result = guard(|| {
        let path = path_arg(weights_path)?;
        let fail_load =
            |e: &dyn std::fmt::Display| fail(AdvtexStatus::ConfigError, format!("{}: {e}", path.display()));
        let bytes = std::fs::read(path).map_err(|e| fail_load(&e))?;
        let model = ClassifierModel::load(path).map_err(|e| fail_load(&e))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let classifier_id = format!("{stem}-{}", &sha256_hex(&bytes)[..8]);
        Ok(Box::into_raw(Box::new(AdvtexModel { model, classifier_id })))
    });
    result.unwrap_or(ptr::null_mut())
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be null or a pointer from [`advtex_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn advtex_model_free(model: *mut AdvtexModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn borrow<'a, T>(raw: *const T, what: &str) -> Result<&'a T, AdvtexStatus> {
    raw.as_ref()
        .ok_or_else(|| fail(AdvtexStatus::NullArgument, format!("{what} handle is null")))
}

/// Runs the multi-view attack and writes the adversarial texture as PNG to
/// `texture_out_path`. When `report_out_path` is non-null the full report is
/// written there as JSON; when `outcome` is non-null the headline metrics
/// are stored into it (accuracy_drop is NaN if the clean accuracy was 0).
///
/// # Safety
/// `scene`/`model` must be live handles from the matching loaders; `params`
/// must point to a filled struct; paths must be NUL-terminated strings
/// (`report_out_path` may be null); `outcome` may be null.
#[no_mangle]
pub unsafe extern "C" fn advtex_attack_run(
    scene: *const AdvtexScene,
    model: *const AdvtexModel,
    params: *const AdvtexAttackParams,
    texture_out_path: *const c_char,
    report_out_path: *const c_char,
    outcome: *mut AdvtexAttackOutcome,
) -> AdvtexStatus {
    let result = guard(|| {
        let scene = borrow(scene, "scene")?;
        let model = borrow(model, "model")?;
        let params = borrow(params, "params")?;
        let texture_path = path_arg(texture_out_path)?;
        let report_path = if report_out_path.is_null() {
            None
        } else {
            Some(path_arg(report_out_path)?)
        };

        let config = AttackConfig {
            epsilon: params.epsilon,
            alpha: params.alpha,
            n_steps: params.n_steps as usize,
            view_batch: (params.view_batch > 0).then_some(params.view_batch as usize),
            saliency_threshold: (params.saliency_tau > 0.0).then_some(params.saliency_tau),
            seed: params.seed,
            random_start: params.random_start != 0,
        };
        config
            .validate(scene.scene.rig.views.len())
            .map_err(|e| fail(AdvtexStatus::ConfigError, e))?;

        let (texture, report) = run_attack(&scene.scene, &model.model, &model.classifier_id, &config)
            .map_err(|e| fail(AdvtexStatus::RuntimeError, e))?;
        texture
            .save_png(texture_path)
            .map_err(|e| fail(AdvtexStatus::RuntimeError, format!("{}: {e}", texture_path.display())))?;
        if let Some(path) = report_path {
            report
                .save(path)
                .map_err(|e| fail(AdvtexStatus::RuntimeError, format!("{}: {e}", path.display())))?;
        }
        if let Some(out) = outcome.as_mut() {
            *out = AdvtexAttackOutcome {
                accuracy_before: report.a_before,
                accuracy_after: report.a_after,
                accuracy_drop: report.a_drop.unwrap_or(f64::NAN),
                n_pct: report.n_pct,
                changed_texel_fraction: report.changed_texel_fraction,
            };
        }
        Ok(())
    });
    result.err().unwrap_or(AdvtexStatus::Ok)
}

/// Measures rig accuracy of a texture under the chosen renderer and stores
/// it into `out_accuracy`. A null `texture_png_path` evaluates the scene's
/// base texture.
///
/// # Safety
/// `scene`/`model` must be live handles; `texture_png_path` must be a
/// NUL-terminated string or null; `out_accuracy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advtex_rig_accuracy(
    scene: *const AdvtexScene,
    model: *const AdvtexModel,
    texture_png_path: *const c_char,
    renderer: AdvtexRenderer,
    out_accuracy: *mut f64,
) -> AdvtexStatus {
    let result = guard(|| {
        let scene = borrow(scene, "scene")?;
        let model = borrow(model, "model")?;
        if out_accuracy.is_null() {
            return Err(fail(AdvtexStatus::NullArgument, "out_accuracy is null"));
        }
        let texture = if texture_png_path.is_null() {
            scene.scene.base_texture.clone()
        } else {
            let path = path_arg(texture_png_path)?;
            Texture::load_png(path)
                .map_err(|e| fail(AdvtexStatus::ConfigError, format!("{}: {e}", path.display())))?
        };
        let accuracy = accuracy_over_rig(&scene.scene, &texture, &model.model, renderer.into())
            .map_err(|e| fail(AdvtexStatus::RuntimeError, e))?;
        *out_accuracy = accuracy;
        Ok(())
    });
    result.err().unwrap_or(AdvtexStatus::Ok)
}

/// Builds the saliency mask at threshold `tau` and optionally writes the
/// heatmap and mask PNGs. When `out_kept_fraction` is non-null it receives
/// the fraction of texels the mask keeps modifiable.
///
/// # Safety
/// `scene`/`model` must be live handles; path arguments may be null to skip
/// that export; `out_kept_fraction` may be null.
#[no_mangle]
pub unsafe extern "C" fn advtex_saliency_export(
    scene: *const AdvtexScene,
    model: *const AdvtexModel,
    tau: f64,
    heatmap_out_path: *const c_char,
    mask_out_path: *const c_char,
    out_kept_fraction: *mut f64,
) -> AdvtexStatus {
    let result = guard(|| {
        let scene = borrow(scene, "scene")?;
        let model = borrow(model, "model")?;
        let map = build_saliency_mask(&scene.scene, &model.model, tau)
            .map_err(|e| fail(AdvtexStatus::ConfigError, e))?;
        if !heatmap_out_path.is_null() {
            let path = path_arg(heatmap_out_path)?;
            map.save_heatmap(path)
                .map_err(|e| fail(AdvtexStatus::RuntimeError, format!("{}: {e}", path.display())))?;
        }
        if !mask_out_path.is_null() {
            let path = path_arg(mask_out_path)?;
            map.save_mask(path)
                .map_err(|e| fail(AdvtexStatus::RuntimeError, format!("{}: {e}", path.display())))?;
        }
        if let Some(out) = out_kept_fraction.as_mut() {
            let total = (map.tex_width() * map.tex_height()) as f64;
            *out = map.kept_texels() as f64 / total;
        }
        Ok(())
    });
    result.err().unwrap_or(AdvtexStatus::Ok)
}
