//! Exercises the C ABI the way a foreign caller would: opaque handles,
//! status codes, out-parameters, and the thread-local error message.

use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use advtex_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    scene_toml: PathBuf,
    weights: PathBuf,
}

/// Tiny corpus + barely-trained classifier, built once through the CLI.
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let corpus = dir.path().join("corpus");
        let weights = dir.path().join("clf.atxw");
        let run = |args: &[&str]| {
            let code = advtex::cli::run(args.iter().copied());
            assert_eq!(code, 0, "cli {args:?} exited {code}");
        };
        run(&[
            "advtex", "gen-corpus", "--out", corpus.to_str().unwrap(),
            "--objects", "2", "--resolution", "32", "--views", "6", "--seed", "0",
        ]);
        run(&[
            "advtex", "train", "--corpus", corpus.to_str().unwrap(),
            "--out", weights.to_str().unwrap(),
            "--epochs", "2", "--batch-size", "4", "--learning-rate", "0.02", "--seed", "0",
        ]);
        let scene_toml = corpus.join("scenes").join("00-cube-cool.toml");
        assert!(scene_toml.is_file());
        Fixture { _dir: dir, scene_toml, weights }
    })
}

fn c_path(path: &Path) -> CString {
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = [0 as c_char; 512];
    let needed = unsafe { advtex_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(needed >= 1, "missing trailing NUL");
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn load_handles() -> (*mut AdvtexScene, *mut AdvtexModel) {
    let fx = fixture();
    let scene = unsafe { advtex_scene_load(c_path(&fx.scene_toml).as_ptr()) };
    let model = unsafe { advtex_model_load(c_path(&fx.weights).as_ptr()) };
    assert!(!scene.is_null(), "scene_load: {}", last_error());
    assert!(!model.is_null(), "model_load: {}", last_error());
    (scene, model)
}

#[test]
fn version_is_a_static_string() {
    let version = unsafe { CStr::from_ptr(advtex_version()) };
    let text = version.to_str().unwrap();
    assert!(!text.is_empty());
    assert!(text.chars().next().unwrap().is_ascii_digit());
}

#[test]
fn loaders_reject_null_and_bad_paths() {
    assert!(unsafe { advtex_scene_load(std::ptr::null()) }.is_null());
    assert!(last_error().contains("null"));

    let bogus = CString::new("/nonexistent/scene.toml").unwrap();
    assert!(unsafe { advtex_scene_load(bogus.as_ptr()) }.is_null());
    assert!(last_error().contains("/nonexistent/scene.toml"));

    assert!(unsafe { advtex_model_load(std::ptr::null()) }.is_null());
    let bogus = CString::new("/nonexistent/clf.atxw").unwrap();
    assert!(unsafe { advtex_model_load(bogus.as_ptr()) }.is_null());

    // Freeing null is a documented no-op.
    unsafe {
        advtex_scene_free(std::ptr::null_mut());
        advtex_model_free(std::ptr::null_mut());
    }
}

#[test]
fn rig_accuracy_reports_a_fraction() {
    let (scene, model) = load_handles();
    for renderer in [AdvtexRenderer::Surrogate, AdvtexRenderer::Target] {
        let mut acc = f64::NAN;
        let status =
            unsafe { advtex_rig_accuracy(scene, model, std::ptr::null(), renderer, &mut acc) };
        assert_eq!(status, AdvtexStatus::Ok, "{}", last_error());
        assert!((0.0..=1.0).contains(&acc), "accuracy {acc}");
    }

    let mut acc = 0.0;
    let status = unsafe {
        advtex_rig_accuracy(scene, model, std::ptr::null(), AdvtexRenderer::Surrogate,
                            std::ptr::null_mut())
    };
    assert_eq!(status, AdvtexStatus::NullArgument);
    let bogus = CString::new("/nonexistent/tex.png").unwrap();
    let status = unsafe {
        advtex_rig_accuracy(scene, model, bogus.as_ptr(), AdvtexRenderer::Surrogate, &mut acc)
    };
    assert_eq!(status, AdvtexStatus::ConfigError);

    unsafe {
        advtex_scene_free(scene);
        advtex_model_free(model);
    }
}

#[test]
fn attack_writes_outputs_and_outcome_matches_reevaluation() {
    let (scene, model) = load_handles();
    let dir = tempfile::tempdir().unwrap();
    let tex_path = dir.path().join("adv.png");
    let report_path = dir.path().join("adv.report.json");

    let params = AdvtexAttackParams {
        epsilon: 0.1,
        alpha: 0.05,
        n_steps: 2,
        view_batch: 2,
        saliency_tau: 0.0,
        seed: 7,
        random_start: 0,
    };
    let mut outcome = AdvtexAttackOutcome {
        accuracy_before: f64::NAN,
        accuracy_after: f64::NAN,
        accuracy_drop: f64::NAN,
        n_pct: f64::NAN,
        changed_texel_fraction: f64::NAN,
    };
    let status = unsafe {
        advtex_attack_run(scene, model, &params, c_path(&tex_path).as_ptr(),
                          c_path(&report_path).as_ptr(), &mut outcome)
    };
    assert_eq!(status, AdvtexStatus::Ok, "{}", last_error());
    assert!(tex_path.is_file());
    assert!(report_path.is_file());
    assert!((0.0..=1.0).contains(&outcome.accuracy_before));
    assert!((0.0..=1.0).contains(&outcome.accuracy_after));
    assert!(outcome.n_pct >= 0.0 && outcome.n_pct <= params.epsilon + 1e-9);

    // The PNG on disk must reproduce the reported post-attack accuracy.
    let mut acc = f64::NAN;
    let status = unsafe {
        advtex_rig_accuracy(scene, model, c_path(&tex_path).as_ptr(),
                            AdvtexRenderer::Surrogate, &mut acc)
    };
    assert_eq!(status, AdvtexStatus::Ok, "{}", last_error());
    assert_eq!(acc, outcome.accuracy_after);

    unsafe {
        advtex_scene_free(scene);
        advtex_model_free(model);
    }
}

#[test]
fn attack_rejects_bad_parameters() {
    let (scene, model) = load_handles();
    let dir = tempfile::tempdir().unwrap();
    let tex_path = c_path(&dir.path().join("adv.png"));

    let params = AdvtexAttackParams {
        epsilon: 0.05,
        alpha: 0.2, // step larger than the ball
        n_steps: 1,
        view_batch: 0,
        saliency_tau: 0.0,
        seed: 0,
        random_start: 0,
    };
    let status = unsafe {
        advtex_attack_run(scene, model, &params, tex_path.as_ptr(),
                          std::ptr::null(), std::ptr::null_mut())
    };
    assert_eq!(status, AdvtexStatus::ConfigError);
    assert!(!last_error().is_empty());

    let status = unsafe {
        advtex_attack_run(std::ptr::null(), model, &params, tex_path.as_ptr(),
                          std::ptr::null(), std::ptr::null_mut())
    };
    assert_eq!(status, AdvtexStatus::NullArgument);

    unsafe {
        advtex_scene_free(scene);
        advtex_model_free(model);
    }
}

#[test]
fn saliency_export_writes_maps_and_kept_fraction() {
    let (scene, model) = load_handles();
    let dir = tempfile::tempdir().unwrap();
    let heatmap = dir.path().join("heat.png");
    let mask = dir.path().join("mask.png");

    let mut kept = f64::NAN;
    let status = unsafe {
        advtex_saliency_export(scene, model, 0.3, c_path(&heatmap).as_ptr(),
                               c_path(&mask).as_ptr(), &mut kept)
    };
    assert_eq!(status, AdvtexStatus::Ok, "{}", last_error());
    assert!(heatmap.is_file());
    assert!(mask.is_file());
    assert!((0.0..=1.0).contains(&kept), "kept fraction {kept}");

    // Out-of-range threshold is a config error; skipping both paths is fine.
    let status = unsafe {
        advtex_saliency_export(scene, model, 1.5, std::ptr::null(), std::ptr::null(),
                               std::ptr::null_mut())
    };
    assert_eq!(status, AdvtexStatus::ConfigError);

    unsafe {
        advtex_scene_free(scene);
        advtex_model_free(model);
    }
}

#[test]
fn last_error_reports_required_length_and_truncates() {
    assert!(unsafe { advtex_scene_load(std::ptr::null()) }.is_null());
    let full = unsafe { advtex_last_error(std::ptr::null_mut(), 0) };
    assert!(full > 1);

    let mut tiny = [0 as c_char; 4];
    let reported = unsafe { advtex_last_error(tiny.as_mut_ptr(), tiny.len()) };
    assert_eq!(reported, full);
    assert_eq!(tiny[3], 0);
    let text = unsafe { CStr::from_ptr(tiny.as_ptr()) }.to_str().unwrap();
    assert_eq!(text.len(), 3);
}
