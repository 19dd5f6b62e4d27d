//! The `advtex` command line: corpus generation, classifier training,
//! saliency maps, attacks, transfer evaluation, and report aggregation.
//!
//! Conventions shared by every subcommand:
//! - exit codes: 0 success, 2 usage error, 3 bad configuration or input,
//!   4 failure during execution;
//! - failures print exactly one `error: ...` line to stderr;
//! - outputs are written to a temp file and renamed into place, and an
//!   existing output is refused unless `--force` is given;
//! - all randomness flows from `--seed` (default 0); nothing reads the
//!   clock or the environment, so a rerun with the same flags is
//!   byte-identical;
//! - every command writes a [`RunManifest`] recording input digests and
//!   output paths next to its artifacts.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgAction, Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{run_attack, AttackConfig};
use crate::classifier::{train_classifier, ClassifierModel, LabeledView, TrainConfig};
use crate::manifest::{sha256_hex, RunManifest};
use crate::mesh::{generate_primitive, PrimitiveKind};
use crate::metrics::{accuracy_drop, fraction_correct, rig_predictions};
use crate::obj::serialize_obj;
use crate::report::{render_scatter, render_table, AttackReport, EvalReport, ViewPrediction};
use crate::saliency::build_saliency_mask;
use crate::scene::{
    build_view_rig, load_scene, BackgroundConfig, LightsConfig, ObjectConfig, RigConfig, Scene,
    SceneConfig, TargetParams,
};
use crate::target::{render_rig, RendererKind};
use crate::texture::{PatternSpec, Texture};

/// Entry point used by both `main` and the integration tests; returns the
/// process exit code instead of exiting so tests can drive it in-process.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders its own usage text; --help/--version land here
            // too and exit 0.
            let code = err.exit_code();
            let _ = err.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    init_threads(cli.threads);
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {}", err.message());
            err.code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    // Explicit filter only: RUST_LOG must not change behavior.
    let _ = env_logger::Builder::new().filter_level(level).try_init();
}

fn init_threads(threads: usize) {
    // The global pool can only be sized once per process; later calls
    // (e.g. repeated in-process runs from tests) keep the first size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global();
}

#[derive(Debug)]
enum CliError {
    /// Bad flags, unreadable or invalid inputs: exit 3.
    Config(String),
    /// Failure while computing or writing: exit 4.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    /// Single-line rendering for the machine-parsable stderr contract.
    fn message(&self) -> String {
        let raw = match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        };
        raw.replace('\n', "; ")
    }
}

fn config_err(err: impl Display) -> CliError {
    CliError::Config(err.to_string())
}

fn runtime_err(err: impl Display) -> CliError {
    CliError::Runtime(err.to_string())
}

/// Adds the offending path to an underlying error.
fn at_path(path: &Path) -> impl Fn(&dyn Display) -> String + '_ {
    move |err| format!("{}: {err}", path.display())
}

#[derive(Parser)]
#[command(
    name = "advtex",
    version,
    about = "Adversarial texture attacks on 3D objects, measured across renderers"
)]
struct Cli {
    /// Worker threads for rendering phases (1 = fully sequential).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// -v for progress, -vv for per-step detail.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// Overwrite outputs that already exist.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus of primitive objects: meshes, textures, scene
    /// configs, and a catalog file.
    GenCorpus(GenCorpusArgs),
    /// Train the classifier on rig renders of every corpus object under
    /// both renderers.
    Train(TrainArgs),
    /// Export the saliency heatmap and binary mask for one scene.
    Saliency(SaliencyArgs),
    /// Run the multi-view attack on one scene and write the adversarial
    /// texture plus its report.
    Attack(AttackArgs),
    /// Measure one texture's rig accuracy under the chosen renderer.
    Evaluate(EvaluateArgs),
    /// Aggregate attack reports into a summary table and scatter data.
    Report(ReportArgs),
    /// Run the full epsilon x tau attack grid on one scene, including
    /// transfer evaluation under the target renderer.
    Sweep(SweepArgs),
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorpus(args) => cmd_gen_corpus(args, cli.force),
        Command::Train(args) => cmd_train(args, cli.force),
        Command::Saliency(args) => cmd_saliency(args, cli.force),
        Command::Attack(args) => cmd_attack(args, cli.force),
        Command::Evaluate(args) => cmd_evaluate(args, cli.force),
        Command::Report(args) => cmd_report(args, cli.force),
        Command::Sweep(args) => cmd_sweep(args, cli.force),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

/// Refuses to clobber existing outputs unless --force was given.
fn check_fresh(paths: &[PathBuf], force: bool) -> Result<(), CliError> {
    if force {
        return Ok(());
    }
    for path in paths {
        if path.exists() {
            return Err(CliError::Config(format!(
                "output {} already exists (use --force to overwrite)",
                path.display()
            )));
        }
    }
    Ok(())
}

fn create_dirs(paths: &[&Path]) -> Result<(), CliError> {
    for path in paths {
        fs::create_dir_all(path).map_err(|e| runtime_err(at_path(path)(&e)))?;
    }
    Ok(())
}

/// Writes bytes under a temp name in the target directory, then renames.
fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let fail = |e: &dyn Display| CliError::Runtime(at_path(path)(e));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    tmp.write_all(bytes).map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e))?;
    Ok(())
}

/// Atomic variant for writers that insist on a path (PNG, weight files):
/// they write to a temp path which is then renamed into place.
fn save_atomic<E: Display>(
    path: &Path,
    save: impl FnOnce(&Path) -> Result<(), E>,
) -> Result<(), CliError> {
    let fail = |e: &dyn Display| CliError::Runtime(at_path(path)(e));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?.into_temp_path();
    save(&tmp).map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e))?;
    Ok(())
}

/// `foo.eval.json` -> `foo.eval.manifest.json`; used when a command's
/// output is a single file rather than a directory.
fn manifest_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let base = name.strip_suffix(".json").unwrap_or(&name);
    path.with_file_name(format!("{base}.manifest.json"))
}

fn finish_manifest(
    mut manifest: RunManifest,
    path: &Path,
    started: Instant,
) -> Result<(), CliError> {
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    let mut text = serde_json::to_string_pretty(&manifest).map_err(runtime_err)?;
    text.push('\n');
    write_bytes_atomic(path, text.as_bytes())
}

fn load_scene_checked(path: &Path) -> Result<Scene, CliError> {
    load_scene(path).map_err(|e| CliError::Config(at_path(path)(&e)))
}

/// Loads the weight file and derives the classifier id that appears in
/// reports and file names: the file stem plus the first 8 hex digits of
/// the file digest, so reports stay attributable after retraining.
fn load_model(path: &Path) -> Result<(ClassifierModel, String, String), CliError> {
    let fail = |e: &dyn Display| CliError::Config(at_path(path)(e));
    let bytes = fs::read(path).map_err(|e| fail(&e))?;
    let model = ClassifierModel::load(path).map_err(|e| fail(&e))?;
    let digest = sha256_hex(&bytes);
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let id = format!("{stem}-{}", &digest[..8]);
    Ok((model, id, digest))
}

fn record_scene_inputs(manifest: &mut RunManifest, config_path: &Path) -> Result<(), CliError> {
    let config = SceneConfig::load(config_path).map_err(|e| CliError::Config(at_path(config_path)(&e)))?;
    let dir = config_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
    for path in [
        config_path.to_path_buf(),
        resolve(&config.object.mesh),
        resolve(&config.object.texture),
    ] {
        manifest.record_input(&path).map_err(|e| CliError::Config(at_path(&path)(&e)))?;
    }
    Ok(())
}

/// `0.05` -> "0.05": the shortest exact decimal, for file names.
fn num_token(v: f64) -> String {
    format!("{v}")
}

fn tau_token(tau: Option<f64>) -> String {
    match tau {
        Some(t) => num_token(t),
        None => "none".to_string(),
    }
}

fn attack_stem(object: &str, classifier_id: &str, epsilon: f64, tau: Option<f64>) -> String {
    format!("{object}_{classifier_id}_eps{}_tau{}", num_token(epsilon), tau_token(tau))
}

fn save_report_atomic(report: &AttackReport, path: &Path) -> Result<(), CliError> {
    save_atomic(path, |tmp| report.save(tmp))
}

// ---------------------------------------------------------------------------
// gen-corpus

#[derive(Args)]
struct GenCorpusArgs {
    /// Corpus root; meshes/, textures/, scenes/, and corpus.toml go here.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of objects; entries beyond the built-in eight repeat the
    /// catalog shapes with freshly colored textures.
    #[arg(long, default_value_t = 8)]
    objects: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rig image resolution written into every scene config.
    #[arg(long, default_value_t = 128)]
    resolution: u32,
    /// Rig size written into every scene config.
    #[arg(long, default_value_t = 60)]
    views: u32,
}

struct CatalogEntry {
    short: &'static str,
    kind: PrimitiveKind,
    mesh_resolution: u32,
    pattern: &'static str,
    distance: f64,
    elevation: (f64, f64),
}

/// Eight objects in four shape pairs. Within a pair the mesh, the rig, and
/// the pattern are identical; the palettes differ by a 12/255 shift along
/// the red–blue opponent axis ("cool" vs "warm"). The pairs are therefore
/// fine-grained classes whose decision boundary sits inside a 0.05 ℓ∞
/// texture ball — the partner's own texture is a feasible perturbation —
/// while the coarse structure (shape, green level) stays far out of any
/// attack's reach. Each member's two pattern colors mirror red and blue, so
/// per-channel distortions that treat all channels alike (shading, white
/// specular, gamma on a dark palette) cancel out of the opponent-axis
/// statistic and clean accuracy survives the renderer swap. Tori get
/// raised rigs so the hole stays visible.
const CATALOG: [CatalogEntry; 8] = [
    CatalogEntry {
        short: "cube-cool",
        kind: PrimitiveKind::Cube,
        mesh_resolution: 4,
        pattern: "checker-4:2B324F/4F322B",
        distance: 2.7,
        elevation: (0.0, 40.0),
    },
    CatalogEntry {
        short: "cube-warm",
        kind: PrimitiveKind::Cube,
        mesh_resolution: 4,
        pattern: "checker-4:373243/5B321F",
        distance: 2.7,
        elevation: (0.0, 40.0),
    },
    CatalogEntry {
        short: "cylinder-cool",
        kind: PrimitiveKind::Cylinder,
        mesh_resolution: 16,
        pattern: "stripes-4:2B4A4F/4F4A2B",
        distance: 2.7,
        elevation: (0.0, 40.0),
    },
    CatalogEntry {
        short: "cylinder-warm",
        kind: PrimitiveKind::Cylinder,
        mesh_resolution: 16,
        pattern: "stripes-4:374A43/5B4A1F",
        distance: 2.7,
        elevation: (0.0, 40.0),
    },
    CatalogEntry {
        short: "sphere-cool",
        kind: PrimitiveKind::UvSphere,
        mesh_resolution: 16,
        pattern: "stripes-8:2B624F/4F622B",
        distance: 2.4,
        elevation: (0.0, 40.0),
    },
    CatalogEntry {
        short: "sphere-warm",
        kind: PrimitiveKind::UvSphere,
        mesh_resolution: 16,
        pattern: "stripes-8:376243/5B621F",
        distance: 2.4,
        elevation: (0.0, 40.0),
    },
    CatalogEntry {
        short: "torus-cool",
        kind: PrimitiveKind::Torus,
        mesh_resolution: 20,
        pattern: "checker-5:2B7A4F/4F7A2B",
        distance: 2.8,
        elevation: (10.0, 50.0),
    },
    CatalogEntry {
        short: "torus-warm",
        kind: PrimitiveKind::Torus,
        mesh_resolution: 20,
        pattern: "checker-5:377A43/5B7A1F",
        distance: 2.8,
        elevation: (10.0, 50.0),
    },
];

/// What `gen-corpus` writes and `train` reads: object names, labels, and
/// scene config paths relative to the corpus root.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusCatalog {
    pub resolution: u32,
    pub views: u32,
    pub seed: u64,
    pub objects: Vec<CorpusObject>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusObject {
    pub name: String,
    pub label: u32,
    pub scene: PathBuf,
}

impl CorpusCatalog {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn cmd_gen_corpus(args: GenCorpusArgs, force: bool) -> Result<(), CliError> {
    let started = Instant::now();
    if args.objects == 0 {
        return Err(CliError::Config("--objects must be at least 1".into()));
    }

    // Build every object up front so any invalid flag combination (bad
    // resolution, bad view count) fails before files are touched.
    let mut palette_rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut objects = Vec::new();
    for i in 0..args.objects {
        let entry = &CATALOG[i as usize % CATALOG.len()];
        let name = format!("{i:02}-{}", entry.short);
        let mut spec: PatternSpec = entry.pattern.parse().expect("catalog patterns parse");
        // The seed shifts the noise generators; repeated shapes past the
        // catalog additionally get random palettes so every label stays
        // visually separable.
        spec.seed = spec.seed.wrapping_add(args.seed).wrapping_add((i / 8) as u64);
        if i >= 8 {
            for color in &mut spec.palette {
                for channel in color.iter_mut() {
                    *channel = palette_rng.gen_range(0u32..=255) as f64 / 255.0;
                }
            }
        }
        let (mesh, texture) =
            generate_primitive(entry.kind, entry.mesh_resolution, &spec).map_err(config_err)?;
        let config = SceneConfig {
            object: ObjectConfig {
                label: i,
                mesh: PathBuf::from(format!("../meshes/{name}.obj")),
                texture: PathBuf::from(format!("../textures/{name}.png")),
            },
            rig: RigConfig {
                n_views: args.views,
                distance: entry.distance,
                elevation_min: entry.elevation.0,
                elevation_max: entry.elevation.1,
                n_elevations: 4,
                fov_y: 50.0,
                resolution: args.resolution,
            },
            light: LightsConfig::default(),
            background: BackgroundConfig::default(),
            target: TargetParams::default(),
        };
        build_view_rig(&config).map_err(config_err)?;
        objects.push((name, mesh, texture, config));
    }

    let meshes_dir = args.out.join("meshes");
    let textures_dir = args.out.join("textures");
    let scenes_dir = args.out.join("scenes");
    let catalog_path = args.out.join("corpus.toml");
    let manifest_path = args.out.join("corpus.manifest.json");

    let mut planned = vec![catalog_path.clone(), manifest_path.clone()];
    for (name, ..) in &objects {
        planned.push(meshes_dir.join(format!("{name}.obj")));
        planned.push(textures_dir.join(format!("{name}.png")));
        planned.push(scenes_dir.join(format!("{name}.toml")));
    }
    check_fresh(&planned, force)?;
    create_dirs(&[&args.out, &meshes_dir, &textures_dir, &scenes_dir])?;

    let mut manifest = RunManifest::new(
        "gen-corpus",
        args.seed,
        serde_json::json!({
            "objects": args.objects,
            "resolution": args.resolution,
            "views": args.views,
        }),
    );
    let mut catalog = CorpusCatalog {
        resolution: args.resolution,
        views: args.views,
        seed: args.seed,
        objects: Vec::new(),
    };
    for (i, (name, mesh, texture, config)) in objects.iter().enumerate() {
        let mesh_path = meshes_dir.join(format!("{name}.obj"));
        let texture_path = textures_dir.join(format!("{name}.png"));
        let scene_path = scenes_dir.join(format!("{name}.toml"));
        write_bytes_atomic(&mesh_path, serialize_obj(mesh).as_bytes())?;
        save_atomic(&texture_path, |tmp| texture.save_png(tmp))?;
        write_bytes_atomic(&scene_path, config.to_toml_string().as_bytes())?;
        for path in [&mesh_path, &texture_path, &scene_path] {
            manifest.record_output(path);
        }
        catalog.objects.push(CorpusObject {
            name: name.clone(),
            label: i as u32,
            scene: PathBuf::from(format!("scenes/{name}.toml")),
        });
    }
    let catalog_text = toml::to_string_pretty(&catalog).map_err(runtime_err)?;
    write_bytes_atomic(&catalog_path, catalog_text.as_bytes())?;
    manifest.record_output(&catalog_path);
    finish_manifest(manifest, &manifest_path, started)?;

    println!("wrote {} objects under {}", objects.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Args)]
struct TrainArgs {
    /// Corpus root containing corpus.toml.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Weight file to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
}

fn cmd_train(args: TrainArgs, force: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let catalog_path = args.corpus.join("corpus.toml");
    let catalog = CorpusCatalog::load(&catalog_path).map_err(CliError::Config)?;
    if catalog.objects.is_empty() {
        return Err(CliError::Config(format!("{}: corpus is empty", catalog_path.display())));
    }

    let defaults = TrainConfig::default();
    let config = TrainConfig {
        epochs: args.epochs.unwrap_or(defaults.epochs),
        batch_size: args.batch_size.unwrap_or(defaults.batch_size),
        learning_rate: args.learning_rate.unwrap_or(defaults.learning_rate),
        momentum: args.momentum.unwrap_or(defaults.momentum),
        seed: args.seed,
        ..defaults
    };

    let manifest_path = manifest_sibling(&args.out);
    check_fresh(&[args.out.clone(), manifest_path.clone()], force)?;

    let mut manifest = RunManifest::new(
        "train",
        args.seed,
        serde_json::to_value(&config).map_err(runtime_err)?,
    );
    manifest
        .record_input(&catalog_path)
        .map_err(|e| CliError::Config(at_path(&catalog_path)(&e)))?;

    // Training sees each object through both renderers so clean accuracy
    // holds on either side of the render gap.
    let mut views = Vec::new();
    for object in &catalog.objects {
        let scene_path = args.corpus.join(&object.scene);
        record_scene_inputs(&mut manifest, &scene_path)?;
        let scene = load_scene_checked(&scene_path)?;
        if scene.label != object.label {
            return Err(CliError::Config(format!(
                "{}: scene label {} disagrees with catalog label {}",
                scene_path.display(),
                scene.label,
                object.label
            )));
        }
        log::info!("rendering {} ({} views x 2 renderers)", object.name, scene.rig.views.len());
        for kind in [RendererKind::Surrogate, RendererKind::Target] {
            let images =
                render_rig(&scene.mesh, &scene.base_texture, &scene.rig, kind, &scene.target);
            for (i, image) in images.into_iter().enumerate() {
                views.push(LabeledView {
                    image,
                    label: scene.label,
                    view_id: i as u32,
                    renderer: kind,
                });
            }
        }
    }

    let (model, report) = train_classifier(&views, &config).map_err(runtime_err)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dirs(&[parent])?;
    }
    save_atomic(&args.out, |tmp| model.save(tmp))?;
    manifest.record_output(&args.out);
    finish_manifest(manifest, &manifest_path, started)?;

    println!(
        "trained {} classes on {} views: train accuracy {:.4}, final epoch loss {:.4}",
        report.n_classes,
        report.n_examples,
        report.train_accuracy,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// saliency

#[derive(Args)]
struct SaliencyArgs {
    /// Scene config (TOML).
    #[arg(long, value_name = "CFG")]
    scene: PathBuf,
    /// Classifier weight file.
    #[arg(long, value_name = "FILE")]
    weights: PathBuf,
    /// Binarization threshold in (0, 1).
    #[arg(long)]
    tau: f64,
    /// Output directory for the heatmap and mask images.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn cmd_saliency(args: SaliencyArgs, force: bool) -> Result<(), CliError> {
    let started = Instant::now();
    if !(args.tau > 0.0 && args.tau < 1.0) {
        return Err(CliError::Config(format!("--tau {} is outside (0, 1)", args.tau)));
    }
    let scene = load_scene_checked(&args.scene)?;
    let (model, classifier_id, _) = load_model(&args.weights)?;

    let stem = format!("{}_{}_tau{}", scene.name, classifier_id, num_token(args.tau));
    let heatmap_path = args.out.join(format!("{stem}.heatmap.png"));
    let mask_path = args.out.join(format!("{stem}.mask.png"));
    let manifest_path = args.out.join(format!("{stem}.manifest.json"));
    check_fresh(&[heatmap_path.clone(), mask_path.clone(), manifest_path.clone()], force)?;
    create_dirs(&[&args.out])?;

    let mut manifest =
        RunManifest::new("saliency", 0, serde_json::json!({ "tau": args.tau }));
    record_scene_inputs(&mut manifest, &args.scene)?;
    manifest
        .record_input(&args.weights)
        .map_err(|e| CliError::Config(at_path(&args.weights)(&e)))?;

    let map = build_saliency_mask(&scene, &model, args.tau).map_err(runtime_err)?;
    save_atomic(&heatmap_path, |tmp| map.save_heatmap(tmp))?;
    save_atomic(&mask_path, |tmp| map.save_mask(tmp))?;
    manifest.record_output(&heatmap_path);
    manifest.record_output(&mask_path);
    finish_manifest(manifest, &manifest_path, started)?;

    let total = (map.tex_width() * map.tex_height()) as usize;
    println!(
        "{}: saliency mask keeps {}/{} texels at tau {}",
        scene.name,
        map.kept_texels(),
        total,
        args.tau
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// attack

#[derive(Args)]
struct AttackArgs {
    /// Scene config (TOML).
    #[arg(long, value_name = "CFG")]
    scene: PathBuf,
    /// Classifier weight file.
    #[arg(long, value_name = "FILE")]
    weights: PathBuf,
    /// l-inf budget in texture space, in (0, 1].
    #[arg(long)]
    epsilon: f64,
    /// Step size, at most epsilon.
    #[arg(long)]
    alpha: f64,
    /// Number of PGD steps.
    #[arg(long = "steps")]
    steps: usize,
    /// Saliency threshold; omitted = attack the whole texture.
    #[arg(long)]
    tau: Option<f64>,
    /// Views per gradient estimate; omitted = the full rig each step.
    #[arg(long)]
    view_batch: Option<usize>,
    /// Start from a random point inside the ball instead of the base texture.
    #[arg(long)]
    random_start: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the adversarial texture and report.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn cmd_attack(args: AttackArgs, force: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let scene = load_scene_checked(&args.scene)?;
    let (model, classifier_id, _) = load_model(&args.weights)?;
    let config = AttackConfig {
        epsilon: args.epsilon,
        alpha: args.alpha,
        n_steps: args.steps,
        view_batch: args.view_batch,
        saliency_threshold: args.tau,
        seed: args.seed,
        random_start: args.random_start,
    };
    config.validate(scene.rig.views.len()).map_err(config_err)?;

    let stem = attack_stem(&scene.name, &classifier_id, args.epsilon, args.tau);
    let texture_path = args.out.join(format!("{stem}.adv.png"));
    let report_path = args.out.join(format!("{stem}.report.json"));
    let manifest_path = args.out.join(format!("{stem}.manifest.json"));
    check_fresh(&[texture_path.clone(), report_path.clone(), manifest_path.clone()], force)?;
    create_dirs(&[&args.out])?;

    let mut manifest = RunManifest::new(
        "attack",
        args.seed,
        serde_json::json!({
            "epsilon": config.epsilon,
            "alpha": config.alpha,
            "n_steps": config.n_steps,
            "view_batch": config.view_batch,
            "saliency_threshold": config.saliency_threshold,
            "random_start": config.random_start,
        }),
    );
    record_scene_inputs(&mut manifest, &args.scene)?;
    manifest
        .record_input(&args.weights)
        .map_err(|e| CliError::Config(at_path(&args.weights)(&e)))?;

    let (texture, report) = run_attack(&scene, &model, &classifier_id, &config).map_err(runtime_err)?;
    save_atomic(&texture_path, |tmp| texture.save_png(tmp))?;
    save_report_atomic(&report, &report_path)?;
    manifest.record_output(&texture_path);
    manifest.record_output(&report_path);
    finish_manifest(manifest, &manifest_path, started)?;

    println!(
        "{}: accuracy {:.4} -> {:.4} (drop {}), n_pct {:.6}, {} steps in {:.1}s",
        scene.name,
        report.a_before,
        report.a_after,
        report
            .a_drop
            .map(|d| format!("{d:.4}"))
            .unwrap_or_else(|| "n.a.".to_string()),
        report.n_pct,
        report.n_steps,
        report.wall_clock_seconds,
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Args)]
struct EvaluateArgs {
    /// Scene config (TOML).
    #[arg(long, value_name = "CFG")]
    scene: PathBuf,
    /// Classifier weight file.
    #[arg(long, value_name = "FILE")]
    weights: PathBuf,
    /// Texture to evaluate (PNG), e.g. an adversarial output.
    #[arg(long, value_name = "FILE")]
    texture: PathBuf,
    /// Renderer to measure under.
    #[arg(long, value_parser = parse_renderer)]
    renderer: RendererKind,
    /// Report file to write (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

fn parse_renderer(s: &str) -> Result<RendererKind, String> {
    s.parse()
}

fn cmd_evaluate(args: EvaluateArgs, force: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let scene = load_scene_checked(&args.scene)?;
    let (model, classifier_id, _) = load_model(&args.weights)?;
    let texture_bytes =
        fs::read(&args.texture).map_err(|e| CliError::Config(at_path(&args.texture)(&e)))?;
    let texture =
        Texture::load_png(&args.texture).map_err(|e| CliError::Config(at_path(&args.texture)(&e)))?;

    let manifest_path = manifest_sibling(&args.out);
    check_fresh(&[args.out.clone(), manifest_path.clone()], force)?;

    let mut manifest = RunManifest::new(
        "evaluate",
        0,
        serde_json::json!({ "renderer": args.renderer.to_string() }),
    );
    record_scene_inputs(&mut manifest, &args.scene)?;
    for path in [&args.weights, &args.texture] {
        manifest.record_input(path).map_err(|e| CliError::Config(at_path(path)(&e)))?;
    }

    let per_view =
        rig_predictions(&scene, &texture, &model, args.renderer).map_err(runtime_err)?;
    let report = EvalReport {
        object: scene.name.clone(),
        label: scene.label,
        renderer: args.renderer,
        classifier_id,
        texture_digest: sha256_hex(&texture_bytes),
        accuracy: fraction_correct(&per_view, scene.label),
        per_view,
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dirs(&[parent])?;
    }
    save_atomic(&args.out, |tmp| report.save(tmp))?;
    manifest.record_output(&args.out);
    finish_manifest(manifest, &manifest_path, started)?;

    println!(
        "{}: accuracy {:.6} over {} views under the {} renderer",
        scene.name,
        report.accuracy,
        report.per_view.len(),
        args.renderer
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report

#[derive(Args)]
struct ReportArgs {
    /// Directory scanned recursively for *.report.json files.
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Output directory for table.csv and scatter.csv.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn collect_report_paths(dir: &Path, found: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            collect_report_paths(&path, found)?;
        } else if path
            .file_name()
            .map_or(false, |n| n.to_string_lossy().ends_with(".report.json"))
        {
            found.push(path);
        }
    }
    Ok(())
}

fn cmd_report(args: ReportArgs, force: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let mut paths = Vec::new();
    collect_report_paths(&args.input, &mut paths)
        .map_err(|e| CliError::Config(at_path(&args.input)(&e)))?;
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!(
            "no *.report.json files found under {}",
            args.input.display()
        )));
    }

    let table_path = args.out.join("table.csv");
    let scatter_path = args.out.join("scatter.csv");
    let manifest_path = args.out.join("report.manifest.json");
    check_fresh(&[table_path.clone(), scatter_path.clone(), manifest_path.clone()], force)?;

    let mut manifest = RunManifest::new(
        "report",
        0,
        serde_json::json!({ "reports": paths.len() }),
    );
    let mut reports = Vec::with_capacity(paths.len());
    for path in &paths {
        reports.push(AttackReport::load(path).map_err(config_err)?);
        manifest.record_input(path).map_err(|e| CliError::Config(at_path(path)(&e)))?;
    }

    create_dirs(&[&args.out])?;
    write_bytes_atomic(&table_path, render_table(&reports).as_bytes())?;
    write_bytes_atomic(&scatter_path, render_scatter(&reports).as_bytes())?;
    manifest.record_output(&table_path);
    manifest.record_output(&scatter_path);
    finish_manifest(manifest, &manifest_path, started)?;

    println!("aggregated {} reports into {}", reports.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Args)]
struct SweepArgs {
    /// Scene config (TOML).
    #[arg(long, value_name = "CFG")]
    scene: PathBuf,
    /// Classifier weight file.
    #[arg(long, value_name = "FILE")]
    weights: PathBuf,
    /// Comma-separated l-inf budgets.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.5")]
    epsilons: Vec<f64>,
    /// Comma-separated saliency thresholds; "none" disables the mask.
    #[arg(long, value_delimiter = ',', default_value = "none,0.05,0.2")]
    taus: Vec<String>,
    /// Step size shared by every cell.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long = "steps", default_value_t = 100)]
    steps: usize,
    /// Views per gradient estimate; omitted = the full rig each step.
    #[arg(long)]
    view_batch: Option<usize>,
    #[arg(long)]
    random_start: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; each grid cell writes a texture and two reports.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn parse_tau_list(raw: &[String]) -> Result<Vec<Option<f64>>, CliError> {
    raw.iter()
        .map(|s| {
            if s == "none" {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| CliError::Config(format!("--taus entry {s:?} is neither a number nor \"none\"")))
            }
        })
        .collect()
}

fn cmd_sweep(args: SweepArgs, force: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let scene = load_scene_checked(&args.scene)?;
    let (model, classifier_id, _) = load_model(&args.weights)?;
    let taus = parse_tau_list(&args.taus)?;
    if args.epsilons.is_empty() || taus.is_empty() {
        return Err(CliError::Config("--epsilons and --taus must be non-empty".into()));
    }

    // Validate the whole grid and plan every output before any cell runs.
    let mut cells = Vec::new();
    let mut planned = Vec::new();
    for &epsilon in &args.epsilons {
        for &tau in &taus {
            let config = AttackConfig {
                epsilon,
                alpha: args.alpha.min(epsilon),
                n_steps: args.steps,
                view_batch: args.view_batch,
                saliency_threshold: tau,
                seed: args.seed,
                random_start: args.random_start,
            };
            config.validate(scene.rig.views.len()).map_err(config_err)?;
            let stem = attack_stem(&scene.name, &classifier_id, epsilon, tau);
            let texture_path = args.out.join(format!("{stem}.adv.png"));
            let report_path = args.out.join(format!("{stem}.report.json"));
            let transfer_path = args.out.join(format!("{stem}.transfer.report.json"));
            planned.extend([texture_path.clone(), report_path.clone(), transfer_path.clone()]);
            cells.push((config, texture_path, report_path, transfer_path));
        }
    }
    let manifest_path = args.out.join("sweep.manifest.json");
    planned.push(manifest_path.clone());
    check_fresh(&planned, force)?;
    create_dirs(&[&args.out])?;

    let mut manifest = RunManifest::new(
        "sweep",
        args.seed,
        serde_json::json!({
            "epsilons": args.epsilons,
            "taus": args.taus,
            "alpha": args.alpha,
            "n_steps": args.steps,
            "view_batch": args.view_batch,
            "random_start": args.random_start,
        }),
    );
    record_scene_inputs(&mut manifest, &args.scene)?;
    manifest
        .record_input(&args.weights)
        .map_err(|e| CliError::Config(at_path(&args.weights)(&e)))?;

    // The target-side clean predictions are texture-independent, so they
    // are shared across the grid.
    let clean_target = rig_predictions(&scene, &scene.base_texture, &model, RendererKind::Target)
        .map_err(runtime_err)?;
    let a_before_target = fraction_correct(&clean_target, scene.label);

    for (config, texture_path, report_path, transfer_path) in &cells {
        let cell_started = Instant::now();
        let (texture, report) =
            run_attack(&scene, &model, &classifier_id, config).map_err(runtime_err)?;
        save_atomic(texture_path, |tmp| texture.save_png(tmp))?;
        save_report_atomic(&report, report_path)?;

        let adv_target =
            rig_predictions(&scene, &texture, &model, RendererKind::Target).map_err(runtime_err)?;
        let a_after_target = fraction_correct(&adv_target, scene.label);
        let transfer = AttackReport {
            renderer: RendererKind::Target,
            a_before: a_before_target,
            a_after: a_after_target,
            a_drop: accuracy_drop(a_before_target, a_after_target).ok(),
            per_view: clean_target
                .iter()
                .zip(&adv_target)
                .enumerate()
                .map(|(view, (&clean, &adversarial))| ViewPrediction {
                    view: view as u32,
                    clean,
                    adversarial,
                })
                .collect(),
            // The attack never optimizes through the target renderer, so a
            // transfer report has no trajectory to show.
            loss_trajectory: Vec::new(),
            wall_clock_seconds: cell_started.elapsed().as_secs_f64(),
            ..report.clone()
        };
        save_report_atomic(&transfer, transfer_path)?;
        for path in [texture_path, report_path, transfer_path] {
            manifest.record_output(path);
        }

        println!(
            "{}: eps {} tau {}: surrogate drop {}, target drop {}",
            scene.name,
            num_token(config.epsilon),
            tau_token(config.saliency_threshold),
            report
                .a_drop
                .map(|d| format!("{d:.4}"))
                .unwrap_or_else(|| "n.a.".to_string()),
            transfer
                .a_drop
                .map(|d| format!("{d:.4}"))
                .unwrap_or_else(|| "n.a.".to_string()),
        );
    }
    finish_manifest(manifest, &manifest_path, started)?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["advtex", "attack", "--no-such-flag"]), 2);
        assert_eq!(run(["advtex", "no-such-command"]), 2);
        assert_eq!(run(["advtex"]), 2);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(run(["advtex", "--help"]), 0);
        assert_eq!(run(["advtex", "attack", "--help"]), 0);
    }

    #[test]
    fn missing_scene_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let code = run([
            "advtex",
            "saliency",
            "--scene",
            "/nonexistent/scene.toml",
            "--weights",
            "/nonexistent/weights.atxw",
            "--tau",
            "0.2",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 3);
    }

    #[test]
    fn bad_tau_list_is_rejected() {
        let taus = vec!["none".to_string(), "0.2".to_string()];
        assert_eq!(parse_tau_list(&taus).unwrap(), vec![None, Some(0.2)]);
        assert!(parse_tau_list(&["maybe".to_string()]).is_err());
    }

    #[test]
    fn filename_tokens_are_stable() {
        assert_eq!(num_token(0.05), "0.05");
        assert_eq!(num_token(0.5), "0.5");
        assert_eq!(tau_token(None), "none");
        assert_eq!(
            attack_stem("00-cube", "clf-12345678", 0.05, Some(0.2)),
            "00-cube_clf-12345678_eps0.05_tau0.2"
        );
    }

    #[test]
    fn manifest_sibling_strips_json() {
        assert_eq!(
            manifest_sibling(Path::new("out/x.eval.json")),
            PathBuf::from("out/x.eval.manifest.json")
        );
        assert_eq!(manifest_sibling(Path::new("weights.atxw")), PathBuf::from("weights.atxw.manifest.json"));
    }
}
