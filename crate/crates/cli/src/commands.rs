use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sirlab::diffops::ForwardKind;
use sirlab::meshx::{export_obj, marching_cubes, read_obj, TriMesh};
use sirlab::scene::io::{contact_sheet, encode_ppm, read_scene, to_rgb8, write_flatland, write_voxel, AnyScene};
use sirlab::scene::{evaluation_cameras, render_batch, FlatlandGrid, Scene, ViewShape, VoxelGrid};
use sirlab::schedule::AnnealKind;
use sirlab::sirloop::{
    evaluate_against, expected_sir_nfe, run_sds, run_sir_staged, texture_refine, Backend, OracleTask, PhaseTimes,
    RunSummary, RunTrace, SirConfig, Space,
};
use sirlab::tasks::{flatland_task, voxel_task, TaskShape};

use crate::args::{AblateArgs, ImageFormat, MeshArgs, Overrides, RunArgs, SdsArgs};
use crate::manifest::RunManifest;

/// Reads `path` (or starts from defaults) and applies flag overrides.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<SirConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            SirConfig::from_json(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => SirConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate().context("invalid config")?;
    Ok(cfg)
}

/// Backend-specific pieces of a run: the task object, saving and meshing.
pub trait TaskScene: Scene + Sized {
    fn task(shape: TaskShape, side: usize) -> Self;
    fn save(&self, path: &Path) -> Result<()>;
    fn mesh(&self, threshold: f64) -> Option<TriMesh>;
}

impl TaskScene for FlatlandGrid {
    fn task(shape: TaskShape, side: usize) -> Self {
        flatland_task(shape, side)
    }

    fn save(&self, path: &Path) -> Result<()> {
        Ok(write_flatland(path, self)?)
    }

    fn mesh(&self, _: f64) -> Option<TriMesh> {
        None
    }
}

impl TaskScene for VoxelGrid {
    fn task(shape: TaskShape, side: usize) -> Self {
        voxel_task(shape, side)
    }

    fn save(&self, path: &Path) -> Result<()> {
        Ok(write_voxel(path, self)?)
    }

    fn mesh(&self, threshold: f64) -> Option<TriMesh> {
        Some(marching_cubes(self, threshold))
    }
}

/// One oracle task per coarse-to-fine stage.
pub fn build_stages<S: TaskScene>(cfg: &SirConfig) -> Result<Vec<OracleTask<S>>> {
    cfg.stage_sides()
        .into_iter()
        .map(|side| Ok(OracleTask::build(S::task(cfg.task.shape, side), cfg)?))
        .collect()
}

/// Runs reconstruction on the configured backend and returns the final
/// scene alongside its trace.
pub fn reconstruct<S: TaskScene>(cfg: &SirConfig) -> Result<(S, RunTrace, S)> {
    let stages = build_stages::<S>(cfg)?;
    let problems: Vec<_> = stages.iter().map(|t| t.problem()).collect();
    let (scene, trace) = run_sir_staged(cfg, &problems)?;
    let gt = stages.last().expect("at least one stage").ground_truth.clone();
    Ok((scene, trace, gt))
}

fn write_image(path: &Path, rgb: Vec<u8>, width: usize, height: usize, format: ImageFormat) -> Result<()> {
    match format {
        ImageFormat::Ppm => fs::write(path, encode_ppm(&rgb, width, height))?,
        ImageFormat::Png => {
            let img = image::RgbImage::from_raw(width as u32, height as u32, rgb)
                .ok_or_else(|| anyhow!("image buffer does not match {width}x{height}"))?;
            img.save_with_format(path, image::ImageFormat::Png)
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

/// Writes each evaluation view plus a contact sheet of the scene and one
/// of the ground truth into `dir`.
pub fn write_renders<S: Scene>(dir: &Path, scene: &S, ground_truth: &S, format: ImageFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let cams = evaluation_cameras();
    let shape: ViewShape = scene.view_shape();
    let ext = format.extension();
    let batch = render_batch(scene, &cams);
    let mut written = Vec::new();
    for (j, cam) in cams.iter().enumerate() {
        let path = dir.join(format!("view_{j}_az{:03}.{ext}", cam.azimuth_degrees().round() as i64));
        write_image(&path, to_rgb8(batch.view(j), shape), shape.width, shape.height, format)?;
        written.push(path);
    }
    let views: Vec<&[f64]> = batch.views().collect();
    let (rgb, w, h) = contact_sheet(&views, shape);
    let sheet = dir.join(format!("sheet.{ext}"));
    write_image(&sheet, rgb, w, h, format)?;
    written.push(sheet);
    let gt = render_batch(ground_truth, &cams);
    let views: Vec<&[f64]> = gt.views().collect();
    let (rgb, w, h) = contact_sheet(&views, shape);
    let sheet = dir.join(format!("ground_truth.{ext}"));
    write_image(&sheet, rgb, w, h, format)?;
    written.push(sheet);
    Ok(written)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GenSummary {
    pub backend: Backend,
    pub shape: TaskShape,
    pub seed: u64,
    pub expected_nfe: u64,
    #[serde(flatten)]
    pub run: RunSummary,
    pub texture_nfe: u64,
    /// Metrics after the optional texture refinement.
    pub final_psnr: f64,
    pub final_mse: f64,
    pub mesh_vertices: Option<usize>,
    pub mesh_triangles: Option<usize>,
}

/// `gen`: reconstruction with renders, traces, summary and optional mesh.
pub fn cmd_gen(args: &RunArgs) -> Result<PathBuf> {
    let mut cfg = load_config(args.config.as_deref(), &args.overrides)?;
    if let Some(steps) = args.texture_steps {
        cfg.texture_refine_steps = steps;
    }
    cfg.export_mesh |= args.mesh;
    let manifest = RunManifest::start("gen", args.config.as_deref(), cfg.seed, &args.out)?;
    match cfg.task.backend {
        Backend::Flatland => gen_on::<FlatlandGrid>(&cfg, args, &manifest)?,
        Backend::Voxel => gen_on::<VoxelGrid>(&cfg, args, &manifest)?,
    };
    manifest.finish()
}

fn gen_on<S: TaskScene>(cfg: &SirConfig, args: &RunArgs, manifest: &RunManifest) -> Result<GenSummary> {
    fs::write(manifest.path("config.json"), cfg.to_json())?;
    let stages = build_stages::<S>(cfg)?;
    let problems: Vec<_> = stages.iter().map(|t| t.problem()).collect();
    let (mut scene, trace) = run_sir_staged(cfg, &problems)?;
    let last = problems.last().expect("at least one stage");
    let texture_nfe = if cfg.texture_refine_steps > 0 {
        texture_refine(&mut scene, cfg, last, cfg.texture_refine_steps)?
    } else {
        0
    };
    let gt = &stages.last().expect("at least one stage").ground_truth;
    let (final_mse, final_psnr) = evaluate_against(&scene, gt);
    ensure!(final_mse.is_finite(), "final reconstruction error is not finite");
    fs::write(manifest.path("trace.csv"), trace.to_csv(false))?;
    fs::write(manifest.path("trace_timed.csv"), trace.to_csv(true))?;
    write_renders(&manifest.path("renders"), &scene, gt, args.image_format)?;
    scene.save(&manifest.path("scene.bin"))?;
    let mut mesh_counts = (None, None);
    if cfg.export_mesh {
        match scene.mesh(cfg.mc_threshold) {
            Some(mesh) => {
                export_obj(&mesh, &manifest.path("mesh.obj"))?;
                mesh_counts = (Some(mesh.vertices.len()), Some(mesh.triangles.len()));
            }
            None => log::warn!("mesh export needs the voxel backend; skipped"),
        }
    }
    let summary = GenSummary {
        backend: cfg.task.backend,
        shape: cfg.task.shape,
        seed: cfg.seed,
        expected_nfe: expected_sir_nfe(cfg)?,
        run: trace.summary(),
        texture_nfe,
        final_psnr,
        final_mse,
        mesh_vertices: mesh_counts.0,
        mesh_triangles: mesh_counts.1,
    };
    fs::write(manifest.path("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    log::info!(
        "gen: {} iterations, {} NFE, PSNR {:.2} dB -> {}",
        summary.run.iterations,
        summary.run.total_nfe,
        final_psnr,
        manifest.output_dir.display()
    );
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SdsSummary {
    pub backend: Backend,
    pub shape: TaskShape,
    pub seed: u64,
    pub updates: usize,
    pub total_nfe: u64,
    pub reached_at_nfe: Option<u64>,
    pub psnr: Option<f64>,
    pub mse: Option<f64>,
    pub totals: PhaseTimes,
}

/// `sds`: the distillation baseline with per-update phase timings.
pub fn cmd_sds(args: &SdsArgs) -> Result<PathBuf> {
    let mut cfg = load_config(args.run.config.as_deref(), &args.run.overrides)?;
    if let Some(u) = args.updates {
        cfg.sds.updates = u;
    }
    if args.target_mse.is_some() {
        cfg.sds.target_mse = args.target_mse;
    }
    if args.lr.is_some() {
        cfg.sds.learning_rate = args.lr;
    }
    cfg.validate()?;
    let manifest = RunManifest::start("sds", args.run.config.as_deref(), cfg.seed, &args.run.out)?;
    match cfg.task.backend {
        Backend::Flatland => sds_on::<FlatlandGrid>(&cfg, &args.run, &manifest)?,
        Backend::Voxel => sds_on::<VoxelGrid>(&cfg, &args.run, &manifest)?,
    };
    manifest.finish()
}

fn sds_on<S: TaskScene>(cfg: &SirConfig, args: &RunArgs, manifest: &RunManifest) -> Result<SdsSummary> {
    fs::write(manifest.path("config.json"), cfg.to_json())?;
    let task = OracleTask::build(S::task(cfg.task.shape, cfg.task.side), cfg)?;
    let (scene, trace) = run_sds(cfg, &task.problem())?;
    fs::write(manifest.path("sds_trace.csv"), trace.to_csv())?;
    fs::write(manifest.path("sds_timings.csv"), trace.timings_csv())?;
    write_renders(&manifest.path("renders"), &scene, &task.ground_truth, args.image_format)?;
    scene.save(&manifest.path("scene.bin"))?;
    let summary = SdsSummary {
        backend: cfg.task.backend,
        shape: cfg.task.shape,
        seed: cfg.seed,
        updates: trace.records.len(),
        total_nfe: trace.total_nfe(),
        reached_at_nfe: trace.reached_at_nfe,
        psnr: trace.final_psnr(),
        mse: trace.final_mse(),
        totals: trace.totals(),
    };
    fs::write(manifest.path("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "n_views", alias = "nViews")]
    NViews,
    #[serde(rename = "schedule")]
    Schedule,
    #[serde(rename = "forward_kind", alias = "forwardKind")]
    ForwardKind,
    #[serde(rename = "K", alias = "k")]
    K,
    #[serde(rename = "space")]
    Space,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Self::NViews => "n_views",
            Self::Schedule => "schedule",
            Self::ForwardKind => "forward_kind",
            Self::K => "K",
            Self::Space => "space",
        }
    }

    /// Sets this axis on `cfg`. The space axis also turns the codec on so
    /// both variants run the model on latents.
    pub fn apply(self, cfg: &mut SirConfig, value: &serde_json::Value) -> Result<()> {
        let as_usize = || {
            value
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| anyhow!("axis {} needs integer values, got {value}", self.name()))
        };
        let as_str = || {
            value
                .as_str()
                .ok_or_else(|| anyhow!("axis {} needs string values, got {value}", self.name()))
        };
        match self {
            Self::NViews => cfg.n_views = as_usize()?,
            Self::K => cfg.k = as_usize()?,
            Self::Schedule => {
                cfg.anneal.kind = match as_str()? {
                    "linear" => AnnealKind::Linear,
                    "square" => AnnealKind::Square,
                    "random" => AnnealKind::Random,
                    other => bail!("unknown schedule '{other}'"),
                }
            }
            Self::ForwardKind => cfg.forward_kind = as_str()?.parse::<ForwardKind>()?,
            Self::Space => {
                cfg.space = as_str()?.parse::<Space>()?;
                cfg.codec = true;
            }
        }
        Ok(())
    }
}

/// A sweep file: one axis, its values and the seeds shared by every value.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Sweep {
    /// Config file the sweep starts from, relative to the sweep file.
    #[serde(default)]
    pub base_config: Option<PathBuf>,
    /// Inline base config; used when no file is named.
    #[serde(default)]
    pub base: Option<SirConfig>,
    pub axis: Axis,
    pub values: Vec<serde_json::Value>,
    pub seeds: Vec<u64>,
}

impl Sweep {
    pub fn load(path: &Path) -> Result<(Self, SirConfig)> {
        let text = fs::read_to_string(path).with_context(|| format!("reading sweep {}", path.display()))?;
        let sweep: Sweep = serde_json::from_str(&text).with_context(|| format!("parsing sweep {}", path.display()))?;
        ensure!(!sweep.values.is_empty(), "sweep lists no values");
        ensure!(!sweep.seeds.is_empty(), "sweep lists no seeds");
        let base = match (&sweep.base_config, &sweep.base) {
            (Some(_), Some(_)) => bail!("give either baseConfig or base, not both"),
            (Some(rel), None) => {
                let p = path.parent().unwrap_or(Path::new(".")).join(rel);
                load_config(Some(&p), &Overrides::default())?
            }
            (None, Some(cfg)) => cfg.clone(),
            (None, None) => SirConfig::default(),
        };
        Ok((sweep, base))
    }
}

/// One row of `runs.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AblationRow {
    pub value: String,
    pub seed: u64,
    pub nfe: u64,
    pub init_psnr: Option<f64>,
    pub psnr: f64,
    pub mse: f64,
    pub mean_iteration_ms: f64,
}

fn value_label(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// `ablate`: every value of one axis under every seed, with per-run
/// traces, a row per run and an aggregate per value.
pub fn cmd_ablate(args: &AblateArgs) -> Result<PathBuf> {
    let (sweep, base) = Sweep::load(&args.sweep)?;
    let manifest = RunManifest::start("ablate", Some(&args.sweep), sweep.seeds[0], &args.out)?;
    fs::write(manifest.path("sweep.json"), serde_json::to_string_pretty(&sweep)?)?;
    let mut rows = Vec::new();
    for value in &sweep.values {
        let label = value_label(value);
        for &seed in &sweep.seeds {
            let mut cfg = base.clone();
            sweep.axis.apply(&mut cfg, value)?;
            cfg.seed = seed;
            cfg.validate().with_context(|| format!("{}={label}", sweep.axis.name()))?;
            let (trace, mse, psnr) = match cfg.task.backend {
                Backend::Flatland => ablation_run::<FlatlandGrid>(&cfg)?,
                Backend::Voxel => ablation_run::<VoxelGrid>(&cfg)?,
            };
            let dir = manifest.path(&format!("{}={label}-s{seed}", sweep.axis.name()));
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("trace.csv"), trace.to_csv(false))?;
            fs::write(dir.join("trace_timed.csv"), trace.to_csv(true))?;
            rows.push(AblationRow {
                value: label.clone(),
                seed,
                nfe: trace.total_nfe(),
                init_psnr: trace.init.psnr,
                psnr,
                mse,
                mean_iteration_ms: trace.mean_iteration_ms(),
            });
            log::info!("{}={label} seed {seed}: mse {mse:.5}", sweep.axis.name());
        }
    }
    fs::write(manifest.path("runs.csv"), runs_csv(sweep.axis, &rows))?;
    fs::write(manifest.path("summary.csv"), aggregate_csv(sweep.axis, &sweep.values, &rows))?;
    manifest.finish()
}

fn ablation_run<S: TaskScene>(cfg: &SirConfig) -> Result<(RunTrace, f64, f64)> {
    let (scene, trace, gt) = reconstruct::<S>(cfg)?;
    let (mse, psnr) = evaluate_against(&scene, &gt);
    ensure!(mse.is_finite(), "non-finite reconstruction error");
    Ok((trace, mse, psnr))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn runs_csv(axis: Axis, rows: &[AblationRow]) -> String {
    let mut out = format!("{},seed,nfe,init_psnr,psnr,mse,mean_iteration_ms\n", axis.name());
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.3}",
            r.value,
            r.seed,
            r.nfe,
            opt(r.init_psnr),
            r.psnr,
            r.mse,
            r.mean_iteration_ms
        );
    }
    out
}

pub fn aggregate_csv(axis: Axis, values: &[serde_json::Value], rows: &[AblationRow]) -> String {
    let mut out = format!("{},runs,mean_nfe,mean_psnr,mean_mse,std_mse,mean_iteration_ms\n", axis.name());
    for v in values {
        let label = value_label(v);
        let group: Vec<&AblationRow> = rows.iter().filter(|r| r.value == label).collect();
        let n = group.len() as f64;
        let mean = |f: &dyn Fn(&AblationRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
        let mse = mean(&|r| r.mse);
        let var = group.iter().map(|r| (r.mse - mse).powi(2)).sum::<f64>() / n;
        let _ = writeln!(
            out,
            "{label},{},{},{},{},{},{:.3}",
            group.len(),
            mean(&|r| r.nfe as f64),
            mean(&|r| r.psnr),
            mse,
            var.sqrt(),
            mean(&|r| r.mean_iteration_ms)
        );
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MeshSummary {
    pub scene: PathBuf,
    pub threshold: f64,
    pub vertices: usize,
    pub triangles: usize,
}

/// `mesh`: marching cubes on a saved voxel scene, checked by re-parsing.
pub fn cmd_mesh(args: &MeshArgs) -> Result<PathBuf> {
    let threshold = args.mc_threshold.unwrap_or(sirlab::meshx::DEFAULT_THRESHOLD);
    ensure!(threshold.is_finite(), "marching cubes threshold must be finite");
    let grid = match read_scene(&args.scene).with_context(|| format!("reading scene {}", args.scene.display()))? {
        AnyScene::Voxel(g) => g,
        AnyScene::Flatland(_) => bail!("{} holds a flatland scene; meshes need a voxel grid", args.scene.display()),
    };
    let manifest = RunManifest::start("mesh", None, 0, &args.out)?;
    let mesh = marching_cubes(&grid, threshold);
    let path = manifest.path("mesh.obj");
    export_obj(&mesh, &path)?;
    let back = read_obj(&path)?;
    ensure!(
        back.vertices.len() == mesh.vertices.len() && back.triangles.len() == mesh.triangles.len(),
        "written mesh does not parse back to the same counts"
    );
    let summary = MeshSummary {
        scene: args.scene.clone(),
        threshold,
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
    };
    fs::write(manifest.path("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    manifest.finish()
}
