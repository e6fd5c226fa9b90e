//! Score-based iterative reconstruction and the score-distillation baseline.
//!
//! A run renders the current scene from a few evenly spread condition
//! views, refines the renders with one forward process plus DDIM sampling,
//! and then fits the scene to the refined views for `I` optimizer steps.
//! Noise-predictor calls happen only during refinement, so the NFE count
//! of a run does not depend on `I`.

mod adam;
mod codec;
mod config;
mod loss;
mod sds;
mod trace;

pub use adam::{adam_scene_step, adam_step, OptimState};
pub use codec::LinearCodec;
pub use config::{Backend, LossNorm, SdsConfig, SirConfig, Space, TaskConfig};
pub use loss::{
    inner_reconstruct, latent_reconstruction_loss, reconstruction_loss, reference_loss, LossValue, Objective,
    Reference, Targets,
};
pub use sds::{run_sds, sds_grad, sds_grad_data_form, SdsTarget, SdsWeight};
pub use trace::{InitRecord, IterRecord, PhaseTimes, RunSummary, RunTrace, SdsRecord, SdsTrace};

use std::time::Instant;

use rand::SeedableRng;
use rayon::prelude::*;

use crate::diffops::{forward_process, forward_substeps, sample_to_zero, sampling_substeps, snapped_times, standard_normal, Clamp, DiffusionState};
use crate::error::{invalid, Result};
use crate::scene::{evaluation_cameras, mse, psnr_from_mse, render_batch, sample_condition_views, Camera, Scene, ViewBatch, ViewPose};
use crate::schedule::{t1_from_t2, t2_at, NoiseSchedule, TimestepLadder};
use crate::scoremodel::{build_oracle_model, EmpiricalScoreModel, EpsilonModel, Guided};
use crate::Rng;

/// Everything a run reads besides its config.
pub struct Problem<'a, S: Scene, M: EpsilonModel + ?Sized> {
    /// Defines the resolution; the run starts from its empty counterpart.
    pub template: &'a S,
    /// Noise predictor over view pixels, or over codec latents when a codec
    /// is given.
    pub model: &'a M,
    /// Condition table; index `i` is the model's view id `i`.
    pub conditions: &'a [Camera],
    pub codec: Option<&'a LinearCodec>,
    /// Hidden object used only for metrics.
    pub ground_truth: Option<&'a S>,
    pub reference: Option<&'a Reference>,
}

impl<S: Scene, M: EpsilonModel + ?Sized> Problem<'_, S, M> {
    fn check(&self, cfg: &SirConfig) -> Result<()> {
        if self.conditions.len() != self.model.num_conditions() {
            return Err(invalid(format!(
                "{} condition cameras but the model knows {} views",
                self.conditions.len(),
                self.model.num_conditions()
            )));
        }
        let want = match self.codec {
            Some(c) => c.latent_dim(),
            None => self.template.view_shape().len(),
        };
        if self.model.dim() != want {
            return Err(invalid(format!(
                "model dimension {} does not match the expected {want}",
                self.model.dim()
            )));
        }
        if cfg.uses_codec() && self.codec.is_none() {
            return Err(invalid("config asks for a codec but none was supplied"));
        }
        if cfg.space == Space::Latent && self.codec.is_none() {
            return Err(invalid("latent space needs a codec"));
        }
        Ok(())
    }

    /// MSE and PSNR against the hidden object on the evaluation views.
    pub fn evaluate(&self, scene: &S) -> Option<(f64, f64)> {
        self.ground_truth.map(|gt| evaluate_against(scene, gt))
    }
}

/// MSE over the eight evaluation views and the matching PSNR.
pub fn evaluate_against<S: Scene>(scene: &S, ground_truth: &S) -> (f64, f64) {
    let cams = evaluation_cameras();
    let a = render_batch(scene, &cams);
    let b = render_batch(ground_truth, &cams);
    let e = mse(&a.images, &b.images);
    (e, psnr_from_mse(e))
}

/// A hidden object, the oracle model built from its condition views and the
/// codec the config asks for.
pub struct OracleTask<S: Scene> {
    pub ground_truth: S,
    pub conditions: Vec<Camera>,
    pub model: EmpiricalScoreModel,
    pub codec: Option<LinearCodec>,
    pub reference: Reference,
    template: S,
}

impl<S: Scene> OracleTask<S> {
    pub fn build(ground_truth: S, cfg: &SirConfig) -> Result<Self> {
        let conditions = crate::scene::condition_cameras(cfg.task.condition_views);
        let pixel_model = build_oracle_model(&ground_truth, &conditions, cfg.task.jitter)?;
        let (model, codec) = if cfg.uses_codec() {
            let codec = LinearCodec::cosine(ground_truth.view_shape(), cfg.codec_compression)?;
            (pixel_model.mapped(|x| codec.encode(x))?, Some(codec))
        } else {
            (pixel_model, None)
        };
        Ok(Self {
            reference: Reference::from_scene(&ground_truth),
            template: ground_truth.empty_like(),
            ground_truth,
            conditions,
            model,
            codec,
        })
    }

    pub fn problem(&self) -> Problem<'_, S, EmpiricalScoreModel> {
        Problem {
            template: &self.template,
            model: &self.model,
            conditions: &self.conditions,
            codec: self.codec.as_ref(),
            ground_truth: Some(&self.ground_truth),
            reference: Some(&self.reference),
        }
    }
}

const STREAM_T2: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_CAMERAS: u64 = 3;
const STREAM_REFINE: u64 = 4;
pub(crate) const STREAM_SDS: u64 = 5;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one labelled use of the run seed.
pub(crate) fn stream(seed: u64, parts: &[u64]) -> Rng {
    let mut h = splitmix(seed);
    for &p in parts {
        h = splitmix(h ^ p);
    }
    Rng::seed_from_u64(h)
}

/// The ladder and schedule every run uses.
pub fn run_schedule(cfg: &SirConfig) -> Result<(NoiseSchedule, TimestepLadder)> {
    let sched = NoiseSchedule::ddpm_default();
    let ladder = TimestepLadder::even(sched.num_steps(), cfg.ladder_steps)?;
    Ok((sched, ladder))
}

/// `t2` for every outer iteration, drawn from the run's schedule stream.
pub fn t2_sequence(cfg: &SirConfig, ladder: &TimestepLadder) -> Result<Vec<usize>> {
    let mut rng = stream(cfg.seed, &[STREAM_T2]);
    (0..cfg.k).map(|k| t2_at(k, cfg.k, &cfg.anneal, ladder, &mut rng)).collect()
}

/// Closed-form NFE count of [`run_sir`].
pub fn expected_sir_nfe(cfg: &SirConfig) -> Result<u64> {
    let (sched, ladder) = run_schedule(cfg)?;
    let per_call = cfg.nfe_per_call();
    let views = cfg.n_views as u64;
    let init = if cfg.init_steps > 0 {
        views * per_call * (ladder.len() as u64 - 1)
    } else {
        0
    };
    let mut total = init;
    for t2 in t2_sequence(cfg, &ladder)? {
        let t1 = t1_from_t2(t2, &cfg.anneal, sched.num_steps());
        let steps = forward_substeps(cfg.forward_kind, t1, t2, &ladder) + sampling_substeps(t2, &ladder);
        total += views * per_call * steps as u64;
    }
    Ok(total)
}

/// Refined targets for one outer iteration.
#[derive(Debug, Clone)]
pub struct Refined {
    /// Refined views in pixel space (decoded when a codec is used).
    pub batch: ViewBatch,
    /// Refined latents when a codec is used.
    pub latents: Option<Vec<Vec<f64>>>,
    pub t1: usize,
    pub t2: usize,
    pub nfe: u64,
}

impl Refined {
    fn targets<'c>(&self, cfg: &SirConfig, codec: Option<&'c LinearCodec>) -> Targets<'c> {
        match (cfg.space, codec, &self.latents) {
            (Space::Latent, Some(c), Some(z)) => Targets::Latent(z.clone(), c),
            _ => Targets::Pixel(self.batch.views().map(|v| v.to_vec()).collect()),
        }
    }
}

fn finish_views<S: Scene, M: EpsilonModel + ?Sized>(
    outputs: Vec<Vec<f64>>,
    poses: &[ViewPose],
    problem: &Problem<'_, S, M>,
) -> (ViewBatch, Option<Vec<Vec<f64>>>) {
    let shape = problem.template.view_shape();
    let cameras: Vec<Camera> = poses.iter().map(|p| p.camera).collect();
    match problem.codec {
        Some(codec) => {
            let pixels = outputs
                .iter()
                .map(|z| codec.decode(z).into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
                .collect();
            (ViewBatch::from_images(pixels, cameras, shape), Some(outputs))
        }
        None => (ViewBatch::from_images(outputs, cameras, shape), None),
    }
}

/// Renders, noises/inverts and re-samples the views of outer iteration `k`.
pub fn refine_views<S: Scene, M: EpsilonModel + ?Sized>(
    scene: &S,
    poses: &[ViewPose],
    k: usize,
    t2: usize,
    cfg: &SirConfig,
    problem: &Problem<'_, S, M>,
) -> Result<Refined> {
    let (sched, ladder) = run_schedule(cfg)?;
    let t1 = t1_from_t2(t2, &cfg.anneal, sched.num_steps());
    let pred = Guided::new(problem.model, cfg.cfg_scale);
    let clamp = if problem.codec.is_some() { Clamp::None } else { Clamp::Unit };
    let before = problem.model.nfe();
    let outputs = poses
        .par_iter()
        .enumerate()
        .map(|(j, pose)| {
            let mut rng = stream(cfg.seed, &[STREAM_REFINE, k as u64, j as u64]);
            let image = scene.render(&pose.camera).image;
            let x = match problem.codec {
                Some(c) => c.encode(&image),
                None => image,
            };
            let noisy = forward_process(cfg.forward_kind, &x, t1, t2, &ladder, &pred, pose.view_id, &sched, &mut rng)?;
            sample_to_zero(noisy, &ladder, cfg.eta, &pred, pose.view_id, &sched, &mut rng, clamp)
        })
        .collect::<Result<Vec<_>>>()?;
    let (batch, latents) = finish_views(outputs, poses, problem);
    let (t1, t2) = snapped_times(t1, t2, &ladder);
    Ok(Refined {
        batch,
        latents,
        t1: if cfg.forward_kind == crate::diffops::ForwardKind::Hybrid { t1 } else { t2 },
        t2,
        nfe: problem.model.nfe() - before,
    })
}

/// Views sampled from pure noise, one per pose, along the full ladder.
pub fn sample_from_noise<S: Scene, M: EpsilonModel + ?Sized>(
    poses: &[ViewPose],
    cfg: &SirConfig,
    problem: &Problem<'_, S, M>,
) -> Result<Refined> {
    let (sched, ladder) = run_schedule(cfg)?;
    let pred = Guided::new(problem.model, cfg.cfg_scale);
    let clamp = if problem.codec.is_some() { Clamp::None } else { Clamp::Unit };
    let dim = problem.model.dim();
    let before = problem.model.nfe();
    let outputs = poses
        .par_iter()
        .enumerate()
        .map(|(j, pose)| {
            let mut rng = stream(cfg.seed, &[STREAM_INIT, j as u64]);
            let start = DiffusionState {
                x: standard_normal(dim, &mut rng),
                t: ladder.max_step(),
            };
            sample_to_zero(start, &ladder, cfg.eta, &pred, pose.view_id, &sched, &mut rng, clamp)
        })
        .collect::<Result<Vec<_>>>()?;
    let (batch, latents) = finish_views(outputs, poses, problem);
    let top = ladder.max_step();
    Ok(Refined {
        batch,
        latents,
        t1: top,
        t2: top,
        nfe: problem.model.nfe() - before,
    })
}

fn objective<'a, S: Scene, M: EpsilonModel + ?Sized>(
    refined: &Refined,
    cfg: &SirConfig,
    problem: &Problem<'a, S, M>,
) -> Objective<'a> {
    let weights = (cfg.ref_color_weight, cfg.ref_opacity_weight);
    Objective {
        cameras: refined.batch.cameras.clone(),
        targets: refined.targets(cfg, problem.codec),
        norm: cfg.loss_norm,
        reference: problem.reference.filter(|_| weights != (0.0, 0.0)),
        ref_weights: weights,
    }
}

fn new_optimizer<S: Scene>(scene: &S, cfg: &SirConfig) -> OptimState {
    let (b1, b2) = cfg.adam_betas;
    OptimState::for_scene(scene, cfg.lr_at(0)).with_betas(b1, b2, cfg.adam_eps)
}

/// Result of the direct-reconstruction initialization.
pub struct Initialized<S> {
    pub scene: S,
    pub optim: OptimState,
    pub record: InitRecord,
}

/// Fits the empty scene to views sampled from noise for `init_steps` steps.
pub fn init_scene<S: Scene, M: EpsilonModel + ?Sized>(
    cfg: &SirConfig,
    problem: &Problem<'_, S, M>,
) -> Result<Initialized<S>> {
    cfg.validate()?;
    problem.check(cfg)?;
    let start = Instant::now();
    let mut scene = problem.template.empty_like();
    let mut optim = new_optimizer(&scene, cfg);
    let mut record = InitRecord {
        nfe: 0,
        steps: cfg.init_steps,
        loss: None,
        psnr: None,
        mse: None,
        wall_ms: 0.0,
    };
    if cfg.init_steps > 0 {
        let mut rng = stream(cfg.seed, &[STREAM_INIT]);
        let poses = sample_condition_views(cfg.n_views, problem.conditions.len(), &mut rng);
        let poses = with_table_cameras(poses, problem.conditions);
        let refined = sample_from_noise(&poses, cfg, problem)?;
        let obj = objective(&refined, cfg, problem);
        let history = inner_reconstruct(&mut scene, &obj, cfg.init_steps, &mut optim)?;
        record.nfe = refined.nfe;
        record.loss = history.last().map(|v| v.reconstruction);
    }
    if let Some((e, p)) = problem.evaluate(&scene) {
        record.mse = Some(e);
        record.psnr = Some(p);
    }
    record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(Initialized { scene, optim, record })
}

/// Poses drawn against a table of `m` views, carrying the table's cameras.
fn with_table_cameras(poses: Vec<ViewPose>, table: &[Camera]) -> Vec<ViewPose> {
    poses
        .into_iter()
        .map(|p| ViewPose {
            view_id: p.view_id,
            camera: table[p.view_id],
        })
        .collect()
}

/// Runs initialization and `K` outer iterations.
pub fn run_sir<S: Scene, M: EpsilonModel + ?Sized>(cfg: &SirConfig, problem: &Problem<'_, S, M>) -> Result<(S, RunTrace)> {
    if cfg.coarse_to_fine.len() > 1 {
        return Err(invalid("a coarse-to-fine config needs one problem per stage"));
    }
    run_sir_staged(cfg, std::slice::from_ref(problem))
}

/// Coarse-to-fine [`run_sir`]: stage `s` runs outer iterations
/// `stage_starts[s]..stage_starts[s + 1]` against `stages[s]`. Between
/// stages the scene is upsampled and the optimizer restarts.
pub fn run_sir_staged<S: Scene, M: EpsilonModel + ?Sized>(
    cfg: &SirConfig,
    stages: &[Problem<'_, S, M>],
) -> Result<(S, RunTrace)> {
    let sides = if cfg.coarse_to_fine.is_empty() {
        vec![stages.first().map_or(0, |p| p.template.side())]
    } else {
        cfg.coarse_to_fine.clone()
    };
    if stages.is_empty() || stages.len() != sides.len() {
        return Err(invalid(format!("{} stage problems for {} stage sides", stages.len(), sides.len())));
    }
    for (p, &side) in stages.iter().zip(&sides) {
        if p.template.side() != side {
            return Err(invalid(format!("stage problem has side {} but the config lists {side}", p.template.side())));
        }
        p.check(cfg)?;
    }
    let (_, ladder) = run_schedule(cfg)?;
    let Initialized {
        mut scene,
        mut optim,
        record: init,
    } = init_scene(cfg, &stages[0])?;
    let t2s = t2_sequence(cfg, &ladder)?;
    let starts = cfg.stage_starts();
    let mut stage = 0;
    let mut nfe = init.nfe;
    let mut records = Vec::with_capacity(cfg.k);
    for (k, &t2) in t2s.iter().enumerate() {
        while stage + 1 < stages.len() && k >= starts[stage + 1] {
            stage += 1;
            scene = scene.upsampled(sides[stage] / sides[stage - 1]);
            optim = new_optimizer(&scene, cfg);
        }
        let problem = &stages[stage];
        let start = Instant::now();
        let mut rng = stream(cfg.seed, &[STREAM_CAMERAS, k as u64]);
        let poses = with_table_cameras(
            sample_condition_views(cfg.n_views, problem.conditions.len(), &mut rng),
            problem.conditions,
        );
        let refined = refine_views(&scene, &poses, k, t2, cfg, problem)?;
        nfe += refined.nfe;
        optim.lr = cfg.lr_at(k);
        let obj = objective(&refined, cfg, problem);
        let history = inner_reconstruct(&mut scene, &obj, cfg.i, &mut optim).map_err(|e| match e {
            crate::SirError::NonFinite { context, .. } => crate::SirError::NonFinite {
                context: format!("{context} in outer iteration {k}"),
                iteration: k,
            },
            other => other,
        })?;
        let eval = problem.evaluate(&scene);
        let loss = history.last().map_or(0.0, |v| v.reconstruction);
        log::debug!("k={k} t1={} t2={} nfe={nfe} loss={loss:.5}", refined.t1, refined.t2);
        records.push(IterRecord {
            k,
            t1: refined.t1,
            t2: refined.t2,
            nfe,
            loss,
            psnr: eval.map(|e| e.1),
            mse: eval.map(|e| e.0),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    // Any stage left unvisited (K smaller than the stage count) still
    // determines the output resolution.
    while stage + 1 < stages.len() {
        stage += 1;
        scene = scene.upsampled(sides[stage] / sides[stage - 1]);
    }
    Ok((scene, RunTrace { init, records }))
}

/// Color-only touch-up: one noise-adding refinement with `eta = 0` at the
/// final `t2`, followed by `steps` color updates.
pub fn texture_refine<S: Scene, M: EpsilonModel + ?Sized>(
    scene: &mut S,
    cfg: &SirConfig,
    problem: &Problem<'_, S, M>,
    steps: usize,
) -> Result<u64> {
    let (_, ladder) = run_schedule(cfg)?;
    let mut local = cfg.clone();
    local.forward_kind = crate::diffops::ForwardKind::NoiseOnly;
    local.eta = 0.0;
    let t2 = ladder.snap(cfg.anneal.t2_end * ladder.max_step() as f64);
    let t2 = t2.clamp(ladder.first_positive(), ladder.steps()[ladder.len() - 2].max(ladder.first_positive()));
    let mut rng = stream(cfg.seed, &[STREAM_CAMERAS, u64::MAX]);
    let poses = with_table_cameras(
        sample_condition_views(cfg.n_views, problem.conditions.len(), &mut rng),
        problem.conditions,
    );
    let refined = refine_views(scene, &poses, cfg.k, t2, &local, problem)?;
    let obj = objective(&refined, &local, problem);
    let mut optim = new_optimizer(scene, cfg);
    for step in 0..steps {
        let (value, mut grad) = obj.eval(scene)?;
        if !value.total.is_finite() {
            return Err(crate::SirError::NonFinite {
                context: "texture refinement".into(),
                iteration: step,
            });
        }
        grad.density.iter_mut().for_each(|g| *g = 0.0);
        adam_scene_step(scene, &grad, &mut optim);
    }
    Ok(refined.nfe)
}

#[cfg(test)]
mod tests;
