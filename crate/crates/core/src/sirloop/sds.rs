use std::time::Instant;

use rand::Rng as _;

use super::adam::adam_scene_step;
use super::codec::LinearCodec;
use super::trace::{PhaseTimes, SdsRecord, SdsTrace};
use super::{new_optimizer, stream, with_table_cameras, Problem, SirConfig, Space, STREAM_SDS};
use crate::diffops::{noise_add_with, standard_normal, x0_from_eps};
use crate::error::{invalid, Result};
use crate::scene::{sample_condition_views, Scene, SceneGrad, ViewPose};
use crate::schedule::NoiseSchedule;
use crate::scoremodel::{EpsilonModel, Guided, NoisePredictor};
use crate::Rng;

/// The weighting `w(t)` of the distillation gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SdsWeight {
    /// `sigma_t / alpha_t`, which makes the data-form coefficient one.
    SigmaOverAlpha,
    Unit,
}

impl SdsWeight {
    pub fn value(&self, t: usize, sched: &NoiseSchedule) -> f64 {
        match self {
            Self::SigmaOverAlpha => sched.sigma(t) / sched.alpha(t),
            Self::Unit => 1.0,
        }
    }
}

/// Where the noised variable lives and where the residual is applied.
#[derive(Debug, Clone, Copy)]
pub enum SdsTarget<'a> {
    /// Model on pixels.
    Pixel,
    /// Model on latents; the residual is pulled back through the encoder.
    Latent(&'a LinearCodec),
    /// Model on latents; the single-step prediction is decoded and compared
    /// with the render in pixel space.
    DecodedPixel(&'a LinearCodec),
}

#[derive(Clone, Copy, PartialEq)]
enum Form {
    Eps,
    Data,
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[allow(clippy::too_many_arguments)]
fn distill<S: Scene, P: NoisePredictor + ?Sized>(
    scene: &S,
    poses: &[ViewPose],
    pred: &P,
    t: usize,
    weight: SdsWeight,
    rng: &mut Rng,
    target: SdsTarget,
    form: Form,
    sched: &NoiseSchedule,
    times: &mut PhaseTimes,
) -> Result<SceneGrad> {
    if t == 0 || t > sched.num_steps() {
        return Err(invalid(format!("distillation timestep {t} outside 1..={}", sched.num_steps())));
    }
    let (alpha, sigma) = (sched.alpha(t), sched.sigma(t));
    let w = weight.value(t, sched);
    let mut grad = scene.zero_grad();
    for pose in poses {
        let clock = Instant::now();
        let x = scene.render(&pose.camera).image;
        times.render_ms += ms(clock);

        let z = match target {
            SdsTarget::Pixel => x.clone(),
            SdsTarget::Latent(c) | SdsTarget::DecodedPixel(c) => {
                let clock = Instant::now();
                let z = c.encode(&x);
                times.codec_ms += ms(clock);
                z
            }
        };

        let eps = standard_normal(z.len(), rng);
        let noisy = noise_add_with(&z, &eps, t, sched);
        let clock = Instant::now();
        let eps_hat = pred.predict_eps(&noisy.x, t, pose.view_id, sched)?;
        times.eps_ms += ms(clock);

        // Residual arithmetic is charged to backprop, codec calls to codec.
        let clock = Instant::now();
        let cot = match (target, form) {
            (SdsTarget::DecodedPixel(c), _) => {
                let x0 = x0_from_eps(&noisy.x, &eps_hat, t, sched);
                let inner = Instant::now();
                let x0 = c.decode(&x0);
                let spent = ms(inner);
                times.codec_ms += spent;
                times.backprop_ms -= spent;
                let k = w * alpha / sigma;
                x.iter().zip(&x0).map(|(a, b)| k * (a - b)).collect()
            }
            (_, Form::Eps) => eps_hat.iter().zip(&eps).map(|(a, b)| w * (a - b)).collect::<Vec<_>>(),
            (_, Form::Data) => {
                let x0 = x0_from_eps(&noisy.x, &eps_hat, t, sched);
                let k = w * alpha / sigma;
                z.iter().zip(&x0).map(|(a, b)| k * (a - b)).collect()
            }
        };
        times.backprop_ms += ms(clock);
        let cot = match target {
            SdsTarget::Latent(c) => {
                let clock = Instant::now();
                let cot = c.decode(&cot);
                times.codec_ms += ms(clock);
                cot
            }
            _ => cot,
        };

        let clock = Instant::now();
        grad.add_assign(&scene.render_vjp(&pose.camera, &cot, None));
        times.backprop_ms += ms(clock);
    }
    Ok(grad)
}

/// `w(t) (eps_hat(alpha x + sigma eps, t) - eps) dx/dtheta`, one noise draw
/// per view.
#[allow(clippy::too_many_arguments)]
pub fn sds_grad<S: Scene, P: NoisePredictor + ?Sized>(
    scene: &S,
    poses: &[ViewPose],
    pred: &P,
    t: usize,
    weight: SdsWeight,
    rng: &mut Rng,
    target: SdsTarget,
    sched: &NoiseSchedule,
) -> Result<SceneGrad> {
    let mut times = PhaseTimes::default();
    distill(scene, poses, pred, t, weight, rng, target, Form::Eps, sched, &mut times)
}

/// `(w(t) alpha_t / sigma_t) (x - x0_hat) dx/dtheta` on the same noised
/// input as [`sds_grad`].
#[allow(clippy::too_many_arguments)]
pub fn sds_grad_data_form<S: Scene, P: NoisePredictor + ?Sized>(
    scene: &S,
    poses: &[ViewPose],
    pred: &P,
    t: usize,
    weight: SdsWeight,
    rng: &mut Rng,
    target: SdsTarget,
    sched: &NoiseSchedule,
) -> Result<SceneGrad> {
    let mut times = PhaseTimes::default();
    distill(scene, poses, pred, t, weight, rng, target, Form::Data, sched, &mut times)
}

/// Score distillation from the empty scene: one gradient step per update.
pub fn run_sds<S: Scene, M: EpsilonModel + ?Sized>(cfg: &SirConfig, problem: &Problem<'_, S, M>) -> Result<(S, SdsTrace)> {
    cfg.validate()?;
    problem.check(cfg)?;
    let sched = NoiseSchedule::ddpm_default();
    let sc = &cfg.sds;
    let target = match (problem.codec, cfg.space) {
        (None, _) => SdsTarget::Pixel,
        (Some(c), Space::Latent) => SdsTarget::Latent(c),
        (Some(c), Space::Pixel) => SdsTarget::DecodedPixel(c),
    };
    let lo = ((sc.t_min * sched.num_steps() as f64).round() as usize).max(1);
    let hi = ((sc.t_max * sched.num_steps() as f64).round() as usize).clamp(lo, sched.num_steps());
    let pred = Guided::new(problem.model, cfg.cfg_scale);
    let mut scene = problem.template.empty_like();
    let mut optim = new_optimizer(&scene, cfg);
    optim.lr = sc.learning_rate.unwrap_or_else(|| cfg.learning_rate());
    let mut rng = stream(cfg.seed, &[STREAM_SDS]);
    let before = problem.model.nfe();
    let mut records = Vec::with_capacity(sc.updates);
    let mut reached_at_nfe = None;
    for update in 0..sc.updates {
        let start = Instant::now();
        let poses = with_table_cameras(
            sample_condition_views(sc.views_per_update, problem.conditions.len(), &mut rng),
            problem.conditions,
        );
        let t = rng.random_range(lo..=hi);
        let mut times = PhaseTimes::default();
        let grad = distill(&scene, &poses, &pred, t, SdsWeight::SigmaOverAlpha, &mut rng, target, Form::Eps, &sched, &mut times)?;
        if !grad.is_finite() {
            return Err(crate::SirError::NonFinite {
                context: "distillation gradient".into(),
                iteration: update,
            });
        }
        let clock = Instant::now();
        adam_scene_step(&mut scene, &grad, &mut optim);
        times.optim_ms = ms(clock);
        times.total_ms = ms(start);
        let nfe = problem.model.nfe() - before;
        let last = update + 1 == sc.updates;
        let due = sc.eval_every > 0 && (update + 1) % sc.eval_every == 0;
        let eval = if due || last { problem.evaluate(&scene) } else { None };
        records.push(SdsRecord {
            update,
            t,
            nfe,
            mse: eval.map(|e| e.0),
            psnr: eval.map(|e| e.1),
            times,
        });
        if let (Some(target_mse), Some((e, _))) = (sc.target_mse, eval) {
            if e <= target_mse {
                reached_at_nfe = Some(nfe);
                break;
            }
        }
    }
    Ok((scene, SdsTrace { records, reached_at_nfe }))
}
