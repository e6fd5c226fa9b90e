use rayon::prelude::*;

use super::adam::{adam_scene_step, OptimState};
use super::codec::LinearCodec;
use super::config::LossNorm;
use crate::error::{invalid, Result, SirError};
use crate::scene::{batch_vjp, Camera, Scene, SceneGrad, ViewBatch};

/// Sum of the per-element loss and its cotangent, both divided by `count`.
fn residual(pred: &[f64], target: &[f64], norm: LossNorm, count: f64) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    let cot = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let r = p - t;
            match norm {
                LossNorm::L1 => {
                    total += r.abs();
                    if r > 0.0 {
                        1.0 / count
                    } else if r < 0.0 {
                        -1.0 / count
                    } else {
                        0.0
                    }
                }
                LossNorm::L2 => {
                    total += r * r;
                    2.0 * r / count
                }
            }
        })
        .collect();
    (total / count, cot)
}

fn check_targets<S: Scene>(scene: &S, cameras: &[Camera], targets: &[Vec<f64>], dim: usize) -> Result<()> {
    if cameras.len() != targets.len() {
        return Err(invalid(format!(
            "{} cameras but {} target views",
            cameras.len(),
            targets.len()
        )));
    }
    if cameras.is_empty() {
        return Err(invalid("reconstruction needs at least one view"));
    }
    if let Some(bad) = targets.iter().find(|t| t.len() != dim) {
        return Err(invalid(format!(
            "target view has {} values, scene {}x{}x{} views need {dim}",
            bad.len(),
            scene.view_shape().height,
            scene.view_shape().width,
            scene.view_shape().channels
        )));
    }
    Ok(())
}

/// Mean elementwise L1 (or squared) error between renders and targets.
pub fn reconstruction_loss<S: Scene>(
    scene: &S,
    cameras: &[Camera],
    targets: &ViewBatch,
    norm: LossNorm,
) -> Result<(f64, SceneGrad)> {
    let views: Vec<Vec<f64>> = targets.views().map(|v| v.to_vec()).collect();
    pixel_loss(scene, cameras, &views, norm)
}

fn pixel_loss<S: Scene>(scene: &S, cameras: &[Camera], targets: &[Vec<f64>], norm: LossNorm) -> Result<(f64, SceneGrad)> {
    let dim = scene.view_shape().len();
    check_targets(scene, cameras, targets, dim)?;
    let count = (dim * cameras.len()) as f64;
    let parts: Vec<(f64, Vec<f64>)> = cameras
        .par_iter()
        .zip(targets)
        .map(|(cam, t)| residual(&scene.render(cam).image, t, norm, count))
        .collect();
    let loss = parts.iter().map(|p| p.0).sum();
    let cots: Vec<Vec<f64>> = parts.into_iter().map(|p| p.1).collect();
    Ok((loss, batch_vjp(scene, cameras, &cots, None)))
}

/// Loss between encoded renders and latent targets; the cotangent is pulled
/// back through the encoder.
pub fn latent_reconstruction_loss<S: Scene>(
    scene: &S,
    cameras: &[Camera],
    targets: &[Vec<f64>],
    codec: &LinearCodec,
    norm: LossNorm,
) -> Result<(f64, SceneGrad)> {
    check_targets(scene, cameras, targets, codec.latent_dim())?;
    if codec.pixel_dim() != scene.view_shape().len() {
        return Err(invalid("codec resolution does not match the scene views"));
    }
    let count = (codec.latent_dim() * cameras.len()) as f64;
    let parts: Vec<(f64, Vec<f64>)> = cameras
        .par_iter()
        .zip(targets)
        .map(|(cam, t)| {
            let z = codec.encode(&scene.render(cam).image);
            let (l, cot_z) = residual(&z, t, norm, count);
            (l, codec.decode(&cot_z))
        })
        .collect();
    let loss = parts.iter().map(|p| p.0).sum();
    let cots: Vec<Vec<f64>> = parts.into_iter().map(|p| p.1).collect();
    Ok((loss, batch_vjp(scene, cameras, &cots, None)))
}

/// The conditioning image, treated as the ground-truth front view.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub image: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl Reference {
    pub fn camera() -> Camera {
        Camera::front()
    }

    pub fn from_scene<S: Scene>(scene: &S) -> Self {
        let r = scene.render(&Self::camera());
        Self {
            image: r.image,
            alpha: r.alpha,
        }
    }
}

/// `w_color * L1(front, image) + w_opacity * L1(front alpha, alpha)`.
pub fn reference_loss<S: Scene>(
    scene: &S,
    reference: &Reference,
    weights: (f64, f64),
) -> Result<(f64, SceneGrad)> {
    let (wc, wa) = weights;
    if wc == 0.0 && wa == 0.0 {
        return Ok((0.0, scene.zero_grad()));
    }
    let shape = scene.view_shape();
    if reference.image.len() != shape.len() || reference.alpha.len() != shape.pixels() {
        return Err(invalid("reference image does not match the scene views"));
    }
    let r = scene.render(&Reference::camera());
    let (lc, mut cot_c) = residual(&r.image, &reference.image, LossNorm::L1, shape.len() as f64);
    let (la, mut cot_a) = residual(&r.alpha, &reference.alpha, LossNorm::L1, shape.pixels() as f64);
    cot_c.iter_mut().for_each(|v| *v *= wc);
    cot_a.iter_mut().for_each(|v| *v *= wa);
    let grad = scene.render_vjp(&Reference::camera(), &cot_c, Some(&cot_a));
    Ok((wc * lc + wa * la, grad))
}

/// Targets for one round of reconstruction.
#[derive(Debug, Clone)]
pub enum Targets<'a> {
    Pixel(Vec<Vec<f64>>),
    Latent(Vec<Vec<f64>>, &'a LinearCodec),
}

/// Fixed cameras and targets plus the optional reference term.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub cameras: Vec<Camera>,
    pub targets: Targets<'a>,
    pub norm: LossNorm,
    pub reference: Option<&'a Reference>,
    pub ref_weights: (f64, f64),
}

/// Values of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub reconstruction: f64,
    pub total: f64,
}

impl Objective<'_> {
    pub fn eval<S: Scene>(&self, scene: &S) -> Result<(LossValue, SceneGrad)> {
        let (recon, mut grad) = match &self.targets {
            Targets::Pixel(t) => pixel_loss(scene, &self.cameras, t, self.norm)?,
            Targets::Latent(t, codec) => latent_reconstruction_loss(scene, &self.cameras, t, codec, self.norm)?,
        };
        let mut total = recon;
        if let Some(r) = self.reference {
            let (l, g) = reference_loss(scene, r, self.ref_weights)?;
            total += l;
            grad.add_assign(&g);
        }
        Ok((
            LossValue {
                reconstruction: recon,
                total,
            },
            grad,
        ))
    }
}

/// `steps` Adam updates with the objective held fixed; returns the loss
/// seen before each update. Consumes no NFEs.
pub fn inner_reconstruct<S: Scene>(
    scene: &mut S,
    objective: &Objective,
    steps: usize,
    optim: &mut OptimState,
) -> Result<Vec<LossValue>> {
    let mut history = Vec::with_capacity(steps);
    for step in 0..steps {
        let (value, grad) = objective.eval(scene)?;
        if !value.total.is_finite() || !grad.is_finite() {
            return Err(SirError::NonFinite {
                context: "reconstruction loss".into(),
                iteration: step,
            });
        }
        adam_scene_step(scene, &grad, optim);
        history.push(value);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{render_batch, FlatlandGrid, ViewShape, VoxelGrid};
    use crate::seeded_rng;
    use rand::Rng as _;

    fn random_flatland(n: usize, seed: u64) -> FlatlandGrid {
        let mut rng = seeded_rng(seed);
        let d = (0..n * n).map(|_| rng.random_range(0.0..5.0)).collect();
        let c = (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect();
        FlatlandGrid::from_parts(n, d, c).unwrap()
    }

    #[test]
    fn perfect_targets_give_zero_loss() {
        let g = random_flatland(8, 1);
        let cams = vec![Camera::new(0.2), Camera::new(2.0)];
        let batch = render_batch(&g, &cams);
        let (l, grad) = reconstruction_loss(&g, &cams, &batch, LossNorm::L1).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn single_pixel_l1() {
        let g = random_flatland(8, 2);
        let cam = Camera::new(0.5);
        let mut batch = render_batch(&g, &[cam]);
        let delta = 0.03;
        batch.images[3] -= delta;
        let (l, grad) = reconstruction_loss(&g, &[cam], &batch, LossNorm::L1).unwrap();
        assert!((l - delta / 8.0).abs() < 1e-15);
        let mut cot = vec![0.0; 8];
        cot[3] = 1.0 / 8.0;
        let want = g.render_vjp(&cam, &cot, None);
        assert_eq!(grad, want);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let g = random_flatland(8, 3);
        let shape = ViewShape {
            height: 1,
            width: 7,
            channels: 1,
        };
        let batch = ViewBatch::from_images(vec![vec![0.0; 7]], vec![Camera::front()], shape);
        assert!(reconstruction_loss(&g, &[Camera::front()], &batch, LossNorm::L1).is_err());
    }

    fn fd_check<S: Scene>(scene: &S, f: impl Fn(&S) -> (f64, SceneGrad)) {
        let (_, grad) = f(scene);
        let h = 1e-4;
        let mut fd_d = vec![0.0; scene.density().len()];
        for (i, out) in fd_d.iter_mut().enumerate() {
            let (mut p, mut m) = (scene.clone(), scene.clone());
            p.density_mut()[i] += h;
            m.density_mut()[i] -= h;
            *out = (f(&p).0 - f(&m).0) / (2.0 * h);
        }
        let mut fd_c = vec![0.0; scene.color().len()];
        for (i, out) in fd_c.iter_mut().enumerate() {
            let (mut p, mut m) = (scene.clone(), scene.clone());
            p.color_mut()[i] += h;
            m.color_mut()[i] -= h;
            *out = (f(&p).0 - f(&m).0) / (2.0 * h);
        }
        for (a, fd) in [(&grad.density, &fd_d), (&grad.color, &fd_c)] {
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let worst = a
                .iter()
                .zip(fd.iter())
                .map(|(x, y)| (x - y).abs() / y.abs().max(1e-2 * scale))
                .fold(0.0, f64::max);
            assert!(worst < 1e-3, "{worst}");
        }
    }

    #[test]
    fn l2_gradient_matches_finite_differences() {
        let g = random_flatland(8, 4);
        let cams = vec![Camera::new(0.3), Camera::new(1.9), Camera::new(4.0)];
        let mut rng = seeded_rng(5);
        let targets: Vec<Vec<f64>> = (0..3).map(|_| (0..8).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let batch = ViewBatch::from_images(targets, cams.clone(), g.view_shape());
        fd_check(&g, |s| reconstruction_loss(s, &cams, &batch, LossNorm::L2).unwrap());
    }

    #[test]
    fn latent_gradient_matches_finite_differences() {
        let g = {
            let mut rng = seeded_rng(6);
            let n = 4;
            let d = (0..n * n * n).map(|_| rng.random_range(0.0..3.0)).collect();
            let c = (0..3 * n * n * n).map(|_| rng.random_range(0.0..1.0)).collect();
            VoxelGrid::from_parts(n, d, c).unwrap()
        };
        let codec = LinearCodec::cosine(g.view_shape(), 4).unwrap();
        let cams = vec![Camera::new(0.7)];
        let targets = vec![vec![0.3; codec.latent_dim()]];
        fd_check(&g, |s| latent_reconstruction_loss(s, &cams, &targets, &codec, LossNorm::L2).unwrap());
    }

    #[test]
    fn reference_loss_terms() {
        let g = random_flatland(8, 7);
        let r = Reference::from_scene(&g);
        let (l, grad) = reference_loss(&g, &r, (0.1, 0.001)).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(grad.max_abs(), 0.0);
        let other = Reference::from_scene(&random_flatland(8, 8));
        assert_eq!(reference_loss(&g, &other, (0.0, 0.0)).unwrap().0, 0.0);
        assert!(reference_loss(&g, &other, (0.1, 0.001)).unwrap().0 > 0.0);
    }

    #[test]
    fn inner_steps_on_perfect_scene_change_nothing() {
        let mut g = random_flatland(8, 9);
        let cams = vec![Camera::new(1.0)];
        let targets = Targets::Pixel(vec![g.render(&cams[0]).image]);
        let obj = Objective {
            cameras: cams,
            targets,
            norm: LossNorm::L1,
            reference: None,
            ref_weights: (0.0, 0.0),
        };
        let before = g.clone();
        let mut optim = OptimState::for_scene(&g, 0.1);
        let hist = inner_reconstruct(&mut g, &obj, 15, &mut optim).unwrap();
        assert_eq!(hist.len(), 15);
        assert_eq!(optim.step, 15);
        assert_eq!(g, before);
    }
}
