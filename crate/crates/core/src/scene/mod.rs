//! Differentiable multi-view scene representations.
//!
//! Two backends share one emission-absorption ray marcher:
//!
//! - [`FlatlandGrid`]: a 2D grayscale object seen through 1D views.
//! - [`VoxelGrid`]: a 3D RGB object seen through 2D views.
//!
//! Both use orthographic cameras that orbit the vertical axis, zero-padded
//! (bi|tri)linear interpolation of cell-centred values over `[-1, 1]^d`, and
//! compositing over a white background. [`Scene::render_vjp`] is the exact
//! reverse-mode derivative of [`Scene::render`].

mod camera;
mod flatland;
pub mod io;
mod raymarch;
mod voxel;

pub use camera::{condition_cameras, evaluation_cameras, sample_cameras, sample_condition_views, Camera, ViewPose};
pub use flatland::FlatlandGrid;
pub use voxel::VoxelGrid;

use rayon::prelude::*;

/// Image and accumulated opacity of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct Render {
    /// Row-major pixels, channels interleaved.
    pub image: Vec<f64>,
    /// `1 - final transmittance` per pixel.
    pub alpha: Vec<f64>,
}

/// Resolution of one view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ViewShape {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.pixels() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradient with respect to the scene parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrad {
    pub density: Vec<f64>,
    pub color: Vec<f64>,
}

impl SceneGrad {
    pub fn zeros(density_len: usize, color_len: usize) -> Self {
        Self {
            density: vec![0.0; density_len],
            color: vec![0.0; color_len],
        }
    }

    pub fn add_assign(&mut self, other: &SceneGrad) {
        for (a, b) in self.density.iter_mut().zip(&other.density) {
            *a += b;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.density.iter_mut().for_each(|v| *v *= k);
        self.color.iter_mut().for_each(|v| *v *= k);
    }

    pub fn max_abs(&self) -> f64 {
        self.density
            .iter()
            .chain(&self.color)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.density.iter().chain(&self.color).all(|v| v.is_finite())
    }
}

/// A differentiable 3D (or flatland) representation `theta` with renderer
/// `g(theta, c)`.
pub trait Scene: Clone + Send + Sync {
    /// Grid side `N`.
    fn side(&self) -> usize;

    fn view_shape(&self) -> ViewShape;

    fn render(&self, cam: &Camera) -> Render;

    /// Pulls image (and optionally opacity) cotangents back to the
    /// parameters.
    fn render_vjp(&self, cam: &Camera, image_cot: &[f64], alpha_cot: Option<&[f64]>) -> SceneGrad;

    fn density(&self) -> &[f64];
    fn density_mut(&mut self) -> &mut [f64];
    fn color(&self) -> &[f64];
    fn color_mut(&mut self) -> &mut [f64];

    /// Same resolution, zero density and mid-gray color.
    fn empty_like(&self) -> Self;

    /// Nearest-neighbour copy on a grid `factor` times finer.
    fn upsampled(&self, factor: usize) -> Self;

    /// Clamps density to `>= 0` and color to `[0, 1]`.
    fn project(&mut self) {
        self.density_mut().iter_mut().for_each(|d| *d = d.max(0.0));
        self.color_mut()
            .iter_mut()
            .for_each(|c| *c = c.clamp(0.0, 1.0));
    }

    fn zero_grad(&self) -> SceneGrad {
        SceneGrad::zeros(self.density().len(), self.color().len())
    }
}

/// Renders of several cameras flattened into one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBatch {
    pub images: Vec<f64>,
    pub alpha_maps: Vec<f64>,
    pub cameras: Vec<Camera>,
    pub shape: ViewShape,
}

impl ViewBatch {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn view(&self, i: usize) -> &[f64] {
        let n = self.shape.len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn alpha(&self, i: usize) -> &[f64] {
        let n = self.shape.pixels();
        &self.alpha_maps[i * n..(i + 1) * n]
    }

    pub fn views(&self) -> impl Iterator<Item = &[f64]> {
        self.images.chunks_exact(self.shape.len())
    }

    /// Batch from per-view images; opacity maps are left at zero.
    pub fn from_images(images: Vec<Vec<f64>>, cameras: Vec<Camera>, shape: ViewShape) -> Self {
        let alpha_maps = vec![0.0; shape.pixels() * images.len()];
        Self {
            images: images.concat(),
            alpha_maps,
            cameras,
            shape,
        }
    }
}

/// Renders every camera; the result is in camera order.
pub fn render_batch<S: Scene>(scene: &S, cameras: &[Camera]) -> ViewBatch {
    let renders: Vec<Render> = cameras.par_iter().map(|c| scene.render(c)).collect();
    let mut images = Vec::with_capacity(renders.len() * scene.view_shape().len());
    let mut alpha_maps = Vec::with_capacity(renders.len() * scene.view_shape().pixels());
    for r in renders {
        images.extend(r.image);
        alpha_maps.extend(r.alpha);
    }
    ViewBatch {
        images,
        alpha_maps,
        cameras: cameras.to_vec(),
        shape: scene.view_shape(),
    }
}

/// Per-view gradients summed in camera order.
pub fn batch_vjp<S: Scene>(
    scene: &S,
    cameras: &[Camera],
    image_cots: &[Vec<f64>],
    alpha_cots: Option<&[Vec<f64>]>,
) -> SceneGrad {
    let grads: Vec<SceneGrad> = cameras
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let a = alpha_cots.map(|a| a[i].as_slice());
            scene.render_vjp(cam, &image_cots[i], a)
        })
        .collect();
    let mut total = scene.zero_grad();
    for g in &grads {
        total.add_assign(g);
    }
    total
}

/// Mean squared error between two renders of equal shape.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Peak signal-to-noise ratio for unit-range images.
pub fn psnr_from_mse(mse: f64) -> f64 {
    -10.0 * mse.max(1e-20).log10()
}
