use serde::{Deserialize, Serialize};

use super::raymarch::{pixel_centre, ray_samples, sample_depth, stencil2, Field, Stencil};
use super::{Camera, Render, Scene, SceneGrad, ViewShape};
use crate::error::{invalid, Result};

/// A 2D grayscale object on an `N x N` grid, viewed through 1D images of
/// `N` pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatlandGrid {
    side: usize,
    density: Vec<f64>,
    color: Vec<f64>,
}

impl FlatlandGrid {
    /// Empty grid: zero density, mid-gray color.
    pub fn new(side: usize) -> Self {
        Self {
            side,
            density: vec![0.0; side * side],
            color: vec![0.5; side * side],
        }
    }

    /// Grid from row-major (`iy * N + ix`) density and color.
    pub fn from_parts(side: usize, density: Vec<f64>, color: Vec<f64>) -> Result<Self> {
        if side == 0 {
            return Err(invalid("grid side must be positive"));
        }
        let n = side * side;
        if density.len() != n || color.len() != n {
            return Err(invalid(format!(
                "flatland side {side} needs {n} density and color values, got {} and {}",
                density.len(),
                color.len()
            )));
        }
        Ok(Self {
            side,
            density,
            color,
        })
    }

    pub fn cell(&self, ix: usize, iy: usize) -> usize {
        iy * self.side + ix
    }

    /// World coordinates of cell centre `(ix, iy)`.
    pub fn cell_centre(&self, ix: usize, iy: usize) -> (f64, f64) {
        (pixel_centre(ix, self.side), pixel_centre(iy, self.side))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> Self {
        let m = self.side * factor;
        let mut out = Self::new(m);
        for iy in 0..m {
            for ix in 0..m {
                let src = self.cell(ix / factor, iy / factor);
                let dst = out.cell(ix, iy);
                out.density[dst] = self.density[src];
                out.color[dst] = self.color[src];
            }
        }
        out
    }

    fn field(&self) -> Field<'_> {
        Field {
            density: &self.density,
            color: &self.color,
            channels: 1,
            delta: ray_samples(self.side).1,
        }
    }

    fn ray(&self, cam: &Camera, p: usize, out: &mut Vec<Stencil>) {
        let (count, delta) = ray_samples(self.side);
        let (sin, cos) = cam.azimuth.sin_cos();
        let u = pixel_centre(p, self.side);
        out.clear();
        for k in 0..count {
            let s = sample_depth(k, delta);
            let x = u * cos - s * sin;
            let y = u * sin + s * cos;
            out.push(stencil2(x, y, self.side));
        }
    }
}

impl Scene for FlatlandGrid {
    fn side(&self) -> usize {
        self.side
    }

    fn view_shape(&self) -> ViewShape {
        ViewShape {
            height: 1,
            width: self.side,
            channels: 1,
        }
    }

    fn render(&self, cam: &Camera) -> Render {
        let field = self.field();
        let mut ray = Vec::new();
        let mut image = Vec::with_capacity(self.side);
        let mut alpha = Vec::with_capacity(self.side);
        for p in 0..self.side {
            self.ray(cam, p, &mut ray);
            let (c, a) = field.march(&ray);
            image.push(c[0]);
            alpha.push(a);
        }
        Render { image, alpha }
    }

    fn render_vjp(&self, cam: &Camera, image_cot: &[f64], alpha_cot: Option<&[f64]>) -> SceneGrad {
        let field = self.field();
        let mut grad = self.zero_grad();
        let mut ray = Vec::new();
        let mut scratch = Vec::new();
        for p in 0..self.side {
            let ga = alpha_cot.map_or(0.0, |a| a[p]);
            if image_cot[p] == 0.0 && ga == 0.0 {
                continue;
            }
            self.ray(cam, p, &mut ray);
            field.march_vjp(
                &ray,
                &image_cot[p..p + 1],
                ga,
                &mut grad.density,
                &mut grad.color,
                &mut scratch,
            );
        }
        grad
    }

    fn density(&self) -> &[f64] {
        &self.density
    }

    fn density_mut(&mut self) -> &mut [f64] {
        &mut self.density
    }

    fn color(&self) -> &[f64] {
        &self.color
    }

    fn color_mut(&mut self) -> &mut [f64] {
        &mut self.color
    }

    fn empty_like(&self) -> Self {
        Self::new(self.side)
    }

    fn upsampled(&self, factor: usize) -> Self {
        self.upsample(factor)
    }
}
