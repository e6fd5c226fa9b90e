use serde::{Deserialize, Serialize};

use super::raymarch::{pixel_centre, ray_samples, sample_depth, stencil3, Field, Stencil};
use super::{Camera, Render, Scene, SceneGrad, ViewShape};
use crate::error::{invalid, Result};

/// A 3D RGB object on an `N^3` grid viewed through `N x N` images.
///
/// Storage is `(iz * N + iy) * N + ix` with `y` pointing up; color is
/// interleaved RGB per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    side: usize,
    density: Vec<f64>,
    color: Vec<f64>,
}

impl VoxelGrid {
    /// Empty grid: zero density, mid-gray color.
    pub fn new(side: usize) -> Self {
        let n = side * side * side;
        Self {
            side,
            density: vec![0.0; n],
            color: vec![0.5; 3 * n],
        }
    }

    pub fn from_parts(side: usize, density: Vec<f64>, color: Vec<f64>) -> Result<Self> {
        if side == 0 {
            return Err(invalid("grid side must be positive"));
        }
        let n = side * side * side;
        if density.len() != n || color.len() != 3 * n {
            return Err(invalid(format!(
                "voxel side {side} needs {n} density and {} color values, got {} and {}",
                3 * n,
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

    pub fn cell(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.side + iy) * self.side + ix
    }

    /// World coordinates of cell centre `(ix, iy, iz)`.
    pub fn cell_centre(&self, ix: usize, iy: usize, iz: usize) -> (f64, f64, f64) {
        let n = self.side;
        (pixel_centre(ix, n), pixel_centre(iy, n), pixel_centre(iz, n))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> Self {
        let n = self.side;
        let m = n * factor;
        let mut out = Self::new(m);
        for iz in 0..m {
            for iy in 0..m {
                for ix in 0..m {
                    let src = self.cell(ix / factor, iy / factor, iz / factor);
                    let dst = out.cell(ix, iy, iz);
                    out.density[dst] = self.density[src];
                    out.color[3 * dst..3 * dst + 3].copy_from_slice(&self.color[3 * src..3 * src + 3]);
                }
            }
        }
        out
    }

    fn field(&self) -> Field<'_> {
        Field {
            density: &self.density,
            color: &self.color,
            channels: 3,
            delta: ray_samples(self.side).1,
        }
    }

    fn ray(&self, cam: &Camera, r: usize, c: usize, out: &mut Vec<Stencil>) {
        let n = self.side;
        let (count, delta) = ray_samples(n);
        let (sa, ca) = cam.azimuth.sin_cos();
        let (se, ce) = cam.elevation.sin_cos();
        let u = pixel_centre(c, n);
        let v = -pixel_centre(r, n);
        out.clear();
        for k in 0..count {
            let s = sample_depth(k, delta);
            let (x1, y1, z1) = (u, v * ce - s * se, v * se + s * ce);
            let x = x1 * ca + z1 * sa;
            let z = -x1 * sa + z1 * ca;
            out.push(stencil3(x, y1, z, n));
        }
    }
}

impl Scene for VoxelGrid {
    fn side(&self) -> usize {
        self.side
    }

    fn view_shape(&self) -> ViewShape {
        ViewShape {
            height: self.side,
            width: self.side,
            channels: 3,
        }
    }

    fn render(&self, cam: &Camera) -> Render {
        let n = self.side;
        let field = self.field();
        let mut ray = Vec::new();
        let mut image = Vec::with_capacity(3 * n * n);
        let mut alpha = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                self.ray(cam, r, c, &mut ray);
                let (col, a) = field.march(&ray);
                image.extend_from_slice(&col);
                alpha.push(a);
            }
        }
        Render { image, alpha }
    }

    fn render_vjp(&self, cam: &Camera, image_cot: &[f64], alpha_cot: Option<&[f64]>) -> SceneGrad {
        let n = self.side;
        let field = self.field();
        let mut grad = self.zero_grad();
        let mut ray = Vec::new();
        let mut scratch = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let p = r * n + c;
                let g = &image_cot[3 * p..3 * p + 3];
                let ga = alpha_cot.map_or(0.0, |a| a[p]);
                if ga == 0.0 && g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                self.ray(cam, r, c, &mut ray);
                field.march_vjp(&ray, g, ga, &mut grad.density, &mut grad.color, &mut scratch);
            }
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
