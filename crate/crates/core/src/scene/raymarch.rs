//! Emission-absorption compositing shared by both backends.

use std::f64::consts::SQRT_2;

pub(crate) const BACKGROUND: f64 = 1.0;
pub(crate) const MAX_CHANNELS: usize = 3;

/// Interpolation taps of one sample point.
///
/// Density is zero-padded outside the grid; color uses the same taps
/// renormalised over the in-range ones, which equals edge replication.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
    pub n: usize,
    pub wsum: f64,
}

impl Stencil {
    fn empty() -> Self {
        Self {
            idx: [0; 8],
            w: [0.0; 8],
            n: 0,
            wsum: 0.0,
        }
    }

    fn push(&mut self, idx: usize, w: f64) {
        if w > 0.0 {
            self.idx[self.n] = idx;
            self.w[self.n] = w;
            self.n += 1;
            self.wsum += w;
        }
    }
}

/// Samples per ray and their spacing for a grid of side `n`.
pub(crate) fn ray_samples(n: usize) -> (usize, f64) {
    let count = (SQRT_2 * n as f64).ceil() as usize;
    (count, 2.0 * SQRT_2 / count as f64)
}

/// Ray parameter of sample `k`, running from the camera side outward.
#[inline]
pub(crate) fn sample_depth(k: usize, delta: f64) -> f64 {
    -SQRT_2 + (k as f64 + 0.5) * delta
}

/// Pixel centre in `(-1, 1)` for integer pixel `p` of `n`.
#[inline]
pub(crate) fn pixel_centre(p: usize, n: usize) -> f64 {
    -1.0 + (p as f64 + 0.5) * 2.0 / n as f64
}

/// Continuous cell coordinate of world coordinate `x`.
#[inline]
fn cell_coord(x: f64, n: usize) -> f64 {
    (x + 1.0) * n as f64 / 2.0 - 0.5
}

fn axis_taps(x: f64, n: usize) -> Option<[(usize, f64); 2]> {
    let q = cell_coord(x, n);
    if !(-1.0..n as f64).contains(&q) {
        return None;
    }
    let i0 = q.floor();
    let f = q - i0;
    let i0 = i0 as i64;
    let lo = if i0 >= 0 { (i0 as usize, 1.0 - f) } else { (0, 0.0) };
    let hi = if i0 + 1 < n as i64 { ((i0 + 1) as usize, f) } else { (0, 0.0) };
    Some([lo, hi])
}

/// Bilinear taps at world point `(x, y)`, storage `iy * n + ix`.
pub(crate) fn stencil2(x: f64, y: f64, n: usize) -> Stencil {
    let mut s = Stencil::empty();
    let (Some(tx), Some(ty)) = (axis_taps(x, n), axis_taps(y, n)) else {
        return s;
    };
    for (iy, wy) in ty {
        for (ix, wx) in tx {
            s.push(iy * n + ix, wx * wy);
        }
    }
    s
}

/// Trilinear taps at world point `(x, y, z)`, storage `(iz * n + iy) * n + ix`.
pub(crate) fn stencil3(x: f64, y: f64, z: f64, n: usize) -> Stencil {
    let mut s = Stencil::empty();
    let (Some(tx), Some(ty), Some(tz)) = (axis_taps(x, n), axis_taps(y, n), axis_taps(z, n)) else {
        return s;
    };
    for (iz, wz) in tz {
        for (iy, wy) in ty {
            for (ix, wx) in tx {
                s.push((iz * n + iy) * n + ix, wx * wy * wz);
            }
        }
    }
    s
}

/// Parameters of one grid as seen by the marcher.
pub(crate) struct Field<'a> {
    pub density: &'a [f64],
    pub color: &'a [f64],
    pub channels: usize,
    pub delta: f64,
}

impl Field<'_> {
    #[inline]
    fn sample(&self, st: &Stencil) -> (f64, [f64; MAX_CHANNELS]) {
        let mut sigma = 0.0;
        let mut c = [0.0; MAX_CHANNELS];
        for j in 0..st.n {
            let i = st.idx[j];
            sigma += st.w[j] * self.density[i];
            let wc = st.w[j] / st.wsum;
            for (ch, cv) in c.iter_mut().enumerate().take(self.channels) {
                *cv += wc * self.color[i * self.channels + ch];
            }
        }
        (sigma, c)
    }

    /// Composited color and opacity of one ray.
    pub fn march(&self, ray: &[Stencil]) -> ([f64; MAX_CHANNELS], f64) {
        let mut trans = 1.0;
        let mut out = [0.0; MAX_CHANNELS];
        for st in ray.iter().filter(|s| s.n > 0) {
            let (sigma, c) = self.sample(st);
            let decay = (-sigma * self.delta).exp();
            let w = trans * (1.0 - decay);
            for ch in 0..self.channels {
                out[ch] += w * c[ch];
            }
            trans *= decay;
        }
        for v in out.iter_mut().take(self.channels) {
            *v += trans * BACKGROUND;
        }
        (out, 1.0 - trans)
    }

    /// Accumulates the pullback of `(g, g_alpha)` through [`Field::march`].
    pub fn march_vjp(
        &self,
        ray: &[Stencil],
        g: &[f64],
        g_alpha: f64,
        grad_density: &mut [f64],
        grad_color: &mut [f64],
        scratch: &mut Vec<(f64, [f64; MAX_CHANNELS], f64, f64)>,
    ) {
        // (sigma, color, transmittance before, transmittance after)
        scratch.clear();
        let mut trans = 1.0;
        for st in ray {
            if st.n == 0 {
                scratch.push((0.0, [0.0; MAX_CHANNELS], trans, trans));
                continue;
            }
            let (sigma, c) = self.sample(st);
            let after = trans * (-sigma * self.delta).exp();
            scratch.push((sigma, c, trans, after));
            trans = after;
        }
        let t_final = trans;
        let mut suffix = [0.0; MAX_CHANNELS];
        for ch in 0..self.channels {
            suffix[ch] = t_final * BACKGROUND;
        }
        for (st, &(_, c, before, after)) in ray.iter().zip(scratch.iter()).rev() {
            if st.n == 0 {
                continue;
            }
            let w = before - after;
            let mut dsigma = g_alpha * t_final;
            let mut gc = [0.0; MAX_CHANNELS];
            for ch in 0..self.channels {
                dsigma += g[ch] * (after * c[ch] - suffix[ch]);
                gc[ch] = g[ch] * w;
                suffix[ch] += w * c[ch];
            }
            dsigma *= self.delta;
            for j in 0..st.n {
                let i = st.idx[j];
                grad_density[i] += st.w[j] * dsigma;
                let wc = st.w[j] / st.wsum;
                for ch in 0..self.channels {
                    grad_color[i * self.channels + ch] += wc * gc[ch];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_grid_symmetric() {
        let (count, delta) = ray_samples(32);
        assert_eq!(count, 46);
        let first = sample_depth(0, delta);
        let last = sample_depth(count - 1, delta);
        assert!((first + last).abs() < 1e-12);
    }

    #[test]
    fn stencil_weights_sum_to_one_inside() {
        for &(x, y) in &[(0.1, -0.3), (0.99, 0.0), (-0.2, 0.7)] {
            let s = stencil2(x, y, 8);
            let inner = cell_coord(x, 8) >= 0.0
                && cell_coord(x, 8) <= 7.0
                && cell_coord(y, 8) >= 0.0
                && cell_coord(y, 8) <= 7.0;
            if inner {
                assert!((s.wsum - 1.0).abs() < 1e-12);
            }
            assert!(s.wsum <= 1.0 + 1e-12);
        }
        assert_eq!(stencil3(0.0, 1.5, 0.0, 4).n, 0);
    }

    #[test]
    fn cell_centres_hit_single_tap() {
        let n = 8;
        let s = stencil2(pixel_centre(3, n), pixel_centre(5, n), n);
        assert_eq!(s.n, 1);
        assert_eq!(s.idx[0], 5 * n + 3);
    }
}
