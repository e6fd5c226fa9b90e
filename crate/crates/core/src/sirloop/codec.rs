use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::scene::ViewShape;

/// Fixed linear encoder/decoder pair standing in for a VAE.
///
/// Each channel is projected onto its `P / compression` lowest-frequency
/// orthonormal DCT-II basis images. Rows of `E` are orthonormal, so the
/// decoder `D = E^T` is its pseudo-inverse and `D E` is an orthogonal
/// projection. Latents are laid out channel-major.
#[derive(Debug, Clone)]
pub struct LinearCodec {
    shape: ViewShape,
    kept: usize,
    /// `kept x pixels` row-major basis shared by all channels.
    basis: Vec<f64>,
}

fn dct_factor(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

impl LinearCodec {
    pub fn cosine(shape: ViewShape, compression: usize) -> Result<Self> {
        let p = shape.pixels();
        if compression < 2 || p % compression != 0 {
            return Err(invalid(format!(
                "compression {compression} must be >= 2 and divide {p} pixels per channel"
            )));
        }
        let (h, w) = (shape.height, shape.width);
        let mut freqs: Vec<(usize, usize)> = (0..h).flat_map(|ky| (0..w).map(move |kx| (ky, kx))).collect();
        freqs.sort_by_key(|&(ky, kx)| (kx * kx + ky * ky, ky, kx));
        let kept = p / compression;
        let mut basis = Vec::with_capacity(kept * p);
        for &(ky, kx) in &freqs[..kept] {
            let (fy, fx) = (dct_factor(ky, h), dct_factor(kx, w));
            for r in 0..h {
                let cy = (PI * (r as f64 + 0.5) * ky as f64 / h as f64).cos();
                for c in 0..w {
                    let cx = (PI * (c as f64 + 0.5) * kx as f64 / w as f64).cos();
                    basis.push(fy * fx * cy * cx);
                }
            }
        }
        Ok(Self { shape, kept, basis })
    }

    pub fn shape(&self) -> ViewShape {
        self.shape
    }

    pub fn pixel_dim(&self) -> usize {
        self.shape.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.kept * self.shape.channels
    }

    pub fn encode(&self, image: &[f64]) -> Vec<f64> {
        let (p, ch) = (self.shape.pixels(), self.shape.channels);
        let mut z = vec![0.0; self.latent_dim()];
        for c in 0..ch {
            for k in 0..self.kept {
                let row = &self.basis[k * p..(k + 1) * p];
                z[c * self.kept + k] = row
                    .iter()
                    .enumerate()
                    .map(|(i, b)| b * image[i * ch + c])
                    .sum();
            }
        }
        z
    }

    /// `D z = E^T z`; also the pullback of a latent cotangent to pixels.
    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        let (p, ch) = (self.shape.pixels(), self.shape.channels);
        let mut x = vec![0.0; self.pixel_dim()];
        for c in 0..ch {
            for k in 0..self.kept {
                let coef = z[c * self.kept + k];
                if coef == 0.0 {
                    continue;
                }
                let row = &self.basis[k * p..(k + 1) * p];
                for (i, b) in row.iter().enumerate() {
                    x[i * ch + c] += coef * b;
                }
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng as _;

    fn shape(h: usize, w: usize, c: usize) -> ViewShape {
        ViewShape {
            height: h,
            width: w,
            channels: c,
        }
    }

    #[test]
    fn rows_are_orthonormal() {
        let codec = LinearCodec::cosine(shape(8, 8, 3), 4).unwrap();
        let p = 64;
        for a in 0..codec.kept {
            for b in 0..codec.kept {
                let dot: f64 = (0..p).map(|i| codec.basis[a * p + i] * codec.basis[b * p + i]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn decode_encode_is_a_projection() {
        let codec = LinearCodec::cosine(shape(1, 32, 1), 4).unwrap();
        assert_eq!(codec.latent_dim(), 8);
        let mut rng = seeded_rng(0);
        let x: Vec<f64> = (0..32).map(|_| rng.random_range(0.0..1.0)).collect();
        let once = codec.decode(&codec.encode(&x));
        let twice = codec.decode(&codec.encode(&once));
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-10);
        }
        let z = codec.encode(&x);
        let back = codec.encode(&codec.decode(&z));
        for (a, b) in z.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_image_survives() {
        let codec = LinearCodec::cosine(shape(4, 4, 3), 4).unwrap();
        let x = vec![0.7; 48];
        let y = codec.decode(&codec.encode(&x));
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_compression() {
        assert!(LinearCodec::cosine(shape(1, 30, 1), 4).is_err());
        assert!(LinearCodec::cosine(shape(1, 32, 1), 1).is_err());
    }
}
