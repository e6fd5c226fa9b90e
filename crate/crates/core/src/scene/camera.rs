use std::f64::consts::TAU;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::Rng;

/// Orthographic camera orbiting the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Radians in `[0, 2 pi)`.
    pub azimuth: f64,
    /// Radians; only the voxel backend uses it.
    pub elevation: f64,
}

impl Camera {
    pub fn new(azimuth: f64) -> Self {
        Self::with_elevation(azimuth, 0.0)
    }

    pub fn with_elevation(azimuth: f64, elevation: f64) -> Self {
        let mut a = azimuth.rem_euclid(TAU);
        if a >= TAU {
            a = 0.0;
        }
        Self {
            azimuth: a,
            elevation,
        }
    }

    pub fn front() -> Self {
        Self::new(0.0)
    }

    pub fn azimuth_degrees(&self) -> f64 {
        self.azimuth.to_degrees()
    }
}

/// A camera together with the condition index the score model knows it by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewPose {
    pub view_id: usize,
    pub camera: Camera,
}

/// `n` azimuths `phi0 + 2 pi j / n` with a uniform random `phi0`.
pub fn sample_cameras(n_views: usize, rng: &mut Rng) -> Vec<Camera> {
    let base = rng.random_range(0.0..TAU);
    (0..n_views)
        .map(|j| Camera::new(base + TAU * j as f64 / n_views as f64))
        .collect()
}

/// The fixed condition table: `m` evenly spaced azimuths starting at 0.
pub fn condition_cameras(m: usize) -> Vec<Camera> {
    (0..m).map(|i| Camera::new(TAU * i as f64 / m as f64)).collect()
}

/// Evenly spread views drawn from an `m`-entry condition table.
///
/// A uniform random base entry is offset by `round(j m / n)` for view `j`,
/// so the azimuths are evenly spaced whenever `n` divides `m`.
pub fn sample_condition_views(n_views: usize, m: usize, rng: &mut Rng) -> Vec<ViewPose> {
    let base = rng.random_range(0..m);
    let table = condition_cameras(m);
    (0..n_views)
        .map(|j| {
            let offset = (2 * j * m + n_views) / (2 * n_views);
            let view_id = (base + offset) % m;
            ViewPose {
                view_id,
                camera: table[view_id],
            }
        })
        .collect()
}

/// Eight views at zero elevation spaced 45 degrees apart.
pub fn evaluation_cameras() -> Vec<Camera> {
    condition_cameras(8)
}
