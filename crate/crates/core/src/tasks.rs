//! Procedural hidden ground-truth shapes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, SirError};
use crate::scene::{FlatlandGrid, VoxelGrid};

/// Density inside every built-in shape.
pub const TASK_DENSITY: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskShape {
    Sphere,
    Cross,
    Ring,
    LetterBlock,
}

impl TaskShape {
    pub const ALL: [TaskShape; 4] = [Self::Sphere, Self::Cross, Self::Ring, Self::LetterBlock];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Cross => "cross",
            Self::Ring => "ring",
            Self::LetterBlock => "letter-block",
        }
    }

    /// Signed distance in world units; negative inside.
    fn sdf(&self, p: [f64; 3], planar: bool) -> f64 {
        let [x, y, z] = p;
        match self {
            Self::Sphere => (x * x + y * y + z * z).sqrt() - 0.55,
            Self::Cross => {
                let bar = |a: f64, b: f64, c: f64| box_sdf([a, b, c], [0.65, 0.2, 0.2]);
                if planar {
                    bar(x, y, 0.0).min(bar(y, x, 0.0))
                } else {
                    bar(x, y, z).min(bar(y, x, z)).min(bar(z, y, x))
                }
            }
            Self::Ring => {
                if planar {
                    ((x * x + y * y).sqrt() - 0.5).abs() - 0.16
                } else {
                    let q = (x * x + z * z).sqrt() - 0.5;
                    (q * q + y * y).sqrt() - 0.18
                }
            }
            Self::LetterBlock => {
                let depth = if planar { 0.0 } else { z };
                let stem = box_sdf([x + 0.3, y, depth], [0.18, 0.6, 0.25]);
                let foot = box_sdf([x, y + 0.45, depth], [0.48, 0.15, 0.25]);
                stem.min(foot)
            }
        }
    }
}

impl fmt::Display for TaskShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskShape {
    type Err = SirError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "sphere" | "disc" => Ok(Self::Sphere),
            "cross" => Ok(Self::Cross),
            "ring" | "torus" => Ok(Self::Ring),
            "letter-block" | "letter" | "block" => Ok(Self::LetterBlock),
            other => Err(invalid(format!("unknown task shape '{other}'"))),
        }
    }
}

fn box_sdf(p: [f64; 3], half: [f64; 3]) -> f64 {
    let d: Vec<f64> = p.iter().zip(half).map(|(v, h)| v.abs() - h).collect();
    let outside = d.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
    let inside = d.iter().cloned().fold(f64::MIN, f64::max).min(0.0);
    outside + inside
}

/// Density with a linear shell one cell wide around the surface.
fn shell_density(sd: f64, cell: f64) -> f64 {
    TASK_DENSITY * (0.5 - sd / cell).clamp(0.0, 1.0)
}

/// Shading that differs between views.
fn gray(x: f64, y: f64) -> f64 {
    (0.45 + 0.3 * x - 0.15 * y + 0.1 * (3.0 * y).sin()).clamp(0.05, 0.95)
}

fn rgb(x: f64, y: f64, z: f64) -> [f64; 3] {
    [
        (0.55 + 0.35 * x).clamp(0.05, 0.95),
        (0.45 + 0.3 * y - 0.1 * z).clamp(0.05, 0.95),
        (0.5 - 0.35 * z + 0.1 * x).clamp(0.05, 0.95),
    ]
}

pub fn flatland_task(shape: TaskShape, side: usize) -> FlatlandGrid {
    let cell = 2.0 / side as f64;
    let mut g = FlatlandGrid::new(side);
    for iy in 0..side {
        for ix in 0..side {
            let (x, y) = g.cell_centre(ix, iy);
            let i = g.cell(ix, iy);
            let d = shell_density(shape.sdf([x, y, 0.0], true), cell);
            use crate::scene::Scene;
            g.density_mut()[i] = d;
            g.color_mut()[i] = if d > 0.0 { gray(x, y) } else { 0.5 };
        }
    }
    g
}

pub fn voxel_task(shape: TaskShape, side: usize) -> VoxelGrid {
    use crate::scene::Scene;
    let cell = 2.0 / side as f64;
    let mut g = VoxelGrid::new(side);
    for iz in 0..side {
        for iy in 0..side {
            for ix in 0..side {
                let (x, y, z) = g.cell_centre(ix, iy, iz);
                let i = g.cell(ix, iy, iz);
                let d = shell_density(shape.sdf([x, y, z], false), cell);
                g.density_mut()[i] = d;
                if d > 0.0 {
                    g.color_mut()[3 * i..3 * i + 3].copy_from_slice(&rgb(x, y, z));
                }
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Camera, Scene};

    #[test]
    fn shapes_parse_and_print() {
        for s in TaskShape::ALL {
            assert_eq!(s.name().parse::<TaskShape>().unwrap(), s);
        }
        assert!("pyramid".parse::<TaskShape>().is_err());
    }

    #[test]
    fn flatland_shapes_are_nonempty_and_view_dependent() {
        for s in TaskShape::ALL {
            let g = flatland_task(s, 32);
            assert!(g.density().iter().any(|&d| d == TASK_DENSITY));
            let a = g.render(&Camera::new(0.0)).image;
            let b = g.render(&Camera::new(std::f64::consts::PI)).image;
            assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-3), "{s}");
        }
    }

    #[test]
    fn voxel_shapes_fit_the_grid() {
        for s in TaskShape::ALL {
            let g = voxel_task(s, 16);
            let n = g.side();
            for iz in 0..n {
                for iy in 0..n {
                    for ix in [0, n - 1] {
                        assert_eq!(g.density()[g.cell(ix, iy, iz)], 0.0);
                    }
                }
            }
            assert!(g.density().iter().any(|&d| d > 0.0));
        }
    }
}
