//! Marching cubes over voxel densities and Wavefront OBJ export.
//!
//! Vertices live in grid index coordinates: the centre of cell
//! `(ix, iy, iz)` is the point `(ix, iy, iz)`.

mod tables;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{invalid, Result, SirError};
use crate::scene::VoxelGrid;
use tables::{EDGE_TABLE, TRIANGLE_TABLE};

/// Default iso-level for densities on the task scale.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Triangles below this area are dropped.
const MIN_AREA: f64 = 1e-12;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
    /// Per-vertex RGB, when a color grid was sampled.
    pub colors: Option<Vec<[f64; 3]>>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        area(a, b, c)
    }

    /// Checks index bounds, distinct corners and positive area.
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.colors {
            if c.len() != self.vertices.len() {
                return Err(invalid("color count differs from vertex count"));
            }
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= self.vertices.len()) {
                return Err(invalid(format!("triangle {t} has an out-of-range index")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(invalid(format!("triangle {t} repeats a vertex")));
            }
            if self.triangle_area(t) <= MIN_AREA {
                return Err(invalid(format!("triangle {t} is degenerate")));
            }
        }
        Ok(())
    }
}

fn area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let n = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
}

/// Iso-surface of a voxel grid's density, colored from its color grid.
pub fn marching_cubes(grid: &VoxelGrid, threshold: f64) -> TriMesh {
    use crate::scene::Scene;
    marching_cubes_field(grid.side(), grid.density(), Some(grid.color()), threshold)
        .expect("voxel grids are consistently sized")
}

/// Iso-surface of a density on an `n^3` grid indexed `(iz * n + iy) * n + ix`.
/// `color`, when given, holds three channels per cell.
pub fn marching_cubes_field(n: usize, density: &[f64], color: Option<&[f64]>, threshold: f64) -> Result<TriMesh> {
    if n < 2 {
        return Err(invalid("marching cubes needs a grid side >= 2"));
    }
    if density.len() != n * n * n {
        return Err(invalid(format!("density has {} values, expected {}", density.len(), n * n * n)));
    }
    if color.is_some_and(|c| c.len() != 3 * n * n * n) {
        return Err(invalid("color grid must hold three channels per cell"));
    }
    let at = |x: usize, y: usize, z: usize| density[(z * n + y) * n + x];
    let mut mesh = TriMesh::default();
    // Keyed by (lower corner linear index, axis) so cubes share vertices.
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    for z in 0..n - 1 {
        for y in 0..n - 1 {
            for x in 0..n - 1 {
                let mut values = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    values[c] = at(x + off[0], y + off[1], z + off[2]);
                    if values[c] < threshold {
                        case |= 1 << c;
                    }
                }
                let crossed = EDGE_TABLE[case];
                if crossed == 0 {
                    continue;
                }
                let mut ids = [usize::MAX; 12];
                for (e, &[a, b]) in EDGES.iter().enumerate() {
                    if crossed & (1 << e) == 0 {
                        continue;
                    }
                    let (pa, pb) = (CORNERS[a], CORNERS[b]);
                    let axis = (0..3).find(|&d| pa[d] != pb[d]).expect("edge spans one axis");
                    let (lo, hi) = if pa[axis] < pb[axis] { (a, b) } else { (b, a) };
                    let base = CORNERS[lo];
                    let key = (((z + base[2]) * n + y + base[1]) * n + x + base[0], axis);
                    ids[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let (v0, v1) = (values[lo], values[hi]);
                        let t = ((threshold - v0) / (v1 - v0)).clamp(0.0, 1.0);
                        let mut p = [(x + base[0]) as f64, (y + base[1]) as f64, (z + base[2]) as f64];
                        p[axis] += t;
                        mesh.vertices.push(p);
                        mesh.vertices.len() - 1
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let t = [ids[tri[0] as usize], ids[tri[1] as usize], ids[tri[2] as usize]];
                    let [a, b, c] = t.map(|i| mesh.vertices[i]);
                    if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && area(a, b, c) > MIN_AREA {
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    if let Some(color) = color {
        mesh.colors = Some(mesh.vertices.iter().map(|&p| trilinear_rgb(n, color, p)).collect());
    }
    Ok(mesh)
}

/// Trilinear interpolation of an `n^3` RGB grid at index coordinates `p`.
fn trilinear_rgb(n: usize, color: &[f64], p: [f64; 3]) -> [f64; 3] {
    let split = |v: f64| {
        let i = (v.floor().max(0.0) as usize).min(n - 2);
        (i, (v - i as f64).clamp(0.0, 1.0))
    };
    let (ix, fx) = split(p[0]);
    let (iy, fy) = split(p[1]);
    let (iz, fz) = split(p[2]);
    let mut out = [0.0; 3];
    for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let w = wx * wy * wz;
                let cell = ((iz + dz) * n + iy + dy) * n + ix + dx;
                for (ch, o) in out.iter_mut().enumerate() {
                    *o += w * color[3 * cell + ch];
                }
            }
        }
    }
    out
}

/// Trilinear interpolation of an `n^3` scalar grid at index coordinates.
pub fn sample_density(n: usize, density: &[f64], p: [f64; 3]) -> f64 {
    let mut out = 0.0;
    let split = |v: f64| {
        let i = (v.floor().max(0.0) as usize).min(n - 2);
        (i, (v - i as f64).clamp(0.0, 1.0))
    };
    let (ix, fx) = split(p[0]);
    let (iy, fy) = split(p[1]);
    let (iz, fz) = split(p[2]);
    for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                out += wx * wy * wz * density[((iz + dz) * n + iy + dy) * n + ix + dx];
            }
        }
    }
    out
}

/// OBJ text: `v x y z [r g b]` then `f i j k` with 1-based indices.
pub fn obj_string(mesh: &TriMesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# sirlab mesh: {} vertices, {} faces", mesh.vertices.len(), mesh.triangles.len());
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => {
                let c = c[i];
                let _ = writeln!(s, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2]);
            }
            None => {
                let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
            }
        }
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

pub fn export_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    std::fs::write(path, obj_string(mesh))?;
    Ok(())
}

/// Parses the vertex and face subset of OBJ that [`obj_string`] writes.
/// Faces with more than three corners are fanned into triangles.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut mesh = TriMesh::default();
    let mut colors = Vec::new();
    let bad = |line: usize, what: &str| SirError::Parse(format!("obj line {}: {what}", line + 1));
    for (ln, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let nums = parts
                    .map(|p| p.parse::<f64>().map_err(|_| bad(ln, "bad number")))
                    .collect::<Result<Vec<_>>>()?;
                match nums.len() {
                    3 | 4 => mesh.vertices.push([nums[0], nums[1], nums[2]]),
                    6 => {
                        mesh.vertices.push([nums[0], nums[1], nums[2]]);
                        colors.push([nums[3], nums[4], nums[5]]);
                    }
                    _ => return Err(bad(ln, "vertex needs 3 or 6 values")),
                }
            }
            Some("f") => {
                let idx = parts
                    .map(|p| {
                        let head = p.split('/').next().unwrap_or("");
                        let i: i64 = head.parse().map_err(|_| bad(ln, "bad face index"))?;
                        let count = mesh.vertices.len() as i64;
                        let resolved = if i < 0 { count + i } else { i - 1 };
                        if resolved < 0 || resolved >= count {
                            return Err(bad(ln, "face index out of range"));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(bad(ln, "face needs at least 3 corners"));
                }
                for w in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[w], idx[w + 1]]);
                }
            }
            _ => {}
        }
    }
    if !colors.is_empty() {
        if colors.len() != mesh.vertices.len() {
            return Err(SirError::Parse("only some vertices carry colors".into()));
        }
        mesh.colors = Some(colors);
    }
    Ok(mesh)
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    parse_obj(&std::fs::read_to_string(path)?)
}
