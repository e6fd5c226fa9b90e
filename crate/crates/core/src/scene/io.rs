//! Image export and the binary scene format.
//!
//! Scene files are little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 8     | magic `SIRSCENE` |
//! | 4     | `u32` version (1) |
//! | 4     | `u32` dimensionality: 2 flatland, 3 voxel |
//! | 4     | `u32` side `N` |
//! | 4     | `u32` color channels (1 or 3) |
//! | 8 N^d | `f64` density, row-major (x fastest) |
//! | 8 N^d C | `f64` color, row-major, channels interleaved |

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{FlatlandGrid, Scene, ViewShape, VoxelGrid};
use crate::error::{Result, SirError};

const MAGIC: &[u8; 8] = b"SIRSCENE";
const VERSION: u32 = 1;

/// Either backend, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyScene {
    Flatland(FlatlandGrid),
    Voxel(VoxelGrid),
}

fn encode(dims: u32, side: usize, channels: u32, density: &[f64], color: &[f64]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(24 + 8 * (density.len() + color.len()));
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, dims, side as u32, channels] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in density.iter().chain(color) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn encode_flatland(g: &FlatlandGrid) -> Vec<u8> {
    encode(2, g.side(), 1, g.density(), g.color())
}

pub fn encode_voxel(g: &VoxelGrid) -> Vec<u8> {
    encode(3, g.side(), 3, g.density(), g.color())
}

pub fn decode_scene(bytes: &[u8]) -> Result<AnyScene> {
    let bad = |m: &str| SirError::Parse(format!("scene file: {m}"));
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let (version, dims, side, channels) = (word(0), word(1), word(2) as usize, word(3));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let cells = match (dims, channels) {
        (2, 1) => side * side,
        (3, 3) => side * side * side,
        _ => return Err(bad(&format!("unsupported layout {dims}D/{channels}ch"))),
    };
    let want = 24 + 8 * cells * (1 + channels as usize);
    if bytes.len() != want {
        return Err(bad(&format!("expected {want} bytes, found {}", bytes.len())));
    }
    let values: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (density, color) = values.split_at(cells);
    Ok(if dims == 2 {
        AnyScene::Flatland(FlatlandGrid::from_parts(side, density.to_vec(), color.to_vec())?)
    } else {
        AnyScene::Voxel(VoxelGrid::from_parts(side, density.to_vec(), color.to_vec())?)
    })
}

pub fn write_flatland(path: &Path, g: &FlatlandGrid) -> Result<()> {
    Ok(fs::write(path, encode_flatland(g))?)
}

pub fn write_voxel(path: &Path, g: &VoxelGrid) -> Result<()> {
    Ok(fs::write(path, encode_voxel(g))?)
}

pub fn read_scene(path: &Path) -> Result<AnyScene> {
    decode_scene(&fs::read(path)?)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit RGB pixels of one view; grayscale is replicated.
pub fn to_rgb8(image: &[f64], shape: ViewShape) -> Vec<u8> {
    let mut out = Vec::with_capacity(shape.pixels() * 3);
    for px in image.chunks_exact(shape.channels) {
        if shape.channels == 1 {
            out.extend_from_slice(&[to_byte(px[0]); 3]);
        } else {
            out.extend(px.iter().take(3).map(|&v| to_byte(v)));
        }
    }
    out
}

/// Binary PPM of a `width x height` RGB image.
pub fn encode_ppm(rgb: &[u8], width: usize, height: usize) -> Vec<u8> {
    let mut buf = format!("P6\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(rgb);
    buf
}

/// Writes one view as PPM; a flatland view becomes a one-row image.
pub fn write_ppm(path: &Path, image: &[f64], shape: ViewShape) -> Result<()> {
    let rgb = to_rgb8(image, shape);
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_ppm(&rgb, shape.width, shape.height))?;
    Ok(())
}

/// Views tiled left to right. Flatland views are stacked as rows instead.
pub fn contact_sheet(images: &[&[f64]], shape: ViewShape) -> (Vec<u8>, usize, usize) {
    let n = images.len();
    let (w, h) = (shape.width, shape.height);
    if h == 1 {
        let rgb = images.iter().flat_map(|im| to_rgb8(im, shape)).collect();
        return (rgb, w, n);
    }
    let mut rgb = vec![0u8; 3 * w * n * h];
    for (k, im) in images.iter().enumerate() {
        let tile = to_rgb8(im, shape);
        for r in 0..h {
            let dst = 3 * (r * w * n + k * w);
            rgb[dst..dst + 3 * w].copy_from_slice(&tile[3 * r * w..3 * (r + 1) * w]);
        }
    }
    (rgb, w * n, h)
}
