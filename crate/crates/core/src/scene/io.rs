use std::fs;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::{ply, Camera, Scene, DEFAULT_FEATURE_DIM};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CameraFile {
    cameras: Vec<CameraRecord>,
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    id: u32,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    world_to_camera: Vec<f64>,
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CameraFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        offset: byte_offset(&text, e.line(), e.column()),
        message: format!("{}: {e}", path.display()),
    })?;
    file.cameras
        .into_iter()
        .map(|r| {
            if r.world_to_camera.len() != 16 {
                return Err(Error::input(format!(
                    "camera {}: world_to_camera needs 16 values, got {}",
                    r.id,
                    r.world_to_camera.len()
                )));
            }
            let m = Matrix4::from_row_slice(&r.world_to_camera);
            Camera::new(r.id, r.width, r.height, r.fx, r.fy, r.cx, r.cy, &m)
        })
        .collect()
}

fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let before: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (before + column.saturating_sub(1)) as u64
}

pub fn save_cameras(cameras: &[Camera], path: &Path) -> Result<()> {
    let file = CameraFile {
        cameras: cameras
            .iter()
            .map(|c| {
                let m = c.world_to_camera();
                CameraRecord {
                    id: c.id,
                    width: c.width,
                    height: c.height,
                    fx: c.fx,
                    fy: c.fy,
                    cx: c.cx,
                    cy: c.cy,
                    world_to_camera: m.transpose().iter().copied().collect(),
                }
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads Gaussians from PLY and cameras from JSON. Scenes whose PLY carries
/// no feature fields get zero features of the default width.
pub fn load_scene(gaussian_file: &Path, camera_file: &Path) -> Result<Scene> {
    let bytes = fs::read(gaussian_file).map_err(|e| Error::io(gaussian_file, e))?;
    let gaussians = ply::read_gaussians(&bytes)?;
    if gaussians.is_empty() {
        return Err(Error::EmptyScene);
    }
    let cameras = load_cameras(camera_file)?;
    let mut scene = Scene::new(gaussians, cameras)?;
    if scene.feature_dim() == 0 {
        scene.reset_features(DEFAULT_FEATURE_DIM);
    }
    Ok(scene)
}

pub fn save_scene(scene: &Scene, gaussian_file: &Path) -> Result<()> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let file = fs::File::create(gaussian_file).map_err(|e| Error::io(gaussian_file, e))?;
    let mut w = BufWriter::new(file);
    ply::write_gaussians(&scene.gaussians, &mut w).map_err(|e| Error::io(gaussian_file, e))?;
    use std::io::Write;
    w.flush().map_err(|e| Error::io(gaussian_file, e))
}

const MASK_MAGIC: &[u8; 4] = b"MSK3";

/// Binary layout: `MSK3`, u32 count, f32 threshold, then `count` f32 soft
/// values, all little-endian.
pub fn save_mask3d(mask: &super::Mask3D, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * mask.len());
    buf.extend_from_slice(MASK_MAGIC);
    buf.extend_from_slice(&(mask.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(mask.threshold as f32).to_le_bytes());
    for &v in &mask.soft {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_mask3d(path: &Path) -> Result<super::Mask3D> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != MASK_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("{}: not a 3D mask file", path.display()),
        });
    }
    let word = |at: usize| <[u8; 4]>::try_from(&bytes[at..at + 4]).unwrap();
    let count = u32::from_le_bytes(word(4)) as usize;
    let threshold = f32::from_le_bytes(word(8)) as f64;
    if bytes.len() != 12 + 4 * count {
        return Err(Error::Parse {
            offset: bytes.len() as u64,
            message: format!("expected {count} mask values"),
        });
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Parse {
            offset: 8,
            message: format!("threshold {threshold} outside (0, 1)"),
        });
    }
    let mut soft = Vec::with_capacity(count);
    for i in 0..count {
        let at = 12 + 4 * i;
        let v = f32::from_le_bytes(word(at)) as f64;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Parse {
                offset: at as u64,
                message: format!("mask value {v} outside [0, 1]"),
            });
        }
        soft.push(v);
    }
    Ok(super::Mask3D { soft, threshold })
}
