//! Scene domain types: Gaussians, cameras, and the 2D/3D masks that flow
//! between rendering, grounding and editing.

mod camera;
mod io;
mod ply;

pub use camera::Camera;
pub use io::{load_cameras, load_mask3d, load_scene, save_cameras, save_mask3d, save_scene};
pub use ply::{read_gaussians, write_gaussians};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Instance id reserved for pixels and Gaussians that belong to no object.
pub const BACKGROUND_ID: u16 = 0;

/// Default instance-feature width.
pub const DEFAULT_FEATURE_DIM: usize = 16;

pub(crate) const OPACITY_EPS: f64 = 1e-6;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One splat primitive. Scale and opacity are kept in unconstrained form
/// (log and logit) and exposed through accessors.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    log_scale: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
    opacity_logit: f64,
    pub color: Vector3<f64>,
    pub feature: Vec<f64>,
}

impl Gaussian {
    /// Builds a Gaussian from constrained values. `rotation` is (w, x, y, z)
    /// and is normalized; opacity is clamped to `[1e-6, 1 - 1e-6]`.
    pub fn new(
        position: [f64; 3],
        scale: [f64; 3],
        rotation: [f64; 4],
        opacity: f64,
        color: [f64; 3],
        feature: Vec<f64>,
    ) -> Result<Self> {
        let all = position
            .iter()
            .chain(&scale)
            .chain(&rotation)
            .chain(std::iter::once(&opacity))
            .chain(&color)
            .chain(&feature);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite gaussian parameter"));
        }
        if scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::input(format!("scale must be positive, got {scale:?}")));
        }
        let q = Quaternion::new(rotation[0], rotation[1], rotation[2], rotation[3]);
        if q.norm() < 1e-12 {
            return Err(Error::input("zero-norm rotation quaternion"));
        }
        let opacity = opacity.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
        Ok(Self {
            position: Vector3::from(position),
            log_scale: Vector3::from(scale).map(f64::ln),
            rotation: UnitQuaternion::from_quaternion(q),
            opacity_logit: logit(opacity),
            color: Vector3::from(color),
            feature,
        })
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn log_scale(&self) -> Vector3<f64> {
        self.log_scale
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn opacity_logit(&self) -> f64 {
        self.opacity_logit
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    /// Rotation as (w, x, y, z).
    pub fn rotation_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// World-space covariance `R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s = Matrix3::from_diagonal(&self.scale());
        let m = r * s;
        m * m.transpose()
    }
}

/// Gaussians, cameras and the instance count of the trained feature field.
#[derive(Clone, Debug)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    pub cameras: Vec<Camera>,
    /// Number of instances K (0 while the field is untrained).
    pub num_instances: usize,
    feature_dim: usize,
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian>, cameras: Vec<Camera>) -> Result<Self> {
        let feature_dim = gaussians.first().map_or(0, |g| g.feature.len());
        if let Some(i) = gaussians.iter().position(|g| g.feature.len() != feature_dim) {
            return Err(Error::dim(format!(
                "gaussian {i} has {} features, expected {feature_dim}",
                gaussians[i].feature.len()
            )));
        }
        let mut ids: Vec<u32> = cameras.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::input("duplicate camera id"));
        }
        Ok(Self {
            gaussians,
            cameras,
            num_instances: 0,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Replaces every feature vector with zeros of width `dim`.
    pub fn reset_features(&mut self, dim: usize) {
        for g in &mut self.gaussians {
            g.feature = vec![0.0; dim];
        }
        self.feature_dim = dim;
    }

    pub fn camera(&self, id: u32) -> Result<&Camera> {
        self.cameras
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::input(format!("unknown camera id {id}")))
    }

    /// Returns a copy holding only the Gaussians where `keep` is true.
    pub fn filtered(&self, keep: &[bool]) -> Scene {
        let gaussians = self
            .gaussians
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(g, _)| g.clone())
            .collect();
        Scene {
            gaussians,
            cameras: self.cameras.clone(),
            num_instances: self.num_instances,
            feature_dim: self.feature_dim,
        }
    }

    /// Center and radius of the bounding sphere of Gaussian positions.
    pub fn bounds(&self) -> (Vector3<f64>, f64) {
        if self.gaussians.is_empty() {
            return (Vector3::zeros(), 1.0);
        }
        let n = self.gaussians.len() as f64;
        let center = self
            .gaussians
            .iter()
            .fold(Vector3::zeros(), |acc, g| acc + g.position)
            / n;
        let radius = self
            .gaussians
            .iter()
            .map(|g| (g.position - center).norm())
            .fold(0.0, f64::max);
        (center, radius.max(1e-6))
    }
}

/// Binary per-pixel mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask2D {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask2D {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &Mask2D) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Tight box `(x1, y1, x2, y2)` with exclusive upper corner, or `None` if empty.
    pub fn bbox(&self) -> Option<[u32; 4]> {
        let mut b: Option<[usize; 4]> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    let e = b.get_or_insert([x, y, x + 1, y + 1]);
                    e[0] = e[0].min(x);
                    e[1] = e[1].min(y);
                    e[2] = e[2].max(x + 1);
                    e[3] = e[3].max(y + 1);
                }
            }
        }
        b.map(|b| b.map(|v| v as u32))
    }
}

/// Per-pixel instance ids, row-major, 0 = background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityMap {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u16>,
}

impl IdentityMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ids: vec![BACKGROUND_ID; width * height],
        }
    }

    pub fn max_id(&self) -> u16 {
        self.ids.iter().copied().max().unwrap_or(0)
    }

    /// Pixel count per id, indexed by id.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.max_id() as usize + 1];
        for &id in &self.ids {
            h[id as usize] += 1;
        }
        h
    }

    /// Pixels equal to `id`.
    pub fn mask_of(&self, id: u16) -> Mask2D {
        Mask2D {
            width: self.width,
            height: self.height,
            bits: self.ids.iter().map(|&v| v == id).collect(),
        }
    }

    /// Non-background ids covering at least `min_pixels` pixels, ascending.
    pub fn visible_ids(&self, min_pixels: usize) -> Vec<u16> {
        self.histogram()
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &n)| n >= min_pixels && n > 0)
            .map(|(id, _)| id as u16)
            .collect()
    }
}

/// Per-Gaussian soft membership with a hard threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask3D {
    pub soft: Vec<f64>,
    pub threshold: f64,
}

impl Mask3D {
    pub const DEFAULT_THRESHOLD: f64 = 0.5;

    pub fn from_hard(hard: &[bool]) -> Self {
        Self {
            soft: hard.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            threshold: Self::DEFAULT_THRESHOLD,
        }
    }

    pub fn len(&self) -> usize {
        self.soft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.soft.is_empty()
    }

    pub fn hard(&self) -> Vec<bool> {
        self.soft.iter().map(|&s| s >= self.threshold).collect()
    }

    pub fn selected_count(&self) -> usize {
        self.soft.iter().filter(|&&s| s >= self.threshold).count()
    }

    /// Intersection-over-union of the hard selections.
    pub fn iou(&self, other: &[bool]) -> f64 {
        let mine = self.hard();
        let inter = mine.iter().zip(other).filter(|(a, b)| **a && **b).count();
        let union = mine.iter().zip(other).filter(|(a, b)| **a || **b).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(feature: Vec<f64>) -> Gaussian {
        Gaussian::new([0.0; 3], [1.0; 3], [1.0, 0.0, 0.0, 0.0], 0.5, [0.5; 3], feature).unwrap()
    }

    #[test]
    fn quaternion_is_normalized() {
        let g = Gaussian::new([0.0; 3], [1.0; 3], [2.0, 0.0, 0.0, 0.0], 0.5, [0.0; 3], vec![])
            .unwrap();
        let q = g.rotation_wxyz();
        assert!((q[0] - 1.0).abs() < 1e-12);
        assert!(q[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn opacity_is_clamped() {
        let g = Gaussian::new([0.0; 3], [1.0; 3], [1.0, 0.0, 0.0, 0.0], 1.0, [0.0; 3], vec![])
            .unwrap();
        assert!(g.opacity() < 1.0 && g.opacity() > 1.0 - 2e-6);
        assert!(g.opacity_logit().is_finite());
    }

    #[test]
    fn rejects_bad_values() {
        let r = [1.0, 0.0, 0.0, 0.0];
        assert!(Gaussian::new([f64::NAN, 0.0, 0.0], [1.0; 3], r, 0.5, [0.0; 3], vec![]).is_err());
        assert!(Gaussian::new([0.0; 3], [0.0, 1.0, 1.0], r, 0.5, [0.0; 3], vec![]).is_err());
        assert!(Gaussian::new([0.0; 3], [1.0; 3], [0.0; 4], 0.5, [0.0; 3], vec![]).is_err());
    }

    #[test]
    fn scene_rejects_mixed_feature_dims() {
        assert!(Scene::new(vec![g(vec![0.0; 2]), g(vec![0.0; 3])], vec![]).is_err());
    }

    #[test]
    fn covariance_of_axis_aligned() {
        let g = Gaussian::new([0.0; 3], [1.0, 2.0, 3.0], [1.0, 0.0, 0.0, 0.0], 0.5, [0.0; 3], vec![])
            .unwrap();
        let c = g.covariance();
        assert!((c[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((c[(1, 1)] - 4.0).abs() < 1e-12);
        assert!((c[(2, 2)] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn mask_bbox_is_tight() {
        let m = Mask2D::from_fn(10, 8, |x, y| (2..5).contains(&x) && (3..7).contains(&y));
        assert_eq!(m.bbox(), Some([2, 3, 5, 7]));
        assert_eq!(Mask2D::new(4, 4).bbox(), None);
    }
}
