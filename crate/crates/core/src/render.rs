//! CPU splat rasterizer.
//!
//! Gaussians are projected with the EWA approximation, sorted globally by
//! camera depth and alpha-composited front to back. Every pixel keeps its
//! list of `(gaussian, weight)` contributions, `weight = αᵢ ∏_{j<i}(1-αⱼ)`,
//! which is all that colors, features, soft masks and their gradients need.
//!
//! Pixel `(x, y)` is sampled at its center `(x + 0.5, y + 0.5)`.

use std::sync::Arc;

use nalgebra::{Matrix2, Matrix2x3, Vector2};

use crate::error::{Error, Result};
use crate::field::Classifier;
use crate::scene::{Camera, IdentityMap, Mask2D, Mask3D, Scene, BACKGROUND_ID};

/// Added to the diagonal of every projected covariance (pixels²).
pub const BLUR_FLOOR: f64 = 0.3;
/// Splats are evaluated out to this many standard deviations.
pub const SIGMA_CUTOFF: f64 = 3.0;
/// Compositing stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Pixels with less accumulated weight are background in identity maps.
pub const MIN_COVERAGE: f64 = 0.5;

/// A Gaussian projected into one camera.
#[derive(Clone, Debug)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub alpha_base: f64,
    pub source_index: usize,
}

impl Splat2D {
    /// Opacity of the splat at pixel-space point `p`; zero outside the cutoff ellipse.
    #[inline]
    pub fn alpha_at(&self, p: Vector2<f64>) -> f64 {
        let d = p - self.mean2d;
        let q = d.dot(&(self.conic * d));
        if q > SIGMA_CUTOFF * SIGMA_CUTOFF {
            0.0
        } else {
            self.alpha_base * (-0.5 * q).exp()
        }
    }

    /// Inclusive pixel range `(x0, y0, x1, y1)` touched by the cutoff ellipse,
    /// clipped to the image, or `None` when off-screen.
    pub fn pixel_bounds(&self, width: usize, height: usize) -> Option<[usize; 4]> {
        let rx = SIGMA_CUTOFF * self.cov2d[(0, 0)].sqrt();
        let ry = SIGMA_CUTOFF * self.cov2d[(1, 1)].sqrt();
        let lo_x = (self.mean2d.x - rx - 0.5).ceil().max(0.0);
        let hi_x = (self.mean2d.x + rx - 0.5).floor().min(width as f64 - 1.0);
        let lo_y = (self.mean2d.y - ry - 0.5).ceil().max(0.0);
        let hi_y = (self.mean2d.y + ry - 0.5).floor().min(height as f64 - 1.0);
        if lo_x > hi_x || lo_y > hi_y {
            return None;
        }
        Some([lo_x as usize, lo_y as usize, hi_x as usize, hi_y as usize])
    }
}

/// Projects every Gaussian in front of the near plane, sorted by ascending depth
/// (ties by Gaussian index).
pub fn project(scene: &Scene, camera: &Camera) -> Result<Vec<Splat2D>> {
    let w = camera.rotation();
    let mut splats = Vec::with_capacity(scene.len());
    for (index, g) in scene.gaussians.iter().enumerate() {
        let t = camera.to_camera(&g.position);
        if t.z <= camera.z_near {
            continue;
        }
        let (x, y, z) = (t.x, t.y, t.z);
        let mean2d = Vector2::new(camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy);
        let j = Matrix2x3::new(
            camera.fx / z,
            0.0,
            -camera.fx * x / (z * z),
            0.0,
            camera.fy / z,
            -camera.fy * y / (z * z),
        );
        let m = j * w;
        let mut cov2d = m * g.covariance() * m.transpose();
        cov2d[(0, 0)] += BLUR_FLOOR;
        cov2d[(1, 1)] += BLUR_FLOOR;
        // exact symmetry keeps the conic symmetric too
        let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
        cov2d[(0, 1)] = off;
        cov2d[(1, 0)] = off;
        let conic = cov2d
            .try_inverse()
            .ok_or_else(|| Error::Internal(format!("singular 2D covariance for gaussian {index}")))?;
        splats.push(Splat2D {
            mean2d,
            cov2d,
            conic,
            depth: z,
            alpha_base: g.opacity(),
            source_index: index,
        });
    }
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.source_index.cmp(&b.source_index))
    });
    Ok(splats)
}

/// One Gaussian's share of a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub source: u32,
    pub weight: f64,
}

/// Front-to-back contributions for every pixel of one view, stored row-major
/// in compressed form.
#[derive(Clone, Debug)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    offsets: Vec<usize>,
    entries: Vec<Contribution>,
}

impl Raster {
    pub fn new(scene: &Scene, camera: &Camera) -> Result<Self> {
        let splats = project(scene, camera)?;
        Ok(Self::from_splats(
            &splats,
            camera.width as usize,
            camera.height as usize,
        ))
    }

    pub fn from_splats(splats: &[Splat2D], width: usize, height: usize) -> Self {
        let mut per_pixel: Vec<Vec<(u32, f64)>> = vec![Vec::new(); width * height];
        for s in splats {
            let Some([x0, y0, x1, y1]) = s.pixel_bounds(width, height) else {
                continue;
            };
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let a = s.alpha_at(Vector2::new(x as f64 + 0.5, y as f64 + 0.5));
                    if a > 0.0 {
                        per_pixel[y * width + x].push((s.source_index as u32, a));
                    }
                }
            }
        }

        let mut offsets = Vec::with_capacity(width * height + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for list in per_pixel {
            let mut transmittance = 1.0;
            for (source, alpha) in list {
                entries.push(Contribution {
                    source,
                    weight: alpha * transmittance,
                });
                transmittance *= 1.0 - alpha;
                if transmittance < MIN_TRANSMITTANCE {
                    break;
                }
            }
            offsets.push(entries.len());
        }
        Self {
            width,
            height,
            offsets,
            entries,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> &[Contribution] {
        &self.entries[self.offsets[index]..self.offsets[index + 1]]
    }

    /// Accumulated weight per pixel, `1 - T_final`.
    pub fn coverage(&self) -> Vec<f64> {
        (0..self.pixel_count())
            .map(|p| self.pixel(p).iter().map(|c| c.weight).sum())
            .collect()
    }

    /// Gaussian with the largest weight at each pixel.
    pub fn top_contributors(&self) -> Vec<Option<u32>> {
        (0..self.pixel_count())
            .map(|p| {
                self.pixel(p)
                    .iter()
                    .fold(None::<Contribution>, |best, c| match best {
                        Some(b) if b.weight >= c.weight => Some(b),
                        _ => Some(*c),
                    })
                    .map(|c| c.source)
            })
            .collect()
    }

    /// Blends a per-Gaussian value of width `dim` into a row-major
    /// `H x W x dim` buffer.
    pub fn blend<'a>(&self, dim: usize, value: impl Fn(usize) -> &'a [f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.pixel_count() * dim];
        for p in 0..self.pixel_count() {
            let acc = &mut out[p * dim..(p + 1) * dim];
            for c in self.pixel(p) {
                for (a, v) in acc.iter_mut().zip(value(c.source as usize)) {
                    *a += c.weight * v;
                }
            }
        }
        out
    }

    /// Blends one scalar per Gaussian.
    pub fn blend_scalar(&self, value: &[f64]) -> Vec<f64> {
        (0..self.pixel_count())
            .map(|p| {
                self.pixel(p)
                    .iter()
                    .map(|c| c.weight * value[c.source as usize])
                    .sum()
            })
            .collect()
    }
}

/// Rendered `H x W x D` instance features.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let p = y * self.width + x;
        &self.data[p * self.dim..(p + 1) * self.dim]
    }
}

/// Row-major RGB in [0, 1].
#[derive(Clone, Debug)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

pub fn render_rgb(scene: &Scene, camera: &Camera) -> Result<RgbImage> {
    Ok(rgb_from(&Raster::new(scene, camera)?, scene))
}

pub(crate) fn rgb_from(raster: &Raster, scene: &Scene) -> RgbImage {
    let colors: Vec<[f64; 3]> = scene
        .gaussians
        .iter()
        .map(|g| [g.color.x, g.color.y, g.color.z])
        .collect();
    let data = raster
        .blend(3, |i| &colors[i])
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    RgbImage {
        width: raster.width,
        height: raster.height,
        data,
    }
}

pub fn render_feature_map(scene: &Scene, camera: &Camera) -> Result<FeatureMap> {
    let raster = Raster::new(scene, camera)?;
    Ok(feature_map_from(&raster, scene))
}

pub(crate) fn feature_map_from(raster: &Raster, scene: &Scene) -> FeatureMap {
    let dim = scene.feature_dim();
    FeatureMap {
        width: raster.width,
        height: raster.height,
        dim,
        data: raster.blend(dim, |i| &scene.gaussians[i].feature),
    }
}

/// Per-pixel classifier argmax of the rendered feature; pixels with less than
/// half coverage are background.
pub fn render_identity_map(
    scene: &Scene,
    camera: &Camera,
    classifier: &Classifier,
) -> Result<IdentityMap> {
    if scene.num_instances != classifier.num_instances() {
        return Err(Error::dim(format!(
            "scene has K={} but classifier has K={}",
            scene.num_instances,
            classifier.num_instances()
        )));
    }
    if scene.feature_dim() != classifier.feature_dim() {
        return Err(Error::dim(format!(
            "scene features are {}-D but classifier expects {}-D",
            scene.feature_dim(),
            classifier.feature_dim()
        )));
    }
    let raster = Raster::new(scene, camera)?;
    Ok(identity_map_from(&raster, scene, classifier))
}

pub(crate) fn identity_map_from(raster: &Raster, scene: &Scene, classifier: &Classifier) -> IdentityMap {
    let features = feature_map_from(raster, scene);
    let coverage = raster.coverage();
    let mut logits = vec![0.0; classifier.num_classes()];
    let ids = (0..raster.pixel_count())
        .map(|p| {
            if coverage[p] < MIN_COVERAGE {
                return BACKGROUND_ID;
            }
            classifier.logits_into(&features.data[p * features.dim..(p + 1) * features.dim], &mut logits);
            argmax(&logits) as u16
        })
        .collect();
    IdentityMap {
        width: raster.width,
        height: raster.height,
        ids,
    }
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Renders per-Gaussian integer labels: each covered pixel takes the label
/// with the most accumulated weight (ties to the smaller label).
pub fn render_label_map(scene: &Scene, camera: &Camera, labels: &[u16]) -> Result<IdentityMap> {
    if labels.len() != scene.len() {
        return Err(Error::dim(format!(
            "{} labels for {} gaussians",
            labels.len(),
            scene.len()
        )));
    }
    let raster = Raster::new(scene, camera)?;
    Ok(label_map_from(&raster, labels))
}

pub(crate) fn label_map_from(raster: &Raster, labels: &[u16]) -> IdentityMap {
    let classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    let mut acc = vec![0.0; classes];
    let ids = (0..raster.pixel_count())
        .map(|p| {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut total = 0.0;
            for c in raster.pixel(p) {
                acc[labels[c.source as usize] as usize] += c.weight;
                total += c.weight;
            }
            if total < MIN_COVERAGE {
                BACKGROUND_ID
            } else {
                argmax(&acc) as u16
            }
        })
        .collect();
    IdentityMap {
        width: raster.width,
        height: raster.height,
        ids,
    }
}

/// Rendered soft mask with the records needed for backpropagation.
#[derive(Clone, Debug)]
pub struct SoftMaskRender {
    pub raster: Arc<Raster>,
    pub values: Vec<f64>,
    membership: Vec<f64>,
}

impl SoftMaskRender {
    pub fn width(&self) -> usize {
        self.raster.width
    }

    pub fn height(&self) -> usize {
        self.raster.height
    }

    /// Pixels whose rendered value reaches `threshold`.
    pub fn to_mask(&self, threshold: f64) -> Mask2D {
        Mask2D {
            width: self.width(),
            height: self.height(),
            bits: self.values.iter().map(|&v| v >= threshold).collect(),
        }
    }
}

pub fn render_soft_mask(scene: &Scene, camera: &Camera, mask: &Mask3D) -> Result<SoftMaskRender> {
    if mask.len() != scene.len() {
        return Err(Error::dim(format!(
            "mask has {} entries for {} gaussians",
            mask.len(),
            scene.len()
        )));
    }
    let raster = Raster::new(scene, camera)?;
    Ok(soft_mask_from(Arc::new(raster), &mask.soft))
}

pub(crate) fn soft_mask_from(raster: Arc<Raster>, membership: &[f64]) -> SoftMaskRender {
    let values = raster.blend_scalar(membership);
    SoftMaskRender {
        raster,
        values,
        membership: membership.to_vec(),
    }
}

/// Hard 2D mask of a hard 3D selection: pixels whose rendered membership is at least 0.5.
pub fn render_hard_mask(scene: &Scene, camera: &Camera, mask: &Mask3D) -> Result<Mask2D> {
    let hard = Mask3D::from_hard(&mask.hard());
    Ok(render_soft_mask(scene, camera, &hard)?.to_mask(0.5))
}

/// Mean absolute error between the rendered soft mask and `target`, and its
/// gradient with respect to each Gaussian's membership logit. The membership
/// values used by the render are taken as `sigmoid(logit)`.
pub fn backprop_mask_l1(rendered: &SoftMaskRender, target: &Mask2D) -> Result<(f64, Vec<f64>)> {
    if target.width != rendered.width() || target.height != rendered.height() {
        return Err(Error::dim(format!(
            "target is {}x{}, render is {}x{}",
            target.width,
            target.height,
            rendered.width(),
            rendered.height()
        )));
    }
    let n = rendered.raster.pixel_count() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; rendered.membership.len()];
    for (p, (&v, &t)) in rendered.values.iter().zip(&target.bits).enumerate() {
        let diff = v - if t { 1.0 } else { 0.0 };
        loss += diff.abs();
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        if sign == 0.0 {
            continue;
        }
        for c in rendered.raster.pixel(p) {
            grad[c.source as usize] += sign * c.weight;
        }
    }
    for (g, &m) in grad.iter_mut().zip(&rendered.membership) {
        *g *= m * (1.0 - m) / n;
    }
    Ok((loss / n, grad))
}
