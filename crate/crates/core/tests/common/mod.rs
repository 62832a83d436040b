//! Shared fixtures and independent reference implementations for tests.

#![allow(dead_code)]

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatground_core::eval::{generate_synthetic, SyntheticScene, SyntheticSceneSpec};
use splatground_core::field::{train_field, Classifier, TrainParams};
use splatground_core::render::{backprop_mask_l1, render_soft_mask};
use splatground_core::scene::{sigmoid, Camera, Gaussian, Mask2D, Mask3D, Scene};

pub fn front_camera(id: u32, size: u32) -> Camera {
    Camera::look_at(
        id,
        size,
        size,
        size as f64,
        Vector3::new(0.0, 0.0, -3.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
    )
    .unwrap()
}

/// Between 1 and `max_gaussians` Gaussians scattered in front of a 64x64
/// camera looking down +z.
pub fn random_scene(seed: u64, max_gaussians: usize, dim: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_gaussians);
    scatter(&mut rng, n, dim)
}

/// Exactly `n` Gaussians, placed like `random_scene`.
pub fn random_scene_of(seed: u64, n: usize, dim: usize) -> Scene {
    scatter(&mut ChaCha8Rng::seed_from_u64(seed), n, dim)
}

fn scatter(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Scene {
    let gaussians = (0..n)
        .map(|_| {
            let q = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            Gaussian::new(
                [
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.5..1.5),
                ],
                [
                    rng.random_range(0.02..0.3),
                    rng.random_range(0.02..0.3),
                    rng.random_range(0.02..0.3),
                ],
                q,
                rng.random_range(0.05..0.99),
                [rng.random(), rng.random(), rng.random()],
                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        })
        .collect();
    Scene::new(gaussians, vec![front_camera(0, 64)]).unwrap()
}

/// Straight-loop compositing: every Gaussian is tested at every pixel and
/// accumulation never stops early. Returns `H x W x D` row-major.
pub fn oracle_feature_map(scene: &Scene, cam: &Camera) -> Vec<f64> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let dim = scene.feature_dim();
    let m = cam.world_to_camera();

    struct Proj {
        depth: f64,
        index: usize,
        mx: f64,
        my: f64,
        a: f64,
        b: f64,
        c: f64,
        opacity: f64,
    }
    let mut projected = Vec::new();
    for (index, g) in scene.gaussians.iter().enumerate() {
        let p = [g.position.x, g.position.y, g.position.z, 1.0];
        let mut t = [0.0; 3];
        for (r, out) in t.iter_mut().enumerate() {
            *out = (0..4).map(|k| m[(r, k)] * p[k]).sum();
        }
        if t[2] <= cam.z_near {
            continue;
        }
        // covariance from the quaternion written out by hand
        let [qw, qx, qy, qz] = g.rotation_wxyz();
        let rot = [
            [1.0 - 2.0 * (qy * qy + qz * qz), 2.0 * (qx * qy - qw * qz), 2.0 * (qx * qz + qw * qy)],
            [2.0 * (qx * qy + qw * qz), 1.0 - 2.0 * (qx * qx + qz * qz), 2.0 * (qy * qz - qw * qx)],
            [2.0 * (qx * qz - qw * qy), 2.0 * (qy * qz + qw * qx), 1.0 - 2.0 * (qx * qx + qy * qy)],
        ];
        let s = g.scale();
        let mut sigma = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                sigma[i][j] = (0..3).map(|k| rot[i][k] * s[k] * s[k] * rot[j][k]).sum();
            }
        }
        let (x, y, z) = (t[0], t[1], t[2]);
        let jac = [
            [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
            [0.0, cam.fy / z, -cam.fy * y / (z * z)],
        ];
        // T = J W, then T Σ Tᵀ
        let mut tw = [[0.0; 3]; 2];
        for i in 0..2 {
            for j in 0..3 {
                tw[i][j] = (0..3).map(|k| jac[i][k] * m[(k, j)]).sum();
            }
        }
        let mut cov = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] = (0..3)
                    .map(|k| (0..3).map(|l| tw[i][k] * sigma[k][l] * tw[j][l]).sum::<f64>())
                    .sum();
            }
        }
        let (a, b, c) = (cov[0][0] + 0.3, 0.5 * (cov[0][1] + cov[1][0]), cov[1][1] + 0.3);
        let det = a * c - b * b;
        projected.push(Proj {
            depth: z,
            index,
            mx: cam.fx * x / z + cam.cx,
            my: cam.fy * y / z + cam.cy,
            a: c / det,
            b: -b / det,
            c: a / det,
            opacity: g.opacity(),
        });
    }
    projected.sort_by(|p, q| p.depth.total_cmp(&q.depth).then(p.index.cmp(&q.index)));

    let mut out = vec![0.0; w * h * dim];
    for py in 0..h {
        for px in 0..w {
            let (u, v) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut transmittance = 1.0;
            for s in &projected {
                let (dx, dy) = (u - s.mx, v - s.my);
                let q = s.a * dx * dx + 2.0 * s.b * dx * dy + s.c * dy * dy;
                if q > 9.0 {
                    continue;
                }
                let alpha = s.opacity * (-0.5 * q).exp();
                let f = &scene.gaussians[s.index].feature;
                let base = (py * w + px) * dim;
                for k in 0..dim {
                    out[base + k] += f[k] * alpha * transmittance;
                }
                transmittance *= 1.0 - alpha;
            }
        }
    }
    out
}

/// Synthetic scene with a field trained on its non-held-out views.
pub fn trained(spec: &SyntheticSceneSpec, steps: usize) -> (SyntheticScene, Scene, Classifier) {
    let syn = generate_synthetic(spec).unwrap();
    let mut scene = syn.scene.clone();
    let params = TrainParams {
        steps,
        seed: spec.seed,
        ..TrainParams::default()
    };
    let report = train_field(&mut scene, &syn.training_supervision(), &params).unwrap();
    (syn, scene, report.classifier)
}

/// Largest color change, over all cameras, at pixels whose top contributor
/// before the edit is outside `mask`.
pub fn unmasked_pixel_change(before: &Scene, after: &Scene, mask: &[bool]) -> f64 {
    let mut worst = 0.0f64;
    for cam in &before.cameras {
        let top = splatground_core::render::Raster::new(before, cam).unwrap().top_contributors();
        let a = splatground_core::render::render_rgb(before, cam).unwrap();
        let b = splatground_core::render::render_rgb(after, cam).unwrap();
        for (p, t) in top.iter().enumerate() {
            if t.is_some_and(|g| mask[g as usize]) {
                continue;
            }
            for c in 0..3 {
                worst = worst.max((a.data[p * 3 + c] - b.data[p * 3 + c]).abs());
            }
        }
    }
    worst
}

/// Pixels labelled `id` by `classifier` over every camera of `scene`.
pub fn id_pixels(scene: &Scene, classifier: &Classifier, id: u16) -> usize {
    scene
        .cameras
        .iter()
        .map(|cam| {
            splatground_core::render::render_identity_map(scene, cam, classifier)
                .unwrap()
                .ids
                .iter()
                .filter(|&&v| v == id)
                .count()
        })
        .sum()
}

/// Counts (agreeing, probed) logits: a logit is probed when its analytic
/// L1 mask gradient is at least 1e-8 and agrees when a central difference
/// matches it within relative tolerance 1e-3.
pub fn gradient_agreement(scene: &Scene, seed: u64) -> (usize, usize) {
    let cam = &scene.cameras[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let logits: Vec<f64> = (0..scene.len()).map(|_| rng.random_range(-2.5..2.5)).collect();
    let target = Mask2D::from_fn(64, 64, |x, y| (x / 8 + y / 8) % 2 == 0);
    let loss_at = |l: &[f64]| {
        let mask = Mask3D {
            soft: l.iter().map(|&v| sigmoid(v)).collect(),
            threshold: 0.5,
        };
        let r = render_soft_mask(scene, cam, &mask).unwrap();
        backprop_mask_l1(&r, &target).unwrap()
    };
    let (_, grad) = loss_at(&logits);
    let h = 1e-6;
    let (mut ok, mut probed) = (0, 0);
    for i in 0..scene.len() {
        if grad[i].abs() < 1e-8 {
            continue;
        }
        let mut up = logits.clone();
        up[i] += h;
        let mut down = logits.clone();
        down[i] -= h;
        let numeric = (loss_at(&up).0 - loss_at(&down).0) / (2.0 * h);
        probed += 1;
        if (numeric - grad[i]).abs() <= 1e-3 * grad[i].abs().max(numeric.abs()) {
            ok += 1;
        }
    }
    (ok, probed)
}
