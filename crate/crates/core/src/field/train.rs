//! Joint training of per-Gaussian instance features and the classifier.
//!
//! Each step renders the feature map of one supervised view, applies the
//! classifier per pixel and descends the weighted softmax cross-entropy
//! against the supervision ids. Pixels below the coverage floor are left
//! out, since the renderer labels them background unconditionally. Geometry is frozen, so each view's raster
//! is computed once and reused.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Classifier, SupervisionSet};
use crate::error::{Error, Result};
use crate::render::{identity_map_from, Raster, MIN_COVERAGE};
use crate::scene::{Scene, BACKGROUND_ID};

#[derive(Clone, Debug)]
pub struct TrainParams {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Loss weight of pixels labelled background.
    pub background_weight: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Features start uniform in `[-init_range, init_range]`.
    pub init_range: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 0.05,
            seed: 17,
            background_weight: 0.1,
            clip_norm: 10.0,
            init_range: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub classifier: Classifier,
    /// Weighted mean cross-entropy of each step's view.
    pub losses: Vec<f64>,
    /// Per-pixel id accuracy over all supervised views after training.
    pub accuracy: f64,
}

/// Trains features in place and returns the fitted classifier. With zero
/// steps the scene is left untouched.
pub fn train_field(
    scene: &mut Scene,
    supervision: &SupervisionSet,
    params: &TrainParams,
) -> Result<TrainReport> {
    let k = supervision.num_instances();
    if k == 0 {
        return Err(Error::input("supervision has no instances (K = 0)"));
    }
    if supervision.is_empty() {
        return Err(Error::input("empty supervision set"));
    }
    supervision.validate(scene)?;
    let dim = scene.feature_dim();
    if dim == 0 {
        return Err(Error::dim("scene has zero-width features"));
    }

    let views: Vec<u32> = supervision.maps.keys().copied().collect();
    let mut rasters = Vec::with_capacity(views.len());
    for &id in &views {
        rasters.push(Raster::new(scene, scene.camera(id)?)?);
    }

    let mut classifier = Classifier::zeros(k, dim);
    let mut losses = Vec::with_capacity(params.steps);
    if params.steps > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        for g in &mut scene.gaussians {
            for f in &mut g.feature {
                *f = rng.random_range(-params.init_range..=params.init_range);
            }
        }
        let mut order: Vec<usize> = (0..views.len()).collect();
        order.shuffle(&mut rng);

        let mut grads = Gradients::new(scene.len(), k + 1, dim);
        for step in 0..params.steps {
            let v = order[step % order.len()];
            let target = &supervision.maps[&views[v]];
            let loss = accumulate_view(
                scene,
                &classifier,
                &rasters[v],
                &target.ids,
                params.background_weight,
                &mut grads,
            );
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    step,
                    message: format!("training loss is {loss}"),
                });
            }
            losses.push(loss);
            grads.apply(scene, &mut classifier, params.lr, params.clip_norm);
            let bad = scene
                .gaussians
                .iter()
                .flat_map(|g| &g.feature)
                .chain(&classifier.weights)
                .chain(&classifier.bias)
                .any(|v| !v.is_finite());
            if bad {
                return Err(Error::Numeric {
                    step,
                    message: "parameters became non-finite".into(),
                });
            }
        }
    }
    scene.num_instances = k;

    let mut correct = 0usize;
    let mut total = 0usize;
    for (raster, id) in rasters.iter().zip(&views) {
        let predicted = identity_map_from(raster, scene, &classifier);
        let truth = &supervision.maps[id].ids;
        correct += predicted.ids.iter().zip(truth).filter(|(a, b)| a == b).count();
        total += truth.len();
    }
    Ok(TrainReport {
        classifier,
        losses,
        accuracy: correct as f64 / total.max(1) as f64,
    })
}

struct Gradients {
    features: Vec<f64>,
    weights: Vec<f64>,
    bias: Vec<f64>,
    dim: usize,
}

impl Gradients {
    fn new(gaussians: usize, classes: usize, dim: usize) -> Self {
        Self {
            features: vec![0.0; gaussians * dim],
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
            dim,
        }
    }

    fn apply(&mut self, scene: &mut Scene, classifier: &mut Classifier, lr: f64, clip: f64) {
        let norm = self
            .features
            .iter()
            .chain(&self.weights)
            .chain(&self.bias)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let scale = if norm > clip { clip / norm } else { 1.0 };
        let step = lr * scale;
        for (i, g) in scene.gaussians.iter_mut().enumerate() {
            for (f, d) in g
                .feature
                .iter_mut()
                .zip(&self.features[i * self.dim..(i + 1) * self.dim])
            {
                *f -= step * d;
            }
        }
        for (w, d) in classifier.weights.iter_mut().zip(&self.weights) {
            *w -= step * d;
        }
        for (b, d) in classifier.bias.iter_mut().zip(&self.bias) {
            *b -= step * d;
        }
        self.features.iter_mut().for_each(|v| *v = 0.0);
        self.weights.iter_mut().for_each(|v| *v = 0.0);
        self.bias.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Adds one view's gradient of the pixel-summed weighted cross-entropy and
/// returns the weighted mean loss.
fn accumulate_view(
    scene: &Scene,
    classifier: &Classifier,
    raster: &Raster,
    target: &[u16],
    background_weight: f64,
    grads: &mut Gradients,
) -> f64 {
    let dim = grads.dim;
    let classes = classifier.num_classes();
    let mut feature = vec![0.0; dim];
    let mut probs = vec![0.0; classes];
    let mut dfeature = vec![0.0; dim];
    let mut loss = 0.0;
    let mut weight_sum = 0.0;

    for (p, &label) in target.iter().enumerate() {
        let contribs = raster.pixel(p);
        feature.iter_mut().for_each(|v| *v = 0.0);
        for c in contribs {
            for (a, f) in feature.iter_mut().zip(&scene.gaussians[c.source as usize].feature) {
                *a += c.weight * f;
            }
        }
        // The renderer forces these pixels to background regardless of
        // features, so they carry no signal.
        if contribs.iter().map(|c| c.weight).sum::<f64>() < MIN_COVERAGE {
            continue;
        }
        classifier.logits_into(&feature, &mut probs);
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in probs.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        probs.iter_mut().for_each(|v| *v /= z);

        let w = if label == BACKGROUND_ID {
            background_weight
        } else {
            1.0
        };
        let label = label as usize;
        loss += -w * probs[label].max(f64::MIN_POSITIVE).ln();
        weight_sum += w;

        // d(loss)/d(logit_c) = w (p_c - [c == label])
        dfeature.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..classes {
            let g = w * (probs[c] - if c == label { 1.0 } else { 0.0 });
            grads.bias[c] += g;
            let row = &mut grads.weights[c * dim..(c + 1) * dim];
            for (r, f) in row.iter_mut().zip(&feature) {
                *r += g * f;
            }
            for (d, cw) in dfeature.iter_mut().zip(classifier.row(c)) {
                *d += g * cw;
            }
        }
        for c in contribs {
            let i = c.source as usize;
            for (gf, d) in grads.features[i * dim..(i + 1) * dim].iter_mut().zip(&dfeature) {
                *gf += c.weight * d;
            }
        }
    }
    loss / weight_sum.max(f64::MIN_POSITIVE)
}
