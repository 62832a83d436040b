use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::argmax;
use crate::scene::Scene;

/// Affine map from a D-dim instance feature to K+1 class logits
/// (class 0 is background).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "D")]
    d: usize,
    /// `(K+1) x D`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Classifier {
    pub fn zeros(num_instances: usize, feature_dim: usize) -> Self {
        Self {
            k: num_instances,
            d: feature_dim,
            weights: vec![0.0; (num_instances + 1) * feature_dim],
            bias: vec![0.0; num_instances + 1],
        }
    }

    pub fn num_instances(&self) -> usize {
        self.k
    }

    pub fn num_classes(&self) -> usize {
        self.k + 1
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.d..(class + 1) * self.d]
    }

    pub fn logits_into(&self, feature: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.bias[c]
                + self
                    .row(c)
                    .iter()
                    .zip(feature)
                    .map(|(w, f)| w * f)
                    .sum::<f64>();
        }
    }

    pub fn logits(&self, feature: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes()];
        self.logits_into(feature, &mut out);
        out
    }

    /// Argmax class; ties go to the smaller class index.
    pub fn predict(&self, feature: &[f64]) -> u16 {
        argmax(&self.logits(feature)) as u16
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::input("classifier needs K >= 1"));
        }
        if self.weights.len() != (self.k + 1) * self.d || self.bias.len() != self.k + 1 {
            return Err(Error::dim(format!(
                "classifier K={} D={} has {} weights and {} biases",
                self.k,
                self.d,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::input("classifier has non-finite entries"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Classifier = serde_json::from_str(&text)
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Classifies every Gaussian by its own feature.
pub fn classify_gaussians(scene: &Scene, classifier: &Classifier) -> Result<Vec<u16>> {
    if scene.feature_dim() != classifier.feature_dim() {
        return Err(Error::dim(format!(
            "scene features are {}-D, classifier expects {}-D",
            scene.feature_dim(),
            classifier.feature_dim()
        )));
    }
    let mut logits = vec![0.0; classifier.num_classes()];
    Ok(scene
        .gaussians
        .iter()
        .map(|g| {
            classifier.logits_into(&g.feature, &mut logits);
            argmax(&logits) as u16
        })
        .collect())
}
