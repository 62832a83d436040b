//! Metrics, synthetic benchmarks and the evaluation harness.

mod manifest;
mod metrics;
mod synthetic;

pub use manifest::{BenchmarkManifest, CaseEntry};
pub use metrics::{boundary_band, default_band, erode, mbiou, miou};
pub use synthetic::{
    generate_synthetic, Layout, ObjectInfo, QueryKind, SyntheticScene, SyntheticSceneSpec, ViewLimitedBackend, PALETTE,
};

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::Classifier;
use crate::glspag::{ground, GroundingConfig};
use crate::lmseg::GroundingBackend;
use crate::render::render_hard_mask;
use crate::scene::{Mask2D, Scene};

/// A text query with ground-truth masks on evaluation cameras.
#[derive(Clone, Debug)]
pub struct QueryCase {
    pub query: String,
    pub gt_masks: BTreeMap<u32, Mask2D>,
    /// Target id for oracle backends; `None` when the query names nothing.
    pub oracle_id: Option<u16>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseReport {
    pub query: String,
    pub oracle_id: Option<u16>,
    pub winner_id: Option<u16>,
    pub error: Option<String>,
    pub miou: f64,
    pub mbiou: f64,
    pub per_camera_miou: BTreeMap<u32, f64>,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkReport {
    pub band_px: Option<usize>,
    pub cases: Vec<CaseReport>,
    pub mean_miou: f64,
    pub mean_mbiou: f64,
    pub failures: usize,
}

impl BenchmarkReport {
    fn from_cases(cases: Vec<CaseReport>, band_px: Option<usize>) -> Self {
        let n = cases.len().max(1) as f64;
        Self {
            band_px,
            mean_miou: cases.iter().map(|c| c.miou).sum::<f64>() / n,
            mean_mbiou: cases.iter().map(|c| c.mbiou).sum::<f64>() / n,
            failures: cases.iter().filter(|c| c.error.is_some()).count(),
            cases,
        }
    }

    /// Aligned plain-text table, one row per case plus the mean.
    pub fn table(&self) -> String {
        let width = self
            .cases
            .iter()
            .map(|c| c.query.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = String::new();
        let band = self
            .band_px
            .map_or("2% of diagonal".to_string(), |b| format!("{b} px"));
        let _ = writeln!(s, "boundary band: {band}");
        let _ = writeln!(s, "{:<width$}  {:>6}  {:>6}  {:>7}  {:>7}", "query", "gt", "pred", "mIoU", "mBIoU");
        for c in &self.cases {
            let id = |v: Option<u16>| v.map_or("-".to_string(), |v| v.to_string());
            let _ = writeln!(
                s,
                "{:<width$}  {:>6}  {:>6}  {:>7.4}  {:>7.4}{}",
                c.query,
                id(c.oracle_id),
                id(c.winner_id),
                c.miou,
                c.mbiou,
                c.error.as_ref().map_or(String::new(), |e| format!("  ({e})"))
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>6}  {:>6}  {:>7.4}  {:>7.4}",
            "mean", "", "", self.mean_miou, self.mean_mbiou
        );
        s
    }
}

fn evaluate_case(
    scene: &Scene,
    classifier: &Classifier,
    case: &QueryCase,
    backend: &dyn GroundingBackend,
    config: &GroundingConfig,
    band_px: Option<usize>,
) -> Result<CaseReport> {
    if case.gt_masks.is_empty() {
        return Err(Error::input(format!("case '{}' has no evaluation cameras", case.query)));
    }
    let start = std::time::Instant::now();
    let (winner_id, mask, error) = match ground(scene, classifier, &case.query, config, backend) {
        Ok(r) => (Some(r.winner_id), Some(r.final_mask().clone()), None),
        Err(e @ (Error::GroundingFailed(_) | Error::Backend { .. })) => (None, None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let mut per_camera_miou = BTreeMap::new();
    let mut biou_sum = 0.0;
    for (&cam_id, gt) in &case.gt_masks {
        let pred = match &mask {
            Some(m) => render_hard_mask(scene, scene.camera(cam_id)?, m)?,
            None => Mask2D::new(gt.width, gt.height),
        };
        per_camera_miou.insert(cam_id, miou(&pred, gt)?);
        biou_sum += mbiou(&pred, gt, band_px)?;
    }
    let n = case.gt_masks.len() as f64;
    Ok(CaseReport {
        query: case.query.clone(),
        oracle_id: case.oracle_id,
        winner_id,
        error,
        miou: per_camera_miou.values().sum::<f64>() / n,
        mbiou: biou_sum / n,
        per_camera_miou,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Grounds every case and scores the final mask rendered on each evaluation
/// camera. A case whose grounding fails scores its metrics against an empty
/// prediction. With `parallel`, cases run on separate threads.
pub fn run_benchmark(
    scene: &Scene,
    classifier: &Classifier,
    cases: &[QueryCase],
    backend: &dyn GroundingBackend,
    config: &GroundingConfig,
    band_px: Option<usize>,
    parallel: bool,
) -> Result<BenchmarkReport> {
    let reports: Vec<Result<CaseReport>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = cases
                .iter()
                .map(|c| s.spawn(move || evaluate_case(scene, classifier, c, backend, config, band_px)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Internal("case panicked".into()))))
                .collect()
        })
    } else {
        cases
            .iter()
            .map(|c| evaluate_case(scene, classifier, c, backend, config, band_px))
            .collect()
    };
    let mut out = Vec::with_capacity(reports.len());
    for (case, r) in cases.iter().zip(reports) {
        out.push(r.unwrap_or_else(|e| CaseReport {
            query: case.query.clone(),
            oracle_id: case.oracle_id,
            winner_id: None,
            error: Some(e.to_string()),
            miou: 0.0,
            mbiou: 0.0,
            per_camera_miou: BTreeMap::new(),
            elapsed_ms: 0.0,
        }));
    }
    Ok(BenchmarkReport::from_cases(out, band_px))
}
