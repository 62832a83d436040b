use std::collections::BTreeMap;

use serde::Serialize;
use splatground_core::glspag::{GroundingResult, StageTimings, ViewPlan};
use splatground_core::lmseg::BBox;

#[derive(Serialize)]
pub struct ViewReport {
    pub camera_id: u32,
    pub bbox: Option<BBox>,
    pub category: Option<String>,
    pub rationale: Option<String>,
    pub instance_id: Option<u16>,
    pub overlap_fraction: f64,
    pub mask_pixels: usize,
    pub image: String,
}

#[derive(Serialize)]
pub struct MaskFiles {
    pub coarse: String,
    pub refined: Option<String>,
    pub final_mask: String,
    pub selected_ply: Option<String>,
}

/// Everything `ground` writes to `result.json`. Only `timings` varies
/// between identical runs.
#[derive(Serialize)]
pub struct GroundReport<'a> {
    pub query: &'a str,
    pub seed: u64,
    pub backend: &'a str,
    pub plan: &'a ViewPlan,
    pub votes: BTreeMap<u32, Option<u16>>,
    pub views: Vec<ViewReport>,
    pub winner_id: u16,
    pub coarse_selected: usize,
    pub local_views: &'a [u32],
    pub refine_used_views: &'a [u32],
    pub refine_dropped_views: &'a [u32],
    pub refine_losses: &'a [f64],
    pub final_selected: usize,
    pub masks: MaskFiles,
    pub timings: &'a StageTimings,
}

impl<'a> GroundReport<'a> {
    pub fn new(
        result: &'a GroundingResult,
        seed: u64,
        backend: &'a str,
        views: Vec<ViewReport>,
        masks: MaskFiles,
    ) -> Self {
        Self {
            query: &result.query,
            seed,
            backend,
            plan: &result.plan,
            votes: result.votes(),
            views,
            winner_id: result.winner_id,
            coarse_selected: result.coarse_mask.selected_count(),
            local_views: &result.local_views,
            refine_used_views: &result.refine.used_views,
            refine_dropped_views: &result.refine.dropped_views,
            refine_losses: &result.refine.losses,
            final_selected: result.final_mask().selected_count(),
            masks,
            timings: &result.timings,
        }
    }
}
