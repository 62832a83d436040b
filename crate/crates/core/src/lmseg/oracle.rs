//! Ground-truth backends for synthetic and annotated scenes.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BBox, GroundingBackend, GroundingResponse, ViewContext};
use crate::error::{Error, Result};
use crate::scene::{IdentityMap, Mask2D};

/// Answers queries from per-camera ground-truth id maps and a query → id
/// table. A query mapped to `None` names no object.
#[derive(Clone, Debug)]
pub struct OracleBackend {
    gt_maps: BTreeMap<u32, IdentityMap>,
    queries: BTreeMap<String, Option<u16>>,
}

fn tight_box(mask: &Mask2D) -> Option<BBox> {
    mask.bbox()
        .map(|b| BBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64))
}

impl OracleBackend {
    pub fn new(gt_maps: BTreeMap<u32, IdentityMap>, queries: BTreeMap<String, Option<u16>>) -> Self {
        Self { gt_maps, queries }
    }

    pub fn gt_map(&self, camera_id: u32) -> Option<&IdentityMap> {
        self.gt_maps.get(&camera_id)
    }

    pub fn target_of(&self, query: &str) -> Option<u16> {
        self.queries.get(query).copied().flatten()
    }

    fn map_for(&self, view: &ViewContext<'_>) -> Result<&IdentityMap> {
        self.gt_maps.get(&view.camera_id).ok_or_else(|| {
            Error::GroundingFailed(format!("no ground truth for camera {}", view.camera_id))
        })
    }

    /// Tight box of object `id`'s silhouette in the view.
    pub fn respond(&self, view: &ViewContext<'_>, id: u16, rationale: &str) -> Result<GroundingResponse> {
        let silhouette = self.map_for(view)?.mask_of(id);
        let bbox = tight_box(&silhouette).ok_or_else(|| {
            Error::GroundingFailed(format!("object {id} not visible in camera {}", view.camera_id))
        })?;
        Ok(GroundingResponse {
            bbox,
            category: format!("object {id}"),
            rationale: rationale.to_string(),
        })
    }
}

impl GroundingBackend for OracleBackend {
    fn ground(&self, view: &ViewContext<'_>, query: &str) -> Result<GroundingResponse> {
        let id = self
            .target_of(query)
            .ok_or_else(|| Error::GroundingFailed(format!("query '{query}' names no object")))?;
        self.respond(view, id, "ground-truth lookup")
    }

    /// Silhouette of the object whose tight box best matches `bbox`.
    fn mask(&self, view: &ViewContext<'_>, bbox: &BBox) -> Result<Mask2D> {
        let map = self.map_for(view)?;
        let mut best: Option<(f64, u16)> = None;
        for id in map.visible_ids(1) {
            if let Some(b) = tight_box(&map.mask_of(id)) {
                let iou = b.iou(bbox);
                if best.is_none_or(|(v, _)| iou > v) {
                    best = Some((iou, id));
                }
            }
        }
        Ok(match best {
            Some((iou, id)) if iou > 0.0 => map.mask_of(id),
            _ => Mask2D::new(map.width, map.height),
        })
    }

    fn max_in_flight(&self) -> usize {
        4
    }
}

/// Oracle that answers with a wrong visible object on a chosen set of cameras.
#[derive(Clone, Debug)]
pub struct CorruptedBackend {
    inner: OracleBackend,
    corrupted: BTreeSet<u32>,
    seed: u64,
}

impl CorruptedBackend {
    pub fn new(inner: OracleBackend, corrupted: BTreeSet<u32>, seed: u64) -> Self {
        Self {
            inner,
            corrupted,
            seed,
        }
    }

    pub fn corrupted(&self) -> &BTreeSet<u32> {
        &self.corrupted
    }
}

/// Picks `fraction` of `views` to corrupt: `floor(fraction·n)` views, plus
/// one more with probability equal to the fractional remainder.
pub fn choose_corrupted(views: &[u32], fraction: f64, rng: &mut impl Rng) -> BTreeSet<u32> {
    let exact = fraction.clamp(0.0, 1.0) * views.len() as f64;
    let mut count = exact.floor() as usize;
    if rng.random::<f64>() < exact - exact.floor() {
        count += 1;
    }
    let mut pool = views.to_vec();
    let mut out = BTreeSet::new();
    for _ in 0..count.min(pool.len()) {
        let i = rng.random_range(0..pool.len());
        out.insert(pool.swap_remove(i));
    }
    out
}

impl GroundingBackend for CorruptedBackend {
    fn ground(&self, view: &ViewContext<'_>, query: &str) -> Result<GroundingResponse> {
        if !self.corrupted.contains(&view.camera_id) {
            return self.inner.ground(view, query);
        }
        let truth = self.inner.target_of(query);
        let wrong: Vec<u16> = self
            .inner
            .map_for(view)?
            .visible_ids(1)
            .into_iter()
            .filter(|&id| Some(id) != truth)
            .collect();
        if wrong.is_empty() {
            return Err(Error::GroundingFailed(format!(
                "camera {} shows no distractor",
                view.camera_id
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(view.camera_id as u64),
        );
        let id = wrong[rng.random_range(0..wrong.len())];
        self.inner.respond(view, id, "distracted")
    }

    fn mask(&self, view: &ViewContext<'_>, bbox: &BBox) -> Result<Mask2D> {
        self.inner.mask(view, bbox)
    }

    fn max_in_flight(&self) -> usize {
        self.inner.max_in_flight()
    }
}
