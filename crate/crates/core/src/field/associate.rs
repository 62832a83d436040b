//! Greedy cross-view association of per-view instance masks.
//!
//! Every track keeps the union of Gaussians that dominated (were the top
//! contributor of) a pixel of one of its masks. In each new view a track is
//! back-projected by splatting its Gaussians alone; the footprint is where
//! that isolated render covers at least half a pixel, minus pixels claimed
//! by the view's other masks, so occluded parts are not held against it. A
//! mask joins the track whose footprint it overlaps best (pixel Jaccard
//! ≥ 0.3), otherwise it opens a new track. Masks smaller than
//! [`MIN_MASK_PIXELS`] are left unlabelled.

use std::collections::{BTreeMap, BTreeSet};

use super::SupervisionSet;
use crate::error::{Error, Result};
use crate::render::{project, Raster, MIN_COVERAGE};
use crate::scene::{IdentityMap, Mask2D, Scene};

pub const MIN_JACCARD: f64 = 0.3;
pub const MIN_MASK_PIXELS: usize = 20;

/// Jaccard between `mask` and `footprint` with pixels of `others` removed
/// from the footprint.
fn visible_jaccard(mask: &Mask2D, footprint: &[bool], claimed: &[Option<usize>], m: usize) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for ((&a, &f), c) in mask.bits.iter().zip(footprint).zip(claimed) {
        let b = f && c.is_none_or(|o| o == m);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn associate_masks(scene: &Scene, per_view: &[(u32, Vec<Mask2D>)]) -> Result<SupervisionSet> {
    let mut tracks: Vec<BTreeSet<u32>> = Vec::new();
    let mut maps = BTreeMap::new();

    for (camera_id, masks) in per_view {
        let camera = scene.camera(*camera_id)?;
        let (w, h) = (camera.width as usize, camera.height as usize);
        let mut claimed: Vec<Option<usize>> = vec![None; w * h];
        for (m, mask) in masks.iter().enumerate() {
            if mask.width != w || mask.height != h {
                return Err(Error::dim(format!(
                    "mask {m} of camera {camera_id} is {}x{}, camera is {w}x{h}",
                    mask.width, mask.height
                )));
            }
            for (o, &b) in claimed.iter_mut().zip(&mask.bits) {
                if b && o.is_some() {
                    return Err(Error::input(format!(
                        "masks overlap in camera {camera_id}"
                    )));
                }
                if b {
                    *o = Some(m);
                }
            }
        }

        let splats = project(scene, camera)?;
        let top = Raster::from_splats(&splats, w, h).top_contributors();
        let usable: Vec<bool> = masks.iter().map(|m| m.count() >= MIN_MASK_PIXELS).collect();
        let mut candidates = Vec::new();
        for (t, members) in tracks.iter().enumerate() {
            let own: Vec<_> = splats
                .iter()
                .filter(|s| members.contains(&(s.source_index as u32)))
                .cloned()
                .collect();
            let footprint: Vec<bool> = Raster::from_splats(&own, w, h)
                .coverage()
                .iter()
                .map(|&c| c >= MIN_COVERAGE)
                .collect();
            for (m, mask) in masks.iter().enumerate() {
                if !usable[m] {
                    continue;
                }
                let score = visible_jaccard(mask, &footprint, &claimed, m);
                if score >= MIN_JACCARD {
                    candidates.push((score, m, t));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut assigned: Vec<Option<usize>> = vec![None; masks.len()];
        let mut used = vec![false; tracks.len()];
        for (_, m, t) in candidates {
            if assigned[m].is_none() && !used[t] {
                assigned[m] = Some(t);
                used[t] = true;
            }
        }
        for (m, mask) in masks.iter().enumerate() {
            if !usable[m] {
                continue;
            }
            let dominant = mask.bits.iter().zip(&top).filter_map(|(&on, t)| if on { *t } else { None });
            match assigned[m] {
                Some(t) => tracks[t].extend(dominant),
                None => {
                    assigned[m] = Some(tracks.len());
                    tracks.push(dominant.collect());
                }
            }
        }

        let mut map = IdentityMap::new(w, h);
        for (m, mask) in masks.iter().enumerate() {
            let Some(track) = assigned[m] else { continue };
            let id = track as u16 + 1;
            for (v, &b) in map.ids.iter_mut().zip(&mask.bits) {
                if b {
                    *v = id;
                }
            }
        }
        maps.insert(*camera_id, map);
    }
    Ok(SupervisionSet { maps })
}
