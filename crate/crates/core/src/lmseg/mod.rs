//! Image-level reasoning segmenter: query → box → mask → instance id.
//!
//! A [`GroundingBackend`] answers a text query on one rendered view with a
//! bounding box and turns boxes into binary masks. The instance id is then
//! read off the rendered identity map by intersecting it with the mask.

mod oracle;
mod remote;
mod rle;

pub use oracle::{choose_corrupted, CorruptedBackend, OracleBackend};
pub use remote::{BboxFillBackend, RemoteBackend, RemoteConfig, DEFAULT_PROMPT};
pub use rle::{decode_rle, encode_rle, Rle};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::RgbImage;
use crate::scene::{IdentityMap, Mask2D};

/// Default minimum overlap fraction for a view to vote.
pub const DEFAULT_TAU: f64 = 0.25;

/// Axis-aligned box in pixel coordinates, `x1 < x2`, `y1 < y2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = BBox::new(
            self.x1.max(other.x1),
            self.y1.max(other.y1),
            self.x2.min(other.x2),
            self.y2.min(other.y2),
        )
        .area();
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Pixels whose centers fall inside the box.
    pub fn fill(&self, width: usize, height: usize) -> Mask2D {
        Mask2D::from_fn(width, height, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            px >= self.x1 && px <= self.x2 && py >= self.y1 && py <= self.y2
        })
    }
}

/// A rendered view handed to a backend.
#[derive(Clone, Copy, Debug)]
pub struct ViewContext<'a> {
    pub camera_id: u32,
    pub image: &'a RgbImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingResponse {
    pub bbox: BBox,
    pub category: String,
    pub rationale: String,
}

/// Result of running the segmenter on one view.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundingOutcome {
    pub camera_id: u32,
    pub response: Option<GroundingResponse>,
    pub mask2d: Option<Mask2D>,
    /// `None` means the view abstains.
    pub instance_id: Option<u16>,
    pub overlap_fraction: f64,
}

impl GroundingOutcome {
    pub fn abstain(camera_id: u32) -> Self {
        Self {
            camera_id,
            response: None,
            mask2d: None,
            instance_id: None,
            overlap_fraction: 0.0,
        }
    }
}

/// A source of boxes for text queries and masks for boxes.
pub trait GroundingBackend: Send + Sync {
    fn ground(&self, view: &ViewContext<'_>, query: &str) -> Result<GroundingResponse>;

    fn mask(&self, view: &ViewContext<'_>, bbox: &BBox) -> Result<Mask2D>;

    /// Concurrent requests the backend accepts.
    fn max_in_flight(&self) -> usize {
        1
    }
}

/// Queries the backend and validates the box: clipped to the image, and a
/// box with no area left is a grounding failure.
pub fn ground_view(
    backend: &dyn GroundingBackend,
    view: &ViewContext<'_>,
    query: &str,
) -> Result<GroundingResponse> {
    if query.trim().is_empty() {
        return Err(Error::input("empty query"));
    }
    let mut response = backend.ground(view, query)?;
    let (w, h) = (view.image.width as f64, view.image.height as f64);
    let b = &mut response.bbox;
    if [b.x1, b.y1, b.x2, b.y2].iter().any(|v| !v.is_finite()) {
        return Err(Error::GroundingFailed(format!(
            "camera {}: non-finite box",
            view.camera_id
        )));
    }
    b.x1 = b.x1.clamp(0.0, w);
    b.x2 = b.x2.clamp(0.0, w);
    b.y1 = b.y1.clamp(0.0, h);
    b.y2 = b.y2.clamp(0.0, h);
    if b.x1 >= b.x2 || b.y1 >= b.y2 {
        return Err(Error::GroundingFailed(format!(
            "camera {}: degenerate box after clipping",
            view.camera_id
        )));
    }
    Ok(response)
}

pub fn box_to_mask(
    backend: &dyn GroundingBackend,
    view: &ViewContext<'_>,
    bbox: &BBox,
) -> Result<Mask2D> {
    let mask = backend.mask(view, bbox)?;
    if mask.width != view.image.width || mask.height != view.image.height {
        return Err(Error::Backend {
            attempts: 1,
            message: format!(
                "mask is {}x{}, image is {}x{}",
                mask.width, mask.height, view.image.width, view.image.height
            ),
        });
    }
    if mask.count() == 0 {
        return Err(Error::GroundingFailed(format!(
            "camera {}: empty mask",
            view.camera_id
        )));
    }
    Ok(mask)
}

/// Picks the instance with the largest raw intersection with the mask (ties
/// to the smaller id). Abstains when the mask is empty or the winner covers
/// less than `tau` of it.
pub fn infer_instance_id(mask: &Mask2D, idmap: &IdentityMap, tau: f64) -> Result<(Option<u16>, f64)> {
    if mask.width != idmap.width || mask.height != idmap.height {
        return Err(Error::dim(format!(
            "mask is {}x{}, identity map is {}x{}",
            mask.width, mask.height, idmap.width, idmap.height
        )));
    }
    let size = mask.count();
    if size == 0 {
        return Ok((None, 0.0));
    }
    let mut overlap = vec![0usize; idmap.max_id() as usize + 1];
    for (&on, &id) in mask.bits.iter().zip(&idmap.ids) {
        if on {
            overlap[id as usize] += 1;
        }
    }
    let mut winner = None;
    let mut best = 0usize;
    for (id, &n) in overlap.iter().enumerate().skip(1) {
        if n > best {
            best = n;
            winner = Some(id as u16);
        }
    }
    let fraction = best as f64 / size as f64;
    match winner {
        Some(id) if fraction >= tau => Ok((Some(id), fraction)),
        _ => Ok((None, fraction)),
    }
}

/// Full per-view segmenter. Grounding failures become abstentions; backend
/// and input errors propagate.
pub fn segment_view(
    backend: &dyn GroundingBackend,
    view: &ViewContext<'_>,
    query: &str,
    idmap: &IdentityMap,
    tau: f64,
) -> Result<GroundingOutcome> {
    let response = match ground_view(backend, view, query) {
        Ok(r) => r,
        Err(Error::GroundingFailed(msg)) => {
            log::debug!("view {} abstains: {msg}", view.camera_id);
            return Ok(GroundingOutcome::abstain(view.camera_id));
        }
        Err(e) => return Err(e),
    };
    let mask = match box_to_mask(backend, view, &response.bbox) {
        Ok(m) => m,
        Err(Error::GroundingFailed(msg)) => {
            log::debug!("view {} abstains: {msg}", view.camera_id);
            let mut out = GroundingOutcome::abstain(view.camera_id);
            out.response = Some(response);
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    let (instance_id, overlap_fraction) = infer_instance_id(&mask, idmap, tau)?;
    Ok(GroundingOutcome {
        camera_id: view.camera_id,
        response: Some(response),
        mask2d: Some(mask),
        instance_id,
        overlap_fraction,
    })
}
