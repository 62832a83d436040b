//! Mask overlap metrics.

use crate::error::{Error, Result};
use crate::scene::Mask2D;

fn check(pred: &Mask2D, gt: &Mask2D) -> Result<()> {
    if pred.same_shape(gt) {
        Ok(())
    } else {
        Err(Error::dim(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )))
    }
}

fn iou_bits(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection over union; two empty masks score 1.
pub fn miou(pred: &Mask2D, gt: &Mask2D) -> Result<f64> {
    check(pred, gt)?;
    Ok(iou_bits(&pred.bits, &gt.bits))
}

/// Default boundary band: 2% of the image diagonal, rounded.
pub fn default_band(width: usize, height: usize) -> usize {
    (0.02 * ((width * width + height * height) as f64).sqrt()).round() as usize
}

/// Erosion by a `(2r+1)²` square; pixels outside the image count as empty.
pub fn erode(mask: &Mask2D, radius: usize) -> Mask2D {
    let (w, h) = (mask.width, mask.height);
    // separable: horizontal then vertical run test
    let mut horiz = Mask2D::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let ok = x >= radius
                && x + radius < w
                && (x - radius..=x + radius).all(|xx| mask.get(xx, y));
            horiz.set(x, y, ok);
        }
    }
    let mut out = Mask2D::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let ok = y >= radius
                && y + radius < h
                && (y - radius..=y + radius).all(|yy| horiz.get(x, yy));
            out.set(x, y, ok);
        }
    }
    out
}

/// Mask pixels within `radius` (Chebyshev) of the outside.
pub fn boundary_band(mask: &Mask2D, radius: usize) -> Mask2D {
    let eroded = erode(mask, radius);
    Mask2D {
        width: mask.width,
        height: mask.height,
        bits: mask
            .bits
            .iter()
            .zip(&eroded.bits)
            .map(|(&m, &e)| m && !e)
            .collect(),
    }
}

/// IoU of the boundary bands; two empty bands score 1. `band_px = None`
/// uses [`default_band`].
pub fn mbiou(pred: &Mask2D, gt: &Mask2D, band_px: Option<usize>) -> Result<f64> {
    check(pred, gt)?;
    let r = band_px.unwrap_or_else(|| default_band(gt.width, gt.height));
    Ok(iou_bits(&boundary_band(pred, r).bits, &boundary_band(gt, r).bits))
}
