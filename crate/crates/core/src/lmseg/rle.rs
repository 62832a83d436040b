//! Uncompressed run-length masks as returned by the remote mask service.
//!
//! Runs alternate background/foreground starting with background and walk
//! the pixels in column-major order (the COCO convention).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Mask2D;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`
    pub size: [usize; 2],
    pub counts: Vec<usize>,
}

pub fn decode_rle(rle: &Rle) -> Result<Mask2D> {
    let [h, w] = rle.size;
    let total: usize = rle.counts.iter().sum();
    if total != w * h {
        return Err(Error::Backend {
            attempts: 1,
            message: format!("RLE covers {total} pixels, expected {}", w * h),
        });
    }
    let mut mask = Mask2D::new(w, h);
    let mut i = 0usize;
    for (run, &n) in rle.counts.iter().enumerate() {
        if run % 2 == 1 {
            for k in i..i + n {
                mask.set(k / h, k % h, true);
            }
        }
        i += n;
    }
    Ok(mask)
}

pub fn encode_rle(mask: &Mask2D) -> Rle {
    let (w, h) = (mask.width, mask.height);
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0usize;
    for k in 0..w * h {
        let v = mask.get(k / h, k % h);
        if v != current {
            counts.push(run);
            run = 0;
            current = v;
        }
        run += 1;
    }
    counts.push(run);
    Rle { size: [h, w], counts }
}
