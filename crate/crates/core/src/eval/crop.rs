//! Object-centred square crops for metric extraction.

use crate::error::{Error, Result};
use crate::image::{BBox, ImageBuffer, MaskBuffer};
use crate::scalar::Scalar;

/// Crop side relative to the longer bounding-box side.
pub const CROP_MARGIN: f64 = 1.2;

fn place(lo: usize, hi: usize, side: usize, frame: usize) -> usize {
    let centre2 = lo + hi;
    let start = (centre2 as i64 - side as i64).div_euclid(2);
    let min_start = hi.saturating_sub(side);
    let max_start = lo.min(frame - side);
    (start.max(0) as usize).clamp(min_start, max_start)
}

/// The crop rectangle: a `CROP_MARGIN x` square around the mask's bounding
/// box, shifted (and if necessary shrunk) to lie inside the frame while
/// still containing the box.
pub fn crop_rect<T: Scalar>(mask: &MaskBuffer<T>) -> Result<BBox> {
    let bb = mask.bbox().ok_or(Error::EmptyMask)?;
    let (h, w) = (mask.height(), mask.width());
    let side = (CROP_MARGIN * bb.height().max(bb.width()) as f64).round() as usize;
    let sh = side.clamp(bb.height(), h);
    let sw = side.clamp(bb.width(), w);
    let top = place(bb.top, bb.bottom, sh, h);
    let left = place(bb.left, bb.right, sw, w);
    Ok(BBox {
        top,
        left,
        bottom: top + sh,
        right: left + sw,
    })
}

/// Crops `image` around the object in `mask` and resizes to `out_size`.
pub fn crop_to_object<T: Scalar>(image: &ImageBuffer<T>, mask: &MaskBuffer<T>, out_size: usize) -> Result<ImageBuffer<T>> {
    mask.same_size(image.height(), image.width(), "mask")?;
    if out_size == 0 {
        return Err(Error::Argument("crop output size must be positive".into()));
    }
    let rect = crop_rect(mask)?;
    Ok(image.crop(rect)?.resize(out_size, out_size))
}
