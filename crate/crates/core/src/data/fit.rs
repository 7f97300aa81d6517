use crate::error::{Error, Result};
use crate::image::{BBox, ImageBuffer, MaskBuffer};
use crate::scalar::Scalar;

/// Letterboxed placement of a `src_h x src_w` box inside `dst`, keeping
/// aspect ratio and centring the result.
pub fn letterbox(src_h: usize, src_w: usize, dst: &BBox) -> BBox {
    let s = (dst.height() as f64 / src_h as f64).min(dst.width() as f64 / src_w as f64);
    let nh = ((src_h as f64 * s).round() as usize).clamp(1, dst.height());
    let nw = ((src_w as f64 * s).round() as usize).clamp(1, dst.width());
    let top = dst.top + (dst.height() - nh) / 2;
    let left = dst.left + (dst.width() - nw) / 2;
    BBox {
        top,
        left,
        bottom: top + nh,
        right: left + nw,
    }
}

/// Pastes the object (cropped to its mask's bounding box and resized to fit
/// the target mask's bounding box) over `background`. Only object pixels
/// are pasted; everything else keeps the background value.
pub fn fit_object_in_mask<T: Scalar>(
    object_image: &ImageBuffer<T>,
    object_mask: &MaskBuffer<T>,
    background: &ImageBuffer<T>,
    mask: &MaskBuffer<T>,
) -> Result<ImageBuffer<T>> {
    object_mask.same_size(object_image.height(), object_image.width(), "object mask")?;
    mask.same_size(background.height(), background.width(), "mask")?;
    let target = mask.bbox().ok_or(Error::EmptyMask)?;
    let src = object_mask.bbox().ok_or(Error::EmptyMask)?;
    let place = letterbox(src.height(), src.width(), &target);

    let obj = object_image.crop(src)?.resize(place.height(), place.width());
    let om = object_mask.crop(src).resize_nearest(place.height(), place.width());

    let mut out = background.clone();
    for r in 0..place.height() {
        for c in 0..place.width() {
            if om.is_on(r, c) {
                out.set_pixel(place.top + r, place.left + c, obj.pixel(r, c));
            }
        }
    }
    Ok(out)
}
