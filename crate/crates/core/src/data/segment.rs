use crate::error::Result;
use crate::image::{ImageBuffer, MaskBuffer, CHANNELS};
use crate::scalar::Scalar;

/// Multiplies every channel of `image` by `mask`, removing the background.
pub fn segment_object<T: Scalar>(image: &ImageBuffer<T>, mask: &MaskBuffer<T>) -> Result<ImageBuffer<T>> {
    mask.same_size(image.height(), image.width(), "segment_object")?;
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * mask.data()[i / CHANNELS])
        .collect();
    ImageBuffer::new(image.height(), image.width(), data)
}
