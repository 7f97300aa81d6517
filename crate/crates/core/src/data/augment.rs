//! Geometric and photometric object augmentation: `P(T(object))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::lut::{apply_lut, Lut3D};
use crate::error::{Error, Result};
use crate::image::{ImageBuffer, MaskBuffer};
use crate::scalar::Scalar;

pub const MAX_ROTATION_DEG: f64 = 30.0;
pub const MAX_TRANSLATE: f64 = 0.25;

/// Affine map about the image centre: flip, rotate, scale, then translate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub rotation_deg: f64,
    pub scale: f64,
    /// `(dy, dx)` as fractions of height and width.
    pub translate: (f64, f64),
    pub horizontal_flip: bool,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        rotation_deg: 0.0,
        scale: 1.0,
        translate: (0.0, 0.0),
        horizontal_flip: false,
    };

    /// Maps a source pixel coordinate to its destination `(y, x)`.
    pub fn forward(&self, h: usize, w: usize, y: f64, x: f64) -> (f64, f64) {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (mut u, v) = (x - cx, y - cy);
        if self.horizontal_flip {
            u = -u;
        }
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let xr = c * u - s * v;
        let yr = s * u + c * v;
        (
            cy + self.scale * yr + self.translate.0 * h as f64,
            cx + self.scale * xr + self.translate.1 * w as f64,
        )
    }

    /// Maps a destination pixel coordinate back to the source.
    pub fn inverse(&self, h: usize, w: usize, y: f64, x: f64) -> (f64, f64) {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let yr = (y - cy - self.translate.0 * h as f64) / self.scale;
        let xr = (x - cx - self.translate.1 * w as f64) / self.scale;
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let mut u = c * xr + s * yr;
        let v = -s * xr + c * yr;
        if self.horizontal_flip {
            u = -u;
        }
        (cy + v, cx + u)
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Warps image (bilinear) and mask (nearest, re-binarized) with the same
/// geometry. Pixels mapping outside the source become 0.
pub fn warp_affine<T: Scalar>(
    image: &ImageBuffer<T>,
    mask: &MaskBuffer<T>,
    t: &Affine,
) -> Result<(ImageBuffer<T>, MaskBuffer<T>)> {
    mask.same_size(image.height(), image.width(), "augment")?;
    let (h, w) = (image.height(), image.width());
    if *t == Affine::IDENTITY {
        return Ok((image.clone(), mask.binarized()));
    }
    let mut img = ImageBuffer::zeros(h, w)?;
    let mut mdata = vec![T::zero(); h * w];
    for r in 0..h {
        for c in 0..w {
            let (sy, sx) = t.inverse(h, w, r as f64, c as f64);
            let (sy, sx) = (snap(sy), snap(sx));
            img.set_pixel(r, c, image.sample_bilinear(sy, sx));
            let (ny, nx) = (sy.round(), sx.round());
            if ny >= 0.0 && nx >= 0.0 && ny < h as f64 && nx < w as f64 && mask.is_on(ny as usize, nx as usize) {
                mdata[r * w + c] = T::one();
            }
        }
    }
    Ok((img, MaskBuffer::new(h, w, mdata)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub affine: Affine,
    pub lut: Lut3D,
    pub rng_seed: u64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            affine: Affine::IDENTITY,
            lut: Lut3D::identity(2).expect("valid"),
            rng_seed: 0,
        }
    }

    /// Draws rotation in ±30°, scale in [0.8, 1.2], translation ±10%,
    /// a fair-coin flip and a random colour LUT, all from `rng_seed`.
    pub fn sample(rng_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let affine = Affine {
            rotation_deg: rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
            scale: rng.random_range(0.8..=1.2),
            translate: (rng.random_range(-0.1..=0.1), rng.random_range(-0.1..=0.1)),
            horizontal_flip: rng.random_bool(0.5),
        };
        let lut = Lut3D::random_perturbation(&mut rng);
        AugmentParams {
            affine,
            lut,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.affine;
        if a.scale.is_nan() || a.scale <= 0.0 {
            return Err(Error::Argument(format!("scale must be > 0, got {}", a.scale)));
        }
        if a.translate.0.abs() > MAX_TRANSLATE || a.translate.1.abs() > MAX_TRANSLATE {
            return Err(Error::Argument(format!("translation {:?} exceeds 0.25", a.translate)));
        }
        if a.rotation_deg.abs() > MAX_ROTATION_DEG {
            return Err(Error::Argument(format!(
                "rotation {}° outside ±30°",
                a.rotation_deg
            )));
        }
        Ok(())
    }
}

/// Applies the affine part to image and mask, then the colour LUT to the
/// image only.
pub fn augment_object<T: Scalar>(
    object_image: &ImageBuffer<T>,
    mask: &MaskBuffer<T>,
    params: &AugmentParams,
) -> Result<(ImageBuffer<T>, MaskBuffer<T>)> {
    params.validate()?;
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (img, m) = warp_affine(object_image, mask, &params.affine)?;
    if m.is_empty() {
        return Err(Error::DegenerateAugmentation(
            "transform moves the object fully out of frame".into(),
        ));
    }
    Ok((apply_lut(&img, &params.lut), m))
}
