//! Coarse mask generation at four precision levels.
//!
//! Level 1 dilates the object support, level 2 takes the convex hull of
//! the dilation, level 3 circumscribes the hull with a random 5-8 sided
//! polygon and level 4 is the tight bounding box. Levels 1-3 are clipped
//! to the level-4 box, so `input ⊆ L1 ⊆ L2 ⊆ L3 ⊆ L4` holds per pixel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{BBox, MaskBuffer};
use crate::scalar::Scalar;

/// Mask precision level, 1 (finest) through 4 (bounding box).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MaskLevel(u8);

impl MaskLevel {
    pub const BOX: MaskLevel = MaskLevel(4);

    pub fn new(level: u8) -> Result<Self> {
        if !(1..=4).contains(&level) {
            return Err(Error::Argument(format!("mask level must be 1..=4, got {level}")));
        }
        Ok(MaskLevel(level))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> [MaskLevel; 4] {
        [MaskLevel(1), MaskLevel(2), MaskLevel(3), MaskLevel(4)]
    }
}

/// Dilation radius: 2% of the support's bounding-box diagonal, at least 1px.
pub fn dilation_radius(bbox: &BBox) -> usize {
    ((0.02 * bbox.diagonal()).round() as usize).max(1)
}

pub fn coarsen_mask<T: Scalar>(mask: &MaskBuffer<T>, level: MaskLevel, rng_seed: u64) -> Result<MaskBuffer<T>> {
    let bbox = mask.bbox().ok_or(Error::EmptyMask)?;
    let (h, w) = (mask.height(), mask.width());
    if level.get() == 4 {
        return MaskBuffer::from_fn(h, w, |r, c| bbox.contains(r, c));
    }

    let support: Vec<bool> = (0..h * w).map(|i| mask.is_on(i / w, i % w)).collect();
    let dilated = dilate(&support, h, w, dilation_radius(&bbox));
    if level.get() == 1 {
        return MaskBuffer::from_fn(h, w, |r, c| bbox.contains(r, c) && dilated[r * w + c]);
    }

    let points: Vec<(f64, f64)> = (0..h * w)
        .filter(|&i| dilated[i])
        .map(|i| ((i % w) as f64, (i / w) as f64))
        .collect();
    let hull = convex_hull(points);
    if level.get() == 2 {
        return MaskBuffer::from_fn(h, w, |r, c| {
            bbox.contains(r, c) && (dilated[r * w + c] || inside_convex(&hull, c as f64, r as f64))
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let planes = circumscribing_planes(&hull, &mut rng);
    MaskBuffer::from_fn(h, w, |r, c| {
        let (x, y) = (c as f64, r as f64);
        bbox.contains(r, c) && planes.iter().all(|&(nx, ny, d)| nx * x + ny * y <= d + 1e-9)
    })
}

fn dilate(src: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    let rad = radius as isize;
    let offsets: Vec<(isize, isize)> = (-rad..=rad)
        .flat_map(|dy| (-rad..=rad).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy * dy + dx * dx <= rad * rad)
        .collect();
    let mut out = vec![false; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            if !src[(r as usize) * w + c as usize] {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (rr, cc) = (r + dy, c + dx);
                if rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize {
                    out[rr as usize * w + cc as usize] = true;
                }
            }
        }
    }
    out
}

/// Andrew's monotone chain; counter-clockwise in (x, y) with y pointing down.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside_convex(hull: &[(f64, f64)], x: f64, y: f64) -> bool {
    if hull.len() < 3 {
        return hull.iter().any(|&(hx, hy)| hx == x && hy == y);
    }
    (0..hull.len()).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0) >= -1e-9
    })
}

/// Half-planes `n . p <= d` supporting the hull along 5-8 random directions.
/// Angular gaps stay below pi, so their intersection is a bounded polygon
/// that contains the hull.
fn circumscribing_planes<R: Rng>(hull: &[(f64, f64)], rng: &mut R) -> Vec<(f64, f64, f64)> {
    let k = rng.random_range(5..=8);
    let step = std::f64::consts::TAU / k as f64;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    (0..k)
        .map(|i| {
            let theta = phase + step * (i as f64 + rng.random_range(-0.25..0.25));
            let (nx, ny) = (theta.cos(), theta.sin());
            let d = hull
                .iter()
                .map(|&(x, y)| nx * x + ny * y)
                .fold(f64::NEG_INFINITY, f64::max);
            (nx, ny, d)
        })
        .collect()
}
