use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default maximum frame gap between the two frames of a video pair.
pub const DEFAULT_TEMPORAL_WINDOW: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VideoPairSpec {
    pub frame_count: usize,
    pub window: usize,
    pub rng_seed: u64,
}

/// Number of ordered frame pairs `(a, b)` with `1 <= |a - b| <= window`.
pub fn admissible_pair_count(frame_count: usize, window: usize) -> usize {
    let max_gap = window.min(frame_count.saturating_sub(1));
    (1..=max_gap).map(|d| 2 * (frame_count - d)).sum()
}

/// Draws an ordered pair of distinct frames at most `window` apart,
/// uniformly over all admissible pairs.
pub fn sample_frame_pair_with<R: Rng + ?Sized>(
    frame_count: usize,
    window: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if frame_count < 2 {
        return Err(Error::InsufficientFrames(frame_count));
    }
    if window == 0 {
        return Err(Error::Config("temporal window must be >= 1".into()));
    }
    let total = admissible_pair_count(frame_count, window);
    let mut k = rng.random_range(0..total);
    for d in 1.. {
        let n = 2 * (frame_count - d);
        if k < n {
            let a = k / 2;
            return Ok(if k % 2 == 0 { (a, a + d) } else { (a + d, a) });
        }
        k -= n;
    }
    unreachable!()
}

pub fn sample_frame_pair(spec: &VideoPairSpec) -> Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    sample_frame_pair_with(spec.frame_count, spec.window, &mut rng)
}
