//! Seeded random sampling of domain points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_SEED: u64 = 0x5eed;
const MAX_REJECTIONS: usize = 100_000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draw `count` points uniformly from `[-radius, radius]^dim` that satisfy
/// `accept`; `None` if the acceptance rate is hopeless.
pub fn sample_points(
    rng: &mut impl Rng,
    dim: usize,
    radius: f64,
    count: usize,
    accept: impl Fn(&[f64]) -> bool,
) -> Option<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(count);
    let mut rejected = 0;
    while out.len() < count {
        let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(-radius..=radius)).collect();
        if accept(&p) {
            out.push(p);
        } else {
            rejected += 1;
            if rejected > MAX_REJECTIONS {
                return None;
            }
        }
    }
    Some(out)
}
