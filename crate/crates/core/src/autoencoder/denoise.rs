//! Extrinsic denoising corruptions applied to training inputs.

use rand::seq::index::sample;
use rand::Rng;

use crate::numerics::FeatureMap;

/// `round(fraction * n)` with halves away from zero, clamped to `n`.
pub fn count_from_fraction(fraction: f64, n: usize) -> usize {
    ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n)
}

/// Zeroes `round(fraction * c)` distinct, uniformly chosen channels.
pub fn corrupt_channels<R: Rng + ?Sized>(x: &FeatureMap, fraction: f64, rng: &mut R) -> FeatureMap {
    let c = x.channels();
    let n = count_from_fraction(fraction, c);
    let mut out = x.clone();
    if n == 0 {
        return out;
    }
    let chosen = sample(rng, c, n).into_vec();
    for v in out.data_mut().chunks_exact_mut(c) {
        for &k in &chosen {
            v[k] = 0.0;
        }
    }
    out
}

/// Swaps the full feature vectors of `round(fraction * w * h / 2)` disjoint,
/// uniformly chosen position pairs.
pub fn exchange_vectors<R: Rng + ?Sized>(x: &FeatureMap, fraction: f64, rng: &mut R) -> FeatureMap {
    let positions = x.width() * x.height();
    let pairs = exchange_count(fraction, positions);
    let mut out = x.clone();
    if pairs == 0 {
        return out;
    }
    let c = x.channels();
    let picked = sample(rng, positions, 2 * pairs).into_vec();
    let data = out.data_mut();
    for pair in picked.chunks_exact(2) {
        let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
        let (lo, hi) = data.split_at_mut(b * c);
        lo[a * c..(a + 1) * c].swap_with_slice(&mut hi[..c]);
    }
    out
}

/// Number of swapped pairs for a map with `positions` spatial cells.
pub fn exchange_count(fraction: f64, positions: usize) -> usize {
    let n = (fraction.clamp(0.0, 1.0) * positions as f64 / 2.0).round() as usize;
    n.min(positions / 2)
}
