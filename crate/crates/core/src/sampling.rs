//! Seeded low-discrepancy sample points in a coordinate box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    out
}

/// `count` Halton points in `bounds` with a Cranley–Patterson rotation drawn
/// from `seed`. Points stay strictly inside the box: the unit coordinates are
/// mapped to `[lo + δ, hi - δ]` with `δ = 1e-6 (hi - lo)`.
pub fn halton_box(bounds: &[(f64, f64)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(bounds.len() <= PRIMES.len(), "too many dimensions for Halton sampling");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = bounds.iter().map(|_| rng.random::<f64>()).collect();
    (1..=count as u64)
        .map(|i| {
            bounds
                .iter()
                .enumerate()
                .map(|(k, &(lo, hi))| {
                    let u = (radical_inverse(i, PRIMES[k]) + shift[k]).fract();
                    let d = 1e-6 * (hi - lo);
                    lo + d + u * (hi - lo - 2.0 * d)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inside_box_and_deterministic() {
        let b = [(0.0, 1.0), (-2.0, 3.0), (5.0, 5.5)];
        let p = halton_box(&b, 200, 42);
        assert_eq!(p.len(), 200);
        assert!(p.iter().all(|q| q.iter().zip(&b).all(|(v, (lo, hi))| v > lo && v < hi)));
        assert_eq!(p, halton_box(&b, 200, 42));
        assert_ne!(p, halton_box(&b, 200, 43));
    }

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert_eq!(radical_inverse(4, 2), 0.125);
    }
}
