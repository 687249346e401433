//! Procedurally generated 8×8 grayscale patterns for desk-scale training
//! and simulation: oriented gradients, bars, and Gaussian blobs, cycled in
//! that order. Values lie in `[0, 1]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Side of the square patterns.
pub const PATTERN_SIDE: usize = 8;
/// Flattened dimension of one pattern.
pub const PATTERN_DIM: usize = PATTERN_SIDE * PATTERN_SIDE;

/// Generate `n` patterns from a seed.
pub fn toy_patterns(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| pattern(i % 3, &mut rng)).collect()
}

fn pattern<R: Rng + ?Sized>(kind: usize, rng: &mut R) -> Vec<f64> {
    let mut img = vec![0.0; PATTERN_DIM];
    match kind {
        0 => {
            // linear gradient with random orientation
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let (s, c) = theta.sin_cos();
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for y in 0..PATTERN_SIDE {
                for x in 0..PATTERN_SIDE {
                    let v = c * x as f64 + s * y as f64;
                    img[y * PATTERN_SIDE + x] = v;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            let span = (hi - lo).max(1e-9);
            for v in &mut img {
                *v = (*v - lo) / span;
            }
        }
        1 => {
            // axis-aligned bars
            let width = rng.gen_range(1..4usize);
            let phase = rng.gen_range(0..PATTERN_SIDE);
            let vertical = rng.gen::<bool>();
            for y in 0..PATTERN_SIDE {
                for x in 0..PATTERN_SIDE {
                    let coord = if vertical { x } else { y };
                    img[y * PATTERN_SIDE + x] = (((coord + phase) / width) % 2) as f64;
                }
            }
        }
        _ => {
            // Gaussian blob
            let cx = rng.gen_range(1.0..7.0);
            let cy = rng.gen_range(1.0..7.0);
            let sigma = rng.gen_range(0.8..2.5);
            for y in 0..PATTERN_SIDE {
                for x in 0..PATTERN_SIDE {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    img[y * PATTERN_SIDE + x] = (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
    }
    img
}
