//! Bundled synthetic test images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{ImageGrid, Shape};

fn shape(n: usize) -> Shape {
    Shape::new(n, n).expect("synthetic images are at least 2x2")
}

/// Piecewise-constant image: a square and a disc on a flat background.
/// Designed at 32×32 and scaled with `n`.
pub fn piecewise_constant(n: usize) -> ImageGrid {
    let s = n as f64 / 32.0;
    ImageGrid::from_fn(shape(n), |i, j| {
        let (x, y) = (i as f64 + 0.5, j as f64 + 0.5);
        let (dx, dy) = (x - 21.0 * s, y - 20.0 * s);
        if (dx * dx + dy * dy).sqrt() < 7.0 * s {
            0.8
        } else if (4.0 * s..14.0 * s).contains(&x) && (5.0 * s..15.0 * s).contains(&y) {
            0.6
        } else {
            0.2
        }
    })
}

/// Geometric image made of tilted planes, a smooth bowl and a few edges,
/// so that second-order regularisers have something to preserve.
pub fn geometric(n: usize) -> ImageGrid {
    let s = n as f64 / 64.0;
    ImageGrid::from_fn(shape(n), |i, j| {
        let (x, y) = ((i as f64 + 0.5) / s, (j as f64 + 0.5) / s);
        let (dx, dy) = (x - 44.0, y - 42.0);
        let r2 = (dx * dx + dy * dy) / (15.0 * 15.0);
        if r2 < 1.0 {
            0.2 + 0.6 * r2
        } else if (6.0..30.0).contains(&x) && (8.0..32.0).contains(&y) {
            0.9 - 0.5 * (x + y - 14.0) / 48.0
        } else if y > 56.0 - 0.5 * x {
            0.1 + 0.5 * x / 64.0
        } else {
            0.35 + 0.3 * y / 64.0
        }
    })
}

/// Procedural corpus image `index` of size `n×n`: a graded background with a
/// few random rectangles and discs.
pub fn corpus_image(n: usize, index: usize, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let nf = n as f64;
    let base = rng.random_range(0.2..0.6);
    let gx = rng.random_range(-0.3..0.3) / nf;
    let gy = rng.random_range(-0.3..0.3) / nf;
    let shapes: Vec<(bool, f64, f64, f64, f64, f64)> = (0..rng.random_range(3..6))
        .map(|_| {
            (
                rng.random_bool(0.5),
                rng.random_range(0.0..nf),
                rng.random_range(0.0..nf),
                rng.random_range(0.1..0.3) * nf,
                rng.random_range(0.1..0.3) * nf,
                rng.random_range(0.05..0.95),
            )
        })
        .collect();
    ImageGrid::from_fn(shape(n), |i, j| {
        let (x, y) = (i as f64 + 0.5, j as f64 + 0.5);
        let mut v = base + gx * x + gy * y;
        for &(disc, cx, cy, a, b, val) in &shapes {
            let inside = if disc {
                ((x - cx) / a).powi(2) + ((y - cy) / b).powi(2) < 1.0
            } else {
                (x - cx).abs() < a && (y - cy).abs() < b
            };
            if inside {
                v = val;
            }
        }
        v
    })
}

/// The `count`-image procedural corpus, ids `synth-00`, `synth-01`, ...
pub fn corpus(n: usize, count: usize, seed: u64) -> Vec<(String, ImageGrid)> {
    (0..count).map(|k| (format!("synth-{k:02}"), corpus_image(n, k, seed))).collect()
}
