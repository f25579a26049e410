//! Deterministic synthetic images used by tests, examples and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

/// Head-like phantom in [0, 255]: bright elliptic rim, textured interior,
/// a few inner structures of different contrast, two high-contrast checker
/// marks in the corners (2×2 pixel cells at n = 64), mild seeded noise.
/// Rendered on a 4x finer grid and box-averaged, so edges are antialiased and
/// the noise behaves like that of a downsampled photograph.
pub fn phantom(n: usize) -> Image {
    const SUB: usize = 4;
    let m = n * SUB;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let s = m as f64;
    let mut fine = vec![0.0; m * m];
    for j in 0..m {
        for i in 0..m {
            let x = (i as f64 + 0.5) / s * 2.0 - 1.0;
            let y = (j as f64 + 0.5) / s * 2.0 - 1.0;
            fine[j * m + i] = head(x, y) + rng.random_range(-6.0..6.0);
        }
    }
    Image::from_fn(n, n, |i, j| {
        let mut acc = 0.0;
        for b in 0..SUB {
            let row = &fine[(j * SUB + b) * m + i * SUB..][..SUB];
            acc += row.iter().sum::<f64>();
        }
        (acc / (SUB * SUB) as f64).clamp(0.0, 255.0)
    })
}

/// Checker marks cover [0.625, 0.9375] in |x| and |y|, top left and bottom right.
fn checker(x: f64, y: f64) -> Option<f64> {
    let inside = |t: f64| (0.625..0.9375).contains(&t.abs());
    if !(inside(x) && inside(y) && x * y > 0.0) {
        return None;
    }
    let cell = ((x + 1.0) * 16.0).floor() as i64 + ((y + 1.0) * 16.0).floor() as i64;
    Some(if cell % 2 == 0 { 20.0 } else { 240.0 })
}

fn head(x: f64, y: f64) -> f64 {
    let ell = |cx: f64, cy: f64, a: f64, b: f64| ((x - cx) / a).powi(2) + ((y - cy) / b).powi(2);
    if ell(0.0, 0.0, 0.82, 0.92) > 1.0 {
        if let Some(v) = checker(x, y) {
            return v;
        }
        return 30.0 + 20.0 * (y + 1.0);
    }
    if ell(0.0, 0.0, 0.72, 0.83) > 1.0 {
        return 230.0;
    }
    let mut v = 110.0 + 15.0 * (6.0 * x).sin() * (5.0 * y).cos();
    if ell(-0.3, -0.15, 0.18, 0.3) <= 1.0 {
        v = 60.0;
    }
    if ell(0.32, -0.1, 0.15, 0.25) <= 1.0 {
        v = 75.0;
    }
    if ell(0.0, 0.45, 0.25, 0.12) <= 1.0 {
        v = 170.0;
    }
    if ell(0.05, 0.1, 0.06, 0.06) <= 1.0 {
        v = 200.0;
    }
    v
}

/// Vertical stripes of width `width` alternating between 50 and 200.
pub fn stripes(nx: usize, ny: usize, width: usize) -> Image {
    Image::from_fn(nx, ny, |i, _| if (i / width.max(1)) % 2 == 0 { 50.0 } else { 200.0 })
}

/// Left half 50, right half 200.
pub fn step(nx: usize, ny: usize) -> Image {
    Image::from_fn(nx, ny, |i, _| if 2 * i < nx { 50.0 } else { 200.0 })
}

/// Seeded uniform noise in [lo, hi).
pub fn random(nx: usize, ny: usize, lo: f64, hi: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..nx * ny).map(|_| rng.random_range(lo..hi)).collect();
    Image::new(nx, ny, data).expect("length matches")
}
