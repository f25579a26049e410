//! Grey-value images on a regular grid, stacked row-major into vectors.
//!
//! Pixel `(i, j)` (column `i`, row `j`) lives at index `j * nx + i`. Grid
//! spacing is 1 in both directions and boundaries are reflecting: the
//! extension mirrors about the pixel edge, so `f(-1) = f(0)`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{argument, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return argument(format!("image dimensions must be positive, got {nx}x{ny}"));
        }
        if data.len() != nx * ny {
            return argument(format!(
                "image data has {} values, expected {}x{} = {}",
                data.len(),
                nx,
                ny,
                nx * ny
            ));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return argument(format!("non-finite grey value at index {k}"));
        }
        Ok(Self { nx, ny, data })
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self::constant(nx, ny, 0.0)
    }

    pub fn constant(nx: usize, ny: usize, value: f64) -> Self {
        assert!(nx > 0 && ny > 0, "image dimensions must be positive");
        Self {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    /// Builds an image by evaluating `f(i, j)` at every pixel.
    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(nx > 0 && ny > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                data.push(f(i, j));
            }
        }
        Self { nx, ny, data }
    }

    /// Unit impulse at pixel `(i, j)`.
    pub fn impulse(nx: usize, ny: usize, i: usize, j: usize) -> Self {
        let mut img = Self::zeros(nx, ny);
        let k = img.index(i, j);
        img.data[k] = 1.0;
        img
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.index(i, j);
        self.data[k] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Wraps a vector of matching length without re-validating finiteness.
    pub(crate) fn from_vec_unchecked(nx: usize, ny: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), nx * ny);
        Self { nx, ny, data }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Value at a possibly out-of-range coordinate under mirror extension.
    #[inline]
    pub fn get_reflected(&self, i: isize, j: isize) -> f64 {
        self.get(reflect(i, self.nx), reflect(j, self.ny))
    }
}

/// Maps an arbitrary integer coordinate into `0..n` by half-sample
/// symmetric reflection (`-1 -> 0`, `n -> n - 1`), repeated as often as needed.
#[inline]
pub fn reflect(k: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = k.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

/// Binary inpainting mask; `true` marks a known pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    nx: usize,
    ny: usize,
    indicator: Vec<bool>,
}

impl Mask {
    pub fn new(nx: usize, ny: usize, indicator: Vec<bool>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return argument("mask dimensions must be positive");
        }
        if indicator.len() != nx * ny {
            return argument(format!(
                "mask has {} entries, expected {}",
                indicator.len(),
                nx * ny
            ));
        }
        Ok(Self { nx, ny, indicator })
    }

    pub fn empty(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            indicator: vec![false; nx * ny],
        }
    }

    pub fn full(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            indicator: vec![true; nx * ny],
        }
    }

    pub fn from_indices(nx: usize, ny: usize, indices: &[usize]) -> Result<Self> {
        let mut mask = Self::empty(nx, ny);
        for &k in indices {
            if k >= nx * ny {
                return argument(format!("mask index {k} out of range"));
            }
            mask.indicator[k] = true;
        }
        Ok(mask)
    }

    /// Uniformly samples `count` distinct mask pixels with a seeded generator.
    pub fn random(nx: usize, ny: usize, count: usize, seed: u64) -> Result<Self> {
        let n = nx * ny;
        if count > n {
            return argument(format!("cannot pick {count} mask pixels out of {n}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picked: Vec<usize> = sample(&mut rng, n, count).into_vec();
        Self::from_indices(nx, ny, &picked)
    }

    /// Interprets grey value 255 as a mask pixel, 0 as unknown.
    pub fn from_image(img: &Image) -> Result<Self> {
        let mut indicator = Vec::with_capacity(img.len());
        for (k, &v) in img.data().iter().enumerate() {
            if v == 255.0 {
                indicator.push(true);
            } else if v == 0.0 {
                indicator.push(false);
            } else {
                return argument(format!(
                    "mask value {v} at index {k}; expected 0 or 255"
                ));
            }
        }
        Self::new(img.nx(), img.ny(), indicator)
    }

    pub fn to_image(&self) -> Image {
        Image::from_vec_unchecked(
            self.nx,
            self.ny,
            self.indicator
                .iter()
                .map(|&b| if b { 255.0 } else { 0.0 })
                .collect(),
        )
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.indicator.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicator.is_empty()
    }

    #[inline]
    pub fn is_set(&self, k: usize) -> bool {
        self.indicator[k]
    }

    pub fn count(&self) -> usize {
        self.indicator.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.indicator
            .iter()
            .enumerate()
            .filter_map(|(k, &b)| b.then_some(k))
            .collect()
    }

    pub fn indicator(&self) -> &[bool] {
        &self.indicator
    }
}

/// Dense optic flow field `w = (u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub nx: usize,
    pub ny: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn new(nx: usize, ny: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != nx * ny || v.len() != nx * ny {
            return argument("flow components must both have nx*ny entries");
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return argument("flow field contains non-finite values");
        }
        Ok(Self { nx, ny, u, v })
    }

    /// Stacks `(u, v)` into one vector of length `2N`.
    pub fn stacked(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.u.len());
        out.extend_from_slice(&self.u);
        out.extend_from_slice(&self.v);
        out
    }

    pub fn from_stacked(nx: usize, ny: usize, w: &[f64]) -> Result<Self> {
        let n = nx * ny;
        if w.len() != 2 * n {
            return argument(format!("stacked flow has {} values, expected {}", w.len(), 2 * n));
        }
        Self::new(nx, ny, w[..n].to_vec(), w[n..].to_vec())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);
    kernel
}

/// Separable convolution with a sampled Gaussian truncated at `ceil(3σ)` and
/// renormalised to unit sum. `sigma = 0` returns the input unchanged.
pub fn gaussian_convolve(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return argument(format!("gaussian sigma must be finite and >= 0, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (nx, ny) = (img.nx(), img.ny());

    let mut tmp = vec![0.0; nx * ny];
    for j in 0..ny {
        let row = &img.data()[j * nx..(j + 1) * nx];
        for i in 0..nx {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let src = reflect(i as isize + t as isize - radius, nx);
                acc += w * row[src];
            }
            tmp[j * nx + i] = acc;
        }
    }
    let mut out = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let src = reflect(j as isize + t as isize - radius, ny);
                acc += w * tmp[src * nx + i];
            }
            out[j * nx + i] = acc;
        }
    }
    Ok(Image::from_vec_unchecked(nx, ny, out))
}

/// Central differences with reflecting boundaries.
pub fn gradient(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny) = (img.nx(), img.ny());
    let mut gx = vec![0.0; nx * ny];
    let mut gy = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let (ii, jj) = (i as isize, j as isize);
            let k = j * nx + i;
            gx[k] = 0.5 * (img.get_reflected(ii + 1, jj) - img.get_reflected(ii - 1, jj));
            gy[k] = 0.5 * (img.get_reflected(ii, jj + 1) - img.get_reflected(ii, jj - 1));
        }
    }
    (gx, gy)
}

/// Squared gradient magnitude of the σ-presmoothed image.
pub fn smoothed_gradient(img: &Image, sigma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let smoothed = gaussian_convolve(img, sigma)?;
    Ok(gradient(&smoothed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_row_major_bijection() {
        let img = Image::zeros(5, 3);
        let mut seen = vec![false; 15];
        for j in 0..3 {
            for i in 0..5 {
                let k = img.index(i, j);
                assert_eq!(k, j * 5 + i);
                assert_eq!(img.coords(k), (i, j));
                assert!(!seen[k]);
                seen[k] = true;
            }
        }
        assert!(seen.into_iter().all(|b| b));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Image::new(0, 3, vec![]).is_err());
        assert!(Image::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Image::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn reflect_mirrors_about_pixel_edge() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
        assert_eq!(reflect(8, 4), 0);
        assert_eq!(reflect(-9, 4), 0);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn gaussian_sigma_zero_is_identity() {
        let img = Image::from_fn(7, 5, |i, j| (i * 3 + j * 11) as f64);
        assert_eq!(gaussian_convolve(&img, 0.0).unwrap(), img);
    }

    #[test]
    fn gaussian_negative_sigma_is_error() {
        let img = Image::zeros(3, 3);
        assert!(gaussian_convolve(&img, -0.5).is_err());
    }

    #[test]
    fn gaussian_keeps_constants() {
        let img = Image::constant(9, 6, 42.5);
        for sigma in [0.3, 1.0, 2.5, 7.0] {
            let out = gaussian_convolve(&img, sigma).unwrap();
            for &v in out.data() {
                assert!((v - 42.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_impulse_matches_sampled_kernel() {
        // Oracle: direct 2-D evaluation of the separable, renormalised kernel.
        let sigma: f64 = 2.0;
        let img = Image::impulse(64, 64, 32, 32);
        let out = gaussian_convolve(&img, sigma).unwrap();
        let norm: f64 = (-6..=6)
            .map(|k: i32| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
            .sum();
        for j in 26..=38 {
            for i in 26..=38 {
                let dx = i as f64 - 32.0;
                let dy = j as f64 - 32.0;
                let expected = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp() / (norm * norm);
                assert!((out.get(i, j) - expected).abs() < 1e-6);
            }
        }
        assert_eq!(out.get(20, 32), 0.0);
    }

    #[test]
    fn gaussian_preserves_sum() {
        let img = Image::from_fn(13, 9, |i, j| ((i * 7 + j * 5) % 11) as f64);
        for sigma in [0.5, 1.5, 4.0, 12.0] {
            let out = gaussian_convolve(&img, sigma).unwrap();
            assert!((out.sum() - img.sum()).abs() < 1e-9 * img.sum());
        }
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let (gx, gy) = gradient(&Image::constant(6, 4, 3.0));
        assert!(gx.iter().chain(gy.iter()).all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_of_ramp() {
        let img = Image::from_fn(8, 5, |i, _| i as f64);
        let (gx, gy) = gradient(&img);
        for j in 0..5 {
            for i in 1..7 {
                assert_eq!(gx[img.index(i, j)], 1.0);
            }
            // Mirrored neighbour equals the boundary pixel itself.
            assert_eq!(gx[img.index(0, j)], 0.5);
            assert_eq!(gx[img.index(7, j)], 0.5);
        }
        assert!(gy.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn random_mask_is_seeded() {
        let a = Mask::random(16, 16, 5, 3).unwrap();
        let b = Mask::random(16, 16, 5, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.count(), 5);
        assert!(Mask::random(2, 2, 5, 0).is_err());
    }

    #[test]
    fn mask_image_round_trip() {
        let m = Mask::from_indices(4, 4, &[0, 5, 15]).unwrap();
        assert_eq!(Mask::from_image(&m.to_image()).unwrap(), m);
        let bad = Image::constant(2, 2, 17.0);
        assert!(Mask::from_image(&bad).is_err());
    }
}
