//! Bilateral filtering and NL-means with explicit row-stochastic weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::image::{reflect, Image};
use crate::linalg::{check_len, LinearOperator, SparseMatrix};

/// Matrices with at most this many stored weights are cached; larger ones
/// recompute their rows on every application.
const CACHE_LIMIT: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilateralConfig {
    pub sigma_t: f64,
    pub sigma_s: f64,
    /// 0 means the whole domain.
    #[serde(default)]
    pub window_radius: usize,
}

impl BilateralConfig {
    fn validate(&self) -> Result<()> {
        if !(self.sigma_t > 0.0) || !(self.sigma_s > 0.0) {
            return argument("bilateral standard deviations must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NLMeansConfig {
    pub sigma: f64,
    pub patch_radius: usize,
    /// 0 means the whole domain.
    #[serde(default)]
    pub search_radius: usize,
}

impl NLMeansConfig {
    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return argument("NL-means sigma must be positive");
        }
        Ok(())
    }
}

/// Offsets `(di, dj)` with `di² + dj² ≤ r²`.
fn disk(r: usize) -> Vec<(isize, isize)> {
    let r = r as isize;
    let mut out = Vec::new();
    for dj in -r..=r {
        for di in -r..=r {
            if di * di + dj * dj <= r * r {
                out.push((di, dj));
            }
        }
    }
    out
}

/// Indices `j` considered for row `i`, paired with squared spatial distance.
fn neighbourhood(nx: usize, ny: usize, i: usize, radius: usize) -> Vec<(usize, f64)> {
    let (ci, cj) = ((i % nx) as isize, (i / nx) as isize);
    if radius == 0 {
        return (0..nx * ny)
            .map(|j| {
                let (di, dj) = ((j % nx) as isize - ci, (j / nx) as isize - cj);
                (j, (di * di + dj * dj) as f64)
            })
            .collect();
    }
    disk(radius)
        .into_iter()
        .filter_map(|(di, dj)| {
            let (x, y) = (ci + di, cj + dj);
            (x >= 0 && y >= 0 && (x as usize) < nx && (y as usize) < ny)
                .then(|| (y as usize * nx + x as usize, (di * di + dj * dj) as f64))
        })
        .collect()
}

fn normalise(mut row: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let sum: f64 = row.iter().map(|e| e.1).sum();
    for e in &mut row {
        e.1 /= sum;
    }
    row
}

#[derive(Debug, Clone)]
enum Kernel {
    Bilateral(BilateralConfig),
    NLMeans {
        cfg: NLMeansConfig,
        /// Patch vectors, `patch_len` values per pixel.
        patches: Vec<f64>,
        patch_len: usize,
    },
}

/// `P(f)` for a bilateral or NL-means filter. Forward multiplies by `P`, the
/// adjoint by `Pᵀ`.
#[derive(Debug, Clone)]
pub struct KernelOperator {
    f: Image,
    kernel: Kernel,
    cached: Option<SparseMatrix>,
}

impl KernelOperator {
    fn new(f: &Image, kernel: Kernel) -> Self {
        let mut op = Self {
            f: f.clone(),
            kernel,
            cached: None,
        };
        let n = f.len();
        let per_row = match &op.kernel {
            Kernel::Bilateral(c) => window_size(n, c.window_radius),
            Kernel::NLMeans { cfg, .. } => window_size(n, cfg.search_radius),
        };
        if per_row.saturating_mul(n) <= CACHE_LIMIT {
            let rows: Vec<Vec<(usize, f64)>> = (0..n).into_par_iter().map(|i| op.row(i)).collect();
            let sparse = SparseMatrix::from_rows(rows).expect("rows are in range and unique");
            op.cached = Some(sparse);
        }
        op
    }

    /// Nonzero pattern and values of row `i`, unit sum.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        let (nx, ny) = (self.f.nx(), self.f.ny());
        let f = self.f.data();
        match &self.kernel {
            Kernel::Bilateral(c) => {
                let (t2, s2) = (2.0 * c.sigma_t * c.sigma_t, 2.0 * c.sigma_s * c.sigma_s);
                normalise(
                    neighbourhood(nx, ny, i, c.window_radius)
                        .into_iter()
                        .map(|(j, d2)| {
                            let df = f[i] - f[j];
                            (j, (-df * df / t2).exp() * (-d2 / s2).exp())
                        })
                        .collect(),
                )
            }
            Kernel::NLMeans {
                cfg,
                patches,
                patch_len,
            } => {
                let s2 = 2.0 * cfg.sigma * cfg.sigma;
                let pi = &patches[i * patch_len..(i + 1) * patch_len];
                normalise(
                    neighbourhood(nx, ny, i, cfg.search_radius)
                        .into_iter()
                        .map(|(j, _)| {
                            let pj = &patches[j * patch_len..(j + 1) * patch_len];
                            let d2: f64 = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum();
                            (j, (-d2 / s2).exp())
                        })
                        .collect(),
                )
            }
        }
    }

    /// Dense row `i` as a length-N vector.
    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.f.len()];
        for (j, w) in self.row(i) {
            out[j] = w;
        }
        out
    }

    pub fn input(&self) -> &Image {
        &self.f
    }

    /// `P f`.
    pub fn filtered(&self) -> Image {
        let u = self.apply(self.f.data()).expect("operator matches its own input");
        Image::from_vec_unchecked(self.f.nx(), self.f.ny(), u)
    }
}

fn window_size(n: usize, radius: usize) -> usize {
    if radius == 0 {
        n
    } else {
        disk(radius).len().min(n)
    }
}

impl LinearOperator for KernelOperator {
    fn dim(&self) -> usize {
        self.f.len()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.dim())?;
        if let Some(p) = &self.cached {
            return Ok(p.mul_vec(x));
        }
        Ok((0..self.dim())
            .into_par_iter()
            .map(|i| self.row(i).into_iter().map(|(j, w)| w * x[j]).sum())
            .collect())
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(y, self.dim())?;
        if let Some(p) = &self.cached {
            return Ok(p.mul_vec_transposed(y));
        }
        let n = self.dim();
        let mut out = vec![0.0; n];
        // Rows are visited in order so that results do not depend on the
        // thread count.
        for i in 0..n {
            if y[i] != 0.0 {
                for (j, w) in self.row(i) {
                    out[j] += w * y[i];
                }
            }
        }
        Ok(out)
    }
}

/// Row `i` of the bilateral state transition matrix as a dense vector.
pub fn bilateral_row(f: &Image, cfg: &BilateralConfig, i: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    if i >= f.len() {
        return argument(format!("pixel index {i} out of range"));
    }
    let op = KernelOperator {
        f: f.clone(),
        kernel: Kernel::Bilateral(*cfg),
        cached: None,
    };
    Ok(op.dense_row(i))
}

pub fn bilateral_s(f: &Image, cfg: &BilateralConfig) -> Result<KernelOperator> {
    cfg.validate()?;
    Ok(KernelOperator::new(f, Kernel::Bilateral(*cfg)))
}

pub fn bilateral_apply(f: &Image, cfg: &BilateralConfig) -> Result<Image> {
    Ok(bilateral_s(f, cfg)?.filtered())
}

fn patch_vectors(f: &Image, radius: usize) -> (Vec<f64>, usize) {
    let offsets = disk(radius);
    let (nx, ny) = (f.nx(), f.ny());
    let mut out = Vec::with_capacity(offsets.len() * f.len());
    for j in 0..ny {
        for i in 0..nx {
            for &(di, dj) in &offsets {
                let x = reflect(i as isize + di, nx);
                let y = reflect(j as isize + dj, ny);
                out.push(f.get(x, y));
            }
        }
    }
    (out, offsets.len())
}

pub fn nlmeans_s(f: &Image, cfg: &NLMeansConfig) -> Result<KernelOperator> {
    cfg.validate()?;
    let (patches, patch_len) = patch_vectors(f, cfg.patch_radius);
    Ok(KernelOperator::new(
        f,
        Kernel::NLMeans {
            cfg: *cfg,
            patches,
            patch_len,
        },
    ))
}

pub fn nlmeans_apply(f: &Image, cfg: &NLMeansConfig) -> Result<Image> {
    Ok(nlmeans_s(f, cfg)?.filtered())
}
