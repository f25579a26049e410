//! Finite-difference discretisation of `div(D ∇u)` on the pixel grid.
//!
//! The operator is stored as symmetric edge weights between neighbouring
//! pixels, so `(A x)_p = Σ_q w_pq (x_q − x_p)`. Every assembled matrix is
//! therefore symmetric with vanishing row sums, and reflecting boundaries
//! amount to omitting edges that leave the domain.

use crate::error::Result;
use crate::linalg::{MatVec, SparseMatrix};

/// Symmetric 2×2 tensor field `[[a, b], [b, c]]`, one entry per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl TensorField {
    pub fn identity(n: usize) -> Self {
        Self {
            a: vec![1.0; n],
            b: vec![0.0; n],
            c: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StencilLaplacian {
    nx: usize,
    ny: usize,
    /// Weight between `(i, j)` and `(i + 1, j)`, stored at `(i, j)`.
    east: Vec<f64>,
    /// Weight between `(i, j)` and `(i, j + 1)`.
    south: Vec<f64>,
    /// Weight between `(i, j)` and `(i + 1, j + 1)`; empty for 5-point stencils.
    south_east: Vec<f64>,
    /// Weight between `(i, j)` and `(i − 1, j + 1)`; empty for 5-point stencils.
    south_west: Vec<f64>,
}

impl StencilLaplacian {
    /// 5-point stencil for `div(g ∇u)` with half-point weights `(g_p + g_q) / 2`.
    pub fn isotropic(nx: usize, ny: usize, g: &[f64]) -> Self {
        assert_eq!(g.len(), nx * ny);
        let n = nx * ny;
        let mut east = vec![0.0; n];
        let mut south = vec![0.0; n];
        for j in 0..ny {
            for i in 0..nx {
                let p = j * nx + i;
                if i + 1 < nx {
                    east[p] = 0.5 * (g[p] + g[p + 1]);
                }
                if j + 1 < ny {
                    south[p] = 0.5 * (g[p] + g[p + nx]);
                }
            }
        }
        Self {
            nx,
            ny,
            east,
            south,
            south_east: Vec::new(),
            south_west: Vec::new(),
        }
    }

    pub fn homogeneous(nx: usize, ny: usize) -> Self {
        Self::isotropic(nx, ny, &vec![1.0; nx * ny])
    }

    /// 9-point stencil for `div(D ∇u)`; mixed derivatives use central
    /// differences averaged over the two pixels adjacent to each diagonal.
    pub fn anisotropic(nx: usize, ny: usize, d: &TensorField) -> Self {
        let n = nx * ny;
        assert_eq!(d.len(), n);
        let mut east = vec![0.0; n];
        let mut south = vec![0.0; n];
        let mut south_east = vec![0.0; n];
        let mut south_west = vec![0.0; n];
        for j in 0..ny {
            for i in 0..nx {
                let p = j * nx + i;
                if i + 1 < nx {
                    east[p] = 0.5 * (d.a[p] + d.a[p + 1]);
                }
                if j + 1 < ny {
                    south[p] = 0.5 * (d.c[p] + d.c[p + nx]);
                    if i + 1 < nx {
                        south_east[p] = 0.25 * (d.b[p + 1] + d.b[p + nx]);
                    }
                    if i >= 1 {
                        south_west[p] = -0.25 * (d.b[p - 1] + d.b[p + nx]);
                    }
                }
            }
        }
        Self {
            nx,
            ny,
            east,
            south,
            south_east,
            south_west,
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dim(&self) -> usize {
        self.nx * self.ny
    }

    /// Calls `f(p, q, w)` once per undirected edge with nonzero support.
    pub fn for_each_edge(&self, mut f: impl FnMut(usize, usize, f64)) {
        let (nx, ny) = (self.nx, self.ny);
        for j in 0..ny {
            for i in 0..nx {
                let p = j * nx + i;
                if i + 1 < nx {
                    f(p, p + 1, self.east[p]);
                }
                if j + 1 < ny {
                    f(p, p + nx, self.south[p]);
                    if !self.south_east.is_empty() {
                        if i + 1 < nx {
                            f(p, p + nx + 1, self.south_east[p]);
                        }
                        if i >= 1 {
                            f(p, p + nx - 1, self.south_west[p]);
                        }
                    }
                }
            }
        }
    }

    /// `y = A x`.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.gather(x, y, |_, s| s);
    }

    /// `y_p = finish(x_p, (A x)_p)`, one pass over the grid.
    fn gather(&self, x: &[f64], y: &mut [f64], finish: impl Fn(f64, f64) -> f64) {
        let (nx, ny) = (self.nx, self.ny);
        let nine = !self.south_east.is_empty();
        if nx >= 2 {
            // Row-wise slice passes without bounds checks in the inner loops.
            for j in 0..ny {
                let row = j * nx;
                let xr = &x[row..row + nx];
                let er = &self.east[row..row + nx];
                let yr = &mut y[row..row + nx];
                yr[0] = er[0] * (xr[1] - xr[0]);
                yr[nx - 1] = er[nx - 2] * (xr[nx - 2] - xr[nx - 1]);
                for (((y, w), (l, c)), (e, r)) in yr[1..nx - 1]
                    .iter_mut()
                    .zip(&er[..nx - 2])
                    .zip(xr[..nx - 2].iter().zip(&xr[1..nx - 1]))
                    .zip(er[1..nx - 1].iter().zip(&xr[2..]))
                {
                    *y = w * (l - c) + e * (r - c);
                }
                if j > 0 {
                    let (xu, su) = (&x[row - nx..row], &self.south[row - nx..row]);
                    for ((y, w), (u, c)) in yr.iter_mut().zip(su).zip(xu.iter().zip(xr)) {
                        *y += w * (u - c);
                    }
                    if nine {
                        // (i−1, j−1) via south_east, (i+1, j−1) via south_west.
                        let se = &self.south_east[row - nx..row];
                        let sw = &self.south_west[row - nx..row];
                        for ((y, w), (u, c)) in yr[1..].iter_mut().zip(&se[..nx - 1]).zip(xu[..nx - 1].iter().zip(&xr[1..])) {
                            *y += w * (u - c);
                        }
                        for ((y, w), (u, c)) in yr[..nx - 1].iter_mut().zip(&sw[1..]).zip(xu[1..].iter().zip(&xr[..nx - 1])) {
                            *y += w * (u - c);
                        }
                    }
                }
                if j + 1 < ny {
                    let (xd, sd) = (&x[row + nx..row + 2 * nx], &self.south[row..row + nx]);
                    for ((y, w), (d, c)) in yr.iter_mut().zip(sd).zip(xd.iter().zip(xr)) {
                        *y += w * (d - c);
                    }
                    if nine {
                        let se = &self.south_east[row..row + nx];
                        let sw = &self.south_west[row..row + nx];
                        for ((y, w), (d, c)) in yr[..nx - 1].iter_mut().zip(&se[..nx - 1]).zip(xd[1..].iter().zip(&xr[..nx - 1])) {
                            *y += w * (d - c);
                        }
                        for ((y, w), (d, c)) in yr[1..].iter_mut().zip(&sw[1..]).zip(xd[..nx - 1].iter().zip(&xr[1..])) {
                            *y += w * (d - c);
                        }
                    }
                }
                for (y, &c) in yr.iter_mut().zip(xr) {
                    *y = finish(c, *y);
                }
            }
            return;
        }
        for j in 0..ny {
            for i in 0..nx {
                let p = j * nx + i;
                let xp = x[p];
                let mut s = 0.0;
                if i > 0 {
                    s += self.east[p - 1] * (x[p - 1] - xp);
                }
                if i + 1 < nx {
                    s += self.east[p] * (x[p + 1] - xp);
                }
                if j > 0 {
                    s += self.south[p - nx] * (x[p - nx] - xp);
                }
                if j + 1 < ny {
                    s += self.south[p] * (x[p + nx] - xp);
                }
                if nine {
                    if j + 1 < ny {
                        if i + 1 < nx {
                            s += self.south_east[p] * (x[p + nx + 1] - xp);
                        }
                        if i > 0 {
                            s += self.south_west[p] * (x[p + nx - 1] - xp);
                        }
                    }
                    if j > 0 {
                        if i > 0 {
                            s += self.south_east[p - nx - 1] * (x[p - nx - 1] - xp);
                        }
                        if i + 1 < nx {
                            s += self.south_west[p - nx + 1] * (x[p - nx + 1] - xp);
                        }
                    }
                }
                y[p] = finish(xp, s);
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply_into(x, &mut y);
        y
    }

    /// Negated main diagonal, `Σ_q w_pq`.
    pub fn off_diagonal_sums(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        self.for_each_edge(|p, q, w| {
            d[p] += w;
            d[q] += w;
        });
        d
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        let mut t = Vec::with_capacity(9 * self.dim());
        let mut diag = vec![0.0; self.dim()];
        self.for_each_edge(|p, q, w| {
            t.push((p, q, w));
            t.push((q, p, w));
            diag[p] -= w;
            diag[q] -= w;
        });
        t.extend(diag.into_iter().enumerate().map(|(p, d)| (p, p, d)));
        SparseMatrix::from_triplets(self.dim(), t).expect("stencil indices lie on the grid")
    }

    /// `I − τ A`, the matrix of one semi-implicit step.
    pub fn step_system(&self, tau: f64) -> StepSystem<'_> {
        StepSystem { lap: self, tau }
    }
}

/// `(I − τ A) x`, applied matrix-free.
pub struct StepSystem<'a> {
    lap: &'a StencilLaplacian,
    tau: f64,
}

impl MatVec for StepSystem<'_> {
    fn dim(&self) -> usize {
        self.lap.dim()
    }

    fn mat_vec(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let tau = self.tau;
        self.lap.gather(x, y, |xp, s| xp - tau * s);
        Ok(())
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(
            self.lap
                .off_diagonal_sums()
                .into_iter()
                .map(|s| 1.0 + self.tau * s)
                .collect(),
        )
    }
}
