//! Linear variational optic flow as a state transition acting on the
//! regularised normal flow: `w = B⁻¹ diag(|∇f|² + ε²) w_n`.

use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::image::{FlowField, Image};
use crate::linalg::{cg_solve, check_len, norm, LinearOperator, MatVec, SolverSettings, SparseMatrix};
use crate::stencil::{StencilLaplacian, TensorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    HornSchunck,
    NagelEnkelmann,
}

impl std::str::FromStr for Regularizer {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hs" | "horn-schunck" | "horn_schunck" => Ok(Self::HornSchunck),
            "ne" | "nagel-enkelmann" | "nagel_enkelmann" => Ok(Self::NagelEnkelmann),
            other => argument(format!("unknown regularizer {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub regularizer: Regularizer,
    pub alpha: f64,
    /// Nagel–Enkelmann contrast parameter; unused for Horn–Schunck.
    pub ne_lambda: f64,
    pub epsilon: f64,
    #[serde(default = "flow_solver")]
    pub solver: SolverSettings,
}

fn flow_solver() -> SolverSettings {
    SolverSettings::with_tol(1e-11)
}

impl FlowConfig {
    pub const DEFAULT_EPSILON: f64 = 1e-3;

    pub fn horn_schunck(alpha: f64) -> Self {
        Self {
            regularizer: Regularizer::HornSchunck,
            alpha,
            ne_lambda: 1.0,
            epsilon: Self::DEFAULT_EPSILON,
            solver: flow_solver(),
        }
    }

    pub fn nagel_enkelmann(alpha: f64, lambda: f64) -> Self {
        Self {
            regularizer: Regularizer::NagelEnkelmann,
            ne_lambda: lambda,
            ..Self::horn_schunck(alpha)
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.epsilon > 0.0) {
            return argument("alpha and epsilon must be positive");
        }
        if self.regularizer == Regularizer::NagelEnkelmann && !(self.ne_lambda > 0.0) {
            return argument("Nagel-Enkelmann lambda must be positive");
        }
        Ok(())
    }
}

/// Central differences in the interior, one-sided at the image border, so
/// that linear data is differentiated exactly everywhere.
fn derivative_exact_on_ramps(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny) = (img.nx(), img.ny());
    let mut gx = vec![0.0; nx * ny];
    let mut gy = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let p = j * nx + i;
            if nx > 1 {
                gx[p] = match i {
                    0 => img.get(1, j) - img.get(0, j),
                    _ if i == nx - 1 => img.get(i, j) - img.get(i - 1, j),
                    _ => 0.5 * (img.get(i + 1, j) - img.get(i - 1, j)),
                };
            }
            if ny > 1 {
                gy[p] = match j {
                    0 => img.get(i, 1) - img.get(i, 0),
                    _ if j == ny - 1 => img.get(i, j) - img.get(i, j - 1),
                    _ => 0.5 * (img.get(i, j + 1) - img.get(i, j - 1)),
                };
            }
        }
    }
    (gx, gy)
}

/// Spatial derivatives of the frame average and the temporal difference.
pub fn frame_derivatives(f1: &Image, f2: &Image) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if !f1.same_shape(f2) {
        return argument("frames differ in size");
    }
    let avg = Image::from_vec_unchecked(
        f1.nx(),
        f1.ny(),
        f1.data().iter().zip(f2.data()).map(|(a, b)| 0.5 * (a + b)).collect(),
    );
    let (fx, fy) = derivative_exact_on_ramps(&avg);
    let ft = f2.data().iter().zip(f1.data()).map(|(b, a)| b - a).collect();
    Ok((fx, fy, ft))
}

/// `w_n = −f_t ∇f / (|∇f|² + ε²)`.
pub fn normal_flow(nx: usize, ny: usize, fx: &[f64], fy: &[f64], ft: &[f64], epsilon: f64) -> Result<FlowField> {
    let n = nx * ny;
    check_len(fx, n)?;
    check_len(fy, n)?;
    check_len(ft, n)?;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for k in 0..n {
        let s = -ft[k] / (fx[k] * fx[k] + fy[k] * fy[k] + epsilon * epsilon);
        u[k] = s * fx[k];
        v[k] = s * fy[k];
    }
    FlowField::new(nx, ny, u, v)
}

/// Nagel–Enkelmann tensor `(∇f⊥ ∇f⊥ᵀ + λ² I) / (|∇f|² + 2λ²)`.
pub fn nagel_enkelmann_tensor(fx: &[f64], fy: &[f64], lambda: f64) -> TensorField {
    let l2 = lambda * lambda;
    let mut d = TensorField::identity(fx.len());
    for k in 0..fx.len() {
        let den = fx[k] * fx[k] + fy[k] * fy[k] + 2.0 * l2;
        d.a[k] = (fy[k] * fy[k] + l2) / den;
        d.b[k] = -fx[k] * fy[k] / den;
        d.c[k] = (fx[k] * fx[k] + l2) / den;
    }
    d
}

/// The symmetric block system of the Euler–Lagrange equations.
#[derive(Debug, Clone)]
pub struct FlowSystem {
    nx: usize,
    ny: usize,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
    pub ft: Vec<f64>,
    lap: StencilLaplacian,
    config: FlowConfig,
}

pub fn assemble_flow_system(fx: &[f64], fy: &[f64], ft: &[f64], f1: &Image, cfg: &FlowConfig) -> Result<FlowSystem> {
    cfg.validate()?;
    let (nx, ny) = (f1.nx(), f1.ny());
    let n = nx * ny;
    check_len(fx, n)?;
    check_len(fy, n)?;
    check_len(ft, n)?;
    let lap = match cfg.regularizer {
        Regularizer::HornSchunck => StencilLaplacian::homogeneous(nx, ny),
        Regularizer::NagelEnkelmann => {
            let (gx, gy) = derivative_exact_on_ramps(f1);
            StencilLaplacian::anisotropic(nx, ny, &nagel_enkelmann_tensor(&gx, &gy, cfg.ne_lambda))
        }
    };
    Ok(FlowSystem {
        nx,
        ny,
        fx: fx.to_vec(),
        fy: fy.to_vec(),
        ft: ft.to_vec(),
        lap,
        config: *cfg,
    })
}

/// Derivatives and system for a frame pair in one call.
pub fn flow_system_from_frames(f1: &Image, f2: &Image, cfg: &FlowConfig) -> Result<FlowSystem> {
    let (fx, fy, ft) = frame_derivatives(f1, f2)?;
    assemble_flow_system(&fx, &fy, &ft, f1, cfg)
}

impl FlowSystem {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    /// Right-hand side `(−f_x f_t, −f_y f_t)`.
    pub fn rhs(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.fx.iter().zip(&self.ft).map(|(x, t)| -x * t).collect();
        b.extend(self.fy.iter().zip(&self.ft).map(|(y, t)| -y * t));
        b
    }

    /// `|∇f|² + ε²`, once per pixel.
    pub fn data_weights(&self) -> Vec<f64> {
        let e2 = self.config.epsilon * self.config.epsilon;
        self.fx.iter().zip(&self.fy).map(|(x, y)| x * x + y * y + e2).collect()
    }

    pub fn normal_flow(&self) -> FlowField {
        normal_flow(self.nx, self.ny, &self.fx, &self.fy, &self.ft, self.config.epsilon)
            .expect("derivative fields match the grid")
    }

    pub fn system_matrix(&self) -> SparseMatrix {
        let n = self.nx * self.ny;
        let alpha = self.config.alpha;
        let l = self.lap.to_sparse();
        let mut t = Vec::with_capacity(2 * l.nnz() + 4 * n);
        for r in 0..n {
            for (c, v) in l.row(r) {
                t.push((r, c, -alpha * v));
                t.push((n + r, n + c, -alpha * v));
            }
            t.push((r, r, self.fx[r] * self.fx[r]));
            t.push((n + r, n + r, self.fy[r] * self.fy[r]));
            t.push((r, n + r, self.fx[r] * self.fy[r]));
            t.push((n + r, r, self.fx[r] * self.fy[r]));
        }
        SparseMatrix::from_triplets(2 * n, t).expect("block indices are in range")
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        cg_solve(self, b, None, &self.config.solver)
    }

    /// Relative residual `‖B w − b‖ / ‖b‖`.
    pub fn residual(&self, w: &FlowField) -> Result<f64> {
        let b = self.rhs();
        let mut bw = vec![0.0; b.len()];
        self.mat_vec(&w.stacked(), &mut bw)?;
        let r: Vec<f64> = bw.iter().zip(&b).map(|(x, y)| x - y).collect();
        Ok(norm(&r) / norm(&b).max(f64::MIN_POSITIVE))
    }
}

impl MatVec for FlowSystem {
    fn dim(&self) -> usize {
        2 * self.nx * self.ny
    }

    fn mat_vec(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let n = self.nx * self.ny;
        check_len(x, 2 * n)?;
        let (xu, xv) = x.split_at(n);
        let (yu, yv) = y.split_at_mut(n);
        self.lap.apply_into(xu, yu);
        self.lap.apply_into(xv, yv);
        let alpha = self.config.alpha;
        for k in 0..n {
            let (fx, fy) = (self.fx[k], self.fy[k]);
            let data = fx * xu[k] + fy * xv[k];
            yu[k] = fx * data - alpha * yu[k];
            yv[k] = fy * data - alpha * yv[k];
        }
        Ok(())
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let sums = self.lap.off_diagonal_sums();
        let alpha = self.config.alpha;
        let mut d: Vec<f64> = self.fx.iter().zip(&sums).map(|(f, s)| f * f + alpha * s).collect();
        d.extend(self.fy.iter().zip(&sums).map(|(f, s)| f * f + alpha * s));
        Some(d)
    }
}

/// Solves `B w = (−f_x f_t, −f_y f_t)`.
pub fn solve_flow(system: &FlowSystem) -> Result<FlowField> {
    let w = system.solve(&system.rhs())?;
    FlowField::from_stacked(system.nx, system.ny, &w)
}

/// `S = B⁻¹ diag(|∇f|² + ε²)` on stacked `(u, v)` vectors of length `2N`.
#[derive(Debug, Clone)]
pub struct FlowOperator {
    system: FlowSystem,
    weights: Vec<f64>,
}

pub fn flow_s(system: &FlowSystem) -> FlowOperator {
    let w = system.data_weights();
    let mut weights = w.clone();
    weights.extend(w);
    FlowOperator {
        system: system.clone(),
        weights,
    }
}

impl FlowOperator {
    pub fn system(&self) -> &FlowSystem {
        &self.system
    }
}

impl LinearOperator for FlowOperator {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.dim())?;
        let b: Vec<f64> = x.iter().zip(&self.weights).map(|(x, w)| x * w).collect();
        self.system.solve(&b)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(y, self.dim())?;
        let z = self.system.solve(y)?;
        Ok(z.iter().zip(&self.weights).map(|(z, w)| z * w).collect())
    }
}
