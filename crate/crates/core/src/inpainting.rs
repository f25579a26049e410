//! Diffusion-based inpainting from sparse masks.
//!
//! Mask pixels keep their values; the remaining pixels solve `L u = 0` with
//! reflecting boundaries. The linear map from data to result is
//! `S = (C − (I − C) L)⁻¹ C`. Both it and its transpose are evaluated through
//! the reduced system on the unknown pixels only.

use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionModel, Diffusivity, DiffusivityKind, StepCoefficients};
use crate::error::{argument, Result};
use crate::image::{Image, Mask};
use crate::linalg::{bicgstab_solve, cg_solve, check_len, norm, LinearOperator, SolverSettings, SparseMatrix};
use crate::stencil::StencilLaplacian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InpaintMode {
    /// Fixed-point iteration with frozen coefficients.
    #[default]
    EllipticKacanov,
    /// Steady state of the semi-implicit evolution with growing time steps.
    Parabolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InpaintConfig {
    pub operator: DiffusionModel,
    pub diffusivity: Diffusivity,
    pub sigma: f64,
    #[serde(default)]
    pub mode: InpaintMode,
    pub tolerance: f64,
    pub max_outer: usize,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl InpaintConfig {
    pub fn homogeneous() -> Self {
        Self {
            operator: DiffusionModel::Homogeneous,
            diffusivity: Diffusivity {
                kind: DiffusivityKind::Charbonnier,
                lambda: 1.0,
            },
            sigma: 0.0,
            mode: InpaintMode::EllipticKacanov,
            tolerance: 1e-8,
            max_outer: 200,
            solver: SolverSettings::default(),
        }
    }

    pub fn nonlinear(operator: DiffusionModel, diffusivity: Diffusivity, sigma: f64) -> Self {
        Self {
            operator,
            diffusivity,
            sigma,
            ..Self::homogeneous()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return argument("inpainting tolerance must be positive");
        }
        if !(self.sigma >= 0.0) {
            return argument("presmoothing sigma must be >= 0");
        }
        if !(self.diffusivity.lambda > 0.0) {
            return argument("contrast parameter must be positive");
        }
        Ok(())
    }
}

const TAU_START: f64 = 1.0;
const TAU_MAX: f64 = 1e6;

/// `−L` restricted to the unknown pixels plus its coupling to the mask.
#[derive(Debug, Clone)]
struct ReducedSystem {
    unknown: Vec<usize>,
    /// `−L_UU`, indexed by position in `unknown`.
    a_uu: SparseMatrix,
    /// Entries `(r, k, L_{u_r, k})` with `k` a mask pixel.
    coupling: Vec<(usize, usize, f64)>,
    symmetric_definite: bool,
}

impl ReducedSystem {
    fn new(lap: &StencilLaplacian, mask: &Mask, symmetric_definite: bool) -> Result<Self> {
        let n = mask.len();
        let mut pos = vec![usize::MAX; n];
        let mut unknown = Vec::new();
        for k in 0..n {
            if !mask.is_set(k) {
                pos[k] = unknown.len();
                unknown.push(k);
            }
        }
        let mut t = Vec::new();
        let mut coupling = Vec::new();
        let mut diag = vec![0.0; unknown.len()];
        lap.for_each_edge(|p, q, w| match (pos[p], pos[q]) {
            (usize::MAX, usize::MAX) => {}
            (rp, usize::MAX) => {
                diag[rp] += w;
                coupling.push((rp, q, w));
            }
            (usize::MAX, rq) => {
                diag[rq] += w;
                coupling.push((rq, p, w));
            }
            (rp, rq) => {
                diag[rp] += w;
                diag[rq] += w;
                t.push((rp, rq, -w));
                t.push((rq, rp, -w));
            }
        });
        t.extend(diag.into_iter().enumerate().map(|(r, d)| (r, r, d)));
        Ok(Self {
            a_uu: SparseMatrix::from_triplets(unknown.len(), t)?,
            unknown,
            coupling,
            symmetric_definite,
        })
    }

    fn solve(&self, m: &SparseMatrix, b: &[f64], x0: Option<&[f64]>, settings: &SolverSettings) -> Result<Vec<f64>> {
        if self.symmetric_definite {
            cg_solve(m, b, x0, settings)
        } else {
            bicgstab_solve(m, b, x0, settings)
        }
    }

    fn solve_transposed(&self, m: &SparseMatrix, b: &[f64], settings: &SolverSettings) -> Result<Vec<f64>> {
        if self.symmetric_definite {
            cg_solve(m, b, None, settings)
        } else {
            bicgstab_solve(&m.transpose(), b, None, settings)
        }
    }

    /// `x_K = v_K`, `x_U = (−L_UU)⁻¹ L_UK v_K`.
    fn apply(&self, v: &[f64], settings: &SolverSettings, warm: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut x = v.to_vec();
        if self.unknown.is_empty() {
            return Ok(x);
        }
        let mut rhs = vec![0.0; self.unknown.len()];
        for &(r, k, w) in &self.coupling {
            rhs[r] += w * v[k];
        }
        let guess: Option<Vec<f64>> = warm.map(|w| self.unknown.iter().map(|&k| w[k]).collect());
        let xu = self.solve(&self.a_uu, &rhs, guess.as_deref(), settings)?;
        for (r, &k) in self.unknown.iter().enumerate() {
            x[k] = xu[r];
        }
        Ok(x)
    }

    /// `y_K + L_UKᵀ (−L_UU)⁻ᵀ y_U` on the mask, zero elsewhere.
    fn apply_adjoint(&self, y: &[f64], settings: &SolverSettings) -> Result<Vec<f64>> {
        let mut out = y.to_vec();
        if self.unknown.is_empty() {
            return Ok(out);
        }
        let yu: Vec<f64> = self.unknown.iter().map(|&k| y[k]).collect();
        let z = self.solve_transposed(&self.a_uu, &yu, settings)?;
        for &k in &self.unknown {
            out[k] = 0.0;
        }
        for &(r, k, w) in &self.coupling {
            out[k] += w * z[r];
        }
        Ok(out)
    }
}

/// The final linear system of an inpainting run.
#[derive(Debug, Clone)]
pub struct FrozenInpainting {
    nx: usize,
    ny: usize,
    mask: Mask,
    coefficients: StepCoefficients,
    solver: SolverSettings,
    system: ReducedSystem,
    outer_iterations: usize,
}

impl FrozenInpainting {
    fn new(mask: &Mask, coefficients: StepCoefficients, model: DiffusionModel, solver: SolverSettings) -> Result<Self> {
        let (nx, ny) = (mask.nx(), mask.ny());
        let lap = coefficients.laplacian(nx, ny);
        let system = ReducedSystem::new(&lap, mask, model != DiffusionModel::Eed)?;
        Ok(Self {
            nx,
            ny,
            mask: mask.clone(),
            coefficients,
            solver,
            system,
            outer_iterations: 0,
        })
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn coefficients(&self) -> &StepCoefficients {
        &self.coefficients
    }

    /// Linearised solves performed before freezing (0 for linear operators).
    pub fn outer_iterations(&self) -> usize {
        self.outer_iterations
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }
}

impl LinearOperator for FrozenInpainting {
    fn dim(&self) -> usize {
        self.nx * self.ny
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(v, self.dim())?;
        self.system.apply(v, &self.solver, None)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(y, self.dim())?;
        self.system.apply_adjoint(y, &self.solver)
    }
}

fn coefficients_for(u: &Image, cfg: &InpaintConfig) -> Result<StepCoefficients> {
    Ok(match cfg.operator {
        DiffusionModel::Homogeneous => StepCoefficients::Homogeneous,
        DiffusionModel::IsotropicNonlinear => {
            StepCoefficients::Scalar(crate::diffusion::diffusivity_field(u, &cfg.diffusivity, cfg.sigma)?)
        }
        DiffusionModel::Eed => {
            StepCoefficients::Tensor(crate::diffusion::eed_tensor_field(u, &cfg.diffusivity, cfg.sigma)?)
        }
    })
}

fn relative_change(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b).max(f64::MIN_POSITIVE)
}

/// Inpaints `f` from its values on `mask`.
pub fn inpaint(f: &Image, mask: &Mask, cfg: &InpaintConfig) -> Result<(Image, FrozenInpainting)> {
    cfg.validate()?;
    if mask.nx() != f.nx() || mask.ny() != f.ny() {
        return argument("mask and image dimensions differ");
    }
    if mask.count() == 0 {
        return argument("inpainting mask is empty");
    }
    let (nx, ny) = (f.nx(), f.ny());
    // C f: data on the mask, zero elsewhere.
    let cf: Vec<f64> = f
        .data()
        .iter()
        .zip(mask.indicator())
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();

    let mut frozen = match cfg.operator {
        DiffusionModel::Homogeneous => {
            FrozenInpainting::new(mask, StepCoefficients::Homogeneous, cfg.operator, cfg.solver)?
        }
        _ => match cfg.mode {
            InpaintMode::EllipticKacanov => kacanov(&cf, nx, ny, mask, cfg)?,
            InpaintMode::Parabolic => parabolic(&cf, nx, ny, mask, cfg)?,
        },
    };
    let mut u = frozen.system.apply(&cf, &frozen.solver, None)?;
    for (k, &m) in mask.indicator().iter().enumerate() {
        if m {
            u[k] = f.data()[k];
        }
    }
    if frozen.outer_iterations == 0 && cfg.operator != DiffusionModel::Homogeneous {
        frozen.outer_iterations = 1;
    }
    Ok((Image::from_vec_unchecked(nx, ny, u), frozen))
}

fn kacanov(cf: &[f64], nx: usize, ny: usize, mask: &Mask, cfg: &InpaintConfig) -> Result<FrozenInpainting> {
    let mut u = cf.to_vec();
    let mut iterations = 0;
    loop {
        let coeffs = coefficients_for(&Image::from_vec_unchecked(nx, ny, u.clone()), cfg)?;
        let mut frozen = FrozenInpainting::new(mask, coeffs, cfg.operator, cfg.solver)?;
        if iterations >= cfg.max_outer {
            frozen.outer_iterations = iterations;
            return Ok(frozen);
        }
        let next = frozen.system.apply(cf, &cfg.solver, Some(&u))?;
        iterations += 1;
        let change = relative_change(&next, &u);
        u = next;
        if change < cfg.tolerance {
            // The returned system is L(u^{n−1}); the final solve happens in
            // the caller and reproduces u^n.
            frozen.outer_iterations = iterations;
            return Ok(frozen);
        }
    }
}

fn parabolic(cf: &[f64], nx: usize, ny: usize, mask: &Mask, cfg: &InpaintConfig) -> Result<FrozenInpainting> {
    let mut u = cf.to_vec();
    let mut tau = TAU_START;
    let mut iterations = 0;
    loop {
        let coeffs = coefficients_for(&Image::from_vec_unchecked(nx, ny, u.clone()), cfg)?;
        let mut frozen = FrozenInpainting::new(mask, coeffs, cfg.operator, cfg.solver)?;
        if iterations >= cfg.max_outer {
            frozen.outer_iterations = iterations;
            return Ok(frozen);
        }
        let sys = &frozen.system;
        // (I + τ(−L_UU)) x_U = u_U + τ L_UK f_K, mask values held fixed.
        let m = sys.a_uu.shifted(1.0, tau);
        let mut rhs: Vec<f64> = sys.unknown.iter().map(|&k| u[k]).collect();
        for &(r, k, w) in &sys.coupling {
            rhs[r] += tau * w * cf[k];
        }
        let guess: Vec<f64> = sys.unknown.iter().map(|&k| u[k]).collect();
        let xu = sys.solve(&m, &rhs, Some(&guess), &cfg.solver)?;
        let mut next = u.clone();
        for (r, &k) in sys.unknown.iter().enumerate() {
            next[k] = xu[r];
        }
        iterations += 1;
        let change = relative_change(&next, &u) / tau;
        u = next;
        if change < cfg.tolerance {
            let coeffs = coefficients_for(&Image::from_vec_unchecked(nx, ny, u.clone()), cfg)?;
            frozen = FrozenInpainting::new(mask, coeffs, cfg.operator, cfg.solver)?;
            frozen.outer_iterations = iterations;
            return Ok(frozen);
        }
        tau = (2.0 * tau).min(TAU_MAX);
    }
}

/// Sum of the source echoes of the listed mask pixels.
pub fn cumulative_echo_set(frozen: &FrozenInpainting, pixels: &[usize]) -> Result<Vec<f64>> {
    for &p in pixels {
        if p >= frozen.dim() || !frozen.mask.is_set(p) {
            return argument(format!("pixel {p} is not a mask pixel"));
        }
    }
    crate::echo::cumulative_echo(frozen, pixels, crate::echo::Direction::Source)
}
