//! Semi-implicit diffusion filters and their state transition operators.
//!
//! One step solves `(I − τ A(u^k)) u^{k+1} = u^k`, with `A` frozen at the
//! current image. Recording the coefficient field of every step turns the
//! whole nonlinear evolution into a fixed linear map
//! `S = P(u^{n−1}) ⋯ P(u^0)`; its adjoint replays the same symmetric steps in
//! reverse order.

use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::image::{smoothed_gradient, Image};
use crate::linalg::{cg_solve, check_len, LinearOperator, SolverSettings, SparseMatrix};
use crate::stencil::{StencilLaplacian, TensorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusivityKind {
    Charbonnier,
    #[serde(alias = "pm")]
    RationalPeronaMalik,
    Weickert,
}

impl std::str::FromStr for DiffusivityKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "charbonnier" | "ch" => Ok(Self::Charbonnier),
            "pm" | "perona-malik" | "rational_perona_malik" | "rational-perona-malik" => {
                Ok(Self::RationalPeronaMalik)
            }
            "weickert" | "we" => Ok(Self::Weickert),
            other => argument(format!("unknown diffusivity {other:?}")),
        }
    }
}

const WEICKERT_C: f64 = 3.3148;

/// Decreasing function of the squared gradient magnitude, with contrast
/// parameter `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diffusivity {
    pub kind: DiffusivityKind,
    pub lambda: f64,
}

impl Diffusivity {
    pub fn new(kind: DiffusivityKind, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return argument(format!("contrast parameter must be positive, got {lambda}"));
        }
        Ok(Self { kind, lambda })
    }

    pub fn eval(&self, s2: f64) -> f64 {
        diffusivity_eval(self, s2)
    }
}

pub fn diffusivity_eval(g: &Diffusivity, s2: f64) -> f64 {
    debug_assert!(s2 >= 0.0);
    let r = s2 / (g.lambda * g.lambda);
    match g.kind {
        DiffusivityKind::Charbonnier => 1.0 / (1.0 + r).sqrt(),
        DiffusivityKind::RationalPeronaMalik => 1.0 / (1.0 + r),
        DiffusivityKind::Weickert => {
            if s2 == 0.0 {
                1.0
            } else {
                // s^8 / λ^8 = r^4; expm1 keeps the tail positive instead of
                // rounding to zero for very large gradients.
                -(-WEICKERT_C / (r * r * r * r)).exp_m1()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionModel {
    Homogeneous,
    IsotropicNonlinear,
    Eed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub model: DiffusionModel,
    /// Ignored by the homogeneous model.
    pub diffusivity: Diffusivity,
    /// Presmoothing standard deviation inside the diffusivity.
    pub sigma: f64,
    pub tau: f64,
    pub steps: usize,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl DiffusionConfig {
    pub const DEFAULT_TAU: f64 = 5.0;

    /// Picks `n = ceil(T / τ)` steps and shrinks `τ` so that `n τ = T` exactly.
    pub fn from_time(
        model: DiffusionModel,
        diffusivity: Diffusivity,
        sigma: f64,
        time: f64,
        tau: f64,
    ) -> Result<Self> {
        if !(time >= 0.0) || !time.is_finite() {
            return argument(format!("stopping time must be >= 0, got {time}"));
        }
        if !(tau > 0.0) {
            return argument(format!("time step must be positive, got {tau}"));
        }
        let steps = (time / tau - 1e-9).ceil().max(0.0) as usize;
        let tau = if steps == 0 { tau } else { time / steps as f64 };
        let cfg = Self {
            model,
            diffusivity,
            sigma,
            tau,
            steps,
            solver: SolverSettings::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn stopping_time(&self) -> f64 {
        self.tau * self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return argument(format!("time step must be positive, got {}", self.tau));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return argument(format!("presmoothing sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.diffusivity.lambda > 0.0) {
            return argument("contrast parameter must be positive");
        }
        Ok(())
    }
}

/// Diffusivity evaluated on `|∇u_σ|²` at every pixel.
pub fn diffusivity_field(u: &Image, g: &Diffusivity, sigma: f64) -> Result<Vec<f64>> {
    let (gx, gy) = smoothed_gradient(u, sigma)?;
    Ok(gx
        .iter()
        .zip(&gy)
        .map(|(x, y)| g.eval(x * x + y * y))
        .collect())
}

/// Edge-enhancing tensor: eigenvalue `g(|∇u_σ|²)` across the smoothed gradient,
/// 1 along it. Pixels with zero gradient get the identity.
pub fn eed_tensor_field(u: &Image, g: &Diffusivity, sigma: f64) -> Result<TensorField> {
    let (gx, gy) = smoothed_gradient(u, sigma)?;
    let n = u.len();
    let mut d = TensorField::identity(n);
    for k in 0..n {
        let s2 = gx[k] * gx[k] + gy[k] * gy[k];
        if s2 == 0.0 {
            continue;
        }
        let lambda1 = g.eval(s2);
        let (vx, vy) = (gx[k] / s2.sqrt(), gy[k] / s2.sqrt());
        // D = λ1 v vᵀ + v⊥ v⊥ᵀ = I + (λ1 − 1) v vᵀ
        d.a[k] = 1.0 + (lambda1 - 1.0) * vx * vx;
        d.b[k] = (lambda1 - 1.0) * vx * vy;
        d.c[k] = 1.0 + (lambda1 - 1.0) * vy * vy;
    }
    Ok(d)
}

pub fn assemble_isotropic(u: &Image, g: &Diffusivity, sigma: f64) -> Result<SparseMatrix> {
    let field = diffusivity_field(u, g, sigma)?;
    Ok(StencilLaplacian::isotropic(u.nx(), u.ny(), &field).to_sparse())
}

pub fn assemble_eed(u: &Image, g: &Diffusivity, sigma: f64) -> Result<SparseMatrix> {
    let d = eed_tensor_field(u, g, sigma)?;
    Ok(StencilLaplacian::anisotropic(u.nx(), u.ny(), &d).to_sparse())
}

/// Frozen coefficients of one evolution step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepCoefficients {
    Homogeneous,
    Scalar(Vec<f64>),
    Tensor(TensorField),
}

impl StepCoefficients {
    fn compute(u: &Image, cfg: &DiffusionConfig) -> Result<Self> {
        Ok(match cfg.model {
            DiffusionModel::Homogeneous => Self::Homogeneous,
            DiffusionModel::IsotropicNonlinear => {
                Self::Scalar(diffusivity_field(u, &cfg.diffusivity, cfg.sigma)?)
            }
            DiffusionModel::Eed => Self::Tensor(eed_tensor_field(u, &cfg.diffusivity, cfg.sigma)?),
        })
    }

    pub fn laplacian(&self, nx: usize, ny: usize) -> StencilLaplacian {
        match self {
            Self::Homogeneous => StencilLaplacian::homogeneous(nx, ny),
            Self::Scalar(g) => StencilLaplacian::isotropic(nx, ny, g),
            Self::Tensor(d) => StencilLaplacian::anisotropic(nx, ny, d),
        }
    }
}

/// A completed evolution with every step's coefficients recorded.
#[derive(Debug, Clone)]
pub struct FrozenEvolution {
    nx: usize,
    ny: usize,
    config: DiffusionConfig,
    steps: Vec<StepCoefficients>,
    result: Image,
}

impl FrozenEvolution {
    pub fn config(&self) -> &DiffusionConfig {
        &self.config
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[StepCoefficients] {
        &self.steps
    }

    /// The filtered image `u^n`.
    pub fn result(&self) -> &Image {
        &self.result
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    fn run<'a>(&self, v: &[f64], order: impl Iterator<Item = &'a StepCoefficients>) -> Result<Vec<f64>> {
        check_len(v, self.nx * self.ny)?;
        let mut x = v.to_vec();
        let mut homogeneous: Option<StencilLaplacian> = None;
        for coeffs in order {
            let built;
            let lap = match coeffs {
                StepCoefficients::Homogeneous => {
                    homogeneous.get_or_insert_with(|| StencilLaplacian::homogeneous(self.nx, self.ny))
                }
                other => {
                    built = other.laplacian(self.nx, self.ny);
                    &built
                }
            };
            x = cg_solve(&lap.step_system(self.config.tau), &x, Some(&x), &self.config.solver)?;
        }
        Ok(x)
    }

    /// `S v`: the steps in evolution order.
    pub fn apply_s(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.run(v, self.steps.iter())
    }

    /// `Sᵀ v`: the same symmetric steps in reverse order.
    pub fn apply_s_adjoint(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.run(v, self.steps.iter().rev())
    }

    /// Same evolution with different solver settings for replay.
    pub fn with_solver(mut self, solver: SolverSettings) -> Self {
        self.config.solver = solver;
        self
    }
}

impl LinearOperator for FrozenEvolution {
    fn dim(&self) -> usize {
        self.nx * self.ny
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.apply_s(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.apply_s_adjoint(y)
    }
}

/// Runs the semi-implicit evolution from `u^0 = f`.
pub fn evolve(f: &Image, config: &DiffusionConfig) -> Result<(Image, FrozenEvolution)> {
    config.validate()?;
    let (nx, ny) = (f.nx(), f.ny());
    let mut u = f.clone();
    let mut steps = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let coeffs = StepCoefficients::compute(&u, config)?;
        let lap = coeffs.laplacian(nx, ny);
        let next = cg_solve(&lap.step_system(config.tau), u.data(), Some(u.data()), &config.solver)?;
        u = Image::from_vec_unchecked(nx, ny, next);
        steps.push(coeffs);
    }
    let frozen = FrozenEvolution {
        nx,
        ny,
        config: *config,
        steps,
        result: u.clone(),
    };
    Ok((u, frozen))
}
