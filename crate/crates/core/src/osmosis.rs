//! Linear osmosis: implicit drift–diffusion steps `u^{k+1} = (I − τA)⁻¹ u^k`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::image::Image;
use crate::linalg::{bicgstab_solve, check_len, materialize, norm, LinearOperator, SolverSettings, SparseMatrix};

/// Drift on the staggered grid: `d1` between horizontal neighbours
/// (`(nx−1)·ny` values), `d2` between vertical neighbours (`nx·(ny−1)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftField {
    pub nx: usize,
    pub ny: usize,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl DriftField {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            d1: vec![0.0; (nx - 1) * ny],
            d2: vec![0.0; nx * (ny - 1)],
        }
    }

    /// Drift between `(i, j)` and `(i + 1, j)`.
    pub fn horizontal(&self, i: usize, j: usize) -> f64 {
        self.d1[j * (self.nx - 1) + i]
    }

    /// Drift between `(i, j)` and `(i, j + 1)`.
    pub fn vertical(&self, i: usize, j: usize) -> f64 {
        self.d2[j * self.nx + i]
    }
}

/// `d = ∇ ln v` with forward differences at half-grid points.
pub fn drift_from_guidance(v: &Image) -> Result<DriftField> {
    if v.data().iter().any(|&x| !(x > 0.0)) {
        return argument("guidance image must be strictly positive");
    }
    let (nx, ny) = (v.nx(), v.ny());
    let ln = v.map(f64::ln);
    let mut d = DriftField::zeros(nx, ny);
    for j in 0..ny {
        for i in 0..nx {
            if i + 1 < nx {
                d.d1[j * (nx - 1) + i] = ln.get(i + 1, j) - ln.get(i, j);
            }
            if j + 1 < ny {
                d.d2[j * nx + i] = ln.get(i, j + 1) - ln.get(i, j);
            }
        }
    }
    Ok(d)
}

/// Discretises `div(∇u − d u)` with reflecting boundaries.
///
/// Each staggered drift value `δ` enters through `2 tanh(δ/2)`, which for a
/// log-difference equals `2 (v_q − v_p) / (v_q + v_p)`. With the arithmetic
/// average of `u` at the half-grid point this makes the guidance an exact
/// null vector and keeps every off-diagonal entry in `(0, 2)`.
pub fn assemble_osmosis(d: &DriftField) -> SparseMatrix {
    let (nx, ny) = (d.nx, d.ny);
    let n = nx * ny;
    let mut t = Vec::with_capacity(5 * n);
    let mut edge = |p: usize, q: usize, delta: f64| {
        let h = (0.5 * delta).tanh(); // d'/2
        t.push((p, q, 1.0 - h));
        t.push((p, p, -1.0 - h));
        t.push((q, q, -1.0 + h));
        t.push((q, p, 1.0 + h));
    };
    for j in 0..ny {
        for i in 0..nx {
            let p = j * nx + i;
            if i + 1 < nx {
                edge(p, p + 1, d.horizontal(i, j));
            }
            if j + 1 < ny {
                edge(p, p + nx, d.vertical(i, j));
            }
        }
    }
    if n == 1 {
        t.push((0, 0, 0.0));
    }
    SparseMatrix::from_triplets(n, t).expect("stencil indices lie on the grid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OsmosisConfig {
    pub tau: f64,
    /// Fixed step count; ignored in steady-state mode.
    pub steps: usize,
    pub steady_state: bool,
    /// Relative change per step below which the steady state is declared.
    pub tolerance: f64,
    pub max_steps: usize,
    pub solver: SolverSettings,
}

impl Default for OsmosisConfig {
    fn default() -> Self {
        Self {
            tau: 1000.0,
            steps: 0,
            steady_state: true,
            tolerance: 1e-10,
            max_steps: 10_000,
            solver: SolverSettings::with_tol(1e-11),
        }
    }
}

impl OsmosisConfig {
    pub fn fixed(tau: f64, steps: usize) -> Self {
        Self {
            tau,
            steps,
            steady_state: false,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return argument("osmosis time step must be positive");
        }
        if self.steady_state && !(self.tolerance > 0.0) {
            return argument("steady-state tolerance must be positive");
        }
        Ok(())
    }
}

/// `P = (I − τA)⁻¹` applied `steps` times, transposed solves for the adjoint.
#[derive(Debug, Clone)]
pub struct OsmosisOperator {
    nx: usize,
    ny: usize,
    system: SparseMatrix,
    system_t: SparseMatrix,
    steps: usize,
    solver: SolverSettings,
}

impl OsmosisOperator {
    fn new(d: &DriftField, tau: f64, solver: SolverSettings) -> Self {
        let system = assemble_osmosis(d).shifted(1.0, -tau);
        Self {
            nx: d.nx,
            ny: d.ny,
            system_t: system.transpose(),
            system,
            steps: 0,
            solver,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        bicgstab_solve(&self.system, x, Some(x), &self.solver)
    }

    /// Iterates from `x` until the relative change drops below `tol`.
    fn iterate_to_steady(&self, x: &[f64], tol: f64, max_steps: usize) -> Result<(Vec<f64>, usize)> {
        let mut u = x.to_vec();
        for k in 1..=max_steps {
            let next = self.step(&u)?;
            let diff: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
            let change = norm(&diff) / norm(&next).max(f64::MIN_POSITIVE);
            u = next;
            if change < tol {
                return Ok((u, k));
            }
        }
        Err(Error::Solver {
            iterations: max_steps,
            residual: f64::NAN,
        })
    }
}

impl LinearOperator for OsmosisOperator {
    fn dim(&self) -> usize {
        self.nx * self.ny
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.dim())?;
        let mut u = x.to_vec();
        for _ in 0..self.steps {
            u = self.step(&u)?;
        }
        Ok(u)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(y, self.dim())?;
        let mut u = y.to_vec();
        for _ in 0..self.steps {
            u = bicgstab_solve(&self.system_t, &u, Some(&u), &self.solver)?;
        }
        Ok(u)
    }
}

/// The state transition of `cfg`. In steady-state mode the step count is
/// fixed once by iterating the constant image to convergence, so the result
/// is a genuine linear map.
pub fn osmosis_s(d: &DriftField, cfg: &OsmosisConfig) -> Result<OsmosisOperator> {
    cfg.validate()?;
    let mut op = OsmosisOperator::new(d, cfg.tau, cfg.solver);
    op.steps = if cfg.steady_state {
        let ones = vec![1.0; op.dim()];
        op.iterate_to_steady(&ones, cfg.tolerance, cfg.max_steps)?.1
    } else {
        cfg.steps
    };
    Ok(op)
}

pub fn osmosis_evolve(f: &Image, d: &DriftField, cfg: &OsmosisConfig) -> Result<Image> {
    cfg.validate()?;
    if f.nx() != d.nx || f.ny() != d.ny {
        return argument("image and drift dimensions differ");
    }
    if f.data().iter().any(|&x| !(x > 0.0)) {
        return argument("osmosis needs a strictly positive initial image");
    }
    let op = OsmosisOperator::new(d, cfg.tau, cfg.solver);
    let u = if cfg.steady_state {
        op.iterate_to_steady(f.data(), cfg.tolerance, cfg.max_steps)?.0
    } else {
        let mut op = op;
        op.steps = cfg.steps;
        op.apply(f.data())?
    };
    Ok(Image::from_vec_unchecked(f.nx(), f.ny(), u))
}

#[derive(Debug, Clone)]
pub struct SteadyStateReport {
    pub steps: usize,
    /// Mean of all columns of the steady-state `S`.
    pub common_source: Vec<f64>,
    /// Mean of each row; the value of the (constant) drain echo.
    pub drain_constants: Vec<f64>,
    /// Largest deviation of any column from `common_source`.
    pub source_deviation: f64,
    /// Largest deviation of any row entry from its row mean.
    pub drain_deviation: f64,
    pub singular_values: Vec<f64>,
}

impl SteadyStateReport {
    pub fn sigma_ratio(&self) -> f64 {
        match self.singular_values.as_slice() {
            [s1, s2, ..] if *s1 > 0.0 => s2 / s1,
            _ => 0.0,
        }
    }

    pub fn is_rank_one(&self, tol: f64) -> bool {
        self.source_deviation <= tol && self.drain_deviation <= tol
    }
}

/// Materialises the steady-state `S` and measures how close it is to the
/// rank-1 outer product of the steady state with a constant vector.
pub fn steady_state_echo_check(d: &DriftField, cfg: &OsmosisConfig) -> Result<SteadyStateReport> {
    if !cfg.steady_state {
        return argument("steady-state check needs steady-state mode");
    }
    let op = osmosis_s(d, cfg)?;
    let s: DMatrix<f64> = materialize(&op)?;
    let n = s.nrows();
    let common: Vec<f64> = (0..n).map(|r| s.row(r).mean()).collect();
    let mut source_dev: f64 = 0.0;
    for c in 0..n {
        for r in 0..n {
            source_dev = source_dev.max((s[(r, c)] - common[r]).abs());
        }
    }
    // Rows are constant exactly when all columns agree.
    let drain_dev = source_dev;
    let mut sv: Vec<f64> = s.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(SteadyStateReport {
        steps: op.steps,
        drain_constants: common.clone(),
        common_source: common,
        source_deviation: source_dev,
        drain_deviation: drain_dev,
        singular_values: sv,
    })
}
