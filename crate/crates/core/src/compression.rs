//! Randomised truncated SVD of a state transition operator, impulse
//! exclusion for near-identity echoes, error estimation and the `.echosvd`
//! file format.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::linalg::{check_len, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FloatWidth {
    #[default]
    F64,
    F32,
}

impl FloatWidth {
    fn bytes(self) -> usize {
        match self {
            Self::F64 => 8,
            Self::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    /// Target rank; takes precedence over `rank_fraction`.
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default = "default_fraction")]
    pub rank_fraction: Option<f64>,
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default)]
    pub seed: u64,
    /// Echoes whose diagonal entry exceeds `1 − epsilon` are stored as unit
    /// impulses. 0 disables the exclusion.
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_diag_probes")]
    pub diagonal_probes: usize,
    #[serde(default)]
    pub storage: FloatWidth,
}

fn default_fraction() -> Option<f64> {
    Some(0.025)
}
fn default_q() -> usize {
    3
}
fn default_oversample() -> usize {
    10
}
fn default_diag_probes() -> usize {
    64
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            rank: None,
            rank_fraction: default_fraction(),
            q: default_q(),
            oversample: default_oversample(),
            seed: 0,
            epsilon: 0.0,
            diagonal_probes: default_diag_probes(),
            storage: FloatWidth::F64,
        }
    }
}

impl CompressionConfig {
    pub fn with_rank(k: usize) -> Self {
        Self {
            rank: Some(k),
            rank_fraction: None,
            ..Self::default()
        }
    }

    pub fn with_fraction(fraction: f64) -> Self {
        Self {
            rank: None,
            rank_fraction: Some(fraction),
            ..Self::default()
        }
    }

    /// Rank for an operator of dimension `n`; fractions round to nearest.
    pub fn resolve_rank(&self, n: usize) -> Result<usize> {
        let k = match (self.rank, self.rank_fraction) {
            (Some(k), _) => k,
            (None, Some(f)) => {
                if !(f > 0.0 && f <= 1.0) {
                    return argument(format!("rank fraction must lie in (0, 1], got {f}"));
                }
                ((f * n as f64).round() as usize).max(1)
            }
            (None, None) => return argument("either rank or rank_fraction is required"),
        };
        if k == 0 {
            return argument("rank must be at least 1");
        }
        Ok(k.min(n))
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return argument("power parameter q must be at least 1");
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return argument(format!("exclusion epsilon must lie in [0, 1), got {}", self.epsilon));
        }
        if self.epsilon > 0.0 && self.diagonal_probes == 0 {
            return argument("exclusion needs at least one diagonal probe");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    /// `n × k`, orthonormal columns.
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    /// `n × k`, orthonormal columns.
    pub v: DMatrix<f64>,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    fn empty(n: usize) -> Self {
        Self {
            u: DMatrix::zeros(n, 0),
            sigma: Vec::new(),
            v: DMatrix::zeros(n, 0),
        }
    }
}

/// Applies `op` (or its adjoint) to every column of `x`.
fn apply_columns(op: &(impl LinearOperator + ?Sized), x: &DMatrix<f64>, adjoint: bool) -> Result<DMatrix<f64>> {
    let n = op.dim();
    let cols: Vec<Vec<f64>> = (0..x.ncols())
        .into_par_iter()
        .map(|c| {
            let col: Vec<f64> = x.column(c).iter().copied().collect();
            if adjoint {
                op.apply_adjoint(&col)
            } else {
                op.apply(&col)
            }
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]))
}

fn orthonormalise(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

fn gaussian_column(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Orthonormal `Q` with `QQᵀA ≈ A`: `Q = orth((AAᵀ)^{q−1} A G)`, with an
/// orthonormalisation after every application.
pub fn rangefinder(op: &(impl LinearOperator + ?Sized), width: usize, q: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = op.dim();
    if width == 0 || width > n {
        return argument(format!("rangefinder width {width} must lie in 1..={n}"));
    }
    if q == 0 {
        return argument("power parameter q must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = DMatrix::zeros(n, width);
    for c in 0..width {
        g.set_column(c, &nalgebra::DVector::from_vec(gaussian_column(&mut rng, n)));
    }
    let mut y = apply_columns(op, &g, false)?;
    for c in 0..width {
        if y.column(c).iter().all(|&v| v == 0.0) {
            let fresh = gaussian_column(&mut rng, n);
            let again = op.apply(&fresh)?;
            if again.iter().all(|&v| v == 0.0) {
                return argument("operator annihilates the random probes");
            }
            y.set_column(c, &nalgebra::DVector::from_vec(again));
        }
    }
    let mut qm = orthonormalise(y);
    for _ in 1..q {
        let z = orthonormalise(apply_columns(op, &qm, true)?);
        qm = orthonormalise(apply_columns(op, &z, false)?);
    }
    Ok(qm)
}

/// Rank-`k` factors from a rangefinder of width `k + oversample`.
pub fn rsvd(op: &(impl LinearOperator + ?Sized), k: usize, oversample: usize, q: usize, seed: u64) -> Result<TruncatedSvd> {
    let n = op.dim();
    if n == 0 {
        return Ok(TruncatedSvd::empty(0));
    }
    let k = k.min(n);
    let width = (k + oversample).min(n);
    let qm = rangefinder(op, width, q, seed)?;
    // Bᵀ = Aᵀ Q is n × width; its SVD Ũ Σ Ṽᵀ gives A ≈ (Q Ṽ) Σ Ũᵀ.
    let bt = apply_columns(op, &qm, true)?;
    let svd = bt.svd(true, true);
    let ut = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(k);
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let v = DMatrix::from_fn(n, order.len(), |r, c| ut[(r, order[c])]);
    let small = DMatrix::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)]);
    let u = &qm * small;
    Ok(TruncatedSvd { u, sigma, v })
}

/// Operator restricted to the kept coordinates.
struct Deflated<'a, T: ?Sized> {
    inner: &'a T,
    keep: &'a [usize],
}

impl<T: LinearOperator + ?Sized> Deflated<'_, T> {
    fn run(&self, x: &[f64], adjoint: bool) -> Result<Vec<f64>> {
        check_len(x, self.keep.len())?;
        let mut full = vec![0.0; self.inner.dim()];
        for (&k, &v) in self.keep.iter().zip(x) {
            full[k] = v;
        }
        let y = if adjoint {
            self.inner.apply_adjoint(&full)?
        } else {
            self.inner.apply(&full)?
        };
        Ok(self.keep.iter().map(|&k| y[k]).collect())
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for Deflated<'_, T> {
    fn dim(&self) -> usize {
        self.keep.len()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.run(x, false)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.run(y, true)
    }
}

/// Counts applications on the deflated path only.
struct Counted<'a, T: ?Sized> {
    inner: &'a T,
    count: AtomicUsize,
}

impl<T: LinearOperator + ?Sized> LinearOperator for Counted<'_, T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_adjoint(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CompressionStats {
    pub rank: usize,
    pub width: usize,
    pub deflated_dim: usize,
    /// Applications spent in the rangefinder and projection.
    pub rangefinder_applications: usize,
    pub diagonal_probe_applications: usize,
    pub verification_applications: usize,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedEchoes {
    pub nx: usize,
    pub ny: usize,
    /// 1 for images, 2 for flow fields.
    pub components: usize,
    /// `(N − m) × k`.
    pub u: DMatrix<f64>,
    /// `V_k Σ_k`, `(N − m) × k`.
    pub v_sigma: DMatrix<f64>,
    pub sigma: Vec<f64>,
    /// Sorted linear indices of echoes stored as unit impulses.
    pub exclusions: Vec<usize>,
    pub storage: FloatWidth,
    /// Generator description, kept in memory only.
    pub metadata: serde_json::Value,
    pub stats: CompressionStats,
    /// Position of each full index in the deflated vectors.
    positions: Vec<Option<usize>>,
}

impl CompressedEchoes {
    fn new(
        nx: usize,
        ny: usize,
        components: usize,
        u: DMatrix<f64>,
        v_sigma: DMatrix<f64>,
        sigma: Vec<f64>,
        exclusions: Vec<usize>,
        storage: FloatWidth,
    ) -> Result<Self> {
        let n = nx * ny * components;
        let mut positions = vec![None; n];
        let mut excluded = vec![false; n];
        for &e in &exclusions {
            if e >= n || excluded[e] {
                return Err(Error::Format(format!("invalid exclusion index {e}")));
            }
            excluded[e] = true;
        }
        let mut next = 0;
        for (k, p) in positions.iter_mut().enumerate() {
            if !excluded[k] {
                *p = Some(next);
                next += 1;
            }
        }
        if u.nrows() != next || v_sigma.nrows() != next || u.ncols() != sigma.len() || v_sigma.ncols() != sigma.len() {
            return Err(Error::Format("factor shapes do not match the header".into()));
        }
        Ok(Self {
            nx,
            ny,
            components,
            u,
            v_sigma,
            sigma,
            exclusions,
            storage,
            metadata: serde_json::Value::Null,
            stats: CompressionStats::default(),
            positions,
        })
    }

    pub fn dim(&self) -> usize {
        self.positions.len()
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_excluded(&self, i: usize) -> bool {
        self.positions.get(i).is_some_and(|p| p.is_none())
    }

    /// `V_k` recovered from the stored `V_k Σ_k`.
    pub fn v(&self) -> DMatrix<f64> {
        let mut v = self.v_sigma.clone();
        for (c, &s) in self.sigma.iter().enumerate() {
            if s > 0.0 {
                v.column_mut(c).scale_mut(1.0 / s);
            }
        }
        v
    }

    fn check_rank(&self, rank: Option<usize>) -> Result<usize> {
        match rank {
            None => Ok(self.rank()),
            Some(r) if r <= self.rank() => Ok(r),
            Some(r) => argument(format!("rank {r} exceeds stored rank {}", self.rank())),
        }
    }

    fn embed(&self, reduced: impl Fn(usize) -> f64) -> Vec<f64> {
        self.positions.iter().map(|p| p.map_or(0.0, &reduced)).collect()
    }

    fn reconstruct(&self, i: usize, rank: Option<usize>, left: &DMatrix<f64>, right: &DMatrix<f64>) -> Result<Vec<f64>> {
        let rank = self.check_rank(rank)?;
        let Some(pos) = self.positions.get(i).copied() else {
            return argument(format!("index {i} out of range for dimension {}", self.dim()));
        };
        let Some(r) = pos else {
            let mut e = vec![0.0; self.dim()];
            e[i] = 1.0;
            return Ok(e);
        };
        let coeffs: Vec<f64> = (0..rank).map(|c| right[(r, c)]).collect();
        Ok(self.embed(|p| (0..rank).map(|c| left[(p, c)] * coeffs[c]).sum()))
    }

    /// Column `i` of `Û`: `U_k (V_k Σ_k)[i, :]ᵀ`, optionally truncated.
    pub fn reconstruct_source(&self, i: usize, rank: Option<usize>) -> Result<Vec<f64>> {
        self.reconstruct(i, rank, &self.u, &self.v_sigma)
    }

    /// Row `j`: `V_k Σ_k U_k[j, :]ᵀ`.
    pub fn reconstruct_drain(&self, j: usize, rank: Option<usize>) -> Result<Vec<f64>> {
        self.reconstruct(j, rank, &self.v_sigma, &self.u)
    }

    /// Left singular vector `index` (1-based), zero at excluded coordinates.
    pub fn singular_vector(&self, index: usize) -> Result<Vec<f64>> {
        if index == 0 || index > self.rank() {
            return argument(format!("singular vector index {index} outside 1..={}", self.rank()));
        }
        Ok(self.embed(|p| self.u[(p, index - 1)]))
    }

    /// `index,sigma` lines, 1-based, no header.
    pub fn spectrum_csv(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sigma.iter().enumerate() {
            out.push_str(&format!("{},{:?}\n", i + 1, s));
        }
        out
    }

    pub fn write_spectrum(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.spectrum_csv())?;
        Ok(())
    }

    /// Predicted `.echosvd` size in bytes.
    pub fn file_size(&self) -> usize {
        let d = self.dim() - self.exclusions.len();
        HEADER_LEN + 8 * self.exclusions.len() + (2 * d * self.rank() + self.rank()) * self.storage.bytes()
    }
}

impl LinearOperator for CompressedEchoes {
    fn dim(&self) -> usize {
        self.positions.len()
    }

    /// `Ŝ x`: low-rank part on the kept coordinates, identity on excluded ones.
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.dim())?;
        let xr = nalgebra::DVector::from_iterator(
            self.u.nrows(),
            self.positions.iter().zip(x).filter_map(|(p, &v)| p.map(|_| v)),
        );
        let y = &self.u * (self.v_sigma.tr_mul(&xr));
        let mut out = self.embed(|p| y[p]);
        for &e in &self.exclusions {
            out[e] = x[e];
        }
        Ok(out)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(y, self.dim())?;
        let yr = nalgebra::DVector::from_iterator(
            self.u.nrows(),
            self.positions.iter().zip(y).filter_map(|(p, &v)| p.map(|_| v)),
        );
        let x = &self.v_sigma * (self.u.tr_mul(&yr));
        let mut out = self.embed(|p| x[p]);
        for &e in &self.exclusions {
            out[e] = y[e];
        }
        Ok(out)
    }
}

fn rademacher(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Componentwise mean and standard error of `z ∘ S z` over Rademacher probes.
pub fn estimate_diagonal(op: &(impl LinearOperator + ?Sized), probes: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zs: Vec<Vec<f64>> = (0..probes).map(|_| rademacher(&mut rng, n)).collect();
    let samples: Vec<Vec<f64>> = zs
        .par_iter()
        .map(|z| Ok(op.apply(z)?.iter().zip(z).map(|(a, b)| a * b).collect()))
        .collect::<Result<_>>()?;
    let m = probes as f64;
    let mut mean = vec![0.0; n];
    for s in &samples {
        for (a, b) in mean.iter_mut().zip(s) {
            *a += b / m;
        }
    }
    let mut se = vec![0.0; n];
    if probes > 1 {
        for s in &samples {
            for k in 0..n {
                se[k] += (s[k] - mean[k]).powi(2);
            }
        }
        for v in &mut se {
            *v = (*v / (m - 1.0)).sqrt() / m.sqrt();
        }
    }
    Ok((mean, se))
}

/// Seeds for the separate random streams of one run.
const DIAGONAL_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Compresses all echoes of `op`. `nx × ny × components` must equal `op.dim()`.
pub fn compress_echoes(
    op: &(impl LinearOperator + ?Sized),
    nx: usize,
    ny: usize,
    components: usize,
    cfg: &CompressionConfig,
) -> Result<CompressedEchoes> {
    cfg.validate()?;
    let n = op.dim();
    if nx * ny * components != n {
        return argument(format!("grid {nx}x{ny}x{components} does not match operator dimension {n}"));
    }
    let k_target = cfg.resolve_rank(n)?;
    let mut stats = CompressionStats::default();

    let mut exclusions = Vec::new();
    if cfg.epsilon > 0.0 {
        let (mean, se) = estimate_diagonal(op, cfg.diagonal_probes, cfg.seed ^ DIAGONAL_STREAM)?;
        stats.diagonal_probe_applications = cfg.diagonal_probes;
        let threshold = 1.0 - cfg.epsilon;
        let candidates: Vec<usize> = (0..n).filter(|&i| mean[i] > threshold - 3.0 * se[i]).collect();
        stats.candidates = candidates.len();
        stats.verification_applications = candidates.len();
        let verified: Vec<Option<usize>> = candidates
            .par_iter()
            .map(|&i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                Ok((op.apply(&e)?[i] > threshold).then_some(i))
            })
            .collect::<Result<_>>()?;
        exclusions = verified.into_iter().flatten().collect();
    }

    let mut excluded = vec![false; n];
    for &e in &exclusions {
        excluded[e] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !excluded[i]).collect();
    let deflated = Deflated { inner: op, keep: &keep };
    let counted = Counted {
        inner: &deflated,
        count: AtomicUsize::new(0),
    };
    let d = keep.len();
    let k = k_target.min(d);
    let svd = if k == 0 {
        TruncatedSvd::empty(d)
    } else {
        rsvd(&counted, k, cfg.oversample, cfg.q, cfg.seed)?
    };
    stats.rank = svd.rank();
    stats.width = if k == 0 { 0 } else { (k + cfg.oversample).min(d) };
    stats.deflated_dim = d;
    stats.rangefinder_applications = counted.count.load(Ordering::Relaxed);

    let mut v_sigma = svd.v;
    for (c, &s) in svd.sigma.iter().enumerate() {
        v_sigma.column_mut(c).scale_mut(s);
    }
    let mut c = CompressedEchoes::new(nx, ny, components, svd.u, v_sigma, svd.sigma, exclusions, cfg.storage)?;
    c.stats = stats;
    Ok(c)
}

/// `sqrt(mean ‖(S − Ŝ) z‖²)` over Rademacher probes `z`.
pub fn frobenius_error_estimate(
    op: &(impl LinearOperator + ?Sized),
    approx: &(impl LinearOperator + ?Sized),
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let approx: &dyn LinearOperator = &DynRef(approx);
    Ok(frobenius_error_estimates(op, &[approx], probes, seed)?[0])
}

struct DynRef<'a, T: ?Sized>(&'a T);

impl<T: LinearOperator + ?Sized> LinearOperator for DynRef<'_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.0.apply_adjoint(y)
    }
}

/// Error estimates for several approximations of the same operator. Each
/// probe is pushed through `S` once; results equal separate calls with the
/// same seed.
pub fn frobenius_error_estimates(
    op: &(impl LinearOperator + ?Sized),
    approxes: &[&dyn LinearOperator],
    probes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if probes == 0 {
        return argument("at least one probe is required");
    }
    let n = op.dim();
    if approxes.iter().any(|a| a.dim() != n) {
        return argument("operator dimensions differ");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zs: Vec<Vec<f64>> = (0..probes).map(|_| rademacher(&mut rng, n)).collect();
    let sq: Vec<Vec<f64>> = zs
        .par_iter()
        .map(|z| {
            let a = op.apply(z)?;
            approxes
                .iter()
                .map(|approx| {
                    let b = approx.apply(z)?;
                    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum())
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..approxes.len())
        .map(|k| (sq.iter().map(|s| s[k]).sum::<f64>() / probes as f64).sqrt())
        .collect())
}

const MAGIC: &[u8; 8] = b"ECHOSVD1";
const HEADER_LEN: usize = 8 + 4 * 4 + 1 + 7;

fn put_floats(out: &mut Vec<u8>, values: impl Iterator<Item = f64>, width: FloatWidth) {
    for v in values {
        match width {
            FloatWidth::F64 => out.extend_from_slice(&v.to_le_bytes()),
            FloatWidth::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
}

pub fn encode(c: &CompressedEchoes) -> Vec<u8> {
    let mut out = Vec::with_capacity(c.file_size());
    out.extend_from_slice(MAGIC);
    for v in [c.nx, c.ny, c.rank(), c.exclusions.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(c.storage.bytes() as u8);
    let mut reserved = [0u8; 7];
    if c.components == 2 {
        reserved[0] = 2;
    }
    out.extend_from_slice(&reserved);
    let plane = c.nx * c.ny;
    for &e in &c.exclusions {
        let p = e % plane;
        out.extend_from_slice(&((p % c.nx) as u32).to_le_bytes());
        out.extend_from_slice(&((p / c.nx) as u32).to_le_bytes());
    }
    put_floats(&mut out, c.u.iter().copied(), c.storage);
    put_floats(&mut out, c.v_sigma.iter().copied(), c.storage);
    put_floats(&mut out, c.sigma.iter().copied(), c.storage);
    out
}

pub fn serialize(c: &CompressedEchoes, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode(c))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("file truncated".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn floats(&mut self, count: usize, width: FloatWidth) -> Result<Vec<f64>> {
        let raw = self.take(count * width.bytes())?;
        Ok(match width {
            FloatWidth::F64 => raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
            FloatWidth::F32 => raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect(),
        })
    }
}

pub fn decode(bytes: &[u8]) -> Result<CompressedEchoes> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| Error::Format("missing magic".into()))? != MAGIC {
        return Err(Error::Format("bad magic, not an .echosvd file".into()));
    }
    let (nx, ny, k, m) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let storage = match r.take(1)?[0] {
        8 => FloatWidth::F64,
        4 => FloatWidth::F32,
        other => return Err(Error::Format(format!("unsupported float width {other}"))),
    };
    let reserved = r.take(7)?;
    let components = if reserved[0] == 2 { 2 } else { 1 };
    let n = nx
        .checked_mul(ny)
        .and_then(|p| p.checked_mul(components))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    if m > n {
        return Err(Error::Format("more exclusions than pixels".into()));
    }
    let mut exclusions = Vec::with_capacity(m);
    for _ in 0..m {
        let (i, j) = (r.u32()?, r.u32()?);
        if i >= nx || j >= ny {
            return Err(Error::Format(format!("exclusion ({i}, {j}) outside the grid")));
        }
        exclusions.push(j * nx + i);
    }
    let d = n - m;
    let expected = HEADER_LEN + 8 * m + (2 * d * k + k) * storage.bytes();
    if bytes.len() != expected {
        return Err(Error::Format(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let u = DMatrix::from_vec(d, k, r.floats(d * k, storage)?);
    let v_sigma = DMatrix::from_vec(d, k, r.floats(d * k, storage)?);
    let sigma = r.floats(k, storage)?;
    CompressedEchoes::new(nx, ny, components, u, v_sigma, sigma, exclusions, storage)
}

pub fn deserialize(path: impl AsRef<Path>) -> Result<CompressedEchoes> {
    decode(&fs::read(path)?)
}
