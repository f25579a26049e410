//! Source and drain echoes of an arbitrary state transition operator.

use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::image::Image;
use crate::linalg::{check_len, dot, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Column `i` of `S`: where pixel `i` sends its grey value.
    #[default]
    Source,
    /// Row `j` of `S`: which pixels contribute to output `j`.
    Drain,
}

impl std::str::FromStr for Direction {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Self::Source),
            "drain" => Ok(Self::Drain),
            other => argument(format!("unknown echo direction {other:?}")),
        }
    }
}

/// Which plane of a flow operator the pixel index addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    #[default]
    Scalar,
    FlowU,
    FlowV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EchoRequest {
    pub x: usize,
    pub y: usize,
    pub direction: Direction,
    #[serde(default)]
    pub component: Component,
}

impl EchoRequest {
    pub fn source(x: usize, y: usize) -> Self {
        Self {
            x,
            y,
            direction: Direction::Source,
            component: Component::Scalar,
        }
    }

    pub fn drain(x: usize, y: usize) -> Self {
        Self {
            direction: Direction::Drain,
            ..Self::source(x, y)
        }
    }

    /// Position of the unit impulse in the operator's input or output vector.
    pub fn linear_index(&self, nx: usize, ny: usize) -> Result<usize> {
        if self.x >= nx || self.y >= ny {
            return argument(format!("pixel ({}, {}) outside {nx}x{ny} image", self.x, self.y));
        }
        let k = self.y * nx + self.x;
        Ok(match self.component {
            Component::Scalar | Component::FlowU => k,
            Component::FlowV => nx * ny + k,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoImage {
    pub nx: usize,
    pub ny: usize,
    /// Length `nx·ny`, or `2·nx·ny` for flow operators (u plane then v plane).
    pub raw: Vec<f64>,
    pub index: usize,
    pub direction: Direction,
    /// Free-form label of the generating filter.
    #[serde(default)]
    pub filter: String,
}

impl EchoImage {
    pub fn max(&self) -> f64 {
        self.raw.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.raw.iter().sum()
    }

    /// The first `nx·ny` values as an image.
    pub fn plane(&self, k: usize) -> Result<Image> {
        let n = self.nx * self.ny;
        let slice = self
            .raw
            .get(k * n..(k + 1) * n)
            .ok_or_else(|| crate::Error::Argument(format!("echo has no plane {k}")))?;
        Image::new(self.nx, self.ny, slice.to_vec())
    }
}

fn unit(n: usize, i: usize) -> Result<Vec<f64>> {
    if i >= n {
        return argument(format!("index {i} out of range for dimension {n}"));
    }
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    Ok(e)
}

/// `S e_i`.
pub fn source_echo(op: &(impl LinearOperator + ?Sized), i: usize) -> Result<Vec<f64>> {
    op.apply(&unit(op.dim(), i)?)
}

/// `Sᵀ e_j`.
pub fn drain_echo(op: &(impl LinearOperator + ?Sized), j: usize) -> Result<Vec<f64>> {
    op.apply_adjoint(&unit(op.dim(), j)?)
}

pub fn echo(op: &(impl LinearOperator + ?Sized), index: usize, direction: Direction) -> Result<Vec<f64>> {
    match direction {
        Direction::Source => source_echo(op, index),
        Direction::Drain => drain_echo(op, index),
    }
}

/// Echo for a pixel request on an `nx × ny` grid.
pub fn echo_image(
    op: &(impl LinearOperator + ?Sized),
    nx: usize,
    ny: usize,
    req: &EchoRequest,
    filter: &str,
) -> Result<EchoImage> {
    let index = req.linear_index(nx, ny)?;
    Ok(EchoImage {
        nx,
        ny,
        raw: echo(op, index, req.direction)?,
        index,
        direction: req.direction,
        filter: filter.to_string(),
    })
}

/// Sum of the echoes of all listed indices, computed with one application.
pub fn cumulative_echo(
    op: &(impl LinearOperator + ?Sized),
    indices: &[usize],
    direction: Direction,
) -> Result<Vec<f64>> {
    let n = op.dim();
    let mut e = vec![0.0; n];
    for &i in indices {
        if i >= n {
            return argument(format!("index {i} out of range for dimension {n}"));
        }
        e[i] += 1.0;
    }
    match direction {
        Direction::Source => op.apply(&e),
        Direction::Drain => op.apply_adjoint(&e),
    }
}

/// `Σ_k f_k s_k`, one echo per nonzero input value.
pub fn reconstruct_from_source(op: &(impl LinearOperator + ?Sized), f: &[f64]) -> Result<Vec<f64>> {
    check_len(f, op.dim())?;
    let mut u = vec![0.0; op.dim()];
    for (k, &fk) in f.iter().enumerate() {
        if fk != 0.0 {
            let s = source_echo(op, k)?;
            for (u, s) in u.iter_mut().zip(s) {
                *u += fk * s;
            }
        }
    }
    Ok(u)
}

/// `u_j = d_jᵀ f`.
pub fn reconstruct_pixel_from_drain(op: &(impl LinearOperator + ?Sized), f: &[f64], j: usize) -> Result<f64> {
    check_len(f, op.dim())?;
    Ok(dot(&drain_echo(op, j)?, f))
}

/// Relative threshold below which echo values do not count as segment support.
pub const SEGMENT_THRESHOLD: f64 = 1e-6;

/// Source echo of pixel `i` and its support `{ k : s_k > 1e-6 · max s }`.
pub fn segment_extract(op: &(impl LinearOperator + ?Sized), i: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    let s = source_echo(op, i)?;
    let max = s.iter().copied().fold(0.0, f64::max);
    let support = s.iter().map(|&v| max > 0.0 && v > SEGMENT_THRESHOLD * max).collect();
    Ok((s, support))
}
