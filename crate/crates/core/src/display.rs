//! Conversions from raw echo values to 8-bit rasters.

use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::image::FlowField;

/// Constant inside `log(1 + β|x|)` for logarithmic display.
pub const LOG_BETA: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RescaleMode {
    /// One shared linear scale; the global maximum maps to 255.
    #[default]
    Joint,
    /// Each vector scaled by its own maximum.
    Per,
    /// Shared logarithmic scale, for echoes spanning several decades.
    Log,
}

impl std::str::FromStr for RescaleMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" | "joint-linear" => Ok(Self::Joint),
            "per" | "per-image" | "per-image-linear" => Ok(Self::Per),
            "log" | "logarithmic" => Ok(Self::Log),
            other => argument(format!("unknown rescale mode {other:?}")),
        }
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

fn max_abs_of(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn linear(values: &[f64], max: f64) -> Vec<u8> {
    if max <= 0.0 {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| (v / max * 255.0).floor().clamp(0.0, 255.0) as u8)
        .collect()
}

fn logarithmic(values: &[f64], max_abs: f64) -> Vec<u8> {
    if max_abs <= 0.0 {
        return vec![0; values.len()];
    }
    let denom = (LOG_BETA * max_abs).ln_1p();
    values
        .iter()
        .map(|&v| ((LOG_BETA * v.abs()).ln_1p() / denom * 255.0).floor().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Rescales a set of vectors to 8-bit rasters. Negative values clip to 0 in
/// the linear modes; the logarithmic mode works on magnitudes.
pub fn rescale_for_display(images: &[&[f64]], mode: RescaleMode) -> Result<Vec<Vec<u8>>> {
    if images.is_empty() {
        return argument("nothing to rescale");
    }
    Ok(match mode {
        RescaleMode::Joint => {
            let max = images.iter().map(|v| max_of(v)).fold(0.0, f64::max);
            images.iter().map(|v| linear(v, max)).collect()
        }
        RescaleMode::Per => images.iter().map(|v| linear(v, max_of(v))).collect(),
        RescaleMode::Log => {
            let max = images.iter().map(|v| max_abs_of(v)).fold(0.0, f64::max);
            images.iter().map(|v| logarithmic(v, max)).collect()
        }
    })
}

/// Signed data (e.g. singular vectors): zero maps to mid-grey 127.5 and the
/// largest magnitude to 0 or 255.
pub fn render_signed(values: &[f64]) -> Vec<u8> {
    let m = max_abs_of(values);
    values
        .iter()
        .map(|&v| {
            let g = if m > 0.0 { 127.5 + 127.5 * v / m } else { 127.5 };
            g.round().clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// Grey raster to RGB with a red dot (3×3 plus) at pixel `k` and optional cyan
/// dots at `others`.
pub fn with_markers(nx: usize, ny: usize, raster: &[u8], k: Option<usize>, others: &[usize]) -> Vec<u8> {
    let mut rgb: Vec<u8> = raster.iter().flat_map(|&g| [g, g, g]).collect();
    let mut paint = |centre: usize, colour: [u8; 3]| {
        let (ci, cj) = ((centre % nx) as isize, (centre / nx) as isize);
        for (di, dj) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (i, j) = (ci + di, cj + dj);
            if i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny {
                let p = 3 * (j as usize * nx + i as usize);
                rgb[p..p + 3].copy_from_slice(&colour);
            }
        }
    };
    for &o in others {
        paint(o, [0, 255, 255]);
    }
    if let Some(k) = k {
        paint(k, [255, 0, 0]);
    }
    rgb
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Colour-codes a flow field: hue from direction, saturation from magnitude
/// relative to its 0.99-quantile. Zero flow is white.
pub fn flow_to_rgb(flow: &FlowField) -> Vec<u8> {
    let mags: Vec<f64> = flow
        .u
        .iter()
        .zip(&flow.v)
        .map(|(u, v)| u.hypot(*v))
        .collect();
    let mut sorted = mags.clone();
    sorted.sort_by(f64::total_cmp);
    let q = sorted[((sorted.len() - 1) as f64 * 0.99).round() as usize];
    flow.u
        .iter()
        .zip(&flow.v)
        .zip(&mags)
        .flat_map(|((&u, &v), &m)| {
            let s = if q > 0.0 { (m / q).min(1.0) } else { 0.0 };
            hsv_to_rgb(v.atan2(u).to_degrees().rem_euclid(360.0), s, 1.0)
        })
        .collect()
}
