//! Serializable filter descriptions shared by the CLI, the HTTP service and
//! the C interface.

use serde::{Deserialize, Serialize};

use crate::diffusion::{evolve, DiffusionConfig, DiffusionModel, Diffusivity, DiffusivityKind, FrozenEvolution};
use crate::error::Result;
use crate::image::Image;
use crate::kernels::{bilateral_s, nlmeans_s, BilateralConfig, KernelOperator, NLMeansConfig};
use crate::linalg::LinearOperator;

fn default_tau() -> f64 {
    DiffusionConfig::DEFAULT_TAU
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum FilterSpec {
    /// Homogeneous diffusion; `time = 0` gives the identity.
    Hd {
        time: f64,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    Nld {
        diffusivity: DiffusivityKind,
        lambda: f64,
        #[serde(default)]
        sigma: f64,
        time: f64,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    Eed {
        diffusivity: DiffusivityKind,
        lambda: f64,
        #[serde(default)]
        sigma: f64,
        time: f64,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    Bilateral(BilateralConfig),
    NlMeans(NLMeansConfig),
}

impl FilterSpec {
    pub fn diffusion_config(&self) -> Option<Result<DiffusionConfig>> {
        let build = |model, kind, lambda, sigma, time, tau| -> Result<DiffusionConfig> {
            DiffusionConfig::from_time(model, Diffusivity::new(kind, lambda)?, sigma, time, tau)
        };
        Some(match *self {
            Self::Hd { time, tau } => build(DiffusionModel::Homogeneous, DiffusivityKind::Charbonnier, 1.0, 0.0, time, tau),
            Self::Nld {
                diffusivity,
                lambda,
                sigma,
                time,
                tau,
            } => build(DiffusionModel::IsotropicNonlinear, diffusivity, lambda, sigma, time, tau),
            Self::Eed {
                diffusivity,
                lambda,
                sigma,
                time,
                tau,
            } => build(DiffusionModel::Eed, diffusivity, lambda, sigma, time, tau),
            _ => return None,
        })
    }

    /// Parameters for the same scene sampled `factor` times coarser: lengths
    /// shrink by `factor`, times by `factor²`, gradients grow by `factor`.
    /// The time step `tau` is kept. NL-means is returned unchanged.
    pub fn downscaled(&self, factor: f64) -> FilterSpec {
        let f2 = factor * factor;
        match *self {
            Self::Hd { time, tau } => Self::Hd { time: time / f2, tau },
            Self::Nld {
                diffusivity,
                lambda,
                sigma,
                time,
                tau,
            } => Self::Nld {
                diffusivity,
                lambda: lambda * factor,
                sigma: sigma / factor,
                time: time / f2,
                tau,
            },
            Self::Eed {
                diffusivity,
                lambda,
                sigma,
                time,
                tau,
            } => Self::Eed {
                diffusivity,
                lambda: lambda * factor,
                sigma: sigma / factor,
                time: time / f2,
                tau,
            },
            Self::Bilateral(c) => Self::Bilateral(BilateralConfig {
                sigma_s: c.sigma_s / factor,
                window_radius: (c.window_radius as f64 / factor).ceil() as usize,
                ..c
            }),
            Self::NlMeans(c) => Self::NlMeans(c),
        }
    }

    /// Short human-readable label, e.g. `nld(weickert, λ=5, σ=0.5, t=15000)`.
    pub fn label(&self) -> String {
        match self {
            Self::Hd { time, .. } => format!("hd(t={time})"),
            Self::Nld {
                diffusivity,
                lambda,
                sigma,
                time,
                ..
            } => format!("nld({}, λ={lambda}, σ={sigma}, t={time})", kind_name(*diffusivity)),
            Self::Eed {
                diffusivity,
                lambda,
                sigma,
                time,
                ..
            } => format!("eed({}, λ={lambda}, σ={sigma}, t={time})", kind_name(*diffusivity)),
            Self::Bilateral(c) => format!("bilateral(σt={}, σs={}, r={})", c.sigma_t, c.sigma_s, c.window_radius),
            Self::NlMeans(c) => format!("nlmeans(σ={}, patch={}, search={})", c.sigma, c.patch_radius, c.search_radius),
        }
    }
}

fn kind_name(k: DiffusivityKind) -> &'static str {
    match k {
        DiffusivityKind::Charbonnier => "charbonnier",
        DiffusivityKind::RationalPeronaMalik => "pm",
        DiffusivityKind::Weickert => "weickert",
    }
}

/// State transition operator of any filter in [`FilterSpec`].
#[derive(Debug, Clone)]
pub enum FilterOperator {
    Diffusion(FrozenEvolution),
    Kernel(KernelOperator),
}

impl LinearOperator for FilterOperator {
    fn dim(&self) -> usize {
        match self {
            Self::Diffusion(op) => op.dim(),
            Self::Kernel(op) => op.dim(),
        }
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Diffusion(op) => op.apply(x),
            Self::Kernel(op) => op.apply(x),
        }
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Diffusion(op) => op.apply_adjoint(y),
            Self::Kernel(op) => op.apply_adjoint(y),
        }
    }
}

/// Filters `f` and returns the result with its state transition operator.
pub fn build_filter(f: &Image, spec: &FilterSpec) -> Result<(Image, FilterOperator)> {
    if let Some(cfg) = spec.diffusion_config() {
        let (u, frozen) = evolve(f, &cfg?)?;
        return Ok((u, FilterOperator::Diffusion(frozen)));
    }
    let op = match spec {
        FilterSpec::Bilateral(c) => bilateral_s(f, c)?,
        FilterSpec::NlMeans(c) => nlmeans_s(f, c)?,
        _ => unreachable!("diffusion filters handled above"),
    };
    Ok((op.filtered(), FilterOperator::Kernel(op)))
}
