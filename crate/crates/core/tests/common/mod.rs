//! Dense reference constructions shared by the integration and acceptance
//! targets. Everything here builds S explicitly with nalgebra, independently
//! of the matrix-free replay code.

#![allow(dead_code)]

use echolab::diffusion::{
    diffusivity_field, eed_tensor_field, evolve, DiffusionConfig, DiffusionModel, Diffusivity, DiffusivityKind,
};
use echolab::image::{Image, Mask};
use echolab::inpainting::{inpaint, InpaintConfig};
use echolab::kernels::{bilateral_s, nlmeans_s, BilateralConfig, NLMeansConfig};
use echolab::linalg::{LinearOperator, SolverSettings, SparseMatrix};
use echolab::opticflow::{flow_s, flow_system_from_frames, FlowConfig};
use echolab::osmosis::{assemble_osmosis, drift_from_guidance, osmosis_s, OsmosisConfig};
use echolab::stencil::StencilLaplacian;
use echolab::test_images;
use nalgebra::DMatrix;

pub const TIGHT: f64 = 1e-12;

pub fn tight() -> SolverSettings {
    SolverSettings::with_tol(TIGHT)
}

pub fn dense(m: &SparseMatrix) -> DMatrix<f64> {
    m.to_dense()
}

/// Five-point `div(g ∇·)` with half-point averages `(g_p + g_q)/2`, built
/// entry by entry.
pub fn dense_isotropic(nx: usize, ny: usize, g: &[f64]) -> DMatrix<f64> {
    let n = nx * ny;
    let mut a = DMatrix::zeros(n, n);
    for j in 0..ny {
        for i in 0..nx {
            let p = j * nx + i;
            let mut nb = Vec::new();
            if i + 1 < nx {
                nb.push(p + 1);
            }
            if i > 0 {
                nb.push(p - 1);
            }
            if j + 1 < ny {
                nb.push(p + nx);
            }
            if j > 0 {
                nb.push(p - nx);
            }
            for q in nb {
                let w = 0.5 * (g[p] + g[q]);
                a[(p, q)] += w;
                a[(p, p)] -= w;
            }
        }
    }
    a
}

fn step_inverse(a: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let m = DMatrix::identity(n, n) - a * tau;
    m.try_inverse().expect("I - tau A is invertible")
}

/// Runs the nonlinear evolution densely and returns the product of the step
/// inverses.
pub fn dense_diffusion(f: &Image, cfg: &DiffusionConfig) -> DMatrix<f64> {
    let (nx, ny) = (f.nx(), f.ny());
    let n = f.len();
    let mut s = DMatrix::identity(n, n);
    let mut u = nalgebra::DVector::from_column_slice(f.data());
    for _ in 0..cfg.steps {
        let img = Image::new(nx, ny, u.as_slice().to_vec()).unwrap();
        let a = match cfg.model {
            DiffusionModel::Homogeneous => dense_isotropic(nx, ny, &vec![1.0; n]),
            DiffusionModel::IsotropicNonlinear => {
                dense_isotropic(nx, ny, &diffusivity_field(&img, &cfg.diffusivity, cfg.sigma).unwrap())
            }
            DiffusionModel::Eed => {
                let d = eed_tensor_field(&img, &cfg.diffusivity, cfg.sigma).unwrap();
                dense(&StencilLaplacian::anisotropic(nx, ny, &d).to_sparse())
            }
        };
        let m = step_inverse(&a, cfg.tau);
        u = &m * u;
        s = m * s;
    }
    s
}

/// `S` of inpainting with frozen coefficients: identity rows on the mask,
/// `A u = 0` rows elsewhere, right-hand side `C f`.
pub fn dense_inpainting(lap: &DMatrix<f64>, mask: &Mask) -> DMatrix<f64> {
    let n = lap.nrows();
    let mut b = lap.clone();
    let mut c = DMatrix::zeros(n, n);
    for k in 0..n {
        if mask.is_set(k) {
            b.row_mut(k).fill(0.0);
            b[(k, k)] = 1.0;
            c[(k, k)] = 1.0;
        }
    }
    b.try_inverse().expect("inpainting system is invertible") * c
}

pub fn dense_osmosis(guidance: &Image, tau: f64, steps: usize) -> DMatrix<f64> {
    let a = dense(&assemble_osmosis(&drift_from_guidance(guidance).unwrap()));
    let m = step_inverse(&a, tau);
    let n = a.nrows();
    (0..steps).fold(DMatrix::identity(n, n), |s, _| &m * s)
}

pub fn dense_kernel(f: &Image, weight: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    let n = f.len();
    let mut p = DMatrix::from_fn(n, n, |i, j| weight(i, j));
    for i in 0..n {
        let s: f64 = p.row(i).sum();
        p.row_mut(i).scale_mut(1.0 / s);
    }
    p
}

pub fn reflect(k: isize, n: usize) -> usize {
    let n = n as isize;
    let mut k = k;
    loop {
        if k < 0 {
            k = -k - 1;
        } else if k >= n {
            k = 2 * n - k - 1;
        } else {
            return k as usize;
        }
    }
}

pub fn dense_bilateral(f: &Image, cfg: &BilateralConfig) -> DMatrix<f64> {
    assert_eq!(cfg.window_radius, 0);
    let nx = f.nx();
    dense_kernel(f, |i, j| {
        let (xi, yi) = ((i % nx) as f64, (i / nx) as f64);
        let (xj, yj) = ((j % nx) as f64, (j / nx) as f64);
        let d2 = (xi - xj).powi(2) + (yi - yj).powi(2);
        let df = f.data()[i] - f.data()[j];
        (-df * df / (2.0 * cfg.sigma_t * cfg.sigma_t)).exp() * (-d2 / (2.0 * cfg.sigma_s * cfg.sigma_s)).exp()
    })
}

pub fn dense_nlmeans(f: &Image, cfg: &NLMeansConfig) -> DMatrix<f64> {
    assert_eq!(cfg.search_radius, 0);
    let (nx, ny) = (f.nx(), f.ny());
    let r = cfg.patch_radius as isize;
    let patch = |k: usize| -> Vec<f64> {
        let (ci, cj) = ((k % nx) as isize, (k / nx) as isize);
        let mut out = Vec::new();
        for dj in -r..=r {
            for di in -r..=r {
                if di * di + dj * dj <= r * r {
                    out.push(f.get(reflect(ci + di, nx), reflect(cj + dj, ny)));
                }
            }
        }
        out
    };
    let patches: Vec<Vec<f64>> = (0..f.len()).map(patch).collect();
    dense_kernel(f, |i, j| {
        let d2: f64 = patches[i].iter().zip(&patches[j]).map(|(a, b)| (a - b).powi(2)).sum();
        (-d2 / (2.0 * cfg.sigma * cfg.sigma)).exp()
    })
}

pub struct Family {
    pub name: &'static str,
    pub op: Box<dyn LinearOperator>,
    pub oracle: DMatrix<f64>,
}

fn diffusion_family(name: &'static str, f: &Image, cfg: DiffusionConfig) -> Family {
    let (_, frozen) = evolve(f, &cfg).unwrap();
    Family {
        name,
        op: Box::new(frozen.with_solver(tight())),
        oracle: dense_diffusion(f, &cfg),
    }
}

fn nld(kind: DiffusivityKind, lambda: f64) -> DiffusionConfig {
    DiffusionConfig::from_time(
        DiffusionModel::IsotropicNonlinear,
        Diffusivity::new(kind, lambda).unwrap(),
        0.5,
        15.0,
        5.0,
    )
    .unwrap()
}

/// The twelve operator families on an 8×8 (flow: 8×8 per component) input.
pub fn families() -> Vec<Family> {
    let (nx, ny) = (8, 8);
    let f = test_images::random(nx, ny, 0.0, 255.0, 7);
    let mut out = Vec::new();

    let hd = DiffusionConfig::from_time(
        DiffusionModel::Homogeneous,
        Diffusivity::new(DiffusivityKind::Charbonnier, 1.0).unwrap(),
        0.0,
        10.0,
        5.0,
    )
    .unwrap();
    out.push(diffusion_family("HD", &f, hd));
    out.push(diffusion_family("NLD(Charbonnier)", &f, nld(DiffusivityKind::Charbonnier, 10.0)));
    out.push(diffusion_family("NLD(PM)", &f, nld(DiffusivityKind::RationalPeronaMalik, 10.0)));
    out.push(diffusion_family("NLD(We)", &f, nld(DiffusivityKind::Weickert, 10.0)));
    let eed = DiffusionConfig::from_time(
        DiffusionModel::Eed,
        Diffusivity::new(DiffusivityKind::RationalPeronaMalik, 10.0).unwrap(),
        1.0,
        15.0,
        5.0,
    )
    .unwrap();
    out.push(diffusion_family("EED", &f, eed));

    let bil = BilateralConfig {
        sigma_t: 30.0,
        sigma_s: 2.0,
        window_radius: 0,
    };
    out.push(Family {
        name: "bilateral",
        op: Box::new(bilateral_s(&f, &bil).unwrap()),
        oracle: dense_bilateral(&f, &bil),
    });
    let nlm = NLMeansConfig {
        sigma: 60.0,
        patch_radius: 1,
        search_radius: 0,
    };
    out.push(Family {
        name: "NL-means",
        op: Box::new(nlmeans_s(&f, &nlm).unwrap()),
        oracle: dense_nlmeans(&f, &nlm),
    });

    let mask = Mask::random(nx, ny, 6, 3).unwrap();
    let mut hcfg = InpaintConfig::homogeneous();
    hcfg.solver = tight();
    let (_, frozen) = inpaint(&f, &mask, &hcfg).unwrap();
    out.push(Family {
        name: "homogeneous inpainting",
        op: Box::new(frozen),
        oracle: dense_inpainting(&dense_isotropic(nx, ny, &vec![1.0; nx * ny]), &mask),
    });
    let mut ncfg = InpaintConfig::nonlinear(
        DiffusionModel::IsotropicNonlinear,
        Diffusivity::new(DiffusivityKind::RationalPeronaMalik, 20.0).unwrap(),
        0.5,
    );
    ncfg.solver = tight();
    let (_, frozen) = inpaint(&f, &mask, &ncfg).unwrap();
    let lap = dense(&frozen.coefficients().laplacian(nx, ny).to_sparse());
    out.push(Family {
        name: "NLD inpainting",
        oracle: dense_inpainting(&lap, &mask),
        op: Box::new(frozen),
    });

    let guidance = test_images::random(nx, ny, 20.0, 220.0, 11);
    let mut ocfg = OsmosisConfig::fixed(2.0, 4);
    ocfg.solver = tight();
    out.push(Family {
        name: "osmosis",
        op: Box::new(osmosis_s(&drift_from_guidance(&guidance).unwrap(), &ocfg).unwrap()),
        oracle: dense_osmosis(&guidance, 2.0, 4),
    });

    let f2 = Image::from_fn(nx, ny, |i, j| f.get_reflected(i as isize - 1, j as isize) * 0.7 + f.get(i, j) * 0.3);
    for (name, cfg) in [
        ("HS flow", FlowConfig::horn_schunck(100.0)),
        ("NE flow", FlowConfig::nagel_enkelmann(100.0, 5.0)),
    ] {
        let cfg = FlowConfig { solver: tight(), ..cfg };
        let system = flow_system_from_frames(&f, &f2, &cfg).unwrap();
        let b = dense(&system.system_matrix());
        let w = system.data_weights();
        let n = w.len();
        let weights = DMatrix::from_fn(2 * n, 2 * n, |r, c| if r == c { w[r % n] } else { 0.0 });
        out.push(Family {
            name,
            oracle: b.try_inverse().unwrap() * weights,
            op: Box::new(flow_s(&system)),
        });
    }
    out
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

pub fn max_abs_diff_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
