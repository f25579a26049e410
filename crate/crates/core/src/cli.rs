//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 for usage errors, 2 for runtime failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::compression::{compress_echoes, deserialize, frobenius_error_estimate, serialize, CompressionConfig, FloatWidth};
use crate::diffusion::{DiffusionConfig, DiffusionModel, Diffusivity, DiffusivityKind};
use crate::display::{rescale_for_display, render_signed, with_markers, flow_to_rgb, RescaleMode};
use crate::echo::{cumulative_echo, echo, Direction};
use crate::error::Error;
use crate::filters::{build_filter, FilterOperator, FilterSpec};
use crate::image::{Image, Mask};
use crate::inpainting::{inpaint, InpaintConfig, InpaintMode};
use crate::kernels::{BilateralConfig, NLMeansConfig};
use crate::linalg::LinearOperator;
use crate::opticflow::{flow_s, flow_system_from_frames, solve_flow, FlowConfig, Regularizer};
use crate::osmosis::{drift_from_guidance, osmosis_evolve, osmosis_s, OsmosisConfig};
use crate::pgm::{read_pgm, write_csv, write_pgm, write_ppm, write_raster_pgm};

#[derive(Parser)]
#[command(name = "echolab", version, about = "Filter echoes: extraction, compression and inspection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter an image and write the result.
    Filter(FilterCmd),
    /// Source or drain echoes of single pixels.
    Echo(EchoCmd),
    /// Sum of the echoes of a pixel set.
    Cumulative(CumulativeCmd),
    /// Diffusion inpainting from a sparse mask, with optional echoes.
    Inpaint(InpaintCmd),
    /// Osmosis evolution, with optional echoes.
    Osmosis(OsmosisCmd),
    /// Variational optic flow between two frames, with optional echoes.
    Flow(FlowCmd),
    /// Randomized truncated SVD of all echoes, written as .echosvd.
    Compress(CompressCmd),
    /// Echoes reconstructed from an .echosvd file.
    Reconstruct(ReconstructCmd),
    /// Singular values as CSV and singular vectors as images.
    Spectrum(SpectrumCmd),
    /// HTTP service for the interactive explorer.
    Serve(ServeCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Hd,
    Nld,
    Eed,
    Bilateral,
    Nlmeans,
}

fn parse_kind(s: &str) -> Result<DiffusivityKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_rescale(s: &str) -> Result<RescaleMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected X,Y, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad coordinate {v:?}: {e}"));
    Ok((p(x)?, p(y)?))
}

#[derive(Args)]
struct FilterArgs {
    /// Input image (binary or ASCII PGM).
    #[arg(long = "in", value_name = "PGM")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "nld")]
    method: Method,
    /// charbonnier | pm | weickert
    #[arg(long, default_value = "pm", value_parser = parse_kind)]
    diffusivity: DiffusivityKind,
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    /// Presmoothing for diffusion; patch similarity scale for NL-means.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Stopping time.
    #[arg(long, default_value_t = 0.0)]
    time: f64,
    #[arg(long, default_value_t = DiffusionConfig::DEFAULT_TAU)]
    tau: f64,
    /// Bilateral tonal standard deviation.
    #[arg(long = "sigma-t", default_value_t = 10.0)]
    sigma_t: f64,
    /// Bilateral spatial standard deviation.
    #[arg(long = "sigma-s", default_value_t = 3.0)]
    sigma_s: f64,
    /// Bilateral window radius, 0 = whole image.
    #[arg(long, default_value_t = 0)]
    window: usize,
    /// NL-means patch radius.
    #[arg(long, default_value_t = 1)]
    patch: usize,
    /// NL-means search radius, 0 = whole image.
    #[arg(long, default_value_t = 0)]
    search: usize,
}

impl FilterArgs {
    fn spec(&self) -> FilterSpec {
        let (diffusivity, lambda, sigma, time, tau) = (self.diffusivity, self.lambda, self.sigma, self.time, self.tau);
        match self.method {
            Method::Hd => FilterSpec::Hd { time, tau },
            Method::Nld => FilterSpec::Nld {
                diffusivity,
                lambda,
                sigma,
                time,
                tau,
            },
            Method::Eed => FilterSpec::Eed {
                diffusivity,
                lambda,
                sigma,
                time,
                tau,
            },
            Method::Bilateral => FilterSpec::Bilateral(BilateralConfig {
                sigma_t: self.sigma_t,
                sigma_s: self.sigma_s,
                window_radius: self.window,
            }),
            Method::Nlmeans => FilterSpec::NlMeans(NLMeansConfig {
                sigma: self.sigma,
                patch_radius: self.patch,
                search_radius: self.search,
            }),
        }
    }

    fn build(&self) -> Outcome<(Image, Image, FilterOperator, FilterSpec)> {
        let f = load(&self.input)?;
        let spec = self.spec();
        let (u, op) = build_filter(&f, &spec)?;
        Ok((f, u, op, spec))
    }
}

#[derive(Args)]
struct DisplayArgs {
    /// joint | per | log
    #[arg(long, default_value = "joint", value_parser = parse_rescale)]
    rescale: RescaleMode,
}

#[derive(Args)]
struct FilterCmd {
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EchoCmd {
    #[command(flatten)]
    filter: FilterArgs,
    /// Pixel as X,Y; repeat for several echoes rescaled together.
    #[arg(long = "pixel", value_parser = parse_pixel, required_unless_present = "x")]
    pixels: Vec<(usize, usize)>,
    /// Single pixel column, with --y; alternative to --pixel.
    #[arg(long, requires = "y")]
    x: Option<usize>,
    #[arg(long, requires = "x")]
    y: Option<usize>,
    #[arg(long, default_value = "source", value_parser = parse_direction)]
    direction: Direction,
    /// .pgm, .ppm (with red location marker) or .csv (raw values). Several
    /// pixels get `_X_Y` appended to the file stem.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    display: DisplayArgs,
}

#[derive(Args)]
struct CumulativeCmd {
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long = "pixel", value_parser = parse_pixel, required = true)]
    pixels: Vec<(usize, usize)>,
    #[arg(long, default_value = "source", value_parser = parse_direction)]
    direction: Direction,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    display: DisplayArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum InpaintOperator {
    Homogeneous,
    Nld,
    Eed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Elliptic,
    Parabolic,
}

#[derive(Args)]
struct InpaintCmd {
    #[arg(long = "in", value_name = "PGM")]
    input: PathBuf,
    /// Mask image: 255 = known, 0 = unknown.
    #[arg(long, conflicts_with = "random_mask")]
    mask: Option<PathBuf>,
    /// Number of randomly chosen known pixels.
    #[arg(long = "random-mask")]
    random_mask: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "homogeneous")]
    operator: InpaintOperator,
    #[arg(long, default_value = "charbonnier", value_parser = parse_kind)]
    diffusivity: DiffusivityKind,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, value_enum, default_value = "elliptic")]
    scheme: Scheme,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "mask-out")]
    mask_out: Option<PathBuf>,
    #[arg(long = "echo-pixel", value_parser = parse_pixel)]
    echo_pixels: Vec<(usize, usize)>,
    #[arg(long, default_value = "source", value_parser = parse_direction)]
    direction: Direction,
    #[arg(long = "echo-out", requires = "echo_pixels")]
    echo_out: Option<PathBuf>,
    /// Cumulative source echo of all mask pixels.
    #[arg(long = "cumulative-out")]
    cumulative_out: Option<PathBuf>,
    #[command(flatten)]
    display: DisplayArgs,
}

#[derive(Args)]
struct OsmosisCmd {
    /// Initial image.
    #[arg(long = "in", value_name = "PGM")]
    input: PathBuf,
    /// Guidance image defining the drift `∇ ln v`.
    #[arg(long)]
    guidance: PathBuf,
    /// Added to both images to make them positive.
    #[arg(long, default_value_t = 1.0)]
    offset: f64,
    #[arg(long, default_value_t = 1000.0)]
    tau: f64,
    /// Fixed step count; without it the evolution runs to its steady state.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "echo-pixel", value_parser = parse_pixel)]
    echo_pixels: Vec<(usize, usize)>,
    #[arg(long, default_value = "source", value_parser = parse_direction)]
    direction: Direction,
    #[arg(long = "echo-out", requires = "echo_pixels")]
    echo_out: Option<PathBuf>,
    #[command(flatten)]
    display: DisplayArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Plane {
    U,
    V,
}

#[derive(Args)]
struct FlowCmd {
    #[arg(long)]
    frame1: PathBuf,
    #[arg(long)]
    frame2: PathBuf,
    /// hs | ne
    #[arg(long, default_value = "hs")]
    regularizer: String,
    #[arg(long, default_value_t = 100.0)]
    alpha: f64,
    #[arg(long = "ne-lambda", default_value_t = 1.0)]
    ne_lambda: f64,
    #[arg(long, default_value_t = FlowConfig::DEFAULT_EPSILON)]
    epsilon: f64,
    /// .ppm colour coding or .csv (u values then v values).
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "echo-pixel", value_parser = parse_pixel)]
    echo_pixel: Option<(usize, usize)>,
    /// Flow component addressed by the echo pixel.
    #[arg(long, value_enum, default_value = "u")]
    component: Plane,
    #[arg(long, default_value = "source", value_parser = parse_direction)]
    direction: Direction,
    /// u and v planes side by side, or raw .csv.
    #[arg(long = "echo-out", requires = "echo_pixel")]
    echo_out: Option<PathBuf>,
    #[command(flatten)]
    display: DisplayArgs,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long, conflicts_with = "rank_frac")]
    rank: Option<usize>,
    /// Rank as a fraction of the pixel count (default 0.025).
    #[arg(long = "rank-frac")]
    rank_frac: Option<f64>,
    #[arg(long, default_value_t = 3)]
    q: usize,
    #[arg(long, default_value_t = 10)]
    oversample: usize,
    /// Exclusion threshold; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Store factors as 32-bit floats.
    #[arg(long)]
    float32: bool,
    /// Probes for the error estimate; 0 skips it.
    #[arg(long = "error-probes", default_value_t = 100)]
    error_probes: usize,
}

impl CompressArgs {
    fn config(&self) -> CompressionConfig {
        let mut cfg = match self.rank {
            Some(k) => CompressionConfig::with_rank(k),
            None => CompressionConfig::with_fraction(self.rank_frac.unwrap_or(0.025)),
        };
        cfg.q = self.q;
        cfg.oversample = self.oversample;
        cfg.epsilon = self.epsilon;
        cfg.seed = self.seed;
        if self.float32 {
            cfg.storage = FloatWidth::F32;
        }
        cfg
    }
}

#[derive(Args)]
struct CompressCmd {
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    compression: CompressArgs,
    /// Output .echosvd file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructCmd {
    #[arg(long)]
    svd: PathBuf,
    #[arg(long = "pixel", value_parser = parse_pixel, required = true)]
    pixels: Vec<(usize, usize)>,
    #[arg(long, default_value = "source", value_parser = parse_direction)]
    direction: Direction,
    /// Truncation rank, at most the stored rank.
    #[arg(long)]
    rank: Option<usize>,
    /// Flow files: plane addressed by the pixel.
    #[arg(long, value_enum, default_value = "u")]
    component: Plane,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    display: DisplayArgs,
}

#[derive(Args)]
struct SpectrumCmd {
    #[arg(long)]
    svd: PathBuf,
    /// CSV with `index,sigma` rows.
    #[arg(long)]
    out: PathBuf,
    /// 1-based index of a left singular vector to render.
    #[arg(long = "vector", requires = "vector_out")]
    vector: Vec<usize>,
    /// Image path for the singular vectors; several get `_K` appended.
    #[arg(long = "vector-out")]
    vector_out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeCmd {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long = "max-sessions", default_value_t = 4)]
    max_sessions: usize,
    /// Upper bound for the factor storage of one session, in MiB.
    #[arg(long = "memory-budget-mb", default_value_t = 256)]
    memory_budget_mb: usize,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Argument(_) | Error::Parse(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn load(path: &Path) -> Outcome<Image> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("input file {} not found", path.display())));
    }
    Ok(read_pgm(path)?)
}

fn require_file(path: &Path) -> Outcome<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("input file {} not found", path.display())))
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// `out` for one item, `stem_suffix.ext` for several.
fn numbered(out: &Path, suffix: &str, many: bool) -> PathBuf {
    if !many {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{suffix}.{ext}"),
        None => format!("{stem}_{suffix}"),
    };
    out.with_file_name(name)
}

/// Writes each raw vector as raster (jointly rescaled), marked RGB or CSV.
fn write_rasters(
    nx: usize,
    ny: usize,
    items: &[(PathBuf, Vec<f64>, Vec<usize>)],
    mode: RescaleMode,
) -> Outcome<()> {
    let views: Vec<&[f64]> = items.iter().map(|(_, v, _)| v.as_slice()).collect();
    let rasters = rescale_for_display(&views, mode)?;
    for ((path, raw, marks), raster) in items.iter().zip(rasters) {
        match extension(path).as_str() {
            "csv" => write_csv(raw, path)?,
            "ppm" => {
                let (first, rest) = marks.split_first().map_or((None, &[][..]), |(a, b)| (Some(*a), b));
                write_ppm(nx, ny, &with_markers(nx, ny, &raster, first, rest), path)?
            }
            _ => write_raster_pgm(nx, ny, &raster, path)?,
        }
    }
    Ok(())
}

fn print_json(v: serde_json::Value) {
    println!("{v}");
}

fn pixel_index(nx: usize, ny: usize, (x, y): (usize, usize)) -> Outcome<usize> {
    if x >= nx || y >= ny {
        return Err(Failure::Usage(format!("pixel ({x}, {y}) outside {nx}x{ny} image")));
    }
    Ok(y * nx + x)
}

fn cmd_filter(c: &FilterCmd) -> Outcome<()> {
    let (_, u, _, spec) = c.filter.build()?;
    write_pgm(&u, &c.out)?;
    print_json(json!({"filter": spec.label(), "out": c.out, "min": u.min(), "max": u.max(), "mean": u.mean()}));
    Ok(())
}

fn cmd_echo(c: &EchoCmd) -> Outcome<()> {
    let (f, _, op, spec) = c.filter.build()?;
    let (nx, ny) = (f.nx(), f.ny());
    let mut pixels = c.pixels.clone();
    if let (Some(x), Some(y)) = (c.x, c.y) {
        pixels.push((x, y));
    }
    let many = pixels.len() > 1;
    let mut items = Vec::new();
    for &(x, y) in &pixels {
        let k = pixel_index(nx, ny, (x, y))?;
        let raw = echo(&op, k, c.direction)?;
        let path = numbered(&c.out, &format!("{x}_{y}"), many);
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        print_json(json!({"filter": spec.label(), "x": x, "y": y, "direction": c.direction,
            "raw_max": max, "sum": raw.iter().sum::<f64>(), "out": path}));
        items.push((path, raw, vec![k]));
    }
    write_rasters(nx, ny, &items, c.display.rescale)
}

fn cmd_cumulative(c: &CumulativeCmd) -> Outcome<()> {
    let (f, _, op, spec) = c.filter.build()?;
    let (nx, ny) = (f.nx(), f.ny());
    let idx = c
        .pixels
        .iter()
        .map(|&p| pixel_index(nx, ny, p))
        .collect::<Outcome<Vec<_>>>()?;
    let raw = cumulative_echo(&op, &idx, c.direction)?;
    print_json(json!({"filter": spec.label(), "pixels": c.pixels.len(), "direction": c.direction,
        "raw_max": raw.iter().copied().fold(f64::NEG_INFINITY, f64::max), "out": c.out}));
    write_rasters(nx, ny, &[(c.out.clone(), raw, idx)], c.display.rescale)
}

fn echo_items(
    op: &(impl LinearOperator + ?Sized),
    nx: usize,
    ny: usize,
    pixels: &[(usize, usize)],
    direction: Direction,
    out: &Path,
) -> Outcome<Vec<(PathBuf, Vec<f64>, Vec<usize>)>> {
    let many = pixels.len() > 1;
    pixels
        .iter()
        .map(|&(x, y)| {
            let k = pixel_index(nx, ny, (x, y))?;
            Ok((numbered(out, &format!("{x}_{y}"), many), echo(op, k, direction)?, vec![k]))
        })
        .collect()
}

fn cmd_inpaint(c: &InpaintCmd) -> Outcome<()> {
    let f = load(&c.input)?;
    let (nx, ny) = (f.nx(), f.ny());
    let mask = match (&c.mask, c.random_mask) {
        (Some(path), None) => Mask::from_image(&load(path)?)?,
        (None, Some(count)) => Mask::random(nx, ny, count, c.seed)?,
        _ => return Err(Failure::Usage("give either --mask or --random-mask".into())),
    };
    let mut cfg = match c.operator {
        InpaintOperator::Homogeneous => InpaintConfig::homogeneous(),
        InpaintOperator::Nld => InpaintConfig::nonlinear(
            DiffusionModel::IsotropicNonlinear,
            Diffusivity::new(c.diffusivity, c.lambda)?,
            c.sigma,
        ),
        InpaintOperator::Eed => {
            InpaintConfig::nonlinear(DiffusionModel::Eed, Diffusivity::new(c.diffusivity, c.lambda)?, c.sigma)
        }
    };
    cfg.mode = match c.scheme {
        Scheme::Elliptic => InpaintMode::EllipticKacanov,
        Scheme::Parabolic => InpaintMode::Parabolic,
    };
    let (u, frozen) = inpaint(&f, &mask, &cfg)?;
    write_pgm(&u, &c.out)?;
    if let Some(path) = &c.mask_out {
        write_pgm(&mask.to_image(), path)?;
    }
    if let Some(out) = &c.echo_out {
        let items = echo_items(&frozen, nx, ny, &c.echo_pixels, c.direction, out)?;
        write_rasters(nx, ny, &items, c.display.rescale)?;
    }
    if let Some(path) = &c.cumulative_out {
        let idx = mask.indices();
        let raw = cumulative_echo(&frozen, &idx, Direction::Source)?;
        write_rasters(nx, ny, &[(path.clone(), raw, Vec::new())], c.display.rescale)?;
    }
    print_json(json!({"known": mask.count(), "outer_iterations": frozen.outer_iterations(), "out": c.out}));
    Ok(())
}

fn cmd_osmosis(c: &OsmosisCmd) -> Outcome<()> {
    let f = load(&c.input)?.map(|v| v + c.offset);
    let v = load(&c.guidance)?.map(|v| v + c.offset);
    let (nx, ny) = (f.nx(), f.ny());
    let drift = drift_from_guidance(&v)?;
    let cfg = match c.steps {
        Some(n) => OsmosisConfig::fixed(c.tau, n),
        None => OsmosisConfig {
            tau: c.tau,
            ..OsmosisConfig::default()
        },
    };
    let u = osmosis_evolve(&f, &drift, &cfg)?;
    write_pgm(&u.map(|x| x - c.offset), &c.out)?;
    let mut summary = json!({"mean_in": f.mean() - c.offset, "mean_out": u.mean() - c.offset, "out": c.out});
    if let Some(out) = &c.echo_out {
        let op = osmosis_s(&drift, &cfg)?;
        summary["steps"] = json!(op.steps());
        let items = echo_items(&op, nx, ny, &c.echo_pixels, c.direction, out)?;
        write_rasters(nx, ny, &items, c.display.rescale)?;
    }
    print_json(summary);
    Ok(())
}

fn cmd_flow(c: &FlowCmd) -> Outcome<()> {
    let f1 = load(&c.frame1)?;
    let f2 = load(&c.frame2)?;
    let regularizer: Regularizer = c.regularizer.parse()?;
    let mut cfg = match regularizer {
        Regularizer::HornSchunck => FlowConfig::horn_schunck(c.alpha),
        Regularizer::NagelEnkelmann => FlowConfig::nagel_enkelmann(c.alpha, c.ne_lambda),
    };
    cfg.epsilon = c.epsilon;
    let system = flow_system_from_frames(&f1, &f2, &cfg)?;
    let w = solve_flow(&system)?;
    let (nx, ny) = (f1.nx(), f1.ny());
    match extension(&c.out).as_str() {
        "csv" => write_csv(&w.stacked(), &c.out)?,
        _ => write_ppm(nx, ny, &flow_to_rgb(&w), &c.out)?,
    }
    let residual = system.residual(&w)?;
    print_json(json!({"residual": residual, "out": c.out}));
    if let (Some(p), Some(out)) = (c.echo_pixel, &c.echo_out) {
        let op = flow_s(&system);
        let mut k = pixel_index(nx, ny, p)?;
        if matches!(c.component, Plane::V) {
            k += nx * ny;
        }
        let raw = echo(&op, k, c.direction)?;
        if extension(out) == "csv" {
            write_csv(&raw, out)?;
        } else {
            let n = nx * ny;
            let rasters = rescale_for_display(&[&raw[..n], &raw[n..]], c.display.rescale)?;
            // u plane left, v plane right.
            let mut side = Vec::with_capacity(2 * n);
            for j in 0..ny {
                side.extend_from_slice(&rasters[0][j * nx..(j + 1) * nx]);
                side.extend_from_slice(&rasters[1][j * nx..(j + 1) * nx]);
            }
            write_raster_pgm(2 * nx, ny, &side, out)?;
        }
    }
    Ok(())
}

fn cmd_compress(c: &CompressCmd) -> Outcome<()> {
    let (f, _, op, spec) = c.filter.build()?;
    let cfg = c.compression.config();
    let mut compressed = compress_echoes(&op, f.nx(), f.ny(), 1, &cfg)?;
    compressed.metadata = json!({"filter": spec, "compression": cfg});
    serialize(&compressed, &c.out)?;
    let mut summary = json!({
        "filter": spec.label(),
        "n": f.len(),
        "k": compressed.rank(),
        "exclusions": compressed.exclusions.len(),
        "stats": compressed.stats,
        "bytes": compressed.file_size(),
        "out": c.out,
    });
    if c.compression.error_probes > 0 {
        let err = frobenius_error_estimate(&op, &compressed, c.compression.error_probes, cfg.seed)?;
        summary["error_estimate"] = json!(err);
        summary["error_probes"] = json!(c.compression.error_probes);
    }
    print_json(summary);
    Ok(())
}

fn cmd_reconstruct(c: &ReconstructCmd) -> Outcome<()> {
    require_file(&c.svd)?;
    let compressed = deserialize(&c.svd)?;
    let (nx, ny) = (compressed.nx, compressed.ny);
    let n = nx * ny;
    let many = c.pixels.len() > 1;
    let mut items = Vec::new();
    for &(x, y) in &c.pixels {
        let mut k = pixel_index(nx, ny, (x, y))?;
        if compressed.components == 2 && matches!(c.component, Plane::V) {
            k += n;
        }
        let raw = match c.direction {
            Direction::Source => compressed.reconstruct_source(k, c.rank)?,
            Direction::Drain => compressed.reconstruct_drain(k, c.rank)?,
        };
        let path = numbered(&c.out, &format!("{x}_{y}"), many);
        print_json(json!({"x": x, "y": y, "direction": c.direction, "rank": c.rank.unwrap_or(compressed.rank()),
            "excluded": compressed.is_excluded(k), "out": path}));
        // Flow files show the plane the pixel lives in.
        let plane = if compressed.components == 2 && k >= n { raw[n..].to_vec() } else { raw[..n].to_vec() };
        items.push((path, if extension(&c.out) == "csv" { raw } else { plane }, vec![k % n]));
    }
    write_rasters(nx, ny, &items, c.display.rescale)
}

fn cmd_spectrum(c: &SpectrumCmd) -> Outcome<()> {
    require_file(&c.svd)?;
    let compressed = deserialize(&c.svd)?;
    compressed.write_spectrum(&c.out)?;
    if let Some(out) = &c.vector_out {
        let many = c.vector.len() > 1;
        for &k in &c.vector {
            let v = compressed.singular_vector(k)?;
            let path = numbered(out, &k.to_string(), many);
            let n = compressed.nx * compressed.ny;
            if extension(&path) == "csv" {
                write_csv(&v, &path)?;
            } else {
                write_raster_pgm(compressed.nx, compressed.ny, &render_signed(&v[..n]), &path)?;
            }
        }
    }
    print_json(json!({"k": compressed.rank(), "sigma_1": compressed.sigma.first(), "out": c.out}));
    Ok(())
}

fn cmd_serve(c: &ServeCmd) -> Outcome<()> {
    let config = crate::service::ServiceConfig {
        max_sessions: c.max_sessions,
        memory_budget_bytes: c.memory_budget_mb.saturating_mul(1 << 20),
    };
    let addr = format!("{}:{}", c.bind, c.port);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    runtime
        .block_on(crate::service::serve(&addr, config))
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn configure_threads() -> Outcome<()> {
    if let Ok(v) = std::env::var("ECHOLAB_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Usage(format!("ECHOLAB_THREADS must be a positive integer, got {v:?}")))?;
        // Fails only if a pool already exists, e.g. on a second in-process run.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Filter(c) => cmd_filter(c),
        Command::Echo(c) => cmd_echo(c),
        Command::Cumulative(c) => cmd_cumulative(c),
        Command::Inpaint(c) => cmd_inpaint(c),
        Command::Osmosis(c) => cmd_osmosis(c),
        Command::Flow(c) => cmd_flow(c),
        Command::Compress(c) => cmd_compress(c),
        Command::Reconstruct(c) => cmd_reconstruct(c),
        Command::Spectrum(c) => cmd_spectrum(c),
        Command::Serve(c) => cmd_serve(c),
    });
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}
