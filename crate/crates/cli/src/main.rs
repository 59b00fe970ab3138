//! `densefield` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime or validation error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use densefield::io::{read_df32, read_pfm, read_pgm, read_scene, write_df32, write_pgm, write_rank_pairs, write_scene, write_trace, encode_pfm};
use densefield::metrics::MetricReport;
use densefield::optim::{PairSource, StreetSupervision};
use densefield::pano::{extract_cutout, CutoutSpec};
use densefield::render::{default_step, render_depth_pano, render_height_map};
use densefield::scene::{canonical_scene, canonical_scenes, CANONICAL_PANO};
use densefield::{fit_field, gradcheck, GridSpec, OptimConfig, PairSampling, RankConvention, Raster, SsimConfig};

#[derive(Parser)]
#[command(name = "densefield", version, about = "Fit and inspect voxel density fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic scenes.
    #[command(subcommand)]
    Scene(SceneCommand),
    /// Render a stored density field.
    Render(RenderArgs),
    /// Fit a density field to a height map and optional street-view supervision.
    Optimize(OptimizeArgs),
    /// MAE, RMSE and SSIM between two height maps.
    Metrics(MetricsArgs),
    /// Finite-difference checks of all analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Sample ordinal depth pairs from a depth panorama.
    Pairs(PairsArgs),
    /// Perspective view cut out of a panorama.
    Cutout(CutoutArgs),
}

#[derive(Subcommand)]
enum SceneCommand {
    /// Write height.pfm, pano_depth.pfm, sky.pgm and scene.json for a scene.
    Gen(SceneGenArgs),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["spec", "canonical"]))]
struct SceneGenArgs {
    /// Scene JSON file.
    spec: Option<PathBuf>,
    /// Built-in scene: flat, two-box or dense.
    #[arg(long)]
    canonical: Option<String>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = CANONICAL_PANO.0)]
    pano_width: usize,
    #[arg(long, default_value_t = CANONICAL_PANO.1)]
    pano_height: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum RenderMode {
    Height,
    Pano,
}

#[derive(Args)]
struct RenderArgs {
    mode: RenderMode,
    #[arg(long)]
    field: PathBuf,
    /// Panorama camera; defaults to the footprint center, 2 m up.
    #[arg(long, value_parser = parse_point)]
    cam: Option<[f64; 3]>,
    /// Ray-marching step in meters; half a voxel by default.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, default_value_t = CANONICAL_PANO.0)]
    width: usize,
    #[arg(long, default_value_t = CANONICAL_PANO.1)]
    height: usize,
    /// Output PFM; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the opacity panorama here (pano mode).
    #[arg(long)]
    opacity: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Convention {
    AsWritten,
    DepthOrdered,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Reference height map (PFM).
    #[arg(long)]
    gt: PathBuf,
    /// Reference depth panorama for rank pairs (PFM).
    #[arg(long, requires = "sky")]
    pano: Option<PathBuf>,
    /// Sky mask of the panorama (PGM).
    #[arg(long, requires = "pano")]
    sky: Option<PathBuf>,
    /// Street-view camera; defaults to the footprint center, 2 m up.
    #[arg(long, value_parser = parse_point)]
    cam: Option<[f64; 3]>,
    /// Height-map pixels to leave out of the height loss (PGM).
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum, default_value = "depth-ordered")]
    rank_convention: Convention,
    #[arg(long, default_value_t = 2048)]
    k: usize,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Fixed SSIM dynamic range; the reference's span by default.
    #[arg(long)]
    data_range: Option<f64>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    depth: PathBuf,
    /// Pixels no pair may touch (PGM), usually sky.
    #[arg(long)]
    exclude: Option<PathBuf>,
    #[arg(long, default_value_t = 2048)]
    k: usize,
    #[arg(long, default_value_t = 10.0)]
    min: f64,
    #[arg(long, default_value_t = 30.0)]
    max: f64,
    #[arg(long, default_value_t = 0.02)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CutoutArgs {
    #[arg(long)]
    pano: PathBuf,
    /// Degrees; 0 looks along azimuth 0.
    #[arg(long, allow_hyphen_values = true)]
    heading: f64,
    #[arg(long, default_value_t = 90.0)]
    fov: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pitch: f64,
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Output PFM; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad coordinate {p:?}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| format!("expected x,y,z, got {s:?}"))
}

type Fallible = Result<(), Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Scene(SceneCommand::Gen(a)) => scene_gen(a),
        Command::Render(a) => render(a),
        Command::Optimize(a) => optimize(a),
        Command::Metrics(a) => metrics(a),
        Command::Gradcheck(a) => return run_gradcheck(a),
        Command::Pairs(a) => pairs(a),
        Command::Cutout(a) => cutout(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn read_raster(path: &Path) -> Result<Raster<f64>, densefield::Error> {
    Ok(read_pfm(path)?.cast())
}

/// Writes a PFM to `out`, or to standard output.
fn emit_pfm(out: Option<&Path>, r: &Raster<f64>) -> Fallible {
    let bytes = encode_pfm(&r.cast::<f32>())?;
    match out {
        Some(p) => fs::write(p, bytes)?,
        None => io::stdout().lock().write_all(&bytes)?,
    }
    Ok(())
}

fn default_cam(spec: &GridSpec<f64>) -> [f64; 3] {
    let top = spec.max_corner();
    [
        0.5 * (spec.origin[0] + top[0]),
        0.5 * (spec.origin[1] + top[1]),
        2.0,
    ]
}

fn scene_gen(a: SceneGenArgs) -> Fallible {
    let scene = match (&a.spec, &a.canonical) {
        (Some(p), _) => read_scene(p)?,
        (None, Some(name)) => canonical_scene(name).ok_or_else(|| {
            let known: Vec<&str> = canonical_scenes().iter().map(|(n, _)| *n).collect();
            format!("unknown canonical scene {name:?} (known: {})", known.join(", "))
        })?,
        (None, None) => unreachable!("clap requires a scene source"),
    };
    let truth = scene.truth::<f64>(a.pano_width, a.pano_height)?;
    fs::create_dir_all(&a.out_dir)?;
    emit_pfm(Some(&a.out_dir.join("height.pfm")), &truth.height)?;
    emit_pfm(Some(&a.out_dir.join("pano_depth.pfm")), &truth.pano_depth)?;
    write_pgm(a.out_dir.join("sky.pgm"), &truth.sky)?;
    write_scene(a.out_dir.join("scene.json"), &scene)?;
    Ok(())
}

fn render(a: RenderArgs) -> Fallible {
    let field = read_df32(&a.field)?.cast::<f64>();
    let spec = *field.spec();
    let step = a.step.unwrap_or_else(|| default_step(&spec));
    match a.mode {
        RenderMode::Height => emit_pfm(a.out.as_deref(), &render_height_map(&field, step)?),
        RenderMode::Pano => {
            let cam = a.cam.unwrap_or_else(|| default_cam(&spec));
            let (depth, opacity) = render_depth_pano(&field, cam, a.width, a.height, step)?;
            if let Some(p) = &a.opacity {
                emit_pfm(Some(p), &opacity)?;
            }
            emit_pfm(a.out.as_deref(), &depth)
        }
    }
}

fn optimize(a: OptimizeArgs) -> Fallible {
    let gt = read_raster(&a.gt)?;
    let spec = GridSpec::<f64>::scene_grid(gt.width(), gt.height());
    let mask = a.mask.as_deref().map(read_pgm).transpose()?;
    let street = match (&a.pano, &a.sky) {
        (Some(p), Some(s)) => Some(StreetSupervision {
            cam: a.cam.unwrap_or_else(|| default_cam(&spec)),
            pairs: PairSource::Oracle(read_raster(p)?),
            sky: read_pgm(s)?,
        }),
        _ => None,
    };
    let defaults = OptimConfig::default();
    let cfg = OptimConfig {
        alpha: a.alpha,
        epochs: a.epochs,
        seed: a.seed,
        lr: a.lr.unwrap_or(defaults.lr),
        step: a.step,
        pairs: PairSampling { k: a.k, ..defaults.pairs },
        rank_convention: match a.rank_convention {
            Convention::AsWritten => RankConvention::AsWritten,
            Convention::DepthOrdered => RankConvention::DepthOrdered,
        },
        ..defaults
    };
    let fit = fit_field(&spec, &gt, mask.as_ref(), street.as_ref(), None, &cfg)?;
    write_df32(&a.out, &fit.field.cast::<f32>())?;
    write_trace(io::BufWriter::new(fs::File::create(&a.trace)?), fit.trace())?;
    if let Some(last) = fit.trace().last() {
        println!(
            "epochs={} l_h={} l_rank={} l_sky={} l_total={}",
            last.epoch, last.loss.l_h, last.loss.l_rank, last.loss.l_sky, last.loss.l_total
        );
    }
    Ok(())
}

/// Six decimals with trailing zeros dropped, so exact values print as `0` or `1`.
fn short(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn metrics(a: MetricsArgs) -> Fallible {
    let pred = read_raster(&a.pred)?;
    let gt = read_raster(&a.gt)?;
    let cfg = SsimConfig { data_range: a.data_range, ..SsimConfig::default() };
    let r = MetricReport::evaluate(&pred, &gt, &cfg)?;
    println!("mae={} rmse={} ssim={}", short(r.mae), short(r.rmse), short(r.ssim));
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> ExitCode {
    let reports = match gradcheck::run_all(a.seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut ok = true;
    for r in &reports {
        ok &= r.passed();
        println!(
            "{}: max_rel_err={:.3e} tol={:.0e} checked={} {}",
            r.name,
            r.max_rel_err,
            r.tolerance,
            r.checked,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn pairs(a: PairsArgs) -> Fallible {
    let depth = read_raster(&a.depth)?;
    let exclude = a.exclude.as_deref().map(read_pgm).transpose()?;
    let params = PairSampling { k: a.k, min_dist: a.min, max_dist: a.max, tau_rel: a.tau };
    let pairs = densefield::loss::sample_rank_pairs(&depth, &params, exclude.as_ref(), a.seed)?;
    match &a.out {
        Some(p) => write_rank_pairs(io::BufWriter::new(fs::File::create(p)?), &pairs)?,
        None => write_rank_pairs(io::stdout().lock(), &pairs)?,
    }
    Ok(())
}

fn cutout(a: CutoutArgs) -> Fallible {
    let pano = read_raster(&a.pano)?;
    let spec = CutoutSpec {
        heading: a.heading,
        fov: a.fov,
        pitch: a.pitch,
        roll: 0.0,
        out_w: a.size,
        out_h: a.size,
    };
    emit_pfm(a.out.as_deref(), &extract_cutout(&pano, &spec)?)
}
