//! Command-line front end.
//!
//! Failures print one line `error: kind=<kind> msg="<message>"` to stderr
//! and exit with status 1; usage errors exit with status 2.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::basis::{
    build_system_matrix, condition_number_reduced, fit_basis, reconstruct_image, BasisModel, ReconInput,
    ReconParams, Reconstructor, Regularization, ShadingMode, DEFAULT_BASIS_SIZE,
};
use crate::colorimetry::reflectance_to_srgb;
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::loss::{total_loss, LossReport, LossWeights};
use crate::metrics::{depth_metrics, reflectance_metrics, MetricsReport, ReflectanceMetrics};
use crate::pattern::{generate_pattern, DotPattern};
use crate::ply::{export_point_cloud, write_point_cloud};
use crate::record::{
    load_prediction, load_sample, read_plane_file, record_dir, save_prediction, save_sample, write_mask_file,
    Prediction,
};
use crate::render::{render_scene_with, CorpusSource, DatasetConfig, DatasetRenderer, RenderOptions, SceneConfig};
use crate::spectral::{CameraSensitivity, ProjectorPrimaries, Spectrum, SpectrumKind, WavelengthGrid};

#[derive(Debug, Parser)]
#[command(name = "colordot", version, about = "Color-dot structured light: rendering, losses, evaluation")]
pub struct Cli {
    /// Worker threads; outputs are identical for any value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random color-dot pattern PNG and its JSON sidecar.
    GenPattern(GenPatternArgs),
    /// Render one scene config into a sample record directory.
    Render(RenderArgs),
    /// Render a seeded random dataset into numbered record directories.
    RenderDataset(RenderDatasetArgs),
    /// Compare a prediction directory against a ground-truth record.
    Eval(EvalArgs),
    /// Per-window basis reconstruction of a record's reflectance.
    ReconBasis(ReconBasisArgs),
    /// Condition numbers of the raw and basis-regularized systems.
    Condnum(CondnumArgs),
    /// Export a record or prediction as an ASCII PLY point cloud.
    ExportPly(ExportPlyArgs),
}

#[derive(Debug, Args)]
pub struct GenPatternArgs {
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    #[arg(long, default_value_t = 480)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Scene config JSON.
    #[arg(long, visible_alias = "config")]
    pub scene: PathBuf,
    /// Pattern PNG; regenerated from the scene's pattern seed if absent.
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    /// Overrides the scene seed (noise and metadata).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderDatasetArgs {
    /// Dataset config JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured scene count.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory with `disparity.bin`, `reflectance.bin` and optionally
    /// `depth.bin`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth sample record.
    #[arg(long)]
    pub gt: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShadingArg {
    Known,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegularizationArg {
    Constrained,
    Penalized,
}

/// Flags shared by the basis commands; each overrides the config file.
#[derive(Debug, Args)]
pub struct BasisFlags {
    /// Reconstruction config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Basis CSV to use instead of fitting one.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Seed of the synthetic corpus the basis is fitted on.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub weight: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReconBasisArgs {
    /// Sample record to reconstruct.
    #[arg(long)]
    pub sample: PathBuf,
    /// Disparity plane file used for labels and shading; defaults to the
    /// record's ground truth.
    #[arg(long)]
    pub disparity: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub shading: Option<ShadingArg>,
    #[arg(long, value_enum)]
    pub regularization: Option<RegularizationArg>,
    /// Largest window radius searched for missing labels; 1 keeps 3×3.
    #[arg(long)]
    pub max_window_radius: Option<usize>,
    #[command(flatten)]
    pub basis: BasisFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CondnumArgs {
    #[command(flatten)]
    pub basis: BasisFlags,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportPlyArgs {
    /// Record providing the rig and mask (and depth/reflectance unless
    /// `--pred` is given).
    #[arg(long)]
    pub sample: PathBuf,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn format_one() -> u32 {
    1
}

fn default_k() -> usize {
    DEFAULT_BASIS_SIZE
}

/// Basis and spectra used by `recon-basis` and `condnum`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    #[serde(default = "format_one")]
    pub format: u32,
    #[serde(default)]
    pub grid: WavelengthGrid,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub params: ReconParams,
    #[serde(default)]
    pub corpus: CorpusSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primaries_csv: Option<[PathBuf; 3]>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            format: 1,
            grid: WavelengthGrid::default(),
            k: DEFAULT_BASIS_SIZE,
            params: ReconParams::default(),
            corpus: CorpusSource::default(),
            sensitivity_csv: None,
            primaries_csv: None,
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn json_text<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Creates the parent directory of an output file.
fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parent_dir(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

struct BasisSetup {
    config: ReconConfig,
    system: crate::basis::SystemMatrix,
    basis: BasisModel,
}

fn basis_setup(flags: &BasisFlags) -> Result<BasisSetup> {
    let (mut config, base) = match &flags.config {
        Some(p) => {
            let cfg: ReconConfig = read_json(p)?;
            if cfg.format != 1 {
                return Err(Error::format(p, format!("unsupported format {}", cfg.format)));
            }
            (cfg, parent_dir(p).to_path_buf())
        }
        None => (ReconConfig::default(), PathBuf::from(".")),
    };
    if let Some(k) = flags.k {
        config.k = k;
    }
    if let Some(w) = flags.weight {
        config.params.smoothness_weight = w;
    }
    if let (Some(seed), CorpusSource::Synthetic { seed: s, .. }) = (flags.seed, &mut config.corpus) {
        *s = seed;
    }
    if let CorpusSource::Csv { path } = &mut config.corpus {
        *path = base.join(&*path);
    }
    let grid = config.grid;
    let primaries = match &config.primaries_csv {
        Some(paths) => {
            let load = |p: &PathBuf| Spectrum::from_csv_path(&base.join(p), grid, SpectrumKind::Illumination);
            ProjectorPrimaries::new(load(&paths[0])?, load(&paths[1])?, load(&paths[2])?)?
        }
        None => ProjectorPrimaries::default_for(grid)?,
    };
    let sensitivity = match &config.sensitivity_csv {
        Some(p) => CameraSensitivity::from_csv_path(&base.join(p), grid)?,
        None => CameraSensitivity::default_for(grid)?,
    };
    let system = build_system_matrix(&sensitivity, &primaries)?;
    let basis = match &flags.basis {
        Some(p) => BasisModel::load_csv(p)?,
        None => fit_basis(&config.corpus.load(grid)?, config.k)?,
    };
    config.k = basis.k();
    Ok(BasisSetup { config, system, basis })
}

fn gen_pattern(args: &GenPatternArgs) -> Result<String> {
    let pattern = generate_pattern(args.width, args.height, args.seed)?;
    ensure_parent(&args.out)?;
    pattern.save_png(&args.out)?;
    Ok(String::new())
}

fn render(args: &RenderArgs) -> Result<String> {
    let config = SceneConfig::load(&args.scene)?;
    let base = parent_dir(&args.scene);
    let scene = config.build_scene(base)?;
    let (primaries, sensitivity) = config.spectral_setup(base)?;
    let pattern = match &args.pattern {
        Some(p) => DotPattern::load_png(p)?,
        None => generate_pattern(config.rig.width, config.rig.height, config.pattern_seed())?,
    };
    let options = RenderOptions {
        noise_std: args.noise_std.unwrap_or(config.noise_std),
        seed: args.seed.unwrap_or(config.seed),
    };
    let sample = render_scene_with(&scene, &config.rig, &pattern, &primaries, &sensitivity, &options)?;
    save_sample(&args.out, &sample)?;
    Ok(String::new())
}

fn render_dataset(args: &RenderDatasetArgs) -> Result<String> {
    let mut config: DatasetConfig = read_json(&args.config)?;
    if config.format != 1 {
        return Err(Error::format(&args.config, format!("unsupported format {}", config.format)));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.count {
        config.scene_count = n;
    }
    if let CorpusSource::Csv { path } = &mut config.corpus {
        *path = parent_dir(&args.config).join(&*path);
    }
    let renderer = DatasetRenderer::new(&config)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_text(&args.out.join("dataset.json"), &json_text(&config)?)?;
    for i in 0..renderer.len() {
        save_sample(&record_dir(&args.out, i), &renderer.render(i)?)?;
    }
    Ok(String::new())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: u32,
    pub depth_unit: String,
    pub metrics: MetricsReport,
    pub losses: LossReport,
}

fn depth_from_prediction(pred: &Prediction, bf: f64) -> ImagePlane {
    match &pred.depth {
        Some(d) => d.clone(),
        None => pred.disparity.map(|d| if d > 0.0 { bf / d } else { f64::NAN }),
    }
}

/// Metrics and losses of a prediction against a ground-truth record.
pub fn evaluate(pred: &Prediction, gt: &crate::render::Sample) -> Result<EvalReport> {
    let z_hat = depth_from_prediction(pred, gt.meta.rig.bf());
    let depth = depth_metrics(&z_hat, &gt.depth, &gt.mask)?;
    let refl = reflectance_metrics(&pred.reflectance, &gt.reflectance, &gt.mask)?;
    let losses = total_loss(gt, &pred.disparity, &pred.reflectance, &LossWeights::default())?;
    Ok(EvalReport {
        format: 1,
        depth_unit: "m".into(),
        metrics: MetricsReport::from_parts(&depth, &refl),
        losses,
    })
}

fn eval(args: &EvalArgs) -> Result<String> {
    let gt = load_sample(&args.gt)?;
    let pred = load_prediction(&args.pred)?;
    let text = json_text(&evaluate(&pred, &gt)?)?;
    if let Some(out) = &args.out {
        write_text(out, &text)?;
    }
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconSummary {
    pub format: u32,
    pub k: usize,
    pub params: ReconParams,
    pub valid_pixels: usize,
    pub low_confidence_pixels: usize,
    /// Against the record's reflectance on mask pixels that were
    /// reconstructed.
    pub reflectance: Option<ReflectanceMetrics>,
}

fn recon_basis(args: &ReconBasisArgs) -> Result<String> {
    let mut setup = basis_setup(&args.basis)?;
    if let Some(s) = args.shading {
        setup.config.params.shading = match s {
            ShadingArg::Known => ShadingMode::Known,
            ShadingArg::Unknown => ShadingMode::Unknown,
        };
    }
    if let Some(r) = args.regularization {
        setup.config.params.regularization = match r {
            RegularizationArg::Constrained => Regularization::Constrained,
            RegularizationArg::Penalized => Regularization::Penalized,
        };
    }
    if let Some(r) = args.max_window_radius {
        setup.config.params.max_window_radius = r;
    }
    let sample = load_sample(&args.sample)?;
    setup.system.grid().check_same(&sample.meta.grid, "recon-basis sample")?;
    let disparity = match &args.disparity {
        Some(p) => read_plane_file(p)?,
        None => sample.disparity.clone(),
    };
    let pattern = sample.pattern()?;
    let recon = Reconstructor::new(setup.system, setup.basis, setup.config.params)?;
    let input = ReconInput {
        image: &sample.image,
        disparity: &disparity,
        mask: &sample.mask,
        pattern: &pattern,
        rig: &sample.meta.rig,
        shading: None,
    };
    let out = reconstruct_image(&input, &recon)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    save_prediction(
        &args.out,
        &Prediction {
            disparity: disparity.clone(),
            depth: None,
            reflectance: out.reflectance.clone(),
        },
    )?;
    write_mask_file(&args.out.join("valid.bin"), &out.valid)?;
    write_mask_file(&args.out.join("low_confidence.bin"), &out.low_confidence)?;
    recon.basis().save_csv(&args.out.join("basis.csv"))?;
    let srgb = reflectance_to_srgb(&out.reflectance, &sample.meta.grid)?;
    save_srgb_png(&args.out.join("srgb.png"), &srgb)?;

    let evaluated = sample.mask.and(&out.valid)?;
    let reflectance = if evaluated.count() > 0 {
        Some(reflectance_metrics(&out.reflectance, &sample.reflectance, &evaluated)?)
    } else {
        None
    };
    let summary = ReconSummary {
        format: 1,
        k: recon.basis().k(),
        params: *recon.params(),
        valid_pixels: out.valid.count(),
        low_confidence_pixels: out.low_confidence.count(),
        reflectance,
    };
    json_text(&summary)
}

fn save_srgb_png(path: &Path, srgb: &ImagePlane) -> Result<()> {
    let buf: Vec<u8> = srgb.data().iter().map(|&c| (c.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::RgbImage::from_raw(srgb.width() as u32, srgb.height() as u32, buf)
        .ok_or_else(|| Error::format(path, "srgb buffer size"))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondnumReport {
    pub format: u32,
    pub raw: f64,
    pub reduced: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub weight: f64,
    pub rank: usize,
}

fn condnum(args: &CondnumArgs) -> Result<String> {
    let setup = basis_setup(&args.basis)?;
    let weight = setup.config.params.smoothness_weight;
    let report = CondnumReport {
        format: 1,
        raw: setup.system.condition_number()?,
        reduced: condition_number_reduced(&setup.system, &setup.basis, weight)?,
        k: setup.basis.k(),
        weight,
        rank: setup.system.rank(),
    };
    let text = json_text(&report)?;
    if let Some(out) = &args.out {
        write_text(out, &text)?;
    }
    Ok(text)
}

fn export_ply(args: &ExportPlyArgs) -> Result<String> {
    let sample = load_sample(&args.sample)?;
    let (depth, reflectance) = match &args.pred {
        Some(dir) => {
            let pred = load_prediction(dir)?;
            (depth_from_prediction(&pred, sample.meta.rig.bf()), pred.reflectance)
        }
        None => (sample.depth.clone(), sample.reflectance.clone()),
    };
    let colors = reflectance_to_srgb(&reflectance, &sample.meta.grid)?;
    let ply = export_point_cloud(&depth, &sample.meta.rig, &colors, &sample.mask)?;
    ensure_parent(&args.out)?;
    write_point_cloud(&args.out, &ply)?;
    Ok(String::new())
}

fn dispatch(command: &Command) -> Result<String> {
    match command {
        Command::GenPattern(a) => gen_pattern(a),
        Command::Render(a) => render(a),
        Command::RenderDataset(a) => render_dataset(a),
        Command::Eval(a) => eval(a),
        Command::ReconBasis(a) => recon_basis(a),
        Command::Condnum(a) => condnum(a),
        Command::ExportPly(a) => export_ply(a),
    }
}

/// Runs a parsed command, on a dedicated pool when `--threads` is given.
/// Returns the text destined for stdout.
pub fn execute(cli: &Cli) -> Result<String> {
    match cli.threads {
        Some(n) => {
            if n == 0 {
                return Err(Error::Argument("--threads must be >= 1".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(&cli.command))
        }
        None => dispatch(&cli.command),
    }
}

/// One-line machine-parsable rendering of an error.
pub fn error_line(e: &Error) -> String {
    format!("error: kind={} msg={:?}", e.kind(), e.to_string())
}

/// Parses `args` (including the program name) and runs; returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}
