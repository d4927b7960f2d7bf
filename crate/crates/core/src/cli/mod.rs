//! Command-line front end: `reconstruct`, `render`, `evaluate`.

pub mod backend;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{RunConfig, RESOLVED_CONFIG_FILE};
use crate::error::{Error, Result};
use crate::evalkit::evaluate_dataset;
use crate::io::{load_case_dir, write_png};
use crate::raster::Raster;
use crate::scene::{pose_from_spherical, render, RenderOptions, SceneModel};
use crate::trainer::{run, Backends, WHITE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Backend(_) => EXIT_BACKEND,
        Error::Numeric(_) | Error::NotReady(_) => EXIT_NUMERIC,
        Error::InvalidArgument(_) | Error::Config { .. } | Error::Io { .. } => EXIT_INVALID,
    }
}

#[derive(Debug, Parser)]
#[command(name = "c123", version, about = "Two-stage single-image-to-3D reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a scene for one case directory.
    Reconstruct(ReconstructArgs),
    /// Render a checkpoint from one viewpoint over white.
    Render(RenderArgs),
    /// Score result directories against their cases.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `key = value` run configuration; defaults apply to absent keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "backend-2d")]
    pub backend_2d: Option<String>,
    #[arg(long = "backend-3d")]
    pub backend_3d: Option<String>,
    #[arg(long)]
    pub embed: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub azimuth: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub elevation: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Take camera radius, field of view, resolution and samples from here.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub cases: PathBuf,
    #[arg(long)]
    pub embed: String,
    #[arg(long)]
    pub perceptual: Option<String>,
    /// Report directory; defaults to `--results`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => {
            let mut c = RunConfig::default();
            c.resolve()?;
            Ok(c)
        }
    }
}

#[derive(Serialize)]
struct RunSummary {
    iterations: usize,
    transition_iteration: Option<usize>,
    init3d_steps: usize,
    dynamic_steps: usize,
    reference_psnr: f64,
}

pub fn cmd_reconstruct(args: &ReconstructArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(s) = &args.backend_2d {
        cfg.backends.guidance_2d = s.clone();
    }
    if let Some(s) = &args.backend_3d {
        cfg.backends.guidance_3d = s.clone();
    }
    if let Some(s) = &args.embed {
        cfg.backends.embedding = s.clone();
    }
    cfg.resolve()?;
    let case = load_case_dir(&args.case, cfg.reference_pose()?, cfg.train.resolution)?;
    let g2 = backend::guidance_backend(&cfg.backends.guidance_2d, cfg.train.samples)?;
    let g3 = backend::guidance_backend(&cfg.backends.guidance_3d, cfg.train.samples)?;
    let embedding = backend::embedding_backend(&cfg.backends.embedding, &case.image)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    cfg.save(&args.out.join(RESOLVED_CONFIG_FILE))?;
    let backends = Backends {
        guidance_2d: g2.as_ref(),
        guidance_3d: g3.as_ref(),
        embedding: embedding.as_ref(),
        upgrade: None,
    };
    let result = run(&case, &cfg.train, &backends, Some(&args.out))?;
    let init3d_steps = result.log.iter().filter(|r| r.stage == crate::trainer::Stage::Init3d).count();
    let summary = RunSummary {
        iterations: result.log.len(),
        transition_iteration: result.transition_iteration,
        init3d_steps,
        dynamic_steps: result.log.len() - init3d_steps,
        reference_psnr: crate::evalkit::psnr(&result.reference_render.rgb, &case.image)?,
    };
    let path = args.out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    log::info!("wrote {}", args.out.display());
    Ok(())
}

pub fn render_checkpoint(args: &RenderArgs) -> Result<Raster> {
    let cfg = load_config(args.config.as_deref())?.train;
    let scene = SceneModel::load(&args.checkpoint)?;
    let pose = pose_from_spherical(args.azimuth, args.elevation, cfg.radius, cfg.fov)?;
    let opts = RenderOptions::default().with_samples(cfg.samples).with_background(WHITE);
    let res = args.resolution.unwrap_or(cfg.resolution);
    Ok(render(&scene, &pose, res, &opts)?.rgb)
}

pub fn cmd_render(args: &RenderArgs) -> Result<()> {
    write_png(&args.out, &render_checkpoint(args)?)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let white = Raster::filled(8, 8, 3, 1.0);
    let model = backend::embedding_backend(&args.embed, &white)?;
    let perceptual = args.perceptual.as_deref().map(backend::perceptual_backend).transpose()?;
    let (report, categories) = evaluate_dataset(&args.results, &args.cases, model.as_ref(), perceptual.as_deref())?;
    report.write(args.out.as_deref().unwrap_or(&args.results), &categories)
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("C123_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match &cli.command {
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Render(a) => cmd_render(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("c123: {e}");
            exit_code(&e)
        }
    }
}
