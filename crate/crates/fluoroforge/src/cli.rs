//! The `fluoroforge` command line: `simulate`, `reconstruct`, `evaluate`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fluoroforge_core::imaging::{temporal_mean, Image};
use fluoroforge_core::metrics::{psnr, rsp_rse, ssim, SigmaGrid};
use fluoroforge_core::photophysics::CalibrationProfile;
use fluoroforge_core::simulator::{simulate_stack, SimulationConfig};
use serde::Serialize;

use crate::error::{exit, Error, Result};
use crate::io::{
    frame_file_name, load_image, load_stack, profile_digest, read_json, save_image, save_stack, write_json,
    StackManifest,
};
use crate::pipeline::{default_jobs, default_prior, reconstruct_field, ReconstructOptions, Tiling};

#[derive(Debug, Parser)]
#[command(name = "fluoroforge", version, about = "Simulate, reconstruct and evaluate fluorescence time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a blinking frame stack from a high-resolution density image.
    Simulate(SimulateArgs),
    /// Reconstruct a super-resolution image from a frame stack.
    Reconstruct(ReconstructArgs),
    /// Print image-quality metrics as JSON.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// High-resolution density image (16-bit grayscale PNG).
    #[arg(long)]
    pub input: PathBuf,
    /// Calibration profile JSON.
    #[arg(long)]
    pub profile: PathBuf,
    /// Output stack directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    /// High-resolution pixels per output pixel.
    #[arg(long, default_value_t = 8)]
    pub scale: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Expected fluorophores per unit of density.
    #[arg(long, default_value_t = 1.0)]
    pub count_scale: f64,
    /// Also write the noiseless high-resolution frames to `<out>/ground_truth/`.
    #[arg(long)]
    pub emit_ground_truth: bool,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Prior image at the output resolution. Defaults to the bicubic
    /// upsampled temporal mean.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Calibration profile JSON. Without one, built-in defaults are used and
    /// the noise level is estimated from the stack.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub iters: usize,
    /// Tile size in input pixels, e.g. `24x24`.
    #[arg(long, value_parser = parse_tile)]
    pub tile: Option<(usize, usize)>,
    /// Input pixels shared by neighboring tiles.
    #[arg(long, default_value_t = 0, requires = "tile")]
    pub overlap: usize,
    /// Worker threads; defaults to the available cores, capped by FLUOROFORGE_THREADS.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Reconstruction to score.
    #[arg(long)]
    pub recon: PathBuf,
    /// Ground truth at the reconstruction's resolution; enables PSNR and SSIM.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Frame stack used as the widefield reference; enables RSP and RSE.
    #[arg(long)]
    pub stack: Option<PathBuf>,
}

fn parse_tile(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected <w>x<h>, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(w)?, parse(h)?))
}

fn load_profile(path: &Path) -> Result<CalibrationProfile> {
    read_json(path)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    if args.frames == 0 {
        return Err(Error::Usage("--frames must be at least 1".into()));
    }
    if args.scale == 0 {
        return Err(Error::Usage("--scale must be at least 1".into()));
    }
    let profile = load_profile(&args.profile)?;
    let density = load_image(&args.input)?;
    let config = SimulationConfig {
        frames: args.frames,
        scale: args.scale,
        count_scale: args.count_scale,
        rng_seed: args.seed,
        ..SimulationConfig::default()
    };
    let sim = simulate_stack(&density, &profile, &config, args.emit_ground_truth)?;
    let mut manifest = StackManifest::describe(&sim.stack, args.scale);
    manifest.rng_seed = Some(args.seed);
    manifest.profile_digest = Some(profile_digest(&profile));
    save_stack(&sim.stack, &manifest, &args.out)?;
    if args.emit_ground_truth {
        let dir = args.out.join("ground_truth");
        create_dir(&dir)?;
        for (t, frame) in sim.ground_truth.iter().enumerate() {
            save_image(frame, &dir.join(frame_file_name(t)))?;
        }
    }
    Ok(())
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<()> {
    if args.iters == 0 {
        return Err(Error::Usage("--iters must be at least 1".into()));
    }
    let (stack, manifest) = load_stack(&args.stack)?;
    let scale = manifest.scale_factor;
    if scale == 0 {
        return Err(Error::Usage("manifest scale_factor must be at least 1".into()));
    }
    let (profile, noise_sigma) = match &args.profile {
        Some(p) => {
            let profile = load_profile(p)?;
            let noise = profile.noise_sigma;
            (profile, (noise > 0.0).then_some(noise))
        }
        None => (CalibrationProfile::meos32(), None),
    };
    let prior = match &args.prior {
        Some(p) => load_image(p)?.with_pixel_size(stack.pixel_size_nm() / scale as f64),
        None => default_prior(&stack, scale)?,
    };
    let options = ReconstructOptions {
        iterations: args.iters,
        seed: args.seed,
        noise_sigma,
        tiling: args.tile.map(|(width, height)| Tiling {
            width,
            height,
            overlap: args.overlap,
        }),
        jobs: args.jobs.unwrap_or_else(default_jobs),
        ..ReconstructOptions::new(profile, scale)
    };
    let result = reconstruct_field(&stack, &prior, &options)?;
    create_dir(&args.out)?;
    save_image(&result.sr_image, &args.out.join("sr.png"))?;
    write_json(&result.fluorophores, &args.out.join("fluorophores.json"))?;
    write_json(&result.trace, &args.out.join("trace.json"))
}

/// PSNR is infinite for identical images, which JSON numbers cannot carry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Decibels {
    Finite(f64),
    Text(&'static str),
}

impl From<f64> for Decibels {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            Decibels::Text("+inf")
        } else {
            Decibels::Finite(v)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvaluationReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_db: Option<Decibels>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rsp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<EvaluationReport> {
    if args.truth.is_none() && args.stack.is_none() {
        return Err(Error::Usage("evaluate needs --truth and/or --stack".into()));
    }
    let recon = load_image(&args.recon)?;
    let mut report = EvaluationReport::default();
    if let Some(path) = &args.truth {
        let truth = load_image(path)?;
        report.psnr_db = Some(psnr(&truth, &recon, 1.0)?.into());
        report.ssim = Some(ssim(&truth, &recon)?);
    }
    if let Some(dir) = &args.stack {
        let (stack, _) = load_stack(dir)?;
        let reference = temporal_mean(&stack);
        let scale = integer_scale(&reference, &recon)?;
        let fit = rsp_rse(&reference, &recon, scale, &SigmaGrid::default())?;
        report.rsp = Some(fit.rsp);
        report.rse = Some(fit.rse);
        report.sigma_star = Some(fit.sigma_star);
        report.alpha = Some(fit.alpha);
        report.beta = Some(fit.beta);
    }
    Ok(report)
}

/// The reconstruction must be an exact integer multiple of the reference.
fn integer_scale(reference: &Image, recon: &Image) -> Result<usize> {
    let (rw, rh) = reference.dims();
    let (sw, sh) = recon.dims();
    let scale = sw / rw;
    if scale == 0 || sw % rw != 0 || sh != rh * scale {
        return Err(fluoroforge_core::Error::DimensionMismatch {
            expected: (rw * scale.max(1), rh * scale.max(1)),
            actual: (sw, sh),
        }
        .into());
    }
    Ok(scale)
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Evaluate(a) => {
            let report = evaluate(a)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            writeln!(stdout, "{json}").map_err(|e| Error::io("<stdout>", e))
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let target: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => exit::OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
