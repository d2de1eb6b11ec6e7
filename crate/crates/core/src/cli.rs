//! Command-line front end: configuration loading, output-directory plumbing
//! and the subcommands tying the pipeline together.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::SourceConfig;
use crate::forward::ForwardModel;
use crate::io;
use crate::reconstruct;
use crate::scans;
use crate::schmidt;
use crate::synthesis::{self, DetectionMode};

#[derive(Parser, Debug)]
#[command(
    name = "pdc-modes",
    about = "Forward model and inverse analysis for high-gain PDC from a two-crystal SU(1,1) source"
)]
pub struct Cli {
    /// Configuration file (key = value); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// RNG seed for synthesis.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker-thread cap (0 = automatic).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Degenerate,
    SignalOnly,
}

impl From<ModeArg> for DetectionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Degenerate => DetectionMode::Degenerate,
            ModeArg::SignalOnly => DetectionMode::SignalOnly,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ReconstructKind {
    Radial,
    Oam,
    G2,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScanVariable {
    Power,
    Distance,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CalibrateKind {
    /// Kerr coefficient from (power, collinear-minimum distance) rows.
    Kerr,
    /// Gain law from (power, intensity) rows.
    Gain,
}

#[derive(Args, Debug)]
pub struct SynthesizeArgs {
    /// Number of frames.
    #[arg(long, default_value_t = 3500)]
    pub frames: usize,
    /// Detection mode.
    #[arg(long, value_enum, default_value_t = ModeArg::Degenerate)]
    pub mode: ModeArg,
    /// Normalize each frame to unit integral intensity.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub normalize: bool,
    /// Export the first N frames as Cartesian graymaps.
    #[arg(long, default_value_t = 0)]
    pub pgm_frames: usize,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Frame-stack file written by `synthesize`.
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long, value_enum)]
    pub kind: ReconstructKind,
    /// Azimuthal sector half-angle for the radial reduction (rad).
    #[arg(long, default_value_t = reconstruct::DEFAULT_SECTOR_HALF_ANGLE)]
    pub half_angle: f64,
    /// Annulus center for the azimuthal reduction (rad); defaults to the
    /// brightest ring of the stack's mean intensity.
    #[arg(long)]
    pub theta_center: Option<f64>,
    /// Annulus half-width (rad).
    #[arg(long, default_value_t = reconstruct::DEFAULT_ANNULUS_HALF_WIDTH)]
    pub half_width: f64,
    /// Number of radial modes to recover.
    #[arg(long, default_value_t = 4)]
    pub p_rec: usize,
    /// Largest OAM index in the azimuthal fit.
    #[arg(long, default_value_t = 3)]
    pub l_fit: usize,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    #[arg(long, value_enum)]
    pub variable: ScanVariable,
    /// Scan start (W or m).
    #[arg(long)]
    pub from: f64,
    /// Scan end, inclusive (W or m).
    #[arg(long)]
    pub to: f64,
    /// Number of scan points.
    #[arg(long, default_value_t = 14)]
    pub steps: usize,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long, value_enum)]
    pub kind: CalibrateKind,
    /// Two-column CSV (header optional) with the observations.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Schmidt decomposition, gained weights and mean-intensity exports.
    Decompose,
    /// Monte-Carlo synthesis of a single-shot frame stack.
    Synthesize(SynthesizeArgs),
    /// Covariance-based reconstruction from a frame stack.
    Reconstruct(ReconstructArgs),
    /// Mode-count scans over pump power or crystal distance.
    Scan(ScanArgs),
    /// Kerr or gain calibration from tabulated observations.
    Calibrate(CalibrateArgs),
}

fn load_config(path: &Option<PathBuf>) -> Result<SourceConfig> {
    match path {
        None => Ok(SourceConfig::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            Ok(SourceConfig::parse(&text)?)
        }
    }
}

fn manifest(
    cli: &Cli,
    subcommand: &str,
    extra: &[(&'static str, String)],
) -> Vec<(&'static str, String)> {
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut entries: Vec<(&'static str, String)> = vec![
        ("subcommand", subcommand.to_string()),
        (
            "config_path",
            cli.config
                .as_ref()
                .map_or_else(|| "(defaults)".to_string(), |p| p.display().to_string()),
        ),
        ("out_dir", cli.out.display().to_string()),
        ("seed", cli.seed.to_string()),
        ("stack_format_version", io::STACK_FORMAT_VERSION.to_string()),
        ("timestamp_unix", ts.to_string()),
    ];
    entries.extend(extra.iter().cloned());
    entries
}

fn read_two_column_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading data {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            bail!(
                "{}:{}: expected two comma-separated columns",
                path.display(),
                i + 1
            );
        }
        match (cells[0].parse::<f64>(), cells[1].parse::<f64>()) {
            (Ok(a), Ok(b)) => rows.push((a, b)),
            _ if i == 0 => continue, // header row
            _ => bail!(
                "{}:{}: cannot parse `{line}` as numbers",
                path.display(),
                i + 1
            ),
        }
    }
    if rows.is_empty() {
        bail!("{}: no numeric rows", path.display());
    }
    Ok(rows)
}

/// Brightest ring of the stack's mean radial profile (annulus default).
fn brightest_ring(stack: &synthesis::FrameStack) -> f64 {
    let n_theta = stack.n_theta();
    let n_phi = stack.n_phi();
    let mut radial = vec![0.0f64; n_theta];
    for f in &stack.frames {
        for i in 0..n_theta {
            for j in 0..n_phi {
                radial[i] += f.at(i, j, n_phi) as f64;
            }
        }
    }
    let imax = radial
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    stack.grid.theta[imax]
}

fn cmd_decompose(cli: &Cli, cfg: &SourceConfig) -> Result<()> {
    let model = ForwardModel::build(cfg)?;
    let out = &cli.out;
    io::write_modes_csv(&out.join("modes.csv"), &model.dec)?;
    io::write_weights_csv(&out.join("weights.csv"), &model.dec, &model.spec)?;
    let mean = schmidt::mean_intensity(&model.dec, &model.spec);
    let data: Vec<f64> = (0..mean.nrows())
        .flat_map(|i| (0..mean.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| mean[(i, j)])
        .collect();
    io::write_matrix_csv(&out.join("mean_intensity.csv"), &data, mean.ncols())?;
    io::write_pgm(
        &out.join("mean_intensity.pgm"),
        &data,
        mean.ncols(),
        mean.nrows(),
    )?;
    io::write_manifest(out, &manifest(cli, "decompose", &[]))?;
    Ok(())
}

fn cmd_synthesize(cli: &Cli, cfg: &SourceConfig, args: &SynthesizeArgs) -> Result<()> {
    if args.frames == 0 {
        bail!("--frames must be at least 1");
    }
    let mode: DetectionMode = args.mode.into();
    let stack = synthesis::synthesize_stack(cfg, args.frames, cli.seed, mode, args.normalize)?;
    let stack_path = cli.out.join("frames.f32");
    io::write_stack(&stack_path, &stack)?;
    for (i, frame) in stack.frames.iter().take(args.pgm_frames).enumerate() {
        io::write_frame_pgm(
            &cli.out.join(format!("frame_{i:04}.pgm")),
            frame,
            &stack.grid,
            256,
        )?;
    }
    io::write_manifest(
        &cli.out,
        &manifest(
            cli,
            "synthesize",
            &[
                ("frames", args.frames.to_string()),
                ("detection_mode", mode.as_str().to_string()),
                ("normalize", args.normalize.to_string()),
            ],
        ),
    )?;
    Ok(())
}

fn cmd_reconstruct(cli: &Cli, args: &ReconstructArgs) -> Result<()> {
    let stack = io::read_stack(&args.stack)?;
    let out = &cli.out;
    match args.kind {
        ReconstructKind::Radial => {
            let spectra = reconstruct::radial_sector_reduce(&stack, args.half_angle)?;
            let cov = reconstruct::covariance(&spectra)?;
            io::write_covariance_csv(&out.join("cov.csv"), &cov)?;
            let modes = reconstruct::radial_modes_from_cov(&cov, args.p_rec)?;
            io::write_radial_modes_csv(&out.join("modes_rec.csv"), &modes)?;
            let rows: Vec<Vec<f64>> = modes
                .weights
                .iter()
                .enumerate()
                .map(|(p, &w)| vec![p as f64, w])
                .collect();
            io::write_csv(&out.join("weights_rec.csv"), &["p", "weight"], &rows)?;
        }
        ReconstructKind::Oam => {
            let center = args.theta_center.unwrap_or_else(|| brightest_ring(&stack));
            let spectra = reconstruct::azimuth_annulus_reduce(&stack, center, args.half_width)?;
            let cov = reconstruct::covariance(&spectra)?;
            io::write_covariance_csv(&out.join("cov.csv"), &cov)?;
            let c = reconstruct::dphi_average(&cov)?;
            let rows: Vec<Vec<f64>> = cov
                .coord
                .iter()
                .zip(&c)
                .map(|(&d, &v)| vec![d, v])
                .collect();
            io::write_csv(&out.join("c_dphi.csv"), &["dphi", "c"], &rows)?;
            let oam = reconstruct::fit_oam_weights(&c, &cov.coord, args.l_fit)?;
            io::write_oam_csv(
                &out.join("oam_weights.csv"),
                &out.join("oam_summary.txt"),
                &oam,
            )?;
        }
        ReconstructKind::G2 => {
            let totals = stack.total_intensities();
            let stats = reconstruct::g2_and_k(&totals)?;
            let text = format!(
                "g2 = {}\nk = {}\nn_samples = {}\n",
                io::fmt_f64(stats.g2),
                stats.k.map_or_else(|| "undefined".to_string(), io::fmt_f64),
                stats.n_samples
            );
            fs::write(out.join("g2.txt"), text)
                .with_context(|| format!("writing {}", out.join("g2.txt").display()))?;
        }
    }
    let kind = format!("{:?}", args.kind).to_lowercase();
    io::write_manifest(
        out,
        &manifest(
            cli,
            "reconstruct",
            &[("kind", kind), ("stack", args.stack.display().to_string())],
        ),
    )?;
    Ok(())
}

fn cmd_scan(cli: &Cli, cfg: &SourceConfig, args: &ScanArgs) -> Result<()> {
    if args.steps < 2 || !(args.to > args.from) {
        bail!("scan range must have at least 2 strictly increasing points");
    }
    let values: Vec<f64> = (0..args.steps)
        .map(|i| args.from + (args.to - args.from) * i as f64 / (args.steps - 1) as f64)
        .collect();
    let result = match args.variable {
        ScanVariable::Power => scans::scan_power(cfg, &values)?,
        ScanVariable::Distance => scans::scan_distance(cfg, &values)?,
    };
    io::write_scan_csv(&cli.out.join("scan.csv"), &result)?;
    let variable = format!("{:?}", args.variable).to_lowercase();
    io::write_manifest(&cli.out, &manifest(cli, "scan", &[("variable", variable)]))?;
    Ok(())
}

fn cmd_calibrate(cli: &Cli, args: &CalibrateArgs) -> Result<()> {
    let rows = read_two_column_csv(&args.data)?;
    let text = match args.kind {
        CalibrateKind::Kerr => {
            let cfg = load_config(&cli.config)?;
            let kappa = scans::kerr_calibration(&rows, cfg.pi_distance)?;
            format!("kappa = {}\n", io::fmt_f64(kappa))
        }
        CalibrateKind::Gain => {
            let cal = scans::calibrate_gain(&rows)?;
            format!(
                "coeff = {}\namplitude = {}\n",
                io::fmt_f64(cal.coeff),
                io::fmt_f64(cal.amplitude)
            )
        }
    };
    print!("{text}");
    fs::write(cli.out.join("calibration.txt"), &text)
        .with_context(|| format!("writing {}", cli.out.join("calibration.txt").display()))?;
    let kind = format!("{:?}", args.kind).to_lowercase();
    io::write_manifest(
        &cli.out,
        &manifest(
            cli,
            "calibrate",
            &[("kind", kind), ("data", args.data.display().to_string())],
        ),
    )?;
    Ok(())
}

/// Run the parsed command line. Errors bubble up for the binary to report on
/// standard error with a nonzero exit status.
pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads > 0 {
        // ignore the error when a global pool already exists (tests)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;
    match &cli.command {
        Command::Decompose => {
            let cfg = load_config(&cli.config)?;
            cmd_decompose(cli, &cfg)
        }
        Command::Synthesize(args) => {
            let cfg = load_config(&cli.config)?;
            cmd_synthesize(cli, &cfg, args)
        }
        Command::Reconstruct(args) => cmd_reconstruct(cli, args),
        Command::Scan(args) => {
            let cfg = load_config(&cli.config)?;
            cmd_scan(cli, &cfg, args)
        }
        Command::Calibrate(args) => cmd_calibrate(cli, args),
    }
}
