//! The `das` command line.
//!
//! Settings come from an optional configuration file (see
//! [`crate::config`]); command-line flags override it. Every output is
//! written atomically. Failures print one line
//! `das: error kind=<config|input|numeric>: <reason>` and exit with 2, 3 or
//! 4 respectively.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use das_core::physics::{self, PhysicsParams};
use das_core::tracker::Direction;
use das_core::{ImpulseKernel, VehicleGeometry};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::PipelineConfig;
use crate::error::{as_config, Result, ToolkitError};
use crate::io;
use crate::pipeline::{self, DEMO_CONFIG};

#[derive(Debug, Parser)]
#[command(name = "das", version, about = "Simulate, denoise and track DAS traffic waterfalls")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scene: noisy waterfall, clean waterfall and ground truth.
    Simulate(SimulateArgs),
    /// Sample the physical impulse-response kernel.
    Kernel(KernelArgs),
    /// Sparse deconvolution denoising with FISTA.
    DenoiseLasso(DenoiseLassoArgs),
    /// Train the hybrid network on a directory of noisy waterfalls.
    Train(TrainArgs),
    /// Denoise a waterfall with a trained network.
    DenoiseNet(DenoiseNetArgs),
    /// Extract vehicle trajectories.
    Track(TrackArgs),
    /// Score a candidate waterfall against a reference.
    Eval(EvalArgs),
    /// Render a waterfall as a grayscale PGM image.
    Render(RenderArgs),
    /// Run every stage on the bundled demo (or a given) configuration.
    Pipeline(PipelineArgs),
    /// Print the bundled demo configuration.
    DemoConfig,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// Scene file; defaults to the bundled demo scene.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Noisy waterfall path, or the output directory with `--count`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write this many scenes, seeded `seed, seed + 1, ...`, into `--out`.
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Form {
    Point,
    FourWheel,
}

#[derive(Debug, clap::Args)]
pub struct KernelArgs {
    /// Lateral offset between vehicle and fiber (m).
    #[arg(long, default_value_t = 0.0)]
    pub dy: f64,
    /// Burial depth (m).
    #[arg(long, default_value_t = PhysicsParams::default().depth)]
    pub depth: f64,
    /// Total vehicle force (N); only visible with `--raw`.
    #[arg(long, default_value_t = 1.0e4)]
    pub force: f64,
    #[arg(long, default_value_t = PhysicsParams::default().shear_modulus)]
    pub shear_modulus: f64,
    #[arg(long, default_value_t = PhysicsParams::default().poisson)]
    pub poisson: f64,
    #[arg(long, default_value_t = PhysicsParams::default().gauge_length)]
    pub gauge_length: f64,
    #[arg(long, default_value_t = 0.8)]
    pub spacing: f64,
    #[arg(long, default_value_t = 20)]
    pub half_width: usize,
    #[arg(long, value_enum, default_value_t = Form::Point)]
    pub form: Form,
    /// Keep physical units instead of scaling the peak to 1.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `offset_m,tap` lines for plotting.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Comma-separated lateral offsets; adds one raw-kernel column per value
    /// to the CSV.
    #[arg(long, value_delimiter = ',')]
    pub sweep_dy: Vec<f64>,
}

#[derive(Debug, clap::Args)]
pub struct DenoiseLassoArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub kernel: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Denoised waterfall: the reconstruction `K x`.
    #[arg(long)]
    pub out: PathBuf,
    /// Sparse source estimate `x`.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Objective per iteration as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Directory of `.dasw` waterfalls, used in name order.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub kernel: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss per epoch as CSV; row 0 holds the initial losses.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct DenoiseNetArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DirectionArg {
    Forward,
    Reverse,
}

#[derive(Debug, clap::Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub candidate: PathBuf,
    #[arg(long)]
    pub peak_v: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Min-max normalize before rendering instead of rejecting other ranges.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, clap::Args)]
pub struct PipelineArgs {
    /// Configuration file; defaults to the bundled demo configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let cfg = match path {
        Some(p) => {
            let text = io::read_text(p)?;
            PipelineConfig::parse(&text).map_err(|e| match e {
                ToolkitError::Config(m) => ToolkitError::config(format!("{}: {m}", p.display())),
                other => other,
            })?
        }
        None => PipelineConfig::default(),
    };
    Ok(cfg)
}

fn log_config(cfg: &PipelineConfig) {
    log::info!("resolved configuration:\n{}", cfg.to_text());
}

fn kernel_command(a: &KernelArgs) -> Result<()> {
    let params = PhysicsParams {
        shear_modulus: a.shear_modulus,
        poisson: a.poisson,
        depth: a.depth,
        gauge_length: a.gauge_length,
    };
    params.validate().map_err(as_config)?;
    if !(a.spacing > 0.0 && a.spacing.is_finite()) {
        return Err(ToolkitError::config("spacing must be > 0"));
    }
    if !(a.force > 0.0 && a.force.is_finite()) {
        return Err(ToolkitError::config("force must be > 0"));
    }
    let geom = VehicleGeometry {
        wheel_weights: [a.force / 4.0; 4],
        ..VehicleGeometry::default()
    };
    let raw = |dx: f64, dy: f64| match a.form {
        Form::Point => physics::point_load_kernel(dx, &params, a.force, dy),
        Form::FourWheel => physics::vehicle_kernel(dx, &geom, &params, dy),
    };
    let h = a.half_width as f64;
    let sample = |dy: f64| -> Result<Vec<f64>> {
        (0..2 * a.half_width + 1)
            .map(|j| Ok(raw((j as f64 - h) * a.spacing, dy)?))
            .collect()
    };
    let mut kern = ImpulseKernel::from_taps(sample(a.dy)?, a.spacing, false)?;
    if !a.raw {
        kern = kern.normalize()?;
    }
    io::write_kernel(&kern, &a.out)?;
    if let Some(csv) = &a.csv {
        let mut text = String::from("offset_m,tap");
        let sweeps = a.sweep_dy.iter().map(|&dy| sample(dy)).collect::<Result<Vec<_>>>()?;
        for dy in &a.sweep_dy {
            text.push_str(&format!(",raw_dy={dy}"));
        }
        text.push('\n');
        for (j, t) in kern.taps().iter().enumerate() {
            text.push_str(&format!("{},{t}", (j as f64 - h) * a.spacing));
            for s in &sweeps {
                text.push_str(&format!(",{}", s[j]));
            }
            text.push('\n');
        }
        io::write_atomic(csv, text.as_bytes())?;
    }
    Ok(())
}

fn simulate_command(a: &SimulateArgs) -> Result<()> {
    let mut cfg = match &a.scene {
        Some(p) => load_config(Some(p))?,
        None => PipelineConfig::parse(DEMO_CONFIG)?,
    };
    if let Some(seed) = a.seed {
        cfg.scene.seed = seed;
    }
    log_config(&cfg);
    match a.count {
        None => {
            let s = pipeline::simulate(&cfg, cfg.scene.seed)?;
            let (clean, truth) = pipeline::companion_paths(&a.out);
            pipeline::write_scene(&s, &a.out, &clean, &truth)
        }
        Some(n) => {
            std::fs::create_dir_all(&a.out).map_err(|e| ToolkitError::io(&a.out, e))?;
            for i in 0..n as u64 {
                let s = pipeline::simulate(&cfg, cfg.scene.seed + i)?;
                let noisy = a.out.join(format!("scene_{i:04}.dasw"));
                let truth = a.out.join(format!("scene_{i:04}.truth.txt"));
                let clean = a.out.join("clean");
                std::fs::create_dir_all(&clean).map_err(|e| ToolkitError::io(&clean, e))?;
                pipeline::write_scene(&s, &noisy, &clean.join(format!("scene_{i:04}.dasw")), &truth)?;
            }
            Ok(())
        }
    }
}

fn denoise_lasso_command(a: &DenoiseLassoArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(l) = a.lambda {
        cfg.lasso.lambda = l;
    }
    if let Some(m) = a.max_iter {
        cfg.lasso.max_iter = m;
    }
    log::info!("lasso settings: {:?}", cfg.lasso);
    let w = io::read_waterfall(&a.input)?;
    let kern = io::read_kernel(&a.kernel)?;
    let out = pipeline::denoise_lasso(&w, &kern, &cfg.lasso)?;
    io::write_waterfall(&out.reconstruction, &a.out)?;
    if let Some(p) = &a.source {
        io::write_waterfall(&out.estimate, p)?;
    }
    if let Some(p) = &a.trace {
        io::write_atomic(p, pipeline::trace_csv(&out.trace).as_bytes())?;
    }
    Ok(())
}

fn train_command(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    cfg.validate()?;
    log_config(&cfg);
    let kern = io::read_kernel(&a.kernel)?;
    let mut dataset = Vec::new();
    for path in pipeline::dataset_files(&a.dataset)? {
        let w = io::read_waterfall(&path)?;
        if w.shape() != (cfg.net.input_channels, cfg.net.input_time) {
            return Err(ToolkitError::input(
                &path,
                format!(
                    "waterfall is {} x {} but the network expects {} x {}",
                    w.n_channels(),
                    w.n_time(),
                    cfg.net.input_channels,
                    cfg.net.input_time
                ),
            ));
        }
        dataset.push(das_core::scenegen::normalize(&w));
    }
    let (ckpt, history) = pipeline::train(&dataset, &kern, &cfg)?;
    write_checkpoint(&ckpt, &a.out)?;
    if let Some(p) = &a.history {
        io::write_atomic(p, pipeline::history_csv(&history).as_bytes())?;
    }
    Ok(())
}

fn eval_command(a: &EvalArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(v) = a.peak_v {
        cfg.peak_v = v;
    }
    cfg.validate()?;
    let reference = io::read_waterfall(&a.reference)?;
    let candidate = io::read_waterfall(&a.candidate)?;
    let report = pipeline::evaluate(&reference, &candidate, &cfg)?.to_key_values();
    print!("{report}");
    if let Some(p) = &a.out {
        io::write_atomic(p, report.as_bytes())?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate_command(&a),
        Command::Kernel(a) => kernel_command(&a),
        Command::DenoiseLasso(a) => denoise_lasso_command(&a),
        Command::Train(a) => train_command(&a),
        Command::DenoiseNet(a) => {
            let w = io::read_waterfall(&a.input)?;
            let ckpt = read_checkpoint(&a.checkpoint)?;
            io::write_waterfall(&pipeline::denoise_net(&w, &ckpt)?, &a.out)
        }
        Command::Track(a) => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(d) = a.direction {
                cfg.tracker.direction = match d {
                    DirectionArg::Forward => Direction::Forward,
                    DirectionArg::Reverse => Direction::Reverse,
                };
            }
            log::info!("tracker settings: {:?}", cfg.tracker);
            let w = io::read_waterfall(&a.input)?;
            io::write_trajectories(&pipeline::track(&w, &cfg)?, &a.out)
        }
        Command::Eval(a) => eval_command(&a),
        Command::Render(a) => {
            let mut w = io::read_waterfall(&a.input)?;
            if a.normalize {
                w = das_core::scenegen::normalize(&w);
            }
            let bytes = io::encode_pgm(&w, a.gamma).map_err(|e| ToolkitError::input(&a.input, e))?;
            io::write_atomic(&a.out, &bytes)
        }
        Command::Pipeline(a) => {
            let mut cfg = match &a.config {
                Some(p) => load_config(Some(p))?,
                None => PipelineConfig::parse(DEMO_CONFIG)?,
            };
            if let Some(seed) = a.seed {
                cfg.scene.seed = seed;
            }
            log_config(&cfg);
            pipeline::run_pipeline(&cfg, &a.out_dir)
        }
        Command::DemoConfig => {
            print!("{DEMO_CONFIG}");
            Ok(())
        }
    }
}

/// One-line failure message for stderr.
pub fn error_line(e: &ToolkitError) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("das: error kind={}: {msg}", e.kind())
}
