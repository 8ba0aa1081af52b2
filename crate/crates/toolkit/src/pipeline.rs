//! The processing stages behind the `das` subcommands: simulate, kernel,
//! LASSO and network denoising, training, tracking and scoring.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use das_core::hdlnet::{self, ModelParams, TrainHistory};
use das_core::lasso::{self, LassoConfig};
use das_core::metrics::{self, QualityReport};
use das_core::physics;
use das_core::scenegen::{self, GroundTruth, SceneConfig, VehicleSpec};
use das_core::tracker::{self, Trajectory};
use das_core::{ImpulseKernel, Waterfall};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{write_checkpoint, Checkpoint};
use crate::config::PipelineConfig;
use crate::error::{as_config, Result, ToolkitError};
use crate::io;

/// Scene and pipeline settings shipped with the binary.
pub const DEMO_CONFIG: &str = include_str!("../assets/demo.conf");

pub struct Scene {
    pub clean: Waterfall,
    pub noisy: Waterfall,
    pub truth: GroundTruth,
    pub vehicles: Vec<VehicleSpec>,
    pub seed: u64,
}

/// Simulates one scene. A single generator seeded with `seed` draws the
/// random traffic (if configured) and then the noise.
pub fn simulate(cfg: &PipelineConfig, seed: u64) -> Result<Scene> {
    let scene = SceneConfig {
        seed,
        ..cfg.scene.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vehicles = cfg.vehicles.clone();
    if let Some(t) = cfg.traffic {
        vehicles.extend(scenegen::random_vehicles(&scene, t.count, t.v_min, &mut rng).map_err(as_config)?);
    }
    let (clean, truth) = scenegen::simulate_clean(&scene, &vehicles).map_err(as_config)?;
    let noisy = scenegen::add_noise_with(&clean, &scene, &mut rng);
    Ok(Scene {
        clean,
        noisy,
        truth,
        vehicles,
        seed,
    })
}

pub fn truth_to_text(truth: &GroundTruth, seed: u64) -> String {
    let mut out = format!("# seed={seed}\n");
    for (i, t) in truth.tracks.iter().enumerate() {
        let _ = writeln!(out, "# vehicle {i}");
        for (k, p) in &t.points {
            let _ = writeln!(out, "{k},{p}");
        }
    }
    out
}

/// Paths of the companion files written next to a simulated waterfall.
pub fn companion_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    (
        out.with_file_name(format!("{stem}.clean.dasw")),
        out.with_file_name(format!("{stem}.truth.txt")),
    )
}

pub fn write_scene(s: &Scene, noisy: &Path, clean: &Path, truth: &Path) -> Result<()> {
    io::write_waterfall(&s.noisy, noisy)?;
    io::write_waterfall(&s.clean, clean)?;
    io::write_atomic(truth, truth_to_text(&s.truth, s.seed).as_bytes())
}

/// The normalized kernel the scene generator deposits for a default vehicle
/// on the fiber line.
pub fn scene_kernel(scene: &SceneConfig) -> Result<ImpulseKernel> {
    physics::kernel_for(
        scene.kernel_form,
        &das_core::VehicleGeometry::default(),
        &scene.physics,
        0.0,
        scene.channel_spacing,
        scene.kernel_half_width,
    )
    .map_err(as_config)
}

/// `offset_m,tap` lines for a kernel.
pub fn kernel_csv(k: &ImpulseKernel) -> String {
    let mut out = String::from("offset_m,tap\n");
    let h = k.half_width() as f64;
    for (j, t) in k.taps().iter().enumerate() {
        let _ = writeln!(out, "{},{t}", (j as f64 - h) * k.channel_spacing);
    }
    out
}

pub struct LassoOutput {
    pub estimate: Waterfall,
    pub reconstruction: Waterfall,
    pub trace: Vec<f64>,
}

pub fn denoise_lasso(w: &Waterfall, kern: &ImpulseKernel, cfg: &LassoConfig) -> Result<LassoOutput> {
    cfg.validate().map_err(as_config)?;
    let r = lasso::denoise(w, kern, cfg)?;
    let reconstruction = lasso::reconstruct(&r.estimate, kern)?;
    Ok(LassoOutput {
        estimate: r.estimate,
        reconstruction,
        trace: r.objective_trace,
    })
}

pub fn trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("iteration,objective\n");
    for (i, v) in trace.iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}

/// All `*.dasw` files of a directory in name order.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| ToolkitError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| ToolkitError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "dasw") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(ToolkitError::input(dir, "no .dasw files"));
    }
    Ok(files)
}

/// Synthetic training waterfalls: noisy scenes drawn from seeds following
/// the scene seed, normalized to [0, 1].
pub fn synthetic_dataset(cfg: &PipelineConfig) -> Result<Vec<Waterfall>> {
    (0..cfg.dataset_size as u64)
        .map(|i| Ok(scenegen::normalize(&simulate(cfg, cfg.scene.seed + 1 + i)?.noisy)))
        .collect()
}

pub fn train(dataset: &[Waterfall], kern: &ImpulseKernel, cfg: &PipelineConfig) -> Result<(Checkpoint, TrainHistory)> {
    let init = ModelParams::<f64>::init(&cfg.net, cfg.train.seed)
        .map_err(as_config)?
        .cast();
    let (params, history) = hdlnet::train_with_callback(dataset, kern, init, &cfg.train, |epoch, l| {
        log::debug!("epoch {epoch}: train {} validation {:?}", l.train, l.validation);
    })?;
    Ok((Checkpoint::new(params, kern), history))
}

pub fn history_csv(h: &TrainHistory) -> String {
    let mut out = String::from("epoch,train_loss,validation_loss\n");
    let rows = std::iter::once(&h.initial).chain(&h.epochs);
    for (i, l) in rows.enumerate() {
        let v = l.validation.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{i},{},{v}", l.train);
    }
    out
}

/// Network denoising; returns the reconstruction on the input scale.
pub fn denoise_net(w: &Waterfall, ckpt: &Checkpoint) -> Result<Waterfall> {
    let cfg = ckpt.params.config();
    if w.shape() != (cfg.input_channels, cfg.input_time) {
        return Err(ToolkitError::config(format!(
            "waterfall is {} x {} but the model expects {} x {}",
            w.n_channels(),
            w.n_time(),
            cfg.input_channels,
            cfg.input_time
        )));
    }
    let kern = ckpt.kernel(w.channel_spacing)?;
    Ok(hdlnet::denoise(&ckpt.params, &kern, w)?.1)
}

pub fn track(w: &Waterfall, cfg: &PipelineConfig) -> Result<Vec<Trajectory>> {
    cfg.tracker.validate().map_err(as_config)?;
    Ok(tracker::extract_trajectories(w, &cfg.tracker)?)
}

pub fn evaluate(reference: &Waterfall, candidate: &Waterfall, cfg: &PipelineConfig) -> Result<QualityReport> {
    if reference.shape() != candidate.shape() {
        return Err(ToolkitError::config(format!(
            "reference is {:?} but candidate is {:?}",
            reference.shape(),
            candidate.shape()
        )));
    }
    Ok(metrics::evaluate(reference, candidate, cfg.peak_v, &cfg.ssim)?)
}

/// Files written by [`run_pipeline`], relative to its output directory.
pub const PIPELINE_OUTPUTS: [&str; 19] = [
    "config.txt",
    "clean.dasw",
    "noisy.dasw",
    "truth.txt",
    "kernel.txt",
    "kernel.csv",
    "lasso.dasw",
    "lasso_trace.csv",
    "model.hdln",
    "history.csv",
    "net.dasw",
    "tracks.txt",
    "report_noisy.txt",
    "report_lasso.txt",
    "report_net.txt",
    "noisy.pgm",
    "lasso.pgm",
    "net.pgm",
    "noisy.csv",
];

/// Runs every stage on one configuration and writes all artifacts into
/// `dir`: simulation, kernel, LASSO, training on synthetic scenes, network
/// denoising, tracking on the LASSO output, reports and renders.
pub fn run_pipeline(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ToolkitError::io(dir, e))?;
    let p = |name: &str| dir.join(name);
    io::write_atomic(&p("config.txt"), cfg.to_text().as_bytes())?;

    let scene = simulate(cfg, cfg.scene.seed)?;
    write_scene(&scene, &p("noisy.dasw"), &p("clean.dasw"), &p("truth.txt"))?;
    io::write_csv(&scene.noisy, &p("noisy.csv"))?;

    let kern = scene_kernel(&cfg.scene)?;
    io::write_kernel(&kern, &p("kernel.txt"))?;
    io::write_atomic(&p("kernel.csv"), kernel_csv(&kern).as_bytes())?;

    let lasso = denoise_lasso(&scene.noisy, &kern, &cfg.lasso)?;
    io::write_waterfall(&lasso.reconstruction, &p("lasso.dasw"))?;
    io::write_atomic(&p("lasso_trace.csv"), trace_csv(&lasso.trace).as_bytes())?;

    let dataset = synthetic_dataset(cfg)?;
    let (ckpt, history) = train(&dataset, &kern, cfg)?;
    write_checkpoint(&ckpt, &p("model.hdln"))?;
    io::write_atomic(&p("history.csv"), history_csv(&history).as_bytes())?;
    let net = denoise_net(&scene.noisy, &ckpt)?;
    io::write_waterfall(&net, &p("net.dasw"))?;

    io::write_trajectories(&track(&lasso.reconstruction, cfg)?, &p("tracks.txt"))?;

    for (name, w) in [("noisy", &scene.noisy), ("lasso", &lasso.reconstruction), ("net", &net)] {
        let report = evaluate(&scene.clean, w, cfg)?;
        io::write_atomic(&p(&format!("report_{name}.txt")), report.to_key_values().as_bytes())?;
        io::render_pgm(&scenegen::normalize(w), &p(&format!("{name}.pgm")), 1.0)?;
    }
    Ok(())
}
