//! Scene and pipeline configuration files.
//!
//! Flat `key = value` lines grouped under `[section]` headers; `#` starts a
//! comment. Every section is optional and unknown sections or keys are
//! rejected. Keys per section:
//!
//! - `[scene]`: `n_channels`, `n_time`, `channel_spacing`, `sample_rate`,
//!   `noise_sigma`, `outlier_rate`, `outlier_amp`, `seed`, `kernel_form`
//!   (`point` or `four_wheel`), `kernel_half_width`, `v_max`,
//!   `shear_modulus`, `poisson`, `depth`, `gauge_length`
//! - `[vehicle]` (repeatable): `entry_time`, `entry_channel`, `speed` or
//!   `speed_knots` (`t:v, t:v, ...`), `lateral_offset`, `axle_length`,
//!   `wheelbase`, `wheel_weights` (four comma-separated forces)
//! - `[traffic]`: `count`, `v_min` (random constant-speed vehicles, redrawn
//!   from each scene seed)
//! - `[dataset]`: `size` (number of training waterfalls in the pipeline)
//! - `[lasso]`: `lambda`, `max_iter`, `tol`, `accelerated`
//! - `[net]`: `input_channels`, `input_time`, `base_channels`, `depth`,
//!   `conv_kernel` and `pool_kernel` (`HxW`), `lstm_units`, `dense_width`,
//!   `recurrence` (`channel` or `time`); unset sizes follow the scene
//! - `[train]`: `learning_rate`, `batch_size`, `epochs`, `lambda_l1`,
//!   `noise_variance`, `validation_fraction`, `seed`
//! - `[tracker]`: `v_min_init`, `v_max_init`, `confidence_cof`,
//!   `fit_window`, `poly_degree`, `peak_threshold_k`,
//!   `peak_min_separation`, `initial_steps`, `direction`
//!   (`forward` or `reverse`)
//! - `[ssim]`: `dynamic_range`, `window`, `alpha`, `beta`, `gamma`, `c1`,
//!   `c2`, `c3`; the constants default to the standard values for the range
//! - `[eval]`: `peak_v`

use std::fmt::Write as _;
use std::str::FromStr;

use das_core::hdlnet::{NetConfig, RecurrenceAxis, TrainConfig};
use das_core::lasso::LassoConfig;
use das_core::metrics::SsimConfig;
use das_core::scenegen::{SceneConfig, SpeedProfile, VehicleSpec};
use das_core::tracker::{Direction, TrackerConfig};
use das_core::{KernelForm, VehicleGeometry};

use crate::error::{as_config, Result, ToolkitError};

const SECTIONS: [&str; 10] = [
    "scene", "vehicle", "traffic", "dataset", "lasso", "net", "train", "tracker", "ssim", "eval",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Traffic {
    pub count: usize,
    pub v_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub scene: SceneConfig,
    pub vehicles: Vec<VehicleSpec>,
    pub traffic: Option<Traffic>,
    pub dataset_size: usize,
    pub lasso: LassoConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub tracker: TrackerConfig,
    pub ssim: SsimConfig,
    pub peak_v: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let scene = SceneConfig::default();
        let net = net_for_scene(&scene);
        PipelineConfig {
            scene,
            vehicles: Vec::new(),
            traffic: None,
            dataset_size: 16,
            lasso: LassoConfig::default(),
            net,
            train: TrainConfig::default(),
            tracker: TrackerConfig::default(),
            ssim: SsimConfig::default(),
            peak_v: 1.0,
        }
    }
}

/// The small network used when no `[net]` sizes are given: input sized to
/// the scene, two levels of two base feature maps.
pub fn net_for_scene(scene: &SceneConfig) -> NetConfig {
    NetConfig {
        input_channels: scene.n_channels,
        input_time: scene.n_time,
        lstm_units: 8,
        dense_width: scene.n_time,
        ..NetConfig::toy()
    }
}

struct Entry<'a> {
    key: &'a str,
    value: &'a str,
    line: usize,
}

struct Block<'a> {
    section: &'a str,
    entries: Vec<Entry<'a>>,
}

fn split_blocks(text: &str) -> Result<Vec<Block<'_>>> {
    let mut blocks: Vec<Block> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let n = i + 1;
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ToolkitError::config(format!("line {n}: malformed section header `{line}`")))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(ToolkitError::config(format!("line {n}: unknown section [{name}]")));
            }
            if name != "vehicle" && blocks.iter().any(|b| b.section == name) {
                return Err(ToolkitError::config(format!("line {n}: section [{name}] repeated")));
            }
            blocks.push(Block {
                section: name,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ToolkitError::config(format!("line {n}: expected `key = value`")))?;
        let block = blocks
            .last_mut()
            .ok_or_else(|| ToolkitError::config(format!("line {n}: key `{}` outside any section", key.trim())))?;
        let key = key.trim();
        if block.entries.iter().any(|e| e.key == key) {
            return Err(ToolkitError::config(format!(
                "line {n}: key `{key}` repeated in [{}]",
                block.section
            )));
        }
        block.entries.push(Entry {
            key,
            value: value.trim(),
            line: n,
        });
    }
    Ok(blocks)
}

fn parse<T: FromStr>(section: &str, e: &Entry) -> Result<T> {
    e.value.parse().map_err(|_| {
        ToolkitError::config(format!(
            "line {}: invalid value `{}` for {section}.{}",
            e.line, e.value, e.key
        ))
    })
}

fn unknown(section: &str, e: &Entry) -> ToolkitError {
    ToolkitError::config(format!("line {}: unknown key `{}` in [{section}]", e.line, e.key))
}

fn parse_pair(section: &str, e: &Entry) -> Result<(usize, usize)> {
    let bad = || ToolkitError::config(format!("line {}: expected `HxW` for {section}.{}", e.line, e.key));
    let (a, b) = e.value.split_once('x').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn parse_list(section: &str, e: &Entry) -> Result<Vec<f64>> {
    e.value
        .split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| {
                ToolkitError::config(format!(
                    "line {}: invalid number `{}` in {section}.{}",
                    e.line,
                    s.trim(),
                    e.key
                ))
            })
        })
        .collect()
}

fn apply_scene(c: &mut SceneConfig, b: &Block) -> Result<()> {
    for e in &b.entries {
        let s = "scene";
        match e.key {
            "n_channels" => c.n_channels = parse(s, e)?,
            "n_time" => c.n_time = parse(s, e)?,
            "channel_spacing" => c.channel_spacing = parse(s, e)?,
            "sample_rate" => c.sample_rate = parse(s, e)?,
            "noise_sigma" => c.noise_sigma = parse(s, e)?,
            "outlier_rate" => c.outlier_rate = parse(s, e)?,
            "outlier_amp" => c.outlier_amp = parse(s, e)?,
            "seed" => c.seed = parse(s, e)?,
            "kernel_form" => {
                c.kernel_form = match e.value {
                    "point" => KernelForm::PointLoad,
                    "four_wheel" => KernelForm::FourWheel,
                    _ => {
                        return Err(ToolkitError::config(format!(
                            "line {}: kernel_form must be point or four_wheel",
                            e.line
                        )))
                    }
                }
            }
            "kernel_half_width" => c.kernel_half_width = parse(s, e)?,
            "v_max" => c.v_max = parse(s, e)?,
            "shear_modulus" => c.physics.shear_modulus = parse(s, e)?,
            "poisson" => c.physics.poisson = parse(s, e)?,
            "depth" => c.physics.depth = parse(s, e)?,
            "gauge_length" => c.physics.gauge_length = parse(s, e)?,
            _ => return Err(unknown(s, e)),
        }
    }
    Ok(())
}

fn parse_vehicle(b: &Block) -> Result<VehicleSpec> {
    let s = "vehicle";
    let mut v = VehicleSpec::constant(0.0, 0, 0.0);
    let mut geometry = VehicleGeometry::default();
    let mut speed_set = false;
    for e in &b.entries {
        match e.key {
            "entry_time" => v.entry_time = parse(s, e)?,
            "entry_channel" => v.entry_channel = parse(s, e)?,
            "lateral_offset" => v.lateral_offset = parse(s, e)?,
            "axle_length" => geometry.axle_length = parse(s, e)?,
            "wheelbase" => geometry.wheelbase = parse(s, e)?,
            "wheel_weights" => {
                let w = parse_list(s, e)?;
                geometry.wheel_weights = w
                    .try_into()
                    .map_err(|_| ToolkitError::config(format!("line {}: wheel_weights needs four values", e.line)))?;
            }
            "speed" | "speed_knots" => {
                if speed_set {
                    return Err(ToolkitError::config(format!("line {}: speed given twice", e.line)));
                }
                speed_set = true;
                v.speed = if e.key == "speed" {
                    SpeedProfile::constant(parse(s, e)?)
                } else {
                    let knots = e
                        .value
                        .split(',')
                        .map(|kv| {
                            let (t, sp) = kv.split_once(':')?;
                            Some((t.trim().parse().ok()?, sp.trim().parse().ok()?))
                        })
                        .collect::<Option<Vec<(f64, f64)>>>()
                        .ok_or_else(|| {
                            ToolkitError::config(format!("line {}: speed_knots must be `t:v, ...`", e.line))
                        })?;
                    SpeedProfile::from_knots(knots)
                        .map_err(|err| ToolkitError::config(format!("line {}: {err}", e.line)))?
                };
            }
            _ => return Err(unknown(s, e)),
        }
    }
    if !speed_set {
        return Err(ToolkitError::config("a [vehicle] block lacks `speed` or `speed_knots`"));
    }
    v.geometry = geometry;
    Ok(v)
}

fn parse_traffic(b: &Block) -> Result<Traffic> {
    let mut t = Traffic { count: 0, v_min: 5.0 };
    for e in &b.entries {
        match e.key {
            "count" => t.count = parse("traffic", e)?,
            "v_min" => t.v_min = parse("traffic", e)?,
            _ => return Err(unknown("traffic", e)),
        }
    }
    Ok(t)
}

fn apply_lasso(c: &mut LassoConfig, b: &Block) -> Result<()> {
    for e in &b.entries {
        match e.key {
            "lambda" => c.lambda = parse("lasso", e)?,
            "max_iter" => c.max_iter = parse("lasso", e)?,
            "tol" => c.tol = parse("lasso", e)?,
            "accelerated" => c.accelerated = parse("lasso", e)?,
            _ => return Err(unknown("lasso", e)),
        }
    }
    Ok(())
}

fn apply_net(c: &mut NetConfig, b: &Block) -> Result<()> {
    let s = "net";
    for e in &b.entries {
        match e.key {
            "input_channels" => c.input_channels = parse(s, e)?,
            "input_time" => c.input_time = parse(s, e)?,
            "base_channels" => c.base_channels = parse(s, e)?,
            "depth" => c.depth = parse(s, e)?,
            "conv_kernel" => c.conv_kernel = parse_pair(s, e)?,
            "pool_kernel" => c.pool_kernel = parse_pair(s, e)?,
            "lstm_units" => c.lstm_units = parse(s, e)?,
            "dense_width" => c.dense_width = parse(s, e)?,
            "recurrence" => {
                c.recurrence = match e.value {
                    "channel" => RecurrenceAxis::Channel,
                    "time" => RecurrenceAxis::Time,
                    _ => {
                        return Err(ToolkitError::config(format!(
                            "line {}: recurrence must be channel or time",
                            e.line
                        )))
                    }
                }
            }
            _ => return Err(unknown(s, e)),
        }
    }
    Ok(())
}

fn apply_train(c: &mut TrainConfig, b: &Block) -> Result<()> {
    let s = "train";
    for e in &b.entries {
        match e.key {
            "learning_rate" => c.learning_rate = parse(s, e)?,
            "batch_size" => c.batch_size = parse(s, e)?,
            "epochs" => c.epochs = parse(s, e)?,
            "lambda_l1" => c.lambda_l1 = parse(s, e)?,
            "noise_variance" => c.noise_variance = parse(s, e)?,
            "validation_fraction" => c.validation_fraction = parse(s, e)?,
            "seed" => c.seed = parse(s, e)?,
            _ => return Err(unknown(s, e)),
        }
    }
    Ok(())
}

fn apply_tracker(c: &mut TrackerConfig, b: &Block) -> Result<()> {
    let s = "tracker";
    for e in &b.entries {
        match e.key {
            "v_min_init" => c.v_min_init = parse(s, e)?,
            "v_max_init" => c.v_max_init = parse(s, e)?,
            "confidence_cof" => c.confidence_cof = parse(s, e)?,
            "fit_window" => c.fit_window = parse(s, e)?,
            "poly_degree" => c.poly_degree = parse(s, e)?,
            "peak_threshold_k" => c.peak_threshold_k = parse(s, e)?,
            "peak_min_separation" => c.peak_min_separation = parse(s, e)?,
            "initial_steps" => c.initial_steps = parse(s, e)?,
            "direction" => {
                c.direction = match e.value {
                    "forward" => Direction::Forward,
                    "reverse" => Direction::Reverse,
                    _ => {
                        return Err(ToolkitError::config(format!(
                            "line {}: direction must be forward or reverse",
                            e.line
                        )))
                    }
                }
            }
            _ => return Err(unknown(s, e)),
        }
    }
    Ok(())
}

fn parse_ssim(b: &Block) -> Result<SsimConfig> {
    let s = "ssim";
    let range = match b.entries.iter().find(|e| e.key == "dynamic_range") {
        Some(e) => parse(s, e)?,
        None => 1.0,
    };
    let mut c = SsimConfig::for_range(range);
    for e in &b.entries {
        match e.key {
            "dynamic_range" => {}
            "window" => c.window = parse(s, e)?,
            "alpha" => c.alpha = parse(s, e)?,
            "beta" => c.beta = parse(s, e)?,
            "gamma" => c.gamma = parse(s, e)?,
            "c1" => c.c1 = parse(s, e)?,
            "c2" => c.c2 = parse(s, e)?,
            "c3" => c.c3 = parse(s, e)?,
            _ => return Err(unknown(s, e)),
        }
    }
    Ok(c)
}

impl PipelineConfig {
    /// Parses and validates a configuration text. Sections may appear in any
    /// order; unset network sizes follow the scene dimensions.
    pub fn parse(text: &str) -> Result<Self> {
        let blocks = split_blocks(text)?;
        let mut c = PipelineConfig::default();
        let find = |name: &str| blocks.iter().find(|b| b.section == name);
        if let Some(b) = find("scene") {
            apply_scene(&mut c.scene, b)?;
        }
        c.net = net_for_scene(&c.scene);
        for b in &blocks {
            match b.section {
                "scene" => {}
                "vehicle" => c.vehicles.push(parse_vehicle(b)?),
                "traffic" => c.traffic = Some(parse_traffic(b)?),
                "dataset" => {
                    for e in &b.entries {
                        match e.key {
                            "size" => c.dataset_size = parse("dataset", e)?,
                            _ => return Err(unknown("dataset", e)),
                        }
                    }
                }
                "lasso" => apply_lasso(&mut c.lasso, b)?,
                "net" => apply_net(&mut c.net, b)?,
                "train" => apply_train(&mut c.train, b)?,
                "tracker" => apply_tracker(&mut c.tracker, b)?,
                "ssim" => c.ssim = parse_ssim(b)?,
                "eval" => {
                    for e in &b.entries {
                        match e.key {
                            "peak_v" => c.peak_v = parse("eval", e)?,
                            _ => return Err(unknown("eval", e)),
                        }
                    }
                }
                other => unreachable!("section [{other}] passed the name check"),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate().map_err(as_config)?;
        self.lasso.validate().map_err(as_config)?;
        self.net.validate().map_err(as_config)?;
        self.train.validate().map_err(as_config)?;
        self.tracker.validate().map_err(as_config)?;
        self.ssim.validate().map_err(as_config)?;
        if let Some(t) = self.traffic {
            if !(t.v_min > 0.0 && t.v_min <= self.scene.v_max) {
                return Err(ToolkitError::config(format!(
                    "traffic.v_min must lie in (0, {}]",
                    self.scene.v_max
                )));
            }
        }
        if !(self.peak_v > 0.0 && self.peak_v.is_finite()) {
            return Err(ToolkitError::config("eval.peak_v must be > 0"));
        }
        Ok(())
    }

    /// The fully resolved configuration in the same format; parsing it
    /// gives back an equal value.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let s = &self.scene;
        let form = match s.kernel_form {
            KernelForm::PointLoad => "point",
            KernelForm::FourWheel => "four_wheel",
        };
        let _ = writeln!(o, "[scene]");
        let _ = writeln!(o, "n_channels = {}\nn_time = {}", s.n_channels, s.n_time);
        let _ = writeln!(
            o,
            "channel_spacing = {}\nsample_rate = {}",
            s.channel_spacing, s.sample_rate
        );
        let _ = writeln!(
            o,
            "noise_sigma = {}\noutlier_rate = {}\noutlier_amp = {}",
            s.noise_sigma, s.outlier_rate, s.outlier_amp
        );
        let _ = writeln!(
            o,
            "seed = {}\nkernel_form = {form}\nkernel_half_width = {}\nv_max = {}",
            s.seed, s.kernel_half_width, s.v_max
        );
        let p = &s.physics;
        let _ = writeln!(
            o,
            "shear_modulus = {}\npoisson = {}\ndepth = {}\ngauge_length = {}",
            p.shear_modulus, p.poisson, p.depth, p.gauge_length
        );
        for v in &self.vehicles {
            let _ = writeln!(o, "\n[vehicle]");
            let _ = writeln!(
                o,
                "entry_time = {}\nentry_channel = {}\nlateral_offset = {}",
                v.entry_time, v.entry_channel, v.lateral_offset
            );
            let knots = v.speed.knots();
            if knots.len() == 1 && knots[0].0 == 0.0 {
                let _ = writeln!(o, "speed = {}", knots[0].1);
            } else {
                let list: Vec<String> = knots.iter().map(|(t, sp)| format!("{t}:{sp}")).collect();
                let _ = writeln!(o, "speed_knots = {}", list.join(", "));
            }
            let g = &v.geometry;
            let w: Vec<String> = g.wheel_weights.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(
                o,
                "axle_length = {}\nwheelbase = {}\nwheel_weights = {}",
                g.axle_length,
                g.wheelbase,
                w.join(", ")
            );
        }
        if let Some(t) = self.traffic {
            let _ = writeln!(o, "\n[traffic]\ncount = {}\nv_min = {}", t.count, t.v_min);
        }
        let _ = writeln!(o, "\n[dataset]\nsize = {}", self.dataset_size);
        let l = &self.lasso;
        let _ = writeln!(
            o,
            "\n[lasso]\nlambda = {}\nmax_iter = {}\ntol = {}\naccelerated = {}",
            l.lambda, l.max_iter, l.tol, l.accelerated
        );
        let n = &self.net;
        let axis = match n.recurrence {
            RecurrenceAxis::Channel => "channel",
            RecurrenceAxis::Time => "time",
        };
        let _ = writeln!(
            o,
            "\n[net]\ninput_channels = {}\ninput_time = {}\nbase_channels = {}\ndepth = {}",
            n.input_channels, n.input_time, n.base_channels, n.depth
        );
        let _ = writeln!(
            o,
            "conv_kernel = {}x{}\npool_kernel = {}x{}",
            n.conv_kernel.0, n.conv_kernel.1, n.pool_kernel.0, n.pool_kernel.1
        );
        let _ = writeln!(
            o,
            "lstm_units = {}\ndense_width = {}\nrecurrence = {axis}",
            n.lstm_units, n.dense_width
        );
        let t = &self.train;
        let _ = writeln!(
            o,
            "\n[train]\nlearning_rate = {}\nbatch_size = {}\nepochs = {}\nlambda_l1 = {}",
            t.learning_rate, t.batch_size, t.epochs, t.lambda_l1
        );
        let _ = writeln!(
            o,
            "noise_variance = {}\nvalidation_fraction = {}\nseed = {}",
            t.noise_variance, t.validation_fraction, t.seed
        );
        let k = &self.tracker;
        let dir = match k.direction {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        };
        let _ = writeln!(
            o,
            "\n[tracker]\nv_min_init = {}\nv_max_init = {}\nconfidence_cof = {}",
            k.v_min_init, k.v_max_init, k.confidence_cof
        );
        let _ = writeln!(
            o,
            "fit_window = {}\npoly_degree = {}\npeak_threshold_k = {}",
            k.fit_window, k.poly_degree, k.peak_threshold_k
        );
        let _ = writeln!(
            o,
            "peak_min_separation = {}\ninitial_steps = {}\ndirection = {dir}",
            k.peak_min_separation, k.initial_steps
        );
        let m = &self.ssim;
        let _ = writeln!(
            o,
            "\n[ssim]\ndynamic_range = {}\nwindow = {}\nalpha = {}\nbeta = {}\ngamma = {}",
            m.dynamic_range, m.window, m.alpha, m.beta, m.gamma
        );
        let _ = writeln!(o, "c1 = {}\nc2 = {}\nc3 = {}", m.c1, m.c2, m.c3);
        let _ = writeln!(o, "\n[eval]\npeak_v = {}", self.peak_v);
        o
    }
}
