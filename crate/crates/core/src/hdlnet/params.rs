use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NetConfig, Tensor};
use crate::{Error, Result};

/// Name, shape and initialization rule of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// `(fan_in, fan_out)` for weights; `None` for zero-initialized biases.
    pub fans: Option<(usize, usize)>,
}

fn weight(name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> ParamSpec {
    ParamSpec {
        name,
        shape,
        fans: Some((fan_in, fan_out)),
    }
}

fn bias(name: String, len: usize) -> ParamSpec {
    ParamSpec {
        name,
        shape: alloc::vec![len],
        fans: None,
    }
}

/// Parameter tensors of a configuration, in storage order.
pub fn param_specs(cfg: &NetConfig) -> Vec<ParamSpec> {
    let (kh, kw) = cfg.conv_kernel;
    let (ph, pw) = cfg.pool_kernel;
    let mut specs = Vec::new();
    let mut conv = |prefix: String, cin: usize, cout: usize| {
        specs.push(weight(
            format!("{prefix}.weight"),
            alloc::vec![cout, cin, kh, kw],
            cin * kh * kw,
            cout * kh * kw,
        ));
        specs.push(bias(format!("{prefix}.bias"), cout));
    };
    for i in 0..cfg.depth {
        let cin = if i == 0 { 1 } else { cfg.level_channels(i - 1) };
        conv(format!("enc{i}.conv"), cin, cfg.level_channels(i));
    }
    let below = if cfg.depth == 0 {
        1
    } else {
        cfg.level_channels(cfg.depth - 1)
    };
    conv(String::from("bottleneck.conv"), below, cfg.level_channels(cfg.depth));
    for i in (0..cfg.depth).rev() {
        let c = cfg.level_channels(i);
        let up = cfg.level_channels(i + 1);
        specs.push(weight(
            format!("dec{i}.up.weight"),
            alloc::vec![up, c, ph, pw],
            up * ph * pw,
            c * ph * pw,
        ));
        specs.push(bias(format!("dec{i}.up.bias"), c));
        specs.push(weight(
            format!("dec{i}.conv.weight"),
            alloc::vec![c, 2 * c, kh, kw],
            2 * c * kh * kw,
            c * kh * kw,
        ));
        specs.push(bias(format!("dec{i}.conv.bias"), c));
    }
    let last = cfg.level_channels(0);
    specs.push(weight(
        String::from("out.conv.weight"),
        alloc::vec![1, last, kh, kw],
        last * kh * kw,
        kh * kw,
    ));
    specs.push(bias(String::from("out.conv.bias"), 1));
    let (f, h) = (cfg.feature_width(), cfg.lstm_units);
    specs.push(weight(String::from("lstm.w_ih"), alloc::vec![4 * h, f], f, 4 * h));
    specs.push(weight(String::from("lstm.w_hh"), alloc::vec![4 * h, h], h, 4 * h));
    specs.push(bias(String::from("lstm.bias"), 4 * h));
    specs.push(weight(
        String::from("dense.weight"),
        alloc::vec![cfg.dense_width, h],
        h,
        cfg.dense_width,
    ));
    specs.push(bias(String::from("dense.bias"), cfg.dense_width));
    specs
}

/// Named parameter tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: NetConfig,
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Float> ModelParams<T> {
    /// All tensors zero.
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let entries = param_specs(config)
            .into_iter()
            .map(|s| (s.name, Tensor::zeros(&s.shape)))
            .collect();
        Ok(ModelParams {
            config: *config,
            entries,
        })
    }

    /// Glorot-uniform weights, zero biases and a forget-gate bias of one.
    /// Values are drawn in double precision so every float type starts from
    /// the same point.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.lstm_units;
        let mut entries = Vec::new();
        for spec in param_specs(config) {
            let n: usize = spec.shape.iter().product();
            let data: Vec<f64> = match spec.fans {
                Some((fi, fo)) => {
                    let limit = libm::sqrt(6.0 / (fi + fo) as f64);
                    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
                }
                None if spec.name == "lstm.bias" => (0..n)
                    .map(|i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 })
                    .collect(),
                None => alloc::vec![0.0; n],
            };
            entries.push((spec.name, Tensor::from_vec(&spec.shape, data)?.cast()));
        }
        Ok(ModelParams {
            config: *config,
            entries,
        })
    }

    /// Builds parameters from named tensors, checking names and shapes.
    pub fn from_entries(config: &NetConfig, entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(config);
        if specs.len() != entries.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} tensors", specs.len()),
                found: format!("{} tensors", entries.len()),
            });
        }
        for (spec, (name, t)) in specs.iter().zip(&entries) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} {:?}", spec.name, spec.shape),
                    found: format!("{name} {:?}", t.shape()),
                });
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(name.clone()));
            }
        }
        Ok(ModelParams {
            config: *config,
            entries,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn entries(&self) -> &[(String, Tensor<T>)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(String, Tensor<T>)] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub(crate) fn slice(&self, name: &str) -> &[T] {
        self.get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .data()
    }

    pub(crate) fn slice_mut(&mut self, name: &str) -> &mut [T] {
        self.get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .data_mut()
    }

    /// Adds `g` into the named tensor.
    pub(crate) fn accumulate(&mut self, name: &str, g: &[T]) {
        for (a, &b) in self.slice_mut(name).iter_mut().zip(g) {
            *a = *a + b;
        }
    }

    /// Total number of scalars.
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config,
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn cast<U: Float>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// Multiplies every value by `s`.
    pub fn scale(&mut self, s: T) {
        for (_, t) in &mut self.entries {
            for v in t.data_mut() {
                *v = *v * s;
            }
        }
    }

    /// Adds another parameter set of the same layout.
    pub fn add_assign(&mut self, other: &ModelParams<T>) {
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = *x + y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }
}
