use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::{backward, forward_cached};
use super::{Adam, AdamConfig, ModelParams, NetConfig};
use crate::scenegen::normalize_with_map;
use crate::spectral::{convolve_columns_direct, correlate_columns_direct};
use crate::{Error, ImpulseKernel, Result, Waterfall};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the L1 penalty on the network output.
    pub lambda_l1: f64,
    /// Noise variance of the likelihood model. It only scales the loss by a
    /// constant, so it is recorded but unused.
    pub noise_variance: f64,
    /// Share of the dataset held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            batch_size: 128,
            epochs: 200,
            lambda_l1: 1e-3,
            noise_variance: 0.01,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return Err(Error::invalid("lambda_l1 must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Mean loss over the training and validation sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub train: f64,
    /// `None` without a validation set.
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Losses of the initial parameters.
    pub initial: EpochLosses,
    /// One entry per epoch. The training loss is the mean of the batch losses
    /// seen during the epoch; validation uses the parameters at its end.
    pub epochs: Vec<EpochLosses>,
}

fn taps_as<T: Float>(kern: &ImpulseKernel) -> Vec<T> {
    kern.taps().iter().map(|&v| T::from(v).unwrap_or_else(T::nan)).collect()
}

fn lambda_as<T: Float>(lambda: f64) -> T {
    T::from(lambda).unwrap_or_else(T::nan)
}

/// Loss of one sample and its gradient with respect to the network output.
fn loss_and_output_grad<T: Float>(out: &[T], y: &[T], cfg: &NetConfig, taps: &[T], lambda: T) -> (f64, Vec<T>) {
    let (nd, nt) = (cfg.input_channels, cfg.input_time);
    let mut resid = convolve_columns_direct(out, nd, nt, taps);
    let mut fit = 0.0f64;
    for (r, &yi) in resid.iter_mut().zip(y) {
        *r = *r - yi;
        let d = r.to_f64().unwrap_or(f64::NAN);
        fit += d * d;
    }
    let l1: f64 = out.iter().map(|v| v.abs().to_f64().unwrap_or(f64::NAN)).sum();
    let two = T::one() + T::one();
    let mut g = correlate_columns_direct(&resid, nd, nt, taps);
    for (gi, &x) in g.iter_mut().zip(out) {
        let sign = if x > T::zero() {
            T::one()
        } else if x < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        *gi = two * *gi + lambda * sign;
    }
    (fit + lambda.to_f64().unwrap_or(f64::NAN) * l1, g)
}

/// `||K X - Y||^2 + lambda ||X||_1` for one input, with `X` the network output.
pub fn sample_loss<T: Float>(p: &ModelParams<T>, kern: &ImpulseKernel, y: &[T], lambda: f64) -> Result<f64> {
    let cache = forward_cached(p, y)?;
    Ok(loss_and_output_grad(cache.output(), y, p.config(), &taps_as(kern), lambda_as(lambda)).0)
}

/// Mean sample loss over a batch.
pub fn batch_loss<T: Float, S: AsRef<[T]>>(
    p: &ModelParams<T>,
    kern: &ImpulseKernel,
    batch: &[S],
    lambda: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut total = 0.0;
    for y in batch {
        total += sample_loss(p, kern, y.as_ref(), lambda)?;
    }
    Ok(total / batch.len() as f64)
}

/// Mean loss over a batch and its exact gradient. Samples are reduced in
/// batch order.
pub fn batch_gradients<T: Float, S: AsRef<[T]>>(
    p: &ModelParams<T>,
    kern: &ImpulseKernel,
    batch: &[S],
    lambda: f64,
) -> Result<(f64, ModelParams<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let taps = taps_as::<T>(kern);
    let lam = lambda_as::<T>(lambda);
    let mut total = 0.0;
    let mut grads = p.zeros_like();
    for y in batch {
        let y = y.as_ref();
        let cache = forward_cached(p, y)?;
        let (loss, gout) = loss_and_output_grad(cache.output(), y, p.config(), &taps, lam);
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        total += loss;
        grads.add_assign(&backward(p, &cache, &gout)?);
    }
    let n = batch.len();
    grads.scale(T::one() / T::from(n).unwrap_or_else(T::nan));
    Ok((total / n as f64, grads))
}

/// Seeded shuffle of `0..n` split into training and validation indices.
pub fn split_dataset(n: usize, validation_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut n_val = libm::round(n as f64 * validation_fraction) as usize;
    if n_val >= n {
        n_val = n.saturating_sub(1);
    }
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn to_inputs(dataset: &[Waterfall], cfg: &NetConfig) -> Result<Vec<Vec<f32>>> {
    if dataset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    dataset
        .iter()
        .enumerate()
        .map(|(i, w)| {
            if w.shape() != (cfg.input_channels, cfg.input_time) {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} x {}", cfg.input_channels, cfg.input_time),
                    found: format!("waterfall {i}: {} x {}", w.n_channels(), w.n_time()),
                });
            }
            if !w.values().iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("waterfall {i} is not normalized to [0, 1]")));
            }
            Ok(w.values().iter().map(|&v| v as f32).collect())
        })
        .collect()
}

fn mean_loss(
    p: &ModelParams<f32>,
    kern: &ImpulseKernel,
    data: &[Vec<f32>],
    idx: &[usize],
    lambda: f64,
) -> Result<Option<f64>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let batch: Vec<&[f32]> = idx.iter().map(|&i| data[i].as_slice()).collect();
    Ok(Some(batch_loss(p, kern, &batch, lambda)?))
}

/// Self-supervised training on normalized noisy waterfalls.
pub fn train(
    dataset: &[Waterfall],
    kern: &ImpulseKernel,
    net: &NetConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams<f32>, TrainHistory)> {
    let init = ModelParams::<f64>::init(net, cfg.seed)?.cast();
    train_with_callback(dataset, kern, init, cfg, |_, _| {})
}

/// Training from given parameters; `on_epoch` sees every epoch's losses.
pub fn train_with_callback(
    dataset: &[Waterfall],
    kern: &ImpulseKernel,
    mut params: ModelParams<f32>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &EpochLosses),
) -> Result<(ModelParams<f32>, TrainHistory)> {
    cfg.validate()?;
    let net = *params.config();
    let data = to_inputs(dataset, &net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut train_idx, val_idx) = split_dataset(data.len(), cfg.validation_fraction, &mut rng);
    let initial = EpochLosses {
        train: mean_loss(&params, kern, &data, &train_idx, cfg.lambda_l1)?.unwrap_or(f64::NAN),
        validation: mean_loss(&params, kern, &data, &val_idx, cfg.lambda_l1)?,
    };
    let mut adam = Adam::new(
        &params,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in train_idx.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&[f32]> = chunk.iter().map(|&i| data[i].as_slice()).collect();
            let (loss, grads) = batch_gradients(&params, kern, &batch, cfg.lambda_l1).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, batch {b}")),
                other => other,
            })?;
            adam.step(&mut params, &grads);
            if !params.is_finite() {
                return Err(Error::NonFinite(format!("parameters at epoch {epoch}, batch {b}")));
            }
            sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let losses = EpochLosses {
            train: sum / seen as f64,
            validation: mean_loss(&params, kern, &data, &val_idx, cfg.lambda_l1)?,
        };
        on_epoch(epoch, &losses);
        epochs.push(losses);
    }
    Ok((params, TrainHistory { initial, epochs }))
}

/// Denoises a raw waterfall: normalizes it, runs the network and maps the
/// reconstruction `K X` back to the input scale. Returns the source estimate
/// (input scale, no offset) and the reconstruction.
pub fn denoise(p: &ModelParams<f32>, kern: &ImpulseKernel, w: &Waterfall) -> Result<(Waterfall, Waterfall)> {
    let cfg = p.config();
    if w.shape() != (cfg.input_channels, cfg.input_time) {
        return Err(Error::DimensionMismatch {
            expected: format!("{} x {}", cfg.input_channels, cfg.input_time),
            found: format!("{} x {}", w.n_channels(), w.n_time()),
        });
    }
    if !w.is_finite() {
        return Err(Error::NonFinite("input waterfall".into()));
    }
    let (norm, map) = normalize_with_map(w);
    let y: Vec<f32> = norm.values().iter().map(|&v| v as f32).collect();
    let x = super::forward(p, &y)?;
    let rec = convolve_columns_direct(&x, cfg.input_channels, cfg.input_time, &taps_as::<f32>(kern));
    let scale = if map.scale == 0.0 { 0.0 } else { 1.0 / map.scale };
    let source: Vec<f64> = x.iter().map(|&v| v as f64 * scale).collect();
    let rec: Vec<f64> = rec.iter().map(|&v| map.invert(v as f64)).collect();
    let source = Waterfall::from_values(w.n_channels(), w.n_time(), source, w.channel_spacing, w.sample_rate)?;
    let rec = Waterfall::from_values(w.n_channels(), w.n_time(), rec, w.channel_spacing, w.sample_rate)?;
    Ok((source, rec))
}
