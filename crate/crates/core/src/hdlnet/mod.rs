//! Hybrid denoising network: a U-Net autoencoder followed by an LSTM head.
//!
//! The network maps a normalized `Nd x Nt` waterfall `Y` to a source estimate
//! `X` of the same shape. It is trained without clean targets by minimizing
//!
//! ```text
//! 1/Nb * sum_i ( ||K X_i - Y_i||^2 + lambda * ||X_i||_1 )
//! ```
//!
//! where `K` is the fixed fiber response applied along the channel axis.
//! All layers have hand-written forward and reverse passes and are generic
//! over the float type: training runs in `f32`, gradient checks in `f64`.

mod adam;
mod layers;
mod lstm;
mod net;
mod params;
mod tensor;
mod train;

pub use adam::{Adam, AdamConfig};
pub use net::{backward, forward, forward_cached, hdlnet_forward, lstm_forward, unet_forward, ForwardCache};
pub use params::{param_specs, ModelParams, ParamSpec};
pub use tensor::Tensor;
pub use train::{
    batch_gradients, batch_loss, denoise, sample_loss, split_dataset, train, train_with_callback, EpochLosses,
    TrainConfig, TrainHistory,
};

use alloc::format;

use crate::{Error, Result};

/// Sequence axis of the LSTM head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecurrenceAxis {
    /// One step per channel, each carrying a full time series.
    #[default]
    Channel,
    /// One step per time sample, each carrying a spatial profile.
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Channels `Nd` of the input waterfall.
    pub input_channels: usize,
    /// Time samples `Nt` of the input waterfall.
    pub input_time: usize,
    /// Feature maps at the first level; doubled at every level below.
    pub base_channels: usize,
    /// Number of pooling levels.
    pub depth: usize,
    /// `(channel, time)` size of every 'same' convolution.
    pub conv_kernel: (usize, usize),
    /// `(channel, time)` size of pooling and of the transposed convolutions.
    pub pool_kernel: (usize, usize),
    pub lstm_units: usize,
    /// Output width of the dense layer; equals the LSTM feature width.
    pub dense_width: usize,
    pub recurrence: RecurrenceAxis,
}

impl NetConfig {
    /// The full-size configuration: 360 x 1024 input, 8 base feature maps,
    /// three levels, 128 LSTM units and a 1024-wide dense layer.
    pub fn paper() -> Self {
        NetConfig {
            input_channels: 360,
            input_time: 1024,
            base_channels: 8,
            depth: 3,
            conv_kernel: (3, 5),
            pool_kernel: (2, 4),
            lstm_units: 128,
            dense_width: 1024,
            recurrence: RecurrenceAxis::Channel,
        }
    }

    /// A 16 x 32 network small enough for finite-difference checks.
    pub fn toy() -> Self {
        NetConfig {
            input_channels: 16,
            input_time: 32,
            base_channels: 2,
            depth: 2,
            conv_kernel: (3, 5),
            pool_kernel: (2, 4),
            lstm_units: 4,
            dense_width: 32,
            recurrence: RecurrenceAxis::Channel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.conv_kernel;
        let (ph, pw) = self.pool_kernel;
        if self.input_channels == 0 || self.input_time == 0 || self.base_channels == 0 || self.lstm_units == 0 {
            return Err(Error::invalid("network sizes must be >= 1"));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid("convolution kernel sides must be odd"));
        }
        if ph == 0 || pw == 0 {
            return Err(Error::invalid("pool kernel sides must be >= 1"));
        }
        let (fh, fw) = (ph.pow(self.depth as u32), pw.pow(self.depth as u32));
        if self.input_channels % fh != 0 || self.input_time % fw != 0 {
            return Err(Error::invalid(format!(
                "input {} x {} is not divisible by {fh} x {fw} for depth {}",
                self.input_channels, self.input_time, self.depth
            )));
        }
        if self.dense_width != self.feature_width() {
            return Err(Error::invalid(format!(
                "dense width {} must equal the LSTM feature width {}",
                self.dense_width,
                self.feature_width()
            )));
        }
        if self.base_channels.checked_shl(self.depth as u32).is_none() {
            return Err(Error::invalid("too many levels"));
        }
        Ok(())
    }

    /// Spatial size at pooling level `level`.
    pub fn level_size(&self, level: usize) -> (usize, usize) {
        let (ph, pw) = self.pool_kernel;
        (
            self.input_channels / ph.pow(level as u32),
            self.input_time / pw.pow(level as u32),
        )
    }

    /// Feature maps at level `level`; `depth` is the bottleneck.
    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// `(channels, rows, cols)` of the bottleneck activation.
    pub fn bottleneck_shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.level_size(self.depth);
        (self.level_channels(self.depth), h, w)
    }

    /// Length of one LSTM input vector.
    pub fn feature_width(&self) -> usize {
        match self.recurrence {
            RecurrenceAxis::Channel => self.input_time,
            RecurrenceAxis::Time => self.input_channels,
        }
    }

    /// Number of LSTM steps.
    pub fn sequence_len(&self) -> usize {
        match self.recurrence {
            RecurrenceAxis::Channel => self.input_channels,
            RecurrenceAxis::Time => self.input_time,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_time
    }
}

#[cfg(test)]
mod tests;
