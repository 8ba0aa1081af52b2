use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A DAS waterfall: one row per sensor channel, one column per time sample.
///
/// Values are stored row-major, so `values[c * n_time + t]` is channel `c`
/// at time sample `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waterfall {
    n_channels: usize,
    n_time: usize,
    values: Vec<f64>,
    /// Distance between neighbouring channels in meters.
    pub channel_spacing: f64,
    /// Temporal sampling rate in Hz.
    pub sample_rate: f64,
    /// Set once the values have been mapped onto `[0, 1]`.
    pub normalized: bool,
}

impl Waterfall {
    pub fn zeros(n_channels: usize, n_time: usize, channel_spacing: f64, sample_rate: f64) -> Self {
        Waterfall {
            n_channels,
            n_time,
            values: vec![0.0; n_channels * n_time],
            channel_spacing,
            sample_rate,
            normalized: false,
        }
    }

    pub fn from_values(
        n_channels: usize,
        n_time: usize,
        values: Vec<f64>,
        channel_spacing: f64,
        sample_rate: f64,
    ) -> Result<Self> {
        if values.len() != n_channels * n_time {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values ({n_channels} x {n_time})", n_channels * n_time),
                found: format!("{} values", values.len()),
            });
        }
        Ok(Waterfall {
            n_channels,
            n_time,
            values,
            channel_spacing,
            sample_rate,
            normalized: false,
        })
    }

    /// An empty waterfall with the same grid and metadata as `self`.
    pub fn zeros_like(&self) -> Self {
        let mut w = Waterfall::zeros(self.n_channels, self.n_time, self.channel_spacing, self.sample_rate);
        w.normalized = self.normalized;
        w
    }

    #[inline]
    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    #[inline]
    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_channels, self.n_time)
    }

    #[inline]
    pub fn get(&self, channel: usize, time: usize) -> f64 {
        self.values[channel * self.n_time + time]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, time: usize, value: f64) {
        self.values[channel * self.n_time + time] = value;
    }

    #[inline]
    pub fn add(&mut self, channel: usize, time: usize, value: f64) {
        self.values[channel * self.n_time + time] += value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Time series recorded by one channel.
    pub fn row(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.n_time..(channel + 1) * self.n_time]
    }

    /// Spatial profile at one time sample.
    pub fn column(&self, time: usize) -> Vec<f64> {
        (0..self.n_channels).map(|c| self.get(c, time)).collect()
    }

    pub fn set_column(&mut self, time: usize, profile: &[f64]) {
        debug_assert_eq!(profile.len(), self.n_channels);
        for (c, &v) in profile.iter().enumerate() {
            self.set(c, time, v);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Smallest and largest sample, or `None` for an empty grid.
    pub fn min_max(&self) -> Option<(f64, f64)> {
        let mut it = self.values.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    pub(crate) fn check_same_shape(&self, other: &Waterfall) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} x {}", self.n_channels, self.n_time),
                found: format!("{} x {}", other.n_channels, other.n_time),
            });
        }
        Ok(())
    }
}
