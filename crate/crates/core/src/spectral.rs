//! Discrete Fourier transforms and frequency-domain convolution.
//!
//! Bin `j` of an `n`-point spectrum sits at angular frequency `2*pi*j/n`.
//! Power-of-two lengths go through an iterative radix-2 FFT; every other
//! length falls back to the direct O(n^2) sum. Convolutions are always
//! linear (zero padded), never circular, so a vehicle near one end of the
//! fiber does not wrap around to the other.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use num_traits::{Float, Zero};

use crate::{Error, ImpulseKernel, Result, Waterfall};

/// The transform of a real signal zero padded to `bins.len()` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Angular frequency of bin `j`.
    pub fn omega(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.bins.len() as f64
    }

    /// Inverse transform; the imaginary parts are discarded.
    pub fn inverse_real(&self) -> Vec<f64> {
        let mut buf = self.bins.clone();
        inverse_in_place(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }
}

/// `n`-point transform of `signal`, zero padded.
pub fn dft(signal: &[f64], n: usize) -> Result<Spectrum> {
    if n < signal.len() {
        return Err(Error::invalid(format!(
            "transform length {n} is shorter than the signal ({})",
            signal.len()
        )));
    }
    let mut buf = vec![Complex64::zero(); n];
    for (b, &x) in buf.iter_mut().zip(signal) {
        b.re = x;
    }
    forward_in_place(&mut buf);
    Ok(Spectrum { bins: buf })
}

/// Inverse of [`dft`], returning complex samples.
pub fn idft(spectrum: &Spectrum) -> Vec<Complex64> {
    let mut buf = spectrum.bins.clone();
    inverse_in_place(&mut buf);
    buf
}

/// Direct evaluation of the transform sum. Reference path for any length.
pub fn dft_direct(input: &[Complex64], sign: f64) -> Vec<Complex64> {
    let n = input.len();
    (0..n)
        .map(|j| {
            input.iter().enumerate().fold(Complex64::zero(), |acc, (m, &x)| {
                // reduce j*m mod n first so the angle stays small and exact
                let angle = sign * 2.0 * PI * ((j * m) % n) as f64 / n as f64;
                acc + x * Complex64::new(libm::cos(angle), libm::sin(angle))
            })
        })
        .collect()
}

pub(crate) fn forward_in_place(buf: &mut [Complex64]) {
    transform(buf, -1.0);
}

pub(crate) fn inverse_in_place(buf: &mut [Complex64]) {
    transform(buf, 1.0);
    let scale = 1.0 / buf.len() as f64;
    for b in buf.iter_mut() {
        *b *= scale;
    }
}

fn transform(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, sign);
    } else {
        let out = dft_direct(buf, sign);
        buf.copy_from_slice(&out);
    }
}

fn radix2(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let step = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        // twiddles are computed directly rather than by repeated
        // multiplication, which keeps round-off flat across the butterfly
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| {
                let a = step * k as f64;
                Complex64::new(libm::cos(a), libm::sin(a))
            })
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let u = buf[start + k];
                let v = buf[start + k + half] * twiddles[k];
                buf[start + k] = u + v;
                buf[start + k + half] = u - v;
            }
        }
        len <<= 1;
    }
}

/// Full linear convolution (`x.len() + k.len() - 1` samples) computed as the
/// inverse transform of the product of zero-padded transforms.
pub fn freq_convolve(x: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() || k.is_empty() {
        return Err(Error::Empty("convolution operand"));
    }
    let out_len = x.len() + k.len() - 1;
    let n = out_len.next_power_of_two();
    let xs = dft(x, n)?;
    let ks = dft(k, n)?;
    let product = Spectrum {
        bins: xs.bins.iter().zip(&ks.bins).map(|(a, b)| a * b).collect(),
    };
    let mut full = product.inverse_real();
    full.truncate(out_len);
    Ok(full)
}

/// 'Same'-size convolution of a spatial profile with an odd-length kernel:
/// `out[i] = sum_j x[j] * k[i - j + h]` with `h` the kernel half width.
pub fn convolve_same(profile: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    if kernel.len() % 2 == 0 {
        return Err(Error::invalid("'same' convolution needs an odd kernel"));
    }
    if kernel.len() > profile.len() {
        return Err(Error::KernelTooLong {
            taps: kernel.len(),
            len: profile.len(),
        });
    }
    let h = kernel.len() / 2;
    let full = freq_convolve(profile, kernel)?;
    Ok(full[h..h + profile.len()].to_vec())
}

/// Convolves every time column of the waterfall with the kernel along the
/// channel axis ('same' size, zero padding beyond the fiber ends).
pub fn convolve_columns(w: &Waterfall, kern: &ImpulseKernel) -> Result<Waterfall> {
    let op = ColumnOperator::new(kern, w.n_channels())?;
    let mut out = w.zeros_like();
    out.normalized = false;
    let mut col = vec![0.0; w.n_channels()];
    let mut res = vec![0.0; w.n_channels()];
    let mut scratch = op.scratch();
    for t in 0..w.n_time() {
        for (c, v) in col.iter_mut().enumerate() {
            *v = w.get(c, t);
        }
        op.apply(&col, &mut res, &mut scratch);
        out.set_column(t, &res);
    }
    Ok(out)
}

/// Precomputed spectral form of the 'same' convolution operator for one
/// profile length, with its adjoint. Shared by the LASSO solver.
#[derive(Debug, Clone)]
pub struct ColumnOperator {
    len: usize,
    half_width: usize,
    spectrum: Vec<Complex64>,
}

impl ColumnOperator {
    pub fn new(kern: &ImpulseKernel, len: usize) -> Result<Self> {
        if kern.len() > len {
            return Err(Error::KernelTooLong { taps: kern.len(), len });
        }
        let n = (len + kern.len() - 1).next_power_of_two();
        let spectrum = dft(kern.taps(), n)?.bins;
        Ok(ColumnOperator {
            len,
            half_width: kern.half_width(),
            spectrum,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn scratch(&self) -> Vec<Complex64> {
        vec![Complex64::zero(); self.spectrum.len()]
    }

    /// Largest squared magnitude of the kernel spectrum over the operator's
    /// transform grid.
    pub fn max_gain_sq(&self) -> f64 {
        self.spectrum.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max)
    }

    /// `out = K x` ('same' convolution).
    pub fn apply(&self, x: &[f64], out: &mut [f64], scratch: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.len);
        for s in scratch.iter_mut() {
            *s = Complex64::zero();
        }
        for (s, &v) in scratch.iter_mut().zip(x) {
            s.re = v;
        }
        forward_in_place(scratch);
        for (s, k) in scratch.iter_mut().zip(&self.spectrum) {
            *s *= k;
        }
        inverse_in_place(scratch);
        for (o, s) in out.iter_mut().zip(&scratch[self.half_width..]) {
            *o = s.re;
        }
    }

    /// `out = K^T r`, the adjoint of [`apply`](Self::apply): a correlation
    /// with the kernel.
    pub fn adjoint(&self, r: &[f64], out: &mut [f64], scratch: &mut [Complex64]) {
        debug_assert_eq!(r.len(), self.len);
        for s in scratch.iter_mut() {
            *s = Complex64::zero();
        }
        for (s, &v) in scratch[self.half_width..].iter_mut().zip(r) {
            s.re = v;
        }
        forward_in_place(scratch);
        for (s, k) in scratch.iter_mut().zip(&self.spectrum) {
            *s *= k.conj();
        }
        inverse_in_place(scratch);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o = s.re;
        }
    }
}

/// Sampled magnitude response `max |K(w)|^2` on a fine grid, used as the
/// spectral bound of the convolution operator.
pub fn peak_power_gain(kern: &ImpulseKernel) -> f64 {
    let n = (16 * kern.len()).next_power_of_two().max(1024);
    dft(kern.taps(), n)
        .map(|s| s.bins.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max))
        .unwrap_or(0.0)
}

/// Direct 'same' convolution along the channel axis for a row-major
/// `channels x time` buffer, generic over the float type. This is the
/// time-domain route of [`convolve_columns`].
pub fn convolve_columns_direct<T: Float>(data: &[T], channels: usize, time: usize, taps: &[T]) -> Vec<T> {
    let h = taps.len() / 2;
    let mut out = vec![T::zero(); data.len()];
    for i in 0..channels {
        let lo = (i + h + 1).saturating_sub(taps.len());
        let hi = (i + h).min(channels - 1);
        let row_out = &mut out[i * time..(i + 1) * time];
        for j in lo..=hi {
            let k = taps[i + h - j];
            if k == T::zero() {
                continue;
            }
            let row_in = &data[j * time..(j + 1) * time];
            for (o, &x) in row_out.iter_mut().zip(row_in) {
                *o = *o + k * x;
            }
        }
    }
    out
}

/// Adjoint of [`convolve_columns_direct`].
pub fn correlate_columns_direct<T: Float>(data: &[T], channels: usize, time: usize, taps: &[T]) -> Vec<T> {
    let reversed: Vec<T> = taps.iter().rev().copied().collect();
    convolve_columns_direct(data, channels, time, &reversed)
}
