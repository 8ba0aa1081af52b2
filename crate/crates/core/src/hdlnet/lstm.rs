//! LSTM over a sequence of feature vectors followed by a shared dense layer.
//!
//! Gate rows are stacked in the order input, forget, cell, output.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Lstm {
    pub steps: usize,
    pub features: usize,
    pub hidden: usize,
}

/// Activations kept for the reverse pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache<T> {
    /// Post-activation gates per step, `4H` each.
    gates: Vec<T>,
    /// Cell state per step.
    cells: Vec<T>,
    /// Hidden state per step.
    hidden: Vec<T>,
}

impl<T> Default for LstmCache<T> {
    fn default() -> Self {
        LstmCache {
            gates: Vec::new(),
            cells: Vec::new(),
            hidden: Vec::new(),
        }
    }
}

pub(crate) struct LstmGrads<T> {
    pub x: Vec<T>,
    pub w_ih: Vec<T>,
    pub w_hh: Vec<T>,
    pub bias: Vec<T>,
    pub dense_w: Vec<T>,
    pub dense_b: Vec<T>,
}

fn sigmoid<T: Float>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// `out += m * x` for a row-major `rows x cols` matrix.
#[inline]
fn gemv_acc<T: Float>(out: &mut [T], m: &[T], x: &[T], cols: usize) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        let mut s = T::zero();
        for (&a, &b) in row.iter().zip(x) {
            s = s + a * b;
        }
        *o = *o + s;
    }
}

/// `out += m^T * g`.
#[inline]
fn gemv_t_acc<T: Float>(out: &mut [T], m: &[T], g: &[T], cols: usize) {
    for (row, &gi) in m.chunks_exact(cols).zip(g) {
        if gi == T::zero() {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(row) {
            *o = *o + a * gi;
        }
    }
}

/// `m += g x^T`.
#[inline]
fn outer_acc<T: Float>(m: &mut [T], g: &[T], x: &[T], cols: usize) {
    for (row, &gi) in m.chunks_exact_mut(cols).zip(g) {
        if gi == T::zero() {
            continue;
        }
        for (o, &b) in row.iter_mut().zip(x) {
            *o = *o + gi * b;
        }
    }
}

impl Lstm {
    /// Runs the recurrence from zero state over `x` (`steps x features`) and
    /// maps every hidden state through the dense layer.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Float>(
        &self,
        x: &[T],
        w_ih: &[T],
        w_hh: &[T],
        bias: &[T],
        dense_w: &[T],
        dense_b: &[T],
    ) -> (Vec<T>, LstmCache<T>) {
        let (f, h) = (self.features, self.hidden);
        let mut cache = LstmCache {
            gates: vec![T::zero(); self.steps * 4 * h],
            cells: vec![T::zero(); self.steps * h],
            hidden: vec![T::zero(); self.steps * h],
        };
        let mut out = vec![T::zero(); self.steps * f];
        let mut h_prev = vec![T::zero(); h];
        let mut c_prev = vec![T::zero(); h];
        for t in 0..self.steps {
            let z = &mut cache.gates[t * 4 * h..(t + 1) * 4 * h];
            z.copy_from_slice(bias);
            gemv_acc(z, w_ih, &x[t * f..(t + 1) * f], f);
            gemv_acc(z, w_hh, &h_prev, h);
            for j in 0..h {
                let i = sigmoid(z[j]);
                let fg = sigmoid(z[h + j]);
                let g = z[2 * h + j].tanh();
                let o = sigmoid(z[3 * h + j]);
                z[j] = i;
                z[h + j] = fg;
                z[2 * h + j] = g;
                z[3 * h + j] = o;
                let c = fg * c_prev[j] + i * g;
                cache.cells[t * h + j] = c;
                cache.hidden[t * h + j] = o * c.tanh();
            }
            h_prev.copy_from_slice(&cache.hidden[t * h..(t + 1) * h]);
            c_prev.copy_from_slice(&cache.cells[t * h..(t + 1) * h]);
            let y = &mut out[t * f..(t + 1) * f];
            y.copy_from_slice(dense_b);
            gemv_acc(y, dense_w, &h_prev, h);
        }
        (out, cache)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Float>(
        &self,
        x: &[T],
        w_ih: &[T],
        w_hh: &[T],
        dense_w: &[T],
        cache: &LstmCache<T>,
        gout: &[T],
    ) -> LstmGrads<T> {
        let (f, h) = (self.features, self.hidden);
        let mut g = LstmGrads {
            x: vec![T::zero(); self.steps * f],
            w_ih: vec![T::zero(); 4 * h * f],
            w_hh: vec![T::zero(); 4 * h * h],
            bias: vec![T::zero(); 4 * h],
            dense_w: vec![T::zero(); f * h],
            dense_b: vec![T::zero(); f],
        };
        let zeros = vec![T::zero(); h];
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        let mut dh = vec![T::zero(); h];
        let mut dz = vec![T::zero(); 4 * h];
        for t in (0..self.steps).rev() {
            let gy = &gout[t * f..(t + 1) * f];
            let h_t = &cache.hidden[t * h..(t + 1) * h];
            for (b, &v) in g.dense_b.iter_mut().zip(gy) {
                *b = *b + v;
            }
            outer_acc(&mut g.dense_w, gy, h_t, h);
            dh.copy_from_slice(&dh_next);
            gemv_t_acc(&mut dh, dense_w, gy, h);

            let gates = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
            let c_prev = if t == 0 {
                &zeros[..]
            } else {
                &cache.cells[(t - 1) * h..t * h]
            };
            let h_prev = if t == 0 {
                &zeros[..]
            } else {
                &cache.hidden[(t - 1) * h..t * h]
            };
            for j in 0..h {
                let (i, fg, gg, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = cache.cells[t * h + j].tanh();
                let d_o = dh[j] * tc;
                let dc = dh[j] * o * (T::one() - tc * tc) + dc_next[j];
                let di = dc * gg;
                let dg = dc * i;
                let df = dc * c_prev[j];
                dc_next[j] = dc * fg;
                dz[j] = di * i * (T::one() - i);
                dz[h + j] = df * fg * (T::one() - fg);
                dz[2 * h + j] = dg * (T::one() - gg * gg);
                dz[3 * h + j] = d_o * o * (T::one() - o);
            }
            for (b, &v) in g.bias.iter_mut().zip(&dz) {
                *b = *b + v;
            }
            outer_acc(&mut g.w_ih, &dz, &x[t * f..(t + 1) * f], f);
            outer_acc(&mut g.w_hh, &dz, h_prev, h);
            gemv_t_acc(&mut g.x[t * f..(t + 1) * f], w_ih, &dz, f);
            dh_next.fill(T::zero());
            gemv_t_acc(&mut dh_next, w_hh, &dz, h);
        }
        g
    }
}
