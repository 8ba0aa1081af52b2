//! Feature-map layers on `[channels, rows, cols]` buffers.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

/// Rows `i` with `0 <= i + u - p < n`.
#[inline]
fn valid(n: usize, u: usize, p: usize) -> (usize, usize) {
    (p.saturating_sub(u), (n + p).saturating_sub(u).min(n))
}

/// Geometry of a stride-1 'same' convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl Conv {
    /// Visits every `(o, c, u, v)` tap together with the matching contiguous
    /// output and input row segments.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, usize)) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        for o in 0..self.cout {
            for c in 0..self.cin {
                for u in 0..self.kh {
                    let (i0, i1) = valid(self.h, u, ph);
                    for v in 0..self.kw {
                        let (j0, j1) = valid(self.w, v, pw);
                        if i0 >= i1 || j0 >= j1 {
                            continue;
                        }
                        // output (i, j0..j1) reads input (i + u - ph, j0 + v - pw ..)
                        f(o, c, u, v, i0, i1, j0, j1);
                    }
                }
            }
        }
    }

    #[inline]
    fn widx(&self, o: usize, c: usize, u: usize, v: usize) -> usize {
        ((o * self.cin + c) * self.kh + u) * self.kw + v
    }

    pub fn forward<T: Float>(&self, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
        let (h, w) = (self.h, self.w);
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let mut out = vec![T::zero(); self.cout * h * w];
        for o in 0..self.cout {
            out[o * h * w..(o + 1) * h * w].fill(bias[o]);
        }
        self.for_each_tap(|o, c, u, v, i0, i1, j0, j1| {
            let k = weight[self.widx(o, c, u, v)];
            if k == T::zero() {
                return;
            }
            for i in i0..i1 {
                let src = (c * h + i + u - ph) * w + j0 + v - pw;
                let dst = (o * h + i) * w;
                let (orow, irow) = (&mut out[dst + j0..dst + j1], &x[src..src + j1 - j0]);
                for (a, &b) in orow.iter_mut().zip(irow) {
                    *a = *a + k * b;
                }
            }
        });
        out
    }

    /// Returns `(d input, d weight, d bias)`.
    pub fn backward<T: Float>(&self, x: &[T], weight: &[T], gout: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (h, w) = (self.h, self.w);
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let mut gx = vec![T::zero(); self.cin * h * w];
        let mut gw = vec![T::zero(); weight.len()];
        let gb = (0..self.cout)
            .map(|o| gout[o * h * w..(o + 1) * h * w].iter().fold(T::zero(), |s, &g| s + g))
            .collect();
        self.for_each_tap(|o, c, u, v, i0, i1, j0, j1| {
            let idx = self.widx(o, c, u, v);
            let k = weight[idx];
            let mut acc = T::zero();
            for i in i0..i1 {
                let src = (c * h + i + u - ph) * w + j0 + v - pw;
                let dst = (o * h + i) * w;
                let grow = &gout[dst + j0..dst + j1];
                for (&g, &a) in grow.iter().zip(&x[src..src + j1 - j0]) {
                    acc = acc + g * a;
                }
                if k != T::zero() {
                    for (a, &g) in gx[src..src + j1 - j0].iter_mut().zip(grow) {
                        *a = *a + k * g;
                    }
                }
            }
            gw[idx] = acc;
        });
        (gx, gw, gb)
    }
}

/// Non-overlapping max pooling; returns the pooled map and the flat index
/// of every selected element. Ties go to the first element in row-major
/// order.
pub(crate) fn maxpool<T: Float>(x: &[T], c: usize, h: usize, w: usize, ph: usize, pw: usize) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / ph, w / pw);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best = (ch * h + oi * ph) * w + oj * pw;
                for u in 0..ph {
                    for v in 0..pw {
                        let idx = (ch * h + oi * ph + u) * w + oj * pw + v;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward<T: Float>(gout: &[T], arg: &[usize], in_len: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); in_len];
    for (&g, &i) in gout.iter().zip(arg) {
        gx[i] = gx[i] + g;
    }
    gx
}

/// Transposed convolution whose kernel equals its stride, so every input
/// element expands into its own `ph x pw` output block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct UpConv {
    pub cin: usize,
    pub cout: usize,
    /// Input size.
    pub h: usize,
    pub w: usize,
    pub ph: usize,
    pub pw: usize,
}

impl UpConv {
    #[inline]
    fn widx(&self, c: usize, o: usize, u: usize, v: usize) -> usize {
        ((c * self.cout + o) * self.ph + u) * self.pw + v
    }

    pub fn forward<T: Float>(&self, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
        let (oh, ow) = (self.h * self.ph, self.w * self.pw);
        let mut out = vec![T::zero(); self.cout * oh * ow];
        for o in 0..self.cout {
            out[o * oh * ow..(o + 1) * oh * ow].fill(bias[o]);
            for c in 0..self.cin {
                let xin = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
                for u in 0..self.ph {
                    for v in 0..self.pw {
                        let k = weight[self.widx(c, o, u, v)];
                        for i in 0..self.h {
                            let row = (o * oh + i * self.ph + u) * ow + v;
                            for j in 0..self.w {
                                let d = row + j * self.pw;
                                out[d] = out[d] + k * xin[i * self.w + j];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward<T: Float>(&self, x: &[T], weight: &[T], gout: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (oh, ow) = (self.h * self.ph, self.w * self.pw);
        let mut gx = vec![T::zero(); self.cin * self.h * self.w];
        let mut gw = vec![T::zero(); weight.len()];
        let gb = (0..self.cout)
            .map(|o| {
                gout[o * oh * ow..(o + 1) * oh * ow]
                    .iter()
                    .fold(T::zero(), |s, &g| s + g)
            })
            .collect();
        for o in 0..self.cout {
            for c in 0..self.cin {
                for u in 0..self.ph {
                    for v in 0..self.pw {
                        let idx = self.widx(c, o, u, v);
                        let k = weight[idx];
                        let mut acc = T::zero();
                        for i in 0..self.h {
                            let row = (o * oh + i * self.ph + u) * ow + v;
                            for j in 0..self.w {
                                let g = gout[row + j * self.pw];
                                let xi = (c * self.h + i) * self.w + j;
                                acc = acc + g * x[xi];
                                gx[xi] = gx[xi] + k * g;
                            }
                        }
                        gw[idx] = acc;
                    }
                }
            }
        }
        (gx, gw, gb)
    }
}

pub(crate) fn relu_in_place<T: Float>(x: &mut [T]) {
    for v in x {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Masks `g` by the positive entries of a ReLU output.
pub(crate) fn relu_backward<T: Float>(g: &mut [T], out: &[T]) {
    for (gi, &o) in g.iter_mut().zip(out) {
        if !(o > T::zero()) {
            *gi = T::zero();
        }
    }
}

pub(crate) fn transpose<T: Float>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force 'same' convolution by explicit zero padding.
    fn conv_reference(cv: &Conv, x: &[f64], wt: &[f64], b: &[f64]) -> Vec<f64> {
        let (ph, pw) = (cv.kh as isize / 2, cv.kw as isize / 2);
        let mut out = vec![0.0; cv.cout * cv.h * cv.w];
        for o in 0..cv.cout {
            for i in 0..cv.h as isize {
                for j in 0..cv.w as isize {
                    let mut s = b[o];
                    for c in 0..cv.cin {
                        for u in 0..cv.kh as isize {
                            for v in 0..cv.kw as isize {
                                let (r, q) = (i + u - ph, j + v - pw);
                                if r < 0 || q < 0 || r >= cv.h as isize || q >= cv.w as isize {
                                    continue;
                                }
                                s += wt[cv.widx(o, c, u as usize, v as usize)]
                                    * x[(c * cv.h + r as usize) * cv.w + q as usize];
                            }
                        }
                    }
                    out[(o * cv.h + i as usize) * cv.w + j as usize] = s;
                }
            }
        }
        out
    }

    fn seq(n: usize, a: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 * a).sin() * 1.7).fract()).collect()
    }

    #[test]
    fn conv_matches_padding_reference() {
        let cv = Conv {
            cin: 2,
            cout: 3,
            h: 4,
            w: 7,
            kh: 3,
            kw: 5,
        };
        let x = seq(2 * 4 * 7, 0.37);
        let wt = seq(3 * 2 * 15, 1.3);
        let b = [0.1, -0.2, 0.3];
        let got = cv.forward(&x, &wt, &b);
        let want = conv_reference(&cv, &x, &wt, &b);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> = <x, conv^T(g)> and the weight gradient is linear in x
        let cv = Conv {
            cin: 2,
            cout: 2,
            h: 5,
            w: 6,
            kh: 3,
            kw: 5,
        };
        let x = seq(60, 0.71);
        let wt = seq(60, 0.23);
        let g = seq(60, 1.9);
        let y = cv.forward(&x, &wt, &[0.0, 0.0]);
        let (gx, gw, _) = cv.backward(&x, &wt, &g);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        let rhs2: f64 = wt.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        assert!((lhs - rhs2).abs() < 1e-10);
    }

    #[test]
    fn pool_shape_ties_and_conservation() {
        let x = [
            1.0, 3.0, 3.0, 0.0, 2.0, 2.0, 2.0, 2.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5,
        ];
        let (out, arg) = maxpool(&x, 1, 2, 8, 2, 4);
        assert_eq!(out, vec![3.0, 2.0]);
        // ties resolve to the first row-major maximum
        assert_eq!(arg, vec![1, 4]);
        let g = maxpool_backward(&[0.25, -1.5], &arg, 16);
        assert_eq!(g.iter().sum::<f64>(), -1.25);
        assert_eq!(g[1], 0.25);
        assert_eq!(g[4], -1.5);
    }

    #[test]
    fn upconv_inverts_pool_geometry() {
        let up = UpConv {
            cin: 1,
            cout: 1,
            h: 2,
            w: 2,
            ph: 2,
            pw: 4,
        };
        let wt: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let out = up.forward(&[1.0, 2.0, 3.0, 4.0], &wt, &[0.5]);
        assert_eq!(out.len(), 4 * 8);
        // block of input (1, 0) starts at output row 2, col 0
        assert_eq!(out[2 * 8], 0.5 + 3.0 * 0.0);
        assert_eq!(out[3 * 8 + 3], 0.5 + 3.0 * 7.0);
        assert_eq!(out[8 + 4 + 1], 0.5 + 2.0 * 5.0);
        let g = seq(32, 0.9);
        let (gx, gw, _) = up.backward(&[1.0, 2.0, 3.0, 4.0], &wt, &g);
        let y = up.forward(&[1.0, 2.0, 3.0, 4.0], &wt, &[0.0]);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = [1.0, 2.0, 3.0, 4.0].iter().zip(&gx).map(|(a, b)| a * b).sum();
        let rhs2: f64 = wt.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 && (lhs - rhs2).abs() < 1e-10);
    }

    #[test]
    fn transpose_round_trip() {
        let x = seq(12, 0.4);
        assert_eq!(transpose(&transpose(&x, 3, 4), 4, 3), x);
    }
}
