//! Sparse deconvolution of waterfall columns by proximal gradient descent.
//!
//! Each time column `y` is treated as an independent problem
//!
//! ```text
//! minimize  ||K x - y||_2^2 + lambda * ||x||_1
//! ```
//!
//! where `K` is the 'same' convolution with the fiber impulse response along
//! the channel axis. Both the plain iteration (ISTA) and the accelerated one
//! (FISTA, with a restart whenever the objective would go up) are provided.
//! The step size comes from the spectral bound of `K`, so the number of
//! iterations is deterministic.

use alloc::vec;
use alloc::vec::Vec;

use crate::spectral::{self, ColumnOperator};
use crate::{Error, ImpulseKernel, Result, Waterfall};

/// Regularization weights scanned by [`select_lambda`].
pub const LAMBDA_GRID: [f64; 5] = [0.005, 0.01, 0.05, 0.1, 0.5];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoConfig {
    pub lambda: f64,
    pub max_iter: usize,
    /// Stop once the relative objective change falls below this.
    pub tol: f64,
    pub accelerated: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            lambda: 0.5,
            max_iter: 500,
            tol: 1e-6,
            accelerated: true,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be >= 0"));
        }
        if self.max_iter < 1 {
            return Err(Error::invalid("max_iter must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseResult {
    /// Sparse source estimate, one column per time sample.
    pub estimate: Waterfall,
    /// Objective summed over all columns, starting with the value at zero.
    pub objective_trace: Vec<f64>,
    /// Largest iteration count used by any column.
    pub iterations_used: usize,
}

/// Solution of a single column problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSolution {
    pub x: Vec<f64>,
    /// Objective at the start and after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// `sign(v) * max(|v| - t, 0)`, the proximal map of `t * |.|`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// LASSO objective of one column.
pub fn objective(x: &[f64], y: &[f64], kern: &ImpulseKernel, lambda: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: alloc::format!("{} samples", y.len()),
            found: alloc::format!("{} samples", x.len()),
        });
    }
    let kx = spectral::convolve_same(x, kern.taps())?;
    let fit: f64 = kx.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    Ok(fit + lambda * l1)
}

/// Lipschitz constant of the gradient of `||K x - y||^2`, i.e. twice the
/// largest squared gain of the kernel spectrum.
pub fn lipschitz(kern: &ImpulseKernel) -> Result<f64> {
    if kern.is_zero() {
        return Err(Error::DegenerateKernel);
    }
    Ok(2.0 * spectral::peak_power_gain(kern))
}

/// Column solver sharing one precomputed operator across columns.
#[derive(Debug, Clone)]
pub struct ColumnSolver {
    op: ColumnOperator,
    lipschitz: f64,
    config: LassoConfig,
}

struct Work {
    scratch: Vec<num_complex::Complex64>,
    grad: Vec<f64>,
    resid: Vec<f64>,
}

impl ColumnSolver {
    pub fn new(kern: &ImpulseKernel, len: usize, config: LassoConfig) -> Result<Self> {
        config.validate()?;
        let lipschitz = lipschitz(kern)?;
        let op = ColumnOperator::new(kern, len)?;
        Ok(ColumnSolver { op, lipschitz, config })
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn value(&self, kx: &[f64], x: &[f64], y: &[f64]) -> f64 {
        let fit: f64 = kx.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        fit + self.config.lambda * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// `grad = 2 K^T (kx - y)`
    fn gradient(&self, kx: &[f64], y: &[f64], w: &mut Work) {
        for ((r, a), b) in w.resid.iter_mut().zip(kx).zip(y) {
            *r = a - b;
        }
        self.op.adjoint(&w.resid, &mut w.grad, &mut w.scratch);
        for g in w.grad.iter_mut() {
            *g *= 2.0;
        }
    }

    /// One proximal step from `point` (whose image is `k_point`) into `out`.
    fn prox_step(&self, point: &[f64], k_point: &[f64], y: &[f64], out: &mut [f64], w: &mut Work) {
        self.gradient(k_point, y, w);
        let step = 1.0 / self.lipschitz;
        let thresh = self.config.lambda * step;
        for ((o, &p), &g) in out.iter_mut().zip(point).zip(&w.grad) {
            *o = soft_threshold(p - step * g, thresh);
        }
    }

    /// `2 K^T (K x - y)` for an arbitrary column, for optimality checks.
    pub fn smooth_gradient(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.op.len();
        let mut w = Work {
            scratch: self.op.scratch(),
            grad: vec![0.0; n],
            resid: vec![0.0; n],
        };
        let mut kx = vec![0.0; n];
        self.op.apply(x, &mut kx, &mut w.scratch);
        self.gradient(&kx, y, &mut w);
        w.grad
    }

    pub fn solve(&self, y: &[f64]) -> ColumnSolution {
        let n = self.op.len();
        debug_assert_eq!(y.len(), n);
        let mut w = Work {
            scratch: self.op.scratch(),
            grad: vec![0.0; n],
            resid: vec![0.0; n],
        };

        let mut x = vec![0.0; n];
        let mut kx = vec![0.0; n];
        let mut value = self.value(&kx, &x, y);
        let mut trace = vec![value];

        // momentum point and its image
        let mut z = x.clone();
        let mut kz = kx.clone();
        let mut t = 1.0f64;
        let mut cand = vec![0.0; n];
        let mut kcand = vec![0.0; n];
        let mut iterations = 0;

        for _ in 0..self.config.max_iter {
            iterations += 1;
            self.prox_step(&z, &kz, y, &mut cand, &mut w);
            self.op.apply(&cand, &mut kcand, &mut w.scratch);
            let mut cand_value = self.value(&kcand, &cand, y);

            if self.config.accelerated && cand_value > value {
                // restart from the last accepted iterate
                t = 1.0;
                self.prox_step(&x, &kx, y, &mut cand, &mut w);
                self.op.apply(&cand, &mut kcand, &mut w.scratch);
                cand_value = self.value(&kcand, &cand, y);
            }
            if cand_value > value {
                // round-off at the optimum; keep the accepted iterate
                trace.push(value);
                break;
            }

            if self.config.accelerated {
                let t_next = (1.0 + libm::sqrt(1.0 + 4.0 * t * t)) / 2.0;
                let beta = (t - 1.0) / t_next;
                for i in 0..n {
                    z[i] = cand[i] + beta * (cand[i] - x[i]);
                    kz[i] = kcand[i] + beta * (kcand[i] - kx[i]);
                }
                t = t_next;
            } else {
                z.copy_from_slice(&cand);
                kz.copy_from_slice(&kcand);
            }

            let change = (value - cand_value).abs() / value.abs().max(f64::MIN_POSITIVE);
            core::mem::swap(&mut x, &mut cand);
            core::mem::swap(&mut kx, &mut kcand);
            value = cand_value;
            trace.push(value);
            if change < self.config.tol {
                break;
            }
        }
        ColumnSolution { x, trace, iterations }
    }
}

/// Deconvolves every time column of `w` independently.
pub fn denoise(w: &Waterfall, kern: &ImpulseKernel, config: &LassoConfig) -> Result<DenoiseResult> {
    if !w.is_finite() {
        return Err(Error::NonFinite("input waterfall".into()));
    }
    let solver = ColumnSolver::new(kern, w.n_channels(), *config)?;
    let mut estimate = w.zeros_like();
    estimate.normalized = false;
    let mut traces = Vec::with_capacity(w.n_time());
    let mut iterations_used = 0;
    for t in 0..w.n_time() {
        let sol = solver.solve(&w.column(t));
        estimate.set_column(t, &sol.x);
        iterations_used = iterations_used.max(sol.iterations);
        traces.push(sol.trace);
    }
    Ok(DenoiseResult {
        estimate,
        objective_trace: sum_traces(&traces),
        iterations_used,
    })
}

/// Elementwise sum of per-column traces, each held at its final value once
/// that column has stopped.
fn sum_traces(traces: &[Vec<f64>]) -> Vec<f64> {
    let len = traces.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|i| traces.iter().map(|tr| tr[i.min(tr.len() - 1)]).sum())
        .collect()
}

/// The denoised observation `K x_hat`, comparable with a clean waterfall.
pub fn reconstruct(estimate: &Waterfall, kern: &ImpulseKernel) -> Result<Waterfall> {
    spectral::convolve_columns(estimate, kern)
}

/// Picks the weight from `grid` whose reconstruction has the lowest squared
/// error against a known clean waterfall. Returns `(lambda, mse)` pairs for
/// the whole grid and the index of the winner.
pub fn select_lambda(
    noisy: &Waterfall,
    clean: &Waterfall,
    kern: &ImpulseKernel,
    base: &LassoConfig,
    grid: &[f64],
) -> Result<(usize, Vec<(f64, f64)>)> {
    if grid.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let cfg = LassoConfig { lambda, ..*base };
        let rec = reconstruct(&denoise(noisy, kern, &cfg)?.estimate, kern)?;
        scores.push((lambda, crate::metrics::mse(clean, &rec)?));
    }
    let best = (0..scores.len()).fold(0, |b, i| if scores[i].1 < scores[b].1 { i } else { b });
    Ok((best, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{sampled_point_kernel, PhysicsParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_kernel() -> ImpulseKernel {
        sampled_point_kernel(&PhysicsParams::default(), 0.0, 0.8, 20).unwrap()
    }

    fn three_spikes() -> Vec<f64> {
        let mut x = vec![0.0; 64];
        x[12] = 1.0;
        x[30] = 0.6;
        x[47] = 0.8;
        x
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(-1.0, 2.0), 0.0);
        assert_eq!(soft_threshold(-4.0, 2.0), -2.0);
        assert_eq!(soft_threshold(0.37, 0.0), 0.37);
    }

    #[test]
    fn objective_cases() {
        let k = default_kernel();
        let y: Vec<f64> = (0..64).map(|i| (i as f64 * 0.1).sin()).collect();
        let zero = vec![0.0; 64];
        let yy: f64 = y.iter().map(|v| v * v).sum();
        assert!((objective(&zero, &y, &k, 0.3).unwrap() - yy).abs() < 1e-12);
        let id = ImpulseKernel::identity(0.8);
        assert!(objective(&y, &y, &id, 0.0).unwrap().abs() < 1e-20);
    }

    #[test]
    fn objective_three_spikes_by_hand() {
        // kernel (0.5, 1, 0.25); x has spikes 1 at 1, -2 at 4, 0.5 at 6 on 8 channels
        let k = ImpulseKernel::from_taps(vec![0.5, 1.0, 0.25], 0.8, true).unwrap();
        let x = [0.0, 1.0, 0.0, 0.0, -2.0, 0.0, 0.5, 0.0];
        let y = [0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2];
        // K x: out[i] = 0.5 x[i+1] + x[i] + 0.25 x[i-1]
        //   = [0.5, 1, 0.25, -1, -2, -0.25, 0.5, 0.125]
        // residual = [0.4, 1, 0.25, -1, -2, -0.25, 0.5, -0.075]
        // ||r||^2 = 0.16+1+0.0625+1+4+0.0625+0.25+0.005625 = 6.540625
        // lambda ||x||_1 = 0.1 * 3.5
        let expected = 6.540625 + 0.35;
        assert!((objective(&x, &y, &k, 0.1).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn identity_kernel_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = Waterfall::zeros(16, 4, 0.8, 11.0);
        for v in w.values_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let cfg = LassoConfig {
            lambda: 0.0,
            max_iter: 1,
            tol: 1e-9,
            accelerated: false,
        };
        let res = denoise(&w, &ImpulseKernel::identity(0.8), &cfg).unwrap();
        assert_eq!(res.iterations_used, 1);
        for (a, b) in res.estimate.values().iter().zip(w.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn large_lambda_kills_everything() {
        let k = default_kernel();
        let y = spectral::convolve_same(&three_spikes(), k.taps()).unwrap();
        let solver = ColumnSolver::new(&k, 64, LassoConfig::default()).unwrap();
        let g0 = solver.smooth_gradient(&[0.0; 64], &y);
        let lambda = 2.0 * g0.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let solver = ColumnSolver::new(
            &k,
            64,
            LassoConfig {
                lambda,
                ..LassoConfig::default()
            },
        )
        .unwrap();
        assert!(solver.solve(&y).x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_kernel_rejected() {
        let k = ImpulseKernel::from_taps(vec![0.0, 0.0, 0.0], 0.8, false).unwrap();
        let w = Waterfall::zeros(8, 2, 0.8, 11.0);
        assert_eq!(
            denoise(&w, &k, &LassoConfig::default()).unwrap_err(),
            Error::DegenerateKernel
        );
    }

    #[test]
    fn fista_matches_long_ista() {
        let k = default_kernel();
        let y = spectral::convolve_same(&three_spikes(), k.taps()).unwrap();
        let ista = ColumnSolver::new(
            &k,
            64,
            LassoConfig {
                lambda: 0.05,
                max_iter: 10_000,
                tol: 1e-300,
                accelerated: false,
            },
        )
        .unwrap()
        .solve(&y);
        let fista = ColumnSolver::new(
            &k,
            64,
            LassoConfig {
                lambda: 0.05,
                max_iter: 500,
                tol: 1e-300,
                accelerated: true,
            },
        )
        .unwrap()
        .solve(&y);
        let (fi, fa) = (ista.trace[ista.trace.len() - 1], fista.trace[fista.trace.len() - 1]);
        assert!((fa - fi).abs() < 1e-6, "fista {fa} ista {fi}");
        assert!(fista.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(ista.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn exact_data_is_fit_without_regularization() {
        let k = default_kernel();
        let y = spectral::convolve_same(&three_spikes(), k.taps()).unwrap();
        let tol = 1e-10;
        let solver = ColumnSolver::new(
            &k,
            64,
            LassoConfig {
                lambda: 0.0,
                max_iter: 20_000,
                tol,
                accelerated: true,
            },
        )
        .unwrap();
        let sol = solver.solve(&y);
        let kx = spectral::convolve_same(&sol.x, k.taps()).unwrap();
        let resid: f64 = kx.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(resid < 1e-4 * norm, "residual {resid}");
    }

    #[test]
    fn optimality_certificate() {
        let k = sampled_point_kernel(&PhysicsParams::default(), 0.0, 0.8, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let y: Vec<f64> = spectral::convolve_same(&three_spikes()[..32], k.taps())
            .unwrap()
            .iter()
            .map(|v| v + rng.random_range(-0.05..0.05))
            .collect();
        let cfg = LassoConfig {
            lambda: 0.1,
            max_iter: 50_000,
            tol: 1e-14,
            accelerated: true,
        };
        let solver = ColumnSolver::new(&k, 32, cfg).unwrap();
        let sol = solver.solve(&y);
        let g = solver.smooth_gradient(&sol.x, &y);
        for (xi, gi) in sol.x.iter().zip(&g) {
            if *xi == 0.0 {
                assert!(gi.abs() <= cfg.lambda + 10.0 * cfg.tol, "{gi}");
            } else {
                assert!((gi + cfg.lambda * xi.signum()).abs() < 1e-5, "{gi} at {xi}");
            }
        }
    }

    #[test]
    fn whole_waterfall_trace_is_monotone() {
        let k = sampled_point_kernel(&PhysicsParams::default(), 0.0, 0.8, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut w = Waterfall::zeros(24, 6, 0.8, 11.0);
        for v in w.values_mut() {
            *v = rng.random_range(-0.2..1.0);
        }
        let res = denoise(
            &w,
            &k,
            &LassoConfig {
                lambda: 0.05,
                ..LassoConfig::default()
            },
        )
        .unwrap();
        assert_eq!(res.estimate.shape(), w.shape());
        assert!(res.objective_trace.windows(2).all(|p| p[1] <= p[0]));
        assert_eq!(res.objective_trace.len(), res.iterations_used + 1);
    }

    proptest! {
        #[test]
        fn monotone_restart_never_increases(seed in 0u64..1000, lambda in 0.0f64..0.5) {
            let k = sampled_point_kernel(&PhysicsParams::default(), 0.0, 0.8, 4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sol = ColumnSolver::new(&k, 20, LassoConfig { lambda, max_iter: 200, tol: 1e-12, accelerated: true })
                .unwrap()
                .solve(&y);
            prop_assert!(sol.trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
