//! Reconstruction quality: MSE, PSNR and windowed SSIM.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Waterfall};

/// Parameters of the structural similarity index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub dynamic_range: f64,
    /// Side length of the square sliding window.
    pub window: usize,
}

impl SsimConfig {
    /// Standard constants `(0.01 L)^2`, `(0.03 L)^2` and `c2 / 2`, unit
    /// exponents and an 8 x 8 window.
    pub fn for_range(dynamic_range: f64) -> Self {
        let c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
        let c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
        SsimConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            c1,
            c2,
            c3: c2 / 2.0,
            dynamic_range,
            window: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.c3 > 0.0) {
            return Err(Error::invalid("ssim constants must be > 0"));
        }
        if !(self.dynamic_range > 0.0) {
            return Err(Error::invalid("dynamic range must be > 0"));
        }
        if self.window < 2 {
            return Err(Error::invalid("ssim window must be >= 2"));
        }
        for e in [self.alpha, self.beta, self.gamma] {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::invalid("ssim exponents must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig::for_range(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub mse: f64,
    /// `f64::INFINITY` when the inputs are identical.
    pub psnr: f64,
    pub ssim: f64,
    pub peak_v: f64,
    pub ssim_config: SsimConfig,
}

impl QualityReport {
    /// Flat `key=value` lines, one per field.
    pub fn to_key_values(&self) -> String {
        let c = &self.ssim_config;
        format!(
            "mse={}\npsnr_db={}\nssim={}\npeak_v={}\nssim_window={}\nssim_alpha={}\nssim_beta={}\nssim_gamma={}\nssim_c1={}\nssim_c2={}\nssim_c3={}\nssim_dynamic_range={}\n",
            self.mse, self.psnr, self.ssim, self.peak_v, c.window, c.alpha, c.beta, c.gamma, c.c1, c.c2, c.c3, c.dynamic_range
        )
    }
}

pub fn mse(y: &Waterfall, y_hat: &Waterfall) -> Result<f64> {
    y.check_same_shape(y_hat)?;
    if y.values().is_empty() {
        return Err(Error::Empty("waterfall"));
    }
    let sum: f64 = y
        .values()
        .iter()
        .zip(y_hat.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / y.values().len() as f64)
}

/// `10 log10(peak_v^2 / mse)` for a known error.
pub fn psnr_from_mse(mse: f64, peak_v: f64) -> Result<f64> {
    if !(peak_v > 0.0 && peak_v.is_finite()) {
        return Err(Error::invalid("peak value must be > 0"));
    }
    if !(mse >= 0.0) {
        return Err(Error::invalid("mse must be >= 0"));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(peak_v * peak_v / mse))
}

pub fn psnr(y: &Waterfall, y_hat: &Waterfall, peak_v: f64) -> Result<f64> {
    psnr_from_mse(mse(y, y_hat)?, peak_v)
}

/// `sign(v) |v|^e`, so fractional exponents stay defined for a negative
/// structure term.
fn signed_pow(v: f64, e: f64) -> f64 {
    if e == 1.0 {
        v
    } else if v < 0.0 {
        -libm::pow(-v, e)
    } else {
        libm::pow(v, e)
    }
}

/// Summed-area table with a zero border, `(rows + 1) x (cols + 1)`.
fn integral(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let w = cols + 1;
    let mut s = vec![0.0; (rows + 1) * w];
    for r in 0..rows {
        let mut acc = 0.0;
        for c in 0..cols {
            acc += f(r, c);
            s[(r + 1) * w + c + 1] = s[r * w + c + 1] + acc;
        }
    }
    s
}

fn window_sum(s: &[f64], cols: usize, r: usize, c: usize, k: usize) -> f64 {
    let w = cols + 1;
    s[(r + k) * w + c + k] - s[r * w + c + k] - s[(r + k) * w + c] + s[r * w + c]
}

/// Luminance, contrast and structure terms from window statistics.
pub fn ssim_terms(mx: f64, my: f64, vx: f64, vy: f64, cov: f64, cfg: &SsimConfig) -> (f64, f64, f64) {
    // sqrt(v * v) can miss v by an ulp
    let sxy = if vx == vy { vx } else { libm::sqrt(vx * vy) };
    // rounding in the window sums can push |cov| past its bound
    let cov = cov.clamp(-sxy, sxy);
    let l = (2.0 * mx * my + cfg.c1) / (mx * mx + my * my + cfg.c1);
    let c = (2.0 * sxy + cfg.c2) / (vx + vy + cfg.c2);
    let s = (cov + cfg.c3) / (sxy + cfg.c3);
    (l, c, s)
}

/// Mean SSIM over every fully contained `window x window` patch.
pub fn ssim(y: &Waterfall, y_hat: &Waterfall, cfg: &SsimConfig) -> Result<f64> {
    y.check_same_shape(y_hat)?;
    cfg.validate()?;
    let (rows, cols) = y.shape();
    let k = cfg.window;
    if rows < k || cols < k {
        return Err(Error::invalid(format!(
            "ssim window {k} larger than {rows} x {cols} image"
        )));
    }
    let sx = integral(rows, cols, |r, c| y.get(r, c));
    let sy = integral(rows, cols, |r, c| y_hat.get(r, c));
    let sxx = integral(rows, cols, |r, c| y.get(r, c) * y.get(r, c));
    let syy = integral(rows, cols, |r, c| y_hat.get(r, c) * y_hat.get(r, c));
    let sxy = integral(rows, cols, |r, c| y.get(r, c) * y_hat.get(r, c));
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=rows - k {
        for c in 0..=cols - k {
            let mx = window_sum(&sx, cols, r, c, k) / n;
            let my = window_sum(&sy, cols, r, c, k) / n;
            let vx = (window_sum(&sxx, cols, r, c, k) / n - mx * mx).max(0.0);
            let vy = (window_sum(&syy, cols, r, c, k) / n - my * my).max(0.0);
            let cov = window_sum(&sxy, cols, r, c, k) / n - mx * my;
            let (l, cc, s) = ssim_terms(mx, my, vx, vy, cov, cfg);
            total += signed_pow(l, cfg.alpha) * signed_pow(cc, cfg.beta) * signed_pow(s, cfg.gamma);
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(-1.0, 1.0))
}

pub fn evaluate(y: &Waterfall, y_hat: &Waterfall, peak_v: f64, cfg: &SsimConfig) -> Result<QualityReport> {
    let m = mse(y, y_hat)?;
    Ok(QualityReport {
        mse: m,
        psnr: psnr_from_mse(m, peak_v)?,
        ssim: ssim(y, y_hat, cfg)?,
        peak_v,
        ssim_config: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Waterfall {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
        Waterfall::from_values(rows, cols, v, 0.8, 11.0).unwrap()
    }

    #[test]
    fn mse_cases() {
        let a = random(6, 7, 1);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.values_mut().iter_mut().for_each(|v| *v += 0.5);
        assert!((mse(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        let y = Waterfall::from_values(2, 2, vec![0.0, 1.0, 1.0, 0.0], 0.8, 11.0).unwrap();
        assert_eq!(mse(&y, &Waterfall::zeros(2, 2, 0.8, 11.0)).unwrap(), 0.5);
        assert!(matches!(
            mse(&a, &random(7, 6, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn psnr_cases() {
        assert!((psnr_from_mse(1.0, 255.0).unwrap() - 10.0 * 65025f64.log10()).abs() < 1e-9);
        assert!((psnr_from_mse(1.0, 255.0).unwrap() - 48.130803608679).abs() < 1e-6);
        assert!((psnr_from_mse(0.01, 1.0).unwrap() - 20.0).abs() < 1e-12);
        let a = random(4, 4, 2);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr_from_mse(1.0, 0.0).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = random(20, 30, 3);
        assert_eq!(ssim(&a, &a, &SsimConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn ssim_negated_is_negative() {
        // a single window, so the local mean is the global one
        let mut a = random(8, 8, 4);
        let mean = a.values().iter().sum::<f64>() / 64.0;
        a.values_mut().iter_mut().for_each(|v| *v -= mean);
        let mut b = a.clone();
        b.values_mut().iter_mut().for_each(|v| *v = -*v);
        assert!(ssim(&a, &b, &SsimConfig::default()).unwrap() < 0.0);
    }

    #[test]
    fn ssim_single_window_hand_computed() {
        // One 8x8 window: the result is l*c*s from whole-image statistics,
        // evaluated in two passes without any summed-area tables.
        let a = random(8, 8, 5);
        let b = random(8, 8, 6);
        let cfg = SsimConfig::default();
        let n = 64.0;
        let mx = a.values().iter().sum::<f64>() / n;
        let my = b.values().iter().sum::<f64>() / n;
        let vx = a.values().iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let vy = b.values().iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
        let cov = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / n;
        let (sx, sy) = (vx.sqrt(), vy.sqrt());
        let l = (2.0 * mx * my + cfg.c1) / (mx * mx + my * my + cfg.c1);
        let c = (2.0 * sx * sy + cfg.c2) / (vx + vy + cfg.c2);
        let s = (cov + cfg.c3) / (sx * sy + cfg.c3);
        let got = ssim(&a, &b, &cfg).unwrap();
        assert!((got - l * c * s).abs() < 1e-12, "{got} vs {}", l * c * s);
    }

    #[test]
    fn ssim_fixed_pair_reference() {
        // x = i/63 in raster order, y = x reversed; one window with L = 1.
        let x: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
        let y: Vec<f64> = x.iter().rev().copied().collect();
        let a = Waterfall::from_values(8, 8, x, 0.8, 11.0).unwrap();
        let b = Waterfall::from_values(8, 8, y, 0.8, 11.0).unwrap();
        // means 0.5, var = 65/(12*63) each, cov = -var, l = c = 1
        let v = 65.0 / (12.0 * 63.0);
        let expected = (-v + 0.00045) / (v + 0.00045);
        assert!((ssim(&a, &b, &SsimConfig::default()).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_window_too_large() {
        let a = random(5, 20, 7);
        assert!(ssim(&a, &a, &SsimConfig::default()).is_err());
    }

    #[test]
    fn report_lines() {
        let a = random(10, 10, 8);
        let r = evaluate(&a, &a, 1.0, &SsimConfig::default()).unwrap();
        let text = r.to_key_values();
        assert!(text.contains("mse=0\n"));
        assert!(text.contains("psnr_db=inf\n"));
        assert!(text.contains("ssim=1\n"));
        assert!(text.contains("ssim_window=8\n"));
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(s1 in 0u64..500, s2 in 0u64..500, scale in 0.01f64..100.0) {
            let a = random(10, 12, s1);
            let mut b = random(10, 12, s2 + 1000);
            b.values_mut().iter_mut().for_each(|v| *v = (*v - 0.5) * scale);
            let cfg = SsimConfig::default();
            let ab = ssim(&a, &b, &cfg).unwrap();
            let ba = ssim(&b, &a, &cfg).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
            prop_assert!(mse(&a, &b).unwrap() >= 0.0);
        }

        #[test]
        fn closer_is_better(seed in 0u64..500, d1 in 0.01f64..0.5, extra in 0.01f64..0.5) {
            let y = random(6, 6, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let signs: Vec<f64> = (0..36).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let mut near = y.clone();
            let mut far = y.clone();
            for (i, s) in signs.iter().enumerate() {
                near.values_mut()[i] += s * d1;
                far.values_mut()[i] += s * (d1 + extra);
            }
            prop_assert!(mse(&y, &near).unwrap() < mse(&y, &far).unwrap());
            prop_assert!(psnr(&y, &near, 1.0).unwrap() > psnr(&y, &far, 1.0).unwrap());
        }
    }
}
