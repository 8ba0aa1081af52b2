//! Line-by-line vehicle detection and trajectory extension.
//!
//! Vehicles are detected as peaks in the time series of the first channel.
//! Each detection is then followed one time sample at a time: the next
//! channel is the argmax of the next time sample inside a channel window
//! derived from a speed interval. The first steps use a fixed interval, the
//! rest use a band around the slope of a polynomial fitted to the most
//! recent points.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::{Error, Result, Waterfall};

/// Side of the fiber where vehicles are detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    /// Enter at channel 0 and move toward higher channels.
    #[default]
    Forward,
    /// Enter at the last channel and move toward channel 0.
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Speed interval for the initial steps (m/s).
    pub v_min_init: f64,
    pub v_max_init: f64,
    /// Relative half width of the speed band around the fitted speed.
    pub confidence_cof: f64,
    /// Number of trailing points used by the polynomial fit.
    pub fit_window: usize,
    pub poly_degree: usize,
    /// Detection threshold in standard deviations above the mean.
    pub peak_threshold_k: f64,
    /// Minimum distance between accepted detections (time samples).
    pub peak_min_separation: usize,
    /// Steps taken with the initial speed interval before fitting.
    pub initial_steps: usize,
    pub direction: Direction,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            v_min_init: 5.0,
            v_max_init: 45.0,
            confidence_cof: 0.3,
            fit_window: 10,
            poly_degree: 1,
            peak_threshold_k: 3.0,
            peak_min_separation: 5,
            initial_steps: 1,
            direction: Direction::Forward,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min_init > 0.0 && self.v_min_init < self.v_max_init && self.v_max_init.is_finite()) {
            return Err(Error::invalid("need 0 < v_min_init < v_max_init"));
        }
        if !(self.confidence_cof > 0.0 && self.confidence_cof < 1.0) {
            return Err(Error::invalid("confidence_cof must lie in (0, 1)"));
        }
        if self.fit_window < 2 {
            return Err(Error::invalid("fit_window must be >= 2"));
        }
        if self.poly_degree < 1 {
            return Err(Error::invalid("poly_degree must be >= 1"));
        }
        if !(self.peak_threshold_k.is_finite()) {
            return Err(Error::NonFinite("peak_threshold_k".into()));
        }
        if self.initial_steps < 1 {
            return Err(Error::invalid("initial_steps must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    /// `(time sample, channel)` pairs on consecutive time samples.
    pub points: Vec<(usize, usize)>,
    /// Slope of the trailing fit at each point (m/s).
    pub fitted_speed_per_step: Vec<f64>,
    /// Net displacement over elapsed time (m/s).
    pub average_speed: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first_row(&self) -> Option<usize> {
        self.points.first().map(|p| p.0)
    }

    pub fn last(&self) -> Option<(usize, usize)> {
        self.points.last().copied()
    }
}

/// Rows of `series` that exceed `mean + k * std`, are strict local maxima
/// and keep the minimum separation. Larger peaks win; the result is sorted
/// by row.
pub fn find_peaks(series: &[f64], config: &TrackerConfig) -> Vec<usize> {
    let n = series.len();
    if n < 3 {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let threshold = mean + config.peak_threshold_k * libm::sqrt(var);
    let mut cand: Vec<usize> = (0..n)
        .filter(|&i| {
            let v = series[i];
            v > threshold && (i == 0 || v > series[i - 1]) && (i + 1 == n || v > series[i + 1])
        })
        .collect();
    // descending amplitude, earlier row first on ties
    cand.sort_by(|&a, &b| series[b].total_cmp(&series[a]).then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::new();
    for i in cand {
        if accepted.iter().all(|&j| i.abs_diff(j) >= config.peak_min_separation) {
            accepted.push(i);
        }
    }
    accepted.sort_unstable();
    accepted
}

/// Read-only view of a waterfall in tracking coordinates, mirrored for
/// reverse travel.
struct View<'a> {
    w: &'a Waterfall,
    reverse: bool,
}

impl View<'_> {
    fn channels(&self) -> usize {
        self.w.n_channels()
    }

    fn rows(&self) -> usize {
        self.w.n_time()
    }

    fn actual(&self, l: usize) -> usize {
        if self.reverse {
            self.channels() - 1 - l
        } else {
            l
        }
    }

    fn get(&self, k: usize, l: usize) -> f64 {
        self.w.get(self.actual(l), k)
    }
}

/// Channel offsets per time sample for a speed interval.
fn channel_window(lo_speed: f64, hi_speed: f64, per_channel: f64) -> (i64, i64) {
    let a = lo_speed.min(hi_speed) / per_channel;
    let b = lo_speed.max(hi_speed) / per_channel;
    let (mut lo, mut hi) = (libm::floor(a) as i64, libm::ceil(b) as i64);
    if hi <= lo {
        lo -= 1;
        hi += 1;
    }
    (lo, hi)
}

enum Step {
    Added,
    Stop,
}

/// Argmax of row `k` over channels `l + lo ..= l + hi`, clamped to the
/// grid. Ties go to the smallest channel.
fn step(view: &View, points: &mut Vec<(usize, usize)>, (lo, hi): (i64, i64)) -> Step {
    let (k, l) = *points.last().expect("trajectory has a point");
    let next = k + 1;
    let n = view.channels() as i64;
    if next >= view.rows() {
        return Step::Stop;
    }
    let a = (l as i64 + lo).max(0);
    let b = (l as i64 + hi).min(n - 1);
    if a > b {
        return Step::Stop;
    }
    let mut best = a as usize;
    for c in a as usize..=b as usize {
        if view.get(next, c) > view.get(next, best) {
            best = c;
        }
    }
    // reaching the far edge ends the trajectory without adding the point
    if best as i64 >= n - 1 {
        return Step::Stop;
    }
    points.push((next, best));
    Step::Added
}

/// Slope at the last point of a least-squares polynomial through the last
/// `window` points, in channels per time sample.
pub fn fitted_slope(points: &[(usize, usize)], window: usize, degree: usize) -> f64 {
    let tail = &points[points.len().saturating_sub(window)..];
    if tail.len() < 2 {
        return 0.0;
    }
    let degree = degree.min(tail.len() - 1);
    let k_end = tail[tail.len() - 1].0 as f64;
    let l_end = tail[tail.len() - 1].1 as f64;
    // centered abscissae keep the normal equations well conditioned
    let xs: Vec<f64> = tail.iter().map(|p| p.0 as f64 - k_end).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.1 as f64 - l_end).collect();
    let m = degree + 1;
    let mut a = vec![0.0; m * (m + 1)];
    for (x, y) in xs.iter().zip(&ys) {
        let mut pi = 1.0;
        for i in 0..m {
            let mut pj = 1.0;
            for j in 0..m {
                a[i * (m + 1) + j] += pi * pj;
                pj *= x;
            }
            a[i * (m + 1) + m] += pi * y;
            pi *= x;
        }
    }
    match solve_augmented(&mut a, m) {
        Some(coef) => coef[1],
        None => 0.0,
    }
}

/// Gaussian elimination with partial pivoting on an `m x (m + 1)` system.
fn solve_augmented(a: &mut [f64], m: usize) -> Option<Vec<f64>> {
    let w = m + 1;
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i * w + col].abs().total_cmp(&a[j * w + col].abs()))?;
        if a[piv * w + col].abs() < 1e-12 {
            return None;
        }
        for j in 0..w {
            a.swap(col * w + j, piv * w + j);
        }
        for r in col + 1..m {
            let f = a[r * w + col] / a[col * w + col];
            for j in col..w {
                a[r * w + j] -= f * a[col * w + j];
            }
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let s: f64 = (r + 1..m).map(|j| a[r * w + j] * x[j]).sum();
        x[r] = (a[r * w + m] - s) / a[r * w + r];
    }
    Some(x)
}

fn per_channel(w: &Waterfall) -> f64 {
    w.channel_spacing * w.sample_rate
}

fn check_entry(w: &Waterfall, k_s: usize) -> Result<()> {
    if w.n_channels() == 0 || k_s >= w.n_time() {
        return Err(Error::invalid(format!(
            "entry row {k_s} outside {} time samples",
            w.n_time()
        )));
    }
    Ok(())
}

fn initial_points(view: &View, k_s: usize, config: &TrackerConfig, per_channel: f64) -> Vec<(usize, usize)> {
    let mut points = vec![(k_s, 0)];
    let window = channel_window(config.v_min_init, config.v_max_init, per_channel);
    for _ in 0..config.initial_steps {
        if let Step::Stop = step(view, &mut points, window) {
            break;
        }
    }
    points
}

fn adaptive_points(view: &View, points: &mut Vec<(usize, usize)>, config: &TrackerConfig) {
    if points.len() < 2 {
        return;
    }
    loop {
        let v = fitted_slope(points, config.fit_window, config.poly_degree);
        let window = channel_window(
            (1.0 - config.confidence_cof) * v,
            (1.0 + config.confidence_cof) * v,
            1.0,
        );
        if let Step::Stop = step(view, points, window) {
            break;
        }
    }
}

fn finish(view: &View, id: usize, points: Vec<(usize, usize)>, config: &TrackerConfig) -> Trajectory {
    let pc = per_channel(view.w);
    let sign = if view.reverse { -1.0 } else { 1.0 };
    let mut fitted: Vec<f64> = (1..=points.len())
        .map(|i| sign * fitted_slope(&points[..i], config.fit_window, config.poly_degree) * pc)
        .collect();
    if fitted.len() > 1 {
        fitted[0] = fitted[1];
    }
    let points: Vec<(usize, usize)> = points.into_iter().map(|(k, l)| (k, view.actual(l))).collect();
    let mut t = Trajectory {
        id,
        points,
        fitted_speed_per_step: fitted,
        average_speed: 0.0,
    };
    t.average_speed = estimate_speeds(&t, view.w.channel_spacing, view.w.sample_rate).map_or(0.0, |s| s.0);
    t
}

/// The entry point and the steps taken with the initial speed interval.
pub fn initial_extend(w: &Waterfall, k_s: usize, config: &TrackerConfig) -> Result<Trajectory> {
    config.validate()?;
    check_entry(w, k_s)?;
    let view = View {
        w,
        reverse: config.direction == Direction::Reverse,
    };
    let points = initial_points(&view, k_s, config, per_channel(w));
    Ok(finish(&view, 0, points, config))
}

/// Extends a trajectory with fitted-speed windows until it leaves the grid.
pub fn adaptive_extend(w: &Waterfall, trajectory: &Trajectory, config: &TrackerConfig) -> Result<Trajectory> {
    config.validate()?;
    if trajectory.points.len() < 2 {
        return Err(Error::invalid("adaptive extension needs at least two points"));
    }
    let view = View {
        w,
        reverse: config.direction == Direction::Reverse,
    };
    let mut points: Vec<(usize, usize)> = trajectory.points.iter().map(|&(k, l)| (k, view.actual(l))).collect();
    if points.iter().any(|&(k, l)| k >= w.n_time() || l >= w.n_channels()) {
        return Err(Error::invalid("trajectory point outside the waterfall"));
    }
    adaptive_points(&view, &mut points, config);
    Ok(finish(&view, trajectory.id, points, config))
}

/// Detects and follows every vehicle entering through the first channel.
pub fn extract_trajectories(w: &Waterfall, config: &TrackerConfig) -> Result<Vec<Trajectory>> {
    config.validate()?;
    if w.n_channels() == 0 || w.n_time() == 0 {
        return Ok(Vec::new());
    }
    if !w.is_finite() {
        return Err(Error::NonFinite("waterfall".into()));
    }
    let view = View {
        w,
        reverse: config.direction == Direction::Reverse,
    };
    let entry = view.actual(0);
    let peaks = find_peaks(w.row(entry), config);
    let pc = per_channel(w);
    Ok(peaks
        .into_iter()
        .enumerate()
        .map(|(id, k_s)| {
            let mut points = initial_points(&view, k_s, config, pc);
            adaptive_points(&view, &mut points, config);
            finish(&view, id, points, config)
        })
        .collect())
}

/// Average speed over the whole trajectory and the speed of every step,
/// both in m/s.
pub fn estimate_speeds(t: &Trajectory, channel_spacing: f64, sample_rate: f64) -> Result<(f64, Vec<f64>)> {
    if t.points.len() < 2 {
        return Err(Error::UndefinedSpeed);
    }
    let per_step: Vec<f64> = t
        .points
        .windows(2)
        .map(|p| {
            let dl = p[1].1 as f64 - p[0].1 as f64;
            let dk = p[1].0 as f64 - p[0].0 as f64;
            dl * channel_spacing * sample_rate / dk
        })
        .collect();
    let (k0, l0) = t.points[0];
    let (k1, l1) = t.points[t.points.len() - 1];
    let avg = (l1 as f64 - l0 as f64) * channel_spacing / ((k1 - k0) as f64 / sample_rate);
    Ok((avg, per_step))
}

/// Text export: a `# vehicle <id> avg_speed=<m/s>` header per trajectory
/// followed by `k,l,v` rows.
pub fn format_trajectories(ts: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in ts {
        let _ = writeln!(out, "# vehicle {} avg_speed={}", t.id, t.average_speed);
        for (i, &(k, l)) in t.points.iter().enumerate() {
            let v = t.fitted_speed_per_step.get(i).copied().unwrap_or(0.0);
            let _ = writeln!(out, "{k},{l},{v}");
        }
    }
    out
}

/// Inverse of [`format_trajectories`].
pub fn parse_trajectories(text: &str) -> Result<Vec<Trajectory>> {
    let mut out: Vec<Trajectory> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::invalid(format!("trajectory line {}: {raw:?}", n + 1));
        if let Some(rest) = line.strip_prefix("# vehicle ") {
            let mut parts = rest.split_whitespace();
            let id = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let avg = parts
                .next()
                .and_then(|s| s.strip_prefix("avg_speed="))
                .and_then(|s| s.parse().ok())
                .ok_or_else(bad)?;
            out.push(Trajectory {
                id,
                points: Vec::new(),
                fitted_speed_per_step: Vec::new(),
                average_speed: avg,
            });
            continue;
        }
        let t = out.last_mut().ok_or_else(bad)?;
        let mut f = line.split(',');
        let k = f.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let l = f.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let v = f.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        if f.next().is_some() {
            return Err(bad());
        }
        t.points.push((k, l));
        t.fitted_speed_per_step.push(v);
    }
    Ok(out)
}
