//! Synthetic waterfalls: vehicles moving along the fiber, each imprinting
//! its physical impulse response on the channels around it, plus noise.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::physics::{self, ImpulseKernel, KernelForm, PhysicsParams, VehicleGeometry};
use crate::{Error, Result, Waterfall};

/// Vehicle force that deposits a unit-peak track (N).
pub const REFERENCE_FORCE: f64 = 1.0e4;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub n_channels: usize,
    pub n_time: usize,
    /// Meters between channels.
    pub channel_spacing: f64,
    /// Time samples per second.
    pub sample_rate: f64,
    pub physics: PhysicsParams,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sigma: f64,
    /// Probability that a sample is replaced by an outlier spike.
    pub outlier_rate: f64,
    /// Magnitude of outlier spikes.
    pub outlier_amp: f64,
    pub seed: u64,
    /// Load model used for every vehicle's footprint.
    pub kernel_form: KernelForm,
    /// Kernel half width in channels.
    pub kernel_half_width: usize,
    /// Largest admissible |speed| in m/s.
    pub v_max: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_channels: 360,
            n_time: 1024,
            channel_spacing: 0.8,
            sample_rate: 11.0,
            physics: PhysicsParams::default(),
            noise_sigma: 0.1,
            outlier_rate: 0.0,
            outlier_amp: 1.0,
            seed: 0,
            kernel_form: KernelForm::PointLoad,
            kernel_half_width: 20,
            v_max: 45.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels < 8 || self.n_time < 8 {
            return Err(Error::invalid(format!(
                "scene must be at least 8 x 8, got {} x {}",
                self.n_channels, self.n_time
            )));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::invalid("sample rate must be > 0"));
        }
        if !(self.channel_spacing > 0.0 && self.channel_spacing.is_finite()) {
            return Err(Error::invalid("channel spacing must be > 0"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return Err(Error::invalid("outlier rate must be in [0, 1)"));
        }
        if !self.outlier_amp.is_finite() {
            return Err(Error::invalid("outlier amplitude must be finite"));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::invalid("v_max must be > 0"));
        }
        self.physics.validate()
    }

    /// Channels travelled per time sample at `speed` m/s.
    pub fn channels_per_sample(&self, speed: f64) -> f64 {
        speed / (self.sample_rate * self.channel_spacing)
    }
}

/// Piecewise-linear speed over time since entry. Knots are
/// `(seconds since entry, m/s)`; the speed is held constant outside the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    knots: Vec<(f64, f64)>,
}

impl SpeedProfile {
    pub fn constant(speed: f64) -> Self {
        SpeedProfile {
            knots: alloc::vec![(0.0, speed)],
        }
    }

    pub fn from_knots(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Empty("speed profile"));
        }
        if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::NonFinite("speed profile".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("speed profile knot times must increase strictly"));
        }
        Ok(SpeedProfile { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn speed_at(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t <= t1 {
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        k[k.len() - 1].1
    }

    /// Distance travelled between entry and `t` seconds after entry: the
    /// exact integral of the piecewise-linear speed.
    pub fn displacement(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        // breakpoints inside (0, t), in order
        let mut acc = 0.0;
        let mut prev = 0.0;
        for &(tk, _) in self.knots.iter().filter(|(tk, _)| *tk > 0.0 && *tk < t) {
            acc += 0.5 * (self.speed_at(prev) + self.speed_at(tk)) * (tk - prev);
            prev = tk;
        }
        acc + 0.5 * (self.speed_at(prev) + self.speed_at(t)) * (t - prev)
    }

    pub fn max_abs_speed(&self) -> f64 {
        self.knots.iter().fold(0.0, |m, (_, v)| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSpec {
    pub geometry: VehicleGeometry,
    /// Perpendicular distance between the vehicle center line and the fiber (m).
    pub lateral_offset: f64,
    /// Time at which the vehicle is at `entry_channel` (s).
    pub entry_time: f64,
    pub entry_channel: usize,
    /// Signed speed; positive values travel toward higher channels.
    pub speed: SpeedProfile,
}

impl VehicleSpec {
    /// A default-geometry vehicle at constant speed on the fiber line.
    pub fn constant(entry_time: f64, entry_channel: usize, speed: f64) -> Self {
        VehicleSpec {
            geometry: VehicleGeometry::default(),
            lateral_offset: 0.0,
            entry_time,
            entry_channel,
            speed: SpeedProfile::constant(speed),
        }
    }

    /// Fractional channel position at absolute time `t`, or `None` before entry.
    pub fn position(&self, t: f64, channel_spacing: f64) -> Option<f64> {
        if t < self.entry_time {
            return None;
        }
        Some(self.entry_channel as f64 + self.speed.displacement(t - self.entry_time) / channel_spacing)
    }
}

/// Channel position of one vehicle at each time sample it spends inside
/// the fiber span.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VehicleTrack {
    pub points: Vec<(usize, f64)>,
}

impl VehicleTrack {
    pub fn first(&self) -> Option<(usize, f64)> {
        self.points.first().copied()
    }

    pub fn last(&self) -> Option<(usize, f64)> {
        self.points.last().copied()
    }

    pub fn position_at(&self, row: usize) -> Option<f64> {
        self.points.iter().find(|(k, _)| *k == row).map(|(_, p)| *p)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub tracks: Vec<VehicleTrack>,
}

fn check_vehicle(config: &SceneConfig, v: &VehicleSpec, idx: usize) -> Result<()> {
    if v.entry_channel >= config.n_channels {
        return Err(Error::invalid(format!(
            "vehicle {idx}: entry channel {} outside [0, {})",
            v.entry_channel, config.n_channels
        )));
    }
    let window = config.n_time as f64 / config.sample_rate;
    if !(v.entry_time >= 0.0 && v.entry_time < window) {
        return Err(Error::invalid(format!(
            "vehicle {idx}: entry time {} s outside the {window} s window",
            v.entry_time
        )));
    }
    if v.speed.max_abs_speed() > config.v_max {
        return Err(Error::invalid(format!(
            "vehicle {idx}: speed {} m/s exceeds v_max {}",
            v.speed.max_abs_speed(),
            config.v_max
        )));
    }
    if !v.lateral_offset.is_finite() {
        return Err(Error::NonFinite(format!("vehicle {idx} lateral offset")));
    }
    v.geometry.validate()
}

/// Footprint of one vehicle: the normalized kernel scaled by its load.
pub fn vehicle_footprint(config: &SceneConfig, v: &VehicleSpec) -> Result<(ImpulseKernel, f64)> {
    let kern = physics::kernel_for(
        config.kernel_form,
        &v.geometry,
        &config.physics,
        v.lateral_offset,
        config.channel_spacing,
        config.kernel_half_width,
    )?;
    Ok((kern, v.geometry.total_force() / REFERENCE_FORCE))
}

/// Noise-free waterfall and ground-truth tracks for the given vehicles.
///
/// At every time sample each vehicle that has entered deposits its kernel
/// centered on its fractional channel position; taps falling between two
/// channels are split linearly. Vehicles superpose additively, in list order.
pub fn simulate_clean(config: &SceneConfig, vehicles: &[VehicleSpec]) -> Result<(Waterfall, GroundTruth)> {
    config.validate()?;
    let n = config.n_channels;
    let mut w = Waterfall::zeros(n, config.n_time, config.channel_spacing, config.sample_rate);
    let mut truth = GroundTruth::default();
    for (idx, v) in vehicles.iter().enumerate() {
        check_vehicle(config, v, idx)?;
        let (kern, amplitude) = vehicle_footprint(config, v)?;
        let h = kern.half_width() as f64;
        let mut track = VehicleTrack::default();
        for t in 0..config.n_time {
            let Some(pos) = v.position(t as f64 / config.sample_rate, config.channel_spacing) else {
                continue;
            };
            if (0.0..=(n - 1) as f64).contains(&pos) {
                track.points.push((t, pos));
            }
            for (j, &tap) in kern.taps().iter().enumerate() {
                let q = pos + j as f64 - h;
                let lo = libm::floor(q);
                let frac = q - lo;
                let deposit = amplitude * tap;
                if lo >= 0.0 && lo < n as f64 {
                    w.add(lo as usize, t, (1.0 - frac) * deposit);
                }
                let hi = lo + 1.0;
                if frac > 0.0 && hi >= 0.0 && hi < n as f64 {
                    w.add(hi as usize, t, frac * deposit);
                }
            }
        }
        truth.tracks.push(track);
    }
    Ok((w, truth))
}

/// `count` default-geometry vehicles at constant speed. Each enters at one
/// end of the fiber, chosen at random, at a uniform time in the first three
/// quarters of the window, with a speed uniform in `[v_min, config.v_max]`.
pub fn random_vehicles<R: Rng>(
    config: &SceneConfig,
    count: usize,
    v_min: f64,
    rng: &mut R,
) -> Result<Vec<VehicleSpec>> {
    config.validate()?;
    if !(v_min > 0.0 && v_min <= config.v_max) {
        return Err(Error::invalid(format!(
            "v_min must lie in (0, {}], got {v_min}",
            config.v_max
        )));
    }
    let window = config.n_time as f64 / config.sample_rate;
    Ok((0..count)
        .map(|_| {
            let entry_time = rng.random_range(0.0..0.75 * window);
            let speed = if v_min < config.v_max {
                rng.random_range(v_min..config.v_max)
            } else {
                v_min
            };
            if rng.random_bool(0.5) {
                VehicleSpec::constant(entry_time, 0, speed)
            } else {
                VehicleSpec::constant(entry_time, config.n_channels - 1, -speed)
            }
        })
        .collect())
}

/// Adds i.i.d. Gaussian noise, then replaces a Bernoulli subset of samples
/// with spikes of random sign. Fully determined by `config.seed`.
pub fn add_noise(w: &Waterfall, config: &SceneConfig) -> Waterfall {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    add_noise_with(w, config, &mut rng)
}

/// [`add_noise`] drawing from a caller-owned generator.
pub fn add_noise_with<R: Rng>(w: &Waterfall, config: &SceneConfig, rng: &mut R) -> Waterfall {
    let mut out = w.clone();
    out.normalized = false;
    if config.noise_sigma > 0.0 {
        for v in out.values_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += config.noise_sigma * z;
        }
    }
    if config.outlier_rate > 0.0 {
        for v in out.values_mut() {
            if rng.random_bool(config.outlier_rate) {
                *v = if rng.random_bool(0.5) {
                    config.outlier_amp
                } else {
                    -config.outlier_amp
                };
            }
        }
    }
    out
}

/// Affine map `v -> (v - offset) * scale` applied by [`normalize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub offset: f64,
    pub scale: f64,
}

impl AffineMap {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.offset) * self.scale
    }

    /// Inverse map; a zero scale (constant input) inverts to the offset.
    pub fn invert(&self, v: f64) -> f64 {
        if self.scale == 0.0 {
            self.offset
        } else {
            v / self.scale + self.offset
        }
    }

    pub fn apply_to(&self, w: &Waterfall) -> Waterfall {
        let mut out = w.clone();
        for v in out.values_mut() {
            *v = self.apply(*v);
        }
        out
    }

    pub fn invert_on(&self, w: &Waterfall) -> Waterfall {
        let mut out = w.clone();
        for v in out.values_mut() {
            *v = self.invert(*v);
        }
        out.normalized = false;
        out
    }
}

/// Min-max normalization onto `[0, 1]`, returning the map that was applied.
/// A constant waterfall maps to all zeros.
pub fn normalize_with_map(w: &Waterfall) -> (Waterfall, AffineMap) {
    let (lo, hi) = w.min_max().unwrap_or((0.0, 0.0));
    let map = if hi > lo {
        AffineMap {
            offset: lo,
            scale: 1.0 / (hi - lo),
        }
    } else {
        AffineMap { offset: lo, scale: 0.0 }
    };
    let mut out = w.clone();
    for v in out.values_mut() {
        *v = if map.scale == 0.0 {
            0.0
        } else {
            ((*v - lo) / (hi - lo)).clamp(0.0, 1.0)
        };
    }
    out.normalized = true;
    (out, map)
}

pub fn normalize(w: &Waterfall) -> Waterfall {
    normalize_with_map(w).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn small() -> SceneConfig {
        SceneConfig {
            n_channels: 64,
            n_time: 48,
            kernel_half_width: 8,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn no_vehicles_gives_zeros() {
        let (w, gt) = simulate_clean(&small(), &[]).unwrap();
        assert!(w.values().iter().all(|&v| v == 0.0));
        assert!(gt.tracks.is_empty());
    }

    #[test]
    fn stationary_vehicle_gives_identical_columns() {
        let v = VehicleSpec::constant(0.0, 30, 0.0);
        let (w, gt) = simulate_clean(&small(), &[v]).unwrap();
        let first = w.column(0);
        for t in 1..w.n_time() {
            assert_eq!(w.column(t), first);
        }
        assert_eq!(gt.tracks[0].points.len(), 48);
        assert!(first.iter().any(|&x| x > 0.0));
    }

    #[test]
    fn constant_speed_slope() {
        let cfg = SceneConfig {
            kernel_half_width: 4,
            ..SceneConfig::default()
        };
        let v = VehicleSpec::constant(1.0, 0, 20.0);
        let (_, gt) = simulate_clean(&cfg, &[v]).unwrap();
        let pts = &gt.tracks[0].points;
        // independent closed form: p(k) = (k/fs - t0) * v / spacing
        for &(k, p) in pts {
            let expected = (k as f64 / 11.0 - 1.0) * 20.0 / 0.8;
            assert!((p - expected).abs() < 1e-12, "row {k}");
        }
        let slope = (pts[pts.len() - 1].1 - pts[0].1) / (pts[pts.len() - 1].0 - pts[0].0) as f64;
        assert!((slope - 20.0 / (11.0 * 0.8)).abs() < 1e-12);
        assert!((slope - 2.2727).abs() < 1e-4);
    }

    #[test]
    fn least_squares_slope_of_truth() {
        let cfg = SceneConfig {
            kernel_half_width: 4,
            ..SceneConfig::default()
        };
        for speed in [8.0, 17.5, 33.0] {
            let (_, gt) = simulate_clean(&cfg, &[VehicleSpec::constant(0.3, 5, speed)]).unwrap();
            let pts = &gt.tracks[0].points;
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0 as f64).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 as f64 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
            assert!((sxy / sxx - cfg.channels_per_sample(speed)).abs() < 1e-9);
            assert!(pts.windows(2).all(|w| w[1].0 > w[0].0));
        }
    }

    #[test]
    fn piecewise_linear_displacement() {
        let p = SpeedProfile::from_knots(vec![(0.0, 20.0), (10.0, 10.0)]).unwrap();
        assert_eq!(p.displacement(0.0), 0.0);
        assert!((p.displacement(10.0) - 150.0).abs() < 1e-12);
        assert!((p.displacement(12.0) - 170.0).abs() < 1e-12);
        // 20t - t^2/2 on [0, 10]
        assert!((p.displacement(4.0) - 72.0).abs() < 1e-12);
        assert!(SpeedProfile::from_knots(vec![(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn superposition() {
        let cfg = small();
        let a = VehicleSpec::constant(0.5, 0, 15.0);
        let mut b = VehicleSpec::constant(1.2, 10, 25.0);
        b.geometry.wheel_weights = [4000.0; 4];
        let (wa, _) = simulate_clean(&cfg, &[a.clone()]).unwrap();
        let (wb, _) = simulate_clean(&cfg, &[b.clone()]).unwrap();
        let (wab, _) = simulate_clean(&cfg, &[a, b]).unwrap();
        for ((x, y), z) in wa.values().iter().zip(wb.values()).zip(wab.values()) {
            assert!((x + y - z).abs() <= 1e-15 * (1.0 + z.abs()));
        }
    }

    #[test]
    fn amplitude_follows_load() {
        let cfg = small();
        let light = VehicleSpec::constant(0.0, 30, 0.0);
        let mut heavy = light.clone();
        heavy.geometry.wheel_weights = [5000.0; 4];
        let (wl, _) = simulate_clean(&cfg, &[light]).unwrap();
        let (wh, _) = simulate_clean(&cfg, &[heavy]).unwrap();
        assert_eq!(wl.get(30, 0), 1.0);
        assert_eq!(wh.get(30, 0), 2.0);
    }

    #[test]
    fn rejects_bad_vehicles() {
        let cfg = small();
        assert!(simulate_clean(&cfg, &[VehicleSpec::constant(0.0, 64, 10.0)]).is_err());
        assert!(simulate_clean(&cfg, &[VehicleSpec::constant(100.0, 0, 10.0)]).is_err());
        assert!(simulate_clean(&cfg, &[VehicleSpec::constant(0.0, 0, 80.0)]).is_err());
        let mut bad = VehicleSpec::constant(0.0, 0, 10.0);
        bad.geometry.axle_length = -1.0;
        assert!(simulate_clean(&cfg, &[bad]).is_err());
    }

    #[test]
    fn noise_free_config_is_identity() {
        let cfg = SceneConfig {
            noise_sigma: 0.0,
            outlier_rate: 0.0,
            ..small()
        };
        let (w, _) = simulate_clean(&cfg, &[VehicleSpec::constant(0.0, 0, 20.0)]).unwrap();
        assert_eq!(add_noise(&w, &cfg), w);
    }

    #[test]
    fn noise_is_seeded() {
        let cfg = SceneConfig {
            seed: 99,
            outlier_rate: 0.01,
            ..small()
        };
        let w = Waterfall::zeros(64, 48, 0.8, 11.0);
        assert_eq!(add_noise(&w, &cfg), add_noise(&w, &cfg));
        let other = SceneConfig {
            seed: 100,
            ..cfg.clone()
        };
        assert_ne!(add_noise(&w, &cfg), add_noise(&w, &other));
    }

    #[test]
    fn noise_std_matches_sigma() {
        let cfg = SceneConfig {
            seed: 7,
            noise_sigma: 0.1,
            ..SceneConfig::default()
        };
        let w = Waterfall::zeros(360, 1024, 0.8, 11.0);
        let noisy = add_noise(&w, &cfg);
        let n = noisy.values().len() as f64;
        let mean = noisy.values().iter().sum::<f64>() / n;
        let var = noisy.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // standard error of the sample std at n = 368640 is about 1.2e-4
        assert!((var.sqrt() - 0.1).abs() < 0.005, "{}", var.sqrt());
    }

    #[test]
    fn outliers_take_the_configured_amplitude() {
        let cfg = SceneConfig {
            seed: 1,
            noise_sigma: 0.0,
            outlier_rate: 0.05,
            outlier_amp: 3.0,
            ..small()
        };
        let w = Waterfall::zeros(64, 48, 0.8, 11.0);
        let noisy = add_noise(&w, &cfg);
        let spikes = noisy.values().iter().filter(|v| v.abs() == 3.0).count();
        assert!(spikes > 50 && spikes < 260, "{spikes}");
        assert!(noisy.values().iter().all(|v| *v == 0.0 || v.abs() == 3.0));
    }

    #[test]
    fn normalize_cases() {
        let w = Waterfall::from_values(2, 2, vec![0.0, 1.0, 0.25, 1.0], 0.8, 11.0).unwrap();
        let n = normalize(&w);
        assert_eq!(n.values(), w.values());
        assert!(n.normalized);

        let c = Waterfall::from_values(2, 2, vec![3.0; 4], 0.8, 11.0).unwrap();
        assert!(normalize(&c).values().iter().all(|&v| v == 0.0));

        let r = Waterfall::from_values(1, 3, vec![-2.0, 2.0, 6.0], 0.8, 11.0).unwrap();
        let (n, map) = normalize_with_map(&r);
        assert_eq!(n.values()[1], 0.5);
        assert_eq!(map.invert(0.5), 2.0);
    }

    proptest! {
        #[test]
        fn normalized_range(vals in proptest::collection::vec(-1e3f64..1e3, 16)) {
            let w = Waterfall::from_values(4, 4, vals, 0.8, 11.0).unwrap();
            let n = normalize(&w);
            let (lo, hi) = n.min_max().unwrap();
            prop_assert!(lo >= 0.0 && hi <= 1.0);
            if w.min_max().map(|(a, b)| b > a).unwrap() {
                prop_assert_eq!(lo, 0.0);
                prop_assert_eq!(hi, 1.0);
            }
        }
    }
}
