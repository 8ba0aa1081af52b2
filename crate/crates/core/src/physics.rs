//! Quasi-static ground deformation under a surface load and the resulting
//! DAS impulse response.
//!
//! Ground deformation follows the Flamant-Boussinesq solution for an elastic
//! half-space. A DAS channel measures the deformation difference across its
//! gauge length, which gives the spatial kernel a vehicle imprints on the
//! fiber. Two forms are provided: a single point load and a four-wheel
//! vehicle.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::{Error, Result};

/// Elastic half-space and fiber installation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams {
    /// Uniform shear modulus `G` in Pa.
    pub shear_modulus: f64,
    /// Poisson's ratio, in `[0, 0.5)`.
    pub poisson: f64,
    /// Fiber burial depth in meters.
    pub depth: f64,
    /// DAS gauge length in meters.
    pub gauge_length: f64,
}

impl Default for PhysicsParams {
    /// Compacted soil (G = 20 MPa, nu = 0.25), fiber 7.5 cm deep, 0.8 m gauge.
    fn default() -> Self {
        PhysicsParams {
            shear_modulus: 2.0e7,
            poisson: 0.25,
            depth: 0.075,
            gauge_length: 0.8,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.shear_modulus > 0.0 && self.shear_modulus.is_finite()) {
            return Err(Error::invalid(format!(
                "shear modulus must be > 0, got {}",
                self.shear_modulus
            )));
        }
        if !(0.0..0.5).contains(&self.poisson) {
            return Err(Error::invalid(format!(
                "poisson ratio must be in [0, 0.5), got {}",
                self.poisson
            )));
        }
        if !(self.depth > 0.0 && self.depth.is_finite()) {
            return Err(Error::invalid(format!("depth must be > 0, got {}", self.depth)));
        }
        if !(self.gauge_length > 0.0 && self.gauge_length.is_finite()) {
            return Err(Error::invalid(format!(
                "gauge length must be > 0, got {}",
                self.gauge_length
            )));
        }
        Ok(())
    }
}

/// Wheel layout and loads of a four-wheeled vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleGeometry {
    /// Lateral distance between the left and right wheels (m).
    pub axle_length: f64,
    /// Longitudinal distance between front and rear axles (m).
    pub wheelbase: f64,
    /// Wheel loads in N: left-front, right-front, right-rear, left-rear.
    pub wheel_weights: [f64; 4],
}

impl Default for VehicleGeometry {
    /// A compact 10 kN car with equal wheel loads.
    fn default() -> Self {
        VehicleGeometry {
            axle_length: 1.0,
            wheelbase: 2.6,
            wheel_weights: [2500.0; 4],
        }
    }
}

impl VehicleGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.axle_length > 0.0 && self.axle_length.is_finite()) {
            return Err(Error::invalid(format!(
                "axle length must be > 0, got {}",
                self.axle_length
            )));
        }
        if !(self.wheelbase > 0.0 && self.wheelbase.is_finite()) {
            return Err(Error::invalid(format!("wheelbase must be > 0, got {}", self.wheelbase)));
        }
        if self.wheel_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("wheel weights must be finite and >= 0"));
        }
        if self.total_force() <= 0.0 {
            return Err(Error::invalid("total vehicle force must be > 0"));
        }
        Ok(())
    }

    /// Total force `F`, the sum of the four wheel loads.
    pub fn total_force(&self) -> f64 {
        self.wheel_weights.iter().sum()
    }

    /// Wheel coordinates `(alpha, beta)` relative to the vehicle center, in
    /// the same order as `wheel_weights`.
    pub fn wheel_offsets(&self) -> [(f64, f64); 4] {
        let (ha, hb) = (self.axle_length / 2.0, self.wheelbase / 2.0);
        [(hb, ha), (hb, -ha), (-hb, -ha), (-hb, ha)]
    }
}

/// Which load model a sampled kernel is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelForm {
    /// A single point load carrying the full vehicle force.
    #[default]
    PointLoad,
    /// Four wheels at the corners of the vehicle footprint.
    FourWheel,
}

/// Quasi-static deformation at `(dx, dy, depth)` caused by a surface point
/// load `force` at the origin.
pub fn deformation(dx: f64, dy: f64, params: &PhysicsParams, force: f64) -> Result<f64> {
    let dz = params.depth;
    let r2 = dx * dx + dy * dy + dz * dz;
    if r2 == 0.0 {
        return Err(Error::Singular("deformation evaluated at the load point"));
    }
    let r = libm::sqrt(r2);
    let shape = (dx / r2) * (dz / r + (2.0 * params.poisson - 1.0) / (1.0 + dz / r));
    Ok(force / (4.0 * PI * params.shear_modulus) * shape)
}

/// DAS response of one channel at along-fiber offset `dx` to a point load,
/// i.e. the deformation difference across the gauge divided by its length.
pub fn point_load_kernel(dx: f64, params: &PhysicsParams, force: f64, dy: f64) -> Result<f64> {
    let half = params.gauge_length / 2.0;
    let behind = deformation(dx - half, dy, params, force)?;
    let ahead = deformation(dx + half, dy, params, force)?;
    Ok((behind - ahead).abs() / params.gauge_length)
}

/// DAS response to a four-wheel vehicle whose center sits at along-fiber
/// offset `dx` and lateral offset `dy`.
///
/// Each wheel contributes its unit-force deformation weighted by its load.
/// Unlike [`point_load_kernel`] the gauge-length division is not applied.
pub fn vehicle_kernel(dx: f64, geom: &VehicleGeometry, params: &PhysicsParams, dy: f64) -> Result<f64> {
    let half = params.gauge_length / 2.0;
    let weighted = |x: f64| -> Result<f64> {
        let mut acc = 0.0;
        for (&w, (alpha, beta)) in geom.wheel_weights.iter().zip(geom.wheel_offsets()) {
            acc += w * deformation(x + alpha, dy + beta, params, 1.0)?;
        }
        Ok(acc)
    };
    let front = weighted(dx + half)?;
    let rear = weighted(dx - half)?;
    Ok((rear - front).abs())
}

/// A sampled, odd-length spatial impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseKernel {
    taps: Vec<f64>,
    pub channel_spacing: f64,
    pub normalized: bool,
}

impl ImpulseKernel {
    pub fn from_taps(taps: Vec<f64>, channel_spacing: f64, normalized: bool) -> Result<Self> {
        if taps.len() % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel must have an odd tap count, got {}",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("kernel taps".into()));
        }
        Ok(ImpulseKernel {
            taps,
            channel_spacing,
            normalized,
        })
    }

    /// The single-tap kernel `[1]`.
    pub fn identity(channel_spacing: f64) -> Self {
        ImpulseKernel {
            taps: alloc::vec![1.0],
            channel_spacing,
            normalized: true,
        }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn half_width(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    pub fn center(&self) -> f64 {
        self.taps[self.half_width()]
    }

    pub fn is_zero(&self) -> bool {
        self.taps.iter().all(|&t| t == 0.0)
    }

    /// Divides every tap by the largest magnitude so that it becomes exactly 1.
    pub fn normalize(mut self) -> Result<Self> {
        let peak = self.taps.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        if peak == 0.0 {
            return Err(Error::DegenerateKernel);
        }
        for t in &mut self.taps {
            *t /= peak;
        }
        self.normalized = true;
        Ok(self)
    }
}

fn sample<F>(channel_spacing: f64, half_width: usize, mut eval: F) -> Result<ImpulseKernel>
where
    F: FnMut(f64) -> Result<f64>,
{
    if half_width < 1 {
        return Err(Error::invalid("kernel half width must be >= 1"));
    }
    if !(channel_spacing > 0.0 && channel_spacing.is_finite()) {
        return Err(Error::invalid(format!(
            "channel spacing must be > 0, got {channel_spacing}"
        )));
    }
    let taps = (0..=2 * half_width)
        .map(|j| eval((j as f64 - half_width as f64) * channel_spacing))
        .collect::<Result<Vec<_>>>()?;
    ImpulseKernel::from_taps(taps, channel_spacing, false)?.normalize()
}

/// Normalized four-wheel kernel sampled on the channel grid.
pub fn sampled_kernel(
    geom: &VehicleGeometry,
    params: &PhysicsParams,
    dy: f64,
    channel_spacing: f64,
    half_width: usize,
) -> Result<ImpulseKernel> {
    params.validate()?;
    geom.validate()?;
    sample(channel_spacing, half_width, |dx| vehicle_kernel(dx, geom, params, dy))
}

/// Normalized point-load kernel sampled on the channel grid. The load
/// magnitude cancels under normalization.
pub fn sampled_point_kernel(
    params: &PhysicsParams,
    dy: f64,
    channel_spacing: f64,
    half_width: usize,
) -> Result<ImpulseKernel> {
    params.validate()?;
    sample(channel_spacing, half_width, |dx| point_load_kernel(dx, params, 1.0, dy))
}

/// Builds the kernel of the requested form.
pub fn kernel_for(
    form: KernelForm,
    geom: &VehicleGeometry,
    params: &PhysicsParams,
    dy: f64,
    channel_spacing: f64,
    half_width: usize,
) -> Result<ImpulseKernel> {
    match form {
        KernelForm::PointLoad => sampled_point_kernel(params, dy, channel_spacing, half_width),
        KernelForm::FourWheel => sampled_kernel(geom, params, dy, channel_spacing, half_width),
    }
}
