//! Optical wireless channel between ceiling LEDs and an upward-facing photodiode.
//!
//! DC gains only: a Lambertian line-of-sight path plus one diffuse bounce off
//! wall patches. Received electrical power is the squared photocurrent plus the
//! shot and thermal noise variance.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementary charge, C.
pub const ELECTRON_CHARGE: f64 = 1.602176634e-19;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380649e-23;
/// Noise bandwidth factor I2.
pub const NOISE_BANDWIDTH_FACTOR_I2: f64 = 0.562;
/// Noise bandwidth factor I3.
pub const NOISE_BANDWIDTH_FACTOR_I3: f64 = 0.0868;

/// Smallest half-power angle accepted by [`lambertian_order`].
pub const DEFAULT_MIN_HALF_POWER_ANGLE: f64 = 1e-6;
/// Distances below this are treated as coincident points.
pub const MIN_DISTANCE_M: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Vec3::new(v[0], v[1], v[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// A ceiling-mounted LED pointing straight down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedAnchor {
    pub position: Vec3,
    pub emit_power_w: f64,
    pub half_power_angle_rad: f64,
    /// Cleared when the LED is blacked out or occluded.
    pub active: bool,
}

impl LedAnchor {
    pub fn validate(&self, ceiling_height: f64) -> Result<()> {
        if (self.position.z - ceiling_height).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "LED at z={} is not on the ceiling (z={ceiling_height})",
                self.position.z
            )));
        }
        if !(self.emit_power_w >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "negative LED power {}",
                self.emit_power_w
            )));
        }
        if !(self.half_power_angle_rad > 0.0 && self.half_power_angle_rad < PI / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "half-power angle {} rad outside (0, pi/2)",
                self.half_power_angle_rad
            )));
        }
        Ok(())
    }
}

/// Upward-facing photodiode with an optical filter and concentrator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Photodiode {
    pub area_m2: f64,
    pub fov_rad: f64,
    pub responsivity_a_per_w: f64,
    pub filter_gain: f64,
    pub concentrator_index: f64,
}

impl Photodiode {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("area_m2", self.area_m2),
            ("fov_rad", self.fov_rad),
            ("responsivity_a_per_w", self.responsivity_a_per_w),
            ("filter_gain", self.filter_gain),
            ("concentrator_index", self.concentrator_index),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "photodiode {name} must be positive, got {v}"
                )));
            }
        }
        if self.fov_rad > PI / 2.0 {
            return Err(Error::InvalidArgument(format!(
                "photodiode FOV {} rad exceeds pi/2",
                self.fov_rad
            )));
        }
        Ok(())
    }
}

/// Receiver noise parameters (shot + thermal).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub background_current_a: f64,
    pub bandwidth_hz: f64,
    pub temperature_k: f64,
    pub open_loop_gain: f64,
    /// Fixed capacitance per unit area, F/m^2.
    pub capacitance_per_area: f64,
    pub fet_noise_factor: f64,
    pub transconductance_s: f64,
    pub i2: f64,
    pub i3: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            background_current_a: 740e-6,
            bandwidth_hz: 5e6,
            temperature_k: 295.0,
            open_loop_gain: 10.0,
            // 112 pF/cm^2
            capacitance_per_area: 112e-12 / 1e-4,
            fet_noise_factor: 1.5,
            transconductance_s: 30e-3,
            i2: NOISE_BANDWIDTH_FACTOR_I2,
            i3: NOISE_BANDWIDTH_FACTOR_I3,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if self.i2 != NOISE_BANDWIDTH_FACTOR_I2 || self.i3 != NOISE_BANDWIDTH_FACTOR_I3 {
            return Err(Error::InvalidArgument(format!(
                "noise bandwidth factors are fixed at I2={NOISE_BANDWIDTH_FACTOR_I2}, I3={NOISE_BANDWIDTH_FACTOR_I3}"
            )));
        }
        if !(self.background_current_a >= 0.0) {
            return Err(Error::InvalidArgument(
                "background current must be non-negative".into(),
            ));
        }
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("temperature_k", self.temperature_k),
            ("open_loop_gain", self.open_loop_gain),
            ("capacitance_per_area", self.capacitance_per_area),
            ("fet_noise_factor", self.fet_noise_factor),
            ("transconductance_s", self.transconductance_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "noise {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Ambient-light part of the shot noise, A^2.
    pub fn background_shot_variance(&self) -> f64 {
        2.0 * ELECTRON_CHARGE * self.background_current_a * self.i2 * self.bandwidth_hz
    }

    /// Signal-dependent shot noise for a photocurrent `signal_current_a`, A^2.
    pub fn signal_shot_variance(&self, signal_current_a: f64) -> f64 {
        2.0 * ELECTRON_CHARGE * signal_current_a * self.bandwidth_hz
    }

    /// Thermal noise (feedback resistor + FET channel), A^2.
    pub fn thermal_variance(&self, pd_area_m2: f64) -> f64 {
        let kt = BOLTZMANN * self.temperature_k;
        let b = self.bandwidth_hz;
        let eta_a = self.capacitance_per_area * pd_area_m2;
        let feedback = 8.0 * PI * kt / self.open_loop_gain * eta_a * self.i2 * b * b;
        let fet = 16.0 * PI * PI * kt * self.fet_noise_factor / self.transconductance_s
            * eta_a
            * eta_a
            * self.i3
            * b
            * b
            * b;
        feedback + fet
    }

    /// Total noise variance. The shot term uses the noiseless photocurrent.
    pub fn variance(&self, pd_area_m2: f64, signal_current_a: f64) -> f64 {
        self.signal_shot_variance(signal_current_a)
            + self.background_shot_variance()
            + self.thermal_variance(pd_area_m2)
    }
}

/// How noise enters the received power.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Adds the noise variance as a fixed bias.
    #[default]
    Deterministic,
    /// Also perturbs the photocurrent with Gaussian noise of that variance.
    Stochastic,
}

/// A small diffuse reflector on a wall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallPatch {
    pub center: Vec3,
    /// Unit normal pointing into the room.
    pub normal: Vec3,
    pub area_m2: f64,
    /// Vertical extent; the patch spans `center.z +- height_m / 2`.
    pub height_m: f64,
    pub reflectance: f64,
}

impl WallPatch {
    /// A vertical `width_m x height_m` patch on a wall with horizontal `normal`.
    pub fn new(
        center: Vec3,
        normal: Vec3,
        width_m: f64,
        height_m: f64,
        reflectance: f64,
    ) -> Result<Self> {
        if (normal.norm() - 1.0).abs() > 1e-12 || normal.z != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "wall normal {normal:?} is not a horizontal unit vector"
            )));
        }
        if !(width_m > 0.0 && height_m > 0.0) || !(0.0..=1.0).contains(&reflectance) {
            return Err(Error::InvalidArgument(format!(
                "wall patch {width_m} x {height_m} m / reflectance {reflectance} out of range"
            )));
        }
        Ok(WallPatch {
            center,
            normal,
            area_m2: width_m * height_m,
            height_m,
            reflectance,
        })
    }

    /// The part of the patch above height `z`, or `None` if nothing is left.
    fn above(&self, z: f64) -> Option<WallPatch> {
        let top = self.center.z + 0.5 * self.height_m;
        if z >= top {
            return None;
        }
        let height_m = top - z;
        Some(WallPatch {
            center: Vec3::new(self.center.x, self.center.y, z + 0.5 * height_m),
            area_m2: self.area_m2 * height_m / self.height_m,
            height_m,
            ..self.clone()
        })
    }
}

/// Tiles the four walls of an `L x W x H` room with patches of edge close to `edge_m`.
/// Floor and ceiling are not included.
pub fn wall_patches(dims: Vec3, edge_m: f64, reflectance: f64) -> Result<Vec<WallPatch>> {
    if !(edge_m > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "patch edge must be positive, got {edge_m}"
        )));
    }
    let cells = |len: f64| ((len / edge_m) - 1e-9).ceil().max(1.0) as usize;
    let nz = cells(dims.z);
    let dz = dims.z / nz as f64;
    let mut patches = Vec::new();
    // (fixed coordinate, along-wall length, normal, along-x?)
    let walls = [
        (0.0, dims.y, Vec3::new(1.0, 0.0, 0.0), false),
        (dims.x, dims.y, Vec3::new(-1.0, 0.0, 0.0), false),
        (0.0, dims.x, Vec3::new(0.0, 1.0, 0.0), true),
        (dims.y, dims.x, Vec3::new(0.0, -1.0, 0.0), true),
    ];
    for (fixed, len, normal, along_x) in walls {
        let nu = cells(len);
        let du = len / nu as f64;
        for iu in 0..nu {
            let u = (iu as f64 + 0.5) * du;
            for iz in 0..nz {
                let z = (iz as f64 + 0.5) * dz;
                let center = if along_x {
                    Vec3::new(u, fixed, z)
                } else {
                    Vec3::new(fixed, u, z)
                };
                patches.push(WallPatch::new(center, normal, du, dz, reflectance)?);
            }
        }
    }
    Ok(patches)
}

/// Lambertian order `m` from the LED half-power angle.
pub fn lambertian_order(half_power_angle_rad: f64) -> Result<f64> {
    lambertian_order_with_min(half_power_angle_rad, DEFAULT_MIN_HALF_POWER_ANGLE)
}

pub fn lambertian_order_with_min(half_power_angle_rad: f64, min_angle_rad: f64) -> Result<f64> {
    let c = half_power_angle_rad.cos();
    if !(half_power_angle_rad >= min_angle_rad)
        || half_power_angle_rad >= std::f64::consts::FRAC_PI_2
        || !(c > 0.0)
        || c >= 1.0
    {
        return Err(Error::Domain(format!(
            "half-power angle {half_power_angle_rad} rad gives no finite Lambertian order"
        )));
    }
    Ok(-std::f64::consts::LN_2 / c.ln())
}

/// `cos^m` with an exact integer power when `m` is (numerically) integral.
fn lambertian_pow(cos: f64, m: f64) -> f64 {
    let r = m.round();
    if (m - r).abs() < 1e-9 && r.abs() < 64.0 {
        cos.powi(r as i32)
    } else {
        cos.powf(m)
    }
}

/// Optical concentrator gain `n^2 / sin^2(FOV)` inside the FOV, zero outside.
pub fn concentrator_gain(incidence_rad: f64, pd: &Photodiode) -> f64 {
    if incidence_rad <= pd.fov_rad {
        let s = pd.fov_rad.sin();
        pd.concentrator_index * pd.concentrator_index / (s * s)
    } else {
        0.0
    }
}

/// Line-of-sight DC gain from `led` to a photodiode at `pd_position`.
pub fn los_gain(led: &LedAnchor, pd_position: Vec3, pd: &Photodiode) -> Result<f64> {
    let m = lambertian_order(led.half_power_angle_rad)?;
    los_gain_with_order(led, m, pd_position, pd)
}

fn los_gain_with_order(led: &LedAnchor, m: f64, pd_position: Vec3, pd: &Photodiode) -> Result<f64> {
    let v = pd_position - led.position;
    let d = v.norm();
    if d < MIN_DISTANCE_M {
        return Err(Error::DegenerateGeometry { distance: d });
    }
    // LED normal is -z and receiver normal is +z, so both cosines equal the
    // normalized height difference.
    let cos = -v.z / d;
    if cos <= 0.0 {
        return Ok(0.0);
    }
    let incidence = cos.min(1.0).acos();
    let g = concentrator_gain(incidence, pd);
    if g == 0.0 {
        return Ok(0.0);
    }
    Ok(
        (m + 1.0) * pd.area_m2 * lambertian_pow(cos, m) * cos * pd.filter_gain * g
            / (2.0 * PI * d * d),
    )
}

/// LED-to-patch leg, already multiplied by the patch reflectance.
fn incidence_leg(led: &LedAnchor, m: f64, patch: &WallPatch) -> f64 {
    let v = patch.center - led.position;
    let d = v.norm();
    if d < MIN_DISTANCE_M {
        return 0.0;
    }
    let cos_irr = -v.z / d;
    let cos_inc = -v.dot(patch.normal) / d;
    if cos_irr <= 0.0 || cos_inc <= 0.0 {
        return 0.0;
    }
    let h_in =
        patch.area_m2 * (m + 1.0) / (2.0 * PI * d * d) * lambertian_pow(cos_irr, m) * cos_inc;
    patch.reflectance * h_in
}

/// How much of a patch the receiver sees.
enum Visible {
    Hidden,
    /// Whole patch, with its patch-to-receiver leg.
    Full(f64),
    /// Only the part above the FOV edge, evaluated at that part's center.
    Clipped(WallPatch, f64),
}

/// Clips `patch` at the edge of the receiver's field of view.
///
/// The FOV cone meets a wall column at distance `r` at height
/// `pd.z + r * cot(fov)`. Sampling only the patch center would switch a
/// straddling patch fully on or off, an O(edge) error that does not shrink
/// smoothly as the tiling is refined.
fn visible(patch: &WallPatch, pd_position: Vec3, pd: &Photodiode, cos_fov: f64) -> Visible {
    let dx = patch.center.x - pd_position.x;
    let dy = patch.center.y - pd_position.y;
    let c = cos_fov.max(0.0);
    let edge_z = pd_position.z + (dx * dx + dy * dy).sqrt() * c / (1.0 - c * c).sqrt();
    if patch.center.z - 0.5 * patch.height_m >= edge_z {
        return Visible::Full(reflection_leg(patch, pd_position, pd, cos_fov));
    }
    match patch.above(edge_z) {
        Some(part) => {
            let h = reflection_leg(&part, pd_position, pd, cos_fov);
            if h == 0.0 {
                Visible::Hidden
            } else {
                Visible::Clipped(part, h)
            }
        }
        None => Visible::Hidden,
    }
}

/// Patch-to-receiver leg, gated by the receiver FOV.
fn reflection_leg(patch: &WallPatch, pd_position: Vec3, pd: &Photodiode, cos_fov: f64) -> f64 {
    let v = pd_position - patch.center;
    let d = v.norm();
    if d < MIN_DISTANCE_M {
        return 0.0;
    }
    let cos_irr = v.dot(patch.normal) / d;
    let cos_inc = -v.z / d;
    if cos_irr <= 0.0 || cos_inc <= 0.0 || cos_inc < cos_fov {
        return 0.0;
    }
    pd.area_m2 / (2.0 * PI * d * d) * cos_irr * cos_inc
}

/// One-bounce diffuse gain summed over wall patches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NlosGain {
    pub gain: f64,
    /// Set when there were no patches to sum over.
    pub no_patches: bool,
}

pub fn nlos_gain(
    led: &LedAnchor,
    pd_position: Vec3,
    pd: &Photodiode,
    patches: &[WallPatch],
) -> Result<NlosGain> {
    if patches.is_empty() {
        return Ok(NlosGain {
            gain: 0.0,
            no_patches: true,
        });
    }
    let m = lambertian_order(led.half_power_angle_rad)?;
    let cos_fov = pd.fov_rad.cos();
    let mut sum = 0.0;
    for patch in patches {
        let (h_in, h_ref) = match visible(patch, pd_position, pd, cos_fov) {
            Visible::Hidden => continue,
            Visible::Full(h) => (incidence_leg(led, m, patch), h),
            Visible::Clipped(part, h) => (incidence_leg(led, m, &part), h),
        };
        if h_in == 0.0 {
            continue;
        }
        sum += h_in * h_ref;
    }
    Ok(NlosGain {
        gain: sum,
        no_patches: false,
    })
}

/// LOS + NLOS gain for one LED/receiver pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ChannelGain {
    pub los: f64,
    pub nlos: f64,
}

impl ChannelGain {
    pub fn total(&self) -> f64 {
        self.los + self.nlos
    }
}

/// Received electrical power for a known channel gain.
///
/// The photocurrent is `R_p * P_t * H` (zero for an inactive LED). The result is
/// its square plus the noise variance; in stochastic mode the photocurrent is
/// first perturbed by Gaussian noise of that variance.
pub fn power_from_gain<R: Rng + ?Sized>(
    led: &LedAnchor,
    gain: f64,
    pd: &Photodiode,
    noise: &NoiseParams,
    mode: NoiseMode,
    rng: &mut R,
) -> f64 {
    let current = if led.active {
        pd.responsivity_a_per_w * led.emit_power_w * gain
    } else {
        0.0
    };
    let variance = noise.variance(pd.area_m2, current);
    let signal = match mode {
        NoiseMode::Deterministic => current,
        NoiseMode::Stochastic => {
            let n = Normal::new(0.0, variance.sqrt()).expect("finite noise std");
            current + n.sample(rng)
        }
    };
    signal * signal + variance
}

#[allow(clippy::too_many_arguments)]
pub fn received_power<R: Rng + ?Sized>(
    led: &LedAnchor,
    pd_position: Vec3,
    pd: &Photodiode,
    patches: &[WallPatch],
    noise: &NoiseParams,
    mode: NoiseMode,
    rng: &mut R,
) -> Result<f64> {
    let los = los_gain(led, pd_position, pd)?;
    let nlos = nlos_gain(led, pd_position, pd, patches)?.gain;
    Ok(power_from_gain(led, los + nlos, pd, noise, mode, rng))
}

/// Received power from every LED, in LED index order.
pub fn power_vector<R: Rng + ?Sized>(
    leds: &[LedAnchor],
    pd_position: Vec3,
    pd: &Photodiode,
    patches: &[WallPatch],
    noise: &NoiseParams,
    mode: NoiseMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if leds.is_empty() {
        return Err(Error::Empty("LED list"));
    }
    leds.iter()
        .map(|led| received_power(led, pd_position, pd, patches, noise, mode, rng))
        .collect()
}

/// Precomputed LED-to-patch legs for a fixed room geometry.
///
/// Scenario changes only touch LED power and activity, never positions or
/// beam shape, so the table stays valid across rounds. Patches cut by the
/// receiver FOV are recomputed per position. Gains are bit-identical to
/// [`los_gain`] + [`nlos_gain`].
#[derive(Clone, Debug)]
pub struct ChannelModel {
    leds: Vec<LedAnchor>,
    orders: Vec<f64>,
    pd: Photodiode,
    patches: Vec<WallPatch>,
    cos_fov: f64,
    /// `[led][patch]`, reflectance included.
    incidence: Vec<f64>,
}

impl ChannelModel {
    pub fn new(leds: &[LedAnchor], pd: &Photodiode, patches: &[WallPatch]) -> Result<Self> {
        let orders = leds
            .iter()
            .map(|l| lambertian_order(l.half_power_angle_rad))
            .collect::<Result<Vec<_>>>()?;
        let mut incidence = Vec::with_capacity(leds.len() * patches.len());
        for (led, &m) in leds.iter().zip(&orders) {
            incidence.extend(patches.iter().map(|p| incidence_leg(led, m, p)));
        }
        Ok(ChannelModel {
            leds: leds.to_vec(),
            orders,
            pd: pd.clone(),
            patches: patches.to_vec(),
            cos_fov: pd.fov_rad.cos(),
            incidence,
        })
    }

    pub fn n_leds(&self) -> usize {
        self.leds.len()
    }

    /// Channel gains from every LED to `pd_position`.
    pub fn gains(&self, pd_position: Vec3) -> Result<Vec<ChannelGain>> {
        let seen: Vec<Visible> = self
            .patches
            .iter()
            .map(|p| visible(p, pd_position, &self.pd, self.cos_fov))
            .collect();
        let np = self.patches.len();
        self.leds
            .iter()
            .zip(&self.orders)
            .enumerate()
            .map(|(i, (led, &m))| {
                let los = los_gain_with_order(led, m, pd_position, &self.pd)?;
                let row = &self.incidence[i * np..(i + 1) * np];
                let mut nlos = 0.0;
                for (&table_h_in, v) in row.iter().zip(&seen) {
                    let (h_in, h_ref) = match v {
                        Visible::Hidden => continue,
                        Visible::Full(h) => (table_h_in, *h),
                        Visible::Clipped(part, h) => (incidence_leg(led, m, part), *h),
                    };
                    if h_in == 0.0 {
                        continue;
                    }
                    nlos += h_in * h_ref;
                }
                Ok(ChannelGain { los, nlos })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use proptest::prelude::*;

    fn led_at(x: f64, y: f64, z: f64) -> LedAnchor {
        LedAnchor {
            position: Vec3::new(x, y, z),
            emit_power_w: 1.0,
            half_power_angle_rad: PI / 3.0,
            active: true,
        }
    }

    fn pd(fov_deg: f64, n: f64) -> Photodiode {
        Photodiode {
            area_m2: 1e-4,
            fov_rad: fov_deg.to_radians(),
            responsivity_a_per_w: 0.6,
            filter_gain: 1.0,
            concentrator_index: n,
        }
    }

    #[test]
    fn lambertian_order_examples() {
        assert!((lambertian_order(PI / 3.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((lambertian_order(PI / 4.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(lambertian_order(1e-7).is_err());
        assert!(lambertian_order(0.0).is_err());
        assert!(lambertian_order(PI / 2.0).is_err());
        assert!(lambertian_order_with_min(1e-3, 1e-2).is_err());
    }

    #[test]
    fn concentrator_examples() {
        assert!((concentrator_gain(30f64.to_radians(), &pd(90.0, 1.0)) - 1.0).abs() < 1e-15);
        assert_eq!(concentrator_gain(91f64.to_radians(), &pd(90.0, 1.0)), 0.0);
        assert!((concentrator_gain(0.0, &pd(60.0, 1.5)) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn los_directly_below() {
        let h = los_gain(
            &led_at(2.5, 2.5, 3.0),
            Vec3::new(2.5, 2.5, 1.0),
            &pd(90.0, 1.0),
        )
        .unwrap();
        let expected = 2.0 * 1e-4 / (2.0 * PI * 4.0);
        assert!((h - expected).abs() / expected < 1e-12);
        assert!((h - 7.9577e-6).abs() < 1e-9);
    }

    #[test]
    fn los_outside_fov_is_zero() {
        // 45 degree incidence with a 10 degree FOV
        let h = los_gain(
            &led_at(2.5, 2.5, 3.0),
            Vec3::new(4.5, 2.5, 1.0),
            &pd(10.0, 1.0),
        )
        .unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn los_inverse_square_exact_ratio() {
        let led = led_at(0.0, 0.0, 3.0);
        let dir = Vec3::new(0.3, 0.4, -1.0);
        let h1 = los_gain(&led, led.position + dir * 1.0, &pd(90.0, 1.0)).unwrap();
        let h2 = los_gain(&led, led.position + dir * 2.0, &pd(90.0, 1.0)).unwrap();
        assert!((h1 / h2 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn los_degenerate_geometry() {
        let led = led_at(1.0, 1.0, 3.0);
        assert!(matches!(
            los_gain(&led, led.position, &pd(90.0, 1.0)),
            Err(Error::DegenerateGeometry { .. })
        ));
    }

    #[test]
    fn patch_cut_by_fov_matches_fine_subdivision() {
        let led = led_at(2.0, 2.0, 3.0);
        let normal = Vec3::new(1.0, 0.0, 0.0);
        let whole = WallPatch::new(Vec3::new(0.0, 1.5, 1.0), normal, 0.25, 0.25, 0.7).unwrap();
        let rows = 500;
        let fine: Vec<WallPatch> = (0..rows)
            .map(|k| {
                let z = 0.875 + 0.25 * (k as f64 + 0.5) / rows as f64;
                let h = 0.25 / rows as f64;
                WallPatch::new(Vec3::new(0.0, 1.5, z), normal, 0.25, h, 0.7).unwrap()
            })
            .collect();
        // FOV edge crossing the patch above, at, and below its center
        for (fov, pd_z) in [(90.0, 0.95), (90.0, 1.05), (60.0, 0.15), (75.0, 0.55)] {
            let p = pd(fov, 1.0);
            let pos = Vec3::new(1.5, 1.5, pd_z);
            let cut = nlos_gain(&led, pos, &p, std::slice::from_ref(&whole))
                .unwrap()
                .gain;
            let reference = nlos_gain(&led, pos, &p, &fine).unwrap().gain;
            assert!(reference > 0.0);
            assert!(
                (cut - reference).abs() < 0.01 * reference,
                "fov {fov} z {pd_z}: {cut} vs {reference}"
            );
        }
        let p = pd(90.0, 1.0);
        let below = nlos_gain(&led, Vec3::new(1.5, 1.5, 1.2), &p, &[whole])
            .unwrap()
            .gain;
        assert_eq!(below, 0.0);
    }

    #[test]
    fn nlos_empty_and_grazing() {
        let led = led_at(2.5, 2.5, 3.0);
        let r = nlos_gain(&led, Vec3::new(1.0, 1.0, 1.0), &pd(90.0, 1.0), &[]).unwrap();
        assert_eq!(r.gain, 0.0);
        assert!(r.no_patches);
        // patch whose normal is perpendicular to the LED ray
        let patch = WallPatch::new(
            Vec3::new(2.5, 0.0, 2.0),
            Vec3::new(1.0, 0.0, 0.0),
            0.25,
            0.25,
            0.7,
        )
        .unwrap();
        let r = nlos_gain(&led, Vec3::new(1.0, 1.0, 1.0), &pd(90.0, 1.0), &[patch]).unwrap();
        assert_eq!(r.gain, 0.0);
        assert!(!r.no_patches);
    }

    #[test]
    fn patch_tiling_covers_walls() {
        let dims = Vec3::new(5.0, 5.0, 3.0);
        let patches = wall_patches(dims, 0.25, 0.7).unwrap();
        assert_eq!(patches.len(), 4 * 20 * 12);
        let area: f64 = patches.iter().map(|p| p.area_m2).sum();
        assert!((area - 4.0 * 5.0 * 3.0).abs() < 1e-9);
        for p in &patches {
            // normals point into the room
            let inward = Vec3::new(2.5, 2.5, 1.5) - p.center;
            assert!(inward.dot(p.normal) > 0.0);
        }
    }

    #[test]
    fn background_shot_term_value() {
        let noise = NoiseParams::default();
        let v = noise.background_shot_variance();
        let exact = 2.0 * 1.602176634e-19 * 740e-6 * 0.562 * 5e6;
        assert!((v - exact).abs() / exact < 1e-12, "{v}");
        assert!((v - 6.6631e-16).abs() / 6.6631e-16 < 1e-4, "{v}");
    }

    #[test]
    fn noise_floor_monotone_in_background_current() {
        let mut noise = NoiseParams::default();
        let a = noise.variance(1e-4, 0.0);
        noise.background_current_a *= 2.0;
        assert!(noise.variance(1e-4, 0.0) > a);
    }

    #[test]
    fn inactive_led_yields_noise_floor() {
        let mut led = led_at(1.0, 1.0, 3.0);
        led.active = false;
        let noise = NoiseParams::default();
        let mut rng = substream(0, Stream::Noise, &[]);
        let p = received_power(
            &led,
            Vec3::new(1.0, 1.0, 0.85),
            &pd(90.0, 1.0),
            &[],
            &noise,
            NoiseMode::Deterministic,
            &mut rng,
        )
        .unwrap();
        assert_eq!(p, noise.variance(1e-4, 0.0));
    }

    #[test]
    fn channel_model_matches_direct_evaluation_bitwise() {
        let dims = Vec3::new(5.0, 5.0, 3.0);
        let patches = wall_patches(dims, 0.5, 0.7).unwrap();
        let leds = vec![led_at(1.0, 1.0, 3.0), led_at(4.0, 2.0, 3.0)];
        let p = pd(90.0, 1.0);
        let model = ChannelModel::new(&leds, &p, &patches).unwrap();
        for pos in [
            Vec3::new(0.3, 4.1, 0.85),
            Vec3::new(2.5, 2.5, 1.2),
            Vec3::new(5.0, 0.0, 0.85),
        ] {
            let cached = model.gains(pos).unwrap();
            for (led, g) in leds.iter().zip(&cached) {
                assert_eq!(g.los.to_bits(), los_gain(led, pos, &p).unwrap().to_bits());
                assert_eq!(
                    g.nlos.to_bits(),
                    nlos_gain(led, pos, &p, &patches).unwrap().gain.to_bits()
                );
            }
        }
    }

    #[test]
    fn stochastic_mode_is_seeded() {
        let led = led_at(1.0, 1.0, 3.0);
        let noise = NoiseParams::default();
        let pos = Vec3::new(1.5, 1.0, 0.85);
        let draw = |seed| {
            let mut rng = substream(seed, Stream::Noise, &[0]);
            received_power(
                &led,
                pos,
                &pd(90.0, 1.0),
                &[],
                &noise,
                NoiseMode::Stochastic,
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(draw(1).to_bits(), draw(1).to_bits());
        assert_ne!(draw(1), draw(2));
    }

    proptest! {
        #[test]
        fn gains_and_powers_non_negative(
            lx in 0.0..5.0f64, ly in 0.0..5.0f64,
            px in 0.0..5.0f64, py in 0.0..5.0f64, pz in 0.0..2.9f64,
            fov in 5.0..90.0f64, half in 5.0..85.0f64,
        ) {
            let led = LedAnchor { half_power_angle_rad: half.to_radians(), ..led_at(lx, ly, 3.0) };
            let p = pd(fov, 1.2);
            let patches = wall_patches(Vec3::new(5.0, 5.0, 3.0), 1.0, 0.7).unwrap();
            let pos = Vec3::new(px, py, pz);
            prop_assert!(los_gain(&led, pos, &p).unwrap() >= 0.0);
            prop_assert!(nlos_gain(&led, pos, &p, &patches).unwrap().gain >= 0.0);
            let mut rng = substream(3, Stream::Noise, &[]);
            for mode in [NoiseMode::Deterministic, NoiseMode::Stochastic] {
                let w = received_power(&led, pos, &p, &patches, &NoiseParams::default(), mode, &mut rng).unwrap();
                prop_assert!(w >= 0.0);
            }
        }
    }
}
