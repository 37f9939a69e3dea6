//! Room configuration and its evolution across communication rounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{
    wall_patches, ChannelModel, LedAnchor, NoiseMode, NoiseParams, Photodiode, Vec3, WallPatch,
};

#[derive(Clone, Debug, PartialEq)]
pub struct RoomEnvironment {
    /// Length, width, height in meters.
    pub dims: Vec3,
    /// Row-major over the ceiling grid: index = iy * nx + ix.
    pub leds: Vec<LedAnchor>,
    pub pd: Photodiode,
    pub noise: NoiseParams,
    pub noise_mode: NoiseMode,
    pub patches: Vec<WallPatch>,
    pub round_index: u32,
}

/// Physical parameters used to build a room. Defaults describe the 5 x 5 x 3 m
/// room with 16 LEDs used throughout the crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoomParams {
    pub length_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    /// LEDs per side; placed at the inner vertices of a `(n+1) x (n+1)` lattice.
    pub led_grid: usize,
    pub led_power_w: f64,
    pub half_power_angle_deg: f64,
    pub wall_reflectance: f64,
    pub patch_edge_m: f64,
    pub pd_area_m2: f64,
    pub pd_fov_deg: f64,
    pub responsivity_a_per_w: f64,
    pub filter_gain: f64,
    pub concentrator_index: f64,
    pub noise: NoiseParams,
    pub noise_mode: NoiseMode,
}

impl Default for RoomParams {
    fn default() -> Self {
        RoomParams {
            length_m: 5.0,
            width_m: 5.0,
            height_m: 3.0,
            led_grid: 4,
            led_power_w: 1.0,
            half_power_angle_deg: 60.0,
            wall_reflectance: 0.7,
            patch_edge_m: 0.25,
            pd_area_m2: 1e-4,
            pd_fov_deg: 90.0,
            responsivity_a_per_w: 0.6,
            filter_gain: 1.0,
            concentrator_index: 1.0,
            noise: NoiseParams::default(),
            noise_mode: NoiseMode::Deterministic,
        }
    }
}

impl RoomParams {
    pub fn build(&self) -> Result<RoomEnvironment> {
        if self.led_grid == 0 {
            return Err(Error::InvalidArgument("led_grid must be at least 1".into()));
        }
        let dims = Vec3::new(self.length_m, self.width_m, self.height_m);
        if !(dims.x > 0.0 && dims.y > 0.0 && dims.z > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "room dimensions {dims:?} must be positive"
            )));
        }
        let n = self.led_grid;
        let step_x = dims.x / (n + 1) as f64;
        let step_y = dims.y / (n + 1) as f64;
        let mut leds = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                leds.push(LedAnchor {
                    position: Vec3::new((ix + 1) as f64 * step_x, (iy + 1) as f64 * step_y, dims.z),
                    emit_power_w: self.led_power_w,
                    half_power_angle_rad: self.half_power_angle_deg.to_radians(),
                    active: true,
                });
            }
        }
        let pd = Photodiode {
            area_m2: self.pd_area_m2,
            fov_rad: self.pd_fov_deg.to_radians(),
            responsivity_a_per_w: self.responsivity_a_per_w,
            filter_gain: self.filter_gain,
            concentrator_index: self.concentrator_index,
        };
        let env = RoomEnvironment {
            dims,
            leds,
            pd,
            noise: self.noise.clone(),
            noise_mode: self.noise_mode,
            patches: wall_patches(dims, self.patch_edge_m, self.wall_reflectance)?,
            round_index: 0,
        };
        env.validate()?;
        Ok(env)
    }
}

/// The default room: 5 x 5 x 3 m, 16 LEDs at 1 W, 60 degree half-power angle,
/// wall reflectance 0.7, 1 cm^2 photodiode with 90 degree FOV.
pub fn default_environment() -> RoomEnvironment {
    RoomParams::default()
        .build()
        .expect("default room parameters are valid")
}

impl RoomEnvironment {
    pub fn n_leds(&self) -> usize {
        self.leds.len()
    }

    pub fn validate(&self) -> Result<()> {
        for led in &self.leds {
            led.validate(self.dims.z)?;
            let p = led.position;
            if p.x < 0.0 || p.x > self.dims.x || p.y < 0.0 || p.y > self.dims.y {
                return Err(Error::InvalidArgument(format!(
                    "LED at {p:?} is outside the ceiling"
                )));
            }
        }
        self.pd.validate()?;
        self.noise.validate()
    }

    /// Whether `p` lies inside the room box.
    pub fn contains(&self, p: Vec3) -> bool {
        (0.0..=self.dims.x).contains(&p.x)
            && (0.0..=self.dims.y).contains(&p.y)
            && (0.0..=self.dims.z).contains(&p.z)
    }

    pub fn channel_model(&self) -> Result<ChannelModel> {
        ChannelModel::new(&self.leds, &self.pd, &self.patches)
    }

    /// Index of the LED closest to the room center (lowest index on ties).
    pub fn central_led(&self) -> usize {
        let c = Vec3::new(self.dims.x / 2.0, self.dims.y / 2.0, self.dims.z);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, led) in self.leds.iter().enumerate() {
            let d = (led.position - c).norm();
            if d < best_d - 1e-12 {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Stationary,
    /// Ambient background current grows every round.
    AmbientDrift,
    /// Selected LEDs go dark.
    LedBlackout,
    /// LED output decays exponentially.
    DeviceAging,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stationary" | "none" => Ok(ScenarioKind::Stationary),
            "ambient" | "ambient_drift" | "a" => Ok(ScenarioKind::AmbientDrift),
            "blackout" | "led_blackout" | "b" => Ok(ScenarioKind::LedBlackout),
            "aging" | "device_aging" | "c" => Ok(ScenarioKind::DeviceAging),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

impl ScenarioKind {
    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::Stationary => "stationary",
            ScenarioKind::AmbientDrift => "ambient",
            ScenarioKind::LedBlackout => "blackout",
            ScenarioKind::DeviceAging => "aging",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Extra scenarios layered on top of `kind`. Always applied in the order
    /// ambient drift, blackout, aging.
    pub stack: Vec<ScenarioKind>,
    pub ambient_step_a: f64,
    /// LEDs to black out; `None` picks the LED nearest the room center.
    pub blackout_led_ids: Option<Vec<usize>>,
    /// First round at which the blackout is in effect.
    pub blackout_round: u32,
    pub aging_initial_w: f64,
    pub aging_beta: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Stationary,
            stack: Vec::new(),
            ambient_step_a: 50e-6,
            blackout_led_ids: None,
            blackout_round: 1,
            aging_initial_w: 1.0,
            aging_beta: -(0.8f64.ln()) / 100.0,
        }
    }
}

impl ScenarioSpec {
    pub fn of(kind: ScenarioKind) -> Self {
        ScenarioSpec {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self, n_leds: usize) -> Result<()> {
        if !(self.aging_beta > 0.0) {
            return Err(Error::Config(format!(
                "scenario.aging_beta must be positive, got {}",
                self.aging_beta
            )));
        }
        if !(self.ambient_step_a >= 0.0) {
            return Err(Error::Config(
                "scenario.ambient_step_a must be non-negative".into(),
            ));
        }
        if !(self.aging_initial_w >= 0.0) {
            return Err(Error::Config(
                "scenario.aging_initial_w must be non-negative".into(),
            ));
        }
        if let Some(ids) = &self.blackout_led_ids {
            if let Some(bad) = ids.iter().find(|&&i| i >= n_leds) {
                return Err(Error::Config(format!(
                    "scenario.blackout_led_ids: LED {bad} does not exist ({n_leds} LEDs)"
                )));
            }
        }
        Ok(())
    }

    pub fn is_active(&self, kind: ScenarioKind) -> bool {
        self.kind == kind || self.stack.contains(&kind)
    }

    pub fn label(&self) -> String {
        let mut kinds = vec![self.kind];
        kinds.extend(self.stack.iter().copied().filter(|k| *k != self.kind));
        kinds
            .iter()
            .map(|k| k.label())
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn blackout_leds(&self, env: &RoomEnvironment) -> Vec<usize> {
        self.blackout_led_ids
            .clone()
            .unwrap_or_else(|| vec![env.central_led()])
    }

    /// LED output under aging at round `t`.
    pub fn aged_power(&self, t: u32) -> f64 {
        self.aging_initial_w * (-self.aging_beta * t as f64).exp()
    }
}

/// The environment at round `t`. Depends only on `(base, spec, t)`.
pub fn advance(base: &RoomEnvironment, spec: &ScenarioSpec, t: u32) -> RoomEnvironment {
    let mut env = base.clone();
    env.round_index = t;
    if spec.is_active(ScenarioKind::AmbientDrift) {
        env.noise.background_current_a = t as f64 * spec.ambient_step_a;
    }
    if spec.is_active(ScenarioKind::LedBlackout) && t >= spec.blackout_round {
        for id in spec.blackout_leds(base) {
            if let Some(led) = env.leds.get_mut(id) {
                led.active = false;
            }
        }
    }
    if spec.is_active(ScenarioKind::DeviceAging) {
        let p = spec.aged_power(t);
        for led in &mut env.leds {
            led.emit_power_w = p;
        }
    }
    env
}
