//! Device physics for batteries (ESS) and electric water heaters (EWH), and fleet construction.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// kWh to BTU.
pub const BTU_PER_KWH: f64 = 3412.14;
/// Pounds of water per liter.
pub const LB_PER_LITER: f64 = 2.20462;

/// EWH safety margin above the dead-band used as a hard limit by the centralized coordinator.
pub const EWH_SAFETY_MARGIN_F: f64 = 20.0;

const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Ess,
    Ewh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Charge,
    Discharge,
    Standby,
    OptOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EssParams {
    pub p_charge_rate: f64,
    pub p_discharge_rate: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub e_cap: f64,
    pub x_set: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Default for EssParams {
    fn default() -> Self {
        Self {
            p_charge_rate: 5.0,
            p_discharge_rate: 5.0,
            eta_c: 0.95,
            eta_d: 0.95,
            e_cap: 13.5,
            x_set: 0.5,
            x_lo: 0.1,
            x_hi: 0.9,
        }
    }
}

impl EssParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.p_charge_rate > 0.0
            && self.p_discharge_rate > 0.0
            && self.eta_c > 0.0
            && self.eta_c <= 1.0
            && self.eta_d > 0.0
            && self.eta_d <= 1.0
            && self.e_cap > 0.0
            && 0.0 <= self.x_lo
            && self.x_lo < self.x_set
            && self.x_set < self.x_hi
            && self.x_hi <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "invalid ESS parameters {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EwhParams {
    pub p_charge_rate: f64,
    pub tank_liters: f64,
    pub x_amb: f64,
    pub x_set: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    /// Standing loss rate toward ambient, 1/s.
    pub loss_coeff: f64,
    pub inlet_temp: f64,
}

impl Default for EwhParams {
    fn default() -> Self {
        Self {
            p_charge_rate: 4.0,
            tank_liters: 303.0,
            x_amb: 70.0,
            x_set: 130.0,
            x_lo: 120.0,
            x_hi: 140.0,
            loss_coeff: 2e-6,
            inlet_temp: 60.0,
        }
    }
}

impl EwhParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.p_charge_rate > 0.0
            && self.tank_liters > 0.0
            && self.loss_coeff >= 0.0
            && self.x_lo < self.x_set
            && self.x_set < self.x_hi
            && [self.x_amb, self.inlet_temp].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "invalid EWH parameters {self:?}"
            )))
        }
    }

    /// Temperature rise rate with the element on, °F/s.
    pub fn heating_rate(&self) -> f64 {
        self.p_charge_rate * BTU_PER_KWH / (self.tank_liters * LB_PER_LITER * 3600.0)
    }

    /// kW that holds the tank at temperature `x` against losses and a constant draw.
    pub fn holding_power_kw(&self, x: f64, draw_liters_per_s: f64) -> f64 {
        let cooling = self.loss_coeff * (x - self.x_amb)
            + draw_liters_per_s / self.tank_liters * (x - self.inlet_temp);
        cooling * self.tank_liters * LB_PER_LITER * 3600.0 / BTU_PER_KWH
    }

    /// Largest stable forward-Euler step for the given maximum draw.
    pub fn max_stable_dt(&self, max_draw_liters_per_s: f64) -> f64 {
        let k = self.loss_coeff + max_draw_liters_per_s / self.tank_liters;
        if k > 0.0 {
            0.1 / k
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DeviceParams {
    Ess(EssParams),
    Ewh(EwhParams),
}

impl DeviceParams {
    pub fn kind(&self) -> DeviceKind {
        match self {
            DeviceParams::Ess(_) => DeviceKind::Ess,
            DeviceParams::Ewh(_) => DeviceKind::Ewh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DeviceParams::Ess(p) => p.validate(),
            DeviceParams::Ewh(p) => p.validate(),
        }
    }

    /// `(x_lo, x_set, x_hi)`.
    pub fn band(&self) -> (f64, f64, f64) {
        match self {
            DeviceParams::Ess(p) => (p.x_lo, p.x_set, p.x_hi),
            DeviceParams::Ewh(p) => (p.x_lo, p.x_set, p.x_hi),
        }
    }

    pub fn charge_rate(&self) -> f64 {
        match self {
            DeviceParams::Ess(p) => p.p_charge_rate,
            DeviceParams::Ewh(p) => p.p_charge_rate,
        }
    }

    /// Zero for heaters.
    pub fn discharge_rate(&self) -> f64 {
        match self {
            DeviceParams::Ess(p) => p.p_discharge_rate,
            DeviceParams::Ewh(_) => 0.0,
        }
    }

    pub fn can_discharge(&self) -> bool {
        matches!(self, DeviceParams::Ess(_))
    }

    /// Physical upper limit past which charging is refused.
    pub fn hard_max(&self) -> f64 {
        match self {
            DeviceParams::Ess(_) => 1.0,
            DeviceParams::Ewh(p) => p.x_hi + EWH_SAFETY_MARGIN_F,
        }
    }

    /// Physical lower limit past which discharging is refused.
    pub fn hard_min(&self) -> f64 {
        match self {
            DeviceParams::Ess(_) => 0.0,
            DeviceParams::Ewh(_) => f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub x: f64,
    pub mode: Mode,
    pub packet_remaining_s: f64,
    pub rng_stream: u64,
}

impl DeviceState {
    pub fn standby(x: f64, rng_stream: u64) -> Self {
        Self {
            x,
            mode: Mode::Standby,
            packet_remaining_s: 0.0,
            rng_stream,
        }
    }
}

/// Physical action a device takes during a step, derived from its mode and state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Charge,
    Discharge,
    Idle,
}

/// What a device is physically doing this step.
///
/// An opted-out device charges below its dead-band and discharges above it (heaters coast
/// instead, having no way to discharge).
pub fn action(params: &DeviceParams, state: &DeviceState) -> Action {
    match state.mode {
        Mode::Charge => Action::Charge,
        Mode::Discharge => Action::Discharge,
        Mode::Standby => Action::Idle,
        Mode::OptOut => {
            let (lo, _, hi) = params.band();
            if state.x < lo {
                Action::Charge
            } else if state.x > hi && params.can_discharge() {
                Action::Discharge
            } else {
                Action::Idle
            }
        }
    }
}

/// Grid-side power of one device in kW, charging positive.
pub fn power_kw(params: &DeviceParams, state: &DeviceState) -> f64 {
    match action(params, state) {
        Action::Charge => params.charge_rate(),
        Action::Discharge => -params.discharge_rate(),
        Action::Idle => 0.0,
    }
}

/// Advance a battery by `dt_s` with the given action; state of charge is clamped to [0, 1].
pub fn ess_advance(x: f64, params: &EssParams, act: Action, dt_s: f64) -> f64 {
    let dt_h = dt_s / 3600.0;
    let x = match act {
        Action::Charge => x + params.eta_c * params.p_charge_rate * dt_h / params.e_cap,
        Action::Discharge => x - params.p_discharge_rate * dt_h / (params.eta_d * params.e_cap),
        Action::Idle => x,
    };
    x.clamp(0.0, 1.0)
}

/// Forward-Euler step of the fully mixed tank model.
pub fn ewh_advance(
    x: f64,
    params: &EwhParams,
    heating: bool,
    dt_s: f64,
    draw_liters_per_s: f64,
) -> f64 {
    let heat = if heating { params.heating_rate() } else { 0.0 };
    let dxdt = heat
        - params.loss_coeff * (x - params.x_amb)
        - draw_liters_per_s / params.tank_liters * (x - params.inlet_temp);
    x + dt_s * dxdt
}

pub fn ess_step(state: DeviceState, params: &EssParams, dt_s: f64) -> DeviceState {
    let act = action(&DeviceParams::Ess(*params), &state);
    DeviceState {
        x: ess_advance(state.x, params, act, dt_s),
        ..state
    }
}

pub fn ewh_step(
    state: DeviceState,
    params: &EwhParams,
    dt_s: f64,
    draw_liters_per_s: f64,
) -> DeviceState {
    let heating = action(&DeviceParams::Ewh(*params), &state) == Action::Charge;
    DeviceState {
        x: ewh_advance(state.x, params, heating, dt_s, draw_liters_per_s),
        ..state
    }
}

/// Hot water use per hour of day, liters per second per device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawProfile {
    liters_per_s: [f64; 24],
}

/// Morning peak at 8-11 am, evening peak at 8-11 pm, trough through mid-afternoon.
const DEFAULT_DRAW: [f64; 24] = [
    0.0008, 0.0006, 0.0006, 0.0006, 0.0007, 0.0010, // 0-5
    0.0020, 0.0035, 0.0050, 0.0050, 0.0045, 0.0030, // 6-11
    0.0030, 0.0028, 0.0020, 0.0008, 0.0008, 0.0025, // 12-17
    0.0028, 0.0030, 0.0045, 0.0045, 0.0040, 0.0015, // 18-23
];

impl Default for DrawProfile {
    fn default() -> Self {
        Self {
            liters_per_s: DEFAULT_DRAW,
        }
    }
}

impl DrawProfile {
    pub fn new(liters_per_s: [f64; 24]) -> Result<Self> {
        if let Some(v) = liters_per_s.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParams(format!(
                "negative or non-finite draw {v}"
            )));
        }
        Ok(Self { liters_per_s })
    }

    pub fn zero() -> Self {
        Self {
            liters_per_s: [0.0; 24],
        }
    }

    pub fn table(&self) -> &[f64; 24] {
        &self.liters_per_s
    }

    pub fn max(&self) -> f64 {
        self.liters_per_s.iter().copied().fold(0.0, f64::max)
    }

    /// Read a `hour,liters_per_s` CSV with exactly 24 rows.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut table = [f64::NAN; 24];
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let bad = |reason: String| Error::MalformedData {
                record: i + 1,
                reason,
            };
            if row.len() != 2 {
                return Err(bad(format!("expected 2 fields, got {}", row.len())));
            }
            let hour: usize = row[0]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad hour {:?}", &row[0])))?;
            let draw: f64 = row[1]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad draw {:?}", &row[1])))?;
            if hour >= 24 {
                return Err(Error::HourOutOfRange(hour));
            }
            if !table[hour].is_nan() {
                return Err(bad(format!("hour {hour} listed twice")));
            }
            table[hour] = draw;
        }
        if let Some(h) = table.iter().position(|v| v.is_nan()) {
            return Err(Error::MalformedData {
                record: 0,
                reason: format!("hour {h} missing from draw profile"),
            });
        }
        Self::new(table)
    }
}

pub fn water_draw(profile: &DrawProfile, hour_of_day: usize) -> Result<f64> {
    profile
        .liters_per_s
        .get(hour_of_day)
        .copied()
        .ok_or(Error::HourOutOfRange(hour_of_day))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub params: DeviceParams,
    pub state: DeviceState,
}

impl Device {
    pub fn power_kw(&self) -> f64 {
        power_kw(&self.params, &self.state)
    }

    /// Integrate the current action over `dt_s`.
    pub fn advance(&mut self, dt_s: f64, draw_liters_per_s: f64) {
        let act = action(&self.params, &self.state);
        self.state.x = match &self.params {
            DeviceParams::Ess(p) => ess_advance(self.state.x, p, act, dt_s),
            DeviceParams::Ewh(p) => ewh_advance(
                self.state.x,
                p,
                act == Action::Charge,
                dt_s,
                draw_liters_per_s,
            ),
        };
    }
}

/// A population of devices stepped on a common clock.
///
/// Heaters see the draw of `hour_of_day` for the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    devices: Vec<Device>,
    dt_seconds: f64,
    water_draw_profile: DrawProfile,
    hour_of_day: usize,
}

impl Fleet {
    pub fn new(devices: Vec<Device>, dt_seconds: f64) -> Result<Self> {
        Self::with_profile(devices, dt_seconds, DrawProfile::default(), 0)
    }

    pub fn with_profile(
        devices: Vec<Device>,
        dt_seconds: f64,
        water_draw_profile: DrawProfile,
        hour_of_day: usize,
    ) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::InvalidParams("fleet must not be empty".into()));
        }
        if !(dt_seconds > 0.0 && dt_seconds.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "fleet dt must be positive, got {dt_seconds}"
            )));
        }
        if hour_of_day >= 24 {
            return Err(Error::HourOutOfRange(hour_of_day));
        }
        let max_draw = water_draw_profile.max();
        for d in &devices {
            d.params.validate()?;
            if let DeviceParams::Ewh(p) = &d.params {
                let bound = p.max_stable_dt(max_draw);
                if dt_seconds > bound {
                    return Err(Error::InvalidParams(format!(
                        "dt {dt_seconds} s exceeds the thermal stability bound {bound:.1} s"
                    )));
                }
            }
        }
        Ok(Self {
            devices,
            dt_seconds,
            water_draw_profile,
            hour_of_day,
        })
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn devices_mut(&mut self) -> &mut [Device] {
        &mut self.devices
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn dt_seconds(&self) -> f64 {
        self.dt_seconds
    }

    pub fn water_draw_profile(&self) -> &DrawProfile {
        &self.water_draw_profile
    }

    pub fn hour_of_day(&self) -> usize {
        self.hour_of_day
    }

    pub fn set_hour_of_day(&mut self, hour: usize) -> Result<()> {
        if hour >= 24 {
            return Err(Error::HourOutOfRange(hour));
        }
        self.hour_of_day = hour;
        Ok(())
    }

    pub fn draw(&self) -> f64 {
        self.water_draw_profile.liters_per_s[self.hour_of_day]
    }

    pub fn aggregate_power_kw(&self) -> f64 {
        self.devices.iter().map(Device::power_kw).sum()
    }

    /// Largest single-device rate, the quantum of any greedy dispatch.
    pub fn max_rate_kw(&self) -> f64 {
        self.devices
            .iter()
            .map(|d| d.params.charge_rate().max(d.params.discharge_rate()))
            .fold(0.0, f64::max)
    }

    /// Heater consumption needed to hold every tank at its setpoint, kW. Zero for batteries.
    pub fn baseload_kw(&self) -> f64 {
        let draw = self.draw();
        self.devices
            .iter()
            .map(|d| match &d.params {
                DeviceParams::Ewh(p) => p.holding_power_kw(p.x_set, draw),
                DeviceParams::Ess(_) => 0.0,
            })
            .sum()
    }

    /// Concatenate two fleets; the result renumbers random streams by position.
    pub fn merge(mut self, other: Fleet) -> Result<Fleet> {
        if self.dt_seconds != other.dt_seconds {
            return Err(Error::DtMismatch {
                reference: other.dt_seconds,
                fleet: self.dt_seconds,
            });
        }
        self.devices.extend(other.devices);
        for (i, d) in self.devices.iter_mut().enumerate() {
            d.state.rng_stream = i as u64;
        }
        Ok(self)
    }
}

/// `n` devices drawn around `nominal` with relative spread `z`.
///
/// Every numeric parameter `y` is drawn from `Normal(y, z*|y|)` and redrawn until physically
/// valid; the dead-band triple is redrawn jointly until ordered. The initial state is
/// uniform over each device's dead-band. Device `i` draws from its own stream, so a fleet of
/// `n` is a prefix of any larger fleet built with the same seed.
pub fn build_fleet(
    nominal: &DeviceParams,
    n: usize,
    heterogeneity_z: f64,
    seed: u64,
    dt_seconds: f64,
) -> Result<Fleet> {
    if n == 0 {
        return Err(Error::InvalidParams("fleet size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&heterogeneity_z) {
        return Err(Error::InvalidParams(format!(
            "heterogeneity z must lie in [0, 1], got {heterogeneity_z}"
        )));
    }
    nominal.validate()?;
    let devices = (0..n)
        .map(|i| {
            let mut rng = rng::stream(seed, rng::PURPOSE_BUILD, i as u64);
            let params = perturb(nominal, heterogeneity_z, &mut rng)?;
            let (lo, _, hi) = params.band();
            let x = rng.random_range(lo..=hi);
            Ok(Device {
                params,
                state: DeviceState::standby(x, i as u64),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Fleet::new(devices, dt_seconds)
}

fn perturb(nominal: &DeviceParams, z: f64, rng: &mut ChaCha8Rng) -> Result<DeviceParams> {
    if z == 0.0 {
        return Ok(*nominal);
    }
    let mut draw = |mean: f64, valid: &dyn Fn(f64) -> bool| -> Result<f64> {
        let normal = Normal::new(mean, z * mean.abs())
            .map_err(|e| Error::InvalidParams(format!("parameter spread: {e}")))?;
        for _ in 0..MAX_REDRAWS {
            let v = normal.sample(rng);
            if valid(v) {
                return Ok(v);
            }
        }
        Err(Error::InvalidParams(format!(
            "no valid draw around {mean} with spread {z}"
        )))
    };
    let positive = |v: f64| v > 0.0;
    let efficiency = |v: f64| v > 0.0 && v <= 1.0;
    match nominal {
        DeviceParams::Ess(p) => {
            let p_charge_rate = draw(p.p_charge_rate, &positive)?;
            let p_discharge_rate = draw(p.p_discharge_rate, &positive)?;
            let eta_c = draw(p.eta_c, &efficiency)?;
            let eta_d = draw(p.eta_d, &efficiency)?;
            let e_cap = draw(p.e_cap, &positive)?;
            let unit = |v: f64| (0.0..=1.0).contains(&v);
            let (x_lo, x_set, x_hi) = draw_band(p.x_lo, p.x_set, p.x_hi, &mut draw, &unit)?;
            Ok(DeviceParams::Ess(EssParams {
                p_charge_rate,
                p_discharge_rate,
                eta_c,
                eta_d,
                e_cap,
                x_set,
                x_lo,
                x_hi,
            }))
        }
        DeviceParams::Ewh(p) => {
            let p_charge_rate = draw(p.p_charge_rate, &positive)?;
            let tank_liters = draw(p.tank_liters, &positive)?;
            let x_amb = draw(p.x_amb, &|_| true)?;
            let any = |_: f64| true;
            let (x_lo, x_set, x_hi) = draw_band(p.x_lo, p.x_set, p.x_hi, &mut draw, &any)?;
            let loss_coeff = if p.loss_coeff == 0.0 {
                0.0
            } else {
                draw(p.loss_coeff, &|v| v >= 0.0)?
            };
            let inlet_temp = draw(p.inlet_temp, &|_| true)?;
            Ok(DeviceParams::Ewh(EwhParams {
                p_charge_rate,
                tank_liters,
                x_amb,
                x_set,
                x_lo,
                x_hi,
                loss_coeff,
                inlet_temp,
            }))
        }
    }
}

fn draw_band(
    lo: f64,
    set: f64,
    hi: f64,
    draw: &mut dyn FnMut(f64, &dyn Fn(f64) -> bool) -> Result<f64>,
    valid: &dyn Fn(f64) -> bool,
) -> Result<(f64, f64, f64)> {
    for _ in 0..MAX_REDRAWS {
        let a = draw(lo, valid)?;
        let b = draw(set, valid)?;
        let c = draw(hi, valid)?;
        if a < b && b < c {
            return Ok((a, b, c));
        }
    }
    Err(Error::InvalidParams(
        "could not draw an ordered dead-band".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ess() -> EssParams {
        EssParams::default()
    }

    fn state(x: f64, mode: Mode) -> DeviceState {
        DeviceState {
            x,
            mode,
            packet_remaining_s: 0.0,
            rng_stream: 0,
        }
    }

    #[test]
    fn ess_one_hour_charge() {
        let s = ess_step(state(0.5, Mode::Charge), &ess(), 3600.0);
        assert_abs_diff_eq!(s.x, 0.5 + 0.95 * 5.0 / 13.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x, 0.8519, epsilon = 1e-4);
    }

    #[test]
    fn ess_standby_and_clamp() {
        assert_eq!(ess_step(state(0.37, Mode::Standby), &ess(), 1e5).x, 0.37);
        assert_eq!(
            ess_step(state(0.01, Mode::Discharge), &ess(), 3600.0).x,
            0.0
        );
        assert_eq!(ess_step(state(0.99, Mode::Charge), &ess(), 3600.0).x, 1.0);
    }

    #[test]
    fn ess_lossless_round_trip() {
        let p = EssParams {
            eta_c: 1.0,
            eta_d: 1.0,
            ..ess()
        };
        let up = ess_step(state(0.4, Mode::Charge), &p, 600.0);
        let down = ess_step(
            DeviceState {
                mode: Mode::Discharge,
                ..up
            },
            &p,
            600.0,
        );
        assert_abs_diff_eq!(down.x, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn ewh_equilibrium_and_heating() {
        let p = EwhParams::default();
        let s = ewh_step(state(p.x_amb, Mode::Standby), &p, 60.0, 0.0);
        assert_eq!(s.x, p.x_amb);
        let h = ewh_step(state(125.0, Mode::Charge), &p, 60.0, 0.0);
        assert!(h.x > 125.0);
    }

    #[test]
    fn ewh_standby_closed_form() {
        let p = EwhParams {
            loss_coeff: 1e-5,
            inlet_temp: 60.0,
            ..EwhParams::default()
        };
        let s = ewh_step(state(130.0, Mode::Standby), &p, 60.0, 0.01);
        // 60 * (1e-5 * 60 + 0.01 / 303 * 70)
        let drop = 60.0 * (1e-5 * 60.0 + 0.01 / 303.0 * 70.0);
        assert_abs_diff_eq!(130.0 - s.x, drop, epsilon = 1e-12);
        assert_abs_diff_eq!(130.0 - s.x, 0.174614, epsilon = 1e-6);
    }

    #[test]
    fn ewh_heat_up_time() {
        let p = EwhParams {
            loss_coeff: 0.0,
            ..EwhParams::default()
        };
        // 303 L of water is 668 lb; 20 °F of rise at 4 kW
        let hours: f64 = 303.0 * 2.20462 * 20.0 / (4.0 * 3412.14);
        let mut x = 120.0;
        let mut t = 0.0_f64;
        while x < 140.0 {
            x = ewh_advance(x, &p, true, 1.0, 0.0);
            t += 1.0;
        }
        assert!(
            (t / 3600.0 - hours).abs() < 1e-3,
            "heat-up {} h",
            t / 3600.0
        );
        assert!((hours - 0.979).abs() < 1e-3);
    }

    #[test]
    fn ewh_opt_out_above_band_coasts() {
        let p = EwhParams::default();
        let dp = DeviceParams::Ewh(p);
        let s = state(p.x_hi + 1.0, Mode::OptOut);
        assert_eq!(action(&dp, &s), Action::Idle);
        assert_eq!(power_kw(&dp, &s), 0.0);
        assert!(ewh_step(s, &p, 60.0, 0.001).x < s.x);
    }

    #[test]
    fn opt_out_directions() {
        let dp = DeviceParams::Ess(ess());
        assert_eq!(action(&dp, &state(0.05, Mode::OptOut)), Action::Charge);
        assert_eq!(action(&dp, &state(0.95, Mode::OptOut)), Action::Discharge);
        assert_eq!(power_kw(&dp, &state(0.95, Mode::OptOut)), -5.0);
    }

    #[test]
    fn default_profile_shape() {
        let prof = DrawProfile::default();
        assert!(water_draw(&prof, 9).unwrap() > water_draw(&prof, 16).unwrap());
        assert!(water_draw(&prof, 21).unwrap() > water_draw(&prof, 16).unwrap());
        assert!(matches!(
            water_draw(&prof, 24),
            Err(Error::HourOutOfRange(24))
        ));
        let zero = DrawProfile::zero();
        assert!((0..24).all(|h| water_draw(&zero, h).unwrap() == 0.0));
    }

    #[test]
    fn profile_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draw.csv");
        let mut text = String::from("hour,liters_per_s\n");
        for h in 0..24 {
            text.push_str(&format!("{h},{}\n", 0.001 * h as f64));
        }
        fs::write(&path, text).unwrap();
        let prof = DrawProfile::load(&path).unwrap();
        for h in 0..24 {
            assert_eq!(water_draw(&prof, h).unwrap(), 0.001 * h as f64);
        }
    }

    #[test]
    fn zero_spread_is_nominal() {
        let nominal = DeviceParams::Ess(ess());
        let fleet = build_fleet(&nominal, 100, 0.0, 3, 2.0).unwrap();
        assert!(fleet.devices().iter().all(|d| d.params == nominal));
        assert!(fleet
            .devices()
            .iter()
            .all(|d| (0.1..=0.9).contains(&d.state.x) && d.state.mode == Mode::Standby));
    }

    #[test]
    fn build_is_deterministic_and_nested() {
        let nominal = DeviceParams::Ess(ess());
        let a = build_fleet(&nominal, 50, 0.1, 8, 2.0).unwrap();
        let b = build_fleet(&nominal, 50, 0.1, 8, 2.0).unwrap();
        assert_eq!(a, b);
        let big = build_fleet(&nominal, 80, 0.1, 8, 2.0).unwrap();
        assert_eq!(a.devices(), &big.devices()[..50]);
    }

    #[test]
    fn spread_fleet_mean_capacity() {
        let nominal = DeviceParams::Ess(ess());
        let fleet = build_fleet(&nominal, 10_000, 0.2, 21, 2.0).unwrap();
        let mean = fleet
            .devices()
            .iter()
            .map(|d| match d.params {
                DeviceParams::Ess(p) => p.e_cap,
                _ => unreachable!(),
            })
            .sum::<f64>()
            / 10_000.0;
        assert!((mean - 13.5).abs() / 13.5 < 0.01, "mean capacity {mean}");
        for d in fleet.devices() {
            d.params.validate().unwrap();
        }
    }

    #[test]
    fn unstable_dt_rejected() {
        let nominal = DeviceParams::Ewh(EwhParams {
            loss_coeff: 1e-3,
            ..EwhParams::default()
        });
        assert!(build_fleet(&nominal, 1, 0.0, 0, 200.0).is_err());
        assert!(build_fleet(&nominal, 1, 0.0, 0, 2.0).is_ok());
    }

    #[test]
    fn baseload_matches_hand_value() {
        let p = EwhParams::default();
        let mut fleet = build_fleet(&DeviceParams::Ewh(p), 10, 0.0, 0, 2.0).unwrap();
        fleet.set_hour_of_day(9).unwrap();
        let draw = DEFAULT_DRAW[9];
        let per = (2e-6 * 60.0 + draw / 303.0 * 70.0) * 303.0 * 2.20462 * 3600.0 / 3412.14;
        assert_abs_diff_eq!(fleet.baseload_kw(), 10.0 * per, epsilon = 1e-9);
    }
}
