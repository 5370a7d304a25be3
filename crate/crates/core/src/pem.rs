//! Packetized energy management: devices request fixed-length energy packets at a rate set by
//! their energy state, and a coordinator accepts or denies each request against the reference.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agc::ReferenceSignal;
use crate::cc::check_dt;
use crate::devices::{action, Action, DeviceParams, Fleet, Mode};
use crate::error::{Error, Result};
use crate::rng;
use crate::trace::{FleetTrace, ModeCounts, RequestCounts};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PemParams {
    /// Duration of one granted packet.
    pub packet_length_s: f64,
    /// Mean time-to-request at the setpoint.
    pub mttr_s: f64,
    pub poll_dt_s: f64,
    /// Unscored lead-in spent tracking the baseload.
    pub burn_in_s: f64,
}

impl Default for PemParams {
    fn default() -> Self {
        Self {
            packet_length_s: 120.0,
            mttr_s: 120.0,
            poll_dt_s: 2.0,
            burn_in_s: 900.0,
        }
    }
}

impl PemParams {
    pub fn minutes(packet_min: f64, mttr_min: f64) -> Self {
        Self {
            packet_length_s: packet_min * 60.0,
            mttr_s: mttr_min * 60.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.packet_length_s > 0.0
            && self.mttr_s > 0.0
            && self.poll_dt_s > 0.0
            && self.burn_in_s >= 0.0
        {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "invalid packet parameters {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Charge,
    Discharge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PemRequest {
    pub device_index: usize,
    pub direction: Direction,
}

/// How the coordinator answers requests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GrantPolicy {
    /// Accept requests, lowest index first, while each reduces the tracking error.
    Tracking,
    /// Accept each request independently with a fixed probability per direction.
    Fixed {
        accept_charge: f64,
        accept_discharge: f64,
    },
}

/// Charge request rate, 1/s. Zero at or above the top of the band, infinite at or below the bottom.
pub fn charge_request_rate(x: f64, params: &DeviceParams, pem: &PemParams) -> f64 {
    let (lo, set, hi) = params.band();
    if x >= hi {
        0.0
    } else if x <= lo {
        f64::INFINITY
    } else {
        ((hi - x) / (x - lo)) * ((set - lo) / (hi - set)) / pem.mttr_s
    }
}

/// Discharge request rate, the mirror of [`charge_request_rate`]. Batteries only.
pub fn discharge_request_rate(x: f64, params: &DeviceParams, pem: &PemParams) -> Result<f64> {
    if !params.can_discharge() {
        return Err(Error::UnsupportedDirection("discharge"));
    }
    let (lo, set, hi) = params.band();
    Ok(if x <= lo {
        0.0
    } else if x >= hi {
        f64::INFINITY
    } else {
        ((x - lo) / (hi - x)) * ((hi - set) / (set - lo)) / pem.mttr_s
    })
}

/// Probability of at least one event of a Poisson stream of rate `mu` within `dt_s`.
pub fn request_probability(mu: f64, dt_s: f64) -> f64 {
    if mu.is_infinite() {
        1.0
    } else {
        -(-mu * dt_s).exp_m1()
    }
}

/// Per-device random streams for one simulation run.
pub fn device_streams(fleet: &Fleet, seed: u64) -> Vec<ChaCha8Rng> {
    fleet
        .devices()
        .iter()
        .map(|d| rng::stream(seed, rng::PURPOSE_SIM, d.state.rng_stream))
        .collect()
}

/// Requests from standby devices inside their dead-band.
///
/// Each eligible device picks a direction with probability proportional to the two rates,
/// then requests with probability `1 - exp(-(mu_c + mu_d) dt)`.
pub fn pem_poll(fleet: &Fleet, rngs: &mut [ChaCha8Rng], pem: &PemParams) -> Vec<PemRequest> {
    let mut requests = Vec::new();
    for (i, (d, rng)) in fleet.devices().iter().zip(rngs.iter_mut()).enumerate() {
        if d.state.mode != Mode::Standby {
            continue;
        }
        let (lo, _, hi) = d.params.band();
        let x = d.state.x;
        if !(lo..=hi).contains(&x) {
            continue;
        }
        let mu_c = charge_request_rate(x, &d.params, pem);
        let mu_d = discharge_request_rate(x, &d.params, pem).unwrap_or(0.0);
        let u_dir: f64 = rng.random();
        let u_req: f64 = rng.random();
        let total = mu_c + mu_d;
        if total == 0.0 {
            continue;
        }
        let p_charge = if mu_c.is_infinite() {
            1.0
        } else if mu_d.is_infinite() {
            0.0
        } else {
            mu_c / total
        };
        if u_req < request_probability(total, pem.poll_dt_s) {
            let direction = if u_dir < p_charge {
                Direction::Charge
            } else {
                Direction::Discharge
            };
            requests.push(PemRequest {
                device_index: i,
                direction,
            });
        }
    }
    requests
}

/// Requests accepted by the tracking policy.
///
/// Charge requests are taken in order while each one reduces `|p_ref - p_dem|`, then discharge
/// requests likewise; each pass stops at the first request that would not help.
pub fn pem_grant(
    requests: &[PemRequest],
    p_dem_kw: f64,
    p_ref_kw: f64,
    fleet: &Fleet,
) -> Vec<PemRequest> {
    let mut e = p_ref_kw - p_dem_kw;
    let mut granted = Vec::new();
    for (direction, sign) in [(Direction::Charge, 1.0), (Direction::Discharge, -1.0)] {
        for r in requests.iter().filter(|r| r.direction == direction) {
            let params = &fleet.devices()[r.device_index].params;
            let step = sign
                * match direction {
                    Direction::Charge => params.charge_rate(),
                    Direction::Discharge => params.discharge_rate(),
                };
            if (e - step).abs() >= e.abs() {
                break;
            }
            e -= step;
            granted.push(*r);
        }
    }
    granted
}

fn grant_fixed(
    requests: &[PemRequest],
    rngs: &mut [ChaCha8Rng],
    accept_charge: f64,
    accept_discharge: f64,
) -> Vec<PemRequest> {
    requests
        .iter()
        .filter(|r| {
            let beta = match r.direction {
                Direction::Charge => accept_charge,
                Direction::Discharge => accept_discharge,
            };
            rngs[r.device_index].random::<f64>() < beta
        })
        .copied()
        .collect()
}

/// Start a packet on every granted device.
pub fn apply_grants(fleet: &mut Fleet, granted: &[PemRequest], pem: &PemParams) {
    for g in granted {
        let s = &mut fleet.devices_mut()[g.device_index].state;
        s.mode = match g.direction {
            Direction::Charge => Mode::Charge,
            Direction::Discharge => Mode::Discharge,
        };
        s.packet_remaining_s = pem.packet_length_s;
    }
}

/// Integrate one step, expire finished packets and apply the opt-out rule.
///
/// A device below its band opts out and charges; above its band it opts out and discharges
/// (heaters coast). An opted-out device back inside the band returns to standby.
pub fn pem_step_and_optout(fleet: &mut Fleet, dt_s: f64) {
    let draw = fleet.draw();
    for d in fleet.devices_mut() {
        d.advance(dt_s, draw);
        let s = &mut d.state;
        if matches!(s.mode, Mode::Charge | Mode::Discharge) {
            s.packet_remaining_s -= dt_s;
            if s.packet_remaining_s <= 1e-9 {
                s.packet_remaining_s = 0.0;
                s.mode = Mode::Standby;
            }
        }
        let (lo, _, hi) = d.params.band();
        let s = &mut d.state;
        if s.x < lo || s.x > hi {
            s.mode = Mode::OptOut;
            s.packet_remaining_s = 0.0;
        } else if s.mode == Mode::OptOut {
            s.mode = Mode::Standby;
        }
    }
}

struct Step {
    p_dem: f64,
    counts: RequestCounts,
}

fn pem_tick(
    fleet: &mut Fleet,
    rngs: &mut [ChaCha8Rng],
    pem: &PemParams,
    policy: &GrantPolicy,
    p_ref_kw: f64,
) -> Step {
    let p_now = fleet.aggregate_power_kw();
    let requests = pem_poll(fleet, rngs, pem);
    let granted = match policy {
        GrantPolicy::Tracking => pem_grant(&requests, p_now, p_ref_kw, fleet),
        GrantPolicy::Fixed {
            accept_charge,
            accept_discharge,
        } => grant_fixed(&requests, rngs, *accept_charge, *accept_discharge),
    };
    apply_grants(fleet, &granted, pem);
    let count = |v: &[PemRequest], dir| v.iter().filter(|r| r.direction == dir).count() as u32;
    let counts = RequestCounts {
        req_charge: count(&requests, Direction::Charge),
        req_discharge: count(&requests, Direction::Discharge),
        grant_charge: count(&granted, Direction::Charge),
        grant_discharge: count(&granted, Direction::Discharge),
    };
    let p_dem = fleet.aggregate_power_kw();
    Step { p_dem, counts }
}

/// Closed-loop tracking of `reference` under the tracking grant policy.
pub fn simulate_pem(
    fleet: &Fleet,
    reference: &ReferenceSignal,
    pem: &PemParams,
    seed: u64,
) -> Result<FleetTrace> {
    simulate_pem_with_policy(fleet, reference, pem, &GrantPolicy::Tracking, seed)
}

pub fn simulate_pem_with_policy(
    fleet: &Fleet,
    reference: &ReferenceSignal,
    pem: &PemParams,
    policy: &GrantPolicy,
    seed: u64,
) -> Result<FleetTrace> {
    pem.validate()?;
    check_dt(fleet, reference)?;
    if (pem.poll_dt_s - fleet.dt_seconds()).abs() > 1e-12 {
        return Err(Error::DtMismatch {
            reference: pem.poll_dt_s,
            fleet: fleet.dt_seconds(),
        });
    }
    if let GrantPolicy::Fixed {
        accept_charge,
        accept_discharge,
    } = policy
    {
        if !(0.0..=1.0).contains(accept_charge) || !(0.0..=1.0).contains(accept_discharge) {
            return Err(Error::InvalidParams(
                "acceptance fractions must lie in [0, 1]".into(),
            ));
        }
    }
    let mut fleet = fleet.clone();
    for d in fleet.devices_mut() {
        let s = &mut d.state;
        let (lo, _, hi) = d.params.band();
        s.packet_remaining_s = 0.0;
        s.mode = if s.x < lo || s.x > hi {
            Mode::OptOut
        } else {
            Mode::Standby
        };
    }
    let mut rngs = device_streams(&fleet, seed);
    let dt = fleet.dt_seconds();
    let baseload_kw = reference.baseload_mw() * 1000.0;
    let burn_steps = (pem.burn_in_s / dt).round() as usize;
    for _ in 0..burn_steps {
        pem_tick(&mut fleet, &mut rngs, pem, policy, baseload_kw);
        pem_step_and_optout(&mut fleet, dt);
    }
    let mut trace = FleetTrace::with_capacity(dt, reference.len(), true, baseload_kw);
    for i in 0..reference.len() {
        let p_ref = reference.kw(i);
        let step = pem_tick(&mut fleet, &mut rngs, pem, policy, p_ref);
        trace.p_ref_kw.push(p_ref);
        trace.p_dem_kw.push(step.p_dem);
        trace.modes.push(ModeCounts::of(&fleet));
        if let Some(r) = trace.requests.as_mut() {
            r.push(step.counts);
        }
        pem_step_and_optout(&mut fleet, dt);
    }
    Ok(trace)
}

/// Whether the device is consuming (positive), producing (negative) or idle this step.
pub fn device_action(fleet: &Fleet, index: usize) -> Action {
    let d = &fleet.devices()[index];
    action(&d.params, &d.state)
}
