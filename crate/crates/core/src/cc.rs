//! Centralized coordinator: full knowledge of every energy state, greedy dispatch by priority.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::agc::ReferenceSignal;
use crate::devices::{Device, Fleet, Mode};
use crate::error::{Error, Result};
use crate::trace::{FleetTrace, ModeCounts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcCommand {
    pub device_index: usize,
    pub target_mode: Mode,
}

fn by_x_then_index(devices: &[Device]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        devices[a]
            .state
            .x
            .total_cmp(&devices[b].state.x)
            .then(a.cmp(&b))
    }
}

fn can_charge(d: &Device) -> bool {
    d.state.x < d.params.hard_max()
}

fn can_discharge(d: &Device) -> bool {
    d.params.can_discharge() && d.state.x > d.params.hard_min()
}

/// Mode changes that bring demand closest to `p_ref_kw`.
///
/// A positive error switches standby devices to charging in ascending energy state, then
/// discharging devices to standby; a negative error mirrors this in descending order. Each
/// pass stops at the first device whose rate would not reduce the magnitude of the error.
/// No device moves directly between charging and discharging.
pub fn cc_dispatch(fleet: &Fleet, p_ref_kw: f64, p_dem_kw: f64) -> Vec<CcCommand> {
    let devices = fleet.devices();
    let mut e = p_ref_kw - p_dem_kw;
    let mut commands = Vec::new();
    if e == 0.0 {
        return commands;
    }
    let raising = e > 0.0;
    let order = by_x_then_index(devices);

    let mut pass = |eligible: &dyn Fn(&Device) -> bool,
                    delta: &dyn Fn(&Device) -> f64,
                    target: Mode,
                    e: &mut f64| {
        let mut idx: Vec<usize> = (0..devices.len())
            .filter(|&i| eligible(&devices[i]))
            .collect();
        idx.sort_by(&order);
        if !raising {
            idx.reverse();
        }
        for i in idx {
            let step = delta(&devices[i]);
            if (*e - step).abs() >= e.abs() {
                break;
            }
            *e -= step;
            commands.push(CcCommand {
                device_index: i,
                target_mode: target,
            });
        }
    };

    if raising {
        pass(
            &|d| d.state.mode == Mode::Standby && can_charge(d),
            &|d| d.params.charge_rate(),
            Mode::Charge,
            &mut e,
        );
        pass(
            &|d| d.state.mode == Mode::Discharge,
            &|d| d.params.discharge_rate(),
            Mode::Standby,
            &mut e,
        );
    } else {
        pass(
            &|d| d.state.mode == Mode::Standby && can_discharge(d),
            &|d| -d.params.discharge_rate(),
            Mode::Discharge,
            &mut e,
        );
        pass(
            &|d| d.state.mode == Mode::Charge,
            &|d| -d.params.charge_rate(),
            Mode::Standby,
            &mut e,
        );
    }
    commands
}

/// Idle any device that would push past its physical energy limit.
fn force_idle(fleet: &mut Fleet) {
    for d in fleet.devices_mut() {
        let stop = match d.state.mode {
            Mode::Charge => !can_charge(d),
            Mode::Discharge => !can_discharge(d),
            _ => false,
        };
        if stop {
            d.state.mode = Mode::Standby;
        }
    }
}

fn step(fleet: &mut Fleet, p_ref_kw: f64) -> f64 {
    force_idle(fleet);
    let p_now = fleet.aggregate_power_kw();
    for c in cc_dispatch(fleet, p_ref_kw, p_now) {
        fleet.devices_mut()[c.device_index].state.mode = c.target_mode;
    }
    let p_dem = fleet.aggregate_power_kw();
    let dt = fleet.dt_seconds();
    let draw = fleet.draw();
    for d in fleet.devices_mut() {
        d.advance(dt, draw);
    }
    p_dem
}

/// Track `reference` step by step. Initial states are the only randomness, so no seed is taken.
pub fn simulate_cc(fleet: &Fleet, reference: &ReferenceSignal) -> Result<FleetTrace> {
    simulate_cc_with_burn_in(fleet, reference, 0.0)
}

/// As [`simulate_cc`], first tracking the reference baseload for `burn_in_s` unrecorded seconds.
pub fn simulate_cc_with_burn_in(
    fleet: &Fleet,
    reference: &ReferenceSignal,
    burn_in_s: f64,
) -> Result<FleetTrace> {
    check_dt(fleet, reference)?;
    let mut fleet = fleet.clone();
    for d in fleet.devices_mut() {
        d.state.mode = Mode::Standby;
        d.state.packet_remaining_s = 0.0;
    }
    let baseload_kw = reference.baseload_mw() * 1000.0;
    let burn_steps = (burn_in_s / fleet.dt_seconds()).round() as usize;
    for _ in 0..burn_steps {
        step(&mut fleet, baseload_kw);
    }
    let mut trace =
        FleetTrace::with_capacity(fleet.dt_seconds(), reference.len(), false, baseload_kw);
    for i in 0..reference.len() {
        let p_ref = reference.kw(i);
        let p_dem = step(&mut fleet, p_ref);
        trace.p_ref_kw.push(p_ref);
        trace.p_dem_kw.push(p_dem);
        trace.modes.push(ModeCounts::of(&fleet));
    }
    Ok(trace)
}

pub(crate) fn check_dt(fleet: &Fleet, reference: &ReferenceSignal) -> Result<()> {
    if (fleet.dt_seconds() - reference.dt_seconds()).abs() > 1e-12 {
        return Err(Error::DtMismatch {
            reference: reference.dt_seconds(),
            fleet: fleet.dt_seconds(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{build_fleet, DeviceParams, DeviceState, EssParams, EwhParams};

    fn ess_fleet(xs: &[f64], mode: Mode) -> Fleet {
        let devices = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| Device {
                params: DeviceParams::Ess(EssParams::default()),
                state: DeviceState {
                    mode,
                    ..DeviceState::standby(x, i as u64)
                },
            })
            .collect();
        Fleet::new(devices, 2.0).unwrap()
    }

    #[test]
    fn zero_error_no_commands() {
        let f = ess_fleet(&[0.2, 0.5], Mode::Standby);
        assert!(cc_dispatch(&f, 0.0, 0.0).is_empty());
    }

    #[test]
    fn lowest_states_charge_first() {
        let f = ess_fleet(&[0.8, 0.2, 0.5], Mode::Standby);
        let cmds = cc_dispatch(&f, 10.0, 0.0);
        assert_eq!(
            cmds,
            vec![
                CcCommand {
                    device_index: 1,
                    target_mode: Mode::Charge
                },
                CcCommand {
                    device_index: 2,
                    target_mode: Mode::Charge
                },
            ]
        );
    }

    #[test]
    fn highest_charging_device_stops() {
        let f = ess_fleet(&[0.3, 0.7, 0.5], Mode::Charge);
        let cmds = cc_dispatch(&f, 10.0, 15.0);
        assert_eq!(
            cmds,
            vec![CcCommand {
                device_index: 1,
                target_mode: Mode::Standby
            }]
        );
    }

    #[test]
    fn half_rate_rule() {
        let f = ess_fleet(&[0.2, 0.3, 0.4], Mode::Standby);
        assert_eq!(cc_dispatch(&f, 12.0, 0.0).len(), 2);
        assert_eq!(cc_dispatch(&f, 12.6, 0.0).len(), 3);
        assert_eq!(cc_dispatch(&f, 2.4, 0.0).len(), 0);
    }

    #[test]
    fn heaters_never_discharge() {
        let devices = (0..3)
            .map(|i| Device {
                params: DeviceParams::Ewh(EwhParams::default()),
                state: DeviceState::standby(130.0, i),
            })
            .collect();
        let f = Fleet::new(devices, 2.0).unwrap();
        assert!(cc_dispatch(&f, -10.0, 0.0).is_empty());
    }

    #[test]
    fn full_fleet_tracks_one_megawatt() {
        let f = ess_fleet(&[0.5; 200], Mode::Standby);
        let r = ReferenceSignal::constant(1.0, 2.0, 1).unwrap();
        let t = simulate_cc(&f, &r).unwrap();
        assert!(t.p_dem_kw.iter().all(|&p| p == 1000.0));
    }

    #[test]
    fn capacity_limited() {
        let f = ess_fleet(&[0.5; 199], Mode::Standby);
        let r = ReferenceSignal::constant(1.0, 2.0, 1).unwrap();
        let t = simulate_cc(&f, &r).unwrap();
        assert!(t.p_dem_kw.iter().all(|&p| p == 995.0));
    }

    #[test]
    fn zero_reference_stays_idle() {
        let f = build_fleet(&DeviceParams::Ess(EssParams::default()), 50, 0.0, 1, 2.0).unwrap();
        let r = ReferenceSignal::constant(0.0, 2.0, 1).unwrap();
        let t = simulate_cc(&f, &r).unwrap();
        assert!(t.p_dem_kw.iter().all(|&p| p.abs() <= 5.0));
    }

    #[test]
    fn full_batteries_are_idled() {
        let f = ess_fleet(&[0.999; 10], Mode::Standby);
        let r = ReferenceSignal::constant(0.05, 2.0, 1).unwrap();
        let t = simulate_cc(&f, &r).unwrap();
        assert_eq!(*t.p_dem_kw.last().unwrap(), 0.0);
    }

    #[test]
    fn dt_mismatch() {
        let f = ess_fleet(&[0.5], Mode::Standby);
        let r = ReferenceSignal::constant(0.0, 4.0, 1).unwrap();
        assert!(matches!(simulate_cc(&f, &r), Err(Error::DtMismatch { .. })));
    }
}
