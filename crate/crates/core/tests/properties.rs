//! Invariants of the device models, coordinators, scoring, search and population model,
//! checked on randomized inputs.

use derflex::agc::{self, make_reference, synthesize_agc};
use derflex::devices::{ess_advance, ewh_advance, Action};
use derflex::flexibility::{self, find_n_min, kw_per_device, FlexQuery};
use derflex::macromodel::{self, ControlFractions};
use derflex::pem::{
    apply_grants, charge_request_rate, device_streams, discharge_request_rate, pem_grant, pem_poll,
    pem_step_and_optout, request_probability, Direction,
};
use derflex::scoring::{self, pearson};
use derflex::{
    build_fleet, cc_dispatch, Device, DeviceParams, DeviceState, EssParams, EwhParams, Fleet,
    MacroModel, Mode, PemParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ess() -> DeviceParams {
    DeviceParams::Ess(EssParams::default())
}

fn action_strategy() -> impl Strategy<Value = Action> {
    prop_oneof![
        Just(Action::Charge),
        Just(Action::Discharge),
        Just(Action::Idle)
    ]
}

fn mode_strategy() -> impl Strategy<Value = Mode> {
    prop_oneof![
        Just(Mode::Charge),
        Just(Mode::Discharge),
        Just(Mode::Standby)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soc_stays_in_unit_interval(
        x0 in 0.0..=1.0f64,
        steps in prop::collection::vec((action_strategy(), 1.0..5000.0f64), 1..60),
    ) {
        let p = EssParams::default();
        let mut x = x0;
        for (a, dt) in steps {
            x = ess_advance(x, &p, a, dt);
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn lossless_round_trip(x0 in 0.2..0.8f64, t in 1.0..1800.0f64) {
        let p = EssParams { eta_c: 1.0, eta_d: 1.0, ..EssParams::default() };
        let up = ess_advance(x0, &p, Action::Charge, t);
        let back = ess_advance(up, &p, Action::Discharge, t);
        prop_assert!((back - x0).abs() <= 1e-12);
    }

    #[test]
    fn idle_heater_never_overshoots(
        x0 in 60.0..180.0f64,
        draw in 0.0..0.05f64,
        frac in 0.05..1.0f64,
    ) {
        let p = EwhParams::default();
        let dt = frac * p.max_stable_dt(draw);
        let k = p.loss_coeff + draw / p.tank_liters;
        let eq = (p.loss_coeff * p.x_amb + draw / p.tank_liters * p.inlet_temp) / k;
        let mut x = x0;
        for _ in 0..200 {
            let next = ewh_advance(x, &p, false, dt, draw);
            prop_assert!((next - eq).abs() <= (x - eq).abs() + 1e-12);
            prop_assert!((next - eq) * (x - eq) >= 0.0);
            x = next;
        }
    }

    #[test]
    fn nominal_fleet_is_identical(n in 1usize..200, seed in any::<u64>()) {
        let f = build_fleet(&ess(), n, 0.0, seed, 2.0).unwrap();
        prop_assert!(f.devices().iter().all(|d| d.params == ess()));
        let again = build_fleet(&ess(), n, 0.0, seed, 2.0).unwrap();
        prop_assert_eq!(f, again);
    }

    #[test]
    fn heterogeneous_fleets_are_valid(n in 1usize..100, z in 0.0..=1.0f64, seed in any::<u64>()) {
        let f = build_fleet(&ess(), n, z, seed, 2.0).unwrap();
        for d in f.devices() {
            prop_assert!(d.params.validate().is_ok());
            let (lo, _, hi) = d.params.band();
            prop_assert!(lo <= d.state.x && d.state.x <= hi);
        }
    }

    #[test]
    fn cc_dispatch_tracks_within_one_rate(
        xs in prop::collection::vec((0.1..0.9f64, mode_strategy()), 1..120),
        p_ref in -700.0..700.0f64,
    ) {
        let devices: Vec<Device> = xs
            .iter()
            .enumerate()
            .map(|(i, &(x, mode))| Device { params: ess(), state: DeviceState { mode, ..DeviceState::standby(x, i as u64) } })
            .collect();
        let fleet = Fleet::new(devices, 2.0).unwrap();
        let p_dem = fleet.aggregate_power_kw();
        let commands = cc_dispatch(&fleet, p_ref, p_dem);
        let mut after = fleet.clone();
        for c in &commands {
            prop_assert!(c.target_mode != Mode::OptOut);
            after.devices_mut()[c.device_index].state.mode = c.target_mode;
        }
        let e = p_ref - after.aggregate_power_kw();
        // a device moved to standby this interval cannot also cross to the other direction
        let unused = |from: Mode| {
            after
                .devices()
                .iter()
                .zip(fleet.devices())
                .any(|(a, b)| b.state.mode == a.state.mode && (a.state.mode == Mode::Standby || a.state.mode == from))
        };
        let saturated = if e > 0.0 { !unused(Mode::Discharge) } else { !unused(Mode::Charge) };
        if !saturated {
            prop_assert!(e.abs() <= 5.0 + 1e-9, "residual {e}");
        }
        // priority: switched-on devices sit below every standby device left off
        let left: Vec<f64> = after
            .devices()
            .iter()
            .zip(fleet.devices())
            .filter(|(a, b)| a.state.mode == Mode::Standby && b.state.mode == Mode::Standby)
            .map(|(a, _)| a.state.x)
            .collect();
        for c in &commands {
            let x = fleet.devices()[c.device_index].state.x;
            match (fleet.devices()[c.device_index].state.mode, c.target_mode) {
                (Mode::Standby, Mode::Charge) => prop_assert!(left.iter().all(|l| x <= *l)),
                (Mode::Standby, Mode::Discharge) => prop_assert!(left.iter().all(|l| x >= *l)),
                _ => {}
            }
        }
    }

    #[test]
    fn request_rate_decreases_across_band(a in 0.101..0.899f64, b in 0.101..0.899f64) {
        prop_assume!((a - b).abs() > 1e-6);
        let pem = PemParams::default();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(charge_request_rate(lo, &ess(), &pem) > charge_request_rate(hi, &ess(), &pem));
        let d_lo = discharge_request_rate(lo, &ess(), &pem).unwrap();
        let d_hi = discharge_request_rate(hi, &ess(), &pem).unwrap();
        prop_assert!(d_lo < d_hi);
    }

    #[test]
    fn request_probability_is_a_probability(mu in 0.0..1e3f64, dt in 0.0..100.0f64) {
        let p = request_probability(mu, dt);
        prop_assert!((0.0..=1.0).contains(&p));
        if mu == 0.0 {
            prop_assert_eq!(p, 0.0);
        }
        if mu > 0.0 && dt > 0.0 {
            prop_assert!(p > 0.0);
        }
    }

    #[test]
    fn pem_transitions_follow_the_mode_graph(seed in any::<u64>(), p_ref in -300.0..300.0f64) {
        let pem = PemParams::default();
        let mut fleet = build_fleet(&ess(), 80, 0.1, seed, pem.poll_dt_s).unwrap();
        let mut rngs = device_streams(&fleet, seed);
        for _ in 0..300 {
            let before: Vec<Mode> = fleet.devices().iter().map(|d| d.state.mode).collect();
            let p_now = fleet.aggregate_power_kw();
            let requests = pem_poll(&fleet, &mut rngs, &pem);
            let granted = pem_grant(&requests, p_now, p_ref, &fleet);
            apply_grants(&mut fleet, &granted, &pem);
            let e0 = p_ref - p_now;
            let e1 = p_ref - fleet.aggregate_power_kw();
            prop_assert!(e1.abs() <= e0.abs() + 1e-9);
            if e0 * e1 < 0.0 {
                prop_assert!(e1.abs() <= 5.0 + 1e-9);
            }
            pem_step_and_optout(&mut fleet, pem.poll_dt_s);
            for (d, m0) in fleet.devices().iter().zip(before) {
                let m1 = d.state.mode;
                let allowed = m0 == m1
                    || m1 == Mode::OptOut
                    || matches!(
                        (m0, m1),
                        (Mode::Standby, Mode::Charge)
                            | (Mode::Standby, Mode::Discharge)
                            | (Mode::Charge, Mode::Standby)
                            | (Mode::Discharge, Mode::Standby)
                            | (Mode::OptOut, Mode::Standby)
                    );
                prop_assert!(allowed, "{m0:?} -> {m1:?}");
                if d.state.packet_remaining_s > 0.0 {
                    prop_assert!(matches!(m1, Mode::Charge | Mode::Discharge));
                }
            }
        }
    }

    #[test]
    fn heaters_never_discharge(seed in any::<u64>(), p_ref in -300.0..300.0f64) {
        let pem = PemParams::default();
        let ewh = DeviceParams::Ewh(EwhParams::default());
        let mut fleet = build_fleet(&ewh, 60, 0.1, seed, pem.poll_dt_s).unwrap();
        let mut rngs = device_streams(&fleet, seed);
        for _ in 0..200 {
            let p_now = fleet.aggregate_power_kw();
            let requests = pem_poll(&fleet, &mut rngs, &pem);
            prop_assert!(requests.iter().all(|r| r.direction == Direction::Charge));
            let granted = pem_grant(&requests, p_now, p_ref, &fleet);
            apply_grants(&mut fleet, &granted, &pem);
            pem_step_and_optout(&mut fleet, pem.poll_dt_s);
            prop_assert!(fleet.devices().iter().all(|d| d.state.mode != Mode::Discharge));
            prop_assert!(fleet.aggregate_power_kw() >= 0.0);
        }
    }

    #[test]
    fn accuracy_is_affine_invariant(seed in any::<u64>(), alpha in 0.1..10.0f64, beta in -100.0..100.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d: Vec<f64> = r.iter().map(|v| v + 0.3 * rng.random_range(-1.0..1.0)).collect();
        let (a0, l0) = scoring::accuracy(&r, &d, 0, 300);
        let r2: Vec<f64> = r.iter().map(|v| alpha * v + beta).collect();
        let d2: Vec<f64> = d.iter().map(|v| alpha * v + beta).collect();
        let (a1, l1) = scoring::accuracy(&r2, &d2, 0, 300);
        prop_assert!((a0 - a1).abs() <= 1e-9);
        prop_assert_eq!(l0, l1);
    }

    #[test]
    fn scores_stay_in_range(seed in any::<u64>(), noise in 0.0..2.0f64, shift in 0usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = 1800;
        let r: Vec<f64> = (0..n).map(|i| (i as f64 / 90.0).sin() + 0.2).collect();
        let d: Vec<f64> = (0..n).map(|i| r[i.saturating_sub(shift)] + noise * rng.random_range(-1.0..1.0)).collect();
        let s = scoring::score(&r, &d, 2.0).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s.accuracy));
        prop_assert!((0.0..=1.0).contains(&s.delay));
        prop_assert!(s.precision <= 1.0);
        prop_assert!((s.composite - (s.accuracy + s.delay + s.precision) / 3.0).abs() < 1e-15);
        prop_assert!(pearson(&r, &d) <= 1.0);
    }

    #[test]
    fn search_is_minimal_up_to_step(
        thresholds in prop::collection::vec(1usize..3000, 1..6),
        n_start in 1usize..500,
        delta_n in 1usize..300,
    ) {
        // precision crosses the threshold exactly at a per-signal fleet size
        let eval = |n: usize, i: usize| -> derflex::Result<f64> { Ok(if n >= thresholds[i] { 0.9 } else { 0.5 }) };
        let q = FlexQuery { x_p_des: 0.7, n_start, delta_n, n_max: 100_000 };
        let r = find_n_min(&q, thresholds.len(), eval).unwrap();
        for i in 0..thresholds.len() {
            prop_assert!(eval(r.n_min, i).unwrap() > 0.7);
        }
        if r.n_min > n_start {
            prop_assert!((0..thresholds.len()).any(|i| eval(r.n_min - delta_n, i).unwrap() <= 0.7));
        }
        prop_assert!((kw_per_device(r.n_min) * r.n_min as f64 - 1000.0).abs() < 1e-9);
        prop_assert_eq!((r.n_min - n_start) % delta_n, 0);
    }

    #[test]
    fn mixture_counts_round_half_up(share in 0.0..=1.0f64, ze in 0.05..5.0f64, zw in 0.05..5.0f64) {
        let (a, b) = flexibility::mixture_fleet(1.0 - share, share, ze, zw).unwrap();
        prop_assert!((a as f64 - 1000.0 * (1.0 - share) / ze).abs() <= 0.5 + 1e-9);
        prop_assert!((b as f64 - 1000.0 * share / zw).abs() <= 0.5 + 1e-9);
    }

    #[test]
    fn synthesis_hits_hourly_means(
        seed in any::<u64>(),
        targets in prop::collection::vec(-0.9..0.9f64, 1..4),
    ) {
        let trace = synthesize_agc(seed, targets.len(), &targets).unwrap();
        let stats = agc::hourly_stats(&trace).unwrap();
        for (m, t) in stats.hourly_means.iter().zip(&targets) {
            prop_assert!((m - t).abs() <= 1e-6);
        }
        prop_assert!(trace.samples().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(trace, synthesize_agc(seed, targets.len(), &targets).unwrap());
    }

    #[test]
    fn unit_reference_is_identity(seed in any::<u64>(), target in -0.5..0.5f64) {
        let hour = synthesize_agc(seed, 1, &[target]).unwrap();
        let r = make_reference(&hour, 1.0, 1, 0.0).unwrap();
        prop_assert_eq!(r.samples_mw(), hour.samples());
    }
}

fn random_occupancy(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut q: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= s);
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn macro_step_conserves_mass_and_sign(seed in any::<u64>(), bc in 0.0..=1.0f64, bd in 0.0..=1.0f64) {
        let m = MacroModel::nominal(PemParams::default()).unwrap();
        let ctrl = m.controls(bc, bd);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = random_occupancy(&mut rng, m.dim());
        for _ in 0..50 {
            let next = m.step(&q, &ctrl);
            prop_assert!(next.iter().all(|v| *v >= 0.0));
            prop_assert!((next.iter().sum::<f64>() - q.iter().sum::<f64>()).abs() <= 1e-10);
            q = next;
        }
    }

    #[test]
    fn macro_step_is_affine_in_occupancy(seed in any::<u64>(), bc in 0.0..=1.0f64, bd in 0.0..=1.0f64, a in 0.0..=1.0f64) {
        let m = MacroModel::nominal(PemParams::default()).unwrap();
        let ctrl = ControlFractions::new(bc, bd, m.pem());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q1 = random_occupancy(&mut rng, m.dim());
        let q2 = random_occupancy(&mut rng, m.dim());
        let mix: Vec<f64> = q1.iter().zip(&q2).map(|(x, y)| a * x + (1.0 - a) * y).collect();
        let lhs = m.step(&mix, &ctrl);
        let (f1, f2) = (m.step(&q1, &ctrl), m.step(&q2, &ctrl));
        for i in 0..m.dim() {
            prop_assert!((lhs[i] - (a * f1[i] + (1.0 - a) * f2[i])).abs() <= 1e-14);
        }
    }

    #[test]
    fn steady_state_is_unique(seed in any::<u64>(), bc in 0.05..=1.0f64, bd in 0.05..=1.0f64) {
        let m = MacroModel::nominal(PemParams::default()).unwrap();
        let ctrl = m.controls(bc, bd);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = m.steady_state_from(&ctrl, &m.uniform(), macromodel::DEFAULT_TOL, 200).unwrap();
        let b = m.steady_state_from(&ctrl, &random_occupancy(&mut rng, m.dim()), macromodel::DEFAULT_TOL, 200).unwrap();
        prop_assert!(a.residual <= macromodel::DEFAULT_TOL && b.residual <= macromodel::DEFAULT_TOL);
        // a small step residual still allows a larger distance when mixing is slow
        let gap = a.q.iter().zip(&b.q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-6, "gap {gap}");
        let direct = m.steady_state_direct(&ctrl).unwrap();
        let gap = a.q.iter().zip(&direct).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-6, "direct gap {gap}");
    }
}

#[test]
fn grid_optimum_is_a_grid_minimum() {
    let m = MacroModel::nominal(PemParams::default()).unwrap();
    let table = derflex::PowerTable::compute(&m, 21).unwrap();
    let best = macromodel::solve_nominal(&m, &table, derflex::Objective::MinPower, 1000).unwrap();
    let x_set = m.params().x_set;
    for p in table.points.iter().filter(|p| p.mean_soc >= x_set) {
        assert!(best.p_dem_kw <= p.power_per_device_kw * 1000.0 + 1e-9);
    }
    assert!(best.mean_soc >= x_set);
}

#[test]
fn selected_hours_lie_in_the_interval() {
    let synth = agc::AgcSynth::default();
    let sel = agc::standard_signals(&synth, 3, 2000).unwrap();
    let all =
        agc::synthetic_dataset(&synth, 3, 2000, agc::PJM_HOURLY_MU, agc::PJM_HOURLY_SIGMA).unwrap();
    let (lo, hi) = agc::hourly_stats(&all).unwrap().interval();
    for h in &sel.hours {
        assert!(lo <= h.mean() && h.mean() <= hi);
    }
    assert_eq!(sel, agc::standard_signals(&synth, 3, 2000).unwrap());
}

/// More noise on the response, lower precision, over replicate noise draws.
#[test]
fn precision_falls_with_noise() {
    let r: Vec<f64> = (0..1800).map(|i| (i as f64 / 120.0).sin()).collect();
    let mean_precision = |amp: f64| {
        (0..8u64)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let d: Vec<f64> = r
                    .iter()
                    .map(|v| v + amp * rng.random_range(-1.0..1.0))
                    .collect();
                scoring::score(&r, &d, 2.0).unwrap().precision
            })
            .sum::<f64>()
            / 8.0
    };
    let ps: Vec<f64> = [0.0, 0.05, 0.1, 0.2, 0.4]
        .iter()
        .map(|&a| mean_precision(a))
        .collect();
    assert!(ps.windows(2).all(|w| w[1] < w[0]), "{ps:?}");
}

/// Long zero-mean tracking keeps the average state of charge inside the dead-band.
#[test]
fn pem_keeps_soc_in_band_on_average() {
    let pem = PemParams::default();
    let mut fleet = build_fleet(&ess(), 500, 0.0, 9, 2.0).unwrap();
    let hour = synthesize_agc(9, 3, &[0.0, 0.0, 0.0]).unwrap();
    let mut rngs = device_streams(&fleet, 9);
    let mut soc_sum = 0.0;
    for v in hour.samples() {
        let p_now = fleet.aggregate_power_kw();
        let req = pem_poll(&fleet, &mut rngs, &pem);
        let g = pem_grant(&req, p_now, 300.0 * v, &fleet);
        apply_grants(&mut fleet, &g, &pem);
        pem_step_and_optout(&mut fleet, pem.poll_dt_s);
        soc_sum += fleet.devices().iter().map(|d| d.state.x).sum::<f64>() / fleet.len() as f64;
    }
    let mean = soc_sum / hour.len() as f64;
    assert!((0.1..=0.9).contains(&mean), "mean SoC {mean}");
}

#[test]
fn mode_counts_cover_the_fleet() {
    let fleet = build_fleet(&ess(), 300, 0.0, 4, 2.0).unwrap();
    let hour = synthesize_agc(4, 1, &[0.2]).unwrap();
    let reference = make_reference(&hour, 0.5, 1, 0.0).unwrap();
    let trace = derflex::simulate_pem(&fleet, &reference, &PemParams::default(), 4).unwrap();
    assert_eq!(trace.p_dem_kw.len(), reference.len());
    assert!(trace
        .modes
        .iter()
        .all(|m| (m.charge + m.discharge + m.standby + m.optout) as usize == 300));
}
