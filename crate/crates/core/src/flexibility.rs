//! Minimum fleet size search and the experiments built on it: kW-per-device under each
//! coordinator, hourly heater flexibility, mixtures, parameter sweeps and longer horizons.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agc::{make_reference, AgcTrace, ReferenceSignal};
use crate::cc::simulate_cc_with_burn_in;
use crate::devices::{build_fleet, DeviceParams, DrawProfile, Fleet};
use crate::error::{Error, Result};
use crate::pem::{simulate_pem, PemParams};
use crate::rng::derive_seed;
use crate::scoring::{score_trace, ScoreReport};
use crate::trace::FleetTrace;

pub const DEFAULT_PRECISION_THRESHOLD: f64 = 0.70;

/// Peak draw hours, searched from a smaller starting fleet.
pub const PEAK_HOURS: [usize; 6] = [8, 9, 10, 20, 21, 22];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub signal: usize,
    pub n: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlexQuery {
    pub x_p_des: f64,
    pub n_start: usize,
    pub delta_n: usize,
    /// Search aborts beyond this size.
    pub n_max: usize,
}

impl FlexQuery {
    /// Search with the default cap of 100 times the fleet that a device of `max_rate_kw` needs
    /// to cover 1 MW on its own.
    pub fn new(n_start: usize, delta_n: usize, max_rate_kw: f64) -> Self {
        Self {
            x_p_des: DEFAULT_PRECISION_THRESHOLD,
            n_start,
            delta_n,
            n_max: (100.0 * 1000.0 / max_rate_kw).ceil() as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_start >= 1 && self.delta_n >= 1 && self.x_p_des > 0.0 && self.x_p_des <= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "invalid search settings {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexResult {
    pub n_min: usize,
    pub kw_per_device: f64,
    pub per_signal_n_min: Vec<usize>,
    pub trajectory: Vec<TrajectoryPoint>,
}

impl FlexResult {
    pub fn write_trajectory_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["signal", "n", "x_p"])?;
        for p in &self.trajectory {
            w.write_record([
                p.signal.to_string(),
                p.n.to_string(),
                p.precision.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trajectory>", e))
    }
}

/// kW each device contributes to a 1 MW product.
pub fn kw_per_device(n_min: usize) -> f64 {
    1000.0 / n_min as f64
}

/// Linear search for the smallest fleet whose precision exceeds the threshold on every signal.
///
/// Each signal is searched independently (and concurrently) from `n_start` in steps of
/// `delta_n`. The largest per-signal size is then confirmed against all signals, stepping on
/// until every one passes, since a size that works for one signal's search need not work for
/// another at a larger size.
pub fn find_n_min<F>(query: &FlexQuery, signals: usize, evaluator: F) -> Result<FlexResult>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    query.validate()?;
    if signals == 0 {
        return Err(Error::InvalidParams(
            "at least one signal is required".into(),
        ));
    }
    let searches: Vec<(Option<usize>, Vec<TrajectoryPoint>)> = (0..signals)
        .into_par_iter()
        .map(|i| search_one(query, i, &evaluator))
        .collect::<Result<_>>()?;

    let mut cache: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (_, traj) in &searches {
        for p in traj {
            cache.insert((p.signal, p.n), p.precision);
        }
    }
    let trajectory_of = |cache: &BTreeMap<(usize, usize), f64>| {
        cache
            .iter()
            .map(|(&(signal, n), &precision)| TrajectoryPoint {
                signal,
                n,
                precision,
            })
            .collect::<Vec<_>>()
    };
    if searches.iter().any(|(n, _)| n.is_none()) {
        return Err(Error::CapExceeded {
            cap: query.n_max,
            trajectory: trajectory_of(&cache),
        });
    }
    let per_signal_n_min: Vec<usize> = searches.iter().map(|(n, _)| n.unwrap()).collect();
    let mut n = *per_signal_n_min.iter().max().unwrap();
    loop {
        let missing: Vec<usize> = (0..signals)
            .filter(|i| !cache.contains_key(&(*i, n)))
            .collect();
        let fresh: Vec<(usize, f64)> = missing
            .into_par_iter()
            .map(|i| evaluator(n, i).map(|x| (i, x)))
            .collect::<Result<_>>()?;
        for (i, x) in fresh {
            cache.insert((i, n), x);
        }
        if (0..signals).all(|i| cache[&(i, n)] > query.x_p_des) {
            break;
        }
        n += query.delta_n;
        if n > query.n_max {
            return Err(Error::CapExceeded {
                cap: query.n_max,
                trajectory: trajectory_of(&cache),
            });
        }
    }
    Ok(FlexResult {
        n_min: n,
        kw_per_device: kw_per_device(n),
        per_signal_n_min,
        trajectory: trajectory_of(&cache),
    })
}

fn search_one<F>(
    query: &FlexQuery,
    signal: usize,
    evaluator: &F,
) -> Result<(Option<usize>, Vec<TrajectoryPoint>)>
where
    F: Fn(usize, usize) -> Result<f64>,
{
    let mut trajectory = Vec::new();
    let mut n = query.n_start;
    while n <= query.n_max {
        let precision = evaluator(n, signal)?;
        trajectory.push(TrajectoryPoint {
            signal,
            n,
            precision,
        });
        if precision > query.x_p_des {
            return Ok((Some(n), trajectory));
        }
        n += query.delta_n;
    }
    Ok((None, trajectory))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Coordinator {
    Centralized,
    Packetized(PemParams),
}

/// Everything needed to simulate a fleet against a signal, except the fleet size.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub nominal: DeviceParams,
    pub heterogeneity_z: f64,
    pub coordinator: Coordinator,
    pub draw_profile: DrawProfile,
    pub hour_of_day: usize,
    pub dt_seconds: f64,
    /// Replicate simulations per evaluation; the median precision is used.
    pub seeds: usize,
    pub seed: u64,
    pub scale_mw: f64,
    pub k_hours: usize,
}

impl Experiment {
    pub fn new(nominal: DeviceParams, coordinator: Coordinator) -> Self {
        Self {
            nominal,
            heterogeneity_z: 0.0,
            coordinator,
            draw_profile: DrawProfile::default(),
            hour_of_day: 0,
            dt_seconds: 2.0,
            seeds: 1,
            seed: 0,
            scale_mw: 1.0,
            k_hours: 1,
        }
    }

    /// Burn-in before the scored horizon.
    pub fn burn_in_s(&self) -> f64 {
        match &self.coordinator {
            Coordinator::Centralized => 0.0,
            Coordinator::Packetized(p) => p.burn_in_s,
        }
    }

    pub fn fleet_seed(&self, replicate: usize) -> u64 {
        derive_seed(self.seed, replicate as u64, 0)
    }

    pub fn sim_seed(&self, replicate: usize) -> u64 {
        derive_seed(self.seed, replicate as u64, 1)
    }

    pub fn build(&self, n: usize, replicate: usize) -> Result<Fleet> {
        self.build_part(&self.nominal, n, replicate, 0)
    }

    fn build_part(
        &self,
        nominal: &DeviceParams,
        n: usize,
        replicate: usize,
        part: u64,
    ) -> Result<Fleet> {
        let seed = derive_seed(self.fleet_seed(replicate), part, 2);
        let fleet = build_fleet(nominal, n, self.heterogeneity_z, seed, self.dt_seconds)?;
        Fleet::with_profile(
            fleet.devices().to_vec(),
            self.dt_seconds,
            self.draw_profile.clone(),
            self.hour_of_day,
        )
    }

    /// A batteries-then-heaters fleet of the given composition.
    pub fn build_mixture(
        &self,
        ess: &DeviceParams,
        n_ess: usize,
        ewh: &DeviceParams,
        n_ewh: usize,
        replicate: usize,
    ) -> Result<Fleet> {
        match (n_ess, n_ewh) {
            (0, 0) => Err(Error::InvalidParams("empty mixture".into())),
            (0, n) => self.build_part(ewh, n, replicate, 2),
            (n, 0) => self.build_part(ess, n, replicate, 1),
            (a, b) => self
                .build_part(ess, a, replicate, 1)?
                .merge(self.build_part(ewh, b, replicate, 2)?),
        }
    }

    /// Reference for `fleet`: its holding baseload plus the scaled signal.
    pub fn reference(&self, fleet: &Fleet, hour: &AgcTrace) -> Result<ReferenceSignal> {
        make_reference(
            hour,
            self.scale_mw,
            self.k_hours,
            fleet.baseload_kw() / 1000.0,
        )
    }

    pub fn simulate(&self, fleet: &Fleet, hour: &AgcTrace, replicate: usize) -> Result<FleetTrace> {
        let reference = self.reference(fleet, hour)?;
        match &self.coordinator {
            Coordinator::Centralized => simulate_cc_with_burn_in(fleet, &reference, 0.0),
            Coordinator::Packetized(pem) => {
                simulate_pem(fleet, &reference, pem, self.sim_seed(replicate))
            }
        }
    }

    pub fn run(
        &self,
        fleet: &Fleet,
        hour: &AgcTrace,
        replicate: usize,
    ) -> Result<(FleetTrace, ScoreReport)> {
        let trace = self.simulate(fleet, hour, replicate)?;
        let report = score_trace(&trace)?;
        Ok((trace, report))
    }

    /// Median precision over the replicates, each with its own fleet draw and random streams.
    pub fn precision_with<B>(&self, build: B, hour: &AgcTrace) -> Result<f64>
    where
        B: Fn(usize) -> Result<Fleet> + Sync,
    {
        let scores: Vec<f64> = (0..self.seeds.max(1))
            .into_par_iter()
            .map(|r| {
                let fleet = build(r)?;
                Ok(self.run(&fleet, hour, r)?.1.precision)
            })
            .collect::<Result<_>>()?;
        Ok(median(scores))
    }

    pub fn precision(&self, n: usize, hour: &AgcTrace) -> Result<f64> {
        self.precision_with(|r| self.build(n, r), hour)
    }

    pub fn max_rate_kw(&self) -> f64 {
        self.nominal
            .charge_rate()
            .max(self.nominal.discharge_rate())
    }

    /// Minimum fleet size over `hours`, each repeated to the experiment horizon.
    pub fn find_n_min(&self, query: &FlexQuery, hours: &[AgcTrace]) -> Result<FlexResult> {
        find_n_min(query, hours.len(), |n, i| self.precision(n, &hours[i]))
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Starting fleet size for the hourly heater search.
pub fn default_ewh_n_start(hour_of_day: usize) -> usize {
    if PEAK_HOURS.contains(&hour_of_day) {
        2500
    } else {
        5000
    }
}

/// Heater flexibility for each requested hour of the day.
pub fn hourly_ewh_flexibility(
    base: &Experiment,
    hours_of_day: &[usize],
    hours: &[AgcTrace],
    delta_n: usize,
    n_start: &dyn Fn(usize) -> usize,
) -> Result<Vec<(usize, FlexResult)>> {
    hours_of_day
        .iter()
        .map(|&h| {
            if h >= 24 {
                return Err(Error::HourOutOfRange(h));
            }
            let exp = Experiment {
                hour_of_day: h,
                ..base.clone()
            };
            let query = FlexQuery::new(n_start(h), delta_n, exp.max_rate_kw());
            Ok((h, exp.find_n_min(&query, hours)?))
        })
        .collect()
}

/// Device counts for a 1 MW mixture, rounding half up.
pub fn mixture_fleet(
    z_ess: f64,
    z_ewh: f64,
    zeta_ess: f64,
    zeta_ewh: f64,
) -> Result<(usize, usize)> {
    if !(zeta_ess > 0.0 && zeta_ewh > 0.0) {
        return Err(Error::InvalidParams(
            "kW-per-device values must be positive".into(),
        ));
    }
    if z_ess < 0.0 || z_ewh < 0.0 || ((z_ess + z_ewh) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParams(format!(
            "mixture shares {z_ess} and {z_ewh} must be nonnegative and sum to 1"
        )));
    }
    let count = |z: f64, zeta: f64| (1000.0 * z / zeta + 0.5).floor() as usize;
    Ok((count(z_ess, zeta_ess), count(z_ewh, zeta_ewh)))
}

/// kW-per-device for each `(packet, mttr)` pair in minutes.
pub fn sweep_packet_mttr(
    base: &Experiment,
    grid: &[(f64, f64)],
    query: &FlexQuery,
    hours: &[AgcTrace],
) -> Result<Vec<(f64, f64, FlexResult)>> {
    let Coordinator::Packetized(pem) = base.coordinator else {
        return Err(Error::InvalidParams(
            "packet sweep needs the packetized coordinator".into(),
        ));
    };
    grid.iter()
        .map(|&(packet, mttr)| {
            let exp = Experiment {
                coordinator: Coordinator::Packetized(PemParams {
                    packet_length_s: packet * 60.0,
                    mttr_s: mttr * 60.0,
                    ..pem
                }),
                ..base.clone()
            };
            Ok((packet, mttr, exp.find_n_min(query, hours)?))
        })
        .collect()
}

pub fn sweep_heterogeneity(
    base: &Experiment,
    zs: &[f64],
    query: &FlexQuery,
    hours: &[AgcTrace],
) -> Result<Vec<(f64, FlexResult)>> {
    zs.iter()
        .map(|&z| {
            let exp = Experiment {
                heterogeneity_z: z,
                ..base.clone()
            };
            Ok((z, exp.find_n_min(query, hours)?))
        })
        .collect()
}

/// kW-per-device for each horizon length in hours.
pub fn sweep_horizon(
    base: &Experiment,
    ks: &[usize],
    query: &FlexQuery,
    hours: &[AgcTrace],
) -> Result<Vec<(usize, FlexResult)>> {
    ks.iter()
        .map(|&k| {
            let exp = Experiment {
                k_hours: k,
                ..base.clone()
            };
            Ok((k, exp.find_n_min(query, hours)?))
        })
        .collect()
}

/// Mean squared power of a signal, MW².
pub fn average_power(signal: &ReferenceSignal) -> f64 {
    let s = signal.samples_mw();
    s.iter().map(|p| p * p).sum::<f64>() / s.len() as f64
}
