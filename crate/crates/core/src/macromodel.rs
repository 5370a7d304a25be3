//! Population model of a packetized battery fleet: occupancy of (mode, energy bin) states evolves
//! by a column-stochastic map, and aggregate power is a linear read-out of the occupancy.
//!
//! The state `q` has four blocks of `n_b` bins over the dead-band, ordered charging,
//! discharging, standby, opted out. The opted-out block only uses its first bin (devices that
//! fell below the band, charging) and its last bin (devices that rose above it, discharging).
//! The state is sampled after the coordinator has answered the step's requests, so `h(q)` is
//! the power drawn during the step.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::devices::{DeviceParams, EssParams};
use crate::error::{Error, Result};
use crate::pem::{charge_request_rate, discharge_request_rate, request_probability, PemParams};

pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_GRID: usize = 101;

/// Accepted fraction of requests and fraction of active packets that expire per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlFractions {
    pub beta_charge: f64,
    pub beta_discharge: f64,
    pub expire_charge: f64,
    pub expire_discharge: f64,
}

impl ControlFractions {
    /// Acceptance fractions with geometric expiry matching the mean packet length.
    pub fn new(beta_charge: f64, beta_discharge: f64, pem: &PemParams) -> Self {
        let e = (pem.poll_dt_s / pem.packet_length_s).min(1.0);
        Self {
            beta_charge,
            beta_discharge,
            expire_charge: e,
            expire_discharge: e,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.beta_charge,
            self.beta_discharge,
            self.expire_charge,
            self.expire_discharge,
        ];
        if all.iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "control fractions outside [0, 1]: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bins {
    pub edges: Vec<f64>,
    pub centers: Vec<f64>,
    /// Centers repeated for each of the four blocks.
    pub soc_weights: Vec<f64>,
}

pub fn build_bins(params: &EssParams, n_b: usize) -> Result<Bins> {
    if n_b < 2 {
        return Err(Error::InvalidParams(format!(
            "need at least 2 bins, got {n_b}"
        )));
    }
    let w = (params.x_hi - params.x_lo) / n_b as f64;
    let edges: Vec<f64> = (0..=n_b).map(|i| params.x_lo + w * i as f64).collect();
    let centers: Vec<f64> = (0..n_b)
        .map(|i| params.x_lo + w * (i as f64 + 0.5))
        .collect();
    let soc_weights = centers.repeat(4);
    Ok(Bins {
        edges,
        centers,
        soc_weights,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroModel {
    params: EssParams,
    pem: PemParams,
    n_b: usize,
    bins: Bins,
    /// Per-step fraction of a bin's charging mass that moves up one bin.
    drift_up: f64,
    drift_down: f64,
    /// Per-bin probability of a request and the share of it in the charge direction.
    request_prob: Vec<f64>,
    charge_share: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub q: Vec<f64>,
    /// `max |q - f(q)|`.
    pub residual: f64,
    pub iterations: usize,
}

impl MacroModel {
    pub fn new(params: EssParams, pem: PemParams, n_b: usize) -> Result<Self> {
        params.validate()?;
        pem.validate()?;
        let bins = build_bins(&params, n_b)?;
        let w = bins.edges[1] - bins.edges[0];
        let dt_h = pem.poll_dt_s / 3600.0;
        let drift_up = params.eta_c * params.p_charge_rate * dt_h / (params.e_cap * w);
        let drift_down = params.p_discharge_rate * dt_h / (params.eta_d * params.e_cap * w);
        if drift_up > 1.0 || drift_down > 1.0 {
            return Err(Error::InvalidParams(format!(
                "step of {} s crosses more than one bin; use more time resolution or fewer bins",
                pem.poll_dt_s
            )));
        }
        let dp = DeviceParams::Ess(params);
        let mut request_prob = Vec::with_capacity(n_b);
        let mut charge_share = Vec::with_capacity(n_b);
        for &x in &bins.centers {
            let mu_c = charge_request_rate(x, &dp, &pem);
            let mu_d = discharge_request_rate(x, &dp, &pem)?;
            let total = mu_c + mu_d;
            request_prob.push(request_probability(total, pem.poll_dt_s));
            charge_share.push(if total > 0.0 { mu_c / total } else { 0.0 });
        }
        Ok(Self {
            params,
            pem,
            n_b,
            bins,
            drift_up,
            drift_down,
            request_prob,
            charge_share,
        })
    }

    /// Nominal battery at the default bin count.
    pub fn nominal(pem: PemParams) -> Result<Self> {
        Self::new(EssParams::default(), pem, DEFAULT_BINS)
    }

    pub fn n_b(&self) -> usize {
        self.n_b
    }

    pub fn dim(&self) -> usize {
        4 * self.n_b
    }

    pub fn bins(&self) -> &Bins {
        &self.bins
    }

    pub fn params(&self) -> &EssParams {
        &self.params
    }

    pub fn pem(&self) -> &PemParams {
        &self.pem
    }

    pub fn controls(&self, beta_charge: f64, beta_discharge: f64) -> ControlFractions {
        ControlFractions::new(beta_charge, beta_discharge, &self.pem)
    }

    /// Uniform occupancy over all states.
    pub fn uniform(&self) -> Vec<f64> {
        vec![1.0 / self.dim() as f64; self.dim()]
    }

    /// Everyone in standby, spread evenly over the bins.
    pub fn all_standby(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.dim()];
        for v in &mut q[2 * self.n_b..3 * self.n_b] {
            *v = 1.0 / self.n_b as f64;
        }
        q
    }

    /// One step: drift, return of opted-out mass, packet expiry, then requests.
    pub fn step(&self, q: &[f64], ctrl: &ControlFractions) -> Vec<f64> {
        let nb = self.n_b;
        assert_eq!(q.len(), 4 * nb, "occupancy vector has the wrong length");
        let (chg, rest) = q.split_at(nb);
        let (dis, rest) = rest.split_at(nb);
        let (sb, opt) = rest.split_at(nb);

        let mut c = vec![0.0; nb];
        let mut d = vec![0.0; nb];
        let mut s = sb.to_vec();
        let mut o = vec![0.0; nb];

        for b in 0..nb {
            let up = self.drift_up * chg[b];
            c[b] += chg[b] - up;
            if b + 1 < nb {
                c[b + 1] += up;
            } else {
                o[nb - 1] += up;
            }
            let down = self.drift_down * dis[b];
            d[b] += dis[b] - down;
            if b > 0 {
                d[b - 1] += down;
            } else {
                o[0] += down;
            }
            // opted-out devices are back inside the band after one step
            s[b] += opt[b];
        }
        for b in 0..nb {
            let ec = ctrl.expire_charge * c[b];
            let ed = ctrl.expire_discharge * d[b];
            c[b] -= ec;
            d[b] -= ed;
            s[b] += ec + ed;
        }
        for b in 0..nb {
            let p = self.request_prob[b] * s[b];
            let to_c = ctrl.beta_charge * self.charge_share[b] * p;
            let to_d = ctrl.beta_discharge * (1.0 - self.charge_share[b]) * p;
            s[b] -= to_c + to_d;
            c[b] += to_c;
            d[b] += to_d;
        }
        let mut out = Vec::with_capacity(4 * nb);
        out.extend(c);
        out.extend(d);
        out.extend(s);
        out.extend(o);
        out
    }

    /// Dense transition matrix, column `j` the image of the `j`-th unit vector.
    pub fn transition(&self, ctrl: &ControlFractions) -> DMatrix<f64> {
        let n = self.dim();
        let mut t = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.step(&e, ctrl);
            t.set_column(j, &DVector::from_vec(col));
            e[j] = 0.0;
        }
        t
    }

    /// Power per device, kW, charging positive.
    pub fn power_per_device(&self, q: &[f64]) -> f64 {
        let nb = self.n_b;
        let chg: f64 = q[..nb].iter().sum::<f64>() + q[3 * nb];
        let dis: f64 = q[nb..2 * nb].iter().sum::<f64>() + q[4 * nb - 1];
        self.params.p_charge_rate * chg - self.params.p_discharge_rate * dis
    }

    pub fn aggregate_power(&self, q: &[f64], fleet_size: usize) -> f64 {
        fleet_size as f64 * self.power_per_device(q)
    }

    pub fn mean_soc(&self, q: &[f64]) -> f64 {
        q.iter()
            .zip(&self.bins.soc_weights)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn residual(&self, q: &[f64], ctrl: &ControlFractions) -> f64 {
        self.step(q, ctrl)
            .iter()
            .zip(q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn steady_state(
        &self,
        ctrl: &ControlFractions,
        tol: f64,
        max_iter: usize,
    ) -> Result<SteadyState> {
        self.steady_state_from(ctrl, &self.uniform(), tol, max_iter)
    }

    /// Fixed point of the step map by iteration from `q0`.
    ///
    /// Iterates `q <- M q` where `M` starts as the one-step matrix and is squared after every
    /// pass, so pass `i` advances `2^i` steps. `max_iter` bounds the number of passes.
    pub fn steady_state_from(
        &self,
        ctrl: &ControlFractions,
        q0: &[f64],
        tol: f64,
        max_iter: usize,
    ) -> Result<SteadyState> {
        ctrl.validate()?;
        check_occupancy(q0, self.dim())?;
        let t = self.transition(ctrl);
        let mut m = t.clone();
        let mut q = DVector::from_column_slice(q0);
        let mut residual = self.residual(q.as_slice(), ctrl);
        let mut previous = residual;
        let mut contraction = 1.0;
        for iteration in 0..max_iter {
            if residual < tol {
                return Ok(SteadyState {
                    q: q.as_slice().to_vec(),
                    residual,
                    iterations: iteration,
                });
            }
            q = &m * &q;
            renormalize(q.as_mut_slice());
            residual = self.residual(q.as_slice(), ctrl);
            if previous > 0.0 {
                contraction = residual / previous;
            }
            previous = residual;
            m = &m * &m;
        }
        if residual < tol {
            return Ok(SteadyState {
                q: q.as_slice().to_vec(),
                residual,
                iterations: max_iter,
            });
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual,
            contraction,
        })
    }

    /// Stationary occupancy by a direct linear solve, `None` when it is not unique.
    pub fn steady_state_direct(&self, ctrl: &ControlFractions) -> Option<Vec<f64>> {
        let n = self.dim();
        let mut a = self.transition(ctrl) - DMatrix::identity(n, n);
        // rows of T - I sum to zero, so one equation is redundant; swap it for normalization
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let q = a.lu().solve(&rhs)?;
        if q.iter().any(|v| !v.is_finite() || *v < -1e-9) {
            return None;
        }
        let mut q: Vec<f64> = q.iter().map(|v| v.max(0.0)).collect();
        renormalize(&mut q);
        Some(q)
    }

    /// Stationary point for the grid search: direct solve, iteration when that fails.
    pub fn stationary(&self, ctrl: &ControlFractions) -> Result<Vec<f64>> {
        if let Some(q) = self.steady_state_direct(ctrl) {
            if self.residual(&q, ctrl) < 1e-9 {
                return Ok(q);
            }
        }
        Ok(self.steady_state(ctrl, DEFAULT_TOL, 64)?.q)
    }

    /// Steady power per device and mean SoC at the given acceptance fractions.
    pub fn evaluate(&self, beta_charge: f64, beta_discharge: f64) -> Result<GridPoint> {
        let ctrl = self.controls(beta_charge, beta_discharge);
        let q = self.stationary(&ctrl)?;
        Ok(GridPoint {
            beta_charge,
            beta_discharge,
            power_per_device_kw: self.power_per_device(&q),
            mean_soc: self.mean_soc(&q),
        })
    }
}

fn renormalize(q: &mut [f64]) {
    let s: f64 = q.iter().sum();
    if s > 0.0 {
        for v in q.iter_mut() {
            *v /= s;
        }
    }
}

fn check_occupancy(q: &[f64], dim: usize) -> Result<()> {
    if q.len() != dim {
        return Err(Error::InvalidParams(format!(
            "occupancy has {} entries, expected {dim}",
            q.len()
        )));
    }
    let s: f64 = q.iter().sum();
    if q.iter().any(|v| *v < 0.0 || !v.is_finite()) || (s - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParams(
            "occupancy must be nonnegative and sum to 1".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub beta_charge: f64,
    pub beta_discharge: f64,
    pub power_per_device_kw: f64,
    pub mean_soc: f64,
}

/// Steady states over a square grid of acceptance fractions. Independent of fleet size.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTable {
    pub resolution: usize,
    pub points: Vec<GridPoint>,
}

impl PowerTable {
    pub fn compute(model: &MacroModel, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidParams(
                "grid needs at least 2 points per axis".into(),
            ));
        }
        let step = 1.0 / (resolution - 1) as f64;
        let points = (0..resolution * resolution)
            .into_par_iter()
            .map(|k| {
                model.evaluate(
                    (k / resolution) as f64 * step,
                    (k % resolution) as f64 * step,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { resolution, points })
    }

    pub fn write_csv(
        &self,
        model: &MacroModel,
        fleet_size: usize,
        out: impl std::io::Write,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["beta_c", "beta_d", "feasible", "p_dem_kw", "soc_slack"])?;
        for p in &self.points {
            let slack = p.mean_soc - model.params.x_set;
            w.write_record([
                p.beta_charge.to_string(),
                p.beta_discharge.to_string(),
                (slack >= 0.0).to_string(),
                (p.power_per_device_kw * fleet_size as f64).to_string(),
                slack.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<macro grid>", e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    /// Least steady aggregate power.
    MinPower,
    /// Steady aggregate power closest to `target_kw`.
    MatchPower { target_kw: f64 },
}

impl Objective {
    fn cost(&self, power_per_device: f64, fleet_size: usize) -> f64 {
        let p = power_per_device * fleet_size as f64;
        match self {
            Objective::MinPower => p,
            Objective::MatchPower { target_kw } => (p - target_kw) * (p - target_kw),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NominalSolution {
    pub beta_charge: f64,
    pub beta_discharge: f64,
    pub p_dem_kw: f64,
    pub mean_soc: f64,
    pub objective: f64,
}

/// Best feasible grid point, then one golden-section pass along each axis.
///
/// Feasible means the steady mean SoC is at least the setpoint. Refinement moves are kept only
/// when they stay feasible and improve the objective.
pub fn solve_nominal(
    model: &MacroModel,
    table: &PowerTable,
    objective: Objective,
    fleet_size: usize,
) -> Result<NominalSolution> {
    let x_set = model.params.x_set;
    let feasible = |p: &GridPoint| p.mean_soc >= x_set;
    let best = table
        .points
        .iter()
        .filter(|p| feasible(p))
        .min_by(|a, b| {
            objective
                .cost(a.power_per_device_kw, fleet_size)
                .total_cmp(&objective.cost(b.power_per_device_kw, fleet_size))
        })
        .copied();
    let Some(mut best) = best else {
        let max_soc = table
            .points
            .iter()
            .map(|p| p.mean_soc)
            .fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::MacroInfeasible { max_soc });
    };
    let h = 1.0 / (table.resolution - 1) as f64;
    let cost = |p: &GridPoint| objective.cost(p.power_per_device_kw, fleet_size);
    for axis in 0..2 {
        let centre = if axis == 0 {
            best.beta_charge
        } else {
            best.beta_discharge
        };
        let (lo, hi) = ((centre - h).max(0.0), (centre + h).min(1.0));
        let eval = |t: f64| -> Result<GridPoint> {
            if axis == 0 {
                model.evaluate(t, best.beta_discharge)
            } else {
                model.evaluate(best.beta_charge, t)
            }
        };
        let penalized = |p: &GridPoint| if feasible(p) { cost(p) } else { f64::INFINITY };
        let candidate = golden_section(lo, hi, 30, |t| Ok(penalized(&eval(t)?)))?;
        let p = eval(candidate)?;
        if feasible(&p) && cost(&p) < cost(&best) {
            best = p;
        }
    }
    Ok(NominalSolution {
        beta_charge: best.beta_charge,
        beta_discharge: best.beta_discharge,
        p_dem_kw: best.power_per_device_kw * fleet_size as f64,
        mean_soc: best.mean_soc,
        objective: cost(&best),
    })
}

fn golden_section<F>(mut a: f64, mut b: f64, iterations: usize, f: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..iterations {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { c } else { d })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyFlexibility {
    pub n: usize,
    pub kw_per_device: f64,
    pub solutions: Vec<NominalSolution>,
}

/// Smallest fleet whose steady power can be placed within `eps_kw` of every target.
///
/// Targets are the root mean square powers of the signals, in kW. The search steps from
/// `n_start` by `delta_n` up to `n_max`.
pub fn steady_state_flexibility(
    model: &MacroModel,
    table: &PowerTable,
    targets_kw: &[f64],
    eps_kw: f64,
    n_start: usize,
    delta_n: usize,
    n_max: usize,
) -> Result<SteadyFlexibility> {
    if targets_kw.is_empty() || n_start == 0 || delta_n == 0 || !(eps_kw > 0.0) {
        return Err(Error::InvalidParams(
            "steady flexibility needs targets, n_start, delta_n and eps > 0".into(),
        ));
    }
    let mut n = n_start;
    while n <= n_max {
        let solutions = targets_kw
            .iter()
            .map(|&t| solve_nominal(model, table, Objective::MatchPower { target_kw: t }, n))
            .collect::<Result<Vec<_>>>()?;
        if solutions
            .iter()
            .zip(targets_kw)
            .all(|(s, t)| (s.p_dem_kw - t).abs() <= eps_kw)
        {
            return Ok(SteadyFlexibility {
                n,
                kw_per_device: 1000.0 / n as f64,
                solutions,
            });
        }
        n += delta_n;
    }
    Err(Error::CapExceeded {
        cap: n_max,
        trajectory: Vec::new(),
    })
}
