//! Regulation signal ingestion, hourly statistics, representative-hour selection,
//! synthetic generation and scaling into power references.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const HOUR_S: f64 = 3600.0;

/// Resolution of the PJM regulation dataset.
pub const PJM_DT_S: f64 = 2.0;

/// Normalized regulation signal, every sample in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgcTrace {
    samples: Vec<f64>,
    dt_seconds: f64,
    start_index: usize,
}

impl AgcTrace {
    pub fn new(samples: Vec<f64>, dt_seconds: f64, start_index: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParams("AGC trace is empty".into()));
        }
        if !(dt_seconds > 0.0 && dt_seconds.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "AGC dt must be positive, got {dt_seconds}"
            )));
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !(-1.0..=1.0).contains(*s))
        {
            return Err(Error::MalformedData {
                record: i,
                reason: format!("sample {s} outside [-1, 1]"),
            });
        }
        Ok(Self {
            samples,
            dt_seconds,
            start_index,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn dt_seconds(&self) -> f64 {
        self.dt_seconds
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 * self.dt_seconds
    }

    /// Number of samples in one hour; the resolution must divide an hour.
    pub fn samples_per_hour(&self) -> Result<usize> {
        samples_per_hour(self.dt_seconds)
    }

    pub fn whole_hours(&self) -> usize {
        self.samples_per_hour()
            .map(|n| self.samples.len() / n)
            .unwrap_or(0)
    }

    /// One-hour slice starting at hour `index`.
    pub fn hour(&self, index: usize) -> Result<AgcTrace> {
        let n = self.samples_per_hour()?;
        if index >= self.whole_hours() {
            return Err(Error::InvalidParams(format!(
                "hour {index} beyond the {} whole hours of the trace",
                self.whole_hours()
            )));
        }
        Ok(AgcTrace {
            samples: self.samples[index * n..(index + 1) * n].to_vec(),
            dt_seconds: self.dt_seconds,
            start_index: self.start_index + index * n,
        })
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::with_capacity(self.samples.len() * 12);
        out.push_str(&format!("# dt_seconds={}\n", self.dt_seconds));
        for s in &self.samples {
            out.push_str(&format!("{s}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn samples_per_hour(dt_seconds: f64) -> Result<usize> {
    let n = HOUR_S / dt_seconds;
    let rounded = n.round();
    if rounded < 1.0 || (n - rounded).abs() > 1e-9 {
        return Err(Error::InvalidParams(format!(
            "resolution {dt_seconds} s does not divide one hour"
        )));
    }
    Ok(rounded as usize)
}

/// Read a trace: one sample per line, `#` lines are comments.
///
/// Out-of-range samples are rejected rather than clamped. Record indices in errors are
/// 1-based line numbers.
pub fn load_agc(path: impl AsRef<Path>, dt_seconds: f64) -> Result<AgcTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let value: f64 = line.parse().map_err(|_| Error::MalformedData {
            record: i + 1,
            reason: format!("non-numeric value {line:?}"),
        })?;
        if !value.is_finite() || !(-1.0..=1.0).contains(&value) {
            return Err(Error::MalformedData {
                record: i + 1,
                reason: format!("sample {value} outside [-1, 1]"),
            });
        }
        samples.push(value);
    }
    AgcTrace::new(samples, dt_seconds, 0)
}

/// Distribution of one-hour means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgcStats {
    pub hourly_means: Vec<f64>,
    pub mu_agc: f64,
    /// Population standard deviation of `hourly_means`.
    pub sigma_agc: f64,
}

impl AgcStats {
    pub fn from_hourly_means(hourly_means: Vec<f64>) -> Self {
        let n = hourly_means.len() as f64;
        let mu_agc = hourly_means.iter().sum::<f64>() / n;
        let var = hourly_means
            .iter()
            .map(|m| (m - mu_agc) * (m - mu_agc))
            .sum::<f64>()
            / n;
        Self {
            hourly_means,
            mu_agc,
            sigma_agc: var.sqrt(),
        }
    }

    /// The interval `[-3 sigma, +3 sigma]` representative hours are drawn from.
    pub fn interval(&self) -> (f64, f64) {
        (-3.0 * self.sigma_agc, 3.0 * self.sigma_agc)
    }
}

/// Hourly means over whole hours; a trailing partial hour is dropped.
pub fn hourly_stats(trace: &AgcTrace) -> Result<AgcStats> {
    let n = trace.samples_per_hour()?;
    let hours = trace.len() / n;
    if hours == 0 {
        return Err(Error::ShortTrace {
            seconds: trace.duration_s(),
            required: HOUR_S,
        });
    }
    let means = trace
        .samples
        .chunks_exact(n)
        .map(|h| h.iter().sum::<f64>() / n as f64)
        .collect();
    Ok(AgcStats::from_hourly_means(means))
}

/// Target hourly means, in units of `sigma_agc`, of the six representative hours.
pub const REPRESENTATIVE_TARGETS: [f64; 6] = [2.0, 2.0, -2.0, -2.0, 3.0, -3.0];

const INITIAL_TOLERANCE: f64 = 0.1;
const MAX_WIDENINGS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub target: f64,
    pub hour_index: usize,
    pub realized_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub hours: Vec<AgcTrace>,
    pub provenance: Vec<ProvenanceRecord>,
}

impl Selection {
    pub fn write_provenance_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["target", "hour_index", "realized_mean"])?;
        for p in &self.provenance {
            w.write_record([
                p.target.to_string(),
                p.hour_index.to_string(),
                p.realized_mean.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Pick six distinct hours whose means sit at +2σ, +2σ, -2σ, -2σ, +3σ and -3σ.
///
/// An hour qualifies when its mean is within `0.1σ` of the target and inside
/// `[-3σ, 3σ]`; the band doubles (up to four times) until a qualifier exists. The
/// choice among qualifiers is uniform under `seed`.
pub fn select_representative(trace: &AgcTrace, stats: &AgcStats, seed: u64) -> Result<Selection> {
    let sigma = stats.sigma_agc;
    let (lo, hi) = stats.interval();
    let slack = 1e-12 * sigma.max(1.0);
    let mut rng = rng::stream(seed, rng::PURPOSE_SELECT, 0);
    let mut taken = vec![false; stats.hourly_means.len()];
    let mut selection = Selection {
        hours: Vec::with_capacity(6),
        provenance: Vec::with_capacity(6),
    };
    for mult in REPRESENTATIVE_TARGETS {
        let target = mult * sigma;
        let mut tol = INITIAL_TOLERANCE * sigma;
        let mut chosen = None;
        for _ in 0..=MAX_WIDENINGS {
            let qualifiers: Vec<usize> = stats
                .hourly_means
                .iter()
                .enumerate()
                .filter(|&(i, &m)| {
                    !taken[i]
                        && (m - target).abs() <= tol + slack
                        && m >= lo - slack
                        && m <= hi + slack
                })
                .map(|(i, _)| i)
                .collect();
            if let Some(&i) = qualifiers.choose(&mut rng) {
                chosen = Some(i);
                break;
            }
            tol *= 2.0;
        }
        let index = chosen.ok_or(Error::SelectionInfeasible { target })?;
        taken[index] = true;
        selection.hours.push(trace.hour(index)?);
        selection.provenance.push(ProvenanceRecord {
            target,
            hour_index: index,
            realized_mean: stats.hourly_means[index],
        });
    }
    Ok(selection)
}

/// Parameters of the synthetic regulation signal generator.
///
/// The generator runs a mean-reverting recurrence toward each hour's target, reflecting at
/// ±1, passes it through a first-order low-pass filter, then shifts and clips each hour so its
/// realized mean equals the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgcSynth {
    pub dt_seconds: f64,
    /// Reversion time constant.
    pub tau_s: f64,
    /// Stationary standard deviation before clipping.
    pub std: f64,
    /// Low-pass time constant; zero disables the filter.
    pub smooth_s: f64,
}

impl Default for AgcSynth {
    fn default() -> Self {
        Self {
            dt_seconds: PJM_DT_S,
            tau_s: 60.0,
            std: 0.5,
            smooth_s: 0.0,
        }
    }
}

impl AgcSynth {
    pub fn generate(&self, seed: u64, target_hourly_means: &[f64]) -> Result<AgcTrace> {
        let per_hour = samples_per_hour(self.dt_seconds)?;
        if !(self.tau_s > 0.0 && self.std >= 0.0 && self.smooth_s >= 0.0) {
            return Err(Error::InvalidParams(
                "synthetic AGC needs tau_s > 0, std >= 0 and smooth_s >= 0".into(),
            ));
        }
        if let Some(&t) = target_hourly_means
            .iter()
            .find(|t| !(t.abs() < 1.0 && t.is_finite()))
        {
            return Err(Error::ClippingInfeasible { target: t });
        }
        let decay = (-self.dt_seconds / self.tau_s).exp();
        let kick = self.std * (1.0 - decay * decay).sqrt();
        let mut rng = rng::stream(seed, rng::PURPOSE_AGC, 0);
        let mut samples = Vec::with_capacity(per_hour * target_hourly_means.len());
        let follow = if self.smooth_s > 0.0 {
            -(-self.dt_seconds / self.smooth_s).exp_m1()
        } else {
            1.0
        };
        let mut s = target_hourly_means.first().copied().unwrap_or(0.0);
        let mut y = s;
        let mut hour = Vec::with_capacity(per_hour);
        for &target in target_hourly_means {
            hour.clear();
            for _ in 0..per_hour {
                let z: f64 = StandardNormal.sample(&mut rng);
                s = target + (s - target) * decay + kick * z;
                s = reflect_unit(s);
                y += follow * (s - y);
                hour.push(y);
            }
            shift_to_mean(&mut hour, target);
            samples.extend_from_slice(&hour);
        }
        AgcTrace::new(samples, self.dt_seconds, 0)
    }
}

/// Synthetic trace at the PJM resolution, one target mean per hour.
pub fn synthesize_agc(seed: u64, hours: usize, target_hourly_means: &[f64]) -> Result<AgcTrace> {
    if hours != target_hourly_means.len() || hours == 0 {
        return Err(Error::InvalidParams(format!(
            "{hours} hours requested with {} target means",
            target_hourly_means.len()
        )));
    }
    AgcSynth::default().generate(seed, target_hourly_means)
}

/// Synthetic multi-hour dataset whose hourly means are drawn from `Normal(mu, sigma)`.
///
/// Stands in for the proprietary year of PJM data when selecting representative hours.
pub fn synthetic_dataset(
    synth: &AgcSynth,
    seed: u64,
    hours: usize,
    mu: f64,
    sigma: f64,
) -> Result<AgcTrace> {
    let normal = Normal::new(mu, sigma)
        .map_err(|e| Error::InvalidParams(format!("hourly mean distribution: {e}")))?;
    let mut rng = rng::stream(seed, rng::PURPOSE_AGC, 1);
    let targets: Vec<f64> = (0..hours)
        .map(|_| normal.sample(&mut rng).clamp(-0.95, 0.95))
        .collect();
    synth.generate(rng.random(), &targets)
}

/// Hourly-mean distribution of the PJM regulation year used for the standard signal set.
pub const PJM_HOURLY_MU: f64 = -0.021;
pub const PJM_HOURLY_SIGMA: f64 = 0.272;

/// Six representative hours drawn from a synthetic dataset with the PJM hourly-mean statistics.
pub fn standard_signals(synth: &AgcSynth, seed: u64, dataset_hours: usize) -> Result<Selection> {
    let data = synthetic_dataset(synth, seed, dataset_hours, PJM_HOURLY_MU, PJM_HOURLY_SIGMA)?;
    let stats = hourly_stats(&data)?;
    select_representative(&data, &stats, seed)
}

fn reflect_unit(mut s: f64) -> f64 {
    while !(-1.0..=1.0).contains(&s) {
        s = if s > 1.0 { 2.0 - s } else { -2.0 - s };
    }
    s
}

// mean(clip(x + c)) is continuous and nondecreasing in c, so bisection on c hits the
// target to rounding.
fn shift_to_mean(hour: &mut [f64], target: f64) {
    let n = hour.len() as f64;
    let clipped_mean = |c: f64| hour.iter().map(|x| (x + c).clamp(-1.0, 1.0)).sum::<f64>() / n;
    let (mut lo, mut hi) = (-2.0_f64, 2.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clipped_mean(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let c = 0.5 * (lo + hi);
    for x in hour.iter_mut() {
        *x = (*x + c).clamp(-1.0, 1.0);
    }
}

/// Power reference in MW: `baseload + scale * agc`, with the hour repeated `k` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSignal {
    samples_mw: Vec<f64>,
    dt_seconds: f64,
    k_hours: usize,
    baseload_mw: f64,
}

impl ReferenceSignal {
    /// Reference from raw MW samples covering whole hours.
    pub fn new(samples_mw: Vec<f64>, dt_seconds: f64, baseload_mw: f64) -> Result<Self> {
        let per_hour = samples_per_hour(dt_seconds)?;
        if samples_mw.is_empty() || samples_mw.len() % per_hour != 0 {
            return Err(Error::InvalidParams(format!(
                "reference of {} samples does not cover whole hours",
                samples_mw.len()
            )));
        }
        Ok(Self {
            k_hours: samples_mw.len() / per_hour,
            samples_mw,
            dt_seconds,
            baseload_mw,
        })
    }

    pub fn constant(value_mw: f64, dt_seconds: f64, k_hours: usize) -> Result<Self> {
        let per_hour = samples_per_hour(dt_seconds)?;
        Self::new(vec![value_mw; per_hour * k_hours], dt_seconds, 0.0)
    }

    pub fn samples_mw(&self) -> &[f64] {
        &self.samples_mw
    }

    pub fn dt_seconds(&self) -> f64 {
        self.dt_seconds
    }

    pub fn k_hours(&self) -> usize {
        self.k_hours
    }

    pub fn baseload_mw(&self) -> f64 {
        self.baseload_mw
    }

    pub fn len(&self) -> usize {
        self.samples_mw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples_mw.is_empty()
    }

    pub fn kw(&self, i: usize) -> f64 {
        self.samples_mw[i] * 1000.0
    }

    pub fn mean_mw(&self) -> f64 {
        self.samples_mw.iter().sum::<f64>() / self.samples_mw.len() as f64
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "p_ref_mw"])?;
        for (i, p) in self.samples_mw.iter().enumerate() {
            w.write_record([(i as f64 * self.dt_seconds).to_string(), p.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<reference>", e))
    }
}

pub fn make_reference(
    hour: &AgcTrace,
    scale_mw: f64,
    k_hours: usize,
    baseload_mw: f64,
) -> Result<ReferenceSignal> {
    let per_hour = hour.samples_per_hour()?;
    if hour.len() != per_hour {
        return Err(Error::InvalidParams(format!(
            "reference hour has {} samples, expected {per_hour}",
            hour.len()
        )));
    }
    if !(scale_mw > 0.0) || k_hours == 0 || !(baseload_mw >= 0.0) {
        return Err(Error::InvalidParams(
            "make_reference needs scale > 0, k >= 1 and baseload >= 0".into(),
        ));
    }
    let mut samples = Vec::with_capacity(per_hour * k_hours);
    for _ in 0..k_hours {
        samples.extend(hour.samples().iter().map(|s| baseload_mw + scale_mw * s));
    }
    Ok(ReferenceSignal {
        samples_mw: samples,
        dt_seconds: hour.dt_seconds(),
        k_hours,
        baseload_mw,
    })
}
