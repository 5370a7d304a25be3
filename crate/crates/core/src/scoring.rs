//! Regulation performance scores: accuracy, delay, precision and their composite, evaluated over
//! 50-minute windows on a 10-second grid.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::FleetTrace;

pub const GRID_S: f64 = 10.0;
pub const WINDOW_S: f64 = 3000.0;
pub const MAX_LAG_S: f64 = 300.0;

const WINDOW_LEN: usize = 300;
const MAX_LAG: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub index: usize,
    pub t_start_s: f64,
    pub accuracy: f64,
    pub delay: f64,
    pub precision: f64,
    pub lag_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub accuracy: f64,
    pub delay: f64,
    pub precision: f64,
    pub composite: f64,
    pub per_window: Vec<WindowScore>,
    /// Lag of the worst-delay window.
    pub best_lag_s: f64,
}

impl ScoreReport {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["window_index", "t_start_s", "x_a", "x_d", "x_p"])?;
        for s in &self.per_window {
            w.write_record([
                s.index.to_string(),
                s.t_start_s.to_string(),
                s.accuracy.to_string(),
                s.delay.to_string(),
                s.precision.to_string(),
            ])?;
        }
        w.write_record([
            "min".to_string(),
            String::new(),
            self.accuracy.to_string(),
            self.delay.to_string(),
            self.precision.to_string(),
        ])?;
        w.write_record([
            "composite".to_string(),
            String::new(),
            self.composite.to_string(),
            String::new(),
            String::new(),
        ])?;
        w.flush().map_err(|e| Error::io("<score>", e))
    }
}

/// Block means onto the 10-second grid. `dt_s` must divide 10 s.
pub fn resample(series: &[f64], dt_s: f64) -> Result<Vec<f64>> {
    let ratio = GRID_S / dt_s;
    let r = ratio.round();
    if r < 1.0 || (ratio - r).abs() > 1e-9 {
        return Err(Error::InvalidParams(format!(
            "sample interval {dt_s} s does not divide the {GRID_S} s scoring grid"
        )));
    }
    let r = r as usize;
    Ok(series
        .chunks_exact(r)
        .map(|c| c.iter().sum::<f64>() / r as f64)
        .collect())
}

/// Pearson correlation; two constant series correlate perfectly, one constant series not at all.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    match (sxx == 0.0, syy == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
    }
}

/// Maximum correlation of `p_ref[start..start+len]` with `p_dem` delayed by 0..=300 s,
/// inputs on the 10-second grid. Spans running past the end are truncated. Returns the score and
/// the lag in seconds, the smallest lag winning ties.
pub fn accuracy(p_ref: &[f64], p_dem: &[f64], start: usize, len: usize) -> (f64, f64) {
    let horizon = p_ref.len().min(p_dem.len());
    let mut best = (f64::NEG_INFINITY, 0.0);
    for j in 0..=MAX_LAG {
        if start + j >= horizon {
            break;
        }
        let span = len.min(horizon - start - j);
        if span < 2 {
            break;
        }
        let c = pearson(
            &p_ref[start..start + span],
            &p_dem[start + j..start + j + span],
        );
        if c > best.0 {
            best = (c, j as f64 * GRID_S);
        }
    }
    best
}

/// 1 at zero delay falling linearly to 0 at five minutes.
pub fn delay_score(t_k_s: f64) -> f64 {
    ((t_k_s - MAX_LAG_S).abs() / MAX_LAG_S).min(1.0)
}

/// `1 - mean|ref - dem| / mean|ref|`.
pub fn precision(p_ref: &[f64], p_dem: &[f64]) -> Result<f64> {
    if p_ref.len() != p_dem.len() || p_ref.is_empty() {
        return Err(Error::InvalidParams(format!(
            "precision needs equal nonempty series, got {} and {}",
            p_ref.len(),
            p_dem.len()
        )));
    }
    let n = p_ref.len() as f64;
    let scale = p_ref.iter().map(|r| r.abs()).sum::<f64>() / n;
    if scale == 0.0 {
        return Err(Error::UndefinedPrecision);
    }
    let err = p_ref
        .iter()
        .zip(p_dem)
        .map(|(r, d)| (r - d).abs())
        .sum::<f64>()
        / n;
    Ok(1.0 - err / scale)
}

/// Number of scoring windows for a `k`-hour horizon.
pub fn window_count(k_hours: usize) -> usize {
    ((6 * k_hours).saturating_sub(1) / 4).max(1)
}

/// Grid indices of the windows: centered when there is one, else evenly spread from the start
/// to the end of the horizon.
pub fn window_starts(horizon: usize, n: usize) -> Vec<usize> {
    let slack = horizon - WINDOW_LEN;
    if n == 1 {
        return vec![slack / 2];
    }
    (0..n)
        .map(|i| ((i * slack) as f64 / (n - 1) as f64).round() as usize)
        .collect()
}

/// Score a response against its reference, both sampled every `dt_s`.
pub fn score(p_ref: &[f64], p_dem: &[f64], dt_s: f64) -> Result<ScoreReport> {
    if p_ref.len() != p_dem.len() {
        return Err(Error::InvalidParams(format!(
            "reference has {} samples, response {}",
            p_ref.len(),
            p_dem.len()
        )));
    }
    let r = resample(p_ref, dt_s)?;
    let d = resample(p_dem, dt_s)?;
    let horizon_s = r.len() as f64 * GRID_S;
    if r.len() < WINDOW_LEN {
        return Err(Error::HorizonTooShort {
            horizon_s,
            window_s: WINDOW_S,
        });
    }
    let k = (horizon_s / 3600.0 + 1e-9).floor() as usize;
    let starts = window_starts(r.len(), window_count(k));
    let per_window = starts
        .iter()
        .enumerate()
        .map(|(index, &s)| {
            let (x_a, lag) = accuracy(&r, &d, s, WINDOW_LEN);
            let x_p = precision(&r[s..s + WINDOW_LEN], &d[s..s + WINDOW_LEN])?;
            Ok(WindowScore {
                index,
                t_start_s: s as f64 * GRID_S,
                accuracy: x_a,
                delay: delay_score(lag),
                precision: x_p,
                lag_s: lag,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let min = |f: fn(&WindowScore) -> f64| per_window.iter().map(f).fold(f64::INFINITY, f64::min);
    let accuracy = min(|w| w.accuracy);
    let delay = min(|w| w.delay);
    let precision = min(|w| w.precision);
    let best_lag_s = per_window.iter().map(|w| w.lag_s).fold(0.0, f64::max);
    Ok(ScoreReport {
        accuracy,
        delay,
        precision,
        composite: (accuracy + delay + precision) / 3.0,
        per_window,
        best_lag_s,
    })
}

/// Score the regulation part of a response: `baseload_kw` comes off both series first, so
/// precision is relative to the regulation signal and not to total consumption. Accuracy and
/// delay are unaffected by the offset.
pub fn score_regulation(
    p_ref: &[f64],
    p_dem: &[f64],
    baseload_kw: f64,
    dt_s: f64,
) -> Result<ScoreReport> {
    if baseload_kw == 0.0 {
        return score(p_ref, p_dem, dt_s);
    }
    let r: Vec<f64> = p_ref.iter().map(|x| x - baseload_kw).collect();
    let d: Vec<f64> = p_dem.iter().map(|x| x - baseload_kw).collect();
    score(&r, &d, dt_s)
}

pub fn score_trace(trace: &FleetTrace) -> Result<ScoreReport> {
    score_regulation(
        &trace.p_ref_kw,
        &trace.p_dem_kw,
        trace.baseload_kw,
        trace.dt_seconds,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn wave(n: usize, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (i as f64 * 0.037 + phase).sin() + 0.3 * (i as f64 * 0.011).cos())
            .collect()
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_count(1), 1);
        assert_eq!(window_count(2), 2);
        assert_eq!(window_count(6), 8);
    }

    #[test]
    fn delay_values() {
        assert_eq!(delay_score(0.0), 1.0);
        assert_eq!(delay_score(300.0), 0.0);
        assert_abs_diff_eq!(delay_score(120.0), 0.6, epsilon = 1e-15);
    }

    #[test]
    fn precision_examples() {
        let r = wave(100, 0.0);
        assert_eq!(precision(&r, &r).unwrap(), 1.0);
        assert_eq!(precision(&[2.0; 10], &[0.0; 10]).unwrap(), 0.0);
        let alt: Vec<f64> = (0..10)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let resp: Vec<f64> = alt.iter().map(|v| 0.9 * v).collect();
        assert_abs_diff_eq!(precision(&alt, &resp).unwrap(), 0.9, epsilon = 1e-12);
        assert!(matches!(
            precision(&[0.0; 4], &[1.0; 4]),
            Err(Error::UndefinedPrecision)
        ));
    }

    #[test]
    fn perfect_tracking() {
        let r = wave(1800, 0.0);
        let s = score(&r, &r, 2.0).unwrap();
        assert_eq!(s.per_window.len(), 1);
        assert_abs_diff_eq!(s.composite, 1.0, epsilon = 1e-12);
        assert_eq!(s.best_lag_s, 0.0);
    }

    #[test]
    fn shifted_response() {
        let base = wave(360 + 12, 0.4);
        let r = base[12..].to_vec();
        let d = base[..360].to_vec();
        let s = score(&r, &d, 10.0).unwrap();
        assert_eq!(s.best_lag_s, 120.0);
        assert_abs_diff_eq!(s.delay, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(s.accuracy, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inverted_response_has_nonpositive_accuracy() {
        let r = wave(360, 0.0);
        let d: Vec<f64> = r.iter().map(|v| -v).collect();
        let (a, _) = accuracy(&r, &d, 30, 300);
        let brute = (0..=30)
            .map(|j| pearson(&r[30..330], &d[30 + j..330 + j]))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a, brute);
        assert!(a <= 0.0);
    }

    #[test]
    fn constant_series() {
        assert_eq!(pearson(&[1.0; 5], &[2.0; 5]), 1.0);
        assert_eq!(pearson(&[1.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]), 0.0);
    }

    #[test]
    fn resampling() {
        assert_eq!(
            resample(&[1.0, 3.0, 5.0, 7.0, 9.0], 2.0).unwrap(),
            vec![5.0]
        );
        assert!(resample(&[1.0], 3.0).is_err());
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            score(&[1.0; 100], &[1.0; 100], 2.0),
            Err(Error::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn window_placement() {
        assert_eq!(window_starts(360, 1), vec![30]);
        assert_eq!(window_starts(720, 2), vec![0, 420]);
        let s = window_starts(2160, 8);
        assert_eq!(s[0], 0);
        assert_eq!(*s.last().unwrap(), 2160 - 300);
    }

    #[test]
    fn baseload_is_removed_before_scoring() {
        let r = wave(1800, 0.0);
        let d: Vec<f64> = wave(1800, 0.2).iter().map(|x| 0.9 * x).collect();
        let plain = score(&r, &d, 2.0).unwrap();
        let lifted = |v: &[f64]| v.iter().map(|x| x + 50.0).collect::<Vec<_>>();
        let with_base = score_regulation(&lifted(&r), &lifted(&d), 50.0, 2.0).unwrap();
        assert_abs_diff_eq!(with_base.precision, plain.precision, epsilon = 1e-9);
        assert_abs_diff_eq!(with_base.accuracy, plain.accuracy, epsilon = 1e-9);
        // scored on totals, the offset inflates precision
        assert!(score(&lifted(&r), &lifted(&d), 2.0).unwrap().precision > plain.precision + 0.1);
    }
}
