//! Per-step record of a fleet simulation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::devices::{Fleet, Mode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCounts {
    pub charge: u32,
    pub discharge: u32,
    pub standby: u32,
    pub optout: u32,
}

impl ModeCounts {
    pub fn of(fleet: &Fleet) -> Self {
        let mut c = ModeCounts::default();
        for d in fleet.devices() {
            match d.state.mode {
                Mode::Charge => c.charge += 1,
                Mode::Discharge => c.discharge += 1,
                Mode::Standby => c.standby += 1,
                Mode::OptOut => c.optout += 1,
            }
        }
        c
    }
}

/// Request and grant counts of one coordinator poll.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestCounts {
    pub req_charge: u32,
    pub req_discharge: u32,
    pub grant_charge: u32,
    pub grant_discharge: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetTrace {
    pub dt_seconds: f64,
    pub p_ref_kw: Vec<f64>,
    pub p_dem_kw: Vec<f64>,
    pub modes: Vec<ModeCounts>,
    /// Present for packetized runs only.
    pub requests: Option<Vec<RequestCounts>>,
    /// Fleet holding consumption included in `p_ref_kw`.
    pub baseload_kw: f64,
}

impl FleetTrace {
    pub(crate) fn with_capacity(
        dt_seconds: f64,
        n: usize,
        packetized: bool,
        baseload_kw: f64,
    ) -> Self {
        Self {
            dt_seconds,
            p_ref_kw: Vec::with_capacity(n),
            p_dem_kw: Vec::with_capacity(n),
            modes: Vec::with_capacity(n),
            requests: packetized.then(|| Vec::with_capacity(n)),
            baseload_kw,
        }
    }

    pub fn len(&self) -> usize {
        self.p_dem_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_dem_kw.is_empty()
    }

    pub fn mean_dem_kw(&self) -> f64 {
        self.p_dem_kw.iter().sum::<f64>() / self.p_dem_kw.len() as f64
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "t_s",
            "p_ref_kw",
            "p_dem_kw",
            "n_charge",
            "n_discharge",
            "n_standby",
            "n_optout",
            "baseload_kw",
        ];
        if self.requests.is_some() {
            header.extend(["n_req_c", "n_req_d", "n_grant_c", "n_grant_d"]);
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let m = self.modes[i];
            let mut row = vec![
                (i as f64 * self.dt_seconds).to_string(),
                self.p_ref_kw[i].to_string(),
                self.p_dem_kw[i].to_string(),
                m.charge.to_string(),
                m.discharge.to_string(),
                m.standby.to_string(),
                m.optout.to_string(),
                self.baseload_kw.to_string(),
            ];
            if let Some(req) = &self.requests {
                let r = req[i];
                row.extend([
                    r.req_charge.to_string(),
                    r.req_discharge.to_string(),
                    r.grant_charge.to_string(),
                    r.grant_discharge.to_string(),
                ]);
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<trace>", e))
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Read back the scoring inputs of a trace CSV. A missing `baseload_kw` column reads as zero.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<ScoringInput> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let col = |name: &str| {
            find(name).ok_or_else(|| Error::MalformedData {
                record: 0,
                reason: format!("missing column {name}"),
            })
        };
        let (ct, cr, cd) = (col("t_s")?, col("p_ref_kw")?, col("p_dem_kw")?);
        let cb = find("baseload_kw");
        let mut t = Vec::new();
        let mut input = ScoringInput::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<f64> {
                rec[c].trim().parse().map_err(|_| Error::MalformedData {
                    record: i + 1,
                    reason: format!("non-numeric field {:?}", &rec[c]),
                })
            };
            t.push(parse(ct)?);
            input.p_ref_kw.push(parse(cr)?);
            input.p_dem_kw.push(parse(cd)?);
            if let Some(c) = cb {
                input.baseload_kw = parse(c)?;
            }
        }
        if t.len() < 2 {
            return Err(Error::MalformedData {
                record: t.len(),
                reason: "trace needs at least two rows".into(),
            });
        }
        input.dt_seconds = t[1] - t[0];
        Ok(input)
    }
}

/// What scoring needs from a trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoringInput {
    pub dt_seconds: f64,
    pub p_ref_kw: Vec<f64>,
    pub p_dem_kw: Vec<f64>,
    pub baseload_kw: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = FleetTrace::with_capacity(2.0, 3, true, 40.0);
        for i in 0..3 {
            t.p_ref_kw.push(i as f64);
            t.p_dem_kw.push(-(i as f64));
            t.modes.push(ModeCounts::default());
            t.requests.as_mut().unwrap().push(RequestCounts::default());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.write_csv_file(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "t_s,p_ref_kw,p_dem_kw,n_charge,n_discharge,n_standby,n_optout,baseload_kw,n_req_c,n_req_d,n_grant_c,n_grant_d\n"
        ));
        let back = FleetTrace::read_csv(&path).unwrap();
        assert_eq!(back.dt_seconds, 2.0);
        assert_eq!(back.p_ref_kw, t.p_ref_kw);
        assert_eq!(back.p_dem_kw, t.p_dem_kw);
        assert_eq!(back.baseload_kw, 40.0);
    }
}
