//! Experiment runner behind the `derflex` binary: TOML configuration, subcommands, CSV outputs
//! and a reproducibility manifest per run.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agc::{self, AgcSynth, AgcTrace, Selection};
use crate::devices::{DeviceKind, DeviceParams, DrawProfile, EssParams, EwhParams};
use crate::error::{Error, Result};
use crate::flexibility::{
    self, Coordinator, Experiment, FlexQuery, FlexResult, DEFAULT_PRECISION_THRESHOLD,
};
use crate::macromodel::{self, MacroModel, Objective, PowerTable};
use crate::pem::PemParams;
use crate::scoring;
use crate::trace::FleetTrace;

#[derive(Debug, Parser)]
#[command(
    name = "derflex",
    version,
    about = "Flexibility of DER fleets tracking regulation signals"
)]
pub struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, replacing the configured one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate fleets against each signal and write traces and scores.
    Simulate {
        /// Fleet size, replacing `fleet.sizes`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Score an existing trace CSV.
    Score {
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Minimum fleet size search.
    Flex {
        #[arg(long)]
        n_start: Option<usize>,
        #[arg(long)]
        delta_n: Option<usize>,
    },
    /// Parameter sweeps: packet/MTTR, heterogeneity, horizon, mixture, hourly heaters.
    Sweep {
        #[arg(long)]
        kind: Option<SweepKind>,
    },
    /// Steady-state population model: acceptance-fraction grid and steady flexibility.
    Macro,
    /// Hourly statistics and representative-hour selection of a regulation signal.
    AgcStats {
        /// Signal file, replacing `signal.path`.
        #[arg(long)]
        agc: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    #[default]
    Packet,
    Heterogeneity,
    Horizon,
    Mixture,
    Hourly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinatorKind {
    Cc,
    #[default]
    Pem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalSource {
    #[default]
    Synthetic,
    File,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub fleet: FleetConfig,
    pub coordinator: CoordinatorConfig,
    pub signal: SignalConfig,
    pub search: SearchConfig,
    pub sweep: SweepConfig,
    #[serde(rename = "macro")]
    pub macro_model: MacroConfig,
    pub score: ScoreConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetConfig {
    pub kind: DeviceKind,
    pub sizes: Vec<usize>,
    pub heterogeneity_z: f64,
    pub dt_seconds: f64,
    pub hour_of_day: usize,
    /// `hour,liters_per_s` CSV; the built-in profile when absent.
    pub draw_profile: Option<PathBuf>,
    pub ess: EssParams,
    pub ewh: EwhParams,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            kind: DeviceKind::Ess,
            sizes: vec![1000],
            heterogeneity_z: 0.0,
            dt_seconds: 2.0,
            hour_of_day: 8,
            draw_profile: None,
            ess: EssParams::default(),
            ewh: EwhParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoordinatorConfig {
    pub kind: CoordinatorKind,
    pub packet_length_s: f64,
    pub mttr_s: f64,
    pub burn_in_s: f64,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        let p = PemParams::default();
        Self {
            kind: CoordinatorKind::Pem,
            packet_length_s: p.packet_length_s,
            mttr_s: p.mttr_s,
            burn_in_s: p.burn_in_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalConfig {
    pub source: SignalSource,
    pub path: Option<PathBuf>,
    pub dt_seconds: f64,
    pub k_hours: usize,
    pub scale_mw: f64,
    /// Indices into the six representative hours; all when empty.
    pub select: Vec<usize>,
    /// Hours in the synthetic dataset representative hours are picked from.
    pub dataset_hours: usize,
    pub synth: AgcSynth,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            source: SignalSource::Synthetic,
            path: None,
            dt_seconds: agc::PJM_DT_S,
            k_hours: 1,
            scale_mw: 1.0,
            select: Vec::new(),
            dataset_hours: 8760,
            synth: AgcSynth::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub x_p_des: f64,
    pub n_start: usize,
    pub delta_n: usize,
    /// Defaults to 100 times the fleet a single device rate needs for 1 MW.
    pub n_max: Option<usize>,
    pub seeds: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            x_p_des: DEFAULT_PRECISION_THRESHOLD,
            n_start: 100,
            delta_n: 100,
            n_max: None,
            seeds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub kind: SweepKind,
    /// `[packet, mttr]` pairs in minutes.
    pub packet_mttr_min: Vec<[f64; 2]>,
    pub z_values: Vec<f64>,
    pub k_values: Vec<usize>,
    /// Heater shares of the mixture.
    pub ewh_shares: Vec<f64>,
    pub zeta_ess_kw: f64,
    pub zeta_ewh_kw: f64,
    pub hours_of_day: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: SweepKind::Packet,
            packet_mttr_min: vec![[2.0, 2.0], [3.0, 3.0], [4.0, 4.0], [5.0, 5.0]],
            z_values: vec![0.0, 0.1, 0.2],
            k_values: (1..=6).collect(),
            ewh_shares: vec![0.25, 0.5, 0.75],
            zeta_ess_kw: 0.91,
            zeta_ewh_kw: 0.25,
            hours_of_day: (0..24).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacroConfig {
    pub n_b: usize,
    pub grid: usize,
    pub eps_kw: f64,
    pub n_start: usize,
    pub delta_n: usize,
    pub n_max: usize,
    /// Fleet size for the grid report.
    pub fleet_size: usize,
    pub tol: f64,
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self {
            n_b: macromodel::DEFAULT_BINS,
            grid: macromodel::DEFAULT_GRID,
            eps_kw: 10.0,
            n_start: 100,
            delta_n: 100,
            n_max: 100_000,
            fleet_size: 1000,
            tol: macromodel::DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub trace: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Check module invariants and referenced files up front.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.fleet.kind {
            DeviceKind::Ess => self.fleet.ess.validate(),
            DeviceKind::Ewh => self.fleet.ewh.validate(),
        }
        .map_err(|e| Error::Config(e.to_string()))?;
        if self.fleet.sizes.is_empty() || self.fleet.sizes.contains(&0) {
            return bad("fleet.sizes must be nonempty and positive".into());
        }
        if !(0.0..=1.0).contains(&self.fleet.heterogeneity_z) {
            return bad("fleet.heterogeneity_z must lie in [0, 1]".into());
        }
        if self.fleet.hour_of_day >= 24 {
            return bad(format!(
                "fleet.hour_of_day {} out of range",
                self.fleet.hour_of_day
            ));
        }
        for p in [
            &self.fleet.draw_profile,
            &self.signal.path,
            &self.score.trace,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return bad(format!("file {} does not exist", p.display()));
            }
        }
        if self.signal.source == SignalSource::File && self.signal.path.is_none() {
            return bad("signal.source = \"file\" needs signal.path".into());
        }
        if self.signal.k_hours == 0 || !(self.signal.scale_mw > 0.0) {
            return bad("signal.k_hours and signal.scale_mw must be positive".into());
        }
        if let Some(i) = self.signal.select.iter().find(|&&i| i >= 6) {
            return bad(format!("signal.select index {i} out of range 0..6"));
        }
        let pem = self.pem();
        pem.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.search.seeds == 0 || self.search.n_start == 0 || self.search.delta_n == 0 {
            return bad("search.seeds, search.n_start and search.delta_n must be positive".into());
        }
        if !(self.search.x_p_des > 0.0 && self.search.x_p_des <= 1.0) {
            return bad("search.x_p_des must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn pem(&self) -> PemParams {
        PemParams {
            packet_length_s: self.coordinator.packet_length_s,
            mttr_s: self.coordinator.mttr_s,
            poll_dt_s: self.fleet.dt_seconds,
            burn_in_s: self.coordinator.burn_in_s,
        }
    }

    pub fn nominal(&self) -> DeviceParams {
        match self.fleet.kind {
            DeviceKind::Ess => DeviceParams::Ess(self.fleet.ess),
            DeviceKind::Ewh => DeviceParams::Ewh(self.fleet.ewh),
        }
    }

    pub fn draw_profile(&self) -> Result<DrawProfile> {
        match &self.fleet.draw_profile {
            Some(p) => DrawProfile::load(p),
            None => Ok(DrawProfile::default()),
        }
    }

    pub fn experiment(&self) -> Result<Experiment> {
        let coordinator = match self.coordinator.kind {
            CoordinatorKind::Cc => Coordinator::Centralized,
            CoordinatorKind::Pem => Coordinator::Packetized(self.pem()),
        };
        Ok(Experiment {
            nominal: self.nominal(),
            heterogeneity_z: self.fleet.heterogeneity_z,
            coordinator,
            draw_profile: self.draw_profile()?,
            hour_of_day: self.fleet.hour_of_day,
            dt_seconds: self.fleet.dt_seconds,
            seeds: self.search.seeds,
            seed: self.seed,
            scale_mw: self.signal.scale_mw,
            k_hours: self.signal.k_hours,
        })
    }

    pub fn query(&self, max_rate_kw: f64) -> FlexQuery {
        let mut q = FlexQuery::new(self.search.n_start, self.search.delta_n, max_rate_kw);
        q.x_p_des = self.search.x_p_des;
        if let Some(n) = self.search.n_max {
            q.n_max = n;
        }
        q
    }

    /// Representative hours and their provenance.
    pub fn signals(&self) -> Result<Selection> {
        let selection = match self.signal.source {
            SignalSource::Synthetic => {
                agc::standard_signals(&self.signal.synth, self.seed, self.signal.dataset_hours)?
            }
            SignalSource::File => {
                let path = self.signal.path.as_ref().expect("validated");
                let trace = agc::load_agc(path, self.signal.dt_seconds)?;
                let stats = agc::hourly_stats(&trace)?;
                agc::select_representative(&trace, &stats, self.seed)?
            }
        };
        if self.signal.select.is_empty() {
            return Ok(selection);
        }
        Ok(Selection {
            hours: self
                .signal
                .select
                .iter()
                .map(|&i| selection.hours[i].clone())
                .collect(),
            provenance: self
                .signal
                .select
                .iter()
                .map(|&i| selection.provenance[i].clone())
                .collect(),
        })
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'a str,
    command: &'a str,
    seed: u64,
    config_sha256: String,
    outputs: Vec<String>,
    config: &'a ExperimentConfig,
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    // The output location is not part of the experiment.
    let cfg = &ExperimentConfig {
        out: None,
        ..cfg.clone()
    };
    let text = cfg.to_toml()?;
    let digest = Sha256::digest(text.as_bytes());
    let hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let mut outputs: Vec<String> = outputs
        .iter()
        .map(|p| {
            p.file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect();
    outputs.sort();
    let m = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.seed,
        config_sha256: hash,
        outputs,
        config: cfg,
    };
    let path = out.join("manifest.toml");
    let body = toml::to_string(&m).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn table<I, R>(path: &Path, header: &[&str], rows: I) -> Result<PathBuf>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn summary_row(label: String, r: &FlexResult) -> Vec<String> {
    vec![
        label,
        r.n_min.to_string(),
        r.kw_per_device.to_string(),
        r.per_signal_n_min
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(";"),
    ]
}

/// Traces and scores for every configured fleet size and signal.
pub fn run_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let exp = cfg.experiment()?;
    let sel = cfg.signals()?;
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for &n in &cfg.fleet.sizes {
        let fleet = exp.build(n, 0)?;
        for (i, hour) in sel.hours.iter().enumerate() {
            let (trace, report) = exp.run(&fleet, hour, 0)?;
            let tp = out.join(format!("trace_n{n}_s{i}.csv"));
            trace.write_csv(create(&tp)?)?;
            let sp = out.join(format!("score_n{n}_s{i}.csv"));
            report.write_csv(create(&sp)?)?;
            files.extend([tp, sp]);
            rows.push(vec![
                n.to_string(),
                i.to_string(),
                trace.baseload_kw.to_string(),
                report.accuracy.to_string(),
                report.delay.to_string(),
                report.precision.to_string(),
                report.composite.to_string(),
            ]);
        }
    }
    files.push(table(
        &out.join("simulate_summary.csv"),
        &["n", "signal", "baseload_kw", "x_a", "x_d", "x_p", "x_c"],
        rows,
    )?);
    Ok(files)
}

pub fn run_score(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let path = cfg
        .score
        .trace
        .as_ref()
        .ok_or_else(|| Error::Config("score needs --trace or score.trace".into()))?;
    let t = FleetTrace::read_csv(path)?;
    let report = scoring::score_regulation(&t.p_ref_kw, &t.p_dem_kw, t.baseload_kw, t.dt_seconds)?;
    let sp = out.join("score.csv");
    report.write_csv(create(&sp)?)?;
    Ok(vec![sp])
}

fn write_flex(out: &Path, result: &FlexResult) -> Result<Vec<PathBuf>> {
    let fp = out.join("flex_result.csv");
    result.write_trajectory_csv(create(&fp)?)?;
    let zp = table(
        &out.join("zeta_summary.csv"),
        &["label", "n_min", "kw_per_device", "per_signal_n_min"],
        [summary_row("all".into(), result)],
    )?;
    Ok(vec![fp, zp])
}

pub fn run_flex(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let exp = cfg.experiment()?;
    let sel = cfg.signals()?;
    let query = cfg.query(exp.max_rate_kw());
    match exp.find_n_min(&query, &sel.hours) {
        Ok(r) => write_flex(out, &r),
        Err(Error::CapExceeded { cap, trajectory }) => {
            let partial = FlexResult {
                n_min: 0,
                kw_per_device: 0.0,
                per_signal_n_min: Vec::new(),
                trajectory: trajectory.clone(),
            };
            partial.write_trajectory_csv(create(&out.join("flex_result.csv"))?)?;
            Err(Error::CapExceeded { cap, trajectory })
        }
        Err(e) => Err(e),
    }
}

pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let exp = cfg.experiment()?;
    let hours = cfg.signals()?.hours;
    let query = cfg.query(exp.max_rate_kw());
    let header = ["label", "n_min", "kw_per_device", "per_signal_n_min"];
    let path = out.join("sweep.csv");
    let file = match cfg.sweep.kind {
        SweepKind::Packet => {
            let grid: Vec<(f64, f64)> = cfg
                .sweep
                .packet_mttr_min
                .iter()
                .map(|p| (p[0], p[1]))
                .collect();
            let rows = flexibility::sweep_packet_mttr(&exp, &grid, &query, &hours)?;
            table(
                &path,
                &header,
                rows.iter()
                    .map(|(p, m, r)| summary_row(format!("{p}x{m}"), r)),
            )?
        }
        SweepKind::Heterogeneity => {
            let rows = flexibility::sweep_heterogeneity(&exp, &cfg.sweep.z_values, &query, &hours)?;
            table(
                &path,
                &header,
                rows.iter().map(|(z, r)| summary_row(z.to_string(), r)),
            )?
        }
        SweepKind::Horizon => {
            let rows = flexibility::sweep_horizon(&exp, &cfg.sweep.k_values, &query, &hours)?;
            table(
                &path,
                &header,
                rows.iter().map(|(k, r)| summary_row(k.to_string(), r)),
            )?
        }
        SweepKind::Hourly => {
            let step = cfg.search.delta_n;
            let rows = flexibility::hourly_ewh_flexibility(
                &exp,
                &cfg.sweep.hours_of_day,
                &hours,
                step,
                &flexibility::default_ewh_n_start,
            )?;
            table(
                &path,
                &header,
                rows.iter().map(|(h, r)| summary_row(h.to_string(), r)),
            )?
        }
        SweepKind::Mixture => {
            let ess = DeviceParams::Ess(cfg.fleet.ess);
            let ewh = DeviceParams::Ewh(cfg.fleet.ewh);
            let mut rows = Vec::new();
            for &share in &cfg.sweep.ewh_shares {
                let (n_ess, n_ewh) = flexibility::mixture_fleet(
                    1.0 - share,
                    share,
                    cfg.sweep.zeta_ess_kw,
                    cfg.sweep.zeta_ewh_kw,
                )?;
                for (i, h) in hours.iter().enumerate() {
                    let x_p =
                        exp.precision_with(|r| exp.build_mixture(&ess, n_ess, &ewh, n_ewh, r), h)?;
                    rows.push(vec![
                        share.to_string(),
                        n_ess.to_string(),
                        n_ewh.to_string(),
                        i.to_string(),
                        x_p.to_string(),
                    ]);
                }
            }
            table(
                &path,
                &["ewh_share", "n_ess", "n_ewh", "signal", "x_p"],
                rows,
            )?
        }
    };
    Ok(vec![file])
}

pub fn run_macro(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let m = &cfg.macro_model;
    let model = MacroModel::new(cfg.fleet.ess, cfg.pem(), m.n_b)?;
    let table_ = PowerTable::compute(&model, m.grid)?;
    let gp = out.join("macro_grid.csv");
    table_.write_csv(&model, m.fleet_size, create(&gp)?)?;

    let sel = cfg.signals()?;
    let targets: Vec<f64> = sel
        .hours
        .iter()
        .map(|h| {
            let r = agc::make_reference(h, cfg.signal.scale_mw, cfg.signal.k_hours, 0.0)?;
            Ok(flexibility::average_power(&r).sqrt() * 1000.0)
        })
        .collect::<Result<_>>()?;
    let min_power = macromodel::solve_nominal(&model, &table_, Objective::MinPower, m.fleet_size)?;
    let flex = macromodel::steady_state_flexibility(
        &model, &table_, &targets, m.eps_kw, m.n_start, m.delta_n, m.n_max,
    )?;

    let ctrl = model.controls(min_power.beta_charge, min_power.beta_discharge);
    let q = model.steady_state(&ctrl, m.tol, 200)?;
    let qp = table(
        &out.join("q_star.csv"),
        &["block", "bin", "soc", "occupancy"],
        q.q.iter().enumerate().map(|(i, v)| {
            let block = ["chg", "dis", "sb", "opt"][i / model.n_b()];
            let bin = i % model.n_b();
            vec![
                block.to_string(),
                bin.to_string(),
                model.bins().centers[bin].to_string(),
                v.to_string(),
            ]
        }),
    )?;

    let mut rows = vec![vec![
        "min_power".to_string(),
        String::new(),
        min_power.beta_charge.to_string(),
        min_power.beta_discharge.to_string(),
        min_power.p_dem_kw.to_string(),
        min_power.mean_soc.to_string(),
    ]];
    for (i, (s, t)) in flex.solutions.iter().zip(&targets).enumerate() {
        rows.push(vec![
            format!("match_signal_{i}"),
            t.to_string(),
            s.beta_charge.to_string(),
            s.beta_discharge.to_string(),
            s.p_dem_kw.to_string(),
            s.mean_soc.to_string(),
        ]);
    }
    let sp = table(
        &out.join("macro_solutions.csv"),
        &[
            "case",
            "target_kw",
            "beta_c",
            "beta_d",
            "p_dem_kw",
            "mean_soc",
        ],
        rows,
    )?;
    let zp = table(
        &out.join("macro_summary.csv"),
        &["n_ss", "zeta_ss_kw", "eps_kw", "residual"],
        [vec![
            flex.n.to_string(),
            flex.kw_per_device.to_string(),
            m.eps_kw.to_string(),
            q.residual.to_string(),
        ]],
    )?;
    Ok(vec![gp, qp, sp, zp])
}

pub fn run_agc_stats(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let trace: AgcTrace = match cfg.signal.source {
        SignalSource::File => agc::load_agc(
            cfg.signal.path.as_ref().expect("validated"),
            cfg.signal.dt_seconds,
        )?,
        SignalSource::Synthetic => agc::synthetic_dataset(
            &cfg.signal.synth,
            cfg.seed,
            cfg.signal.dataset_hours,
            agc::PJM_HOURLY_MU,
            agc::PJM_HOURLY_SIGMA,
        )?,
    };
    let stats = agc::hourly_stats(&trace)?;
    let hp = table(
        &out.join("hourly_means.csv"),
        &["hour_index", "mean"],
        stats
            .hourly_means
            .iter()
            .enumerate()
            .map(|(i, m)| vec![i.to_string(), m.to_string()]),
    )?;
    let sp = table(
        &out.join("agc_stats.csv"),
        &["hours", "mu_agc", "sigma_agc"],
        [vec![
            stats.hourly_means.len().to_string(),
            stats.mu_agc.to_string(),
            stats.sigma_agc.to_string(),
        ]],
    )?;
    let sel = agc::select_representative(&trace, &stats, cfg.seed)?;
    let pp = out.join("provenance.csv");
    sel.write_provenance_csv(&pp)?;
    Ok(vec![hp, sp, pp])
}

/// Resolve configuration and flags, run the subcommand, write the manifest.
pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    let name = match &cli.command {
        Command::Simulate { n } => {
            if let Some(n) = n {
                cfg.fleet.sizes = vec![*n];
            }
            "simulate"
        }
        Command::Score { trace } => {
            if trace.is_some() {
                cfg.score.trace = trace.clone();
            }
            "score"
        }
        Command::Flex { n_start, delta_n } => {
            if let Some(v) = n_start {
                cfg.search.n_start = *v;
            }
            if let Some(v) = delta_n {
                cfg.search.delta_n = *v;
            }
            "flex"
        }
        Command::Sweep { kind } => {
            if let Some(k) = kind {
                cfg.sweep.kind = *k;
            }
            "sweep"
        }
        Command::Macro => "macro",
        Command::AgcStats { agc } => {
            if let Some(p) = agc {
                cfg.signal.source = SignalSource::File;
                cfg.signal.path = Some(p.clone());
            }
            "agc-stats"
        }
    };
    cfg.validate()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let run = || match &cli.command {
        Command::Simulate { .. } => run_simulate(&cfg, &out),
        Command::Score { .. } => run_score(&cfg, &out),
        Command::Flex { .. } => run_flex(&cfg, &out),
        Command::Sweep { .. } => run_sweep(&cfg, &out),
        Command::Macro => run_macro(&cfg, &out),
        Command::AgcStats { .. } => run_agc_stats(&cfg, &out),
    };
    let mut files = match cli.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    files.push(write_manifest(&out, name, &cfg, &files)?);
    Ok(files)
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
