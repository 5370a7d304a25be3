//! Hourly statistics of a regulation signal and the six representative hours.
//!
//! Pass a whitespace- or newline-separated file of 2 s samples to use real data;
//! otherwise a synthetic year with the usual hourly-mean spread is generated.

use derflex::agc::{self, AgcSynth};
use derflex::Result;

fn main() -> Result<()> {
    let trace = match std::env::args().nth(1) {
        Some(path) => agc::load_agc(path, agc::PJM_DT_S)?,
        None => agc::synthetic_dataset(
            &AgcSynth::default(),
            7,
            8760,
            agc::PJM_HOURLY_MU,
            agc::PJM_HOURLY_SIGMA,
        )?,
    };
    let stats = agc::hourly_stats(&trace)?;
    println!(
        "{} hours: mu = {:.4}, sigma = {:.4}",
        stats.hourly_means.len(),
        stats.mu_agc,
        stats.sigma_agc
    );
    let (lo, hi) = stats.interval();
    println!("3-sigma interval [{lo:.3}, {hi:.3}]");

    let sel = agc::select_representative(&trace, &stats, 7)?;
    for p in &sel.provenance {
        println!(
            "target {:+.3} -> hour {:>5} (mean {:+.3})",
            p.target, p.hour_index, p.realized_mean
        );
    }
    Ok(())
}
