//! Centralized dispatch of 5 kW batteries against a 1 MW signal.
//!
//! 200 batteries have exactly enough power. 150 saturate at 750 kW and some fill up on a
//! high-mean hour, yet precision stays above 0.7.

use derflex::agc::{self, AgcSynth};
use derflex::scoring::score_trace;
use derflex::{build_fleet, simulate_cc, DeviceParams, EssParams, Result};

fn main() -> Result<()> {
    let sel = agc::standard_signals(&AgcSynth::default(), 1, 8760)?;
    let hour = &sel.hours[4];
    let reference = agc::make_reference(hour, 1.0, 1, 0.0)?;
    let nominal = DeviceParams::Ess(EssParams::default());
    for n in [100, 150, 200] {
        let fleet = build_fleet(&nominal, n, 0.0, 11, 2.0)?;
        let trace = simulate_cc(&fleet, &reference)?;
        let s = score_trace(&trace)?;
        let worst = trace
            .p_ref_kw
            .iter()
            .zip(&trace.p_dem_kw)
            .map(|(r, d)| (r - d).abs())
            .fold(0.0, f64::max);
        println!(
            "N={n:>3}: x_a={:.3} x_d={:.3} x_p={:.3} x_c={:.3} worst error {worst:.0} kW",
            s.accuracy, s.delay, s.precision, s.composite
        );
    }
    Ok(())
}
