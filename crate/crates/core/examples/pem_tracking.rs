//! Packetized coordination of a battery fleet; writes the trace to `pem_trace.csv`.

use derflex::agc::{self, AgcSynth};
use derflex::scoring::score_trace;
use derflex::{build_fleet, simulate_pem, DeviceParams, EssParams, PemParams, Result};

fn main() -> Result<()> {
    let sel = agc::standard_signals(&AgcSynth::default(), 1, 8760)?;
    let reference = agc::make_reference(&sel.hours[0], 1.0, 1, 0.0)?;
    let fleet = build_fleet(&DeviceParams::Ess(EssParams::default()), 1500, 0.0, 3, 2.0)?;
    let pem = PemParams::default();
    let trace = simulate_pem(&fleet, &reference, &pem, 3)?;
    let s = score_trace(&trace)?;
    println!(
        "1500 batteries, {} s packets: x_a={:.3} x_d={:.3} x_p={:.3} x_c={:.3}",
        pem.packet_length_s, s.accuracy, s.delay, s.precision, s.composite
    );
    let last = trace.modes.last().expect("nonempty trace");
    println!(
        "final modes: charge {} discharge {} standby {} opt-out {}",
        last.charge, last.discharge, last.standby, last.optout
    );
    trace.write_csv_file("pem_trace.csv")?;
    println!("wrote pem_trace.csv");
    Ok(())
}
