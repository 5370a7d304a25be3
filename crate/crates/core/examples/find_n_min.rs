//! Minimum battery fleet under packetized coordination and its kW-per-device.

use derflex::agc::{self, AgcSynth};
use derflex::{Coordinator, DeviceParams, EssParams, Experiment, FlexQuery, PemParams, Result};

fn main() -> Result<()> {
    let sel = agc::standard_signals(&AgcSynth::default(), 1, 8760)?;
    let mut exp = Experiment::new(
        DeviceParams::Ess(EssParams::default()),
        Coordinator::Packetized(PemParams::default()),
    );
    exp.seeds = 3;
    let query = FlexQuery::new(100, 100, exp.max_rate_kw());
    let r = exp.find_n_min(&query, &sel.hours)?;
    for p in &r.trajectory {
        println!("signal {} N={:>5} x_p={:.3}", p.signal, p.n, p.precision);
    }
    println!("per-signal N_min {:?}", r.per_signal_n_min);
    println!("N_min = {}, {:.3} kW per device", r.n_min, r.kw_per_device);
    Ok(())
}
