//! Packet length and heterogeneity sweeps on two signals.

use derflex::agc::{self, AgcSynth};
use derflex::flexibility::{sweep_heterogeneity, sweep_packet_mttr};
use derflex::{Coordinator, DeviceParams, EssParams, Experiment, FlexQuery, PemParams, Result};

fn main() -> Result<()> {
    let sel = agc::standard_signals(&AgcSynth::default(), 1, 8760)?;
    let hours = &sel.hours[..2];
    let exp = Experiment::new(
        DeviceParams::Ess(EssParams::default()),
        Coordinator::Packetized(PemParams::default()),
    );
    let query = FlexQuery::new(100, 100, exp.max_rate_kw());

    for (p, m, r) in sweep_packet_mttr(&exp, &[(2.0, 2.0), (3.0, 3.0), (5.0, 5.0)], &query, hours)?
    {
        println!(
            "packet {p} min, mttr {m} min: N_min {:>5}, {:.3} kW",
            r.n_min, r.kw_per_device
        );
    }
    for (z, r) in sweep_heterogeneity(&exp, &[0.0, 0.1, 0.2], &query, hours)? {
        println!(
            "z = {z:.1}: N_min {:>5}, {:.3} kW",
            r.n_min, r.kw_per_device
        );
    }
    Ok(())
}
