//! kW-per-device as the horizon grows from one to four hours.

use derflex::agc::{self, AgcSynth};
use derflex::flexibility::sweep_horizon;
use derflex::{Coordinator, DeviceParams, EssParams, Experiment, FlexQuery, PemParams, Result};

fn main() -> Result<()> {
    let sel = agc::standard_signals(&AgcSynth::default(), 1, 8760)?;
    let exp = Experiment::new(
        DeviceParams::Ess(EssParams::default()),
        Coordinator::Packetized(PemParams::default()),
    );
    let query = FlexQuery::new(100, 200, exp.max_rate_kw());
    for (k, r) in sweep_horizon(&exp, &[1, 2, 3, 4], &query, &sel.hours)? {
        println!(
            "{k} h: N_min {:>5}, {:.3} kW per device",
            r.n_min, r.kw_per_device
        );
    }
    Ok(())
}
