//! Water heater baseload and flexibility at a morning peak and an afternoon trough.

use derflex::agc::{self, AgcSynth};
use derflex::devices::water_draw;
use derflex::{
    Coordinator, DeviceParams, DrawProfile, EwhParams, Experiment, FlexQuery, PemParams, Result,
};

fn main() -> Result<()> {
    let sel = agc::standard_signals(&AgcSynth::default(), 1, 8760)?;
    let profile = DrawProfile::default();
    for hour_of_day in [8, 15] {
        let mut exp = Experiment::new(
            DeviceParams::Ewh(EwhParams::default()),
            Coordinator::Packetized(PemParams::default()),
        );
        exp.hour_of_day = hour_of_day;
        let fleet = exp.build(1000, 0)?;
        println!(
            "{hour_of_day:>2}:00 draw {:.4} L/s, baseload {:.0} kW per 1000 heaters",
            water_draw(&profile, hour_of_day)?,
            fleet.baseload_kw()
        );
        let query = FlexQuery::new(2000, 1000, exp.max_rate_kw());
        let r = exp.find_n_min(&query, &sel.hours)?;
        println!(
            "      N_min {} -> {:.3} kW per heater",
            r.n_min, r.kw_per_device
        );
    }
    Ok(())
}
