//! Precision of battery/heater mixtures sized from each kind's kW-per-device.

use derflex::agc::{self, AgcSynth};
use derflex::{
    mixture_fleet, Coordinator, DeviceParams, EssParams, EwhParams, Experiment, PemParams, Result,
};

fn main() -> Result<()> {
    let sel = agc::standard_signals(&AgcSynth::default(), 1, 8760)?;
    let ess = DeviceParams::Ess(EssParams::default());
    let ewh = DeviceParams::Ewh(EwhParams::default());
    let mut exp = Experiment::new(ess, Coordinator::Packetized(PemParams::default()));
    exp.hour_of_day = 8;
    exp.seeds = 3;
    // one-hour kW-per-device of 2-minute packetized batteries and of heaters at 8 am
    let (zeta_ess, zeta_ewh) = (1000.0 / 750.0, 1000.0 / 6500.0);
    for share in [0.25, 0.5, 0.75] {
        let (n_ess, n_ewh) = mixture_fleet(1.0 - share, share, zeta_ess, zeta_ewh)?;
        let worst = sel
            .hours
            .iter()
            .map(|h| exp.precision_with(|r| exp.build_mixture(&ess, n_ess, &ewh, n_ewh, r), h))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(1.0, f64::min);
        println!(
            "{:>3.0}% heaters: {n_ess} batteries + {n_ewh} heaters, worst x_p {worst:.3}",
            share * 100.0
        );
    }
    Ok(())
}
