//! Population model: steady power over acceptance fractions and steady-state kW-per-device.

use derflex::agc::{self, AgcSynth};
use derflex::flexibility::average_power;
use derflex::macromodel::{solve_nominal, steady_state_flexibility, DEFAULT_GRID};
use derflex::{MacroModel, Objective, PemParams, PowerTable, Result};

fn main() -> Result<()> {
    let model = MacroModel::nominal(PemParams::default())?;
    for (bc, bd) in [(1.0, 1.0), (0.5, 1.0), (1.0, 0.3)] {
        let g = model.evaluate(bc, bd)?;
        println!(
            "beta = ({bc}, {bd}): {:.4} kW per device, mean SoC {:.3}",
            g.power_per_device_kw, g.mean_soc
        );
    }

    let table = PowerTable::compute(&model, DEFAULT_GRID)?;
    let low = solve_nominal(&model, &table, Objective::MinPower, 1000)?;
    println!(
        "least steady power for 1000 batteries: {:.2} kW at SoC {:.3}",
        low.p_dem_kw, low.mean_soc
    );

    let sel = agc::standard_signals(&AgcSynth::default(), 1, 8760)?;
    let targets: Vec<f64> = sel
        .hours
        .iter()
        .map(|h| Ok(average_power(&agc::make_reference(h, 1.0, 1, 0.0)?).sqrt() * 1000.0))
        .collect::<Result<_>>()?;
    let flex = steady_state_flexibility(&model, &table, &targets, 10.0, 100, 100, 100_000)?;
    println!(
        "steady state: N = {}, {:.3} kW per device",
        flex.n, flex.kw_per_device
    );
    Ok(())
}
