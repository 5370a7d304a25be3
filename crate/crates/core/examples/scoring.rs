//! Scoring a synthetic response: a delayed, noisy copy of the reference.

use derflex::scoring;
use derflex::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let dt = 2.0;
    let n: usize = 1800;
    let reference: Vec<f64> = (0..n)
        .map(|i| 500.0 * (i as f64 * dt / 400.0).sin() + 200.0 * (i as f64 * dt / 97.0).cos())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (delay_s, noise_kw) in [(0usize, 0.0), (60, 0.0), (120, 50.0), (240, 150.0)] {
        let lag = delay_s / dt as usize;
        let response: Vec<f64> = (0..n)
            .map(|i| reference[i.saturating_sub(lag)] + noise_kw * (rng.random::<f64>() - 0.5))
            .collect();
        let s = scoring::score(&reference, &response, dt)?;
        println!(
            "delay {delay_s:>3} s, noise {noise_kw:>5.0} kW: x_a={:.3} x_d={:.3} x_p={:.3} x_c={:.3} lag {:.0} s",
            s.accuracy, s.delay, s.precision, s.composite, s.best_lag_s
        );
    }
    Ok(())
}
