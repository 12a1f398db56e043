//! Separating a drifting bias from daily and half-daily oscillations on the
//! sphere.
//!
//! Run with `cargo run --release --example sphere_separation [seed]`.

use resonator::scenarios::{bias_recovery, sphere_scenario, SphereSettings};

fn main() -> resonator::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let settings = SphereSettings::default();
    let scenario = sphere_scenario(&settings, seed)?;
    println!(
        "{} stations x {} hourly steps, {} modes per component",
        settings.stations,
        scenario.data.steps.len(),
        settings.modes
    );
    for (c, truth) in scenario.plan.model.components.iter().zip(&scenario.components) {
        let sd = (truth.iter().map(|v| v * v).sum::<f64>() / truth.len() as f64).sqrt();
        println!("  {:<10} rms {:.3}", c.name, sd);
    }
    let started = std::time::Instant::now();
    let r = bias_recovery(&scenario)?;
    println!("smoothing took {:.2?}", started.elapsed());
    println!("bias rmse               {:.4}", r.rmse);
    println!("oscillation sd          {:.4}", r.oscillation_sd);
    println!("within 2 noise sd       {:.1}%", 100.0 * r.within_noise_band);
    println!("inside 2 posterior sd   {:.1}%", 100.0 * r.coverage);
    Ok(())
}
