//! The one-dimensional round trip: simulate 2500 noisy observations of a
//! 6 Hz resonator field, fit all six parameters by maximum likelihood from
//! random restarts, then compare the smoothed field with the truth at
//! t = 0.5.
//!
//! Run with `cargo run --release --example demo_fit_1d [seed] [restarts]`.

use resonator::estimation::FitOptions;
use resonator::scenarios::demo_round_trip;

fn main() -> resonator::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let restarts = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let options = FitOptions {
        restarts,
        seed,
        ..FitOptions::default()
    };
    let started = std::time::Instant::now();
    let run = demo_round_trip(seed, &options, 0.5, 101)?;
    println!("fitted in {:.1?}", started.elapsed());
    for t in &run.fit.traces {
        println!(
            "  restart {:>2}: log-likelihood {:>10.3} after {:>3} iterations{}",
            t.restart,
            -t.final_objective,
            t.iterations,
            if t.converged { "" } else { " (not converged)" }
        );
    }
    println!("best restart {}", run.fit.best_restart);
    for p in &run.fit.params.params {
        println!("  {:<22} {:.5}", p.name, p.value);
    }
    println!("noise sd     {:.4}  (true 0.1)", run.noise_sd);
    println!("lengthscale  {:.4}  (true 0.1)", run.lengthscale);
    println!("magnitude    {:.3}  (true 25)", run.magnitude);
    println!("slice rmse   {:.4} at t = {}", run.slice_rmse, run.slice_time);
    Ok(())
}
