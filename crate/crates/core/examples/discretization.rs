//! Exact discretization of single resonator modes across damping regimes,
//! and the stationary covariance the discrete chain converges to.
//!
//! Run with `cargo run --release --example discretization`.

use resonator::model::{discretize, mode_coefficients, stationary_covariance};
use resonator::simulator::long_run_covariance;

fn rows(m: &nalgebra::Matrix2<f64>) -> String {
    format!(
        "[[{:.5e}, {:.5e}], [{:.5e}, {:.5e}]]",
        m[(0, 0)],
        m[(0, 1)],
        m[(1, 0)],
        m[(1, 1)]
    )
}

fn main() -> resonator::Result<()> {
    let cases = [
        ("underdamped", 1.0, 0.01, 4.0, 2.0 * std::f64::consts::PI),
        ("zero frequency", 1.0, 0.01, 4.0, 0.0),
        ("heavily damped", 20.0, 1.0, 4.0, 1.0),
        ("Wiener velocity", 0.0, 0.0, 0.0, 0.0),
    ];
    let dt = 0.05;
    let q = 1.0;
    for (name, gamma, chi, lambda, omega) in cases {
        let c = mode_coefficients(gamma, chi, lambda, omega)?;
        let blk = discretize(c.a, c.b, q, dt)?;
        println!("{name}: a = {:.3}, b = {:.3}", c.a, c.b);
        println!("  A = {}", rows(&blk.transition));
        println!("  Q = {}", rows(&blk.noise));
        println!("  spectral radius {:.6}", blk.spectral_radius());
        if let Some(p) = stationary_covariance(c.a, c.b, q) {
            let emp = long_run_covariance(&blk, 200_000, 2_000, 7);
            println!("  stationary var  {:.4e} / {:.4e}", p[(0, 0)], p[(1, 1)]);
            println!("  long-run var    {:.4e} / {:.4e}", emp[(0, 0)], emp[(1, 1)]);
        }
    }
    Ok(())
}
