//! Space-time spectral density of a resonator component: the temporal
//! spectrum peaks near the oscillation frequency and broadens with the
//! spatial frequency through the damping `gamma + chi * nu_x^2`.
//!
//! Run with `cargo run --release --example spectrum`.

use resonator::covariance::Kernel;
use resonator::model::{model_spectral_density, Component};

fn main() -> resonator::Result<()> {
    let omega = 2.0 * std::f64::consts::PI * 6.0;
    let c = Component::new("resonator", 1.0, 0.01, omega, Kernel::matern(1.5, 0.1, 25.0));
    for nu_x in [0.0, 20.0, 60.0] {
        let mut best = (0.0, 0.0);
        let mut half = Vec::new();
        let grid: Vec<f64> = (0..=4000).map(|i| 80.0 * i as f64 / 4000.0).collect();
        let values: Vec<f64> = grid
            .iter()
            .map(|&nu_t| model_spectral_density(&c, nu_x, nu_t, 1))
            .collect::<resonator::Result<_>>()?;
        for (&nu_t, &s) in grid.iter().zip(&values) {
            if s > best.1 {
                best = (nu_t, s);
            }
        }
        for (&nu_t, &s) in grid.iter().zip(&values) {
            if s >= best.1 / 2.0 {
                half.push(nu_t);
            }
        }
        let width = half.last().unwrap_or(&0.0) - half.first().unwrap_or(&0.0);
        println!(
            "nu_x = {nu_x:>4}: peak {:.3} rad/s (omega = {omega:.3}), half-power width {width:.3}, damping {:.3}",
            best.0,
            c.gamma + c.chi * nu_x * nu_x
        );
    }
    Ok(())
}
