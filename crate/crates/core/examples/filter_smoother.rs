//! Filtering and smoothing a simulated two-component field on an interval
//! with known parameters, and scoring both against the truth.
//!
//! Run with `cargo run --release --example filter_smoother`.

use resonator::basis::Domain;
use resonator::covariance::Kernel;
use resonator::inference::{filter_pass, posterior_at, smooth_pass, ComponentSelector, GaussianBelief};
use resonator::model::{assemble_system, Component, ModelSpec};
use resonator::simulator::{field_on_points, sample_observations, sample_trajectory, SimulationPlan};
use resonator::workflow::evaluation_grid;

fn main() -> resonator::Result<()> {
    let model = ModelSpec::new(
        Domain::interval(1.0),
        24,
        vec![
            Component::new("wave", 0.5, 0.01, 2.0 * std::f64::consts::PI * 3.0, Kernel::matern(1.5, 0.2, 5.0)),
            Component::bias("bias", 0.2, 0.0, Kernel::matern(2.5, 0.5, 0.5)),
        ],
        0.01,
    );
    let plan = SimulationPlan::random_design(model.clone(), 200, 8, (0.0, 2.0), 11)?;
    let traj = sample_trajectory(&plan)?;
    let data = sample_observations(&traj, &plan)?;

    let basis = model.basis()?;
    let system = assemble_system(&model, &basis, &data.times(), &data.locations())?;
    let prior = GaussianBelief::from_blocks(&model.prior_blocks(&basis, data.steps[0].time)?);
    let filtered = filter_pass(&system, &data, &prior, model.noise_variance)?;
    let smoothed = smooth_pass(&system, &filtered)?;
    println!("state dimension {}, {} steps", system.state_dim(), system.len());
    println!("log-likelihood {:.3}", filtered.log_likelihood);

    let grid = evaluation_grid(&model.domain, 101);
    let truth = field_on_points(&model, &traj, &grid, None)?;
    let times = data.times();
    for (label, beliefs) in [("filtered", filtered.filtered()), ("smoothed", smoothed)] {
        let f = posterior_at(&system.layout, &beliefs, &times, &basis, &grid, &ComponentSelector::All)?;
        let err = &f.total.mean - &truth;
        let rmse = (err.norm_squared() / err.len() as f64).sqrt();
        let z = err.component_div(&f.total.variance.map(|v| v.max(1e-300).sqrt()));
        let inside = z.iter().filter(|v| v.abs() <= 2.0).count() as f64 / z.len() as f64;
        println!("{label}: rmse {rmse:.4}, {:.1}% of grid values within 2 sd", 100.0 * inside);
    }
    Ok(())
}
