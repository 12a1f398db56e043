//! The file-based workflow behind the command-line tool: simulate to CSV,
//! fit, smooth with the fitted configuration and write a spectrum table,
//! all into a temporary directory.
//!
//! Run with `cargo run --release --example workflow_files [out_dir]`.

use std::path::PathBuf;

use resonator::workflow::{execute, Command, Overrides, RunConfig};

const CONFIG: &str = r#"
seed = 3

[model]
modes = 16
noise_variance = 0.04

[model.domain]
kind = "rectangle"
half_length_x = 1.0
half_length_y = 0.5

[[model.components]]
name = "wave"
gamma = 0.5
chi = 0.01
frequency = 6.283185307179586

[model.components.kernel]
family = "matern"
nu = 1.5
lengthscale = 0.3
magnitude = 4.0

[simulation]
n_times = 40
per_step = 10
time_range = [0.0, 4.0]

[fit]
restarts = 2
freeze = ["wave.chi"]

[output]
grid = 21
"#;

fn main() -> resonator::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("resonator-workflow"));
    let mut log = std::io::stdout();
    let cfg = RunConfig::from_toml(CONFIG)?;

    execute(Command::Simulate, &cfg, &out.join("simulate"), &mut log)?;
    let mut fit_cfg = cfg.clone();
    fit_cfg.apply(&Overrides {
        data: Some(out.join("simulate/observations.csv")),
        ..Default::default()
    });
    let report = execute(Command::Fit, &fit_cfg, &out.join("fit"), &mut log)?;
    println!("{}", report.message);

    let fitted = RunConfig::load(&out.join("fit/fitted.toml"))?;
    execute(Command::Smooth, &fitted, &out.join("smooth"), &mut log)?;
    execute(Command::Spectrum, &fitted, &out.join("spectrum"), &mut log)?;
    println!("outputs in {}", out.display());
    Ok(())
}
