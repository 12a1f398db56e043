//! Synthetic scenarios used by the examples and tests.
//!
//! The one-dimensional demo simulates from a 6 Hz resonator on an interval,
//! fits all parameters by maximum likelihood and compares the smoothed
//! field with the truth on a time slice.
//! The sphere scenario draws a slowly drifting bias plus daily and
//! half-daily oscillations from the model itself and asks whether the
//! smoother separates them. The disk scenario plants two localized
//! oscillating sources, whose frequencies change mid-record, into a field
//! that the (spatially stationary) model never generated, and asks whether
//! the time-averaged amplitude maps peak at the planted centers.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::basis::{Domain, Point};
use crate::covariance::Kernel;
use crate::error::{Error, Result};
use crate::estimation::{self, FitOptions, FitResult, ParamVector};
use crate::inference::{self, ComponentSelector, GaussianBelief, ObservationBatch, ObservationStep};
use crate::model::{assemble_system, Component, FrequencySchedule, ModelSpec};
use crate::simulator::{self, uniform_point, SimulationPlan};

const SITE_STREAM: u64 = 1 << 32;

fn smooth(model: &ModelSpec, data: &ObservationBatch) -> Result<(crate::model::DiscreteSystem, Vec<GaussianBelief>)> {
    let basis = model.basis()?;
    let system = assemble_system(model, &basis, &data.times(), &data.locations())?;
    let t0 = data.steps.first().map_or(0.0, |s| s.time);
    let prior = GaussianBelief::from_blocks(&model.prior_blocks(&basis, t0)?);
    let filt = inference::filter_pass(&system, data, &prior, model.noise_variance)?;
    let beliefs = inference::smooth_pass(&system, &filt)?;
    Ok((system, beliefs))
}

/// Outcome of simulating, fitting and smoothing the one-dimensional demo.
#[derive(Clone, Debug)]
pub struct DemoRun {
    pub seed: u64,
    pub fit: FitResult,
    pub noise_sd: f64,
    pub lengthscale: f64,
    pub magnitude: f64,
    /// Time of the held-out truth slice.
    pub slice_time: f64,
    /// RMSE of the smoothed mean against the true field on the slice.
    pub slice_rmse: f64,
}

/// Simulates 100 random times x 25 locations from [`simulator::demo_model`]
/// (plus an observation-free step at `slice_time`), fits from random
/// restarts and smooths with the fitted model on `grid` evaluation points.
pub fn demo_round_trip(seed: u64, options: &FitOptions, slice_time: f64, grid: usize) -> Result<DemoRun> {
    let truth_model = simulator::demo_model();
    let plan = simulator::demo_plan(seed)?.with_truth_times(&[slice_time])?;
    let traj = simulator::sample_trajectory(&plan)?;
    let data = simulator::sample_observations(&traj, &plan)?;
    let k = plan
        .times
        .iter()
        .position(|&t| t == slice_time)
        .ok_or_else(|| Error::param("slice_time", "missing from the plan"))?;
    let points = crate::workflow::evaluation_grid(&truth_model.domain, grid);
    let truth = simulator::field_on_points(&truth_model, &traj, &points, None)?;

    let fit = estimation::fit(&data, &truth_model, &ParamVector::from_model(&truth_model), options)?;
    let (system, beliefs) = smooth(&fit.model, &data)?;
    let field = inference::posterior_at(
        &system.layout,
        &beliefs[k..=k],
        &[slice_time],
        &fit.model.basis()?,
        &points,
        &ComponentSelector::All,
    )?;
    let sq: f64 = field
        .total
        .mean
        .iter()
        .zip(truth.row(k).iter())
        .map(|(m, t)| (m - t).powi(2))
        .sum();
    let c = &fit.model.components[0];
    Ok(DemoRun {
        seed,
        noise_sd: fit.model.noise_variance.sqrt(),
        lengthscale: c.kernel.lengthscale(),
        magnitude: c.kernel.magnitude(),
        slice_time,
        slice_rmse: (sq / points.len() as f64).sqrt(),
        fit,
    })
}

#[derive(Clone, Debug)]
pub struct SphereSettings {
    pub modes: usize,
    pub stations: usize,
    /// Observation days, sampled `per_day` times a day.
    pub days: usize,
    pub per_day: usize,
    pub noise_sd: f64,
}

impl Default for SphereSettings {
    fn default() -> Self {
        SphereSettings {
            modes: 15,
            stations: 60,
            days: 4,
            per_day: 24,
            noise_sd: 0.1,
        }
    }
}

/// Unit sphere, time in days: a bias component plus resonators at one and
/// two cycles per day.
pub fn sphere_model(settings: &SphereSettings) -> ModelSpec {
    let kernel = |s: f64| Kernel::matern(1.5, 0.8, s);
    ModelSpec::new(
        Domain::sphere(1.0),
        settings.modes,
        vec![
            Component::bias("bias", 0.1, 0.01, kernel(0.01)),
            Component::new("daily", 0.1, 0.01, 2.0 * PI, kernel(0.5)),
            Component::new("semidaily", 0.1, 0.01, 4.0 * PI, kernel(1.0)),
        ],
        settings.noise_sd * settings.noise_sd,
    )
}

#[derive(Clone, Debug)]
pub struct SphereScenario {
    pub plan: SimulationPlan,
    pub sites: Vec<Point>,
    pub data: ObservationBatch,
    /// True field per component at the sites, one row per step.
    pub components: Vec<DMatrix<f64>>,
}

pub fn sphere_scenario(settings: &SphereSettings, seed: u64) -> Result<SphereScenario> {
    let model = sphere_model(settings);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(SITE_STREAM);
    let sites: Vec<Point> = (0..settings.stations)
        .map(|_| uniform_point(&model.domain, &mut rng))
        .collect();
    let times: Vec<f64> = (0..settings.days * settings.per_day)
        .map(|k| k as f64 / settings.per_day as f64)
        .collect();
    let plan = SimulationPlan::fixed_sites(model, times, sites.clone(), seed)?;
    let traj = simulator::sample_trajectory(&plan)?;
    let data = simulator::sample_observations(&traj, &plan)?;
    let components = (0..plan.model.components.len())
        .map(|j| simulator::field_on_points(&plan.model, &traj, &sites, Some(&[j])))
        .collect::<Result<_>>()?;
    Ok(SphereScenario {
        plan,
        sites,
        data,
        components,
    })
}

/// How well the smoothed bias matches the true bias at the stations.
#[derive(Clone, Debug)]
pub struct BiasRecovery {
    /// Fraction of station-times whose bias error is within two
    /// measurement-noise standard deviations.
    pub within_noise_band: f64,
    /// Fraction of station-times whose truth lies inside the posterior
    /// mean +- 2 sd.
    pub coverage: f64,
    pub rmse: f64,
    /// Standard deviation of the oscillating components at the stations,
    /// what the bias error would be if the smoother could not separate them.
    pub oscillation_sd: f64,
}

pub fn bias_recovery(scenario: &SphereScenario) -> Result<BiasRecovery> {
    let model = &scenario.plan.model;
    let (system, beliefs) = smooth(model, &scenario.data)?;
    let field = inference::posterior_at(
        &system.layout,
        &beliefs,
        &scenario.data.times(),
        &model.basis()?,
        &scenario.sites,
        &ComponentSelector::Only(vec![0]),
    )?;
    let est = &field.components[0];
    let truth = &scenario.components[0];
    let band = 2.0 * model.noise_variance.sqrt();
    let n = truth.len() as f64;
    let (mut inside, mut covered, mut sq) = (0usize, 0usize, 0.0);
    for ((m, v), t) in est.mean.iter().zip(est.variance.iter()).zip(truth.iter()) {
        let e = m - t;
        inside += (e.abs() <= band) as usize;
        covered += (e.abs() <= 2.0 * v.max(0.0).sqrt()) as usize;
        sq += e * e;
    }
    let osc = &scenario.components[1] + &scenario.components[2];
    let mean = osc.mean();
    let osc_var = osc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(BiasRecovery {
        within_noise_band: inside as f64 / n,
        coverage: covered as f64 / n,
        rmse: (sq / n).sqrt(),
        oscillation_sd: osc_var.sqrt(),
    })
}

/// One planted source: a Gaussian bump oscillating with a piecewise
/// constant frequency (Hz).
#[derive(Clone, Debug)]
pub struct Source {
    pub center: Point,
    pub width: f64,
    pub amplitude: f64,
    pub switch_time: f64,
    pub hz: (f64, f64),
}

impl Source {
    pub fn schedule(&self) -> FrequencySchedule {
        FrequencySchedule::Piecewise {
            times: vec![0.0, self.switch_time],
            values: vec![2.0 * PI * self.hz.0, 2.0 * PI * self.hz.1],
        }
    }

    /// Phase of the oscillation, continuous across the switch.
    pub fn phase(&self, t: f64) -> f64 {
        let w0 = 2.0 * PI * self.hz.0;
        let w1 = 2.0 * PI * self.hz.1;
        if t <= self.switch_time {
            w0 * t
        } else {
            w0 * self.switch_time + w1 * (t - self.switch_time)
        }
    }

    pub fn value(&self, p: Point, t: f64) -> f64 {
        let d2 = (p.x - self.center.x).powi(2) + (p.y - self.center.y).powi(2);
        self.amplitude * (-0.5 * d2 / (self.width * self.width)).exp() * self.phase(t).cos()
    }
}

#[derive(Clone, Debug)]
pub struct DiskSettings {
    pub modes: usize,
    /// Pixels per side of the square sampling lattice (only pixels inside
    /// the disk are kept).
    pub pixels: usize,
    pub steps: usize,
    pub dt: f64,
    pub noise_sd: f64,
}

impl Default for DiskSettings {
    fn default() -> Self {
        DiskSettings {
            modes: 32,
            pixels: 13,
            steps: 200,
            dt: 0.1,
            noise_sd: 0.2,
        }
    }
}

pub fn disk_sources(settings: &DiskSettings) -> Vec<Source> {
    let switch = 0.5 * settings.steps as f64 * settings.dt;
    vec![
        Source {
            center: Point::new(0.4, 0.2),
            width: 0.2,
            amplitude: 1.0,
            switch_time: switch,
            hz: (1.0, 1.2),
        },
        Source {
            center: Point::new(-0.3, -0.4),
            width: 0.2,
            amplitude: 1.0,
            switch_time: switch,
            hz: (0.3, 0.25),
        },
    ]
}

/// Unit disk with one resonator per planted source, each following that
/// source's frequency schedule.
pub fn disk_model(settings: &DiskSettings) -> ModelSpec {
    let comps = disk_sources(settings)
        .iter()
        .enumerate()
        .map(|(j, s)| {
            Component::new(&format!("source{}", j + 1), 0.3, 0.01, 0.0, Kernel::matern(1.5, 0.3, 10.0))
                .with_schedule(s.schedule())
        })
        .collect();
    ModelSpec::new(
        Domain::disk(1.0),
        settings.modes,
        comps,
        settings.noise_sd * settings.noise_sd,
    )
}

#[derive(Clone, Debug)]
pub struct DiskScenario {
    pub model: ModelSpec,
    pub sources: Vec<Source>,
    pub data: ObservationBatch,
}

pub fn disk_scenario(settings: &DiskSettings, seed: u64) -> Result<DiskScenario> {
    if settings.pixels < 2 {
        return Err(Error::param("pixels", "needs at least 2"));
    }
    let model = disk_model(settings);
    let sources = disk_sources(settings);
    let sites = crate::workflow::evaluation_grid(&model.domain, settings.pixels);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let steps = (0..settings.steps)
        .map(|k| {
            let t = k as f64 * settings.dt;
            let values = sites
                .iter()
                .map(|&p| {
                    let e: f64 = rng.sample(StandardNormal);
                    sources.iter().map(|s| s.value(p, t)).sum::<f64>() + settings.noise_sd * e
                })
                .collect();
            ObservationStep {
                time: t,
                locations: sites.clone(),
                values,
            }
        })
        .collect();
    Ok(DiskScenario {
        model,
        sources,
        data: ObservationBatch { steps },
    })
}

/// Where a component's amplitude map peaks relative to its planted source.
#[derive(Clone, Debug)]
pub struct Localization {
    pub center: Point,
    pub peak: Point,
    /// Grid spacing of the evaluation grid.
    pub cell: f64,
    /// Chebyshev distance from peak to center in grid cells.
    pub cells_off: f64,
    pub map: Vec<f64>,
}

/// Smooths the disk data and locates the peak of each component's
/// time-averaged amplitude map on an `grid` x `grid` lattice.
pub fn localize_sources(scenario: &DiskScenario, grid: usize) -> Result<(Vec<Point>, Vec<Localization>)> {
    let model = &scenario.model;
    let (system, beliefs) = smooth(model, &scenario.data)?;
    let basis = model.basis()?;
    let points = crate::workflow::evaluation_grid(&model.domain, grid);
    let cell = 2.0 * model.domain.size() / (grid - 1) as f64;
    let times = scenario.data.times();
    let mut out = Vec::new();
    for (j, src) in scenario.sources.iter().enumerate() {
        let omegas: Vec<f64> = times.iter().map(|&t| model.components[j].frequency.value_at(t)).collect();
        let map = inference::amplitude_map(&system.layout, &beliefs, &omegas, &basis, &points, j)?;
        let best = map
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::param("grid", "empty evaluation grid"))?;
        let peak = points[best];
        let off = (peak.x - src.center.x).abs().max((peak.y - src.center.y).abs()) / cell;
        out.push(Localization {
            center: src.center,
            peak,
            cell,
            cells_off: off,
            map,
        });
    }
    Ok((points, out))
}
