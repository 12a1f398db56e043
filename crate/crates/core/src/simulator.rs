//! Exact sampling of the discretized field and of noisy observations.
//!
//! Randomness comes from one seeded ChaCha generator split into streams:
//! stream `j + 1` drives component `j` (initial state and process noise),
//! and the sampling design and measurement noise have streams of their own.
//! Components therefore draw identical noise whether simulated jointly or
//! alone.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::basis::{BasisSet, Domain, Point};
use crate::covariance::Kernel;
use crate::error::{ensure_nonnegative, Error, Result};
use crate::inference::{ObservationBatch, ObservationStep};
use crate::model::{assemble_system, chol2, discretize, Component, DiscreteBlock, DiscreteSystem, ModelSpec};

const DESIGN_STREAM: u64 = u64::MAX - 1;
const MEASUREMENT_STREAM: u64 = u64::MAX;

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal2(rng: &mut ChaCha20Rng) -> Vector2<f64> {
    Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// A point drawn uniformly (by area) from `domain`.
pub fn uniform_point(domain: &Domain, rng: &mut impl Rng) -> Point {
    match *domain {
        Domain::Interval { half_length } => Point::on_line(rng.random_range(-half_length..half_length)),
        Domain::Rectangle {
            half_length_x,
            half_length_y,
        } => Point::new(
            rng.random_range(-half_length_x..half_length_x),
            rng.random_range(-half_length_y..half_length_y),
        ),
        Domain::Disk { radius } => {
            let r = radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..2.0 * PI);
            Point::new(r * a.cos(), r * a.sin())
        }
        Domain::Sphere { .. } => {
            let theta = (1.0 - 2.0 * rng.random::<f64>()).clamp(-1.0, 1.0).acos();
            Point::angles(theta, rng.random_range(0.0..2.0 * PI))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationPlan {
    pub model: ModelSpec,
    pub times: Vec<f64>,
    pub locations: Vec<Vec<Point>>,
    pub seed: u64,
}

impl SimulationPlan {
    pub fn new(model: ModelSpec, times: Vec<f64>, locations: Vec<Vec<Point>>, seed: u64) -> Result<Self> {
        let plan = SimulationPlan {
            model,
            times,
            locations,
            seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// The same locations at every time.
    pub fn fixed_sites(model: ModelSpec, times: Vec<f64>, sites: Vec<Point>, seed: u64) -> Result<Self> {
        let locations = vec![sites; times.len()];
        SimulationPlan::new(model, times, locations, seed)
    }

    /// `n_times` sorted uniform times on `[t0, t1]`, each with `per_step`
    /// uniform random locations.
    pub fn random_design(
        model: ModelSpec,
        n_times: usize,
        per_step: usize,
        range: (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        SimulationPlan::design(model, None, None, n_times, per_step, range, seed)
    }

    /// Random or explicit times combined with random or fixed sites. Times
    /// (when not given) are `n_times` sorted uniform draws on `range`;
    /// sites (when not given) are `per_step` uniform draws per time.
    pub fn design(
        model: ModelSpec,
        times: Option<Vec<f64>>,
        sites: Option<Vec<Point>>,
        n_times: usize,
        per_step: usize,
        (t0, t1): (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng_for(seed, DESIGN_STREAM);
        let times = match times {
            Some(t) => t,
            None => {
                if !(t1 > t0) {
                    return Err(Error::param("time_range", "end must exceed start"));
                }
                let mut t: Vec<f64> = (0..n_times).map(|_| rng.random_range(t0..=t1)).collect();
                t.sort_by(f64::total_cmp);
                t.dedup();
                t
            }
        };
        let locations = match sites {
            Some(s) => vec![s; times.len()],
            None => times
                .iter()
                .map(|_| (0..per_step).map(|_| uniform_point(&model.domain, &mut rng)).collect())
                .collect(),
        };
        SimulationPlan::new(model, times, locations, seed)
    }

    /// Adds observation-free steps at `extra` times (already present times
    /// are left alone), so that the trajectory records the state there.
    pub fn with_truth_times(mut self, extra: &[f64]) -> Result<Self> {
        for &t in extra {
            if self.times.contains(&t) {
                continue;
            }
            let at = self.times.partition_point(|&s| s < t);
            self.times.insert(at, t);
            self.locations.insert(at, Vec::new());
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let mut m = self.model.clone();
        ensure_nonnegative("noise_variance", m.noise_variance)?;
        m.noise_variance = 1.0;
        m.validate()?;
        if self.locations.len() != self.times.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} location sets for {} times",
                self.locations.len(),
                self.times.len()
            )));
        }
        crate::model::check_times(&self.times)
    }

    /// Discrete system of the plan (the measurement noise does not enter).
    pub fn system(&self, basis: &BasisSet) -> Result<DiscreteSystem> {
        let mut m = self.model.clone();
        m.noise_variance = 1.0;
        assemble_system(&m, basis, &self.times, &self.locations)
    }
}

/// Coefficient states at each plan time.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

fn sample_blocks(
    rng: &mut ChaCha20Rng,
    prior: &[Matrix2<f64>],
    system: &DiscreteSystem,
    range: std::ops::Range<usize>,
) -> Vec<Vec<Vector2<f64>>> {
    let mut x: Vec<Vector2<f64>> = prior[range.clone()]
        .iter()
        .map(|p| chol2(p) * normal2(rng))
        .collect();
    let mut out = Vec::with_capacity(system.len());
    for step in &system.steps {
        if let Some(blocks) = &step.blocks {
            for (xi, blk) in x.iter_mut().zip(&blocks[range.clone()]) {
                *xi = blk.transition * *xi + chol2(&blk.noise) * normal2(rng);
            }
        }
        out.push(x.clone());
    }
    out
}

/// Draws `x_k = A_k x_{k-1} + w_k`, starting from the stationary
/// (or diffuse) prior at the first time.
pub fn sample_trajectory(plan: &SimulationPlan) -> Result<Trajectory> {
    plan.validate()?;
    let basis = plan.model.basis()?;
    let system = plan.system(&basis)?;
    let t0 = plan.times.first().copied().unwrap_or(0.0);
    let prior = plan.model.prior_blocks(&basis, t0)?;
    let layout = &system.layout;
    let n = layout.state_dim();
    let mut states = vec![DVector::zeros(n); system.len()];
    for j in 0..layout.components() {
        let range = layout.component_blocks(j);
        let mut rng = rng_for(plan.seed, j as u64 + 1);
        let draws = sample_blocks(&mut rng, &prior, &system, range.clone());
        for (state, blocks) in states.iter_mut().zip(draws) {
            for (i, v) in range.clone().zip(blocks) {
                state[2 * i] = v[0];
                state[2 * i + 1] = v[1];
            }
        }
    }
    Ok(Trajectory {
        times: plan.times.clone(),
        states,
    })
}

/// The trajectory of component `j` alone, drawn from the same stream it
/// uses in [`sample_trajectory`]. States have that component's dimension.
pub fn sample_component_trajectory(plan: &SimulationPlan, j: usize) -> Result<Trajectory> {
    if j >= plan.model.components.len() {
        return Err(Error::param("component", format!("no component {j}")));
    }
    let mut single = plan.model.clone();
    single.components = vec![plan.model.components[j].clone()];
    let basis = single.basis()?;
    let sub = SimulationPlan {
        model: single,
        ..plan.clone()
    };
    let system = sub.system(&basis)?;
    let t0 = plan.times.first().copied().unwrap_or(0.0);
    let prior = sub.model.prior_blocks(&basis, t0)?;
    let mut rng = rng_for(plan.seed, j as u64 + 1);
    let range = 0..system.layout.blocks();
    let states = sample_blocks(&mut rng, &prior, &system, range)
        .into_iter()
        .map(|b| DVector::from_iterator(2 * b.len(), b.iter().flat_map(|v| [v[0], v[1]])))
        .collect();
    Ok(Trajectory {
        times: plan.times.clone(),
        states,
    })
}

/// `y_k = H_k x_k + r_k` at the plan's locations.
pub fn sample_observations(trajectory: &Trajectory, plan: &SimulationPlan) -> Result<ObservationBatch> {
    if trajectory.states.len() != plan.times.len() {
        return Err(Error::DimensionMismatch("trajectory does not match the plan".into()));
    }
    let basis = plan.model.basis()?;
    let layout = plan.model.layout();
    let sigma = plan.model.noise_variance.sqrt();
    let mut rng = rng_for(plan.seed, MEASUREMENT_STREAM);
    let mut steps = Vec::with_capacity(plan.times.len());
    for ((t, locs), x) in plan.times.iter().zip(&plan.locations).zip(&trajectory.states) {
        let h = layout.measurement_matrix(&basis.eval(locs)?, None);
        let f = h * x;
        let values = f
            .iter()
            .map(|v| {
                let e: f64 = rng.sample(StandardNormal);
                v + sigma * e
            })
            .collect();
        steps.push(ObservationStep {
            time: *t,
            locations: locs.clone(),
            values,
        });
    }
    Ok(ObservationBatch { steps })
}

/// Noise-free field values (selected components summed) at `points` for
/// every trajectory step; row `k` is step `k`.
pub fn field_on_points(
    model: &ModelSpec,
    trajectory: &Trajectory,
    points: &[Point],
    components: Option<&[usize]>,
) -> Result<DMatrix<f64>> {
    let basis = model.basis()?;
    let h = model.layout().measurement_matrix(&basis.eval(points)?, components);
    let mut out = DMatrix::zeros(trajectory.states.len(), points.len());
    for (k, x) in trajectory.states.iter().enumerate() {
        out.row_mut(k).copy_from(&(&h * x).transpose());
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub samples: usize,
    pub expected_mean: [f64; 2],
    pub mean: [f64; 2],
    pub expected_covariance: [[f64; 2]; 2],
    pub covariance: [[f64; 2]; 2],
    /// Largest error in units of its sampling scale, i.e. `|err| / scale`
    /// with scale `sqrt(Q_ii)` for means and `sqrt(Q_ii Q_jj + Q_ij^2)` for
    /// covariance entries.
    pub mean_error: f64,
    pub covariance_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Empirical moments of one-step transitions of `block` from `x0`,
/// compared against `(A x0, Q)` at tolerance `3 / sqrt(count)` relative to
/// each entry's natural scale.
pub fn transition_moment_check(block: &DiscreteBlock, x0: Vector2<f64>, count: usize, seed: u64) -> Result<MomentReport> {
    if count < 1000 {
        return Err(Error::param("count", "need at least 1000 samples"));
    }
    let mut rng = rng_for(seed, 1);
    let l = chol2(&block.noise);
    let mean = block.transition * x0;
    let mut s1 = Vector2::zeros();
    let mut s2 = Matrix2::zeros();
    for _ in 0..count {
        let x = block.transition * x0 + l * normal2(&mut rng);
        let d = x - mean;
        s1 += d;
        s2 += d * d.transpose();
    }
    let n = count as f64;
    let emp_mean = mean + s1 / n;
    let emp_cov = s2 / n;
    let q = &block.noise;
    let tol = 3.0 / n.sqrt();
    let ratio = |err: f64, scale: f64| {
        if scale > 0.0 {
            err.abs() / scale
        } else if err == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let mut mean_error: f64 = 0.0;
    let mut cov_error: f64 = 0.0;
    for i in 0..2 {
        mean_error = mean_error.max(ratio(emp_mean[i] - mean[i], q[(i, i)].max(0.0).sqrt()));
        for j in 0..2 {
            let scale = (q[(i, i)] * q[(j, j)] + q[(i, j)] * q[(i, j)]).max(0.0).sqrt();
            cov_error = cov_error.max(ratio(emp_cov[(i, j)] - q[(i, j)], scale));
        }
    }
    let m2 = |m: &Matrix2<f64>| [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]];
    Ok(MomentReport {
        samples: count,
        expected_mean: [mean[0], mean[1]],
        mean: [emp_mean[0], emp_mean[1]],
        expected_covariance: m2(q),
        covariance: m2(&emp_cov),
        mean_error,
        covariance_error: cov_error,
        tolerance: tol,
        passed: mean_error <= tol && cov_error <= tol,
    })
}

/// Empirical marginal covariance of a long run of one block, started at
/// the origin and discarding `burn_in` steps.
pub fn long_run_covariance(block: &DiscreteBlock, steps: usize, burn_in: usize, seed: u64) -> Matrix2<f64> {
    let mut rng = rng_for(seed, 1);
    let l = chol2(&block.noise);
    let mut x = Vector2::zeros();
    let mut acc = Matrix2::zeros();
    for k in 0..burn_in + steps {
        x = block.transition * x + l * normal2(&mut rng);
        if k >= burn_in {
            acc += x * x.transpose();
        }
    }
    acc / steps.max(1) as f64
}

/// Parameters of the one-dimensional demonstration: a single 6 Hz
/// resonator on `[-1, 1]` with 32 modes.
pub fn demo_model() -> ModelSpec {
    ModelSpec::new(
        Domain::interval(1.0),
        32,
        vec![Component::new(
            "resonator",
            1.0,
            0.01,
            2.0 * PI * 6.0,
            Kernel::matern(1.5, 0.1, 25.0),
        )],
        0.01,
    )
}

/// Demonstration design: 100 random times on `[0, 1]` with 25 random
/// locations each, 2500 observations in total.
pub fn demo_plan(seed: u64) -> Result<SimulationPlan> {
    SimulationPlan::random_design(demo_model(), 100, 25, (0.0, 1.0), seed)
}

/// One block of the demo resonator, for moment checks.
pub fn demo_block(mode: usize, dt: f64) -> Result<DiscreteBlock> {
    let model = demo_model();
    let basis = model.basis()?;
    let c = &model.components[0];
    let q = crate::covariance::project_noise(&c.kernel, &basis)?;
    let omega = c.frequency.value_at(0.0);
    let coef = c.coefficients(0, basis.eigenvalues()[mode], omega)?;
    discretize(coef.a, coef.b, q[mode], dt)
}
