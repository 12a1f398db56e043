//! The multi-component spatio-temporal resonator in coefficient space.
//!
//! Each component `j` is the SPDE
//! `f_tt + A_j f_t + B_j f = xi_j` with `A_j = gamma_j I - chi_j Laplace` and
//! `B_j = A_j^2 / 2 + omega_j^2`. On an eigenfunction with eigenvalue
//! `lambda` the operators act as scalars `a = gamma + chi lambda` and
//! `b = a^2 / 2 + omega^2`, so every (component, harmonic, mode) triple is an
//! independent 2x2 block `F = [[0, 1], [-b, -a]]` driven through `L = [0, 1]^T`
//! by white noise of intensity `q_n`.
//!
//! State layout: blocks are ordered by component, then harmonic, then mode;
//! block `i` occupies state entries `2i` (position) and `2i + 1` (velocity).

use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, Domain, Point};
use crate::covariance::{project_noise, Kernel};
use crate::error::{ensure_nonnegative, ensure_positive, Error, Result};

/// Scalar actions of `A` and `B` on one eigenmode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeCoefficients {
    pub a: f64,
    pub b: f64,
    pub omega: f64,
}

impl ModeCoefficients {
    /// `b - a^2/2 - omega^2` evaluated in floating point.
    pub fn coupling_residual(&self) -> f64 {
        (self.b - self.a * self.a / 2.0) - self.omega * self.omega
    }

    pub fn continuous(&self) -> Matrix2<f64> {
        companion(self.a, self.b)
    }
}

pub fn mode_coefficients(gamma: f64, chi: f64, lambda: f64, omega: f64) -> Result<ModeCoefficients> {
    ensure_nonnegative("gamma", gamma)?;
    ensure_nonnegative("chi", chi)?;
    ensure_nonnegative("lambda", lambda)?;
    ensure_nonnegative("omega", omega)?;
    let a = gamma + chi * lambda;
    let b = a * a / 2.0 + omega * omega;
    Ok(ModeCoefficients { a, b, omega })
}

/// The companion block `[[0, 1], [-b, -a]]`.
pub fn continuous_block(a: f64, b: f64) -> Result<Matrix2<f64>> {
    ensure_nonnegative("a", a)?;
    ensure_nonnegative("b", b)?;
    Ok(companion(a, b))
}

fn companion(a: f64, b: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -b, -a)
}

/// Exact one-step transition and process-noise covariance of a 2x2 block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscreteBlock {
    pub transition: Matrix2<f64>,
    pub noise: Matrix2<f64>,
}

impl DiscreteBlock {
    pub fn identity() -> Self {
        DiscreteBlock {
            transition: Matrix2::identity(),
            noise: Matrix2::zeros(),
        }
    }

    /// Composition: `self` over the first interval, `next` over the second.
    pub fn then(&self, next: &DiscreteBlock) -> DiscreteBlock {
        let transition = next.transition * self.transition;
        let noise = next.transition * self.noise * next.transition.transpose() + next.noise;
        DiscreteBlock {
            transition,
            noise: symmetrize(noise),
        }
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.transition)
    }

    /// Lower-triangular factor of the noise block; zero rows/columns where
    /// the block is degenerate.
    pub fn noise_factor(&self) -> Matrix2<f64> {
        chol2(&self.noise)
    }
}

pub(crate) fn symmetrize(m: Matrix2<f64>) -> Matrix2<f64> {
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Matrix2::new(m[(0, 0)], off, off, m[(1, 1)])
}

pub fn spectral_radius(m: &Matrix2<f64>) -> f64 {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = 0.25 * tr * tr - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (0.5 * tr + s).abs().max((0.5 * tr - s).abs())
    } else {
        det.abs().sqrt()
    }
}

/// Smallest eigenvalue of a symmetric 2x2 matrix.
pub fn min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let mean = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half_diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    mean - half_diff.hypot(m[(0, 1)])
}

/// Lower Cholesky factor of a symmetric PSD 2x2 matrix, tolerant of rank
/// deficiency.
pub(crate) fn chol2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let a = m[(0, 0)].max(0.0);
    let l11 = a.sqrt();
    if l11 > 0.0 {
        let l21 = m[(1, 0)] / l11;
        let l22 = (m[(1, 1)] - l21 * l21).max(0.0).sqrt();
        Matrix2::new(l11, 0.0, l21, l22)
    } else {
        Matrix2::new(0.0, 0.0, 0.0, m[(1, 1)].max(0.0).sqrt())
    }
}

/// Discretizes a companion-form block `F` over `dt` with noise intensity `q`.
pub fn discretize_block(f: &Matrix2<f64>, q: f64, dt: f64) -> Result<DiscreteBlock> {
    if f[(0, 0)] != 0.0 || f[(0, 1)] != 1.0 {
        return Err(Error::param("F", "must have companion form [[0, 1], [-b, -a]]"));
    }
    discretize(-f[(1, 1)], -f[(1, 0)], q, dt)
}

/// `A = exp(dt F)` in closed form and `Q = int_0^dt e^{tF} L q L^T e^{tF}^T dt`.
pub fn discretize(a: f64, b: f64, q: f64, dt: f64) -> Result<DiscreteBlock> {
    ensure_nonnegative("a", a)?;
    ensure_nonnegative("b", b)?;
    ensure_nonnegative("q", q)?;
    ensure_positive("dt", dt)?;
    let transition = transition_closed_form(a, b, dt);
    let noise = if a == 0.0 && b == 0.0 {
        // integrated Wiener process
        Matrix2::new(dt.powi(3) / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt) * q
    } else if a > 0.0 && b > 0.0 && a * dt >= LYAPUNOV_MIN_DECAY {
        let p = stationary_covariance_unchecked(a, b, q);
        symmetrize(p - transition * p * transition.transpose())
    } else {
        noise_by_squaring(a, b, q, dt)
    };
    let out = DiscreteBlock { transition, noise };
    if out.transition.iter().chain(out.noise.iter()).all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NonFinite(format!(
            "discretization of block a={a}, b={b}, q={q}, dt={dt}"
        )))
    }
}

/// Below this `a dt` the identity `P - A P A^T` cancels too many digits.
const LYAPUNOV_MIN_DECAY: f64 = 4.0;

/// Stationary covariance of a block, `diag(q / (2ab), q / (2a))`, when it
/// exists (`a > 0`, `b > 0`).
pub fn stationary_covariance(a: f64, b: f64, q: f64) -> Option<Matrix2<f64>> {
    (a > 0.0 && b > 0.0).then(|| stationary_covariance_unchecked(a, b, q))
}

fn stationary_covariance_unchecked(a: f64, b: f64, q: f64) -> Matrix2<f64> {
    Matrix2::new(q / (2.0 * a * b), 0.0, 0.0, q / (2.0 * a))
}

/// `exp(t F)` via `e^{-at/2} [C I + S (F + a/2 I)]` with `C`, `S` the
/// cos/sin (or cosh/sinh) pair of `sqrt(b - a^2/4) t`.
fn transition_closed_form(a: f64, b: f64, t: f64) -> Matrix2<f64> {
    let alpha = 0.5 * a;
    let d = alpha * alpha - b;
    let z = d * t * t;
    // (e^{-alpha t} C, e^{-alpha t} S)
    let (c, s) = if z.abs() < 1e-2 {
        let (mut c, mut g) = (1.0, 1.0);
        let (mut tc, mut tg) = (1.0, 1.0);
        for k in 1..12 {
            let kf = k as f64;
            tc *= z / ((2.0 * kf - 1.0) * (2.0 * kf));
            tg *= z / ((2.0 * kf) * (2.0 * kf + 1.0));
            c += tc;
            g += tg;
        }
        let decay = (-alpha * t).exp();
        (decay * c, decay * g * t)
    } else if z < 0.0 {
        let w = (-d).sqrt();
        let decay = (-alpha * t).exp();
        (decay * (w * t).cos(), decay * (w * t).sin() / w)
    } else {
        // overdamped: eps < alpha whenever b > 0
        let eps = d.sqrt();
        let slow = ((eps - alpha) * t).exp();
        let fast_ratio = (-2.0 * eps * t).exp();
        (
            0.5 * slow * (1.0 + fast_ratio),
            0.5 * slow * (-(-2.0 * eps * t).exp_m1()) / eps,
        )
    };
    Matrix2::new(c + alpha * s, s, -b * s, c - alpha * s)
}

/// Taylor series of the noise integral on a short step, then repeated
/// doubling `Q(2h) = A(h) Q(h) A(h)^T + Q(h)`.
fn noise_by_squaring(a: f64, b: f64, q: f64, dt: f64) -> Matrix2<f64> {
    let norm = (b).max(1.0 + a);
    let mut squarings = 0u32;
    let mut h = dt;
    while norm * h > 0.25 {
        h *= 0.5;
        squarings += 1;
    }
    let f = companion(a, b);
    // Q(h) = q h sum_{i,j} w_i w_j^T / (i + j + 1), w_i = (hF)^i L / i!
    let mut w = Vec::with_capacity(24);
    w.push(Vector2::new(0.0, 1.0));
    for i in 1..24 {
        let next = f * w[i - 1] * (h / i as f64);
        let small = next.amax() < 1e-20;
        w.push(next);
        if small {
            break;
        }
    }
    let mut noise = Matrix2::zeros();
    for (i, wi) in w.iter().enumerate() {
        for (j, wj) in w.iter().enumerate() {
            noise += wi * wj.transpose() / (i + j + 1) as f64;
        }
    }
    noise *= q * h;
    let mut trans = transition_closed_form(a, b, h);
    for _ in 0..squarings {
        noise = symmetrize(trans * noise * trans.transpose() + noise);
        trans *= trans;
    }
    noise
}

/// A nonnegative piecewise-constant angular frequency `omega(t)` in rad/s.
///
/// `Piecewise { times, values }` takes `values[i]` on `(times[i], times[i+1]]`
/// and `values[0]` for every `t <= times[0]`; the last value extends to
/// infinity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrequencySchedule {
    Constant(f64),
    Piecewise { times: Vec<f64>, values: Vec<f64> },
}

impl FrequencySchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            FrequencySchedule::Constant(w) => ensure_nonnegative("omega", *w),
            FrequencySchedule::Piecewise { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::param(
                        "omega_schedule",
                        "needs matching, non-empty time and value lists",
                    ));
                }
                if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
                    return Err(Error::NonMonotoneTimes { index: i + 1 });
                }
                values
                    .iter()
                    .try_for_each(|w| ensure_nonnegative("omega_schedule", *w))
            }
        }
    }

    /// Value on the left-open interval ending at `t`.
    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            FrequencySchedule::Constant(w) => *w,
            FrequencySchedule::Piecewise { times, values } => {
                let i = times.partition_point(|&s| s < t);
                values[i.saturating_sub(1)]
            }
        }
    }

    /// Splits `(start, end]` at interior breakpoints into `(duration, omega)`
    /// segments.
    pub fn segments(&self, start: f64, end: f64) -> Vec<(f64, f64)> {
        match self {
            FrequencySchedule::Constant(w) => vec![(end - start, *w)],
            FrequencySchedule::Piecewise { times, .. } => {
                let mut out = Vec::new();
                let mut from = start;
                for &s in times.iter().filter(|&&s| s > start && s < end) {
                    out.push((s - from, self.value_at(s)));
                    from = s;
                }
                out.push((end - from, self.value_at(end)));
                out
            }
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        match self {
            FrequencySchedule::Constant(w) => *w == 0.0,
            FrequencySchedule::Piecewise { values, .. } => values.iter().all(|w| *w == 0.0),
        }
    }
}

/// One resonator component and its harmonics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    #[serde(default)]
    pub name: String,
    pub gamma: f64,
    pub chi: f64,
    pub frequency: FrequencySchedule,
    pub kernel: Kernel,
    /// Magnitude factor per harmonic; harmonic `h` (1-based) runs at
    /// `h * omega(t)`. Length is the harmonic multiplicity.
    #[serde(default = "one_harmonic")]
    pub harmonic_scales: Vec<f64>,
}

impl Component {
    pub fn new(name: &str, gamma: f64, chi: f64, omega: f64, kernel: Kernel) -> Self {
        Component {
            name: name.to_string(),
            gamma,
            chi,
            frequency: FrequencySchedule::Constant(omega),
            kernel,
            harmonic_scales: vec![1.0],
        }
    }

    /// A zero-frequency component (Wiener velocity when undamped).
    pub fn bias(name: &str, gamma: f64, chi: f64, kernel: Kernel) -> Self {
        Component::new(name, gamma, chi, 0.0, kernel)
    }

    pub fn with_harmonics(mut self, scales: Vec<f64>) -> Self {
        self.harmonic_scales = scales;
        self
    }

    pub fn with_schedule(mut self, schedule: FrequencySchedule) -> Self {
        self.frequency = schedule;
        self
    }

    pub fn harmonics(&self) -> usize {
        self.harmonic_scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure_nonnegative("gamma", self.gamma)?;
        ensure_nonnegative("chi", self.chi)?;
        self.frequency.validate()?;
        self.kernel.validate()?;
        if self.harmonic_scales.is_empty() {
            return Err(Error::param("harmonics", "must be at least 1"));
        }
        self.harmonic_scales
            .iter()
            .try_for_each(|s| ensure_positive("harmonic_scale", *s))
    }

    pub fn harmonic_kernel(&self, h: usize) -> Kernel {
        self.kernel.scaled(self.harmonic_scales[h])
    }

    /// Mode coefficients for harmonic `h` (0-based) at eigenvalue `lambda`
    /// and fundamental frequency `omega`.
    pub fn coefficients(&self, h: usize, lambda: f64, omega: f64) -> Result<ModeCoefficients> {
        mode_coefficients(self.gamma, self.chi, lambda, (h + 1) as f64 * omega)
    }
}

fn one_harmonic() -> Vec<f64> {
    vec![1.0]
}

fn default_diffuse() -> f64 {
    1.0
}

/// The full model: domain, truncation, components and measurement noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub domain: Domain,
    pub modes: usize,
    pub components: Vec<Component>,
    pub noise_variance: f64,
    /// Prior variance of blocks without a stationary law (`a = 0`).
    #[serde(default = "default_diffuse")]
    pub diffuse_variance: f64,
}

impl ModelSpec {
    pub fn new(domain: Domain, modes: usize, components: Vec<Component>, noise_variance: f64) -> Self {
        ModelSpec {
            domain,
            modes,
            components,
            noise_variance,
            diffuse_variance: default_diffuse(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.modes == 0 {
            return Err(Error::param("modes", "basis size must be at least 1"));
        }
        if self.components.is_empty() {
            return Err(Error::param("components", "model needs at least one component"));
        }
        self.components.iter().try_for_each(Component::validate)?;
        ensure_positive("noise_variance", self.noise_variance)?;
        ensure_positive("diffuse_variance", self.diffuse_variance)
    }

    pub fn basis(&self) -> Result<BasisSet> {
        BasisSet::build(&self.domain, self.modes)
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout::new(self.modes, self.components.iter().map(Component::harmonics))
    }

    pub fn state_dim(&self) -> usize {
        self.layout().state_dim()
    }

    /// Per-block prior covariance at time `t`: stationary when `a > 0`,
    /// `diffuse_variance * I` otherwise.
    pub fn prior_blocks(&self, basis: &BasisSet, t: f64) -> Result<Vec<Matrix2<f64>>> {
        let mut out = Vec::with_capacity(self.layout().blocks());
        for comp in &self.components {
            let omega = comp.frequency.value_at(t);
            for h in 0..comp.harmonics() {
                let q = project_noise(&comp.harmonic_kernel(h), basis)?;
                for (mode, qn) in basis.modes().iter().zip(&q) {
                    let c = comp.coefficients(h, mode.eigenvalue, omega)?;
                    out.push(
                        stationary_covariance(c.a, c.b, *qn)
                            .unwrap_or_else(|| Matrix2::identity() * self.diffuse_variance),
                    );
                }
            }
        }
        Ok(out)
    }
}

/// Maps (component, harmonic, mode) triples onto state indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateLayout {
    modes: usize,
    /// First block index of each component, plus a final end marker.
    component_offsets: Vec<usize>,
    harmonics: Vec<usize>,
}

impl StateLayout {
    pub fn new(modes: usize, harmonics: impl IntoIterator<Item = usize>) -> Self {
        let harmonics: Vec<usize> = harmonics.into_iter().collect();
        let mut component_offsets = vec![0];
        for h in &harmonics {
            let last = *component_offsets.last().unwrap();
            component_offsets.push(last + h * modes);
        }
        StateLayout {
            modes,
            component_offsets,
            harmonics,
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn components(&self) -> usize {
        self.harmonics.len()
    }

    pub fn blocks(&self) -> usize {
        *self.component_offsets.last().unwrap()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.blocks()
    }

    pub fn block_index(&self, component: usize, harmonic: usize, mode: usize) -> usize {
        self.component_offsets[component] + harmonic * self.modes + mode
    }

    /// Block range owned by a component.
    pub fn component_blocks(&self, component: usize) -> std::ops::Range<usize> {
        self.component_offsets[component]..self.component_offsets[component + 1]
    }

    /// Measurement matrix `H = [Phi, 0]` repeated over the selected
    /// components' harmonics (every component when `selection` is `None`).
    pub fn measurement_matrix(&self, phi: &DMatrix<f64>, selection: Option<&[usize]>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(phi.nrows(), self.state_dim());
        for c in 0..self.components() {
            if selection.is_some_and(|s| !s.contains(&c)) {
                continue;
            }
            for blk in self.component_blocks(c) {
                let mode = (blk - self.component_offsets[c]) % self.modes;
                for i in 0..phi.nrows() {
                    h[(i, 2 * blk)] = phi[(i, mode)];
                }
            }
        }
        h
    }
}

/// One time step of the discretized system.
#[derive(Clone, Debug)]
pub struct Step {
    pub time: f64,
    /// `t_k - t_{k-1}`; zero on the first step, where the prior applies.
    pub dt: f64,
    /// Per-block transition and noise; `None` means identity (no prediction).
    pub blocks: Option<Arc<Vec<DiscreteBlock>>>,
    /// Basis values at this step's observation locations (`d_k x N`).
    pub phi: Arc<DMatrix<f64>>,
}

impl Step {
    pub fn observations(&self) -> usize {
        self.phi.nrows()
    }
}

/// Per-step discrete transition, noise and measurement structure.
#[derive(Clone, Debug)]
pub struct DiscreteSystem {
    pub layout: StateLayout,
    pub steps: Vec<Step>,
}

impl DiscreteSystem {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.layout.state_dim()
    }

    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.time).collect()
    }

    /// Dense `H_k` (`d_k x state_dim`).
    pub fn measurement_matrix(&self, k: usize) -> DMatrix<f64> {
        self.layout.measurement_matrix(&self.steps[k].phi, None)
    }

    /// Dense block-diagonal `A_k`.
    pub fn transition_matrix(&self, k: usize) -> DMatrix<f64> {
        self.dense(k, |b| b.transition, Matrix2::identity())
    }

    /// Dense block-diagonal `Q_k`.
    pub fn noise_matrix(&self, k: usize) -> DMatrix<f64> {
        self.dense(k, |b| b.noise, Matrix2::zeros())
    }

    fn dense(&self, k: usize, pick: impl Fn(&DiscreteBlock) -> Matrix2<f64>, default: Matrix2<f64>) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut m = DMatrix::zeros(n, n);
        for blk in 0..self.layout.blocks() {
            let v = self.steps[k]
                .blocks
                .as_ref()
                .map(|b| pick(&b[blk]))
                .unwrap_or(default);
            m.fixed_view_mut::<2, 2>(2 * blk, 2 * blk).copy_from(&v);
        }
        m
    }
}

/// Observation times and the basis evaluated at each step's locations; the
/// part of a system that does not depend on hyperparameters.
#[derive(Clone, Debug)]
pub struct MeasurementPlan {
    pub times: Vec<f64>,
    pub phis: Vec<Arc<DMatrix<f64>>>,
}

impl MeasurementPlan {
    pub fn new(basis: &BasisSet, times: &[f64], locations: &[Vec<Point>]) -> Result<Self> {
        if times.len() != locations.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} times but {} location sets",
                times.len(),
                locations.len()
            )));
        }
        check_times(times)?;
        let mut phis: Vec<Arc<DMatrix<f64>>> = Vec::with_capacity(times.len());
        let mut offset = 0;
        for (k, locs) in locations.iter().enumerate() {
            // identical location sets share one evaluation
            if k > 0 && locs == &locations[k - 1] {
                let prev = phis[k - 1].clone();
                phis.push(prev);
            } else {
                let phi = basis.eval(locs).map_err(|e| match e {
                    Error::OutsideDomain { index } => Error::OutsideDomain {
                        index: offset + index,
                    },
                    other => other,
                })?;
                phis.push(Arc::new(phi));
            }
            offset += locs.len();
        }
        Ok(MeasurementPlan {
            times: times.to_vec(),
            phis,
        })
    }
}

pub(crate) fn check_times(times: &[f64]) -> Result<()> {
    if let Some(i) = times.iter().position(|t| !t.is_finite()) {
        return Err(Error::Data(format!("time {i} is not finite")));
    }
    if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotoneTimes { index: i + 1 });
    }
    Ok(())
}

/// Builds the discrete system for `times` with observations at `locations`.
pub fn assemble_system(
    model: &ModelSpec,
    basis: &BasisSet,
    times: &[f64],
    locations: &[Vec<Point>],
) -> Result<DiscreteSystem> {
    let plan = MeasurementPlan::new(basis, times, locations)?;
    assemble_with_plan(model, basis, &plan)
}

/// Builds transitions for a prepared measurement plan.
pub fn assemble_with_plan(model: &ModelSpec, basis: &BasisSet, plan: &MeasurementPlan) -> Result<DiscreteSystem> {
    model.validate()?;
    if basis.len() != model.modes {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} modes, model expects {}",
            basis.len(),
            model.modes
        )));
    }
    let layout = model.layout();
    let noise: Vec<Vec<f64>> = model
        .components
        .iter()
        .flat_map(|c| (0..c.harmonics()).map(move |h| project_noise(&c.harmonic_kernel(h), basis)))
        .collect::<Result<_>>()?;
    let eigen = basis.eigenvalues();

    let mut steps = Vec::with_capacity(plan.times.len());
    let mut prev_key: Option<(Vec<Vec<(f64, f64)>>, Arc<Vec<DiscreteBlock>>)> = None;
    for (k, (&t, phi)) in plan.times.iter().zip(&plan.phis).enumerate() {
        if k == 0 {
            steps.push(Step {
                time: t,
                dt: 0.0,
                blocks: None,
                phi: phi.clone(),
            });
            continue;
        }
        let t_prev = plan.times[k - 1];
        let segments: Vec<Vec<(f64, f64)>> = model
            .components
            .iter()
            .map(|c| c.frequency.segments(t_prev, t))
            .collect();
        let blocks = match &prev_key {
            Some((key, blocks)) if *key == segments => blocks.clone(),
            _ => {
                let blocks = Arc::new(step_blocks(model, &eigen, &noise, &segments)?);
                prev_key = Some((segments, blocks.clone()));
                blocks
            }
        };
        steps.push(Step {
            time: t,
            dt: t - t_prev,
            blocks: Some(blocks),
            phi: phi.clone(),
        });
    }
    Ok(DiscreteSystem { layout, steps })
}

fn step_blocks(
    model: &ModelSpec,
    eigen: &[f64],
    noise: &[Vec<f64>],
    segments: &[Vec<(f64, f64)>],
) -> Result<Vec<DiscreteBlock>> {
    let mut out = Vec::with_capacity(model.layout().blocks());
    let mut series = 0;
    for (comp, segs) in model.components.iter().zip(segments) {
        for h in 0..comp.harmonics() {
            for (lambda, q) in eigen.iter().zip(&noise[series]) {
                let mut block: Option<DiscreteBlock> = None;
                for &(dur, omega) in segs {
                    let c = comp.coefficients(h, *lambda, omega)?;
                    let seg = discretize(c.a, c.b, *q, dur)?;
                    block = Some(match block {
                        None => seg,
                        Some(prev) => prev.then(&seg),
                    });
                }
                out.push(block.unwrap_or_else(DiscreteBlock::identity));
            }
            series += 1;
        }
    }
    Ok(out)
}

/// Diagnostic space-time spectral density of one component at spatial
/// frequency `nu_x` and temporal frequency `nu_t`, using the schedule's
/// initial frequency and summing over harmonics.
pub fn model_spectral_density(component: &Component, nu_x: f64, nu_t: f64, dim: usize) -> Result<f64> {
    component.validate()?;
    let omega = component.frequency.value_at(f64::NEG_INFINITY);
    let a = component.gamma + component.chi * nu_x * nu_x;
    let mut total = 0.0;
    for h in 0..component.harmonics() {
        let w = (h + 1) as f64 * omega;
        let q = component.harmonic_kernel(h).spectral_density(nu_x.abs(), dim)?;
        let den = (nu_t * nu_t - a * a / 2.0 - w * w).powi(2) + nu_t * nu_t * a * a;
        total += q / den;
    }
    Ok(total)
}
