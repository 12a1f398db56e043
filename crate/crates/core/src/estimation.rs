//! Maximum-likelihood fitting of model hyperparameters.
//!
//! Parameters are optimized on the log scale with limited-memory BFGS or
//! Polak-Ribière conjugate gradients, central finite-difference gradients and
//! a backtracking Armijo line search. Restarts run in parallel and the best
//! one is returned.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::inference::{self, GaussianBelief, ObservationBatch};
use crate::model::{assemble_with_plan, MeasurementPlan, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Gamma(usize),
    Chi(usize),
    Lengthscale(usize),
    Magnitude(usize),
    Nu(usize),
    NoiseVariance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    /// Natural-scale value, always positive.
    pub value: f64,
    pub active: bool,
}

/// Named model parameters with active/frozen flags. Active parameters are
/// exposed to the optimizer as logarithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub params: Vec<Param>,
}

impl ParamVector {
    /// All parameters of `model`. `nu` starts frozen; damping parameters that
    /// are exactly zero are frozen at zero (the log transform excludes it).
    pub fn from_model(model: &ModelSpec) -> Self {
        let mut params = Vec::new();
        let mut push = |name: String, kind, value: f64, active: bool| {
            params.push(Param {
                name,
                kind,
                value,
                active: active && value > 0.0,
            })
        };
        for (j, c) in model.components.iter().enumerate() {
            let label = component_label(j, &c.name);
            push(format!("{label}.gamma"), ParamKind::Gamma(j), c.gamma, true);
            push(format!("{label}.chi"), ParamKind::Chi(j), c.chi, true);
            push(
                format!("{label}.lengthscale"),
                ParamKind::Lengthscale(j),
                c.kernel.lengthscale(),
                true,
            );
            push(
                format!("{label}.magnitude"),
                ParamKind::Magnitude(j),
                c.kernel.magnitude(),
                true,
            );
            if let Some(nu) = c.kernel.nu() {
                push(format!("{label}.nu"), ParamKind::Nu(j), nu, false);
            }
        }
        push(
            "noise_variance".into(),
            ParamKind::NoiseVariance,
            model.noise_variance,
            true,
        );
        ParamVector { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.value).collect()
    }

    pub fn active_count(&self) -> usize {
        self.params.iter().filter(|p| p.active).count()
    }

    pub fn active_names(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| p.active)
            .map(|p| p.name.as_str())
            .collect()
    }

    fn find(&self, name: &str) -> Result<usize> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::param(name, "no such parameter"))
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(self.params[self.find(name)?].value)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self.find(name)?;
        if self.params[i].active && !(value > 0.0 && value.is_finite()) {
            return Err(Error::param(name, format!("active parameters must be > 0, got {value}")));
        }
        self.params[i].value = value;
        Ok(())
    }

    pub fn freeze(&mut self, name: &str) -> Result<()> {
        let i = self.find(name)?;
        self.params[i].active = false;
        Ok(())
    }

    /// Sets a parameter's value and freezes it.
    pub fn freeze_at(&mut self, name: &str, value: f64) -> Result<()> {
        self.freeze(name)?;
        self.set(name, value)
    }

    pub fn activate(&mut self, name: &str) -> Result<()> {
        let i = self.find(name)?;
        if !(self.params[i].value > 0.0) {
            return Err(Error::param(name, "cannot activate a parameter at zero"));
        }
        self.params[i].active = true;
        Ok(())
    }

    /// Log-values of the active parameters.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        self.params
            .iter()
            .filter(|p| p.active)
            .map(|p| p.value.ln())
            .collect()
    }

    pub fn set_unconstrained(&mut self, z: &[f64]) -> Result<()> {
        if z.len() != self.active_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} unconstrained values for {} active parameters",
                z.len(),
                self.active_count()
            )));
        }
        for (p, v) in self.params.iter_mut().filter(|p| p.active).zip(z) {
            p.value = v.exp();
        }
        Ok(())
    }

    /// `template` with these parameter values substituted.
    pub fn apply(&self, template: &ModelSpec) -> Result<ModelSpec> {
        let mut m = template.clone();
        for p in &self.params {
            let comp = |j: usize| {
                if j < template.components.len() {
                    Ok(j)
                } else {
                    Err(Error::param(&p.name, "component index out of range"))
                }
            };
            match p.kind {
                ParamKind::Gamma(j) => m.components[comp(j)?].gamma = p.value,
                ParamKind::Chi(j) => m.components[comp(j)?].chi = p.value,
                ParamKind::Lengthscale(j) => m.components[comp(j)?].kernel.set_lengthscale(p.value),
                ParamKind::Magnitude(j) => m.components[comp(j)?].kernel.set_magnitude(p.value),
                ParamKind::Nu(j) => m.components[comp(j)?].kernel.set_nu(p.value),
                ParamKind::NoiseVariance => m.noise_variance = p.value,
            }
        }
        Ok(m)
    }
}

fn component_label(j: usize, name: &str) -> String {
    if name.is_empty() {
        format!("c{j}")
    } else {
        name.to_string()
    }
}

/// Negative log-likelihood of a data set as a function of the active
/// log-parameters. The basis and measurement matrices are built once.
pub struct Objective<'a> {
    template: &'a ModelSpec,
    data: &'a ObservationBatch,
    params: ParamVector,
    basis: BasisSet,
    plan: MeasurementPlan,
}

impl<'a> Objective<'a> {
    pub fn new(template: &'a ModelSpec, params: &ParamVector, data: &'a ObservationBatch) -> Result<Self> {
        template.validate()?;
        data.validate()?;
        let basis = template.basis()?;
        let plan = MeasurementPlan::new(&basis, &data.times(), &data.locations())?;
        Ok(Objective {
            template,
            data,
            params: params.clone(),
            basis,
            plan,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.active_count()
    }

    /// `-log p(y | theta)` for a full parameter vector.
    pub fn eval_params(&self, theta: &ParamVector) -> Result<f64> {
        let model = theta.apply(self.template)?;
        model.validate()?;
        let system = assemble_with_plan(&model, &self.basis, &self.plan)?;
        let t0 = self.data.steps.first().map_or(0.0, |s| s.time);
        let prior = GaussianBelief::from_blocks(&model.prior_blocks(&self.basis, t0)?);
        let ll = inference::log_likelihood(&system, self.data, &prior, model.noise_variance)?;
        Ok(-ll)
    }

    /// Objective at active log-parameters `z`; numerical failures give
    /// `+inf` so that line searches back off.
    pub fn value(&self, z: &[f64]) -> f64 {
        self.try_value(z).unwrap_or(f64::INFINITY)
    }

    pub fn try_value(&self, z: &[f64]) -> Result<f64> {
        let mut theta = self.params.clone();
        theta.set_unconstrained(z)?;
        let v = self.eval_params(&theta)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("negative log-likelihood".into()))
        }
    }
}

/// Negative log-likelihood of `data` under `template` with `theta` substituted.
pub fn objective(theta: &ParamVector, template: &ModelSpec, data: &ObservationBatch) -> Result<f64> {
    Objective::new(template, theta, data)?.eval_params(theta)
}

/// Central-difference gradient of `f` at `z`; falls back to a one-sided
/// difference where one side is not finite.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, z: &[f64], h: f64) -> Vec<f64> {
    let f0 = f(z);
    let mut x = z.to_vec();
    (0..z.len())
        .map(|i| {
            x[i] = z[i] + h;
            let fp = f(&x);
            x[i] = z[i] - h;
            let fm = f(&x);
            x[i] = z[i];
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - f0) / h,
                (false, true) => (f0 - fm) / h,
                (false, false) => f64::NAN,
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientCheck {
    pub step: f64,
    /// Central differences with step `h`, `h/2` and `h/4`.
    pub gradient: Vec<f64>,
    pub gradient_half: Vec<f64>,
    pub gradient_quarter: Vec<f64>,
    /// Richardson-extrapolated gradient from the `h` and `h/2` estimates.
    pub extrapolated: Vec<f64>,
    /// `|g_h - g_{h/2}| / |g_{h/2} - g_{h/4}|`; about 4 for a smooth
    /// objective until roundoff dominates.
    pub ratios: Vec<f64>,
}

pub fn gradient_check(f: &dyn Fn(&[f64]) -> f64, z: &[f64], h: f64) -> GradientCheck {
    let g1 = fd_gradient(f, z, h);
    let g2 = fd_gradient(f, z, 0.5 * h);
    let g4 = fd_gradient(f, z, 0.25 * h);
    let extrapolated = g1.iter().zip(&g2).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
    let ratios = (0..z.len())
        .map(|i| (g1[i] - g2[i]).abs() / (g2[i] - g4[i]).abs())
        .collect();
    GradientCheck {
        step: h,
        gradient: g1,
        gradient_half: g2,
        gradient_quarter: g4,
        extrapolated,
        ratios,
    }
}

/// Gradient check of the model objective in log-parameter space.
pub fn gradient_check_model(
    theta: &ParamVector,
    template: &ModelSpec,
    data: &ObservationBatch,
    h: f64,
) -> Result<GradientCheck> {
    let obj = Objective::new(template, theta, data)?;
    let z = theta.to_unconstrained();
    Ok(gradient_check(&|x| obj.value(x), &z, h))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Stop when every gradient entry (log-parameter space) is below this.
    pub gradient_tolerance: f64,
    /// Stop after two iterations whose decrease is below
    /// `objective_tolerance * (1 + |f|)`.
    pub objective_tolerance: f64,
    pub fd_step: f64,
    /// Largest log-space move per line-search step.
    pub max_step: f64,
    /// Multiplicative range of the log-uniform restart draws around each
    /// parameter's data-derived scale.
    pub init_range: (f64, f64),
    /// Start the first restart from the template values instead of a draw.
    pub start_from_template: bool,
    pub method: Method,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 10,
            seed: 0,
            max_iterations: 100,
            gradient_tolerance: 1e-2,
            objective_tolerance: 1e-9,
            fd_step: 1e-4,
            max_step: 2.0,
            init_range: (1e-2, 1e2),
            start_from_template: false,
            method: Method::Lbfgs,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RestartTrace {
    pub restart: usize,
    pub initial: Vec<f64>,
    /// Objective after each accepted step, starting with the initial value.
    pub objective: Vec<f64>,
    pub final_values: Vec<f64>,
    pub final_objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: ParamVector,
    pub model: ModelSpec,
    pub log_likelihood: f64,
    pub best_restart: usize,
    pub traces: Vec<RestartTrace>,
}

/// Scale around which restart values for a parameter are drawn.
pub fn init_scale(param: &Param, template: &ModelSpec, data: &ObservationBatch) -> f64 {
    let values: Vec<f64> = data.steps.iter().flat_map(|s| s.values.iter().copied()).collect();
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let span = match (data.steps.first(), data.steps.last()) {
        (Some(a), Some(b)) if b.time > a.time => b.time - a.time,
        _ => 1.0,
    };
    let size = template.domain.size();
    match param.kind {
        ParamKind::Lengthscale(_) => size,
        ParamKind::Magnitude(_) => sd,
        ParamKind::NoiseVariance => (0.1 * sd).powi(2),
        ParamKind::Gamma(_) => 1.0 / span,
        // spread the spatial damping over the retained spectrum
        ParamKind::Chi(_) => {
            let basis = template.basis().ok();
            let lam = basis
                .map(|b| {
                    let e = b.eigenvalues();
                    e[e.len() / 2]
                })
                .filter(|l| *l > 0.0)
                .unwrap_or(1.0 / (size * size));
            1.0 / (span * lam)
        }
        ParamKind::Nu(_) => param.value,
    }
}

/// Fits the active parameters of `start` by maximizing the marginal
/// likelihood from `options.restarts` initial points.
pub fn fit(
    data: &ObservationBatch,
    template: &ModelSpec,
    start: &ParamVector,
    options: &FitOptions,
) -> Result<FitResult> {
    if options.restarts == 0 {
        return Err(Error::param("restarts", "must be at least 1"));
    }
    let obj = Objective::new(template, start, data)?;
    let active: Vec<&Param> = start.params.iter().filter(|p| p.active).collect();
    let scales: Vec<f64> = active.iter().map(|p| init_scale(p, template, data)).collect();
    let (lo, hi) = options.init_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::param("init_range", "need 0 < low <= high"));
    }

    let run_restart = |r: usize| -> Result<RestartTrace> {
        let z0: Vec<f64> = if r == 0 && options.start_from_template {
            start.to_unconstrained()
        } else {
            let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
            rng.set_stream(r as u64 + 1);
            scales
                .iter()
                .map(|s| s.ln() + rng.random_range(lo.ln()..=hi.ln()))
                .collect()
        };
        let run = minimize(&|z| obj.value(z), &z0, options);
        let mut theta = start.clone();
        let natural = |z: &[f64]| z.iter().map(|v| v.exp()).collect::<Vec<_>>();
        theta.set_unconstrained(&run.z)?;
        let error = if run.objective.first().is_some_and(|f| f.is_finite()) {
            None
        } else {
            Some(match obj.try_value(&z0) {
                Err(e) => e.to_string(),
                Ok(_) => "objective not finite at the initial point".into(),
            })
        };
        Ok(RestartTrace {
            restart: r,
            initial: natural(&z0),
            final_values: theta.values(),
            final_objective: run.f,
            objective: run.objective,
            gradient_norm: run.gradient_norm,
            iterations: run.iterations,
            evaluations: run.evaluations,
            converged: run.converged,
            error,
        })
    };

    // restarts are independent; workers pull indices so the result does not
    // depend on scheduling
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(options.restarts);
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<RestartTrace>>> = (0..options.restarts).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let r = next.fetch_add(1, Ordering::Relaxed);
                        if r >= options.restarts {
                            break done;
                        }
                        done.push((r, run_restart(r)));
                    }
                })
            })
            .collect();
        for h in handles {
            for (r, trace) in h.join().expect("restart worker panicked") {
                slots[r] = Some(trace);
            }
        }
    });
    let traces = slots
        .into_iter()
        .map(|t| t.expect("every restart index is claimed once"))
        .collect::<Result<Vec<_>>>()?;

    let best = traces
        .iter()
        .filter(|t| t.error.is_none() && t.final_objective.is_finite())
        .min_by(|a, b| a.final_objective.total_cmp(&b.final_objective))
        .map(|t| t.restart);
    let Some(best) = best else {
        let last = traces
            .last()
            .and_then(|t| t.error.clone())
            .unwrap_or_else(|| "no finite objective".into());
        return Err(Error::FitFailed {
            restarts: options.restarts,
            last,
        });
    };
    let mut params = start.clone();
    for (p, v) in params.params.iter_mut().zip(&traces[best].final_values) {
        p.value = *v;
    }
    let model = params.apply(template)?;
    Ok(FitResult {
        log_likelihood: -traces[best].final_objective,
        params,
        model,
        best_restart: best,
        traces,
    })
}

/// Result of one local minimization.
#[derive(Clone, Debug)]
pub struct Minimum {
    pub z: Vec<f64>,
    pub f: f64,
    pub objective: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Search-direction rule of the local optimizer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Polak-Ribière conjugate gradients with automatic restarts.
    ConjugateGradient,
    /// Limited-memory BFGS with a short history.
    #[default]
    Lbfgs,
}

enum Directions {
    Cg { prev: Option<Vec<f64>>, since_reset: usize },
    Lbfgs { history: Vec<(Vec<f64>, Vec<f64>, f64)> },
}

const LBFGS_MEMORY: usize = 6;

impl Directions {
    fn new(method: Method) -> Self {
        match method {
            Method::ConjugateGradient => Directions::Cg {
                prev: None,
                since_reset: 0,
            },
            Method::Lbfgs => Directions::Lbfgs { history: Vec::new() },
        }
    }

    fn reset(&mut self) {
        match self {
            Directions::Cg { prev, since_reset } => {
                *prev = None;
                *since_reset = 0;
            }
            Directions::Lbfgs { history } => history.clear(),
        }
    }

    fn is_fresh(&self) -> bool {
        match self {
            Directions::Cg { prev, .. } => prev.is_none(),
            Directions::Lbfgs { history } => history.is_empty(),
        }
    }

    /// Direction at gradient `g`; `g_old` is the gradient at the previous
    /// iterate (CG only).
    fn direction(&mut self, g: &[f64], g_old: Option<&[f64]>) -> Vec<f64> {
        let n = g.len();
        match self {
            Directions::Cg { prev, since_reset } => {
                let d: Vec<f64> = match (prev.as_ref(), g_old) {
                    (Some(d_prev), Some(g_old)) if *since_reset < 2 * n.max(2) => {
                        let num: f64 = g.iter().zip(g_old).map(|(a, b)| a * (a - b)).sum();
                        let beta = (num / dot(g_old, g_old)).max(0.0);
                        g.iter().zip(d_prev).map(|(gi, di)| -gi + beta * di).collect()
                    }
                    _ => {
                        *since_reset = 0;
                        g.iter().map(|v| -v).collect()
                    }
                };
                *since_reset += 1;
                *prev = Some(d.clone());
                d
            }
            Directions::Lbfgs { history } => {
                let mut q = g.to_vec();
                let mut alphas = Vec::with_capacity(history.len());
                for (s, y, rho) in history.iter().rev() {
                    let a = rho * dot(s, &q);
                    q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
                    alphas.push(a);
                }
                if let Some((s, y, _)) = history.last() {
                    let scale = dot(s, y) / dot(y, y);
                    q.iter_mut().for_each(|v| *v *= scale);
                }
                for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
                    let b = rho * dot(y, &q);
                    q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
                }
                q.iter_mut().for_each(|v| *v = -*v);
                q
            }
        }
    }

    fn observe(&mut self, s: Vec<f64>, y: Vec<f64>) {
        if let Directions::Lbfgs { history } = self {
            let sy = dot(&s, &y);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                if history.len() == LBFGS_MEMORY {
                    history.remove(0);
                }
                history.push((s, y, 1.0 / sy));
            }
        }
    }

    /// Replaces the current CG direction (after a steepest-descent fallback).
    fn set_current(&mut self, d: &[f64]) {
        if let Directions::Cg { prev, .. } = self {
            *prev = Some(d.to_vec());
        }
    }
}

/// Gradient-based local minimization with finite-difference gradients.
/// Accepted steps strictly decrease `f`, so the recorded trace is monotone.
pub fn minimize(f: &dyn Fn(&[f64]) -> f64, z0: &[f64], options: &FitOptions) -> Minimum {
    let evals = std::cell::Cell::new(0usize);
    let fc = |z: &[f64]| {
        evals.set(evals.get() + 1);
        f(z)
    };
    let n = z0.len();
    let mut z = z0.to_vec();
    let mut fz = fc(&z);
    let mut out = Minimum {
        z: z.clone(),
        f: fz,
        objective: vec![fz],
        gradient_norm: f64::NAN,
        iterations: 0,
        evaluations: 0,
        converged: false,
    };
    if !fz.is_finite() {
        out.evaluations = evals.get();
        return out;
    }
    if n == 0 {
        out.converged = true;
        out.gradient_norm = 0.0;
        out.evaluations = evals.get();
        return out;
    }
    let mut dirs = Directions::new(options.method);
    let mut g = fd_gradient(&fc, &z, options.fd_step);
    let mut g_old: Option<Vec<f64>> = None;
    let mut alpha: f64 = 1.0;
    let mut small = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        if inf_norm(&g) <= options.gradient_tolerance {
            converged = true;
            break;
        }
        let mut d = dirs.direction(&g, g_old.as_deref());
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            dirs.reset();
            d = g.iter().map(|v| -v).collect();
            dirs.set_current(&d);
            slope = -dot(&g, &g);
        }
        let dmax = inf_norm(&d);
        let alpha0 = match options.method {
            Method::Lbfgs if !dirs.is_fresh() => 1.0,
            _ => alpha,
        }
        .min(options.max_step / dmax);
        let expand = dirs.is_fresh() || options.method == Method::ConjugateGradient;
        let Some((a, z_new, f_new)) =
            line_search(&fc, &z, fz, &d, slope, alpha0, options.max_step / dmax, expand)
        else {
            if dirs.is_fresh() {
                // steepest descent made no progress either
                converged = inf_norm(&g) <= 10.0 * options.gradient_tolerance;
                break;
            }
            dirs.reset();
            g_old = None;
            continue;
        };
        iterations += 1;
        let decrease = fz - f_new;
        let step: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
        z = z_new;
        fz = f_new;
        out.objective.push(fz);
        let g_new = fd_gradient(&fc, &z, options.fd_step);
        if decrease <= options.objective_tolerance * (1.0 + fz.abs()) {
            small += 1;
            if small >= 2 {
                converged = true;
                g = g_new;
                break;
            }
        } else {
            small = 0;
        }
        dirs.observe(step, g_new.iter().zip(&g).map(|(a, b)| a - b).collect());
        // carry the step length over, rescaled by the change in slope
        alpha = (a * slope / (-dot(&g_new, &g_new)).min(-f64::MIN_POSITIVE)).clamp(1e-8, 1e8);
        g_old = Some(std::mem::replace(&mut g, g_new));
    }
    out.z = z;
    out.f = fz;
    out.gradient_norm = inf_norm(&g);
    out.iterations = iterations;
    out.evaluations = evals.get();
    out.converged = converged;
    out
}

/// Backtracking Armijo search with a short expansion phase. Returns the
/// accepted step and point, or `None` when no decrease was found.
fn line_search(
    f: &dyn Fn(&[f64]) -> f64,
    z: &[f64],
    fz: f64,
    d: &[f64],
    slope: f64,
    alpha0: f64,
    alpha_max: f64,
    expand: bool,
) -> Option<(f64, Vec<f64>, f64)> {
    const C1: f64 = 1e-4;
    let at = |a: f64| -> (Vec<f64>, f64) {
        let x: Vec<f64> = z.iter().zip(d).map(|(zi, di)| zi + a * di).collect();
        let v = f(&x);
        (x, v)
    };
    let armijo = |a: f64, v: f64| v.is_finite() && v <= fz + C1 * a * slope && v < fz;
    let mut a = alpha0;
    let (mut x, mut v) = at(a);
    if armijo(a, v) {
        // expand while it keeps paying off
        for _ in 0..if expand { 6 } else { 0 } {
            let a2 = (2.0 * a).min(alpha_max);
            if a2 <= a {
                break;
            }
            let (x2, v2) = at(a2);
            if armijo(a2, v2) && v2 < v {
                a = a2;
                x = x2;
                v = v2;
            } else {
                break;
            }
        }
        return Some((a, x, v));
    }
    for _ in 0..40 {
        a = if v.is_finite() {
            // minimizer of the quadratic through f(0), f'(0), f(a), safeguarded
            let q = -slope * a * a / (2.0 * (v - fz - slope * a));
            q.clamp(0.1 * a, 0.5 * a)
        } else {
            0.25 * a
        };
        (x, v) = at(a);
        if armijo(a, v) {
            return Some((a, x, v));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(z: &[f64]) -> f64 {
        let x = z[0] - 1.0;
        let y = z[1] + 2.0;
        3.0 * x * x + x * y + 2.0 * y * y + 5.0
    }

    #[test]
    fn fd_is_exact_on_quadratics() {
        let g = fd_gradient(&quad, &[0.3, 0.7], 1e-3);
        let (x, y) = (0.3 - 1.0, 0.7 + 2.0);
        assert!((g[0] - (6.0 * x + y)).abs() < 1e-9);
        assert!((g[1] - (x + 4.0 * y)).abs() < 1e-9);
    }

    #[test]
    fn richardson_ratio_near_four() {
        let f = |z: &[f64]| z[0].sin() * z[1].exp();
        let rep = gradient_check(&f, &[0.4, 0.2], 1e-2);
        for r in &rep.ratios {
            assert!((r - 4.0).abs() < 0.1, "{r}");
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let m = minimize(&quad, &[5.0, 5.0], &FitOptions::default());
        assert!(m.converged);
        assert!((m.z[0] - 1.0).abs() < 1e-2 && (m.z[1] + 2.0).abs() < 1e-2, "{:?}", m.z);
        assert!(m.objective.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn stationary_start_is_kept() {
        let m = minimize(&quad, &[1.0, -2.0], &FitOptions::default());
        assert_eq!(m.z, vec![1.0, -2.0]);
        assert_eq!(m.iterations, 0);
    }

    #[test]
    fn rosenbrock_progress() {
        let f = |z: &[f64]| (1.0 - z[0]).powi(2) + 100.0 * (z[1] - z[0] * z[0]).powi(2);
        let opts = FitOptions {
            max_iterations: 2000,
            gradient_tolerance: 1e-6,
            ..Default::default()
        };
        let m = minimize(&f, &[-1.2, 1.0], &opts);
        assert!(m.f < 1e-6, "{}", m.f);
    }
}
