//! File-driven workflows: simulate, fit, smooth, predict, spectrum and
//! basis checks, configured by a TOML document.
//!
//! Every command writes `manifest.toml` into its output directory. The
//! manifest is the fully resolved configuration and can be passed back as
//! `--config` to reproduce the run.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::basis::{fd_eigen_residuals, orthonormality_error, BasisSet, Domain, Point};
use crate::error::{Error, Result};
use crate::estimation::{self, FitOptions, Method, ParamVector};
use crate::inference::{self, ComponentSelector, FieldSummary, GaussianBelief, ObservationBatch};
use crate::io::{self, GridTable, NdjsonWriter};
use crate::model::{assemble_system, model_spectral_density, ModelSpec};
use crate::simulator::{self, SimulationPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_IO: i32 = 5;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidParameter { .. } | Error::Unsupported(_) => EXIT_CONFIG,
        Error::Data(_)
        | Error::Csv(_)
        | Error::OutsideDomain { .. }
        | Error::NonMonotoneTimes { .. }
        | Error::DimensionMismatch(_) => EXIT_DATA,
        Error::NonFinite(_)
        | Error::SingularInnovation { .. }
        | Error::SingularPrediction { .. }
        | Error::FitFailed { .. } => EXIT_NUMERICAL,
        Error::Io(_) | Error::Json(_) => EXIT_IO,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Smooth,
    Predict,
    Spectrum,
    BasisCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Smooth => "smooth",
            Command::Predict => "predict",
            Command::Spectrum => "spectrum",
            Command::BasisCheck => "basis-check",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Number of random observation times (ignored when `times` is set).
    pub n_times: usize,
    /// Random locations per time (ignored when `sites` is set).
    pub per_step: usize,
    pub time_range: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    /// Fixed observation sites, in the CSV coordinate convention.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<Vec<f64>>>,
    /// Extra times at which the true field is recorded but not observed.
    pub truth_times: Vec<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_times: 100,
            per_step: 25,
            time_range: (0.0, 1.0),
            times: None,
            sites: None,
            truth_times: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub restarts: usize,
    pub method: Method,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub objective_tolerance: f64,
    pub fd_step: f64,
    pub max_step: f64,
    pub init_range: (f64, f64),
    pub start_from_template: bool,
    /// Parameter names to hold fixed at their template values.
    pub freeze: Vec<String>,
    /// Parameter names to optimize that are frozen by default (e.g. `nu`).
    pub activate: Vec<String>,
}

impl Default for FitConfig {
    fn default() -> Self {
        let o = FitOptions::default();
        FitConfig {
            restarts: o.restarts,
            method: o.method,
            max_iterations: o.max_iterations,
            gradient_tolerance: o.gradient_tolerance,
            objective_tolerance: o.objective_tolerance,
            fd_step: o.fd_step,
            max_step: o.max_step,
            init_range: o.init_range,
            start_from_template: o.start_from_template,
            freeze: Vec::new(),
            activate: Vec::new(),
        }
    }
}

impl FitConfig {
    pub fn options(&self, seed: u64) -> FitOptions {
        FitOptions {
            restarts: self.restarts,
            seed,
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            objective_tolerance: self.objective_tolerance,
            fd_step: self.fd_step,
            max_step: self.max_step,
            init_range: self.init_range,
            start_from_template: self.start_from_template,
            method: self.method,
        }
    }

    pub fn params(&self, model: &ModelSpec) -> Result<ParamVector> {
        let mut p = ParamVector::from_model(model);
        for name in &self.freeze {
            p.freeze(name).map_err(|_| Error::config("fit.freeze", format!("unknown parameter `{name}`")))?;
        }
        for name in &self.activate {
            p.activate(name)
                .map_err(|e| Error::config("fit.activate", format!("`{name}`: {e}")))?;
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Largest spatial frequency; defaults to the last mode's wavenumber.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_x_max: Option<f64>,
    /// Largest temporal frequency; defaults to twice the highest harmonic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_t_max: Option<f64>,
    pub nu_x_points: usize,
    pub nu_t_points: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            nu_x_max: None,
            nu_t_max: None,
            nu_x_points: 33,
            nu_t_points: 401,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Evaluation grid resolution (points per axis).
    pub grid: usize,
    /// Observation-free times added to smoothing and prediction runs.
    pub prediction_times: Vec<f64>,
    /// Component names to report; empty means all.
    pub components: Vec<String>,
    pub amplitude_map: bool,
    pub spectrum: SpectrumConfig,
    /// Resolution of the quadrature used by `basis-check`.
    pub quadrature: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            grid: 101,
            prediction_times: Vec::new(),
            components: Vec::new(),
            amplitude_map: false,
            spectrum: SpectrumConfig::default(),
            quadrature: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Observation CSV for fit, smooth and predict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub model: ModelSpec,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Command-line values that take precedence over the config document.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub grid: Option<usize>,
    pub components: Option<Vec<String>>,
    pub data: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(model: ModelSpec) -> Self {
        RunConfig {
            seed: 0,
            data: None,
            model,
            simulation: SimulationConfig::default(),
            fit: FitConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string().trim()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::config(key, e.into_inner().message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.restarts {
            self.fit.restarts = r;
        }
        if let Some(g) = o.grid {
            self.output.grid = g;
        }
        if let Some(c) = &o.components {
            self.output.components = c.clone();
        }
        if let Some(d) = &o.data {
            self.data = Some(d.clone());
        }
    }

    /// Checks the document, reporting failures against their key path.
    pub fn validate(&self) -> Result<()> {
        let wrap = |key: String| move |e: Error| Error::config(key, e.to_string());
        self.model.domain.validate().map_err(wrap("model.domain".into()))?;
        if self.model.modes == 0 {
            return Err(Error::config("model.modes", "must be at least 1"));
        }
        if self.model.components.is_empty() {
            return Err(Error::config("model.components", "at least one component is required"));
        }
        for (j, c) in self.model.components.iter().enumerate() {
            c.validate().map_err(wrap(format!("model.components[{j}]")))?;
        }
        // noiseless data can be simulated but not filtered; `execute` enforces
        // a positive variance for the commands that need it
        if self.model.noise_variance == 0.0 {
            let mut m = self.model.clone();
            m.noise_variance = 1.0;
            m.validate()
        } else {
            self.model.validate()
        }
        .map_err(wrap("model".into()))?;
        if self.output.grid < 2 {
            return Err(Error::config("output.grid", "must be at least 2"));
        }
        if self.fit.restarts == 0 {
            return Err(Error::config("fit.restarts", "must be at least 1"));
        }
        let names = component_names(&self.model);
        for c in &self.output.components {
            if c != "all" && !names.contains(c) {
                return Err(Error::config("output.components", format!("unknown component `{c}`")));
            }
        }
        Ok(())
    }

    fn selector(&self) -> ComponentSelector {
        let names = component_names(&self.model);
        if self.output.components.is_empty() || self.output.components.iter().any(|c| c == "all") {
            ComponentSelector::All
        } else {
            ComponentSelector::Only(
                self.output
                    .components
                    .iter()
                    .filter_map(|c| names.iter().position(|n| n == c))
                    .collect(),
            )
        }
    }

    fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::config("data", "an observation file is required (--data)"))
    }
}

/// Display names of the components (`c{j}` for unnamed ones).
pub fn component_names(model: &ModelSpec) -> Vec<String> {
    model
        .components
        .iter()
        .enumerate()
        .map(|(j, c)| if c.name.is_empty() { format!("c{j}") } else { c.name.clone() })
        .collect()
}

/// Regular plotting grid over a domain with `n` points per axis.
pub fn evaluation_grid(domain: &Domain, n: usize) -> Vec<Point> {
    let lin = |a: f64, b: f64| (0..n).map(move |i| a + (b - a) * i as f64 / (n - 1) as f64);
    match *domain {
        Domain::Interval { half_length } => lin(-half_length, half_length).map(Point::on_line).collect(),
        Domain::Rectangle {
            half_length_x,
            half_length_y,
        } => lin(-half_length_y, half_length_y)
            .flat_map(|y| lin(-half_length_x, half_length_x).map(move |x| Point::new(x, y)))
            .collect(),
        Domain::Disk { radius } => lin(-radius, radius)
            .flat_map(|y| lin(-radius, radius).map(move |x| Point::new(x, y)))
            .filter(|p| p.x.hypot(p.y) <= radius)
            .collect(),
        Domain::Sphere { .. } => (0..n)
            .flat_map(|i| {
                let theta = PI * (i as f64 + 0.5) / n as f64;
                (0..2 * n).map(move |j| Point::angles(theta, PI * j as f64 / n as f64))
            })
            .collect(),
    }
}

/// Summary of a completed command.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    /// Non-success exit status that is not an error (fit without any
    /// converged restart).
    pub status: i32,
    pub message: String,
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Outputs<'_> {
    fn create(&mut self, name: &str) -> Result<std::io::BufWriter<fs::File>> {
        let p = self.dir.join(name);
        let f = io::create_file(&p)?;
        self.files.push(p);
        Ok(f)
    }

    fn write_str(&mut self, name: &str, text: &str) -> Result<()> {
        let mut f = self.create(name)?;
        f.write_all(text.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

/// Runs `command` with a resolved configuration, writing into `out`.
pub fn execute(command: Command, cfg: &RunConfig, out: &Path, log: &mut dyn Write) -> Result<Report> {
    cfg.validate()?;
    if matches!(command, Command::Fit | Command::Smooth | Command::Predict) && cfg.model.noise_variance <= 0.0 {
        return Err(Error::config(
            "model.noise_variance",
            format!("must be > 0 for {}", command.name()),
        ));
    }
    fs::create_dir_all(out)?;
    let mut outputs = Outputs {
        dir: out,
        files: Vec::new(),
    };
    let mut manifest = format!("# resonator {}\n", command.name());
    manifest.push_str(&cfg.to_toml()?);
    outputs.write_str("manifest.toml", &manifest)?;
    let mut report = match command {
        Command::Simulate => cmd_simulate(cfg, &mut outputs, log)?,
        Command::Fit => cmd_fit(cfg, &mut outputs, log)?,
        Command::Smooth => cmd_posterior(cfg, &mut outputs, true, log)?,
        Command::Predict => cmd_posterior(cfg, &mut outputs, false, log)?,
        Command::Spectrum => cmd_spectrum(cfg, &mut outputs)?,
        Command::BasisCheck => cmd_basis_check(cfg, &mut outputs)?,
    };
    if matches!(command, Command::Simulate | Command::Smooth | Command::Predict) {
        outputs.write_str("plot.py", PLOT_SCRIPT)?;
    }
    report.files = outputs.files;
    Ok(report)
}

pub fn simulation_plan(cfg: &RunConfig) -> Result<SimulationPlan> {
    let s = &cfg.simulation;
    let sites = s
        .sites
        .as_ref()
        .map(|v| {
            v.iter()
                .enumerate()
                .map(|(i, c)| {
                    let p = io::point_from_coords(&cfg.model.domain, c)
                        .map_err(|e| Error::config(format!("simulation.sites[{i}]"), e.to_string()))?;
                    if cfg.model.domain.contains(p) {
                        Ok(p)
                    } else {
                        Err(Error::config(format!("simulation.sites[{i}]"), "outside the domain"))
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let plan = SimulationPlan::design(
        cfg.model.clone(),
        s.times.clone(),
        sites,
        s.n_times,
        s.per_step,
        s.time_range,
        cfg.seed,
    )
    .map_err(|e| Error::config("simulation", e.to_string()))?;
    plan.with_truth_times(&s.truth_times)
        .map_err(|e| Error::config("simulation.truth_times", e.to_string()))
}

fn cmd_simulate(cfg: &RunConfig, out: &mut Outputs, log: &mut dyn Write) -> Result<Report> {
    let plan = simulation_plan(cfg)?;
    let traj = simulator::sample_trajectory(&plan)?;
    let data = simulator::sample_observations(&traj, &plan)?;
    let domain = &cfg.model.domain;
    io::write_observations(out.create("observations.csv")?, domain, &data)?;

    let grid = evaluation_grid(domain, cfg.output.grid);
    let names = component_names(&cfg.model);
    let mut columns = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let f = simulator::field_on_points(&cfg.model, &traj, &grid, Some(&[j]))?;
        columns.push((name.clone(), row_major(&f)));
    }
    let total = simulator::field_on_points(&cfg.model, &traj, &grid, None)?;
    columns.push(("total".into(), row_major(&total)));
    GridTable {
        domain,
        times: &traj.times,
        points: &grid,
        columns,
    }
    .write(out.create("truth.csv")?)?;
    let n = data.total_observations();
    writeln!(log, "simulated {n} observations at {} times", data.steps.len())?;
    Ok(Report {
        message: format!("{n} observations"),
        ..Default::default()
    })
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn named(p: &ParamVector, values: &[f64]) -> BTreeMap<String, f64> {
    p.names().iter().map(|n| n.to_string()).zip(values.iter().copied()).collect()
}

fn cmd_fit(cfg: &RunConfig, out: &mut Outputs, log: &mut dyn Write) -> Result<Report> {
    let data = io::read_observations_file(cfg.data_path()?, &cfg.model.domain)?;
    let params = cfg.fit.params(&cfg.model)?;
    let mut ndjson = NdjsonWriter::new(out.create("fit.ndjson")?);

    if params.active_count() == 0 {
        let nll = estimation::objective(&params, &cfg.model, &data)?;
        ndjson.write(&json!({
            "record": "evaluation",
            "params": named(&params, &params.values()),
            "log_likelihood": -nll,
        }))?;
        ndjson.into_inner().flush()?;
        writeln!(log, "all parameters frozen; log-likelihood {:.6}", -nll)?;
        return Ok(Report {
            message: format!("log-likelihood {}", -nll),
            ..Default::default()
        });
    }

    let options = cfg.fit.options(cfg.seed);
    let result = estimation::fit(&data, &cfg.model, &params, &options);
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            ndjson.write(&json!({"record": "failure", "error": e.to_string()}))?;
            ndjson.into_inner().flush()?;
            return Err(e);
        }
    };
    let active = params.active_names();
    for t in &result.traces {
        let pick = |v: &[f64]| -> BTreeMap<String, f64> {
            named(&params, v)
                .into_iter()
                .filter(|(k, _)| active.contains(&k.as_str()))
                .collect()
        };
        let init: Vec<f64> = {
            let mut full = params.values();
            let mut it = t.initial.iter();
            for (v, p) in full.iter_mut().zip(&params.params) {
                if p.active {
                    *v = *it.next().expect("one initial value per active parameter");
                }
            }
            full
        };
        ndjson.write(&json!({
            "record": "restart",
            "restart": t.restart,
            "init": pick(&init),
            "trajectory_length": t.objective.len(),
            "iterations": t.iterations,
            "evaluations": t.evaluations,
            "final": pick(&t.final_values),
            "log_likelihood": -t.final_objective,
            "gradient_norm": t.gradient_norm,
            "converged": t.converged,
            "objective_trace": t.objective,
            "error": t.error,
        }))?;
        match &t.error {
            Some(e) => writeln!(log, "restart {}: failed: {e}", t.restart)?,
            None => writeln!(
                log,
                "restart {}: log-likelihood {:.6} after {} iterations{}",
                t.restart,
                -t.final_objective,
                t.iterations,
                if t.converged { "" } else { " (not converged)" }
            )?,
        }
    }
    let converged = result.traces.iter().filter(|t| t.converged).count();
    ndjson.write(&json!({
        "record": "summary",
        "best_restart": result.best_restart,
        "log_likelihood": result.log_likelihood,
        "params": named(&result.params, &result.params.values()),
        "noise_sd": result.model.noise_variance.sqrt(),
        "restarts": result.traces.len(),
        "converged_restarts": converged,
    }))?;
    ndjson.into_inner().flush()?;

    let mut fitted = cfg.clone();
    fitted.model = result.model.clone();
    let text = format!("# fitted parameters\n{}", fitted.to_toml()?);
    out.write_str("fitted.toml", &text)?;
    writeln!(
        log,
        "best restart {} of {}: log-likelihood {:.6} ({converged} converged)",
        result.best_restart,
        result.traces.len(),
        result.log_likelihood
    )?;
    Ok(Report {
        status: if converged > 0 { EXIT_OK } else { EXIT_NUMERICAL },
        message: if converged > 0 {
            format!("log-likelihood {}", result.log_likelihood)
        } else {
            format!("no restart converged (best log-likelihood {})", result.log_likelihood)
        },
        ..Default::default()
    })
}

/// Filter (and optionally smoother) beliefs for the configured data plus
/// observation-free prediction times.
pub fn posterior_beliefs(
    model: &ModelSpec,
    data: &ObservationBatch,
    prediction_times: &[f64],
    smooth: bool,
) -> Result<(ObservationBatch, BasisSet, crate::model::DiscreteSystem, Vec<GaussianBelief>)> {
    let batch = data.with_prediction_times(prediction_times);
    let basis = model.basis()?;
    let system = assemble_system(model, &basis, &batch.times(), &batch.locations())?;
    let t0 = batch.steps.first().map_or(0.0, |s| s.time);
    let prior = GaussianBelief::from_blocks(&model.prior_blocks(&basis, t0)?);
    let filt = inference::filter_pass(&system, &batch, &prior, model.noise_variance)?;
    let beliefs = if smooth {
        inference::smooth_pass(&system, &filt)?
    } else {
        filt.filtered()
    };
    Ok((batch, basis, system, beliefs))
}

fn summary_json(f: &FieldSummary, k: usize) -> serde_json::Value {
    let sd: Vec<f64> = f.variance.row(k).iter().map(|v| v.max(0.0).sqrt()).collect();
    json!({"mean": f.mean.row(k).iter().collect::<Vec<_>>(), "sd": sd})
}

fn cmd_posterior(cfg: &RunConfig, out: &mut Outputs, smooth: bool, log: &mut dyn Write) -> Result<Report> {
    let data = io::read_observations_file(cfg.data_path()?, &cfg.model.domain)?;
    let (batch, basis, system, beliefs) =
        posterior_beliefs(&cfg.model, &data, &cfg.output.prediction_times, smooth)?;
    let domain = &cfg.model.domain;
    let grid = evaluation_grid(domain, cfg.output.grid);
    let selector = cfg.selector();
    let times = batch.times();
    let field = inference::posterior_at(&system.layout, &beliefs, &times, &basis, &grid, &selector)?;
    let names = component_names(&cfg.model);
    let selected: Vec<usize> = match &selector {
        ComponentSelector::All => (0..names.len()).collect(),
        ComponentSelector::Only(v) => v.clone(),
    };

    let stem = if smooth { "posterior" } else { "prediction" };
    let mut columns = Vec::new();
    let mut push = |name: &str, f: &FieldSummary| {
        columns.push((format!("{name}_mean"), row_major(&f.mean)));
        columns.push((
            format!("{name}_sd"),
            row_major(&f.variance.map(|v| v.max(0.0).sqrt())),
        ));
    };
    for &j in &selected {
        push(&names[j], &field.components[j]);
    }
    push("total", &field.total);
    GridTable {
        domain,
        times: &times,
        points: &grid,
        columns,
    }
    .write(out.create(&format!("{stem}.csv"))?)?;

    let mut nd = NdjsonWriter::new(out.create(&format!("{stem}.ndjson"))?);
    let coords: Vec<Vec<f64>> = grid.iter().map(|p| io::point_coords(domain, *p)).collect();
    nd.write(&json!({"record": "grid", "points": coords, "components": selected.iter().map(|&j| &names[j]).collect::<Vec<_>>()}))?;
    for (k, s) in batch.steps.iter().enumerate() {
        let comps: BTreeMap<&str, serde_json::Value> = selected
            .iter()
            .map(|&j| (names[j].as_str(), summary_json(&field.components[j], k)))
            .collect();
        nd.write(&json!({
            "record": "step",
            "time": s.time,
            "observations": s.values.len(),
            "components": comps,
            "total": summary_json(&field.total, k),
        }))?;
    }
    nd.into_inner().flush()?;

    if cfg.output.amplitude_map {
        let mut columns = Vec::new();
        for &j in &selected {
            let omegas: Vec<f64> = times
                .iter()
                .map(|&t| cfg.model.components[j].frequency.value_at(t))
                .collect();
            let amp = inference::amplitude_map(&system.layout, &beliefs, &omegas, &basis, &grid, j)?;
            columns.push((names[j].clone(), amp));
        }
        io::write_point_table(out.create("amplitude.csv")?, domain, &grid, &columns)?;
    }
    writeln!(
        log,
        "{stem}: {} steps ({} observation-free), {} grid points",
        batch.steps.len(),
        batch.steps.iter().filter(|s| s.values.is_empty()).count(),
        grid.len()
    )?;
    Ok(Report::default())
}

fn cmd_spectrum(cfg: &RunConfig, out: &mut Outputs) -> Result<Report> {
    let model = &cfg.model;
    let basis = model.basis()?;
    let dim = model.domain.spectral_dim();
    let sc = &cfg.output.spectrum;
    let nu_x_max = sc
        .nu_x_max
        .unwrap_or_else(|| basis.modes().last().map_or(1.0, |m| m.wavenumber));
    let top = model
        .components
        .iter()
        .map(|c| {
            let w = match &c.frequency {
                crate::model::FrequencySchedule::Constant(w) => *w,
                crate::model::FrequencySchedule::Piecewise { values, .. } => {
                    values.iter().copied().fold(0.0, f64::max)
                }
            };
            w * c.harmonics() as f64
        })
        .fold(0.0, f64::max);
    let nu_t_max = sc.nu_t_max.unwrap_or(if top > 0.0 { 2.0 * top } else { 10.0 });
    if sc.nu_x_points < 2 || sc.nu_t_points < 2 {
        return Err(Error::config("output.spectrum", "need at least 2 points per axis"));
    }
    let names = component_names(model);
    let mut w = csv::Writer::from_writer(out.create("spectrum.csv")?);
    let mut header = vec!["nu_x".to_string(), "nu_t".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..sc.nu_x_points {
        let nx = nu_x_max * i as f64 / (sc.nu_x_points - 1) as f64;
        for k in 0..sc.nu_t_points {
            let nt = nu_t_max * k as f64 / (sc.nu_t_points - 1) as f64;
            let mut row = vec![io::fmt_f64(nx), io::fmt_f64(nt)];
            for c in &model.components {
                row.push(io::fmt_f64(model_spectral_density(c, nx, nt, dim)?));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(Report::default())
}

fn cmd_basis_check(cfg: &RunConfig, out: &mut Outputs) -> Result<Report> {
    let basis = cfg.model.basis()?;
    let domain = &cfg.model.domain;
    let mut w = csv::Writer::from_writer(out.create("basis.csv")?);
    w.write_record(["index", "label", "eigenvalue", "wavenumber"])?;
    for (i, (m, label)) in basis.modes().iter().zip(basis.mode_labels()).enumerate() {
        w.write_record([
            i.to_string(),
            label,
            io::fmt_f64(m.eigenvalue),
            io::fmt_f64(m.wavenumber),
        ])?;
    }
    w.flush()?;

    let gram = orthonormality_error(&basis, cfg.output.quadrature)?;
    let mut record = json!({
        "domain": io::domain_kind(domain),
        "modes": basis.len(),
        "quadrature": cfg.output.quadrature,
        "orthonormality_error": gram,
    });
    if matches!(domain, Domain::Interval { .. } | Domain::Rectangle { .. }) {
        let h = domain.size() / 50.0;
        let coarse = fd_eigen_residuals(&basis, h)?;
        let fine = fd_eigen_residuals(&basis, 0.5 * h)?;
        let residuals: Vec<_> = coarse
            .iter()
            .zip(&fine)
            .enumerate()
            .map(|(m, (r1, r2))| {
                json!({"mode": m, "h": h, "residual": r1, "residual_half": r2, "order": (r1 / r2).log2()})
            })
            .collect();
        record["fd_residuals"] = json!(residuals);
    }
    let mut nd = NdjsonWriter::new(out.create("basis_check.ndjson")?);
    nd.write(&record)?;
    nd.into_inner().flush()?;
    Ok(Report {
        message: format!("orthonormality error {gram:.3e}"),
        ..Default::default()
    })
}

/// Generic plotting helper written next to grid outputs.
pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot a grid CSV written by resonator (truth.csv, posterior.csv, ...).

usage: plot.py FILE.csv [COLUMN] [--time T]
One spatial coordinate: image of COLUMN over (t, x1).
Two coordinates: scatter of COLUMN at the time closest to T (default: last).
"""
import sys

import matplotlib.pyplot as plt
import pandas as pd

args = [a for a in sys.argv[1:] if not a.startswith("--")]
path = args[0]
df = pd.read_csv(path)
coords = [c for c in df.columns if c.startswith("x")]
values = [c for c in df.columns if c not in coords and c != "t"]
col = args[1] if len(args) > 1 else values[-1]
if len(coords) == 1:
    table = df.pivot(index="x1", columns="t", values=col)
    plt.imshow(table.values, aspect="auto", origin="lower",
               extent=[table.columns.min(), table.columns.max(), table.index.min(), table.index.max()])
    plt.xlabel("t")
    plt.ylabel("x1")
else:
    times = df["t"].unique()
    t = times[-1]
    if "--time" in sys.argv:
        want = float(sys.argv[sys.argv.index("--time") + 1])
        t = times[abs(times - want).argmin()]
    sl = df[df["t"] == t]
    plt.scatter(sl["x1"], sl["x2"], c=sl[col], s=8)
    plt.title(f"t = {t}")
plt.colorbar(label=col)
plt.savefig(path.rsplit(".", 1)[0] + f"_{col}.png", dpi=120)
"#;
