//! Kalman filtering and RTS smoothing on the coefficient state.
//!
//! Covariances are carried as lower-triangular square-root factors. The
//! prediction applies the block-diagonal transition to the factor, restores
//! triangularity with one Givens rotation per block and absorbs the process
//! noise through rank-one factor updates; measurements are processed one at
//! a time through the triangularized array form, which also yields the
//! innovation variance for the log-likelihood.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, Point};
use crate::error::{Error, Result};
use crate::model::{chol2, DiscreteBlock, DiscreteSystem, StateLayout, Step};

/// Relative floor added to the diagonal of every process-noise block.
pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    /// Lower-triangular `S` with covariance `S S^T`.
    pub factor: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn from_factor(mean: DVector<f64>, factor: DMatrix<f64>) -> Result<Self> {
        if factor.nrows() != mean.len() || factor.ncols() != mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has {} entries, factor is {}x{}",
                mean.len(),
                factor.nrows(),
                factor.ncols()
            )));
        }
        Ok(GaussianBelief { mean, factor })
    }

    /// From a dense covariance, which must be symmetric PSD.
    pub fn from_covariance(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let factor = psd_cholesky(cov)?;
        GaussianBelief::from_factor(mean, factor)
    }

    /// Zero mean with block-diagonal 2x2 covariance blocks.
    pub fn from_blocks(blocks: &[Matrix2<f64>]) -> Self {
        let n = 2 * blocks.len();
        let mut factor = DMatrix::zeros(n, n);
        for (i, b) in blocks.iter().enumerate() {
            factor
                .fixed_view_mut::<2, 2>(2 * i, 2 * i)
                .copy_from(&chol2(b));
        }
        GaussianBelief {
            mean: DVector::zeros(n),
            factor,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let c = &self.factor * self.factor.transpose();
        0.5 * (&c + c.transpose())
    }
}

/// Cholesky factor of a symmetric PSD matrix; exactly singular directions
/// get zero columns instead of failing.
pub fn psd_cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    let scale = (0..n).map(|i| cov[(i, i)].abs()).fold(0.0, f64::max);
    let tol = 1e-13 * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = cov[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::param("covariance", "is not positive semidefinite"));
        }
        if d <= tol {
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut v = cov[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / djj;
        }
    }
    Ok(l)
}

/// Noise factors with the singularity floor applied.
pub(crate) fn floored_noise_factors(blocks: &[DiscreteBlock]) -> Vec<Matrix2<f64>> {
    blocks
        .iter()
        .map(|b| {
            let tr = b.noise.trace();
            chol2(&(b.noise + Matrix2::identity() * (NOISE_FLOOR * tr)))
        })
        .collect()
}

/// Prediction through block-diagonal dynamics: `m' = A m`,
/// `C' = A C A^T + Q`, in square-root form.
pub fn predict_step(belief: &GaussianBelief, blocks: &[DiscreteBlock]) -> Result<GaussianBelief> {
    if 2 * blocks.len() != belief.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} blocks for a state of dimension {}",
            blocks.len(),
            belief.dim()
        )));
    }
    let mut out = belief.clone();
    let qf = floored_noise_factors(blocks);
    let mut scratch = vec![0.0; belief.dim()];
    predict_in_place(&mut out, blocks, &qf, &mut scratch);
    Ok(out)
}

/// Prediction with dense `A` and `Q` (no structure assumed), via a QR
/// triangularization of `[A S, sqrt(Q)]`.
pub fn predict_dense(belief: &GaussianBelief, a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<GaussianBelief> {
    let n = belief.dim();
    if a.shape() != (n, n) || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch("A and Q must match the state".into()));
    }
    let mean = a * &belief.mean;
    let sq = psd_cholesky(q)?;
    let mut stacked = DMatrix::zeros(2 * n, n);
    stacked
        .view_mut((0, 0), (n, n))
        .copy_from(&(a * &belief.factor).transpose());
    stacked.view_mut((n, 0), (n, n)).copy_from(&sq.transpose());
    Ok(GaussianBelief {
        mean,
        factor: lower_from_stacked(stacked),
    })
}

/// Lower-triangular `L` with `L L^T = M^T M` for a tall `M`.
fn lower_from_stacked(m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    let r = m.qr().r();
    let mut l = r.transpose();
    for j in 0..n {
        if l[(j, j)] < 0.0 {
            for i in j..n {
                l[(i, j)] = -l[(i, j)];
            }
        }
    }
    l
}

fn predict_in_place(
    belief: &mut GaussianBelief,
    blocks: &[DiscreteBlock],
    noise_factors: &[Matrix2<f64>],
    scratch: &mut [f64],
) {
    let n = belief.dim();
    for (i, blk) in blocks.iter().enumerate() {
        let a = &blk.transition;
        let (x0, x1) = (belief.mean[2 * i], belief.mean[2 * i + 1]);
        belief.mean[2 * i] = a[(0, 0)] * x0 + a[(0, 1)] * x1;
        belief.mean[2 * i + 1] = a[(1, 0)] * x0 + a[(1, 1)] * x1;
    }
    let data = belief.factor.as_mut_slice();
    // S <- A S, column by column
    for j in 0..n {
        let col = &mut data[j * n..(j + 1) * n];
        for (i, blk) in blocks.iter().enumerate().skip(j / 2) {
            let a = &blk.transition;
            let (x0, x1) = (col[2 * i], col[2 * i + 1]);
            col[2 * i] = a[(0, 0)] * x0 + a[(0, 1)] * x1;
            col[2 * i + 1] = a[(1, 0)] * x0 + a[(1, 1)] * x1;
        }
    }
    // A S has one superdiagonal entry per block; rotate it away.
    for i in 0..blocks.len() {
        let r0 = 2 * i;
        let x = data[r0 * n + r0];
        let y = data[(r0 + 1) * n + r0];
        if y != 0.0 {
            let rho = radius(x, y);
            let (c, s) = (x / rho, y / rho);
            let (left, right) = data.split_at_mut((r0 + 1) * n);
            rotate(&mut left[r0 * n + r0..], &mut right[r0..n], c, s);
            right[r0] = 0.0;
        }
    }
    // absorb the columns of each sqrt(Q_i); the updates need a zeroed vector
    scratch.fill(0.0);
    for (i, l) in noise_factors.iter().enumerate() {
        let r0 = 2 * i;
        if l[(0, 0)] != 0.0 || l[(1, 0)] != 0.0 {
            scratch[r0] = l[(0, 0)];
            scratch[r0 + 1] = l[(1, 0)];
            rank_one_update(data, n, scratch, r0);
        }
        if l[(1, 1)] != 0.0 {
            scratch[r0 + 1] = l[(1, 1)];
            rank_one_update(data, n, scratch, r0 + 1);
        }
    }
}

/// `sqrt(x^2 + y^2)`; `hypot` is only needed when squaring could leave
/// the normal range.
#[inline]
fn radius(x: f64, y: f64) -> f64 {
    let m = x.abs().max(y.abs());
    if m > 1e-150 && m < 1e150 {
        (x * x + y * y).sqrt()
    } else {
        x.hypot(y)
    }
}

/// Applies the rotation `(u, w) <- (c u + s w, -s u + c w)` entrywise.
#[inline]
fn rotate(u: &mut [f64], w: &mut [f64], c: f64, s: f64) {
    for (p, q) in u.iter_mut().zip(w.iter_mut()) {
        let (a, b) = (*p, *q);
        *p = c * a + s * b;
        *q = -s * a + c * b;
    }
}

/// `S S^T <- S S^T + v v^T` for lower-triangular `S` (column-major, `n x n`)
/// and `v` supported on rows `start..`. Leaves `v` zeroed.
fn rank_one_update(data: &mut [f64], n: usize, v: &mut [f64], start: usize) {
    for j in start..n {
        let vj = v[j];
        if vj == 0.0 {
            continue;
        }
        let col = &mut data[j * n..(j + 1) * n];
        let sjj = col[j];
        let rho = radius(sjj, vj);
        let (c, s) = (sjj / rho, vj / rho);
        col[j] = rho;
        v[j] = 0.0;
        rotate(&mut col[j + 1..], &mut v[j + 1..], c, s);
    }
}

/// Scalar measurement update `y = h x + r`, `r ~ N(0, variance)`, with `h`
/// given through its nonzero entries. Returns the log-likelihood increment.
fn scalar_update(
    belief: &mut GaussianBelief,
    h: &[(usize, f64)],
    y: f64,
    variance: f64,
    phi: &mut [f64],
    gain: &mut [f64],
) -> Result<f64> {
    let n = belief.dim();
    let prediction: f64 = h.iter().map(|&(i, v)| v * belief.mean[i]).sum();
    let innovation = y - prediction;
    let data = belief.factor.as_mut_slice();
    // phi = S^T h^T
    let mut first = 0;
    for (j, p) in phi.iter_mut().enumerate() {
        while first < h.len() && h[first].0 < j {
            first += 1;
        }
        let col = &data[j * n..(j + 1) * n];
        *p = h[first..].iter().map(|&(i, v)| v * col[i]).sum();
    }
    gain.fill(0.0);
    let mut top = variance.sqrt();
    // triangularize [[sqrt(r), phi^T], [0, S]] from the last column backwards
    for j in (0..n).rev() {
        let pj = phi[j];
        if pj == 0.0 {
            continue;
        }
        let rho = radius(top, pj);
        let (c, s) = (top / rho, pj / rho);
        top = rho;
        let col = &mut data[j * n + j..(j + 1) * n];
        rotate(&mut gain[j..], col, c, s);
    }
    let innovation_var = top * top;
    if !(innovation_var > 0.0) || !innovation_var.is_finite() {
        let scale = variance + phi.iter().map(|p| p * p).sum::<f64>();
        return Err(Error::SingularInnovation {
            condition: scale / innovation_var.max(f64::MIN_POSITIVE),
        });
    }
    let step = innovation / top;
    for (m, g) in belief.mean.iter_mut().zip(gain.iter()) {
        *m += g * step;
    }
    Ok(-0.5 * (2.0 * PI * innovation_var).ln() - 0.5 * step * step)
}

/// Nonzero entries of the measurement row for observation `i`.
fn measurement_row(layout: &StateLayout, phi: &DMatrix<f64>, i: usize, out: &mut Vec<(usize, f64)>) {
    out.clear();
    let modes = layout.modes();
    for c in 0..layout.components() {
        for blk in layout.component_blocks(c) {
            let mode = (blk - layout.component_blocks(c).start) % modes;
            let v = phi[(i, mode)];
            if v != 0.0 {
                out.push((2 * blk, v));
            }
        }
    }
    out.sort_unstable_by_key(|&(i, _)| i);
}

/// Measurement update with `y = H x + r`, `R = diag(variances)`; returns
/// the updated belief and the log-likelihood increment.
pub fn update_step(
    belief: &GaussianBelief,
    h: &DMatrix<f64>,
    variances: &[f64],
    y: &[f64],
) -> Result<(GaussianBelief, f64)> {
    let n = belief.dim();
    if h.ncols() != n || h.nrows() != y.len() || variances.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "H is {}x{}, {} values, {} variances, state {}",
            h.nrows(),
            h.ncols(),
            y.len(),
            variances.len(),
            n
        )));
    }
    if y.is_empty() {
        return Err(Error::param("y", "update needs at least one measurement"));
    }
    let mut out = belief.clone();
    let (mut phi, mut gain) = (vec![0.0; n], vec![0.0; n]);
    let mut row = Vec::new();
    let mut ll = 0.0;
    for i in 0..y.len() {
        row.clear();
        row.extend((0..n).filter(|&j| h[(i, j)] != 0.0).map(|j| (j, h[(i, j)])));
        ll += scalar_update(&mut out, &row, y[i], variances[i], &mut phi, &mut gain)?;
    }
    Ok((out, ll))
}

/// Reference covariance-form update with the Joseph stabilized covariance,
/// processing the whole batch at once.
pub fn update_step_joseph(
    belief: &GaussianBelief,
    h: &DMatrix<f64>,
    variances: &[f64],
    y: &[f64],
) -> Result<(GaussianBelief, f64)> {
    let n = belief.dim();
    if h.ncols() != n || h.nrows() != y.len() || variances.len() != y.len() {
        return Err(Error::DimensionMismatch("H, y and R disagree".into()));
    }
    let c = belief.covariance();
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(variances));
    let s = h * &c * h.transpose() + &r;
    let chol = s
        .clone()
        .cholesky()
        .ok_or(Error::SingularInnovation { condition: f64::INFINITY })?;
    let e = DVector::from_column_slice(y) - h * &belief.mean;
    let k = chol.solve(&(h * &c)).transpose();
    let mean = &belief.mean + &k * &e;
    let ikh = DMatrix::identity(n, n) - &k * h;
    let cov = &ikh * &c * ikh.transpose() + &k * &r * k.transpose();
    let cov = 0.5 * (&cov + cov.transpose());
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = e.dot(&chol.solve(&e));
    let ll = -0.5 * (y.len() as f64 * (2.0 * PI).ln() + log_det) - 0.5 * quad;
    Ok((GaussianBelief::from_covariance(mean, &cov)?, ll))
}

/// Time-stamped scattered measurements.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationBatch {
    pub steps: Vec<ObservationStep>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationStep {
    pub time: f64,
    pub locations: Vec<Point>,
    pub values: Vec<f64>,
}

impl ObservationBatch {
    pub fn validate(&self) -> Result<()> {
        for (k, s) in self.steps.iter().enumerate() {
            if s.locations.len() != s.values.len() {
                return Err(Error::Data(format!(
                    "step {k}: {} locations but {} values",
                    s.locations.len(),
                    s.values.len()
                )));
            }
            if let Some(i) = s.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!("step {k}: value {i} is not finite")));
            }
        }
        crate::model::check_times(&self.times())
    }

    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.time).collect()
    }

    pub fn locations(&self) -> Vec<Vec<Point>> {
        self.steps.iter().map(|s| s.locations.clone()).collect()
    }

    pub fn total_observations(&self) -> usize {
        self.steps.iter().map(|s| s.values.len()).sum()
    }

    /// Adds empty steps at `times` not already present, keeping order.
    pub fn with_prediction_times(&self, times: &[f64]) -> ObservationBatch {
        let mut steps = self.steps.clone();
        for &t in times {
            if !steps.iter().any(|s| s.time == t) {
                steps.push(ObservationStep {
                    time: t,
                    ..Default::default()
                });
            }
        }
        steps.sort_by(|a, b| a.time.total_cmp(&b.time));
        ObservationBatch { steps }
    }
}

fn check_alignment(system: &DiscreteSystem, data: &ObservationBatch) -> Result<()> {
    if system.len() != data.steps.len() {
        return Err(Error::DimensionMismatch(format!(
            "system has {} steps, data {}",
            system.len(),
            data.steps.len()
        )));
    }
    for (k, (s, d)) in system.steps.iter().zip(&data.steps).enumerate() {
        if s.time != d.time || s.observations() != d.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "step {k}: system (t={}, d={}) vs data (t={}, d={})",
                s.time,
                s.observations(),
                d.time,
                d.values.len()
            )));
        }
    }
    Ok(())
}

/// Covariance update used by the filter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UpdateForm {
    #[default]
    SquareRoot,
    Joseph,
}

/// Forward filter state; advance it with [`KalmanFilter::step`].
pub struct KalmanFilter<'a> {
    system: &'a DiscreteSystem,
    belief: GaussianBelief,
    noise_variance: f64,
    form: UpdateForm,
    next: usize,
    log_likelihood: f64,
    phi: Vec<f64>,
    gain: Vec<f64>,
    row: Vec<(usize, f64)>,
}

/// One forward step's beliefs.
#[derive(Clone, Debug)]
pub struct FilterStep {
    pub predicted: GaussianBelief,
    pub filtered: GaussianBelief,
    pub log_likelihood: f64,
}

impl<'a> KalmanFilter<'a> {
    pub fn new(system: &'a DiscreteSystem, prior: GaussianBelief, noise_variance: f64) -> Result<Self> {
        if prior.dim() != system.state_dim() {
            return Err(Error::DimensionMismatch(format!(
                "prior dimension {} vs state {}",
                prior.dim(),
                system.state_dim()
            )));
        }
        let n = prior.dim();
        Ok(KalmanFilter {
            system,
            belief: prior,
            noise_variance,
            form: UpdateForm::SquareRoot,
            next: 0,
            log_likelihood: 0.0,
            phi: vec![0.0; n],
            gain: vec![0.0; n],
            row: Vec::new(),
        })
    }

    pub fn with_form(mut self, form: UpdateForm) -> Self {
        self.form = form;
        self
    }

    pub fn belief(&self) -> &GaussianBelief {
        &self.belief
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Predicts to the next step and conditions on its values. Returns the
    /// predicted belief (cloned only when `keep_predicted`) and the
    /// log-likelihood increment.
    pub fn step(&mut self, values: &[f64], keep_predicted: bool) -> Result<(Option<GaussianBelief>, f64)> {
        let step: &Step = self
            .system
            .steps
            .get(self.next)
            .ok_or_else(|| Error::DimensionMismatch("filter ran past the last step".into()))?;
        if values.len() != step.observations() {
            return Err(Error::DimensionMismatch(format!(
                "step {}: {} values for {} locations",
                self.next,
                values.len(),
                step.observations()
            )));
        }
        if let Some(blocks) = &step.blocks {
            let qf = floored_noise_factors(blocks);
            predict_in_place(&mut self.belief, blocks, &qf, &mut self.phi);
        }
        let predicted = keep_predicted.then(|| self.belief.clone());
        let mut ll = 0.0;
        if !values.is_empty() {
            match self.form {
                UpdateForm::SquareRoot => {
                    for (i, &y) in values.iter().enumerate() {
                        measurement_row(&self.system.layout, &step.phi, i, &mut self.row);
                        ll += scalar_update(
                            &mut self.belief,
                            &self.row,
                            y,
                            self.noise_variance,
                            &mut self.phi,
                            &mut self.gain,
                        )?;
                    }
                }
                UpdateForm::Joseph => {
                    let h = self.system.layout.measurement_matrix(&step.phi, None);
                    let r = vec![self.noise_variance; values.len()];
                    let (b, inc) = update_step_joseph(&self.belief, &h, &r, values)?;
                    self.belief = b;
                    ll = inc;
                }
            }
        }
        if !ll.is_finite() {
            return Err(Error::NonFinite(format!("log-likelihood at step {}", self.next)));
        }
        self.log_likelihood += ll;
        self.next += 1;
        Ok((predicted, ll))
    }
}

#[derive(Clone, Debug)]
pub struct FilterOutput {
    pub steps: Vec<FilterStep>,
    pub log_likelihood: f64,
}

impl FilterOutput {
    pub fn filtered(&self) -> Vec<GaussianBelief> {
        self.steps.iter().map(|s| s.filtered.clone()).collect()
    }
}

/// Runs the filter over every step, keeping predicted and filtered beliefs.
pub fn filter_pass(
    system: &DiscreteSystem,
    data: &ObservationBatch,
    prior: &GaussianBelief,
    noise_variance: f64,
) -> Result<FilterOutput> {
    filter_pass_with(system, data, prior, noise_variance, UpdateForm::SquareRoot)
}

pub fn filter_pass_with(
    system: &DiscreteSystem,
    data: &ObservationBatch,
    prior: &GaussianBelief,
    noise_variance: f64,
    form: UpdateForm,
) -> Result<FilterOutput> {
    check_alignment(system, data)?;
    let mut kf = KalmanFilter::new(system, prior.clone(), noise_variance)?.with_form(form);
    let mut steps = Vec::with_capacity(system.len());
    for d in &data.steps {
        let (predicted, ll) = kf.step(&d.values, true)?;
        steps.push(FilterStep {
            predicted: predicted.expect("kept"),
            filtered: kf.belief().clone(),
            log_likelihood: ll,
        });
    }
    Ok(FilterOutput {
        log_likelihood: kf.log_likelihood(),
        steps,
    })
}

/// Total log-likelihood without keeping per-step beliefs.
pub fn log_likelihood(
    system: &DiscreteSystem,
    data: &ObservationBatch,
    prior: &GaussianBelief,
    noise_variance: f64,
) -> Result<f64> {
    check_alignment(system, data)?;
    let mut kf = KalmanFilter::new(system, prior.clone(), noise_variance)?;
    for d in &data.steps {
        kf.step(&d.values, false)?;
    }
    Ok(kf.log_likelihood())
}

/// Backward RTS sweep. Smoothed covariances are formed as
/// `(I - G A) C (I - G A)^T + G Q G^T + G C_s G^T` and re-triangularized,
/// so they stay PSD.
pub fn smooth_pass(system: &DiscreteSystem, filtered: &FilterOutput) -> Result<Vec<GaussianBelief>> {
    let t = filtered.steps.len();
    if t != system.len() {
        return Err(Error::DimensionMismatch("filter output does not match system".into()));
    }
    if t == 0 {
        return Ok(Vec::new());
    }
    let n = system.state_dim();
    let mut smoothed = vec![filtered.steps[t - 1].filtered.clone(); t];
    for k in (0..t - 1).rev() {
        let filt = &filtered.steps[k].filtered;
        let pred = &filtered.steps[k + 1].predicted;
        let Some(blocks) = &system.steps[k + 1].blocks else {
            // identity transition without noise: marginals carry over
            smoothed[k] = smoothed[k + 1].clone();
            continue;
        };
        let a = system.transition_matrix(k + 1);
        let cov = filt.covariance();
        // G^T = P^{-1} A C with P = S_p S_p^T
        let ac = &a * &cov;
        let sp = &pred.factor;
        let x = sp
            .solve_lower_triangular(&ac)
            .and_then(|x| sp.transpose().solve_upper_triangular(&x))
            .ok_or(Error::SingularPrediction { step: k + 1 })?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularPrediction { step: k + 1 });
        }
        let g = x.transpose();
        let next = &smoothed[k + 1];
        let mean = &filt.mean + &g * (&next.mean - &pred.mean);
        let ga = &g * &a;
        let igs = (DMatrix::identity(n, n) - ga) * &filt.factor;
        let mut sq = DMatrix::zeros(n, n);
        for (i, l) in floored_noise_factors(blocks).iter().enumerate() {
            sq.fixed_view_mut::<2, 2>(2 * i, 2 * i).copy_from(l);
        }
        let gq = &g * sq;
        let gs = &g * &next.factor;
        let mut stacked = DMatrix::zeros(3 * n, n);
        stacked.view_mut((0, 0), (n, n)).copy_from(&igs.transpose());
        stacked.view_mut((n, 0), (n, n)).copy_from(&gq.transpose());
        stacked.view_mut((2 * n, 0), (n, n)).copy_from(&gs.transpose());
        smoothed[k] = GaussianBelief {
            mean,
            factor: lower_from_stacked(stacked),
        };
    }
    Ok(smoothed)
}

/// Which components a read-out sums over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ComponentSelector {
    All,
    Only(Vec<usize>),
}

impl ComponentSelector {
    fn indices(&self, components: usize) -> Vec<usize> {
        match self {
            ComponentSelector::All => (0..components).collect(),
            ComponentSelector::Only(v) => v.clone(),
        }
    }
}

/// Posterior mean and pointwise variance of a field on an evaluation set;
/// `mean[(k, i)]` is step `k`, point `i`.
#[derive(Clone, Debug)]
pub struct FieldSummary {
    pub mean: DMatrix<f64>,
    pub variance: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct PosteriorField {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    /// One entry per component, in model order.
    pub components: Vec<FieldSummary>,
    /// The selected components summed.
    pub total: FieldSummary,
}

/// Reads out field values `f(x_*, t_k)` from per-step beliefs.
pub fn posterior_at(
    layout: &StateLayout,
    beliefs: &[GaussianBelief],
    times: &[f64],
    basis: &BasisSet,
    points: &[Point],
    selector: &ComponentSelector,
) -> Result<PosteriorField> {
    if beliefs.len() != times.len() {
        return Err(Error::DimensionMismatch("beliefs and times differ in length".into()));
    }
    let phi = basis.eval(points)?;
    let selected = selector.indices(layout.components());
    if let Some(bad) = selected.iter().find(|&&c| c >= layout.components()) {
        return Err(Error::param("components", format!("no component {bad}")));
    }
    let per_h: Vec<DMatrix<f64>> = (0..layout.components())
        .map(|c| layout.measurement_matrix(&phi, Some(&[c])))
        .collect();
    let total_h = layout.measurement_matrix(&phi, Some(&selected));
    let read = |h: &DMatrix<f64>| {
        let mut mean = DMatrix::zeros(beliefs.len(), points.len());
        let mut variance = DMatrix::zeros(beliefs.len(), points.len());
        for (k, b) in beliefs.iter().enumerate() {
            let m = h * &b.mean;
            let hs = h * &b.factor;
            for i in 0..points.len() {
                mean[(k, i)] = m[i];
                variance[(k, i)] = hs.row(i).norm_squared();
            }
        }
        FieldSummary { mean, variance }
    };
    Ok(PosteriorField {
        times: times.to_vec(),
        points: points.to_vec(),
        components: per_h.iter().map(read).collect(),
        total: read(&total_h),
    })
}

/// Time-averaged envelope `sqrt(f^2 + (f_t / (h omega))^2)` of one
/// component's posterior mean, summed over harmonics; zero-frequency
/// harmonics contribute `|f|`.
pub fn amplitude_map(
    layout: &StateLayout,
    beliefs: &[GaussianBelief],
    omegas: &[f64],
    basis: &BasisSet,
    points: &[Point],
    component: usize,
) -> Result<Vec<f64>> {
    if component >= layout.components() {
        return Err(Error::param("component", format!("no component {component}")));
    }
    if omegas.len() != beliefs.len() {
        return Err(Error::DimensionMismatch("one frequency per step expected".into()));
    }
    let phi = basis.eval(points)?;
    let blocks = layout.component_blocks(component);
    let modes = layout.modes();
    let harmonics = blocks.len() / modes;
    let mut out = vec![0.0; points.len()];
    for (b, &omega) in beliefs.iter().zip(omegas) {
        for h in 0..harmonics {
            let w = (h + 1) as f64 * omega;
            for (i, o) in out.iter_mut().enumerate() {
                let (mut f, mut v) = (0.0, 0.0);
                for n in 0..modes {
                    let blk = blocks.start + h * modes + n;
                    f += phi[(i, n)] * b.mean[2 * blk];
                    v += phi[(i, n)] * b.mean[2 * blk + 1];
                }
                *o += if w > 0.0 { f.hypot(v / w) } else { f.abs() };
            }
        }
    }
    let t = beliefs.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= t);
    Ok(out)
}
