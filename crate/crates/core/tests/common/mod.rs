//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use resonator::basis::Domain;
use resonator::covariance::Kernel;
use resonator::inference::{GaussianBelief, ObservationBatch, ObservationStep};
use resonator::model::{assemble_system, Component, DiscreteSystem, ModelSpec};
use resonator::simulator::uniform_point;

/// `exp(m)` by scaling and squaring a 30-term Taylor series.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.iter().map(|v| v.abs()).sum::<f64>();
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let x = m * scale;
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &x / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// `exp(t f)` with the same scaling-and-squaring series, on a 2x2.
pub fn expm2(f: &Matrix2<f64>, t: f64) -> Matrix2<f64> {
    let m = f * t;
    let norm = m.abs().sum();
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let x = m * scale;
    let mut term = Matrix2::identity();
    let mut sum = Matrix2::identity();
    for k in 1..30 {
        term = term * x / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

pub fn companion(a: f64, b: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -b, -a)
}

const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

fn gauss5<F: Fn(f64) -> Matrix2<f64>>(f: &F, lo: f64, hi: f64) -> Matrix2<f64> {
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let mut s = Matrix2::zeros();
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        s += f(c + h * x) * (w * h);
    }
    s
}

/// Composite 5-point Gauss-Legendre integration of a matrix-valued function.
pub fn integrate2<F: Fn(f64) -> Matrix2<f64>>(f: &F, lo: f64, hi: f64, panels: usize) -> Matrix2<f64> {
    let h = (hi - lo) / panels as f64;
    (0..panels)
        .map(|i| gauss5(f, lo + i as f64 * h, lo + (i + 1) as f64 * h))
        .fold(Matrix2::zeros(), |acc, m| acc + m)
}

/// Composite 5-point Gauss-Legendre integration of a scalar function.
pub fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let h = (hi - lo) / panels as f64;
    let mut s = 0.0;
    for i in 0..panels {
        let c = lo + (i as f64 + 0.5) * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            s += w * 0.5 * h * f(c + 0.5 * h * x);
        }
    }
    s
}

/// `int_0^dt e^{sF} L q L^T e^{sF}^T ds` by quadrature over the series
/// exponential, with panels short against both the oscillation period and
/// the decay time.
pub fn noise_integral(a: f64, b: f64, q: f64, dt: f64) -> Matrix2<f64> {
    let f = companion(a, b);
    let lql = Matrix2::new(0.0, 0.0, 0.0, q);
    let integrand = |s: f64| {
        let e = expm2(&f, s);
        e * lql * e.transpose()
    };
    let rate = b.sqrt() + a + 1.0;
    let panels = ((dt * rate / 0.05).ceil() as usize).max(8);
    integrate2(&integrand, 0.0, dt, panels)
}

/// Power series `J_m(x) = sum_k (-1)^k (x/2)^{2k+m} / (k! (k+m)!)`.
pub fn bessel_j_series(m: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = (0..m).fold(1.0, |acc, i| acc * half / (i + 1) as f64);
    let mut sum = term;
    for k in 1..200 {
        term *= -half * half / (k as f64 * (k + m) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// Bisection root on a sign-changing bracket.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    assert!(flo * f(hi) < 0.0, "bracket does not change sign");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) < 0.0) == (flo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A small random model with its data, for oracle comparisons.
pub struct Instance {
    pub model: ModelSpec,
    pub data: ObservationBatch,
    pub system: DiscreteSystem,
    pub prior: GaussianBelief,
}

/// `steps` random steps on an interval or rectangle with `modes` modes and
/// one or two components; some steps have no observations.
pub fn random_instance(seed: u64, steps: usize, modes: usize) -> Instance {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let domain = if rng.random_bool(0.5) {
        Domain::interval(rng.random_range(0.5..2.0))
    } else {
        Domain::rectangle(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0))
    };
    let ncomp = rng.random_range(1..=2);
    let components = (0..ncomp)
        .map(|j| {
            let kernel = Kernel::matern(
                [0.5, 1.5, 2.5][rng.random_range(0..3)],
                rng.random_range(0.2..1.0),
                rng.random_range(0.5..2.0),
            );
            let omega = if j == 1 && rng.random_bool(0.5) {
                0.0
            } else {
                rng.random_range(0.5..10.0)
            };
            Component::new(
                &format!("c{j}"),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..0.05),
                omega,
                kernel,
            )
        })
        .collect();
    let model = ModelSpec::new(domain, modes, components, rng.random_range(0.05..0.5));
    let mut t = 0.0;
    let mut data_steps = Vec::new();
    for _ in 0..steps {
        t += rng.random_range(0.02..0.3);
        let d = rng.random_range(0..=4);
        let locations: Vec<_> = (0..d).map(|_| uniform_point(&model.domain, &mut rng)).collect();
        let values = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        data_steps.push(ObservationStep {
            time: t,
            locations,
            values,
        });
    }
    let data = ObservationBatch { steps: data_steps };
    let basis = model.basis().unwrap();
    let system = assemble_system(&model, &basis, &data.times(), &data.locations()).unwrap();
    let n = system.state_dim();
    let mean = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let mut prior = GaussianBelief::from_blocks(&model.prior_blocks(&basis, data.steps[0].time).unwrap());
    prior.mean = mean;
    Instance {
        model,
        data,
        system,
        prior,
    }
}

/// Exact moments of the stacked states given any subset of the data,
/// computed by conditioning the explicitly built joint Gaussian.
pub struct JointGaussian {
    n: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// `H` for every observation, as rows, with its step index.
    rows: Vec<(usize, DVector<f64>)>,
    y: Vec<f64>,
    noise: f64,
}

impl JointGaussian {
    pub fn new(system: &DiscreteSystem, prior_mean: &DVector<f64>, prior_cov: &DMatrix<f64>, data: &ObservationBatch, noise: f64) -> Self {
        let n = system.state_dim();
        let t = system.len();
        let mut mean = DVector::zeros(n * t);
        let mut cov = DMatrix::zeros(n * t, n * t);
        let mut m = prior_mean.clone();
        let mut p = prior_cov.clone();
        for k in 0..t {
            if k > 0 {
                let a = system.transition_matrix(k);
                m = &a * &m;
                p = &a * &p * a.transpose() + system.noise_matrix(k);
                // Cross covariances with every earlier step.
                for j in 0..k {
                    let prev = cov.view((n * (k - 1), n * j), (n, n)).into_owned();
                    cov.view_mut((n * k, n * j), (n, n)).copy_from(&(&a * prev));
                    let c = cov.view((n * k, n * j), (n, n)).transpose();
                    cov.view_mut((n * j, n * k), (n, n)).copy_from(&c);
                }
            }
            mean.rows_mut(n * k, n).copy_from(&m);
            cov.view_mut((n * k, n * k), (n, n)).copy_from(&p);
        }
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (k, s) in data.steps.iter().enumerate() {
            let h = system.measurement_matrix(k);
            for i in 0..h.nrows() {
                let mut row = DVector::zeros(n * t);
                row.rows_mut(n * k, n).copy_from(&h.row(i).transpose());
                rows.push((k, row));
                y.push(s.values[i]);
            }
        }
        JointGaussian {
            n,
            mean,
            cov,
            rows,
            y,
            noise,
        }
    }

    /// Mean and covariance of step `k` given observations at steps `<= last`.
    pub fn marginal(&self, k: usize, last: Option<usize>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let sel: Vec<usize> = (0..self.rows.len())
            .filter(|&i| last.map_or(true, |l| self.rows[i].0 <= l))
            .collect();
        let mk = self.mean.rows(n * k, n).into_owned();
        let pk = self.cov.view((n * k, n * k), (n, n)).into_owned();
        if sel.is_empty() {
            return (mk, pk);
        }
        let d = sel.len();
        let h = DMatrix::from_fn(d, self.mean.len(), |i, j| self.rows[sel[i]].1[j]);
        let s = &h * &self.cov * h.transpose() + DMatrix::identity(d, d) * self.noise;
        let cross = self.cov.rows(n * k, n) * h.transpose();
        let resid = DVector::from_iterator(d, sel.iter().map(|&i| self.y[i])) - &h * &self.mean;
        let chol = s.cholesky().expect("innovation covariance is positive definite");
        let mean = mk + &cross * chol.solve(&resid);
        let cov = pk - &cross * chol.solve(&cross.transpose());
        (mean, cov)
    }

    /// `log N(y; H mu, H Sigma H^T + R)` over all observations.
    pub fn log_likelihood(&self) -> f64 {
        let d = self.rows.len();
        if d == 0 {
            return 0.0;
        }
        let h = DMatrix::from_fn(d, self.mean.len(), |i, j| self.rows[i].1[j]);
        let s = &h * &self.cov * h.transpose() + DMatrix::identity(d, d) * self.noise;
        let resid = DVector::from_vec(self.y.clone()) - &h * &self.mean;
        let chol = s.cholesky().expect("positive definite");
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * (resid.dot(&chol.solve(&resid)) + logdet + d as f64 * (2.0 * std::f64::consts::PI).ln())
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Underdamped,
    Critical,
    Overdamped,
    Undamped,
    Wiener,
}

/// A random `(a, b, q, dt)` block in the given damping regime.
pub fn random_block(rng: &mut impl Rng, regime: Regime) -> (f64, f64, f64, f64) {
    let log_uniform = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| -> f64 {
        let u: f64 = rng.random();
        (lo.ln() + u * (hi.ln() - lo.ln())).exp()
    };
    let q = log_uniform(rng, 1e-2, 1e2);
    let dt = log_uniform(rng, 1e-3, 1.0);
    let a = log_uniform(rng, 1e-2, 50.0);
    let (a, b) = match regime {
        Regime::Underdamped => (a, a * a / 4.0 + log_uniform(rng, 1e-2, 1e4)),
        Regime::Critical => {
            let rel: f64 = rng.random_range(-1e-10..1e-10);
            (a, a * a / 4.0 * (1.0 + rel))
        }
        Regime::Overdamped => (a, a * a / 4.0 * rng.random_range(0.01..0.99)),
        Regime::Undamped => (0.0, log_uniform(rng, 1e-2, 1e4)),
        Regime::Wiener => (0.0, 0.0),
    };
    (a, b, q, dt)
}

pub const REGIMES: [Regime; 5] = [
    Regime::Underdamped,
    Regime::Critical,
    Regime::Overdamped,
    Regime::Undamped,
    Regime::Wiener,
];

/// Largest entrywise difference relative to the largest reference entry.
pub fn rel_diff2(x: &Matrix2<f64>, reference: &Matrix2<f64>) -> f64 {
    (x - reference).amax() / reference.amax().max(f64::MIN_POSITIVE)
}
