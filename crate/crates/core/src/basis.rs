//! Truncated eigenfunction expansions of the negative Laplacian.
//!
//! A [`BasisSet`] holds the `N` lowest eigenpairs `(lambda_n, psi_n)` of
//! `-Laplace psi = lambda psi` on a [`Domain`], with Dirichlet conditions on
//! bounded domains and the Laplace-Beltrami operator on the sphere. The
//! functions are orthonormal in `L2` under the domain's natural measure.
//!
//! Coordinates by domain:
//! - interval: `x` in `[-L, L]`
//! - rectangle: `(x, y)` in `[-Lx, Lx] x [-Ly, Ly]`
//! - disk: Cartesian `(x, y)` with `x^2 + y^2 <= R^2`
//! - sphere: `(theta, phi)` with colatitude `theta` in `[0, pi]` and longitude
//!   `phi` in radians

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::special::{bessel_j, bessel_j_zeros_below, gauss_legendre, normalized_legendre};

/// Relative slack accepted on domain bounds.
const BOUNDARY_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    Interval {
        half_length: f64,
    },
    Rectangle {
        half_length_x: f64,
        half_length_y: f64,
    },
    Disk {
        radius: f64,
    },
    Sphere {
        radius: f64,
        /// Keep the `lambda = 0` constant harmonic.
        #[serde(default)]
        include_constant: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Dirichlet,
    None,
}

impl Domain {
    pub fn interval(half_length: f64) -> Self {
        Domain::Interval { half_length }
    }

    pub fn rectangle(half_length_x: f64, half_length_y: f64) -> Self {
        Domain::Rectangle {
            half_length_x,
            half_length_y,
        }
    }

    pub fn disk(radius: f64) -> Self {
        Domain::Disk { radius }
    }

    pub fn sphere(radius: f64) -> Self {
        Domain::Sphere {
            radius,
            include_constant: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Domain::Interval { half_length } => ensure_positive("half_length", half_length),
            Domain::Rectangle {
                half_length_x,
                half_length_y,
            } => {
                ensure_positive("half_length_x", half_length_x)?;
                ensure_positive("half_length_y", half_length_y)
            }
            Domain::Disk { radius } | Domain::Sphere { radius, .. } => {
                ensure_positive("radius", radius)
            }
        }
    }

    pub fn boundary(&self) -> Boundary {
        match self {
            Domain::Sphere { .. } => Boundary::None,
            _ => Boundary::Dirichlet,
        }
    }

    /// Dimension used for isotropic spectral densities.
    pub fn spectral_dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            _ => 2,
        }
    }

    /// Number of coordinates a point carries.
    pub fn coord_dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            _ => 2,
        }
    }

    /// Lebesgue measure (length, area or surface area).
    pub fn measure(&self) -> f64 {
        match *self {
            Domain::Interval { half_length } => 2.0 * half_length,
            Domain::Rectangle {
                half_length_x,
                half_length_y,
            } => 4.0 * half_length_x * half_length_y,
            Domain::Disk { radius } => PI * radius * radius,
            Domain::Sphere { radius, .. } => 4.0 * PI * radius * radius,
        }
    }

    /// A characteristic length used to scale length-scale initializations.
    pub fn size(&self) -> f64 {
        match *self {
            Domain::Interval { half_length } => half_length,
            Domain::Rectangle {
                half_length_x,
                half_length_y,
            } => half_length_x.max(half_length_y),
            Domain::Disk { radius } | Domain::Sphere { radius, .. } => radius,
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        if !p.x.is_finite() || !p.y.is_finite() {
            return false;
        }
        let slack = 1.0 + BOUNDARY_SLACK;
        match *self {
            Domain::Interval { half_length } => p.x.abs() <= half_length * slack,
            Domain::Rectangle {
                half_length_x,
                half_length_y,
            } => p.x.abs() <= half_length_x * slack && p.y.abs() <= half_length_y * slack,
            Domain::Disk { radius } => p.x.hypot(p.y) <= radius * slack,
            Domain::Sphere { .. } => p.x >= -BOUNDARY_SLACK && p.x <= PI * slack,
        }
    }

    /// Great-circle or Euclidean distance between two points.
    pub fn distance(&self, a: Point, b: Point) -> f64 {
        match *self {
            Domain::Interval { .. } => (a.x - b.x).abs(),
            Domain::Rectangle { .. } | Domain::Disk { .. } => (a.x - b.x).hypot(a.y - b.y),
            Domain::Sphere { radius, .. } => {
                let c = a.x.cos() * b.x.cos() + a.x.sin() * b.x.sin() * (a.y - b.y).cos();
                radius * c.clamp(-1.0, 1.0).acos()
            }
        }
    }
}

/// A location in a domain. Interval points ignore `y`; sphere points store
/// `(theta, phi)` in `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn on_line(x: f64) -> Self {
        Point { x, y: 0.0 }
    }

    pub fn angles(theta: f64, phi: f64) -> Self {
        Point { x: theta, y: phi }
    }

    /// The first `dim` coordinates.
    pub fn coords(&self, dim: usize) -> Vec<f64> {
        [self.x, self.y][..dim].to_vec()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Cos,
    Sin,
}

/// Analytic label of an eigenfunction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeIndex {
    Interval { n: u32 },
    Rectangle { nx: u32, ny: u32 },
    Disk { m: u32, k: u32, parity: Parity },
    Sphere { l: u32, m: i32 },
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ModeIndex::Interval { n } => write!(f, "n{n}"),
            ModeIndex::Rectangle { nx, ny } => write!(f, "nx{nx}_ny{ny}"),
            ModeIndex::Disk { m, k, parity } => {
                let p = match parity {
                    Parity::Cos => "cos",
                    Parity::Sin => "sin",
                };
                write!(f, "m{m}_k{k}_{p}")
            }
            ModeIndex::Sphere { l, m } => write!(f, "l{l}_m{m}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mode {
    pub index: ModeIndex,
    pub eigenvalue: f64,
    /// Radial wavenumber `sqrt(lambda)`; for disk modes `j_{m,k} / R`.
    pub wavenumber: f64,
    /// Multiplicative normalization constant applied to the raw separated
    /// solution.
    norm: f64,
}

/// The `N` lowest Laplacian eigenpairs on a domain. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    domain: Domain,
    modes: Vec<Mode>,
    max_degree: usize,
}

impl BasisSet {
    /// Builds the `n` lowest-eigenvalue modes, ties broken by the analytic
    /// index in lexicographic order.
    pub fn build(domain: &Domain, n: usize) -> Result<Self> {
        domain.validate()?;
        if n == 0 {
            return Err(Error::param("modes", "basis size must be at least 1"));
        }
        let modes = match *domain {
            Domain::Interval { half_length } => interval_modes(half_length, n),
            Domain::Rectangle {
                half_length_x,
                half_length_y,
            } => rectangle_modes(half_length_x, half_length_y, n),
            Domain::Disk { radius } => disk_modes(radius, n),
            Domain::Sphere {
                radius,
                include_constant,
            } => sphere_modes(radius, include_constant, n),
        };
        let max_degree = modes
            .iter()
            .map(|m| match m.index {
                ModeIndex::Sphere { l, .. } => l as usize,
                _ => 0,
            })
            .max()
            .unwrap_or(0);
        Ok(BasisSet {
            domain: domain.clone(),
            modes,
            max_degree,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.eigenvalue).collect()
    }

    /// Values of every mode at one point, written into `out`.
    pub fn eval_point_into(&self, p: Point, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.modes.len());
        match self.domain {
            Domain::Interval { half_length } => {
                if p.x.abs() >= half_length {
                    out.fill(0.0);
                    return;
                }
                for (o, mode) in out.iter_mut().zip(&self.modes) {
                    *o = mode.norm * (mode.wavenumber * (p.x + half_length)).sin();
                }
            }
            Domain::Rectangle {
                half_length_x,
                half_length_y,
            } => {
                if p.x.abs() >= half_length_x || p.y.abs() >= half_length_y {
                    out.fill(0.0);
                    return;
                }
                for (o, mode) in out.iter_mut().zip(&self.modes) {
                    let ModeIndex::Rectangle { nx, ny } = mode.index else {
                        unreachable!()
                    };
                    let kx = nx as f64 * PI / (2.0 * half_length_x);
                    let ky = ny as f64 * PI / (2.0 * half_length_y);
                    *o = mode.norm
                        * (kx * (p.x + half_length_x)).sin()
                        * (ky * (p.y + half_length_y)).sin();
                }
            }
            Domain::Disk { radius } => {
                let r = p.x.hypot(p.y);
                if r >= radius {
                    out.fill(0.0);
                    return;
                }
                let theta = p.y.atan2(p.x);
                let mut i = 0;
                while i < self.modes.len() {
                    let mode = &self.modes[i];
                    let ModeIndex::Disk { m, k, parity } = mode.index else {
                        unreachable!()
                    };
                    let radial = bessel_j(m, mode.wavenumber * r);
                    out[i] = mode.norm * radial * angular(m, parity, theta);
                    // cos/sin partners share the radial factor
                    if let Some(next) = self.modes.get(i + 1) {
                        if let ModeIndex::Disk {
                            m: m2,
                            k: k2,
                            parity: p2,
                        } = next.index
                        {
                            if m2 == m && k2 == k {
                                out[i + 1] = next.norm * radial * angular(m2, p2, theta);
                                i += 1;
                            }
                        }
                    }
                    i += 1;
                }
            }
            Domain::Sphere { .. } => {
                let p_lm = normalized_legendre(self.max_degree, p.x);
                for (o, mode) in out.iter_mut().zip(&self.modes) {
                    let ModeIndex::Sphere { l, m } = mode.index else {
                        unreachable!()
                    };
                    let (l, am) = (l as usize, m.unsigned_abs() as usize);
                    let leg = p_lm[l * (l + 1) / 2 + am];
                    let ang = match m.cmp(&0) {
                        std::cmp::Ordering::Equal => 1.0,
                        std::cmp::Ordering::Greater => {
                            std::f64::consts::SQRT_2 * (am as f64 * p.y).cos()
                        }
                        std::cmp::Ordering::Less => {
                            std::f64::consts::SQRT_2 * (am as f64 * p.y).sin()
                        }
                    };
                    *o = mode.norm * leg * ang;
                }
            }
        }
    }

    /// Values of every mode at one point, after checking it lies in the domain.
    pub fn eval_point(&self, p: Point) -> Result<Vec<f64>> {
        if !self.domain.contains(p) {
            return Err(Error::OutsideDomain { index: 0 });
        }
        let mut out = vec![0.0; self.modes.len()];
        self.eval_point_into(p, &mut out);
        Ok(out)
    }

    /// Evaluation matrix `Phi[i, n] = psi_n(x_i)`.
    pub fn eval(&self, points: &[Point]) -> Result<DMatrix<f64>> {
        if let Some(index) = points.iter().position(|p| !self.domain.contains(*p)) {
            return Err(Error::OutsideDomain { index });
        }
        let n = self.modes.len();
        let mut phi = DMatrix::zeros(points.len(), n);
        let mut row = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            self.eval_point_into(*p, &mut row);
            for (j, v) in row.iter().enumerate() {
                phi[(i, j)] = *v;
            }
        }
        Ok(phi)
    }

    /// Header labels for exported evaluation matrices.
    pub fn mode_labels(&self) -> Vec<String> {
        self.modes.iter().map(|m| m.index.to_string()).collect()
    }
}

fn angular(m: u32, parity: Parity, theta: f64) -> f64 {
    match parity {
        Parity::Cos => (m as f64 * theta).cos(),
        Parity::Sin => (m as f64 * theta).sin(),
    }
}

/// Sorts by eigenvalue; eigenvalues within a relative `1e-12` of their
/// neighbour form a cluster that is ordered by analytic index instead.
fn order_modes(mut modes: Vec<Mode>) -> Vec<Mode> {
    modes.sort_by(|a, b| a.eigenvalue.total_cmp(&b.eigenvalue).then(a.index.cmp(&b.index)));
    let mut start = 0;
    while start < modes.len() {
        let mut end = start + 1;
        while end < modes.len()
            && (modes[end].eigenvalue - modes[end - 1].eigenvalue)
                <= 1e-12 * modes[end].eigenvalue.abs()
        {
            end += 1;
        }
        modes[start..end].sort_by(|a, b| a.index.cmp(&b.index));
        start = end;
    }
    modes
}

fn interval_modes(half_length: f64, n: usize) -> Vec<Mode> {
    (1..=n as u32)
        .map(|k| {
            let w = k as f64 * PI / (2.0 * half_length);
            Mode {
                index: ModeIndex::Interval { n: k },
                eigenvalue: w * w,
                wavenumber: w,
                norm: 1.0 / half_length.sqrt(),
            }
        })
        .collect()
}

fn rectangle_modes(lx: f64, ly: f64, n: usize) -> Vec<Mode> {
    // The n lowest modes all have nx <= n and ny <= n.
    let mut all = Vec::with_capacity(n * n);
    for nx in 1..=n as u32 {
        for ny in 1..=n as u32 {
            let kx = nx as f64 * PI / (2.0 * lx);
            let ky = ny as f64 * PI / (2.0 * ly);
            let ev = kx * kx + ky * ky;
            all.push(Mode {
                index: ModeIndex::Rectangle { nx, ny },
                eigenvalue: ev,
                wavenumber: ev.sqrt(),
                norm: 1.0 / (lx * ly).sqrt(),
            });
        }
    }
    let mut modes = order_modes(all);
    modes.truncate(n);
    modes
}

fn disk_modes(radius: f64, n: usize) -> Vec<Mode> {
    // Weyl: count(j < X) ~ X^2 / 4
    let mut limit = 2.0 * (n as f64).sqrt() + 4.0;
    loop {
        let mut all = Vec::new();
        let mut m = 0u32;
        while (m as f64) < limit {
            for (k, z) in bessel_j_zeros_below(m, limit).into_iter().enumerate() {
                let k = k as u32 + 1;
                let w = z / radius;
                // int_0^R J_m(z r/R)^2 r dr = R^2 J_{m+1}(z)^2 / 2
                let radial = 0.5 * radius * radius * bessel_j(m + 1, z).powi(2);
                let parities: &[Parity] = if m == 0 {
                    &[Parity::Cos]
                } else {
                    &[Parity::Cos, Parity::Sin]
                };
                let ang = if m == 0 { 2.0 * PI } else { PI };
                for &parity in parities {
                    all.push(Mode {
                        index: ModeIndex::Disk { m, k, parity },
                        eigenvalue: w * w,
                        wavenumber: w,
                        norm: 1.0 / (radial * ang).sqrt(),
                    });
                }
            }
            m += 1;
        }
        if all.len() >= n {
            let mut modes = order_modes(all);
            modes.truncate(n);
            return modes;
        }
        limit *= 1.5;
    }
}

fn sphere_modes(radius: f64, include_constant: bool, n: usize) -> Vec<Mode> {
    let mut modes = Vec::with_capacity(n);
    let mut l = if include_constant { 0u32 } else { 1 };
    while modes.len() < n {
        let ev = (l as f64) * (l as f64 + 1.0) / (radius * radius);
        for m in -(l as i32)..=(l as i32) {
            if modes.len() == n {
                break;
            }
            modes.push(Mode {
                index: ModeIndex::Sphere { l, m },
                eigenvalue: ev,
                wavenumber: ev.sqrt(),
                norm: 1.0 / radius,
            });
        }
        l += 1;
    }
    modes
}

/// Weighted points approximating integrals over a domain.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `int f dOmega` approximated on this grid.
    pub fn integrate(&self, f: impl Fn(Point) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(*p))
            .sum()
    }
}

/// Tensor Gauss-Legendre rules on intervals and rectangles; Gauss-Legendre in
/// radius (with the `r dr` weight) times a uniform angular rule on the disk;
/// Gauss-Legendre in `cos theta` times a uniform longitude rule on the sphere.
pub fn quadrature_grid(domain: &Domain, resolution: usize) -> Result<QuadratureGrid> {
    domain.validate()?;
    if resolution < 2 {
        return Err(Error::param("resolution", "must be at least 2"));
    }
    let (gx, gw) = gauss_legendre(resolution);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match *domain {
        Domain::Interval { half_length } => {
            for (x, w) in gx.iter().zip(&gw) {
                points.push(Point::on_line(half_length * x));
                weights.push(half_length * w);
            }
        }
        Domain::Rectangle {
            half_length_x,
            half_length_y,
        } => {
            for (x, wx) in gx.iter().zip(&gw) {
                for (y, wy) in gx.iter().zip(&gw) {
                    points.push(Point::new(half_length_x * x, half_length_y * y));
                    weights.push(half_length_x * half_length_y * wx * wy);
                }
            }
        }
        Domain::Disk { radius } => {
            let n_ang = 2 * resolution;
            let dtheta = 2.0 * PI / n_ang as f64;
            for (x, w) in gx.iter().zip(&gw) {
                let r = 0.5 * radius * (x + 1.0);
                let wr = 0.5 * radius * w * r;
                for j in 0..n_ang {
                    let th = j as f64 * dtheta;
                    points.push(Point::new(r * th.cos(), r * th.sin()));
                    weights.push(wr * dtheta);
                }
            }
        }
        Domain::Sphere { radius, .. } => {
            let n_ang = 2 * resolution;
            let dphi = 2.0 * PI / n_ang as f64;
            for (x, w) in gx.iter().zip(&gw) {
                let theta = x.acos();
                for j in 0..n_ang {
                    points.push(Point::angles(theta, j as f64 * dphi));
                    weights.push(radius * radius * w * dphi);
                }
            }
        }
    }
    Ok(QuadratureGrid { points, weights })
}

/// Gram matrix `G[m, n] = int psi_m psi_n dOmega` on a quadrature grid.
pub fn gram_matrix(basis: &BasisSet, grid: &QuadratureGrid) -> DMatrix<f64> {
    let n = basis.len();
    let mut gram = DMatrix::zeros(n, n);
    let mut row = vec![0.0; n];
    for (p, w) in grid.points.iter().zip(&grid.weights) {
        basis.eval_point_into(*p, &mut row);
        for j in 0..n {
            let wj = w * row[j];
            if wj == 0.0 {
                continue;
            }
            for i in j..n {
                gram[(i, j)] += wj * row[i];
            }
        }
    }
    for j in 0..n {
        for i in (j + 1)..n {
            gram[(j, i)] = gram[(i, j)];
        }
    }
    gram
}

/// Largest entrywise deviation of the Gram matrix from the identity.
pub fn orthonormality_error(basis: &BasisSet, resolution: usize) -> Result<f64> {
    let grid = quadrature_grid(basis.domain(), resolution)?;
    let gram = gram_matrix(basis, &grid);
    let n = basis.len();
    Ok((0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (gram[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max))
}

/// Relative residual `||(-Laplace_h psi) - lambda psi|| / ||psi||` of a
/// second-order finite-difference Laplacian with spacing `h`, sampled on a
/// uniform interior grid. Supported on intervals and rectangles.
pub fn fd_eigen_residual(basis: &BasisSet, mode: usize, h: f64) -> Result<f64> {
    if mode >= basis.len() {
        return Err(Error::param("mode", "index out of range"));
    }
    Ok(fd_eigen_residuals(basis, h)?[mode])
}

/// [`fd_eigen_residual`] for every mode, from a single evaluation of the
/// basis on the stencil grid.
pub fn fd_eigen_residuals(basis: &BasisSet, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::param("h", "grid spacing must be > 0"));
    }
    let (nx, ny, x0, y0) = match *basis.domain() {
        Domain::Interval { half_length } => ((2.0 * half_length / h).round() as usize, 0, -half_length, 0.0),
        Domain::Rectangle {
            half_length_x,
            half_length_y,
        } => (
            (2.0 * half_length_x / h).round() as usize,
            (2.0 * half_length_y / h).round() as usize,
            -half_length_x,
            -half_length_y,
        ),
        _ => {
            return Err(Error::Unsupported(
                "finite-difference residual is defined on intervals and rectangles".into(),
            ))
        }
    };
    let n = basis.len();
    // values on the closed grid, boundary nodes included; row-major in x
    let cols = ny + 1;
    let mut values = vec![0.0; (nx + 1) * cols * n];
    for i in 0..=nx {
        for j in 0..cols {
            let p = Point::new(x0 + i as f64 * h, y0 + j as f64 * h);
            let at = (i * cols + j) * n;
            basis.eval_point_into(p, &mut values[at..at + n]);
        }
    }
    let v = |i: usize, j: usize, m: usize| values[(i * cols + j) * n + m];
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    let inner_y: Vec<usize> = if ny == 0 { vec![0] } else { (1..ny).collect() };
    for i in 1..nx {
        for &j in &inner_y {
            for m in 0..n {
                let c = v(i, j, m);
                let mut lap = v(i + 1, j, m) - 2.0 * c + v(i - 1, j, m);
                if ny > 0 {
                    lap += v(i, j + 1, m) - 2.0 * c + v(i, j - 1, m);
                }
                let r = -lap / (h * h) - basis.modes[m].eigenvalue * c;
                num[m] += r * r;
                den[m] += c * c;
            }
        }
    }
    Ok(num.iter().zip(&den).map(|(a, b)| (a / b).sqrt()).collect())
}
