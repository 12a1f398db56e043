//! Stationary covariance kernels for the driving noise and their isotropic
//! spectral densities.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::basis::BasisSet;
use crate::error::{ensure_positive, Error, Result};
use crate::special::ln_bessel_k;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    Matern {
        nu: f64,
        lengthscale: f64,
        magnitude: f64,
    },
    SquaredExponential {
        lengthscale: f64,
        magnitude: f64,
    },
}

impl Kernel {
    pub fn matern(nu: f64, lengthscale: f64, magnitude: f64) -> Self {
        Kernel::Matern {
            nu,
            lengthscale,
            magnitude,
        }
    }

    pub fn squared_exponential(lengthscale: f64, magnitude: f64) -> Self {
        Kernel::SquaredExponential {
            lengthscale,
            magnitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Matern {
                nu,
                lengthscale,
                magnitude,
            } => {
                ensure_positive("nu", nu)?;
                ensure_positive("lengthscale", lengthscale)?;
                ensure_positive("magnitude", magnitude)
            }
            Kernel::SquaredExponential {
                lengthscale,
                magnitude,
            } => {
                ensure_positive("lengthscale", lengthscale)?;
                ensure_positive("magnitude", magnitude)
            }
        }
    }

    pub fn lengthscale(&self) -> f64 {
        match *self {
            Kernel::Matern { lengthscale, .. } | Kernel::SquaredExponential { lengthscale, .. } => {
                lengthscale
            }
        }
    }

    pub fn magnitude(&self) -> f64 {
        match *self {
            Kernel::Matern { magnitude, .. } | Kernel::SquaredExponential { magnitude, .. } => {
                magnitude
            }
        }
    }

    pub fn nu(&self) -> Option<f64> {
        match *self {
            Kernel::Matern { nu, .. } => Some(nu),
            Kernel::SquaredExponential { .. } => None,
        }
    }

    pub fn set_lengthscale(&mut self, value: f64) {
        match self {
            Kernel::Matern { lengthscale, .. } | Kernel::SquaredExponential { lengthscale, .. } => {
                *lengthscale = value
            }
        }
    }

    pub fn set_magnitude(&mut self, value: f64) {
        match self {
            Kernel::Matern { magnitude, .. } | Kernel::SquaredExponential { magnitude, .. } => {
                *magnitude = value
            }
        }
    }

    pub fn set_nu(&mut self, value: f64) {
        if let Kernel::Matern { nu, .. } = self {
            *nu = value;
        }
    }

    /// Copy with the magnitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut k = *self;
        k.set_magnitude(self.magnitude() * factor);
        k
    }

    /// `C(r)` at distance `r >= 0`.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if r.is_nan() || r < 0.0 {
            return Err(Error::param("r", format!("distance must be >= 0, got {r}")));
        }
        Ok(self.eval_unchecked(r))
    }

    pub(crate) fn eval_unchecked(&self, r: f64) -> f64 {
        match *self {
            Kernel::Matern {
                nu,
                lengthscale,
                magnitude,
            } => {
                let s2 = magnitude * magnitude;
                let z = r / lengthscale;
                if nu == 0.5 {
                    s2 * (-z).exp()
                } else if nu == 1.5 {
                    let a = 3f64.sqrt() * z;
                    s2 * (1.0 + a) * (-a).exp()
                } else if nu == 2.5 {
                    let a = 5f64.sqrt() * z;
                    s2 * (1.0 + a + a * a / 3.0) * (-a).exp()
                } else {
                    matern_bessel_form(nu, lengthscale, magnitude, r)
                }
            }
            Kernel::SquaredExponential {
                lengthscale,
                magnitude,
            } => magnitude * magnitude * (-0.5 * (r / lengthscale).powi(2)).exp(),
        }
    }

    /// Isotropic `dim`-dimensional Fourier transform of `C` at radial
    /// frequency `w`, with the convention `C(r) = (2 pi)^-d int S(w) e^{i w.x} dw`.
    pub fn spectral_density(&self, w: f64, dim: usize) -> Result<f64> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Unsupported(format!(
                "spectral density in {dim} dimensions"
            )));
        }
        if w.is_nan() || w < 0.0 {
            return Err(Error::param("w", format!("frequency must be >= 0, got {w}")));
        }
        Ok(self.spectral_density_unchecked(w, dim))
    }

    pub(crate) fn spectral_density_unchecked(&self, w: f64, dim: usize) -> f64 {
        let d = dim as f64;
        match *self {
            Kernel::Matern {
                nu,
                lengthscale,
                magnitude,
            } => {
                let kappa2 = 2.0 * nu / (lengthscale * lengthscale);
                let ln_c = d * std::f64::consts::LN_2
                    + 0.5 * d * PI.ln()
                    + ln_gamma(nu + 0.5 * d)
                    - ln_gamma(nu)
                    + nu * kappa2.ln();
                let ln_s = 2.0 * magnitude.ln() + ln_c - (nu + 0.5 * d) * (kappa2 + w * w).ln();
                ln_s.exp()
            }
            Kernel::SquaredExponential {
                lengthscale,
                magnitude,
            } => {
                let l2 = lengthscale * lengthscale;
                let s = magnitude * magnitude * (2.0 * PI * l2).powf(0.5 * d) * (-0.5 * l2 * w * w).exp();
                // the Gaussian tail underflows long before it reaches zero
                s.max(f64::MIN_POSITIVE)
            }
        }
    }
}

/// Matérn covariance through its modified-Bessel form, valid for any `nu > 0`.
pub fn matern_bessel_form(nu: f64, lengthscale: f64, magnitude: f64, r: f64) -> f64 {
    let s2 = magnitude * magnitude;
    if r == 0.0 {
        return s2;
    }
    let z = (2.0 * nu).sqrt() * r / lengthscale;
    let ln_c = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * z.ln() + ln_bessel_k(nu, z);
    s2 * ln_c.exp()
}

/// Diagonal noise intensities `q_n = S(sqrt(lambda_n))` of a kernel in a
/// Laplacian eigenbasis.
pub fn project_noise(kernel: &Kernel, basis: &BasisSet) -> Result<Vec<f64>> {
    kernel.validate()?;
    let dim = basis.domain().spectral_dim();
    Ok(basis
        .modes()
        .iter()
        .map(|m| kernel.spectral_density_unchecked(m.wavenumber, dim))
        .collect())
}

/// `sum_n q_n psi_n(x) psi_n(x')`, the covariance implied by a projection.
pub fn reconstruct_covariance(q: &[f64], psi_x: &[f64], psi_y: &[f64]) -> f64 {
    q.iter()
        .zip(psi_x)
        .zip(psi_y)
        .map(|((q, a), b)| q * a * b)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{Domain, Point};

    #[test]
    fn exponential_special_case() {
        let k = Kernel::matern(0.5, 1.0, 1.0);
        assert!((k.eval(1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(k.eval(0.0).unwrap(), 1.0);
        assert!(k.eval(-0.1).is_err());
    }

    #[test]
    fn zero_distance_is_variance() {
        for k in [
            Kernel::matern(0.5, 0.3, 2.0),
            Kernel::matern(1.5, 0.1, 25.0),
            Kernel::matern(2.5, 3.0, 0.5),
            Kernel::matern(0.8, 1.0, 1.7),
            Kernel::squared_exponential(0.5, 2.0),
        ] {
            let s = k.magnitude();
            assert!((k.eval(0.0).unwrap() - s * s).abs() < 1e-12 * s * s);
        }
    }

    #[test]
    fn general_form_matches_half_integer_paths() {
        for &(nu, r) in &[(0.5, 0.37), (1.5, 0.1), (2.5, 2.2)] {
            let fast = Kernel::matern(nu, 0.7, 3.0).eval(r).unwrap();
            let general = matern_bessel_form(nu, 0.7, 3.0, r);
            assert!((fast - general).abs() < 1e-12 * fast, "nu={nu}");
        }
    }

    #[test]
    fn general_nu_is_continuous_at_origin() {
        let k = Kernel::matern(0.8, 1.0, 1.0);
        let near = k.eval(1e-9).unwrap();
        assert!((near - 1.0).abs() < 1e-5);
        assert!(near < 1.0);
    }

    #[test]
    fn exponential_spectral_density_at_zero() {
        let k = Kernel::matern(0.5, 1.0, 1.0);
        assert!((k.spectral_density(0.0, 1).unwrap() - 2.0).abs() < 1e-14);
        assert!(k.spectral_density(1.0, 3).is_err());
        assert!(k.spectral_density(-1.0, 1).is_err());
    }

    #[test]
    fn projection_is_spectral_evaluation() {
        let basis = BasisSet::build(&Domain::interval(PI / 2.0), 3).unwrap();
        let k = Kernel::matern(0.5, 1.0, 1.0);
        let q = project_noise(&k, &basis).unwrap();
        assert!((q[0] - k.spectral_density(1.0, 1).unwrap()).abs() < 1e-15);
        assert!(q[0] > q[1] && q[1] > q[2]);
    }

    #[test]
    fn reconstruction_at_a_pair() {
        let basis = BasisSet::build(&Domain::interval(1.0), 16).unwrap();
        let k = Kernel::matern(1.5, 0.3, 1.0);
        let q = project_noise(&k, &basis).unwrap();
        let a = basis.eval_point(Point::on_line(0.0)).unwrap();
        let b = basis.eval_point(Point::on_line(0.1)).unwrap();
        let approx = reconstruct_covariance(&q, &a, &b);
        let exact = k.eval(0.1).unwrap();
        assert!((approx - exact).abs() < 0.05 * exact, "{approx} vs {exact}");
    }
}
