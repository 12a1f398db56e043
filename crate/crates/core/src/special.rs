//! Special functions used by the spatial bases and the covariance kernels.
//!
//! Everything here is self-contained: Bessel functions of the first kind are
//! evaluated from their periodic integral representation (where the
//! trapezoidal rule converges geometrically), the modified Bessel function of
//! the second kind from its `cosh` integral, and Gauss-Legendre rules by
//! Newton iteration on the three-term recurrence.

use std::f64::consts::PI;

/// Bessel function of the first kind `J_m(x)` for integer order `m >= 0`.
///
/// Uses `J_m(x) = (1/pi) \int_0^pi cos(m t - x sin t) dt`. The integrand is
/// the even half of a smooth `2 pi`-periodic function, so the trapezoidal
/// rule is exact up to aliasing terms of order `J_{K-m}(x)` which vanish
/// once the node count `K` exceeds `|x| + m` by a margin.
pub fn bessel_j(m: u32, x: f64) -> f64 {
    if x == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    let (x, sign) = if x < 0.0 && m % 2 == 1 {
        (-x, -1.0)
    } else {
        (x.abs(), 1.0)
    };
    let mf = m as f64;
    let intervals = (24.0 + 0.5 * (x + mf) + 2.0 * (x + mf).cbrt()).ceil() as usize * 2;
    let h = PI / intervals as f64;
    let g = |t: f64| (mf * t - x * t.sin()).cos();
    let mut sum = 0.5 * (g(0.0) + g(PI));
    for i in 1..intervals {
        sum += g(i as f64 * h);
    }
    sign * sum / intervals as f64
}

/// First `count` positive zeros of `J_m`, located by a sign-change scan
/// followed by bisection down to a relative width of `1e-14`.
pub fn bessel_j_zeros(m: u32, count: usize) -> Vec<f64> {
    let mut zeros = Vec::with_capacity(count);
    // J_m is positive on (0, j_{m,1}) and j_{m,1} > m; consecutive zeros are
    // more than 2.4 apart, so a 0.25 scan step cannot skip a root.
    let step = 0.25;
    let mut lo = (m as f64).max(step);
    let mut f_lo = bessel_j(m, lo);
    while zeros.len() < count {
        let hi = lo + step;
        let f_hi = bessel_j(m, hi);
        if f_lo == 0.0 {
            zeros.push(lo);
        } else if f_lo * f_hi < 0.0 {
            zeros.push(bisect(|x| bessel_j(m, x), lo, hi, f_lo));
        }
        lo = hi;
        f_lo = f_hi;
    }
    zeros
}

/// All positive zeros of `J_m` strictly below `limit`.
pub fn bessel_j_zeros_below(m: u32, limit: f64) -> Vec<f64> {
    let mut zeros = Vec::new();
    let step = 0.25;
    let mut lo = (m as f64).max(step);
    if lo >= limit {
        return zeros;
    }
    let mut f_lo = bessel_j(m, lo);
    while lo < limit {
        let hi = lo + step;
        let f_hi = bessel_j(m, hi);
        if f_lo * f_hi < 0.0 {
            let z = bisect(|x| bessel_j(m, x), lo, hi, f_lo);
            if z < limit {
                zeros.push(z);
            }
        }
        lo = hi;
        f_lo = f_hi;
    }
    zeros
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut f_lo: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-14 * hi || mid == lo || mid == hi {
            return mid;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if f_lo * f_mid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exponentially scaled modified Bessel function of the second kind,
/// `e^x K_nu(x)`, for real order `nu` and `x > 0`.
///
/// Evaluates `\int_0^inf exp(-x (cosh t - 1)) cosh(nu t) dt` with the
/// trapezoidal rule; the integrand is analytic and decays doubly
/// exponentially, so a step proportional to its width is enough.
pub fn bessel_k_scaled(nu: f64, x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let nu = nu.abs();
    let h = (0.5 / x.sqrt()).min(0.1);
    let log_g = |t: f64| -x * (t.cosh() - 1.0) + log_cosh(nu * t);
    let mut sum = 0.5 * log_g(0.0).exp();
    let mut peak = log_g(0.0);
    let mut i = 1usize;
    loop {
        let t = i as f64 * h;
        let lg = log_g(t);
        peak = peak.max(lg);
        sum += lg.exp();
        if lg < peak - 46.0 && t > 1.0 {
            break;
        }
        i += 1;
        if i > 1_000_000 {
            break;
        }
    }
    sum * h
}

/// Natural log of `K_nu(x)` for `x > 0`, safe against over- and underflow.
pub fn ln_bessel_k(nu: f64, x: f64) -> f64 {
    bessel_k_scaled(nu, x).ln() - x
}

fn log_cosh(y: f64) -> f64 {
    let a = y.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` with `n` points.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Orthonormalized associated Legendre values `K_lm P_l^m(cos theta)` for all
/// `0 <= m <= l <= l_max`, without the Condon-Shortley phase.
///
/// `K_lm = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!)`, so that
/// `K_lm P_l^m(cos theta) e^{i m phi}` is unit-norm on the unit sphere.
/// Indexing: `out[l * (l + 1) / 2 + m]`.
pub fn normalized_legendre(l_max: usize, theta: f64) -> Vec<f64> {
    let x = theta.cos();
    let s = theta.sin().abs();
    let len = (l_max + 1) * (l_max + 2) / 2;
    let idx = |l: usize, m: usize| l * (l + 1) / 2 + m;
    let mut p = vec![0.0; len];
    p[0] = (1.0 / (4.0 * PI)).sqrt();
    for m in 1..=l_max {
        let mf = m as f64;
        p[idx(m, m)] = ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * p[idx(m - 1, m - 1)];
    }
    for m in 0..l_max {
        p[idx(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * x * p[idx(m, m)];
    }
    for m in 0..=l_max {
        let mf = m as f64;
        for l in (m + 2)..=l_max {
            let lf = l as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                .sqrt();
            p[idx(l, m)] = a * (x * p[idx(l - 1, m)] - b * p[idx(l - 2, m)]);
        }
    }
    p
}
