//! Special functions that the channel models need beyond what `statrs`
//! already provides: exponentially scaled modified Bessel functions, the
//! Gauss hypergeometric series and Gauss–Legendre rules.

use crate::error::{Error, Result};

pub use statrs::function::erf::{erf, erfc};
pub use statrs::function::gamma::ln_gamma;

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

const SERIES_LIMIT: f64 = 50.0;

/// `exp(-x) I_n(x)` for `n` in {0, 1} and `x >= 0`.
fn scaled_bessel_i(order: u32, x: f64) -> f64 {
    debug_assert!(order <= 1);
    if x < 0.0 {
        // I_0 is even, I_1 is odd; the scaling uses |x|.
        let v = scaled_bessel_i(order, -x);
        return if order == 0 { v } else { -v };
    }
    if x == 0.0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    if x < SERIES_LIMIT {
        // All terms are positive, so the power series is accurate to
        // rounding for every x; the exp(-x) factor keeps it bounded.
        let half = 0.5 * x;
        let q = half * half;
        let mut term = (-x).exp() * if order == 0 { 1.0 } else { half };
        let mut sum = term;
        let mut k = 0.0_f64;
        loop {
            k += 1.0;
            term *= q / (k * (k + order as f64));
            sum += term;
            if k > half && term < 1e-17 * sum {
                break;
            }
        }
        sum
    } else {
        let mu = 4.0 * (order * order) as f64;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0_f64;
        loop {
            let odd = 2.0 * k - 1.0;
            let next = -term * (mu - odd * odd) / (k * 8.0 * x);
            if next.abs() >= term.abs() || next.abs() < 1e-17 {
                sum += next;
                break;
            }
            sum += next;
            term = next;
            k += 1.0;
        }
        sum / (2.0 * std::f64::consts::PI * x).sqrt()
    }
}

/// Exponentially scaled modified Bessel function `exp(-|x|) I_0(x)`.
pub fn bessel_i0e(x: f64) -> f64 {
    scaled_bessel_i(0, x)
}

/// Exponentially scaled modified Bessel function `exp(-|x|) I_1(x)`.
pub fn bessel_i1e(x: f64) -> f64 {
    scaled_bessel_i(1, x)
}

/// Gauss hypergeometric function `2F1(a, b; c; z)` by its power series,
/// valid for `|z| < 1`.
pub fn hyp2f1(a: f64, b: f64, c: f64, z: f64) -> Result<f64> {
    if z.abs() >= 1.0 {
        return Err(Error::NumericFailure(format!(
            "2F1 series requires |z| < 1, got {z}"
        )));
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 0..100_000 {
        let k = k as f64;
        term *= (a + k) * (b + k) / ((c + k) * (k + 1.0)) * z;
        sum += term;
        if term.abs() <= 1e-12 * sum.abs().max(1e-300) {
            return Ok(sum);
        }
    }
    Err(Error::NumericFailure(
        "2F1 series did not converge".to_string(),
    ))
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut derivative = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn_1 = if n == 1 { 1.0 } else { p0 };
            derivative = nf * (x * pn - pn_1) / (x * x - 1.0);
            let dx = pn / derivative;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * derivative * derivative);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
