//! Receiver collection efficiency: log-negative Weibull (beam wander only)
//! and its combination with truncated log-normal beam-spot distortion.

use serde::Serialize;

use crate::distribution::EfficiencyDistribution;
use crate::error::{check_positive, Error, Result};
use crate::quadrature::{integrate_pieces, Tolerance};
use crate::special::{bessel_i0e, bessel_i1e, normal_cdf};

/// The radial integral stops at this many wander standard deviations.
pub const RADIAL_CUTOFF: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollectionParams {
    pub aperture_radius: f64,
    pub short_term: f64,
    pub wander_sigma: f64,
    pub scint_index: f64,
}

/// Parameters of the log-negative Weibull law: maximal capture `eta0`,
/// shape `l` and scale `r_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeibullParams {
    pub eta0: f64,
    pub shape: f64,
    pub scale: f64,
}

impl WeibullParams {
    /// Mean capture for a beam displaced by `r` from the aperture center.
    pub fn conditional_mean(&self, r: f64) -> f64 {
        self.eta0 * (-(r / self.scale).powf(self.shape)).exp()
    }
}

pub fn weibull_params(aperture_radius: f64, short_term: f64) -> Result<WeibullParams> {
    check_positive("aperture_radius", aperture_radius)?;
    check_positive("short_term_radius", short_term)?;
    let ratio = aperture_radius * aperture_radius / (short_term * short_term);
    let x = 4.0 * ratio;
    let eta0 = -(-2.0 * ratio).exp_m1();
    // 1 - exp(-x) I0(x), with exp(-x) I0(x) from the scaled Bessel function.
    let denom = 1.0 - bessel_i0e(x);
    let log_term = (2.0 * eta0 / denom).ln();
    if !(denom > 0.0) || !(log_term > 0.0) {
        return Err(Error::NumericFailure(format!(
            "Weibull parameters undefined for r/W = {}",
            ratio.sqrt()
        )));
    }
    let shape = 2.0 * x * bessel_i1e(x) / denom / log_term;
    let scale = aperture_radius * log_term.powf(-1.0 / shape);
    Ok(WeibullParams { eta0, shape, scale })
}

/// Collection efficiency under beam wander alone.
pub fn weibull_pdf(params: &CollectionParams) -> Result<EfficiencyDistribution> {
    let w = weibull_params(params.aperture_radius, params.short_term)?;
    let sigma = params.wander_sigma;
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "wander_sigma",
            value: sigma,
            expected: "a value >= 0",
        });
    }
    if sigma == 0.0 {
        return Ok(EfficiencyDistribution::PointMass(w.eta0));
    }
    let two_sigma2 = 2.0 * sigma * sigma;
    let r2 = w.scale * w.scale;
    let exponent = 2.0 / w.shape;
    let cdf = |eta: f64| {
        if eta <= 0.0 {
            return 0.0;
        }
        if eta >= w.eta0 {
            return 1.0;
        }
        let log = (w.eta0 / eta).ln();
        (-r2 * log.powf(exponent) / two_sigma2).exp()
    };
    let density = |eta: f64| {
        if eta <= 0.0 || eta >= w.eta0 {
            return 0.0;
        }
        let log = (w.eta0 / eta).ln();
        r2 / (sigma * sigma * eta * w.shape)
            * log.powf(exponent - 1.0)
            * (-r2 * log.powf(exponent) / two_sigma2).exp()
    };
    EfficiencyDistribution::from_cdf(w.eta0, cdf, Some(density))
}

/// Conditional law of the collection efficiency at wander radius `r`: a
/// log-normal with mean `m(r)`, truncated to `η ≤ 1`.
struct Conditional {
    weibull: WeibullParams,
    /// Log-normal standard deviation, √ln(1 + σI²).
    sigma: f64,
}

impl Conditional {
    /// `μ(r) = -ln m(r) + σ²/2`.
    fn mu(&self, r: f64) -> f64 {
        -self.weibull.eta0.ln()
            + (r / self.weibull.scale).powf(self.weibull.shape)
            + 0.5 * self.sigma * self.sigma
    }

    fn standardized(&self, eta: f64, r: f64) -> (f64, f64) {
        let mu = self.mu(r);
        ((eta.ln() + mu) / self.sigma, normal_cdf(mu / self.sigma))
    }

    fn cdf(&self, eta: f64, r: f64) -> f64 {
        let (z, truncation) = self.standardized(eta, r);
        normal_cdf(z) / truncation
    }

    fn density(&self, eta: f64, r: f64) -> f64 {
        let (z, truncation) = self.standardized(eta, r);
        (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * eta * self.sigma * truncation)
    }

    /// Radius at which `η` sits at the median of the conditional law; the
    /// integrand over `r` changes fastest there when σ is small.
    fn median_radius(&self, eta: f64) -> Option<f64> {
        let w = &self.weibull;
        let x = (w.eta0 / eta).ln() - 0.5 * self.sigma * self.sigma;
        (x > 0.0).then(|| w.scale * x.powf(1.0 / w.shape))
    }
}

/// Collection efficiency from the law of total probability over the
/// Rayleigh-distributed beam displacement, with a truncated log-normal
/// conditional law. Without scintillation this is the Weibull law.
pub fn general_pdf(params: &CollectionParams) -> Result<EfficiencyDistribution> {
    let w = weibull_params(params.aperture_radius, params.short_term)?;
    let sigma_w = params.wander_sigma;
    if !(params.scint_index >= 0.0) || !(sigma_w >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "scint_index",
            value: params.scint_index,
            expected: "scintillation index and wander >= 0",
        });
    }
    let sigma = params.scint_index.ln_1p().sqrt();
    if sigma == 0.0 {
        return weibull_pdf(params);
    }
    let cond = Conditional { weibull: w, sigma };
    if sigma_w == 0.0 {
        return EfficiencyDistribution::from_cdf(
            1.0,
            |eta| {
                if eta <= 0.0 {
                    0.0
                } else {
                    cond.cdf(eta.min(1.0), 0.0)
                }
            },
            Some(|eta: f64| {
                if eta <= 0.0 || eta > 1.0 {
                    0.0
                } else {
                    cond.density(eta, 0.0)
                }
            }),
        );
    }
    let r_max = RADIAL_CUTOFF * sigma_w;
    let rayleigh = |r: f64| r / (sigma_w * sigma_w) * (-r * r / (2.0 * sigma_w * sigma_w)).exp();
    let tol = Tolerance {
        rtol: 1e-9,
        atol: 1e-12,
        max_evaluations: 1 << 14,
    };
    let over_radius = |eta: f64, f: &dyn Fn(f64) -> f64| -> f64 {
        let mut breaks = vec![0.0];
        breaks.extend(cond.median_radius(eta).filter(|&r| r < r_max));
        breaks.push(r_max);
        integrate_pieces(|r| rayleigh(r) * f(r), &breaks, tol).map_or(f64::NAN, |e| e.value)
    };
    let cdf = |eta: f64| {
        if eta <= 0.0 {
            0.0
        } else {
            let eta = eta.min(1.0);
            over_radius(eta, &|r| cond.cdf(eta, r))
        }
    };
    let density = |eta: f64| {
        if eta <= 0.0 || eta > 1.0 {
            0.0
        } else {
            over_radius(eta, &|r| cond.density(eta, r))
        }
    };
    let dist = EfficiencyDistribution::from_cdf(1.0, cdf, Some(density))?;
    log::debug!(
        "collection distribution renormalized from mass {:.6}",
        dist.raw_mass()
    );
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn full_capture_limit() {
        let w = weibull_params(10.0, 0.1).unwrap();
        assert_relative_eq!(w.eta0, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn half_capture_closed_form() {
        // 2 r^2 / W^2 = ln 2 gives η0 = 1/2.
        let w_st = 0.3;
        let r = w_st * (std::f64::consts::LN_2 / 2.0).sqrt();
        let w = weibull_params(r, w_st).unwrap();
        assert_relative_eq!(w.eta0, 0.5, max_relative = 1e-14);
    }

    #[test]
    fn no_wander_is_point_mass() {
        let p = CollectionParams {
            aperture_radius: 0.2,
            short_term: 0.3,
            wander_sigma: 0.0,
            scint_index: 0.1,
        };
        let w = weibull_params(0.2, 0.3).unwrap();
        assert_eq!(
            weibull_pdf(&p).unwrap(),
            EfficiencyDistribution::PointMass(w.eta0)
        );
    }

    #[test]
    fn weibull_support_and_mass() {
        let p = CollectionParams {
            aperture_radius: 0.2,
            short_term: 0.3,
            wander_sigma: 0.05,
            scint_index: 0.0,
        };
        let d = weibull_pdf(&p).unwrap();
        let w = weibull_params(0.2, 0.3).unwrap();
        assert_relative_eq!(d.cap(), w.eta0);
        assert_relative_eq!(d.raw_mass(), 1.0, max_relative = 1e-12);
        assert!(d.mean() < w.eta0);
    }

    #[test]
    fn general_without_scintillation_is_weibull() {
        let p = CollectionParams {
            aperture_radius: 0.2,
            short_term: 0.3,
            wander_sigma: 0.05,
            scint_index: 0.0,
        };
        assert_eq!(general_pdf(&p).unwrap(), weibull_pdf(&p).unwrap());
    }
}
