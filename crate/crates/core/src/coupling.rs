//! Single-mode fiber coupling: diffraction-limited overlap, scintillation
//! loss, annular Zernike wavefront statistics, adaptive-optics attenuation
//! and the resulting coupling-efficiency distribution.

use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::distribution::EfficiencyDistribution;
use crate::error::{check_positive, Error, Result};
use crate::quadrature::{integrate, integrate_pieces, Tolerance};
use crate::special::{hyp2f1, ln_gamma};

/// Receiver aperture as seen by the fiber coupling optics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApertureSpec {
    pub diameter: f64,
    pub obstruction: f64,
    /// Coupling geometry parameter β.
    pub beta: f64,
}

impl ApertureSpec {
    pub fn new(diameter: f64, obstruction: f64, beta: f64) -> Result<Self> {
        check_positive("d_rx", diameter)?;
        check_positive("beta", beta)?;
        if !(0.0..1.0).contains(&obstruction) {
            return Err(Error::InvalidParameter {
                name: "alpha_obs",
                value: obstruction,
                expected: "a ratio in [0, 1)",
            });
        }
        Ok(Self {
            diameter,
            obstruction,
            beta,
        })
    }

    /// β from the fiber mode-field diameter and the coupling focal length.
    pub fn beta_from_fiber(diameter: f64, wavelength: f64, mfd: f64, focal_length: f64) -> f64 {
        PI * diameter / (4.0 * wavelength) * mfd / focal_length
    }
}

/// Open-loop transfer function reading for the AO integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopTransfer {
    /// Laplace variable on the imaginary axis, s = i 2π ν.
    #[default]
    Standard,
    /// The exponentials evaluated at the real frequency ν.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoConfig {
    /// Highest radial order corrected (0 disables correction).
    pub max_corrected_order: u32,
    pub gain: f64,
    pub integration_time: f64,
    pub delay: f64,
    /// Highest radial order kept in the wavefront decomposition.
    pub max_order: u32,
    pub loop_transfer: LoopTransfer,
}

impl AoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_corrected_order > self.max_order || self.max_order == 0 {
            return Err(Error::InvalidParameter {
                name: "n_ao",
                value: self.max_corrected_order as f64,
                expected: "0 <= N_AO <= N_max with N_max >= 1",
            });
        }
        if !(self.gain >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "k_i",
                value: self.gain,
                expected: "a gain >= 0",
            });
        }
        check_positive("t_int", self.integration_time)?;
        check_positive("tau", self.delay)?;
        Ok(())
    }
}

/// Statistics of one radial order of the annular Zernike expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZernikeOrder {
    pub n: u32,
    /// Per-mode coefficient variance ⟨b²⟩ in rad².
    pub variance: f64,
    pub multiplicity: u32,
    /// AO attenuation factor γ².
    pub attenuation: f64,
}

impl ZernikeOrder {
    pub fn residual(&self) -> f64 {
        self.attenuation * self.variance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZernikeSpectrum {
    pub orders: Vec<ZernikeOrder>,
    pub max_corrected_order: u32,
}

/// Maximum coupling efficiency without turbulence for an obstructed pupil.
pub fn eta0_max(aperture: &ApertureSpec) -> f64 {
    let b = aperture.beta;
    let a = aperture.obstruction;
    let num = (-b * b).exp() - (-b * b * a * a).exp();
    let frac = num / (b * (1.0 - a * a).sqrt());
    2.0 * frac * frac
}

/// Scintillation factor η_χ.
pub fn eta_chi(log_amp_var: f64) -> f64 {
    (-log_amp_var).exp()
}

/// Per-mode annular Zernike variance of radial order `n` in units of
/// `(D/r0)^{5/3}`.
pub fn normalized_zernike_variance(n: u32, obstruction: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            value: 0.0,
            expected: "radial order >= 1 (piston excluded)",
        });
    }
    let nf = n as f64;
    let a2 = obstruction * obstruction;
    let a2n1 = a2.powi(n as i32 + 1);
    let lg_n = ln_gamma(nf - 5.0 / 6.0);
    let lg_1776 = ln_gamma(17.0 / 6.0);
    let prefactor = 0.023 * (nf + 1.0) * PI.powf(8.0 / 3.0)
        / (2f64.powf(5.0 / 3.0) * (1.0 - a2) * (1.0 - a2n1));
    let first = (1.0 + obstruction.powf(2.0 * nf + 17.0 / 3.0))
        * (lg_n + ln_gamma(14.0 / 3.0) - 2.0 * lg_1776 - ln_gamma(nf + 23.0 / 6.0)).exp();
    let second = if a2n1 > 0.0 {
        2.0 * a2n1
            * (lg_n - lg_1776 - ln_gamma(nf + 2.0)).exp()
            * hyp2f1(nf - 5.0 / 6.0, -11.0 / 6.0, nf + 2.0, a2)?
    } else {
        0.0
    };
    Ok(prefactor * (first - second))
}

/// Per-order annular Zernike variances for orders `1..=max_order`, with
/// attenuation left at one.
pub fn zernike_variances(
    d_rx: f64,
    r0: f64,
    obstruction: f64,
    max_order: u32,
) -> Result<ZernikeSpectrum> {
    check_positive("d_rx", d_rx)?;
    if !(r0 > 0.0) {
        return Err(Error::InvalidParameter {
            name: "r0",
            value: r0,
            expected: "a Fried parameter > 0",
        });
    }
    let scale = if r0.is_infinite() {
        0.0
    } else {
        (d_rx / r0).powf(5.0 / 3.0)
    };
    let orders = (1..=max_order)
        .map(|n| {
            Ok(ZernikeOrder {
                n,
                variance: scale * normalized_zernike_variance(n, obstruction)?,
                multiplicity: n + 1,
                attenuation: 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ZernikeSpectrum {
        orders,
        max_corrected_order: 0,
    })
}

// 1 - exp(-x) without cancellation for small |x|.
fn one_minus_exp_neg(x: Complex64) -> Complex64 {
    if x.norm() < 1e-3 {
        x * (1.0 - x / 2.0 * (1.0 - x / 3.0 * (1.0 - x / 4.0)))
    } else {
        1.0 - (-x).exp()
    }
}

/// Squared modulus of the error transfer function 1 / (1 + G).
pub fn error_transfer_sq(ao: &AoConfig, nu: f64) -> f64 {
    if nu == 0.0 {
        return 0.0;
    }
    let s = match ao.loop_transfer {
        LoopTransfer::Standard => Complex64::new(0.0, 2.0 * PI * nu),
        LoopTransfer::Literal => Complex64::new(nu, 0.0),
    };
    let ts = s * ao.integration_time;
    let g = ao.gain * (-s * ao.delay).exp() * one_minus_exp_neg(ts) / (ts * ts);
    let eps = 1.0 / (1.0 + g);
    eps.norm_sqr()
}

/// Temporal PSD of radial order `n`, continuous at the cut-off `nu_c`.
fn temporal_psd(n: u32, nu: f64, nu_c: f64) -> f64 {
    let low = if n == 1 { nu_c.powf(-2.0 / 3.0) } else { 1.0 };
    if nu <= nu_c {
        if n == 1 {
            nu.powf(-2.0 / 3.0)
        } else {
            1.0
        }
    } else {
        low * (nu / nu_c).powf(-17.0 / 3.0)
    }
}

/// Upper integration limit in units of the cut-off frequency.
const PSD_SPAN: f64 = 1e3;

/// AO attenuation factor γ² of radial order `n`.
pub fn ao_attenuation_order(ao: &AoConfig, n: u32, d_rx: f64, wind: f64) -> Result<f64> {
    if n > ao.max_corrected_order {
        return Ok(1.0);
    }
    if ao.gain == 0.0 {
        return Ok(1.0);
    }
    check_positive("wind", wind)?;
    let nu_c = 0.3 * (n as f64 + 1.0) * wind / d_rx;
    let tol = Tolerance::relative(1e-5);
    let tail_norm = (1.0 - PSD_SPAN.powf(-14.0 / 3.0)) * 3.0 / 14.0;
    let (low_num, low_den) = if n == 1 {
        // ν = w³ removes the ν^{-2/3} endpoint singularity.
        let est = integrate(
            |w| 3.0 * error_transfer_sq(ao, w * w * w),
            0.0,
            nu_c.cbrt(),
            tol,
        )?;
        (est.value, 3.0 * nu_c.cbrt())
    } else {
        let est = integrate(|nu| error_transfer_sq(ao, nu), 0.0, nu_c, tol)?;
        (est.value, nu_c)
    };
    let low = if n == 1 { nu_c.powf(-2.0 / 3.0) } else { 1.0 };
    let high_den = low * nu_c * tail_norm;
    let high_num = integrate_pieces(
        |nu| temporal_psd(n, nu, nu_c) * error_transfer_sq(ao, nu),
        &[nu_c, 10.0 * nu_c, 100.0 * nu_c, PSD_SPAN * nu_c],
        tol,
    )?;
    let ratio = (low_num + high_num.value) / (low_den + high_den);
    if ratio > 1.0 {
        // The loop amplifies this order; correcting it would be switched off.
        log::warn!("AO loop amplifies radial order {n} (gamma^2 = {ratio:.3}); clamped to 1");
    }
    Ok(ratio.clamp(0.0, 1.0))
}

/// Fills the attenuation factors of `spectrum` for the given AO loop.
pub fn ao_attenuation(
    spectrum: &mut ZernikeSpectrum,
    ao: &AoConfig,
    d_rx: f64,
    wind: f64,
) -> Result<()> {
    ao.validate()?;
    spectrum.max_corrected_order = ao.max_corrected_order;
    for order in spectrum.orders.iter_mut() {
        order.attenuation = ao_attenuation_order(ao, order.n, d_rx, wind)?;
    }
    Ok(())
}

/// How the corrected and uncorrected factors of ⟨η_φ⟩ are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaPhiMode {
    /// One product over all modes.
    #[default]
    Product,
    /// Corrected and uncorrected products added together.
    SumOfProducts,
}

/// Mean phase-coupling factor ⟨η_φ⟩.
pub fn mean_eta_phi(spectrum: &ZernikeSpectrum, mode: EtaPhiMode) -> f64 {
    let log_factor = |o: &ZernikeOrder, v: f64| -0.5 * o.multiplicity as f64 * (2.0 * v).ln_1p();
    match mode {
        EtaPhiMode::Product => spectrum
            .orders
            .iter()
            .map(|o| log_factor(o, o.residual()))
            .sum::<f64>()
            .exp(),
        EtaPhiMode::SumOfProducts => {
            let (corrected, free): (Vec<_>, Vec<_>) = spectrum
                .orders
                .iter()
                .partition(|o| o.n <= spectrum.max_corrected_order);
            let a: f64 = corrected.iter().map(|o| log_factor(o, o.residual())).sum();
            let b: f64 = free.iter().map(|o| log_factor(o, o.variance)).sum();
            a.exp() + b.exp()
        }
    }
}

/// Largest residual modal standard deviation in waves and whether it is
/// below the 0.05 wave Rayleigh threshold.
pub fn rayleigh_check(spectrum: &ZernikeSpectrum) -> (f64, bool) {
    let max = spectrum
        .orders
        .iter()
        .map(|o| o.residual().sqrt() / (2.0 * PI))
        .fold(0.0, f64::max);
    (max, max < 0.05)
}

/// Number of ξ-grid nodes of the residual-phase density.
pub const XI_POINTS: usize = 1024;

/// Density of the residual phase sum ξ = Σ γ² b², b Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualPhasePdf {
    pub grid: Vec<f64>,
    pub pdf: Vec<f64>,
    /// Cumulative distribution at the grid nodes.
    pub cdf: Vec<f64>,
    /// Total number of modes with non-zero residual.
    pub modes: u64,
    /// Σ m v, the exact mean.
    pub mean: f64,
    /// Σ 2 m v², the exact variance.
    pub variance: f64,
    /// ∫ pdf over the grid before normalization.
    pub raw_mass: f64,
}

/// Residual variances grouped as (variance, multiplicity).
fn residual_groups(spectrum: &ZernikeSpectrum) -> Vec<(f64, f64)> {
    spectrum
        .orders
        .iter()
        .filter(|o| o.residual() > 0.0)
        .map(|o| (o.residual(), o.multiplicity as f64))
        .collect()
}

/// log φ(u) for the characteristic function φ(u) = Π (1 - 2 i v u)^{-m/2}.
fn log_cf(groups: &[(f64, f64)], u: Complex64) -> Complex64 {
    groups
        .iter()
        .map(|&(v, m)| -0.5 * m * (1.0 - Complex64::new(0.0, 2.0 * v) * u).ln())
        .sum()
}

/// d log φ / d ln t along the ray u = t e^{-iθ}.
fn dlog_cf(groups: &[(f64, f64)], u: Complex64) -> Complex64 {
    groups
        .iter()
        .map(|&(v, m)| {
            let c = Complex64::new(0.0, 2.0 * v) * u;
            0.5 * m * c / (1.0 - c)
        })
        .sum()
}

/// Evaluates the density and distribution of ξ on `[0, mean + 10 std]`.
///
/// The inversion integrals are taken along the ray u = t e^{-iθ}, where φ is
/// analytic in the sector between the ray and the positive real axis and
/// e^{-iξu} decays. θ is the largest angle for which |φ| stays below 10⁴ on
/// the ray, which bounds cancellation. The density is (1/π) Re ∫ φ e^{-iξu} du
/// and the survival function follows from the same nodes as
/// 1/2 - θ/π + (1/π) ∫ Im(φ e^{-iξu}) dt/t, the rotated Gil-Pelaez form. Both
/// use the trapezoid rule in ln t with a step fine enough to resolve the
/// oscillation wherever the integrand is above 1e-16.
pub fn residual_phase_pdf(spectrum: &ZernikeSpectrum) -> Result<ResidualPhasePdf> {
    let groups = residual_groups(spectrum);
    if groups.is_empty() {
        return Err(Error::NumericFailure(
            "residual phase is identically zero".into(),
        ));
    }
    let modes: f64 = groups.iter().map(|g| g.1).sum();
    let mean: f64 = groups.iter().map(|&(v, m)| m * v).sum();
    let variance: f64 = groups.iter().map(|&(v, m)| 2.0 * m * v * v).sum();
    let xi_max = mean + 10.0 * variance.sqrt();
    // Work in units of xi_max.
    let scaled: Vec<(f64, f64)> = groups.iter().map(|&(v, m)| (v / xi_max, m)).collect();
    let dxi = 1.0 / (XI_POINTS - 1) as f64;

    const LOG_EPS: f64 = -36.8; // ln 1e-16
    const GROWTH_LIMIT: f64 = 9.2; // ln 1e4
    let t_min = 1e-10;
    let coarse_step = 0.05;
    let scan = |theta: f64, t_hi: f64| -> Vec<(f64, f64)> {
        let rot = Complex64::from_polar(1.0, -theta);
        let n = ((t_hi / t_min).ln() / coarse_step).ceil() as usize + 1;
        (0..n)
            .map(|i| {
                let t = t_min * (i as f64 * coarse_step).exp();
                (t, log_cf(&scaled, rot * t).re)
            })
            .collect()
    };

    let mut theta = 0.0;
    for k in 0..6 {
        let cand = FRAC_PI_4 / f64::powi(2.0, k);
        let growth = scan(cand, 1e6 / dxi)
            .iter()
            .map(|p| p.1)
            .fold(f64::MIN, f64::max);
        if growth <= GROWTH_LIMIT {
            theta = cand;
            break;
        }
    }
    let (sin_t, cos_t) = theta.sin_cos();
    let rot = Complex64::from_polar(1.0, -theta);

    // Integration range and step from a coarse scan of the integrand size.
    let t_far = if theta > 0.0 {
        (-LOG_EPS + GROWTH_LIMIT + 20.0) / (dxi * sin_t)
    } else {
        1e10
    };
    let mut t_max = t_min;
    let mut max_phase_rate: f64 = 0.0;
    for (t, log_abs) in scan(theta, t_far) {
        let a = log_abs + t.ln().max(0.0);
        if a < LOG_EPS {
            continue;
        }
        // Largest ξ for which this t still matters.
        let xi_reach = if sin_t > 0.0 {
            ((a - LOG_EPS) / (t * sin_t)).min(1.0)
        } else {
            1.0
        };
        if xi_reach >= dxi {
            t_max = t_max.max(t);
            let cf_rate = dlog_cf(&scaled, rot * t).im.abs();
            max_phase_rate = max_phase_rate.max(cf_rate + xi_reach * t * cos_t);
        }
    }
    let h = (0.25 / max_phase_rate.max(1e-3)).min(coarse_step);
    let steps = ((t_max / t_min).ln() / h).ceil() as usize + 2;
    log::trace!("xi inversion: theta {theta:.4}, {steps} nodes, t_max {t_max:.3e}");

    let nodes: Vec<(Complex64, Complex64)> = (0..steps)
        .map(|i| {
            let t = t_min * (i as f64 * h).exp();
            let u = rot * t;
            (u, log_cf(&scaled, u).exp())
        })
        .collect();

    let mut pdf = vec![0.0; XI_POINTS];
    let mut cdf = vec![0.0; XI_POINTS];
    for k in 1..XI_POINTS {
        let xi = k as f64 * dxi;
        let mut dens = 0.0;
        let mut surv = 0.0;
        for &(u, phi) in &nodes {
            let e = Complex64::new(0.0, -xi) * u;
            if e.re < LOG_EPS - GROWTH_LIMIT {
                break;
            }
            let z = phi * e.exp();
            // du = rot t ds
            dens += (z * u).re;
            surv += z.im;
        }
        pdf[k] = (dens * h / PI).max(0.0) / xi_max;
        let s = 0.5 - theta / PI + surv * h / PI;
        cdf[k] = (1.0 - s).clamp(0.0, 1.0);
    }
    pdf[0] = if modes > 2.0 {
        0.0
    } else if modes == 2.0 {
        let v: Vec<f64> = groups
            .iter()
            .flat_map(|&(v, m)| std::iter::repeat_n(v, m as usize))
            .collect();
        1.0 / (2.0 * (v[0] * v[1]).sqrt())
    } else {
        f64::INFINITY
    };

    let step = dxi * xi_max;
    let grid: Vec<f64> = (0..XI_POINTS).map(|k| k as f64 * step).collect();
    // Density mass: power law ξ^{M/2-1} in the first cell, trapezoid beyond.
    let power = 0.5 * modes;
    let mut raw_mass = pdf[1] * step / power;
    for k in 2..XI_POINTS {
        raw_mass += 0.5 * step * (pdf[k - 1] + pdf[k]);
    }
    if !(0.99..=1.01).contains(&raw_mass) {
        return Err(Error::NumericFailure(format!(
            "residual phase density integrates to {raw_mass:.5}"
        )));
    }
    for k in 1..XI_POINTS {
        if cdf[k] < cdf[k - 1] - 1e-6 {
            return Err(Error::NumericFailure(format!(
                "residual phase CDF decreases at node {k}"
            )));
        }
        cdf[k] = cdf[k].max(cdf[k - 1]);
    }
    Ok(ResidualPhasePdf {
        grid,
        pdf,
        cdf,
        modes: modes as u64,
        mean,
        variance,
        raw_mass,
    })
}

impl ResidualPhasePdf {
    fn step(&self) -> f64 {
        self.grid[1]
    }

    /// Cumulative distribution at `xi`: power law in the first cell and cubic
    /// Hermite interpolation of (F, p) beyond, clamped to stay monotone.
    pub fn cdf_at(&self, xi: f64) -> f64 {
        if xi <= 0.0 {
            return 0.0;
        }
        let step = self.step();
        let pos = xi / step;
        if pos >= (XI_POINTS - 1) as f64 {
            return 1.0;
        }
        if pos < 1.0 {
            return self.cdf[1] * pos.powf(0.5 * self.modes as f64);
        }
        let i = pos.floor() as usize;
        let t = pos - i as f64;
        let (f0, f1) = (self.cdf[i], self.cdf[i + 1]);
        let (m0, m1) = (self.pdf[i] * step, self.pdf[i + 1] * step);
        let t2 = t * t;
        let t3 = t2 * t;
        let f = (2.0 * t3 - 3.0 * t2 + 1.0) * f0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * f1
            + (t3 - t2) * m1;
        f.clamp(f0, f1)
    }

    pub fn density_at(&self, xi: f64) -> f64 {
        if xi <= 0.0 {
            return 0.0;
        }
        let step = self.step();
        let pos = xi / step;
        if pos >= (XI_POINTS - 1) as f64 {
            return 0.0;
        }
        if pos < 1.0 {
            let power = 0.5 * self.modes as f64;
            return self.cdf[1] * power / step * pos.powf(power - 1.0);
        }
        let i = pos.floor() as usize;
        let t = pos - i as f64;
        self.pdf[i] + t * (self.pdf[i + 1] - self.pdf[i])
    }

    /// Mean of ξ as the integral of the survival function.
    pub fn mean_from_table(&self) -> f64 {
        let step = self.step();
        let power = 0.5 * self.modes as f64;
        let mut m = step - self.cdf[1] * step / (power + 1.0);
        for k in 1..XI_POINTS - 1 {
            let (s0, s1) = (1.0 - self.cdf[k], 1.0 - self.cdf[k + 1]);
            m += 0.5 * step * (s0 + s1) + step * step * (self.pdf[k + 1] - self.pdf[k]) / 12.0;
        }
        m
    }
}

/// Coupling-efficiency distribution η = η_max e^{-ξ}.
pub fn smf_pdf(eta_max: f64, spectrum: &ZernikeSpectrum) -> Result<EfficiencyDistribution> {
    if !(eta_max > 0.0) || eta_max > 1.0 {
        return Err(Error::InvalidParameter {
            name: "eta_max",
            value: eta_max,
            expected: "a value in (0, 1]",
        });
    }
    if residual_groups(spectrum).is_empty() {
        return Ok(EfficiencyDistribution::PointMass(eta_max));
    }
    let xi = residual_phase_pdf(spectrum)?;
    if xi.modes <= 2 {
        return Err(Error::NumericFailure(format!(
            "coupling distribution needs more than two residual modes, got {}",
            xi.modes
        )));
    }
    from_residual(eta_max, &xi)
}

/// Coupling-efficiency distribution from an already tabulated ξ density.
pub fn from_residual(eta_max: f64, xi: &ResidualPhasePdf) -> Result<EfficiencyDistribution> {
    EfficiencyDistribution::from_cdf(
        eta_max,
        |eta| {
            if eta <= 0.0 {
                0.0
            } else {
                1.0 - xi.cdf_at((eta_max / eta).ln())
            }
        },
        Some(|eta: f64| {
            if eta <= 0.0 {
                0.0
            } else {
                xi.density_at((eta_max / eta).ln()) / eta
            }
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_mode(v: f64) -> ZernikeSpectrum {
        ZernikeSpectrum {
            orders: vec![ZernikeOrder {
                n: 0,
                variance: v,
                multiplicity: 1,
                attenuation: 1.0,
            }],
            max_corrected_order: 0,
        }
    }

    #[test]
    fn eta0_values() {
        let a = ApertureSpec::new(0.4, 0.0, 1.12).unwrap();
        assert_relative_eq!(eta0_max(&a), 0.8145, epsilon = 1e-3);
        let b = ApertureSpec::new(0.4, 0.3, 1.12).unwrap();
        assert!(eta0_max(&b) < eta0_max(&a));
        let tiny = ApertureSpec::new(0.4, 0.0, 1e-6).unwrap();
        assert!(eta0_max(&tiny) < 1e-11);
        assert!(ApertureSpec::new(0.4, 1.0, 1.12).is_err());
    }

    #[test]
    fn eta_chi_identities() {
        assert_eq!(eta_chi(0.0), 1.0);
        assert_relative_eq!(eta_chi(1.0), (-1.0f64).exp());
    }

    #[test]
    fn tilt_variance_matches_circular_pupil() {
        // Circular-pupil tilt variance per mode, and its annular counterpart.
        let v = normalized_zernike_variance(1, 0.0).unwrap();
        assert_relative_eq!(v, 0.4509, max_relative = 1e-3);
        let annular = normalized_zernike_variance(1, 0.3).unwrap();
        assert_relative_eq!(annular, 0.4908, max_relative = 1e-3);
    }

    #[test]
    fn variances_scale_with_d_over_r0() {
        let a = zernike_variances(0.4, 0.05, 0.3, 10).unwrap();
        let b = zernike_variances(0.8, 0.05, 0.3, 10).unwrap();
        for (x, y) in a.orders.iter().zip(&b.orders) {
            assert_relative_eq!(
                y.variance / x.variance,
                2f64.powf(5.0 / 3.0),
                max_relative = 1e-12
            );
        }
        for w in a.orders[1..].windows(2) {
            assert!(w[1].variance < w[0].variance);
        }
    }

    #[test]
    fn zero_gain_gives_no_correction() {
        let ao = AoConfig {
            max_corrected_order: 6,
            gain: 0.0,
            integration_time: 1e-3,
            delay: 2e-3,
            max_order: 150,
            loop_transfer: LoopTransfer::Standard,
        };
        for n in 1..=8 {
            assert_eq!(ao_attenuation_order(&ao, n, 0.4, 10.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn mean_eta_phi_single_mode() {
        let s = single_mode(0.1);
        assert_relative_eq!(
            mean_eta_phi(&s, EtaPhiMode::Product),
            1.0 / 1.2f64.sqrt(),
            max_relative = 1e-14
        );
        assert_eq!(mean_eta_phi(&single_mode(0.0), EtaPhiMode::Product), 1.0);
    }

    #[test]
    fn rayleigh_threshold() {
        let (m, pass) = rayleigh_check(&single_mode(0.0));
        assert_eq!((m, pass), (0.0, true));
        let v = (2.0 * PI * 0.06f64).powi(2);
        let (m, pass) = rayleigh_check(&single_mode(v));
        assert_relative_eq!(m, 0.06, max_relative = 1e-12);
        assert!(!pass);
    }

    #[test]
    fn no_residual_gives_point_mass() {
        let d = smf_pdf(0.6, &single_mode(0.0)).unwrap();
        assert_eq!(d, EfficiencyDistribution::PointMass(0.6));
    }

    fn equal_modes(v: f64, m: u32) -> ZernikeSpectrum {
        ZernikeSpectrum {
            orders: vec![ZernikeOrder {
                n: m - 1,
                variance: v,
                multiplicity: m,
                attenuation: 1.0,
            }],
            max_corrected_order: 0,
        }
    }

    fn sup_cdf_error(xi: &ResidualPhasePdf, exact: impl Fn(f64) -> f64) -> f64 {
        // Nodes and midpoints, to exercise the interpolation too.
        (1..2 * XI_POINTS - 2)
            .map(|j| {
                let x = 0.5 * j as f64 * xi.grid[1];
                (xi.cdf_at(x) - exact(x)).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn single_mode_is_scaled_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let v = 0.3;
        let xi = residual_phase_pdf(&single_mode(v)).unwrap();
        let chi = ChiSquared::new(1.0).unwrap();
        let err = sup_cdf_error(&xi, |x| chi.cdf(x / v));
        assert!(err < 1e-4, "sup error {err}");
        assert!((xi.raw_mass - 1.0).abs() < 1e-2);
    }

    #[test]
    fn equal_modes_are_gamma() {
        use statrs::distribution::{ContinuousCDF, Gamma};
        for m in [2, 3, 10, 60] {
            let v = 0.05;
            let xi = residual_phase_pdf(&equal_modes(v, m)).unwrap();
            let g = Gamma::new(0.5 * m as f64, 1.0 / (2.0 * v)).unwrap();
            let err = sup_cdf_error(&xi, |x| g.cdf(x));
            assert!(err < 1e-4, "m = {m}: sup error {err}");
            assert_relative_eq!(xi.raw_mass, 1.0, epsilon = 1e-3);
            assert_relative_eq!(xi.mean_from_table(), m as f64 * v, max_relative = 1e-4);
        }
    }

    #[test]
    fn corrected_spectrum_inverts_cleanly() {
        let mut s = zernike_variances(0.4, 0.08, 0.0, 150).unwrap();
        let ao = AoConfig {
            max_corrected_order: 6,
            gain: 1.0,
            integration_time: 1e-3,
            delay: 2e-3,
            max_order: 150,
            loop_transfer: LoopTransfer::Standard,
        };
        ao_attenuation(&mut s, &ao, 0.4, 10.0).unwrap();
        for o in &s.orders[..6] {
            assert!(o.attenuation > 0.0 && o.attenuation < 1.0, "{o:?}");
        }
        assert!(s.orders[6..].iter().all(|o| o.attenuation == 1.0));
        let xi = residual_phase_pdf(&s).unwrap();
        assert_relative_eq!(xi.raw_mass, 1.0, epsilon = 1e-3);
        assert_relative_eq!(xi.mean_from_table(), xi.mean, max_relative = 1e-4);
        let d = smf_pdf(0.8, &s).unwrap();
        // E[e^{-ξ}] has the closed form ⟨η_φ⟩.
        assert_relative_eq!(
            d.mean(),
            0.8 * mean_eta_phi(&s, EtaPhiMode::Product),
            max_relative = 2e-3
        );
    }

    #[test]
    fn longer_integration_time_weakens_correction() {
        let mut ao = AoConfig {
            max_corrected_order: 4,
            gain: 1.0,
            integration_time: 5e-4,
            delay: 1e-3,
            max_order: 10,
            loop_transfer: LoopTransfer::Standard,
        };
        let fast = ao_attenuation_order(&ao, 2, 0.4, 10.0).unwrap();
        ao.integration_time = 2e-3;
        ao.delay = 4e-3;
        let slow = ao_attenuation_order(&ao, 2, 0.4, 10.0).unwrap();
        assert!(fast < slow, "{fast} vs {slow}");
    }
}
