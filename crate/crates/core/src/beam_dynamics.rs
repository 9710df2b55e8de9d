//! Turbulent beam broadening, beam wander, and their combination with
//! pointing error and tracking.

use serde::{Deserialize, Serialize};

use crate::error::{check_fraction, Error, Result};
use crate::geometry::{BeamState, LinkGeometry};
use crate::quadrature::{integrate, Tolerance};
use crate::turbulence::TurbulenceProfile;

/// Mechanical pointing error and tracking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointingConfig {
    /// Angular pointing error θpe in radians.
    pub pointing_error: f64,
    /// Tracking efficiency η_tr in [0, 1].
    pub tracking_eff: f64,
}

impl PointingConfig {
    pub fn new(pointing_error: f64, tracking_eff: f64) -> Result<Self> {
        if !(pointing_error >= 0.0) || !pointing_error.is_finite() {
            return Err(Error::InvalidParameter {
                name: "theta_pe",
                value: pointing_error,
                expected: "a finite angle >= 0",
            });
        }
        check_fraction("eta_tr", tracking_eff)?;
        Ok(Self {
            pointing_error,
            tracking_eff,
        })
    }
}

/// Beam size and wander at the receiver plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeamSpread {
    pub long_term: f64,
    pub short_term: f64,
    /// Turbulence-induced wander variance ⟨rc²⟩ (m²).
    pub wander_var: f64,
    /// Total wander standard deviation after pointing and tracking (m).
    pub total_wander: f64,
}

impl BeamSpread {
    /// Splits the long-term radius into short-term spot and wander.
    pub fn new(long_term: f64, wander_var: f64, total_wander_var: f64) -> Result<Self> {
        let st2 = long_term * long_term - wander_var;
        if !(st2 > 0.0) {
            return Err(Error::ModelBreakdown(format!(
                "wander variance {wander_var:.3e} m^2 exceeds the long-term spot W_LT^2 = {:.3e} m^2",
                long_term * long_term
            )));
        }
        Ok(Self {
            long_term,
            short_term: st2.sqrt(),
            wander_var,
            total_wander: total_wander_var.sqrt(),
        })
    }
}

// σR^{12/5} written in terms of σR².
fn rytov_pow(rytov: f64) -> f64 {
    rytov.powf(1.2)
}

/// Long-term beam radius including turbulent broadening.
pub fn long_term_radius(beam: &BeamState, rytov: f64) -> f64 {
    let w0 = beam.waist;
    let z = beam.distance;
    let diffraction = beam.wavelength * z / (std::f64::consts::PI * w0 * w0);
    let turbulent = 1.63 * rytov_pow(rytov) * 2.0 * z / (beam.wavenumber * w0 * w0);
    w0 * (1.0 + diffraction * diffraction + turbulent).sqrt()
}

/// Beam wander variance on a horizontal path with constant Cn².
pub fn wander_variance_horizontal(cn2: f64, beam: &BeamState, rytov: f64) -> Result<f64> {
    if cn2 == 0.0 {
        return Ok(0.0);
    }
    let z = beam.distance;
    let c = 1.63 * rytov_pow(rytov) * beam.lambda0;
    let est = integrate(
        |xi| {
            let q = (beam.theta0 + beam.theta0_bar * xi).powi(2) + c * (1.0 - xi).powf(3.2);
            xi * xi / q.powf(1.0 / 6.0)
        },
        0.0,
        1.0,
        Tolerance::default(),
    )?;
    Ok(7.25 * cn2 * z.powi(3) * beam.waist.powf(-1.0 / 3.0) * est.value)
}

/// Beam wander variance on a slant path.
pub fn wander_variance_downlink(
    profile: &TurbulenceProfile,
    geom: &LinkGeometry,
    beam: &BeamState,
    rytov: f64,
) -> Result<f64> {
    let (h0, h) = (geom.ground_alt, geom.platform_alt);
    let span = h - h0;
    let c = 1.63 * rytov_pow(rytov) * beam.lambda0;
    let integral = profile.path_integral(h0, h, |x| {
        let xi = (x - h0) / span;
        let q = (beam.theta0 + beam.theta0_bar * xi).powi(2) + c * (1.0 - xi).max(0.0).powf(3.2);
        (x - h0).powi(2) / q.powf(1.0 / 6.0)
    })?;
    let sec = 1.0 / geom.zenith.cos();
    Ok(7.25 * sec.powi(3) * beam.waist.powf(-1.0 / 3.0) * integral)
}

/// Total wander variance σ_wander² from pointing error, turbulent wander and
/// tracking.
pub fn total_wander(z: f64, wander_var: f64, pointing: &PointingConfig) -> f64 {
    let mech = z * pointing.pointing_error;
    (mech * mech + wander_var) * (1.0 - pointing.tracking_eff)
}
