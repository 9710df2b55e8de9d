//! Refractive-index structure profile and the turbulence statistics derived
//! from it along a link.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BeamState, LinkGeometry};
use crate::quadrature::{integrate_pieces, Tolerance};

/// Altitudes where the profile changes character; used as quadrature
/// breakpoints so the thin ground layer and the 10 km bump are resolved.
const PROFILE_BREAKS: [f64; 6] = [300.0, 1_000.0, 3_000.0, 8_000.0, 15_000.0, 25_000.0];

/// Vertical profile of the refractive-index structure constant Cn²(h).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum TurbulenceProfile {
    /// Hufnagel–Valley profile with ground value `cn2_ground` (m^-2/3) and
    /// average transverse wind speed `wind` (m/s).
    HufnagelValley { cn2_ground: f64, wind: f64 },
    /// Altitude-independent Cn²; `cn2 = 0` is the turbulence-free atmosphere.
    Constant { cn2: f64, wind: f64 },
}

impl TurbulenceProfile {
    pub fn hufnagel_valley(cn2_ground: f64, wind: f64) -> Result<Self> {
        if !(cn2_ground > 0.0) || !(wind >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "cn2_ground",
                value: cn2_ground,
                expected: "Cn2(0) > 0 and wind >= 0",
            });
        }
        Ok(Self::HufnagelValley { cn2_ground, wind })
    }

    pub fn none(wind: f64) -> Self {
        Self::Constant { cn2: 0.0, wind }
    }

    pub fn wind(&self) -> f64 {
        match *self {
            Self::HufnagelValley { wind, .. } | Self::Constant { wind, .. } => wind,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self, Self::Constant { cn2, .. } if cn2 == 0.0)
    }

    /// Cn²(h) at altitude `h` above sea level.
    pub fn cn2(&self, h: f64) -> f64 {
        match *self {
            Self::HufnagelValley { cn2_ground, wind } => {
                0.00594 * (wind / 27.0).powi(2) * (1e-5 * h).powi(10) * (-h / 1000.0).exp()
                    + 2.7e-16 * (-h / 1500.0).exp()
                    + cn2_ground * (-h / 100.0).exp()
            }
            Self::Constant { cn2, .. } => cn2,
        }
    }

    /// ∫ Cn²(h) w(h) dh over `[h0, h]` by adaptive quadrature.
    pub fn path_integral<F: Fn(f64) -> f64>(&self, h0: f64, h: f64, weight: F) -> Result<f64> {
        if self.is_zero() {
            return Ok(0.0);
        }
        let mut breaks = vec![h0];
        breaks.extend(PROFILE_BREAKS.iter().copied().filter(|&b| b > h0 && b < h));
        breaks.push(h);
        let est = integrate_pieces(|x| self.cn2(x) * weight(x), &breaks, Tolerance::default())?;
        Ok(est.value)
    }
}

/// Log-amplitude variance convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogAmpConvention {
    /// Expressions used verbatim: ln(1+σI²) for slant links, (1+σR²)^{-1/4}
    /// for horizontal links.
    #[default]
    Printed,
    /// ¼ ln(1+σI²) for both, from σ_lnI² = 4σχ².
    Quarter,
}

/// Rytov variance of a horizontal path with constant Cn².
pub fn rytov_horizontal(cn2: f64, k: f64, z: f64) -> f64 {
    1.23 * cn2 * k.powf(7.0 / 6.0) * z.powf(11.0 / 6.0)
}

/// Spherical-wave Rytov variance of a slant path.
pub fn rytov_downlink(profile: &TurbulenceProfile, geom: &LinkGeometry, k: f64) -> Result<f64> {
    let (h0, h) = (geom.ground_alt, geom.platform_alt);
    let span = h - h0;
    let integral = profile.path_integral(h0, h, |x| {
        ((x - h0) * (h - x) / span).max(0.0).powf(5.0 / 6.0)
    })?;
    let sec = 1.0 / geom.zenith.cos();
    Ok(2.25 * k.powf(7.0 / 6.0) * sec.powf(11.0 / 6.0) * integral)
}

/// Irradiance correlation width. Weak branch for σR² ≤ 1, strong otherwise;
/// the two branches do not join at σR² = 1.
pub fn correlation_width(rytov: f64, wavelength: f64, z: f64) -> f64 {
    let fresnel = (wavelength * z).sqrt();
    if rytov <= 1.0 {
        fresnel
    } else {
        0.36 * rytov.powf(-0.3) * fresnel
    }
}

/// Spherical-wave Rytov variance β0².
pub fn spherical_rytov(rytov: f64) -> f64 {
    0.4065 * rytov
}

/// Aperture-averaged scintillation index of a spherical wave.
pub fn scint_index_aperture(beta0_sq: f64, k: f64, z: f64, d_rx: f64) -> f64 {
    let d2 = k * d_rx * d_rx / (4.0 * z);
    let b125 = beta0_sq.powf(1.2);
    let first = 0.49 * beta0_sq / (1.0 + 0.18 * d2 + 0.56 * b125).powf(7.0 / 6.0);
    let second = 0.51 * beta0_sq * (1.0 + 0.69 * b125).powf(-5.0 / 6.0)
        / (1.0 + 0.90 * d2 + 0.62 * d2 * b125);
    (first + second).exp_m1()
}

/// Fried parameter of a Gaussian beam on a slant path.
pub fn fried_downlink(
    profile: &TurbulenceProfile,
    geom: &LinkGeometry,
    beam: &BeamState,
) -> Result<f64> {
    let (h0, h) = (geom.ground_alt, geom.platform_alt);
    let span = h - h0;
    let mu1 = profile.path_integral(h0, h, |x| {
        (beam.theta + beam.theta_bar * (1.0 - (x - h0) / span)).powf(5.0 / 3.0)
    })?;
    let mu2 = profile.path_integral(h0, h, |x| ((x - h0) / span).powf(5.0 / 3.0))?;
    let k = beam.wavenumber;
    let denom = 0.423 * k * k * (mu1 + 0.622 * mu2 * beam.lambda.powf(11.0 / 6.0));
    if denom == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((geom.zenith.cos() / denom).powf(0.6))
}

/// Fried parameter of a Gaussian beam on a horizontal path under weak
/// fluctuations.
pub fn fried_horizontal(cn2: f64, wavelength: f64, z: f64, beam: &BeamState) -> f64 {
    if cn2 == 0.0 {
        return f64::INFINITY;
    }
    let k = 2.0 * std::f64::consts::PI / wavelength;
    (8.0 / (3.0 * (beam.a + 0.618 * beam.lambda.powf(11.0 / 6.0)))).powf(0.6)
        * (0.423 * cn2 * k * k * z).powf(-0.6)
}

/// Isoplanatic angle of a Gaussian beam transmitted upward.
pub fn isoplanatic_angle_uplink(
    profile: &TurbulenceProfile,
    geom: &LinkGeometry,
    beam: &BeamState,
) -> Result<f64> {
    let (h0, h) = (geom.ground_alt, geom.platform_alt);
    let span = h - h0;
    let mu1 = profile.path_integral(h0, h, |x| {
        (beam.theta + beam.theta_bar * (x - h0) / span).powf(5.0 / 3.0)
    })?;
    let mu2 = profile.path_integral(h0, h, |x| (1.0 - (x - h0) / span).max(0.0).powf(5.0 / 3.0))?;
    let k = beam.wavenumber;
    let inner = 2.91 * k * k * (mu1 + 0.62 * mu2 * beam.lambda.powf(11.0 / 6.0));
    if inner == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(geom.zenith.cos().powf(1.6) / (span * inner.powf(0.6)))
}

/// Log-amplitude variance of a slant link from the aperture-averaged
/// scintillation index.
pub fn log_amp_downlink(scint_index: f64, convention: LogAmpConvention) -> f64 {
    match convention {
        LogAmpConvention::Printed => scint_index.ln_1p(),
        LogAmpConvention::Quarter => 0.25 * scint_index.ln_1p(),
    }
}

/// Log-amplitude variance of a horizontal link from its Rytov variance.
/// Under [`LogAmpConvention::Printed`] this equals 1 for a turbulence-free path.
pub fn log_amp_horizontal(rytov: f64, convention: LogAmpConvention) -> f64 {
    match convention {
        LogAmpConvention::Printed => (1.0 + rytov).powf(-0.25),
        LogAmpConvention::Quarter => 0.25 * rytov.ln_1p(),
    }
}

/// Turbulence statistics evaluated for one configured link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TurbulenceStats {
    pub rytov: f64,
    pub spherical_rytov: f64,
    pub scint_index: f64,
    pub corr_width: f64,
    /// Fried parameter; infinite for a turbulence-free path.
    pub fried: f64,
    /// Uplink isoplanatic angle, when evaluated.
    pub isoplanatic: Option<f64>,
    pub log_amp: f64,
}

impl TurbulenceStats {
    /// Statistics of a slant link received through an aperture `d_rx`.
    pub fn slant(
        profile: &TurbulenceProfile,
        geom: &LinkGeometry,
        beam: &BeamState,
        d_rx: f64,
        convention: LogAmpConvention,
    ) -> Result<Self> {
        let k = beam.wavenumber;
        let z = geom.slant_range;
        let rytov = rytov_downlink(profile, geom, k)?;
        let beta0 = spherical_rytov(rytov);
        let scint = scint_index_aperture(beta0, k, z, d_rx);
        Ok(Self {
            rytov,
            spherical_rytov: beta0,
            scint_index: scint,
            corr_width: correlation_width(rytov, beam.wavelength, z),
            fried: fried_downlink(profile, geom, beam)?,
            isoplanatic: None,
            log_amp: log_amp_downlink(scint, convention),
        })
    }

    /// Statistics of a horizontal link with Cn² taken at altitude `h_eval`.
    pub fn horizontal(
        profile: &TurbulenceProfile,
        h_eval: f64,
        beam: &BeamState,
        convention: LogAmpConvention,
    ) -> Self {
        let cn2 = profile.cn2(h_eval);
        let z = beam.distance;
        let rytov = rytov_horizontal(cn2, beam.wavenumber, z);
        Self {
            rytov,
            spherical_rytov: spherical_rytov(rytov),
            scint_index: rytov,
            corr_width: correlation_width(rytov, beam.wavelength, z),
            fried: fried_horizontal(cn2, beam.wavelength, z, beam),
            isoplanatic: None,
            log_amp: log_amp_horizontal(rytov, convention),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hv() -> TurbulenceProfile {
        TurbulenceProfile::hufnagel_valley(9.6e-14, 10.0).unwrap()
    }

    #[test]
    fn hv_ground_value() {
        assert_relative_eq!(hv().cn2(0.0), 9.6e-14 + 2.7e-16, max_relative = 1e-15);
        assert!(hv().cn2(1e6) < 1e-300);
        assert!(TurbulenceProfile::hufnagel_valley(0.0, 10.0).is_err());
    }

    #[test]
    fn zero_profile_gives_zero_and_infinite_scales() {
        let p = TurbulenceProfile::none(10.0);
        let g = LinkGeometry::slant(20.0, 20_000.0, 0.3).unwrap();
        let b = BeamState::new(1550e-9, 0.1, g.slant_range).unwrap();
        assert_eq!(rytov_downlink(&p, &g, b.wavenumber).unwrap(), 0.0);
        assert!(fried_downlink(&p, &g, &b).unwrap().is_infinite());
        assert!(isoplanatic_angle_uplink(&p, &g, &b).unwrap().is_infinite());
        assert!(fried_horizontal(0.0, 1550e-9, 1e5, &b).is_infinite());
    }

    #[test]
    fn rytov_secant_scaling() {
        let k = 2.0 * std::f64::consts::PI / 1550e-9;
        let g0 = LinkGeometry::slant(20.0, 20_000.0, 0.0).unwrap();
        let g60 = LinkGeometry::slant(20.0, 20_000.0, 60f64.to_radians()).unwrap();
        let r0 = rytov_downlink(&hv(), &g0, k).unwrap();
        let r60 = rytov_downlink(&hv(), &g60, k).unwrap();
        assert_relative_eq!(r60 / r0, 2f64.powf(11.0 / 6.0), max_relative = 1e-12);
    }

    #[test]
    fn correlation_width_branches() {
        let weak = correlation_width(0.5, 1550e-9, 20_000.0);
        assert_relative_eq!(weak, (1550e-9 * 20_000.0f64).sqrt());
        assert_relative_eq!(weak, 0.176, max_relative = 2e-3);
        let at_one = correlation_width(1.0, 1550e-9, 20_000.0);
        assert_eq!(at_one, weak);
        let strong = correlation_width(1.0 + 1e-12, 1550e-9, 20_000.0);
        assert_relative_eq!(strong, 0.36 * weak, max_relative = 1e-9);
    }

    #[test]
    fn scintillation_zero_and_reduction() {
        assert_eq!(scint_index_aperture(0.0, 4e6, 2e4, 0.4), 0.0);
        let beta = 0.05;
        let s = scint_index_aperture(beta, 4e6, 2e4, 0.4);
        assert!(s > 0.0 && s < beta);
    }

    #[test]
    fn log_amp_identities() {
        assert_eq!(log_amp_downlink(0.0, LogAmpConvention::Printed), 0.0);
        assert_relative_eq!(
            log_amp_downlink(std::f64::consts::E - 1.0, LogAmpConvention::Printed),
            1.0,
            max_relative = 1e-15
        );
        assert_eq!(log_amp_horizontal(0.0, LogAmpConvention::Printed), 1.0);
        assert_eq!(log_amp_horizontal(0.0, LogAmpConvention::Quarter), 0.0);
    }

    #[test]
    fn fried_horizontal_distance_scaling() {
        // With the beam parameters held fixed, r0 ∝ z^{-3/5}.
        let b = BeamState::new(1550e-9, 0.1, 1e5).unwrap();
        let r1 = fried_horizontal(1e-18, 1550e-9, 1e5, &b);
        let r2 = fried_horizontal(1e-18, 1550e-9, 2e5, &b);
        assert_relative_eq!(r1 / r2, 2f64.powf(0.6), max_relative = 1e-12);
    }
}
