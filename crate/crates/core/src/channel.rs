//! Complete channel models: free-space downlink, uplink and horizontal links
//! built from the turbulence and receiver models, plus fiber links.

use serde::{Deserialize, Serialize};

use crate::beam_dynamics::{
    long_term_radius, total_wander, wander_variance_downlink, wander_variance_horizontal,
    BeamSpread, PointingConfig,
};
use crate::collection::{general_pdf, weibull_pdf, CollectionParams};
use crate::coupling::{
    ao_attenuation, eta0_max, eta_chi, from_residual, mean_eta_phi, rayleigh_check,
    residual_phase_pdf, zernike_variances, AoConfig, ApertureSpec, EtaPhiMode, ZernikeSpectrum,
};
use crate::distribution::EfficiencyDistribution;
use crate::error::{check_fraction, Error, Result};
use crate::geometry::{BeamState, LinkGeometry};
use crate::transmittance::TransmittanceProvider;
use crate::turbulence::{
    isoplanatic_angle_uplink, LogAmpConvention, TurbulenceProfile, TurbulenceStats,
};

/// Fiber attenuation at 1550 nm in dB/km.
pub const FIBER_LOSS_DB_PER_KM: f64 = 0.18;

/// Rayleigh criterion on the residual modal standard deviation, in waves.
pub const RAYLEIGH_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Downlink,
    Uplink,
    Horizontal,
    Fiber,
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Downlink => "downlink",
            Self::Uplink => "uplink",
            Self::Horizontal => "horizontal",
            Self::Fiber => "fiber",
        };
        f.write_str(s)
    }
}

/// Modelling switches shared by every free-space channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelOptions {
    pub logamp: LogAmpConvention,
    pub eta_phi: EtaPhiMode,
}

/// A measured quantity checked against a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Check {
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
}

/// Validity of the weak-fluctuation and small-wander approximations.
/// Failing checks annotate results; they never abort a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ValidityReport {
    /// Receiver diameter (value) against the correlation width ρc (threshold).
    pub aperture_averaging: Option<Check>,
    /// Largest residual modal standard deviation in waves.
    pub rayleigh: Option<Check>,
    /// σ_wander / r_Rx against 1.
    pub small_wander: Option<Check>,
}

impl ValidityReport {
    pub fn all_pass(&self) -> bool {
        [self.aperture_averaging, self.rayleigh, self.small_wander]
            .iter()
            .flatten()
            .all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(c) = self.aperture_averaging.filter(|c| !c.pass) {
            out.push(format!(
                "aperture averaging: D_Rx = {:.4} m does not exceed rho_c = {:.4} m",
                c.value, c.threshold
            ));
        }
        if let Some(c) = self.rayleigh.filter(|c| !c.pass) {
            out.push(format!(
                "Rayleigh: residual sigma {:.4} waves exceeds {}",
                c.value, c.threshold
            ));
        }
        if let Some(c) = self.small_wander.filter(|c| !c.pass) {
            out.push(format!(
                "small wander: sigma_wander / r_Rx = {:.3} exceeds 1",
                c.value
            ));
        }
        out
    }
}

/// Intermediate quantities of a free-space channel, kept for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    pub distance: f64,
    pub rytov: f64,
    pub scint_index: f64,
    pub corr_width: f64,
    pub fried: f64,
    pub log_amp: f64,
    pub long_term: f64,
    pub short_term: f64,
    pub wander_sigma: f64,
    pub eta_max: f64,
    pub mean_eta_phi: f64,
    pub isoplanatic: Option<f64>,
    pub eta_aniso: f64,
    /// Mass of the residual-phase density before normalization.
    pub xi_raw_mass: Option<f64>,
    pub transmittance_extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    pub eta_atm: f64,
    /// Receiver collection efficiency η_DRx (fiber transmission for fibers).
    pub collection: EfficiencyDistribution,
    /// Fiber coupling efficiency η_SMF.
    pub coupling: EfficiencyDistribution,
    pub detector_eff: f64,
    pub validity: ValidityReport,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
}

impl ChannelModel {
    /// Analytic mean transmission of one photon.
    pub fn mean_efficiency(&self) -> f64 {
        self.eta_atm * self.collection.mean() * self.coupling.mean() * self.detector_eff
    }

    /// Transmission probability for given collection and coupling quantiles.
    pub fn efficiency_at(&self, u_collection: f64, u_coupling: f64) -> f64 {
        self.eta_atm
            * self.collection.sample(u_collection)
            * self.coupling.sample(u_coupling)
            * self.detector_eff
    }

    /// Decides the fate of one photon from three uniforms in `[0, 1)`.
    pub fn sample_transmission(
        &self,
        u_collection: f64,
        u_coupling: f64,
        u_bernoulli: f64,
    ) -> bool {
        u_bernoulli < self.efficiency_at(u_collection, u_coupling)
    }

    /// A channel whose efficiency is a fixed number.
    pub fn fixed(kind: ChannelKind, efficiency: f64) -> Result<Self> {
        check_fraction("efficiency", efficiency)?;
        Ok(Self {
            kind,
            eta_atm: 1.0,
            collection: EfficiencyDistribution::PointMass(efficiency),
            coupling: EfficiencyDistribution::PointMass(1.0),
            detector_eff: 1.0,
            validity: ValidityReport::default(),
            diagnostics: Diagnostics::default(),
            warnings: Vec::new(),
        })
    }
}

/// Ground-to-ground fiber of `length_km` ending on a detector.
pub fn build_fiber(length_km: f64, detector_eff: f64) -> Result<ChannelModel> {
    build_fiber_with_loss(length_km, FIBER_LOSS_DB_PER_KM, detector_eff)
}

pub fn build_fiber_with_loss(
    length_km: f64,
    loss_db_per_km: f64,
    detector_eff: f64,
) -> Result<ChannelModel> {
    if !(length_km >= 0.0) || !length_km.is_finite() {
        return Err(Error::InvalidParameter {
            name: "fiber_length_km",
            value: length_km,
            expected: "a finite length >= 0",
        });
    }
    check_fraction("p_det", detector_eff)?;
    if !(loss_db_per_km >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "fiber_loss_db_km",
            value: loss_db_per_km,
            expected: "an attenuation >= 0",
        });
    }
    let transmission = 10f64.powf(-loss_db_per_km * length_km / 10.0);
    Ok(ChannelModel {
        kind: ChannelKind::Fiber,
        eta_atm: 1.0,
        collection: EfficiencyDistribution::PointMass(transmission),
        coupling: EfficiencyDistribution::PointMass(1.0),
        detector_eff,
        validity: ValidityReport::default(),
        diagnostics: Diagnostics {
            distance: length_km * 1e3,
            eta_aniso: 1.0,
            ..Diagnostics::default()
        },
        warnings: Vec::new(),
    })
}

fn check_beam(geom: &LinkGeometry, beam: &BeamState) -> Result<()> {
    if (beam.distance - geom.slant_range).abs() > 1e-6 * geom.slant_range.max(1.0) {
        return Err(Error::InvalidParameter {
            name: "beam_distance",
            value: beam.distance,
            expected: "the propagation distance of the link geometry",
        });
    }
    Ok(())
}

/// Coupling distribution plus the residual-phase normalization it came from.
fn coupling_distribution(
    eta_max: f64,
    spectrum: &ZernikeSpectrum,
) -> Result<(EfficiencyDistribution, Option<f64>)> {
    if spectrum.orders.iter().all(|o| o.residual() == 0.0) {
        return Ok((EfficiencyDistribution::PointMass(eta_max), None));
    }
    let xi = residual_phase_pdf(spectrum)?;
    if xi.modes <= 2 {
        return Err(Error::NumericFailure(format!(
            "coupling distribution needs more than two residual modes, got {}",
            xi.modes
        )));
    }
    Ok((from_residual(eta_max, &xi)?, Some(xi.raw_mass)))
}

fn wander_check(spread: &BeamSpread, aperture: &ApertureSpec) -> Check {
    let ratio = spread.total_wander / (0.5 * aperture.diameter);
    Check {
        pass: ratio < 1.0,
        value: ratio,
        threshold: 1.0,
    }
}

fn rayleigh(spectrum: &ZernikeSpectrum) -> Check {
    let (value, pass) = rayleigh_check(spectrum);
    Check {
        pass,
        value,
        threshold: RAYLEIGH_LIMIT,
    }
}

/// Balloon-to-ground slant link received through an AO-corrected telescope.
#[allow(clippy::too_many_arguments)]
pub fn build_downlink(
    geom: &LinkGeometry,
    profile: &TurbulenceProfile,
    beam: &BeamState,
    aperture: &ApertureSpec,
    ao: &AoConfig,
    pointing: &PointingConfig,
    transmittance: &dyn TransmittanceProvider,
    detector_eff: f64,
    options: &ModelOptions,
) -> Result<ChannelModel> {
    check_beam(geom, beam)?;
    check_fraction("p_det", detector_eff)?;
    let d = aperture.diameter;
    let stats = TurbulenceStats::slant(profile, geom, beam, d, options.logamp)?;
    let long_term = long_term_radius(beam, stats.rytov);
    let wander_var = wander_variance_downlink(profile, geom, beam, stats.rytov)?;
    let spread = BeamSpread::new(
        long_term,
        wander_var,
        total_wander(geom.slant_range, wander_var, pointing),
    )?;
    let collection = general_pdf(&CollectionParams {
        aperture_radius: 0.5 * d,
        short_term: spread.short_term,
        wander_sigma: spread.total_wander,
        scint_index: stats.scint_index,
    })?;

    let mut spectrum = zernike_variances(d, stats.fried, aperture.obstruction, ao.max_order)?;
    if !profile.is_zero() {
        ao_attenuation(&mut spectrum, ao, d, profile.wind())?;
    }
    let eta_max = eta0_max(aperture) * eta_chi(stats.log_amp);
    let (coupling, xi_raw_mass) = coupling_distribution(eta_max, &spectrum)?;

    let atm = transmittance.slant(geom.zenith, geom.ground_alt, geom.platform_alt);
    let mut warnings = Vec::new();
    if atm.extrapolated {
        warnings.push(format!(
            "transmittance extrapolated outside {}",
            transmittance.describe()
        ));
    }
    let validity = ValidityReport {
        aperture_averaging: Some(Check {
            pass: stats.rytov == 0.0 || d > stats.corr_width,
            value: d,
            threshold: stats.corr_width,
        }),
        rayleigh: Some(rayleigh(&spectrum)),
        small_wander: Some(wander_check(&spread, aperture)),
    };
    warnings.extend(validity.failures());
    for w in &warnings {
        log::warn!("downlink: {w}");
    }
    Ok(ChannelModel {
        kind: ChannelKind::Downlink,
        eta_atm: atm.value,
        collection,
        coupling,
        detector_eff,
        validity,
        diagnostics: Diagnostics {
            distance: geom.slant_range,
            rytov: stats.rytov,
            scint_index: stats.scint_index,
            corr_width: stats.corr_width,
            fried: stats.fried,
            log_amp: stats.log_amp,
            long_term: spread.long_term,
            short_term: spread.short_term,
            wander_sigma: spread.total_wander,
            eta_max,
            mean_eta_phi: mean_eta_phi(&spectrum, options.eta_phi),
            isoplanatic: None,
            eta_aniso: 1.0,
            xi_raw_mass,
            transmittance_extrapolated: atm.extrapolated,
        },
        warnings,
    })
}

/// Ground-to-balloon slant link, modeled by reciprocity: the downlink
/// pipeline with the balloon-side aperture, and a fixed anisoplanatic loss
/// from the pointing error on the coupling.
#[allow(clippy::too_many_arguments)]
pub fn build_uplink(
    geom: &LinkGeometry,
    profile: &TurbulenceProfile,
    beam: &BeamState,
    aperture: &ApertureSpec,
    ao: &AoConfig,
    pointing: &PointingConfig,
    transmittance: &dyn TransmittanceProvider,
    detector_eff: f64,
    options: &ModelOptions,
) -> Result<ChannelModel> {
    let mut model = build_downlink(
        geom,
        profile,
        beam,
        aperture,
        ao,
        pointing,
        transmittance,
        detector_eff,
        options,
    )?;
    let theta0 = isoplanatic_angle_uplink(profile, geom, beam)?;
    let eta_aniso = if pointing.pointing_error == 0.0 {
        1.0
    } else {
        (-(pointing.pointing_error / theta0).powf(5.0 / 3.0)).exp()
    };
    model.kind = ChannelKind::Uplink;
    model.coupling = model.coupling.scaled(eta_aniso);
    model.diagnostics.isoplanatic = Some(theta0);
    model.diagnostics.eta_aniso = eta_aniso;
    model.warnings.push(
        "uplink wander and collection statistics reuse the downlink model (reciprocity)".into(),
    );
    if model.validity.rayleigh.is_some_and(|c| !c.pass) {
        log::warn!("uplink: AO residual above the Rayleigh limit; pre-compensation is optimistic");
    }
    Ok(model)
}

/// Balloon-to-balloon link of straight length `distance` between platforms
/// at `platform_alt`; turbulence and transmittance are taken at the lowest
/// point of the path.
#[allow(clippy::too_many_arguments)]
pub fn build_horizontal(
    platform_alt: f64,
    distance: f64,
    profile: &TurbulenceProfile,
    beam: &BeamState,
    aperture: &ApertureSpec,
    ao_max_order: u32,
    pointing: &PointingConfig,
    transmittance: &dyn TransmittanceProvider,
    detector_eff: f64,
    options: &ModelOptions,
) -> Result<ChannelModel> {
    let geom = LinkGeometry::horizontal(platform_alt, distance)?;
    check_beam(&geom, beam)?;
    check_fraction("p_det", detector_eff)?;
    let h_min = geom.min_altitude.unwrap_or(platform_alt);
    let d = aperture.diameter;
    let stats = TurbulenceStats::horizontal(profile, h_min, beam, options.logamp);
    let long_term = long_term_radius(beam, stats.rytov);
    let wander_var = wander_variance_horizontal(profile.cn2(h_min), beam, stats.rytov)?;
    let spread = BeamSpread::new(
        long_term,
        wander_var,
        total_wander(distance, wander_var, pointing),
    )?;
    let collection = weibull_pdf(&CollectionParams {
        aperture_radius: 0.5 * d,
        short_term: spread.short_term,
        wander_sigma: spread.total_wander,
        scint_index: stats.scint_index,
    })?;
    // No AO on the balloon: every mode keeps its full variance.
    let spectrum = zernike_variances(d, stats.fried, aperture.obstruction, ao_max_order)?;
    let eta_phi = mean_eta_phi(&spectrum, options.eta_phi);
    let eta_max = eta0_max(aperture) * eta_chi(stats.log_amp);
    let coupling_mean = eta_max * eta_phi;
    if coupling_mean > 1.0 {
        return Err(Error::InvariantViolation(format!(
            "mean coupling efficiency {coupling_mean} exceeds one"
        )));
    }

    let atm = transmittance.horizontal(h_min, platform_alt);
    let mut warnings = Vec::new();
    if atm.extrapolated {
        warnings.push(format!(
            "transmittance extrapolated outside {}",
            transmittance.describe()
        ));
    }
    let validity = ValidityReport {
        aperture_averaging: Some(Check {
            pass: stats.rytov == 0.0 || d > stats.corr_width,
            value: d,
            threshold: stats.corr_width,
        }),
        rayleigh: Some(rayleigh(&spectrum)),
        small_wander: Some(wander_check(&spread, aperture)),
    };
    warnings.extend(validity.failures());
    for w in &warnings {
        log::warn!("horizontal: {w}");
    }
    Ok(ChannelModel {
        kind: ChannelKind::Horizontal,
        eta_atm: atm.value,
        collection,
        coupling: EfficiencyDistribution::PointMass(coupling_mean),
        detector_eff,
        validity,
        diagnostics: Diagnostics {
            distance,
            rytov: stats.rytov,
            scint_index: stats.scint_index,
            corr_width: stats.corr_width,
            fried: stats.fried,
            log_amp: stats.log_amp,
            long_term: spread.long_term,
            short_term: spread.short_term,
            wander_sigma: spread.total_wander,
            eta_max,
            mean_eta_phi: eta_phi,
            isoplanatic: None,
            eta_aniso: 1.0,
            xi_raw_mass: None,
            transmittance_extrapolated: atm.extrapolated,
        },
        warnings,
    })
}
