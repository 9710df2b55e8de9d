//! Spherical-Earth link geometry and collimated Gaussian-beam parameters.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{check_positive, Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS: f64 = 6_371_000.0;

/// Geometry of one free-space link.
///
/// Slant links (ground station to platform) carry a zenith angle; horizontal
/// links between two platforms at the same altitude carry `min_altitude`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub ground_alt: f64,
    pub platform_alt: f64,
    pub zenith: f64,
    pub earth_radius: f64,
    pub slant_range: f64,
    pub arc_length: Option<f64>,
    pub subtending: Option<f64>,
    pub min_altitude: Option<f64>,
}

fn check_slant(h0: f64, h: f64, zenith: f64) -> Result<()> {
    if !(h0 >= 0.0) || !(h > h0) || !h.is_finite() {
        return Err(Error::InvalidGeometry(format!(
            "platform altitude {h} m must exceed ground altitude {h0} m >= 0"
        )));
    }
    if !(0.0..FRAC_PI_2).contains(&zenith) {
        return Err(Error::InvalidGeometry(format!(
            "zenith angle {zenith} rad outside [0, pi/2)"
        )));
    }
    Ok(())
}

/// Distance from a station at `h0` to a platform at `h` seen at zenith angle
/// `zenith`, on a sphere of radius `earth_radius`.
pub fn slant_range_on(earth_radius: f64, h0: f64, h: f64, zenith: f64) -> Result<f64> {
    check_slant(h0, h, zenith)?;
    let rb = earth_radius + h;
    let rg = earth_radius + h0;
    let c = zenith.cos();
    // rb^2 - rg^2 sin^2 written as a difference of squares to keep the
    // vertical case exact.
    let s = rg * zenith.sin();
    let disc = (rb - s) * (rb + s);
    Ok(disc.sqrt() - rg * c)
}

pub fn slant_range(h0: f64, h: f64, zenith: f64) -> Result<f64> {
    slant_range_on(EARTH_RADIUS, h0, h, zenith)
}

/// Straight-line distance between a station at `h0` and a platform at `h`
/// whose ground tracks are separated by the arc length `s`.
pub fn slant_range_from_arc_on(earth_radius: f64, h0: f64, h: f64, s: f64) -> Result<f64> {
    if !(s >= 0.0) || !(h0 >= 0.0) || !(h >= 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "arc length {s} m and altitudes ({h0}, {h}) m must be non-negative"
        )));
    }
    let rg = earth_radius + h0;
    let rs = earth_radius + h;
    let theta_s = s / earth_radius;
    // Law of cosines with 1 - cos written via sin^2 to avoid cancellation.
    let half = (0.5 * theta_s).sin();
    let sq = (rs - rg).powi(2) + 4.0 * rg * rs * half * half;
    Ok(sq.sqrt())
}

pub fn slant_range_from_arc(h0: f64, h: f64, s: f64) -> Result<f64> {
    slant_range_from_arc_on(EARTH_RADIUS, h0, h, s)
}

/// Lowest altitude reached by the straight path between two platforms at
/// altitude `h` separated by the chord `z`.
pub fn horizontal_min_altitude_on(earth_radius: f64, h: f64, z: f64) -> Result<f64> {
    let r = earth_radius + h;
    if !(z >= 0.0) || z >= 2.0 * r {
        return Err(Error::InvalidGeometry(format!(
            "chord {z} m outside [0, {}) m",
            2.0 * r
        )));
    }
    let theta_s = (z / (2.0 * r)).asin();
    let h_min = theta_s.cos() * r - earth_radius;
    if h_min < 0.0 {
        return Err(Error::InvalidGeometry(format!(
            "path between platforms at {h} m separated by {z} m passes below the surface (h_min = {h_min:.1} m)"
        )));
    }
    Ok(h_min)
}

pub fn horizontal_min_altitude(h: f64, z: f64) -> Result<f64> {
    horizontal_min_altitude_on(EARTH_RADIUS, h, z)
}

/// Chord between two platforms at altitude `h` whose ground tracks are `s` apart.
pub fn chord_from_arc_on(earth_radius: f64, h: f64, s: f64) -> f64 {
    2.0 * (earth_radius + h) * (0.5 * s / earth_radius).sin()
}

pub fn chord_from_arc(h: f64, s: f64) -> f64 {
    chord_from_arc_on(EARTH_RADIUS, h, s)
}

impl LinkGeometry {
    /// Slant link specified by the zenith angle at the ground station.
    pub fn slant(h0: f64, h: f64, zenith: f64) -> Result<Self> {
        Self::slant_on(EARTH_RADIUS, h0, h, zenith)
    }

    pub fn slant_on(earth_radius: f64, h0: f64, h: f64, zenith: f64) -> Result<Self> {
        let z = slant_range_on(earth_radius, h0, h, zenith)?;
        Ok(Self {
            ground_alt: h0,
            platform_alt: h,
            zenith,
            earth_radius,
            slant_range: z,
            arc_length: None,
            subtending: None,
            min_altitude: None,
        })
    }

    /// Slant link specified by the arc length between the station and the
    /// platform's ground track. The zenith angle is solved from the triangle
    /// formed by the Earth's center, the station and the platform.
    pub fn from_arc(h0: f64, h: f64, s: f64) -> Result<Self> {
        Self::from_arc_on(EARTH_RADIUS, h0, h, s)
    }

    pub fn from_arc_on(earth_radius: f64, h0: f64, h: f64, s: f64) -> Result<Self> {
        let z = slant_range_from_arc_on(earth_radius, h0, h, s)?;
        if !(h > h0) || !(z > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "degenerate slant link: h0 = {h0} m, H = {h} m, s = {s} m"
            )));
        }
        let rg = earth_radius + h0;
        let rs = earth_radius + h;
        let theta_s = s / earth_radius;
        let cos_zenith = ((rs * theta_s.cos() - rg) / z).clamp(-1.0, 1.0);
        let zenith = cos_zenith.acos();
        check_slant(h0, h, zenith)?;
        Ok(Self {
            ground_alt: h0,
            platform_alt: h,
            zenith,
            earth_radius,
            slant_range: z,
            arc_length: Some(s),
            subtending: Some(theta_s),
            min_altitude: None,
        })
    }

    /// Horizontal link between two platforms at altitude `h` separated by the
    /// straight-line distance `z`.
    pub fn horizontal(h: f64, z: f64) -> Result<Self> {
        Self::horizontal_on(EARTH_RADIUS, h, z)
    }

    pub fn horizontal_on(earth_radius: f64, h: f64, z: f64) -> Result<Self> {
        if !(z > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "horizontal link length {z} m must be > 0"
            )));
        }
        let h_min = horizontal_min_altitude_on(earth_radius, h, z)?;
        let r = earth_radius + h;
        Ok(Self {
            ground_alt: h,
            platform_alt: h,
            zenith: FRAC_PI_2,
            earth_radius,
            slant_range: z,
            arc_length: None,
            subtending: Some((z / (2.0 * r)).asin()),
            min_altitude: Some(h_min),
        })
    }

    pub fn is_horizontal(&self) -> bool {
        self.min_altitude.is_some()
    }
}

/// Collimated Gaussian beam after propagating a distance `z` from its waist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamState {
    pub wavelength: f64,
    pub wavenumber: f64,
    pub waist: f64,
    pub distance: f64,
    pub rayleigh_range: f64,
    /// W(z)
    pub radius: f64,
    /// F(z); infinite at the waist.
    pub curvature: f64,
    /// Gouy phase ζ(z).
    pub gouy: f64,
    pub theta0: f64,
    pub theta0_bar: f64,
    pub lambda0: f64,
    pub theta: f64,
    pub theta_bar: f64,
    pub lambda: f64,
    /// Curvature parameter `a` used by the horizontal Fried parameter.
    pub a: f64,
}

impl BeamState {
    pub fn new(wavelength: f64, waist: f64, z: f64) -> Result<Self> {
        check_positive("wavelength", wavelength)?;
        check_positive("waist", waist)?;
        if !(z >= 0.0) || !z.is_finite() {
            return Err(Error::InvalidParameter {
                name: "distance",
                value: z,
                expected: "a finite value >= 0",
            });
        }
        let k = 2.0 * PI / wavelength;
        let z0 = PI * waist * waist / wavelength;
        let ratio = z / z0;
        let radius = waist * (1.0 + ratio * ratio).sqrt();
        let curvature = if z == 0.0 {
            f64::INFINITY
        } else {
            z * (1.0 + (z0 / z).powi(2))
        };
        // Collimated beam: Θ0 = 1 - z/F(0) with F(0) infinite.
        let theta0 = 1.0;
        let lambda0 = 2.0 * z / (k * waist * waist);
        let denom = 1.0 + lambda0 * lambda0;
        let theta = theta0 / denom;
        let lambda = lambda0 / denom;
        Ok(Self {
            wavelength,
            wavenumber: k,
            waist,
            distance: z,
            rayleigh_range: z0,
            radius,
            curvature,
            gouy: ratio.atan(),
            theta0,
            theta0_bar: 1.0 - theta0,
            lambda0,
            theta,
            theta_bar: 1.0 - theta,
            lambda,
            a: curvature_param(theta),
        })
    }
}

fn curvature_param(theta: f64) -> f64 {
    if theta >= 0.0 {
        let d = 1.0 - theta;
        if d < 1e-6 {
            // (1 - Θ^{8/3}) / (1 - Θ) expanded around Θ = 1.
            8.0 / 3.0 - (20.0 / 9.0) * d
        } else {
            (1.0 - theta.powf(8.0 / 3.0)) / d
        }
    } else {
        (1.0 + theta.abs().powf(8.0 / 3.0)) / (1.0 - theta)
    }
}
