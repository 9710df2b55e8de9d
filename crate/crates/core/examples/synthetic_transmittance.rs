//! Writes the synthetic transmittance table shipped in `data/`.
//!
//! Extinction is a sum of two exponential layers (boundary-layer aerosol and
//! a molecular/absorption background) integrated along straight rays over a
//! spherical Earth. The aerosol depth is calibrated so that the vertical path
//! from 20 m to 35 km transmits `VERTICAL_TARGET`.
//!
//! cargo run -p skylink-core --example synthetic_transmittance > data/transmittance_1550nm.csv

use skylink::geometry::{slant_range, EARTH_RADIUS};
use skylink::quadrature::{integrate, Tolerance};

const AEROSOL_SCALE: f64 = 1_200.0;
const MOLECULAR_SCALE: f64 = 8_000.0;
const MOLECULAR_DEPTH: f64 = 0.03;
const VERTICAL_TARGET: f64 = 0.7935;

struct Atmosphere {
    aerosol_depth: f64,
}

impl Atmosphere {
    fn extinction(&self, h: f64) -> f64 {
        let h = h.max(0.0);
        self.aerosol_depth / AEROSOL_SCALE * (-h / AEROSOL_SCALE).exp()
            + MOLECULAR_DEPTH / MOLECULAR_SCALE * (-h / MOLECULAR_SCALE).exp()
    }

    fn slant(&self, zenith_deg: f64, h0: f64, h: f64) -> f64 {
        let theta = zenith_deg.to_radians();
        let r0 = EARTH_RADIUS + h0;
        let z = slant_range(h0, h, theta).expect("valid slant geometry");
        let alt = |s: f64| (r0 * r0 + s * s + 2.0 * r0 * s * theta.cos()).sqrt() - EARTH_RADIUS;
        let depth = integrate(
            |s| self.extinction(alt(s)),
            0.0,
            z,
            Tolerance::relative(1e-10),
        )
        .expect("smooth integrand")
        .value;
        (-depth).exp()
    }

    fn horizontal(&self, h_min: f64, h: f64) -> f64 {
        let rm = EARTH_RADIUS + h_min;
        let rh = EARTH_RADIUS + h;
        let half = (rh * rh - rm * rm).sqrt();
        let alt = |x: f64| (rm * rm + x * x).sqrt() - EARTH_RADIUS;
        let depth = 2.0
            * integrate(
                |x| self.extinction(alt(x)),
                0.0,
                half,
                Tolerance::relative(1e-10),
            )
            .expect("smooth integrand")
            .value;
        (-depth).exp()
    }
}

fn main() {
    let (h0, h) = (20.0, 35_000.0);
    let layer = |scale: f64| (-h0 / scale).exp() - (-h / scale).exp();
    let aerosol_depth =
        (-VERTICAL_TARGET.ln() - MOLECULAR_DEPTH * layer(MOLECULAR_SCALE)) / layer(AEROSOL_SCALE);
    let atm = Atmosphere { aerosol_depth };

    println!("# lambda_nm=1550");
    println!("# synthetic two-layer Beer-Lambert atmosphere, not radiative-transfer output");
    println!("# aerosol depth {aerosol_depth:.6} (scale {AEROSOL_SCALE} m), molecular depth {MOLECULAR_DEPTH} (scale {MOLECULAR_SCALE} m)");
    println!("zenith_deg,ground_alt_m,platform_alt_m,transmittance");
    let platforms: Vec<f64> = (0..=10).map(|i| 15_000.0 + 2_500.0 * i as f64).collect();
    for &g in &[0.0, 20.0, 100.0, 500.0, 1_000.0] {
        for &p in &platforms {
            for z in (0..=85).step_by(5) {
                println!("{z},{g},{p},{:.6}", atm.slant(z as f64, g, p));
            }
        }
    }
    for &p in &platforms {
        for dip in [
            0.0, 250.0, 500.0, 1_000.0, 2_000.0, 4_000.0, 8_000.0, 15_000.0,
        ] {
            println!("90,{},{p},{:.6}", p - dip, atm.horizontal(p - dip, p));
        }
    }
}
