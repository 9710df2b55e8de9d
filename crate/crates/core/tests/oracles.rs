//! Library values checked against independent re-implementations.

use approx::assert_relative_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use skylink::beam_dynamics::wander_variance_downlink;
use skylink::collection::{weibull_params, weibull_pdf, CollectionParams};
use skylink::coupling::{
    ao_attenuation, mean_eta_phi, rayleigh_check, residual_phase_pdf, smf_pdf, zernike_variances,
    AoConfig, EtaPhiMode, LoopTransfer,
};
use skylink::geometry::{
    horizontal_min_altitude, slant_range, slant_range_from_arc, BeamState, LinkGeometry,
    EARTH_RADIUS,
};
use skylink::turbulence::{
    fried_downlink, isoplanatic_angle_uplink, rytov_downlink, rytov_horizontal,
    scint_index_aperture, spherical_rytov, TurbulenceProfile,
};

const LAMBDA: f64 = 1550e-9;

fn hv() -> TurbulenceProfile {
    TurbulenceProfile::hufnagel_valley(9.6e-14, 10.0).unwrap()
}

fn hv_cn2(h: f64) -> f64 {
    let a = 0.00594 * (10.0f64 / 27.0).powi(2) * (h * 1e-5).powi(10) * (-h / 1000.0).exp();
    a + 2.7e-16 * (-h / 1500.0).exp() + 9.6e-14 * (-h / 100.0).exp()
}

/// Composite Simpson on `[a, b]` with `n` (even) intervals.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// ∫ Cn²(h) w(h) dh with a fine step through the ground layer.
fn path_simpson<W: Fn(f64) -> f64>(h0: f64, h: f64, w: W) -> f64 {
    let f = |x: f64| hv_cn2(x) * w(x);
    let split = (h0 + 3000.0).min(h);
    simpson(f, h0, split, 600_000) + simpson(f, split, h, 400_000)
}

/// Marches along the ray from the station until it crosses radius R + H.
fn ray_sphere(h0: f64, h: f64, zenith: f64) -> f64 {
    let (ox, oy) = (0.0, EARTH_RADIUS + h0);
    let (dx, dy) = (zenith.sin(), zenith.cos());
    let target = EARTH_RADIUS + h;
    let radius = |t: f64| ((ox + t * dx).powi(2) + (oy + t * dy).powi(2)).sqrt();
    let (mut lo, mut hi) = (0.0, 1e4);
    while radius(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if radius(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn slant_range_matches_ray_marching() {
    let z = slant_range(0.0, 20_000.0, 60f64.to_radians()).unwrap();
    assert_relative_eq!(
        z,
        ray_sphere(0.0, 20_000.0, 60f64.to_radians()),
        max_relative = 1e-9
    );
    assert!((z - 39_810.0).abs() < 10.0, "{z}");
    for deg in [0.0, 15.0, 45.0, 70.0, 85.0] {
        let t = f64::to_radians(deg);
        assert_relative_eq!(
            slant_range(20.0, 35_000.0, t).unwrap(),
            ray_sphere(20.0, 35_000.0, t),
            max_relative = 1e-9
        );
    }
}

#[test]
fn arc_range_matches_cartesian_chord() {
    let (h0, h, s) = (20.0, 35_000.0, 100_000.0);
    let phi = s / EARTH_RADIUS;
    let (ga, gb) = (EARTH_RADIUS + h0, EARTH_RADIUS + h);
    let dx = gb * phi.sin();
    let dy = gb * phi.cos() - ga;
    let chord = (dx * dx + dy * dy).sqrt();
    assert_relative_eq!(
        slant_range_from_arc(h0, h, s).unwrap(),
        chord,
        max_relative = 1e-12
    );
    // The zenith recovered from the arc reproduces the same range.
    let g = LinkGeometry::from_arc(h0, h, s).unwrap();
    assert_relative_eq!(
        slant_range(h0, h, g.zenith).unwrap(),
        chord,
        max_relative = 1e-9
    );
}

#[test]
fn horizontal_dip_matches_chord_midpoint() {
    let (h, z) = (25_000.0, 100_000.0);
    let r = EARTH_RADIUS + h;
    let expected = (r * r - (z / 2.0) * (z / 2.0)).sqrt() - EARTH_RADIUS;
    let got = horizontal_min_altitude(h, z).unwrap();
    assert_relative_eq!(got, expected, max_relative = 1e-12);
    assert!((got - 24_804.0).abs() < 5.0, "{got}");
}

#[test]
fn beam_radius_at_twenty_km() {
    let b = BeamState::new(LAMBDA, 0.1, 20_000.0).unwrap();
    let z0 = std::f64::consts::PI * 0.01 / LAMBDA;
    assert_relative_eq!(b.rayleigh_range, z0, max_relative = 1e-14);
    assert!((b.rayleigh_range - 20_268.0).abs() < 5.0);
    assert!((b.radius - 0.1405).abs() < 5e-4, "{}", b.radius);
}

#[test]
fn hufnagel_valley_direct_values() {
    let p = hv();
    for h in [0.0, 50.0, 1_000.0, 10_000.0, 20_000.0, 35_000.0] {
        assert_relative_eq!(p.cn2(h), hv_cn2(h), max_relative = 1e-12);
    }
    let c20 = p.cn2(20_000.0);
    assert!((c20 / 1.7e-19 - 1.0).abs() < 0.05, "{c20:e}");
}

#[test]
fn horizontal_rytov_direct_value() {
    let k = 2.0 * std::f64::consts::PI / LAMBDA;
    let r = rytov_horizontal(1.72e-19, k, 100_000.0);
    assert!((r - 0.016).abs() < 0.001, "{r}");
}

fn baseline_geometry() -> (LinkGeometry, BeamState) {
    let g = LinkGeometry::slant(20.0, 20_000.0, 70f64.to_radians()).unwrap();
    let b = BeamState::new(LAMBDA, 0.1, g.slant_range).unwrap();
    (g, b)
}

#[test]
fn slant_rytov_matches_simpson() {
    let (g, b) = baseline_geometry();
    let (h0, h) = (g.ground_alt, g.platform_alt);
    let integral = path_simpson(h0, h, |x| {
        ((x - h0) * (h - x) / (h - h0)).max(0.0).powf(5.0 / 6.0)
    });
    let k = b.wavenumber;
    let oracle = 2.25 * k.powf(7.0 / 6.0) * (1.0 / g.zenith.cos()).powf(11.0 / 6.0) * integral;
    assert_relative_eq!(
        rytov_downlink(&hv(), &g, k).unwrap(),
        oracle,
        max_relative = 1e-4
    );
}

#[test]
fn slant_scintillation_direct_formula() {
    let (g, b) = baseline_geometry();
    let k = b.wavenumber;
    let beta = 0.4065 * rytov_downlink(&hv(), &g, k).unwrap();
    let d = 0.4;
    let z = g.slant_range;
    let dd = k * d * d / (4.0 * z);
    let first = 0.49 * beta / (1.0 + 0.18 * dd + 0.56 * beta.powf(1.2)).powf(7.0 / 6.0);
    let second = 0.51 * beta
        / (1.0 + 0.69 * beta.powf(1.2)).powf(5.0 / 6.0)
        / (1.0 + 0.90 * dd + 0.62 * dd * beta.powf(1.2));
    let oracle = (first + second).exp() - 1.0;
    let got = scint_index_aperture(spherical_rytov(beta / 0.4065), k, z, d);
    assert_relative_eq!(got, oracle, max_relative = 1e-12);
    assert!(got < beta);
}

#[test]
fn fried_parameter_matches_simpson() {
    let (g, b) = baseline_geometry();
    let (h0, h) = (g.ground_alt, g.platform_alt);
    let span = h - h0;
    let mu1 = path_simpson(h0, h, |x| {
        (b.theta + b.theta_bar * (1.0 - (x - h0) / span)).powf(5.0 / 3.0)
    });
    let mu2 = path_simpson(h0, h, |x| ((x - h0) / span).powf(5.0 / 3.0));
    let k = b.wavenumber;
    let oracle = (g.zenith.cos()
        / (0.423 * k * k * (mu1 + 0.622 * mu2 * b.lambda.powf(11.0 / 6.0))))
    .powf(0.6);
    assert_relative_eq!(
        fried_downlink(&hv(), &g, &b).unwrap(),
        oracle,
        max_relative = 1e-4
    );
}

#[test]
fn isoplanatic_angle_matches_simpson() {
    let g = LinkGeometry::slant(20.0, 35_000.0, 0.0).unwrap();
    let b = BeamState::new(LAMBDA, 0.2, g.slant_range).unwrap();
    let (h0, h) = (g.ground_alt, g.platform_alt);
    let span = h - h0;
    let mu1 = path_simpson(h0, h, |x| {
        (b.theta + b.theta_bar * (x - h0) / span).powf(5.0 / 3.0)
    });
    let mu2 = path_simpson(h0, h, |x| (1.0 - (x - h0) / span).max(0.0).powf(5.0 / 3.0));
    let k = b.wavenumber;
    let oracle =
        1.0 / (span * (2.91 * k * k * (mu1 + 0.62 * mu2 * b.lambda.powf(11.0 / 6.0))).powf(0.6));
    assert_relative_eq!(
        isoplanatic_angle_uplink(&hv(), &g, &b).unwrap(),
        oracle,
        max_relative = 1e-4
    );
}

#[test]
fn wander_variance_matches_simpson() {
    let (g, b) = baseline_geometry();
    let (h0, h) = (g.ground_alt, g.platform_alt);
    let span = h - h0;
    let rytov = rytov_downlink(&hv(), &g, b.wavenumber).unwrap();
    let c = 1.63 * rytov.powf(1.2) * b.lambda0;
    let integral = path_simpson(h0, h, |x| {
        let xi = (x - h0) / span;
        let q = (b.theta0 + b.theta0_bar * xi).powi(2) + c * (1.0 - xi).max(0.0).powf(3.2);
        (x - h0).powi(2) / q.powf(1.0 / 6.0)
    });
    let oracle = 7.25 * (1.0 / g.zenith.cos()).powi(3) * b.waist.powf(-1.0 / 3.0) * integral;
    let got = wander_variance_downlink(&hv(), &g, &b, rytov).unwrap();
    assert_relative_eq!(got, oracle, max_relative = 1e-4);
}

/// Modified Bessel functions from their unscaled power series.
fn bessel_i(order: u32, x: f64) -> f64 {
    let mut term = (x / 2.0).powi(order as i32) / (1..=order).map(f64::from).product::<f64>();
    let mut sum = term;
    for k in 1..200 {
        term *= (x / 2.0).powi(2) / (k as f64 * (k + order) as f64);
        sum += term;
    }
    sum
}

#[test]
fn weibull_parameters_match_series_oracle() {
    let (r, w) = (0.2f64, 0.15f64);
    let x = 4.0 * r * r / (w * w);
    let eta0 = 1.0 - (-2.0 * r * r / (w * w)).exp();
    let denom = 1.0 - (-x).exp() * bessel_i(0, x);
    let log_term = (2.0 * eta0 / denom).ln();
    let shape = 2.0 * x * (-x).exp() * bessel_i(1, x) / denom / log_term;
    let scale = r * log_term.powf(-1.0 / shape);
    let p = weibull_params(r, w).unwrap();
    assert_relative_eq!(p.eta0, eta0, max_relative = 1e-12);
    assert_relative_eq!(p.shape, shape, max_relative = 1e-10);
    assert_relative_eq!(p.scale, scale, max_relative = 1e-10);
}

#[test]
fn weak_wander_mean_matches_radial_monte_carlo() {
    let params = CollectionParams {
        aperture_radius: 0.2,
        short_term: 0.15,
        wander_sigma: 0.03,
        scint_index: 0.0,
    };
    let w = weibull_params(0.2, 0.15).unwrap();
    let normal = Normal::new(0.0, params.wander_sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 400_000;
    let mc: f64 = (0..n)
        .map(|_| {
            let (x, y): (f64, f64) = (normal.sample(&mut rng), normal.sample(&mut rng));
            w.conditional_mean(x.hypot(y))
        })
        .sum::<f64>()
        / n as f64;
    let d = weibull_pdf(&params).unwrap();
    assert_relative_eq!(d.mean(), mc, max_relative = 1e-2);
}

#[test]
fn inverse_cdf_sampling_reproduces_mean() {
    let d = weibull_pdf(&CollectionParams {
        aperture_radius: 0.2,
        short_term: 0.3,
        wander_sigma: 0.08,
        scint_index: 0.0,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1_000_000;
    let mean = (0..n)
        .map(|_| d.sample(rand::Rng::random::<f64>(&mut rng)))
        .sum::<f64>()
        / n as f64;
    let sd = d.variance().sqrt();
    assert!(
        (mean - d.mean()).abs() < 3.0 * sd / 1000.0,
        "{mean} vs {}",
        d.mean()
    );
}

fn baseline_ao(n_ao: u32) -> AoConfig {
    AoConfig {
        max_corrected_order: n_ao,
        gain: 1.0,
        integration_time: 1e-3,
        delay: 2e-3,
        max_order: 150,
        loop_transfer: LoopTransfer::Standard,
    }
}

#[test]
fn residual_mean_and_closed_form_coupling() {
    let mut s = zernike_variances(0.4, 0.09, 0.3, 150).unwrap();
    ao_attenuation(&mut s, &baseline_ao(6), 0.4, 10.0).unwrap();
    let xi = residual_phase_pdf(&s).unwrap();
    let exact: f64 = s
        .orders
        .iter()
        .map(|o| o.multiplicity as f64 * o.residual())
        .sum();
    assert_relative_eq!(xi.mean_from_table(), exact, max_relative = 5e-3);
    let (max_sigma, pass) = rayleigh_check(&s);
    assert!(pass, "{max_sigma}");
    let d = smf_pdf(1.0, &s).unwrap();
    let closed = mean_eta_phi(&s, EtaPhiMode::Product);
    assert!((d.mean() - closed).abs() / d.mean() < 0.10);
}
