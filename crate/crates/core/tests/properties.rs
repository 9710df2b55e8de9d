use proptest::prelude::*;

use skylink::channel::{build_fiber, ChannelKind, ChannelModel};
use skylink::collection::{general_pdf, weibull_pdf, CollectionParams};
use skylink::coupling::{residual_phase_pdf, ZernikeOrder, ZernikeSpectrum};
use skylink::geometry::{slant_range, slant_range_from_arc, LinkGeometry, EARTH_RADIUS};
use skylink::netsim::{run_bb84, skr, trusted_node_rate, ProtocolParams, SimConfig, SimResult};

fn spectrum(variances: &[f64]) -> ZernikeSpectrum {
    ZernikeSpectrum {
        orders: variances
            .iter()
            .enumerate()
            .map(|(i, &v)| ZernikeOrder {
                n: i as u32 + 1,
                variance: v,
                multiplicity: i as u32 + 2,
                attenuation: 1.0,
            })
            .collect(),
        max_corrected_order: 0,
    }
}

fn result_with_skr(v: f64) -> SimResult {
    SimResult {
        sent: 1,
        received: 0,
        mean_eff: 0.0,
        stderr: 0.0,
        analytic_mean: 0.0,
        raw_rate: v,
        skr: v,
        skr_err: 0.0,
        low_statistics: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arc_and_zenith_forms_agree(s in 0.0f64..300_000.0, h in 15_000.0f64..40_000.0) {
        let g = LinkGeometry::from_arc(20.0, h, s).unwrap();
        let z = slant_range(20.0, h, g.zenith).unwrap();
        prop_assert!((z - slant_range_from_arc(20.0, h, s).unwrap()).abs() < 1e-6 * z);
        prop_assert!(z >= h - 20.0 - 1e-6);
    }

    #[test]
    fn slant_range_grows_with_zenith(a in 0.0f64..1.5, b in 0.0f64..1.5) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(slant_range(20.0, 35_000.0, lo).unwrap() <= slant_range(20.0, 35_000.0, hi).unwrap());
    }

    #[test]
    fn horizontal_dip_below_platform(h in 15_000.0f64..40_000.0, z in 1_000.0f64..400_000.0) {
        match LinkGeometry::horizontal(h, z) {
            Ok(g) => {
                let dip = g.min_altitude.unwrap();
                prop_assert!(dip <= h && dip >= 0.0);
            }
            // Earth-blocked chords are the only admissible failure.
            Err(_) => prop_assert!((EARTH_RADIUS + h).powi(2) - (z / 2.0).powi(2) < EARTH_RADIUS.powi(2)),
        }
    }

    #[test]
    fn collection_pdfs_are_proper(
        radius in 0.1f64..0.4,
        short_term in 0.1f64..2.0,
        sigma in 0.001f64..0.3,
        scint in 0.0f64..0.5,
    ) {
        let p = CollectionParams { aperture_radius: radius, short_term, wander_sigma: sigma, scint_index: scint };
        for d in [weibull_pdf(&p).unwrap(), general_pdf(&p).unwrap()] {
            let t = d.as_tabulated().unwrap();
            let cdf = t.cdf_values();
            prop_assert!(cdf.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!((cdf[cdf.len() - 1] - 1.0).abs() < 1e-12);
            prop_assert!(d.mean() > 0.0 && d.mean() <= d.cap() && d.cap() <= 1.0);
            let mut last = 0.0;
            for i in 0..=20 {
                let x = d.sample(i as f64 / 20.0 * 0.999_999);
                prop_assert!(x >= last);
                last = x;
            }
        }
    }

    #[test]
    fn residual_phase_is_normalized(v in proptest::collection::vec(1e-4f64..0.05, 1..8)) {
        let xi = residual_phase_pdf(&spectrum(&v)).unwrap();
        prop_assert!((xi.raw_mass - 1.0).abs() < 1e-3, "{}", xi.raw_mass);
        prop_assert!(xi.cdf.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!((xi.mean_from_table() / xi.mean - 1.0).abs() < 5e-3);
    }

    #[test]
    fn key_rate_bounded_by_raw_rate(r in 0.0f64..1e7, qx in 0.0f64..0.5, qz in 0.0f64..0.5) {
        let k = skr(r, qx, qz);
        prop_assert!(k >= 0.0 && k <= r);
    }

    #[test]
    fn trusted_rate_ignores_order(mut rates in proptest::collection::vec(0.0f64..1e6, 1..7)) {
        let a: Vec<SimResult> = rates.iter().map(|&v| result_with_skr(v)).collect();
        rates.reverse();
        let b: Vec<SimResult> = rates.iter().map(|&v| result_with_skr(v)).collect();
        let (ra, rb) = (trusted_node_rate(&a).unwrap(), trusted_node_rate(&b).unwrap());
        prop_assert_eq!(ra, rb);
        prop_assert!(a.iter().all(|r| ra <= r.skr));
    }

    #[test]
    fn fiber_factorizes(len in 0.0f64..200.0, p in 0.0f64..1.0) {
        let ch = build_fiber(len, p).unwrap();
        let expected = ch.eta_atm * ch.collection.mean() * ch.coupling.mean() * ch.detector_eff;
        prop_assert_eq!(ch.mean_efficiency(), expected);
        prop_assert!((ch.mean_efficiency() - 10f64.powf(-0.018 * len) * p).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulated_mean_tracks_analytic(eff in 0.01f64..0.99, seed in any::<u64>()) {
        let ch = ChannelModel::fixed(ChannelKind::Fiber, eff).unwrap();
        let sim = SimConfig { trials: 45_000, seed };
        let r = run_bb84(&[&ch], &ProtocolParams::default(), &sim, 0).unwrap();
        prop_assert!(r.received <= r.sent);
        // 5 sigma keeps spurious failures negligible across cases.
        prop_assert!((r.mean_eff - eff).abs() < 5.0 * r.stderr.max(1e-9));
        let again = run_bb84(&[&ch], &ProtocolParams::default(), &sim, 0).unwrap();
        prop_assert_eq!(r, again);
    }
}
