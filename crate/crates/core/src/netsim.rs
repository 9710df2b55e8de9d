//! Network nodes, Monte Carlo protocol runs (BB84, entanglement distribution,
//! MDI) and key-rate arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelModel;
use crate::error::{check_fraction, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Qonnector,
    Qlient,
    Balloon,
}

/// A network node placed along the great circle through the two cities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    /// Position along the great circle, meters.
    pub arc: f64,
    /// Altitude above sea level, meters.
    pub altitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolParams {
    /// Source repetition rate in Hz.
    pub source_rate: f64,
    /// Emission probability per pulse.
    pub mean_photon: f64,
    pub qber_x: f64,
    pub qber_z: f64,
    /// Bell-state measurement success probability, detectors included.
    pub p_bsm: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            source_rate: 80e6,
            mean_photon: 0.01,
            qber_x: 0.04,
            qber_z: 0.04,
            p_bsm: bsm_probability(0.25, 0.25),
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.source_rate > 0.0) || !self.source_rate.is_finite() {
            return Err(Error::InvalidParameter {
                name: "r_source",
                value: self.source_rate,
                expected: "a rate > 0",
            });
        }
        if !(self.mean_photon > 0.0 && self.mean_photon <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "mu",
                value: self.mean_photon,
                expected: "a value in (0, 1]",
            });
        }
        for (name, q) in [("q_x", self.qber_x), ("q_z", self.qber_z)] {
            if !(0.0..0.5).contains(&q) {
                return Err(Error::InvalidParameter {
                    name,
                    value: q,
                    expected: "a QBER in [0, 0.5)",
                });
            }
        }
        check_fraction("p_bsm", self.p_bsm)?;
        Ok(())
    }
}

/// Photonic BSM success: half of the Bell states, both detectors clicking.
pub fn bsm_probability(p_det_a: f64, p_det_b: f64) -> f64 {
    0.5 * p_det_a * p_det_b
}

pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

fn key_fraction(qber_x: f64, qber_z: f64) -> f64 {
    (1.0 - binary_entropy(qber_x) - binary_entropy(qber_z)).max(0.0)
}

/// Secret key rate from a raw rate, clamped at zero.
pub fn skr(raw_rate: f64, qber_x: f64, qber_z: f64) -> f64 {
    raw_rate * key_fraction(qber_x, qber_z)
}

/// Monte Carlo settings. Results depend only on `seed` and the stream of
/// each run, never on the thread count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub trials: u64,
    pub seed: u64,
}

/// Runs `f` on a dedicated pool of `workers` threads (0 keeps the global
/// pool).
pub fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub sent: u64,
    pub received: u64,
    pub mean_eff: f64,
    pub stderr: f64,
    /// Product of the analytic channel means (times p_bsm for MDI).
    pub analytic_mean: f64,
    pub raw_rate: f64,
    pub skr: f64,
    pub skr_err: f64,
    /// Fewer than 100 successes.
    pub low_statistics: bool,
}

impl SimResult {
    pub fn from_counts(
        sent: u64,
        received: u64,
        analytic_mean: f64,
        emissions_per_second: f64,
        params: &ProtocolParams,
    ) -> Self {
        let p = if sent == 0 {
            0.0
        } else {
            received as f64 / sent as f64
        };
        let stderr = if sent == 0 {
            0.0
        } else {
            (p * (1.0 - p) / sent as f64).sqrt()
        };
        let fraction = key_fraction(params.qber_x, params.qber_z);
        let raw_rate = emissions_per_second * p;
        let low_statistics = received < 100;
        if low_statistics {
            log::warn!("only {received} successes out of {sent}; rate estimate is noisy");
        }
        Self {
            sent,
            received,
            mean_eff: p,
            stderr,
            analytic_mean,
            raw_rate,
            skr: raw_rate * fraction,
            skr_err: emissions_per_second * stderr * fraction,
            low_statistics,
        }
    }
}

const CHUNK: u64 = 4096;

/// Counts successful trials. Trial `i` reads `uniforms` doubles starting at
/// a fixed position of the ChaCha stream `stream`, so the count is identical
/// for any chunking or thread count.
pub fn count_successes<F>(sim: &SimConfig, stream: u64, uniforms: usize, trial: F) -> Result<u64>
where
    F: Fn(&[f64]) -> bool + Sync,
{
    let chunks = sim.trials.div_ceil(CHUNK);
    let words_per_trial = 2 * uniforms as u128;
    Ok((0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(sim.trials);
            let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
            rng.set_stream(stream);
            rng.set_word_pos(start as u128 * words_per_trial);
            let mut u = vec![0.0; uniforms];
            let mut hits = 0;
            for _ in start..end {
                for x in u.iter_mut() {
                    *x = rng.random::<f64>();
                }
                if trial(&u) {
                    hits += 1;
                }
            }
            hits
        })
        .sum())
}

fn path_passes(path: &[&ChannelModel], u: &[f64]) -> bool {
    path.iter()
        .zip(u.chunks_exact(3))
        .all(|(ch, w)| ch.sample_transmission(w[0], w[1], w[2]))
}

fn path_mean(path: &[&ChannelModel]) -> f64 {
    path.iter().map(|c| c.mean_efficiency()).product()
}

/// Prepare-and-measure BB84 over a chain of channels.
pub fn run_bb84(
    path: &[&ChannelModel],
    params: &ProtocolParams,
    sim: &SimConfig,
    stream: u64,
) -> Result<SimResult> {
    params.validate()?;
    let received = count_successes(sim, stream, 3 * path.len(), |u| path_passes(path, u))?;
    Ok(SimResult::from_counts(
        sim.trials,
        received,
        path_mean(path),
        params.source_rate * params.mean_photon,
        params,
    ))
}

/// Entangled pairs from a middle node; a pair counts when both photons
/// arrive.
pub fn run_entanglement(
    path_a: &[&ChannelModel],
    path_b: &[&ChannelModel],
    params: &ProtocolParams,
    sim: &SimConfig,
    stream: u64,
) -> Result<SimResult> {
    params.validate()?;
    let na = 3 * path_a.len();
    let received = count_successes(sim, stream, na + 3 * path_b.len(), |u| {
        path_passes(path_a, &u[..na]) && path_passes(path_b, &u[na..])
    })?;
    Ok(SimResult::from_counts(
        sim.trials,
        received,
        path_mean(path_a) * path_mean(path_b),
        params.source_rate * params.mean_photon,
        params,
    ))
}

/// MDI rounds: both photons reach the middle node and the BSM succeeds.
/// Both parties emit each round, hence μ² in the rate.
pub fn run_mdi(
    path_a: &[&ChannelModel],
    path_b: &[&ChannelModel],
    params: &ProtocolParams,
    sim: &SimConfig,
    stream: u64,
) -> Result<SimResult> {
    params.validate()?;
    let na = 3 * path_a.len();
    let nb = 3 * path_b.len();
    let p_bsm = params.p_bsm;
    let received = count_successes(sim, stream, na + nb + 1, |u| {
        path_passes(path_a, &u[..na]) && path_passes(path_b, &u[na..na + nb]) && u[na + nb] < p_bsm
    })?;
    Ok(SimResult::from_counts(
        sim.trials,
        received,
        path_mean(path_a) * path_mean(path_b) * p_bsm,
        params.source_rate * params.mean_photon * params.mean_photon,
        params,
    ))
}

/// End-to-end rate of a trusted-node chain: the slowest sub-link.
pub fn trusted_node_rate(sublinks: &[SimResult]) -> Result<f64> {
    sublinks
        .iter()
        .map(|r| r.skr)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::Config("trusted-node chain has no sub-links".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_fiber, ChannelKind};
    use approx::assert_relative_eq;

    fn sim(trials: u64) -> SimConfig {
        SimConfig { trials, seed: 7 }
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert_relative_eq!(binary_entropy(0.5), 1.0);
        assert!((binary_entropy(0.04) - 0.24229).abs() < 1e-5);
    }

    #[test]
    fn skr_values() {
        assert_eq!(skr(1000.0, 0.0, 0.0), 1000.0);
        assert_eq!(skr(1000.0, 0.25, 0.25), 0.0);
        assert!((skr(8e5, 0.04, 0.04) - 8e5 * 0.51541).abs() < 8e5 * 1e-5);
    }

    #[test]
    fn bsm_probability_for_spads() {
        assert_eq!(bsm_probability(0.25, 0.25), 0.03125);
    }

    #[test]
    fn lossless_bb84() {
        let ch = ChannelModel::fixed(ChannelKind::Fiber, 1.0).unwrap();
        let r = run_bb84(&[&ch], &ProtocolParams::default(), &sim(10_000), 0).unwrap();
        assert_eq!(r.received, 10_000);
        assert_relative_eq!(r.raw_rate, 8e5);
        assert!((r.skr - 412_328.0).abs() < 10.0, "{}", r.skr);
    }

    #[test]
    fn counts_do_not_depend_on_workers() {
        let ch = build_fiber(50.0, 0.85).unwrap();
        let runs: Vec<u64> = [1, 3, 8]
            .iter()
            .map(|&w| {
                in_pool(w, || {
                    run_bb84(&[&ch], &ProtocolParams::default(), &sim(50_001), 5)
                })
                .unwrap()
                .unwrap()
                .received
            })
            .collect();
        assert!(runs.windows(2).all(|w| w[0] == w[1]), "{runs:?}");
    }

    #[test]
    fn entanglement_and_mdi_limits() {
        let one = ChannelModel::fixed(ChannelKind::Fiber, 1.0).unwrap();
        let zero = ChannelModel::fixed(ChannelKind::Fiber, 0.0).unwrap();
        let p = ProtocolParams::default();
        let r = run_entanglement(&[&one], &[&one], &p, &sim(1000), 1).unwrap();
        assert_eq!(r.received, 1000);
        assert_relative_eq!(r.raw_rate, p.source_rate * p.mean_photon);
        let r = run_entanglement(&[&one], &[&zero], &p, &sim(1000), 1).unwrap();
        assert_eq!(r.received, 0);
        assert!(r.low_statistics);
        let r = run_mdi(&[&one], &[&one], &p, &sim(200_000), 2).unwrap();
        assert!((r.mean_eff - p.p_bsm).abs() < 4.0 * r.stderr);
    }

    #[test]
    fn trusted_rate_is_minimum() {
        let mk = |skr| SimResult {
            sent: 1,
            received: 1,
            mean_eff: 1.0,
            stderr: 0.0,
            analytic_mean: 1.0,
            raw_rate: skr,
            skr,
            skr_err: 0.0,
            low_statistics: false,
        };
        let rows = [mk(112.01), mk(24.65), mk(70.71)];
        assert_eq!(trusted_node_rate(&rows).unwrap(), 24.65);
        assert!(trusted_node_rate(&[]).is_err());
    }
}
