//! Scenario configuration, network assembly, protocol runs, parameter
//! sweeps and CSV output.
//!
//! Configurations are strict JSON: unknown keys are rejected and every
//! omitted key takes its baseline value. Lengths are in meters unless the
//! key says otherwise; angles are radians except `zenith_deg`.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beam_dynamics::PointingConfig;
use crate::channel::{
    build_downlink, build_fiber_with_loss, build_horizontal, build_uplink, ChannelKind,
    ChannelModel, ModelOptions,
};
use crate::coupling::{AoConfig, ApertureSpec, EtaPhiMode, LoopTransfer};
use crate::error::{Error, Result};
use crate::geometry::{chord_from_arc, BeamState, LinkGeometry};
use crate::netsim::{
    bsm_probability, run_bb84, run_entanglement, run_mdi, Node, NodeKind, ProtocolParams,
    SimConfig, SimResult,
};
use crate::transmittance::{ConstantTransmittance, TransmittanceProvider, TransmittanceTable};
use crate::turbulence::{LogAmpConvention, TurbulenceProfile};

/// Environment variable naming a directory that holds
/// `transmittance_<nm>nm.csv` tables for the `builtin` source.
pub const TRANSMITTANCE_DIR_ENV: &str = "SKYLINK_TRANSMITTANCE_DIR";

const BUILTIN_TABLE: &str = include_str!("../../../data/transmittance_1550nm.csv");
const BUILTIN_WAVELENGTH_NM: f64 = 1550.0;

/// Great-circle distance between Padova and Firenze, km.
pub const ITALY_SPAN_KM: f64 = 188.5;

/// Stream index reserved for end-to-end runs.
const END_TO_END: u64 = (1 << 20) - 1;
const MAX_REPEATS: u32 = (1 << 20) - 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TransmittanceSource {
    /// Table from the transmittance directory, or the bundled 1550 nm table.
    #[default]
    Builtin,
    Constant(f64),
    Table(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Bb84Trusted,
    Entanglement,
    Mdi,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Bb84Trusted => "bb84_trusted",
            Self::Entanglement => "entanglement",
            Self::Mdi => "mdi",
        })
    }
}

/// A single channel, outside any network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    /// Zenith angle at the ground station for slant links.
    #[serde(default)]
    pub zenith_deg: Option<f64>,
    /// Ground-track separation of the two ends, km. Slant and horizontal
    /// links.
    #[serde(default)]
    pub arc_km: Option<f64>,
    /// Straight-line length of a horizontal link, km.
    #[serde(default)]
    pub distance_km: Option<f64>,
    /// Fiber length, km.
    #[serde(default)]
    pub length_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    /// Position along the great circle, km.
    #[serde(default)]
    pub arc_km: Option<f64>,
    /// Position as a fraction of `span_km`.
    #[serde(default)]
    pub arc_frac: Option<f64>,
    /// Altitude in meters; defaults to `h0` on the ground and `height` for
    /// balloons.
    #[serde(default)]
    pub altitude: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
    /// Fiber length for ground-to-ground links; the ground distance if
    /// omitted.
    #[serde(default)]
    pub fiber_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub protocol: Protocol,
    /// Distance between the two outer cities, km.
    #[serde(default = "default_span")]
    pub span_km: f64,
    pub nodes: Vec<NodeSpec>,
    /// Trusted-node sub-links, and fiber lengths for any hop.
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    /// Node ids from the pair source outwards (entanglement) or from a
    /// party to the measuring node (MDI).
    #[serde(default)]
    pub path_a: Vec<String>,
    #[serde(default)]
    pub path_b: Vec<String>,
}

fn default_span() -> f64 {
    ITALY_SPAN_KM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Dotted path of the swept key, e.g. `height` or `network.span_km`.
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub wavelength_nm: f64,
    pub fiber_loss_db_km: f64,
    pub p_det_ground: f64,
    pub p_det_balloon: f64,
    /// Ground station altitude.
    pub h0: f64,
    /// Cn²(0) in m^-2/3; 0 switches turbulence off.
    pub cn2_ground: f64,
    pub eta_tr: f64,
    pub alpha_obs: f64,
    pub wind: f64,
    pub theta_pe: f64,
    pub k_i: f64,
    pub tau: f64,
    pub t_int: f64,
    pub n_max: u32,
    pub beta: f64,
    /// Balloon altitude.
    pub height: f64,
    pub w0_ground: f64,
    pub w0_balloon: f64,
    pub d_rx_ground: f64,
    pub d_rx_balloon: f64,
    pub n_ao: u32,
    pub r_source: f64,
    pub mu: f64,
    pub q_x: f64,
    pub q_z: f64,
    /// Defaults to half the product of two balloon detector efficiencies.
    pub p_bsm: Option<f64>,
    pub logamp_convention: LogAmpConvention,
    pub eta_phi_mode: EtaPhiMode,
    pub loop_tf: LoopTransfer,
    pub transmittance: TransmittanceSource,
    pub photons: u64,
    pub repeats: u32,
    pub seed: u64,
    pub channel: Option<ChannelSpec>,
    pub network: Option<NetworkSpec>,
    pub sweep: Option<SweepSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            wavelength_nm: 1550.0,
            fiber_loss_db_km: 0.18,
            p_det_ground: 0.85,
            p_det_balloon: 0.25,
            h0: 20.0,
            cn2_ground: 9.6e-14,
            eta_tr: 0.8,
            alpha_obs: 0.3,
            wind: 10.0,
            theta_pe: 1e-6,
            k_i: 1.0,
            tau: 2e-3,
            t_int: 1e-3,
            n_max: 150,
            beta: 1.12,
            height: 35_000.0,
            w0_ground: 0.2,
            w0_balloon: 0.1,
            d_rx_ground: 0.4,
            d_rx_balloon: 0.3,
            n_ao: 6,
            r_source: 80e6,
            mu: 0.01,
            q_x: 0.04,
            q_z: 0.04,
            p_bsm: None,
            logamp_convention: LogAmpConvention::default(),
            eta_phi_mode: EtaPhiMode::default(),
            loop_tf: LoopTransfer::default(),
            transmittance: TransmittanceSource::default(),
            photons: 45_000,
            repeats: 1,
            seed: 1,
            channel: None,
            network: None,
            sweep: None,
        }
    }
}

fn range(key: &str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value.is_nan() || value < lo || value > hi {
        return Err(Error::Config(format!(
            "`{key}` = {value} is outside the allowed range [{lo}, {hi}]"
        )));
    }
    Ok(())
}

fn positive(key: &str, value: f64, hi: f64) -> Result<()> {
    if !(value > 0.0 && value <= hi) {
        return Err(Error::Config(format!(
            "`{key}` = {value} is outside the allowed range (0, {hi}]"
        )));
    }
    Ok(())
}

impl ScenarioConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        positive("wavelength_nm", self.wavelength_nm, 20_000.0)?;
        range("fiber_loss_db_km", self.fiber_loss_db_km, 0.0, 10.0)?;
        range("p_det_ground", self.p_det_ground, 0.0, 1.0)?;
        range("p_det_balloon", self.p_det_balloon, 0.0, 1.0)?;
        range("h0", self.h0, 0.0, 9_000.0)?;
        range("cn2_ground", self.cn2_ground, 0.0, 1e-10)?;
        range("eta_tr", self.eta_tr, 0.0, 1.0)?;
        range("alpha_obs", self.alpha_obs, 0.0, 0.99)?;
        range("wind", self.wind, 0.0, 200.0)?;
        range("theta_pe", self.theta_pe, 0.0, 1e-2)?;
        positive("k_i", self.k_i, 10.0)?;
        range("tau", self.tau, 0.0, 1.0)?;
        positive("t_int", self.t_int, 1.0)?;
        range("n_max", self.n_max as f64, 1.0, 1000.0)?;
        range("n_ao", self.n_ao as f64, 0.0, self.n_max as f64)?;
        positive("beta", self.beta, 10.0)?;
        range("height", self.height, 1_000.0, 100_000.0)?;
        if self.height <= self.h0 {
            return Err(Error::Config(format!(
                "`height` = {} must exceed `h0` = {}",
                self.height, self.h0
            )));
        }
        positive("w0_ground", self.w0_ground, 10.0)?;
        positive("w0_balloon", self.w0_balloon, 10.0)?;
        positive("d_rx_ground", self.d_rx_ground, 20.0)?;
        positive("d_rx_balloon", self.d_rx_balloon, 20.0)?;
        positive("r_source", self.r_source, 1e12)?;
        positive("mu", self.mu, 1.0)?;
        range("q_x", self.q_x, 0.0, 0.4999)?;
        range("q_z", self.q_z, 0.0, 0.4999)?;
        if let Some(p) = self.p_bsm {
            range("p_bsm", p, 0.0, 1.0)?;
        }
        if let TransmittanceSource::Constant(v) = self.transmittance {
            range("transmittance.constant", v, 0.0, 1.0)?;
        }
        range("photons", self.photons as f64, 1.0, 1e12)?;
        range("repeats", self.repeats as f64, 1.0, MAX_REPEATS as f64)?;
        if let Some(ch) = &self.channel {
            for (key, v) in [
                ("channel.zenith_deg", ch.zenith_deg),
                ("channel.arc_km", ch.arc_km),
                ("channel.distance_km", ch.distance_km),
                ("channel.length_km", ch.length_km),
            ] {
                if let Some(v) = v {
                    let hi = if key == "channel.zenith_deg" {
                        89.9
                    } else {
                        20_000.0
                    };
                    range(key, v, 0.0, hi)?;
                }
            }
        }
        if let Some(net) = &self.network {
            range("network.span_km", net.span_km, 0.0, 20_000.0)?;
            for n in &net.nodes {
                if let Some(f) = n.arc_frac {
                    range("network.nodes.arc_frac", f, -10.0, 10.0)?;
                }
            }
            for l in &net.links {
                if let Some(f) = l.fiber_km {
                    range("network.links.fiber_km", f, 0.0, 20_000.0)?;
                }
            }
        }
        self.protocol_params()?;
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength_nm * 1e-9
    }

    pub fn profile(&self) -> Result<TurbulenceProfile> {
        if self.cn2_ground == 0.0 {
            Ok(TurbulenceProfile::none(self.wind))
        } else {
            TurbulenceProfile::hufnagel_valley(self.cn2_ground, self.wind)
        }
    }

    pub fn pointing(&self) -> Result<PointingConfig> {
        PointingConfig::new(self.theta_pe, self.eta_tr)
    }

    pub fn ao(&self) -> AoConfig {
        AoConfig {
            max_corrected_order: self.n_ao,
            gain: self.k_i,
            integration_time: self.t_int,
            delay: self.tau,
            max_order: self.n_max,
            loop_transfer: self.loop_tf,
        }
    }

    pub fn options(&self) -> ModelOptions {
        ModelOptions {
            logamp: self.logamp_convention,
            eta_phi: self.eta_phi_mode,
        }
    }

    pub fn protocol_params(&self) -> Result<ProtocolParams> {
        let params = ProtocolParams {
            source_rate: self.r_source,
            mean_photon: self.mu,
            qber_x: self.q_x,
            qber_z: self.q_z,
            p_bsm: self
                .p_bsm
                .unwrap_or_else(|| bsm_probability(self.p_det_balloon, self.p_det_balloon)),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            trials: self.photons,
            seed: self.seed,
        }
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn transmittance_provider(&self) -> Result<Box<dyn TransmittanceProvider>> {
        match &self.transmittance {
            TransmittanceSource::Constant(v) => Ok(Box::new(ConstantTransmittance::new(*v)?)),
            TransmittanceSource::Table(path) => Ok(Box::new(TransmittanceTable::load(path)?)),
            TransmittanceSource::Builtin => {
                if let Some(dir) = std::env::var_os(TRANSMITTANCE_DIR_ENV) {
                    let path = PathBuf::from(dir).join(format!(
                        "transmittance_{}nm.csv",
                        self.wavelength_nm.round()
                    ));
                    return Ok(Box::new(TransmittanceTable::load(path)?));
                }
                if (self.wavelength_nm - BUILTIN_WAVELENGTH_NM).abs() > 0.5 {
                    return Err(Error::Config(format!(
                        "no bundled transmittance table for {} nm; set {TRANSMITTANCE_DIR_ENV} or `transmittance`",
                        self.wavelength_nm
                    )));
                }
                Ok(Box::new(TransmittanceTable::parse(
                    BUILTIN_TABLE,
                    "bundled transmittance_1550nm.csv",
                )?))
            }
        }
    }
}

fn is_ground(kind: NodeKind) -> bool {
    !matches!(kind, NodeKind::Balloon)
}

/// Builds channels from a configuration.
#[derive(Debug)]
pub struct ChannelFactory<'a> {
    cfg: &'a ScenarioConfig,
    profile: TurbulenceProfile,
    pointing: PointingConfig,
    provider: Box<dyn TransmittanceProvider>,
}

impl<'a> ChannelFactory<'a> {
    pub fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        Ok(Self {
            cfg,
            profile: cfg.profile()?,
            pointing: cfg.pointing()?,
            provider: cfg.transmittance_provider()?,
        })
    }

    fn aperture(&self, diameter: f64) -> Result<ApertureSpec> {
        ApertureSpec::new(diameter, self.cfg.alpha_obs, self.cfg.beta)
    }

    pub fn detector(&self, receiver: NodeKind) -> f64 {
        if is_ground(receiver) {
            self.cfg.p_det_ground
        } else {
            self.cfg.p_det_balloon
        }
    }

    pub fn downlink(&self, geom: &LinkGeometry, p_det: f64) -> Result<ChannelModel> {
        let beam = BeamState::new(self.cfg.wavelength(), self.cfg.w0_balloon, geom.slant_range)?;
        build_downlink(
            geom,
            &self.profile,
            &beam,
            &self.aperture(self.cfg.d_rx_ground)?,
            &self.cfg.ao(),
            &self.pointing,
            self.provider.as_ref(),
            p_det,
            &self.cfg.options(),
        )
    }

    pub fn uplink(&self, geom: &LinkGeometry, p_det: f64) -> Result<ChannelModel> {
        let beam = BeamState::new(self.cfg.wavelength(), self.cfg.w0_ground, geom.slant_range)?;
        build_uplink(
            geom,
            &self.profile,
            &beam,
            &self.aperture(self.cfg.d_rx_balloon)?,
            &self.cfg.ao(),
            &self.pointing,
            self.provider.as_ref(),
            p_det,
            &self.cfg.options(),
        )
    }

    pub fn horizontal(&self, altitude: f64, distance: f64, p_det: f64) -> Result<ChannelModel> {
        let beam = BeamState::new(self.cfg.wavelength(), self.cfg.w0_balloon, distance)?;
        build_horizontal(
            altitude,
            distance,
            &self.profile,
            &beam,
            &self.aperture(self.cfg.d_rx_balloon)?,
            self.cfg.n_max,
            &self.pointing,
            self.provider.as_ref(),
            p_det,
            &self.cfg.options(),
        )
    }

    pub fn fiber(&self, length_km: f64, p_det: f64) -> Result<ChannelModel> {
        build_fiber_with_loss(length_km, self.cfg.fiber_loss_db_km, p_det)
    }

    fn slant_geometry(&self, spec: &ChannelSpec) -> Result<LinkGeometry> {
        match (spec.zenith_deg, spec.arc_km) {
            (Some(_), Some(_)) => Err(Error::Config(
                "give either `channel.zenith_deg` or `channel.arc_km`, not both".into(),
            )),
            (None, Some(s)) => LinkGeometry::from_arc(self.cfg.h0, self.cfg.height, s * 1e3),
            (z, None) => {
                LinkGeometry::slant(self.cfg.h0, self.cfg.height, z.unwrap_or(0.0).to_radians())
            }
        }
    }

    /// A stand-alone channel received by the detector of its platform.
    pub fn channel(&self, spec: &ChannelSpec) -> Result<ChannelModel> {
        let cfg = self.cfg;
        match spec.kind {
            ChannelKind::Downlink => self.downlink(&self.slant_geometry(spec)?, cfg.p_det_ground),
            ChannelKind::Uplink => self.uplink(&self.slant_geometry(spec)?, cfg.p_det_balloon),
            ChannelKind::Horizontal => {
                let distance = match (spec.distance_km, spec.arc_km) {
                    (Some(d), None) => d * 1e3,
                    (None, Some(s)) => chord_from_arc(cfg.height, s * 1e3),
                    _ => {
                        return Err(Error::Config(
                            "a horizontal channel needs exactly one of `channel.distance_km` and `channel.arc_km`".into(),
                        ))
                    }
                };
                self.horizontal(cfg.height, distance, cfg.p_det_balloon)
            }
            ChannelKind::Fiber => {
                let length = spec.length_km.ok_or_else(|| {
                    Error::Config("a fiber channel needs `channel.length_km`".into())
                })?;
                self.fiber(length, cfg.p_det_ground)
            }
        }
    }

    /// The channel carrying photons from `from` to `to`.
    pub fn hop(
        &self,
        from: &Node,
        to: &Node,
        fiber_km: Option<f64>,
        p_det: f64,
    ) -> Result<ChannelModel> {
        let ground = (from.arc - to.arc).abs();
        match (is_ground(from.kind), is_ground(to.kind)) {
            (true, true) => self.fiber(fiber_km.unwrap_or(ground / 1e3), p_det),
            (false, true) => {
                let geom = LinkGeometry::from_arc(to.altitude, from.altitude, ground)?;
                self.downlink(&geom, p_det)
            }
            (true, false) => {
                let geom = LinkGeometry::from_arc(from.altitude, to.altitude, ground)?;
                self.uplink(&geom, p_det)
            }
            (false, false) => {
                if (from.altitude - to.altitude).abs() > 1.0 {
                    return Err(Error::Config(format!(
                        "horizontal link {} -> {} joins balloons at different altitudes",
                        from.id, to.id
                    )));
                }
                if ground == 0.0 {
                    return Err(Error::InvalidGeometry(format!(
                        "balloons {} and {} share a position",
                        from.id, to.id
                    )));
                }
                let distance = chord_from_arc(from.altitude, ground);
                self.horizontal(from.altitude, distance, p_det)
            }
        }
    }
}

/// One channel of a built network.
#[derive(Debug, Clone)]
pub struct Hop {
    pub from: String,
    pub to: String,
    pub channel: ChannelModel,
}

impl Hop {
    pub fn warnings(&self) -> Vec<String> {
        let mut w = self.channel.warnings.clone();
        w.extend(self.channel.validity.failures());
        w
    }
}

/// Channels of a scenario, built once and reused across repeats.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    /// `None` for a single-channel configuration.
    pub protocol: Option<Protocol>,
    pub hops: Vec<Hop>,
    /// Hop indices of the two paths for entanglement and MDI.
    pub path_a: Vec<usize>,
    pub path_b: Vec<usize>,
    pub params: ProtocolParams,
}

fn resolve_nodes(cfg: &ScenarioConfig, net: &NetworkSpec) -> Result<HashMap<String, Node>> {
    let mut nodes = HashMap::new();
    for n in &net.nodes {
        let arc_km = match (n.arc_km, n.arc_frac) {
            (Some(a), None) => a,
            (None, Some(f)) => f * net.span_km,
            _ => {
                return Err(Error::Config(format!(
                    "node `{}` needs exactly one of `arc_km` and `arc_frac`",
                    n.id
                )))
            }
        };
        let altitude = n.altitude.unwrap_or(if is_ground(n.kind) {
            cfg.h0
        } else {
            cfg.height
        });
        let node = Node {
            id: n.id.clone(),
            kind: n.kind,
            arc: arc_km * 1e3,
            altitude,
        };
        if nodes.insert(n.id.clone(), node).is_some() {
            return Err(Error::Config(format!("duplicate node id `{}`", n.id)));
        }
    }
    Ok(nodes)
}

fn node<'n>(nodes: &'n HashMap<String, Node>, id: &str) -> Result<&'n Node> {
    nodes
        .get(id)
        .ok_or_else(|| Error::Config(format!("unknown node `{id}`")))
}

impl BuiltScenario {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        let factory = ChannelFactory::new(cfg)?;
        let params = cfg.protocol_params()?;
        match (&cfg.channel, &cfg.network) {
            (Some(spec), None) => Ok(Self {
                protocol: None,
                hops: vec![Hop {
                    from: "tx".into(),
                    to: "rx".into(),
                    channel: factory.channel(spec)?,
                }],
                path_a: Vec::new(),
                path_b: Vec::new(),
                params,
            }),
            (None, Some(net)) => Self::build_network(cfg, net, &factory, params),
            (Some(_), Some(_)) => Err(Error::Config(
                "`channel` and `network` are mutually exclusive".into(),
            )),
            (None, None) => Err(Error::Config(
                "the config defines neither `channel` nor `network`".into(),
            )),
        }
    }

    fn build_network(
        cfg: &ScenarioConfig,
        net: &NetworkSpec,
        factory: &ChannelFactory,
        params: ProtocolParams,
    ) -> Result<Self> {
        let nodes = resolve_nodes(cfg, net)?;
        let mut fiber = HashMap::new();
        for l in &net.links {
            node(&nodes, &l.from)?;
            node(&nodes, &l.to)?;
            if let Some(km) = l.fiber_km {
                fiber.insert((l.from.clone(), l.to.clone()), km);
                fiber.insert((l.to.clone(), l.from.clone()), km);
            }
        }
        let make_hop = |a: &str, b: &str, p_det: f64| -> Result<Hop> {
            let channel = factory.hop(
                node(&nodes, a)?,
                node(&nodes, b)?,
                fiber.get(&(a.to_string(), b.to_string())).copied(),
                p_det,
            )?;
            Ok(Hop {
                from: a.to_string(),
                to: b.to_string(),
                channel,
            })
        };
        let mut hops = Vec::new();
        let mut path_a = Vec::new();
        let mut path_b = Vec::new();
        match net.protocol {
            Protocol::Bb84Trusted => {
                if net.links.is_empty() {
                    return Err(Error::Config(
                        "a trusted-node network needs `network.links`".into(),
                    ));
                }
                for l in &net.links {
                    let p_det = factory.detector(node(&nodes, &l.to)?.kind);
                    hops.push(make_hop(&l.from, &l.to, p_det)?);
                }
            }
            Protocol::Entanglement | Protocol::Mdi => {
                let (a, b) = (&net.path_a, &net.path_b);
                if a.len() < 2 || b.len() < 2 {
                    return Err(Error::Config(
                        "`network.path_a` and `network.path_b` need at least two nodes".into(),
                    ));
                }
                let shared = if net.protocol == Protocol::Entanglement {
                    a[0] == b[0]
                } else {
                    a[a.len() - 1] == b[b.len() - 1]
                };
                if !shared {
                    return Err(Error::Config(format!(
                        "the two paths of a {} network must meet at the middle node",
                        net.protocol
                    )));
                }
                for (path, out) in [(a, &mut path_a), (b, &mut path_b)] {
                    for (i, w) in path.windows(2).enumerate() {
                        let last = i + 2 == path.len();
                        // Only the final receiver has a detector; for MDI it
                        // sits in the Bell-state measurement instead.
                        let p_det = if last && net.protocol == Protocol::Entanglement {
                            factory.detector(node(&nodes, &w[1])?.kind)
                        } else {
                            1.0
                        };
                        out.push(hops.len());
                        hops.push(make_hop(&w[0], &w[1], p_det)?);
                    }
                }
            }
        }
        Ok(Self {
            protocol: Some(net.protocol),
            hops,
            path_a,
            path_b,
            params,
        })
    }

    fn path(&self, idx: &[usize]) -> Vec<&ChannelModel> {
        idx.iter().map(|&i| &self.hops[i].channel).collect()
    }

    /// Runs every hop and the end-to-end protocol once, on streams derived
    /// from `point` and `repeat`.
    pub fn run_once(&self, sim: &SimConfig, point: u64, repeat: u32) -> Result<Outcome> {
        let stream = |index: u64| (point << 40) | ((repeat as u64) << 20) | index;
        let params = &self.params;
        let mut rows = Vec::with_capacity(self.hops.len());
        for (i, hop) in self.hops.iter().enumerate() {
            let result = run_bb84(&[&hop.channel], params, sim, stream(i as u64))?;
            rows.push(Row {
                kind: hop.channel.kind.to_string(),
                from: hop.from.clone(),
                to: hop.to.clone(),
                emission_rate: params.source_rate * params.mean_photon,
                result,
                warnings: hop.warnings(),
            });
        }
        let end = match self.protocol {
            None | Some(Protocol::Bb84Trusted) => bottleneck(&rows),
            Some(protocol) => {
                let (a, b) = (self.path(&self.path_a), self.path(&self.path_b));
                let (result, emission_rate) = if protocol == Protocol::Entanglement {
                    (
                        run_entanglement(&a, &b, params, sim, stream(END_TO_END))?,
                        params.source_rate * params.mean_photon,
                    )
                } else {
                    (
                        run_mdi(&a, &b, params, sim, stream(END_TO_END))?,
                        params.source_rate * params.mean_photon * params.mean_photon,
                    )
                };
                let first = &self.hops[self.path_a[0]];
                let last = &self.hops[*self.path_b.last().expect("non-empty path")];
                Row {
                    kind: protocol.to_string(),
                    from: first.from.clone(),
                    to: last.to.clone(),
                    emission_rate,
                    result,
                    warnings: rows.iter().flat_map(|r| r.warnings.clone()).collect(),
                }
            }
        };
        Ok(Outcome {
            protocol: self.protocol,
            links: rows,
            end_to_end: end,
        })
    }
}

/// Trusted-node chains run at the pace of their slowest sub-link.
fn bottleneck(rows: &[Row]) -> Row {
    let slowest = rows
        .iter()
        .min_by(|a, b| a.result.skr.total_cmp(&b.result.skr))
        .expect("at least one link");
    Row {
        kind: "end_to_end".into(),
        ..slowest.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub kind: String,
    pub from: String,
    pub to: String,
    /// Emitted states per second on which `result.raw_rate` is based.
    pub emission_rate: f64,
    pub result: SimResult,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub protocol: Option<Protocol>,
    pub links: Vec<Row>,
    pub end_to_end: Row,
}

fn pool_rows(rows: &[&Row], params: &ProtocolParams) -> Row {
    let sent = rows.iter().map(|r| r.result.sent).sum();
    let received = rows.iter().map(|r| r.result.received).sum();
    let first = rows[0];
    Row {
        result: SimResult::from_counts(
            sent,
            received,
            first.result.analytic_mean,
            first.emission_rate,
            params,
        ),
        ..first.clone()
    }
}

/// Runs all repeats of a configuration and pools the counts.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Outcome> {
    let built = BuiltScenario::build(cfg)?;
    let sim = cfg.sim();
    let runs = (0..cfg.repeats)
        .map(|r| built.run_once(&sim, 0, r))
        .collect::<Result<Vec<_>>>()?;
    let links: Vec<Row> = (0..built.hops.len())
        .map(|i| {
            let rows: Vec<&Row> = runs.iter().map(|o| &o.links[i]).collect();
            pool_rows(&rows, &built.params)
        })
        .collect();
    let end_to_end = match built.protocol {
        None | Some(Protocol::Bb84Trusted) => bottleneck(&links),
        Some(_) => {
            let rows: Vec<&Row> = runs.iter().map(|o| &o.end_to_end).collect();
            pool_rows(&rows, &built.params)
        }
    };
    Ok(Outcome {
        protocol: built.protocol,
        links,
        end_to_end,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub value: f64,
    pub repeat: u32,
    pub row: Row,
}

fn set_path(root: &mut serde_json::Value, path: &str, value: f64) -> Result<()> {
    let unknown = || Error::Config(format!("unknown sweep parameter `{path}`"));
    let mut cur = root;
    for key in path.split('.') {
        cur = match cur {
            serde_json::Value::Object(map) => map.get_mut(key).ok_or_else(unknown)?,
            serde_json::Value::Array(items) => {
                let i: usize = key.parse().map_err(|_| unknown())?;
                items.get_mut(i).ok_or_else(unknown)?
            }
            _ => return Err(unknown()),
        };
    }
    let integral = cur.is_u64() || cur.is_i64();
    *cur = if integral {
        if value.fract() != 0.0 || !(0.0..=9.0e15).contains(&value) {
            return Err(Error::Config(format!(
                "`{path}` takes non-negative integers, got {value}"
            )));
        }
        serde_json::Value::from(value as u64)
    } else if cur.is_number() || cur.is_null() {
        serde_json::Value::from(value)
    } else {
        return Err(Error::Config(format!(
            "`{path}` is not a numeric parameter"
        )));
    };
    Ok(())
}

/// The configuration with `parameter` set to `value`, validated.
pub fn with_parameter(cfg: &ScenarioConfig, parameter: &str, value: f64) -> Result<ScenarioConfig> {
    let mut json = serde_json::to_value(cfg).expect("config serializes");
    set_path(&mut json, parameter, value)?;
    let mut out: ScenarioConfig = serde_json::from_value(json)
        .map_err(|e| Error::Config(format!("sweep of `{parameter}` = {value}: {e}")))?;
    out.sweep = None;
    out.validate()?;
    Ok(out)
}

/// One row per swept value per repeat, in sweep order. Points run in
/// parallel on the current pool; their streams depend only on the index.
pub fn sweep(cfg: &ScenarioConfig, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    // Reject unknown parameters even for an empty value list.
    set_path(
        &mut serde_json::to_value(cfg).expect("config serializes"),
        &spec.parameter,
        spec.values.first().copied().unwrap_or(0.0),
    )?;
    let points = spec
        .values
        .par_iter()
        .enumerate()
        .map(|(index, &value)| -> Result<Vec<SweepRow>> {
            let point = with_parameter(cfg, &spec.parameter, value)?;
            let built = BuiltScenario::build(&point)?;
            let sim = point.sim();
            (0..point.repeats)
                .map(|repeat| {
                    let outcome = built.run_once(&sim, index as u64, repeat)?;
                    Ok(SweepRow {
                        index,
                        value,
                        repeat,
                        row: outcome.end_to_end,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(points.into_iter().flatten().collect())
}

fn metadata<W: Write>(out: &mut W, cfg: &ScenarioConfig, extra: &[(&str, String)]) -> Result<()> {
    writeln!(out, "# skylink {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(out, "# seed={}", cfg.seed)?;
    writeln!(out, "# config_sha256={}", cfg.digest())?;
    for (k, v) in extra {
        writeln!(out, "# {k}={v}")?;
    }
    Ok(())
}

fn result_fields(r: &SimResult) -> [String; 9] {
    [
        r.sent.to_string(),
        r.received.to_string(),
        r.mean_eff.to_string(),
        r.stderr.to_string(),
        r.analytic_mean.to_string(),
        r.raw_rate.to_string(),
        r.skr.to_string(),
        r.skr_err.to_string(),
        r.low_statistics.to_string(),
    ]
}

const RESULT_COLUMNS: [&str; 9] = [
    "sent",
    "received",
    "mean_eff",
    "stderr",
    "analytic_mean",
    "raw_rate_bps",
    "skr_bps",
    "skr_err_bps",
    "low_statistics",
];

/// Scenario CSV: one row per link, then the end-to-end row.
pub fn write_scenario_csv<W: Write>(
    mut out: W,
    cfg: &ScenarioConfig,
    outcome: &Outcome,
) -> Result<()> {
    let protocol = outcome
        .protocol
        .map_or_else(|| "single_channel".to_string(), |p| p.to_string());
    metadata(
        &mut out,
        cfg,
        &[
            ("protocol", protocol),
            ("photons", cfg.photons.to_string()),
            ("repeats", cfg.repeats.to_string()),
        ],
    )?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["row", "kind", "from", "to"];
    header.extend(RESULT_COLUMNS);
    header.push("warnings");
    w.write_record(&header)?;
    let labelled = outcome
        .links
        .iter()
        .enumerate()
        .map(|(i, r)| (i.to_string(), r))
        .chain(std::iter::once((
            "end_to_end".to_string(),
            &outcome.end_to_end,
        )));
    for (label, r) in labelled {
        let mut rec = vec![label, r.kind.clone(), r.from.clone(), r.to.clone()];
        rec.extend(result_fields(&r.result));
        rec.push(r.warnings.join("; "));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(
    mut out: W,
    cfg: &ScenarioConfig,
    spec: &SweepSpec,
    rows: &[SweepRow],
) -> Result<()> {
    metadata(
        &mut out,
        cfg,
        &[
            ("parameter", spec.parameter.clone()),
            ("photons", cfg.photons.to_string()),
            ("repeats", cfg.repeats.to_string()),
        ],
    )?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["index", "value", "repeat", "kind"];
    header.extend(RESULT_COLUMNS);
    header.push("warnings");
    w.write_record(&header)?;
    for s in rows {
        let mut rec = vec![
            s.index.to_string(),
            s.value.to_string(),
            s.repeat.to_string(),
            s.row.kind.clone(),
        ];
        rec.extend(result_fields(&s.row.result));
        rec.push(s.row.warnings.join("; "));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Validity checks of every channel in the configuration.
pub fn write_validity_csv<W: Write>(mut out: W, cfg: &ScenarioConfig) -> Result<()> {
    let built = BuiltScenario::build(cfg)?;
    metadata(&mut out, cfg, &[])?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "hop",
        "kind",
        "from",
        "to",
        "check",
        "value",
        "threshold",
        "pass",
    ])?;
    for (i, hop) in built.hops.iter().enumerate() {
        let v = &hop.channel.validity;
        for (name, check) in [
            ("aperture_averaging", v.aperture_averaging),
            ("rayleigh", v.rayleigh),
            ("small_wander", v.small_wander),
        ] {
            let Some(c) = check else { continue };
            w.write_record([
                i.to_string(),
                hop.channel.kind.to_string(),
                hop.from.clone(),
                hop.to.clone(),
                name.to_string(),
                c.value.to_string(),
                c.threshold.to_string(),
                c.pass.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `(component, η, pdf, cdf)` rows of a channel's collection and coupling
/// distributions.
pub fn write_distribution_csv<W: Write>(
    mut out: W,
    cfg: &ScenarioConfig,
    channel: &ChannelModel,
) -> Result<()> {
    metadata(
        &mut out,
        cfg,
        &[
            ("kind", channel.kind.to_string()),
            ("eta_atm", channel.eta_atm.to_string()),
            ("mean_collection", channel.collection.mean().to_string()),
            ("mean_coupling", channel.coupling.mean().to_string()),
            ("p_det", channel.detector_eff.to_string()),
            ("mean_efficiency", channel.mean_efficiency().to_string()),
        ],
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["component", "eta", "pdf", "cdf"])?;
    for (name, dist) in [
        ("collection", &channel.collection),
        ("coupling", &channel.coupling),
    ] {
        let table = dist.table();
        if table.is_empty() {
            // Point mass: a single row with unit CDF.
            w.write_record([name, &dist.mean().to_string(), "inf", "1"])?;
        }
        for (eta, pdf, cdf) in table {
            w.write_record([
                name.to_string(),
                eta.to_string(),
                pdf.to_string(),
                cdf.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fiber_cfg() -> ScenarioConfig {
        ScenarioConfig::from_json(
            r#"{"photons": 20000, "seed": 3,
                "channel": {"kind": "fiber", "length_km": 50}}"#,
        )
        .unwrap()
    }

    #[test]
    fn empty_object_is_baseline() {
        let cfg = ScenarioConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.protocol_params().unwrap().p_bsm, 0.03125);
    }

    #[test]
    fn rejects_bad_keys_and_ranges() {
        let e = ScenarioConfig::from_json(r#"{"theta_pe": -1}"#).unwrap_err();
        assert!(e.to_string().contains("theta_pe"), "{e}");
        let e = ScenarioConfig::from_json(r#"{"unknown_key": 1}"#).unwrap_err();
        assert!(e.to_string().contains("unknown_key"), "{e}");
        assert!(ScenarioConfig::from_json(r#"{"n_ao": 200}"#).is_err());
    }

    #[test]
    fn single_fiber_matches_direct_run() {
        let cfg = fiber_cfg();
        let out = run_scenario(&cfg).unwrap();
        let ch = build_fiber_with_loss(50.0, 0.18, 0.85).unwrap();
        let direct = run_bb84(&[&ch], &cfg.protocol_params().unwrap(), &cfg.sim(), 0).unwrap();
        assert_eq!(out.links[0].result, direct);
        assert_eq!(out.end_to_end.result, direct);
    }

    #[test]
    fn sweep_sets_nested_and_integer_keys() {
        let cfg = fiber_cfg();
        let p = with_parameter(&cfg, "channel.length_km", 10.0).unwrap();
        assert_eq!(p.channel.unwrap().length_km, Some(10.0));
        assert_eq!(with_parameter(&cfg, "n_ao", 4.0).unwrap().n_ao, 4);
        assert!(with_parameter(&cfg, "n_ao", 4.5).is_err());
        assert!(with_parameter(&cfg, "no_such_key", 1.0).is_err());
    }

    #[test]
    fn empty_sweep_writes_header_only() {
        let cfg = fiber_cfg();
        let spec = SweepSpec {
            parameter: "channel.length_km".into(),
            values: Vec::new(),
        };
        let rows = sweep(&cfg, &spec).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &cfg, &spec, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1);
    }

    #[test]
    fn blocked_horizontal_link_is_rejected() {
        let cfg = ScenarioConfig::from_json(
            r#"{"channel": {"kind": "horizontal", "distance_km": 2000}}"#,
        )
        .unwrap();
        assert!(matches!(
            BuiltScenario::build(&cfg),
            Err(Error::InvalidGeometry(_))
        ));
    }
}
