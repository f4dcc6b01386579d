//! Scenario files: a TOML document with unit-suffixed quantities.
//!
//! Parsing gives a [`ScenarioConfig`] that serializes back to an equivalent
//! document; [`ScenarioConfig::resolve`] checks references and turns it into
//! the roster types the simulator runs on.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::device::{DeviceConfig, UpAssignment};
use crate::gateway::{GatewayConfig, GatewayRole, PreemptionScope};
use crate::phy::{CaptureModel, ChannelPlan, DutyCyclePolicy, SubBandName, UP_PHY_PAYLOAD_BYTES};
use crate::sensor::{EventSpec, SensorProfile, Species};
use crate::server::{AssignmentMode, Cluster};
use crate::time::{SimDuration, SimTime};
use crate::units::{Db, Dbm, Dur, Freq, Level};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Stop generating once this many UPs were triggered, then drain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_ups: Option<u64>,
    /// Stop generating at this simulated time, then drain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<Dur>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up_channels: Option<Vec<Freq>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rp_channels: Option<Vec<Freq>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dcp_payload_bytes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureKind {
    #[default]
    Empirical,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalOverride {
    pub own_sf: u8,
    pub other_sf: u8,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureSection {
    #[serde(default)]
    pub model: CaptureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<Db>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub survival: Vec<SurvivalOverride>,
}

/// Values every device inherits unless it overrides them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceDefaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rp_period: Option<Dur>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_sigma: Option<Dur>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interarrival_floor: Option<Dur>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rp_sf: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rp_payload_bytes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rp_subband: Option<SubBandName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up_subband: Option<SubBandName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receive_delay1: Option<Dur>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receive_delay2: Option<Dur>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rx_power: Option<Dbm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentEntry {
    pub channel: Freq,
    pub sf: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceEntry {
    pub id: String,
    pub cluster: String,
    /// Sends a UP when its cluster's sensor alarms.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub up_sender: bool,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub send_rps: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<AssignmentEntry>,
    #[serde(flatten)]
    pub overrides: DeviceDefaults,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DutyPolicyKind {
    #[default]
    OffPeriod,
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayEntry {
    pub id: String,
    pub role: GatewayRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demod_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backhaul_delay: Option<Dur>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preemption: Option<PreemptionScope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duty_policy: Option<DutyPolicyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duty_window: Option<Dur>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEvent {
    pub at: Dur,
    pub species: Species,
    pub level: Level,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomEvents {
    pub start: Dur,
    pub min_gap: Dur,
    pub max_gap: Dur,
    pub species: Species,
    pub level: Level,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventsEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomEvents>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub script: Vec<ScriptedEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterEntry {
    pub id: String,
    pub dcp_gateway: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up_channels: Option<Vec<Freq>>,
    #[serde(default)]
    pub assignment: AssignmentMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<EventsEntry>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub co_alarm: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub o2_deficiency: Option<Level>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub radio: RadioSection,
    #[serde(default)]
    pub capture: CaptureSection,
    #[serde(default)]
    pub sensor: SensorSection,
    #[serde(default)]
    pub defaults: DeviceDefaults,
    #[serde(default)]
    pub output: OutputSection,
    pub gateways: Vec<GatewayEntry>,
    pub clusters: Vec<ClusterEntry>,
    pub devices: Vec<DeviceEntry>,
}

/// Everything the simulator needs, with ids replaced by roster indices.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub name: String,
    pub seed: u64,
    pub target_ups: Option<u64>,
    pub duration: Option<SimTime>,
    pub plan: ChannelPlan,
    pub capture: CaptureModel,
    pub sensor: SensorProfile,
    pub dcp_phy_payload: usize,
    pub devices: Vec<DeviceConfig>,
    pub up_senders: Vec<bool>,
    pub send_rps: Vec<bool>,
    pub gateways: Vec<GatewayConfig>,
    pub gateway_duty: Vec<DutyCyclePolicy>,
    pub clusters: Vec<Cluster>,
    pub events: Vec<Option<EventSpec>>,
}

impl ResolvedScenario {
    pub fn configured_assignments(&self) -> BTreeMap<usize, UpAssignment> {
        devices_initial(&self.devices)
    }
}

fn level_pct(field: &str, species: Species, level: Level) -> Result<f64, ScenarioError> {
    match (species, level) {
        (Species::Co, Level::Ppm(v)) => Ok(v),
        (Species::Co, Level::Percent(_)) => Err(invalid(field, "CO levels are given in ppm")),
        (_, Level::Percent(v)) => Ok(v),
        (s, Level::Ppm(_)) => Err(invalid(field, format!("{s} levels are given in %"))),
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn resolve(&self) -> Result<ResolvedScenario, ScenarioError> {
        if self.run.target_ups.is_none() && self.run.duration.is_none() {
            return Err(invalid("run", "set target_ups or duration"));
        }
        if self.run.target_ups == Some(0) {
            return Err(invalid("run.target_ups", "must be positive"));
        }

        let mut plan = ChannelPlan::default();
        let d = &self.defaults;
        let up_band = d.up_subband.unwrap_or(SubBandName::G);
        let rp_band = d.rp_subband.unwrap_or(SubBandName::G1);
        if let Some(ch) = &self.radio.up_channels {
            plan.set_channels(up_band, ch.iter().map(|f| f.0).collect())
                .map_err(|e| invalid("radio.up_channels", e.to_string()))?;
        }
        if let Some(ch) = &self.radio.rp_channels {
            plan.set_channels(rp_band, ch.iter().map(|f| f.0).collect())
                .map_err(|e| invalid("radio.rp_channels", e.to_string()))?;
        }

        let capture = match self.capture.model {
            CaptureKind::Threshold => CaptureModel::Threshold {
                co_sf_capture_margin_db: self.capture.margin.map_or(6.0, |m| m.0),
            },
            CaptureKind::Empirical => {
                let CaptureModel::Empirical { mut survival } = CaptureModel::fitted_empirical() else {
                    unreachable!()
                };
                for o in &self.capture.survival {
                    survival.insert((o.own_sf, o.other_sf), o.probability);
                }
                CaptureModel::Empirical { survival }
            }
        };
        capture.validate().map_err(|m| invalid("capture", m))?;

        let mut sensor = SensorProfile::default();
        if let Some(l) = self.sensor.co_alarm {
            sensor.co_alarm_ppm = level_pct("sensor.co_alarm", Species::Co, l)?;
        }
        if let Some(l) = self.sensor.o2_deficiency {
            sensor.o2_deficiency_pct = level_pct("sensor.o2_deficiency", Species::O2, l)?;
        }
        sensor.validate().map_err(|e| invalid("sensor", e.to_string()))?;

        let mut gw_index = BTreeMap::new();
        let mut gateways = Vec::new();
        let mut gateway_duty = Vec::new();
        for g in &self.gateways {
            let field = format!("gateways[{}]", g.id);
            if gw_index.insert(g.id.clone(), gateways.len()).is_some() {
                return Err(invalid(field, "duplicate gateway id"));
            }
            let mut cfg = GatewayConfig::new(g.id.clone(), g.role);
            if let Some(n) = g.demod_paths {
                if n == 0 {
                    return Err(invalid(format!("{field}.demod_paths"), "must be at least 1"));
                }
                cfg.demod_paths = n;
            }
            if let Some(b) = g.backhaul_delay {
                cfg.backhaul_delay = b.0;
            }
            if cfg.backhaul_delay >= SimDuration::from_secs(1) {
                return Err(invalid(format!("{field}.backhaul_delay"), "must be shorter than 1s so RX1 can be met"));
            }
            if let Some(p) = g.preemption {
                cfg.preemption = p;
            }
            let policy = match g.duty_policy.unwrap_or_default() {
                DutyPolicyKind::OffPeriod => DutyCyclePolicy::OffPeriod,
                DutyPolicyKind::Window => {
                    let w = g.duty_window.map_or(SimDuration::from_secs(3600), |w| w.0);
                    if w == SimDuration::ZERO {
                        return Err(invalid(format!("{field}.duty_window"), "must be positive"));
                    }
                    DutyCyclePolicy::Window(w)
                }
            };
            gateways.push(cfg);
            gateway_duty.push(policy);
        }
        if gateways.is_empty() {
            return Err(invalid("gateways", "at least one gateway is required"));
        }

        let mut cl_index = BTreeMap::new();
        for (i, c) in self.clusters.iter().enumerate() {
            if cl_index.insert(c.id.clone(), i).is_some() {
                return Err(invalid(format!("clusters[{}]", c.id), "duplicate cluster id"));
            }
        }

        let up_plan_channels = plan.subband(up_band).channels.clone();
        let mut dev_ids = BTreeSet::new();
        let mut devices = Vec::new();
        let mut up_senders = Vec::new();
        let mut send_rps = Vec::new();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.clusters.len()];
        for (i, e) in self.devices.iter().enumerate() {
            let field = format!("devices[{}]", e.id);
            if !dev_ids.insert(e.id.clone()) {
                return Err(invalid(field, "duplicate device id"));
            }
            let &ci = cl_index
                .get(&e.cluster)
                .ok_or_else(|| invalid(format!("{field}.cluster"), format!("unknown cluster `{}`", e.cluster)))?;
            members[ci].push(i);
            let o = &e.overrides;
            let mut cfg = DeviceConfig::new(e.id.clone(), ci);
            cfg.rp_period = o.rp_period.or(d.rp_period).map_or(cfg.rp_period, |v| v.0);
            cfg.clock_sigma = o.clock_sigma.or(d.clock_sigma).map_or(cfg.clock_sigma, |v| v.0);
            cfg.interarrival_floor = o.interarrival_floor.or(d.interarrival_floor).map_or(cfg.interarrival_floor, |v| v.0);
            cfg.rp_sf = o.rp_sf.or(d.rp_sf).unwrap_or(cfg.rp_sf);
            cfg.rp_phy_payload = o.rp_payload_bytes.or(d.rp_payload_bytes).unwrap_or(cfg.rp_phy_payload);
            cfg.rp_subband = o.rp_subband.unwrap_or(rp_band);
            cfg.up_subband = o.up_subband.unwrap_or(up_band);
            cfg.receive_delay1 = o.receive_delay1.or(d.receive_delay1).map_or(cfg.receive_delay1, |v| v.0);
            cfg.receive_delay2 = o.receive_delay2.or(d.receive_delay2).map_or(cfg.receive_delay2, |v| v.0);
            cfg.rx_power_dbm = o.rx_power.or(d.rx_power).map_or(cfg.rx_power_dbm, |v| v.0);
            if cfg.rp_subband == cfg.up_subband {
                return Err(invalid(field, "RP and UP sub-bands must differ"));
            }
            if cfg.rp_period == SimDuration::ZERO {
                return Err(invalid(format!("{field}.rp_period"), "must be positive"));
            }
            if !(7..=12).contains(&cfg.rp_sf) {
                return Err(invalid(format!("{field}.rp_sf"), format!("SF{} outside 7..=12", cfg.rp_sf)));
            }
            if cfg.rp_phy_payload == 0 || cfg.rp_phy_payload > 255 {
                return Err(invalid(format!("{field}.rp_payload_bytes"), "must be 1..=255"));
            }
            if cfg.receive_delay2 <= cfg.receive_delay1 {
                return Err(invalid(format!("{field}.receive_delay2"), "must exceed receive_delay1"));
            }
            if let Some(a) = &e.initial {
                if !(7..=10).contains(&a.sf) {
                    return Err(invalid(format!("{field}.initial.sf"), format!("SF{} outside 7..=10", a.sf)));
                }
                if !plan.subband(cfg.up_subband).channels.contains(&a.channel.0) {
                    return Err(invalid(
                        format!("{field}.initial.channel"),
                        format!("{} is not a channel of sub-band {}", a.channel, cfg.up_subband),
                    ));
                }
                cfg.initial_assignment = Some(UpAssignment { channel_hz: a.channel.0, sf: a.sf });
            }
            devices.push(cfg);
            up_senders.push(e.up_sender);
            send_rps.push(e.send_rps);
        }

        let mut clusters = Vec::new();
        let mut events = Vec::new();
        for (ci, c) in self.clusters.iter().enumerate() {
            let field = format!("clusters[{}]", c.id);
            let &g = gw_index.get(&c.dcp_gateway).ok_or_else(|| {
                invalid(format!("{field}.dcp_gateway"), format!("unknown gateway `{}`", c.dcp_gateway))
            })?;
            if gateways[g].role != GatewayRole::Full {
                return Err(invalid(format!("{field}.dcp_gateway"), format!("gateway `{}` is rx_only", c.dcp_gateway)));
            }
            let up_channels = match &c.up_channels {
                Some(ch) => {
                    let ch: Vec<u64> = ch.iter().map(|f| f.0).collect();
                    if let Some(bad) = ch.iter().find(|f| !up_plan_channels.contains(f)) {
                        return Err(invalid(
                            format!("{field}.up_channels"),
                            format!("{} is not a UP channel", Freq(*bad)),
                        ));
                    }
                    ch
                }
                None => up_plan_channels.clone(),
            };
            let spec = match &c.events {
                None => None,
                Some(ev) => Some(match (&ev.random, ev.script.is_empty()) {
                    (Some(_), false) => {
                        return Err(invalid(format!("{field}.events"), "use either random or script, not both"))
                    }
                    (Some(r), true) => EventSpec::Random {
                        start: SimTime(r.start.0.as_micros()),
                        min: r.min_gap.0,
                        max: r.max_gap.0,
                        species: r.species,
                        level: level_pct(&format!("{field}.events.random.level"), r.species, r.level)?,
                    },
                    (None, _) => EventSpec::Scripted(
                        ev.script
                            .iter()
                            .map(|s| {
                                Ok((
                                    SimTime(s.at.0.as_micros()),
                                    s.species,
                                    level_pct(&format!("{field}.events.script"), s.species, s.level)?,
                                ))
                            })
                            .collect::<Result<_, ScenarioError>>()?,
                    ),
                }),
            };
            if let Some(EventSpec::Random { min, max, .. }) = &spec {
                if *min == SimDuration::ZERO || min > max {
                    return Err(invalid(format!("{field}.events.random"), "need 0 < min_gap <= max_gap"));
                }
            }
            clusters.push(Cluster {
                name: c.id.clone(),
                members: std::mem::take(&mut members[ci]),
                dcp_gateway: g,
                up_channels,
                mode: c.assignment,
            });
            events.push(spec);
        }

        // the table must build; static clusters get checked here
        crate::server::Server::new(clusters.clone(), &devices_initial(&devices))
            .map_err(|e| invalid("clusters", e.to_string()))?;

        if self.run.target_ups.is_some() {
            let generates = clusters
                .iter()
                .zip(&events)
                .any(|(c, e)| e.is_some() && c.members.iter().any(|&m| up_senders[m]));
            if !generates {
                return Err(invalid("run.target_ups", "no cluster has sensor events and a UP sender"));
            }
        }

        Ok(ResolvedScenario {
            name: self.name.clone(),
            seed: self.seed,
            target_ups: self.run.target_ups,
            duration: self.run.duration.map(|d| SimTime(d.0.as_micros())),
            plan,
            capture,
            sensor,
            dcp_phy_payload: self.radio.dcp_payload_bytes.unwrap_or(UP_PHY_PAYLOAD_BYTES),
            devices,
            up_senders,
            send_rps,
            gateways,
            gateway_duty,
            clusters,
            events,
        })
    }
}

fn devices_initial(devices: &[DeviceConfig]) -> BTreeMap<usize, UpAssignment> {
    devices
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.initial_assignment.map(|a| (i, a)))
        .collect()
}
