//! One simulation run: devices, gateways and the server wired to the engine.

use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::device::{DcpPayload, EndDevice, UpAssignment};
use crate::engine::Engine;
use crate::gateway::{DownlinkRequest, DownlinkResult, Gateway, UplinkAdmission};
use crate::metrics::{
    AssignmentRow, GwOutcome, LossCause, Metrics, PacketOutcome, ReportHeader, RunReport,
};
use crate::phy::{CaptureModel, ChannelPlan, DutyCycleLedger, Node, PacketKind, Transmission, TxId};
use crate::rng::{RandomStreams, StreamRng};
use crate::scenario::{ResolvedScenario, ScenarioConfig, ScenarioError};
use crate::sensor::{alarm_check, EventGenerator, GasEvent, SensorProfile};
use crate::server::{AssignmentMode, Server};
use crate::time::{SimDuration, SimTime};

/// Uplinks stay in the interference set this long after they end.
const AIR_RETENTION: SimDuration = SimDuration::from_secs(20);

#[derive(Debug, Clone)]
enum Ev {
    RpTimer { device: usize },
    RpRetry { device: usize, packet: u64 },
    UpStart { device: usize, packet: u64 },
    UplinkEnd { tx: TxId },
    DownlinkAttempt { gateway: usize, packet: u64, rx2: bool },
    DownlinkEnd { gateway: usize, packet: u64, listening: bool },
    Sensor { cluster: usize },
}

impl Ev {
    fn trace_words(&self) -> [u64; 3] {
        match *self {
            Ev::RpTimer { device } => [0, device as u64, 0],
            Ev::RpRetry { device, packet } => [1, device as u64, packet],
            Ev::UpStart { device, packet } => [2, device as u64, packet],
            Ev::UplinkEnd { tx } => [3, tx.0, 0],
            Ev::DownlinkAttempt { gateway, packet, rx2 } => [4, gateway as u64, packet << 1 | rx2 as u64],
            Ev::DownlinkEnd { gateway, packet, listening } => [5, gateway as u64, packet << 1 | listening as u64],
            Ev::Sensor { cluster } => [6, cluster as u64, 0],
        }
    }
}

struct OnAir {
    tx: Transmission,
    packet: u64,
    /// Per gateway: `None` if the gateway took the frame, else why it did not.
    admission: Vec<Option<LossCause>>,
}

struct Burst {
    cluster: usize,
    remaining: usize,
    outcomes: Vec<PacketOutcome>,
}

/// Result of a single run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub metrics: Metrics,
    pub sim_end: SimTime,
    pub trace_digest: String,
    pub assignments: BTreeMap<usize, UpAssignment>,
}

pub struct Simulation<'a> {
    sc: &'a ResolvedScenario,
    engine: Engine<Ev>,
    plan: ChannelPlan,
    capture: CaptureModel,
    sensor: SensorProfile,
    devices: Vec<EndDevice>,
    dev_rng: Vec<StreamRng>,
    gateways: Vec<Gateway>,
    cap_rng: Vec<StreamRng>,
    server: Server,
    generators: Vec<Option<(EventGenerator, StreamRng, Option<GasEvent>)>>,
    ledger: DutyCycleLedger,
    metrics: Metrics,
    packets: BTreeMap<u64, PacketOutcome>,
    dcps: BTreeMap<u64, DownlinkRequest>,
    air: BTreeMap<TxId, OnAir>,
    bursts: BTreeMap<u64, Burst>,
    packet_burst: BTreeMap<u64, u64>,
    next_packet: u64,
    next_tx: u64,
    next_burst: u64,
    ups_generated: u64,
    stopped: bool,
    trace: Sha256,
}

impl<'a> Simulation<'a> {
    pub fn new(sc: &'a ResolvedScenario, seed: u64) -> Result<Self, ScenarioError> {
        let streams = RandomStreams::new(seed);
        let mut server = Server::new(sc.clusters.clone(), &sc.configured_assignments())
            .map_err(|e| ScenarioError::Invalid { field: "clusters".into(), message: e.to_string() })?;
        server.dcp_phy_payload = sc.dcp_phy_payload;
        let mut devices: Vec<EndDevice> = sc
            .devices
            .iter()
            .enumerate()
            .map(|(i, cfg)| EndDevice::new(i, cfg.clone(), &sc.plan))
            .collect();
        for d in devices.iter_mut() {
            if d.up_assignment().is_none() {
                if let Some(a) = server.assignment(d.index) {
                    d.provision(a);
                }
            }
        }
        let dev_rng = sc.devices.iter().map(|d| streams.stream(&format!("device/{}", d.name))).collect();
        let gateways: Vec<Gateway> = sc
            .gateways
            .iter()
            .enumerate()
            .map(|(i, g)| Gateway::new(i, g.clone()))
            .collect();
        let cap_rng = sc.gateways.iter().map(|g| streams.stream(&format!("capture/{}", g.name))).collect();
        let mut ledger = DutyCycleLedger::new();
        for (i, p) in sc.gateway_duty.iter().enumerate() {
            ledger.set_policy(Node::Gateway(i), *p);
        }
        let generators = sc
            .events
            .iter()
            .enumerate()
            .map(|(ci, spec)| {
                spec.clone().map(|s| {
                    let gen = EventGenerator::new(ci, s).expect("validated event spec");
                    let rng = streams.stream(&format!("sensor/{}", sc.clusters[ci].name));
                    (gen, rng, None)
                })
            })
            .collect();
        Ok(Simulation {
            sc,
            engine: Engine::new(),
            plan: sc.plan.clone(),
            capture: sc.capture.clone(),
            sensor: sc.sensor.clone(),
            devices,
            dev_rng,
            gateways,
            cap_rng,
            server,
            generators,
            ledger,
            metrics: Metrics::new(sc.gateways.len(), sc.clusters.len()),
            packets: BTreeMap::new(),
            dcps: BTreeMap::new(),
            air: BTreeMap::new(),
            bursts: BTreeMap::new(),
            packet_burst: BTreeMap::new(),
            next_packet: 0,
            next_tx: 0,
            next_burst: 0,
            ups_generated: 0,
            stopped: false,
            trace: Sha256::new(),
        })
    }

    /// Runs until generation stops and every packet in flight is resolved.
    pub fn run(mut self) -> SimOutput {
        for d in 0..self.devices.len() {
            if self.sc.send_rps[d] {
                let period = self.devices[d].cfg.rp_period.as_micros();
                let phase = self.dev_rng[d].random_range(0..period);
                self.engine.schedule(SimTime(phase), Ev::RpTimer { device: d });
            }
        }
        for c in 0..self.generators.len() {
            self.arm_sensor(c);
        }
        while let Some(ev) = self.engine.pop_until(SimTime(u64::MAX)) {
            self.trace.update(ev.at.as_micros().to_le_bytes());
            for w in ev.kind.trace_words() {
                self.trace.update(w.to_le_bytes());
            }
            self.handle(ev.kind);
        }
        debug_assert!(self.packets.is_empty(), "unresolved packets at end of run");
        self.metrics.events_processed = self.engine.processed();
        let assignments = self
            .devices
            .iter()
            .filter_map(|d| d.up_assignment().map(|a| (d.index, a)))
            .collect();
        SimOutput {
            metrics: self.metrics,
            sim_end: self.engine.now(),
            trace_digest: self.trace.finalize().iter().map(|b| format!("{b:02x}")).collect(),
            assignments,
        }
    }

    fn now(&self) -> SimTime {
        self.engine.now()
    }

    fn past_horizon(&mut self) -> bool {
        if let Some(end) = self.sc.duration {
            if self.now() >= end {
                self.stopped = true;
            }
        }
        self.stopped
    }

    fn new_packet(&mut self, device: usize, kind: PacketKind) -> u64 {
        let id = self.next_packet;
        self.next_packet += 1;
        self.packets.insert(id, PacketOutcome::new(id, device, kind, self.now()));
        id
    }

    fn finish(&mut self, packet: u64) {
        let out = self.packets.remove(&packet).expect("known packet");
        self.metrics.record(&out);
        if let Some(b) = self.packet_burst.remove(&packet) {
            let burst = self.bursts.get_mut(&b).expect("known burst");
            burst.outcomes.push(out);
            burst.remaining -= 1;
            if burst.remaining == 0 {
                let burst = self.bursts.remove(&b).expect("known burst");
                let refs: Vec<&PacketOutcome> = burst.outcomes.iter().collect();
                self.metrics.record_burst(burst.cluster, &refs);
            }
        }
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::RpTimer { device } => self.on_rp_timer(device),
            Ev::RpRetry { device, packet } => self.send_rp(device, packet),
            Ev::UpStart { device, packet } => self.send_up(device, packet),
            Ev::UplinkEnd { tx } => self.on_uplink_end(tx),
            Ev::DownlinkAttempt { gateway, packet, rx2 } => self.on_downlink_attempt(gateway, packet, rx2),
            Ev::DownlinkEnd { gateway, packet, listening } => self.on_downlink_end(gateway, packet, listening),
            Ev::Sensor { cluster } => self.on_sensor(cluster),
        }
    }

    fn on_rp_timer(&mut self, device: usize) {
        if self.past_horizon() {
            return;
        }
        let now = self.now();
        let next = self.devices[device].next_rp_time(&mut self.dev_rng[device], now);
        self.engine.schedule(next, Ev::RpTimer { device });
        let packet = self.new_packet(device, PacketKind::Rp);
        self.send_rp(device, packet);
    }

    fn send_rp(&mut self, device: usize, packet: u64) {
        let now = self.now();
        let busy = self.devices[device].busy_until();
        if busy > now {
            self.engine.schedule(busy, Ev::RpRetry { device, packet });
            return;
        }
        let id = self.tx_id();
        match self.devices[device].transmit_rp(id, now, &mut self.dev_rng[device], &mut self.ledger) {
            Ok(tx) => self.start_uplink(tx, packet),
            Err(until) => {
                self.metrics.record_deferral(PacketKind::Rp);
                self.engine.schedule(until, Ev::RpRetry { device, packet });
            }
        }
    }

    fn send_up(&mut self, device: usize, packet: u64) {
        let now = self.now();
        let busy = self.devices[device].busy_until();
        if busy > now {
            self.engine.schedule(busy, Ev::UpStart { device, packet });
            return;
        }
        let id = self.tx_id();
        match self.devices[device].transmit_up(id, now, &mut self.ledger) {
            Ok(tx) => self.start_uplink(tx, packet),
            Err(loss) => {
                let cause = match loss {
                    crate::device::UpLoss::DutyCycle => LossCause::DutyCycle,
                    crate::device::UpLoss::Unassigned => LossCause::Unassigned,
                };
                self.packets.get_mut(&packet).expect("known packet").pre_air_loss = Some(cause);
                self.finish(packet);
            }
        }
    }

    fn tx_id(&mut self) -> TxId {
        self.next_tx += 1;
        TxId(self.next_tx)
    }

    fn start_uplink(&mut self, tx: Transmission, packet: u64) {
        let now = self.now();
        let admission = self
            .gateways
            .iter_mut()
            .map(|g| match g.on_uplink_start(&tx, now) {
                UplinkAdmission::Accepted => None,
                UplinkAdmission::Dropped(c) => Some(c),
            })
            .collect();
        let p = self.packets.get_mut(&packet).expect("known packet");
        p.tx_start = Some(now);
        p.airtime = Some(tx.airtime);
        self.engine.schedule(tx.end(), Ev::UplinkEnd { tx: tx.id });
        self.air.insert(tx.id, OnAir { tx, packet, admission });
    }

    fn on_uplink_end(&mut self, id: TxId) {
        let now = self.now();
        let (tx, packet, admission) = {
            let a = &self.air[&id];
            (a.tx.clone(), a.packet, a.admission.clone())
        };
        let others: Vec<&Transmission> = self
            .air
            .values()
            .map(|a| &a.tx)
            .filter(|o| o.id != id && o.overlaps(&tx))
            .collect();
        if tx.kind == PacketKind::Up {
            let counted = others
                .iter()
                .filter(|o| o.kind == PacketKind::Up && o.params.sf == tx.params.sf && o.end() <= now)
                .filter(|o| o.end() < now || o.id < id)
                .count();
            self.metrics.co_sf_up_overlaps += counted as u64;
        }
        let mut per_gateway = Vec::with_capacity(self.gateways.len());
        let mut delivered_at: Option<SimTime> = None;
        let Node::Device(device) = tx.source else { unreachable!("uplinks come from devices") };
        for (g, adm) in admission.iter().enumerate() {
            let outcome = match adm {
                Some(cause) => GwOutcome::Lost(*cause),
                None if !self.gateways[g].on_uplink_end(&tx) => GwOutcome::Lost(LossCause::GwPreempted),
                None if others.is_empty() || self.capture.survives(&tx, &others, &mut self.cap_rng[g]) => {
                    GwOutcome::Decoded
                }
                None => GwOutcome::Lost(LossCause::Collision),
            };
            if outcome == GwOutcome::Decoded {
                let at = now + self.gateways[g].cfg.backhaul_delay;
                let frame = crate::server::DecodedFrame { device, uplink_seq: packet, gateway: g, received_at: at };
                self.server.on_uplink(&frame);
                delivered_at = Some(delivered_at.map_or(at, |d| d.min(at)));
            }
            per_gateway.push((g, outcome));
        }
        self.server.retire(device, packet);
        self.air.retain(|_, a| a.tx.end() + AIR_RETENTION > now);

        if tx.kind == PacketKind::Rp && delivered_at.is_some() {
            self.schedule_dcp(&tx, device);
        }
        self.devices[device].open_rx_windows(&tx, &self.plan);

        let p = self.packets.get_mut(&packet).expect("known packet");
        p.per_gateway = per_gateway;
        p.delivered_at = delivered_at;
        self.finish(packet);
    }

    fn schedule_dcp(&mut self, rp: &Transmission, device: usize) {
        let delay1 = self.devices[device].cfg.receive_delay1;
        let Ok(Some((gateway, req))) = self.server.schedule_dcp(rp, device, delay1, &self.plan) else {
            return;
        };
        let packet = self.new_packet(device, PacketKind::Dcp);
        self.engine.schedule(req.must_start_at, Ev::DownlinkAttempt { gateway, packet, rx2: false });
        self.dcps.insert(packet, req);
    }

    fn on_downlink_attempt(&mut self, gateway: usize, packet: u64, rx2: bool) {
        let now = self.now();
        let req = self.dcps[&packet].clone();
        match self.gateways[gateway].start_downlink(&req, now, &mut self.ledger) {
            DownlinkResult::Skipped(LossCause::DutyCycle) if !rx2 => {
                let device = req.dcp.target_device;
                let cfg = &self.devices[device].cfg;
                let (d1, d2) = (cfg.receive_delay1, cfg.receive_delay2);
                match self.server.rx2_fallback(&req, d1, d2, &self.plan) {
                    Ok(r2) => {
                        self.engine.schedule(r2.must_start_at, Ev::DownlinkAttempt { gateway, packet, rx2: true });
                        self.dcps.insert(packet, r2);
                    }
                    Err(_) => self.drop_dcp(gateway, packet, LossCause::DutyCycle),
                }
            }
            DownlinkResult::Skipped(cause) => self.drop_dcp(gateway, packet, cause),
            DownlinkResult::Sent { until, .. } => {
                let gw = &mut self.metrics.gateways[gateway];
                gw.downlinks_sent += 1;
                gw.downlinks_rx2 += rx2 as u64;
                gw.downlink_airtime += req.airtime;
                let listening =
                    self.devices[req.dcp.target_device].accepts_downlink(now, req.channel_hz, req.params.sf);
                self.packets.get_mut(&packet).expect("known packet").tx_start = Some(now);
                self.engine.schedule(until, Ev::DownlinkEnd { gateway, packet, listening });
            }
        }
    }

    fn drop_dcp(&mut self, gateway: usize, packet: u64, cause: LossCause) {
        *self.metrics.gateways[gateway].downlinks_skipped.entry(cause).or_default() += 1;
        self.dcps.remove(&packet);
        self.packets.get_mut(&packet).expect("known packet").pre_air_loss = Some(cause);
        self.finish(packet);
    }

    fn on_downlink_end(&mut self, _gateway: usize, packet: u64, listening: bool) {
        let now = self.now();
        let req = self.dcps.remove(&packet).expect("pending dcp");
        let dcp: DcpPayload = req.dcp;
        let device = dcp.target_device;
        let start = req.must_start_at;
        let interrupted = self.devices[device].last_tx_start().is_some_and(|t| t >= start);
        let result = if listening && !interrupted {
            match self.devices[device].on_dcp(&dcp, now) {
                Ok(()) => {
                    self.check_conflicts(device);
                    None
                }
                Err(_) => Some(LossCause::Rejected),
            }
        } else {
            Some(LossCause::MissedWindow)
        };
        let p = self.packets.get_mut(&packet).expect("known packet");
        p.airtime = Some(req.airtime);
        match result {
            None => p.delivered_at = Some(now),
            Some(c) => p.pre_air_loss = Some(c),
        }
        self.finish(packet);
    }

    /// Counts a conflict if `device` now shares its (channel, SF) with another
    /// member of a conflict-free cluster.
    fn check_conflicts(&mut self, device: usize) {
        let Some(ci) = self.server.cluster_of(device) else { return };
        let cluster = &self.server.clusters[ci];
        if cluster.mode == AssignmentMode::Forced {
            return;
        }
        let mine = self.devices[device].up_assignment();
        let clash = cluster
            .members
            .iter()
            .any(|&m| m != device && self.devices[m].up_assignment() == mine);
        if clash {
            self.metrics.assignment_conflicts += 1;
        }
    }

    fn arm_sensor(&mut self, cluster: usize) {
        let Some((gen, rng, slot)) = self.generators[cluster].as_mut() else { return };
        if let Some(ev) = gen.next_event(rng) {
            let at = ev.at.max(self.engine.now());
            *slot = Some(ev);
            self.engine.schedule(at, Ev::Sensor { cluster });
        }
    }

    fn on_sensor(&mut self, cluster: usize) {
        if self.past_horizon() {
            return;
        }
        let event = self.generators[cluster].as_mut().and_then(|g| g.2.take()).expect("armed sensor");
        let decision = alarm_check(&self.sensor, &event);
        if decision.alarm {
            let senders: Vec<usize> = self.server.clusters[cluster]
                .members
                .iter()
                .copied()
                .filter(|&m| self.sc.up_senders[m])
                .collect();
            if let Some(target) = self.sc.target_ups {
                if self.ups_generated + senders.len() as u64 > target {
                    self.stopped = true;
                    return;
                }
            }
            if !senders.is_empty() {
                let b = self.next_burst;
                self.next_burst += 1;
                self.bursts.insert(b, Burst { cluster, remaining: senders.len(), outcomes: Vec::new() });
                let packets: Vec<(usize, u64)> =
                    senders.iter().map(|&d| (d, self.new_packet(d, PacketKind::Up))).collect();
                self.ups_generated += packets.len() as u64;
                for &(_, p) in &packets {
                    self.packet_burst.insert(p, b);
                }
                for (d, p) in packets {
                    self.send_up(d, p);
                }
            }
            if self.sc.target_ups.is_some_and(|t| self.ups_generated >= t) {
                self.stopped = true;
                return;
            }
        }
        self.arm_sensor(cluster);
    }
}

/// Runs a resolved scenario once.
pub fn simulate(sc: &ResolvedScenario, seed: u64) -> Result<SimOutput, ScenarioError> {
    Ok(Simulation::new(sc, seed)?.run())
}

/// Assignment audit rows in roster order.
pub fn assignment_rows(sc: &ResolvedScenario, table: &BTreeMap<usize, UpAssignment>) -> Vec<AssignmentRow> {
    table
        .iter()
        .map(|(&d, a)| AssignmentRow {
            device: sc.devices[d].name.clone(),
            cluster: sc.clusters[sc.devices[d].cluster].name.clone(),
            channel_mhz: a.channel_hz as f64 / 1e6,
            sf: a.sf,
        })
        .collect()
}

/// Builds the report of one or more runs of `cfg`.
pub fn build_report(
    cfg: &ScenarioConfig,
    sc: &ResolvedScenario,
    seed: u64,
    runs: &[SimOutput],
) -> RunReport {
    let mut metrics = Metrics::new(sc.gateways.len(), sc.clusters.len());
    for r in runs {
        metrics.merge(&r.metrics);
    }
    let trace_digest = if runs.len() == 1 {
        runs[0].trace_digest.clone()
    } else {
        let mut h = Sha256::new();
        for r in runs {
            h.update(r.trace_digest.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    };
    let header = ReportHeader {
        scenario: cfg.name.clone(),
        scenario_digest: cfg.digest(),
        seed,
        replications: runs.len() as u64,
        sim_end_s: runs.iter().map(|r| r.sim_end.as_secs_f64()).fold(0.0, f64::max),
        trace_digest,
    };
    let gateways: Vec<(String, String)> =
        sc.gateways.iter().map(|g| (g.name.clone(), g.role.as_str().to_string())).collect();
    let clusters: Vec<String> = sc.clusters.iter().map(|c| c.name.clone()).collect();
    let rows = runs.first().map(|r| assignment_rows(sc, &r.assignments)).unwrap_or_default();
    RunReport::build(header, &metrics, &gateways, &clusters, rows)
}

/// Parses, resolves, runs once and reports.
pub fn run_scenario(cfg: &ScenarioConfig, seed: Option<u64>) -> Result<RunReport, ScenarioError> {
    let sc = cfg.resolve()?;
    let seed = seed.unwrap_or(sc.seed);
    let out = simulate(&sc, seed)?;
    Ok(build_report(cfg, &sc, seed, &[out]))
}
