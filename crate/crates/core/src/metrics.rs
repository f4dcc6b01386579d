//! Outcome accounting, loss rates with Wilson intervals, and run reports.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::PacketKind;
use crate::time::{SimDuration, SimTime};

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossCause {
    Collision,
    GwPreempted,
    TxBusy,
    NoDemodPath,
    DutyCycle,
    Unassigned,
    /// Downlink routed through a receive-only gateway.
    RxOnly,
    /// Downlink sent but the device was not listening on that window.
    MissedWindow,
    /// Downlink received but its assignment was malformed.
    Rejected,
}

impl LossCause {
    pub fn as_str(self) -> &'static str {
        match self {
            LossCause::Collision => "collision",
            LossCause::GwPreempted => "gw-preempted",
            LossCause::TxBusy => "tx-busy",
            LossCause::NoDemodPath => "no-demod-path",
            LossCause::DutyCycle => "duty-cycle",
            LossCause::Unassigned => "unassigned",
            LossCause::RxOnly => "rx-only",
            LossCause::MissedWindow => "missed-window",
            LossCause::Rejected => "rejected",
        }
    }
}

impl fmt::Display for LossCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What one gateway made of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwOutcome {
    Decoded,
    Lost(LossCause),
}

impl GwOutcome {
    pub fn label(self) -> &'static str {
        match self {
            GwOutcome::Decoded => "decoded",
            GwOutcome::Lost(c) => c.as_str(),
        }
    }
}

/// Fate of one generated packet.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketOutcome {
    pub id: u64,
    pub device: usize,
    pub kind: PacketKind,
    /// Trigger instant (sensor event for UPs, timer for RPs, RP decode for DCPs).
    pub generated_at: SimTime,
    pub tx_start: Option<SimTime>,
    pub airtime: Option<SimDuration>,
    /// In gateway roster order; empty when the frame never went on air.
    pub per_gateway: Vec<(usize, GwOutcome)>,
    /// Set when the packet was lost before reaching any gateway.
    pub pre_air_loss: Option<LossCause>,
    pub delivered_at: Option<SimTime>,
}

impl PacketOutcome {
    pub fn new(id: u64, device: usize, kind: PacketKind, generated_at: SimTime) -> Self {
        PacketOutcome {
            id,
            device,
            kind,
            generated_at,
            tx_start: None,
            airtime: None,
            per_gateway: Vec::new(),
            pre_air_loss: None,
            delivered_at: None,
        }
    }

    pub fn system_delivered(&self) -> bool {
        self.delivered_at.is_some()
    }

    /// Loss cause charged to the system: the pre-air cause if any, else the
    /// cause at the first gateway of the roster.
    pub fn system_cause(&self) -> Option<LossCause> {
        if self.system_delivered() {
            return None;
        }
        self.pre_air_loss.or_else(|| {
            self.per_gateway.iter().find_map(|(_, o)| match o {
                GwOutcome::Lost(c) => Some(*c),
                GwOutcome::Decoded => None,
            })
        })
    }
}

/// Trigger-to-server latency of a delivered UP.
pub fn latency_of(outcome: &PacketOutcome) -> Option<SimDuration> {
    if outcome.kind != PacketKind::Up {
        return None;
    }
    outcome.delivered_at.map(|t| t.since(outcome.generated_at))
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("loss rate undefined: nothing was generated")]
    NothingGenerated,
    #[error("delivered count {delivered} exceeds generated count {generated}")]
    Inconsistent { delivered: u64, generated: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlrEstimate {
    pub estimate: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

impl PlrEstimate {
    pub fn contains(&self, p: f64) -> bool {
        self.ci95_low <= p && p <= self.ci95_high
    }
}

/// Wilson score interval for `successes` out of `n` trials.
pub fn wilson(successes: u64, n: u64, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes as f64 == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Packet loss rate `1 - delivered/generated` with its 95% Wilson interval.
pub fn plr(delivered: u64, generated: u64) -> Result<PlrEstimate, MetricsError> {
    if generated == 0 {
        return Err(MetricsError::NothingGenerated);
    }
    if delivered > generated {
        return Err(MetricsError::Inconsistent { delivered, generated });
    }
    let lost = generated - delivered;
    let (lo, hi) = wilson(lost, generated, Z95);
    Ok(PlrEstimate { estimate: lost as f64 / generated as f64, ci95_low: lo, ci95_high: hi })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KindCounts {
    pub generated: u64,
    pub delivered: u64,
    pub deferrals: u64,
    pub causes: BTreeMap<LossCause, u64>,
}

impl KindCounts {
    pub fn lost(&self) -> u64 {
        self.causes.values().sum()
    }

    fn merge(&mut self, other: &KindCounts) {
        self.generated += other.generated;
        self.delivered += other.delivered;
        self.deferrals += other.deferrals;
        for (c, n) in &other.causes {
            *self.causes.entry(*c).or_default() += n;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GatewayCounts {
    /// kind → outcome label → count
    pub uplinks: BTreeMap<PacketKind, BTreeMap<&'static str, u64>>,
    pub downlinks_sent: u64,
    pub downlinks_rx2: u64,
    pub downlinks_skipped: BTreeMap<LossCause, u64>,
    pub downlink_airtime: SimDuration,
}

impl GatewayCounts {
    fn merge(&mut self, other: &GatewayCounts) {
        for (k, m) in &other.uplinks {
            let mine = self.uplinks.entry(*k).or_default();
            for (label, n) in m {
                *mine.entry(label).or_default() += n;
            }
        }
        self.downlinks_sent += other.downlinks_sent;
        self.downlinks_rx2 += other.downlinks_rx2;
        for (c, n) in &other.downlinks_skipped {
            *self.downlinks_skipped.entry(*c).or_default() += n;
        }
        self.downlink_airtime += other.downlink_airtime;
    }
}

/// Outcomes of cluster-wide UP bursts, one burst per alarming gas event.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BurstCounts {
    pub bursts: u64,
    pub ups: u64,
    pub all_delivered: u64,
    pub all_lost: u64,
    pub all_lost_by_collision: u64,
    pub with_preemption: u64,
}

impl BurstCounts {
    fn merge(&mut self, o: &BurstCounts) {
        self.bursts += o.bursts;
        self.ups += o.ups;
        self.all_delivered += o.all_delivered;
        self.all_lost += o.all_lost;
        self.all_lost_by_collision += o.all_lost_by_collision;
        self.with_preemption += o.with_preemption;
    }
}

/// Run accumulator. Replications fold together with [`Metrics::merge`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub kinds: BTreeMap<PacketKind, KindCounts>,
    pub gateways: Vec<GatewayCounts>,
    pub clusters: Vec<BurstCounts>,
    pub up_latency_us: Vec<u64>,
    pub up_airtime_us: Vec<u64>,
    /// Pairs of UPs that overlapped on the same channel and SF.
    pub co_sf_up_overlaps: u64,
    /// Times a device took on a (channel, SF) already held in its cluster.
    pub assignment_conflicts: u64,
    pub events_processed: u64,
}

impl Metrics {
    pub fn new(gateways: usize, clusters: usize) -> Self {
        Metrics {
            gateways: vec![GatewayCounts::default(); gateways],
            clusters: vec![BurstCounts::default(); clusters],
            ..Default::default()
        }
    }

    pub fn kind(&self, kind: PacketKind) -> KindCounts {
        self.kinds.get(&kind).cloned().unwrap_or_default()
    }

    pub fn record(&mut self, o: &PacketOutcome) {
        let k = self.kinds.entry(o.kind).or_default();
        k.generated += 1;
        match o.system_cause() {
            None => k.delivered += 1,
            Some(c) => *k.causes.entry(c).or_default() += 1,
        }
        if o.kind != PacketKind::Dcp {
            for &(g, out) in &o.per_gateway {
                *self.gateways[g].uplinks.entry(o.kind).or_default().entry(out.label()).or_default() += 1;
            }
        }
        if let Some(l) = latency_of(o) {
            self.up_latency_us.push(l.as_micros());
        }
        if o.kind == PacketKind::Up {
            if let Some(a) = o.airtime {
                self.up_airtime_us.push(a.as_micros());
            }
        }
    }

    pub fn record_deferral(&mut self, kind: PacketKind) {
        self.kinds.entry(kind).or_default().deferrals += 1;
    }

    pub fn record_burst(&mut self, cluster: usize, ups: &[&PacketOutcome]) {
        if ups.is_empty() {
            return;
        }
        let b = &mut self.clusters[cluster];
        b.bursts += 1;
        b.ups += ups.len() as u64;
        if ups.iter().all(|o| o.system_delivered()) {
            b.all_delivered += 1;
        }
        if ups.iter().all(|o| !o.system_delivered()) {
            b.all_lost += 1;
            if ups.iter().all(|o| o.system_cause() == Some(LossCause::Collision)) {
                b.all_lost_by_collision += 1;
            }
        }
        let preempted = ups
            .iter()
            .any(|o| o.per_gateway.iter().any(|(_, g)| *g == GwOutcome::Lost(LossCause::GwPreempted)));
        if preempted {
            b.with_preemption += 1;
        }
    }

    pub fn merge(&mut self, other: &Metrics) {
        for (k, c) in &other.kinds {
            self.kinds.entry(*k).or_default().merge(c);
        }
        if self.gateways.len() < other.gateways.len() {
            self.gateways.resize(other.gateways.len(), GatewayCounts::default());
        }
        for (g, o) in self.gateways.iter_mut().zip(&other.gateways) {
            g.merge(o);
        }
        if self.clusters.len() < other.clusters.len() {
            self.clusters.resize(other.clusters.len(), BurstCounts::default());
        }
        for (c, o) in self.clusters.iter_mut().zip(&other.clusters) {
            c.merge(o);
        }
        self.up_latency_us.extend_from_slice(&other.up_latency_us);
        self.up_airtime_us.extend_from_slice(&other.up_airtime_us);
        self.co_sf_up_overlaps += other.co_sf_up_overlaps;
        self.assignment_conflicts += other.assignment_conflicts;
        self.events_processed += other.events_processed;
    }
}

/// Nearest-rank quantile of an unsorted sample.
pub fn quantile(samples: &[u64], q: f64) -> Option<u64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionMs {
    pub count: u64,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl DistributionMs {
    pub fn from_micros(samples: &[u64]) -> Option<Self> {
        let q = |p| quantile(samples, p).map(|us| us as f64 / 1e3);
        Some(DistributionMs {
            count: samples.len() as u64,
            mean: samples.iter().sum::<u64>() as f64 / samples.len() as f64 / 1e3,
            p50: q(0.5)?,
            p95: q(0.95)?,
            p99: q(0.99)?,
            max: *samples.iter().max()? as f64 / 1e3,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub generated: u64,
    pub delivered: u64,
    pub lost: u64,
    pub deferrals: u64,
    pub plr: Option<PlrEstimate>,
    pub causes: BTreeMap<String, u64>,
}

impl From<&KindCounts> for KindReport {
    fn from(c: &KindCounts) -> Self {
        KindReport {
            generated: c.generated,
            delivered: c.delivered,
            lost: c.lost(),
            deferrals: c.deferrals,
            plr: plr(c.delivered, c.generated).ok(),
            causes: c.causes.iter().map(|(k, v)| (k.as_str().to_string(), *v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayReport {
    pub name: String,
    pub role: String,
    pub uplinks: BTreeMap<String, BTreeMap<String, u64>>,
    pub downlinks_sent: u64,
    pub downlinks_rx2: u64,
    pub downlinks_skipped: BTreeMap<String, u64>,
    pub downlink_airtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub name: String,
    #[serde(flatten)]
    pub bursts: BurstCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub device: String,
    pub cluster: String,
    pub channel_mhz: f64,
    pub sf: u8,
}

/// Run description echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub scenario: String,
    pub scenario_digest: String,
    pub seed: u64,
    pub replications: u64,
    pub sim_end_s: f64,
    pub trace_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub events_processed: u64,
    pub kinds: BTreeMap<String, KindReport>,
    pub up_latency_ms: Option<DistributionMs>,
    pub up_airtime_ms: Option<DistributionMs>,
    pub co_sf_up_overlaps: u64,
    pub assignment_conflicts: u64,
    pub gateways: Vec<GatewayReport>,
    pub clusters: Vec<ClusterReport>,
    pub assignments: Vec<AssignmentRow>,
}

impl RunReport {
    pub fn build(
        header: ReportHeader,
        metrics: &Metrics,
        gateway_names: &[(String, String)],
        cluster_names: &[String],
        assignments: Vec<AssignmentRow>,
    ) -> Self {
        let gateways = metrics
            .gateways
            .iter()
            .zip(gateway_names)
            .map(|(g, (name, role))| GatewayReport {
                name: name.clone(),
                role: role.clone(),
                uplinks: g
                    .uplinks
                    .iter()
                    .map(|(k, m)| (k.as_str().to_string(), m.iter().map(|(l, n)| (l.to_string(), *n)).collect()))
                    .collect(),
                downlinks_sent: g.downlinks_sent,
                downlinks_rx2: g.downlinks_rx2,
                downlinks_skipped: g.downlinks_skipped.iter().map(|(c, n)| (c.as_str().to_string(), *n)).collect(),
                downlink_airtime_s: g.downlink_airtime.as_secs_f64(),
            })
            .collect();
        let clusters = metrics
            .clusters
            .iter()
            .zip(cluster_names)
            .map(|(b, name)| ClusterReport { name: name.clone(), bursts: b.clone() })
            .collect();
        RunReport {
            header,
            events_processed: metrics.events_processed,
            kinds: metrics.kinds.iter().map(|(k, c)| (k.as_str().to_string(), c.into())).collect(),
            up_latency_ms: DistributionMs::from_micros(&metrics.up_latency_us),
            up_airtime_ms: DistributionMs::from_micros(&metrics.up_airtime_us),
            co_sf_up_overlaps: metrics.co_sf_up_overlaps,
            assignment_conflicts: metrics.assignment_conflicts,
            gateways,
            clusters,
            assignments,
        }
    }

    pub fn kind(&self, kind: PacketKind) -> Option<&KindReport> {
        self.kinds.get(kind.as_str())
    }

    pub fn up_plr(&self) -> Option<PlrEstimate> {
        self.kind(PacketKind::Up).and_then(|k| k.plr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Writes the report. JSON is pretty-printed with a fixed field order; CSV has
/// one `kind,metric,value` row per metric.
pub fn emit_report<W: Write>(report: &RunReport, format: ReportFormat, mut out: W) -> io::Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, report).map_err(io::Error::other)?;
            writeln!(out)
        }
        ReportFormat::Csv => {
            writeln!(out, "kind,metric,value")?;
            writeln!(out, "run,seed,{}", report.header.seed)?;
            writeln!(out, "run,scenario_digest,{}", report.header.scenario_digest)?;
            writeln!(out, "run,trace_digest,{}", report.header.trace_digest)?;
            writeln!(out, "run,sim_end_s,{}", report.header.sim_end_s)?;
            for (kind, k) in &report.kinds {
                writeln!(out, "{kind},generated,{}", k.generated)?;
                writeln!(out, "{kind},delivered,{}", k.delivered)?;
                writeln!(out, "{kind},lost,{}", k.lost)?;
                writeln!(out, "{kind},deferrals,{}", k.deferrals)?;
                if let Some(p) = k.plr {
                    writeln!(out, "{kind},plr,{}", p.estimate)?;
                    writeln!(out, "{kind},plr_ci95_low,{}", p.ci95_low)?;
                    writeln!(out, "{kind},plr_ci95_high,{}", p.ci95_high)?;
                }
                for (cause, n) in &k.causes {
                    writeln!(out, "{kind},loss_{cause},{n}")?;
                }
            }
            if let Some(l) = &report.up_latency_ms {
                for (name, v) in [("p50", l.p50), ("p95", l.p95), ("p99", l.p99), ("max", l.max)] {
                    writeln!(out, "UP,latency_{name}_ms,{v}")?;
                }
            }
            writeln!(out, "UP,co_sf_overlaps,{}", report.co_sf_up_overlaps)
        }
    }
}
