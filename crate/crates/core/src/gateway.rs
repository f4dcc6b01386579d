//! Half-duplex gateway: parallel demodulation, downlinks that preempt reception.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::device::DcpPayload;
use crate::metrics::LossCause;
use crate::phy::{DutyCheck, DutyCycleLedger, Node, RadioParams, SubBandName, Transmission, TxId};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayRole {
    /// Receives uplinks and sends downlinks.
    Full,
    /// Never transmits.
    RxOnly,
}

impl GatewayRole {
    pub fn as_str(self) -> &'static str {
        match self {
            GatewayRole::Full => "full",
            GatewayRole::RxOnly => "rx_only",
        }
    }
}

/// How far a downlink interrupts reception.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreemptionScope {
    /// The whole radio goes deaf while transmitting.
    #[default]
    Radio,
    /// Only receptions on the downlink channel are affected.
    Channel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub name: String,
    pub role: GatewayRole,
    pub demod_paths: usize,
    pub backhaul_delay: SimDuration,
    pub preemption: PreemptionScope,
}

impl GatewayConfig {
    pub fn new(name: impl Into<String>, role: GatewayRole) -> Self {
        GatewayConfig {
            name: name.into(),
            role,
            demod_paths: 10,
            backhaul_delay: SimDuration::from_millis(20),
            preemption: PreemptionScope::Radio,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownlinkRequest {
    pub dcp: DcpPayload,
    pub must_start_at: SimTime,
    pub channel_hz: u64,
    pub subband: SubBandName,
    pub params: RadioParams,
    pub airtime: SimDuration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UplinkAdmission {
    Accepted,
    Dropped(LossCause),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DownlinkResult {
    /// On air until `until`; `preempted` lists the receptions it aborted.
    Sent { until: SimTime, preempted: Vec<TxId> },
    Skipped(LossCause),
}

#[derive(Debug, Clone)]
pub struct Gateway {
    pub index: usize,
    pub cfg: GatewayConfig,
    /// Receptions in progress, with their channel.
    active: BTreeSet<(TxId, u64)>,
    preempted: BTreeSet<TxId>,
    tx_busy_until: SimTime,
    tx_channel_hz: u64,
}

impl Gateway {
    pub fn new(index: usize, cfg: GatewayConfig) -> Self {
        Gateway {
            index,
            cfg,
            active: BTreeSet::new(),
            preempted: BTreeSet::new(),
            tx_busy_until: SimTime::ZERO,
            tx_channel_hz: 0,
        }
    }

    pub fn node(&self) -> Node {
        Node::Gateway(self.index)
    }

    pub fn is_transmitting(&self, now: SimTime) -> bool {
        now < self.tx_busy_until
    }

    pub fn active_receptions(&self) -> usize {
        self.active.len()
    }

    pub fn on_uplink_start(&mut self, tx: &Transmission, now: SimTime) -> UplinkAdmission {
        let deaf = self.is_transmitting(now)
            && (self.cfg.preemption == PreemptionScope::Radio || self.tx_channel_hz == tx.channel_hz);
        if deaf {
            return UplinkAdmission::Dropped(LossCause::TxBusy);
        }
        if self.active.len() >= self.cfg.demod_paths {
            return UplinkAdmission::Dropped(LossCause::NoDemodPath);
        }
        self.active.insert((tx.id, tx.channel_hz));
        UplinkAdmission::Accepted
    }

    /// Transmits a downlink now, aborting receptions in its scope.
    pub fn start_downlink(&mut self, req: &DownlinkRequest, now: SimTime, ledger: &mut DutyCycleLedger) -> DownlinkResult {
        debug_assert_eq!(now, req.must_start_at);
        if self.cfg.role == GatewayRole::RxOnly {
            return DownlinkResult::Skipped(LossCause::RxOnly);
        }
        if self.is_transmitting(now) {
            return DownlinkResult::Skipped(LossCause::TxBusy);
        }
        if let DutyCheck::BlockedUntil(_) = ledger.check(self.node(), req.subband, now, req.airtime) {
            return DownlinkResult::Skipped(LossCause::DutyCycle);
        }
        ledger.record(self.node(), req.subband, now, req.airtime);
        let scope = self.cfg.preemption;
        let (hit, keep): (BTreeSet<_>, BTreeSet<_>) = self
            .active
            .iter()
            .partition(|(_, ch)| scope == PreemptionScope::Radio || *ch == req.channel_hz);
        self.active = keep;
        let preempted: Vec<TxId> = hit.into_iter().map(|(id, _)| id).collect();
        self.preempted.extend(preempted.iter().copied());
        self.tx_busy_until = now + req.airtime;
        self.tx_channel_hz = req.channel_hz;
        DownlinkResult::Sent { until: self.tx_busy_until, preempted }
    }

    /// Releases the demodulation path of an accepted uplink. Returns `false`
    /// if it was aborted by a downlink; otherwise the caller resolves capture.
    pub fn on_uplink_end(&mut self, tx: &Transmission) -> bool {
        if self.preempted.remove(&tx.id) {
            return false;
        }
        self.active.remove(&(tx.id, tx.channel_hz))
    }
}
