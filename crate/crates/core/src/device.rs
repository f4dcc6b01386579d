//! Class-A end device.
//!
//! A device sends periodic RPs on its RP sub-band, opens RX1/RX2 after each of
//! its own uplinks, and sends UPs on whatever (channel, SF) the most recent DCP
//! assigned. Every frame is unconfirmed and sent at most once.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::{
    airtime, ChannelPlan, DutyCheck, DutyCycleLedger, Node, PacketKind, RadioParams, SubBandName, Transmission, TxId,
    UP_PHY_PAYLOAD_BYTES,
};
use crate::rng::sample_gaussian;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UpAssignment {
    pub channel_hz: u64,
    pub sf: u8,
}

/// Control information carried by a DCP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DcpPayload {
    pub target_device: usize,
    pub up_channel_hz: u64,
    pub up_sf: u8,
}

impl DcpPayload {
    pub fn assignment(&self) -> UpAssignment {
        UpAssignment { channel_hz: self.up_channel_hz, sf: self.up_sf }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    pub name: String,
    pub cluster: usize,
    pub rp_period: SimDuration,
    pub clock_sigma: SimDuration,
    /// Lower clamp for a drifted RP interarrival.
    pub interarrival_floor: SimDuration,
    pub rp_subband: SubBandName,
    pub up_subband: SubBandName,
    /// Channels the RP is drawn from; empty means every channel of the RP sub-band.
    pub rp_channels: Vec<u64>,
    pub rp_sf: u8,
    pub rp_phy_payload: usize,
    pub initial_assignment: Option<UpAssignment>,
    pub receive_delay1: SimDuration,
    pub receive_delay2: SimDuration,
    pub rx_power_dbm: f64,
}

impl DeviceConfig {
    pub fn new(name: impl Into<String>, cluster: usize) -> Self {
        DeviceConfig {
            name: name.into(),
            cluster,
            rp_period: SimDuration::from_secs(70),
            clock_sigma: SimDuration::from_millis(50),
            interarrival_floor: SimDuration::from_secs(1),
            rp_subband: SubBandName::G1,
            up_subband: SubBandName::G,
            rp_channels: Vec::new(),
            rp_sf: 7,
            rp_phy_payload: UP_PHY_PAYLOAD_BYTES,
            initial_assignment: None,
            receive_delay1: SimDuration::from_secs(1),
            receive_delay2: SimDuration::from_secs(2),
            rx_power_dbm: -80.0,
        }
    }
}

/// The two Class-A receive opportunities after an uplink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RxWindows {
    pub rx1: SimTime,
    pub rx2: SimTime,
    pub rx1_channel_hz: u64,
    pub rx1_sf: u8,
    pub rx2_channel_hz: u64,
    pub rx2_sf: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpLoss {
    DutyCycle,
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DcpRejected {
    #[error("DCP addressed to device {got}, not {expected}")]
    WrongTarget { expected: usize, got: usize },
    #[error("assigned SF{0} outside 7..=10")]
    BadSf(u8),
    #[error("assigned channel {0} Hz is not a UP sub-band channel")]
    BadChannel(u64),
}

#[derive(Debug, Clone)]
pub struct EndDevice {
    pub index: usize,
    pub cfg: DeviceConfig,
    up_assignment: Option<UpAssignment>,
    last_dcp_time: Option<SimTime>,
    windows: Option<RxWindows>,
    busy_until: SimTime,
    last_tx_start: Option<SimTime>,
    rp_channels: Vec<u64>,
    up_channels: Vec<u64>,
}

impl EndDevice {
    pub fn new(index: usize, cfg: DeviceConfig, plan: &ChannelPlan) -> Self {
        let rp_channels = if cfg.rp_channels.is_empty() {
            plan.subband(cfg.rp_subband).channels.clone()
        } else {
            cfg.rp_channels.clone()
        };
        EndDevice {
            index,
            up_assignment: cfg.initial_assignment,
            up_channels: plan.subband(cfg.up_subband).channels.clone(),
            cfg,
            last_dcp_time: None,
            windows: None,
            busy_until: SimTime::ZERO,
            last_tx_start: None,
            rp_channels,
        }
    }

    pub fn node(&self) -> Node {
        Node::Device(self.index)
    }

    pub fn up_assignment(&self) -> Option<UpAssignment> {
        self.up_assignment
    }

    pub fn last_dcp_time(&self) -> Option<SimTime> {
        self.last_dcp_time
    }

    pub fn rx_windows(&self) -> Option<RxWindows> {
        self.windows
    }

    /// True while the radio is sending.
    pub fn is_transmitting(&self, now: SimTime) -> bool {
        now < self.busy_until
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }

    pub fn last_tx_start(&self) -> Option<SimTime> {
        self.last_tx_start
    }

    /// Installs an assignment without a DCP (provisioning at start-up).
    pub fn provision(&mut self, assignment: UpAssignment) {
        self.up_assignment = Some(assignment);
    }

    /// Next RP instant: `now + max(floor, T + N(0, sigma))`.
    pub fn next_rp_time<R: Rng + ?Sized>(&self, rng: &mut R, now: SimTime) -> SimTime {
        now + sample_gaussian(rng, self.cfg.rp_period, self.cfg.clock_sigma, self.cfg.interarrival_floor)
    }

    pub fn rp_params(&self) -> RadioParams {
        RadioParams::with_sf(self.cfg.rp_sf)
    }

    /// Sends an RP on a uniformly drawn channel of the RP sub-band, or reports
    /// when the sub-band reopens.
    pub fn transmit_rp<R: Rng + ?Sized>(
        &mut self,
        id: TxId,
        now: SimTime,
        rng: &mut R,
        ledger: &mut DutyCycleLedger,
    ) -> Result<Transmission, SimTime> {
        let params = self.rp_params();
        let air = airtime(&params, self.cfg.rp_phy_payload).expect("validated RP params");
        if let DutyCheck::BlockedUntil(t) = ledger.check(self.node(), self.cfg.rp_subband, now, air) {
            return Err(t);
        }
        let channel_hz = self.rp_channels[rng.random_range(0..self.rp_channels.len())];
        ledger.record(self.node(), self.cfg.rp_subband, now, air);
        self.busy_until = now + air;
        self.last_tx_start = Some(now);
        Ok(Transmission {
            id,
            source: self.node(),
            kind: PacketKind::Rp,
            channel_hz,
            params,
            start: now,
            airtime: air,
            phy_payload_len: self.cfg.rp_phy_payload,
            rx_power_dbm: self.cfg.rx_power_dbm,
        })
    }

    /// Opens RX1 (mirrored channel and data rate) and RX2 (regional defaults)
    /// after an own uplink.
    pub fn open_rx_windows(&mut self, uplink: &Transmission, plan: &ChannelPlan) -> RxWindows {
        let end = uplink.end();
        let w = RxWindows {
            rx1: end + self.cfg.receive_delay1,
            rx2: end + self.cfg.receive_delay2,
            rx1_channel_hz: uplink.channel_hz,
            rx1_sf: uplink.params.sf,
            rx2_channel_hz: plan.rx2_freq_hz,
            rx2_sf: plan.rx2_sf,
        };
        self.windows = Some(w);
        w
    }

    /// Whether a downlink starting at `at` on `(channel, sf)` lands in an open
    /// window while the radio is free.
    pub fn accepts_downlink(&self, at: SimTime, channel_hz: u64, sf: u8) -> bool {
        let Some(w) = self.windows else { return false };
        if self.is_transmitting(at) {
            return false;
        }
        (at == w.rx1 && channel_hz == w.rx1_channel_hz && sf == w.rx1_sf)
            || (at == w.rx2 && channel_hz == w.rx2_channel_hz && sf == w.rx2_sf)
    }

    /// Applies a received DCP; the latest one wins.
    pub fn on_dcp(&mut self, dcp: &DcpPayload, now: SimTime) -> Result<(), DcpRejected> {
        if dcp.target_device != self.index {
            return Err(DcpRejected::WrongTarget { expected: self.index, got: dcp.target_device });
        }
        if !(7..=10).contains(&dcp.up_sf) {
            return Err(DcpRejected::BadSf(dcp.up_sf));
        }
        if !self.up_channels.contains(&dcp.up_channel_hz) {
            return Err(DcpRejected::BadChannel(dcp.up_channel_hz));
        }
        self.up_assignment = Some(dcp.assignment());
        self.last_dcp_time = Some(now);
        Ok(())
    }

    /// Sends one UP on the current assignment. There is never a second attempt.
    pub fn transmit_up(
        &mut self,
        id: TxId,
        now: SimTime,
        ledger: &mut DutyCycleLedger,
    ) -> Result<Transmission, UpLoss> {
        let assignment = self.up_assignment.ok_or(UpLoss::Unassigned)?;
        let params = RadioParams::with_sf(assignment.sf);
        let air = airtime(&params, UP_PHY_PAYLOAD_BYTES).expect("assignment SF is 7..=10");
        if !ledger.check(self.node(), self.cfg.up_subband, now, air).is_permitted() {
            return Err(UpLoss::DutyCycle);
        }
        ledger.record(self.node(), self.cfg.up_subband, now, air);
        self.busy_until = now + air;
        self.last_tx_start = Some(now);
        Ok(Transmission {
            id,
            source: self.node(),
            kind: PacketKind::Up,
            channel_hz: assignment.channel_hz,
            params,
            start: now,
            airtime: air,
            phy_payload_len: UP_PHY_PAYLOAD_BYTES,
            rx_power_dbm: self.cfg.rx_power_dbm,
        })
    }
}
