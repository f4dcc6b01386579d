//! LoRa physical and regulatory layer.

mod airtime;
pub mod capture;
pub mod duty;
mod plan;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{SimDuration, SimTime};

pub use airtime::{airtime, airtime_breakdown, AirtimeBreakdown, RadioParams};
pub use capture::{resolve_receptions, CaptureModel, Reception};
pub use duty::{DutyCheck, DutyCycleLedger, DutyCyclePolicy};
pub use plan::{ChannelPlan, SubBand, SubBandName, RP_CHANNELS_G1, RX2_FREQ_HZ, RX2_SF, UP_CHANNELS_G};

/// LoRaWAN MAC overhead on top of the application payload:
/// MHDR (1) + FHDR (7) + FPort (1) + MIC (4).
pub const MAC_OVERHEAD_BYTES: usize = 13;
/// Application payload of an urgent packet.
pub const UP_APP_PAYLOAD_BYTES: usize = 24;
pub const UP_PHY_PAYLOAD_BYTES: usize = UP_APP_PAYLOAD_BYTES + MAC_OVERHEAD_BYTES;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PhyError {
    #[error("spreading factor {0} outside 7..=12")]
    InvalidSpreadingFactor(u8),
    #[error("bandwidth {0} Hz not one of 125/250/500 kHz")]
    InvalidBandwidth(u32),
    #[error("coding-rate index {0} outside 1..=4")]
    InvalidCodingRate(u8),
    #[error("frequency {0} Hz is not inside any EU868 sub-band")]
    FrequencyOutOfPlan(u64),
    #[error("channel {freq_hz} Hz lies outside sub-band {subband}")]
    ChannelOutsideSubBand { freq_hz: u64, subband: SubBandName },
    #[error("unknown sub-band `{0}`")]
    UnknownSubBand(String),
}

/// A transmitter or receiver in the simulated network, by roster index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Node {
    Device(usize),
    Gateway(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PacketKind {
    #[serde(rename = "RP")]
    Rp,
    #[serde(rename = "UP")]
    Up,
    #[serde(rename = "DCP")]
    Dcp,
}

impl PacketKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Rp => "RP",
            PacketKind::Up => "UP",
            PacketKind::Dcp => "DCP",
        }
    }
}

impl fmt::Display for PacketKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxId(pub u64);

/// One frame on the air.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub id: TxId,
    pub source: Node,
    pub kind: PacketKind,
    pub channel_hz: u64,
    pub params: RadioParams,
    pub start: SimTime,
    pub airtime: SimDuration,
    pub phy_payload_len: usize,
    /// Received power at the gateways, used by the threshold capture rule.
    pub rx_power_dbm: f64,
}

impl Transmission {
    pub fn end(&self) -> SimTime {
        self.start + self.airtime
    }

    /// True when both frames share the channel and their air intervals intersect.
    pub fn overlaps(&self, other: &Transmission) -> bool {
        self.channel_hz == other.channel_hz && self.start < other.end() && other.start < self.end()
    }
}
