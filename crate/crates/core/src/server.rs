//! Network server: deduplication, per-cluster resource assignment, DCP scheduling.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{DcpPayload, UpAssignment};
use crate::gateway::DownlinkRequest;
use crate::phy::{airtime, ChannelPlan, PhyError, RadioParams, Transmission};
use crate::time::{SimDuration, SimTime};

/// Devices sharing one channel must use these SFs.
pub const STACKED_SFS: [u8; 3] = [8, 9, 10];
pub const MAX_PER_CHANNEL: usize = STACKED_SFS.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    /// The server computes the table from member order.
    #[default]
    Auto,
    /// Devices keep their configured assignments, checked for conflicts.
    Static,
    /// Configured assignments are used unchecked. Meant for calibration runs
    /// that put several devices on one (channel, SF) on purpose.
    Forced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub name: String,
    pub members: Vec<usize>,
    pub dcp_gateway: usize,
    pub up_channels: Vec<u64>,
    pub mode: AssignmentMode,
}

pub type AssignmentTable = BTreeMap<usize, UpAssignment>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServerError {
    #[error("cluster of {members} devices exceeds capacity {capacity} ({channels} channels x {MAX_PER_CHANNEL} SFs)")]
    ClusterTooLarge { members: usize, channels: usize, capacity: usize },
    #[error("cluster has no UP channels")]
    NoChannels,
    #[error("devices {a} and {b} share channel {channel_hz} Hz at SF{sf}")]
    DuplicatePair { a: usize, b: usize, channel_hz: u64, sf: u8 },
    #[error("{count} devices on channel {channel_hz} Hz, at most {MAX_PER_CHANNEL} allowed")]
    ChannelOverloaded { channel_hz: u64, count: usize },
    #[error("device {device} shares channel {channel_hz} Hz at SF{sf}; shared channels use SF8-10")]
    StackedSf7 { device: usize, channel_hz: u64, sf: u8 },
    #[error("device {0} has no assignment")]
    Missing(usize),
    #[error(transparent)]
    Phy(#[from] PhyError),
}

/// Conflict-free `(channel, SF)` table for one cluster.
///
/// Members are dealt round-robin over the channels in order. A channel with a
/// single occupant gets SF7; a shared channel gives its occupants SF8, SF9 and
/// SF10 in member order.
pub fn assign_resources(members: &[usize], up_channels: &[u64]) -> Result<AssignmentTable, ServerError> {
    let c = up_channels.len();
    if c == 0 {
        return Err(ServerError::NoChannels);
    }
    if members.len() > c * MAX_PER_CHANNEL {
        return Err(ServerError::ClusterTooLarge {
            members: members.len(),
            channels: c,
            capacity: c * MAX_PER_CHANNEL,
        });
    }
    let mut occupancy = vec![0usize; c];
    for i in 0..members.len() {
        occupancy[i % c] += 1;
    }
    Ok(members
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let ch = i % c;
            let sf = if occupancy[ch] == 1 { 7 } else { STACKED_SFS[i / c] };
            (d, UpAssignment { channel_hz: up_channels[ch], sf })
        })
        .collect())
}

/// Checks the capacity rule on an arbitrary table.
pub fn check_assignments(table: &AssignmentTable) -> Result<(), ServerError> {
    let mut by_channel: BTreeMap<u64, Vec<(usize, u8)>> = BTreeMap::new();
    for (&d, a) in table {
        by_channel.entry(a.channel_hz).or_default().push((d, a.sf));
    }
    for (&channel_hz, devs) in &by_channel {
        if devs.len() > MAX_PER_CHANNEL {
            return Err(ServerError::ChannelOverloaded { channel_hz, count: devs.len() });
        }
        for (i, &(a, sf)) in devs.iter().enumerate() {
            if let Some(&(b, _)) = devs[i + 1..].iter().find(|(_, s)| *s == sf) {
                return Err(ServerError::DuplicatePair { a, b, channel_hz, sf });
            }
            if devs.len() > 1 && !STACKED_SFS.contains(&sf) {
                return Err(ServerError::StackedSf7 { device: a, channel_hz, sf });
            }
        }
    }
    Ok(())
}

/// An uplink as handed over by one gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodedFrame {
    pub device: usize,
    pub uplink_seq: u64,
    pub gateway: usize,
    pub received_at: SimTime,
}

#[derive(Debug, Clone)]
pub struct Server {
    pub clusters: Vec<Cluster>,
    device_cluster: BTreeMap<usize, usize>,
    table: AssignmentTable,
    delivered: BTreeSet<(usize, u64)>,
    pub dcp_phy_payload: usize,
}

impl Server {
    /// Builds the assignment table. `configured` holds per-device assignments
    /// for static and forced clusters.
    pub fn new(clusters: Vec<Cluster>, configured: &AssignmentTable) -> Result<Self, ServerError> {
        let mut table = AssignmentTable::new();
        let mut device_cluster = BTreeMap::new();
        for (ci, cl) in clusters.iter().enumerate() {
            for &d in &cl.members {
                device_cluster.insert(d, ci);
            }
            let part = match cl.mode {
                AssignmentMode::Auto => assign_resources(&cl.members, &cl.up_channels)?,
                AssignmentMode::Static | AssignmentMode::Forced => {
                    let part: AssignmentTable = cl
                        .members
                        .iter()
                        .map(|&d| configured.get(&d).map(|a| (d, *a)).ok_or(ServerError::Missing(d)))
                        .collect::<Result<_, _>>()?;
                    if cl.mode == AssignmentMode::Static {
                        check_assignments(&part)?;
                    }
                    part
                }
            };
            table.extend(part);
        }
        Ok(Server { clusters, device_cluster, table, delivered: BTreeSet::new(), dcp_phy_payload: 37 })
    }

    pub fn table(&self) -> &AssignmentTable {
        &self.table
    }

    pub fn cluster_of(&self, device: usize) -> Option<usize> {
        self.device_cluster.get(&device).copied()
    }

    pub fn assignment(&self, device: usize) -> Option<UpAssignment> {
        self.table.get(&device).copied()
    }

    /// Returns `true` for the first copy of an uplink, `false` for duplicates
    /// from further gateways.
    pub fn on_uplink(&mut self, frame: &DecodedFrame) -> bool {
        self.delivered.insert((frame.device, frame.uplink_seq))
    }

    /// Forgets dedup state for an uplink whose copies have all arrived.
    pub fn retire(&mut self, device: usize, uplink_seq: u64) {
        self.delivered.remove(&(device, uplink_seq));
    }

    /// DCP answering a decoded RP: aimed at the sender's RX1 on the RP's
    /// channel and SF, sent by the cluster's DCP gateway.
    pub fn schedule_dcp(
        &self,
        rp: &Transmission,
        device: usize,
        receive_delay1: SimDuration,
        plan: &ChannelPlan,
    ) -> Result<Option<(usize, DownlinkRequest)>, ServerError> {
        let (Some(ci), Some(a)) = (self.cluster_of(device), self.assignment(device)) else {
            return Ok(None);
        };
        let params = RadioParams { low_data_rate_opt: None, ..rp.params };
        let req = DownlinkRequest {
            dcp: DcpPayload { target_device: device, up_channel_hz: a.channel_hz, up_sf: a.sf },
            must_start_at: rp.end() + receive_delay1,
            channel_hz: rp.channel_hz,
            subband: plan.subband_of(rp.channel_hz)?.name,
            params,
            airtime: airtime(&params, self.dcp_phy_payload)?,
        };
        Ok(Some((self.clusters[ci].dcp_gateway, req)))
    }

    /// The same DCP moved to RX2.
    pub fn rx2_fallback(
        &self,
        req: &DownlinkRequest,
        receive_delay1: SimDuration,
        receive_delay2: SimDuration,
        plan: &ChannelPlan,
    ) -> Result<DownlinkRequest, ServerError> {
        let params = RadioParams::with_sf(plan.rx2_sf);
        let uplink_end = SimTime(req.must_start_at.as_micros() - receive_delay1.as_micros());
        Ok(DownlinkRequest {
            dcp: req.dcp,
            must_start_at: uplink_end + receive_delay2,
            channel_hz: plan.rx2_freq_hz,
            subband: plan.subband_of(plan.rx2_freq_hz)?.name,
            params,
            airtime: airtime(&params, self.dcp_phy_payload)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::{Node, PacketKind, SubBandName, TxId, UP_CHANNELS_G};

    #[test]
    fn five_members_get_five_channels() {
        let t = assign_resources(&[0, 1, 2, 3, 4], &UP_CHANNELS_G).unwrap();
        let chans: BTreeSet<u64> = t.values().map(|a| a.channel_hz).collect();
        assert_eq!(chans.len(), 5);
        assert!(t.values().all(|a| a.sf == 7));
    }

    #[test]
    fn sixth_member_stacks_on_sf8_9() {
        let t = assign_resources(&[0, 1, 2, 3, 4, 5], &UP_CHANNELS_G).unwrap();
        assert_eq!(t[&0], UpAssignment { channel_hz: 867_100_000, sf: 8 });
        assert_eq!(t[&5], UpAssignment { channel_hz: 867_100_000, sf: 9 });
        assert_eq!(t[&1].sf, 7);
        check_assignments(&t).unwrap();
    }

    #[test]
    fn single_member() {
        let t = assign_resources(&[42], &UP_CHANNELS_G).unwrap();
        assert_eq!(t[&42], UpAssignment { channel_hz: 867_100_000, sf: 7 });
    }

    #[test]
    fn oversize_cluster_rejected() {
        let members: Vec<usize> = (0..16).collect();
        let err = assign_resources(&members, &UP_CHANNELS_G).unwrap_err();
        assert!(err.to_string().contains("capacity 15"), "{err}");
    }

    #[test]
    fn checker_catches_conflicts() {
        let mut t = AssignmentTable::new();
        t.insert(0, UpAssignment { channel_hz: 867_100_000, sf: 7 });
        t.insert(1, UpAssignment { channel_hz: 867_100_000, sf: 8 });
        assert!(matches!(check_assignments(&t), Err(ServerError::StackedSf7 { .. })));
        t.insert(0, UpAssignment { channel_hz: 867_100_000, sf: 8 });
        assert!(matches!(check_assignments(&t), Err(ServerError::DuplicatePair { .. })));
    }

    #[test]
    fn dedup_by_uplink() {
        let mut s = Server::new(vec![], &AssignmentTable::new()).unwrap();
        let f = DecodedFrame { device: 3, uplink_seq: 9, gateway: 0, received_at: SimTime(1) };
        assert!(s.on_uplink(&f));
        assert!(!s.on_uplink(&DecodedFrame { gateway: 1, ..f }));
        assert!(s.on_uplink(&DecodedFrame { uplink_seq: 10, ..f }));
    }

    #[test]
    fn dcp_targets_rx1_via_cluster_gateway() {
        let cl = Cluster {
            name: "c".into(),
            members: vec![0, 1],
            dcp_gateway: 2,
            up_channels: UP_CHANNELS_G.to_vec(),
            mode: AssignmentMode::Auto,
        };
        let s = Server::new(vec![cl], &AssignmentTable::new()).unwrap();
        let params = RadioParams::with_sf(7);
        let rp = Transmission {
            id: TxId(1),
            source: Node::Device(1),
            kind: PacketKind::Rp,
            channel_hz: 868_300_000,
            params,
            start: SimTime(5_000_000),
            airtime: airtime(&params, 37).unwrap(),
            phy_payload_len: 37,
            rx_power_dbm: -80.0,
        };
        let plan = ChannelPlan::default();
        let (gw, req) = s.schedule_dcp(&rp, 1, SimDuration::from_secs(1), &plan).unwrap().unwrap();
        assert_eq!(gw, 2);
        assert_eq!(req.must_start_at, rp.end() + SimDuration::from_secs(1));
        assert_eq!(req.channel_hz, 868_300_000);
        assert_eq!(req.subband, SubBandName::G1);
        assert_eq!(req.airtime.as_micros(), 82_176);
        assert_eq!(req.dcp.up_channel_hz, 867_300_000);
        let rx2 = s.rx2_fallback(&req, SimDuration::from_secs(1), SimDuration::from_secs(2), &plan).unwrap();
        assert_eq!(rx2.must_start_at, rp.end() + SimDuration::from_secs(2));
        assert_eq!(rx2.subband, SubBandName::G3);
        assert_eq!(rx2.params.sf, 12);
    }
}
