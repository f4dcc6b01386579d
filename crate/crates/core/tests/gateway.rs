use dcpsim::device::DcpPayload;
use dcpsim::gateway::{
    DownlinkRequest, DownlinkResult, Gateway, GatewayConfig, GatewayRole, PreemptionScope, UplinkAdmission,
};
use dcpsim::metrics::LossCause;
use dcpsim::phy::{airtime, DutyCycleLedger, Node, PacketKind, RadioParams, SubBandName, Transmission, TxId};
use dcpsim::{SimDuration, SimTime};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Step {
    Uplink { gap_ms: u64, channel: usize, sf: u8 },
    Downlink { gap_ms: u64 },
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        3 => (0u64..200, 0usize..5, 7u8..=10).prop_map(|(gap_ms, channel, sf)| Step::Uplink { gap_ms, channel, sf }),
        1 => (0u64..200).prop_map(|gap_ms| Step::Downlink { gap_ms }),
    ]
}

fn uplink(id: u64, start: SimTime, channel: usize, sf: u8) -> Transmission {
    let params = RadioParams::with_sf(sf);
    Transmission {
        id: TxId(id),
        source: Node::Device(id as usize),
        kind: PacketKind::Up,
        channel_hz: 867_100_000 + 200_000 * channel as u64,
        params,
        start,
        airtime: airtime(&params, 37).unwrap(),
        phy_payload_len: 37,
        rx_power_dbm: -80.0,
    }
}

fn downlink(at: SimTime) -> DownlinkRequest {
    let params = RadioParams::with_sf(7);
    DownlinkRequest {
        dcp: DcpPayload { target_device: 0, up_channel_hz: 867_100_000, up_sf: 7 },
        must_start_at: at,
        channel_hz: 868_100_000,
        subband: SubBandName::G1,
        params,
        airtime: airtime(&params, 17).unwrap(),
    }
}

proptest! {
    #[test]
    fn half_duplex_radio(steps in prop::collection::vec(step(), 1..80)) {
        let mut gw = Gateway::new(0, GatewayConfig::new("gw", GatewayRole::Full));
        let mut ledger = DutyCycleLedger::new();
        let mut now = SimTime(0);
        let mut receiving: Vec<Transmission> = Vec::new();
        let mut tx_until = SimTime(0);
        let mut next_id = 0;
        for s in steps {
            let gap = match &s { Step::Uplink { gap_ms, .. } | Step::Downlink { gap_ms } => *gap_ms };
            now += SimDuration::from_millis(gap);
            // end receptions whose frames are over
            receiving.retain(|tx| {
                if tx.end() <= now {
                    gw.on_uplink_end(tx);
                    false
                } else {
                    true
                }
            });
            match s {
                Step::Uplink { channel, sf, .. } => {
                    next_id += 1;
                    let tx = uplink(next_id, now, channel, sf);
                    let before = gw.active_receptions();
                    match gw.on_uplink_start(&tx, now) {
                        UplinkAdmission::Accepted => {
                            prop_assert!(now >= tx_until, "accepted while transmitting");
                            prop_assert!(before < 10);
                            receiving.push(tx);
                        }
                        UplinkAdmission::Dropped(LossCause::TxBusy) => prop_assert!(now < tx_until),
                        UplinkAdmission::Dropped(LossCause::NoDemodPath) => prop_assert!(before >= 10),
                        UplinkAdmission::Dropped(c) => prop_assert!(false, "unexpected {:?}", c),
                    }
                }
                Step::Downlink { .. } => match gw.start_downlink(&downlink(now), now, &mut ledger) {
                    DownlinkResult::Sent { until, preempted } => {
                        prop_assert!(now >= tx_until);
                        prop_assert_eq!(preempted.len(), receiving.len());
                        prop_assert_eq!(gw.active_receptions(), 0);
                        for tx in receiving.drain(..) {
                            prop_assert!(!gw.on_uplink_end(&tx), "preempted frame decoded");
                        }
                        tx_until = until;
                    }
                    DownlinkResult::Skipped(LossCause::TxBusy) => prop_assert!(now < tx_until),
                    DownlinkResult::Skipped(LossCause::DutyCycle) => {}
                    DownlinkResult::Skipped(c) => prop_assert!(false, "unexpected {:?}", c),
                },
            }
            prop_assert_eq!(gw.is_transmitting(now), now < tx_until);
        }
    }
}

#[test]
fn channel_scope_spares_other_channels() {
    let mut cfg = GatewayConfig::new("gw", GatewayRole::Full);
    cfg.preemption = PreemptionScope::Channel;
    let mut gw = Gateway::new(0, cfg);
    let mut ledger = DutyCycleLedger::new();
    let mut same = uplink(1, SimTime(0), 0, 9);
    same.channel_hz = 868_100_000;
    let other = uplink(2, SimTime(0), 1, 9);
    assert_eq!(gw.on_uplink_start(&same, SimTime(0)), UplinkAdmission::Accepted);
    assert_eq!(gw.on_uplink_start(&other, SimTime(0)), UplinkAdmission::Accepted);
    let t = SimTime(0) + SimDuration::from_millis(50);
    match gw.start_downlink(&downlink(t), t, &mut ledger) {
        DownlinkResult::Sent { preempted, .. } => assert_eq!(preempted, vec![TxId(1)]),
        r => panic!("{r:?}"),
    }
    assert!(gw.on_uplink_end(&other));
}

#[test]
fn receive_only_never_transmits() {
    let mut gw = Gateway::new(0, GatewayConfig::new("gw", GatewayRole::RxOnly));
    let mut ledger = DutyCycleLedger::new();
    assert_eq!(
        gw.start_downlink(&downlink(SimTime(0)), SimTime(0), &mut ledger),
        DownlinkResult::Skipped(LossCause::RxOnly)
    );
    assert!(!gw.is_transmitting(SimTime(0)));
}
