//! Reception outcome of overlapping same-channel frames at one gateway.

use std::collections::BTreeMap;

use rand::Rng;

use super::{Transmission, TxId};

#[derive(Debug, Clone, PartialEq)]
pub enum CaptureModel {
    /// Co-SF frames destroy each other unless one is stronger by the margin;
    /// frames on different SFs do not interact.
    Threshold { co_sf_capture_margin_db: f64 },
    /// Each party survives each interferer with a probability looked up by
    /// `(own SF, interferer SF)`, sampled independently.
    Empirical { survival: BTreeMap<(u8, u8), f64> },
}

impl Default for CaptureModel {
    fn default() -> Self {
        CaptureModel::fitted_empirical()
    }
}

/// Measured PLRs of two synchronized UPs on one channel, in percent:
/// (sf of ED1, sf of ED2, ED1 loss, ED2 loss, joint loss if reported).
const MEASURED_PAIRS: [(u8, u8, f64, f64, Option<f64>); 5] = [
    (7, 7, 94.3, 35.0, Some(29.66)),
    (7, 8, 4.7, 3.23, Some(0.12)),
    (8, 8, 17.96, 84.88, Some(3.46)),
    (8, 9, 32.0, 0.0, None),
    (9, 10, 5.18, 0.0, None),
];

impl CaptureModel {
    /// Survival probabilities back-fitted from the measured pair losses.
    ///
    /// With independent per-party sampling the joint loss is the product of the
    /// two marginal losses. Where a joint value was measured it is matched
    /// exactly: same-SF pairs share one loss `sqrt(joint)` (the model cannot tell
    /// the two parties apart), different-SF pairs keep the ratio of the two
    /// measured marginals. Without a joint value the marginals are used as is.
    pub fn fitted_empirical() -> Self {
        let mut survival = BTreeMap::new();
        for (sf_a, sf_b, loss_a, loss_b, joint) in MEASURED_PAIRS {
            let (la, lb) = match joint {
                Some(j) if sf_a == sf_b => {
                    let l = (j / 100.0).sqrt();
                    (l, l)
                }
                Some(j) => {
                    let j = j / 100.0;
                    let la = (j * loss_a / loss_b).sqrt();
                    (la, j / la)
                }
                None => (loss_a / 100.0, loss_b / 100.0),
            };
            survival.insert((sf_a, sf_b), 1.0 - la);
            survival.insert((sf_b, sf_a), 1.0 - lb);
        }
        CaptureModel::Empirical { survival }
    }

    /// Joint loss of a synchronized pair implied by the model.
    pub fn joint_loss(&self, sf_a: u8, sf_b: u8) -> f64 {
        (1.0 - self.survival(sf_a, sf_b)) * (1.0 - self.survival(sf_b, sf_a))
    }

    /// Probability that a frame on `own` survives one interferer on `other`
    /// (empirical mode). Unlisted same-SF pairs are destructive, unlisted
    /// cross-SF pairs orthogonal.
    pub fn survival(&self, own: u8, other: u8) -> f64 {
        match self {
            CaptureModel::Empirical { survival } => survival
                .get(&(own, other))
                .copied()
                .unwrap_or(if own == other { 0.0 } else { 1.0 }),
            CaptureModel::Threshold { .. } => {
                if own == other {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            CaptureModel::Threshold { co_sf_capture_margin_db } => {
                if !co_sf_capture_margin_db.is_finite() || *co_sf_capture_margin_db < 0.0 {
                    return Err(format!("capture margin {co_sf_capture_margin_db} dB must be >= 0"));
                }
            }
            CaptureModel::Empirical { survival } => {
                for (&(a, b), &p) in survival {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(format!("survival probability for SF{a} vs SF{b} is {p}, outside [0, 1]"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Decides whether `tx` is decoded given the frames that overlapped it.
    pub fn survives<R: Rng + ?Sized>(&self, tx: &Transmission, interferers: &[&Transmission], rng: &mut R) -> bool {
        match self {
            CaptureModel::Threshold { co_sf_capture_margin_db } => interferers
                .iter()
                .filter(|o| o.params.sf == tx.params.sf)
                .all(|o| tx.rx_power_dbm - o.rx_power_dbm >= *co_sf_capture_margin_db),
            CaptureModel::Empirical { .. } => {
                let mut alive = true;
                // draw for every interferer so the stream advances the same way
                // whatever the earlier outcomes were
                for o in interferers {
                    let p = self.survival(tx.params.sf, o.params.sf);
                    let u: f64 = rng.random();
                    if u >= p {
                        alive = false;
                    }
                }
                alive
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reception {
    Decoded,
    Lost,
}

/// Outcome for every frame of `txs` at one gateway. Each frame is judged
/// against the members of the set that overlap it on its channel.
pub fn resolve_receptions<R: Rng + ?Sized>(
    txs: &[Transmission],
    model: &CaptureModel,
    rng: &mut R,
) -> BTreeMap<TxId, Reception> {
    txs.iter()
        .map(|tx| {
            let others: Vec<&Transmission> = txs
                .iter()
                .filter(|o| o.id != tx.id && o.overlaps(tx))
                .collect();
            let ok = others.is_empty() || model.survives(tx, &others, rng);
            (tx.id, if ok { Reception::Decoded } else { Reception::Lost })
        })
        .collect()
}
