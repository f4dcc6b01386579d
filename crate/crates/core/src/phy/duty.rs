//! Per-transmitter, per-sub-band duty-cycle bookkeeping.
//!
//! Two policies are supported. `OffPeriod` is the usual LoRaWAN rule: after a
//! frame of airtime `t` ending at `e` on a sub-band with limit `d`, the whole
//! sub-band is closed until `e + t*(1/d - 1)`. `Window` is the ETSI
//! observation-period form: a transmission is allowed when the airtime spent on
//! the sub-band over the trailing window, including the new frame, stays within
//! `d * window`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Node, SubBandName};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DutyCyclePolicy {
    #[default]
    OffPeriod,
    Window(SimDuration),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DutyCheck {
    Permitted,
    BlockedUntil(SimTime),
}

impl DutyCheck {
    pub fn is_permitted(self) -> bool {
        matches!(self, DutyCheck::Permitted)
    }
}

#[derive(Debug, Clone, Default)]
struct Entry {
    next_allowed: SimTime,
    /// (start, airtime) in transmission order.
    log: Vec<(SimTime, SimDuration)>,
    /// First log index that may still fall inside a window.
    window_head: usize,
    total: SimDuration,
}

#[derive(Debug, Clone, Default)]
pub struct DutyCycleLedger {
    entries: BTreeMap<(Node, SubBandName), Entry>,
    policies: BTreeMap<Node, DutyCyclePolicy>,
}

/// Off-period after a frame of `airtime` on a sub-band with `limit`, to the nearest µs.
pub fn off_period(airtime: SimDuration, limit: f64) -> SimDuration {
    SimDuration((airtime.as_micros() as f64 * (1.0 / limit - 1.0)).round() as u64)
}

impl DutyCycleLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_policy(&mut self, node: Node, policy: DutyCyclePolicy) {
        self.policies.insert(node, policy);
    }

    pub fn policy(&self, node: Node) -> DutyCyclePolicy {
        self.policies.get(&node).copied().unwrap_or_default()
    }

    /// Whether `node` may start a frame of `airtime` on `band` at `now`.
    /// `airtime` only matters under the window policy.
    pub fn check(&self, node: Node, band: SubBandName, now: SimTime, airtime: SimDuration) -> DutyCheck {
        let Some(entry) = self.entries.get(&(node, band)) else {
            return DutyCheck::Permitted;
        };
        match self.policy(node) {
            DutyCyclePolicy::OffPeriod => {
                if now >= entry.next_allowed {
                    DutyCheck::Permitted
                } else {
                    DutyCheck::BlockedUntil(entry.next_allowed)
                }
            }
            DutyCyclePolicy::Window(window) => {
                let budget = budget(window, band.duty_cycle_limit());
                if airtime > budget {
                    // can never fit; report the time the window is empty
                    let last = entry.log.last().map(|(s, a)| *s + *a).unwrap_or(now);
                    return DutyCheck::BlockedUntil((last + window).max(now));
                }
                if window_fits(entry, now, airtime, window, budget) {
                    return DutyCheck::Permitted;
                }
                // busy time in the trailing window is non-increasing in the
                // start time, so bisect for the first start that fits
                let (mut lo, mut hi) = (now.0, now.0 + window.0);
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if window_fits(entry, SimTime(mid), airtime, window, budget) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                DutyCheck::BlockedUntil(SimTime(hi))
            }
        }
    }

    /// Books a frame. Recording a frame the ledger would block is a logic error.
    pub fn record(&mut self, node: Node, band: SubBandName, start: SimTime, airtime: SimDuration) {
        let check = self.check(node, band, start, airtime);
        assert!(
            check.is_permitted(),
            "duty cycle violated: {node:?} on {band} at {start}: {check:?}"
        );
        let policy = self.policy(node);
        let entry = self.entries.entry((node, band)).or_default();
        let end = start + airtime;
        entry.next_allowed = end + off_period(airtime, band.duty_cycle_limit());
        entry.log.push((start, airtime));
        entry.total += airtime;
        if let DutyCyclePolicy::Window(window) = policy {
            let horizon = start.0.saturating_sub(window.0);
            while entry.window_head < entry.log.len() {
                let (s, a) = entry.log[entry.window_head];
                if (s + a).0 <= horizon {
                    entry.window_head += 1;
                } else {
                    break;
                }
            }
        }
    }

    pub fn next_allowed(&self, node: Node, band: SubBandName) -> Option<SimTime> {
        self.entries.get(&(node, band)).map(|e| e.next_allowed)
    }

    pub fn total_airtime(&self, node: Node, band: SubBandName) -> SimDuration {
        self.entries.get(&(node, band)).map(|e| e.total).unwrap_or_default()
    }

    pub fn log(&self, node: Node, band: SubBandName) -> &[(SimTime, SimDuration)] {
        self.entries
            .get(&(node, band))
            .map(|e| e.log.as_slice())
            .unwrap_or(&[])
    }
}

fn budget(window: SimDuration, limit: f64) -> SimDuration {
    SimDuration((window.as_micros() as f64 * limit).floor() as u64)
}

fn window_fits(entry: &Entry, start: SimTime, airtime: SimDuration, window: SimDuration, budget: SimDuration) -> bool {
    let end = start.0 + airtime.0;
    let lo = end.saturating_sub(window.0);
    let mut busy = airtime.0;
    for &(s, a) in &entry.log[entry.window_head..] {
        let (s0, s1) = (s.0, s.0 + a.0);
        let overlap = s1.min(end).saturating_sub(s0.max(lo));
        busy += overlap;
    }
    busy <= budget.0
}

/// Largest airtime fraction over any window of length `window` ending at a
/// frame end or starting at a frame start. These are the extremal positions
/// of a sliding window over a union of intervals.
pub fn max_busy_fraction(log: &[(SimTime, SimDuration)], window: SimDuration) -> f64 {
    let busy_in = |lo: u64, hi: u64| -> u64 {
        log.iter()
            .map(|&(s, a)| (s.0 + a.0).min(hi).saturating_sub(s.0.max(lo)))
            .sum()
    };
    let mut worst = 0u64;
    for &(s, a) in log {
        let end = s.0 + a.0;
        worst = worst.max(busy_in(end.saturating_sub(window.0), end));
        worst = worst.max(busy_in(s.0, s.0 + window.0));
    }
    worst as f64 / window.0 as f64
}
