//! EU868 sub-bands and the default channel plan.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PhyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubBandName {
    G,
    G1,
    G2,
    G3,
    G4,
}

impl SubBandName {
    pub const ALL: [SubBandName; 5] = [
        SubBandName::G,
        SubBandName::G1,
        SubBandName::G2,
        SubBandName::G3,
        SubBandName::G4,
    ];

    /// Regulatory duty-cycle limit (ETSI EN 300 220).
    pub fn duty_cycle_limit(self) -> f64 {
        match self {
            SubBandName::G | SubBandName::G1 | SubBandName::G4 => 0.01,
            SubBandName::G2 => 0.001,
            SubBandName::G3 => 0.10,
        }
    }

    /// Frequency range in Hz, `[lo, hi)`.
    pub fn range_hz(self) -> (u64, u64) {
        match self {
            SubBandName::G => (863_000_000, 868_000_000),
            SubBandName::G1 => (868_000_000, 868_600_000),
            SubBandName::G2 => (868_700_000, 869_200_000),
            SubBandName::G3 => (869_400_000, 869_650_000),
            SubBandName::G4 => (869_700_000, 870_000_000),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SubBandName::G => "g",
            SubBandName::G1 => "g1",
            SubBandName::G2 => "g2",
            SubBandName::G3 => "g3",
            SubBandName::G4 => "g4",
        }
    }
}

impl fmt::Display for SubBandName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubBandName {
    type Err = PhyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SubBandName::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| PhyError::UnknownSubBand(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubBand {
    pub name: SubBandName,
    pub lo_hz: u64,
    pub hi_hz: u64,
    pub duty_cycle_limit: f64,
    pub channels: Vec<u64>,
}

impl SubBand {
    pub fn contains(&self, freq_hz: u64) -> bool {
        // the top of the plan (870.0 MHz) is inclusive
        self.lo_hz <= freq_hz && (freq_hz < self.hi_hz || (freq_hz == self.hi_hz && self.hi_hz == 870_000_000))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPlan {
    pub subbands: Vec<SubBand>,
    pub rx2_freq_hz: u64,
    pub rx2_sf: u8,
}

pub const UP_CHANNELS_G: [u64; 5] = [867_100_000, 867_300_000, 867_500_000, 867_700_000, 867_900_000];
pub const RP_CHANNELS_G1: [u64; 3] = [868_100_000, 868_300_000, 868_500_000];
pub const RX2_FREQ_HZ: u64 = 869_525_000;
pub const RX2_SF: u8 = 12;

impl Default for ChannelPlan {
    fn default() -> Self {
        let subbands = SubBandName::ALL
            .into_iter()
            .map(|name| {
                let (lo_hz, hi_hz) = name.range_hz();
                let channels = match name {
                    SubBandName::G => UP_CHANNELS_G.to_vec(),
                    SubBandName::G1 => RP_CHANNELS_G1.to_vec(),
                    SubBandName::G3 => vec![RX2_FREQ_HZ],
                    _ => Vec::new(),
                };
                SubBand {
                    name,
                    lo_hz,
                    hi_hz,
                    duty_cycle_limit: name.duty_cycle_limit(),
                    channels,
                }
            })
            .collect();
        ChannelPlan {
            subbands,
            rx2_freq_hz: RX2_FREQ_HZ,
            rx2_sf: RX2_SF,
        }
    }
}

impl ChannelPlan {
    pub fn subband(&self, name: SubBandName) -> &SubBand {
        self.subbands
            .iter()
            .find(|b| b.name == name)
            .expect("plan carries every sub-band")
    }

    /// The sub-band whose frequency range contains `freq_hz`.
    pub fn subband_of(&self, freq_hz: u64) -> Result<&SubBand, PhyError> {
        self.subbands
            .iter()
            .find(|b| b.contains(freq_hz))
            .ok_or(PhyError::FrequencyOutOfPlan(freq_hz))
    }

    /// Replaces the channel list of one sub-band. Limits and ranges are fixed.
    pub fn set_channels(&mut self, name: SubBandName, channels: Vec<u64>) -> Result<(), PhyError> {
        let band = self
            .subbands
            .iter_mut()
            .find(|b| b.name == name)
            .expect("plan carries every sub-band");
        if let Some(&bad) = channels.iter().find(|&&f| !band.contains(f)) {
            return Err(PhyError::ChannelOutsideSubBand { freq_hz: bad, subband: name });
        }
        band.channels = channels;
        Ok(())
    }

    /// `ChN` numbering: the channels of g followed by those of g1.
    pub fn channel_by_index(&self, index: usize) -> Option<u64> {
        self.subband(SubBandName::G)
            .channels
            .iter()
            .chain(self.subband(SubBandName::G1).channels.iter())
            .nth(index)
            .copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_examples() {
        let plan = ChannelPlan::default();
        assert_eq!(plan.subband_of(867_100_000).unwrap().name, SubBandName::G);
        assert_eq!(plan.subband_of(868_100_000).unwrap().name, SubBandName::G1);
        assert_eq!(plan.subband_of(869_525_000).unwrap().name, SubBandName::G3);
        assert_eq!(plan.subband_of(868_000_000).unwrap().name, SubBandName::G1);
        assert_eq!(plan.subband_of(870_000_000).unwrap().name, SubBandName::G4);
    }

    #[test]
    fn gaps_and_outside_rejected() {
        let plan = ChannelPlan::default();
        assert_eq!(plan.subband_of(868_650_000), Err(PhyError::FrequencyOutOfPlan(868_650_000)));
        assert!(plan.subband_of(869_300_000).is_err());
        assert!(plan.subband_of(862_000_000).is_err());
        assert!(plan.subband_of(915_000_000).is_err());
    }

    #[test]
    fn limits_and_channel_membership() {
        let plan = ChannelPlan::default();
        let expect = [(SubBandName::G, 0.01), (SubBandName::G1, 0.01), (SubBandName::G2, 0.001), (SubBandName::G3, 0.10), (SubBandName::G4, 0.01)];
        for (name, limit) in expect {
            let b = plan.subband(name);
            assert_eq!(b.duty_cycle_limit, limit);
            assert!(b.channels.iter().all(|&f| b.contains(f)));
        }
        assert_eq!(plan.channel_by_index(0), Some(867_100_000));
        assert_eq!(plan.channel_by_index(5), Some(868_100_000));
        assert_eq!(plan.channel_by_index(8), None);
    }

    #[test]
    fn override_must_stay_inside_band() {
        let mut plan = ChannelPlan::default();
        assert!(plan.set_channels(SubBandName::G, vec![865_000_000, 866_000_000]).is_ok());
        assert!(plan.set_channels(SubBandName::G, vec![868_100_000]).is_err());
    }
}
