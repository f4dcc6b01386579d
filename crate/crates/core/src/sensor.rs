//! Behavioural model of the gas sensors that trigger urgent packets.
//!
//! Combustibles (methane, propane, butane) are read through the catalytic
//! bridge voltage; CO and O2 through the electrochemical cells, quantized to
//! their resolution. Threshold comparisons are inclusive.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Methane,
    Propane,
    Butane,
    Co,
    O2,
}

impl Species {
    pub fn is_combustible(self) -> bool {
        matches!(self, Species::Methane | Species::Propane | Species::Butane)
    }

    /// Lower explosive limit, % by volume.
    pub fn lel_pct(self) -> Option<f64> {
        match self {
            Species::Methane => Some(5.0),
            Species::Propane => Some(2.1),
            Species::Butane => Some(1.8),
            _ => None,
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Species::Methane => "methane",
            Species::Propane => "propane",
            Species::Butane => "butane",
            Species::Co => "co",
            Species::O2 => "o2",
        };
        f.write_str(s)
    }
}

impl FromStr for Species {
    type Err = SensorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "methane" => Ok(Species::Methane),
            "propane" => Ok(Species::Propane),
            "butane" => Ok(Species::Butane),
            "co" => Ok(Species::Co),
            "o2" => Ok(Species::O2),
            other => Err(SensorError::UnknownSpecies(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensorError {
    #[error("{0} is not read by the catalytic sensor")]
    NotCombustible(Species),
    #[error("unknown gas species `{0}`")]
    UnknownSpecies(String),
    #[error("invalid sensor profile: {0}")]
    InvalidProfile(String),
    #[error("invalid event generator: {0}")]
    InvalidGenerator(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorProfile {
    /// %vol per volt of bridge output in methane.
    pub catalytic_sensitivity_methane: f64,
    /// Propane/butane sensitivity relative to methane.
    pub relative_sensitivity_propane_butane: f64,
    pub catalytic_alarm_volts: f64,
    pub co_range_ppm: (f64, f64),
    pub co_resolution_ppm: f64,
    pub o2_range_pct: (f64, f64),
    pub o2_resolution_pct: f64,
    pub co_alarm_ppm: f64,
    pub o2_deficiency_pct: f64,
}

impl Default for SensorProfile {
    fn default() -> Self {
        SensorProfile {
            catalytic_sensitivity_methane: 2.0,
            relative_sensitivity_propane_butane: 1.5,
            catalytic_alarm_volts: 0.5,
            co_range_ppm: (0.0, 500.0),
            co_resolution_ppm: 2.0,
            o2_range_pct: (15.0, 21.0),
            o2_resolution_pct: 0.5,
            // not measured values; conservative defaults
            co_alarm_ppm: 100.0,
            o2_deficiency_pct: 19.0,
        }
    }
}

impl SensorProfile {
    pub fn validate(&self) -> Result<(), SensorError> {
        let bad = |m: String| Err(SensorError::InvalidProfile(m));
        if !(self.catalytic_sensitivity_methane > 0.0) || !(self.relative_sensitivity_propane_butane > 0.0) {
            return bad("sensitivities must be positive".into());
        }
        if !(self.catalytic_alarm_volts > 0.0) {
            return bad("catalytic alarm voltage must be positive".into());
        }
        let (co_lo, co_hi) = self.co_range_ppm;
        if !(co_lo < co_hi) || !(co_lo..=co_hi).contains(&self.co_alarm_ppm) {
            return bad(format!("CO alarm {} ppm outside range [{co_lo}, {co_hi}]", self.co_alarm_ppm));
        }
        let (o2_lo, o2_hi) = self.o2_range_pct;
        if !(o2_lo < o2_hi) || !(o2_lo..=o2_hi).contains(&self.o2_deficiency_pct) {
            return bad(format!("O2 threshold {}% outside range [{o2_lo}, {o2_hi}]", self.o2_deficiency_pct));
        }
        if !(self.co_resolution_ppm > 0.0) || !(self.o2_resolution_pct > 0.0) {
            return bad("resolutions must be positive".into());
        }
        Ok(())
    }

    /// %vol per volt for a combustible species.
    pub fn sensitivity(&self, species: Species) -> Result<f64, SensorError> {
        match species {
            Species::Methane => Ok(self.catalytic_sensitivity_methane),
            Species::Propane | Species::Butane => {
                Ok(self.catalytic_sensitivity_methane * self.relative_sensitivity_propane_butane)
            }
            other => Err(SensorError::NotCombustible(other)),
        }
    }
}

/// Bridge output voltage for a combustible at `concentration_pct` %vol.
pub fn bridge_voltage(profile: &SensorProfile, species: Species, concentration_pct: f64) -> Result<f64, SensorError> {
    Ok(concentration_pct / profile.sensitivity(species)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasEvent {
    pub at: SimTime,
    /// Index of the cluster whose members all sense the event.
    pub cluster: usize,
    pub species: Species,
    /// %vol for combustibles and O2, ppm for CO.
    pub level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlarmDecision {
    pub alarm: bool,
    /// The reading after clamping and quantization (volts for combustibles).
    pub reading: f64,
    /// The raw level was outside the sensor range and got clamped.
    pub clamped: bool,
}

fn quantize(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

pub fn alarm_check(profile: &SensorProfile, event: &GasEvent) -> AlarmDecision {
    let clamp = |x: f64, lo: f64, hi: f64| (x.clamp(lo, hi), x < lo || x > hi);
    match event.species {
        s if s.is_combustible() => {
            let (level, clamped) = clamp(event.level, 0.0, 100.0);
            let volts = bridge_voltage(profile, s, level).expect("combustible");
            AlarmDecision { alarm: volts >= profile.catalytic_alarm_volts, reading: volts, clamped }
        }
        Species::Co => {
            let (lo, hi) = profile.co_range_ppm;
            let (level, clamped) = clamp(event.level, lo, hi);
            let q = quantize(level, profile.co_resolution_ppm).clamp(lo, hi);
            AlarmDecision { alarm: q >= profile.co_alarm_ppm, reading: q, clamped }
        }
        _ => {
            let (lo, hi) = profile.o2_range_pct;
            let (level, clamped) = clamp(event.level, lo, hi);
            let q = quantize(level, profile.o2_resolution_pct).clamp(lo, hi);
            AlarmDecision { alarm: q <= profile.o2_deficiency_pct, reading: q, clamped }
        }
    }
}

/// Source of gas events for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub enum EventSpec {
    /// Fixed `(time, species, level)` list.
    Scripted(Vec<(SimTime, Species, f64)>),
    /// Events with interarrival uniform on `[min, max]`, starting after `start`.
    Random {
        start: SimTime,
        min: SimDuration,
        max: SimDuration,
        species: Species,
        level: f64,
    },
}

#[derive(Debug, Clone)]
pub struct EventGenerator {
    cluster: usize,
    spec: EventSpec,
    cursor: usize,
    last: SimTime,
}

impl EventGenerator {
    pub fn new(cluster: usize, mut spec: EventSpec) -> Result<Self, SensorError> {
        let last = match &mut spec {
            EventSpec::Scripted(list) => {
                list.sort_by_key(|(t, _, _)| *t);
                SimTime::ZERO
            }
            EventSpec::Random { start, min, max, .. } => {
                if min.as_micros() == 0 || min > max {
                    return Err(SensorError::InvalidGenerator(format!(
                        "interarrival interval [{min}, {max}] must satisfy 0 < min <= max"
                    )));
                }
                *start
            }
        };
        Ok(EventGenerator { cluster, spec, cursor: 0, last })
    }

    pub fn cluster(&self) -> usize {
        self.cluster
    }

    pub fn next_event<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<GasEvent> {
        match &self.spec {
            EventSpec::Scripted(list) => {
                let (at, species, level) = *list.get(self.cursor)?;
                self.cursor += 1;
                Some(GasEvent { at, cluster: self.cluster, species, level })
            }
            EventSpec::Random { min, max, species, level, .. } => {
                let gap = if min == max { min.as_micros() } else { rng.random_range(min.as_micros()..=max.as_micros()) };
                self.last += SimDuration(gap);
                Some(GasEvent { at: self.last, cluster: self.cluster, species: *species, level: *level })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStreams;

    fn ev(species: Species, level: f64) -> GasEvent {
        GasEvent { at: SimTime::ZERO, cluster: 0, species, level }
    }

    #[test]
    fn lel_voltages() {
        let p = SensorProfile::default();
        assert!((bridge_voltage(&p, Species::Methane, 5.0).unwrap() - 2.5).abs() < 1e-12);
        assert!((bridge_voltage(&p, Species::Butane, 1.8).unwrap() - 0.6).abs() < 1e-12);
        assert!((bridge_voltage(&p, Species::Propane, 2.1).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(bridge_voltage(&p, Species::Co, 1.0), Err(SensorError::NotCombustible(Species::Co)));
    }

    #[test]
    fn alarm_boundaries() {
        let p = SensorProfile::default();
        assert!(alarm_check(&p, &ev(Species::Methane, 1.0)).alarm);
        assert!(!alarm_check(&p, &ev(Species::Methane, 0.99)).alarm);
        assert!(!alarm_check(&p, &ev(Species::O2, 21.0)).alarm);
        assert!(alarm_check(&p, &ev(Species::O2, 19.0)).alarm);
        assert!(!alarm_check(&p, &ev(Species::Co, 0.0)).alarm);
        assert!(alarm_check(&p, &ev(Species::Co, 100.0)).alarm);
        // 98.9 ppm quantizes to 98
        assert!(!alarm_check(&p, &ev(Species::Co, 98.9)).alarm);
    }

    #[test]
    fn out_of_range_readings_are_clamped_and_flagged() {
        let p = SensorProfile::default();
        let d = alarm_check(&p, &ev(Species::Co, 900.0));
        assert!(d.clamped && d.alarm);
        assert_eq!(d.reading, 500.0);
        let d = alarm_check(&p, &ev(Species::O2, 10.0));
        assert!(d.clamped && d.alarm);
        assert_eq!(d.reading, 15.0);
        assert!(!alarm_check(&p, &ev(Species::O2, 20.9)).clamped);
    }

    #[test]
    fn uniform_interarrival_mean() {
        let mut g = EventGenerator::new(
            0,
            EventSpec::Random {
                start: SimTime::ZERO,
                min: SimDuration::from_secs(120),
                max: SimDuration::from_secs(130),
                species: Species::Methane,
                level: 2.0,
            },
        )
        .unwrap();
        let mut rng = RandomStreams::new(11).stream("sensor");
        let n = 10_000;
        let mut last = SimTime::ZERO;
        for _ in 0..n {
            last = g.next_event(&mut rng).unwrap().at;
        }
        let mean = last.as_secs_f64() / n as f64;
        // sd of one gap is 10/sqrt(12) s
        assert!((mean - 125.0).abs() < 4.0 * 2.887 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn scripted_events_in_time_order() {
        let mut g = EventGenerator::new(
            2,
            EventSpec::Scripted(vec![
                (SimTime::from_secs_f64(50.0), Species::Co, 200.0),
                (SimTime::from_secs_f64(10.0), Species::Methane, 3.0),
            ]),
        )
        .unwrap();
        let mut rng = RandomStreams::new(0).stream("s");
        let a = g.next_event(&mut rng).unwrap();
        let b = g.next_event(&mut rng).unwrap();
        assert_eq!((a.species, b.species), (Species::Methane, Species::Co));
        assert_eq!(a.cluster, 2);
        assert!(g.next_event(&mut rng).is_none());
    }

    #[test]
    fn bad_generator_rejected() {
        let spec = EventSpec::Random {
            start: SimTime::ZERO,
            min: SimDuration::from_secs(130),
            max: SimDuration::from_secs(120),
            species: Species::Methane,
            level: 2.0,
        };
        assert!(EventGenerator::new(0, spec).is_err());
    }

    #[test]
    fn profile_validation() {
        assert!(SensorProfile::default().validate().is_ok());
        let p = SensorProfile { co_alarm_ppm: 600.0, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
