//! Quantities with mandatory unit suffixes, as written in scenario files.
//!
//! Bare numbers are rejected: `"70s"`, `"50ms"`, `"867.1MHz"`, `"-80dBm"`.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::time::SimDuration;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitError {
    pub input: String,
    pub expected: &'static str,
}

impl fmt::Display for UnitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}` is not a quantity with a unit suffix ({})", self.input, self.expected)
    }
}

impl std::error::Error for UnitError {}

fn split_number(s: &str) -> Option<(f64, &str)> {
    let s = s.trim();
    let idx = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+'))
        .unwrap_or(s.len());
    if idx == 0 {
        return None;
    }
    let value: f64 = s[..idx].parse().ok()?;
    if !value.is_finite() {
        return None;
    }
    Some((value, s[idx..].trim()))
}

fn parse_with(s: &str, units: &[(&str, f64)], expected: &'static str) -> Result<f64, UnitError> {
    let err = || UnitError { input: s.to_string(), expected };
    let (value, suffix) = split_number(s).ok_or_else(err)?;
    let scale = units
        .iter()
        .find(|(u, _)| *u == suffix)
        .map(|(_, k)| *k)
        .ok_or_else(err)?;
    Ok(value * scale)
}

/// Duration with suffix `us`, `ms`, `s`, `min` or `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Dur(pub SimDuration);

impl FromStr for Dur {
    type Err = UnitError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let us = parse_with(
            s,
            &[("us", 1.0), ("ms", 1e3), ("s", 1e6), ("min", 60e6), ("h", 3600e6)],
            "us, ms, s, min, h",
        )?;
        if us < 0.0 {
            return Err(UnitError { input: s.to_string(), expected: "a non-negative duration" });
        }
        Ok(Dur(SimDuration(us.round() as u64)))
    }
}

impl fmt::Display for Dur {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let us = self.0.as_micros();
        if us.is_multiple_of(1_000_000) {
            write!(f, "{}s", us / 1_000_000)
        } else if us.is_multiple_of(1_000) {
            write!(f, "{}ms", us / 1_000)
        } else {
            write!(f, "{us}us")
        }
    }
}

/// Frequency in whole Hz, written with `Hz`, `kHz` or `MHz`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Freq(pub u64);

impl FromStr for Freq {
    type Err = UnitError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let hz = parse_with(s, &[("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6)], "Hz, kHz, MHz")?;
        if hz < 0.0 {
            return Err(UnitError { input: s.to_string(), expected: "a positive frequency" });
        }
        Ok(Freq(hz.round() as u64))
    }
}

impl fmt::Display for Freq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}MHz", self.0 as f64 / 1e6)
    }
}

/// Absolute power in dBm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Dbm(pub f64);

impl FromStr for Dbm {
    type Err = UnitError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_with(s, &[("dBm", 1.0)], "dBm").map(Dbm)
    }
}

impl fmt::Display for Dbm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}dBm", self.0)
    }
}

/// Power ratio in dB.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Db(pub f64);

impl FromStr for Db {
    type Err = UnitError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_with(s, &[("dB", 1.0)], "dB").map(Db)
    }
}

impl fmt::Display for Db {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}dB", self.0)
    }
}

/// Gas level: `%` (volume fraction for combustibles and O2) or `ppm` (CO).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Level {
    Percent(f64),
    Ppm(f64),
}

impl FromStr for Level {
    type Err = UnitError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || UnitError { input: s.to_string(), expected: "%, ppm" };
        let (value, suffix) = split_number(s).ok_or_else(err)?;
        match suffix {
            "%" => Ok(Level::Percent(value)),
            "ppm" => Ok(Level::Ppm(value)),
            _ => Err(err()),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Percent(v) => write!(f, "{v}%"),
            Level::Ppm(v) => write!(f, "{v}ppm"),
        }
    }
}

macro_rules! string_serde {
    ($($t:ty),*) => {$(
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                #[derive(Deserialize)]
                #[serde(untagged)]
                enum Raw {
                    Text(String),
                    Number(f64),
                }
                match Raw::deserialize(d)? {
                    Raw::Text(t) => t.parse().map_err(D::Error::custom),
                    Raw::Number(n) => Err(D::Error::custom(format!(
                        "bare number {n} is not allowed; add a unit suffix"
                    ))),
                }
            }
        }
    )*};
}

string_serde!(Dur, Freq, Dbm, Db, Level);
