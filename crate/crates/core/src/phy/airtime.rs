use serde::{Deserialize, Serialize};

use super::PhyError;
use crate::time::SimDuration;

/// LoRa modulation settings of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub sf: u8,
    pub bw_hz: u32,
    /// Coding-rate index: 1 => 4/5 ... 4 => 4/8.
    pub cr: u8,
    pub preamble_symbols: u16,
    pub explicit_header: bool,
    /// `None` selects the standard rule: enabled iff the symbol time exceeds 16 ms.
    pub low_data_rate_opt: Option<bool>,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            sf: 7,
            bw_hz: 125_000,
            cr: 1,
            preamble_symbols: 8,
            explicit_header: true,
            low_data_rate_opt: None,
        }
    }
}

impl RadioParams {
    pub fn with_sf(sf: u8) -> Self {
        RadioParams { sf, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), PhyError> {
        if !(7..=12).contains(&self.sf) {
            return Err(PhyError::InvalidSpreadingFactor(self.sf));
        }
        if !matches!(self.bw_hz, 125_000 | 250_000 | 500_000) {
            return Err(PhyError::InvalidBandwidth(self.bw_hz));
        }
        if !(1..=4).contains(&self.cr) {
            return Err(PhyError::InvalidCodingRate(self.cr));
        }
        Ok(())
    }

    pub fn symbol_time_s(&self) -> f64 {
        (1u64 << self.sf) as f64 / self.bw_hz as f64
    }

    pub fn ldro_enabled(&self) -> bool {
        self.low_data_rate_opt
            .unwrap_or_else(|| self.symbol_time_s() > 0.016)
    }
}

/// Time-on-air with the intermediate quantities of the computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AirtimeBreakdown {
    pub symbol_time_s: f64,
    pub preamble_symbols: f64,
    pub payload_symbols: u32,
    pub preamble_s: f64,
    pub payload_s: f64,
    pub ldro: bool,
    pub total: SimDuration,
}

impl AirtimeBreakdown {
    pub fn total_ms(&self) -> f64 {
        self.total.as_millis_f64()
    }
}

pub fn airtime_breakdown(params: &RadioParams, phy_payload_len: usize) -> Result<AirtimeBreakdown, PhyError> {
    params.validate()?;
    let sf = params.sf as i64;
    let t_sym = params.symbol_time_s();
    let de = params.ldro_enabled() as i64;
    let ih = (!params.explicit_header) as i64;
    // CRC is always on for uplinks, hence the constant 16.
    let num = 8 * phy_payload_len as i64 - 4 * sf + 28 + 16 - 20 * ih;
    let den = 4 * (sf - 2 * de);
    let blocks = if num > 0 { (num + den - 1) / den } else { 0 };
    let payload_symbols = 8 + (blocks * (params.cr as i64 + 4)) as u32;
    let preamble_symbols = params.preamble_symbols as f64 + 4.25;
    let preamble_s = preamble_symbols * t_sym;
    let payload_s = payload_symbols as f64 * t_sym;
    Ok(AirtimeBreakdown {
        symbol_time_s: t_sym,
        preamble_symbols,
        payload_symbols,
        preamble_s,
        payload_s,
        ldro: de == 1,
        total: SimDuration::from_secs_f64(preamble_s + payload_s),
    })
}

/// Time-on-air of a frame with `phy_payload_len` bytes of PHY payload.
pub fn airtime(params: &RadioParams, phy_payload_len: usize) -> Result<SimDuration, PhyError> {
    airtime_breakdown(params, phy_payload_len).map(|b| b.total)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand evaluation of the symbol count, kept independent of `airtime_breakdown`.
    fn oracle_ms(sf: u32, len: u32, ldro: bool) -> f64 {
        let t_sym_ms = (1u32 << sf) as f64 / 125.0;
        let de = if ldro { 1.0 } else { 0.0 };
        let raw = (8.0 * len as f64 - 4.0 * sf as f64 + 28.0 + 16.0) / (4.0 * (sf as f64 - 2.0 * de));
        let n_payload = 8.0 + (raw.ceil().max(0.0)) * 5.0;
        (12.25 + n_payload) * t_sym_ms
    }

    #[test]
    fn sf9_37_bytes() {
        let t = airtime(&RadioParams::with_sf(9), 37).unwrap();
        assert_eq!(t.as_micros(), 267_264);
        assert!((oracle_ms(9, 37, false) - 267.264).abs() < 1e-9);
    }

    #[test]
    fn sf7_empty_payload() {
        let t = airtime(&RadioParams::with_sf(7), 0).unwrap();
        assert_eq!(t.as_micros(), 25_856);
        assert!((oracle_ms(7, 0, false) - 25.856).abs() < 1e-9);
    }

    #[test]
    fn sf7_37_bytes_matches_dcp_duration() {
        let t = airtime(&RadioParams::with_sf(7), 37).unwrap();
        assert!((oracle_ms(7, 37, false) - 82.176).abs() < 1e-9);
        assert_eq!(t.as_micros(), 82_176);
    }

    #[test]
    fn sf10_37_bytes() {
        let t = airtime(&RadioParams::with_sf(10), 37).unwrap();
        assert_eq!(t.as_micros(), 493_568);
    }

    #[test]
    fn ldro_auto_rule() {
        assert!(!RadioParams::with_sf(10).ldro_enabled());
        assert!(RadioParams::with_sf(11).ldro_enabled());
        assert!(RadioParams::with_sf(12).ldro_enabled());
        let b = airtime_breakdown(&RadioParams::with_sf(12), 37).unwrap();
        assert!(b.ldro);
        assert!((b.total_ms() - oracle_ms(12, 37, true)).abs() < 1e-3);
    }

    #[test]
    fn budget_split_between_sf10_and_sf11() {
        for sf in 7..=10 {
            assert!(airtime(&RadioParams::with_sf(sf), 37).unwrap() <= SimDuration::from_millis(500));
        }
        for sf in 11..=12 {
            assert!(airtime(&RadioParams::with_sf(sf), 37).unwrap() > SimDuration::from_millis(500));
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert_eq!(
            airtime(&RadioParams::with_sf(6), 10),
            Err(PhyError::InvalidSpreadingFactor(6))
        );
        let p = RadioParams { bw_hz: 200_000, ..Default::default() };
        assert_eq!(airtime(&p, 10), Err(PhyError::InvalidBandwidth(200_000)));
        let p = RadioParams { cr: 5, ..Default::default() };
        assert_eq!(airtime(&p, 10), Err(PhyError::InvalidCodingRate(5)));
    }

    #[test]
    fn implicit_header_is_shorter_or_equal() {
        let p = RadioParams { explicit_header: false, ..RadioParams::with_sf(8) };
        assert!(airtime(&p, 37).unwrap() <= airtime(&RadioParams::with_sf(8), 37).unwrap());
    }
}
