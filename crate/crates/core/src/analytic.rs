//! Renewal-process model of UP losses caused by gateway downlinks.
//!
//! DCP start times of each device form a renewal process with Gaussian
//! interarrival `r ~ N(T, sigma)`. An UP of duration `D` is lost when any DCP
//! of duration `tau` starts within the `tau + D` span around it; the stationary
//! residual-time density `w(x) = (1 - F_r(x)) / T` turns that into a
//! per-device collision probability, and independence across devices into a
//! product.

use serde::Serialize;
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("period T must be positive, got {0}")]
    NonPositivePeriod(f64),
    #[error("sigma must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("airtimes must be positive, got {0}")]
    NonPositiveAirtime(f64),
    #[error("{which} probabilities sum to {sum}, not 1")]
    BadDistribution { which: &'static str, sum: f64 },
    #[error("{which} distribution is empty")]
    EmptyDistribution { which: &'static str },
    #[error(
        "out of regime: tau + D = {span} s must stay below T - 5 sigma = {limit} s for the stationary residual density"
    )]
    OutOfRegime { span: f64, limit: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactFixed,
    Marginal,
    Approx,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ExactFixed => "exact-fixed",
            Method::Marginal => "marginal",
            Method::Approx => "approx",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlrResult {
    pub p_collision_free: f64,
    /// `1 - p_collision_free`, except for [`Method::Approx`] where it is the
    /// first-order value `N (E[tau] + E[D]) / T` (capped at 1).
    pub plr: f64,
    pub method: Method,
    /// Whether every `tau + D` satisfied `tau + D < T - 5 sigma`.
    pub within_guard: bool,
}

/// Discrete distribution over airtimes in seconds: `(airtime, probability)`.
pub type AirtimeDist = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlrModelParams {
    pub n: usize,
    pub period_s: f64,
    pub sigma_s: f64,
    pub tau_dist: AirtimeDist,
    pub d_dist: AirtimeDist,
}

impl PlrModelParams {
    pub fn validate(&self) -> Result<(), AnalyticError> {
        check_period_sigma(self.period_s, self.sigma_s)?;
        for (which, dist) in [("tau", &self.tau_dist), ("D", &self.d_dist)] {
            if dist.is_empty() {
                return Err(AnalyticError::EmptyDistribution { which });
            }
            let mut sum = 0.0;
            for &(a, p) in dist.iter() {
                if !(a > 0.0) {
                    return Err(AnalyticError::NonPositiveAirtime(a));
                }
                if !(0.0..=1.0).contains(&p) {
                    return Err(AnalyticError::BadDistribution { which, sum: p });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(AnalyticError::BadDistribution { which, sum });
            }
        }
        Ok(())
    }

    pub fn mean_tau(&self) -> f64 {
        mean(&self.tau_dist)
    }

    pub fn mean_d(&self) -> f64 {
        mean(&self.d_dist)
    }
}

fn mean(dist: &[(f64, f64)]) -> f64 {
    dist.iter().map(|(a, p)| a * p).sum()
}

fn check_period_sigma(period: f64, sigma: f64) -> Result<(), AnalyticError> {
    if !(period > 0.0) {
        return Err(AnalyticError::NonPositivePeriod(period));
    }
    if !(sigma >= 0.0) {
        return Err(AnalyticError::NegativeSigma(sigma));
    }
    Ok(())
}

fn guard(span: f64, period: f64, sigma: f64) -> Result<(), AnalyticError> {
    let limit = period - 5.0 * sigma;
    if span < limit {
        Ok(())
    } else {
        Err(AnalyticError::OutOfRegime { span, limit })
    }
}

/// `1 - F_r(x)` for `r ~ N(T, sigma)`.
pub fn survival_fn(x: f64, period: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return if x < period { 1.0 } else if x > period { 0.0 } else { 0.5 };
    }
    0.5 * erfc((x - period) / (sigma * std::f64::consts::SQRT_2))
}

/// Stationary density of the time to the next DCP.
pub fn residual_density(x: f64, period: f64, sigma: f64) -> f64 {
    survival_fn(x, period, sigma) / period
}

/// `int_0^upper (1 - F_r(x)) dx`, by adaptive Gauss-Kronrod quadrature.
pub fn integrated_survival(upper: f64, period: f64, sigma: f64) -> f64 {
    if upper <= 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return upper.min(period);
    }
    // the integrand is 1 up to many sigmas below T: split there so the
    // quadrature only works on the transition region
    let flat_end = (period - 40.0 * sigma).clamp(0.0, upper);
    flat_end + gauss_kronrod(|x| survival_fn(x, period, sigma), flat_end, upper, 1e-10)
}

fn collision_free_factor(span: f64, period: f64, sigma: f64) -> f64 {
    1.0 - integrated_survival(span, period, sigma) / period
}

/// Collision-free probability for fixed per-device DCP airtimes.
pub fn plr_exact_fixed(taus: &[f64], d: f64, period: f64, sigma: f64) -> Result<PlrResult, AnalyticError> {
    check_period_sigma(period, sigma)?;
    if !(d > 0.0) {
        return Err(AnalyticError::NonPositiveAirtime(d));
    }
    let mut p = 1.0;
    for &tau in taus {
        if !(tau > 0.0) {
            return Err(AnalyticError::NonPositiveAirtime(tau));
        }
        guard(tau + d, period, sigma)?;
        let f = collision_free_factor(tau + d, period, sigma);
        if f <= 0.0 {
            return Err(AnalyticError::OutOfRegime { span: tau + d, limit: period });
        }
        p *= f;
    }
    Ok(PlrResult {
        p_collision_free: p,
        plr: 1.0 - p,
        method: Method::ExactFixed,
        within_guard: true,
    })
}

/// Collision-free probability with IID DCP airtimes drawn from `tau_dist`
/// and the UP airtime drawn from `d_dist`.
pub fn plr_marginal(params: &PlrModelParams) -> Result<PlrResult, AnalyticError> {
    params.validate()?;
    let mut avg = 0.0;
    for &(tau, p_tau) in &params.tau_dist {
        for &(d, p_d) in &params.d_dist {
            guard(tau + d, params.period_s, params.sigma_s)?;
            let f = collision_free_factor(tau + d, params.period_s, params.sigma_s);
            if f <= 0.0 {
                return Err(AnalyticError::OutOfRegime { span: tau + d, limit: params.period_s });
            }
            avg += p_tau * p_d * f;
        }
    }
    let p = avg.powi(params.n as i32);
    Ok(PlrResult {
        p_collision_free: p,
        plr: 1.0 - p,
        method: Method::Marginal,
        within_guard: true,
    })
}

/// Small-loss approximation: `PLR ~ N (E[tau] + E[D]) / T`.
pub fn plr_approx(n: usize, mean_tau: f64, mean_d: f64, period: f64) -> Result<PlrResult, AnalyticError> {
    if !(period > 0.0) {
        return Err(AnalyticError::NonPositivePeriod(period));
    }
    let x = (mean_tau + mean_d) / period;
    Ok(PlrResult {
        p_collision_free: (1.0 - x).max(0.0).powi(n as i32),
        plr: (n as f64 * x).min(1.0),
        method: Method::Approx,
        within_guard: mean_tau + mean_d < period,
    })
}

/// Guard status for reporting without failing.
pub fn within_guard(span: f64, period: f64, sigma: f64) -> bool {
    guard(span, period, sigma).is_ok()
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive 7/15-point Gauss-Kronrod with a global absolute tolerance.
pub fn gauss_kronrod<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let width = b - a;
    let mut total = 0.0;
    let mut stack = vec![(a, b, 0u32)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let (value, err) = gk15(&f, lo, hi);
        let allowed = abs_tol * (hi - lo) / width;
        if err <= allowed || depth >= 60 {
            total += value;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};

    /// Closed form of `int_0^a (1 - Phi((x - T)/s)) dx`, used as the quadrature oracle.
    fn oracle_integral(a: f64, t: f64, s: f64) -> f64 {
        let n = Normal::new(0.0, 1.0).unwrap();
        let g = |x: f64| {
            let z = (x - t) / s;
            (x - t) * n.cdf(z) + s * n.pdf(z)
        };
        a - (g(a) - g(0.0))
    }

    #[test]
    fn residual_density_edges() {
        assert!((residual_density(0.0, 70.0, 0.05) - 1.0 / 70.0).abs() < 1e-15);
        assert_eq!(residual_density(10.0, 70.0, 0.0), 1.0 / 70.0);
        assert_eq!(residual_density(71.0, 70.0, 0.0), 0.0);
    }

    #[test]
    fn residual_density_integrates_to_mean_over_t() {
        for &(t, s) in &[(70.0, 0.05), (70.0, 5.0), (10.0, 1.0)] {
            let total = gauss_kronrod(|x| residual_density(x, t, s), 0.0, t + 12.0 * s, 1e-12);
            // E[r]/T = 1 up to the mass of r below zero, negligible here
            assert!((total - 1.0).abs() < 1e-9, "T={t} s={s}: {total}");
        }
    }

    #[test]
    fn quadrature_matches_closed_form() {
        for &(a, t, s) in &[(0.35, 70.0, 0.05), (69.9, 70.0, 0.05), (70.2, 70.0, 0.5), (75.0, 70.0, 2.0), (3.0, 4.0, 0.3)] {
            let q = integrated_survival(a, t, s);
            let o = oracle_integral(a, t, s);
            assert!((q - o).abs() < 1e-9, "a={a} T={t} s={s}: {q} vs {o}");
        }
    }

    #[test]
    fn sigma_zero_inner_integral_is_span() {
        assert_eq!(integrated_survival(0.3495, 70.0, 0.0), 0.3495);
        let q = integrated_survival(0.3495, 70.0, 1e-3);
        assert!((q - 0.3495).abs() < 1e-10);
    }

    #[test]
    fn empty_product() {
        let r = plr_exact_fixed(&[], 0.2673, 70.0, 0.05).unwrap();
        assert_eq!(r.p_collision_free, 1.0);
        assert_eq!(r.plr, 0.0);
        assert_eq!(plr_approx(0, 0.0822, 0.2673, 70.0).unwrap().plr, 0.0);
    }

    #[test]
    fn sigma_zero_closed_form() {
        let r = plr_exact_fixed(&[0.0822; 8], 0.2673, 70.0, 0.0).unwrap();
        let expect = (1.0 - 0.3495f64 / 70.0).powi(8);
        assert!((r.p_collision_free - expect).abs() < 1e-10);
    }

    #[test]
    fn eight_devices_example() {
        let r = plr_exact_fixed(&[0.0822; 8], 0.2673, 70.0, 0.05).unwrap();
        // 1 - (1 - 0.3495/70)^8
        assert!((r.plr - 0.039252).abs() < 1e-5, "{}", r.plr);
        let a = plr_approx(8, 0.0822, 0.2673, 70.0).unwrap();
        assert!((a.plr - 0.039943).abs() < 1e-6);
        assert!((a.plr - r.plr).abs() / a.plr < 0.02);
    }

    #[test]
    fn marginal_with_point_masses_equals_exact() {
        let params = PlrModelParams {
            n: 8,
            period_s: 70.0,
            sigma_s: 0.05,
            tau_dist: vec![(0.0822, 1.0)],
            d_dist: vec![(0.2673, 1.0)],
        };
        let m = plr_marginal(&params).unwrap();
        let e = plr_exact_fixed(&[0.0822; 8], 0.2673, 70.0, 0.05).unwrap();
        assert!((m.plr - e.plr).abs() < 1e-6);
    }

    #[test]
    fn mixture_lies_between_components() {
        let base = |d: AirtimeDist| PlrModelParams {
            n: 8,
            period_s: 70.0,
            sigma_s: 0.05,
            tau_dist: vec![(0.082176, 1.0)],
            d_dist: d,
        };
        let sf8 = plr_marginal(&base(vec![(0.144384, 1.0)])).unwrap().plr;
        let sf9 = plr_marginal(&base(vec![(0.267264, 1.0)])).unwrap().plr;
        let mix = plr_marginal(&base(vec![(0.144384, 0.5), (0.267264, 0.5)])).unwrap().plr;
        assert!(sf8 < mix && mix < sf9);
    }

    #[test]
    fn guard_rejects_long_spans() {
        assert!(matches!(
            plr_exact_fixed(&[1.0], 1.0, 2.5, 0.2),
            Err(AnalyticError::OutOfRegime { .. })
        ));
        assert!(!plr_approx(1, 2.0, 1.0, 2.5).unwrap().within_guard);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = PlrModelParams {
            n: 1,
            period_s: 70.0,
            sigma_s: 0.0,
            tau_dist: vec![(0.08, 0.5), (0.1, 0.4)],
            d_dist: vec![(0.2, 1.0)],
        };
        assert!(matches!(plr_marginal(&p), Err(AnalyticError::BadDistribution { .. })));
        assert!(plr_exact_fixed(&[0.08], 0.2, 0.0, 0.0).is_err());
        assert!(plr_exact_fixed(&[0.08], 0.2, 70.0, -1.0).is_err());
    }
}
