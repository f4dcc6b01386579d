//! Subcommands of the `dcpsim` binary, usable as library calls.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use dcpsim::analytic::{plr_approx, plr_exact_fixed, plr_marginal, AnalyticError, PlrModelParams, PlrResult};
use dcpsim::gateway::GatewayRole;
use dcpsim::metrics::{emit_report, PlrEstimate, ReportFormat, RunReport};
use dcpsim::phy::{airtime, airtime_breakdown, PhyError, RadioParams, UP_PHY_PAYLOAD_BYTES};
use dcpsim::rng::replication_seed;
use dcpsim::scenario::{ResolvedScenario, ScenarioConfig, ScenarioError};
use dcpsim::sim::{build_report, simulate};
use dcpsim::units::Dur;

/// UP latency budget.
pub const LATENCY_BUDGET_MS: f64 = 500.0;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
    #[error("validation failed: {0}")]
    ValidationFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::ValidationFailed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Parse(_) => 3,
            CliError::Invalid(_) => 4,
            CliError::Runtime(_) => 5,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => CliError::Runtime(e.to_string()),
            ScenarioError::Parse(_) => CliError::Parse(e.to_string()),
            ScenarioError::Invalid { .. } => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<AnalyticError> for CliError {
    fn from(e: AnalyticError) -> Self {
        match e {
            AnalyticError::OutOfRegime { .. } => CliError::Invalid(format!("out of regime: {e}")),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<PhyError> for CliError {
    fn from(e: PhyError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

pub fn load_scenario(path: &Path) -> Result<(ScenarioConfig, ResolvedScenario), CliError> {
    let cfg = ScenarioConfig::from_path(path).map_err(|e| match e {
        ScenarioError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
        other => other.into(),
    })?;
    let sc = cfg.resolve()?;
    Ok((cfg, sc))
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub replications: u64,
    pub format: ReportFormat,
    pub out: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { seed: None, replications: 1, format: ReportFormat::Json, out: None }
    }
}

/// Runs `R` replications (in parallel) and folds them into one report.
/// Replication `i` uses a seed derived from the base seed; replication 0
/// uses the base seed itself.
pub fn run_config(cfg: &ScenarioConfig, sc: &ResolvedScenario, seed: u64, replications: u64) -> Result<RunReport, CliError> {
    if replications == 0 {
        return Err(CliError::Usage("--replications must be at least 1".into()));
    }
    let runs = (0..replications)
        .into_par_iter()
        .map(|i| simulate(sc, replication_seed(seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(build_report(cfg, sc, seed, &runs))
}

pub fn render_report(report: &RunReport, format: ReportFormat) -> String {
    let mut buf = Vec::new();
    emit_report(report, format, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("reports are UTF-8")
}

pub fn write_report(report: &RunReport, format: ReportFormat, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, render_report(report, format))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_run(scenario: &Path, opts: &RunOptions) -> Result<RunReport, CliError> {
    let (cfg, sc) = load_scenario(scenario)?;
    let seed = opts.seed.unwrap_or(sc.seed);
    let report = run_config(&cfg, &sc, seed, opts.replications)?;
    if let Some(out) = &opts.out {
        write_report(&report, opts.format, out)?;
    } else {
        let base = scenario.parent().unwrap_or(Path::new("."));
        if let Some(p) = &cfg.output.json {
            write_report(&report, ReportFormat::Json, &base.join(p))?;
        }
        if let Some(p) = &cfg.output.csv {
            write_report(&report, ReportFormat::Csv, &base.join(p))?;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct AirtimeArgs {
    pub params: RadioParams,
    pub payload_bytes: usize,
}

pub fn cmd_airtime(args: &AirtimeArgs) -> Result<String, CliError> {
    let b = airtime_breakdown(&args.params, args.payload_bytes)?;
    let ms = b.total_ms();
    let mut s = String::new();
    let p = &args.params;
    writeln!(
        s,
        "SF{} BW {} kHz CR 4/{} payload {} B: {:.3} ms",
        p.sf,
        p.bw_hz / 1000,
        p.cr + 4,
        args.payload_bytes,
        ms
    )
    .unwrap();
    writeln!(s, "  symbol time      {:.3} ms", b.symbol_time_s * 1e3).unwrap();
    writeln!(s, "  preamble         {} symbols, {:.3} ms", b.preamble_symbols, b.preamble_s * 1e3).unwrap();
    writeln!(s, "  payload          {} symbols, {:.3} ms", b.payload_symbols, b.payload_s * 1e3).unwrap();
    writeln!(s, "  low data rate    {}", if b.ldro { "on" } else { "off" }).unwrap();
    if ms > LATENCY_BUDGET_MS {
        writeln!(s, "  exceeds UP latency budget ({LATENCY_BUDGET_MS:.0} ms)").unwrap();
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    Exact,
    Marginal,
    Approx,
    All,
}

#[derive(Debug, Clone)]
pub struct AnalyzeArgs {
    pub n: usize,
    pub period_s: f64,
    pub sigma_s: f64,
    pub tau: Vec<(f64, f64)>,
    pub d: Vec<(f64, f64)>,
    pub method: MethodChoice,
}

/// Parses `82.2ms` or a distribution `82.176ms:0.7,164.352ms:0.3` into
/// `(seconds, probability)` pairs.
pub fn parse_airtime_spec(text: &str) -> Result<Vec<(f64, f64)>, CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if parts.is_empty() {
        return Err(CliError::Usage(format!("empty airtime spec `{text}`")));
    }
    let single = parts.len() == 1 && !parts[0].contains(':');
    parts
        .iter()
        .map(|p| {
            let (v, w) = match p.split_once(':') {
                Some((v, w)) => {
                    let w: f64 = w.parse().map_err(|_| CliError::Usage(format!("bad probability in `{p}`")))?;
                    (v, w)
                }
                None if single => (*p, 1.0),
                None => return Err(CliError::Usage(format!("`{p}` needs a `:probability` suffix"))),
            };
            let d: Dur = v.parse().map_err(|e: dcpsim::units::UnitError| CliError::Usage(e.to_string()))?;
            Ok((d.0.as_secs_f64(), w))
        })
        .collect()
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Vec<PlrResult>, CliError> {
    let params = PlrModelParams {
        n: args.n,
        period_s: args.period_s,
        sigma_s: args.sigma_s,
        tau_dist: args.tau.clone(),
        d_dist: args.d.clone(),
    };
    params.validate()?;
    let exact = || -> Result<PlrResult, CliError> {
        match (args.tau.as_slice(), args.d.as_slice()) {
            ([(tau, _)], [(d, _)]) => Ok(plr_exact_fixed(&vec![*tau; args.n], *d, args.period_s, args.sigma_s)?),
            _ => Err(CliError::Usage("method exact needs a single tau and D; use marginal for distributions".into())),
        }
    };
    let approx = || plr_approx(args.n, params.mean_tau(), params.mean_d(), args.period_s).map_err(CliError::from);
    Ok(match args.method {
        MethodChoice::Exact => vec![exact()?],
        MethodChoice::Marginal => vec![plr_marginal(&params)?],
        MethodChoice::Approx => vec![approx()?],
        MethodChoice::All => {
            let mut v = Vec::new();
            if args.tau.len() == 1 && args.d.len() == 1 {
                v.push(exact()?);
            }
            v.push(plr_marginal(&params)?);
            v.push(approx()?);
            v
        }
    })
}

pub fn format_plr(r: &PlrResult) -> String {
    format!(
        "{:<12} P_C = {:.6}  PLR = {:.4}%  guard {}",
        r.method.as_str(),
        r.p_collision_free,
        r.plr * 100.0,
        if r.within_guard { "ok" } else { "violated" }
    )
}

#[derive(Debug, Clone)]
pub struct ValidationSpec {
    pub scenario: PathBuf,
    /// Also pass when `|sim - analytic| / analytic` is at most this.
    pub rel_tolerance: Option<f64>,
    /// Compare against the sub-0.1% target instead of the analytic model,
    /// for scenarios with a receive-only gateway.
    pub dual_gw: bool,
    pub seed: Option<u64>,
    pub sigma_override: Option<Dur>,
}

#[derive(Debug, Clone)]
pub struct ValidationOutcome {
    pub simulated: PlrEstimate,
    pub analytic: Option<PlrResult>,
    pub pass: bool,
    pub summary: String,
}

/// The loss model's inputs as implied by a scenario: one DCP stream per
/// RP-sending device (airtime of the DCP at that device's RP SF, since RX1
/// mirrors the uplink) against one UP sender.
pub fn analytic_inputs(sc: &ResolvedScenario) -> Result<(Vec<f64>, f64, f64, f64), CliError> {
    let senders: Vec<usize> = (0..sc.devices.len()).filter(|&i| sc.up_senders[i]).collect();
    let [sender] = senders.as_slice() else {
        return Err(CliError::Invalid(format!(
            "the analytic model needs exactly one UP-sending device, found {}",
            senders.len()
        )));
    };
    let rp_devices: Vec<usize> = (0..sc.devices.len()).filter(|&i| sc.send_rps[i]).collect();
    if rp_devices.is_empty() {
        return Err(CliError::Invalid("the analytic model needs DCP traffic, but no device sends RPs".into()));
    }
    let first = &sc.devices[rp_devices[0]];
    if rp_devices
        .iter()
        .any(|&i| sc.devices[i].rp_period != first.rp_period || sc.devices[i].clock_sigma != first.clock_sigma)
    {
        return Err(CliError::Invalid("the analytic model needs one RP period and clock sigma for all devices".into()));
    }
    let taus = rp_devices
        .iter()
        .map(|&i| airtime(&RadioParams::with_sf(sc.devices[i].rp_sf), sc.dcp_phy_payload).map(|a| a.as_secs_f64()))
        .collect::<Result<Vec<_>, _>>()?;
    let sf = sc.devices[*sender]
        .initial_assignment
        .map(|a| a.sf)
        .ok_or_else(|| CliError::Invalid("the UP sender needs a configured initial assignment".into()))?;
    let d = airtime(&RadioParams::with_sf(sf), UP_PHY_PAYLOAD_BYTES)?.as_secs_f64();
    Ok((taus, d, first.rp_period.as_secs_f64(), first.clock_sigma.as_secs_f64()))
}

pub fn cmd_validate(spec: &ValidationSpec) -> Result<ValidationOutcome, CliError> {
    let (mut cfg, _) = load_scenario(&spec.scenario)?;
    if let Some(s) = spec.sigma_override {
        cfg.defaults.clock_sigma = Some(s);
        for d in &mut cfg.devices {
            d.overrides.clock_sigma = None;
        }
    }
    let sc = cfg.resolve()?;
    let has_rx_only = sc.gateways.iter().any(|g| g.role == GatewayRole::RxOnly);
    if has_rx_only && !spec.dual_gw {
        return Err(CliError::Invalid(
            "the scenario has a receive-only gateway, which the analytic model does not cover; \
             pass --dual-gw to check UP PLR < 0.1% instead"
                .into(),
        ));
    }
    let analytic = if spec.dual_gw {
        None
    } else {
        let (taus, d, t, sigma) = analytic_inputs(&sc)?;
        Some(plr_exact_fixed(&taus, d, t, sigma)?)
    };
    let seed = spec.seed.unwrap_or(sc.seed);
    let report = run_config(&cfg, &sc, seed, 1)?;
    let simulated = report.up_plr().ok_or_else(|| CliError::Runtime("the run generated no UPs".into()))?;
    let (pass, summary) = match analytic {
        None => {
            let pass = simulated.estimate < 0.001;
            (
                pass,
                format!(
                    "simulated UP PLR {:.4}% (CI {:.4}%..{:.4}%) against target < 0.1%",
                    simulated.estimate * 100.0,
                    simulated.ci95_low * 100.0,
                    simulated.ci95_high * 100.0
                ),
            )
        }
        Some(a) => {
            let in_ci = simulated.contains(a.plr);
            let rel = (simulated.estimate - a.plr).abs() / a.plr;
            let in_tol = spec.rel_tolerance.is_some_and(|t| rel <= t);
            (
                in_ci || in_tol,
                format!(
                    "simulated UP PLR {:.4}% (CI {:.4}%..{:.4}%), analytic {:.4}%, relative gap {:.2}%{}",
                    simulated.estimate * 100.0,
                    simulated.ci95_low * 100.0,
                    simulated.ci95_high * 100.0,
                    a.plr * 100.0,
                    rel * 100.0,
                    if in_ci { ", analytic inside CI" } else { "" }
                ),
            )
        }
    };
    Ok(ValidationOutcome { simulated, analytic, pass, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn airtime_spec_forms() {
        assert_eq!(parse_airtime_spec("82.2ms").unwrap(), vec![(0.0822, 1.0)]);
        let d = parse_airtime_spec("82.176ms:0.5, 1s:0.5").unwrap();
        assert_eq!(d.len(), 2);
        assert!((d[1].0 - 1.0).abs() < 1e-12);
        assert!(parse_airtime_spec("82.2").is_err());
        assert!(parse_airtime_spec("82ms,90ms").is_err());
    }

    #[test]
    fn airtime_text() {
        let out = cmd_airtime(&AirtimeArgs { params: RadioParams::with_sf(9), payload_bytes: 37 }).unwrap();
        assert!(out.contains("267.264 ms"), "{out}");
        assert!(!out.contains("exceeds"));
        let out = cmd_airtime(&AirtimeArgs { params: RadioParams::with_sf(12), payload_bytes: 37 }).unwrap();
        assert!(out.contains("exceeds UP latency budget"), "{out}");
        assert!(cmd_airtime(&AirtimeArgs { params: RadioParams::with_sf(13), payload_bytes: 37 }).is_err());
    }

    #[test]
    fn analyze_zero_devices() {
        for method in [MethodChoice::Exact, MethodChoice::Marginal, MethodChoice::Approx] {
            let r = cmd_analyze(&AnalyzeArgs {
                n: 0,
                period_s: 70.0,
                sigma_s: 0.05,
                tau: vec![(0.0822, 1.0)],
                d: vec![(0.2673, 1.0)],
                method,
            })
            .unwrap();
            assert_eq!(r[0].plr, 0.0);
        }
    }

    #[test]
    fn analyze_out_of_regime() {
        let err = cmd_analyze(&AnalyzeArgs {
            n: 2,
            period_s: 1.0,
            sigma_s: 0.2,
            tau: vec![(0.1, 1.0)],
            d: vec![(0.3, 1.0)],
            method: MethodChoice::Exact,
        })
        .unwrap_err();
        assert!(err.to_string().contains("out of regime"), "{err}");
        assert_eq!(err.exit_code(), 4);
    }
}
