use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use dcpsim::metrics::ReportFormat;
use dcpsim::phy::RadioParams;
use dcpsim::units::{Dur, Freq};
use dcpsim_cli::{
    cmd_airtime, cmd_analyze, cmd_run, cmd_validate, format_plr, parse_airtime_spec, render_report, AirtimeArgs,
    AnalyzeArgs, CliError, MethodChoice, RunOptions, ValidationSpec,
};

#[derive(Parser)]
#[command(name = "dcpsim", version, about = "LoRaWAN urgent-packet reliability simulator")]
struct Cli {
    /// Print nothing but errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Exact,
    Marginal,
    Approx,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ldro {
    Auto,
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its report.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Independent runs to pool, executed in parallel.
        #[arg(long, default_value_t = 1)]
        replications: u64,
    },
    /// Time on air of one LoRa frame.
    Airtime {
        #[arg(long)]
        sf: u8,
        #[arg(long, default_value = "125kHz")]
        bw: Freq,
        /// Coding rate denominator: 5 for 4/5 ... 8 for 4/8.
        #[arg(long, default_value_t = 5)]
        cr: u8,
        /// PHY payload in bytes.
        #[arg(long, default_value_t = 37)]
        payload: usize,
        #[arg(long, default_value_t = 8)]
        preamble: u16,
        #[arg(long)]
        implicit_header: bool,
        #[arg(long, value_enum, default_value = "auto")]
        ldro: Ldro,
    },
    /// Evaluate the renewal-process loss model.
    Analyze {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "70s")]
        period: Dur,
        #[arg(long, default_value = "50ms")]
        sigma: Dur,
        /// DCP airtime, fixed (`82.2ms`) or a distribution (`82ms:0.5,164ms:0.5`).
        #[arg(long)]
        tau: String,
        /// UP airtime, same syntax as --tau.
        #[arg(long)]
        d: String,
        #[arg(long, value_enum, default_value = "all")]
        method: Method,
    },
    /// Simulate a scenario and compare its UP loss with the analytic model.
    Validate {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Accept a relative gap up to this fraction even outside the CI.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Check UP PLR < 0.1% (for scenarios with a receive-only gateway).
        #[arg(long)]
        dual_gw: bool,
        /// Override every device's clock sigma.
        #[arg(long)]
        sigma: Option<Dur>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Run { scenario, seed, out, format, replications } => {
            let started = Instant::now();
            let opts = RunOptions { seed, replications, format: format.into(), out: out.clone() };
            let report = cmd_run(&scenario, &opts)?;
            if out.is_none() && !quiet {
                print!("{}", render_report(&report, opts.format));
            }
            if !quiet {
                if let Some(p) = report.up_plr() {
                    eprintln!(
                        "UP PLR {:.4}% [{:.4}%, {:.4}%] in {:.2?}",
                        p.estimate * 100.0,
                        p.ci95_low * 100.0,
                        p.ci95_high * 100.0,
                        started.elapsed()
                    );
                }
            }
        }
        Command::Airtime { sf, bw, cr, payload, preamble, implicit_header, ldro } => {
            if !(5..=8).contains(&cr) {
                return Err(CliError::Usage(format!("--cr {cr}: use 5, 6, 7 or 8 for 4/5 ... 4/8")));
            }
            let bw_hz = u32::try_from(bw.0).map_err(|_| CliError::Usage(format!("bandwidth {bw} too large")))?;
            let params = RadioParams {
                sf,
                bw_hz,
                cr: cr - 4,
                preamble_symbols: preamble,
                explicit_header: !implicit_header,
                low_data_rate_opt: match ldro {
                    Ldro::Auto => None,
                    Ldro::On => Some(true),
                    Ldro::Off => Some(false),
                },
            };
            let text = cmd_airtime(&AirtimeArgs { params, payload_bytes: payload })?;
            if !quiet {
                print!("{text}");
            }
        }
        Command::Analyze { n, period, sigma, tau, d, method } => {
            let args = AnalyzeArgs {
                n,
                period_s: period.0.as_secs_f64(),
                sigma_s: sigma.0.as_secs_f64(),
                tau: parse_airtime_spec(&tau)?,
                d: parse_airtime_spec(&d)?,
                method: match method {
                    Method::Exact => MethodChoice::Exact,
                    Method::Marginal => MethodChoice::Marginal,
                    Method::Approx => MethodChoice::Approx,
                    Method::All => MethodChoice::All,
                },
            };
            for r in cmd_analyze(&args)? {
                if !quiet {
                    println!("{}", format_plr(&r));
                }
            }
        }
        Command::Validate { scenario, seed, tolerance, dual_gw, sigma } => {
            if tolerance.is_some_and(|t| t.is_nan() || t <= 0.0) {
                return Err(CliError::Usage("--tolerance must be positive".into()));
            }
            let spec = ValidationSpec { scenario, rel_tolerance: tolerance, dual_gw, seed, sigma_override: sigma };
            let outcome = cmd_validate(&spec)?;
            if !quiet {
                println!("{}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.summary);
            }
            if !outcome.pass {
                return Err(CliError::ValidationFailed(outcome.summary));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
