use std::path::Path;

use dcpsim::metrics::{ReportFormat, RunReport};
use dcpsim::phy::PacketKind;
use dcpsim::scenario::ScenarioConfig;
use dcpsim_cli::{render_report, run_config};

fn root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

fn shortened(name: &str, ups: u64) -> ScenarioConfig {
    let text = std::fs::read_to_string(root().join("scenarios").join(name)).unwrap();
    let mut cfg = ScenarioConfig::from_toml(&text).unwrap();
    cfg.run.target_ups = Some(ups);
    cfg
}

fn report(cfg: &ScenarioConfig, replications: u64) -> RunReport {
    let sc = cfg.resolve().unwrap();
    run_config(cfg, &sc, sc.seed, replications).unwrap()
}

fn schema() -> jsonschema::Validator {
    let text = std::fs::read_to_string(root().join("docs/report-schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

#[test]
fn reports_match_published_schema_and_round_trip() {
    let validator = schema();
    let mut quiet = shortened("test2_dl_priority.toml", 50);
    quiet.clusters[0].events = None;
    quiet.run.target_ups = None;
    quiet.run.duration = Some("1h".parse().unwrap());
    for (cfg, reps) in [
        (shortened("test2_dl_priority.toml", 500), 1),
        (shortened("test3_dual_gw.toml", 300), 3),
        (shortened("test1_sf_pairs.toml", 2000), 1),
        (quiet, 1),
    ] {
        let r = report(&cfg, reps);
        let json = render_report(&r, ReportFormat::Json);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let errors: Vec<String> = validator.iter_errors(&value).map(|e| format!("{} at {}", e, e.instance_path())).collect();
        assert!(errors.is_empty(), "{}: {errors:#?}", cfg.name);
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(render_report(&back, ReportFormat::Json), json);
    }
}

#[test]
fn report_echoes_provenance() {
    let cfg = shortened("test2_dl_priority.toml", 200);
    let r = report(&cfg, 1);
    assert_eq!(r.header.seed, 20220);
    assert_eq!(r.header.scenario_digest, cfg.digest());
    assert_eq!(r.header.replications, 1);
}

#[test]
fn replications_pool_counts() {
    let cfg = shortened("test2_dl_priority.toml", 200);
    let one = report(&cfg, 1);
    let three = report(&cfg, 3);
    assert_eq!(three.kind(PacketKind::Up).unwrap().generated, 600);
    assert_eq!(one.kind(PacketKind::Up).unwrap().generated, 200);
    assert_ne!(one.header.trace_digest, three.header.trace_digest);
}

#[test]
fn idle_up_latency_within_budget() {
    // a lone SF7 sender and a receive-only gateway: nothing queues the UP
    let r = report(&shortened("test3_dual_gw.toml", 2000), 1);
    let lat = r.up_latency_ms.unwrap();
    assert!(lat.max <= 500.0 + 20.0, "{lat:?}");
    assert!(lat.p50 >= 82.176 + 20.0 - 1e-9);
}

#[test]
fn csv_has_one_row_per_metric() {
    let r = report(&shortened("test2_dl_priority.toml", 200), 1);
    let csv = render_report(&r, ReportFormat::Csv);
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("kind,metric,value"));
    let keys: Vec<(&str, &str)> = rows.map(|l| {
        let mut f = l.split(',');
        (f.next().unwrap(), f.next().unwrap())
    }).collect();
    let mut dedup = keys.clone();
    dedup.sort();
    dedup.dedup();
    assert_eq!(dedup.len(), keys.len());
    assert!(keys.contains(&("UP", "plr")));
}
