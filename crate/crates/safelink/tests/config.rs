use std::path::PathBuf;

use safelink::config::{load_config, parse_config, render_config};
use safelink::sim::SimConfig;
use safelink::Error;

fn shipped() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.cfg")
}

fn defaults() -> SimConfig {
    let mut c = SimConfig::default();
    c.mpc = c.planner_config();
    c
}

#[test]
fn shipped_config_is_the_default() {
    let cfg = load_config(&shipped()).unwrap();
    assert_eq!(cfg, defaults());
    assert_eq!(cfg.scenario.rects.len(), 5);
    assert_eq!(cfg.scenario.event_times(), vec![1.1, 7.5]);
}

#[test]
fn render_then_parse_is_identity() {
    let mut cfg = defaults();
    cfg.cost.c1 = 1.25;
    cfg.scenario.seed = 42;
    cfg.rvfl.ridge = 3.5e-7;
    cfg.sim.updates_enabled = false;
    assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
}

#[test]
fn missing_sections_fall_back_to_defaults() {
    let cfg = parse_config("# only the cost\n[cost]\nc1 = 0.5\n").unwrap();
    let mut expect = defaults();
    expect.cost.c1 = 0.5;
    assert_eq!(cfg, expect);
}

fn error_line(text: &str) -> usize {
    match parse_config(text) {
        Err(Error::Parse { line, .. }) => line,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn parse_errors_carry_line_numbers() {
    assert_eq!(error_line("[cost]\nc1 = 2\nc3 = 1\n"), 3);
    assert_eq!(error_line("\n\n[nowhere]\n"), 3);
    assert_eq!(error_line("[cost]\nc1 = two\n"), 2);
    assert_eq!(error_line("[cost]\nc1 2\n"), 2);
    assert_eq!(error_line("c1 = 2\n"), 1);
    assert_eq!(error_line("[cost]\nc1 = 1\nc1 = 2\n"), 3);
    assert_eq!(error_line("[cost]\n[cost]\n"), 2);
    assert_eq!(error_line("[cost\n"), 1);
    assert_eq!(error_line("[sim]\ndt = 0.05\n\n[rect]\nx_min = 0\nx_max = 1\ny_min = 0\n"), 4);
    let text = "[sim]\nupdates = maybe\n";
    let msg = parse_config(text).unwrap_err().to_string();
    assert!(msg.starts_with("line 2:"), "{msg}");
}

#[test]
fn rect_blocks_replace_default_geometry() {
    let cfg = parse_config("[rect]\nx_min = 0\nx_max = 1\ny_min = 2\ny_max = 3\n\n[rect]\nx_min = -1\nx_max = 0\ny_min = 5\ny_max = 6\nactive_from = 2.0\n")
        .unwrap();
    assert_eq!(cfg.scenario.rects.len(), 2);
    assert_eq!(cfg.scenario.rects[0].active_from, 0.0);
    assert_eq!(cfg.scenario.event_times(), vec![2.0]);
}

#[test]
fn invalid_values_are_rejected() {
    assert!(parse_config("[sim]\ndt = -1\n").is_err() || parse_config("[sim]\ndt = -1\n").unwrap().validate().is_err());
    let bad_target = "[target]\nx = 3.5\ny = 1\n";
    let cfg = parse_config(bad_target);
    assert!(cfg.is_err() || cfg.unwrap().validate().is_err());
}
