use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use qmt::error::Error;
use qmt::hybrid::Label;
use qmt_cli::pipeline::{cmd_synth, load_artifacts, sidecar};
use qmt_cli::runs::{cmd_certify, cmd_cutlocus, cmd_simulate, read_stored_arc};
use qmt_cli::sweep::{cmd_sweep, summarize};
use qmt_cli::{CliError, ScenarioConfig};
use tempfile::TempDir;

/// A coarse scenario that synthesises in seconds.
fn coarse(out: &Path) -> ScenarioConfig {
    let mut c = ScenarioConfig { out: out.to_path_buf(), ..Default::default() };
    c.grid.half_width = 0.6;
    c.grid.t_max = 2.2;
    c.working_box = 0.6;
    c.epsilon_fraction = 0.2;
    c.certification.escape_seeds = 20;
    c.certification.omega_seeds = 20;
    c.certification.envelope_per_axis = 3;
    c.sweep.per_axis = 3;
    c.noise.seeds = 1;
    c
}

/// Output directory holding a coarse synthesis, shared by the tests.
fn synthesised() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let d = tempfile::tempdir().unwrap();
        cmd_synth(&coarse(d.path())).unwrap();
        d
    })
    .path()
}

#[test]
fn nonpositive_spacing_fails_in_the_field_stage() {
    let d = tempfile::tempdir().unwrap();
    for h in [0.0, -0.1] {
        let mut c = coarse(d.path());
        c.grid.h = h;
        match cmd_synth(&c) {
            Err(CliError::Stage { stage, source: Error::InvalidGrid(_) }) => assert_eq!(stage, "build_time_field"),
            other => panic!("h = {h}: {:?}", other.err()),
        }
    }
    assert!(!d.path().join("field.mtf").exists());
}

#[test]
fn bad_config_files_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("c.toml");
    std::fs::write(&p, "[grid]\nspacing = 0.1\n").unwrap();
    assert!(matches!(ScenarioConfig::load(&p), Err(CliError::Config(_))));
    std::fs::write(&p, "stop_radius = -1.0\n").unwrap();
    assert!(matches!(ScenarioConfig::load(&p), Err(CliError::Config(_))));
    assert!(matches!(ScenarioConfig::load(&d.path().join("none.toml")), Err(CliError::Io(_))));
}

#[test]
fn run_commands_need_artifacts() {
    let d = tempfile::tempdir().unwrap();
    let c = coarse(d.path());
    assert!(matches!(load_artifacts(&c), Err(CliError::ArtifactsMissing(_))));
}

#[test]
fn synth_writes_artifacts_with_sidecars() {
    let out = synthesised();
    for f in ["field.mtf", "manifest.toml", "config.toml"] {
        let p = out.join(f);
        assert!(p.is_file(), "{f}");
        let meta = std::fs::read_to_string(sidecar(&p)).unwrap();
        assert!(meta.contains(&coarse(out).hash()), "{f}: {meta}");
    }
    let cfg = ScenarioConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(cfg.hash(), coarse(out).hash());
}

#[test]
fn simulate_then_certify_round_trips() {
    let out = synthesised();
    let d = tempfile::tempdir().unwrap();
    let mut c = coarse(out);
    let art = load_artifacts(&c).unwrap();
    c.out = d.path().to_path_buf();
    let r = cmd_simulate(&c, &art, &[0.4, 0.2, 0.1], Label::Omega).unwrap();
    assert!(r.certificate.ok(), "{}", r.certificate);
    let stored = read_stored_arc(&d.path().join("arc.json")).unwrap();
    assert_eq!(stored, r.stored);
    let again = cmd_certify(&c, &art, &d.path().join("arc.json")).unwrap();
    assert!(again.ok());
    let head = std::fs::read_to_string(d.path().join("arc.csv")).unwrap();
    assert!(head.starts_with("t,j,"), "{}", &head[..40.min(head.len())]);
    assert!(matches!(cmd_simulate(&c, &art, &[1.0, 0.5], Label::Omega), Err(CliError::Config(_))));
}

#[test]
fn cutlocus_lists_every_flagged_cell() {
    let out = synthesised();
    let d = tempfile::tempdir().unwrap();
    let mut c = coarse(out);
    let art = load_artifacts(&c).unwrap();
    c.out = d.path().to_path_buf();
    let p = cmd_cutlocus(&c, &art).unwrap();
    let mut rd = csv::Reader::from_path(&p).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["index", "x1", "x2", "x3", "component", "distance_to_target"]);
    assert_eq!(rd.records().count(), art.model.flagged.len());
}

#[test]
fn empty_sweep_grid_gives_an_empty_summary() {
    let out = synthesised();
    let d = tempfile::tempdir().unwrap();
    let mut c = coarse(out);
    let art = load_artifacts(&c).unwrap();
    c.out = d.path().to_path_buf();
    c.sweep.per_axis = 0;
    let s = cmd_sweep(&c, &art, Some(1)).unwrap();
    assert_eq!(s.runs, 0);
    assert_eq!((s.violations, s.unfinished, s.max_chain), (0, 0, 0));
    assert!(s.nonconforming.is_empty());
    assert_eq!(summarize(&c, &art, &[]), s);
    // Worst point of the stop ball is on the vertical axis: T = √(2π r).
    let pole = (std::f64::consts::TAU * c.stop_radius).sqrt();
    assert!((s.stop_slack - pole).abs() <= 0.1 * pole, "{} vs {pole}", s.stop_slack);
    let csv = std::fs::read_to_string(d.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn binary_reports_errors_with_nonzero_exit() {
    let d = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_qmt");
    let o = Command::new(bin).args(["sweep", "--out"]).arg(d.path()).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("artifacts missing"));

    let o = Command::new(bin).args(["cutlocus", "--out"]).arg(synthesised()).arg("--config").arg(synthesised().join("config.toml")).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("config_hash = "));
}
