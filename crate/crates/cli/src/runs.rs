//! Single runs: `simulate`, `certify` and `cutlocus`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use qmt::hybrid::{certify_arc, execute_hybrid, write_arc_csv, write_jump_log_csv, CertificateReport, ExecOptions, HybridArc, Label, NoiseMode};
use qmt::linalg::dist;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{at, CliError, Result};
use crate::pipeline::{write_sidecar, Artifacts};

/// Tolerance on the flow-equation residual in certificates.
pub const RESIDUAL_TOL: f64 = 1e-6;

/// An arc with what is needed to re-certify it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredArc {
    pub x0: Vec<f64>,
    pub s0: Label,
    pub noise_mode: NoiseMode,
    pub noise_scale: f64,
    pub noise_seed: u64,
    pub arc: HybridArc,
}

#[derive(Debug, Clone)]
pub struct SimulateReport {
    pub stored: StoredArc,
    pub t_hat: Option<f64>,
    pub certificate: CertificateReport,
    pub max_excursion: f64,
    pub files: Vec<PathBuf>,
}

/// Horizon for a run from `x0`: the recorded uniform bound plus slack.
pub fn horizon_for(cfg: &ScenarioConfig, art: &Artifacts, x0: &[f64]) -> f64 {
    let r = x0.iter().zip(art.sys.target()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    art.manifest.tau.eval(r) + cfg.sweep.horizon_slack
}

pub fn run_one(cfg: &ScenarioConfig, art: &Artifacts, x0: &[f64], s0: Label, noise_seed: u64) -> Result<StoredArc> {
    let fb = art.feedback.clone();
    let noise = fb.noise_model(cfg.noise.mode, cfg.noise.scale, noise_seed);
    let horizon = horizon_for(cfg, art, x0);
    let arc = execute_hybrid(&art.sys, &fb, x0, s0, &noise, horizon, cfg.stop_radius, &ExecOptions::default())
        .map_err(at("execute_hybrid"))?;
    Ok(StoredArc {
        x0: x0.to_vec(),
        s0,
        noise_mode: cfg.noise.mode,
        noise_scale: cfg.noise.scale,
        noise_seed,
        arc,
    })
}

pub fn certify_stored(art: &Artifacts, stored: &StoredArc) -> CertificateReport {
    let fb = art.feedback.clone();
    let noise = fb.noise_model(stored.noise_mode, stored.noise_scale, stored.noise_seed);
    certify_arc(&art.sys, &stored.arc, &fb, &noise, RESIDUAL_TOL)
}

pub fn cmd_simulate(cfg: &ScenarioConfig, art: &Artifacts, x0: &[f64], s0: Label) -> Result<SimulateReport> {
    if x0.len() != art.sys.n() {
        return Err(CliError::Config(format!("x0 needs {} coordinates, got {}", art.sys.n(), x0.len())));
    }
    let stored = run_one(cfg, art, x0, s0, cfg.seed)?;
    let certificate = certify_stored(art, &stored);
    std::fs::create_dir_all(&cfg.out)?;
    let (n, m) = (art.sys.n(), art.sys.m());
    let mut files = Vec::new();

    let path = cfg.out.join("arc.csv");
    write_arc_csv(&mut BufWriter::new(File::create(&path)?), &stored.arc, n, m).map_err(at("write"))?;
    write_sidecar(&path, cfg, &[("x0", format!("{x0:?}")), ("s0", s0.to_string())])?;
    files.push(path);
    let path = cfg.out.join("jumps.csv");
    write_jump_log_csv(&mut BufWriter::new(File::create(&path)?), &stored.arc).map_err(at("write"))?;
    write_sidecar(&path, cfg, &[])?;
    files.push(path);
    let path = cfg.out.join("arc.json");
    serde_json::to_writer(BufWriter::new(File::create(&path)?), &stored)?;
    write_sidecar(&path, cfg, &[])?;
    files.push(path);
    let path = cfg.out.join("certificate.txt");
    std::fs::write(&path, certificate.to_string())?;
    write_sidecar(&path, cfg, &[])?;
    files.push(path);

    Ok(SimulateReport {
        t_hat: art.field.time_hat(x0).ok(),
        max_excursion: stored.arc.max_excursion(art.sys.target()),
        stored,
        certificate,
        files,
    })
}

pub fn read_stored_arc(path: &Path) -> Result<StoredArc> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

pub fn cmd_certify(cfg: &ScenarioConfig, art: &Artifacts, arc_path: &Path) -> Result<CertificateReport> {
    let stored = read_stored_arc(arc_path)?;
    let rep = certify_stored(art, &stored);
    let path = cfg.out.join("certificate.txt");
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(&path, rep.to_string())?;
    write_sidecar(&path, cfg, &[("arc", arc_path.display().to_string())])?;
    Ok(rep)
}

/// Flagged cells as `index,x1..xn,component,distance_to_target`.
pub fn cmd_cutlocus(cfg: &ScenarioConfig, art: &Artifacts) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("cutlocus.csv");
    let n = art.sys.n();
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
    let mut header = vec!["index".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend(["component".to_string(), "distance_to_target".to_string()]);
    w.write_record(&header)?;
    for (k, &i) in art.model.flagged.iter().enumerate() {
        let c = art.field.node_coords(i);
        let mut row = vec![i.to_string()];
        row.extend(c.iter().map(|v| v.to_string()));
        row.push(art.model.labels[k].to_string());
        row.push(dist(&c, art.sys.target()).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    write_sidecar(&path, cfg, &[("columns", header.join(","))])?;
    Ok(path)
}
