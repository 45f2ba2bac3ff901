//! The grid sweep: every start of a grid over the working box, both initial
//! labels, several noise seeds.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use qmt::hybrid::{Label, Outcome};
use qmt::linalg::dist_inf;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::pipeline::{write_sidecar, Artifacts};
use crate::runs::{certify_stored, run_one, RESIDUAL_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCase {
    pub index: usize,
    pub x0: Vec<f64>,
    pub s0: Label,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub index: usize,
    pub x0: Vec<f64>,
    pub s0: Label,
    pub noise_seed: u64,
    /// `arrived`, `horizon`, or the error name.
    pub outcome: String,
    pub arrival: Option<f64>,
    pub t_hat: f64,
    /// `arrival − T̂(x0) − 2ε`; `+∞` without arrival.
    pub margin: f64,
    pub radius: f64,
    pub jumps: usize,
    pub positive_jump_times: usize,
    pub max_chain: usize,
    pub max_excursion: f64,
    pub violations: usize,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub config_hash: String,
    pub runs: usize,
    pub epsilon: f64,
    /// Runs ending in a stuck state, a Zeno chain, a blow-up or another error.
    pub nonconforming: Vec<String>,
    /// Runs that reached the horizon without arriving.
    pub unfinished: usize,
    pub max_margin: f64,
    /// Largest `T` over the stop ball, the most a stop can cut off.
    pub stop_slack: f64,
    pub r: f64,
    pub tau_r: f64,
    pub max_arrival: f64,
    pub delta_r: f64,
    pub max_excursion: f64,
    pub max_positive_jump_times: usize,
    pub max_chain: usize,
    pub violations: usize,
    pub max_residual: f64,
    pub residual_tol: f64,
}

fn grid_axis(k: usize, half: f64, centre: f64) -> Vec<f64> {
    match k {
        0 => vec![],
        1 => vec![centre],
        _ => (0..k).map(|i| centre - half + 2.0 * half * i as f64 / (k - 1) as f64).collect(),
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_add(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Starts on the `per_axis`ⁿ grid of the working box at least `axis_tube`
/// from the singular set, each with `ω` and with its nearest patch, each
/// with every noise seed.
pub fn sweep_cases(cfg: &ScenarioConfig, art: &Artifacts) -> Vec<SweepCase> {
    let n = art.sys.n();
    let target = art.sys.target();
    let axes: Vec<Vec<f64>> = (0..n).map(|i| grid_axis(cfg.sweep.per_axis, cfg.working_box, target[i])).collect();
    if axes.iter().any(|a| a.is_empty()) {
        return Vec::new();
    }
    let total: usize = axes.iter().map(|a| a.len()).product();
    let mut cases = Vec::new();
    for k in 0..total {
        let mut q = k;
        let x0: Vec<f64> = axes
            .iter()
            .map(|a| {
                let v = a[q % a.len()];
                q /= a.len();
                v
            })
            .collect();
        if art.model.distance(&x0) < cfg.sweep.axis_tube {
            continue;
        }
        let mut labels = vec![Label::Omega];
        if let Some(p) = art.feedback.nearest_patch(&x0) {
            labels.push(p);
        }
        for s0 in labels {
            for seed in 0..cfg.noise.seeds.max(1) {
                let index = cases.len();
                cases.push(SweepCase { index, x0: x0.clone(), s0, noise_seed: mix(cfg.seed, index as u64 * 1009 + seed as u64) });
            }
        }
    }
    cases
}

pub fn run_case(cfg: &ScenarioConfig, art: &Artifacts, case: &SweepCase) -> SweepRecord {
    let eps = art.epsilon();
    let target = art.sys.target();
    let t_hat = art.field.time_hat(&case.x0).unwrap_or(f64::NAN);
    let mut rec = SweepRecord {
        index: case.index,
        x0: case.x0.clone(),
        s0: case.s0,
        noise_seed: case.noise_seed,
        outcome: String::new(),
        arrival: None,
        t_hat,
        margin: f64::INFINITY,
        radius: dist_inf(&case.x0, target),
        jumps: 0,
        positive_jump_times: 0,
        max_chain: 0,
        max_excursion: 0.0,
        violations: 0,
        max_residual: 0.0,
    };
    let stored = match run_one(cfg, art, &case.x0, case.s0, case.noise_seed) {
        Ok(s) => s,
        Err(e) => {
            rec.outcome = format!("error: {e}");
            return rec;
        }
    };
    let arc = &stored.arc;
    rec.outcome = match &arc.outcome {
        Outcome::Arrived(_) => "arrived".into(),
        Outcome::Horizon => "horizon".into(),
        Outcome::Failed(e) => format!("{e:?}").split([' ', '{', '(']).next().unwrap_or("failed").to_string(),
    };
    rec.arrival = arc.arrival_time();
    if let Some(t) = rec.arrival {
        rec.margin = t - t_hat - 2.0 * eps;
    }
    rec.jumps = arc.jumps.len();
    rec.positive_jump_times = arc.positive_jump_times().len();
    rec.max_chain = arc.max_chain();
    rec.max_excursion = arc.max_excursion(target);
    let cert = certify_stored(art, &stored);
    rec.violations = cert.violations.len();
    rec.max_residual = cert.max_derivative_residual;
    rec
}

pub fn run_sweep(cfg: &ScenarioConfig, art: &Artifacts, threads: Option<usize>) -> Result<Vec<SweepRecord>> {
    let cases = sweep_cases(cfg, art);
    let run = || cases.par_iter().map(|c| run_case(cfg, art, c)).collect::<Vec<_>>();
    let records = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| crate::error::CliError::Config(e.to_string()))?
            .install(run),
        None => run(),
    };
    Ok(records)
}

/// Largest `T` over the stop ball. With a dilation `T` is homogeneous of
/// degree one, so the sphere is sampled, scaled out to a quasi-norm well
/// inside the grid and `T̂` scaled back; otherwise grid nodes within one
/// cell are used.
fn stop_slack(cfg: &ScenarioConfig, art: &Artifacts) -> f64 {
    let (sys, f) = (&art.sys, &art.field);
    let target = sys.target();
    let r = cfg.stop_radius;
    if r == 0.0 {
        return 0.0;
    }
    if let Some(w) = sys.dilation() {
        let n = sys.n();
        let reach = (0..n)
            .map(|i| (f.grid.max[i] - target[i]).min(target[i] - f.grid.min[i]).max(0.0).powf(1.0 / w[i]))
            .fold(f64::INFINITY, f64::min);
        let rho = 0.8 * reach;
        let k = 21usize;
        let mut worst = 0.0f64;
        for idx in 0..k.pow(n as u32) {
            let mut q = idx;
            let v: Vec<f64> = (0..n)
                .map(|_| {
                    let c = -1.0 + 2.0 * (q % k) as f64 / (k - 1) as f64;
                    q /= k;
                    c
                })
                .collect();
            let s = qmt::linalg::norm(&v);
            if s == 0.0 {
                continue;
            }
            let x: Vec<f64> = target.iter().zip(&v).map(|(t, c)| t + r * c / s).collect();
            let Some(qn) = sys.quasi_norm(&x).filter(|&q| q > 0.0) else { continue };
            let y = sys.dilate(&x, rho / qn).expect("dilation present");
            if let Ok(t) = f.time_hat(&y) {
                worst = worst.max(t * qn / rho);
            }
        }
        return worst;
    }
    let reach = r + f.grid.h * (f.n() as f64).sqrt();
    (0..f.len())
        .filter(|&i| f.is_covered(i) && qmt::linalg::dist(&f.node_coords(i), target) <= reach)
        .map(|i| f.t[i])
        .fold(0.0, f64::max)
}

pub fn summarize(cfg: &ScenarioConfig, art: &Artifacts, records: &[SweepRecord]) -> SweepSummary {
    let r = records.iter().map(|x| x.radius).fold(0.0, f64::max).max(cfg.working_box);
    let fin = |v: f64| if v.is_finite() { v } else { f64::MAX };
    SweepSummary {
        config_hash: cfg.hash(),
        runs: records.len(),
        epsilon: art.epsilon(),
        nonconforming: records
            .iter()
            .filter(|x| x.outcome != "arrived" && x.outcome != "horizon")
            .map(|x| format!("{} {:?} {}: {}", x.index, x.x0, x.s0, x.outcome))
            .collect(),
        unfinished: records.iter().filter(|x| x.outcome == "horizon").count(),
        max_margin: records.iter().map(|x| fin(x.margin)).fold(f64::NEG_INFINITY, f64::max),
        stop_slack: stop_slack(cfg, art),
        r,
        tau_r: art.manifest.tau.eval(r),
        max_arrival: records.iter().filter_map(|x| x.arrival).fold(0.0, f64::max),
        delta_r: art.manifest.delta.eval(r),
        max_excursion: records.iter().map(|x| x.max_excursion).fold(0.0, f64::max),
        max_positive_jump_times: records.iter().map(|x| x.positive_jump_times).max().unwrap_or(0),
        max_chain: records.iter().map(|x| x.max_chain).max().unwrap_or(0),
        violations: records.iter().map(|x| x.violations).sum(),
        max_residual: records.iter().map(|x| x.max_residual).fold(0.0, f64::max),
        residual_tol: RESIDUAL_TOL,
    }
}


pub fn write_sweep_csv(cfg: &ScenarioConfig, n: usize, records: &[SweepRecord]) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("sweep.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
    let mut header = vec!["index".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend(
        [
            "s0", "noise_seed", "outcome", "arrival", "t_hat", "margin", "radius", "jumps", "positive_jump_times",
            "max_chain", "max_excursion", "violations", "max_residual",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for x in records {
        let mut row = vec![x.index.to_string()];
        row.extend(x.x0.iter().map(|v| v.to_string()));
        row.extend([
            x.s0.to_string(),
            x.noise_seed.to_string(),
            x.outcome.clone(),
            x.arrival.map_or(String::new(), |t| t.to_string()),
            x.t_hat.to_string(),
            x.margin.to_string(),
            x.radius.to_string(),
            x.jumps.to_string(),
            x.positive_jump_times.to_string(),
            x.max_chain.to_string(),
            x.max_excursion.to_string(),
            x.violations.to_string(),
            x.max_residual.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    write_sidecar(&path, cfg, &[("columns", header.join(","))])?;
    Ok(path)
}

pub fn cmd_sweep(cfg: &ScenarioConfig, art: &Artifacts, threads: Option<usize>) -> Result<SweepSummary> {
    let records = run_sweep(cfg, art, threads)?;
    write_sweep_csv(cfg, art.sys.n(), &records)?;
    let summary = summarize(cfg, art, &records);
    let path = cfg.out.join("sweep_summary.toml");
    std::fs::write(&path, toml::to_string(&summary).expect("summary serialises"))?;
    write_sidecar(&path, cfg, &[])?;
    Ok(summary)
}
