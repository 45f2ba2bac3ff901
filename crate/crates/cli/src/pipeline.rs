//! `synth`: field, cut locus, patches, shells and feedback, written to the
//! output directory; and loading those artifacts back.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use qmt::escape::{cover_singular_region, EscapeParams, Envelope, LEVELS};
use qmt::hybrid::ExecOptions;
use qmt::hysteresis::{
    assemble_feedback, build_envelopes, build_omega_shells, controller_params, AssembledFeedback, ChiParams,
    ControllerManifest, FeedbackManifest, OmegaParams,
};
use qmt::ode::IntegratorOptions;
use qmt::synthesis::{
    estimate_cut_locus, read_field, synthesize_time_field, write_field, write_metadata, CutParams, GridSpec,
    MinimalTimeField, OptimalController, SingularSetModel, SliceGrid, SynthesisParams,
};
use qmt::{brockett_system, ControlSystem};

use crate::config::ScenarioConfig;
use crate::error::{at, CliError, Result};

pub const FIELD_FILE: &str = "field.mtf";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";

pub fn system_for(cfg: &ScenarioConfig) -> Result<ControlSystem> {
    match cfg.system.as_str() {
        "brockett" => Ok(brockett_system()),
        other => Err(CliError::Config(format!("unknown system {other:?}"))),
    }
}

/// `<file>.meta` next to an output file.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_sidecar(path: &Path, cfg: &ScenarioConfig, extra: &[(&str, String)]) -> Result<()> {
    let mut entries = vec![
        ("artifact".to_string(), path.file_name().unwrap_or_default().to_string_lossy().into_owned()),
        ("config_hash".to_string(), cfg.hash()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("mode".to_string(), cfg.mode.to_string()),
    ];
    entries.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    write_metadata(&sidecar(path), &entries).map_err(at("write"))
}

#[derive(Debug, Clone)]
pub struct SynthReport {
    pub covered: usize,
    pub flagged: usize,
    pub components: usize,
    pub patches: usize,
    pub max_overlap: usize,
    pub epsilon: f64,
    pub omega_widths: [f64; LEVELS],
}

/// Everything the run commands need.
pub struct Artifacts {
    pub sys: Arc<ControlSystem>,
    pub field: Arc<MinimalTimeField>,
    pub model: Arc<SingularSetModel>,
    pub manifest: FeedbackManifest,
    pub feedback: AssembledFeedback,
}

impl Artifacts {
    pub fn epsilon(&self) -> f64 {
        self.manifest.epsilon
    }
}

pub fn max_time(field: &MinimalTimeField) -> f64 {
    (0..field.len()).filter(|&i| field.is_covered(i)).map(|i| field.t[i]).fold(0.0, f64::max)
}

pub fn cmd_synth(cfg: &ScenarioConfig) -> Result<(SynthReport, Artifacts)> {
    cfg.validate()?;
    let sys = system_for(cfg)?;
    let n = sys.n();
    let grid = GridSpec::cube(n, cfg.grid.half_width, cfg.grid.h);
    grid.dims().map_err(at("build_time_field"))?;
    let s = &cfg.slices;
    let slices = SliceGrid::graded(s.lambda_max, s.dlambda0, s.n_theta_max, s.n_theta_min, s.lambda_knee);
    let params = SynthesisParams { grid, t_max: cfg.grid.t_max, cut: CutParams::for_grid(n, cfg.grid.h) };
    let mut field =
        synthesize_time_field(&sys, &slices, &params, &IntegratorOptions::default()).map_err(at("synthesize_front"))?;
    let model = estimate_cut_locus(&mut field, sys.target(), &params.cut);
    let epsilon = cfg.epsilon_fraction * max_time(&field);

    let escape = EscapeParams { seeds: cfg.certification.escape_seeds, seed: cfg.seed, ..Default::default() };
    let cover = cover_singular_region(&sys, &field, &model, epsilon, &escape).map_err(at("cover_singular_region"))?;

    let sys = Arc::new(sys);
    let field = Arc::new(field);
    let model = Arc::new(model);
    let controller = ControllerManifest::default();
    let ctl = OptimalController::new(sys.clone(), field.clone(), controller_params(&controller));
    let omega_params =
        OmegaParams { seeds: cfg.certification.omega_seeds, seed: cfg.seed.wrapping_add(1), ..Default::default() };
    let (omega, certificate) =
        build_omega_shells(&sys, &ctl, &field, &model, &cover, &omega_params).map_err(at("build_omega_shells"))?;

    let mut manifest = FeedbackManifest {
        mode: cfg.mode,
        epsilon,
        levels: LEVELS,
        omega,
        omega_certificate: Some(certificate),
        chi: ChiParams::default(),
        controller,
        delta: Envelope::default(),
        tau: Envelope::default(),
        max_overlap: cover.max_overlap,
        coverage_points: cover.coverage_points,
        components: cover.components.clone(),
        notes: Vec::new(),
        patches: cover.patches.clone(),
    };
    let fb = assemble_feedback(sys.clone(), field.clone(), model.clone(), &manifest).map_err(at("assemble_feedback"))?;
    let (delta, tau) = build_envelopes(&sys, &fb, &field, epsilon, cfg.certification.envelope_per_axis, &ExecOptions::default())
        .map_err(at("admissible_radius"))?;
    manifest.delta = delta;
    manifest.tau = tau;
    if fb.chi(sys.target()) != 0.0 {
        return Err(CliError::Stage {
            stage: "admissible_radius",
            source: qmt::error::Error::InvalidShells("noise radius does not vanish at the target".into()),
        });
    }

    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(FIELD_FILE);
    write_field(&path, &field).map_err(at("write"))?;
    write_sidecar(&path, cfg, &[])?;
    let path = cfg.out.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_toml().map_err(at("write"))?)?;
    write_sidecar(&path, cfg, &[])?;
    let path = cfg.out.join(CONFIG_FILE);
    std::fs::write(&path, cfg.to_toml())?;
    write_sidecar(&path, cfg, &[])?;

    let report = SynthReport {
        covered: field.covered_count(),
        flagged: model.flagged.len(),
        components: model.n_components,
        patches: manifest.patches.len(),
        max_overlap: manifest.max_overlap,
        epsilon,
        omega_widths: manifest.omega.widths,
    };
    let feedback = fb.with_mode(cfg.mode);
    Ok((report, Artifacts { sys, field, model, manifest, feedback }))
}

/// Reads the field and manifest from the output directory. The mode flag
/// of `cfg` overrides the stored one.
pub fn load_artifacts(cfg: &ScenarioConfig) -> Result<Artifacts> {
    let fpath = cfg.out.join(FIELD_FILE);
    let mpath = cfg.out.join(MANIFEST_FILE);
    if !fpath.is_file() || !mpath.is_file() {
        return Err(CliError::ArtifactsMissing(cfg.out.clone()));
    }
    let sys = Arc::new(system_for(cfg)?);
    let field = Arc::new(read_field(&fpath).map_err(at("load"))?);
    let model = Arc::new(SingularSetModel::from_field(&field));
    let manifest = FeedbackManifest::from_toml(&std::fs::read_to_string(&mpath)?).map_err(at("load"))?;
    let feedback =
        assemble_feedback(sys.clone(), field.clone(), model.clone(), &manifest).map_err(at("assemble_feedback"))?;
    let feedback = feedback.with_mode(cfg.mode);
    Ok(Artifacts { sys, field, model, manifest, feedback })
}
