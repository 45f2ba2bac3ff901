#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use qmt::escape::{cover_singular_region, EscapeParams, PatchCover, LEVELS};
use qmt::hysteresis::{
    assemble_feedback, AssembledFeedback, ChiParams, ControllerManifest, FeedbackManifest, Mode, OmegaShells,
};
use qmt::ode::IntegratorOptions;
use qmt::synthesis::*;
use qmt::{brockett_system, ControlSystem};

pub const H: f64 = 0.05;

pub fn sys() -> Arc<ControlSystem> {
    static S: OnceLock<Arc<ControlSystem>> = OnceLock::new();
    S.get_or_init(|| Arc::new(brockett_system())).clone()
}

fn build_field() -> MinimalTimeField {
    let sys = brockett_system();
    let slices = SliceGrid::graded(10.0, 0.008, 384, 32, 0.47);
    let params = SynthesisParams { grid: GridSpec::cube(3, 1.5, H), t_max: 3.5, cut: CutParams::for_grid(3, H) };
    let mut f = synthesize_time_field(&sys, &slices, &params, &IntegratorOptions::default()).unwrap();
    estimate_cut_locus(&mut f, &[0.0; 3], &params.cut);
    f
}

/// The default Brockett field, synthesised once and cached under the
/// target's scratch directory for the other test binaries.
pub fn field() -> Arc<MinimalTimeField> {
    static F: OnceLock<Arc<MinimalTimeField>> = OnceLock::new();
    F.get_or_init(|| {
        let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("brockett-h0.05.mtf");
        if let Ok(f) = read_field(&path) {
            return Arc::new(f);
        }
        let f = build_field();
        let tmp = path.with_extension(format!("{}.tmp", std::process::id()));
        write_field(&tmp, &f).unwrap();
        std::fs::rename(&tmp, &path).unwrap();
        Arc::new(read_field(&path).unwrap())
    })
    .clone()
}

pub fn model() -> Arc<SingularSetModel> {
    static M: OnceLock<Arc<SingularSetModel>> = OnceLock::new();
    M.get_or_init(|| Arc::new(SingularSetModel::from_field(&field()))).clone()
}

pub fn epsilon() -> f64 {
    let f = field();
    0.1 * (0..f.len()).filter(|&i| f.is_covered(i)).map(|i| f.t[i]).fold(0.0, f64::max)
}

pub fn cover() -> Arc<PatchCover> {
    static C: OnceLock<Arc<PatchCover>> = OnceLock::new();
    C.get_or_init(|| {
        Arc::new(cover_singular_region(&sys(), &field(), &model(), epsilon(), &EscapeParams::default()).unwrap())
    })
    .clone()
}

/// Manifest with the default optimal shells, uncertified.
pub fn manifest(mode: Mode) -> FeedbackManifest {
    let c = cover();
    FeedbackManifest {
        mode,
        epsilon: epsilon(),
        levels: LEVELS,
        omega: OmegaShells::new(0.024, 0.003).unwrap(),
        omega_certificate: None,
        chi: ChiParams::default(),
        controller: ControllerManifest::default(),
        delta: Default::default(),
        tau: Default::default(),
        max_overlap: c.max_overlap,
        coverage_points: c.coverage_points,
        components: c.components.clone(),
        notes: vec![],
        patches: c.patches.clone(),
    }
}

pub fn feedback(mode: Mode) -> AssembledFeedback {
    assemble_feedback(sys(), field(), model(), &manifest(mode)).unwrap()
}
