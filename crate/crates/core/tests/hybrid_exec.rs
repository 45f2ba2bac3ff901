use std::sync::Arc;

use qmt::error::Error;
use qmt::hybrid::*;
use qmt::{brockett_system, validate_control, ControlVector};

/// Single mode, constant control `(1, 0)`, flow everywhere.
struct Drift;

impl HybridFeedback for Drift {
    fn labels(&self) -> Vec<Label> {
        vec![Label::Omega]
    }
    fn in_flow_set(&self, _x: &[f64], _s: Label) -> bool {
        true
    }
    fn in_jump_set(&self, _x: &[f64], _s: Label) -> bool {
        false
    }
    fn control(&self, _x: &[f64], _s: Label) -> qmt::Result<ControlVector> {
        validate_control(&[1.0, 0.0], 0.0)
    }
    fn jump_targets(&self, _x: &[f64], _s: Label) -> Vec<Label> {
        vec![]
    }
}

/// Two labels that keep swapping: every jump lands in the other jump set.
struct Cycle;

impl HybridFeedback for Cycle {
    fn labels(&self) -> Vec<Label> {
        vec![Label::Patch(0), Label::Patch(1)]
    }
    fn in_flow_set(&self, _x: &[f64], _s: Label) -> bool {
        true
    }
    fn in_jump_set(&self, x: &[f64], _s: Label) -> bool {
        x[0] >= 0.1
    }
    fn control(&self, _x: &[f64], _s: Label) -> qmt::Result<ControlVector> {
        validate_control(&[1.0, 0.0], 0.0)
    }
    fn jump_targets(&self, _x: &[f64], s: Label) -> Vec<Label> {
        match s {
            Label::Patch(0) => vec![Label::Patch(1)],
            _ => vec![Label::Patch(0)],
        }
    }
}

/// Mode `p0` flows while `x₁ < 0.2` and hands over to `ω` beyond it;
/// `ω` steers with `(0, 1)`.
struct Handover;

impl HybridFeedback for Handover {
    fn labels(&self) -> Vec<Label> {
        vec![Label::Omega, Label::Patch(0)]
    }
    fn in_flow_set(&self, x: &[f64], s: Label) -> bool {
        match s {
            Label::Patch(_) => x[0] <= 0.2,
            Label::Omega => x[0] >= 0.2 - 1e-6,
        }
    }
    fn in_jump_set(&self, x: &[f64], s: Label) -> bool {
        matches!(s, Label::Patch(_)) && x[0] >= 0.2
    }
    fn control(&self, _x: &[f64], s: Label) -> qmt::Result<ControlVector> {
        match s {
            Label::Patch(_) => validate_control(&[1.0, 0.0], 0.0),
            Label::Omega => validate_control(&[0.0, 1.0], 0.0),
        }
    }
    fn jump_targets(&self, x: &[f64], s: Label) -> Vec<Label> {
        if self.in_jump_set(x, s) {
            vec![Label::Omega]
        } else {
            vec![]
        }
    }
}

fn opts() -> ExecOptions {
    ExecOptions::default()
}

#[test]
fn constant_control_matches_closed_form() {
    let sys = brockett_system();
    let arc = execute_hybrid(&sys, &Drift, &[0.0, 0.5, 0.0], Label::Omega, &NoiseModel::zero(), 1.0, 0.0, &opts())
        .unwrap();
    assert_eq!(arc.outcome, Outcome::Horizon);
    let x = arc.final_state().unwrap();
    // ẋ₁ = 1, ẋ₂ = 0, ẋ₃ = x₂.
    assert!((x[0] - 1.0).abs() < 1e-9);
    assert!((x[1] - 0.5).abs() < 1e-12);
    assert!((x[2] - 0.5).abs() < 1e-9);
    let rep = certify_arc(&sys, &arc, &Drift, &NoiseModel::zero(), 1e-9);
    assert!(rep.ok(), "{rep}");
}

#[test]
fn instant_cycle_is_reported_as_zeno() {
    let sys = brockett_system();
    let arc = execute_hybrid(&sys, &Cycle, &[0.0, 0.0, 0.0], Label::Patch(0), &NoiseModel::zero(), 1.0, 0.0, &opts())
        .unwrap();
    match arc.error() {
        Some(Error::InstantZeno { t, n_max }) => {
            assert_eq!(*n_max, 8);
            assert!((t - 0.1).abs() < 1e-7, "t = {t}");
        }
        other => panic!("expected a Zeno chain, got {other:?}"),
    }
}

#[test]
fn handover_jump_is_located_and_certified() {
    let sys = brockett_system();
    let arc = execute_hybrid(&sys, &Handover, &[0.0, 0.0, 0.0], Label::Patch(0), &NoiseModel::zero(), 0.5, 0.0, &opts())
        .unwrap();
    assert_eq!(arc.outcome, Outcome::Horizon);
    assert_eq!(arc.jumps.len(), 1);
    assert!((arc.jumps[0].t - 0.2).abs() < 1e-7);
    assert_eq!(arc.domain.intervals.len(), 2);
    let rep = certify_arc(&sys, &arc, &Handover, &NoiseModel::zero(), 1e-9);
    assert!(rep.ok(), "{rep}");
    let x = arc.final_state().unwrap();
    assert!((x[1] - 0.3).abs() < 1e-7);
}

#[test]
fn corrupted_label_is_flagged() {
    let sys = brockett_system();
    let mut arc = execute_hybrid(&sys, &Handover, &[0.0, 0.0, 0.0], Label::Patch(0), &NoiseModel::zero(), 0.5, 0.0, &opts())
        .unwrap();
    let k = arc.samples.len() - 3;
    arc.samples[k].s = Label::Patch(0);
    let rep = certify_arc(&sys, &arc, &Handover, &NoiseModel::zero(), 1e-9);
    assert!(rep.violations.iter().any(|v| v.kind == "label-constant"), "{rep}");
}

#[test]
fn target_with_zero_stop_radius_stays_put() {
    let sys = brockett_system();
    struct Rest;
    impl HybridFeedback for Rest {
        fn labels(&self) -> Vec<Label> {
            vec![Label::Omega]
        }
        fn in_flow_set(&self, _x: &[f64], _s: Label) -> bool {
            true
        }
        fn in_jump_set(&self, _x: &[f64], _s: Label) -> bool {
            false
        }
        fn control(&self, x: &[f64], _s: Label) -> qmt::Result<ControlVector> {
            let r = qmt::linalg::norm(x);
            Ok(ControlVector::zero(2).scaled(r))
        }
        fn jump_targets(&self, _x: &[f64], _s: Label) -> Vec<Label> {
            vec![]
        }
    }
    let arc = execute_hybrid(&sys, &Rest, &[0.0; 3], Label::Omega, &NoiseModel::zero(), 1.0, 0.0, &opts()).unwrap();
    assert_eq!(arc.outcome, Outcome::Horizon);
    assert!(arc.samples.iter().all(|p| p.x == vec![0.0; 3]));
}

#[test]
fn empty_arc_certifies() {
    let sys = brockett_system();
    let arc = HybridArc {
        domain: HybridTimeDomain { intervals: vec![(0.0, 0.0)] },
        samples: vec![],
        jumps: vec![],
        outcome: Outcome::Horizon,
    };
    assert!(certify_arc(&sys, &arc, &Drift, &NoiseModel::zero(), 1e-9).ok());
}

#[test]
fn seeded_noise_respects_bound_and_is_reproducible() {
    let sys = brockett_system();
    let bound: BoundFn = Arc::new(|x: &[f64]| 0.05 * qmt::linalg::norm(x).min(1.0));
    let noise = NoiseModel::seeded(7, 1.0, bound);
    let run = || {
        execute_hybrid(&sys, &Drift, &[0.2, 0.1, 0.0], Label::Omega, &noise, 0.3, 0.0, &opts()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let rep = certify_arc(&sys, &a, &Drift, &noise, 1e-9);
    assert!(rep.ok(), "{rep}");
    assert!(rep.max_noise_ratio <= 1.0 + 1e-12 && rep.max_noise_ratio > 0.0);
}

#[test]
fn csv_writers_emit_headers() {
    let sys = brockett_system();
    let arc = execute_hybrid(&sys, &Handover, &[0.0, 0.0, 0.0], Label::Patch(0), &NoiseModel::zero(), 0.3, 0.0, &opts())
        .unwrap();
    let mut buf = Vec::new();
    write_arc_csv(&mut buf, &arc, 3, 2).unwrap();
    let s = String::from_utf8(buf).unwrap();
    assert!(s.starts_with("t,j,x1,x2,x3,s_label,u1,u2,norm_e,norm_d,in_C,in_D\n"));
    let mut buf = Vec::new();
    write_jump_log_csv(&mut buf, &arc).unwrap();
    let s = String::from_utf8(buf).unwrap();
    assert_eq!(s.lines().count(), 2);
    assert!(s.lines().nth(1).unwrap().contains(",p0,omega,1,1"));
}
