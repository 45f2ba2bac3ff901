//! Hybrid feedback laws `(C, D, k, k_d)` and their execution under
//! measurement noise `e` and external disturbance `d`:
//! flow `ẋ = f(x, k(x + e, s)) + d` while `(x + e, s) ∈ C`, jump
//! `s⁺ ∈ k_d(x + e, s)` while `(x + e, s) ∈ D`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, norm};
use crate::ode::{Dopri5, IntegratorOptions, OdeSystem};
use crate::system::{ControlSystem, ControlVector};

/// Discrete state. `Omega` is the optimal mode; patches are numbered.
/// `Omega` sorts first, which makes it the preferred jump target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Label {
    Omega,
    Patch(usize),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Omega => write!(f, "omega"),
            Label::Patch(i) => write!(f, "p{i}"),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "omega" {
            return Ok(Label::Omega);
        }
        s.strip_prefix('p')
            .and_then(|i| i.parse().ok())
            .map(Label::Patch)
            .ok_or_else(|| Error::Format(format!("bad label {s:?}")))
    }
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for Label {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// A hybrid feedback `(C, D, k, k_d)` on `ℝⁿ × N`. All membership tests
/// receive the measured state `x + e`.
pub trait HybridFeedback: Send + Sync {
    fn labels(&self) -> Vec<Label>;
    fn in_flow_set(&self, x: &[f64], s: Label) -> bool;
    fn in_jump_set(&self, x: &[f64], s: Label) -> bool;
    /// `k(x, s)`, with `‖k‖ ≤ 1`.
    fn control(&self, x: &[f64], s: Label) -> Result<ControlVector>;
    /// Every label allowed by `k_d(x, s)`.
    fn jump_targets(&self, x: &[f64], s: Label) -> Vec<Label>;

    /// Deterministic selection from `k_d`: `ω` first, then the smallest patch.
    fn select_jump(&self, x: &[f64], s: Label) -> Result<Label> {
        self.jump_targets(x, s).into_iter().min().ok_or_else(|| Error::JumpTargetUndefined(x.to_vec()))
    }

    /// Drops any cached state (warm starts) so runs are reproducible.
    fn reset(&self) {}
}

/// Evaluates the allowed noise radius at a state.
pub type BoundFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Unit direction from a state towards the singular set, if any.
pub type DirectionFn = Arc<dyn Fn(&[f64]) -> Option<Vec<f64>> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    Zero,
    Seeded,
    Adversarial,
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseMode::Zero => "zero",
            NoiseMode::Seeded => "seeded",
            NoiseMode::Adversarial => "adversarial",
        })
    }
}

impl FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(NoiseMode::Zero),
            "seeded" => Ok(NoiseMode::Seeded),
            "adversarial" => Ok(NoiseMode::Adversarial),
            _ => Err(Error::Format(format!("bad noise mode {s:?}"))),
        }
    }
}

/// Bounded measurement noise and disturbance. On each macro-step a pair of
/// vectors `v_e, v_d` in the closed unit ball is drawn and held; the emitted
/// values are `e = scale·bound(x)·v_e` and `d = scale·bound(x)·v_d`, which
/// are continuous in `x` and never exceed `scale·bound(x)`.
#[derive(Clone)]
pub struct NoiseModel {
    pub mode: NoiseMode,
    pub scale: f64,
    pub seed: u64,
    pub bound: BoundFn,
    pub toward: Option<DirectionFn>,
    /// Whether a disturbance is added to the dynamics.
    pub disturbance: bool,
}

impl fmt::Debug for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseModel")
            .field("mode", &self.mode)
            .field("scale", &self.scale)
            .field("seed", &self.seed)
            .field("disturbance", &self.disturbance)
            .finish()
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            mode: NoiseMode::Zero,
            scale: 0.0,
            seed: 0,
            bound: Arc::new(|_| 0.0),
            toward: None,
            disturbance: false,
        }
    }

    pub fn seeded(seed: u64, scale: f64, bound: BoundFn) -> Self {
        Self { mode: NoiseMode::Seeded, scale, seed, bound, toward: None, disturbance: true }
    }

    pub fn adversarial(scale: f64, bound: BoundFn, toward: DirectionFn) -> Self {
        Self { mode: NoiseMode::Adversarial, scale, seed: 0, bound, toward: Some(toward), disturbance: true }
    }

    /// Allowed radius at `x` after scaling.
    pub fn radius(&self, x: &[f64]) -> f64 {
        if self.mode == NoiseMode::Zero {
            return 0.0;
        }
        self.scale * (self.bound)(x)
    }

    fn draw(&self, rng: &mut ChaCha8Rng, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        match self.mode {
            NoiseMode::Zero => (vec![0.0; n], vec![0.0; n]),
            NoiseMode::Seeded => {
                let mut ball = || loop {
                    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
                    if norm(&v) <= 1.0 {
                        break v;
                    }
                };
                let ve = ball();
                let vd = if self.disturbance { ball() } else { vec![0.0; n] };
                (ve, vd)
            }
            NoiseMode::Adversarial => {
                let v = self.toward.as_ref().and_then(|f| f(x)).unwrap_or_else(|| vec![0.0; n]);
                let vd = if self.disturbance { v.clone() } else { vec![0.0; n] };
                (v, vd)
            }
        }
    }

    fn apply(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let r = self.radius(x);
        v.iter().map(|c| r * c).collect()
    }
}

/// Executor settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecOptions {
    /// Hold time of the sampled noise.
    pub macro_step: f64,
    /// Time tolerance of event bisection.
    pub event_tol: f64,
    pub n_max: usize,
    pub blow_up_bound: f64,
    pub integrator: IntegratorOptions,
}

impl Default for ExecOptions {
    fn default() -> Self {
        let integrator = IntegratorOptions { abs_tol: 1e-9, rel_tol: 1e-9, max_step: 1e-2, ..Default::default() };
        Self { macro_step: 1e-2, event_tol: 1e-8, n_max: 8, blow_up_bound: 1e6, integrator }
    }
}

/// Ordered intervals `[t_j, t_{j+1}] × {j}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HybridTimeDomain {
    pub intervals: Vec<(f64, f64)>,
}

impl HybridTimeDomain {
    pub fn jumps(&self) -> usize {
        self.intervals.len().saturating_sub(1)
    }

    pub fn end(&self) -> f64 {
        self.intervals.last().map_or(0.0, |iv| iv.1)
    }
}

/// One stored sample of an arc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcPoint {
    pub t: f64,
    pub j: usize,
    pub x: Vec<f64>,
    pub s: Label,
    pub u: Vec<f64>,
    pub e: Vec<f64>,
    pub d: Vec<f64>,
    /// Right-hand side used by the integrator at this sample.
    pub xdot: Vec<f64>,
    pub in_c: bool,
    pub in_d: bool,
    /// Last sample of an interval that ends in a jump.
    pub at_jump: bool,
}

/// One jump `(t, j) → (t, j + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub t: f64,
    pub j: usize,
    pub from: Label,
    pub to: Label,
    pub x: Vec<f64>,
    pub e: Vec<f64>,
    /// Position in its chain (1-based) and the chain length.
    pub chain_pos: usize,
    pub chain_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    /// Entered the stop ball at the given time.
    Arrived(f64),
    Horizon,
    Failed(Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridArc {
    pub domain: HybridTimeDomain,
    pub samples: Vec<ArcPoint>,
    pub jumps: Vec<JumpRecord>,
    pub outcome: Outcome,
}

impl HybridArc {
    pub fn arrival_time(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Arrived(t) => Some(t),
            _ => None,
        }
    }

    pub fn error(&self) -> Option<&Error> {
        match &self.outcome {
            Outcome::Failed(e) => Some(e),
            _ => None,
        }
    }

    /// Distinct positive times at which jumps occurred.
    pub fn positive_jump_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.jumps.iter().map(|j| j.t).filter(|t| *t > 0.0).collect();
        ts.dedup();
        ts
    }

    pub fn max_chain(&self) -> usize {
        self.jumps.iter().map(|j| j.chain_len).max().unwrap_or(0)
    }

    /// `max_t |x(t, j) − x̄|` in the sup norm.
    pub fn max_excursion(&self, target: &[f64]) -> f64 {
        self.samples.iter().map(|p| crate::linalg::dist_inf(&p.x, target)).fold(0.0, f64::max)
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.samples.last().map(|p| p.x.as_slice())
    }
}

/// Applies `k_d` while the jump set stays active and the label changes.
/// Returns the final label and the labels visited (chain length = `len`).
pub fn resolve_jump_chain<H: HybridFeedback + ?Sized>(
    h: &H,
    x: &[f64],
    s: Label,
    e: &[f64],
    n_max: usize,
) -> Result<(Label, Vec<Label>)> {
    let xe: Vec<f64> = x.iter().zip(e).map(|(a, b)| a + b).collect();
    let mut cur = s;
    let mut path = Vec::new();
    while h.in_jump_set(&xe, cur) {
        let next = h.select_jump(&xe, cur)?;
        if next == cur {
            break;
        }
        if path.len() == n_max {
            return Err(Error::InstantZeno { t: f64::NAN, n_max });
        }
        path.push(next);
        cur = next;
    }
    Ok((cur, path))
}

struct ClosedLoop<'a, H: ?Sized> {
    sys: &'a ControlSystem,
    h: &'a H,
    s: Label,
    noise: &'a NoiseModel,
    ve: Vec<f64>,
    vd: Vec<f64>,
    scratch: Vec<f64>,
    last_u: Vec<f64>,
    last_e: Vec<f64>,
    last_d: Vec<f64>,
}

impl<H: HybridFeedback + ?Sized> OdeSystem for ClosedLoop<'_, H> {
    fn dim(&self) -> usize {
        self.sys.n()
    }

    fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let e = self.noise.apply(y, &self.ve);
        let xe: Vec<f64> = y.iter().zip(&e).map(|(a, b)| a + b).collect();
        let u = self.h.control(&xe, self.s)?;
        if u.norm() > 1.0 + 1e-12 {
            return Err(Error::ConstraintViolation { norm: u.norm(), tol: 1e-12 });
        }
        self.sys.dynamics_into(y, u.as_slice(), dy, &mut self.scratch);
        let d = self.noise.apply(y, &self.vd);
        for (o, di) in dy.iter_mut().zip(&d) {
            *o += di;
        }
        self.last_u = u.into_vec();
        self.last_e = e;
        self.last_d = d;
        Ok(())
    }
}

impl<H: HybridFeedback + ?Sized> ClosedLoop<'_, H> {
    fn measured(&self, x: &[f64]) -> Vec<f64> {
        let e = self.noise.apply(x, &self.ve);
        x.iter().zip(&e).map(|(a, b)| a + b).collect()
    }

    /// Whether a jump with a label change is enabled at the measured state.
    fn jump_enabled(&self, xe: &[f64]) -> bool {
        self.h.in_jump_set(xe, self.s) && self.h.select_jump(xe, self.s).map_or(true, |l| l != self.s)
    }
}

/// Why the flow has to stop at a state.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Halt {
    Arrive,
    BlowUp,
    Jump,
    LeaveFlowSet,
}

/// Runs the closed loop from `(x0, s0)` until `horizon`, arrival in the
/// `stop_radius` ball around x̄ (disabled when `stop_radius = 0`), or an
/// error. Jumps take priority over flow. Runtime errors (stuck state,
/// blow-up, Zeno chains, controller failures) end the arc and are stored in
/// its outcome together with everything computed so far.
pub fn execute_hybrid<H: HybridFeedback + ?Sized>(
    sys: &ControlSystem,
    h: &H,
    x0: &[f64],
    s0: Label,
    noise: &NoiseModel,
    horizon: f64,
    stop_radius: f64,
    opts: &ExecOptions,
) -> Result<HybridArc> {
    if !(horizon > 0.0) || !(stop_radius >= 0.0) {
        return Err(Error::IntegrationFailure(format!("bad horizon {horizon} or stop radius {stop_radius}")));
    }
    sys.check_state(x0)?;
    h.reset();
    let n = sys.n();
    let target = sys.target().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let (ve, vd) = noise.draw(&mut rng, x0);
    let mut cl = ClosedLoop {
        sys,
        h,
        s: s0,
        noise,
        ve,
        vd,
        scratch: vec![0.0; n],
        last_u: vec![0.0; sys.m()],
        last_e: vec![0.0; n],
        last_d: vec![0.0; n],
    };
    let mut arc = HybridArc {
        domain: HybridTimeDomain { intervals: vec![(0.0, 0.0)] },
        samples: Vec::new(),
        jumps: Vec::new(),
        outcome: Outcome::Horizon,
    };
    let mut rk = Dopri5::new(n, &opts.integrator);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut n_macro = 1u64;
    let mut macro_end = opts.macro_step;
    let slack = |t: f64| 1e-12 * t.abs().max(1.0);
    let mut j = 0usize;
    let arrived = |x: &[f64]| stop_radius > 0.0 && dist(x, &target) <= stop_radius;
    let halt_at = |cl: &ClosedLoop<'_, H>, x: &[f64]| -> Option<Halt> {
        if !(norm(x) <= opts.blow_up_bound) {
            return Some(Halt::BlowUp);
        }
        // A pending jump is taken before arrival is declared, so the final
        // sample always sits in the flow set.
        let xe = cl.measured(x);
        if cl.jump_enabled(&xe) {
            return Some(Halt::Jump);
        }
        if arrived(x) {
            return Some(Halt::Arrive);
        }
        if !cl.h.in_flow_set(&xe, cl.s) {
            return Some(Halt::LeaveFlowSet);
        }
        None
    };

    macro_rules! fail {
        ($e:expr) => {{
            arc.outcome = Outcome::Failed($e);
            arc.domain.intervals[j].1 = t;
            return Ok(arc);
        }};
    }

    // Records a sample at the integrator's current state (after `init`,
    // `refresh` or an accepted step).
    let record = |arc: &mut HybridArc, cl: &ClosedLoop<'_, H>, rk: &Dopri5, j: usize, at_jump: bool| {
        let x = rk.state().to_vec();
        let xe = cl.measured(&x);
        arc.samples.push(ArcPoint {
            t: rk.time(),
            j,
            in_c: cl.h.in_flow_set(&xe, cl.s),
            in_d: cl.h.in_jump_set(&xe, cl.s),
            x,
            s: cl.s,
            u: cl.last_u.clone(),
            e: cl.last_e.clone(),
            d: cl.last_d.clone(),
            xdot: rk.derivative().to_vec(),
            at_jump,
        });
    };

    // `init` probes a trial point; refresh so the cached control matches x0.
    if let Err(e) = rk.init(&mut cl, t, &x).and_then(|_| rk.refresh(&mut cl)) {
        fail!(e);
    }
    loop {
        // Events at the current point: arrival, blow-up, jump chain.
        match halt_at(&cl, &x) {
            Some(Halt::Arrive) => {
                record(&mut arc, &cl, &rk, j, false);
                arc.outcome = Outcome::Arrived(t);
                break;
            }
            Some(Halt::BlowUp) => fail!(Error::BlowUp { t, norm: norm(&x) }),
            Some(Halt::Jump) => {
                record(&mut arc, &cl, &rk, j, true);
                let e = cl.noise.apply(&x, &cl.ve);
                let (_, path) = match resolve_jump_chain(h, &x, cl.s, &e, opts.n_max) {
                    Ok(r) => r,
                    Err(Error::InstantZeno { n_max, .. }) => fail!(Error::InstantZeno { t, n_max }),
                    Err(err) => fail!(err),
                };
                let len = path.len();
                for (k, to) in path.into_iter().enumerate() {
                    arc.jumps.push(JumpRecord {
                        t,
                        j,
                        from: cl.s,
                        to,
                        x: x.clone(),
                        e: e.clone(),
                        chain_pos: k + 1,
                        chain_len: len,
                    });
                    arc.domain.intervals[j].1 = t;
                    arc.domain.intervals.push((t, t));
                    j += 1;
                    cl.s = to;
                }
                if let Err(e) = rk.reset_state(&mut cl, t, &x) {
                    fail!(e);
                }
                let xe = cl.measured(&x);
                if !h.in_flow_set(&xe, cl.s) {
                    fail!(Error::StuckState { t, x: x.clone(), label: cl.s.to_string() });
                }
            }
            Some(Halt::LeaveFlowSet) => {
                fail!(Error::StuckState { t, x: x.clone(), label: cl.s.to_string() });
            }
            None => {}
        }
        if arc.samples.last().is_none_or(|p| p.t < t || p.j != j) {
            record(&mut arc, &cl, &rk, j, false);
        }
        if t >= horizon - slack(horizon) {
            break;
        }
        // New noise sample at each macro boundary; events are re-checked
        // with it before flowing on.
        if t >= macro_end - slack(t) {
            n_macro += 1;
            macro_end = n_macro as f64 * opts.macro_step;
            let (ve, vd) = noise.draw(&mut rng, &x);
            cl.ve = ve;
            cl.vd = vd;
            if let Err(e) = rk.refresh(&mut cl) {
                fail!(e);
            }
            continue;
        }

        // One integrator step, capped by the macro-step, the horizon and the
        // distance to the stop ball.
        let r = dist(&x, &target);
        let cap = if stop_radius > 0.0 { (0.5 * (r - 0.5 * stop_radius)).max(opts.event_tol) } else { f64::INFINITY };
        rk.set_max_step(opts.integrator.max_step.min(cap));
        let t_limit = macro_end.min(horizon);
        let t_old = t;
        if let Err(e) = rk.step(&mut cl, t_limit) {
            fail!(e);
        }
        let t_new = rk.time();

        // Scan the step for the first halting point and bisect on it.
        let mut y = vec![0.0; n];
        let mut lo = t_old;
        let mut hit = None;
        for k in 1..=4 {
            let tk = t_old + (t_new - t_old) * k as f64 / 4.0;
            rk.dense(tk, &mut y);
            if halt_at(&cl, &y).is_some() {
                hit = Some(tk);
                break;
            }
            lo = tk;
        }
        if let Some(mut hi) = hit {
            while hi - lo > opts.event_tol {
                let mid = 0.5 * (lo + hi);
                rk.dense(mid, &mut y);
                if halt_at(&cl, &y).is_some() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            rk.dense(hi, &mut y);
            t = hi;
            x.copy_from_slice(&y);
            if let Err(e) = rk.reset_state(&mut cl, t, &x) {
                fail!(e);
            }
            arc.domain.intervals[j].1 = t;
            continue;
        }
        t = t_new;
        x.copy_from_slice(rk.state());
        arc.domain.intervals[j].1 = t;
    }
    arc.domain.intervals[j].1 = t;
    Ok(arc)
}

/// A failed check found by [`certify_arc`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Which condition: `flow-set`, `flow-derivative`, `label-constant`,
    /// `jump-set`, `continuity`, `jump-map`, `domain`, `noise-bound`.
    pub kind: &'static str,
    pub t: f64,
    pub j: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CertificateReport {
    pub samples: usize,
    pub jumps: usize,
    pub max_derivative_residual: f64,
    pub max_continuity_gap: f64,
    pub max_noise_ratio: f64,
    pub violations: Vec<Violation>,
}

impl CertificateReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for CertificateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples = {}", self.samples)?;
        writeln!(f, "jumps = {}", self.jumps)?;
        writeln!(f, "max_derivative_residual = {:e}", self.max_derivative_residual)?;
        writeln!(f, "max_continuity_gap = {:e}", self.max_continuity_gap)?;
        writeln!(f, "max_noise_ratio = {}", self.max_noise_ratio)?;
        writeln!(f, "violations = {}", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {} at t = {} j = {}: {}", v.kind, v.t, v.j, v.detail)?;
        }
        Ok(())
    }
}

/// Re-checks the solution conditions at every stored sample: flow-set
/// membership, the flow equation, constant labels between jumps, jump-set
/// membership, continuity across jumps, the jump map, domain structure and
/// the noise bounds.
pub fn certify_arc<H: HybridFeedback + ?Sized>(
    sys: &ControlSystem,
    arc: &HybridArc,
    h: &H,
    noise: &NoiseModel,
    tol: f64,
) -> CertificateReport {
    h.reset();
    let n = sys.n();
    let mut rep = CertificateReport { samples: arc.samples.len(), jumps: arc.jumps.len(), ..Default::default() };
    let add = |rep: &mut CertificateReport, kind, t, j, detail: String| {
        rep.violations.push(Violation { kind, t, j, detail });
    };
    let iv = &arc.domain.intervals;
    for k in 0..iv.len() {
        if iv[k].1 < iv[k].0 || (k + 1 < iv.len() && iv[k].1 != iv[k + 1].0) {
            add(&mut rep, "domain", iv[k].0, k, format!("interval {:?}", iv[k]));
        }
    }
    if iv.len() != arc.jumps.len() + 1 {
        add(&mut rep, "domain", 0.0, 0, format!("{} intervals for {} jumps", iv.len(), arc.jumps.len()));
    }
    let mut f = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let failed_at_end = arc.error().is_some();
    for (idx, p) in arc.samples.iter().enumerate() {
        let xe: Vec<f64> = p.x.iter().zip(&p.e).map(|(a, b)| a + b).collect();
        let r = noise.radius(&p.x);
        let big = norm(&p.e).max(norm(&p.d));
        if big > 0.0 {
            let ratio = if r > 0.0 { big / r } else { f64::INFINITY };
            rep.max_noise_ratio = rep.max_noise_ratio.max(ratio);
            if big > r * (1.0 + 1e-9) + 1e-15 {
                add(&mut rep, "noise-bound", p.t, p.j, format!("|e|,|d| = {big:e} > {r:e}"));
            }
        }
        if let Some(&(a, b)) = iv.get(p.j) {
            if p.t < a - 1e-12 || p.t > b + 1e-12 {
                add(&mut rep, "domain", p.t, p.j, format!("sample outside [{a}, {b}]"));
            }
        }
        if idx > 0 {
            let q = &arc.samples[idx - 1];
            if q.j == p.j && q.s != p.s {
                add(&mut rep, "label-constant", p.t, p.j, format!("{} → {} without a jump", q.s, p.s));
            }
            if p.t < q.t {
                add(&mut rep, "domain", p.t, p.j, "time decreases".into());
            }
        }
        let last = idx + 1 == arc.samples.len();
        if !p.at_jump && !(last && failed_at_end) && !h.in_flow_set(&xe, p.s) {
            add(&mut rep, "flow-set", p.t, p.j, format!("({:?}, {}) not in C", xe, p.s));
        }
        if p.at_jump && !h.in_jump_set(&xe, p.s) {
            add(&mut rep, "jump-set", p.t, p.j, format!("({:?}, {}) not in D", xe, p.s));
        }
        match h.control(&xe, p.s) {
            Ok(u) => {
                sys.dynamics_into(&p.x, u.as_slice(), &mut f, &mut scratch);
                let res: f64 = (0..n).map(|i| (p.xdot[i] - f[i] - p.d[i]).powi(2)).sum::<f64>().sqrt();
                rep.max_derivative_residual = rep.max_derivative_residual.max(res);
                if !(res <= tol) {
                    add(&mut rep, "flow-derivative", p.t, p.j, format!("residual {res:e}"));
                }
            }
            Err(e) => add(&mut rep, "flow-derivative", p.t, p.j, format!("control unavailable: {e}")),
        }
    }
    for jr in &arc.jumps {
        let xe: Vec<f64> = jr.x.iter().zip(&jr.e).map(|(a, b)| a + b).collect();
        if !h.in_jump_set(&xe, jr.from) {
            add(&mut rep, "jump-set", jr.t, jr.j, format!("({:?}, {}) not in D", xe, jr.from));
        }
        if !h.jump_targets(&xe, jr.from).contains(&jr.to) {
            add(&mut rep, "jump-map", jr.t, jr.j, format!("{} not in k_d(x, {})", jr.to, jr.from));
        }
        let before = arc.samples.iter().rev().find(|p| p.j == jr.j);
        let after = arc.samples.iter().find(|p| p.j == jr.j + 1);
        for (side, p) in [("before", before), ("after", after)] {
            let Some(p) = p else { continue };
            // Samples are taken at the jump instant on both sides.
            if p.t != jr.t {
                continue;
            }
            let gap = dist(&p.x, &jr.x);
            rep.max_continuity_gap = rep.max_continuity_gap.max(gap);
            if gap > 0.0 {
                add(&mut rep, "continuity", jr.t, jr.j, format!("state {side} jump differs by {gap:e}"));
            }
            let want = if side == "before" { jr.from } else { jr.to };
            if p.s != want && !(side == "after" && jr.chain_pos < jr.chain_len) {
                add(&mut rep, "jump-map", jr.t, jr.j, format!("sample label {} ≠ {}", p.s, want));
            }
        }
    }
    rep
}

/// Writes `t, j, x₁..x_n, s_label, u₁..u_m, |e|, |d|, in_C, in_D`.
pub fn write_arc_csv<W: Write>(out: &mut W, arc: &HybridArc, n: usize, m: usize) -> Result<()> {
    let mut head = vec!["t".to_string(), "j".to_string()];
    head.extend((1..=n).map(|i| format!("x{i}")));
    head.push("s_label".into());
    head.extend((1..=m).map(|i| format!("u{i}")));
    head.extend(["norm_e", "norm_d", "in_C", "in_D"].map(String::from));
    writeln!(out, "{}", head.join(","))?;
    for p in &arc.samples {
        let mut row = vec![format!("{:e}", p.t), p.j.to_string()];
        row.extend(p.x.iter().map(|v| format!("{v:e}")));
        row.push(p.s.to_string());
        row.extend(p.u.iter().map(|v| format!("{v:e}")));
        row.push(format!("{:e}", norm(&p.e)));
        row.push(format!("{:e}", norm(&p.d)));
        row.push(u8::from(p.in_c).to_string());
        row.push(u8::from(p.in_d).to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Writes `t, j, from, to, chain_pos, chain_len`.
pub fn write_jump_log_csv<W: Write>(out: &mut W, arc: &HybridArc) -> Result<()> {
    writeln!(out, "t,j,from,to,chain_pos,chain_len")?;
    for jr in &arc.jumps {
        writeln!(out, "{:e},{},{},{},{},{}", jr.t, jr.j, jr.from, jr.to, jr.chain_pos, jr.chain_len)?;
    }
    Ok(())
}
