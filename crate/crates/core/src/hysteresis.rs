//! Assembly of the hysteresis feedback: shells for the optimal mode, the
//! sets `C`, `D`, the maps `k`, `k_d`, the admissible noise radius `χ`,
//! and the manifest describing all of it.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::escape::{coverage_points, Envelope, EscapePatch, PatchCover, LEVELS};
use crate::hybrid::{
    execute_hybrid, BoundFn, DirectionFn, ExecOptions, HybridFeedback, Label, NoiseMode, NoiseModel, Outcome,
};
use crate::linalg::{dist, dist_inf, norm};
use crate::ode::{Dopri5, IntegratorOptions, OdeSystem};
use crate::synthesis::{MinimalTimeField, OptimalController, OptimalControllerParams, SingularSetModel};
use crate::system::{ControlSystem, ControlVector};

/// Which sets the assembled feedback uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Optimal mode flows on `clos(Ω_{ω,7})`; patches jump on `clos(Ω_{ω,1})`.
    #[default]
    Corrected,
    /// The sets exactly as written, for inspection.
    StrictPaperSets,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Corrected => "corrected",
            Mode::StrictPaperSets => "strict-paper-sets",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrected" => Ok(Mode::Corrected),
            "strict-paper-sets" => Ok(Mode::StrictPaperSets),
            _ => Err(Error::Format(format!("unknown mode {s:?}"))),
        }
    }
}

/// `Ω_{ω,l} = {x : d(x, S) > W_l}` with `W_1 > … > W_7 > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaShells {
    pub widths: [f64; LEVELS],
}

impl OmegaShells {
    pub fn new(w1: f64, step: f64) -> Result<Self> {
        let widths = std::array::from_fn(|l| w1 - step * l as f64);
        let s = Self { widths };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.widths[LEVELS - 1] > 0.0) || self.widths.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidShells(format!("widths {:?} must decrease and stay positive", self.widths)));
        }
        Ok(())
    }

    /// Membership of `Ω_{ω,l}` given `d = d(x, S)`.
    pub fn contains(&self, d: f64, l: usize) -> bool {
        d > self.widths[l - 1]
    }

    pub fn contains_closed(&self, d: f64, l: usize) -> bool {
        d >= self.widths[l - 1]
    }

    pub fn gap(&self, l: usize) -> f64 {
        self.widths[l - 1] - self.widths[l]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaParams {
    pub w1: f64,
    pub step: f64,
    pub seeds: usize,
    /// Runs stop here at the latest.
    pub horizon: f64,
    /// Runs stop once `d(x, S)` reaches this.
    pub release: f64,
    pub retries: usize,
    /// Factor applied to `w1` and `step` after a failed certification.
    pub widen: f64,
    pub seed: u64,
    pub integrator: IntegratorOptions,
}

impl Default for OmegaParams {
    fn default() -> Self {
        Self {
            w1: 0.024,
            step: 0.003,
            seeds: 100,
            horizon: 0.5,
            release: 0.1,
            retries: 2,
            widen: 1.25,
            seed: 2,
            integrator: IntegratorOptions { abs_tol: 1e-9, rel_tol: 1e-9, max_step: 1e-2, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaCertificate {
    pub runs: usize,
    /// Smallest `d(x, S) − W_{l+1}` seen along any run.
    pub min_margin: f64,
}

struct OmegaFlow<'a> {
    sys: &'a ControlSystem,
    ctl: &'a OptimalController,
    scratch: Vec<f64>,
}

impl OdeSystem for OmegaFlow<'_> {
    fn dim(&self) -> usize {
        self.sys.n()
    }

    fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let u = self.ctl.control(y)?;
        self.sys.dynamics_into(y, u.as_slice(), dy, &mut self.scratch);
        Ok(())
    }
}

/// Seed with `d(x, S)` just above `w`, on a random ray from a random
/// flagged cell, inside the covered part of the grid.
fn shell_seed(model: &SingularSetModel, field: &MinimalTimeField, w: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let centers = model.centers();
    loop {
        let c = &centers[rng.random_range(0..centers.len())];
        let v: Vec<f64> = (0..c.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let s = norm(&v);
        let at = |t: f64| -> Vec<f64> { c.iter().zip(&v).map(|(ci, vi)| ci + t * vi / s).collect() };
        let mut lo = 0.0;
        let mut hi = 0.0;
        while hi < 1.0 {
            hi += 0.005;
            if model.distance(&at(hi)) > w {
                break;
            }
            lo = hi;
        }
        if hi >= 1.0 {
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if model.distance(&at(mid)) > w {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let p = at(hi);
        if field.nearest_node(&p).is_some_and(|i| field.is_covered(i))
            && p.iter().zip(&field.grid.min).zip(&field.grid.max).all(|((x, a), b)| x >= a && x <= b)
        {
            return p;
        }
    }
}

/// Zero-noise optimal-mode runs from `seeds` points near each `∂Ω_{ω,l}`,
/// `l ≤ 6`: every run must stay in `Ω_{ω,l+1}` until it is `release` away
/// from S, reaches the target, or hits the horizon.
pub fn certify_omega_shells(
    sys: &ControlSystem,
    ctl: &OptimalController,
    field: &MinimalTimeField,
    model: &SingularSetModel,
    shells: &OmegaShells,
    params: &OmegaParams,
) -> Result<OmegaCertificate> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut cert = OmegaCertificate { runs: 0, min_margin: f64::INFINITY };
    if model.is_empty() {
        return Ok(cert);
    }
    let n = sys.n();
    let target = sys.target().to_vec();
    let mut y = vec![0.0; n];
    for l in 1..LEVELS {
        for _ in 0..params.seeds {
            let x0 = shell_seed(model, field, shells.widths[l - 1], &mut rng);
            ctl.reset();
            let mut flow = OmegaFlow { sys, ctl, scratch: vec![0.0; n] };
            let mut rk = Dopri5::new(n, &params.integrator);
            let fail = |t: f64, x: &[f64], why: String| {
                Error::ShellCertificationFailure(format!("level {l}, seed {x0:?}, t = {t}, x = {x:?}: {why}"))
            };
            rk.init(&mut flow, 0.0, &x0).map_err(|e| fail(0.0, &x0, e.to_string()))?;
            let mut t = 0.0;
            'run: while t < params.horizon {
                let r = dist(rk.state(), &target);
                if r < 1e-3 {
                    break;
                }
                rk.set_max_step(params.integrator.max_step.min(0.5 * r));
                let t_old = t;
                t = rk.step(&mut flow, params.horizon).map_err(|e| fail(t_old, &x0, e.to_string()))?;
                for k in 1..=4 {
                    rk.dense(t_old + (t - t_old) * k as f64 / 4.0, &mut y);
                    let d = model.distance(&y);
                    cert.min_margin = cert.min_margin.min(d - shells.widths[l]);
                    if !shells.contains(d, l + 1) {
                        return Err(fail(t, &y, format!("left Ω_(ω,{}) with d(x, S) = {d}", l + 1)));
                    }
                    if d >= params.release {
                        break 'run;
                    }
                }
            }
            cert.runs += 1;
        }
    }
    Ok(cert)
}

/// Builds and certifies the optimal-mode shells. A failed certification
/// widens the shells, provided the patch cover still covers the new
/// neighbourhood of S.
pub fn build_omega_shells(
    sys: &ControlSystem,
    ctl: &OptimalController,
    field: &MinimalTimeField,
    model: &SingularSetModel,
    cover: &PatchCover,
    params: &OmegaParams,
) -> Result<(OmegaShells, OmegaCertificate)> {
    let (mut w1, mut step) = (params.w1, params.step);
    let mut last = None;
    for _ in 0..=params.retries {
        let shells = OmegaShells::new(w1, step)?;
        if !model.is_empty() {
            let uncovered = coverage_points(model, w1).into_iter().find(|p| !cover.patches.iter().any(|q| q.in_shell(p, 1)));
            if let Some(p) = uncovered {
                return Err(last.unwrap_or(Error::Uncovered(p)));
            }
        }
        match certify_omega_shells(sys, ctl, field, model, &shells, params) {
            Ok(c) => return Ok((shells, c)),
            Err(e @ Error::ShellCertificationFailure(_)) => {
                log::warn!("{e}");
                last = Some(e);
                w1 *= params.widen;
                step *= params.widen;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::ShellCertificationFailure("no attempt".into())))
}

/// Parameters of `χ(x) = φ(x)·factor·min_α χ_α(x)`, `φ = min(1, |x − x̄| / phi_radius)^phi_power`.
fn default_phi_power() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiParams {
    pub factor: f64,
    pub phi_radius: f64,
    /// Quadratic decay keeps the noise below the `|x − x̄|²` scale of the
    /// bracket direction near the target.
    #[serde(default = "default_phi_power")]
    pub phi_power: f64,
    /// `ρ_opt(d) = rho_opt_slope·d` on the optimal shells.
    pub rho_opt_slope: f64,
    /// Growth of each label's bound outside its outermost shell, which
    /// keeps `χ` continuous where a constraint stops applying.
    pub lift: f64,
}

impl Default for ChiParams {
    fn default() -> Self {
        Self { factor: 0.9, phi_radius: 0.1, phi_power: 2.0, rho_opt_slope: 0.5, lift: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerManifest {
    pub r_near: f64,
    pub time_slack: f64,
    pub zero_radius: f64,
    pub rescale_radius: f64,
}

impl Default for ControllerManifest {
    fn default() -> Self {
        let p = OptimalControllerParams::default();
        Self { r_near: p.r_near, time_slack: p.time_slack, zero_radius: p.zero_radius, rescale_radius: p.rescale_radius }
    }
}

/// Everything needed to rebuild the feedback from the time field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackManifest {
    pub mode: Mode,
    pub epsilon: f64,
    pub levels: usize,
    pub omega: OmegaShells,
    pub omega_certificate: Option<OmegaCertificate>,
    pub chi: ChiParams,
    pub controller: ControllerManifest,
    /// `δ(R)`, sup-norm excursion envelope.
    pub delta: Envelope,
    /// `τ(R)`, uniform arrival-time bound.
    pub tau: Envelope,
    pub max_overlap: usize,
    pub coverage_points: usize,
    pub components: Vec<Vec<usize>>,
    pub notes: Vec<String>,
    pub patches: Vec<EscapePatch>,
}

impl FeedbackManifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn cover(&self) -> PatchCover {
        PatchCover {
            patches: self.patches.clone(),
            components: self.components.clone(),
            coverage_points: self.coverage_points,
            max_overlap: self.max_overlap,
            epsilon: self.epsilon,
        }
    }
}

/// The hysteresis feedback `(C, D, k, k_d)` built from the patch cover, the
/// optimal shells and the optimal controller.
#[derive(Debug, Clone)]
pub struct AssembledFeedback {
    pub mode: Mode,
    pub omega: OmegaShells,
    pub patches: Arc<Vec<EscapePatch>>,
    pub chi: ChiParams,
    model: Arc<SingularSetModel>,
    controller: OptimalController,
    target: Vec<f64>,
    m: usize,
}

pub fn controller_params(m: &ControllerManifest) -> OptimalControllerParams {
    OptimalControllerParams {
        r_near: m.r_near,
        time_slack: m.time_slack,
        zero_radius: m.zero_radius,
        rescale_radius: m.rescale_radius,
        ..Default::default()
    }
}

/// Builds the feedback; `assemble_feedback` in the pipeline.
pub fn assemble_feedback(
    sys: Arc<ControlSystem>,
    field: Arc<MinimalTimeField>,
    model: Arc<SingularSetModel>,
    manifest: &FeedbackManifest,
) -> Result<AssembledFeedback> {
    manifest.omega.validate()?;
    if manifest.levels != LEVELS {
        return Err(Error::InvalidShells(format!("{} levels, expected {LEVELS}", manifest.levels)));
    }
    let target = sys.target().to_vec();
    let m = sys.m();
    let controller = OptimalController::new(sys, field, controller_params(&manifest.controller));
    let fb = AssembledFeedback {
        mode: manifest.mode,
        omega: manifest.omega.clone(),
        patches: Arc::new(manifest.patches.clone()),
        chi: manifest.chi.clone(),
        model,
        controller,
        target,
        m,
    };
    fb.check_gaps()?;
    Ok(fb)
}

impl AssembledFeedback {
    pub fn model(&self) -> &SingularSetModel {
        &self.model
    }

    pub fn controller(&self) -> &OptimalController {
        &self.controller
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    fn patch(&self, s: Label) -> Option<&EscapePatch> {
        match s {
            Label::Patch(i) => self.patches.get(i),
            Label::Omega => None,
        }
    }

    /// `x ∈ Ω_{α,l}`, with `d = d(x, S)` precomputed.
    fn shell(&self, x: &[f64], d: f64, a: Label, l: usize) -> bool {
        match self.patch(a) {
            Some(p) => p.in_shell(x, l),
            None => self.omega.contains(d, l),
        }
    }

    fn shell_closed(&self, x: &[f64], d: f64, a: Label, l: usize) -> bool {
        match self.patch(a) {
            Some(p) => p.in_shell_closed(x, l),
            None => self.omega.contains_closed(d, l),
        }
    }

    /// `x ∈ Ω_{α,l}`.
    pub fn in_shell(&self, x: &[f64], a: Label, l: usize) -> bool {
        self.shell(x, self.model.distance(x), a, l)
    }

    fn check_gaps(&self) -> Result<()> {
        for l in 1..LEVELS {
            if !(self.omega.gap(l) > 0.0) {
                return Err(Error::InvalidShells(format!("optimal shells: gap {} at level {l}", self.omega.gap(l))));
            }
            for p in self.patches.iter() {
                if !(p.gap(l) > 0.0) {
                    return Err(Error::InvalidShells(format!("patch {}: gap {} at level {l}", p.index, p.gap(l))));
                }
            }
        }
        Ok(())
    }

    /// Smallest distance the state must travel between a jump into a patch
    /// and the jump back to the optimal mode.
    pub fn hysteresis_separation(&self) -> f64 {
        let back = match self.mode {
            Mode::Corrected => self.omega.widths[0],
            Mode::StrictPaperSets => self.omega.widths[1],
        };
        back - self.omega.widths[5]
    }

    /// Patch whose innermost shell holds `x` most deeply.
    pub fn nearest_patch(&self, x: &[f64]) -> Option<Label> {
        self.patches
            .iter()
            .min_by(|a, b| (a.scaled_norm(x) / a.radii[0]).total_cmp(&(b.scaled_norm(x) / b.radii[0])))
            .map(|p| Label::Patch(p.index))
    }

    /// The admissible noise radius `χ`.
    pub fn chi(&self, x: &[f64]) -> f64 {
        let r = dist(x, &self.target);
        let phi = (r / self.chi.phi_radius).min(1.0).powf(self.chi.phi_power);
        if phi == 0.0 {
            return 0.0;
        }
        let d = self.model.distance(x);
        let lift = self.chi.lift;
        let half_gap_omega = 0.5 * (1..LEVELS).map(|l| self.omega.gap(l)).fold(f64::INFINITY, f64::min);
        let mut m = half_gap_omega.min(self.chi.rho_opt_slope * d) + lift * (self.omega.widths[LEVELS - 1] - d).max(0.0);
        for p in self.patches.iter() {
            let s = p.scaled_norm(x);
            let outside = (s - p.radii[LEVELS - 1]).max(0.0);
            if lift * outside >= m {
                continue;
            }
            let half_gap = 0.5 * (1..LEVELS).map(|l| p.gap(l)).fold(f64::INFINITY, f64::min);
            m = m.min(half_gap.min(p.margin(x)) + lift * outside);
        }
        phi * self.chi.factor * m
    }

    /// Seeded or adversarial noise at `scale·χ`; the adversary points at S.
    pub fn noise_model(&self, mode: NoiseMode, scale: f64, seed: u64) -> NoiseModel {
        let me = self.clone();
        let bound: BoundFn = Arc::new(move |x: &[f64]| me.chi(x));
        let model = self.model.clone();
        let toward: DirectionFn = Arc::new(move |x: &[f64]| {
            let p = model.nearest_point(x)?;
            let d = dist(&p, x);
            (d > 0.0).then(|| p.iter().zip(x).map(|(a, b)| (a - b) / d).collect())
        });
        match mode {
            NoiseMode::Zero => NoiseModel::zero(),
            NoiseMode::Seeded => NoiseModel::seeded(seed, scale, bound),
            NoiseMode::Adversarial => NoiseModel::adversarial(scale, bound, toward),
        }
    }
}

impl HybridFeedback for AssembledFeedback {
    fn labels(&self) -> Vec<Label> {
        std::iter::once(Label::Omega).chain((0..self.patches.len()).map(Label::Patch)).collect()
    }

    fn in_flow_set(&self, x: &[f64], s: Label) -> bool {
        let d = self.model.distance(x);
        match (self.mode, s) {
            (Mode::Corrected, Label::Omega) => self.omega.contains_closed(d, LEVELS),
            _ => self.shell_closed(x, d, s, 4) && !self.omega.contains(d, 1),
        }
    }

    fn in_jump_set(&self, x: &[f64], s: Label) -> bool {
        let d = self.model.distance(x);
        let d1 = match (self.mode, s) {
            (Mode::Corrected, Label::Patch(_)) => self.omega.contains_closed(d, 1),
            _ => self.omega.contains(d, 2),
        };
        d1 || !self.shell(x, d, s, 6)
    }

    fn control(&self, x: &[f64], s: Label) -> Result<ControlVector> {
        let d = self.model.distance(x);
        if !self.shell(x, d, s, LEVELS) {
            return Ok(ControlVector::zero(self.m));
        }
        match self.patch(s) {
            Some(p) => Ok(p.control(x)),
            None => self.controller.control(x),
        }
    }

    fn jump_targets(&self, x: &[f64], s: Label) -> Vec<Label> {
        let d = self.model.distance(x);
        let in_d2 = !self.shell(x, d, s, 6);
        let mut out = Vec::new();
        if !in_d2 {
            // clos(Ω_{ω,1} ∩ D₁) = clos(Ω_{ω,1}) since Ω_{ω,1} ⊂ Ω_{ω,2}.
            if self.omega.contains_closed(d, 1) {
                out.push(Label::Omega);
            }
            return out;
        }
        for a in self.labels() {
            if self.shell_closed(x, d, a, 1) {
                out.push(a);
            }
        }
        out
    }

    fn reset(&self) {
        self.controller.reset();
    }
}

/// `δ(R)` from zero-noise runs on a coarse grid of the box, started in the
/// optimal mode and, near S, in the nearest patch; `τ(R)` from the largest
/// `T̂` on the grid nodes in the sup-norm ball of radius `R`, plus `2ε`.
pub fn build_envelopes(
    sys: &ControlSystem,
    fb: &AssembledFeedback,
    field: &MinimalTimeField,
    epsilon: f64,
    per_axis: usize,
    opts: &ExecOptions,
) -> Result<(Envelope, Envelope)> {
    let target = sys.target().to_vec();
    let n = sys.n();
    let mut samples = Vec::new();
    let total = per_axis.pow(n as u32);
    for k in 0..total {
        let mut q = k;
        let x0: Vec<f64> = (0..n)
            .map(|i| {
                let j = q % per_axis;
                q /= per_axis;
                let (a, b) = (field.grid.min[i], field.grid.max[i]);
                a + (b - a) * j as f64 / (per_axis - 1).max(1) as f64
            })
            .collect();
        let s0 = if fb.in_flow_set(&x0, Label::Omega) { Label::Omega } else { fb.nearest_patch(&x0).unwrap_or(Label::Omega) };
        let t_max = field.time_hat(&x0).unwrap_or(0.0) + 2.0 * epsilon + 1.0;
        let arc = execute_hybrid(sys, fb, &x0, s0, &NoiseModel::zero(), t_max, 1e-3, opts)?;
        if let Outcome::Failed(e) = &arc.outcome {
            log::warn!("envelope run from {x0:?} failed: {e}");
        }
        samples.push((dist_inf(&x0, &target), arc.max_excursion(&target)));
    }
    let delta = Envelope::fit(&samples, 1.05, 0.05);

    let mut tsamples: Vec<(f64, f64)> = (0..field.len())
        .filter(|&i| field.is_covered(i))
        .map(|i| (dist_inf(&field.node_coords(i), &target), field.t[i]))
        .collect();
    // A point of the ball interpolates nodes up to one cell further out.
    for t in tsamples.iter_mut() {
        t.0 = (t.0 - field.grid.h).max(0.0);
    }
    tsamples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut knots = vec![(0.0f64, 2.0 * epsilon)];
    let mut run = 0.0f64;
    for (r, t) in tsamples {
        run = run.max(t);
        match knots.last_mut() {
            Some(last) if (last.0 - r).abs() < 1e-12 => last.1 = run + 2.0 * epsilon,
            _ => knots.push((r, run + 2.0 * epsilon)),
        }
    }
    Ok((delta, Envelope { knots }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_round_trip() {
        for m in [Mode::Corrected, Mode::StrictPaperSets] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("literal".parse::<Mode>().is_err());
    }

    #[test]
    fn omega_shells_nest() {
        let s = OmegaShells::new(0.024, 0.003).unwrap();
        assert!((s.widths[6] - 0.006).abs() < 1e-15);
        for l in 1..LEVELS {
            assert!(s.gap(l) > 0.0);
            // clos(Ω_l) = {d ≥ W_l} ⊂ {d > W_{l+1}} = Ω_{l+1}
            assert!(s.contains(s.widths[l - 1], l + 1));
        }
        assert!(OmegaShells::new(0.01, 0.003).is_err());
    }
}
