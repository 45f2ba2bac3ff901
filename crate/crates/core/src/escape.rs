//! Escape patches around the singular set: nested ellipsoidal shells, a
//! constant-direction controller cut off near the outer shell, and a
//! noise margin certified by adversarial simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, dist_inf, norm};
use crate::ode::{Dopri5, IntegratorOptions, OdeSystem};
use crate::synthesis::{MinimalTimeField, SingularSetModel};
use crate::system::{ControlSystem, ControlVector};

pub const LEVELS: usize = 7;

/// `{x : ‖(x − c) / w‖ < r}` with per-axis weights `w ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: Vec<f64>,
    pub weights: Vec<f64>,
    pub radius: f64,
}

impl Ellipsoid {
    pub fn scaled_norm(&self, x: &[f64]) -> f64 {
        scaled_norm(&self.center, &self.weights, x)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.scaled_norm(x) < self.radius
    }

    pub fn contains_closed(&self, x: &[f64]) -> bool {
        self.scaled_norm(x) <= self.radius
    }

    /// Point of the boundary in direction `v` (any nonzero vector).
    pub fn boundary_point(&self, v: &[f64]) -> Vec<f64> {
        let s = norm(v);
        self.center.iter().zip(&self.weights).zip(v).map(|((c, w), vi)| c + self.radius * w * vi / s).collect()
    }
}

fn scaled_norm(c: &[f64], w: &[f64], x: &[f64]) -> f64 {
    x.iter().zip(c).zip(w).map(|((xi, ci), wi)| ((xi - ci) / wi).powi(2)).sum::<f64>().sqrt()
}

/// `C^∞` step: 1 for `s ≤ 0`, 0 for `s ≥ 1`.
pub fn smooth_cutoff(s: f64) -> f64 {
    let f = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        f(1.0 - s) / (f(1.0 - s) + f(s))
    }
}

/// Nondecreasing piecewise-linear envelope through `(0, 0)`, extended
/// linearly past the last knot with slope at least 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Envelope {
    pub knots: Vec<(f64, f64)>,
}

impl Envelope {
    /// Fits `(R, excursion)` samples: running maximum, scaled by `factor`,
    /// plus `pad`.
    pub fn fit(samples: &[(f64, f64)], factor: f64, pad: f64) -> Self {
        let mut s: Vec<(f64, f64)> = samples.iter().copied().filter(|(r, v)| *r > 0.0 && r.is_finite() && v.is_finite()).collect();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut knots = vec![(0.0f64, 0.0f64)];
        let mut run = 0.0f64;
        for (r, v) in s {
            run = run.max(v);
            let val = factor * run + pad;
            match knots.last_mut() {
                Some(last) if last.0 == r => last.1 = last.1.max(val),
                _ => knots.push((r, val)),
            }
        }
        Self { knots }
    }

    pub fn eval(&self, r: f64) -> f64 {
        let k = &self.knots;
        if k.len() < 2 {
            return r;
        }
        for w in k.windows(2) {
            if r <= w[1].0 {
                let f = (r - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + f * (w[1].1 - w[0].1);
            }
        }
        let (a, b) = (k[k.len() - 2], k[k.len() - 1]);
        let slope = ((b.1 - a.1) / (b.0 - a.0)).max(1.0);
        b.1 + slope * (r - b.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeParams {
    /// Radius of the innermost shell.
    pub r1: f64,
    /// Axis weights of the shells.
    pub weights: Vec<f64>,
    /// `r_l = r1·(1 + growth·(l − 1))`.
    pub growth: f64,
    /// Spacing of patch centres along a component.
    pub spacing: f64,
    pub n_directions: usize,
    pub n_extremal: usize,
    /// Seeds per shell in the certification.
    pub seeds: usize,
    /// Initial noise margin.
    pub rho0: f64,
    pub rho_halvings: usize,
    /// Zero-noise exit from the centre must happen before this fraction of ε.
    pub prescreen_fraction: f64,
    /// Radius halvings per centre after a failed search.
    pub retries: usize,
    /// The margin vanishes linearly inside this distance of x̄.
    pub bump_radius: f64,
    /// Trajectories count as released from S at this distance.
    pub release_width: f64,
    pub seed: u64,
    pub macro_step: f64,
    pub integrator: IntegratorOptions,
}

impl Default for EscapeParams {
    fn default() -> Self {
        Self {
            r1: 0.11,
            weights: vec![1.0, 1.0, 2.0],
            growth: 0.4,
            spacing: 0.11,
            n_directions: 16,
            n_extremal: 8,
            seeds: 100,
            rho0: 0.07,
            rho_halvings: 6,
            prescreen_fraction: 0.75,
            retries: 5,
            bump_radius: 0.1,
            release_width: 0.024,
            seed: 1,
            macro_step: 1e-2,
            integrator: IntegratorOptions { abs_tol: 1e-9, rel_tol: 1e-9, max_step: 1e-2, ..Default::default() },
        }
    }
}

impl EscapeParams {
    pub fn radii(&self, r1: f64) -> [f64; LEVELS] {
        std::array::from_fn(|l| r1 * (1.0 + self.growth * l as f64))
    }
}

/// One escape patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapePatch {
    pub index: usize,
    pub component: usize,
    pub center: Vec<f64>,
    pub weights: Vec<f64>,
    pub radii: [f64; LEVELS],
    /// Unit control used inside `Ω_{y,6}`.
    pub direction: Vec<f64>,
    /// Constant factor of the noise margin.
    pub rho: f64,
    pub bump_radius: f64,
    /// Target point, where the margin vanishes.
    pub target: Vec<f64>,
    /// Largest certified exit time from the singular mask.
    pub tau: f64,
    /// Excursion envelope of the certified runs.
    pub delta: Envelope,
    pub certified_seeds: usize,
}

impl EscapePatch {
    /// `Ω_{y,l}`, `l = 1..=7`.
    pub fn shell(&self, l: usize) -> Ellipsoid {
        Ellipsoid { center: self.center.clone(), weights: self.weights.clone(), radius: self.radii[l - 1] }
    }

    pub fn scaled_norm(&self, x: &[f64]) -> f64 {
        scaled_norm(&self.center, &self.weights, x)
    }

    pub fn in_shell(&self, x: &[f64], l: usize) -> bool {
        self.scaled_norm(x) < self.radii[l - 1]
    }

    pub fn in_shell_closed(&self, x: &[f64], l: usize) -> bool {
        self.scaled_norm(x) <= self.radii[l - 1]
    }

    /// Euclidean distance between `∂Ω_{y,l}` and `∂Ω_{y,l+1}`.
    pub fn gap(&self, l: usize) -> f64 {
        let wmin = self.weights.iter().copied().fold(f64::INFINITY, f64::min);
        (self.radii[l] - self.radii[l - 1]) * wmin
    }

    /// `k_y`: the direction, smoothly switched off between `r₆` and `r₇`.
    pub fn control(&self, x: &[f64]) -> ControlVector {
        let s = (self.scaled_norm(x) - self.radii[5]) / (self.radii[6] - self.radii[5]);
        let c = smooth_cutoff(s);
        ControlVector::raw(self.direction.iter().map(|d| c * d).collect())
    }

    /// `ρ_y(x) = ρ·min(1, |x − x̄| / r_b)`.
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.rho * (dist(x, &self.target) / self.bump_radius).min(1.0)
    }
}

/// Patches over all components of the singular set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchCover {
    pub patches: Vec<EscapePatch>,
    /// Index sets per component.
    pub components: Vec<Vec<usize>>,
    /// Sample points of the neighbourhood of S that were checked.
    pub coverage_points: usize,
    /// Largest number of `Ω_{α,1}` containing one coverage point.
    pub max_overlap: usize,
    pub epsilon: f64,
}

impl PatchCover {
    pub fn empty(epsilon: f64) -> Self {
        Self { patches: vec![], components: vec![], coverage_points: 0, max_overlap: 0, epsilon }
    }
}

/// Flow of one patch under a held adversarial perturbation.
struct PatchFlow<'a> {
    sys: &'a ControlSystem,
    patch: &'a EscapePatch,
    model: &'a SingularSetModel,
    scale: f64,
    v: Vec<f64>,
    scratch: Vec<f64>,
}

impl PatchFlow<'_> {
    fn redraw(&mut self, x: &[f64]) {
        self.v = match self.model.nearest_point(x) {
            Some(p) if dist(&p, x) > 0.0 => {
                let d = dist(&p, x);
                p.iter().zip(x).map(|(a, b)| (a - b) / d).collect()
            }
            // Inside S: push back towards the patch centre.
            _ => {
                let d = dist(&self.patch.center, x);
                if d > 0.0 {
                    self.patch.center.iter().zip(x).map(|(a, b)| (a - b) / d).collect()
                } else {
                    vec![0.0; x.len()]
                }
            }
        };
    }
}

impl OdeSystem for PatchFlow<'_> {
    fn dim(&self) -> usize {
        self.sys.n()
    }

    fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let r = self.scale * self.patch.margin(y);
        let xe: Vec<f64> = y.iter().zip(&self.v).map(|(a, b)| a + r * b).collect();
        let u = self.patch.control(&xe);
        self.sys.dynamics_into(y, u.as_slice(), dy, &mut self.scratch);
        for (o, vi) in dy.iter_mut().zip(&self.v) {
            *o += r * vi;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct EscapeRun {
    exit_time: Option<f64>,
    released: bool,
    /// Stayed in `clos(Ω_{y,l+1})` until release.
    nested: bool,
    excursion: f64,
}

/// Simulates `ẋ = f(x, k_y(x + e)) + d` with `|e|, |d| ≤ scale·ρ_y(x)`
/// pointing towards S, until the state leaves the singular mask or
/// `t_max`. With `level = Some(l)` it also checks that the state stays in
/// `clos(Ω_{y,l+1})` until `d(x, S) ≥ release_width`, and stops at release.
fn run_escape(
    sys: &ControlSystem,
    patch: &EscapePatch,
    field: &MinimalTimeField,
    model: &SingularSetModel,
    x0: &[f64],
    scale: f64,
    level: Option<usize>,
    t_max: f64,
    params: &EscapeParams,
) -> Result<EscapeRun> {
    let n = sys.n();
    let mut flow = PatchFlow { sys, patch, model, scale, v: vec![0.0; n], scratch: vec![0.0; n] };
    flow.redraw(x0);
    let released = |x: &[f64]| model.distance(x) >= params.release_width;
    let mut run = EscapeRun { exit_time: None, released: released(x0), nested: true, excursion: dist_inf(x0, &patch.target) };
    if let Some(l) = level {
        if run.released {
            return Ok(run);
        }
        if !patch.in_shell_closed(x0, l + 1) {
            run.nested = false;
            return Ok(run);
        }
    } else if !field.in_singular_mask(x0) {
        run.exit_time = Some(0.0);
        return Ok(run);
    }
    let mut rk = Dopri5::new(n, &params.integrator);
    rk.init(&mut flow, 0.0, x0)?;
    let mut t = 0.0;
    let mut k_macro = 1u64;
    let mut y = vec![0.0; n];
    while t < t_max {
        let t_limit = (k_macro as f64 * params.macro_step).min(t_max);
        let t_old = t;
        t = rk.step(&mut flow, t_limit)?;
        for k in 1..=4 {
            let tk = t_old + (t - t_old) * k as f64 / 4.0;
            rk.dense(tk, &mut y);
            run.excursion = run.excursion.max(dist_inf(&y, &patch.target));
            match level {
                Some(l) => {
                    if !patch.in_shell_closed(&y, l + 1) {
                        run.nested = false;
                        return Ok(run);
                    }
                    if released(&y) {
                        run.released = true;
                        return Ok(run);
                    }
                }
                None => {
                    if !field.in_singular_mask(&y) {
                        // Bisect the exit on the mask indicator.
                        let (mut lo, mut hi) = (t_old + (t - t_old) * (k - 1) as f64 / 4.0, tk);
                        while hi - lo > 1e-8 {
                            let mid = 0.5 * (lo + hi);
                            rk.dense(mid, &mut y);
                            if field.in_singular_mask(&y) {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        run.exit_time = Some(hi);
                        return Ok(run);
                    }
                }
            }
        }
        if t >= k_macro as f64 * params.macro_step - 1e-12 {
            k_macro += 1;
            flow.redraw(rk.state());
            rk.refresh(&mut flow)?;
        }
    }
    Ok(run)
}

/// Seeds on `∂Ω_{y,l}` from normalised Gaussian directions.
fn boundary_seeds(patch: &EscapePatch, l: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let shell = patch.shell(l);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..patch.center.len()).map(|_| rng.sample(StandardNormal)).collect();
            shell.boundary_point(&v)
        })
        .collect()
}

fn candidate_directions(sys: &ControlSystem, y: &[f64], params: &EscapeParams, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let m = sys.m();
    let mut out = Vec::new();
    if m == 2 {
        for k in 0..params.n_directions {
            let a = std::f64::consts::TAU * k as f64 / params.n_directions as f64;
            out.push(vec![a.cos(), a.sin()]);
        }
    } else {
        for i in 0..m {
            for s in [1.0, -1.0] {
                let mut u = vec![0.0; m];
                u[i] = s;
                out.push(u);
            }
        }
    }
    // Initial controls of extremals from y: u_i = ⟨p, f_i(y)⟩ / H.
    for _ in 0..params.n_extremal {
        let p: Vec<f64> = (0..sys.n()).map(|_| rng.sample(StandardNormal)).collect();
        let u: Vec<f64> = (0..m).map(|i| crate::linalg::dot(&p, &sys.field(i, y))).collect();
        let h = norm(&u);
        if h > 1e-9 {
            out.push(u.iter().map(|c| c / h).collect());
        }
    }
    out
}

/// Searches a control direction for the patch at `y` and certifies it.
///
/// Candidates must leave the singular mask from `y` before
/// `prescreen_fraction·ε` without noise; they are ranked by nesting failures
/// and worst exit time on the innermost certification seeds. The winner is certified
/// on `seeds` points of every `∂Ω_{y,l}`; the margin is halved until the
/// certification passes.
pub fn build_escape_patch(
    sys: &ControlSystem,
    field: &MinimalTimeField,
    model: &SingularSetModel,
    y: &[f64],
    r1: f64,
    epsilon: f64,
    params: &EscapeParams,
) -> Result<EscapePatch> {
    if !(epsilon > 0.0) {
        return Err(Error::EscapeSearchFailure { center: y.to_vec() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ seed_of(y));
    let mut patch = EscapePatch {
        index: 0,
        component: 0,
        center: y.to_vec(),
        weights: params.weights.clone(),
        radii: params.radii(r1),
        direction: vec![0.0; sys.m()],
        rho: params.rho0,
        bump_radius: params.bump_radius,
        target: sys.target().to_vec(),
        tau: 0.0,
        delta: Envelope::default(),
        certified_seeds: 0,
    };

    let seeds: Vec<Vec<Vec<f64>>> = (1..LEVELS).map(|l| boundary_seeds(&patch, l, params.seeds, &mut rng)).collect();
    let mut best: Option<((usize, f64), Vec<f64>)> = None;
    for dir in candidate_directions(sys, y, params, &mut rng) {
        patch.direction = dir.clone();
        let pre = run_escape(sys, &patch, field, model, y, 0.0, None, epsilon, params)?;
        if !pre.exit_time.is_some_and(|t| t < params.prescreen_fraction * epsilon) {
            continue;
        }
        let mut fails = 0;
        let mut worst = 0.0f64;
        for s in &seeds[0] {
            let r = run_escape(sys, &patch, field, model, s, 1.0, None, epsilon, params)?;
            worst = worst.max(r.exit_time.unwrap_or(f64::INFINITY));
            let r = run_escape(sys, &patch, field, model, s, 1.0, Some(1), epsilon, params)?;
            fails += usize::from(!(r.nested && r.released));
        }
        let key = (fails, worst);
        if best.as_ref().is_none_or(|(k, _)| key < *k) {
            best = Some((key, dir));
        }
    }
    let Some((_, dir)) = best else {
        return Err(Error::EscapeSearchFailure { center: y.to_vec() });
    };
    patch.direction = dir;

    let mut scale = 1.0;
    for _ in 0..=params.rho_halvings {
        if let Some((tau, samples)) = certify(sys, &patch, field, model, &seeds, scale, epsilon, params)? {
            patch.rho = params.rho0 * scale;
            patch.tau = tau;
            patch.delta = Envelope::fit(&samples, 1.05, 0.05);
            patch.certified_seeds = params.seeds;
            return Ok(patch);
        }
        scale *= 0.5;
    }
    Err(Error::EscapeSearchFailure { center: y.to_vec() })
}

/// Runs the certification at margin `rho0·scale`. Returns the worst exit
/// time and the `(R, excursion)` samples, or `None` on any failure.
fn certify(
    sys: &ControlSystem,
    patch: &EscapePatch,
    field: &MinimalTimeField,
    model: &SingularSetModel,
    seeds: &[Vec<Vec<f64>>],
    scale: f64,
    epsilon: f64,
    params: &EscapeParams,
) -> Result<Option<(f64, Vec<(f64, f64)>)>> {
    let mut tau = 0.0f64;
    let mut samples = Vec::new();
    for s in &seeds[0] {
        let r = run_escape(sys, patch, field, model, s, scale, None, epsilon, params)?;
        match r.exit_time {
            Some(t) if t < epsilon => tau = tau.max(t),
            _ => return Ok(None),
        }
        samples.push((dist_inf(s, &patch.target), r.excursion));
    }
    for (l, level) in seeds.iter().enumerate() {
        for s in level {
            let r = run_escape(sys, patch, field, model, s, scale, Some(l + 1), epsilon, params)?;
            if !(r.nested && r.released) {
                return Ok(None);
            }
        }
    }
    Ok(Some((tau, samples)))
}

fn seed_of(y: &[f64]) -> u64 {
    y.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3))
}

/// Points of the closed `release_width` neighbourhood of the flagged
/// cells inside the grid box: a 5ⁿ lattice per cell (centre, faces and the
/// dilated faces), filtered by distance.
pub fn coverage_points(model: &SingularSetModel, release_width: f64) -> Vec<Vec<f64>> {
    let n = model.grid.min.len();
    let half = 0.5 * model.grid.h;
    let offs = [-(half + release_width), -half, 0.0, half, half + release_width];
    let mut out = Vec::new();
    for c in model.centers() {
        for k in 0..5usize.pow(n as u32) {
            let mut q = k;
            let mut p = c.clone();
            for v in p.iter_mut() {
                *v += offs[q % 5];
                q /= 5;
            }
            let inside = p.iter().zip(&model.grid.min).zip(&model.grid.max).all(|((v, lo), hi)| v >= lo && v <= hi);
            if inside && model.distance(&p) <= release_width {
                out.push(p);
            }
        }
    }
    out.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    out.dedup();
    out
}

/// Places patches along every component of S and checks that their
/// innermost shells cover the `release_width` neighbourhood of S.
///
/// Centres run along the coordinate of largest extent of each component,
/// `spacing` apart, at the medoid of the nearest slab of flagged cells.
/// Points left uncovered get extra patches at their nearest flagged cell.
pub fn cover_singular_region(
    sys: &ControlSystem,
    field: &MinimalTimeField,
    model: &SingularSetModel,
    epsilon: f64,
    params: &EscapeParams,
) -> Result<PatchCover> {
    let mut cover = PatchCover::empty(epsilon);
    if model.is_empty() {
        return Ok(cover);
    }
    let build = |y: &[f64], comp: usize, cover: &mut PatchCover| -> Result<()> {
        let mut r1 = params.r1;
        for _ in 0..=params.retries {
            match build_escape_patch(sys, field, model, y, r1, epsilon, params) {
                Ok(mut p) => {
                    p.index = cover.patches.len();
                    p.component = comp;
                    cover.components[comp].push(p.index);
                    log::info!("patch {} at {:?}: rho = {}, tau = {}", p.index, p.center, p.rho, p.tau);
                    cover.patches.push(p);
                    return Ok(());
                }
                Err(Error::EscapeSearchFailure { .. }) => r1 *= 0.5,
                Err(e) => return Err(e),
            }
        }
        Err(Error::EscapeSearchFailure { center: y.to_vec() })
    };

    for comp in 0..model.n_components {
        cover.components.push(vec![]);
        for y in component_centers(model, comp, params.spacing) {
            build(&y, comp, &mut cover)?;
        }
    }

    let points = coverage_points(model, params.release_width);
    let covered = |p: &[f64], cover: &PatchCover| cover.patches.iter().any(|q| q.in_shell(p, 1));
    loop {
        let Some(p) = points.iter().find(|p| !covered(p, &cover)) else { break };
        let k = model
            .centers()
            .iter()
            .enumerate()
            .min_by(|a, b| dist(a.1, p).total_cmp(&dist(b.1, p)))
            .map(|(k, _)| k)
            .expect("nonempty model");
        let y = model.centers()[k].clone();
        if cover.patches.iter().any(|q| q.center == y) {
            return Err(Error::Uncovered(p.clone()));
        }
        build(&y, model.labels[k], &mut cover)?;
    }
    cover.coverage_points = points.len();
    // Points within rounding of a shell boundary are not counted as inside.
    let inside = |q: &EscapePatch, p: &[f64]| q.scaled_norm(p) < q.radii[0] * (1.0 - 1e-9);
    cover.max_overlap = points.iter().map(|p| cover.patches.iter().filter(|q| inside(q, p)).count()).max().unwrap_or(0);
    Ok(cover)
}

fn component_centers(model: &SingularSetModel, comp: usize, spacing: f64) -> Vec<Vec<f64>> {
    let cells = model.component(comp);
    let n = model.grid.min.len();
    let extent = |k: usize| {
        let (lo, hi) = cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(c[k]), b.max(c[k])));
        (lo, hi)
    };
    let axis = (0..n).max_by(|&a, &b| {
        let (la, ha) = extent(a);
        let (lb, hb) = extent(b);
        (ha - la).total_cmp(&(hb - lb)).then(b.cmp(&a))
    });
    let Some(axis) = axis else { return vec![] };
    let (lo, hi) = extent(axis);
    let count = ((hi - lo) / spacing + 1e-9).floor() as usize + 1;
    let mut levels: Vec<f64> = (0..count).map(|k| lo + k as f64 * spacing).collect();
    if hi - levels.last().copied().unwrap_or(lo) > 0.5 * spacing {
        levels.push(hi);
    }
    let h = model.grid.h;
    levels
        .into_iter()
        .map(|z| {
            // Nearest slab of cells, then its medoid.
            let zs = cells.iter().map(|c| c[axis]).min_by(|a, b| (a - z).abs().total_cmp(&(b - z).abs())).unwrap();
            let slab: Vec<&[f64]> = cells.iter().copied().filter(|c| (c[axis] - zs).abs() < 0.5 * h).collect();
            let medoid = slab
                .iter()
                .min_by(|a, b| {
                    let sa: f64 = slab.iter().map(|c| dist(a, c)).sum();
                    let sb: f64 = slab.iter().map(|c| dist(b, c)).sum();
                    sa.total_cmp(&sb)
                })
                .unwrap();
            let mut y = medoid.to_vec();
            y[axis] = z;
            if model.contains(&y) {
                y
            } else {
                medoid.to_vec()
            }
        })
        .collect()
}
