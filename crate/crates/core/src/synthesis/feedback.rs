use std::sync::{Arc, Mutex};

use super::field::MinimalTimeField;
use crate::error::{Error, Result};
use crate::extremal::{ArcWalker, CovectorSlice, Shooter, Walk};
use crate::linalg::{dist, dot, norm};
use crate::ode::IntegratorOptions;
use crate::system::{ControlSystem, ControlVector};

/// Floor on `(Σ ⟨∇T, fᵢ⟩²)^½` below which the feedback is undefined.
pub const GRAD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum GradientResult {
    Gradient(Vec<f64>),
    SingularRegion,
}

fn steepest_descent(sys: &ControlSystem, x: &[f64], g: &[f64]) -> Result<ControlVector> {
    let mut f = vec![0.0; sys.n()];
    let h: Vec<f64> = (0..sys.m())
        .map(|i| {
            sys.field_into(i, x, &mut f);
            -dot(g, &f)
        })
        .collect();
    if !(norm(&h) >= GRAD_FLOOR) {
        return Err(Error::DegenerateGradient(x.to_vec()));
    }
    Ok(ControlVector::unit(h))
}

/// `uᵢ = −⟨∇T, fᵢ(x)⟩ / (Σⱼ ⟨∇T, fⱼ(x)⟩²)^½` from the grid gradient.
pub fn optimal_feedback(sys: &ControlSystem, field: &MinimalTimeField, x: &[f64]) -> Result<ControlVector> {
    if field.nearest_node(x) == field.nearest_node(sys.target()) {
        return Err(Error::NoOptimalControl(x.to_vec()));
    }
    match field.grad_time(x)? {
        GradientResult::SingularRegion => Err(Error::NoOptimalControl(x.to_vec())),
        GradientResult::Gradient(g) => steepest_descent(sys, x, &g),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalControllerParams {
    /// Inside this distance to the target the controller shoots.
    pub r_near: f64,
    /// Accepted excess of a shot time over `T̂`.
    pub time_slack: f64,
    /// Below this distance to the target the control is zero.
    pub zero_radius: f64,
    /// For systems with a dilation, states of quasi-norm below this are
    /// dilated out to it before evaluating; the feedback is invariant.
    pub rescale_radius: f64,
    pub integrator: IntegratorOptions,
}

impl Default for OptimalControllerParams {
    fn default() -> Self {
        Self { r_near: 0.2, time_slack: 0.15, zero_radius: 1e-12, rescale_radius: 0.5, integrator: IntegratorOptions::default() }
    }
}

#[derive(Debug, Clone)]
struct Warm {
    x: Vec<f64>,
    t: f64,
    chart: Vec<f64>,
}

/// The optimal controller `k_ω`. Away from the target and outside the
/// singular mask it evaluates the closed-loop formula with the grid
/// gradient; near the target, in the mask, or where the grid has no
/// gradient it shoots the extremal ending at `x` and uses its adjoint.
/// The last converged shot is kept as a warm start.
pub struct OptimalController {
    sys: Arc<ControlSystem>,
    field: Arc<MinimalTimeField>,
    params: OptimalControllerParams,
    warm: Mutex<Option<Warm>>,
}

impl Clone for OptimalController {
    fn clone(&self) -> Self {
        Self::new(self.sys.clone(), self.field.clone(), self.params.clone())
    }
}

impl std::fmt::Debug for OptimalController {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OptimalController").field("params", &self.params).finish()
    }
}

impl OptimalController {
    pub fn new(sys: Arc<ControlSystem>, field: Arc<MinimalTimeField>, params: OptimalControllerParams) -> Self {
        Self { sys, field, params, warm: Mutex::new(None) }
    }

    pub fn field(&self) -> &MinimalTimeField {
        &self.field
    }

    pub fn system(&self) -> &ControlSystem {
        &self.sys
    }

    pub fn params(&self) -> &OptimalControllerParams {
        &self.params
    }

    /// Forgets the warm start.
    pub fn reset(&self) {
        *self.warm.lock().expect("warm start lock") = None;
    }

    pub fn control(&self, x: &[f64]) -> Result<ControlVector> {
        let r = dist(x, self.sys.target());
        if r <= self.params.zero_radius {
            return Ok(ControlVector::zero(self.sys.m()));
        }
        if let Some(q) = self.sys.quasi_norm(x) {
            if q > 0.0 && q < self.params.rescale_radius {
                if let Some(y) = self.sys.dilate(x, self.params.rescale_radius / q) {
                    return self.control_unscaled(&y);
                }
            }
        }
        self.control_unscaled(x)
    }

    fn control_unscaled(&self, x: &[f64]) -> Result<ControlVector> {
        let r = dist(x, self.sys.target());
        if r > self.params.r_near && !self.field.in_singular_mask(x) {
            if let Ok(GradientResult::Gradient(g)) = self.field.grad_time(x) {
                if let Ok(u) = steepest_descent(&self.sys, x, &g) {
                    return Ok(u);
                }
            }
        }
        let p = self.adjoint(x)?;
        steepest_descent(&self.sys, x, &p)
    }

    /// Adjoint at `x` of a minimising extremal from the target, i.e. `∇T(x)`.
    pub fn adjoint(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut shooter = Shooter::new(&self.sys, &self.params.integrator)?;
        let r = dist(x, self.sys.target());
        let t_hat = self.field.time_hat(x).ok();
        let bound = t_hat.map(|t| t + self.params.time_slack);
        let warm = self.warm.lock().expect("warm start lock").clone();
        if let Some(w) = warm {
            if dist(&w.x, x) <= 0.1 {
                if let Ok(sol) = shooter.solve(x, w.t, &w.chart) {
                    if bound.is_none_or(|b| sol.t <= b) {
                        self.store(x, sol.t, &sol.chart);
                        return Ok(sol.p_end);
                    }
                }
            }
        }
        // Cold start: winners of nearby nodes, then a coarse scan of the
        // slice, then continuation from the node winners.
        let winners = self.nearby_winners(x);
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let consider = |sol: crate::extremal::ShotSolution, best: &mut Option<(f64, Vec<f64>, Vec<f64>)>| {
            if bound.is_some_and(|b| sol.t > b) || best.as_ref().is_some_and(|b| b.0 <= sol.t) {
                return;
            }
            if self.minimising_so_far(&sol.chart, sol.t) {
                *best = Some((sol.t, sol.chart, sol.p_end));
            }
        };
        for (_, win) in &winners {
            let t0 = t_hat.unwrap_or(win.time).max(1e-3);
            if let Ok(sol) = shooter.solve(x, t0, &win.chart) {
                consider(sol, &mut best);
            }
        }
        if best.is_none() {
            let horizon = bound.unwrap_or(2.0 * r + 0.5).max(2.0 * r);
            for (t0, chart) in self.coarse_guesses(x, horizon) {
                if let Ok(sol) = shooter.solve(x, t0, &chart) {
                    consider(sol, &mut best);
                }
            }
        }
        if best.is_none() {
            for (node, win) in &winners {
                if let Some(sol) = continuation(&mut shooter, node, win.time.max(1e-3), &win.chart, x) {
                    consider(sol, &mut best);
                }
            }
        }
        match best {
            Some((t, chart, p)) => {
                self.store(x, t, &chart);
                Ok(p)
            }
            None => Err(Error::ShootingFailure { target: x.to_vec(), reason: "no minimising extremal found".into() }),
        }
    }

    /// Closest approaches to `x` of extremals on a coarse slice grid, walked
    /// up to `horizon`; the three best as `(time, chart)`.
    fn coarse_guesses(&self, x: &[f64], horizon: f64) -> Vec<(f64, Vec<f64>)> {
        let Ok(slice) = CovectorSlice::new(&self.sys) else { return Vec::new() };
        let mut opts = self.params.integrator;
        opts.sample_stride = horizon / 48.0;
        let mut walker = ArcWalker::new(&self.sys, &opts);
        let angles: Vec<f64> = (0..16).map(|k| std::f64::consts::TAU * k as f64 / 16.0).collect();
        let transverse = [-12.0, -4.0, -1.5, -0.5, 0.0, 0.5, 1.5, 4.0, 12.0];
        let mut charts: Vec<Vec<f64>> = vec![Vec::new()];
        for k in 0..slice.dim() {
            let vals: &[f64] = if k < slice.n_angles() { &angles } else { &transverse };
            charts = charts
                .into_iter()
                .flat_map(|c| {
                    vals.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push(*v);
                        c
                    })
                })
                .collect();
        }
        let mut found: Vec<(f64, f64, Vec<f64>)> = Vec::new();
        for chart in charts {
            let p0 = slice.covector(&chart);
            let tangents: Vec<Vec<f64>> = (0..slice.dim()).map(|k| slice.tangent(&chart, k)).collect();
            let mut near = (f64::INFINITY, 0.0);
            let _ = walker.walk(&p0, &tangents, horizon, false, 0.0, |s| {
                let d = dist(&s.x, x);
                if d < near.0 && s.t > 0.0 {
                    near = (d, s.t);
                }
                Walk::Continue
            });
            if near.0.is_finite() {
                found.push((near.0, near.1, chart));
            }
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0));
        found.into_iter().take(3).map(|(_, t, c)| (t, c)).collect()
    }

    fn store(&self, x: &[f64], t: f64, chart: &[f64]) {
        *self.warm.lock().expect("warm start lock") = Some(Warm { x: x.to_vec(), t, chart: chart.to_vec() });
    }

    /// No conjugate time strictly before `t` along the extremal.
    fn minimising_so_far(&self, chart: &[f64], t: f64) -> bool {
        let Ok(slice) = CovectorSlice::new(&self.sys) else { return false };
        let p0 = slice.covector(chart);
        let tangents: Vec<Vec<f64>> = (0..slice.dim()).map(|k| slice.tangent(chart, k)).collect();
        let mut walker = ArcWalker::new(&self.sys, &self.params.integrator);
        match walker.walk(&p0, &tangents, t, true, 0.0, |_| Walk::Continue) {
            Ok(Some(tc)) => tc >= t - 1e-6,
            Ok(None) => true,
            Err(_) => false,
        }
    }

    /// Covered nodes around `x`, nearest first, with their winners.
    fn nearby_winners(&self, x: &[f64]) -> Vec<(Vec<f64>, super::NodeWinner)> {
        let f = &self.field;
        let n = f.n();
        let h = f.grid.h;
        let mut out: Vec<(f64, usize)> = Vec::new();
        for off in 0..3usize.pow(n as u32) {
            let mut o = off;
            let y: Vec<f64> = (0..n)
                .map(|k| {
                    let d = (o % 3) as f64 - 1.0;
                    o /= 3;
                    x[k] + d * h
                })
                .collect();
            if let Some(i) = f.nearest_node(&y) {
                if f.is_covered(i) && !f.cut_flag[i] && !out.iter().any(|(_, j)| *j == i) {
                    out.push((dist(&f.node_coords(i), x), i));
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.truncate(6);
        out.into_iter().filter_map(|(_, i)| f.winner(i).map(|w| (f.node_coords(i), w))).collect()
    }
}

fn continuation(
    shooter: &mut Shooter<'_>,
    from: &[f64],
    t0: f64,
    chart0: &[f64],
    to: &[f64],
) -> Option<crate::extremal::ShotSolution> {
    let (mut t, mut chart) = (t0, chart0.to_vec());
    let steps = 8;
    let mut last = None;
    for k in 0..=steps {
        let s = k as f64 / steps as f64;
        let y: Vec<f64> = from.iter().zip(to).map(|(a, b)| a + s * (b - a)).collect();
        let sol = shooter.solve(&y, t, &chart).ok()?;
        t = sol.t;
        chart.clone_from(&sol.chart);
        last = Some(sol);
    }
    last
}
