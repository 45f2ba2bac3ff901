//! Gridded minimal-time field from extremal fronts, the singular set
//! estimate, and the optimal feedback derived from `∇T`.

mod cache;
mod cut;
mod feedback;
mod field;

pub use cache::{decode_field, encode_field, read_field, write_field, write_metadata, CACHE_MAGIC, CACHE_VERSION};
pub use cut::{estimate_cut_locus, CutParams, SingularSetModel};
pub use feedback::{optimal_feedback, GradientResult, OptimalController, OptimalControllerParams};
pub use field::{build_time_field, build_time_field_with, GridSpec, MinimalTimeField, NodeWinner};

use crate::error::{Error, Result};
use crate::extremal::{ArcWalker, CovectorSlice, Walk};
use crate::ode::IntegratorOptions;
use crate::system::ControlSystem;

/// Endpoint of a front at one sampling instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontSample {
    pub endpoint: Vec<f64>,
    pub time: f64,
    /// Slice chart coordinates of the initial covector.
    pub p0: Vec<f64>,
    /// Adjoint at the endpoint.
    pub covector: Vec<f64>,
    /// Hessian of the arrival time of the local family of extremals, when
    /// the sensitivity is invertible.
    pub hessian: Option<Vec<f64>>,
    /// Row-major `(n−1)×n` chart gradient `∂c/∂x` of the local family.
    pub chart_gradient: Option<Vec<f64>>,
    pub conjugate_passed: bool,
}

/// Chart points of the normalisation slice to shoot from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SliceGrid {
    pub points: Vec<Vec<f64>>,
}

impl SliceGrid {
    pub fn new(points: Vec<Vec<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Tensor grid for one angle and one transverse coordinate: `n_theta`
    /// equispaced angles times the given transverse values.
    pub fn tensor(n_theta: usize, lambdas: &[f64]) -> Self {
        let mut points = Vec::with_capacity(n_theta * lambdas.len());
        for &l in lambdas {
            for k in 0..n_theta {
                points.push(vec![std::f64::consts::TAU * k as f64 / n_theta as f64, l]);
            }
        }
        Self { points }
    }

    /// Graded grid for one angle and one transverse coordinate. The
    /// transverse spacing grows like `dλ₀ (1 + λ²)` and the number of angles
    /// shrinks with `|λ|`, following the horizontal extent `~ 1/|λ|` of the
    /// corresponding extremals.
    pub fn graded(lambda_max: f64, dlambda0: f64, n_theta_max: usize, n_theta_min: usize, lambda_knee: f64) -> Self {
        let mut lambdas = vec![0.0];
        let mut l: f64 = 0.0;
        loop {
            l += dlambda0 * (1.0 + l * l);
            if l > lambda_max {
                break;
            }
            lambdas.push(l);
            lambdas.push(-l);
        }
        lambdas.sort_by(f64::total_cmp);
        let mut points = Vec::new();
        for &l in &lambdas {
            let frac = if l.abs() <= lambda_knee { 1.0 } else { lambda_knee / l.abs() };
            let n = ((n_theta_max as f64 * frac).ceil() as usize).max(n_theta_min);
            for k in 0..n {
                points.push(vec![std::f64::consts::TAU * k as f64 / n as f64, l]);
            }
        }
        Self { points }
    }
}

/// Streams front samples arc by arc, in slice-grid order. Per-arc
/// integration failures are collected rather than aborting.
pub fn for_each_front_sample(
    sys: &ControlSystem,
    grid: &SliceGrid,
    t_max: f64,
    opts: &IntegratorOptions,
    mut visit: impl FnMut(&FrontSample),
) -> Result<Vec<(Vec<f64>, Error)>> {
    if !(t_max > 0.0) {
        return Err(Error::InvalidGrid(format!("t_max must be positive, got {t_max}")));
    }
    let slice = CovectorSlice::new(sys)?;
    let mut walker = ArcWalker::new(sys, opts);
    let mut failures = Vec::new();
    let mut sample = FrontSample {
        endpoint: vec![0.0; sys.n()],
        time: 0.0,
        p0: Vec::new(),
        covector: vec![0.0; sys.n()],
        hessian: None,
        chart_gradient: None,
        conjugate_passed: false,
    };
    for chart in &grid.points {
        if chart.len() != slice.dim() {
            return Err(Error::InvalidDimension { expected: slice.dim(), got: chart.len() });
        }
        let p0 = slice.covector(chart);
        let tangents: Vec<Vec<f64>> = (0..slice.dim()).map(|k| slice.tangent(chart, k)).collect();
        sample.p0.clone_from(chart);
        let res = walker.walk(&p0, &tangents, t_max, true, 0.0, |s| {
            sample.endpoint.copy_from_slice(&s.x);
            sample.covector.copy_from_slice(&s.p);
            sample.time = s.t;
            sample.conjugate_passed = s.conjugate_passed;
            let (hess, cg) = match s.local_expansion() {
                Some((h, c)) if s.t > 0.0 => (Some(h), Some(c)),
                _ => (None, None),
            };
            sample.hessian = hess;
            sample.chart_gradient = cg;
            visit(&sample);
            Walk::Continue
        });
        if let Err(e) = res {
            log::warn!("front arc at {chart:?} failed: {e}");
            failures.push((chart.clone(), e));
        }
    }
    Ok(failures)
}

/// Result of [`synthesize_front`].
#[derive(Debug, Clone, Default)]
pub struct FrontResult {
    pub samples: Vec<FrontSample>,
    pub failures: Vec<(Vec<f64>, Error)>,
}

/// Collects every front sample in memory. Meant for small slice grids; the
/// field builder streams instead.
pub fn synthesize_front(
    sys: &ControlSystem,
    grid: &SliceGrid,
    t_max: f64,
    opts: &IntegratorOptions,
) -> Result<FrontResult> {
    let mut samples = Vec::new();
    let failures = for_each_front_sample(sys, grid, t_max, opts, |s| samples.push(s.clone()))?;
    Ok(FrontResult { samples, failures })
}

/// Knobs for the streaming field synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisParams {
    pub grid: GridSpec,
    pub t_max: f64,
    pub cut: CutParams,
}

/// Shoots the slice grid and bins every sample into a time field without
/// keeping the front in memory.
pub fn synthesize_time_field(
    sys: &ControlSystem,
    slice_grid: &SliceGrid,
    params: &SynthesisParams,
    opts: &IntegratorOptions,
) -> Result<MinimalTimeField> {
    let mut builder = field::FieldBuilder::new(&params.grid, &params.cut, sys.n())?;
    let failures = for_each_front_sample(sys, slice_grid, params.t_max, opts, |s| builder.add(s))?;
    let mut f = builder.finish();
    f.failed_arcs = failures.len();
    Ok(f)
}
