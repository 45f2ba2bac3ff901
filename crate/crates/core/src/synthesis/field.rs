use super::cut::CutParams;
use super::FrontSample;
use crate::error::{Error, Result};
use crate::linalg::dot;

/// Axis-aligned node grid `min + i·h`, `i = 0..cells`, on every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub h: f64,
}

impl GridSpec {
    pub fn cube(n: usize, half_width: f64, h: f64) -> Self {
        Self { min: vec![-half_width; n], max: vec![half_width; n], h }
    }

    /// Number of nodes per axis.
    pub fn dims(&self) -> Result<Vec<usize>> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {}", self.h)));
        }
        if self.min.len() != self.max.len() || self.min.is_empty() {
            return Err(Error::InvalidGrid("min/max length mismatch".into()));
        }
        self.min
            .iter()
            .zip(&self.max)
            .map(|(lo, hi)| {
                let k = (hi - lo) / self.h;
                if !(k >= 1.0) || (k - k.round()).abs() > 1e-6 {
                    return Err(Error::InvalidGrid(format!(
                        "extent [{lo}, {hi}] is not a positive multiple of h = {}",
                        self.h
                    )));
                }
                Ok(k.round() as usize + 1)
            })
            .collect()
    }
}

/// The minimising sample recorded for a node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeWinner {
    pub time: f64,
    pub arc_time: f64,
    pub chart: Vec<f64>,
    pub covector: Vec<f64>,
}

/// Gridded estimate of the minimal time `T_x̄` together with cut flags.
///
/// Node values are first-order corrected arrival times
/// `t + ⟨p, node − x(t)⟩` minimised over the samples binned to the node.
/// Uncovered nodes hold `+∞` and coverage 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalTimeField {
    pub grid: GridSpec,
    pub dims: Vec<usize>,
    pub t: Vec<f64>,
    pub winner_t: Vec<f64>,
    /// `(n − 1)` chart coordinates per node.
    pub winner_chart: Vec<f64>,
    /// `n` covector components per node.
    pub winner_p: Vec<f64>,
    pub coverage: Vec<u32>,
    /// Union of both cut rules.
    pub cut_flag: Vec<bool>,
    pub two_arrival_flag: Vec<bool>,
    pub grad_jump_flag: Vec<bool>,
    /// `cut_flag` dilated by the mask width.
    pub singular_mask: Vec<bool>,
    pub failed_arcs: usize,
    pub(crate) arrivals: Option<Arrivals>,
}

/// Distinct arrival families captured close to each node.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Arrivals {
    pub cap: usize,
    pub count: Vec<u8>,
    pub t: Vec<f64>,
    pub chart: Vec<f64>,
}

/// Separation of two chart points: the largest wrapped angle difference
/// and the largest difference of `atan λ` over transverse coordinates.
pub(crate) fn chart_separation(a: &[f64], b: &[f64], n_angles: usize) -> f64 {
    let mut s: f64 = 0.0;
    for k in 0..a.len() {
        let d = if k < n_angles {
            let d = (a[k] - b[k]).rem_euclid(std::f64::consts::TAU);
            d.min(std::f64::consts::TAU - d)
        } else {
            (a[k].atan() - b[k].atan()).abs()
        };
        s = s.max(d);
    }
    s
}

pub(crate) struct FieldBuilder {
    field: MinimalTimeField,
    strides: Vec<usize>,
    capture: Vec<f64>,
    angle_tol: f64,
    n_angles: usize,
    node: Vec<f64>,
}

impl FieldBuilder {
    pub(crate) fn new(grid: &GridSpec, cut: &CutParams, n: usize) -> Result<Self> {
        let dims = grid.dims()?;
        if dims.len() != n {
            return Err(Error::InvalidDimension { expected: n, got: dims.len() });
        }
        let total: usize = dims.iter().product();
        let c = n - 1;
        let cap = 4;
        let capture = cut.capture_widths(n, grid.h);
        let field = MinimalTimeField {
            grid: grid.clone(),
            dims: dims.clone(),
            t: vec![f64::INFINITY; total],
            winner_t: vec![f64::NAN; total],
            winner_chart: vec![f64::NAN; total * c],
            winner_p: vec![f64::NAN; total * n],
            coverage: vec![0; total],
            cut_flag: vec![false; total],
            two_arrival_flag: vec![false; total],
            grad_jump_flag: vec![false; total],
            singular_mask: vec![false; total],
            failed_arcs: 0,
            arrivals: Some(Arrivals {
                cap,
                count: vec![0; total],
                t: vec![f64::INFINITY; total * cap],
                chart: vec![0.0; total * cap * c],
            }),
        };
        Ok(Self {
            strides: strides(&dims),
            field,
            capture,
            angle_tol: cut.angle_tol,
            n_angles: cut.n_angles,
            node: vec![0.0; n],
        })
    }

    pub(crate) fn add(&mut self, s: &FrontSample) {
        if s.conjugate_passed {
            return;
        }
        let g = &self.field.grid;
        let n = self.node.len();
        let mut idx = 0;
        for k in 0..n {
            let i = ((s.endpoint[k] - g.min[k]) / g.h).round();
            if i < 0.0 || i >= self.field.dims[k] as f64 {
                return;
            }
            let i = i as usize;
            idx += i * self.strides[k];
            self.node[k] = g.min[k] + i as f64 * g.h;
        }
        let d: Vec<f64> = (0..n).map(|k| self.node[k] - s.endpoint[k]).collect();
        let mut tc = s.time + dot(&s.covector, &d);
        if let Some(hs) = &s.hessian {
            let mut q = 0.0;
            for r in 0..n {
                q += d[r] * dot(&hs[r * n..(r + 1) * n], &d);
            }
            tc += 0.5 * q;
        }
        let f = &mut self.field;
        f.coverage[idx] += 1;
        let c = n - 1;
        let better = tc < f.t[idx]
            || (tc == f.t[idx] && s.p0.as_slice() < &f.winner_chart[idx * c..(idx + 1) * c]);
        if better {
            f.t[idx] = tc;
            f.winner_t[idx] = s.time;
            f.winner_chart[idx * c..(idx + 1) * c].copy_from_slice(&s.p0);
            f.winner_p[idx * n..(idx + 1) * n].copy_from_slice(&s.covector);
        }
        if d.iter().zip(&self.capture).all(|(dk, w)| dk.abs() <= *w) {
            let mut chart = s.p0.clone();
            if let Some(cg) = &s.chart_gradient {
                for (r, ck) in chart.iter_mut().enumerate() {
                    *ck += dot(&cg[r * n..(r + 1) * n], &d);
                }
            }
            let arr = f.arrivals.as_mut().expect("builder keeps arrivals");
            let cap = arr.cap;
            let cnt = arr.count[idx] as usize;
            let base = idx * cap;
            for r in 0..cnt {
                let ch = &arr.chart[(base + r) * c..(base + r + 1) * c];
                if chart_separation(ch, &chart, self.n_angles) <= self.angle_tol {
                    if tc < arr.t[base + r] {
                        arr.t[base + r] = tc;
                        arr.chart[(base + r) * c..(base + r + 1) * c].copy_from_slice(&chart);
                    }
                    return;
                }
            }
            let slot = if cnt < cap {
                arr.count[idx] += 1;
                cnt
            } else {
                let (worst, wt) = (0..cap)
                    .map(|r| (r, arr.t[base + r]))
                    .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
                if tc >= wt {
                    return;
                }
                worst
            };
            arr.t[base + slot] = tc;
            arr.chart[(base + slot) * c..(base + slot + 1) * c].copy_from_slice(&chart);
        }
    }

    pub(crate) fn finish(self) -> MinimalTimeField {
        self.field
    }
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Bins an in-memory front into a field using default cut knobs.
pub fn build_time_field(samples: &[FrontSample], grid: &GridSpec) -> Result<MinimalTimeField> {
    let n = grid.min.len();
    build_time_field_with(samples, grid, &CutParams::for_dim(n))
}

pub fn build_time_field_with(samples: &[FrontSample], grid: &GridSpec, cut: &CutParams) -> Result<MinimalTimeField> {
    let n = grid.min.len();
    let mut b = FieldBuilder::new(grid, cut, n)?;
    for s in samples {
        b.add(s);
    }
    Ok(b.finish())
}

impl MinimalTimeField {
    pub fn n(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn index(&self, ijk: &[usize]) -> usize {
        ijk.iter().zip(strides(&self.dims)).map(|(i, s)| i * s).sum()
    }

    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.n()];
        for k in (0..self.n()).rev() {
            out[k] = idx % self.dims[k];
            idx /= self.dims[k];
        }
        out
    }

    pub fn node_coords(&self, idx: usize) -> Vec<f64> {
        self.unravel(idx)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.grid.min[k] + i as f64 * self.grid.h)
            .collect()
    }

    pub fn is_covered(&self, idx: usize) -> bool {
        self.coverage[idx] > 0
    }

    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|c| **c > 0).count()
    }

    /// Nearest node, or `None` outside the box grown by half a cell.
    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        let mut ijk = Vec::with_capacity(self.n());
        for k in 0..self.n() {
            let i = ((x[k] - self.grid.min[k]) / self.grid.h).round();
            if !(i >= 0.0 && i < self.dims[k] as f64) {
                return None;
            }
            ijk.push(i as usize);
        }
        Some(self.index(&ijk))
    }

    pub fn winner(&self, idx: usize) -> Option<NodeWinner> {
        if !self.is_covered(idx) {
            return None;
        }
        let (n, c) = (self.n(), self.n() - 1);
        Some(NodeWinner {
            time: self.t[idx],
            arc_time: self.winner_t[idx],
            chart: self.winner_chart[idx * c..(idx + 1) * c].to_vec(),
            covector: self.winner_p[idx * n..(idx + 1) * n].to_vec(),
        })
    }

    /// Lower corner and fractional offsets of the cell containing `x`.
    fn cell(&self, x: &[f64]) -> (Vec<usize>, Vec<f64>) {
        let mut base = Vec::with_capacity(self.n());
        let mut frac = Vec::with_capacity(self.n());
        for k in 0..self.n() {
            let s = (x[k] - self.grid.min[k]) / self.grid.h;
            let i = (s.floor().max(0.0) as usize).min(self.dims[k] - 2);
            base.push(i);
            frac.push((s - i as f64).clamp(0.0, 1.0));
        }
        (base, frac)
    }

    /// Multilinear interpolation over the cell corners accepted by `use_node`.
    fn interpolate<F>(&self, x: &[f64], width: usize, mut value: F) -> Option<Vec<f64>>
    where
        F: FnMut(usize) -> Option<Vec<f64>>,
    {
        let (base, frac) = self.cell(x);
        let n = self.n();
        let mut acc = vec![0.0; width];
        let mut wsum = 0.0;
        let mut ijk = vec![0; n];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            for k in 0..n {
                let up = (corner >> k) & 1 == 1;
                ijk[k] = base[k] + up as usize;
                w *= if up { frac[k] } else { 1.0 - frac[k] };
            }
            if w == 0.0 {
                continue;
            }
            if let Some(v) = value(self.index(&ijk)) {
                acc.iter_mut().zip(&v).for_each(|(a, b)| *a += w * b);
                wsum += w;
            }
        }
        if wsum < 1e-12 {
            return None;
        }
        acc.iter_mut().for_each(|a| *a /= wsum);
        Some(acc)
    }

    /// Interpolated minimal time `T̂(x)`.
    pub fn time_hat(&self, x: &[f64]) -> Result<f64> {
        let Some(idx) = self.nearest_node(x) else {
            return Err(Error::Uncovered(x.to_vec()));
        };
        if !self.is_covered(idx) {
            return Err(Error::Uncovered(x.to_vec()));
        }
        self.interpolate(x, 1, |j| self.is_covered(j).then(|| vec![self.t[j]]))
            .map(|v| v[0])
            .ok_or_else(|| Error::Uncovered(x.to_vec()))
    }

    fn usable(&self, idx: usize) -> bool {
        self.is_covered(idx) && !self.singular_mask[idx]
    }

    /// Finite-difference gradient at a node: central where both neighbours
    /// are usable, one-sided next to masked or uncovered nodes.
    pub fn node_gradient(&self, idx: usize) -> Option<Vec<f64>> {
        if !self.usable(idx) {
            return None;
        }
        let ijk = self.unravel(idx);
        let st = strides(&self.dims);
        let h = self.grid.h;
        let mut g = vec![0.0; self.n()];
        for k in 0..self.n() {
            let lo = (ijk[k] > 0).then(|| idx - st[k]).filter(|&j| self.usable(j));
            let hi = (ijk[k] + 1 < self.dims[k]).then(|| idx + st[k]).filter(|&j| self.usable(j));
            g[k] = match (lo, hi) {
                (Some(a), Some(b)) => (self.t[b] - self.t[a]) / (2.0 * h),
                (None, Some(b)) => (self.t[b] - self.t[idx]) / h,
                (Some(a), None) => (self.t[idx] - self.t[a]) / h,
                (None, None) => return None,
            };
        }
        Some(g)
    }

    /// One-sided differences `(D⁻, D⁺)` of `T` along axis `k`, where both exist.
    pub(crate) fn one_sided(&self, idx: usize, k: usize) -> Option<(f64, f64)> {
        let ijk = self.unravel(idx);
        if ijk[k] == 0 || ijk[k] + 1 >= self.dims[k] {
            return None;
        }
        let st = strides(&self.dims)[k];
        let (a, b) = (idx - st, idx + st);
        if !(self.is_covered(a) && self.is_covered(b) && self.is_covered(idx)) {
            return None;
        }
        let h = self.grid.h;
        Some(((self.t[idx] - self.t[a]) / h, (self.t[b] - self.t[idx]) / h))
    }

    /// Jump `|D⁺ − D⁻|` at a node along axis `k` in excess of the mean jump
    /// at its two axis neighbours. Smooth curvature gives similar jumps at
    /// neighbouring nodes and cancels; a kink at the node does not.
    pub(crate) fn kink_excess(&self, idx: usize, k: usize) -> Option<f64> {
        let jump = |i: usize| self.one_sided(i, k).map(|(m, p)| (p - m).abs());
        let j0 = jump(idx)?;
        let st = strides(&self.dims)[k];
        let nb: Vec<f64> = [idx.checked_sub(st), Some(idx + st).filter(|&j| j < self.len())]
            .into_iter()
            .flatten()
            .filter_map(jump)
            .collect();
        if nb.is_empty() {
            return Some(j0);
        }
        Some(j0 - nb.iter().sum::<f64>() / nb.len() as f64)
    }

    /// `∇T̂(x)` or the singular-region marker.
    pub fn grad_time(&self, x: &[f64]) -> Result<super::GradientResult> {
        let Some(idx) = self.nearest_node(x) else {
            return Err(Error::Uncovered(x.to_vec()));
        };
        if !self.is_covered(idx) {
            return Err(Error::Uncovered(x.to_vec()));
        }
        if self.singular_mask[idx] {
            return Ok(super::GradientResult::SingularRegion);
        }
        self.interpolate(x, self.n(), |j| self.node_gradient(j))
            .map(super::GradientResult::Gradient)
            .ok_or_else(|| Error::Uncovered(x.to_vec()))
    }

    /// Whether `x` falls in the dilated singular mask.
    pub fn in_singular_mask(&self, x: &[f64]) -> bool {
        self.nearest_node(x).is_some_and(|i| self.singular_mask[i])
    }

    pub(crate) fn strides(&self) -> Vec<usize> {
        strides(&self.dims)
    }
}
