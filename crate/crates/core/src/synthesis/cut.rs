use std::collections::{HashMap, VecDeque};

use super::field::{chart_separation, GridSpec, MinimalTimeField};
use crate::linalg::dist;

/// Knobs of the two cut rules. All are recorded in the cache metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CutParams {
    /// Minimal slice-chart separation of two arrival families.
    pub angle_tol: f64,
    /// Arrival times within this of the node minimum count as ties.
    pub time_tol: f64,
    /// Jump between one-sided difference quotients of `T`, in excess of the
    /// mean jump at the two neighbours along the same axis.
    pub grad_jump_tol: f64,
    /// Chebyshev dilation of the cut cells, in cells.
    pub mask_cells: usize,
    /// No flags closer than this to the target.
    pub exclusion_radius: f64,
    /// No flags where `T̂` is below this. Vertical features of the field
    /// shrink quadratically towards the target and stop being resolved by
    /// the grid well outside the Euclidean exclusion ball.
    pub exclusion_time: f64,
    /// Per-axis half-widths, in units of `h`, of the box around a node in
    /// which samples take part in the two-arrival rule. Each sample enters
    /// with its chart extrapolated to the node.
    pub capture: Vec<f64>,
    /// Number of periodic (angle) chart coordinates.
    pub n_angles: usize,
}

impl CutParams {
    /// Defaults for `h = 0.05` on a three-dimensional grid.
    pub fn for_dim(n: usize) -> Self {
        Self::for_grid(n, 0.05)
    }

    pub fn for_grid(n: usize, h: f64) -> Self {
        let capture = vec![0.5; n];
        Self {
            angle_tol: 0.3,
            time_tol: 2.0 * h,
            grad_jump_tol: 0.5,
            mask_cells: 2,
            exclusion_radius: 3.0 * h,
            exclusion_time: 10.0 * h,
            capture,
            n_angles: 1,
        }
    }

    pub(crate) fn capture_widths(&self, n: usize, h: f64) -> Vec<f64> {
        if self.capture.len() == n {
            self.capture.iter().map(|c| c * h).collect()
        } else {
            vec![0.5 * h; n]
        }
    }
}

impl Default for CutParams {
    fn default() -> Self {
        Self::for_dim(3)
    }
}

/// Flagged cells, their connected components, and `d(x, S)` to the union
/// of the flagged cell closures.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSetModel {
    pub grid: GridSpec,
    pub two_arrival: Vec<usize>,
    pub grad_jump: Vec<usize>,
    /// Union of both rules, sorted node indices.
    pub flagged: Vec<usize>,
    /// Component label of each entry of `flagged`.
    pub labels: Vec<usize>,
    pub n_components: usize,
    centers: Vec<Vec<f64>>,
}

impl SingularSetModel {
    pub fn is_empty(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// Distance from `x` to the closed flagged cells; `+∞` when empty.
    pub fn distance(&self, x: &[f64]) -> f64 {
        self.nearest(x).map_or(f64::INFINITY, |(_, d2)| d2.sqrt())
    }

    /// Closest point of the closed flagged cells to `x`.
    pub fn nearest_point(&self, x: &[f64]) -> Option<Vec<f64>> {
        let half = 0.5 * self.grid.h;
        let (k, _) = self.nearest(x)?;
        let c = &self.centers[k];
        Some(x.iter().zip(c).map(|(xi, ci)| xi.clamp(ci - half, ci + half)).collect())
    }

    fn nearest(&self, x: &[f64]) -> Option<(usize, f64)> {
        let half = 0.5 * self.grid.h;
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in self.centers.iter().enumerate() {
            let mut s = 0.0;
            for (xi, ci) in x.iter().zip(c) {
                let d = (xi - ci).abs() - half;
                if d > 0.0 {
                    s += d * d;
                }
            }
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((k, s));
                if s == 0.0 {
                    break;
                }
            }
        }
        best
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.distance(x) == 0.0
    }

    /// Flagged cell centres of component `label`.
    pub fn component(&self, label: usize) -> Vec<&[f64]> {
        self.labels
            .iter()
            .zip(&self.centers)
            .filter(|(l, _)| **l == label)
            .map(|(_, c)| c.as_slice())
            .collect()
    }

    /// Rebuilds the model from flags stored in a field.
    pub fn from_field(field: &MinimalTimeField) -> Self {
        let pick = |v: &[bool]| v.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect::<Vec<_>>();
        let flagged = pick(&field.cut_flag);
        let (labels, n_components) = components(field, &flagged);
        Self {
            grid: field.grid.clone(),
            two_arrival: pick(&field.two_arrival_flag),
            grad_jump: pick(&field.grad_jump_flag),
            centers: flagged.iter().map(|&i| field.node_coords(i)).collect(),
            flagged,
            labels,
            n_components,
        }
    }
}

fn components(field: &MinimalTimeField, flagged: &[usize]) -> (Vec<usize>, usize) {
    let pos: HashMap<usize, usize> = flagged.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let mut labels = vec![usize::MAX; flagged.len()];
    let n = field.n();
    let mut next = 0;
    for start in 0..flagged.len() {
        if labels[start] != usize::MAX {
            continue;
        }
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(k) = queue.pop_front() {
            let ijk = field.unravel(flagged[k]);
            for off in 0..3usize.pow(n as u32) {
                let mut o = off;
                let mut nb = ijk.clone();
                let mut ok = true;
                for (a, v) in nb.iter_mut().enumerate() {
                    let d = (o % 3) as isize - 1;
                    o /= 3;
                    let w = *v as isize + d;
                    if w < 0 || w >= field.dims[a] as isize {
                        ok = false;
                        break;
                    }
                    *v = w as usize;
                }
                if !ok {
                    continue;
                }
                if let Some(&j) = pos.get(&field.index(&nb)) {
                    if labels[j] == usize::MAX {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        next += 1;
    }
    (labels, next)
}

/// Applies the two-arrival and gradient-jump rules, stores both flag sets,
/// their union and the dilated mask in `field`, and returns the model.
pub fn estimate_cut_locus(field: &mut MinimalTimeField, target: &[f64], params: &CutParams) -> SingularSetModel {
    let total = field.len();
    let n = field.n();
    let excl = params.exclusion_radius * (1.0 - 1e-9);
    let mut two = vec![false; total];
    let mut jump = vec![false; total];
    for idx in 0..total {
        if !field.is_covered(idx) {
            continue;
        }
        let x = field.node_coords(idx);
        if dist(&x, target) < excl || field.t[idx] < params.exclusion_time {
            continue;
        }
        if let Some(arr) = &field.arrivals {
            let c = n - 1;
            let cnt = arr.count[idx] as usize;
            let base = idx * arr.cap;
            let tmin = (0..cnt).map(|r| arr.t[base + r]).fold(f64::INFINITY, f64::min).min(field.t[idx]);
            'outer: for a in 0..cnt {
                if arr.t[base + a] > tmin + params.time_tol {
                    continue;
                }
                for b in a + 1..cnt {
                    if arr.t[base + b] > tmin + params.time_tol {
                        continue;
                    }
                    let ca = &arr.chart[(base + a) * c..(base + a + 1) * c];
                    let cb = &arr.chart[(base + b) * c..(base + b + 1) * c];
                    if chart_separation(ca, cb, params.n_angles) > params.angle_tol {
                        two[idx] = true;
                        break 'outer;
                    }
                }
            }
        }
        for k in 0..n {
            if let Some(e) = field.kink_excess(idx, k) {
                if e > params.grad_jump_tol {
                    jump[idx] = true;
                    break;
                }
            }
        }
    }
    if field.arrivals.is_none() {
        log::warn!("field has no arrival records; two-arrival rule reuses stored flags");
        two.clone_from(&field.two_arrival_flag);
    }
    let cut: Vec<bool> = two.iter().zip(&jump).map(|(a, b)| *a || *b).collect();
    let mut mask = vec![false; total];
    let w = params.mask_cells as isize;
    let strides = field.strides();
    for idx in (0..total).filter(|&i| cut[i]) {
        let ijk = field.unravel(idx);
        let span = (2 * w + 1) as usize;
        for off in 0..span.pow(n as u32) {
            let mut o = off;
            let mut j = 0usize;
            let mut ok = true;
            for a in 0..n {
                let d = (o % span) as isize - w;
                o /= span;
                let v = ijk[a] as isize + d;
                if v < 0 || v >= field.dims[a] as isize {
                    ok = false;
                    break;
                }
                j += v as usize * strides[a];
            }
            if ok {
                mask[j] = true;
            }
        }
    }
    field.two_arrival_flag = two;
    field.grad_jump_flag = jump;
    field.cut_flag = cut;
    field.singular_mask = mask;
    SingularSetModel::from_field(field)
}
