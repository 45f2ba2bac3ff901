//! Normal extremals of the reduced Hamiltonian `H₁(x,p) = (Σ ⟨p, fᵢ(x)⟩²)^½`.
//!
//! Extremals are integrated together with their variational equations so
//! that the sensitivity `J(t) = [ẋ(t), ∂x/∂c₁, …, ∂x/∂c_{n−1}]` of the
//! exponential map with respect to time and slice chart coordinates is
//! available along the arc. Conjugate times are sign changes of `det J`.

use crate::error::{Error, Result};
use crate::linalg::{det, dot, mat_t_vec, norm, solve};
use crate::ode::{Dopri5, IntegratorOptions, OdeSystem};
use crate::system::{ControlSystem, ControlVector};

/// Covectors with `H₁` below this are treated as abnormal directions.
pub const H1_FLOOR: f64 = 1e-8;

/// Time tolerance for conjugate-time bisection.
pub const CONJUGATE_TIME_TOL: f64 = 1e-8;

pub fn hamiltonian_h1(sys: &ControlSystem, x: &[f64], p: &[f64]) -> f64 {
    let mut f = vec![0.0; sys.n()];
    (0..sys.m())
        .map(|i| {
            sys.field_into(i, x, &mut f);
            dot(p, &f).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// `uᵢ = ⟨p, fᵢ(x)⟩ / H₁(x, p)`.
pub fn extremal_control(sys: &ControlSystem, x: &[f64], p: &[f64]) -> Result<ControlVector> {
    let mut f = vec![0.0; sys.n()];
    let h: Vec<f64> = (0..sys.m())
        .map(|i| {
            sys.field_into(i, x, &mut f);
            dot(p, &f)
        })
        .collect();
    let h1 = norm(&h);
    if !(h1 > H1_FLOOR) {
        return Err(Error::DegenerateCovector { h1 });
    }
    Ok(ControlVector::unit(h))
}

/// Hamiltonian vector field `(ẋ, ṗ) = (∂H₁/∂p, −∂H₁/∂x)`.
pub fn extremal_rhs(sys: &ControlSystem, x: &[f64], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sys.n();
    let mut flow = HamiltonianFlow::new(sys);
    let mut z = x.to_vec();
    z.extend_from_slice(p);
    let mut dz = vec![0.0; 2 * n];
    flow.rhs(0.0, &z, &mut dz)?;
    let pdot = dz.split_off(n);
    Ok((dz, pdot))
}

/// The H₁-normalised Hamiltonian system on `(x, p) ∈ ℝ²ⁿ`.
pub(crate) struct HamiltonianFlow<'a> {
    sys: &'a ControlSystem,
    f: Vec<f64>,
    jac: Vec<f64>,
    h: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a> HamiltonianFlow<'a> {
    pub(crate) fn new(sys: &'a ControlSystem) -> Self {
        let n = sys.n();
        Self { sys, f: vec![0.0; n], jac: vec![0.0; n * n], h: vec![0.0; sys.m()], tmp: vec![0.0; n] }
    }
}

impl OdeSystem for HamiltonianFlow<'_> {
    fn dim(&self) -> usize {
        2 * self.sys.n()
    }

    fn rhs(&mut self, _t: f64, z: &[f64], dz: &mut [f64]) -> Result<()> {
        let n = self.sys.n();
        let (x, p) = z.split_at(n);
        for i in 0..self.sys.m() {
            self.sys.field_into(i, x, &mut self.f);
            self.h[i] = dot(p, &self.f);
        }
        let h1 = norm(&self.h);
        if !(h1 > H1_FLOOR) {
            return Err(Error::DegenerateCovector { h1 });
        }
        let (xdot, pdot) = dz.split_at_mut(n);
        xdot.iter_mut().for_each(|v| *v = 0.0);
        pdot.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.sys.m() {
            let u = self.h[i] / h1;
            if u == 0.0 {
                continue;
            }
            self.sys.field_into(i, x, &mut self.f);
            self.sys.jacobian_into(i, x, &mut self.jac);
            mat_t_vec(&self.jac, p, n, &mut self.tmp);
            for k in 0..n {
                xdot[k] += u * self.f[k];
                pdot[k] -= u * self.tmp[k];
            }
        }
        Ok(())
    }
}

/// Hamiltonian flow augmented with `k` tangent vectors. The linearisation is
/// applied as a central-difference directional derivative of the
/// Hamiltonian vector field, which only needs fields and Jacobians.
pub(crate) struct VariationalFlow<'a> {
    base: HamiltonianFlow<'a>,
    tangents: usize,
    zp: Vec<f64>,
    zm: Vec<f64>,
    fp: Vec<f64>,
    fm: Vec<f64>,
}

impl<'a> VariationalFlow<'a> {
    pub(crate) fn new(sys: &'a ControlSystem, tangents: usize) -> Self {
        let d = 2 * sys.n();
        Self {
            base: HamiltonianFlow::new(sys),
            tangents,
            zp: vec![0.0; d],
            zm: vec![0.0; d],
            fp: vec![0.0; d],
            fm: vec![0.0; d],
        }
    }
}

impl OdeSystem for VariationalFlow<'_> {
    fn dim(&self) -> usize {
        2 * self.base.sys.n() * (1 + self.tangents)
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let d = 2 * self.base.sys.n();
        let (z, tang) = y.split_at(d);
        let (dz, dtang) = dy.split_at_mut(d);
        self.base.rhs(t, z, dz)?;
        let zscale = crate::linalg::norm_inf(z).max(1.0);
        for k in 0..self.tangents {
            let v = &tang[k * d..(k + 1) * d];
            let vn = crate::linalg::norm_inf(v);
            let out = &mut dtang[k * d..(k + 1) * d];
            if vn == 0.0 {
                out.iter_mut().for_each(|o| *o = 0.0);
                continue;
            }
            let eta = 1e-6 * zscale / vn;
            for i in 0..d {
                self.zp[i] = z[i] + eta * v[i];
                self.zm[i] = z[i] - eta * v[i];
            }
            self.base.rhs(t, &self.zp, &mut self.fp)?;
            self.base.rhs(t, &self.zm, &mut self.fm)?;
            for i in 0..d {
                out[i] = (self.fp[i] - self.fm[i]) / (2.0 * eta);
            }
        }
        Ok(())
    }
}

/// Chart of the normalisation slice `X = {p₀ : H₁(x̄, p₀) = 1}`.
///
/// `p₀ = G a(φ) + N λ` where the columns of `G` are dual to `fᵢ(x̄)`, `a(φ)`
/// is a unit vector of ℝᵐ in hyperspherical angles and the columns of `N`
/// span the annihilator of `span fᵢ(x̄)`. For the Brockett system this is
/// `(θ, λ) ↦ (cos θ, sin θ, λ)`.
#[derive(Debug, Clone)]
pub struct CovectorSlice {
    n: usize,
    m: usize,
    /// n×m, column-major by index i.
    dual: Vec<Vec<f64>>,
    /// n−m orthonormal annihilator vectors.
    transverse: Vec<Vec<f64>>,
}

impl CovectorSlice {
    pub fn new(sys: &ControlSystem) -> Result<Self> {
        let (n, m) = (sys.n(), sys.m());
        let xbar = sys.target();
        let cols: Vec<Vec<f64>> = (0..m).map(|i| sys.field(i, xbar)).collect();
        // Gram matrix FᵀF
        let mut gram = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                gram[i * m + j] = dot(&cols[i], &cols[j]);
            }
        }
        let mut dual = Vec::with_capacity(m);
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            let coef = solve(&gram, &e, m).ok_or_else(|| {
                Error::InvalidDimension { expected: m, got: 0 }
            })?;
            let mut g = vec![0.0; n];
            for (j, c) in coef.iter().enumerate() {
                for k in 0..n {
                    g[k] += c * cols[j][k];
                }
            }
            dual.push(g);
        }
        // Gram–Schmidt of the canonical basis against span fᵢ(x̄)
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for c in &cols {
            let mut v = c.clone();
            for b in &basis {
                let d = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= d * bi);
            }
            let nv = norm(&v);
            v.iter_mut().for_each(|vi| *vi /= nv);
            basis.push(v);
        }
        let mut transverse = Vec::new();
        while basis.len() < n {
            let mut best: Option<Vec<f64>> = None;
            let mut best_norm = 0.0;
            for k in 0..n {
                let mut v = vec![0.0; n];
                v[k] = 1.0;
                for b in &basis {
                    let d = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= d * bi);
                }
                let nv = norm(&v);
                if nv > best_norm + 1e-12 {
                    best_norm = nv;
                    best = Some(v.into_iter().map(|vi| vi / nv).collect());
                }
            }
            let mut v = best.expect("n > basis size");
            let lead = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            if lead < 0.0 {
                v.iter_mut().for_each(|vi| *vi = -*vi);
            }
            basis.push(v.clone());
            transverse.push(v);
        }
        Ok(Self { n, m, dual, transverse })
    }

    /// Number of chart coordinates, `n − 1`.
    pub fn dim(&self) -> usize {
        self.n - 1
    }

    pub fn n_angles(&self) -> usize {
        self.m - 1
    }

    fn unit(&self, angles: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.m];
        let mut s = 1.0;
        for (i, phi) in angles.iter().enumerate() {
            a[i] = s * phi.cos();
            s *= phi.sin();
        }
        a[self.m - 1] = s;
        a
    }

    pub fn covector(&self, chart: &[f64]) -> Vec<f64> {
        let (angles, lambdas) = chart.split_at(self.m - 1);
        let a = self.unit(angles);
        let mut p = vec![0.0; self.n];
        for (ai, g) in a.iter().zip(&self.dual) {
            p.iter_mut().zip(g).for_each(|(pk, gk)| *pk += ai * gk);
        }
        for (l, v) in lambdas.iter().zip(&self.transverse) {
            p.iter_mut().zip(v).for_each(|(pk, vk)| *pk += l * vk);
        }
        p
    }

    /// `∂p₀/∂c_k` at `chart`.
    pub fn tangent(&self, chart: &[f64], k: usize) -> Vec<f64> {
        let na = self.m - 1;
        if k >= na {
            return self.transverse[k - na].clone();
        }
        let h = 1e-6;
        let mut cp = chart.to_vec();
        let mut cm = chart.to_vec();
        cp[k] += h;
        cm[k] -= h;
        let (pp, pm) = (self.covector(&cp), self.covector(&cm));
        pp.iter().zip(&pm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }

    /// Chart coordinates of a covector on (or radially projected onto) the slice.
    pub fn chart_of(&self, p0: &[f64], sys: &ControlSystem) -> Vec<f64> {
        let xbar = sys.target();
        let a: Vec<f64> = (0..self.m).map(|i| dot(p0, &sys.field(i, xbar))).collect();
        let na = norm(&a);
        let a: Vec<f64> = a.iter().map(|v| v / na).collect();
        let mut angles = Vec::with_capacity(self.m - 1);
        for i in 0..self.m.saturating_sub(1) {
            let tail = norm(&a[i..]);
            let mut phi = if tail == 0.0 { 0.0 } else { (a[i] / tail).clamp(-1.0, 1.0).acos() };
            if i == self.m - 2 && a[self.m - 1] < 0.0 {
                phi = 2.0 * std::f64::consts::PI - phi;
            }
            angles.push(phi);
        }
        let scaled: Vec<f64> = p0.iter().map(|v| v / na).collect();
        let mut chart = angles;
        for v in &self.transverse {
            chart.push(dot(&scaled, v));
        }
        chart
    }
}

/// One sample along an extremal.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    /// Row-major n×n sensitivity `[ẋ, ∂x/∂c₁, …]`.
    pub jac: Vec<f64>,
    /// Row-major n×n covector sensitivity `[ṗ, ∂p/∂c₁, …]`.
    pub pjac: Vec<f64>,
    pub h1: f64,
    /// True once the first conjugate time has been passed.
    pub conjugate_passed: bool,
}

/// A shot normal extremal sampled at the integrator stride.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalArc {
    pub p0: Vec<f64>,
    pub samples: Vec<ArcSample>,
    pub conjugate_time: Option<f64>,
}

impl ArcSample {
    /// Local expansion of the family of extremals around this sample: the
    /// Hessian `∂p/∂x = P J⁻¹` of its arrival-time function (symmetrised)
    /// and the chart gradient `∂c/∂x` (rows 2.. of `J⁻¹`). `None` where `J`
    /// is singular.
    pub fn local_expansion(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.x.len();
        let jm = nalgebra::Matrix3::from_row_slice(&self.jac[..9.min(n * n)]);
        if n != 3 {
            return self.local_expansion_dyn();
        }
        let inv = jm.try_inverse()?;
        let pm = nalgebra::Matrix3::from_row_slice(&self.pjac);
        let h = pm * inv;
        let mut hess = vec![0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                hess[r * 3 + c] = 0.5 * (h[(r, c)] + h[(c, r)]);
            }
        }
        let mut cg = vec![0.0; 6];
        for r in 1..3 {
            for c in 0..3 {
                cg[(r - 1) * 3 + c] = inv[(r, c)];
            }
        }
        (hess.iter().chain(&cg).all(|v| v.is_finite())).then_some((hess, cg))
    }

    fn local_expansion_dyn(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.x.len();
        let jm = nalgebra::DMatrix::from_row_slice(n, n, &self.jac);
        let pm = nalgebra::DMatrix::from_row_slice(n, n, &self.pjac);
        let inv = jm.try_inverse()?;
        let h = &pm * &inv;
        let mut hess = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                hess[r * n + c] = 0.5 * (h[(r, c)] + h[(c, r)]);
            }
        }
        let mut cg = vec![0.0; (n - 1) * n];
        for r in 1..n {
            for c in 0..n {
                cg[(r - 1) * n + c] = inv[(r, c)];
            }
        }
        (hess.iter().chain(&cg).all(|v| v.is_finite())).then_some((hess, cg))
    }
}

impl ExtremalArc {
    pub fn max_h1_drift(&self) -> f64 {
        let h0 = self.samples.first().map_or(1.0, |s| s.h1);
        self.samples.iter().map(|s| (s.h1 - h0).abs()).fold(0.0, f64::max)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }
}

/// What a walker callback wants next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Walk {
    Continue,
    Stop,
}

/// Integrates an extremal with its sensitivities and reports samples at the
/// stride, at every step end used for bracketing, and at the refined first
/// conjugate time.
pub(crate) struct ArcWalker<'a> {
    sys: &'a ControlSystem,
    flow: VariationalFlow<'a>,
    rk: Dopri5,
    opts: IntegratorOptions,
    y: Vec<f64>,
    ybuf: Vec<f64>,
    dx: Vec<f64>,
    jac: Vec<f64>,
    pjac: Vec<f64>,
}

impl<'a> ArcWalker<'a> {
    pub(crate) fn new(sys: &'a ControlSystem, opts: &IntegratorOptions) -> Self {
        let n = sys.n();
        let flow = VariationalFlow::new(sys, n - 1);
        let dim = flow.dim();
        Self {
            sys,
            flow,
            rk: Dopri5::new(dim, opts),
            opts: *opts,
            y: vec![0.0; dim],
            ybuf: vec![0.0; dim],
            dx: vec![0.0; n],
            jac: vec![0.0; n * n],
            pjac: vec![0.0; n * n],
        }
    }

    fn fill_initial(&mut self, p0: &[f64], tangents: &[Vec<f64>]) {
        let n = self.sys.n();
        let d = 2 * n;
        self.y.iter_mut().for_each(|v| *v = 0.0);
        self.y[..n].copy_from_slice(self.sys.target());
        self.y[n..d].copy_from_slice(p0);
        for (k, v) in tangents.iter().enumerate() {
            let off = d * (k + 1) + n;
            self.y[off..off + n].copy_from_slice(v);
        }
    }

    /// Builds the sensitivity matrix from a full variational state.
    fn sensitivity(&mut self, y: &[f64]) -> Result<f64> {
        let n = self.sys.n();
        let d = 2 * n;
        let mut z = vec![0.0; d];
        self.flow.base.rhs(0.0, &y[..d], &mut z)?;
        self.dx.copy_from_slice(&z[..n]);
        for r in 0..n {
            self.jac[r * n] = self.dx[r];
            self.pjac[r * n] = z[n + r];
            for k in 0..n - 1 {
                self.jac[r * n + k + 1] = y[d * (k + 1) + r];
                self.pjac[r * n + k + 1] = y[d * (k + 1) + n + r];
            }
        }
        Ok(det(&self.jac, n))
    }

    fn sample(&mut self, t: f64, y: &[f64], h1_0: f64, passed: bool) -> Result<ArcSample> {
        let n = self.sys.n();
        let _ = self.sensitivity(y)?;
        let h1 = hamiltonian_h1(self.sys, &y[..n], &y[n..2 * n]);
        if (h1 - h1_0).abs() > self.opts.h1_tol * h1_0 {
            return Err(Error::IntegrationFailure(format!(
                "H1 drift {:e} at t = {t}",
                (h1 - h1_0).abs()
            )));
        }
        Ok(ArcSample {
            t,
            x: y[..n].to_vec(),
            p: y[n..2 * n].to_vec(),
            jac: self.jac.clone(),
            pjac: self.pjac.clone(),
            h1,
            conjugate_passed: passed,
        })
    }

    /// Walks the extremal from `(x̄, p0)` up to `t_end`. Samples are emitted at
    /// `t = 0`, every stride multiple, at the first conjugate time (when
    /// `detect_conjugate`), and at `t_end`. After a conjugate time the walk
    /// continues for `overshoot` more time units, then stops.
    pub(crate) fn walk(
        &mut self,
        p0: &[f64],
        tangents: &[Vec<f64>],
        t_end: f64,
        detect_conjugate: bool,
        overshoot: f64,
        mut visit: impl FnMut(&ArcSample) -> Walk,
    ) -> Result<Option<f64>> {
        let n = self.sys.n();
        self.fill_initial(p0, tangents);
        let h1_0 = hamiltonian_h1(self.sys, self.sys.target(), p0);
        if !(h1_0 > H1_FLOOR) {
            return Err(Error::DegenerateCovector { h1: h1_0 });
        }
        let y0 = self.y.clone();
        self.rk.init(&mut self.flow, 0.0, &y0)?;

        let first = self.sample(0.0, &y0, h1_0, false)?;
        if visit(&first) == Walk::Stop || t_end <= 0.0 {
            return Ok(None);
        }

        let stride = self.opts.sample_stride;
        let mut next_sample = 1usize;
        let mut prev_det: Option<(f64, f64)> = None;
        let mut conj: Option<f64> = None;
        let mut stop_at = t_end;

        while self.rk.time() < stop_at {
            let t1 = self.rk.step(&mut self.flow, stop_at)?;
            let t0 = self.rk.last_step_start();
            // evaluation points inside (t0, t1]
            loop {
                let ts = next_sample as f64 * stride;
                let at_end = ts >= t1 - 1e-12 * t1.max(1.0);
                let t_eval = if at_end { t1 } else { ts };
                if at_end && (ts - t1).abs() <= 1e-12 * t1.max(1.0) {
                    next_sample += 1;
                }
                let mut y = std::mem::take(&mut self.ybuf);
                self.rk.dense(t_eval, &mut y);
                let dj = self.sensitivity(&y)?;

                if detect_conjugate && conj.is_none() {
                    if let Some((tp, dp)) = prev_det {
                        if dp != 0.0 && dj.signum() != dp.signum() && tp >= t0 - 1e-15 {
                            let tc = self.bisect_conjugate(tp, dp, t_eval)?;
                            conj = Some(tc);
                            let mut yc = vec![0.0; y.len()];
                            self.rk.dense(tc, &mut yc);
                            let sc = self.sample(tc, &yc, h1_0, false)?;
                            if visit(&sc) == Walk::Stop {
                                self.ybuf = y;
                                return Ok(conj);
                            }
                            stop_at = stop_at.min(tc + overshoot);
                        }
                    }
                    if dj != 0.0 {
                        prev_det = Some((t_eval, dj));
                    }
                }

                let is_sample = !at_end || (t_eval - t1).abs() <= 0.0 && t1 >= stop_at;
                let on_grid = (t_eval / stride - (t_eval / stride).round()).abs() < 1e-9;
                if (is_sample || on_grid) && t_eval <= stop_at {
                    let passed = conj.is_some_and(|tc| t_eval > tc);
                    let s = self.sample(t_eval, &y, h1_0, passed)?;
                    if visit(&s) == Walk::Stop {
                        self.ybuf = y;
                        return Ok(conj);
                    }
                }
                self.ybuf = y;
                if at_end {
                    break;
                }
                next_sample += 1;
            }
        }
        let _ = n;
        Ok(conj)
    }

    fn bisect_conjugate(&mut self, mut a: f64, da: f64, mut b: f64) -> Result<f64> {
        let mut y = vec![0.0; self.y.len()];
        while b - a > CONJUGATE_TIME_TOL {
            let mid = 0.5 * (a + b);
            self.rk.dense(mid, &mut y);
            let dm = self.sensitivity(&y)?;
            if dm == 0.0 {
                return Ok(mid);
            }
            if dm.signum() == da.signum() {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(0.5 * (a + b))
    }

    /// Integrates to `t` and returns the final `(x, p, J)` without sampling.
    pub(crate) fn endpoint(
        &mut self,
        p0: &[f64],
        tangents: &[Vec<f64>],
        t: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.sys.n();
        self.fill_initial(p0, tangents);
        let h1_0 = hamiltonian_h1(self.sys, self.sys.target(), p0);
        if !(h1_0 > H1_FLOOR) {
            return Err(Error::DegenerateCovector { h1: h1_0 });
        }
        let y0 = self.y.clone();
        self.rk.init(&mut self.flow, 0.0, &y0)?;
        if t > 0.0 {
            self.rk.integrate_to(&mut self.flow, t)?;
        }
        let y = self.rk.state().to_vec();
        self.sensitivity(&y)?;
        Ok((y[..n].to_vec(), y[n..2 * n].to_vec(), self.jac.clone()))
    }
}

fn slice_tangents(sys: &ControlSystem, slice: &CovectorSlice, p0: &[f64]) -> Vec<Vec<f64>> {
    let h1 = hamiltonian_h1(sys, sys.target(), p0);
    let chart = slice.chart_of(p0, sys);
    (0..slice.dim())
        .map(|k| slice.tangent(&chart, k).into_iter().map(|v| v * h1).collect())
        .collect()
}

/// Result of [`exponential_map`].
#[derive(Debug, Clone)]
pub struct ExpMapResult {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub arc: ExtremalArc,
}

/// Endpoint at time `t` of the normal extremal from `(x̄, p0)`.
pub fn exponential_map(
    sys: &ControlSystem,
    p0: &[f64],
    t: f64,
    opts: &IntegratorOptions,
) -> Result<ExpMapResult> {
    if p0.len() != sys.n() {
        return Err(Error::InvalidDimension { expected: sys.n(), got: p0.len() });
    }
    if !(t >= 0.0) {
        return Err(Error::IntegrationFailure(format!("negative horizon {t}")));
    }
    let slice = CovectorSlice::new(sys)?;
    let tangents = slice_tangents(sys, &slice, p0);
    let mut walker = ArcWalker::new(sys, opts);
    let mut samples = Vec::new();
    walker.walk(p0, &tangents, t, false, 0.0, |s| {
        samples.push(s.clone());
        Walk::Continue
    })?;
    let last = samples.last().expect("at least the initial sample");
    let (x, p) = if t == 0.0 { (sys.target().to_vec(), p0.to_vec()) } else { (last.x.clone(), last.p.clone()) };
    Ok(ExpMapResult { x, p, arc: ExtremalArc { p0: p0.to_vec(), samples, conjugate_time: None } })
}

/// First time in `(0, t_max]` where `det J` changes sign, refined by bisection.
pub fn conjugate_time(
    sys: &ControlSystem,
    p0: &[f64],
    t_max: f64,
    opts: &IntegratorOptions,
) -> Result<Option<f64>> {
    if p0.len() != sys.n() {
        return Err(Error::InvalidDimension { expected: sys.n(), got: p0.len() });
    }
    let slice = CovectorSlice::new(sys)?;
    let tangents = slice_tangents(sys, &slice, p0);
    let mut walker = ArcWalker::new(sys, opts);
    walker.walk(p0, &tangents, t_max, true, 0.0, |s| if s.conjugate_passed { Walk::Stop } else { Walk::Continue })
}

/// Converged solution of `exp(t, p₀(c)) = y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotSolution {
    pub t: f64,
    pub chart: Vec<f64>,
    /// Adjoint at the endpoint; equals ∇T there when the extremal is minimising.
    pub p_end: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Sign of `det J` at the endpoint.
    pub det_sign: f64,
}

/// Newton shooting on `(t, chart)` for `exp(t, p₀(chart)) = y`, with
/// backtracking on the residual norm.
pub struct Shooter<'a> {
    sys: &'a ControlSystem,
    slice: CovectorSlice,
    walker: ArcWalker<'a>,
    pub tol: f64,
    pub max_iter: usize,
}

impl<'a> Shooter<'a> {
    pub fn new(sys: &'a ControlSystem, opts: &IntegratorOptions) -> Result<Self> {
        Ok(Self {
            sys,
            slice: CovectorSlice::new(sys)?,
            walker: ArcWalker::new(sys, opts),
            tol: 1e-10,
            max_iter: 30,
        })
    }

    pub fn slice(&self) -> &CovectorSlice {
        &self.slice
    }

    fn eval(&mut self, t: f64, chart: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let p0 = self.slice.covector(chart);
        let tangents: Vec<Vec<f64>> = (0..self.slice.dim()).map(|k| self.slice.tangent(chart, k)).collect();
        self.walker.endpoint(&p0, &tangents, t)
    }

    pub fn solve(&mut self, target: &[f64], t_guess: f64, chart_guess: &[f64]) -> Result<ShotSolution> {
        let n = self.sys.n();
        let fail = |reason: String| Error::ShootingFailure { target: target.to_vec(), reason };
        let mut t = t_guess.max(1e-6);
        let mut chart = chart_guess.to_vec();
        let (mut x, mut p, mut jac) = self.eval(t, &chart)?;
        let mut r: Vec<f64> = x.iter().zip(target).map(|(a, b)| a - b).collect();
        let mut rn = norm(&r);
        for it in 0..self.max_iter {
            if rn <= self.tol {
                return Ok(ShotSolution {
                    t,
                    chart,
                    p_end: p,
                    residual: rn,
                    iterations: it,
                    det_sign: det(&jac, n).signum(),
                });
            }
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let delta = solve(&jac, &neg, n).ok_or_else(|| fail("singular sensitivity".into()))?;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let mut t_try = t + step * delta[0];
                if t_try <= 0.0 {
                    t_try = 0.5 * t;
                }
                let c_try: Vec<f64> = chart.iter().zip(&delta[1..]).map(|(c, d)| c + step * d).collect();
                match self.eval(t_try, &c_try) {
                    Ok((xt, pt, jt)) => {
                        let rt: Vec<f64> = xt.iter().zip(target).map(|(a, b)| a - b).collect();
                        let rtn = norm(&rt);
                        if rtn < rn {
                            t = t_try;
                            chart = c_try;
                            x = xt;
                            p = pt;
                            jac = jt;
                            r = rt;
                            rn = rtn;
                            accepted = true;
                            break;
                        }
                    }
                    Err(Error::DegenerateCovector { .. }) => {}
                    Err(e) => return Err(e),
                }
                step *= 0.5;
            }
            if !accepted {
                return Err(fail(format!("line search stalled at residual {rn:e}")));
            }
        }
        let _ = &x;
        if rn <= self.tol {
            return Ok(ShotSolution {
                t,
                chart,
                p_end: p,
                residual: rn,
                iterations: self.max_iter,
                det_sign: det(&jac, n).signum(),
            });
        }
        Err(fail(format!("no convergence, residual {rn:e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::brockett_system;

    #[test]
    fn h1_examples() {
        let sys = brockett_system();
        assert_eq!(hamiltonian_h1(&sys, &[0.0; 3], &[3.0, 4.0, 0.0]), 5.0);
        assert_eq!(hamiltonian_h1(&sys, &[0.0; 3], &[0.0, 0.0, 1.0]), 0.0);
        assert_eq!(hamiltonian_h1(&sys, &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]), 1.0);
    }

    #[test]
    fn extremal_control_examples() {
        let sys = brockett_system();
        let u = extremal_control(&sys, &[0.0; 3], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(u.as_slice(), &[1.0, 0.0]);
        let u = extremal_control(&sys, &[0.0; 3], &[0.0, 2.0, 0.0]).unwrap();
        assert_eq!(u.as_slice(), &[0.0, 1.0]);
        assert!(matches!(
            extremal_control(&sys, &[0.0; 3], &[0.0, 0.0, 1.0]),
            Err(Error::DegenerateCovector { .. })
        ));
    }

    #[test]
    fn rhs_straight_cases() {
        let sys = brockett_system();
        let (xd, pd) = extremal_rhs(&sys, &[0.0; 3], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(xd, vec![1.0, 0.0, 0.0]);
        assert_eq!(pd, vec![0.0, 0.0, 0.0]);
        let (xd, pd) = extremal_rhs(&sys, &[0.0; 3], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(xd, vec![0.0, 1.0, 0.0]);
        assert!(pd.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rhs_matches_finite_differences_of_h1() {
        let sys = brockett_system();
        let x = [0.0, 0.0, 0.0];
        let p = [1.0, 0.0, 1.0];
        let (xd, pd) = extremal_rhs(&sys, &x, &p).unwrap();
        assert_eq!(xd, vec![1.0, 0.0, 0.0]);
        // hand derivation: ṗ = (u₂p₃, −u₁p₃, 0) = (0, −1, 0)
        assert!((pd[0]).abs() < 1e-15 && (pd[1] + 1.0).abs() < 1e-15 && pd[2] == 0.0);
        let h = 1e-6;
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let g = (hamiltonian_h1(&sys, &xp, &p) - hamiltonian_h1(&sys, &xm, &p)) / (2.0 * h);
            assert!((pd[k] + g).abs() < 1e-6, "component {k}");
            let mut pp = p;
            let mut pm = p;
            pp[k] += h;
            pm[k] -= h;
            let g = (hamiltonian_h1(&sys, &x, &pp) - hamiltonian_h1(&sys, &x, &pm)) / (2.0 * h);
            assert!((xd[k] - g).abs() < 1e-6);
        }
    }

    #[test]
    fn brockett_slice_chart() {
        let sys = brockett_system();
        let slice = CovectorSlice::new(&sys).unwrap();
        assert_eq!(slice.dim(), 2);
        let p = slice.covector(&[0.3, -1.7]);
        assert!((p[0] - 0.3f64.cos()).abs() < 1e-15);
        assert!((p[1] - 0.3f64.sin()).abs() < 1e-15);
        assert!((p[2] + 1.7).abs() < 1e-15);
        let c = slice.chart_of(&p, &sys);
        assert!((c[0] - 0.3).abs() < 1e-12 && (c[1] + 1.7).abs() < 1e-12);
        let c = slice.chart_of(&slice.covector(&[5.0, 0.2]), &sys);
        assert!((c[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_map_at_zero_is_target() {
        let sys = brockett_system();
        let r = exponential_map(&sys, &[0.6, 0.8, 3.0], 0.0, &IntegratorOptions::default()).unwrap();
        assert_eq!(r.x, vec![0.0; 3]);
    }

    #[test]
    fn shooting_recovers_known_extremal() {
        let sys = brockett_system();
        let opts = IntegratorOptions::default();
        let mut shooter = Shooter::new(&sys, &opts).unwrap();
        let chart = [0.7, 0.4];
        let p0 = shooter.slice().covector(&chart);
        let target = exponential_map(&sys, &p0, 1.3, &opts).unwrap();
        let sol = shooter.solve(&target.x, 1.0, &[0.5, 0.2]).unwrap();
        assert!((sol.t - 1.3).abs() < 1e-8, "{sol:?}");
        assert!((sol.chart[0] - 0.7).abs() < 1e-7 && (sol.chart[1] - 0.4).abs() < 1e-7);
        for k in 0..3 {
            assert!((sol.p_end[k] - target.p[k]).abs() < 1e-7);
        }
    }
}
