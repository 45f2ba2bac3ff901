//! Driftless control-affine systems `ẋ = Σ uᵢ fᵢ(x)` with `‖u‖ ≤ 1`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Pointwise evaluator `x ↦ v` writing into `out`.
pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Default slack for [`validate_control`].
pub const CONTROL_TOL: f64 = 1e-9;

/// An m-tuple of smooth vector fields on ℝⁿ together with their Jacobians and
/// the target point x̄ that the whole pipeline steers to.
#[derive(Clone)]
pub struct ControlSystem {
    name: String,
    n: usize,
    m: usize,
    fields: Vec<FieldFn>,
    /// Row-major n×n Jacobians `∂fᵢ/∂x`.
    jacobians: Vec<FieldFn>,
    target: Vec<f64>,
    /// Weights `wₖ` of a dilation `xₖ ↦ λ^{wₖ} xₖ` about the target under
    /// which the fields are homogeneous of degree −1.
    dilation: Option<Vec<f64>>,
}

impl fmt::Debug for ControlSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("target", &self.target)
            .finish()
    }
}

impl ControlSystem {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        fields: Vec<FieldFn>,
        jacobians: Vec<FieldFn>,
        target: Vec<f64>,
    ) -> Result<Self> {
        let m = fields.len();
        if n == 0 || m == 0 {
            return Err(Error::InvalidDimension { expected: 1, got: 0 });
        }
        if jacobians.len() != m {
            return Err(Error::InvalidDimension { expected: m, got: jacobians.len() });
        }
        if target.len() != n {
            return Err(Error::InvalidDimension { expected: n, got: target.len() });
        }
        Ok(Self { name: name.into(), n, m, fields, jacobians, target, dilation: None })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn with_target(mut self, target: Vec<f64>) -> Result<Self> {
        self.check_state(&target)?;
        if target != self.target {
            self.dilation = None;
        }
        self.target = target;
        Ok(self)
    }

    pub fn with_dilation(mut self, weights: Vec<f64>) -> Result<Self> {
        self.check_state(&weights)?;
        self.dilation = Some(weights);
        Ok(self)
    }

    pub fn dilation(&self) -> Option<&[f64]> {
        self.dilation.as_deref()
    }

    /// `δ_λ(x)` about the target, if the system has a dilation.
    pub fn dilate(&self, x: &[f64], lambda: f64) -> Option<Vec<f64>> {
        let w = self.dilation.as_ref()?;
        Some(
            x.iter()
                .zip(&self.target)
                .zip(w)
                .map(|((xi, ti), wi)| ti + lambda.powf(*wi) * (xi - ti))
                .collect(),
        )
    }

    /// Homogeneous quasi-norm `maxₖ |xₖ − x̄ₖ|^{1/wₖ}`.
    pub fn quasi_norm(&self, x: &[f64]) -> Option<f64> {
        let w = self.dilation.as_ref()?;
        Some(
            x.iter()
                .zip(&self.target)
                .zip(w)
                .map(|((xi, ti), wi)| (xi - ti).abs().powf(1.0 / wi))
                .fold(0.0, f64::max),
        )
    }

    pub(crate) fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::InvalidDimension { expected: self.n, got: x.len() });
        }
        Ok(())
    }

    /// Writes `fᵢ(x)` into `out` (length n). No dimension checks: hot path.
    #[inline]
    pub fn field_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        (self.fields[i])(x, out)
    }

    /// Writes the row-major Jacobian of `fᵢ` at x into `out` (length n²).
    #[inline]
    pub fn jacobian_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        (self.jacobians[i])(x, out)
    }

    pub fn field(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.field_into(i, x, &mut out);
        out
    }

    pub fn jacobian(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        self.jacobian_into(i, x, &mut out);
        out
    }

    /// `Σ uᵢ fᵢ(x)` written into `out`; `scratch` must have length n.
    #[inline]
    pub fn dynamics_into(&self, x: &[f64], u: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            self.field_into(i, x, scratch);
            for (o, s) in out.iter_mut().zip(scratch.iter()) {
                *o += ui * s;
            }
        }
    }
}

/// A control value. `admissible` is set only by [`validate_control`] or by
/// constructors that normalise by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVector {
    u: Vec<f64>,
    admissible: bool,
}

impl ControlVector {
    /// Raw control, not checked against the constraint.
    pub fn raw(u: Vec<f64>) -> Self {
        Self { u, admissible: false }
    }

    pub fn zero(m: usize) -> Self {
        Self { u: vec![0.0; m], admissible: true }
    }

    /// Divides by the Euclidean norm. The caller guarantees a nonzero input.
    pub(crate) fn unit(mut u: Vec<f64>) -> Self {
        let norm = crate::linalg::norm(&u);
        u.iter_mut().for_each(|v| *v /= norm);
        Self { u, admissible: true }
    }

    /// Scales an admissible control by `factor ∈ [0, 1]`.
    pub fn scaled(&self, factor: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&factor));
        Self {
            u: self.u.iter().map(|v| v * factor).collect(),
            admissible: self.admissible,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.u
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.u
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.u)
    }

    pub fn is_admissible(&self) -> bool {
        self.admissible
    }
}

/// Checks `‖u‖ ≤ 1 + tol`; values slightly outside the ball are renormalised.
pub fn validate_control(u: &[f64], tol: f64) -> Result<ControlVector> {
    let norm = crate::linalg::norm(u);
    if !norm.is_finite() || norm > 1.0 + tol {
        return Err(Error::ConstraintViolation { norm, tol });
    }
    if norm > 1.0 {
        return Ok(ControlVector::unit(u.to_vec()));
    }
    Ok(ControlVector { u: u.to_vec(), admissible: true })
}

/// `f(x, u) = Σ uᵢ fᵢ(x)`.
pub fn eval_dynamics(sys: &ControlSystem, x: &[f64], u: &ControlVector) -> Result<Vec<f64>> {
    sys.check_state(x)?;
    if u.as_slice().len() != sys.m() {
        return Err(Error::InvalidDimension { expected: sys.m(), got: u.as_slice().len() });
    }
    let mut out = vec![0.0; sys.n()];
    let mut scratch = vec![0.0; sys.n()];
    sys.dynamics_into(x, u.as_slice(), &mut out, &mut scratch);
    Ok(out)
}

/// The Brockett nonholonomic integrator (Heisenberg group):
/// `f₁ = ∂/∂x₁ + x₂ ∂/∂x₃`, `f₂ = ∂/∂x₂ − x₁ ∂/∂x₃`, target at the origin.
pub fn brockett_system() -> ControlSystem {
    let f1: FieldFn = Arc::new(|x: &[f64], out: &mut [f64]| {
        out[0] = 1.0;
        out[1] = 0.0;
        out[2] = x[1];
    });
    let f2: FieldFn = Arc::new(|x: &[f64], out: &mut [f64]| {
        out[0] = 0.0;
        out[1] = 1.0;
        out[2] = -x[0];
    });
    let j1: FieldFn = Arc::new(|_x: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[2 * 3 + 1] = 1.0;
    });
    let j2: FieldFn = Arc::new(|_x: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[2 * 3] = -1.0;
    });
    ControlSystem::new("brockett", 3, vec![f1, f2], vec![j1, j2], vec![0.0; 3])
        .and_then(|s| s.with_dilation(vec![1.0, 1.0, 2.0]))
        .expect("static dimensions")
}
