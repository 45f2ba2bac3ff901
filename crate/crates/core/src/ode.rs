//! Adaptive Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! The stepper exposes single accepted steps so callers can scan the dense
//! interpolant of the last step for events (conjugate times, region
//! crossings) and bisect on it.

use crate::error::{Error, Result};

/// A first-order system `y' = F(t, y)`. The right-hand side may fail, e.g.
/// when an extremal reaches an abnormal covector.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

/// Tolerances and step limits for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    /// Allowed drift of the conserved Hamiltonian along extremals.
    pub h1_tol: f64,
    /// Sampling stride for arcs and conjugate-time bracketing.
    pub sample_stride: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-9, rel_tol: 1e-9, max_step: 0.1, h1_tol: 1e-6, sample_stride: 1e-2 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const MAX_STEPS: usize = 2_000_000;

/// Dormand–Prince stepper state. Reusable across integrations via [`Dopri5::init`].
#[derive(Debug, Clone)]
pub struct Dopri5 {
    dim: usize,
    abs_tol: f64,
    rel_tol: f64,
    max_step: f64,
    t: f64,
    y: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 7],
    ystage: Vec<f64>,
    ynew: Vec<f64>,
    // dense output of the last accepted step
    t_old: f64,
    h_last: f64,
    cont: [Vec<f64>; 5],
    steps: usize,
}

impl Dopri5 {
    pub fn new(dim: usize, opts: &IntegratorOptions) -> Self {
        let v = || vec![0.0; dim];
        Self {
            dim,
            abs_tol: opts.abs_tol,
            rel_tol: opts.rel_tol,
            max_step: opts.max_step,
            t: 0.0,
            y: v(),
            h: 0.0,
            k: [v(), v(), v(), v(), v(), v(), v()],
            ystage: v(),
            ynew: v(),
            t_old: 0.0,
            h_last: 0.0,
            cont: [v(), v(), v(), v(), v()],
            steps: 0,
        }
    }

    pub fn set_max_step(&mut self, max_step: f64) {
        self.max_step = max_step;
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &[f64] {
        &self.y
    }

    /// Derivative at the current point (first stage of the next step).
    pub fn derivative(&self) -> &[f64] {
        &self.k[0]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Start of the last accepted step.
    pub fn last_step_start(&self) -> f64 {
        self.t_old
    }

    pub fn init<S: OdeSystem>(&mut self, sys: &mut S, t0: f64, y0: &[f64]) -> Result<()> {
        debug_assert_eq!(y0.len(), self.dim);
        self.t = t0;
        self.t_old = t0;
        self.h_last = 0.0;
        self.y.copy_from_slice(y0);
        self.steps = 0;
        sys.rhs(t0, &self.y, &mut self.k[0])?;
        self.h = self.initial_step(sys)?;
        Ok(())
    }

    /// Re-evaluates the stage-1 derivative after the right-hand side changed
    /// discontinuously (held noise refreshed, label switched).
    pub fn refresh<S: OdeSystem>(&mut self, sys: &mut S) -> Result<()> {
        sys.rhs(self.t, &self.y, &mut self.k[0])
    }

    /// Overwrites the current state (used at jumps) and refreshes the derivative.
    pub fn reset_state<S: OdeSystem>(&mut self, sys: &mut S, t: f64, y: &[f64]) -> Result<()> {
        self.t = t;
        self.y.copy_from_slice(y);
        self.refresh(sys)
    }

    fn initial_step<S: OdeSystem>(&mut self, sys: &mut S) -> Result<f64> {
        let n = self.dim;
        let (mut d0, mut d1) = (0.0, 0.0);
        for i in 0..n {
            let sk = self.abs_tol + self.rel_tol * self.y[i].abs();
            d0 += (self.y[i] / sk).powi(2);
            d1 += (self.k[0][i] / sk).powi(2);
        }
        d0 = (d0 / n as f64).sqrt();
        d1 = (d1 / n as f64).sqrt();
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(self.max_step);
        for i in 0..n {
            self.ystage[i] = self.y[i] + h0 * self.k[0][i];
        }
        sys.rhs(self.t + h0, &self.ystage, &mut self.k[1])?;
        let mut d2 = 0.0;
        for i in 0..n {
            let sk = self.abs_tol + self.rel_tol * self.y[i].abs();
            d2 += ((self.k[1][i] - self.k[0][i]) / sk).powi(2);
        }
        d2 = (d2 / n as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(self.max_step))
    }

    /// Takes one accepted step, never passing `t_limit`. Returns the new time.
    pub fn step<S: OdeSystem>(&mut self, sys: &mut S, t_limit: f64) -> Result<f64> {
        let n = self.dim;
        let mut h = self.h.min(self.max_step);
        loop {
            self.steps += 1;
            if self.steps > MAX_STEPS {
                return Err(Error::IntegrationFailure("too many steps".into()));
            }
            let remaining = t_limit - self.t;
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            if h <= 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::IntegrationFailure(format!(
                    "step size underflow at t = {}",
                    self.t
                )));
            }
            let t = self.t;
            let y = &self.y;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let ys = &mut self.ystage;

            for i in 0..n {
                ys[i] = y[i] + h * A21 * k1[i];
            }
            sys.rhs(t + C2 * h, ys, k2)?;
            for i in 0..n {
                ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            sys.rhs(t + C3 * h, ys, k3)?;
            for i in 0..n {
                ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            sys.rhs(t + C4 * h, ys, k4)?;
            for i in 0..n {
                ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            sys.rhs(t + C5 * h, ys, k5)?;
            for i in 0..n {
                ys[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let t_new = if last { t_limit } else { t + h };
            sys.rhs(t_new, ys, k6)?;
            let yn = &mut self.ynew;
            for i in 0..n {
                yn[i] = y[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            sys.rhs(t_new, yn, k7)?;

            let mut err = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
                let sk = self.abs_tol + self.rel_tol * y[i].abs().max(yn[i].abs());
                err += (e / sk).powi(2);
            }
            err = (err / n as f64).sqrt();
            if !err.is_finite() {
                h *= 0.2;
                continue;
            }

            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 10.0);
            if err <= 1.0 {
                for i in 0..n {
                    let dy = yn[i] - y[i];
                    let bspl = h * k1[i] - dy;
                    self.cont[0][i] = y[i];
                    self.cont[1][i] = dy;
                    self.cont[2][i] = bspl;
                    self.cont[3][i] = dy - h * k7[i] - bspl;
                    self.cont[4][i] = h
                        * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                            + D7 * k7[i]);
                }
                self.t_old = t;
                self.h_last = t_new - t;
                self.t = t_new;
                std::mem::swap(&mut self.y, &mut self.ynew);
                self.k.swap(0, 6);
                // keep the proposed step even when truncated by `t_limit`
                self.h = if last { self.h.max(h) } else { (h * fac).min(self.max_step) };
                return Ok(self.t);
            }
            h *= fac.min(1.0);
        }
    }

    /// Integrates up to `t_end` exactly.
    pub fn integrate_to<S: OdeSystem>(&mut self, sys: &mut S, t_end: f64) -> Result<()> {
        while self.t < t_end {
            self.step(sys, t_end)?;
        }
        Ok(())
    }

    /// Evaluates the dense interpolant of the last accepted step at `t`.
    pub fn dense(&self, t: f64, out: &mut [f64]) {
        if self.h_last == 0.0 {
            out.copy_from_slice(&self.y);
            return;
        }
        let th = (t - self.t_old) / self.h_last;
        let th1 = 1.0 - th;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.cont[0][i]
                + th * (self.cont[1][i]
                    + th1 * (self.cont[2][i] + th * (self.cont[3][i] + th1 * self.cont[4][i])));
        }
    }

    /// Time derivative of the dense interpolant at `t`.
    pub fn dense_derivative(&self, t: f64, out: &mut [f64]) {
        if self.h_last == 0.0 {
            out.copy_from_slice(&self.k[0]);
            return;
        }
        let th = (t - self.t_old) / self.h_last;
        let th1 = 1.0 - th;
        for (i, o) in out.iter_mut().enumerate() {
            let (r2, r3, r4, r5) = (self.cont[1][i], self.cont[2][i], self.cont[3][i], self.cont[4][i]);
            let a = r4 + th1 * r5;
            let b = r3 + th * a;
            let c = r2 + th1 * b;
            let db = a - th * r5;
            let dc = -b + th1 * db;
            *o = (c + th * dc) / self.h_last;
        }
    }
}
