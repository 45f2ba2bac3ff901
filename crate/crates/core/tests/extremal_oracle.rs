use proptest::prelude::*;
use qmt::brockett_system;
use qmt::extremal::{conjugate_time, exponential_map, extremal_control, hamiltonian_h1, CovectorSlice};
use qmt::ode::IntegratorOptions;

// Independent oracle: classical RK4 on the Brockett Hamiltonian, written out by hand.
fn ham(z: [f64; 6]) -> [f64; 6] {
    let (x1, x2, p1, p2, p3) = (z[0], z[1], z[3], z[4], z[5]);
    let h1 = p1 + p3 * x2;
    let h2 = p2 - p3 * x1;
    let n = (h1 * h1 + h2 * h2).sqrt();
    let (u1, u2) = (h1 / n, h2 / n);
    [u1, u2, u1 * x2 - u2 * x1, u2 * p3, -u1 * p3, 0.0]
}

fn rk4(p0: [f64; 3], t: f64, steps: usize) -> [f64; 3] {
    let mut z = [0.0, 0.0, 0.0, p0[0], p0[1], p0[2]];
    let h = t / steps as f64;
    let add = |a: [f64; 6], b: [f64; 6], s: f64| {
        let mut o = a;
        for i in 0..6 {
            o[i] += s * b[i];
        }
        o
    };
    for _ in 0..steps {
        let k1 = ham(z);
        let k2 = ham(add(z, k1, h / 2.0));
        let k3 = ham(add(z, k2, h / 2.0));
        let k4 = ham(add(z, k3, h));
        for i in 0..6 {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    [z[0], z[1], z[2]]
}

/// Halves the RK4 step until successive endpoints agree to `tol`.
fn oracle_endpoint(p0: [f64; 3], t: f64, tol: f64) -> [f64; 3] {
    let mut steps = 64;
    let mut prev = rk4(p0, t, steps);
    loop {
        steps *= 2;
        let next = rk4(p0, t, steps);
        let d = (0..3).map(|i| (next[i] - prev[i]).abs()).fold(0.0, f64::max);
        if d < tol {
            return next;
        }
        prev = next;
    }
}

fn oracle_det(c: [f64; 2], t: f64) -> f64 {
    let p = |c: [f64; 2]| [c[0].cos(), c[0].sin(), c[1]];
    let e = 1e-5;
    let x = rk4(p(c), t, 4000);
    let xt = rk4(p(c), t + e, 4000);
    let xa = rk4(p([c[0] + e, c[1]]), t, 4000);
    let xl = rk4(p([c[0], c[1] + e]), t, 4000);
    let col = |y: [f64; 3]| [(y[0] - x[0]) / e, (y[1] - x[1]) / e, (y[2] - x[2]) / e];
    let (a, b, cc) = (col(xt), col(xa), col(xl));
    a[0] * (b[1] * cc[2] - b[2] * cc[1]) - b[0] * (a[1] * cc[2] - a[2] * cc[1])
        + cc[0] * (a[1] * b[2] - a[2] * b[1])
}

// Frozen from `oracle_endpoint([1,0,1], 1, 1e-12)`, cross-checked with a
// high-precision Taylor integration.
const CURVED_ENDPOINT: [f64; 3] = [0.45464871341284085, -0.70807341827357119, 0.27267564329357958];
// Frozen from the bisection of `oracle_det` for θ = 0, λ = 2.
const CONJUGATE_LAMBDA2: f64 = 1.5707963267948966;

#[test]
fn oracle_reproduces_frozen_values() {
    let e = oracle_endpoint([1.0, 0.0, 1.0], 1.0, 1e-10);
    for i in 0..3 {
        assert!((e[i] - CURVED_ENDPOINT[i]).abs() < 1e-9);
    }
    let (mut a, mut b) = (1.4, 1.7);
    let da = oracle_det([0.0, 2.0], a);
    assert!(da * oracle_det([0.0, 2.0], b) < 0.0);
    while b - a > 1e-7 {
        let m = 0.5 * (a + b);
        if oracle_det([0.0, 2.0], m).signum() == da.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    assert!((0.5 * (a + b) - CONJUGATE_LAMBDA2).abs() < 1e-6);
}

#[test]
fn straight_lines_are_exact() {
    let sys = brockett_system();
    let opts = IntegratorOptions::default();
    let r = exponential_map(&sys, &[1.0, 0.0, 0.0], 2.0, &opts).unwrap();
    for (a, b) in r.x.iter().zip([2.0, 0.0, 0.0]) {
        assert!((a - b).abs() < 1e-9);
    }
    let r = exponential_map(&sys, &[0.0, 1.0, 0.0], 0.5, &opts).unwrap();
    for (a, b) in r.x.iter().zip([0.0, 0.5, 0.0]) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn curved_endpoint_matches_oracle() {
    let sys = brockett_system();
    let r = exponential_map(&sys, &[1.0, 0.0, 1.0], 1.0, &IntegratorOptions::default()).unwrap();
    for i in 0..3 {
        assert!((r.x[i] - CURVED_ENDPOINT[i]).abs() < 1e-7, "{:?}", r.x);
    }
    assert!(r.arc.max_h1_drift() <= 1e-6);
}

#[test]
fn conjugate_times() {
    let sys = brockett_system();
    let opts = IntegratorOptions::default();
    assert_eq!(conjugate_time(&sys, &[1.0, 0.0, 0.0], 10.0, &opts).unwrap(), None);
    let tc = conjugate_time(&sys, &[1.0, 0.0, 2.0], 10.0, &opts).unwrap().unwrap();
    assert!((tc - CONJUGATE_LAMBDA2).abs() < 1e-7, "{tc}");
    let p = [0.3, (1.0f64 - 0.09).sqrt(), 7.0];
    assert_eq!(conjugate_time(&sys, &p, 0.02, &opts).unwrap(), None);
}

#[test]
fn dilation_symmetry() {
    let sys = brockett_system();
    let opts = IntegratorOptions::default();
    let p0 = [0.8f64.cos(), 0.8f64.sin(), 1.3];
    let t = 1.1;
    let base = exponential_map(&sys, &p0, t, &opts).unwrap().x;
    for l in [0.5, 2.0] {
        let q = [p0[0] / l, p0[1] / l, p0[2] / (l * l)];
        let x = exponential_map(&sys, &q, l * t, &opts).unwrap().x;
        let want = [l * base[0], l * base[1], l * l * base[2]];
        for i in 0..3 {
            assert!((x[i] - want[i]).abs() < 1e-6, "λ={l}: {x:?} vs {want:?}");
        }
    }
}

#[test]
fn sensitivity_matches_finite_differences() {
    let sys = brockett_system();
    let opts = IntegratorOptions { abs_tol: 1e-11, rel_tol: 1e-11, ..Default::default() };
    let slice = CovectorSlice::new(&sys).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let c = [0.37 * k as f64, -2.0 + 0.08 * k as f64];
        let t = 0.3 + 0.05 * k as f64;
        let r = exponential_map(&sys, &slice.covector(&c), t, &opts).unwrap();
        let jac = &r.arc.samples.last().unwrap().jac;
        for col in 0..3 {
            let e = 1e-5;
            let (mut cp, mut cm, mut tp, mut tm) = (c, c, t, t);
            if col == 0 {
                tp += e;
                tm -= e;
            } else {
                cp[col - 1] += e;
                cm[col - 1] -= e;
            }
            let xp = exponential_map(&sys, &slice.covector(&cp), tp, &opts).unwrap().x;
            let xm = exponential_map(&sys, &slice.covector(&cm), tm, &opts).unwrap().x;
            let fd: Vec<f64> = (0..3).map(|i| (xp[i] - xm[i]) / (2.0 * e)).collect();
            let col_norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err = (0..3).map(|i| (jac[i * 3 + col] - fd[i]).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(err / col_norm.max(1e-3));
        }
    }
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn h1_is_conserved(theta in 0.0..std::f64::consts::TAU, lambda in -6.0..6.0f64) {
        let sys = brockett_system();
        let p0 = [theta.cos(), theta.sin(), lambda];
        let r = exponential_map(&sys, &p0, 5.0, &IntegratorOptions::default()).unwrap();
        prop_assert!(r.arc.samples.iter().all(|s| (s.h1 - 1.0).abs() <= 1e-6));
        for s in r.arc.samples.iter().step_by(37) {
            let u = extremal_control(&sys, &s.x, &s.p).unwrap();
            prop_assert!((u.norm() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn slice_points_have_unit_h1(theta in -10.0..10.0f64, lambda in -50.0..50.0f64) {
        let sys = brockett_system();
        let slice = CovectorSlice::new(&sys).unwrap();
        let p = slice.covector(&[theta, lambda]);
        prop_assert!((hamiltonian_h1(&sys, sys.target(), &p) - 1.0).abs() <= 1e-10);
    }
}
