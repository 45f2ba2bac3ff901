use proptest::prelude::*;
use qmt::{brockett_system, eval_dynamics, validate_control};

proptest! {
    #[test]
    fn dynamics_are_linear_in_u(
        x in prop::array::uniform3(-5.0..5.0f64),
        u in prop::array::uniform2(-0.7..0.7f64),
        v in prop::array::uniform2(-0.7..0.7f64),
        a in -1.0..1.0f64,
        b in -1.0..1.0f64,
    ) {
        let sys = brockett_system();
        let fu = eval_dynamics(&sys, &x, &validate_control(&u, 0.0).unwrap()).unwrap();
        let fv = eval_dynamics(&sys, &x, &validate_control(&v, 0.0).unwrap()).unwrap();
        let w = [a * u[0] + b * v[0], a * u[1] + b * v[1]];
        let fw = eval_dynamics(&sys, &x, &qmt::ControlVector::raw(w.to_vec())).unwrap();
        for i in 0..3 {
            prop_assert!((fw[i] - (a * fu[i] + b * fv[i])).abs() <= 1e-12);
        }
        prop_assert_eq!(fu[2], u[0] * x[1] - u[1] * x[0]);
    }

    #[test]
    fn jacobians_match_finite_differences(x in prop::array::uniform3(-3.0..3.0f64)) {
        let sys = brockett_system();
        let h = 1e-6;
        for i in 0..sys.m() {
            let jac = sys.jacobian(i, &x);
            for c in 0..3 {
                let (mut xp, mut xm) = (x, x);
                xp[c] += h;
                xm[c] -= h;
                let (fp, fm) = (sys.field(i, &xp), sys.field(i, &xm));
                for r in 0..3 {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    prop_assert!((fd - jac[r * 3 + c]).abs() <= 1e-6 * (1.0 + fd.abs()));
                }
            }
        }
    }
}
