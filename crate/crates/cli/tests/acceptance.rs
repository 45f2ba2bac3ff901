//! End-to-end acceptance run on the Brockett instance: synthesis, patch
//! certification, two full sweeps. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use qmt::escape::EscapePatch;
use qmt::extremal::{exponential_map, extremal_control, CovectorSlice};
use qmt::linalg::{dist, norm};
use qmt::ode::IntegratorOptions;
use qmt::synthesis::{GradientResult, MinimalTimeField, OptimalController, SingularSetModel};
use qmt::brockett_system;
use qmt_cli::pipeline::{cmd_synth, load_artifacts, Artifacts};
use qmt_cli::sweep::{cmd_sweep, SweepSummary};
use qmt_cli::ScenarioConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// Hand-written RK4 on the Brockett Hamiltonian, used as the reference for
// the curved exponential-map case.
fn ham(z: [f64; 6]) -> [f64; 6] {
    let (x1, x2, p1, p2, p3) = (z[0], z[1], z[3], z[4], z[5]);
    let h1 = p1 + p3 * x2;
    let h2 = p2 - p3 * x1;
    let n = h1.hypot(h2);
    let (u1, u2) = (h1 / n, h2 / n);
    [u1, u2, u1 * x2 - u2 * x1, u2 * p3, -u1 * p3, 0.0]
}

fn rk4(p0: [f64; 3], t: f64, steps: usize) -> [f64; 3] {
    let mut z = [0.0, 0.0, 0.0, p0[0], p0[1], p0[2]];
    let h = t / steps as f64;
    let add = |a: [f64; 6], b: [f64; 6], s: f64| std::array::from_fn::<f64, 6, _>(|i| a[i] + s * b[i]);
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

fn oracle_endpoint(p0: [f64; 3], t: f64, tol: f64) -> [f64; 3] {
    let mut steps = 64;
    let mut prev = rk4(p0, t, steps);
    loop {
        steps *= 2;
        let next = rk4(p0, t, steps);
        if (0..3).all(|i| (next[i] - prev[i]).abs() < tol) {
            return next;
        }
        prev = next;
    }
}

fn extremal_integrity() -> Outcome {
    let sys = brockett_system();
    let slice = CovectorSlice::new(&sys).unwrap();
    let opts = IntegratorOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut h1, mut u) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let c = [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(-10.0..10.0)];
        let r = exponential_map(&sys, &slice.covector(&c), 3.0, &opts).map_err(|e| e.to_string())?;
        for s in &r.arc.samples {
            h1 = h1.max((s.h1 - 1.0).abs());
            let k = extremal_control(&sys, &s.x, &s.p).map_err(|e| e.to_string())?;
            u = u.max((k.norm() - 1.0).abs());
        }
    }
    check(h1 <= 1e-6 && u <= 1e-10, format!("max |H1 - 1| = {h1:.2e}, max | |u| - 1 | = {u:.2e}"))
}

fn exponential_map_regression() -> Outcome {
    let sys = brockett_system();
    let opts = IntegratorOptions::default();
    let mut line = 0.0f64;
    for (p0, t, want) in [([1.0, 0.0, 0.0], 2.0, [2.0, 0.0, 0.0]), ([0.0, 1.0, 0.0], 0.5, [0.0, 0.5, 0.0]), ([-1.0, 0.0, 0.0], 1.0, [-1.0, 0.0, 0.0])] {
        let x = exponential_map(&sys, &p0, t, &opts).map_err(|e| e.to_string())?.x;
        line = line.max((0..3).map(|i| (x[i] - want[i]).abs()).fold(0.0, f64::max));
    }
    let mut curved = 0.0f64;
    for (p0, t) in [([1.0, 0.0, 1.0], 1.0), ([0.6, -0.8, -2.5], 2.0), ([0.0, 1.0, 4.0], 1.2)] {
        let x = exponential_map(&sys, &p0, t, &opts).map_err(|e| e.to_string())?.x;
        let o = oracle_endpoint(p0, t, 1e-11);
        curved = curved.max((0..3).map(|i| (x[i] - o[i]).abs()).fold(0.0, f64::max));
    }
    check(line <= 1e-9 && curved <= 1e-7, format!("straight lines {line:.2e}, curved vs oracle {curved:.2e}"))
}

fn variational_consistency() -> Outcome {
    let sys = brockett_system();
    let opts = IntegratorOptions { abs_tol: 1e-11, rel_tol: 1e-11, ..Default::default() };
    let slice = CovectorSlice::new(&sys).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    let map = |c: [f64; 2], t: f64| exponential_map(&sys, &slice.covector(&c), t, &opts).map_err(|e| e.to_string());
    for _ in 0..50 {
        let c = [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(-3.0..3.0)];
        let t = rng.random_range(0.3..2.5);
        let r = map(c, t)?;
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
            let (xp, xm) = (map(cp, tp)?.x, map(cm, tm)?.x);
            let fd: Vec<f64> = (0..3).map(|i| (xp[i] - xm[i]) / (2.0 * e)).collect();
            let err = (0..3).map(|i| (jac[i * 3 + col] - fd[i]).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(err / norm(&fd).max(1e-3));
        }
    }
    check(worst <= 1e-4, format!("worst relative column error {worst:.2e} over 50 probes"))
}

fn lipschitz_at(f: &MinimalTimeField, idx: usize) -> f64 {
    let ijk = f.unravel(idx);
    let mut l = 0.0f64;
    for off in 0..27usize {
        let nb: Option<Vec<usize>> = (0..3)
            .map(|k| (ijk[k] as isize + ((off / 3usize.pow(k as u32)) % 3) as isize - 1).try_into().ok())
            .collect();
        let Some(nb) = nb.filter(|v| v.iter().zip(&f.dims).all(|(c, d)| c < d)) else { continue };
        let j = f.index(&nb);
        if j != idx && f.is_covered(j) {
            l = l.max((f.t[j] - f.t[idx]).abs() / dist(&f.node_coords(j), &f.node_coords(idx)));
        }
    }
    l
}

fn minimal_time_field(f: &MinimalTimeField) -> Outcome {
    let h = f.grid.h;
    let mut axis = 0.0f64;
    for a in [0.25, 0.5, 1.0] {
        axis = axis.max((f.time_hat(&[a, 0.0, 0.0]).map_err(|e| e.to_string())? - a).abs());
    }
    let mut lower = f64::NEG_INFINITY;
    let mut swap = f64::NEG_INFINITY;
    for i in (0..f.len()).filter(|&i| f.is_covered(i)) {
        let x = f.node_coords(i);
        lower = lower.max(x[0].hypot(x[1]) - h * 3f64.sqrt() - f.t[i]);
        if let Some(j) = f.nearest_node(&[x[1], x[0], -x[2]]).filter(|&j| f.is_covered(j)) {
            swap = swap.max((f.t[i] - f.t[j]).abs() - 2.0 * h * lipschitz_at(f, i));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut rot = f64::NEG_INFINITY;
    let mut checked = 0;
    while checked < 2000 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.4..1.4)).collect();
        let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let y = [x[0] * th.cos() - x[1] * th.sin(), x[0] * th.sin() + x[1] * th.cos(), x[2]];
        let (Ok(a), Ok(b)) = (f.time_hat(&x), f.time_hat(&y)) else { continue };
        let l = lipschitz_at(f, f.nearest_node(&x).unwrap()).max(lipschitz_at(f, f.nearest_node(&y).unwrap()));
        rot = rot.max((a - b).abs() - 2.0 * h * l);
        checked += 1;
    }
    check(
        axis <= 0.1 && lower <= 0.0 && swap <= 0.0 && rot <= 0.0,
        format!("axis error {axis:.3}, lower-bound excess {lower:.2e}, swap excess {swap:.2e}, rotation excess {rot:.2e}"),
    )
}

fn cut_locus(f: &MinimalTimeField, m: &SingularSetModel) -> Outcome {
    let h = f.grid.h;
    let near = m.flagged.iter().filter(|&&i| f.node_coords(i)[..2].iter().map(|v| v * v).sum::<f64>().sqrt() <= 2.0 * h).count();
    let frac = near as f64 / m.flagged.len().max(1) as f64;
    let mut missing = 0;
    let k_max = (2.0 * f.grid.max[2] / h).round() as usize;
    for k in 0..=k_max {
        let z = f.grid.min[2] + h * k as f64;
        if z.abs() >= 0.15 - 1e-9 && !f.cut_flag[f.nearest_node(&[0.0, 0.0, z]).unwrap()] {
            missing += 1;
        }
    }
    check(
        !m.is_empty() && frac >= 0.95 && missing == 0,
        format!("{} flagged, {:.1}% within 2h of the axis, {missing} axis cells unflagged", m.flagged.len(), 100.0 * frac),
    )
}

fn gradient_identity(art: &Artifacts) -> Outcome {
    let (f, m) = (&art.field, &art.model);
    let ctl = OptimalController::new(art.sys.clone(), f.clone(), Default::default());
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (mut worst, mut probes) = (0.0f64, 0);
    while probes < 50 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.3..1.3)).collect();
        if m.distance(&x) < 0.3 || norm(&x) < 0.3 || f.in_singular_mask(&x) {
            continue;
        }
        let Ok(GradientResult::Gradient(g)) = f.grad_time(&x) else { continue };
        ctl.reset();
        let p = ctl.adjoint(&x).map_err(|e| e.to_string())?;
        worst = worst.max(dist(&g, &p) / norm(&p));
        probes += 1;
    }
    check(worst <= 0.05, format!("worst relative error {:.2}% over 50 probes", 100.0 * worst))
}

/// Fixed-step RK4 of `ẋ = f(x, k(x + e)) + d` with `e`, `d` of size `ρ(x)`
/// pointing at the nearest flagged cell. Returns the exit time from the
/// singular mask.
fn adversarial_exit(art: &Artifacts, p: &EscapePatch, x0: &[f64], t_max: f64) -> Option<f64> {
    let n = x0.len();
    let rhs = |x: &[f64]| -> Vec<f64> {
        let v: Vec<f64> = match art.model.nearest_point(x).filter(|q| dist(q, x) > 0.0) {
            Some(q) => q.iter().zip(x).map(|(a, b)| (a - b) / dist(&q, x)).collect(),
            None => vec![0.0; n],
        };
        let r = p.margin(x);
        let xe: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + r * b).collect();
        let u = p.control(&xe);
        let mut dx = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        art.sys.dynamics_into(x, u.as_slice(), &mut dx, &mut scratch);
        dx.iter().zip(&v).map(|(a, b)| a + r * b).collect()
    };
    let dt = 1e-3;
    let mut x = x0.to_vec();
    let mut t = 0.0;
    while t < t_max {
        if !art.field.in_singular_mask(&x) {
            return Some(t);
        }
        let k1 = rhs(&x);
        let at = |k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + s * b).collect() };
        let k2 = rhs(&at(&k1, 0.5 * dt));
        let k3 = rhs(&at(&k2, 0.5 * dt));
        let k4 = rhs(&at(&k3, dt));
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += dt;
    }
    None
}

fn escape_certification(art: &Artifacts) -> Outcome {
    let eps = art.epsilon();
    let patches = &art.manifest.patches;
    let uncertified = patches.iter().filter(|p| p.certified_seeds < 100 || !(p.tau < eps)).count();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let (mut failures, mut worst) = (0, 0.0f64);
    for p in patches {
        let shell = p.shell(1);
        for _ in 0..100 {
            let v: Vec<f64> = (0..p.center.len()).map(|_| rng.sample(StandardNormal)).collect();
            match adversarial_exit(art, p, &shell.boundary_point(&v), eps) {
                Some(t) if t < eps => worst = worst.max(t),
                _ => failures += 1,
            }
        }
    }
    check(
        !patches.is_empty() && uncertified == 0 && failures == 0,
        format!(
            "{} patches, {uncertified} uncertified, independent recheck: {failures} failures in {} runs, worst exit {worst:.3} < eps {eps:.3}",
            patches.len(),
            100 * patches.len()
        ),
    )
}

fn hybrid_semantics(s: &SweepSummary) -> Outcome {
    check(
        s.violations == 0 && s.max_residual <= 1e-6,
        format!("{} runs, {} violations, max derivative residual {:.2e}", s.runs, s.violations, s.max_residual),
    )
}

fn switching_discipline(s: &SweepSummary) -> Outcome {
    check(
        s.max_positive_jump_times <= 1 && s.max_chain <= 2,
        format!("max positive jump times {}, max chain {}", s.max_positive_jump_times, s.max_chain),
    )
}

fn quasi_optimality(s: &SweepSummary) -> Outcome {
    check(
        s.nonconforming.is_empty() && s.unfinished == 0 && s.max_margin <= 0.0,
        format!(
            "max margin {:.4} (arrival - T - 2eps), stop slack {:.2e} reported, {} unfinished, {} nonconforming",
            s.max_margin,
            s.stop_slack,
            s.unfinished,
            s.nonconforming.len()
        ),
    )
}

fn uniform_convergence(s: &SweepSummary) -> Outcome {
    check(
        s.unfinished == 0 && s.max_arrival <= s.tau_r && s.max_excursion <= s.delta_r,
        format!(
            "R = {}: max arrival {:.3} <= tau(R) {:.3}, max excursion {:.3} <= delta(R) {:.3}",
            s.r, s.max_arrival, s.tau_r, s.max_excursion, s.delta_r
        ),
    )
}

fn main() {
    let started = Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let cfg = ScenarioConfig { out: dir.path().join("a"), ..Default::default() };

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |k: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let tag = if r.is_ok() { "PASS" } else { "FAIL" };
        println!("[{tag}] {k:>2} {name}: {}", r.as_ref().unwrap_or_else(|e| e));
        results.push((k, name, r));
    };

    run(1, "extremal integrity", &mut extremal_integrity);
    run(2, "exponential-map regression", &mut exponential_map_regression);
    run(3, "variational consistency", &mut variational_consistency);

    let art = match cmd_synth(&cfg) {
        Ok((_, art)) => art,
        Err(e) => {
            println!("[FAIL] synthesis: {e}");
            std::process::exit(1);
        }
    };
    run(4, "minimal-time field", &mut || minimal_time_field(&art.field));
    run(5, "cut-locus localization", &mut || cut_locus(&art.field, &art.model));
    run(6, "gradient identity", &mut || gradient_identity(&art));
    run(7, "escape certification", &mut || escape_certification(&art));

    let first = cmd_sweep(&cfg, &art, Some(1));
    let read = |c: &ScenarioConfig| {
        ["sweep.csv", "sweep_summary.toml"].map(|f| std::fs::read(c.out.join(f)).unwrap_or_default())
    };
    let first_bytes = read(&cfg);
    let second_cfg = ScenarioConfig { out: dir.path().join("b"), ..cfg.clone() };
    let second = load_artifacts(&cfg).and_then(|art| cmd_sweep(&second_cfg, &art, None));

    match &first {
        Ok(s) => {
            run(8, "hybrid semantics", &mut || hybrid_semantics(s));
            run(9, "switching discipline", &mut || switching_discipline(s));
            run(10, "quasi-optimality", &mut || quasi_optimality(s));
            run(11, "uniform convergence and stability", &mut || uniform_convergence(s));
        }
        Err(e) => {
            for (k, name) in [(8, "hybrid semantics"), (9, "switching discipline"), (10, "quasi-optimality"), (11, "uniform convergence and stability")] {
                run(k, name, &mut || Err(format!("sweep failed: {e}")));
            }
        }
    }
    run(12, "determinism", &mut || {
        let second = second.as_ref().map_err(|e| format!("second sweep failed: {e}"))?;
        let same = read(&second_cfg) == first_bytes && !first_bytes[0].is_empty();
        check(
            same && first.as_ref().is_ok_and(|s| s.config_hash == second.config_hash),
            format!("config hash {}, sweep.csv and sweep_summary.toml {}", second.config_hash, if same { "identical" } else { "differ" }),
        )
    });

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.0} s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
