//! Acceptance suite: one line per criterion, tolerances and time limits fixed.
//!
//! Run with `cargo test -p uot --test acceptance -- --nocapture`.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use common::{log_uniform, rel, rng};
use rand::Rng;
use uot::barycenter::{barycenter_h, barycenter_log_h, barycenter_residual};
use uot::divergences::proxdiv;
use uot::extensions::{solve_generalized, solve_with_mass, PushforwardProblem};
use uot::flows::{run_flow, FlowCost, FlowEnergy};
use uot::geometry::{build_cost_quadratic, build_cost_wf, gibbs_kernel};
use uot::scaling::{thompson_distance_log, ScalingSolver, ScheduleParams};
use uot::{
    solve_plain, solve_stabilized, CostMatrix, DiscreteSpace, DivergenceKind, DivergenceSpec, Kernel, ScalingOptions,
};

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check { pass, detail: detail.into() }
}

fn run(id: usize, name: &str, limit_secs: f64, f: impl FnOnce() -> Check) -> Option<bool> {
    // UOT_ACCEPTANCE=2,10 restricts the run to the listed criteria
    if let Ok(only) = std::env::var("UOT_ACCEPTANCE") {
        if !only.split(',').any(|s| s.trim().parse() == Ok(id)) {
            println!("[SKIP] #{id:<2} {name}");
            return None;
        }
    }
    let start = Instant::now();
    let c = f();
    let secs = start.elapsed().as_secs_f64();
    let pass = c.pass && secs < limit_secs;
    println!(
        "[{}] #{id:<2} {name}: {} ({secs:.2}s, limit {limit_secs}s)",
        if pass { "PASS" } else { "FAIL" },
        c.detail
    );
    Some(pass)
}

fn wf_remote_diracs() -> Check {
    let x = DiscreteSpace::new(vec![vec![0.0], vec![2.0]], vec![1.0, 1.0]).unwrap();
    let cost = build_cost_wf(&x, &x, 1.0).unwrap();
    let f1 = DivergenceSpec::kl(1.0, vec![1.0, 0.0]).unwrap();
    let f2 = DivergenceSpec::kl(1.0, vec![0.0, 1.0]).unwrap();
    let r = solve_stabilized(&f1, &f2, &cost, &x, &x, 1e-6, ScalingOptions::default().with_schedule()).unwrap();
    check((r.primal - 2.0).abs() <= 1e-3, format!("primal = {:.9} (target 2 ± 1e-3)", r.primal))
}

fn balanced_1d_exactness() -> Check {
    let n = 50;
    let mut g = rng(2);
    // jittered grid: neighbours stay 0.4/n apart. With i.i.d. uniform draws two
    // points can land within ~1e-4 of each other, and then the entropic optimum
    // at ε = 1e-7 itself puts visible mass on a crossing pair.
    let sorted = |g: &mut rand_chacha::ChaCha8Rng| {
        (0..n).map(|i| (i as f64 + 0.5 + g.gen_range(-0.3..0.3)) / n as f64).collect::<Vec<_>>()
    };
    let xs = sorted(&mut g);
    let ys = sorted(&mut g);
    let masses = |g: &mut rand_chacha::ChaCha8Rng| {
        let v: Vec<f64> = (0..n).map(|_| g.gen_range(0.5..1.5)).collect();
        let t: f64 = v.iter().sum();
        v.into_iter().map(|m| m / t).collect::<Vec<_>>()
    };
    let p = masses(&mut g);
    let q = masses(&mut g);
    let x = DiscreteSpace::new(xs.iter().map(|&v| vec![v]).collect(), vec![1.0; n]).unwrap();
    let y = DiscreteSpace::new(ys.iter().map(|&v| vec![v]).collect(), vec![1.0; n]).unwrap();
    let cost = build_cost_quadratic(&x, &y).unwrap();
    let f1 = DivergenceSpec::equality(p.clone()).unwrap();
    let f2 = DivergenceSpec::equality(q.clone()).unwrap();
    let options = ScalingOptions {
        max_iter: 1_000_000,
        tol: 1e-10,
        schedule: Some(ScheduleParams { epsilon0: 1.0, divisions: 40, every: 1000 }),
        ..Default::default()
    };
    let r = solve_stabilized(&f1, &f2, &cost, &x, &y, 1e-7, options).unwrap();
    let got = r.plan.transport_cost(&cost).unwrap();
    let oracle = common::monotone_cost(&xs, &p, &ys, &q);
    let support = r.plan.support(1e-10);
    let crossings = support
        .iter()
        .flat_map(|a| support.iter().map(move |b| (a, b)))
        .filter(|(a, b)| a.0 < b.0 && a.1 > b.1)
        .count();
    check(
        (got - oracle).abs() <= 1e-3 && crossings == 0,
        format!(
            "<C,R> = {got:.6e}, monotone oracle = {oracle:.6e}, |diff| = {:.1e}; {} support entries, {crossings} crossings; {} iterations",
            (got - oracle).abs(),
            support.len(),
            r.iterations
        ),
    )
}

fn positive_profile(g: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| g.gen_range(0.2..2.0)).collect()
}

fn thompson_contraction() -> Check {
    let n = 60;
    let mut g = rng(3);
    let x = DiscreteSpace::interval(n, 0.0, 1.0).unwrap();
    let f1 = DivergenceSpec::kl(1.0, positive_profile(&mut g, n)).unwrap();
    let f2 = DivergenceSpec::kl(1.0, positive_profile(&mut g, n)).unwrap();
    let eps = 0.1;
    let kernel = gibbs_kernel(&build_cost_quadratic(&x, &x).unwrap(), eps).unwrap();
    let mut solver = ScalingSolver::plain(&f1, &f2, &x, &x, vec![kernel], ScalingOptions::default()).unwrap();
    let mut iterates = vec![solver.implied_log_a(0)];
    for _ in 0..300 {
        solver.step().unwrap();
        iterates.push(solver.implied_log_a(0));
    }
    // d[l] = d_T(a_{l+1}, a_l); ratios are measured while the distances are
    // well above round-off
    let d: Vec<f64> = iterates.windows(2).map(|w| thompson_distance_log(&w[1], &w[0])).collect();
    let bound = (1.0f64 / 1.1).powi(2) + 1e-3;
    let ratios: Vec<f64> = (2..d.len()).take_while(|&l| d[l - 1] > 1e-9).map(|l| d[l] / d[l - 1]).collect();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    check(
        !ratios.is_empty() && worst <= bound,
        format!("max ratio = {worst:.6} over {} steps (bound {bound:.6})", ratios.len()),
    )
}

fn gap_behavior() -> Check {
    let n = 500;
    let x = DiscreteSpace::interval(n, 0.0, 1.0).unwrap();
    let pts: Vec<f64> = x.points().iter().map(|p| p[0]).collect();
    let bump = |c: f64, w: f64| pts.iter().map(|t| 0.05 + (-(t - c).powi(2) / (w * w)).exp()).collect::<Vec<_>>();
    let f1 = DivergenceSpec::kl(1.0, bump(0.3, 0.1)).unwrap();
    let f2 = DivergenceSpec::kl(1.0, bump(0.65, 0.15)).unwrap();
    let eps = 0.01;
    let kernel = gibbs_kernel(&build_cost_quadratic(&x, &x).unwrap(), eps).unwrap();
    let options = ScalingOptions { max_iter: 2000, tol: 0.0, gap_tol: Some(1e-6), gap_every: 1, ..Default::default() };
    let r = solve_plain(&f1, &f2, &kernel, &x, &x, eps, options).unwrap();
    let gaps = &r.gap_history;
    let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let increases = (10..gaps.len()).filter(|&k| gaps[k] > gaps[k - 1] + 1e-12).count();
    let last = *gaps.last().unwrap();
    check(
        min >= -1e-9 && increases == 0 && last <= 1e-6 && r.iterations <= 2000,
        format!(
            "{} gaps, min = {min:.3e}, increases after 10 = {increases}, final = {last:.3e} at iteration {}",
            gaps.len(),
            r.iterations
        ),
    )
}

fn proxdiv_suite() -> Check {
    let mut g = rng(5);
    let mut worst = [0.0f64; 4];
    for (k, w) in worst.iter_mut().enumerate() {
        for _ in 0..1000 {
            let s = log_uniform(&mut g, 1e-2, 1e2);
            let p = log_uniform(&mut g, 1e-2, 1e2);
            let eps = log_uniform(&mut g, 1e-2, 1.0);
            let u = eps * g.gen_range(-3.0..3.0);
            let lambda = log_uniform(&mut g, 0.05, 5.0);
            let kind = match k {
                0 => DivergenceKind::Equality,
                1 => DivergenceKind::Kl { lambda },
                2 => DivergenceKind::Tv { lambda },
                _ => {
                    let alpha = if g.gen_bool(0.2) { 0.0 } else { g.gen_range(0.0..0.9) };
                    let beta = if g.gen_bool(0.1) { f64::INFINITY } else { g.gen_range(1.1..5.0) };
                    DivergenceKind::Range { alpha, beta }
                }
            };
            let spec = DivergenceSpec::new(kind, vec![p]).unwrap();
            let got = proxdiv(&spec, &[s], &[u], eps).unwrap()[0];
            let oracle = common::proxdiv_oracle(kind, s, p, u, eps);
            *w = w.max(rel(got, oracle, 0.0));
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    check(
        max <= 1e-6,
        format!(
            "max relative error: equality {:.1e}, kl {:.1e}, tv {:.1e}, range {:.1e} (1000 cases each)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn h_solver_suite() -> Check {
    let mut g = rng(6);
    let mut worst = [0.0f64; 4];
    let mut residual = 0.0f64;
    for (k, w) in worst.iter_mut().enumerate() {
        for _ in 0..500 {
            let n = g.gen_range(2..6);
            let sigma: Vec<f64> = (0..n).map(|_| log_uniform(&mut g, 0.05, 20.0)).collect();
            let alpha: Vec<f64> = (0..n).map(|_| g.gen_range(0.1..1.0)).collect();
            let eps = log_uniform(&mut g, 0.02, 1.0);
            let lambda = log_uniform(&mut g, 0.05, 2.0);
            let kind = match k {
                0 => DivergenceKind::Equality,
                1 => DivergenceKind::Kl { lambda },
                2 => DivergenceKind::Tv { lambda },
                _ => DivergenceKind::Range { alpha: g.gen_range(0.0..0.9), beta: g.gen_range(1.1..5.0) },
            };
            let h = barycenter_h(kind, &sigma, &alpha, eps).unwrap();
            let oracle = common::barycenter_h_oracle(kind, &sigma, &alpha, eps);
            *w = w.max(rel(h, oracle, 0.0));
            if k >= 2 {
                let log_s: Vec<f64> = sigma.iter().map(|s| s.ln()).collect();
                let lh = barycenter_log_h(kind, &log_s, &alpha, eps);
                residual = residual.max(barycenter_residual(kind, &log_s, &alpha, eps, lh).abs());
            }
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    check(
        max <= 1e-5 && residual <= 1e-12,
        format!(
            "max relative error: equality {:.1e}, kl {:.1e}, tv {:.1e}, range {:.1e}; max root residual {residual:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn separable_vs_dense() -> Check {
    let mut g = rng(7);
    let mut worst = 0.0f64;
    let shapes: [&[usize]; 6] = [&[16], &[3, 5], &[8, 8], &[16, 16], &[16, 7], &[4, 3, 5]];
    for shape in shapes {
        let extents: Vec<(f64, f64)> = shape.iter().map(|_| (0.0, 1.0)).collect();
        let x = DiscreteSpace::uniform_box(&extents, shape, 1.0 / 64.0).unwrap();
        let cost = build_cost_quadratic(&x, &x).unwrap();
        assert!(cost.is_separable());
        let sep = gibbs_kernel(&cost, 0.05).unwrap();
        let dense = gibbs_kernel(&CostMatrix::Dense(cost.to_dense()), 0.05).unwrap();
        assert!(sep.is_separable() && !dense.is_separable());
        let v: Vec<f64> = (0..x.len()).map(|_| g.gen_range(0.1..2.0)).collect();
        for (a, b) in sep.apply(&v, x.weights()).unwrap().iter().zip(dense.apply(&v, x.weights()).unwrap()) {
            worst = worst.max(rel(*a, b, 0.0));
        }
        for (a, b) in sep
            .apply_transpose(&v, x.weights())
            .unwrap()
            .iter()
            .zip(dense.apply_transpose(&v, x.weights()).unwrap())
        {
            worst = worst.max(rel(*a, b, 0.0));
        }
        let f = DivergenceSpec::kl(1.0, v.clone()).unwrap();
        let options = ScalingOptions { max_iter: 50, tol: 0.0, ..Default::default() };
        let rs = solve_plain(&f, &f, &sep, &x, &x, 0.05, options).unwrap();
        let rd = solve_plain(&f, &f, &dense, &x, &x, 0.05, options).unwrap();
        for i in 0..x.len() {
            for j in 0..x.len() {
                worst = worst.max(rel(rs.plan.entry(i, j), rd.plan.entry(i, j), 1e-300));
            }
        }
    }
    check(worst <= 1e-12, format!("max relative discrepancy {worst:.1e} (kernel products and 50-iteration plans)"))
}

fn stabilization_equivalence() -> Check {
    let n = 100;
    let mut g = rng(8);
    let x = DiscreteSpace::interval(n, 0.0, 1.0).unwrap();
    let f1 = DivergenceSpec::kl(1.0, positive_profile(&mut g, n)).unwrap();
    let f2 = DivergenceSpec::kl(0.5, positive_profile(&mut g, n)).unwrap();
    let eps = 1e-2;
    let cost = build_cost_quadratic(&x, &x).unwrap();
    let forced = ScalingOptions { absorb_threshold: -1.0, absorb_check_every: 1, tol: 0.0, ..Default::default() };
    let mut stab = ScalingSolver::stabilized(&f1, &f2, &x, &x, vec![&cost], vec![1.0], eps, forced).unwrap();
    let kernel = gibbs_kernel(&cost, eps).unwrap();
    let mut plain = ScalingSolver::plain(&f1, &f2, &x, &x, vec![kernel], ScalingOptions::default()).unwrap();
    for _ in 0..100 {
        stab.step().unwrap();
        plain.step().unwrap();
    }
    let diff = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(p, q)| (p.exp() / q.exp() - 1.0).abs()).fold(0.0, f64::max);
    let da = diff(stab.implied_log_a(0), plain.implied_log_a(0));
    let db = diff(stab.implied_log_b(0), plain.implied_log_b(0));
    check(
        da.max(db) <= 1e-8 && stab.absorptions() >= 100,
        format!("max relative difference a: {da:.1e}, b: {db:.1e}; {} absorptions", stab.absorptions()),
    )
}

fn flow_options() -> ScalingOptions {
    ScalingOptions {
        max_iter: 3000,
        tol: 1e-10,
        schedule: Some(ScheduleParams { epsilon0: 1.0, divisions: 5, every: 100 }),
        ..Default::default()
    }
}

/// First step after which the total mass moved by less than 1e-10 on each of
/// five consecutive steps.
fn steady_step(masses: &[f64]) -> Option<usize> {
    let still: Vec<bool> = masses.windows(2).map(|w| (w[1] - w[0]).abs() < 1e-10).collect();
    still.windows(5).position(|w| w.iter().all(|&b| b)).map(|k| k + 5)
}

fn tumor_growth() -> Check {
    let x = DiscreteSpace::interval(200, 0.0, 1.0).unwrap();
    let init: Vec<f64> = x.points().iter().map(|p| 0.4 + 0.5 * (-(p[0] - 0.4).powi(2) / 0.01).exp()).collect();
    let energy = FlowEnergy::tumor_growth(1.0, 0.006).unwrap();
    let t = run_flow(&[init], &energy, &x, FlowCost::Wf { cutoff: PI / 2.0 }, 50, 1e-6, flow_options()).unwrap();
    let max = t.densities.iter().flatten().flatten().copied().fold(0.0, f64::max);
    let masses = t.masses(&x);
    let worst_drop = masses.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let steady = steady_step(&masses);
    let off = steady.map_or(f64::INFINITY, |k| {
        t.densities[k][0].iter().filter(|&&v| v > 1e-3).map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
    });
    check(
        max <= 1.0 + 1e-9 && worst_drop <= 1e-8 && off <= 1e-3,
        format!(
            "max density {max:.12}, largest mass decrease {worst_drop:.1e}, steady at step {steady:?} with |ρ-1| on support {off:.1e}, mass {:.4} → {:.4}",
            masses[0],
            masses.last().unwrap()
        ),
    )
}

fn two_species() -> Check {
    let n = 200;
    let x = DiscreteSpace::interval(n, 0.0, 1.0).unwrap();
    let profile = |c: f64| x.points().iter().map(|p| 0.2 + 0.3 * (-(p[0] - c).powi(2) / 0.02).exp()).collect::<Vec<_>>();
    let (pa, pb) = (profile(0.3), profile(0.7));
    let energy = FlowEnergy::two_species(1.0, 0.006).unwrap();
    let cost = FlowCost::Wf { cutoff: PI / 2.0 };
    let steps = 50;
    let t = run_flow(&[pa.clone(), pb.clone()], &energy, &x, cost, steps, 1e-6, flow_options()).unwrap();
    let swapped = run_flow(&[pb, pa], &energy, &x, cost, steps, 1e-6, flow_options()).unwrap();
    let exact = t
        .densities
        .iter()
        .zip(&swapped.densities)
        .all(|(d, s)| d[0].iter().zip(&s[1]).chain(d[1].iter().zip(&s[0])).all(|(a, b)| a.to_bits() == b.to_bits()));
    let steady = steady_step(&t.masses(&x));
    let off = steady.map_or(f64::INFINITY, |k| {
        let d = &t.densities[k];
        d[0].iter().zip(&d[1]).map(|(a, b)| (a + b - 1.0).abs()).fold(0.0, f64::max)
    });
    check(
        off <= 1e-3 && exact,
        format!("steady at step {steady:?} of {steps}, max |ρa+ρb-1| there {off:.1e}; swap symmetry exact: {exact}"),
    )
}

fn mass_constrained() -> Check {
    let mut g = rng(11);
    let mut pts = || (0..5).map(|_| vec![g.gen_range(0.0..1.0), g.gen_range(0.0..1.0)]).collect::<Vec<_>>();
    let x = DiscreteSpace::new(pts(), vec![1.0; 5]).unwrap();
    let y = DiscreteSpace::new(pts(), vec![1.0; 5]).unwrap();
    let cost = build_cost_quadratic(&x, &y).unwrap();
    let f = DivergenceSpec::range(0.0, 1.0, vec![1.0; 5]).unwrap();
    let m = 3.0;
    let f3 = DivergenceSpec::equality(vec![m]).unwrap();
    let options = ScalingOptions {
        max_iter: 20_000,
        tol: 1e-12,
        schedule: Some(ScheduleParams { epsilon0: 1.0, divisions: 12, every: 200 }),
        ..Default::default()
    };
    let r = solve_with_mass(&f, &f, &f3, &cost, &x, &y, 1e-6, options).unwrap();
    let mass = r.plan.mass();
    let got = r.plan.transport_cost(&cost).unwrap();
    let dense = cost.to_dense();
    let c: Vec<Vec<f64>> = dense.rows().into_iter().map(|r| r.to_vec()).collect();
    let oracle = common::partial_matching_cost(&c, 3);
    check(
        (mass - m).abs() <= 1e-8 && (got - oracle).abs() <= 1e-3,
        format!("mass {mass:.12}, cost {got:.6} vs matching oracle {oracle:.6}; {} iterations", r.iterations),
    )
}

fn generalized_consistency() -> Check {
    let mut g = rng(12);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let n = 8;
        let dx: Vec<f64> = (0..n).map(|_| g.gen_range(0.5..1.5) / n as f64).collect();
        let dy: Vec<f64> = (0..n).map(|_| g.gen_range(0.5..1.5) / n as f64).collect();
        let x = DiscreteSpace::new((0..n).map(|i| vec![i as f64]).collect(), dx.clone()).unwrap();
        let y = DiscreteSpace::new((0..n).map(|i| vec![i as f64]).collect(), dy.clone()).unwrap();
        let c = ndarray::Array2::from_shape_fn((n, n), |_| g.gen_range(0.0..1.0));
        let eps = 0.1;
        let kernel = gibbs_kernel(&CostMatrix::Dense(c), eps).unwrap();
        let f1 = DivergenceSpec::kl(1.0, positive_profile(&mut g, n)).unwrap();
        let f2 = DivergenceSpec::kl(0.5, positive_profile(&mut g, n)).unwrap();
        let options = ScalingOptions { max_iter: 100_000, tol: 1e-13, ..Default::default() };
        let plain = solve_plain(&f1, &f2, &kernel, &x, &y, eps, options).unwrap();
        let Kernel::Dense { matrix, .. } = &kernel else { unreachable!() };
        let problem = PushforwardProblem::product(&dx, &dy, matrix, f1, f2, eps).unwrap();
        let general = solve_generalized(&problem, options).unwrap();
        let scale = general.coupling.iter().copied().fold(0.0, f64::max);
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((plain.plan.entry(i, j) - general.coupling[i * n + j]).abs() / scale);
            }
        }
    }
    check(worst <= 1e-10, format!("max plan discrepancy {worst:.1e} relative to the largest entry (10 instances)"))
}

#[test]
fn acceptance() {
    let results = [
        run(1, "WF between remote Diracs", 1.0, wf_remote_diracs),
        run(2, "1-D balanced OT exactness", 30.0, balanced_1d_exactness),
        run(3, "Thompson contraction rate", 5.0, thompson_contraction),
        run(4, "primal-dual gap behavior", 60.0, gap_behavior),
        run(5, "proxdiv oracle suite", 10.0, proxdiv_suite),
        run(6, "barycenter h-solver suite", 30.0, h_solver_suite),
        run(7, "separable = dense", 1.0, separable_vs_dense),
        run(8, "stabilization equivalence", 5.0, stabilization_equivalence),
        run(9, "tumor-growth flow properties", 120.0, tumor_growth),
        run(10, "two-species steady state", 120.0, two_species),
        run(11, "mass-constrained transport", 10.0, mass_constrained),
        run(12, "generalized-scaling consistency", 5.0, generalized_consistency),
    ];
    let ran = results.iter().flatten().count();
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, p)| **p == Some(false)).map(|(i, _)| i + 1).collect();
    println!("{} of {ran} criteria passed", ran - failed.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
