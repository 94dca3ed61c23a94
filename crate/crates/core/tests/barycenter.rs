mod common;

use proptest::prelude::*;
use uot::barycenter::{barycenter_h, solve_barycenter, BarycenterProblem};
use uot::geometry::build_cost_quadratic;
use uot::{DiscreteSpace, DivergenceKind, ScalingOptions};

fn shared_kind() -> impl Strategy<Value = DivergenceKind> {
    prop_oneof![
        Just(DivergenceKind::Equality),
        (0.05..2.0f64).prop_map(|lambda| DivergenceKind::Kl { lambda }),
        (0.05..2.0f64).prop_map(|lambda| DivergenceKind::Tv { lambda }),
        (0.0..0.9f64, 1.1..5.0f64).prop_map(|(alpha, beta)| DivergenceKind::Range { alpha, beta }),
    ]
}

fn inputs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..6).prop_flat_map(|n| {
        (
            prop::collection::vec((-3.0..3.0f64).prop_map(f64::exp), n),
            prop::collection::vec(0.1..1.0f64, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn h_matches_brute_force(kind in shared_kind(), (sigma, alpha) in inputs(), eps in 0.02..1.0f64) {
        let h = barycenter_h(kind, &sigma, &alpha, eps).unwrap();
        let oracle = common::barycenter_h_oracle(kind, &sigma, &alpha, eps);
        prop_assert!(common::rel(h, oracle, 0.0) <= 1e-5, "{kind:?}: {h} vs {oracle}");
    }

    #[test]
    fn h_is_scale_equivariant(kind in shared_kind(), (sigma, alpha) in inputs(), eps in 0.02..1.0f64, c in 0.1..10.0f64) {
        let h = barycenter_h(kind, &sigma, &alpha, eps).unwrap();
        let scaled: Vec<f64> = sigma.iter().map(|s| c * s).collect();
        let hc = barycenter_h(kind, &scaled, &alpha, eps).unwrap();
        prop_assert!(common::rel(hc, c * h, 0.0) <= 1e-10);
    }

    #[test]
    fn h_ignores_input_order(kind in shared_kind(), (sigma, alpha) in inputs(), eps in 0.02..1.0f64) {
        let h = barycenter_h(kind, &sigma, &alpha, eps).unwrap();
        let (rs, ra): (Vec<f64>, Vec<f64>) = sigma.iter().rev().zip(alpha.iter().rev()).map(|(s, a)| (*s, *a)).unzip();
        let hr = barycenter_h(kind, &rs, &ra, eps).unwrap();
        prop_assert!(common::rel(hr, h, 0.0) <= 1e-12);
    }

    #[test]
    fn h_of_identical_inputs(kind in shared_kind(), s in 0.05..20.0f64, alpha in prop::collection::vec(0.1..1.0f64, 2..5)) {
        let sigma = vec![s; alpha.len()];
        let h = barycenter_h(kind, &sigma, &alpha, 0.1).unwrap();
        match kind {
            // every h with σ in [αh, βh] is optimal; the leftmost is σ/β
            DivergenceKind::Range { beta, .. } => prop_assert!(common::rel(h, s / beta, 0.0) <= 1e-12),
            _ => prop_assert!(common::rel(h, s, 0.0) <= 1e-12),
        }
    }
}

fn bump(x: &DiscreteSpace, c: f64) -> Vec<f64> {
    x.points().iter().map(|p| 1e-3 + (-(p[0] - c).powi(2) / 0.005).exp()).collect()
}

#[test]
fn mirrored_inputs_give_symmetric_barycenter() {
    let x = DiscreteSpace::interval(60, 0.0, 1.0).unwrap();
    let cost = build_cost_quadratic(&x, &x).unwrap();
    for shared in [DivergenceKind::Equality, DivergenceKind::Kl { lambda: 1.0 }] {
        let problem = BarycenterProblem::new(
            x.clone(),
            x.clone(),
            vec![bump(&x, 0.25), bump(&x, 0.75)],
            vec![0.5, 0.5],
            shared,
            vec![cost.clone(), cost.clone()],
            1e-3,
        )
        .unwrap();
        let sol = solve_barycenter(&problem, ScalingOptions { max_iter: 20_000, tol: 1e-10, ..Default::default() }).unwrap();
        assert!(sol.converged, "{shared:?}");
        let h = &sol.barycenter;
        let peak = h.iter().copied().fold(0.0, f64::max);
        for i in 0..h.len() {
            assert!((h[i] - h[h.len() - 1 - i]).abs() <= 1e-6 * peak, "{shared:?} at {i}");
        }
        // mass concentrates around the midpoint
        let argmax = h.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((x.points()[argmax][0] - 0.5).abs() < 0.05, "{shared:?}");
    }
}

#[test]
fn equality_barycenter_couplings_share_second_marginal() {
    let x = DiscreteSpace::interval(40, 0.0, 1.0).unwrap();
    let cost = build_cost_quadratic(&x, &x).unwrap();
    // a balanced barycenter needs equal masses
    let marginals: Vec<Vec<f64>> = [0.2, 0.5, 0.9]
        .iter()
        .map(|&c| {
            let b = bump(&x, c);
            let m = x.integrate(&b);
            b.into_iter().map(|v| v / m).collect()
        })
        .collect();
    let problem = BarycenterProblem::new(
        x.clone(),
        x.clone(),
        marginals.clone(),
        vec![0.2, 0.3, 0.5],
        DivergenceKind::Equality,
        vec![cost.clone(), cost.clone(), cost],
        2e-2,
    )
    .unwrap()
    .plain();
    let sol = solve_barycenter(&problem, ScalingOptions { max_iter: 50_000, tol: 1e-11, ..Default::default() }).unwrap();
    assert!(sol.converged);
    for (plan, p) in sol.couplings.iter().zip(&marginals) {
        for (a, b) in plan.first_marginal().iter().zip(p) {
            assert!((a - b).abs() <= 1e-8 * b.max(1.0));
        }
        for (a, b) in plan.second_marginal().iter().zip(&sol.barycenter) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}
