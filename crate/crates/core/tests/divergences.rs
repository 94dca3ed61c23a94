mod common;

use proptest::prelude::*;
use uot::divergences::{log_proxdiv, proxdiv};
use uot::{DivergenceKind, DivergenceSpec};

fn kind() -> impl Strategy<Value = DivergenceKind> {
    prop_oneof![
        Just(DivergenceKind::Equality),
        (0.05..5.0f64).prop_map(|lambda| DivergenceKind::Kl { lambda }),
        (0.05..5.0f64).prop_map(|lambda| DivergenceKind::Tv { lambda }),
        (0.0..0.9f64, 1.1..5.0f64).prop_map(|(alpha, beta)| DivergenceKind::Range { alpha, beta }),
        (0.0..0.9f64).prop_map(|alpha| DivergenceKind::Range { alpha, beta: f64::INFINITY }),
    ]
}

fn positive() -> impl Strategy<Value = f64> {
    (-4.6..4.6f64).prop_map(f64::exp)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn proxdiv_matches_bisection(
        kind in kind(),
        s in positive(),
        p in positive(),
        eps in (-4.6..0.0f64).prop_map(f64::exp),
        shift in -3.0..3.0f64,
    ) {
        let u = eps * shift;
        let spec = DivergenceSpec::new(kind, vec![p]).unwrap();
        let got = proxdiv(&spec, &[s], &[u], eps).unwrap()[0];
        let oracle = common::proxdiv_oracle(kind, s, p, u, eps);
        prop_assert!(common::rel(got, oracle, 0.0) <= 1e-6, "{kind:?}: {got} vs {oracle}");
    }

    #[test]
    fn log_proxdiv_is_log_of_proxdiv(kind in kind(), s in positive(), p in positive(), eps in 0.01..1.0f64) {
        let spec = DivergenceSpec::new(kind, vec![p]).unwrap();
        let a = proxdiv(&spec, &[s], &[0.0], eps).unwrap()[0];
        let l = log_proxdiv(&spec, &[s], &[0.0], eps).unwrap()[0];
        prop_assert!((a.ln() - l).abs() <= 1e-12 * l.abs().max(1.0));
    }

    #[test]
    fn fenchel_young(kind in kind(), s in 0.0..10.0f64, x in -10.0..10.0f64) {
        let (phi, conj) = (kind.phi(s), kind.conjugate(x));
        if phi.is_finite() && conj.is_finite() {
            prop_assert!(phi + conj >= s * x - 1e-9 * (1.0 + (s * x).abs()));
        }
    }

    #[test]
    fn kl_conjugate_is_attained(lambda in 0.05..5.0f64, x in -5.0..5.0f64) {
        // φ*(x) = s x - φ(s) at s = φ*'(x) = e^{x/λ}
        let kind = DivergenceKind::Kl { lambda };
        let s = (x / lambda).exp();
        prop_assert!((kind.conjugate(x) - (s * x - kind.phi(s))).abs() <= 1e-9 * (1.0 + kind.conjugate(x).abs()));
    }
}
