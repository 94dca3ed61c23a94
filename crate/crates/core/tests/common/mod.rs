//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uot::DivergenceKind;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `exp` of a uniform draw in `[lo, hi]`.
pub fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

/// Subdifferential `[lo, hi]` of the entropy function `φ` of `kind` at `t ≥ 0`.
fn phi_subdifferential(kind: DivergenceKind, t: f64) -> (f64, f64) {
    match kind {
        DivergenceKind::Equality => {
            if t < 1.0 {
                (f64::NEG_INFINITY, f64::NEG_INFINITY)
            } else if t > 1.0 {
                (f64::INFINITY, f64::INFINITY)
            } else {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
        }
        DivergenceKind::Kl { lambda } => (lambda * t.ln(), lambda * t.ln()),
        DivergenceKind::Tv { lambda } => {
            if t < 1.0 {
                (-lambda, -lambda)
            } else if t > 1.0 {
                (lambda, lambda)
            } else {
                (-lambda, lambda)
            }
        }
        DivergenceKind::Range { alpha, beta } => {
            let lo = if t > alpha { 0.0 } else { f64::NEG_INFINITY };
            let hi = if t < beta { 0.0 } else { f64::INFINITY };
            if t < alpha {
                (f64::NEG_INFINITY, f64::NEG_INFINITY)
            } else if t > beta {
                (f64::INFINITY, f64::INFINITY)
            } else {
                (lo, hi)
            }
        }
    }
}

/// `argmin_x  p φ(x/p) + ε KL(x|z)` for `p, z > 0`, by bisection on `log x`
/// over the subdifferential of the (strictly convex) objective.
pub fn prox_oracle(kind: DivergenceKind, z: f64, p: f64, epsilon: f64) -> f64 {
    let (mut lo, mut hi) = (-745.0f64, 709.0f64);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let x = mid.exp();
        let (dl, dr) = phi_subdifferential(kind, x / p);
        let g = epsilon * (mid - z.ln());
        if dl + g > 0.0 {
            hi = mid;
        } else if dr + g < 0.0 {
            lo = mid;
        } else {
            return x;
        }
        if hi - lo < 1e-15 * mid.abs().max(1.0) {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Stabilized proxdiv `prox(s e^{-u/ε}) / s` through [`prox_oracle`].
pub fn proxdiv_oracle(kind: DivergenceKind, s: f64, p: f64, u: f64, epsilon: f64) -> f64 {
    prox_oracle(kind, s * (-u / epsilon).exp(), p, epsilon) / s
}

fn kl_bar(x: f64, z: f64) -> f64 {
    if x == 0.0 {
        z
    } else {
        x * (x / z).ln() - x + z
    }
}

/// `h φ(s/h)`, the divergence of a single value.
fn perspective(kind: DivergenceKind, s: f64, h: f64) -> f64 {
    let t = s / h;
    let phi = match kind {
        DivergenceKind::Equality => {
            if (t - 1.0).abs() < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            }
        }
        DivergenceKind::Kl { lambda } => lambda * kl_bar(t, 1.0),
        DivergenceKind::Tv { lambda } => lambda * (t - 1.0).abs(),
        DivergenceKind::Range { alpha, beta } => {
            if t >= alpha * (1.0 - 1e-12) && t <= beta * (1.0 + 1e-12) {
                0.0
            } else {
                f64::INFINITY
            }
        }
    };
    h * phi
}

/// `G(h) = Σ_k α_k min_x [ε KL(x|σ_k) + h φ(x/h)]`, the inner minimum taken at
/// the oracle prox.
pub fn barycenter_objective(kind: DivergenceKind, sigma: &[f64], alpha: &[f64], epsilon: f64, h: f64) -> f64 {
    sigma
        .iter()
        .zip(alpha)
        .map(|(&s, &a)| {
            let x = prox_oracle(kind, s, h, epsilon);
            a * (epsilon * kl_bar(x, s) + perspective(kind, x, h))
        })
        .sum()
}

/// Minimizer of [`barycenter_objective`] by golden-section search on `log h`
/// (the leftmost one when the minimum is attained on an interval).
pub fn barycenter_h_oracle(kind: DivergenceKind, sigma: &[f64], alpha: &[f64], epsilon: f64) -> f64 {
    let lo_s = sigma.iter().copied().fold(f64::INFINITY, f64::min).ln();
    let hi_s = sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln();
    let margin = match kind {
        DivergenceKind::Range { alpha: b1, beta: b2 } => {
            b2.ln().abs().max(if b1 > 0.0 { b1.ln().abs() } else { 0.0 }) + 1.0
        }
        _ => 1.0,
    };
    let (mut a, mut b) = (lo_s - margin, hi_s + margin);
    let f = |l: f64| barycenter_objective(kind, sigma, alpha, epsilon, l.exp());
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - r * (b - a), a + r * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-12 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let mut best = 0.5 * (a + b);
    // range kinds vanish on a whole interval when every σ_k fits in
    // [αh, βh]; take its left end
    if matches!(kind, DivergenceKind::Range { .. }) && f(best) <= 1e-20 {
        let mut lo = lo_s - margin;
        for _ in 0..200 {
            let mid = 0.5 * (lo + best);
            if f(mid) <= 1e-20 {
                best = mid;
            } else {
                lo = mid;
            }
        }
    }
    best.exp()
}

/// Cost of the monotone (north-west corner) coupling of two sorted discrete
/// measures under `|x - y|²`.
pub fn monotone_cost(x: &[f64], p: &[f64], y: &[f64], q: &[f64]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut ri, mut rj) = (p[0], q[0]);
    let mut cost = 0.0;
    while i < p.len() && j < q.len() {
        let m = ri.min(rj);
        cost += m * (x[i] - y[j]).powi(2);
        ri -= m;
        rj -= m;
        if ri <= rj {
            i += 1;
            if i < p.len() {
                ri = p[i];
            }
        } else {
            j += 1;
            if j < q.len() {
                rj = q[j];
            }
        }
    }
    cost
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (k, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(k);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

fn subsets(n: usize, m: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|s| s.count_ones() as usize == m)
        .map(|s| (0..n).filter(|i| s & (1 << i) != 0).collect())
        .collect()
}

/// Cheapest matching of exactly `m` distinct rows to `m` distinct columns.
pub fn partial_matching_cost(c: &[Vec<f64>], m: usize) -> f64 {
    let (n, k) = (c.len(), c[0].len());
    let mut best = f64::INFINITY;
    for rows in subsets(n, m) {
        for cols in subsets(k, m) {
            for perm in permutations(&cols) {
                let total: f64 = rows.iter().zip(&perm).map(|(&i, &j)| c[i][j]).sum();
                best = best.min(total);
            }
        }
    }
    best
}

/// Relative discrepancy `|a - b| / max(|b|, floor)`.
pub fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}
