//! φ-divergences used as marginal penalties, their conjugates, and the
//! pointwise `proxdiv` operators.
//!
//! All proxdiv evaluations go through the log domain: the stabilized operator
//! takes `(s, u, ε)` and returns `prox(e^{-u/ε} s) / s`, and the forms below
//! never evaluate `e^{-u/ε}` on its own.

use crate::error::{check_len, check_nonnegative, check_positive, Error, Result};

/// Largest exponent fed to `exp` by the public proxdiv.
pub const EXP_CLAMP: f64 = 700.0;

/// The entropy function generating a divergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivergenceKind {
    /// `ι_{=}`: the marginal is pinned to the reference.
    Equality,
    /// `λ·KL`.
    Kl { lambda: f64 },
    /// `λ·|s - 1|`.
    Tv { lambda: f64 },
    /// `ι_{[α, β]}`; `beta` may be `+inf`.
    Range { alpha: f64, beta: f64 },
}

impl DivergenceKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DivergenceKind::Equality => Ok(()),
            DivergenceKind::Kl { lambda } | DivergenceKind::Tv { lambda } => {
                check_positive("lambda", lambda)
            }
            DivergenceKind::Range { alpha, beta } => {
                if !(alpha >= 0.0) || !alpha.is_finite() || !(beta >= alpha) {
                    return Err(Error::InvalidParameter(format!(
                        "range bounds need 0 <= alpha <= beta, got [{alpha}, {beta}]"
                    )));
                }
                Ok(())
            }
        }
    }

    /// The entropy function φ(s) for `s >= 0`.
    pub fn phi(&self, s: f64) -> f64 {
        match *self {
            DivergenceKind::Equality => {
                if s == 1.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            DivergenceKind::Kl { lambda } => lambda * xlogx_minus_x_plus_one(s),
            DivergenceKind::Tv { lambda } => lambda * (s - 1.0).abs(),
            DivergenceKind::Range { alpha, beta } => {
                if s >= alpha && s <= beta {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Recession slope `φ'_∞ = lim φ(s)/s`.
    pub fn recession(&self) -> f64 {
        match *self {
            DivergenceKind::Equality | DivergenceKind::Kl { .. } => f64::INFINITY,
            DivergenceKind::Tv { lambda } => lambda,
            DivergenceKind::Range { beta, .. } => {
                if beta.is_finite() {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
        }
    }

    /// Pointwise `D̄(a|b) = b φ(a/b)` for `b > 0` and `a φ'_∞` for `b = 0`, with `0·∞ = 0`.
    pub fn dbar(&self, a: f64, b: f64) -> f64 {
        if b > 0.0 {
            match *self {
                // b φ(a/b) loses accuracy for large a/b; expand directly
                DivergenceKind::Kl { lambda } => {
                    if a == 0.0 {
                        lambda * b
                    } else {
                        lambda * (a * (a / b).ln() - a + b)
                    }
                }
                DivergenceKind::Tv { lambda } => lambda * (a - b).abs(),
                _ => b * self.phi(a / b),
            }
        } else if a == 0.0 {
            0.0
        } else {
            a * self.recession()
        }
    }

    /// Convex conjugate φ*(x); `+inf` outside the domain `x <= φ'_∞`.
    pub fn conjugate(&self, x: f64) -> f64 {
        match *self {
            DivergenceKind::Equality => x,
            DivergenceKind::Kl { lambda } => lambda * (x / lambda).exp_m1(),
            DivergenceKind::Tv { lambda } => {
                if x <= lambda {
                    x.max(-lambda)
                } else {
                    f64::INFINITY
                }
            }
            DivergenceKind::Range { alpha, beta } => {
                if x <= 0.0 {
                    alpha * x
                } else if beta.is_finite() {
                    beta * x
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Is this kind an indicator of a set (value either 0 or `+inf`)?
    pub fn is_constraint(&self) -> bool {
        matches!(self, DivergenceKind::Equality | DivergenceKind::Range { .. })
    }

    /// Log of the stabilized proxdiv at one point, unclamped. `-inf` encodes an
    /// exact zero, including the `0/0 = 0` convention when `s = 0`.
    pub fn log_proxdiv(&self, s: f64, p: f64, u: f64, epsilon: f64) -> f64 {
        self.log_proxdiv_of_log(s.ln(), p, u, epsilon)
    }

    /// [`DivergenceKind::log_proxdiv`] taking `log s`, so that arguments beyond
    /// the floating range can be passed.
    pub fn log_proxdiv_of_log(&self, log_s: f64, p: f64, u: f64, epsilon: f64) -> f64 {
        self.log_proxdiv_logs(log_s, p.ln(), u, epsilon)
    }

    /// [`DivergenceKind::log_proxdiv`] with both `s` and the reference given by
    /// their logarithms.
    pub fn log_proxdiv_logs(&self, log_s: f64, log_p: f64, u: f64, epsilon: f64) -> f64 {
        if log_s == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let r = log_p - log_s;
        match *self {
            DivergenceKind::Equality => r,
            DivergenceKind::Kl { lambda } => {
                if log_p == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    (lambda * r - u) / (lambda + epsilon)
                }
            }
            DivergenceKind::Tv { lambda } => {
                let lo = -(lambda + u) / epsilon;
                let hi = (lambda - u) / epsilon;
                r.max(lo).min(hi)
            }
            DivergenceKind::Range { alpha, beta } => {
                let lower = if alpha == 0.0 { f64::NEG_INFINITY } else { alpha.ln() + r };
                let upper = if beta.is_finite() { beta.ln() + r } else { f64::INFINITY };
                (-u / epsilon).max(lower).min(upper)
            }
        }
    }
}

fn xlogx_minus_x_plus_one(s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else if s.is_infinite() {
        f64::INFINITY
    } else {
        s * s.ln() - s + 1.0
    }
}

/// `exp` of a log-domain value with the exponent clamped to `[-EXP_CLAMP, EXP_CLAMP]`;
/// `-inf` still maps to an exact zero.
pub fn exp_clamped(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else {
        x.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
    }
}

/// A marginal functional `D_φ(·|p)` with its reference density.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    pub reference: Vec<f64>,
}

impl DivergenceSpec {
    pub fn new(kind: DivergenceKind, reference: Vec<f64>) -> Result<Self> {
        kind.validate()?;
        check_nonnegative("reference", &reference)?;
        if reference.iter().any(|p| p.is_infinite()) {
            return Err(Error::InvalidParameter("reference density must be finite".into()));
        }
        Ok(Self { kind, reference })
    }

    pub fn equality(reference: Vec<f64>) -> Result<Self> {
        Self::new(DivergenceKind::Equality, reference)
    }

    pub fn kl(lambda: f64, reference: Vec<f64>) -> Result<Self> {
        Self::new(DivergenceKind::Kl { lambda }, reference)
    }

    pub fn tv(lambda: f64, reference: Vec<f64>) -> Result<Self> {
        Self::new(DivergenceKind::Tv { lambda }, reference)
    }

    pub fn range(alpha: f64, beta: f64, reference: Vec<f64>) -> Result<Self> {
        Self::new(DivergenceKind::Range { alpha, beta }, reference)
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }
}

/// `Σ_x w_x D̄_φ(a_x|p_x)`.
pub fn divergence_value(spec: &DivergenceSpec, a: &[f64], w: &[f64]) -> Result<f64> {
    check_len("a", a.len(), spec.len())?;
    check_len("weights", w.len(), spec.len())?;
    check_nonnegative("a", a)?;
    Ok(weighted_sum(a.iter().zip(&spec.reference).zip(w).map(|((&a, &p), &w)| {
        (w, spec.kind.dbar(a, p))
    })))
}

/// `Σ_x w_x p_x φ*(u_x)`, `+inf` as soon as some `u_x > φ'_∞`.
pub fn divergence_conjugate_value(spec: &DivergenceSpec, u: &[f64], w: &[f64]) -> Result<f64> {
    check_len("u", u.len(), spec.len())?;
    check_len("weights", w.len(), spec.len())?;
    let slope = spec.kind.recession();
    if u.iter().any(|&x| x > slope) {
        return Ok(f64::INFINITY);
    }
    Ok(weighted_sum(u.iter().zip(&spec.reference).zip(w).map(|((&x, &p), &w)| {
        (w * p, spec.kind.conjugate(x))
    })))
}

/// Sum of `weight * value` pairs where a zero weight annihilates any value.
fn weighted_sum(terms: impl Iterator<Item = (f64, f64)>) -> f64 {
    terms
        .filter(|(w, _)| *w != 0.0)
        .map(|(w, v)| w * v)
        .sum()
}

/// Penalty `exp(d/ε) - 1` standing in for a violated set constraint at
/// sup-norm distance `d`.
pub fn constraint_penalty(distance: f64, epsilon: f64) -> f64 {
    if distance <= 0.0 {
        0.0
    } else {
        (distance / epsilon).min(EXP_CLAMP).exp_m1()
    }
}

/// [`divergence_value`] with set constraints replaced by [`constraint_penalty`]
/// of the sup-norm distance to the feasible set. Used for gap monitoring.
pub fn penalized_divergence_value(spec: &DivergenceSpec, a: &[f64], w: &[f64], epsilon: f64) -> Result<f64> {
    check_len("a", a.len(), spec.len())?;
    check_len("weights", w.len(), spec.len())?;
    let (lo, hi) = match spec.kind {
        DivergenceKind::Equality => (1.0, 1.0),
        DivergenceKind::Range { alpha, beta } => (alpha, beta),
        _ => return divergence_value(spec, a, w),
    };
    let mut distance = 0.0f64;
    for ((&a, &p), &w) in a.iter().zip(&spec.reference).zip(w) {
        if w == 0.0 {
            continue;
        }
        let below = lo * p - a;
        let above = if hi.is_finite() { a - hi * p } else { f64::NEG_INFINITY };
        distance = distance.max(below).max(above);
    }
    Ok(constraint_penalty(distance, epsilon))
}

/// [`divergence_conjugate_value`] with the domain constraint `u <= φ'_∞`
/// replaced by a penalty on its sup-norm violation.
pub fn penalized_conjugate_value(spec: &DivergenceSpec, u: &[f64], w: &[f64], epsilon: f64) -> Result<f64> {
    check_len("u", u.len(), spec.len())?;
    check_len("weights", w.len(), spec.len())?;
    let slope = spec.kind.recession();
    let violation = u.iter().fold(0.0f64, |m, &x| m.max(x - slope));
    let value = weighted_sum(u.iter().zip(&spec.reference).zip(w).map(|((&x, &p), &w)| {
        (w * p, spec.kind.conjugate(x.min(slope)))
    }));
    Ok(value + constraint_penalty(violation, epsilon))
}

/// Stabilized proxdiv `prox^{KL}_{F/ε}(e^{-u/ε} s) / s`, componentwise, with
/// `0/0 = 0`.
pub fn proxdiv(spec: &DivergenceSpec, s: &[f64], u: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    Ok(log_proxdiv(spec, s, u, epsilon)?
        .into_iter()
        .map(exp_clamped)
        .collect())
}

/// Logarithm of [`proxdiv`], unclamped.
pub fn log_proxdiv(spec: &DivergenceSpec, s: &[f64], u: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    check_len("s", s.len(), spec.len())?;
    check_len("u", u.len(), spec.len())?;
    check_positive("epsilon", epsilon)?;
    check_nonnegative("s", s)?;
    Ok(s.iter()
        .zip(&spec.reference)
        .zip(u)
        .map(|((&s, &p), &u)| spec.kind.log_proxdiv(s, p, u, epsilon))
        .collect())
}
