//! Barycenters: `n` couplings from fixed first marginals `p_k` whose second
//! marginals are all penalized against a common free density `h`.
//!
//! The second functional is `F2(s) = inf_h Σ_k α_k λ D_φ(s_k|h)`. Its proximal
//! step reduces, point by point, to
//!
//! ```text
//! min_{s̃, h}  Σ_k α_k (ε KL̄(s̃_k|σ_k) + λ D̄_φ(s̃_k|h))
//! ```
//!
//! which is solved first in `h` (closed form or exact piecewise-linear root)
//! and then in each `s̃_k` with the ordinary proxdiv against `h`.

use crate::divergences::{exp_clamped, DivergenceKind, DivergenceSpec};
use crate::error::{check_len, check_nonnegative, check_positive, Error, Result};
use crate::geometry::{gibbs_kernel, CostMatrix, DiscreteSpace};
use crate::scaling::{MarginalFunctional, Plan, ScalingOptions, ScalingSolver};

fn check_weights(alpha: &[f64]) -> Result<()> {
    if alpha.is_empty() {
        return Err(Error::InvalidParameter("at least one barycenter weight is required".into()));
    }
    for &a in alpha {
        check_positive("barycenter weight", a)?;
    }
    Ok(())
}

fn check_shared_kind(kind: DivergenceKind) -> Result<()> {
    kind.validate()?;
    if let DivergenceKind::Range { beta, .. } = kind {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "a shared range divergence needs a finite positive upper bound, got {beta}"
            )));
        }
    }
    Ok(())
}

/// Pointwise minimizer `h` for inputs `s` (already stabilized) and weights `α`.
pub fn barycenter_h(kind: DivergenceKind, s: &[f64], alpha: &[f64], epsilon: f64) -> Result<f64> {
    check_len("s", s.len(), alpha.len())?;
    check_nonnegative("s", s)?;
    check_weights(alpha)?;
    check_shared_kind(kind)?;
    check_positive("epsilon", epsilon)?;
    let log_s: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    Ok(exp_clamped(barycenter_log_h(kind, &log_s, alpha, epsilon)))
}

/// `log h` from `log s`; `-inf` encodes `h = 0`. Parameters are not validated.
pub fn barycenter_log_h(kind: DivergenceKind, log_s: &[f64], alpha: &[f64], epsilon: f64) -> f64 {
    let total: f64 = alpha.iter().sum();
    match kind {
        DivergenceKind::Equality => {
            if log_s.contains(&f64::NEG_INFINITY) {
                return f64::NEG_INFINITY;
            }
            log_s.iter().zip(alpha).map(|(l, a)| a * l).sum::<f64>() / total
        }
        DivergenceKind::Kl { lambda } => {
            let q = epsilon / (epsilon + lambda);
            let lse = log_sum_exp(log_s.iter().zip(alpha).map(|(l, a)| a.ln() + q * l));
            (lse - total.ln()) / q
        }
        DivergenceKind::Tv { lambda } => {
            let (zero, pos): (f64, f64) = log_s.iter().zip(alpha).fold((0.0, 0.0), |(z, p), (&l, &a)| {
                if l == f64::NEG_INFINITY {
                    (z + a, p)
                } else {
                    (z, p + a)
                }
            });
            if zero >= pos {
                return f64::NEG_INFINITY;
            }
            let width = lambda / epsilon;
            let breaks = log_s
                .iter()
                .filter(|l| l.is_finite())
                .flat_map(|&l| [l - width, l + width])
                .collect();
            leftmost_root(|lh| barycenter_residual(kind, log_s, alpha, epsilon, lh), breaks)
        }
        DivergenceKind::Range { alpha: b1, beta: b2 } => {
            if log_s.contains(&f64::NEG_INFINITY) {
                return f64::NEG_INFINITY;
            }
            let mut breaks: Vec<f64> = log_s.iter().map(|l| l - b2.ln()).collect();
            if b1 > 0.0 {
                breaks.extend(log_s.iter().map(|l| l - b1.ln()));
            }
            leftmost_root(|lh| barycenter_residual(kind, log_s, alpha, epsilon, lh), breaks)
        }
    }
}

/// Left-hand side of the implicit equation for `log h` (TV and Range kinds),
/// nondecreasing in `log_h`. Zero for the other kinds.
pub fn barycenter_residual(kind: DivergenceKind, log_s: &[f64], alpha: &[f64], epsilon: f64, log_h: f64) -> f64 {
    match kind {
        DivergenceKind::Tv { lambda } => log_s
            .iter()
            .zip(alpha)
            .map(|(&l, &a)| {
                if l == f64::NEG_INFINITY {
                    a
                } else {
                    a * (epsilon / lambda * (log_h - l)).clamp(-1.0, 1.0)
                }
            })
            .sum(),
        DivergenceKind::Range { alpha: b1, beta: b2 } => log_s
            .iter()
            .zip(alpha)
            .map(|(&l, &a)| {
                // measured from the breakpoints exactly as `barycenter_log_h`
                // forms them, so the residual vanishes there without round-off
                let upper = b2 * (log_h - (l - b2.ln())).min(0.0);
                let lower = if b1 > 0.0 { b1 * (log_h - (l - b1.ln())).max(0.0) } else { 0.0 };
                a * (upper + lower)
            })
            .sum(),
        _ => 0.0,
    }
}

/// Leftmost zero of a continuous nondecreasing function that is affine between
/// consecutive breakpoints (and beyond the extreme ones).
fn leftmost_root(g: impl Fn(f64) -> f64, mut breaks: Vec<f64>) -> f64 {
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let values: Vec<f64> = breaks.iter().map(|&b| g(b)).collect();
    let Some(t) = values.iter().position(|&v| v >= 0.0) else {
        let last = breaks.len() - 1;
        let (b, v) = (breaks[last], values[last]);
        let slope = g(b + 1.0) - v;
        return if slope > 0.0 { b - v / slope } else { f64::INFINITY };
    };
    if values[t] == 0.0 && (t == 0 || values[t - 1] < 0.0) {
        return breaks[t];
    }
    if t == 0 {
        let (b, v) = (breaks[0], values[0]);
        let slope = v - g(b - 1.0);
        return if slope > 0.0 { b - v / slope } else { f64::NEG_INFINITY };
    }
    let (b0, b1) = (breaks[t - 1], breaks[t]);
    let (v0, v1) = (values[t - 1], values[t]);
    (b0 - v0 * (b1 - b0) / (v1 - v0)).clamp(b0, b1)
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// The shared second-marginal functional, acting on all couplings at once.
///
/// Coupling `k` runs at regularization `α_k ε`; its potentials are divided by
/// that value when forming the stabilized inputs `σ_k = s_k e^{-v_k/(α_k ε)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedBarycenter {
    kind: DivergenceKind,
    alpha: Vec<f64>,
    dim: usize,
}

impl SharedBarycenter {
    pub fn new(kind: DivergenceKind, alpha: Vec<f64>, dim: usize) -> Result<Self> {
        check_shared_kind(kind)?;
        check_weights(&alpha)?;
        Ok(Self { kind, alpha, dim })
    }

    pub fn kind(&self) -> DivergenceKind {
        self.kind
    }

    pub fn weights(&self) -> &[f64] {
        &self.alpha
    }

    /// Per-column `log h` and `log proxdiv` from the stabilized log-inputs.
    fn column(&self, log_sigma: &[f64], epsilon: f64, out: &mut [f64]) -> f64 {
        let lh = barycenter_log_h(self.kind, log_sigma, &self.alpha, epsilon);
        for (o, &ls) in out.iter_mut().zip(log_sigma) {
            *o = self.kind.log_proxdiv_logs(ls, lh, 0.0, epsilon);
        }
        lh
    }
}

impl MarginalFunctional for SharedBarycenter {
    fn dim(&self) -> usize {
        self.dim
    }

    fn check_couplings(&self, n: usize) -> Result<()> {
        check_len("barycenter weights", self.alpha.len(), n)
    }

    fn log_proxdiv(&self, log_s: &[Vec<f64>], u: &[Vec<f64>], eps: &[f64], out: &mut [Vec<f64>]) {
        let n = self.alpha.len();
        let base = eps[0] / self.alpha[0];
        let mut sigma = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..self.dim {
            for k in 0..n {
                sigma[k] = log_s[k][j] - u[k][j] / eps[k];
            }
            self.column(&sigma, base, &mut col);
            for k in 0..n {
                out[k][j] = col[k] - u[k][j] / eps[k];
            }
        }
    }
}

/// Scaling factors of the shared functional and the density `h`, for inputs
/// `s` (one row per coupling), potentials `u` and base regularization `ε`;
/// coupling `k` uses `α_k ε`.
pub fn proxdiv_shared(
    kind: DivergenceKind,
    s: &[Vec<f64>],
    u: &[Vec<f64>],
    epsilon: f64,
    alpha: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    check_positive("epsilon", epsilon)?;
    check_len("s rows", s.len(), alpha.len())?;
    check_len("u rows", u.len(), alpha.len())?;
    let dim = s.first().map_or(0, Vec::len);
    for (row_s, row_u) in s.iter().zip(u) {
        check_len("s row", row_s.len(), dim)?;
        check_len("u row", row_u.len(), dim)?;
        check_nonnegative("s", row_s)?;
    }
    let shared = SharedBarycenter::new(kind, alpha.to_vec(), dim)?;
    let n = alpha.len();
    let mut factors = vec![vec![0.0; dim]; n];
    let mut h = vec![0.0; dim];
    let mut sigma = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..dim {
        for k in 0..n {
            sigma[k] = s[k][j].ln() - u[k][j] / (alpha[k] * epsilon);
        }
        h[j] = exp_clamped(shared.column(&sigma, epsilon, &mut col));
        for k in 0..n {
            factors[k][j] = exp_clamped(col[k] - u[k][j] / (alpha[k] * epsilon));
        }
    }
    Ok((factors, h))
}

/// Barycenter of `n` measures `p_k` on `X`, supported on `Y`.
#[derive(Debug, Clone)]
pub struct BarycenterProblem {
    pub x: DiscreteSpace,
    pub y: DiscreteSpace,
    pub marginals: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Divergence to the barycenter, `λ` included.
    pub shared: DivergenceKind,
    pub costs: Vec<CostMatrix>,
    /// Penalty on each first marginal; `Equality` pins it to `p_k`.
    pub first: Vec<DivergenceKind>,
    pub epsilon: f64,
    /// Log-stabilized iterations (default) or plain ones with fixed kernels.
    pub stabilized: bool,
}

impl BarycenterProblem {
    pub fn new(
        x: DiscreteSpace,
        y: DiscreteSpace,
        marginals: Vec<Vec<f64>>,
        weights: Vec<f64>,
        shared: DivergenceKind,
        costs: Vec<CostMatrix>,
        epsilon: f64,
    ) -> Result<Self> {
        let n = marginals.len();
        let problem = Self {
            x,
            y,
            marginals,
            weights,
            shared,
            costs,
            first: vec![DivergenceKind::Equality; n],
            epsilon,
            stabilized: true,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_first(mut self, first: Vec<DivergenceKind>) -> Result<Self> {
        self.first = first;
        self.validate()?;
        Ok(self)
    }

    pub fn plain(mut self) -> Self {
        self.stabilized = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.marginals.len();
        check_weights(&self.weights)?;
        check_len("barycenter weights", self.weights.len(), n)?;
        check_len("costs", self.costs.len(), n)?;
        check_len("first-marginal kinds", self.first.len(), n)?;
        check_shared_kind(self.shared)?;
        check_positive("epsilon", self.epsilon)?;
        for (p, c) in self.marginals.iter().zip(&self.costs) {
            check_len("marginal", p.len(), self.x.len())?;
            check_nonnegative("marginal", p)?;
            check_len("cost rows", c.shape().0, self.x.len())?;
            check_len("cost columns", c.shape().1, self.y.len())?;
        }
        for kind in &self.first {
            kind.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BarycenterSolution {
    pub couplings: Vec<Plan>,
    /// Barycenter density on `Y`.
    pub barycenter: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs the `n`-coupling scaling loop; coupling `k` uses the kernel
/// `exp(-c_k/(α_k ε))`.
pub fn solve_barycenter(problem: &BarycenterProblem, options: ScalingOptions) -> Result<BarycenterSolution> {
    problem.validate()?;
    let f1 = problem
        .first
        .iter()
        .zip(&problem.marginals)
        .map(|(&kind, p)| DivergenceSpec::new(kind, p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let f2 = SharedBarycenter::new(problem.shared, problem.weights.clone(), problem.y.len())?;
    let (x, y) = (&problem.x, &problem.y);
    let mut solver = if problem.stabilized {
        let costs = problem.costs.iter().collect();
        ScalingSolver::stabilized(&f1, &f2, x, y, costs, problem.weights.clone(), problem.epsilon, options)?
    } else {
        let kernels = problem
            .costs
            .iter()
            .zip(&problem.weights)
            .map(|(c, a)| gibbs_kernel(c, a * problem.epsilon))
            .collect::<Result<Vec<_>>>()?;
        ScalingSolver::plain(&f1, &f2, x, y, kernels, options)?
    };
    let converged = solver.run()?;

    let inputs = solver.log_second_inputs();
    let n = problem.weights.len();
    let base = solver.epsilon_of(0) / problem.weights[0];
    let mut column = vec![0.0; n];
    let barycenter = (0..y.len())
        .map(|j| {
            for k in 0..n {
                column[k] = inputs[k][j];
            }
            exp_clamped(barycenter_log_h(problem.shared, &column, &problem.weights, base))
        })
        .collect();
    let out = solver.into_output(converged)?;
    Ok(BarycenterSolution {
        couplings: out.plans,
        barycenter,
        iterations: out.iterations,
        converged: out.converged,
    })
}
