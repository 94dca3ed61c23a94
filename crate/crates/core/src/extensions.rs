//! Scaling beyond two marginals: couplings on an abstract space `Z` observed
//! through pushforward maps, and two-marginal problems with an extra
//! functional of the total mass.

use ndarray::Array2;

use crate::divergences::{
    exp_clamped, penalized_conjugate_value, penalized_divergence_value, proxdiv, DivergenceSpec,
};
use crate::error::{check_len, check_nonnegative, check_positive, Error, Result};
use crate::geometry::{CostMatrix, DiscreteSpace};
use crate::scaling::{EpsilonSchedule, Plan, ScalingOptions, SolveReport};

/// Checks that `map` sends `0..len` into `0..size`.
fn check_map(map: &[usize], size: usize) -> Result<()> {
    match map.iter().find(|&&i| i >= size) {
        Some(&index) => Err(Error::IndexOutOfRange { index, size }),
        None => Ok(()),
    }
}

/// `t_# R`: mass of `R dz` gathered on each point `i` of the target, divided
/// by `dx_i`. Indices are 0-based.
pub fn pushforward(map: &[usize], r: &[f64], dz: &[f64], dx: &[f64]) -> Result<Vec<f64>> {
    check_len("coupling", r.len(), map.len())?;
    check_len("dz", dz.len(), map.len())?;
    check_map(map, dx.len())?;
    for &w in dx {
        check_positive("target weight", w)?;
    }
    let mut out = vec![0.0; dx.len()];
    for ((&i, &v), &w) in map.iter().zip(r).zip(dz) {
        out[i] += v * w;
    }
    for (o, w) in out.iter_mut().zip(dx) {
        *o /= w;
    }
    Ok(out)
}

/// A coupling vector on `Z` with `N` marginal penalties `F_k(t^k_# R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PushforwardProblem {
    pub dz: Vec<f64>,
    /// Weights `dx^k` of each factor space.
    pub spaces: Vec<Vec<f64>>,
    /// `maps[k][l]` is the index of `t^k(l)` in the factor space `k`.
    pub maps: Vec<Vec<usize>>,
    /// Reference kernel `K_l` on `Z`.
    pub kernel: Vec<f64>,
    pub functionals: Vec<DivergenceSpec>,
    pub epsilon: f64,
}

impl PushforwardProblem {
    pub fn new(
        dz: Vec<f64>,
        spaces: Vec<Vec<f64>>,
        maps: Vec<Vec<usize>>,
        kernel: Vec<f64>,
        functionals: Vec<DivergenceSpec>,
        epsilon: f64,
    ) -> Result<Self> {
        let p = Self { dz, spaces, maps, kernel, functionals, epsilon };
        p.validate()?;
        Ok(p)
    }

    /// `Z = X × Y` with the two coordinate projections, `dz = dx ⊗ dy` and
    /// `K` flattened row-major.
    pub fn product(
        dx: &[f64],
        dy: &[f64],
        kernel: &Array2<f64>,
        f1: DivergenceSpec,
        f2: DivergenceSpec,
        epsilon: f64,
    ) -> Result<Self> {
        check_len("kernel rows", kernel.nrows(), dx.len())?;
        check_len("kernel columns", kernel.ncols(), dy.len())?;
        let (n, m) = (dx.len(), dy.len());
        let dz = (0..n * m).map(|l| dx[l / m] * dy[l % m]).collect();
        let first = (0..n * m).map(|l| l / m).collect();
        let second = (0..n * m).map(|l| l % m).collect();
        let k = kernel.iter().copied().collect();
        Self::new(dz, vec![dx.to_vec(), dy.to_vec()], vec![first, second], k, vec![f1, f2], epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.dz.len();
        check_nonnegative("dz", &self.dz)?;
        check_len("kernel", self.kernel.len(), l)?;
        check_nonnegative("kernel", &self.kernel)?;
        check_positive("epsilon", self.epsilon)?;
        let n = self.maps.len();
        if n == 0 {
            return Err(Error::InvalidParameter("at least one map is required".into()));
        }
        check_len("factor spaces", self.spaces.len(), n)?;
        check_len("functionals", self.functionals.len(), n)?;
        for (k, (map, dx)) in self.maps.iter().zip(&self.spaces).enumerate() {
            check_len("map", map.len(), l)?;
            check_map(map, dx.len())?;
            for &w in dx {
                check_positive("factor weight", w)?;
            }
            let mut hit = vec![false; dx.len()];
            for &i in map {
                hit[i] = true;
            }
            if let Some(point) = hit.iter().position(|h| !h) {
                return Err(Error::NotSurjective { map: k, point });
            }
            check_len("functional", self.functionals[k].len(), dx.len())?;
        }
        Ok(())
    }

    /// `K_l Π_k a^k_{t^k(l)}`.
    pub fn coupling(&self, scalings: &[Vec<f64>]) -> Vec<f64> {
        (0..self.dz.len())
            .map(|l| {
                self.maps
                    .iter()
                    .zip(scalings)
                    .fold(self.kernel[l], |acc, (map, a)| if acc == 0.0 { 0.0 } else { acc * a[map[l]] })
            })
            .collect()
    }
}

/// `Γ^k((a^n)_{n≠k})`; `scalings[k]` is ignored.
pub fn gamma_k(problem: &PushforwardProblem, k: usize, scalings: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = problem.maps.len();
    if k >= n {
        return Err(Error::IndexOutOfRange { index: k, size: n });
    }
    check_len("scalings", scalings.len(), n)?;
    for (a, dx) in scalings.iter().zip(&problem.spaces) {
        check_len("scaling", a.len(), dx.len())?;
    }
    Ok(gamma_unchecked(problem, k, scalings))
}

fn gamma_unchecked(problem: &PushforwardProblem, k: usize, scalings: &[Vec<f64>]) -> Vec<f64> {
    let dx = &problem.spaces[k];
    let mut out = vec![0.0; dx.len()];
    for l in 0..problem.dz.len() {
        let mut v = problem.kernel[l] * problem.dz[l];
        for (n, (map, a)) in problem.maps.iter().zip(scalings).enumerate() {
            if n != k && v != 0.0 {
                v *= a[map[l]];
            }
        }
        out[problem.maps[k][l]] += v;
    }
    for (o, w) in out.iter_mut().zip(dx) {
        *o /= w;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedSolution {
    /// Optimal coupling on `Z`.
    pub coupling: Vec<f64>,
    pub scalings: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

/// Cyclic updates `a^k ← proxdiv_{F_k}(Γ^k((a^n)_{n≠k}), ε)` from `a = 1`.
/// Plain (unstabilized) iterations; stops on the dx-weighted L¹ change of
/// `log a` or at `max_iter`.
pub fn solve_generalized(problem: &PushforwardProblem, options: ScalingOptions) -> Result<GeneralizedSolution> {
    problem.validate()?;
    let mut scalings: Vec<Vec<f64>> = problem.spaces.iter().map(|dx| vec![1.0; dx.len()]).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iter {
        let mut change = 0.0;
        for k in 0..scalings.len() {
            let s = gamma_unchecked(problem, k, &scalings);
            let zeros = vec![0.0; s.len()];
            let next = proxdiv(&problem.functionals[k], &s, &zeros, problem.epsilon)?;
            if let Some(i) = next.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    iteration: iterations,
                    detail: format!("scaling {i} of factor {k} is {}", next[i]),
                });
            }
            change += log_change(&next, &scalings[k], &problem.spaces[k]);
            scalings[k] = next;
        }
        iterations += 1;
        if change < options.tol {
            converged = true;
            break;
        }
    }
    Ok(GeneralizedSolution { coupling: problem.coupling(&scalings), scalings, iterations, converged })
}

fn log_change(new: &[f64], old: &[f64], w: &[f64]) -> f64 {
    new.iter()
        .zip(old)
        .zip(w)
        .map(|((&a, &b), &w)| if a == b { 0.0 } else { w * (a.ln() - b.ln()).abs() })
        .sum()
}

/// Two-marginal transport with an additional functional `F3` of the total
/// mass, e.g. equality to `m` for partial transport.
///
/// Runs the three-block cycle (first scaling, second scaling, mass scaling)
/// with all scalings stored as potentials `ε log ·`, so that every kernel
/// product is a log-sum-exp and any `ε` can be used. The ε-schedule of
/// `options` is honored; `F3` must act on a single point with unit weight.
#[allow(clippy::too_many_arguments)]
pub fn solve_with_mass(
    f1: &DivergenceSpec,
    f2: &DivergenceSpec,
    f3: &DivergenceSpec,
    cost: &CostMatrix,
    x: &DiscreteSpace,
    y: &DiscreteSpace,
    epsilon: f64,
    options: ScalingOptions,
) -> Result<SolveReport> {
    check_positive("epsilon", epsilon)?;
    check_len("first functional", f1.len(), x.len())?;
    check_len("second functional", f2.len(), y.len())?;
    check_len("mass functional", f3.len(), 1)?;
    check_len("cost rows", cost.shape().0, x.len())?;
    check_len("cost columns", cost.shape().1, y.len())?;
    let schedule = match options.schedule {
        Some(p) if p.epsilon0 > epsilon => Some(EpsilonSchedule::new(p.epsilon0, epsilon, p.divisions, p.every)?),
        _ => None,
    };
    let end = schedule.map_or(0, |s| s.completes_at());
    let c = cost.to_dense();
    let (dx, dy) = (x.weights(), y.weights());
    let log_dx: Vec<f64> = dx.iter().map(|w| w.ln()).collect();
    let log_dy: Vec<f64> = dy.iter().map(|w| w.ln()).collect();
    let (n, m) = (x.len(), y.len());

    // potentials ε log a, ε log b, ε log z
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut h = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut eps = schedule.map_or(epsilon, |s| s.epsilon_at(0));
    let mut prev_f = f.clone();
    let mut prev_g = g.clone();
    let mut prev_h = h;

    // log of the argument of each proxdiv, at the current regularization
    let log_row = |i: usize, g: &[f64], h: f64, eps: f64| {
        log_sum_exp(
            (0..m)
                .filter(|&j| c[[i, j]] < f64::INFINITY && dy[j] > 0.0 && g[j] > f64::NEG_INFINITY)
                .map(|j| (h + g[j] - c[[i, j]]) / eps + log_dy[j]),
        )
    };
    let log_col = |j: usize, f: &[f64], h: f64, eps: f64| {
        log_sum_exp(
            (0..n)
                .filter(|&i| c[[i, j]] < f64::INFINITY && dx[i] > 0.0 && f[i] > f64::NEG_INFINITY)
                .map(|i| (h + f[i] - c[[i, j]]) / eps + log_dx[i]),
        )
    };

    while iterations < options.max_iter {
        if let Some(s) = &schedule {
            eps = s.epsilon_at(iterations);
        }
        for i in 0..n {
            let ls = log_row(i, &g, h, eps);
            f[i] = eps * f1.kind.log_proxdiv_of_log(ls, f1.reference[i], 0.0, eps);
        }
        for j in 0..m {
            let ls = log_col(j, &f, h, eps);
            g[j] = eps * f2.kind.log_proxdiv_of_log(ls, f2.reference[j], 0.0, eps);
        }
        // mass of the plan without the mass scaling
        let log_mass = log_sum_exp(
            (0..n)
                .filter(|&i| dx[i] > 0.0 && f[i] > f64::NEG_INFINITY)
                .map(|i| f[i] / eps + log_dx[i] + log_row(i, &g, 0.0, eps)),
        );
        h = eps * f3.kind.log_proxdiv_of_log(log_mass, f3.reference[0], 0.0, eps);
        if f.iter().chain(&g).chain([&h]).any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite { iteration: iterations, detail: "potential overflow".into() });
        }
        iterations += 1;
        let change = (potential_change(&f, &prev_f, dx)
            + potential_change(&g, &prev_g, dy)
            + potential_change(&[h], &[prev_h], &[1.0]))
            / eps;
        prev_f.clone_from(&f);
        prev_g.clone_from(&g);
        prev_h = h;
        if iterations >= end && change < options.tol {
            converged = true;
            break;
        }
    }

    let r = Array2::from_shape_fn((n, m), |(i, j)| {
        let cij = c[[i, j]];
        let zero = f[i] == f64::NEG_INFINITY || g[j] == f64::NEG_INFINITY || h == f64::NEG_INFINITY;
        if cij == f64::INFINITY || zero {
            0.0
        } else {
            exp_clamped((f[i] + g[j] + h - cij) / eps)
        }
    });
    let plan = Plan::dense(r, dx.to_vec(), dy.to_vec())?;
    let mass = plan.mass();
    let primal = penalized_divergence_value(f1, &plan.first_marginal(), dx, eps)?
        + penalized_divergence_value(f2, &plan.second_marginal(), dy, eps)?
        + penalized_divergence_value(f3, &[mass], &[1.0], eps)?
        + eps * plan.entropy(cost, eps)?;
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    let mut kernel_mass = 0.0;
    for i in 0..n {
        for j in 0..m {
            if c[[i, j]] < f64::INFINITY {
                kernel_mass += (-c[[i, j]] / eps).exp() * dx[i] * dy[j];
            }
        }
    }
    let dual = -penalized_conjugate_value(f1, &neg(&f), dx, eps)?
        - penalized_conjugate_value(f2, &neg(&g), dy, eps)?
        - penalized_conjugate_value(f3, &[-h], &[1.0], eps)?
        - eps * (mass - kernel_mass);
    Ok(SolveReport {
        plan,
        primal,
        dual,
        gap_history: Vec::new(),
        iterations,
        converged,
        potentials: (f, g),
    })
}

fn potential_change(new: &[f64], old: &[f64], w: &[f64]) -> f64 {
    new.iter()
        .zip(old)
        .zip(w)
        .filter(|(_, &w)| w != 0.0)
        .map(|((&a, &b), &w)| if a == b { 0.0 } else { w * (a - b).abs() })
        .sum()
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}
