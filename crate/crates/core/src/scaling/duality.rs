use ndarray::Array2;

use super::plan::Plan;
use crate::divergences::{
    divergence_value, penalized_conjugate_value, penalized_divergence_value, DivergenceSpec,
};
use crate::error::{check_len, check_positive, Result};
use crate::geometry::{CostMatrix, DiscreteSpace};

/// `F1(R dy) + F2(Rᵀ dx) + ε KL(R|K)` by direct summation; `+inf` when a
/// marginal violates a set constraint.
pub fn primal_value(
    plan: &Plan,
    f1: &DivergenceSpec,
    f2: &DivergenceSpec,
    cost: &CostMatrix,
    epsilon: f64,
) -> Result<f64> {
    check_positive("epsilon", epsilon)?;
    let v1 = divergence_value(f1, &plan.first_marginal(), plan.dx())?;
    let v2 = divergence_value(f2, &plan.second_marginal(), plan.dy())?;
    Ok(v1 + v2 + epsilon * plan.entropy(cost, epsilon)?)
}

/// [`primal_value`] with set constraints replaced by `exp(d/ε) - 1`.
pub fn penalized_primal_value(
    plan: &Plan,
    f1: &DivergenceSpec,
    f2: &DivergenceSpec,
    cost: &CostMatrix,
    epsilon: f64,
) -> Result<f64> {
    check_positive("epsilon", epsilon)?;
    let v1 = penalized_divergence_value(f1, &plan.first_marginal(), plan.dx(), epsilon)?;
    let v2 = penalized_divergence_value(f2, &plan.second_marginal(), plan.dy(), epsilon)?;
    Ok(v1 + v2 + epsilon * plan.entropy(cost, epsilon)?)
}

/// `-F1*(-u) - F2*(-v) - ε Σ (e^{(u_i+v_j)/ε} - 1) K_ij dx_i dy_j`, with
/// conjugate-domain violations penalized.
#[allow(clippy::too_many_arguments)]
pub fn dual_value(
    u: &[f64],
    v: &[f64],
    f1: &DivergenceSpec,
    f2: &DivergenceSpec,
    cost: &CostMatrix,
    x: &DiscreteSpace,
    y: &DiscreteSpace,
    epsilon: f64,
) -> Result<f64> {
    check_positive("epsilon", epsilon)?;
    check_len("u", u.len(), x.len())?;
    check_len("v", v.len(), y.len())?;
    let neg_u: Vec<f64> = u.iter().map(|x| -x).collect();
    let neg_v: Vec<f64> = v.iter().map(|x| -x).collect();
    let c1 = penalized_conjugate_value(f1, &neg_u, x.weights(), epsilon)?;
    let c2 = penalized_conjugate_value(f2, &neg_v, y.weights(), epsilon)?;
    let (dx, dy) = (x.weights(), y.weights());
    let mut coupling = 0.0;
    for i in 0..x.len() {
        for j in 0..y.len() {
            let c = cost.entry(i, j);
            if c == f64::INFINITY || dx[i] * dy[j] == 0.0 {
                continue;
            }
            let r = ((u[i] + v[j] - c) / epsilon).exp();
            let k = (-c / epsilon).exp();
            coupling += (r - k) * dx[i] * dy[j];
        }
    }
    Ok(-c1 - c2 - epsilon * coupling)
}

/// Primal minus dual at the plan `R_ij = exp((u_i + v_j - C_ij)/ε)` generated
/// by the potentials, both with the penalty convention.
#[allow(clippy::too_many_arguments)]
pub fn pd_gap(
    u: &[f64],
    v: &[f64],
    f1: &DivergenceSpec,
    f2: &DivergenceSpec,
    cost: &CostMatrix,
    x: &DiscreteSpace,
    y: &DiscreteSpace,
    epsilon: f64,
) -> Result<f64> {
    check_len("u", u.len(), x.len())?;
    check_len("v", v.len(), y.len())?;
    let r = Array2::from_shape_fn((x.len(), y.len()), |(i, j)| {
        let c = cost.entry(i, j);
        if c == f64::INFINITY {
            0.0
        } else {
            ((u[i] + v[j] - c) / epsilon).exp()
        }
    });
    let plan = Plan::dense(r, x.weights().to_vec(), y.weights().to_vec())?;
    let primal = penalized_primal_value(&plan, f1, f2, cost, epsilon)?;
    Ok(primal - dual_value(u, v, f1, f2, cost, x, y, epsilon)?)
}
