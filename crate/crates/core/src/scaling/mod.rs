//! Plain and log-stabilized scaling iterations, ε-scaling, objective values.

mod duality;
mod engine;
mod functional;
mod plan;

pub use duality::{dual_value, pd_gap, penalized_primal_value, primal_value};
pub use engine::{ScalingOutput, ScalingSolver, ScalingState};
pub use functional::MarginalFunctional;
pub use plan::{Plan, PlanDensity};

use crate::divergences::DivergenceSpec;
use crate::error::{check_len, check_positive, Error, Result};
use crate::geometry::{CostMatrix, DiscreteSpace, Kernel};

/// The plain solver refuses regularizations below this value.
pub const PLAIN_EPSILON_LIMIT: f64 = 1e-5;

/// Parameters of the geometric ε-decrease.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub epsilon0: f64,
    pub divisions: usize,
    pub every: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { epsilon0: 1.0, divisions: 10, every: 100 }
    }
}

/// Solver options shared by all scaling drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingOptions {
    pub max_iter: usize,
    /// Stop when the dx/dy-weighted L¹ change of the log-scalings falls below this.
    pub tol: f64,
    /// Stop when the recorded primal-dual gap falls below this.
    pub gap_tol: Option<f64>,
    /// Absorb when some `|log ã|` or `|log b̃|` exceeds this. A negative value
    /// absorbs at every check.
    pub absorb_threshold: f64,
    /// Check the absorption criterion every this many sweeps (0 disables).
    pub absorb_check_every: usize,
    /// ε-scaling for the stabilized solver; `None` runs at the target ε throughout.
    pub schedule: Option<ScheduleParams>,
    /// Record the primal-dual gap every this many sweeps (0 disables).
    pub gap_every: usize,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-8,
            gap_tol: None,
            absorb_threshold: 50.0,
            absorb_check_every: 10,
            schedule: None,
            gap_every: 0,
        }
    }
}

impl ScalingOptions {
    pub fn with_schedule(mut self) -> Self {
        self.schedule = Some(ScheduleParams::default());
        self
    }
}

/// Geometric decrease `ε_k = ε0 (target/ε0)^{k/divisions}`, one step every
/// `every` iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub epsilon0: f64,
    pub target: f64,
    pub divisions: usize,
    pub every: usize,
}

impl EpsilonSchedule {
    pub fn new(epsilon0: f64, target: f64, divisions: usize, every: usize) -> Result<Self> {
        check_positive("target epsilon", target)?;
        check_positive("initial epsilon", epsilon0)?;
        if epsilon0 < target {
            return Err(Error::InvalidParameter(format!(
                "initial epsilon {epsilon0} is below the target {target}"
            )));
        }
        if divisions == 0 || every == 0 {
            return Err(Error::InvalidParameter("divisions and every must be positive".into()));
        }
        Ok(Self { epsilon0, target, divisions, every })
    }

    pub fn is_constant(&self) -> bool {
        self.epsilon0 == self.target
    }

    /// Value in effect during iteration `iteration` (0-based).
    pub fn epsilon_at(&self, iteration: usize) -> f64 {
        if self.is_constant() {
            return self.target;
        }
        let k = (iteration / self.every).min(self.divisions);
        if k == self.divisions {
            self.target
        } else {
            self.epsilon0 * (self.target / self.epsilon0).powf(k as f64 / self.divisions as f64)
        }
    }

    /// Iterations at which ε changes.
    pub fn change_points(&self) -> Vec<usize> {
        if self.is_constant() {
            return Vec::new();
        }
        (1..=self.divisions).map(|k| k * self.every).collect()
    }

    pub fn is_change_point(&self, iteration: usize) -> bool {
        !self.is_constant()
            && iteration > 0
            && iteration % self.every == 0
            && iteration / self.every <= self.divisions
    }

    /// First iteration run at the target value.
    pub fn completes_at(&self) -> usize {
        if self.is_constant() {
            0
        } else {
            self.every * self.divisions
        }
    }
}

/// Geometric schedule from `epsilon0` down to `target`.
pub fn epsilon_schedule(epsilon0: f64, target: f64, divisions: usize, every: usize) -> Result<EpsilonSchedule> {
    EpsilonSchedule::new(epsilon0, target, divisions, every)
}

/// Result of a two-marginal solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub plan: Plan,
    /// Primal objective, set constraints penalized by `exp(d/ε) - 1`.
    pub primal: f64,
    /// Dual objective, with the same convention.
    pub dual: f64,
    pub gap_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Dual potentials `ε log a`, `ε log b` at the final iterate.
    pub potentials: (Vec<f64>, Vec<f64>),
}

fn report<F1, F2>(solver: ScalingSolver<'_, F1, F2>, converged: bool) -> Result<SolveReport>
where
    F1: MarginalFunctional + ?Sized,
    F2: MarginalFunctional + ?Sized,
{
    let (primal, dual) = solver.values()?.unwrap_or((f64::NAN, f64::NAN));
    let potentials = solver.potentials(0);
    let out = solver.into_output(converged)?;
    Ok(SolveReport {
        plan: out.plans.into_iter().next().expect("one coupling"),
        primal,
        dual,
        gap_history: out.gap_history,
        iterations: out.iterations,
        converged: out.converged,
        potentials,
    })
}

/// Plain scaling iterations `a ← proxdiv_F1(K(b⊙dy))`, `b ← proxdiv_F2(Kᵀ(a⊙dx))`
/// starting from `b = 1`.
pub fn solve_plain(
    f1: &DivergenceSpec,
    f2: &DivergenceSpec,
    kernel: &Kernel,
    x: &DiscreteSpace,
    y: &DiscreteSpace,
    epsilon: f64,
    options: ScalingOptions,
) -> Result<SolveReport> {
    check_positive("epsilon", epsilon)?;
    if epsilon < PLAIN_EPSILON_LIMIT {
        return Err(Error::EpsilonTooSmall { epsilon, limit: PLAIN_EPSILON_LIMIT });
    }
    if (kernel.epsilon() - epsilon).abs() > 1e-12 * epsilon {
        return Err(Error::InvalidParameter(format!(
            "kernel was built for epsilon {} but {epsilon} was requested",
            kernel.epsilon()
        )));
    }
    let mut solver = ScalingSolver::plain(f1, f2, x, y, vec![kernel.clone()], options)?;
    let converged = solver.run()?;
    report(solver, converged)
}

/// Log-stabilized scaling iterations with absorption and optional ε-scaling.
pub fn solve_stabilized(
    f1: &DivergenceSpec,
    f2: &DivergenceSpec,
    cost: &CostMatrix,
    x: &DiscreteSpace,
    y: &DiscreteSpace,
    epsilon: f64,
    options: ScalingOptions,
) -> Result<SolveReport> {
    let mut solver = ScalingSolver::stabilized(f1, f2, x, y, vec![cost], vec![1.0], epsilon, options)?;
    let converged = solver.run()?;
    report(solver, converged)
}

/// Thompson part metric `max(log max r/s, log max s/r)`.
pub fn thompson_distance(r: &[f64], s: &[f64]) -> Result<f64> {
    check_len("s", s.len(), r.len())?;
    if let Some(index) = r.iter().chain(s).position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "thompson distance needs positive finite entries (entry {index})"
        )));
    }
    Ok(thompson_distance_log(
        &r.iter().map(|v| v.ln()).collect::<Vec<_>>(),
        &s.iter().map(|v| v.ln()).collect::<Vec<_>>(),
    ))
}

/// Thompson distance between vectors given by their logarithms.
pub fn thompson_distance_log(log_r: &[f64], log_s: &[f64]) -> f64 {
    let up = log_r.iter().zip(log_s).map(|(r, s)| r - s).fold(f64::NEG_INFINITY, f64::max);
    let down = log_r.iter().zip(log_s).map(|(r, s)| s - r).fold(f64::NEG_INFINITY, f64::max);
    up.max(down)
}
