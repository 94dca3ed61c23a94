//! Time-discrete gradient flows: each step solves one entropic transport
//! problem whose first marginal is tied to the previous density and whose
//! second marginal carries the energy `2τ G`.
//!
//! With the quadratic cost the first marginal is pinned exactly (Wasserstein
//! flows); with the WF cost it is penalized by `KL(·|μ_k)`.

use crate::divergences::{exp_clamped, DivergenceKind, DivergenceSpec};
use crate::error::{check_len, check_nonnegative, check_positive, Error, Result};
use crate::geometry::{build_cost_quadratic, build_cost_wf, DiscreteSpace};
use crate::scaling::{MarginalFunctional, ScalingOptions, ScalingSolver};

/// Energy driving a flow.
#[derive(Debug, Clone, PartialEq)]
pub enum Energy {
    /// `weight · KL(μ | p dx)`; the heat flow for a constant `p`.
    EntropyFit { reference: Vec<f64>, weight: f64 },
    /// Indicator of densities at most 1.
    Congestion,
    /// `-α μ(X) + ι_{≤1}(dμ/dx)`.
    TumorGrowth { alpha: f64 },
    /// Two species growing at the same rate `α` under a shared ceiling on
    /// the sum of their densities.
    TwoSpecies { alpha: f64 },
}

/// An energy together with the time step `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEnergy {
    pub energy: Energy,
    pub tau: f64,
}

impl FlowEnergy {
    pub fn new(energy: Energy, tau: f64) -> Result<Self> {
        let e = Self { energy, tau };
        e.validate()?;
        Ok(e)
    }

    pub fn entropy_fit(reference: Vec<f64>, weight: f64, tau: f64) -> Result<Self> {
        Self::new(Energy::EntropyFit { reference, weight }, tau)
    }

    pub fn congestion(tau: f64) -> Result<Self> {
        Self::new(Energy::Congestion, tau)
    }

    pub fn tumor_growth(alpha: f64, tau: f64) -> Result<Self> {
        Self::new(Energy::TumorGrowth { alpha }, tau)
    }

    pub fn two_species(alpha: f64, tau: f64) -> Result<Self> {
        Self::new(Energy::TwoSpecies { alpha }, tau)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("tau", self.tau)?;
        match &self.energy {
            Energy::EntropyFit { reference, weight } => {
                check_positive("energy weight", *weight)?;
                check_nonnegative("reference", reference)
            }
            Energy::Congestion => Ok(()),
            Energy::TumorGrowth { alpha } | Energy::TwoSpecies { alpha } => {
                check_positive("growth rate", *alpha)?;
                if 2.0 * self.tau * alpha >= 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "growth needs 2 tau alpha < 1, got {}",
                        2.0 * self.tau * alpha
                    )));
                }
                Ok(())
            }
        }
    }

    /// Number of species (couplings) the energy acts on.
    pub fn species(&self) -> usize {
        match self.energy {
            Energy::TwoSpecies { .. } => 2,
            _ => 1,
        }
    }

    /// `log(1 - 2τα)` for the growth energies.
    fn log_damping(&self) -> f64 {
        match self.energy {
            Energy::TumorGrowth { alpha } | Energy::TwoSpecies { alpha } => (-2.0 * self.tau * alpha).ln_1p(),
            _ => 0.0,
        }
    }

    /// The single-species energies that are plain divergences.
    fn as_divergence(&self) -> Option<(DivergenceKind, Option<&[f64]>)> {
        match &self.energy {
            Energy::EntropyFit { reference, weight } => {
                Some((DivergenceKind::Kl { lambda: 2.0 * self.tau * weight }, Some(reference)))
            }
            Energy::Congestion => Some((DivergenceKind::Range { alpha: 0.0, beta: 1.0 }, None)),
            _ => None,
        }
    }

    fn log_proxdiv_point(&self, log_s: &[f64], u: &[f64], eps: f64, j: usize, out: &mut [f64]) {
        if let Some((kind, reference)) = self.as_divergence() {
            let log_p = reference.map_or(0.0, |p| p[j].ln());
            out[0] = kind.log_proxdiv_logs(log_s[0], log_p, u[0], eps);
            return;
        }
        let lc = self.log_damping();
        match self.energy {
            Energy::TumorGrowth { .. } => {
                out[0] = if log_s[0] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else if log_s[0] - u[0] / eps <= (1.0 + eps) / eps * lc {
                    -(u[0] + lc) / eps
                } else {
                    -(log_s[0] + u[0]) / (1.0 + eps)
                };
            }
            Energy::TwoSpecies { .. } => {
                let sa = log_s[0] - u[0] / eps;
                let sb = log_s[1] - u[1] / eps;
                let total = log_add(sa, sb);
                let log_beta = (total / (1.0 + eps)).max(lc / eps);
                for k in 0..2 {
                    out[k] = if log_s[k] == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        -u[k] / eps - log_beta
                    };
                }
            }
            _ => unreachable!("divergence energies handled above"),
        }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

/// The second marginal functional `F2 = 2τ G` on a space of `dim` points.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyFunctional {
    energy: FlowEnergy,
    dim: usize,
}

impl EnergyFunctional {
    pub fn new(energy: FlowEnergy, dim: usize) -> Result<Self> {
        energy.validate()?;
        if let Energy::EntropyFit { reference, .. } = &energy.energy {
            check_len("reference", reference.len(), dim)?;
        }
        Ok(Self { energy, dim })
    }
}

impl MarginalFunctional for EnergyFunctional {
    fn dim(&self) -> usize {
        self.dim
    }

    fn check_couplings(&self, n: usize) -> Result<()> {
        check_len("species", n, self.energy.species())
    }

    fn log_proxdiv(&self, log_s: &[Vec<f64>], u: &[Vec<f64>], eps: &[f64], out: &mut [Vec<f64>]) {
        let n = log_s.len();
        let (mut ls, mut uu, mut o) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for j in 0..self.dim {
            for k in 0..n {
                ls[k] = log_s[k][j];
                uu[k] = u[k][j];
            }
            self.energy.log_proxdiv_point(&ls, &uu, eps[0], j, &mut o);
            for k in 0..n {
                out[k][j] = o[k];
            }
        }
    }
}

/// Stabilized proxdiv of `2τ G` for inputs `s` (one row per species) and
/// potentials `u`.
pub fn flow_proxdiv(energy: &FlowEnergy, s: &[Vec<f64>], u: &[Vec<f64>], epsilon: f64) -> Result<Vec<Vec<f64>>> {
    check_positive("epsilon", epsilon)?;
    check_len("species", s.len(), energy.species())?;
    check_len("potential rows", u.len(), s.len())?;
    let dim = s[0].len();
    for (rs, ru) in s.iter().zip(u) {
        check_len("s row", rs.len(), dim)?;
        check_len("u row", ru.len(), dim)?;
        check_nonnegative("s", rs)?;
    }
    let functional = EnergyFunctional::new(energy.clone(), dim)?;
    let log_s: Vec<Vec<f64>> = s.iter().map(|r| r.iter().map(|v| v.ln()).collect()).collect();
    let mut out = vec![vec![0.0; dim]; s.len()];
    functional.log_proxdiv(&log_s, u, &vec![epsilon; s.len()], &mut out);
    Ok(out
        .into_iter()
        .map(|r| r.into_iter().map(exp_clamped).collect())
        .collect())
}

/// Density of the next step from the second marginals of the step's couplings.
pub fn flow_recover_next(energy: &FlowEnergy, second: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    energy.validate()?;
    check_len("species", second.len(), energy.species())?;
    for row in second {
        check_nonnegative("second marginal", row)?;
    }
    let c = 1.0 - 2.0 * energy.tau * growth_rate(energy);
    Ok(match energy.energy {
        Energy::EntropyFit { .. } => second.to_vec(),
        Energy::Congestion => vec![second[0].iter().map(|s| s.min(1.0)).collect()],
        Energy::TumorGrowth { .. } => vec![second[0].iter().map(|s| (s / c).min(1.0)).collect()],
        Energy::TwoSpecies { .. } => {
            let divisor: Vec<f64> = second[0].iter().zip(&second[1]).map(|(a, b)| (a + b).max(c)).collect();
            second
                .iter()
                .map(|row| row.iter().zip(&divisor).map(|(s, d)| s / d).collect())
                .collect()
        }
    })
}

fn growth_rate(energy: &FlowEnergy) -> f64 {
    match energy.energy {
        Energy::TumorGrowth { alpha } | Energy::TwoSpecies { alpha } => alpha,
        _ => 0.0,
    }
}

/// Transport cost of the flow metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowCost {
    /// `|y - x|²` with the first marginal pinned.
    Quadratic,
    /// WF cost with the given cut locus, first marginal penalized by `KL`.
    Wf { cutoff: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    /// `densities[k][species][i]`, starting with the initial state.
    pub densities: Vec<Vec<Vec<f64>>>,
    pub steps: Vec<StepReport>,
}

impl FlowTrajectory {
    /// Total mass per step, summed over species.
    pub fn masses(&self, x: &DiscreteSpace) -> Vec<f64> {
        self.densities
            .iter()
            .map(|d| d.iter().map(|row| x.integrate(row)).sum())
            .collect()
    }
}

/// Runs `steps` implicit steps from `initial` (one row per species).
pub fn run_flow(
    initial: &[Vec<f64>],
    energy: &FlowEnergy,
    x: &DiscreteSpace,
    cost: FlowCost,
    steps: usize,
    epsilon: f64,
    options: ScalingOptions,
) -> Result<FlowTrajectory> {
    check_positive("epsilon", epsilon)?;
    check_len("species", initial.len(), energy.species())?;
    for row in initial {
        check_len("initial density", row.len(), x.len())?;
        check_nonnegative("initial density", row)?;
    }
    let f2 = EnergyFunctional::new(energy.clone(), x.len())?;
    let c = match cost {
        FlowCost::Quadratic => build_cost_quadratic(x, x)?,
        FlowCost::Wf { cutoff } => build_cost_wf(x, x, cutoff)?,
    };
    let n = energy.species();
    let mut trajectory = FlowTrajectory { densities: vec![initial.to_vec()], steps: Vec::new() };
    for step in 0..steps {
        let wrap = |e: Error| Error::FlowStep { step, source: Box::new(e) };
        let current = trajectory.densities.last().expect("initial state");
        let f1 = current
            .iter()
            .map(|p| match cost {
                FlowCost::Quadratic => DivergenceSpec::equality(p.clone()),
                FlowCost::Wf { .. } => DivergenceSpec::kl(1.0, p.clone()),
            })
            .collect::<Result<Vec<_>>>()
            .map_err(wrap)?;
        let mut solver = ScalingSolver::stabilized(&f1, &f2, x, x, vec![&c; n], vec![1.0; n], epsilon, options)
            .map_err(wrap)?;
        let converged = solver.run().map_err(wrap)?;
        let second: Vec<Vec<f64>> = (0..n).map(|k| solver.marginals(k).1).collect();
        let next = flow_recover_next(energy, &second).map_err(wrap)?;
        trajectory.steps.push(StepReport { iterations: solver.state().iteration, converged });
        trajectory.densities.push(next);
    }
    Ok(trajectory)
}
