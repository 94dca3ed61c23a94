//! Runs a configured experiment and writes its results.
//!
//! Every run writes `summary.json`; the other files depend on the kind:
//!
//! | kind            | files                                                          |
//! |-----------------|----------------------------------------------------------------|
//! | transport, mass | source, target, first_marginal, second_marginal, support, gap |
//! | barycenter      | marginal_k, barycenter                                          |
//! | flow            | trajectory (or trajectory_a, trajectory_b), mass              |
//! | generalized     | coupling, marginal_k                                           |
//! | colortransfer   | the transferred PPM image                                      |

use std::path::Path;

use serde_json::{json, Value};
use uot::barycenter::{solve_barycenter, BarycenterProblem};
use uot::extensions::{pushforward, solve_generalized, solve_with_mass, PushforwardProblem};
use uot::flows::{run_flow, Energy, FlowCost, FlowEnergy};
use uot::geometry::{build_cost_quadratic, build_cost_wf, gibbs_kernel};
use uot::{solve_plain, solve_stabilized, CostMatrix, DiscreteSpace, DivergenceSpec, SolveReport};

use crate::colortransfer::color_transfer;
use crate::config::{invalid, resolve_path, CostConfig, EnergyConfig, ExperimentConfig, Problem};
use crate::error::{CliError, Result};
use crate::{ppm, table};

fn build_cost(cost: CostConfig, x: &DiscreteSpace, y: &DiscreteSpace) -> Result<CostMatrix> {
    match cost {
        CostConfig::Quadratic => build_cost_quadratic(x, y),
        CostConfig::Wf { cutoff } => build_cost_wf(x, y, cutoff),
    }
    .map_err(invalid)
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|source| CliError::Output { path: out.to_path_buf(), source })
}

/// Solves the experiment described by `config`, resolving relative input
/// paths against `base` and writing into `out`. Returns the summary that was
/// written to `summary.json`.
pub fn run_experiment(config: &ExperimentConfig, base: &Path, out: &Path) -> Result<Value> {
    config.validate()?;
    let options = config.solver.options()?;
    let eps = config.epsilon;
    create_dir(out)?;
    let mut summary = match &config.problem {
        Problem::Transport { space, target_space, cost, source, target, first, second, stabilized } => {
            let x = space.build()?;
            let y = target_space.as_ref().unwrap_or(space).build()?;
            let p = source.resolve(&x, base, config.seed, 0)?;
            let q = target.resolve(&y, base, config.seed, 1)?;
            let f1 = DivergenceSpec::new(first.kind()?, p.clone()).map_err(invalid)?;
            let f2 = DivergenceSpec::new(second.kind()?, q.clone()).map_err(invalid)?;
            let c = build_cost(*cost, &x, &y)?;
            let report = if *stabilized {
                solve_stabilized(&f1, &f2, &c, &x, &y, eps, options)?
            } else {
                let kernel = gibbs_kernel(&c, eps).map_err(invalid)?;
                solve_plain(&f1, &f2, &kernel, &x, &y, eps, options)?
            };
            write_two_marginal(out, &x, &y, &p, &q, &c, &report, config.output.support_threshold)?
        }
        Problem::Mass { space, target_space, cost, source, target, first, second, mass_constraint, mass } => {
            let x = space.build()?;
            let y = target_space.as_ref().unwrap_or(space).build()?;
            let p = source.resolve(&x, base, config.seed, 0)?;
            let q = target.resolve(&y, base, config.seed, 1)?;
            let f1 = DivergenceSpec::new(first.kind()?, p.clone()).map_err(invalid)?;
            let f2 = DivergenceSpec::new(second.kind()?, q.clone()).map_err(invalid)?;
            let f3 = DivergenceSpec::new(mass_constraint.kind()?, vec![*mass]).map_err(invalid)?;
            let c = build_cost(*cost, &x, &y)?;
            let report = solve_with_mass(&f1, &f2, &f3, &c, &x, &y, eps, options)?;
            write_two_marginal(out, &x, &y, &p, &q, &c, &report, config.output.support_threshold)?
        }
        Problem::Barycenter { space, cost, marginals, weights, shared, first, stabilized } => {
            let x = space.build()?;
            let ps = marginals
                .iter()
                .enumerate()
                .map(|(k, m)| m.resolve(&x, base, config.seed, k as u64))
                .collect::<Result<Vec<_>>>()?;
            let c = build_cost(*cost, &x, &x)?;
            let mut problem = BarycenterProblem::new(
                x.clone(),
                x.clone(),
                ps.clone(),
                weights.clone(),
                shared.kind()?,
                vec![c; ps.len()],
                eps,
            )
            .map_err(invalid)?;
            if let Some(first) = first {
                let kinds = first.iter().map(|d| d.kind()).collect::<Result<Vec<_>>>()?;
                problem = problem.with_first(kinds).map_err(invalid)?;
            }
            if !stabilized {
                problem = problem.plain();
            }
            let solution = solve_barycenter(&problem, options)?;
            for (k, p) in ps.iter().enumerate() {
                table::write_marginal(&out.join(format!("marginal_{k}.csv")), x.points(), p)?;
            }
            table::write_marginal(&out.join("barycenter.csv"), x.points(), &solution.barycenter)?;
            json!({
                "iterations": solution.iterations,
                "converged": solution.converged,
                "barycenter_mass": x.integrate(&solution.barycenter),
            })
        }
        Problem::Flow { space, cost, initial, energy, tau, steps } => {
            let x = space.build()?;
            let init = initial
                .iter()
                .enumerate()
                .map(|(k, m)| m.resolve(&x, base, config.seed, k as u64))
                .collect::<Result<Vec<_>>>()?;
            let energy = match energy {
                EnergyConfig::EntropyFit { reference, weight } => Energy::EntropyFit {
                    reference: reference.resolve(&x, base, config.seed, init.len() as u64)?,
                    weight: *weight,
                },
                EnergyConfig::Congestion => Energy::Congestion,
                EnergyConfig::TumorGrowth { alpha } => Energy::TumorGrowth { alpha: *alpha },
                EnergyConfig::TwoSpecies { alpha } => Energy::TwoSpecies { alpha: *alpha },
            };
            let energy = FlowEnergy::new(energy, *tau).map_err(invalid)?;
            if init.len() != energy.species() {
                return Err(CliError::config(format!(
                    "energy acts on {} species but {} initial densities were given",
                    energy.species(),
                    init.len()
                )));
            }
            let flow_cost = match *cost {
                CostConfig::Quadratic => FlowCost::Quadratic,
                CostConfig::Wf { cutoff } if cutoff > 0.0 && cutoff.is_finite() => FlowCost::Wf { cutoff },
                CostConfig::Wf { cutoff } => {
                    return Err(CliError::config(format!("WF cutoff must be positive, got {cutoff}")))
                }
            };
            let trajectory = run_flow(&init, &energy, &x, flow_cost, *steps, eps, options)?;
            let names: &[&str] = if init.len() == 1 { &["trajectory"] } else { &["trajectory_a", "trajectory_b"] };
            for (s, name) in names.iter().enumerate() {
                let densities: Vec<Vec<f64>> = trajectory.densities.iter().map(|d| d[s].clone()).collect();
                table::write_trajectory(&out.join(format!("{name}.csv")), x.points(), &densities)?;
            }
            let masses = trajectory.masses(&x);
            table::write_series(&out.join("mass.csv"), "mass", &masses)?;
            json!({
                "steps": steps,
                "iterations": trajectory.steps.iter().map(|s| s.iterations).collect::<Vec<_>>(),
                "converged_steps": trajectory.steps.iter().filter(|s| s.converged).count(),
                "final_mass": masses.last(),
            })
        }
        Problem::Generalized { dz, spaces, maps, kernel, functionals } => {
            let specs = functionals
                .iter()
                .map(|f| DivergenceSpec::new(f.divergence.kind()?, f.reference.clone()).map_err(invalid))
                .collect::<Result<Vec<_>>>()?;
            let problem = PushforwardProblem::new(dz.clone(), spaces.clone(), maps.clone(), kernel.clone(), specs, eps)
                .map_err(invalid)?;
            let solution = solve_generalized(&problem, options)?;
            let index: Vec<Vec<f64>> = (0..dz.len()).map(|l| vec![l as f64]).collect();
            table::write_marginal(&out.join("coupling.csv"), &index, &solution.coupling)?;
            for (k, (map, dx)) in maps.iter().zip(spaces).enumerate() {
                let m = pushforward(map, &solution.coupling, dz, dx).map_err(invalid)?;
                let points: Vec<Vec<f64>> = (0..dx.len()).map(|i| vec![i as f64]).collect();
                table::write_marginal(&out.join(format!("marginal_{k}.csv")), &points, &m)?;
            }
            json!({
                "iterations": solution.iterations,
                "converged": solution.converged,
                "mass": solution.coupling.iter().zip(dz).map(|(r, w)| r * w).sum::<f64>(),
            })
        }
        Problem::Colortransfer { source, target, output, resolution, second } => {
            crate::histogram::check_resolution(*resolution)?;
            let src = ppm::read(&resolve_path(base, source))?;
            let tgt = ppm::read(&resolve_path(base, target))?;
            let t = color_transfer(&src, &tgt, *resolution, second.kind()?, eps, options)?;
            let path = resolve_path(out, output);
            ppm::write(&path, &t.image)?;
            json!({
                "iterations": t.iterations,
                "converged": t.converged,
                "image": path.display().to_string(),
                "source_pixels": t.source.total(),
                "target_pixels": t.target.total(),
                "occupied_source_bins": t.source.masses.iter().filter(|m| **m > 0.0).count(),
                "occupied_target_bins": t.target.masses.iter().filter(|m| **m > 0.0).count(),
                "mean_displacement_lab": t.mean_displacement,
            })
        }
    };
    let obj = summary.as_object_mut().expect("summaries are objects");
    obj.insert("kind".into(), json!(config.problem.kind()));
    obj.insert("epsilon".into(), json!(eps));
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&path, text + "\n").map_err(|source| CliError::Output { path, source })?;
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn write_two_marginal(
    out: &Path,
    x: &DiscreteSpace,
    y: &DiscreteSpace,
    p: &[f64],
    q: &[f64],
    cost: &CostMatrix,
    report: &SolveReport,
    threshold: f64,
) -> Result<Value> {
    let first = report.plan.first_marginal();
    let second = report.plan.second_marginal();
    table::write_marginal(&out.join("source.csv"), x.points(), p)?;
    table::write_marginal(&out.join("target.csv"), y.points(), q)?;
    table::write_marginal(&out.join("first_marginal.csv"), x.points(), &first)?;
    table::write_marginal(&out.join("second_marginal.csv"), y.points(), &second)?;
    table::write_support(&out.join("support.csv"), &report.plan.support(threshold))?;
    table::write_series(&out.join("gap.csv"), "gap", &report.gap_history)?;
    let finite = |v: f64| if v.is_finite() { json!(v) } else { Value::Null };
    Ok(json!({
        "iterations": report.iterations,
        "converged": report.converged,
        "primal": finite(report.primal),
        "dual": finite(report.dual),
        "mass": report.plan.mass(),
        "transport_cost": finite(report.plan.transport_cost(cost).map_err(invalid)?),
    }))
}

/// Applies the command-line overrides of `epsilon`, `max_iter` and `seed`.
pub fn apply_overrides(config: &mut ExperimentConfig, epsilon: Option<f64>, max_iter: Option<usize>, seed: Option<u64>) {
    if let Some(e) = epsilon {
        config.epsilon = e;
    }
    if let Some(m) = max_iter {
        config.solver.max_iter = m;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
}
