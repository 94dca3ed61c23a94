//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "problem": { "kind": "transport", "space": {...}, "cost": {"type": "quadratic"}, ... },
//!   "epsilon": 1e-3,
//!   "solver": { "max_iter": 5000, "schedule": {"epsilon0": 1.0, "divisions": 10, "every": 100} },
//!   "seed": 7,
//!   "output": { "support_threshold": 1e-10 }
//! }
//! ```
//!
//! Unknown keys are rejected everywhere. Relative paths are resolved against
//! the directory of the configuration file.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use uot::scaling::ScheduleParams;
use uot::{DiscreteSpace, DivergenceKind, ScalingOptions};

use crate::error::{CliError, Result};
use crate::table;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub epsilon: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Seed of the synthetic generators.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Problem {
    Transport {
        space: SpaceConfig,
        /// Defaults to `space`.
        target_space: Option<SpaceConfig>,
        cost: CostConfig,
        source: MarginalSource,
        target: MarginalSource,
        first: DivergenceConfig,
        second: DivergenceConfig,
        #[serde(default = "yes")]
        stabilized: bool,
    },
    Barycenter {
        space: SpaceConfig,
        cost: CostConfig,
        marginals: Vec<MarginalSource>,
        weights: Vec<f64>,
        shared: DivergenceConfig,
        /// Penalties on the first marginals; all `equality` when absent.
        first: Option<Vec<DivergenceConfig>>,
        #[serde(default = "yes")]
        stabilized: bool,
    },
    Flow {
        space: SpaceConfig,
        cost: CostConfig,
        /// One density per species.
        initial: Vec<MarginalSource>,
        energy: EnergyConfig,
        tau: f64,
        steps: usize,
    },
    Mass {
        space: SpaceConfig,
        target_space: Option<SpaceConfig>,
        cost: CostConfig,
        source: MarginalSource,
        target: MarginalSource,
        first: DivergenceConfig,
        second: DivergenceConfig,
        /// Divergence applied to the total mass, relative to `mass`.
        mass_constraint: DivergenceConfig,
        mass: f64,
    },
    Generalized {
        dz: Vec<f64>,
        /// Point weights of each factor space.
        spaces: Vec<Vec<f64>>,
        /// 0-based maps from `Z` to each factor space.
        maps: Vec<Vec<usize>>,
        kernel: Vec<f64>,
        functionals: Vec<FactorFunctional>,
    },
    Colortransfer {
        source: PathBuf,
        target: PathBuf,
        /// Written inside the output directory when relative.
        #[serde(default = "default_image_name")]
        output: PathBuf,
        #[serde(default = "default_resolution")]
        resolution: [usize; 3],
        /// Penalty on the second marginal; the first one is pinned.
        #[serde(default = "default_second")]
        second: DivergenceConfig,
    },
}

fn yes() -> bool {
    true
}

fn default_image_name() -> PathBuf {
    PathBuf::from("transferred.ppm")
}

fn default_resolution() -> [usize; 3] {
    [64, 32, 32]
}

fn default_second() -> DivergenceConfig {
    DivergenceConfig::Equality
}

impl Problem {
    /// The subcommand name running this problem.
    pub fn kind(&self) -> &'static str {
        match self {
            Problem::Transport { .. } => "transport",
            Problem::Barycenter { .. } => "barycenter",
            Problem::Flow { .. } => "flow",
            Problem::Mass { .. } => "mass",
            Problem::Generalized { .. } => "generalized",
            Problem::Colortransfer { .. } => "colortransfer",
        }
    }
}

/// Uniform grid on a box.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    /// `[lo, hi]` per axis.
    pub extents: Vec<[f64; 2]>,
    pub resolution: Vec<usize>,
    /// Weight of each point; `1/N` when absent.
    pub weight: Option<f64>,
}

impl SpaceConfig {
    pub fn build(&self) -> Result<DiscreteSpace> {
        if self.extents.is_empty() {
            return Err(CliError::config("a space needs at least one axis"));
        }
        if self.extents.len() != self.resolution.len() {
            return Err(CliError::config(format!(
                "space has {} extents but {} resolutions",
                self.extents.len(),
                self.resolution.len()
            )));
        }
        if self.resolution.contains(&0) {
            return Err(CliError::config("resolutions must be positive"));
        }
        if self.extents.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
            return Err(CliError::config("extents must be finite intervals [lo, hi]"));
        }
        let n: usize = self.resolution.iter().product();
        let weight = self.weight.unwrap_or(1.0 / n as f64);
        if !(weight.is_finite() && weight > 0.0) {
            return Err(CliError::config(format!("point weight must be positive, got {weight}")));
        }
        let extents: Vec<(f64, f64)> = self.extents.iter().map(|&[lo, hi]| (lo, hi)).collect();
        DiscreteSpace::uniform_box(&extents, &self.resolution, weight).map_err(invalid)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum CostConfig {
    Quadratic,
    Wf { cutoff: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DivergenceConfig {
    Equality,
    Kl { lambda: f64 },
    Tv { lambda: f64 },
    /// `beta` defaults to `+inf`.
    Range { alpha: f64, beta: Option<f64> },
}

impl DivergenceConfig {
    pub fn kind(&self) -> Result<DivergenceKind> {
        let kind = match *self {
            DivergenceConfig::Equality => DivergenceKind::Equality,
            DivergenceConfig::Kl { lambda } => DivergenceKind::Kl { lambda },
            DivergenceConfig::Tv { lambda } => DivergenceKind::Tv { lambda },
            DivergenceConfig::Range { alpha, beta } => {
                DivergenceKind::Range { alpha, beta: beta.unwrap_or(f64::INFINITY) }
            }
        };
        kind.validate().map_err(invalid)?;
        Ok(kind)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: Vec<f64>,
    pub width: f64,
    pub height: f64,
}

/// Where a density on a space comes from.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum MarginalSource {
    /// CSV with columns `x…, value`, one row per point in grid order.
    File { path: PathBuf },
    Values { values: Vec<f64> },
    Constant { value: f64 },
    /// `floor + Σ height·exp(-|x - center|²/width²)`.
    Bumps {
        bumps: Vec<Bump>,
        #[serde(default)]
        floor: f64,
    },
    /// Independent uniform draws in `[low, high)`.
    Random { low: f64, high: f64 },
}

impl MarginalSource {
    /// Evaluates the source on `space`. `stream` separates the random
    /// streams of several sources sharing one seed.
    pub fn resolve(&self, space: &DiscreteSpace, base: &Path, seed: u64, stream: u64) -> Result<Vec<f64>> {
        let values = match self {
            MarginalSource::File { path } => {
                let path = resolve_path(base, path);
                let (points, values) = table::read_marginal(&path)?;
                if points.first().is_some_and(|p| p.len() != space.dim()) {
                    return Err(CliError::config(format!(
                        "{}: points have dimension {}, the space {}",
                        path.display(),
                        points[0].len(),
                        space.dim()
                    )));
                }
                values
            }
            MarginalSource::Values { values } => values.clone(),
            MarginalSource::Constant { value } => vec![*value; space.len()],
            MarginalSource::Bumps { bumps, floor } => {
                for b in bumps {
                    if b.center.len() != space.dim() {
                        return Err(CliError::config("bump center dimension differs from the space"));
                    }
                    if !(b.width > 0.0) {
                        return Err(CliError::config("bump width must be positive"));
                    }
                }
                space
                    .points()
                    .iter()
                    .map(|x| {
                        floor
                            + bumps
                                .iter()
                                .map(|b| {
                                    let d2: f64 = x.iter().zip(&b.center).map(|(p, c)| (p - c) * (p - c)).sum();
                                    b.height * (-d2 / (b.width * b.width)).exp()
                                })
                                .sum::<f64>()
                    })
                    .collect()
            }
            MarginalSource::Random { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(CliError::config("random source needs low < high"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(stream));
                (0..space.len()).map(|_| rng.gen_range(*low..*high)).collect()
            }
        };
        if values.len() != space.len() {
            return Err(CliError::config(format!(
                "marginal has {} values but the space has {} points",
                values.len(),
                space.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(CliError::config(format!("marginal values must be finite and nonnegative, got {v}")));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnergyConfig {
    EntropyFit {
        reference: MarginalSource,
        #[serde(default = "unit")]
        weight: f64,
    },
    Congestion,
    TumorGrowth { alpha: f64 },
    /// Both species share the growth rate.
    TwoSpecies { alpha: f64 },
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorFunctional {
    pub divergence: DivergenceConfig,
    pub reference: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub epsilon0: f64,
    pub divisions: usize,
    pub every: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub gap_tol: Option<f64>,
    /// Record the primal-dual gap every this many iterations (0 disables).
    pub gap_every: usize,
    pub absorb_threshold: f64,
    pub absorb_check_every: usize,
    pub schedule: Option<ScheduleConfig>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = ScalingOptions::default();
        Self {
            max_iter: o.max_iter,
            tol: o.tol,
            gap_tol: o.gap_tol,
            gap_every: 10,
            absorb_threshold: o.absorb_threshold,
            absorb_check_every: o.absorb_check_every,
            schedule: None,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> Result<ScalingOptions> {
        if !(self.tol >= 0.0) {
            return Err(CliError::config("tol must be nonnegative"));
        }
        if let Some(s) = self.schedule {
            if !(s.epsilon0 > 0.0 && s.epsilon0.is_finite()) || s.divisions == 0 || s.every == 0 {
                return Err(CliError::config("schedule needs epsilon0 > 0, divisions > 0 and every > 0"));
            }
        }
        Ok(ScalingOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            gap_tol: self.gap_tol,
            absorb_threshold: self.absorb_threshold,
            absorb_check_every: self.absorb_check_every,
            schedule: self.schedule.map(|s| ScheduleParams {
                epsilon0: s.epsilon0,
                divisions: s.divisions,
                every: s.every,
            }),
            gap_every: self.gap_every,
        })
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Plan entries above this are written to `support.csv`.
    pub support_threshold: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { support_threshold: 1e-10 }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CliError::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        self.solver.options()?;
        if !(self.output.support_threshold >= 0.0) {
            return Err(CliError::config("support_threshold must be nonnegative"));
        }
        Ok(())
    }
}

pub fn resolve_path(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Library validation errors raised while building a problem are
/// configuration errors, not solver failures.
pub(crate) fn invalid(e: uot::Error) -> CliError {
    CliError::Config(e.to_string())
}
