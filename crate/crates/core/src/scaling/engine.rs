use ndarray::Array2;

use super::functional::MarginalFunctional;
use super::plan::Plan;
use super::{EpsilonSchedule, ScalingOptions, PLAIN_EPSILON_LIMIT};
use crate::error::{check_len, check_positive, Error, Result};
use crate::geometry::{gibbs_kernel, stabilized_kernel, CostMatrix, DiscreteSpace, Kernel};

/// Log-scalings beyond this magnitude are absorbed before exponentiating,
/// whatever the configured threshold.
const EMERGENCY_LOG: f64 = 300.0;

/// Kernel products outside `(SAFE_MIN, SAFE_MAX)` are recomputed in the log domain.
const SAFE_MIN: f64 = 1e-280;
const SAFE_MAX: f64 = 1e280;

/// Iterates of the scaling loop, one row per coupling.
///
/// The implied scalings are `a = ã ⊙ exp(u/ε_k)` and `b = b̃ ⊙ exp(v/ε_k)`.
/// In plain mode the potentials stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingState {
    pub a_tilde: Vec<Vec<f64>>,
    pub b_tilde: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Base regularization; coupling `k` uses `epsilon * scale[k]`.
    pub epsilon: f64,
    pub iteration: usize,
    pub kernels: Vec<Kernel>,
}

enum Mode<'a> {
    Plain,
    Stabilized {
        costs: Vec<&'a CostMatrix>,
        schedule: Option<EpsilonSchedule>,
    },
}

/// Generic scaling loop over `n` couplings sharing the spaces `X` and `Y`.
///
/// Each sweep updates all first-side scalings through `F1` and then all
/// second-side scalings through `F2`.
pub struct ScalingSolver<'a, F1: ?Sized, F2: ?Sized> {
    f1: &'a F1,
    f2: &'a F2,
    x: &'a DiscreteSpace,
    y: &'a DiscreteSpace,
    scale: Vec<f64>,
    mode: Mode<'a>,
    options: ScalingOptions,
    state: ScalingState,
    log_s1: Vec<Vec<f64>>,
    log_s2: Vec<Vec<f64>>,
    log_a: Vec<Vec<f64>>,
    log_b: Vec<Vec<f64>>,
    prev_a: Vec<Vec<f64>>,
    prev_b: Vec<Vec<f64>>,
    last_change: f64,
    gap_history: Vec<f64>,
    absorptions: usize,
}

/// Outcome of a run of the generic loop.
#[derive(Debug, Clone)]
pub struct ScalingOutput {
    pub plans: Vec<Plan>,
    pub state: ScalingState,
    pub gap_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl<'a, F1, F2> ScalingSolver<'a, F1, F2>
where
    F1: MarginalFunctional + ?Sized,
    F2: MarginalFunctional + ?Sized,
{
    /// Plain iterations with fixed kernels; coupling `k` uses `kernels[k].epsilon()`.
    pub fn plain(
        f1: &'a F1,
        f2: &'a F2,
        x: &'a DiscreteSpace,
        y: &'a DiscreteSpace,
        kernels: Vec<Kernel>,
        options: ScalingOptions,
    ) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::InvalidParameter("at least one coupling is required".into()));
        }
        let base = kernels[0].epsilon();
        for k in &kernels {
            check_shape(k.shape(), x, y)?;
            if k.epsilon() < PLAIN_EPSILON_LIMIT {
                return Err(Error::EpsilonTooSmall { epsilon: k.epsilon(), limit: PLAIN_EPSILON_LIMIT });
            }
        }
        let scale = kernels.iter().map(|k| k.epsilon() / base).collect();
        Self::build(f1, f2, x, y, scale, Mode::Plain, base, kernels, options)
    }

    /// Log-stabilized iterations. Coupling `k` uses the cost `costs[k]` and the
    /// regularization `epsilon * scale[k]`; `epsilon` follows the schedule of
    /// `options` down to `epsilon_target`.
    pub fn stabilized(
        f1: &'a F1,
        f2: &'a F2,
        x: &'a DiscreteSpace,
        y: &'a DiscreteSpace,
        costs: Vec<&'a CostMatrix>,
        scale: Vec<f64>,
        epsilon_target: f64,
        options: ScalingOptions,
    ) -> Result<Self> {
        check_positive("epsilon", epsilon_target)?;
        if costs.is_empty() {
            return Err(Error::InvalidParameter("at least one coupling is required".into()));
        }
        check_len("scale", scale.len(), costs.len())?;
        for &s in &scale {
            check_positive("coupling scale", s)?;
        }
        for c in &costs {
            check_shape(c.shape(), x, y)?;
        }
        let schedule = match options.schedule {
            Some(p) if p.epsilon0 > epsilon_target => Some(EpsilonSchedule::new(
                p.epsilon0,
                epsilon_target,
                p.divisions,
                p.every,
            )?),
            _ => None,
        };
        let epsilon = schedule.as_ref().map_or(epsilon_target, |s| s.epsilon_at(0));
        let kernels = costs
            .iter()
            .zip(&scale)
            .map(|(c, s)| {
                let (n, m) = c.shape();
                stabilized_kernel(c, &vec![0.0; n], &vec![0.0; m], epsilon * s)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::build(f1, f2, x, y, scale, Mode::Stabilized { costs, schedule }, epsilon, kernels, options)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        f1: &'a F1,
        f2: &'a F2,
        x: &'a DiscreteSpace,
        y: &'a DiscreteSpace,
        scale: Vec<f64>,
        mode: Mode<'a>,
        epsilon: f64,
        kernels: Vec<Kernel>,
        options: ScalingOptions,
    ) -> Result<Self> {
        let n = kernels.len();
        f1.check_couplings(n)?;
        f2.check_couplings(n)?;
        check_len("first marginal functional", f1.dim(), x.len())?;
        check_len("second marginal functional", f2.dim(), y.len())?;
        let (i, j) = (x.len(), y.len());
        let rows = |len: usize, value: f64| vec![vec![value; len]; n];
        Ok(Self {
            f1,
            f2,
            x,
            y,
            scale,
            mode,
            options,
            state: ScalingState {
                a_tilde: rows(i, 1.0),
                b_tilde: rows(j, 1.0),
                u: rows(i, 0.0),
                v: rows(j, 0.0),
                epsilon,
                iteration: 0,
                kernels,
            },
            log_s1: rows(i, 0.0),
            log_s2: rows(j, 0.0),
            log_a: rows(i, 0.0),
            log_b: rows(j, 0.0),
            prev_a: rows(i, 0.0),
            prev_b: rows(j, 0.0),
            last_change: f64::INFINITY,
            gap_history: Vec::new(),
            absorptions: 0,
        })
    }

    pub fn state(&self) -> &ScalingState {
        &self.state
    }

    pub fn couplings(&self) -> usize {
        self.state.kernels.len()
    }

    pub fn epsilon_of(&self, k: usize) -> f64 {
        self.state.epsilon * self.scale[k]
    }

    pub fn gap_history(&self) -> &[f64] {
        &self.gap_history
    }

    /// Weighted L¹ change of the implied log-scalings over the last sweep.
    pub fn last_change(&self) -> f64 {
        self.last_change
    }

    /// Number of absorption steps performed so far.
    pub fn absorptions(&self) -> usize {
        self.absorptions
    }

    fn is_stabilized(&self) -> bool {
        matches!(self.mode, Mode::Stabilized { .. })
    }

    /// Iteration at which the ε-schedule reaches its target.
    pub fn schedule_end(&self) -> usize {
        match &self.mode {
            Mode::Stabilized { schedule: Some(s), .. } => s.completes_at(),
            _ => 0,
        }
    }

    /// `log a_k = log ã_k + u_k/ε_k`.
    pub fn implied_log_a(&self, k: usize) -> Vec<f64> {
        implied(&self.state.a_tilde[k], &self.state.u[k], self.epsilon_of(k))
    }

    /// `log b_k = log b̃_k + v_k/ε_k`.
    pub fn implied_log_b(&self, k: usize) -> Vec<f64> {
        implied(&self.state.b_tilde[k], &self.state.v[k], self.epsilon_of(k))
    }

    /// One full sweep: all `a` updates, then all `b` updates.
    pub fn step(&mut self) -> Result<()> {
        let it = self.state.iteration;
        if let Mode::Stabilized { schedule: Some(s), .. } = &self.mode {
            if s.is_change_point(it) {
                let next = s.epsilon_at(it);
                self.absorb(false);
                self.state.epsilon = next;
                self.rebuild_kernels()?;
            }
        }
        let eps: Vec<f64> = (0..self.couplings()).map(|k| self.epsilon_of(k)).collect();

        let dy = self.y.weights();
        for k in 0..self.couplings() {
            let weighted: Vec<f64> = self.state.b_tilde[k].iter().zip(dy).map(|(b, w)| b * w).collect();
            self.state.kernels[k].apply_raw(&weighted, &mut self.log_s1[k]);
            self.to_log(k, true);
        }
        self.f1.log_proxdiv(&self.log_s1, &self.state.u, &eps, &mut self.log_a);
        self.commit(true)?;

        let dx = self.x.weights();
        for k in 0..self.couplings() {
            let weighted: Vec<f64> = self.state.a_tilde[k].iter().zip(dx).map(|(a, w)| a * w).collect();
            self.state.kernels[k].apply_transpose_raw(&weighted, &mut self.log_s2[k]);
            self.to_log(k, false);
        }
        self.f2.log_proxdiv(&self.log_s2, &self.state.v, &eps, &mut self.log_b);
        self.commit(false)?;

        self.state.iteration += 1;
        let it = self.state.iteration;
        if self.is_stabilized() {
            let every = self.options.absorb_check_every;
            if every > 0 && it % every == 0 && self.max_abs_log() > self.options.absorb_threshold {
                self.absorb(true);
                self.rebuild_kernels()?;
            }
        }

        let mut change = 0.0;
        for k in 0..self.couplings() {
            let a = self.implied_log_a(k);
            let b = self.implied_log_b(k);
            change += weighted_l1(&a, &self.prev_a[k], dx) + weighted_l1(&b, &self.prev_b[k], dy);
            self.prev_a[k] = a;
            self.prev_b[k] = b;
        }
        self.last_change = change;

        let stride = self.options.gap_every;
        if stride > 0 && it % stride == 0 {
            if let Some(g) = self.gap() {
                self.gap_history.push(g);
            }
        }
        Ok(())
    }

    /// Turns freshly computed log-scalings into the stored factors.
    fn commit(&mut self, first: bool) -> Result<()> {
        let it = self.state.iteration;
        let logs = if first { &self.log_a } else { &self.log_b };
        let mut worst = 0.0f64;
        for (k, row) in logs.iter().enumerate() {
            for (i, &l) in row.iter().enumerate() {
                if l.is_nan() || l == f64::INFINITY {
                    return Err(Error::NonFinite {
                        iteration: it,
                        detail: format!(
                            "{} scaling {i} of coupling {k} is {l}",
                            if first { "first" } else { "second" }
                        ),
                    });
                }
                if l.is_finite() {
                    worst = worst.max(l.abs());
                }
            }
        }
        let emergency = self.is_stabilized() && worst > EMERGENCY_LOG;
        for k in 0..self.couplings() {
            let eps = self.epsilon_of(k);
            let (logs, tilde, pot) = if first {
                (&self.log_a[k], &mut self.state.a_tilde[k], &mut self.state.u[k])
            } else {
                (&self.log_b[k], &mut self.state.b_tilde[k], &mut self.state.v[k])
            };
            for ((t, p), &l) in tilde.iter_mut().zip(pot.iter_mut()).zip(logs) {
                if l == f64::NEG_INFINITY {
                    *t = 0.0;
                } else if emergency {
                    *p += eps * l;
                    *t = 1.0;
                } else {
                    *t = l.exp();
                }
            }
        }
        if emergency {
            self.absorptions += 1;
            self.rebuild_kernels()?;
        } else if !self.is_stabilized() {
            let tildes = if first { &self.state.a_tilde } else { &self.state.b_tilde };
            if tildes.iter().flatten().any(|t| !t.is_finite()) {
                return Err(Error::NonFinite {
                    iteration: it,
                    detail: "scaling overflow; use the stabilized solver or a larger epsilon".into(),
                });
            }
        }
        Ok(())
    }

    /// Replaces the kernel products in `log_s1[k]` (or `log_s2[k]`) by their logarithms.
    /// In stabilized mode, entries that under- or overflowed are recomputed by a
    /// log-sum-exp over the cost, so that no row is lost to underflow.
    fn to_log(&mut self, k: usize, first: bool) {
        let eps = self.epsilon_of(k);
        let st = &self.state;
        let (logs, w, own, other, other_tilde) = if first {
            (&mut self.log_s1[k], self.y.weights(), &st.u[k], &st.v[k], &st.b_tilde[k])
        } else {
            (&mut self.log_s2[k], self.x.weights(), &st.v[k], &st.u[k], &st.a_tilde[k])
        };
        let costs = match &self.mode {
            Mode::Stabilized { costs, .. } => Some(costs[k]),
            Mode::Plain => None,
        };
        for (i, s) in logs.iter_mut().enumerate() {
            let in_range = *s > SAFE_MIN && *s < SAFE_MAX;
            *s = match costs {
                Some(cost) if !in_range => {
                    let entry = |j: usize| if first { cost.entry(i, j) } else { cost.entry(j, i) };
                    log_sum_exp((0..other.len()).filter_map(|j| {
                        let c = entry(j);
                        let m = other_tilde[j] * w[j];
                        if c == f64::INFINITY || m == 0.0 {
                            None
                        } else {
                            Some((own[i] + other[j] - c) / eps + m.ln())
                        }
                    }))
                }
                _ => s.ln(),
            };
        }
    }

    fn max_abs_log(&self) -> f64 {
        self.state
            .a_tilde
            .iter()
            .chain(&self.state.b_tilde)
            .flatten()
            .filter(|&&t| t > 0.0)
            .fold(0.0f64, |m, &t| m.max(t.ln().abs()))
    }

    /// Moves `ε log ã`, `ε log b̃` into the potentials. Zero factors stay zero.
    fn absorb(&mut self, count: bool) {
        for k in 0..self.couplings() {
            let eps = self.epsilon_of(k);
            let st = &mut self.state;
            for (t, p) in st.a_tilde[k].iter_mut().zip(st.u[k].iter_mut()) {
                if *t > 0.0 {
                    *p += eps * t.ln();
                    *t = 1.0;
                }
            }
            for (t, p) in st.b_tilde[k].iter_mut().zip(st.v[k].iter_mut()) {
                if *t > 0.0 {
                    *p += eps * t.ln();
                    *t = 1.0;
                }
            }
        }
        if count {
            self.absorptions += 1;
        }
    }

    fn rebuild_kernels(&mut self) -> Result<()> {
        if let Mode::Stabilized { costs, .. } = &self.mode {
            for (k, cost) in costs.iter().enumerate() {
                let eps = self.state.epsilon * self.scale[k];
                self.state.kernels[k] = stabilized_kernel(cost, &self.state.u[k], &self.state.v[k], eps)?;
            }
        }
        Ok(())
    }

    /// Logarithms of the unstabilized inputs `Kᵀ(a ⊙ dx)` seen by the `F2`
    /// update, one row per coupling, at the current iterate.
    pub fn log_second_inputs(&mut self) -> Vec<Vec<f64>> {
        let dx = self.x.weights();
        for k in 0..self.couplings() {
            let weighted: Vec<f64> = self.state.a_tilde[k].iter().zip(dx).map(|(a, w)| a * w).collect();
            self.state.kernels[k].apply_transpose_raw(&weighted, &mut self.log_s2[k]);
            self.to_log(k, false);
        }
        (0..self.couplings())
            .map(|k| {
                let eps = self.epsilon_of(k);
                self.log_s2[k].iter().zip(&self.state.v[k]).map(|(l, v)| l - v / eps).collect()
            })
            .collect()
    }

    /// Current marginals `(R_k dy, R_kᵀ dx)` of coupling `k`.
    pub fn marginals(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let st = &self.state;
        let kernel = &st.kernels[k];
        let (n, m) = kernel.shape();
        let wb: Vec<f64> = st.b_tilde[k].iter().zip(self.y.weights()).map(|(b, w)| b * w).collect();
        let wa: Vec<f64> = st.a_tilde[k].iter().zip(self.x.weights()).map(|(a, w)| a * w).collect();
        let mut s1 = vec![0.0; n];
        let mut s2 = vec![0.0; m];
        kernel.apply_raw(&wb, &mut s1);
        kernel.apply_transpose_raw(&wa, &mut s2);
        (scale_by(&st.a_tilde[k], s1), scale_by(&st.b_tilde[k], s2))
    }

    /// Full dual potentials `(ε log a, ε log b)` of coupling `k`.
    pub fn potentials(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let eps = self.epsilon_of(k);
        let a = self.implied_log_a(k).into_iter().map(|l| eps * l).collect();
        let b = self.implied_log_b(k).into_iter().map(|l| eps * l).collect();
        (a, b)
    }

    /// Primal-dual gap of a single-coupling problem, through the Fenchel–Young
    /// split `Σ_i [F_i(s_i) + ⟨s_i, u_i⟩ + F_i*(-u_i)]`. `None` when a functional
    /// does not expose its value or conjugate.
    pub fn gap(&self) -> Option<f64> {
        if self.couplings() != 1 {
            return None;
        }
        let eps = self.epsilon_of(0);
        let (s1, s2) = self.marginals(0);
        let (u, v) = self.potentials(0);
        let b1 = fenchel_young(self.f1, &s1, &u, self.x.weights(), eps)?;
        let b2 = fenchel_young(self.f2, &s2, &v, self.y.weights(), eps)?;
        Some(b1 + b2)
    }

    /// Mass `dxᵀ exp(-C/ε) dy` of the unstabilized Gibbs kernel of coupling `k`.
    pub fn kernel_mass(&self, k: usize) -> Result<f64> {
        let gibbs;
        let kernel = match &self.mode {
            Mode::Plain => &self.state.kernels[k],
            Mode::Stabilized { costs, .. } => {
                gibbs = gibbs_kernel(costs[k], self.epsilon_of(k))?;
                &gibbs
            }
        };
        let ones = vec![1.0; self.y.len()];
        let kb = kernel.apply(&ones, self.y.weights())?;
        Ok(self.x.integrate(&kb))
    }

    /// Primal and dual objective values of a single-coupling problem, with the
    /// penalty convention for set constraints.
    pub fn values(&self) -> Result<Option<(f64, f64)>> {
        if self.couplings() != 1 {
            return Ok(None);
        }
        let eps = self.epsilon_of(0);
        let (s1, s2) = self.marginals(0);
        let (u, v) = self.potentials(0);
        let (dx, dy) = (self.x.weights(), self.y.weights());
        let terms = (|| {
            let p1 = self.f1.penalized_value(&s1, dx, eps)?;
            let p2 = self.f2.penalized_value(&s2, dy, eps)?;
            let c1 = self.f1.penalized_conjugate(&negate(&u), dx, eps)?;
            let c2 = self.f2.penalized_conjugate(&negate(&v), dy, eps)?;
            Some((p1, p2, c1, c2))
        })();
        let Some((p1, p2, c1, c2)) = terms else {
            return Ok(None);
        };
        let mass_r = self.x.integrate(&s1);
        let mass_k = self.kernel_mass(0)?;
        let entropic = eps * (mass_k - mass_r);
        let primal = p1 + p2 + pairing(&s1, &u, dx) + pairing(&s2, &v, dy) + entropic;
        let dual = -c1 - c2 + entropic;
        Ok(Some((primal, dual)))
    }

    /// Plan of coupling `k`: `diag(ã) K̃ diag(b̃)`; kept factored for separable kernels.
    pub fn plan(&self, k: usize) -> Result<Plan> {
        let st = &self.state;
        let kernel = &st.kernels[k];
        let (dx, dy) = (self.x.weights().to_vec(), self.y.weights().to_vec());
        match kernel {
            Kernel::SeparableGrid { .. } => {
                Plan::scaled(st.a_tilde[k].clone(), kernel.clone(), st.b_tilde[k].clone(), dx, dy)
            }
            Kernel::Dense { matrix, .. } => {
                let (a, b) = (&st.a_tilde[k], &st.b_tilde[k]);
                let r = Array2::from_shape_fn(matrix.dim(), |(i, j)| {
                    let kij = matrix[[i, j]];
                    if a[i] == 0.0 || b[j] == 0.0 || kij == 0.0 {
                        0.0
                    } else {
                        a[i] * kij * b[j]
                    }
                });
                Plan::dense(r, dx, dy)
            }
        }
    }

    /// Runs sweeps until the stopping rule fires or `max_iter` is reached.
    /// Returns whether the run converged.
    pub fn run(&mut self) -> Result<bool> {
        let end = self.schedule_end();
        while self.state.iteration < self.options.max_iter {
            self.step()?;
            if self.state.iteration < end {
                continue;
            }
            if self.last_change < self.options.tol {
                return Ok(true);
            }
            if let (Some(tol), Some(&g)) = (self.options.gap_tol, self.gap_history.last()) {
                let fresh = self.options.gap_every > 0 && self.state.iteration % self.options.gap_every == 0;
                if fresh && g < tol {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Runs to completion and collects plans and diagnostics.
    pub fn finish(mut self) -> Result<ScalingOutput> {
        let converged = self.run()?;
        self.into_output(converged)
    }

    pub fn into_output(self, converged: bool) -> Result<ScalingOutput> {
        let plans = (0..self.couplings()).map(|k| self.plan(k)).collect::<Result<Vec<_>>>()?;
        Ok(ScalingOutput {
            plans,
            iterations: self.state.iteration,
            gap_history: self.gap_history,
            state: self.state,
            converged,
        })
    }
}

fn check_shape(shape: (usize, usize), x: &DiscreteSpace, y: &DiscreteSpace) -> Result<()> {
    check_len("kernel rows", shape.0, x.len())?;
    check_len("kernel columns", shape.1, y.len())
}

fn implied(tilde: &[f64], pot: &[f64], eps: f64) -> Vec<f64> {
    tilde
        .iter()
        .zip(pot)
        .map(|(&t, &p)| if t == 0.0 { f64::NEG_INFINITY } else { t.ln() + p / eps })
        .collect()
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn weighted_l1(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(w)
        .filter(|(_, &w)| w != 0.0)
        .map(|((&x, &y), &w)| if x == y { 0.0 } else { w * (x - y).abs() })
        .sum()
}

fn scale_by(t: &[f64], mut s: Vec<f64>) -> Vec<f64> {
    for (v, &t) in s.iter_mut().zip(t) {
        *v = if t == 0.0 { 0.0 } else { *v * t };
    }
    s
}

fn negate(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| -x).collect()
}

/// `⟨s, u⟩_w` with `0 · ∞ = 0`.
pub(crate) fn pairing(s: &[f64], u: &[f64], w: &[f64]) -> f64 {
    s.iter()
        .zip(u)
        .zip(w)
        .filter(|((&s, _), &w)| s != 0.0 && w != 0.0)
        .map(|((&s, &u), &w)| s * u * w)
        .sum()
}

fn fenchel_young<F: MarginalFunctional + ?Sized>(f: &F, s: &[f64], u: &[f64], w: &[f64], eps: f64) -> Option<f64> {
    let value = f.penalized_value(s, w, eps)?;
    let conj = f.penalized_conjugate(&negate(u), w, eps)?;
    Some(value + pairing(s, u, w) + conj)
}
