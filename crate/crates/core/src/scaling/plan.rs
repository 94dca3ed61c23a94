use ndarray::Array2;

use crate::error::{check_len, Result};
use crate::geometry::{CostMatrix, Kernel};

/// Storage of a coupling density.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanDensity {
    Dense(Array2<f64>),
    /// `R = diag(a) K diag(b)`, kept factored when `K` is separable.
    Scaled { a: Vec<f64>, kernel: Kernel, b: Vec<f64> },
}

/// A coupling density `R` on `X × Y`, relative to the reference weights `dx ⊗ dy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    density: PlanDensity,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl Plan {
    pub fn dense(density: Array2<f64>, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        check_len("dx", dx.len(), density.nrows())?;
        check_len("dy", dy.len(), density.ncols())?;
        Ok(Self { density: PlanDensity::Dense(density), dx, dy })
    }

    pub fn scaled(a: Vec<f64>, kernel: Kernel, b: Vec<f64>, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        let (n, m) = kernel.shape();
        check_len("a", a.len(), n)?;
        check_len("b", b.len(), m)?;
        check_len("dx", dx.len(), n)?;
        check_len("dy", dy.len(), m)?;
        Ok(Self { density: PlanDensity::Scaled { a, kernel, b }, dx, dy })
    }

    pub fn density(&self) -> &PlanDensity {
        &self.density
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.dx.len(), self.dy.len())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.density {
            PlanDensity::Dense(r) => r[[i, j]],
            PlanDensity::Scaled { a, kernel, b } => scaled_entry(a[i], kernel.entry(i, j), b[j]),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match &self.density {
            PlanDensity::Dense(r) => r.clone(),
            PlanDensity::Scaled { .. } => Array2::from_shape_fn(self.shape(), |(i, j)| self.entry(i, j)),
        }
    }

    /// First marginal `R dy` (a density on X).
    pub fn first_marginal(&self) -> Vec<f64> {
        match &self.density {
            PlanDensity::Dense(r) => r
                .rows()
                .into_iter()
                .map(|row| row.iter().zip(&self.dy).map(|(r, w)| r * w).sum())
                .collect(),
            PlanDensity::Scaled { a, kernel, b } => {
                let kb = kernel.apply(b, &self.dy).expect("shapes checked at construction");
                a.iter().zip(kb).map(|(&a, k)| scaled_entry(a, k, 1.0)).collect()
            }
        }
    }

    /// Second marginal `Rᵀ dx` (a density on Y).
    pub fn second_marginal(&self) -> Vec<f64> {
        match &self.density {
            PlanDensity::Dense(r) => {
                let mut out = vec![0.0; self.dy.len()];
                for (row, &w) in r.rows().into_iter().zip(&self.dx) {
                    out.iter_mut().zip(row).for_each(|(o, r)| *o += r * w);
                }
                out
            }
            PlanDensity::Scaled { a, kernel, b } => {
                let ka = kernel.apply_transpose(a, &self.dx).expect("shapes checked at construction");
                b.iter().zip(ka).map(|(&b, k)| scaled_entry(1.0, k, b)).collect()
            }
        }
    }

    /// Total mass `Σ R_ij dx_i dy_j`.
    pub fn mass(&self) -> f64 {
        self.first_marginal().iter().zip(&self.dx).map(|(r, w)| r * w).sum()
    }

    /// `Σ R_ij C_ij dx_i dy_j` with `0 · ∞ = 0`.
    pub fn transport_cost(&self, cost: &CostMatrix) -> Result<f64> {
        let (n, m) = self.shape();
        check_len("cost rows", cost.shape().0, n)?;
        check_len("cost columns", cost.shape().1, m)?;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..m {
                let r = self.entry(i, j);
                if r != 0.0 {
                    total += r * cost.entry(i, j) * self.dx[i] * self.dy[j];
                }
            }
        }
        Ok(total)
    }

    /// `KL(R | K)` against the Gibbs kernel of `cost` at `epsilon`, weighted by `dx ⊗ dy`.
    pub fn entropy(&self, cost: &CostMatrix, epsilon: f64) -> Result<f64> {
        let (n, m) = self.shape();
        check_len("cost rows", cost.shape().0, n)?;
        check_len("cost columns", cost.shape().1, m)?;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..m {
                let w = self.dx[i] * self.dy[j];
                if w == 0.0 {
                    continue;
                }
                let c = cost.entry(i, j);
                let k = (-c / epsilon).exp();
                let r = self.entry(i, j);
                let term = if r == 0.0 {
                    k
                } else if c == f64::INFINITY {
                    f64::INFINITY
                } else {
                    r * (r.ln() + c / epsilon) - r + k
                };
                total += w * term;
            }
        }
        Ok(total)
    }

    /// Entries above `threshold` as `(i, j, value)` triples, row-major.
    pub fn support(&self, threshold: f64) -> Vec<(usize, usize, f64)> {
        let (n, m) = self.shape();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..m {
                let r = self.entry(i, j);
                if r > threshold {
                    out.push((i, j, r));
                }
            }
        }
        out
    }

    /// Conditional means `Σ_j R_ij f(y_j) dy_j / Σ_j R_ij dy_j` for each column
    /// of `values` (one vector over Y per component). Rows without mass yield `None`.
    pub fn conditional_means(&self, values: &[Vec<f64>]) -> Result<Vec<Option<Vec<f64>>>> {
        let (n, m) = self.shape();
        for v in values {
            check_len("values", v.len(), m)?;
        }
        let denom = self.first_marginal();
        let numerators: Vec<Vec<f64>> = match &self.density {
            PlanDensity::Dense(r) => values
                .iter()
                .map(|v| {
                    r.rows()
                        .into_iter()
                        .map(|row| {
                            row.iter().zip(v).zip(&self.dy).map(|((r, f), w)| r * f * w).sum()
                        })
                        .collect()
                })
                .collect(),
            PlanDensity::Scaled { a, kernel, b } => values
                .iter()
                .map(|v| {
                    let bv: Vec<f64> = b.iter().zip(v).map(|(b, f)| b * f).collect();
                    let kb = kernel.apply(&bv, &self.dy).expect("lengths checked");
                    a.iter().zip(kb).map(|(&a, k)| scaled_entry(a, k, 1.0)).collect()
                })
                .collect(),
        };
        Ok((0..n)
            .map(|i| {
                if denom[i] > 0.0 {
                    Some(numerators.iter().map(|num| num[i] / denom[i]).collect())
                } else {
                    None
                }
            })
            .collect())
    }
}

#[inline]
fn scaled_entry(a: f64, k: f64, b: f64) -> f64 {
    if a == 0.0 || k == 0.0 || b == 0.0 {
        0.0
    } else {
        a * k * b
    }
}
