use crate::divergences::{
    penalized_conjugate_value, penalized_divergence_value, DivergenceSpec,
};
use crate::error::{Error, Result};

/// A marginal functional as seen by the scaling loop.
///
/// A functional may act on several couplings at once (barycenters, two-species
/// flows): `log_s`, `u` and `out` then hold one row per coupling, and `eps[k]` is
/// the regularization of coupling `k`.
pub trait MarginalFunctional {
    /// Number of points of the marginal this functional acts on.
    fn dim(&self) -> usize;

    /// Fails unless the functional can act on `n` couplings.
    fn check_couplings(&self, n: usize) -> Result<()>;

    /// Writes `log proxdiv(s_k, u_k, eps_k)` into `out[k]`, given `log s_k`;
    /// `-inf` encodes zero on both sides.
    fn log_proxdiv(&self, log_s: &[Vec<f64>], u: &[Vec<f64>], eps: &[f64], out: &mut [Vec<f64>]);

    /// Value `F(s)` with set constraints replaced by a penalty (single coupling).
    fn penalized_value(&self, _s: &[f64], _w: &[f64], _eps: f64) -> Option<f64> {
        None
    }

    /// Conjugate `F*(u)` with domain violations replaced by a penalty (single coupling).
    fn penalized_conjugate(&self, _u: &[f64], _w: &[f64], _eps: f64) -> Option<f64> {
        None
    }
}

/// One divergence applied to every coupling independently.
impl MarginalFunctional for DivergenceSpec {
    fn dim(&self) -> usize {
        self.len()
    }

    fn check_couplings(&self, _n: usize) -> Result<()> {
        Ok(())
    }

    fn log_proxdiv(&self, log_s: &[Vec<f64>], u: &[Vec<f64>], eps: &[f64], out: &mut [Vec<f64>]) {
        for k in 0..log_s.len() {
            for ((o, &ls), (&p, &ui)) in out[k]
                .iter_mut()
                .zip(&log_s[k])
                .zip(self.reference.iter().zip(&u[k]))
            {
                *o = self.kind.log_proxdiv_of_log(ls, p, ui, eps[k]);
            }
        }
    }

    fn penalized_value(&self, s: &[f64], w: &[f64], eps: f64) -> Option<f64> {
        penalized_divergence_value(self, s, w, eps).ok()
    }

    fn penalized_conjugate(&self, u: &[f64], w: &[f64], eps: f64) -> Option<f64> {
        penalized_conjugate_value(self, u, w, eps).ok()
    }
}

/// One divergence per coupling.
impl MarginalFunctional for [DivergenceSpec] {
    fn dim(&self) -> usize {
        self.first().map_or(0, DivergenceSpec::len)
    }

    fn check_couplings(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} divergences for {n} couplings",
                self.len()
            )));
        }
        let d = self.dim();
        if self.iter().any(|f| f.len() != d) {
            return Err(Error::DimensionMismatch("divergences have different lengths".into()));
        }
        Ok(())
    }

    fn log_proxdiv(&self, log_s: &[Vec<f64>], u: &[Vec<f64>], eps: &[f64], out: &mut [Vec<f64>]) {
        for (k, spec) in self.iter().enumerate() {
            spec.log_proxdiv(
                std::slice::from_ref(&log_s[k]),
                std::slice::from_ref(&u[k]),
                &eps[k..=k],
                &mut out[k..=k],
            );
        }
    }

    fn penalized_value(&self, s: &[f64], w: &[f64], eps: f64) -> Option<f64> {
        match self {
            [single] => single.penalized_value(s, w, eps),
            _ => None,
        }
    }

    fn penalized_conjugate(&self, u: &[f64], w: &[f64], eps: f64) -> Option<f64> {
        match self {
            [single] => single.penalized_conjugate(u, w, eps),
            _ => None,
        }
    }
}

impl MarginalFunctional for Vec<DivergenceSpec> {
    fn dim(&self) -> usize {
        self.as_slice().dim()
    }

    fn check_couplings(&self, n: usize) -> Result<()> {
        self.as_slice().check_couplings(n)
    }

    fn log_proxdiv(&self, log_s: &[Vec<f64>], u: &[Vec<f64>], eps: &[f64], out: &mut [Vec<f64>]) {
        self.as_slice().log_proxdiv(log_s, u, eps, out)
    }

    fn penalized_value(&self, s: &[f64], w: &[f64], eps: f64) -> Option<f64> {
        self.as_slice().penalized_value(s, w, eps)
    }

    fn penalized_conjugate(&self, u: &[f64], w: &[f64], eps: f64) -> Option<f64> {
        self.as_slice().penalized_conjugate(u, w, eps)
    }
}
