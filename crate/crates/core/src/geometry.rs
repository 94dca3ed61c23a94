//! Discrete spaces, cost matrices and Gibbs kernels.
//!
//! A [`DiscreteSpace`] is a finite point cloud with a nonnegative reference
//! weight per point. Spaces built with [`DiscreteSpace::grid`] remember their
//! Cartesian structure, which lets the quadratic cost and its kernel be stored
//! per axis and applied by successive one-dimensional contractions.

use ndarray::Array2;

use crate::error::{check_len, check_nonnegative, check_positive, Error, Result};

/// Axis coordinates of a Cartesian grid. Points are enumerated in row-major
/// order: the last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
}

impl Grid {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|a| a.is_empty()) {
            return Err(Error::InvalidParameter(
                "a grid needs at least one axis and every axis at least one point".into(),
            ));
        }
        if axes.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("grid coordinates must be finite".into()));
        }
        Ok(Self { axes })
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when every axis is equally spaced (up to 1e-9 relative to the extent).
    pub fn is_uniform(&self) -> bool {
        self.axes.iter().all(|axis| {
            if axis.len() < 3 {
                return true;
            }
            let h = axis[1] - axis[0];
            let extent = (axis[axis.len() - 1] - axis[0]).abs().max(f64::MIN_POSITIVE);
            axis.windows(2)
                .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * extent)
        })
    }

    fn points(&self) -> Vec<Vec<f64>> {
        let shape = self.shape();
        let mut out = Vec::with_capacity(self.len());
        let mut index = vec![0usize; shape.len()];
        for _ in 0..self.len() {
            out.push(index.iter().zip(&self.axes).map(|(&i, a)| a[i]).collect());
            for d in (0..shape.len()).rev() {
                index[d] += 1;
                if index[d] < shape[d] {
                    break;
                }
                index[d] = 0;
            }
        }
        out
    }
}

/// A finite space with reference weights (the measures `dx`, `dy`).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSpace {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    grid: Option<Grid>,
}

impl DiscreteSpace {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("a space needs at least one point".into()));
        }
        check_len("weights", weights.len(), points.len())?;
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch(
                "all points of a space must share their dimension".into(),
            ));
        }
        check_nonnegative("weights", &weights)?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite".into()));
        }
        Ok(Self { points, weights, grid: None })
    }

    /// Cartesian grid with explicit weights, in row-major point order.
    pub fn grid(axes: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let grid = Grid::new(axes)?;
        let mut space = Self::new(grid.points(), weights)?;
        space.grid = Some(grid);
        Ok(space)
    }

    /// `n` equally spaced samples of `[lo, hi]`, each carrying weight `1/n`.
    pub fn interval(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("an interval needs at least one sample".into()));
        }
        Self::grid(vec![linspace(lo, hi, n)], vec![1.0 / n as f64; n])
    }

    /// Uniform grid on the box `[lo_a, hi_a]` per axis with the given weight per point.
    pub fn uniform_box(extents: &[(f64, f64)], resolution: &[usize], weight: f64) -> Result<Self> {
        check_len("resolution", resolution.len(), extents.len())?;
        let axes: Vec<Vec<f64>> = extents
            .iter()
            .zip(resolution)
            .map(|(&(lo, hi), &n)| linspace(lo, hi, n))
            .collect();
        let total = resolution.iter().product();
        Self::grid(axes, vec![weight; total])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid_structure(&self) -> Option<&Grid> {
        self.grid.as_ref()
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        check_len("weights", weights.len(), self.points.len())?;
        check_nonnegative("weights", &weights)?;
        self.weights = weights;
        Ok(self)
    }

    /// Sum of `values` against the reference weights.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

/// `n` equally spaced values from `lo` to `hi` inclusive (`lo` alone when `n == 1`).
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Transport cost between two spaces. Entries are in `[0, +inf]`.
#[derive(Debug, Clone, PartialEq)]
pub enum CostMatrix {
    Dense(Array2<f64>),
    /// `|x - y|^2` between two uniform grids, kept per axis.
    SeparableQuadratic {
        x_axes: Vec<Vec<f64>>,
        y_axes: Vec<Vec<f64>>,
    },
}

impl CostMatrix {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            CostMatrix::Dense(m) => m.dim(),
            CostMatrix::SeparableQuadratic { x_axes, y_axes } => (
                x_axes.iter().map(Vec::len).product(),
                y_axes.iter().map(Vec::len).product(),
            ),
        }
    }

    pub fn is_separable(&self) -> bool {
        matches!(self, CostMatrix::SeparableQuadratic { .. })
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            CostMatrix::Dense(m) => m[[i, j]],
            CostMatrix::SeparableQuadratic { x_axes, y_axes } => {
                let xi = unravel(i, x_axes);
                let yj = unravel(j, y_axes);
                x_axes
                    .iter()
                    .zip(y_axes)
                    .zip(xi.iter().zip(&yj))
                    .map(|((xa, ya), (&a, &b))| (xa[a] - ya[b]).powi(2))
                    .sum()
            }
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            CostMatrix::Dense(m) => m.clone(),
            CostMatrix::SeparableQuadratic { .. } => {
                let (n, m) = self.shape();
                Array2::from_shape_fn((n, m), |(i, j)| self.entry(i, j))
            }
        }
    }
}

fn unravel(mut index: usize, axes: &[Vec<f64>]) -> Vec<usize> {
    let mut out = vec![0; axes.len()];
    for d in (0..axes.len()).rev() {
        let n = axes[d].len();
        out[d] = index % n;
        index /= n;
    }
    out
}

fn check_same_dim(x: &DiscreteSpace, y: &DiscreteSpace) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(format!(
            "spaces have coordinate dimensions {} and {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Squared Euclidean cost. Tagged separable when both spaces are uniform grids
/// with the same number of axes.
pub fn build_cost_quadratic(x: &DiscreteSpace, y: &DiscreteSpace) -> Result<CostMatrix> {
    check_same_dim(x, y)?;
    if let (Some(gx), Some(gy)) = (x.grid_structure(), y.grid_structure()) {
        if gx.axes().len() == gy.axes().len() && gx.is_uniform() && gy.is_uniform() {
            return Ok(CostMatrix::SeparableQuadratic {
                x_axes: gx.axes().to_vec(),
                y_axes: gy.axes().to_vec(),
            });
        }
    }
    Ok(CostMatrix::Dense(Array2::from_shape_fn((x.len(), y.len()), |(i, j)| {
        squared_distance(&x.points()[i], &y.points()[j])
    })))
}

/// Wasserstein–Fisher–Rao cost `-log cos^2(min(pi/2 * d / cutoff, pi/2))`,
/// infinite exactly when the Euclidean distance reaches `cutoff`.
pub fn build_cost_wf(x: &DiscreteSpace, y: &DiscreteSpace, cutoff: f64) -> Result<CostMatrix> {
    check_positive("cutoff", cutoff)?;
    check_same_dim(x, y)?;
    Ok(CostMatrix::Dense(Array2::from_shape_fn((x.len(), y.len()), |(i, j)| {
        wf_cost(squared_distance(&x.points()[i], &y.points()[j]).sqrt(), cutoff)
    })))
}

pub(crate) fn wf_cost(distance: f64, cutoff: f64) -> f64 {
    if distance >= cutoff {
        f64::INFINITY
    } else {
        let z = std::f64::consts::FRAC_PI_2 * distance / cutoff;
        -2.0 * z.cos().ln()
    }
}

/// Gibbs kernel `exp(-C/eps)`, dense or stored per grid axis.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Dense { matrix: Array2<f64>, epsilon: f64 },
    /// Per-axis factors `exp(-(x_a - y_a)^2 / eps)`, each of shape `(n_x_a, n_y_a)`.
    SeparableGrid { axes: Vec<Array2<f64>>, epsilon: f64 },
}

/// `exp(-C/eps)` with `exp(-inf) = 0`; separable costs give separable kernels.
pub fn gibbs_kernel(cost: &CostMatrix, epsilon: f64) -> Result<Kernel> {
    check_positive("epsilon", epsilon)?;
    Ok(match cost {
        CostMatrix::Dense(c) => Kernel::Dense {
            matrix: c.mapv(|v| (-v / epsilon).exp()),
            epsilon,
        },
        CostMatrix::SeparableQuadratic { x_axes, y_axes } => Kernel::SeparableGrid {
            axes: x_axes
                .iter()
                .zip(y_axes)
                .map(|(xa, ya)| {
                    Array2::from_shape_fn((xa.len(), ya.len()), |(i, j)| {
                        (-(xa[i] - ya[j]).powi(2) / epsilon).exp()
                    })
                })
                .collect(),
            epsilon,
        },
    })
}

/// Dense kernel `exp((u_i + v_j - C_ij)/eps)` carrying absorbed potentials.
pub fn stabilized_kernel(cost: &CostMatrix, u: &[f64], v: &[f64], epsilon: f64) -> Result<Kernel> {
    check_positive("epsilon", epsilon)?;
    let (n, m) = cost.shape();
    check_len("u", u.len(), n)?;
    check_len("v", v.len(), m)?;
    let matrix = match cost {
        CostMatrix::Dense(c) => Array2::from_shape_fn((n, m), |(i, j)| {
            stabilized_entry(c[[i, j]], u[i], v[j], epsilon)
        }),
        _ => Array2::from_shape_fn((n, m), |(i, j)| {
            stabilized_entry(cost.entry(i, j), u[i], v[j], epsilon)
        }),
    };
    Ok(Kernel::Dense { matrix, epsilon })
}

#[inline]
fn stabilized_entry(c: f64, u: f64, v: f64, epsilon: f64) -> f64 {
    if c == f64::INFINITY {
        0.0
    } else {
        ((u + v - c) / epsilon).exp()
    }
}

impl Kernel {
    pub fn epsilon(&self) -> f64 {
        match self {
            Kernel::Dense { epsilon, .. } | Kernel::SeparableGrid { epsilon, .. } => *epsilon,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Kernel::Dense { matrix, .. } => matrix.dim(),
            Kernel::SeparableGrid { axes, .. } => (
                axes.iter().map(|a| a.nrows()).product(),
                axes.iter().map(|a| a.ncols()).product(),
            ),
        }
    }

    pub fn is_separable(&self) -> bool {
        matches!(self, Kernel::SeparableGrid { .. })
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            Kernel::Dense { matrix, .. } => matrix[[i, j]],
            Kernel::SeparableGrid { axes, .. } => {
                let xi = unravel_dims(i, axes.iter().map(|a| a.nrows()));
                let yj = unravel_dims(j, axes.iter().map(|a| a.ncols()));
                axes.iter()
                    .zip(xi.iter().zip(&yj))
                    .map(|(a, (&p, &q))| a[[p, q]])
                    .product()
            }
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            Kernel::Dense { matrix, .. } => matrix.clone(),
            Kernel::SeparableGrid { .. } => {
                let shape = self.shape();
                Array2::from_shape_fn(shape, |(i, j)| self.entry(i, j))
            }
        }
    }

    /// `K (b ⊙ w)` where `w` are the weights of the second space.
    pub fn apply(&self, b: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let (n, m) = self.shape();
        check_len("b", b.len(), m)?;
        check_len("weights", w.len(), m)?;
        let weighted: Vec<f64> = b.iter().zip(w).map(|(x, y)| x * y).collect();
        let mut out = vec![0.0; n];
        self.apply_raw(&weighted, &mut out);
        Ok(out)
    }

    /// `Kᵀ (a ⊙ w)` where `w` are the weights of the first space.
    pub fn apply_transpose(&self, a: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let (n, m) = self.shape();
        check_len("a", a.len(), n)?;
        check_len("weights", w.len(), n)?;
        let weighted: Vec<f64> = a.iter().zip(w).map(|(x, y)| x * y).collect();
        let mut out = vec![0.0; m];
        self.apply_transpose_raw(&weighted, &mut out);
        Ok(out)
    }

    /// `out = K x` without weights or length checks.
    pub(crate) fn apply_raw(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Kernel::Dense { matrix, .. } => dense_matvec(matrix, x, out),
            Kernel::SeparableGrid { axes, .. } => {
                let r = separable_contract(axes, x, false);
                out.copy_from_slice(&r);
            }
        }
    }

    /// `out = Kᵀ x` without weights or length checks.
    pub(crate) fn apply_transpose_raw(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Kernel::Dense { matrix, .. } => dense_matvec_transpose(matrix, x, out),
            Kernel::SeparableGrid { axes, .. } => {
                let r = separable_contract(axes, x, true);
                out.copy_from_slice(&r);
            }
        }
    }
}

fn unravel_dims(mut index: usize, dims: impl DoubleEndedIterator<Item = usize> + ExactSizeIterator) -> Vec<usize> {
    let dims: Vec<usize> = dims.collect();
    let mut out = vec![0; dims.len()];
    for d in (0..dims.len()).rev() {
        out[d] = index % dims[d];
        index /= dims[d];
    }
    out
}

pub(crate) fn dense_matvec(m: &Array2<f64>, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.rows()) {
        *o = match row.as_slice() {
            Some(r) => dot(r, x),
            None => row.iter().zip(x).map(|(a, b)| a * b).sum(),
        };
    }
}

pub(crate) fn dense_matvec_transpose(m: &Array2<f64>, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (&xi, row) in x.iter().zip(m.rows()) {
        if xi == 0.0 {
            continue;
        }
        match row.as_slice() {
            Some(r) => out.iter_mut().zip(r).for_each(|(o, k)| *o += xi * k),
            None => out.iter_mut().zip(row.iter()).for_each(|(o, k)| *o += xi * k),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Successive 1-D contractions of a row-major tensor, one axis at a time.
fn separable_contract(axes: &[Array2<f64>], x: &[f64], transpose: bool) -> Vec<f64> {
    let (in_dims, out_dims): (Vec<usize>, Vec<usize>) = if transpose {
        axes.iter().map(|a| (a.nrows(), a.ncols())).unzip()
    } else {
        axes.iter().map(|a| (a.ncols(), a.nrows())).unzip()
    };
    let mut shape = in_dims.clone();
    let mut current = x.to_vec();
    for (axis, mat) in axes.iter().enumerate() {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n_in = in_dims[axis];
        let n_out = out_dims[axis];
        let mut next = vec![0.0; outer * n_out * inner];
        for o in 0..outer {
            let src = &current[o * n_in * inner..(o + 1) * n_in * inner];
            let dst = &mut next[o * n_out * inner..(o + 1) * n_out * inner];
            for i in 0..n_out {
                let d = &mut dst[i * inner..(i + 1) * inner];
                for j in 0..n_in {
                    let k = if transpose { mat[[j, i]] } else { mat[[i, j]] };
                    if k == 0.0 {
                        continue;
                    }
                    let s = &src[j * inner..(j + 1) * inner];
                    d.iter_mut().zip(s).for_each(|(a, b)| *a += k * b);
                }
            }
        }
        shape[axis] = n_out;
        current = next;
    }
    current
}
