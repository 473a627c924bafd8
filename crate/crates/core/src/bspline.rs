//! Clamped B-spline bases on `[0, 1]` with equally spaced interior knots,
//! design matrices, least-squares fitting, and knot-count selection.
//!
//! The basis of order `p` with `J_s` interior knots has dimension `J_s + p`.
//! Interior knots sit at `l / (J_s + 1)` and the boundary knots `0` and `1`
//! are repeated `p` times, so the basis is a partition of unity on the whole
//! interval and each basis function is supported on at most `p` knot spans.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{CovError, Result};

/// Gram condition number beyond which the normal equations are abandoned
/// for a QR factorization of the design itself.
const GRAM_CONDITION_LIMIT: f64 = 1e10;

/// Clamped uniform B-spline basis on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    order: usize,
    interior_knots: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Build the basis of order `p >= 1` with `interior_knots` equally
    /// spaced interior knots.
    pub fn new(order: usize, interior_knots: usize) -> Result<Self> {
        if order < 1 {
            return Err(CovError::InvalidOrder(order as i64));
        }
        let mut knots = Vec::with_capacity(interior_knots + 2 * order);
        knots.extend(std::iter::repeat(0.0).take(order));
        let spacing = 1.0 / (interior_knots as f64 + 1.0);
        for l in 1..=interior_knots {
            knots.push(l as f64 * spacing);
        }
        knots.extend(std::iter::repeat(1.0).take(order));
        Ok(Self {
            order,
            interior_knots,
            knots,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn interior_knots(&self) -> usize {
        self.interior_knots
    }

    /// Number of basis functions, `J_s + p`.
    pub fn dim(&self) -> usize {
        self.interior_knots + self.order
    }

    /// Full knot vector of length `J_s + 2p`.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Index of the knot span containing `x`: subinterval `I_i` with
    /// `i = floor(x (J_s + 1))`, except that `x = 1` falls into the last
    /// subinterval so the clamped end is evaluated by its left limit.
    fn span(&self, x: f64) -> usize {
        let i = (x * (self.interior_knots as f64 + 1.0)).floor() as usize;
        i.min(self.interior_knots)
    }

    /// Evaluate the `p` basis functions that are nonzero at `x`, writing
    /// them into `vals` and returning the index of the first one.
    ///
    /// Uses the de Boor-Cox triangular recursion over the single active
    /// knot span, so the cost is `O(p^2)` regardless of `J_s`.
    pub fn eval_nonzero(&self, x: f64, vals: &mut Vec<f64>) -> Result<usize> {
        if !(0.0..=1.0).contains(&x) {
            return Err(CovError::OutOfDomain(x));
        }
        let p = self.order;
        // 0-based index into `knots` of the left end of the active span.
        let mu = p - 1 + self.span(x);
        vals.clear();
        vals.resize(p, 0.0);
        vals[0] = 1.0;
        let mut left = vec![0.0; p];
        let mut right = vec![0.0; p];
        for j in 1..p {
            left[j] = x - self.knots[mu + 1 - j];
            right[j] = self.knots[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let term = vals[r] / denom;
                vals[r] = saved + right[r + 1] * term;
                saved = left[j - r] * term;
            }
            vals[j] = saved;
        }
        Ok(mu + 1 - p)
    }

    /// Evaluate all `J_s + p` basis functions at `x`.
    pub fn eval(&self, x: f64) -> Result<DVector<f64>> {
        let mut local = Vec::with_capacity(self.order);
        let first = self.eval_nonzero(x, &mut local)?;
        let mut out = DVector::zeros(self.dim());
        for (offset, v) in local.iter().enumerate() {
            out[first + offset] = *v;
        }
        Ok(out)
    }

    /// Evaluate the spline with coefficient vector `coeffs` at `x`.
    pub fn eval_spline(&self, coeffs: &DVector<f64>, x: f64) -> Result<f64> {
        debug_assert_eq!(coeffs.len(), self.dim());
        let mut local = Vec::with_capacity(self.order);
        let first = self.eval_nonzero(x, &mut local)?;
        Ok(local
            .iter()
            .enumerate()
            .map(|(offset, v)| v * coeffs[first + offset])
            .sum())
    }
}

/// B-spline design matrix on the observation grid `x_j = j/N`, `j = 1..N`.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    basis: SplineBasis,
    matrix: DMatrix<f64>,
    grid: Vec<f64>,
}

impl DesignMatrix {
    /// Row `j` holds the basis evaluated at `j/N`. Requires `N >= J_s + p`
    /// so the least-squares fit is overdetermined.
    pub fn on_grid(basis: &SplineBasis, n_points: usize) -> Result<Self> {
        let grid: Vec<f64> = (1..=n_points).map(|j| j as f64 / n_points as f64).collect();
        Self::at(basis, &grid)
    }

    /// Design matrix on an arbitrary grid in `[0, 1]`.
    pub fn at(basis: &SplineBasis, grid: &[f64]) -> Result<Self> {
        if grid.len() < basis.dim() {
            return Err(CovError::UnderDetermined {
                rows: grid.len(),
                cols: basis.dim(),
            });
        }
        let mut matrix = DMatrix::zeros(grid.len(), basis.dim());
        let mut local = Vec::with_capacity(basis.order());
        for (row, &x) in grid.iter().enumerate() {
            let first = basis.eval_nonzero(x, &mut local)?;
            for (offset, v) in local.iter().enumerate() {
                matrix[(row, first + offset)] = *v;
            }
        }
        Ok(Self {
            basis: basis.clone(),
            matrix,
            grid: grid.to_vec(),
        })
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Gram matrix `B^T B`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.matrix.tr_mul(&self.matrix)
    }
}

enum Factorization {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Qr {
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    },
}

/// Reusable least-squares solver for one design matrix.
///
/// Factors the normal system `B^T B` once by Cholesky; when the Gram matrix
/// is ill conditioned (condition number above 1e10) it falls back to a QR
/// factorization of the design. No explicit inverse is ever formed.
pub struct LsqSolver<'a> {
    design: &'a DesignMatrix,
    factorization: Factorization,
}

impl<'a> LsqSolver<'a> {
    pub fn new(design: &'a DesignMatrix) -> Result<Self> {
        let gram = design.gram();
        let eigen = SymmetricEigen::new(gram.clone());
        let max = eigen.eigenvalues.max();
        let min = eigen.eigenvalues.min();
        if max <= 0.0 || min <= f64::EPSILON * max * design.rows() as f64 {
            return Err(CovError::SingularDesign);
        }
        if max / min <= GRAM_CONDITION_LIMIT {
            if let Some(chol) = nalgebra::Cholesky::new(gram) {
                return Ok(Self {
                    design,
                    factorization: Factorization::Cholesky(chol),
                });
            }
        }
        let qr = design.matrix().clone().qr();
        let q = qr.q();
        let r = qr.r();
        let rmax = (0..r.nrows()).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        if (0..r.nrows()).any(|i| r[(i, i)].abs() <= f64::EPSILON * rmax * design.rows() as f64) {
            return Err(CovError::SingularDesign);
        }
        Ok(Self {
            design,
            factorization: Factorization::Qr { q, r },
        })
    }

    /// Coefficients minimizing `||y - B c||_2`.
    pub fn solve(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.design.rows() {
            return Err(CovError::InvalidDataset(format!(
                "response length {} does not match {} design rows",
                y.len(),
                self.design.rows()
            )));
        }
        match &self.factorization {
            Factorization::Cholesky(chol) => Ok(chol.solve(&self.design.matrix().tr_mul(y))),
            Factorization::Qr { q, r } => {
                let qty = q.tr_mul(y);
                r.solve_upper_triangular(&qty)
                    .ok_or(CovError::SingularDesign)
            }
        }
    }
}

/// One-shot least-squares fit of `y` observed on the design grid.
pub fn lsq_fit(design: &DesignMatrix, y: &DVector<f64>) -> Result<DVector<f64>> {
    LsqSolver::new(design)?.solve(y)
}

/// Generalized cross-validation score of the shared basis over all `n`
/// trajectories (rows of `y`):
/// `GCV = [sum_i RSS_i / (nN)] / (1 - (J_s+p)/N)^2`.
pub fn gcv_score(design: &DesignMatrix, y: &DMatrix<f64>) -> Result<f64> {
    let (dim, n_points) = (design.cols(), design.rows());
    if dim >= n_points {
        return Err(CovError::DegenerateGcv { dim, n: n_points });
    }
    let rss = total_rss(design, y)?;
    let denom = 1.0 - dim as f64 / n_points as f64;
    let n_total = (y.nrows() * n_points) as f64;
    Ok(rss / n_total / (denom * denom))
}

/// Least-squares BIC over all trajectories:
/// `nN log(RSS/(nN)) + (J_s+p) log(nN)`.
pub fn bic_score(design: &DesignMatrix, y: &DMatrix<f64>) -> Result<f64> {
    let rss = total_rss(design, y)?;
    let n_total = (y.nrows() * design.rows()) as f64;
    Ok(n_total * (rss / n_total).ln() + design.cols() as f64 * n_total.ln())
}

fn total_rss(design: &DesignMatrix, y: &DMatrix<f64>) -> Result<f64> {
    if y.ncols() != design.rows() {
        return Err(CovError::InvalidDataset(format!(
            "data has {} columns but the design grid has {} points",
            y.ncols(),
            design.rows()
        )));
    }
    let solver = LsqSolver::new(design)?;
    let mut rss = 0.0;
    for i in 0..y.nrows() {
        let yi = DVector::from_iterator(y.ncols(), y.row(i).iter().copied());
        let coeffs = solver.solve(&yi)?;
        let fitted = design.matrix() * &coeffs;
        rss += (&yi - fitted).norm_squared();
    }
    Ok(rss)
}

/// Knot-count selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnotMethod {
    /// `J_s = floor(c N^gamma (log log N)^gamma)`.
    Formula,
    /// Minimize GCV over `J_s in {1, ..., min(10, floor(n/4))}`.
    Gcv,
    /// Minimize BIC over the same candidate pool.
    Bic,
}

/// Select the number of interior knots for trajectories `y` (n rows, N
/// columns) smoothed with order-`p` splines.
pub fn select_knots(
    y: &DMatrix<f64>,
    p: usize,
    method: KnotMethod,
    c: f64,
    gamma: f64,
) -> Result<usize> {
    let (n, n_points) = (y.nrows(), y.ncols());
    match method {
        KnotMethod::Formula => {
            if c <= 0.0 {
                return Err(CovError::InvalidKnotParameter(format!(
                    "formula constant c must be positive, got {c}"
                )));
            }
            if !(0.0..1.0).contains(&gamma) || gamma == 0.0 {
                return Err(CovError::InvalidKnotParameter(format!(
                    "formula exponent gamma must lie in (0, 1), got {gamma}"
                )));
            }
            let nf = n_points as f64;
            if nf.ln() <= 1.0 {
                return Err(CovError::GridTooSmallForFormula(n_points));
            }
            Ok((c * nf.powf(gamma) * nf.ln().ln().powf(gamma)).floor() as usize)
        }
        KnotMethod::Gcv | KnotMethod::Bic => {
            let pool_max = 10.min(n / 4);
            if pool_max < 1 {
                return Err(CovError::EmptyCandidatePool(n));
            }
            let mut best: Option<(usize, f64)> = None;
            for j_s in 1..=pool_max {
                let basis = SplineBasis::new(p, j_s)?;
                if basis.dim() >= n_points {
                    continue;
                }
                let design = DesignMatrix::on_grid(&basis, n_points)?;
                let score = match method {
                    KnotMethod::Gcv => gcv_score(&design, y)?,
                    KnotMethod::Bic => bic_score(&design, y)?,
                    KnotMethod::Formula => unreachable!(),
                };
                if best.map_or(true, |(_, s)| score < s) {
                    best = Some((j_s, score));
                }
            }
            best.map(|(j_s, _)| j_s)
                .ok_or(CovError::EmptyCandidatePool(n))
        }
    }
}

/// Lag-coupling Gram matrices of the basis:
/// `W(h)_{s s'} = (1-h)^{-1} \int_0^{1-h} B_s(x) B_{s'}(x+h) dx`,
/// one matrix per lag, integrated by the composite trapezoid rule on
/// `quad_points` equally spaced abscissae.
///
/// Every lagged integral in the pipeline (covariance curve, eigenfunction
/// couplings, multiplier process) contracts coefficient vectors against
/// these matrices, so the quadrature rule is shared by construction.
pub fn lag_gram(
    basis: &SplineBasis,
    h_grid: &[f64],
    quad_points: usize,
) -> Result<Vec<DMatrix<f64>>> {
    if h_grid.is_empty() {
        return Err(CovError::EmptyHGrid);
    }
    if quad_points < 2 {
        return Err(CovError::TooFewQuadPoints(quad_points));
    }
    let dim = basis.dim();
    let p = basis.order();
    let mut out = Vec::with_capacity(h_grid.len());
    let mut left_vals = Vec::with_capacity(p);
    let mut right_vals = Vec::with_capacity(p);
    for &h in h_grid {
        if !(0.0..1.0).contains(&h) {
            return Err(CovError::InvalidLag(h));
        }
        let upper = 1.0 - h;
        let step = upper / (quad_points - 1) as f64;
        let mut w = DMatrix::zeros(dim, dim);
        for t in 0..quad_points {
            let x = (t as f64 * step).min(upper);
            let weight = if t == 0 || t == quad_points - 1 {
                0.5 * step
            } else {
                step
            };
            let first_l = basis.eval_nonzero(x, &mut left_vals)?;
            let first_r = basis.eval_nonzero((x + h).min(1.0), &mut right_vals)?;
            for (a, va) in left_vals.iter().enumerate() {
                let wa = weight * va;
                for (b, vb) in right_vals.iter().enumerate() {
                    w[(first_l + a, first_r + b)] += wa * vb;
                }
            }
        }
        w /= upper;
        out.push(w);
    }
    Ok(out)
}
