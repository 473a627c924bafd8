//! Functional principal component analysis of the spline covariance
//! surface, FPC scores, and the plug-in variance function of the
//! covariance estimator.
//!
//! The eigenproblem `\int G(x, x') psi(x') dx' = lambda psi(x)` restricted
//! to the spline space reduces, through the Cholesky factor of `B^T B`, to a
//! small symmetric eigenproblem. With `B^T B = L L^T`, the eigenvalues of
//! `N^{-1} L^T beta L` approximate the operator eigenvalues and the
//! back-transformed vectors `gamma_k = sqrt(N) (L^T)^{-1} v_k` are spline
//! coefficients of eigenfunctions with unit empirical L2 norm.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::bspline::{lag_gram, DesignMatrix, SplineBasis};
use crate::covest::{CovCurve, CovSurface, CurveKind, FunctionalDataset, TrajectoryFits};
use crate::error::{CovError, Result};

/// Floor applied to the plug-in variance before inverse square roots;
/// lags floored to this value are treated as degenerate downstream.
pub const XI_FLOOR: f64 = 1e-12;

/// Eigenvalues below `RELATIVE_CLIP * lambda_1` are reported as zero.
const RELATIVE_CLIP: f64 = 1e-12;

/// Spectral decomposition of the covariance surface plus score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FpcaResult {
    /// Basis in which the eigenfunction coefficients live.
    pub basis: SplineBasis,
    /// Eigenvalues, sorted descending; round-off noise clipped to zero.
    pub lambda: DVector<f64>,
    /// Column `k`: coefficients of the unit-norm eigenfunction `psi_k`.
    pub psi_coeffs: DMatrix<f64>,
    /// Column `k`: coefficients of `phi_k = sqrt(lambda_k) psi_k`.
    pub phi_coeffs: DMatrix<f64>,
    /// Truncation level; the first `kappa` components are retained.
    pub kappa: usize,
    /// FPC scores, `n x kappa`.
    pub scores: DMatrix<f64>,
    /// Empirical fourth moments of the scores, length `kappa`.
    pub fourth_moments: DVector<f64>,
}

impl FpcaResult {
    /// Values of `phi_k` on a grid in `[0, 1]`.
    pub fn phi_on_grid(&self, k: usize, grid: &[f64]) -> Result<Vec<f64>> {
        if k >= self.phi_coeffs.ncols() {
            return Err(CovError::IndexOutOfRange {
                index: k,
                n: self.phi_coeffs.ncols(),
            });
        }
        let coeffs = self.phi_coeffs.column(k).into_owned();
        grid.iter()
            .map(|&x| self.basis.eval_spline(&coeffs, x))
            .collect()
    }
}

/// Solve the reduced symmetric eigenproblem for the covariance surface.
///
/// Fills the spectral fields of [`FpcaResult`]; truncation, scores, and
/// fourth moments are added by [`select_kappa`] / [`fpc_scores`] or the
/// [`fpca_full`] convenience pipeline.
pub fn eigen_decompose(surface: &CovSurface, design: &DesignMatrix) -> Result<FpcaResult> {
    let n_points = design.rows() as f64;
    let gram = design.gram();
    let chol = nalgebra::Cholesky::new(gram).ok_or(CovError::CholeskyFailure)?;
    let l = chol.l();
    // Reduced matrix N^{-1} L^T beta L; symmetrize against round-off.
    let mut reduced = l.tr_mul(surface.beta()) * &l / n_points;
    let reduced_t = reduced.transpose();
    reduced = (reduced + reduced_t) * 0.5;
    let eigen = SymmetricEigen::new(reduced);

    let dim = eigen.eigenvalues.len();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .unwrap()
    });

    let lambda_max = eigen.eigenvalues[order[0]].max(0.0);
    let clip = RELATIVE_CLIP * lambda_max;
    let mut lambda = DVector::zeros(dim);
    let mut psi_coeffs = DMatrix::zeros(dim, dim);
    let mut phi_coeffs = DMatrix::zeros(dim, dim);
    for (k, &idx) in order.iter().enumerate() {
        let raw = eigen.eigenvalues[idx];
        lambda[k] = if raw.abs() <= clip { 0.0 } else { raw };
        // gamma_k = sqrt(N) (L^T)^{-1} v_k, giving ||psi_k||_{2,N} = 1.
        let v = eigen.eigenvectors.column(idx).into_owned();
        let mut gamma = l
            .tr_solve_lower_triangular(&v)
            .ok_or(CovError::CholeskyFailure)?
            * n_points.sqrt();
        // Sign convention: first coefficient of noticeable size positive.
        let scale = gamma.amax();
        if let Some(first) = gamma.iter().find(|c| c.abs() > 1e-12 * scale) {
            if *first < 0.0 {
                gamma.neg_mut();
            }
        }
        psi_coeffs.column_mut(k).copy_from(&gamma);
        if lambda[k] > 0.0 {
            phi_coeffs.column_mut(k).copy_from(&(gamma * lambda[k].sqrt()));
        }
    }

    Ok(FpcaResult {
        basis: design.basis().clone(),
        lambda,
        psi_coeffs,
        phi_coeffs,
        kappa: 0,
        scores: DMatrix::zeros(0, 0),
        fourth_moments: DVector::zeros(0),
    })
}

/// Smallest `kappa` whose leading eigenvalues explain `fve` of the total
/// variation; negative eigenvalues are clipped to zero first.
pub fn select_kappa(lambda: &DVector<f64>, fve: f64) -> Result<usize> {
    let clipped: Vec<f64> = lambda.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return Err(CovError::NoPositiveEigenvalues);
    }
    let target = fve * total;
    let mut cum = 0.0;
    for (k, v) in clipped.iter().enumerate() {
        cum += v;
        if cum >= target {
            return Ok(k + 1);
        }
    }
    Ok(clipped.iter().filter(|&&v| v > 0.0).count())
}

/// FPC scores by numerical integration:
/// `xi_{ik} = N^{-1} sum_j lambda_k^{-1} (Y_{ij} - m(j/N)) phi_k(j/N)`.
pub fn fpc_scores(
    data: &FunctionalDataset,
    fits: &TrajectoryFits,
    fpca: &FpcaResult,
) -> Result<DMatrix<f64>> {
    let kappa = fpca.kappa;
    for k in 0..kappa {
        if fpca.lambda[k] <= 0.0 {
            return Err(CovError::ZeroEigenvalue(k));
        }
    }
    let n_points = data.n_points();
    let design = DesignMatrix::on_grid(fits.basis(), n_points)?;
    let mean_on_grid = design.matrix() * fits.mean_coeffs();
    let phi_on_grid = design.matrix() * fpca.phi_coeffs.columns(0, kappa);
    let mut centered = data.observations().clone();
    for i in 0..centered.nrows() {
        for j in 0..n_points {
            centered[(i, j)] -= mean_on_grid[j];
        }
    }
    let mut scores = centered * phi_on_grid;
    for k in 0..kappa {
        let scale = 1.0 / (n_points as f64 * fpca.lambda[k]);
        scores.column_mut(k).scale_mut(scale);
    }
    Ok(scores)
}

/// Full FPCA pipeline: decompose, truncate at `fve`, score, and attach
/// fourth moments.
pub fn fpca_full(
    data: &FunctionalDataset,
    fits: &TrajectoryFits,
    surface: &CovSurface,
    design: &DesignMatrix,
    fve: f64,
) -> Result<FpcaResult> {
    let mut fpca = eigen_decompose(surface, design)?;
    fpca.kappa = select_kappa(&fpca.lambda, fve)?;
    fpca.scores = fpc_scores(data, fits, &fpca)?;
    let n = fpca.scores.nrows() as f64;
    fpca.fourth_moments = DVector::from_fn(fpca.kappa, |k, _| {
        fpca.scores.column(k).iter().map(|s| s.powi(4)).sum::<f64>() / n
    });
    Ok(fpca)
}

/// Lag-coupling integrals of the retained eigenfunctions:
/// `A_{kk'}(h) = (1-h)^{-1} \int_0^{1-h} phi_k(x) phi_{k'}(x+h) dx`,
/// one `kappa x kappa` matrix per lag.
pub fn lag_couplings(
    fpca: &FpcaResult,
    h_grid: &[f64],
    quad_points: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let grams = lag_gram(&fpca.basis, h_grid, quad_points)?;
    let phi = fpca.phi_coeffs.columns(0, fpca.kappa);
    Ok(grams.iter().map(|w| phi.tr_mul(&(w * phi))).collect())
}

/// Plug-in variance function of the covariance estimator:
/// `Xi(h) = sum_{k,k'} A_{kk'}(h)^2 + C(h)^2
///          + sum_k (m4_k - 3) A_{kk}(h)^2`,
/// floored at [`XI_FLOOR`] so downstream inverse square roots stay finite.
pub fn variance_function(
    fpca: &FpcaResult,
    c_hat: &CovCurve,
    h_grid: &[f64],
    quad_points: usize,
) -> Result<CovCurve> {
    if h_grid.is_empty() {
        return Err(CovError::EmptyHGrid);
    }
    if c_hat.h_grid.len() != h_grid.len()
        || c_hat
            .h_grid
            .iter()
            .zip(h_grid)
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(CovError::GridMismatch);
    }
    let couplings = lag_couplings(fpca, h_grid, quad_points)?;
    let kappa = fpca.kappa;
    let values = couplings
        .iter()
        .zip(&c_hat.values)
        .map(|(a, &c)| {
            let mut xi = c * c;
            for k in 0..kappa {
                for k2 in 0..kappa {
                    xi += a[(k, k2)] * a[(k, k2)];
                }
                xi += (fpca.fourth_moments[k] - 3.0) * a[(k, k)] * a[(k, k)];
            }
            xi.max(XI_FLOOR)
        })
        .collect();
    CovCurve::new(h_grid.to_vec(), values, CurveKind::XiHat)
}
