//! Two-stage covariance estimation: per-trajectory spline fits, the mean
//! function, residual processes, the stationary covariance curve, and the
//! covariance surface.
//!
//! Stage one smooths each trajectory by unpenalized least squares in a
//! shared B-spline basis and subtracts the spline mean, giving residual
//! processes `Z_i(x)`. Stage two integrates lagged residual products:
//! `C(h) = (1-h)^{-1} \int_0^{1-h} n^{-1} \sum_i Z_i(x) Z_i(x+h) dx`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::{lag_gram, DesignMatrix, LsqSolver, SplineBasis};
use crate::error::{CovError, Result};

/// Dense functional dataset: `n` subjects observed on a shared regular grid
/// of `N` points. Analysis always happens on `[0, 1]`; `domain` records the
/// original-unit interval `(a, b)` that maps affinely onto it, with grid
/// point `j` sitting at `a + (b - a) j / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    y: DMatrix<f64>,
    domain: Option<(f64, f64)>,
}

impl FunctionalDataset {
    pub fn new(y: DMatrix<f64>, domain: Option<(f64, f64)>) -> Result<Self> {
        if y.nrows() < 2 || y.ncols() < 2 {
            return Err(CovError::InvalidDataset(format!(
                "need at least 2 subjects and 2 grid points, got {}x{}",
                y.nrows(),
                y.ncols()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(CovError::InvalidDataset(
                "observations contain non-finite values".into(),
            ));
        }
        if let Some((a, b)) = domain {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(CovError::InvalidDataset(format!(
                    "invalid original-unit domain ({a}, {b})"
                )));
            }
        }
        Ok(Self { y, domain })
    }

    /// Number of subjects.
    pub fn n_subjects(&self) -> usize {
        self.y.nrows()
    }

    /// Grid size `N`.
    pub fn n_points(&self) -> usize {
        self.y.ncols()
    }

    pub fn observations(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn domain(&self) -> Option<(f64, f64)> {
        self.domain
    }

    /// Length of the original-unit interval represented by `[0, 1]`;
    /// unit lags multiply by this to become original-unit lags.
    pub fn lag_scale(&self) -> f64 {
        self.domain.map_or(1.0, |(a, b)| b - a)
    }
}

/// Spline coefficients of every fitted trajectory, their mean, and the
/// residual processes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFits {
    basis: SplineBasis,
    /// Row `i`: coefficients of the fitted trajectory `eta_i`.
    coeffs: DMatrix<f64>,
    /// Coefficients of the mean curve (column mean of `coeffs`).
    mean_coeffs: DVector<f64>,
    /// Row `i`: coefficients `a_i` of the residual `Z_i = eta_i - mean`.
    resid_coeffs: DMatrix<f64>,
}

impl TrajectoryFits {
    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn n_subjects(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn mean_coeffs(&self) -> &DVector<f64> {
        &self.mean_coeffs
    }

    pub fn resid_coeffs(&self) -> &DMatrix<f64> {
        &self.resid_coeffs
    }
}

/// Which stored curve to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FittedCurve {
    Trajectory(usize),
    Mean,
    Residual(usize),
}

/// Role of a covariance curve, kept for labeling serialized output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    CHat,
    CTilde,
    XiHat,
    Model,
    BandEdge,
}

/// A function of the lag `h`, sampled on an increasing grid in `[0, h0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovCurve {
    pub h_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: CurveKind,
}

impl CovCurve {
    pub fn new(h_grid: Vec<f64>, values: Vec<f64>, kind: CurveKind) -> Result<Self> {
        if h_grid.is_empty() {
            return Err(CovError::EmptyHGrid);
        }
        if h_grid.len() != values.len() {
            return Err(CovError::GridMismatch);
        }
        if h_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CovError::InvalidDataset(
                "h grid must be strictly increasing".into(),
            ));
        }
        if h_grid[0] < 0.0 || *h_grid.last().unwrap() >= 1.0 {
            return Err(CovError::InvalidLag(*h_grid.last().unwrap()));
        }
        Ok(Self {
            h_grid,
            values,
            kind,
        })
    }

    /// Largest lag carried by the curve.
    pub fn h0(&self) -> f64 {
        *self.h_grid.last().unwrap()
    }

    /// Value at lag `h`, linearly interpolated between grid points.
    pub fn interpolate(&self, h: f64) -> Result<f64> {
        if h < self.h_grid[0] - 1e-12 || h > self.h0() + 1e-12 {
            return Err(CovError::LagBeyondRange {
                lag: h,
                h0: self.h0(),
            });
        }
        let h = h.clamp(self.h_grid[0], self.h0());
        match self
            .h_grid
            .binary_search_by(|probe| probe.partial_cmp(&h).unwrap())
        {
            Ok(idx) => Ok(self.values[idx]),
            Err(idx) => {
                let (h0, h1) = (self.h_grid[idx - 1], self.h_grid[idx]);
                let t = (h - h0) / (h1 - h0);
                Ok(self.values[idx - 1] * (1.0 - t) + self.values[idx] * t)
            }
        }
    }
}

/// The default lag grid `{0, 1/N, ..., floor(h0 N)/N}`, aligned with the
/// observation grid so band coverage checks are exact at data resolution.
pub fn default_h_grid(n_points: usize, h0: f64) -> Vec<f64> {
    let max_lag = (h0 * n_points as f64).floor() as usize;
    (0..=max_lag)
        .map(|j| j as f64 / n_points as f64)
        .collect()
}

/// Symmetric spline covariance surface `G(x, x') = B(x)^T beta B(x')`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovSurface {
    basis: SplineBasis,
    beta: DMatrix<f64>,
}

impl CovSurface {
    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    /// Evaluate the surface at a pair of points in `[0, 1]`.
    pub fn eval(&self, x: f64, x_prime: f64) -> Result<f64> {
        let bx = self.basis.eval(x)?;
        let bx2 = self.basis.eval(x_prime)?;
        Ok((bx.transpose() * &self.beta * bx2)[(0, 0)])
    }
}

/// Fit every trajectory by least squares in `basis`, returning coefficients,
/// the mean curve, and the residual coefficients.
pub fn fit_trajectories(data: &FunctionalDataset, basis: &SplineBasis) -> Result<TrajectoryFits> {
    let design = DesignMatrix::on_grid(basis, data.n_points())?;
    fit_trajectories_with_design(data, &design)
}

/// As [`fit_trajectories`], reusing an already-built design matrix.
pub fn fit_trajectories_with_design(
    data: &FunctionalDataset,
    design: &DesignMatrix,
) -> Result<TrajectoryFits> {
    if design.rows() != data.n_points() {
        return Err(CovError::InvalidDataset(format!(
            "design grid has {} points but data has {}",
            design.rows(),
            data.n_points()
        )));
    }
    let solver = LsqSolver::new(design)?;
    let n = data.n_subjects();
    let dim = design.cols();
    let mut coeffs = DMatrix::zeros(n, dim);
    for i in 0..n {
        let yi = DVector::from_iterator(data.n_points(), data.observations().row(i).iter().copied());
        let ci = solver.solve(&yi)?;
        coeffs.row_mut(i).copy_from(&ci.transpose());
    }
    let mean_coeffs = DVector::from_fn(dim, |l, _| coeffs.column(l).sum() / n as f64);
    let mut resid_coeffs = coeffs.clone();
    for i in 0..n {
        for l in 0..dim {
            resid_coeffs[(i, l)] -= mean_coeffs[l];
        }
    }
    Ok(TrajectoryFits {
        basis: design.basis().clone(),
        coeffs,
        mean_coeffs,
        resid_coeffs,
    })
}

/// Evaluate a stored curve (trajectory, mean, or residual) on `x_grid`.
pub fn eval_fit(fits: &TrajectoryFits, which: FittedCurve, x_grid: &[f64]) -> Result<Vec<f64>> {
    let n = fits.n_subjects();
    let coeffs: DVector<f64> = match which {
        FittedCurve::Mean => fits.mean_coeffs.clone(),
        FittedCurve::Trajectory(i) => {
            if i >= n {
                return Err(CovError::IndexOutOfRange { index: i, n });
            }
            fits.coeffs.row(i).transpose()
        }
        FittedCurve::Residual(i) => {
            if i >= n {
                return Err(CovError::IndexOutOfRange { index: i, n });
            }
            fits.resid_coeffs.row(i).transpose()
        }
    };
    x_grid
        .iter()
        .map(|&x| fits.basis.eval_spline(&coeffs, x))
        .collect()
}

/// Stationary covariance estimate on `h_grid`:
/// `C(h) = (1-h)^{-1} \int_0^{1-h} n^{-1} \sum_i Z_i(x) Z_i(x+h) dx`,
/// trapezoid rule on `quad_points` abscissae.
///
/// Since the residuals are splines, the integrand collapses to
/// `B(x)^T beta B(x+h)` with `beta = n^{-1} \sum_i a_i a_i^T`, so the curve
/// is the contraction of `beta` against the lag-coupling Gram matrices.
pub fn covariance_curve(
    fits: &TrajectoryFits,
    h_grid: &[f64],
    quad_points: usize,
) -> Result<CovCurve> {
    let surface = covariance_surface(fits);
    let grams = lag_gram(&fits.basis, h_grid, quad_points)?;
    let values = grams
        .iter()
        .map(|w| (surface.beta() * w).trace())
        .collect();
    CovCurve::new(h_grid.to_vec(), values, CurveKind::CHat)
}

/// Infeasible oracle covariance computed from true latent processes
/// sampled on the grid `j/N`, extended by piecewise-linear interpolation
/// (constant below `1/N`) and integrated by the same trapezoid rule.
pub fn oracle_covariance(z: &DMatrix<f64>, h_grid: &[f64], quad_points: usize) -> Result<CovCurve> {
    if z.nrows() == 0 || z.ncols() < 2 {
        return Err(CovError::InvalidDataset(
            "oracle needs at least one subject and two grid points".into(),
        ));
    }
    if quad_points < 2 {
        return Err(CovError::TooFewQuadPoints(quad_points));
    }
    if h_grid.is_empty() {
        return Err(CovError::EmptyHGrid);
    }
    let n = z.nrows();
    let n_points = z.ncols();
    // Piecewise-linear interpolation of row i at x in [0, 1]; grid point j
    // (0-based) sits at (j+1)/N, values clamped below the first point.
    let interp = |i: usize, x: f64| -> f64 {
        let pos = x * n_points as f64 - 1.0;
        if pos <= 0.0 {
            return z[(i, 0)];
        }
        let j = (pos.floor() as usize).min(n_points - 2);
        let t = pos - j as f64;
        z[(i, j)] * (1.0 - t) + z[(i, j + 1)] * t
    };
    let mut values = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        if !(0.0..1.0).contains(&h) {
            return Err(CovError::InvalidLag(h));
        }
        let upper = 1.0 - h;
        let step = upper / (quad_points - 1) as f64;
        let mut acc = 0.0;
        for t in 0..quad_points {
            let x = (t as f64 * step).min(upper);
            let weight = if t == 0 || t == quad_points - 1 {
                0.5 * step
            } else {
                step
            };
            let mut cross = 0.0;
            for i in 0..n {
                cross += interp(i, x) * interp(i, (x + h).min(1.0));
            }
            acc += weight * cross / n as f64;
        }
        values.push(acc / upper);
    }
    CovCurve::new(h_grid.to_vec(), values, CurveKind::CTilde)
}

/// Covariance surface coefficients `beta = n^{-1} \sum_i a_i a_i^T` from the
/// residual coefficient rows; positive semidefinite by construction.
pub fn covariance_surface(fits: &TrajectoryFits) -> CovSurface {
    let n = fits.n_subjects();
    let beta = fits.resid_coeffs.tr_mul(&fits.resid_coeffs) / n as f64;
    CovSurface {
        basis: fits.basis.clone(),
        beta,
    }
}

/// Stationary covariance surface induced by a covariance curve:
/// entries `C(|x_j - x_j'|)` with linear interpolation between lag-grid
/// points. Pairs whose lag exceeds the curve's range are set to NaN and
/// reported in `out_of_range`.
#[derive(Debug, Clone)]
pub struct StationarySurface {
    pub values: DMatrix<f64>,
    pub out_of_range: Vec<(usize, usize)>,
}

pub fn stationary_surface(curve: &CovCurve, x_grid: &[f64]) -> StationarySurface {
    let m = x_grid.len();
    let mut values = DMatrix::zeros(m, m);
    let mut out_of_range = Vec::new();
    for j in 0..m {
        for j2 in j..m {
            let lag = (x_grid[j] - x_grid[j2]).abs();
            match curve.interpolate(lag) {
                Ok(v) => {
                    values[(j, j2)] = v;
                    values[(j2, j)] = v;
                }
                Err(_) => {
                    values[(j, j2)] = f64::NAN;
                    values[(j2, j)] = f64::NAN;
                    out_of_range.push((j, j2));
                }
            }
        }
    }
    StationarySurface {
        values,
        out_of_range,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::SplineBasis;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn cubic_poly_dataset(n: usize, n_points: usize) -> FunctionalDataset {
        let m = |x: f64| 0.3 + x - 2.0 * x * x + 0.5 * x * x * x;
        let y = DMatrix::from_fn(n, n_points, |_, j| m((j + 1) as f64 / n_points as f64));
        FunctionalDataset::new(y, None).unwrap()
    }

    #[test]
    fn dataset_rejects_bad_shapes() {
        assert!(FunctionalDataset::new(DMatrix::zeros(1, 10), None).is_err());
        assert!(FunctionalDataset::new(DMatrix::zeros(10, 1), None).is_err());
        let mut y = DMatrix::zeros(3, 5);
        y[(1, 2)] = f64::NAN;
        assert!(FunctionalDataset::new(y, None).is_err());
        assert!(FunctionalDataset::new(DMatrix::zeros(3, 5), Some((2.0, 1.0))).is_err());
    }

    #[test]
    fn noiseless_polynomial_reproduced_exactly() {
        let data = cubic_poly_dataset(5, 60);
        let basis = SplineBasis::new(4, 4).unwrap();
        let fits = fit_trajectories(&data, &basis).unwrap();
        let grid: Vec<f64> = (0..=50).map(|k| k as f64 / 50.0).collect();
        let mean = eval_fit(&fits, FittedCurve::Mean, &grid).unwrap();
        let m = |x: f64| 0.3 + x - 2.0 * x * x + 0.5 * x * x * x;
        for (k, &x) in grid.iter().enumerate() {
            assert_abs_diff_eq!(mean[k], m(x), epsilon = 1e-8);
        }
        assert!(fits.resid_coeffs().amax() < 1e-8);
    }

    #[test]
    fn identical_trajectories_share_coefficients() {
        let y = DMatrix::from_fn(2, 30, |_, j| ((j + 1) as f64 / 30.0 * PI).sin());
        let data = FunctionalDataset::new(y, None).unwrap();
        let basis = SplineBasis::new(4, 3).unwrap();
        let fits = fit_trajectories(&data, &basis).unwrap();
        for l in 0..fits.basis().dim() {
            assert_abs_diff_eq!(fits.coeffs()[(0, l)], fits.coeffs()[(1, l)], epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_coeffs_are_column_means_and_residuals_center() {
        let y = DMatrix::from_fn(7, 40, |i, j| {
            let x = (j + 1) as f64 / 40.0;
            (2.0 * PI * x).sin() + 0.3 * i as f64 * x
        });
        let data = FunctionalDataset::new(y, None).unwrap();
        let basis = SplineBasis::new(4, 5).unwrap();
        let fits = fit_trajectories(&data, &basis).unwrap();
        for l in 0..fits.basis().dim() {
            let col_mean: f64 = fits.coeffs().column(l).sum() / 7.0;
            assert_abs_diff_eq!(fits.mean_coeffs()[l], col_mean, epsilon = 1e-12);
            let resid_sum: f64 = fits.resid_coeffs().column(l).sum();
            assert_abs_diff_eq!(resid_sum, 0.0, epsilon = 1e-10);
        }
        // Residual centering pointwise on a fine grid.
        for k in 0..=200 {
            let x = k as f64 / 200.0;
            let mut total = 0.0;
            for i in 0..7 {
                total += eval_fit(&fits, FittedCurve::Residual(i), &[x]).unwrap()[0];
            }
            assert_abs_diff_eq!(total, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn mean_fit_equals_hat_matrix_image_of_cross_sectional_mean() {
        let y = DMatrix::from_fn(4, 25, |i, j| ((i + 2) as f64 * (j + 1) as f64 * 0.07).cos());
        let data = FunctionalDataset::new(y.clone(), None).unwrap();
        let basis = SplineBasis::new(3, 4).unwrap();
        let design = DesignMatrix::on_grid(&basis, 25).unwrap();
        let fits = fit_trajectories_with_design(&data, &design).unwrap();
        let ybar = DVector::from_fn(25, |j, _| y.column(j).sum() / 4.0);
        let direct = crate::bspline::lsq_fit(&design, &ybar).unwrap();
        for l in 0..basis.dim() {
            assert_abs_diff_eq!(fits.mean_coeffs()[l], direct[l], epsilon = 1e-10);
        }
    }

    #[test]
    fn residual_is_trajectory_minus_mean_pointwise() {
        let y = DMatrix::from_fn(3, 30, |i, j| ((i * j) as f64 * 0.11).sin());
        let data = FunctionalDataset::new(y, None).unwrap();
        let basis = SplineBasis::new(4, 2).unwrap();
        let fits = fit_trajectories(&data, &basis).unwrap();
        for k in 0..=20 {
            let x = k as f64 / 20.0;
            let traj = eval_fit(&fits, FittedCurve::Trajectory(1), &[x]).unwrap()[0];
            let mean = eval_fit(&fits, FittedCurve::Mean, &[x]).unwrap()[0];
            let resid = eval_fit(&fits, FittedCurve::Residual(1), &[x]).unwrap()[0];
            assert_abs_diff_eq!(resid, traj - mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn eval_fit_index_errors() {
        let data = cubic_poly_dataset(3, 30);
        let basis = SplineBasis::new(4, 2).unwrap();
        let fits = fit_trajectories(&data, &basis).unwrap();
        assert!(matches!(
            eval_fit(&fits, FittedCurve::Trajectory(3), &[0.5]),
            Err(CovError::IndexOutOfRange { index: 3, n: 3 })
        ));
    }

    #[test]
    fn eval_fit_matches_de_boor_oracle() {
        // Direct spline evaluation oracle: full basis vector dotted with
        // coefficients, against the local evaluation path.
        let y = DMatrix::from_fn(3, 40, |i, j| ((i + 1) as f64 * (j as f64) * 0.05).sin());
        let data = FunctionalDataset::new(y, None).unwrap();
        let basis = SplineBasis::new(4, 6).unwrap();
        let fits = fit_trajectories(&data, &basis).unwrap();
        let mut state = 99u64;
        for _ in 0..100 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let x = (state >> 11) as f64 / (1u64 << 53) as f64;
            let fast = eval_fit(&fits, FittedCurve::Trajectory(2), &[x]).unwrap()[0];
            let full = basis.eval(x).unwrap();
            let slow: f64 = (0..basis.dim())
                .map(|l| full[l] * fits.coeffs()[(2, l)])
                .sum();
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_residuals_give_zero_curve_and_surface() {
        let data = cubic_poly_dataset(4, 50);
        let basis = SplineBasis::new(4, 3).unwrap();
        let fits = fit_trajectories(&data, &basis).unwrap();
        let h_grid = default_h_grid(50, 0.5);
        let curve = covariance_curve(&fits, &h_grid, 50).unwrap();
        assert!(curve.values.iter().all(|v| v.abs() < 1e-16));
        let surface = covariance_surface(&fits);
        assert!(surface.beta().amax() < 1e-16);
    }

    #[test]
    fn constant_residual_gives_constant_curve() {
        // Two subjects with constant trajectories c and -c: residuals are
        // +/- c, so C(h) = c^2 at every lag.
        let c = 0.7;
        let mut y = DMatrix::zeros(2, 40);
        y.row_mut(0).fill(c);
        y.row_mut(1).fill(-c);
        let data = FunctionalDataset::new(y, None).unwrap();
        let basis = SplineBasis::new(4, 3).unwrap();
        let fits = fit_trajectories(&data, &basis).unwrap();
        let h_grid = default_h_grid(40, 0.5);
        let curve = covariance_curve(&fits, &h_grid, 40).unwrap();
        for v in &curve.values {
            assert_abs_diff_eq!(*v, c * c, epsilon = 1e-10);
        }
    }

    #[test]
    fn cosine_residual_matches_symbolic_antiderivative() {
        // Z_i(x) = xi_i sqrt(2) cos(2 pi x); closed form
        // C(h) = (n^{-1} sum xi^2) [cos(2 pi h) - sin(2 pi h) / (2 pi (1-h))].
        let xis = [1.3, -0.4, 0.9, -1.7];
        let n_points = 200;
        let y = DMatrix::from_fn(xis.len(), n_points, |i, j| {
            let x = (j + 1) as f64 / n_points as f64;
            xis[i] * (2.0 * PI * x).cos() * std::f64::consts::SQRT_2
        });
        let data = FunctionalDataset::new(y, None).unwrap();
        let basis = SplineBasis::new(4, 20).unwrap();
        let fits = fit_trajectories(&data, &basis).unwrap();
        let h_grid = default_h_grid(n_points, 0.5);
        let curve = covariance_curve(&fits, &h_grid, 400).unwrap();
        let mean_sq = xis.iter().map(|x| x * x).sum::<f64>() / xis.len() as f64;
        // The construction subtracts the sample mean of the xi's.
        let xi_bar = xis.iter().sum::<f64>() / xis.len() as f64;
        let centered_sq = mean_sq - xi_bar * xi_bar;
        for (k, &h) in curve.h_grid.iter().enumerate() {
            let closed = centered_sq
                * ((2.0 * PI * h).cos() - (2.0 * PI * h).sin() / (2.0 * PI * (1.0 - h)));
            assert_abs_diff_eq!(curve.values[k], closed, epsilon = 2e-4);
        }
    }

    #[test]
    fn oracle_zero_process() {
        let z = DMatrix::zeros(3, 20);
        let curve = oracle_covariance(&z, &default_h_grid(20, 0.5), 20).unwrap();
        assert!(curve.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn oracle_equals_pipeline_on_shared_function_space() {
        // Piecewise-linear truth with breakpoints on the grid: the order-2
        // spline fit reproduces it exactly and the piecewise-linear
        // interpolation of the grid samples is the same function, so both
        // estimator paths integrate identical integrands. The first segment
        // is constant so the oracle's below-grid clamping is also exact.
        let n_points = 100;
        let j_s = 19; // breakpoints at l/20, all grid points
        let mut nodes: Vec<f64> = (0..=(j_s + 1)).map(|l| (l as f64 * 0.9).sin()).collect();
        nodes[0] = nodes[1];
        let breaks: Vec<f64> = (0..=(j_s + 1)).map(|l| l as f64 / (j_s + 1) as f64).collect();
        let piecewise = |x: f64| {
            let seg = ((x * (j_s + 1) as f64).floor() as usize).min(j_s);
            let t = (x - breaks[seg]) / (breaks[seg + 1] - breaks[seg]);
            nodes[seg] * (1.0 - t) + nodes[seg + 1] * t
        };
        let z_row: Vec<f64> = (1..=n_points)
            .map(|j| piecewise(j as f64 / n_points as f64))
            .collect();
        // Two subjects, +f and -f: mean is exactly zero.
        let mut z = DMatrix::zeros(2, n_points);
        for j in 0..n_points {
            z[(0, j)] = z_row[j];
            z[(1, j)] = -z_row[j];
        }
        let data = FunctionalDataset::new(z.clone(), None).unwrap();
        let basis = SplineBasis::new(2, j_s).unwrap();
        let fits = fit_trajectories(&data, &basis).unwrap();
        let h_grid = default_h_grid(n_points, 0.4);
        let c_hat = covariance_curve(&fits, &h_grid, 150).unwrap();
        let c_tilde = oracle_covariance(&z, &h_grid, 150).unwrap();
        for k in 0..h_grid.len() {
            assert_abs_diff_eq!(c_hat.values[k], c_tilde.values[k], epsilon = 1e-6);
        }
    }

    #[test]
    fn surface_matches_outer_product_oracle() {
        let y = DMatrix::from_fn(6, 50, |i, j| {
            let x = (j + 1) as f64 / 50.0;
            ((i + 1) as f64 * PI * x).sin()
        });
        let data = FunctionalDataset::new(y, None).unwrap();
        let basis = SplineBasis::new(4, 5).unwrap();
        let fits = fit_trajectories(&data, &basis).unwrap();
        let surface = covariance_surface(&fits);
        // Empirical outer product of the evaluated residuals on the grid.
        let grid: Vec<f64> = (1..=50).map(|j| j as f64 / 50.0).collect();
        let mut resid = DMatrix::zeros(6, 50);
        for i in 0..6 {
            let vals = eval_fit(&fits, FittedCurve::Residual(i), &grid).unwrap();
            for j in 0..50 {
                resid[(i, j)] = vals[j];
            }
        }
        let oracle = resid.tr_mul(&resid) / 6.0;
        for j in 0..50 {
            for j2 in 0..50 {
                let g = surface.eval(grid[j], grid[j2]).unwrap();
                assert_abs_diff_eq!(g, oracle[(j, j2)], epsilon = 1e-10);
            }
        }
        // Nonnegative diagonal.
        for j in 0..50 {
            assert!(surface.eval(grid[j], grid[j]).unwrap() >= -1e-14);
        }
    }

    #[test]
    fn stationary_surface_diagonal_and_symmetry() {
        let h_grid = vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
        let values = vec![2.0, 1.5, 1.0, 0.6, 0.3, 0.1];
        let curve = CovCurve::new(h_grid, values, CurveKind::CHat).unwrap();
        let x_grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.05).collect();
        let surf = stationary_surface(&curve, &x_grid);
        assert!(surf.out_of_range.is_empty());
        for j in 0..x_grid.len() {
            assert_abs_diff_eq!(surf.values[(j, j)], 2.0, epsilon = 1e-14);
            for j2 in 0..x_grid.len() {
                assert_eq!(surf.values[(j, j2)], surf.values[(j2, j)]);
            }
        }
        // Interpolated entry matches direct re-evaluation at the exact lag.
        let lag = (x_grid[3] - x_grid[8]).abs();
        assert_abs_diff_eq!(
            surf.values[(3, 8)],
            curve.interpolate(lag).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn stationary_surface_flags_out_of_range_pairs() {
        let curve = CovCurve::new(vec![0.0, 0.25], vec![1.0, 0.5], CurveKind::CHat).unwrap();
        let x_grid = vec![0.0, 0.2, 0.6];
        let surf = stationary_surface(&curve, &x_grid);
        assert!(surf.values[(0, 2)].is_nan());
        assert!(surf.out_of_range.contains(&(0, 2)));
        assert!(surf.out_of_range.contains(&(1, 2)));
        assert!(!surf.values[(0, 1)].is_nan());
    }

    #[test]
    fn quadrature_doubling_is_stable() {
        let y = DMatrix::from_fn(5, 100, |i, j| {
            let x = (j + 1) as f64 / 100.0;
            (((i % 2) + 1) as f64 * 2.0 * PI * x).sin() + 0.3 * i as f64
        });
        let data = FunctionalDataset::new(y, None).unwrap();
        let basis = SplineBasis::new(4, 6).unwrap();
        let fits = fit_trajectories(&data, &basis).unwrap();
        let h_grid = default_h_grid(100, 0.5);
        let coarse = covariance_curve(&fits, &h_grid, 200).unwrap();
        let fine = covariance_curve(&fits, &h_grid, 400).unwrap();
        let scale = coarse.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..h_grid.len() {
            assert!(
                (coarse.values[k] - fine.values[k]).abs() <= 1e-4 * scale.max(1e-12),
                "lag {} moved too much under quadrature refinement",
                h_grid[k]
            );
        }
    }

    #[test]
    fn rejects_lag_at_or_beyond_one() {
        let data = cubic_poly_dataset(3, 30);
        let basis = SplineBasis::new(4, 2).unwrap();
        let fits = fit_trajectories(&data, &basis).unwrap();
        assert!(matches!(
            covariance_curve(&fits, &[0.0, 1.0], 30),
            Err(CovError::InvalidLag(_))
        ));
    }
}
