//! End-to-end estimation pipeline for a single dataset: knot selection,
//! trajectory fits, covariance curve, FPCA, the plug-in variance, and the
//! multiplier simulation. Shared by the CLI commands and the Monte-Carlo
//! harness.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::band::{critical_value, scb, simulate_zeta, BandResult};
use crate::bspline::{select_knots, DesignMatrix, KnotMethod, SplineBasis};
use crate::covest::{
    covariance_curve, covariance_surface, default_h_grid, fit_trajectories_with_design, CovCurve,
    CurveKind, FunctionalDataset, TrajectoryFits,
};
use crate::error::{CovError, Result};
use crate::fpca::{fpca_full, variance_function, FpcaResult, XI_FLOOR};

/// Tuning knobs of the estimation pipeline, with the defaults used
/// throughout: cubic splines, formula knots with `c = 0.8`,
/// `gamma = 3/8`, `h0 = 0.5`, 95% fraction of variance explained, and
/// 1000 multiplier replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub order: usize,
    pub knots: KnotMethod,
    /// Explicit knot count, overriding `knots` when set.
    pub fixed_knots: Option<usize>,
    pub knot_c: f64,
    pub knot_gamma: f64,
    pub h0: f64,
    /// Trapezoid abscissae; defaults to the grid size.
    pub quad_points: Option<usize>,
    pub fve: f64,
    pub zeta_reps: usize,
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            order: 4,
            knots: KnotMethod::Formula,
            fixed_knots: None,
            knot_c: 0.8,
            knot_gamma: 0.375,
            h0: 0.5,
            quad_points: None,
            fve: 0.95,
            zeta_reps: 1000,
            seed: 0,
        }
    }
}

/// Everything the pipeline produces for one dataset.
pub struct PipelineOutput {
    pub interior_knots: usize,
    pub fits: TrajectoryFits,
    pub h_grid: Vec<f64>,
    pub c_hat: CovCurve,
    /// `None` when the covariance surface had no positive eigenvalue
    /// (degenerate data); the variance curve is then `C_hat^2` floored.
    pub fpca: Option<FpcaResult>,
    pub xi: CovCurve,
    /// Multiplier process replicates, `zeta_reps x |h_grid|`; all zeros in
    /// the degenerate case.
    pub zeta: DMatrix<f64>,
    /// Unit-lag to original-lag conversion factor.
    pub lag_scale: f64,
}

impl PipelineOutput {
    /// Simultaneous band at confidence level `1 - alpha`.
    pub fn simultaneous_band(&self, alpha: f64) -> Result<BandResult> {
        let q = critical_value(&self.zeta, &self.xi, alpha)?;
        scb(
            &self.c_hat,
            &self.xi,
            q,
            self.fits.n_subjects(),
            1.0 - alpha,
        )
    }
}

/// Run the full pipeline on a dataset.
pub fn run_pipeline(data: &FunctionalDataset, opts: &PipelineOptions) -> Result<PipelineOutput> {
    if !(opts.h0 > 0.0 && opts.h0 < 1.0) {
        return Err(CovError::InvalidConfig(format!(
            "h0 must lie in (0, 1), got {}",
            opts.h0
        )));
    }
    let n_points = data.n_points();
    let interior_knots = match opts.fixed_knots {
        Some(j) => j,
        None => select_knots(
            data.observations(),
            opts.order,
            opts.knots,
            opts.knot_c,
            opts.knot_gamma,
        )?,
    };
    let basis = SplineBasis::new(opts.order, interior_knots)?;
    let design = DesignMatrix::on_grid(&basis, n_points)?;
    let fits = fit_trajectories_with_design(data, &design)?;
    let h_grid = default_h_grid(n_points, opts.h0);
    let quad_points = opts.quad_points.unwrap_or(n_points);
    let c_hat = covariance_curve(&fits, &h_grid, quad_points)?;
    let surface = covariance_surface(&fits);

    match fpca_full(data, &fits, &surface, &design, opts.fve) {
        Ok(fpca) => {
            let xi = variance_function(&fpca, &c_hat, &h_grid, quad_points)?;
            let zeta = simulate_zeta(&fpca, &h_grid, quad_points, opts.zeta_reps, opts.seed)?;
            Ok(PipelineOutput {
                interior_knots,
                fits,
                h_grid,
                c_hat,
                fpca: Some(fpca),
                xi,
                zeta,
                lag_scale: data.lag_scale(),
            })
        }
        Err(CovError::NoPositiveEigenvalues) => {
            // Degenerate data: no variation beyond the mean. The variance
            // plug-in reduces to C_hat^2 (floored) and the limit process is
            // identically zero, so bands collapse onto the center.
            let xi_values: Vec<f64> = c_hat.values.iter().map(|c| (c * c).max(XI_FLOOR)).collect();
            let xi = CovCurve::new(h_grid.clone(), xi_values, CurveKind::XiHat)?;
            let zeta = DMatrix::zeros(opts.zeta_reps, h_grid.len());
            Ok(PipelineOutput {
                interior_knots,
                fits,
                h_grid,
                c_hat,
                fpca: None,
                xi,
                zeta,
                lag_scale: data.lag_scale(),
            })
        }
        Err(e) => Err(e),
    }
}
