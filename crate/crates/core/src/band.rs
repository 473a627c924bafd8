//! Simultaneous confidence bands for the covariance curve and
//! goodness-of-fit tests of parametric covariance models.
//!
//! The normalized deviation `sqrt(n) (C_hat - C) Xi^{-1/2}` converges to a
//! Gaussian process; its supremum quantile `Q_{1-alpha}` is estimated by
//! simulating the limit process from the estimated eigen-couplings
//! (`simulate_zeta`) and taking empirical percentiles of the per-replicate
//! maxima (`critical_value`). Bands follow as
//! `C_hat(h) +- n^{-1/2} Q_{1-alpha} Xi^{1/2}(h)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::covest::{CovCurve, CurveKind};
use crate::covmodels::CovModelSpec;
use crate::error::{CovError, Result};
use crate::fpca::{lag_couplings, FpcaResult, XI_FLOOR};
use crate::rng::{domain, substream};

/// Band flavor: supremum-calibrated or per-lag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    Simultaneous,
    Pointwise,
}

/// A confidence band around the covariance curve.
#[derive(Debug, Clone, PartialEq)]
pub struct BandResult {
    /// Confidence level `1 - alpha`.
    pub level: f64,
    /// Critical value: `Q_{1-alpha}` or `z_{1-alpha/2}`.
    pub q: f64,
    /// Sample size entering the `n^{-1/2}` scaling.
    pub n: usize,
    pub kind: BandKind,
    pub center: CovCurve,
    pub lower: CovCurve,
    pub upper: CovCurve,
    /// Lag indices where the variance plug-in was floored; the supremum
    /// statistics skip these.
    pub floored: Vec<usize>,
}

impl Serialize for BandResult {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("BandResult", 9)?;
        s.serialize_field("level", &self.level)?;
        s.serialize_field("q", &self.q)?;
        s.serialize_field("n", &self.n)?;
        s.serialize_field("kind", &self.kind)?;
        s.serialize_field("h_grid", &self.center.h_grid)?;
        s.serialize_field("center", &self.center.values)?;
        s.serialize_field("lower", &self.lower.values)?;
        s.serialize_field("upper", &self.upper.values)?;
        s.serialize_field("floored", &self.floored)?;
        s.end()
    }
}

impl BandResult {
    /// True wherever `curve` lies inside the band at every lag.
    pub fn covers(&self, curve: &CovCurve) -> Result<bool> {
        if curve.h_grid.len() != self.center.h_grid.len() {
            return Err(CovError::GridMismatch);
        }
        Ok(self
            .lower
            .values
            .iter()
            .zip(&self.upper.values)
            .zip(&curve.values)
            .all(|((lo, up), v)| lo <= v && v <= up))
    }

    /// Average width over the lag grid.
    pub fn average_width(&self) -> f64 {
        let m = self.center.h_grid.len() as f64;
        self.upper
            .values
            .iter()
            .zip(&self.lower.values)
            .map(|(u, l)| u - l)
            .sum::<f64>()
            / m
    }
}

/// Goodness-of-fit result for a parametric covariance null.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofResult {
    /// `sup_h sqrt(n) |C_hat(h) - C_0(h)| Xi(h)^{-1/2}`.
    pub statistic: f64,
    pub p_value: f64,
    /// Decisions at conventional levels: `(alpha, reject)`.
    pub reject_at: Vec<(f64, bool)>,
    /// Lags excluded from the supremum because the variance was floored.
    pub floored: Vec<usize>,
}

/// Standard normal quantile via Acklam's rational approximation
/// (relative error below 1.2e-9).
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(CovError::InvalidAlpha(p));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    };
    Ok(x)
}

/// Simulate `reps` independent copies of the limit Gaussian process on
/// `h_grid`, one row per replicate.
///
/// Each copy draws standard normals `eps_{kk'}` for `k < k'` (coupled
/// symmetrically, `eps_{k'k} = eps_{kk'}`) and `eps_k`, giving
/// `zeta(h) = sum_{k != k'} eps_{kk'} A_{kk'}(h)
///           + sum_k eps_k A_{kk}(h) sqrt(m4_k - 1)`;
/// the symmetric coupling makes the variance match the closed form
/// `sum_k (m4_k - 1) A_{kk}^2 + sum_{k<k'} (A_{kk'} + A_{k'k})^2` exactly.
///
/// Replicate `r` draws from the substream `(seed, r)`, so results are
/// bitwise independent of thread count.
pub fn simulate_zeta(
    fpca: &FpcaResult,
    h_grid: &[f64],
    quad_points: usize,
    reps: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if reps < 100 {
        return Err(CovError::TooFewReplicates(reps));
    }
    let kappa = fpca.kappa;
    if kappa == 0 {
        return Err(CovError::NoPositiveEigenvalues);
    }
    let couplings = lag_couplings(fpca, h_grid, quad_points)?;
    let n_lags = h_grid.len();
    // Per-lag loadings: for k < k' the symmetrized coupling A_{kk'}+A_{k'k},
    // then the diagonal loadings A_{kk} sqrt(max(m4_k - 1, 0)).
    let mut loadings: Vec<Vec<f64>> = Vec::with_capacity(n_lags);
    for a in &couplings {
        let mut row = Vec::with_capacity(kappa * (kappa - 1) / 2 + kappa);
        for k in 0..kappa {
            for k2 in (k + 1)..kappa {
                row.push(a[(k, k2)] + a[(k2, k)]);
            }
        }
        for k in 0..kappa {
            let excess = (fpca.fourth_moments[k] - 1.0).max(0.0);
            row.push(a[(k, k)] * excess.sqrt());
        }
        loadings.push(row);
    }
    let n_draws = kappa * (kappa - 1) / 2 + kappa;
    let rows: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, domain::ZETA, r as u64);
            let eps: Vec<f64> = (0..n_draws)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            loadings
                .iter()
                .map(|row| row.iter().zip(&eps).map(|(l, e)| l * e).sum())
                .collect()
        })
        .collect();
    let mut out = DMatrix::zeros(reps, n_lags);
    for (r, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[(r, j)] = *v;
        }
    }
    Ok(out)
}

/// Per-replicate maxima of `|zeta(h)| Xi(h)^{-1/2}`, skipping floored lags.
fn sup_deviations(zeta: &DMatrix<f64>, xi: &CovCurve) -> Result<(Vec<f64>, Vec<usize>)> {
    if zeta.ncols() != xi.values.len() {
        return Err(CovError::GridMismatch);
    }
    let floored: Vec<usize> = xi
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= XI_FLOOR)
        .map(|(j, _)| j)
        .collect();
    let inv_sqrt: Vec<Option<f64>> = xi
        .values
        .iter()
        .map(|&v| if v > XI_FLOOR { Some(v.sqrt().recip()) } else { None })
        .collect();
    let maxima = (0..zeta.nrows())
        .map(|r| {
            let mut m: f64 = 0.0;
            for (j, w) in inv_sqrt.iter().enumerate() {
                if let Some(w) = w {
                    m = m.max((zeta[(r, j)] * w).abs());
                }
            }
            m
        })
        .collect();
    Ok((maxima, floored))
}

/// Empirical `(1-alpha)` percentile of the per-replicate maxima of
/// `|zeta(h)| Xi(h)^{-1/2}` (order statistic at `ceil((1-alpha) reps)`).
pub fn critical_value(zeta: &DMatrix<f64>, xi: &CovCurve, alpha: f64) -> Result<f64> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(CovError::InvalidAlpha(alpha));
    }
    let (mut maxima, _) = sup_deviations(zeta, xi)?;
    maxima.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let reps = maxima.len();
    let rank = ((1.0 - alpha) * reps as f64).ceil() as usize;
    Ok(maxima[rank.clamp(1, reps) - 1])
}

fn band_from_half_width(
    c_hat: &CovCurve,
    xi: &CovCurve,
    q: f64,
    n: usize,
    level: f64,
    kind: BandKind,
) -> Result<BandResult> {
    if c_hat.h_grid.len() != xi.h_grid.len()
        || c_hat
            .h_grid
            .iter()
            .zip(&xi.h_grid)
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(CovError::GridMismatch);
    }
    if n < 1 {
        return Err(CovError::InvalidDataset("band needs n >= 1".into()));
    }
    if q < 0.0 || xi.values.iter().any(|&v| v < 0.0) {
        return Err(CovError::InvalidDataset(
            "band needs q >= 0 and a nonnegative variance curve".into(),
        ));
    }
    let scale = q / (n as f64).sqrt();
    let half: Vec<f64> = xi.values.iter().map(|&v| scale * v.sqrt()).collect();
    let lower: Vec<f64> = c_hat
        .values
        .iter()
        .zip(&half)
        .map(|(c, w)| c - w)
        .collect();
    let upper: Vec<f64> = c_hat
        .values
        .iter()
        .zip(&half)
        .map(|(c, w)| c + w)
        .collect();
    let floored = xi
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v <= XI_FLOOR)
        .map(|(j, _)| j)
        .collect();
    Ok(BandResult {
        level,
        q,
        n,
        kind,
        center: c_hat.clone(),
        lower: CovCurve::new(c_hat.h_grid.clone(), lower, CurveKind::BandEdge)?,
        upper: CovCurve::new(c_hat.h_grid.clone(), upper, CurveKind::BandEdge)?,
        floored,
    })
}

/// Simultaneous confidence band `C_hat(h) +- n^{-1/2} q Xi^{1/2}(h)`.
pub fn scb(c_hat: &CovCurve, xi: &CovCurve, q: f64, n: usize, level: f64) -> Result<BandResult> {
    band_from_half_width(c_hat, xi, q, n, level, BandKind::Simultaneous)
}

/// Asymptotic pointwise band with the normal multiplier `z_{1-alpha/2}`.
pub fn pointwise_band(c_hat: &CovCurve, xi: &CovCurve, alpha: f64, n: usize) -> Result<BandResult> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(CovError::InvalidAlpha(alpha));
    }
    let z = norm_quantile(1.0 - alpha / 2.0)?;
    band_from_half_width(c_hat, xi, z, n, 1.0 - alpha, BandKind::Pointwise)
}

/// 2-D simultaneous confidence envelope induced on the stationary surface
/// `G(x, x') = C(|x - x'|)` by the band edges. Errors if any grid pair has
/// a lag beyond the band's range.
pub fn sce_surface(band: &BandResult, x_grid: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = x_grid.len();
    let mut lower = DMatrix::zeros(m, m);
    let mut upper = DMatrix::zeros(m, m);
    for j in 0..m {
        for j2 in j..m {
            let lag = (x_grid[j] - x_grid[j2]).abs();
            let lo = band.lower.interpolate(lag)?;
            let up = band.upper.interpolate(lag)?;
            lower[(j, j2)] = lo;
            lower[(j2, j)] = lo;
            upper[(j, j2)] = up;
            upper[(j2, j)] = up;
        }
    }
    Ok((lower, upper))
}

/// Supremum-norm goodness-of-fit test of the parametric null
/// `C(h) = C_0(lag_scale * h)`.
///
/// `lag_scale` converts unit lags to the model's own units (the length of
/// the original domain). The p-value uses the add-one rule
/// `(1 + #{M_r >= T}) / (reps + 1)` over the simulated maxima.
pub fn gof_test(
    c_hat: &CovCurve,
    xi: &CovCurve,
    n: usize,
    model: &CovModelSpec,
    lag_scale: f64,
    zeta: &DMatrix<f64>,
) -> Result<GofResult> {
    if c_hat.h_grid.len() != xi.h_grid.len() {
        return Err(CovError::GridMismatch);
    }
    let sqrt_n = (n as f64).sqrt();
    let mut statistic: f64 = 0.0;
    for (j, (&h, &c)) in c_hat.h_grid.iter().zip(&c_hat.values).enumerate() {
        let xi_j = xi.values[j];
        if xi_j <= XI_FLOOR {
            continue;
        }
        let c0 = model.eval(lag_scale * h)?;
        statistic = statistic.max(sqrt_n * (c - c0).abs() / xi_j.sqrt());
    }
    let (maxima, floored) = sup_deviations(zeta, xi)?;
    let exceed = maxima.iter().filter(|&&m| m >= statistic).count();
    let p_value = (1 + exceed) as f64 / (maxima.len() + 1) as f64;
    let reject_at = [0.2, 0.1, 0.05, 0.01]
        .iter()
        .map(|&alpha| (alpha, p_value < alpha))
        .collect();
    Ok(GofResult {
        statistic,
        p_value,
        reject_at,
        floored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::SplineBasis;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn fixture_fpca(kappa: usize, fourth: &[f64]) -> FpcaResult {
        let basis = SplineBasis::new(4, 5).unwrap();
        let dim = basis.dim();
        let mut phi_coeffs = DMatrix::zeros(dim, dim);
        for k in 0..kappa {
            for l in 0..dim {
                phi_coeffs[(l, k)] = ((l + 2 * k + 1) as f64 * 0.61).sin() * 0.8;
            }
        }
        FpcaResult {
            basis,
            lambda: DVector::from_element(dim, 1.0),
            psi_coeffs: phi_coeffs.clone(),
            phi_coeffs,
            kappa,
            scores: DMatrix::zeros(0, 0),
            fourth_moments: DVector::from_vec(fourth.to_vec()),
        }
    }

    fn unit_xi(h_grid: &[f64]) -> CovCurve {
        CovCurve::new(h_grid.to_vec(), vec![1.0; h_grid.len()], CurveKind::XiHat).unwrap()
    }

    #[test]
    fn normal_quantile_reference_values() {
        assert_abs_diff_eq!(norm_quantile(0.975).unwrap(), 1.959964, epsilon = 1e-5);
        assert_abs_diff_eq!(norm_quantile(0.995).unwrap(), 2.5758293, epsilon = 1e-6);
        assert_abs_diff_eq!(norm_quantile(0.5).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            norm_quantile(0.025).unwrap(),
            -norm_quantile(0.975).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(norm_quantile(1e-6).unwrap(), -4.753424, epsilon = 1e-4);
        assert!(norm_quantile(0.0).is_err());
        assert!(norm_quantile(1.0).is_err());
    }

    #[test]
    fn zeta_single_component_law() {
        // kappa = 1: zeta(h) = eps A_11(h) sqrt(m4 - 1).
        let fpca = fixture_fpca(1, &[3.5]);
        let h_grid: Vec<f64> = (0..8).map(|k| k as f64 * 0.05).collect();
        let reps = 100_000;
        let zeta = simulate_zeta(&fpca, &h_grid, 80, reps, 42).unwrap();
        let couplings = lag_couplings(&fpca, &h_grid, 80).unwrap();
        for (j, a) in couplings.iter().enumerate() {
            let target = a[(0, 0)] * a[(0, 0)] * (3.5 - 1.0);
            let var: f64 =
                zeta.column(j).iter().map(|v| v * v).sum::<f64>() / reps as f64;
            assert!(
                (var - target).abs() <= 0.03 * target,
                "lag {j}: {var} vs {target}"
            );
        }
    }

    #[test]
    fn zeta_mean_is_zero() {
        let fpca = fixture_fpca(2, &[3.0, 2.5]);
        let h_grid: Vec<f64> = (0..6).map(|k| k as f64 * 0.08).collect();
        let reps = 10_000;
        let zeta = simulate_zeta(&fpca, &h_grid, 60, reps, 5).unwrap();
        for j in 0..h_grid.len() {
            let mean: f64 = zeta.column(j).sum() / reps as f64;
            let sd: f64 = (zeta.column(j).iter().map(|v| v * v).sum::<f64>()
                / reps as f64)
                .sqrt();
            let mc_se = sd / (reps as f64).sqrt();
            assert!(
                mean.abs() <= 4.0 * mc_se.max(1e-12),
                "lag {j}: mean {mean} vs 4 se {mc_se}"
            );
        }
    }

    #[test]
    fn zeta_variance_matches_remark_form() {
        let fpca = fixture_fpca(3, &[3.2, 2.7, 3.0]);
        let h_grid: Vec<f64> = (0..10).map(|k| k as f64 * 0.05).collect();
        let reps = 100_000;
        let zeta = simulate_zeta(&fpca, &h_grid, 60, reps, 17).unwrap();
        let couplings = lag_couplings(&fpca, &h_grid, 60).unwrap();
        for (j, a) in couplings.iter().enumerate() {
            let mut target = 0.0;
            for k in 0..3 {
                target += (fpca.fourth_moments[k] - 1.0) * a[(k, k)] * a[(k, k)];
                for k2 in (k + 1)..3 {
                    let s = a[(k, k2)] + a[(k2, k)];
                    target += s * s;
                }
            }
            let var: f64 =
                zeta.column(j).iter().map(|v| v * v).sum::<f64>() / reps as f64;
            assert!(
                (var - target).abs() <= 0.05 * target,
                "lag {j}: empirical {var} vs closed {target}"
            );
        }
    }

    #[test]
    fn zeta_needs_enough_replicates() {
        let fpca = fixture_fpca(1, &[3.0]);
        assert!(matches!(
            simulate_zeta(&fpca, &[0.0, 0.1], 40, 99, 1),
            Err(CovError::TooFewReplicates(99))
        ));
    }

    #[test]
    fn critical_value_single_lag_normal() {
        // One lag, unit variance: the supremum is |N(0,1)|, whose 0.95
        // quantile is z_{0.975} = 1.96.
        let reps = 100_000;
        let mut zeta = DMatrix::zeros(reps, 1);
        for r in 0..reps {
            let mut rng = substream(123, domain::ZETA, r as u64);
            zeta[(r, 0)] = rng.sample::<f64, _>(StandardNormal);
        }
        let xi = unit_xi(&[0.0]);
        let q = critical_value(&zeta, &xi, 0.05).unwrap();
        assert!((q - 1.96).abs() <= 0.05, "Q = {q}");
    }

    #[test]
    fn critical_value_median_and_monotonicity() {
        let reps = 5_000;
        let h_grid = [0.0, 0.1, 0.2];
        let fpca = fixture_fpca(2, &[3.0, 3.0]);
        let zeta = simulate_zeta(&fpca, &h_grid, 50, reps, 3).unwrap();
        let xi = unit_xi(&h_grid);
        let q50 = critical_value(&zeta, &xi, 0.5).unwrap();
        let (mut maxima, _) = sup_deviations(&zeta, &xi).unwrap();
        maxima.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(q50, maxima[reps / 2 - 1]);
        let q80 = critical_value(&zeta, &xi, 0.2).unwrap();
        let q95 = critical_value(&zeta, &xi, 0.05).unwrap();
        assert!(q95 >= q80, "quantile monotonicity: {q95} < {q80}");
        assert!(critical_value(&zeta, &xi, 0.0).is_err());
        assert!(critical_value(&zeta, &xi, 1.0).is_err());
    }

    fn toy_curves() -> (CovCurve, CovCurve) {
        let h_grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.05).collect();
        let c: Vec<f64> = h_grid.iter().map(|h| (1.0 - h) * 1.2).collect();
        let xi: Vec<f64> = h_grid.iter().map(|h| 0.5 + h).collect();
        (
            CovCurve::new(h_grid.clone(), c, CurveKind::CHat).unwrap(),
            CovCurve::new(h_grid, xi, CurveKind::XiHat).unwrap(),
        )
    }

    #[test]
    fn band_symmetry_and_scaling() {
        let (c_hat, xi) = toy_curves();
        let band = scb(&c_hat, &xi, 2.4, 40, 0.95).unwrap();
        for j in 0..c_hat.h_grid.len() {
            let up = band.upper.values[j] - band.center.values[j];
            let down = band.center.values[j] - band.lower.values[j];
            assert_abs_diff_eq!(up, down, epsilon = 1e-12);
            assert!(band.lower.values[j] <= band.center.values[j]);
        }
        // Quadrupling n halves the width exactly.
        let wide = scb(&c_hat, &xi, 2.4, 40, 0.95).unwrap();
        let narrow = scb(&c_hat, &xi, 2.4, 160, 0.95).unwrap();
        assert_abs_diff_eq!(
            narrow.average_width(),
            0.5 * wide.average_width(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn band_collapses_with_zero_variance() {
        let (c_hat, _) = toy_curves();
        let zero = CovCurve::new(
            c_hat.h_grid.clone(),
            vec![0.0; c_hat.h_grid.len()],
            CurveKind::XiHat,
        )
        .unwrap();
        let band = scb(&c_hat, &zero, 3.0, 50, 0.95).unwrap();
        assert_eq!(band.lower.values, c_hat.values);
        assert_eq!(band.upper.values, c_hat.values);
    }

    #[test]
    fn pointwise_band_multiplier_and_nesting() {
        let (c_hat, xi) = toy_curves();
        let pw = pointwise_band(&c_hat, &xi, 0.05, 40).unwrap();
        assert_abs_diff_eq!(pw.q, 1.959964, epsilon = 1e-5);
        assert_eq!(pw.kind, BandKind::Pointwise);
        // Simultaneous band with a realistic q contains the pointwise one.
        let sim = scb(&c_hat, &xi, 2.6, 40, 0.95).unwrap();
        for j in 0..c_hat.h_grid.len() {
            assert!(sim.lower.values[j] <= pw.lower.values[j]);
            assert!(sim.upper.values[j] >= pw.upper.values[j]);
        }
        // alpha -> 1 collapses onto the center.
        let tiny = pointwise_band(&c_hat, &xi, 0.999999, 40).unwrap();
        for j in 0..c_hat.h_grid.len() {
            assert_abs_diff_eq!(tiny.lower.values[j], c_hat.values[j], epsilon = 1e-5);
        }
    }

    #[test]
    fn sce_surface_properties() {
        let (c_hat, xi) = toy_curves();
        let band = scb(&c_hat, &xi, 2.4, 40, 0.95).unwrap();
        let x_grid: Vec<f64> = (0..=8).map(|k| k as f64 * 0.0625).collect();
        let (lower, upper) = sce_surface(&band, &x_grid).unwrap();
        // Diagonal equals the band at h = 0.
        for j in 0..x_grid.len() {
            assert_abs_diff_eq!(lower[(j, j)], band.lower.values[0], epsilon = 1e-12);
            assert_abs_diff_eq!(upper[(j, j)], band.upper.values[0], epsilon = 1e-12);
        }
        // Symmetry and containment of the stationary center surface.
        let center = crate::covest::stationary_surface(&c_hat, &x_grid);
        for j in 0..x_grid.len() {
            for j2 in 0..x_grid.len() {
                assert_eq!(lower[(j, j2)], lower[(j2, j)]);
                assert_eq!(upper[(j, j2)], upper[(j2, j)]);
                let g = center.values[(j, j2)];
                assert!(lower[(j, j2)] <= g && g <= upper[(j, j2)]);
            }
        }
        // Pairs beyond h0 error out.
        let wide_grid = vec![0.0, 0.9];
        assert!(sce_surface(&band, &wide_grid).is_err());
    }

    #[test]
    fn gof_null_and_gross_misfit() {
        // Center the test on a curve that IS a parametric model.
        let model = CovModelSpec::gaussian(2.0, 3.0).unwrap();
        let h_grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.05).collect();
        let values: Vec<f64> = h_grid.iter().map(|&h| model.eval(h).unwrap()).collect();
        let c_hat = CovCurve::new(h_grid.clone(), values, CurveKind::CHat).unwrap();
        let xi = unit_xi(&h_grid);
        let fpca = fixture_fpca(2, &[3.0, 3.0]);
        let zeta = simulate_zeta(&fpca, &h_grid, 50, 1000, 9).unwrap();

        let null = gof_test(&c_hat, &xi, 40, &model, 1.0, &zeta).unwrap();
        assert_eq!(null.statistic, 0.0);
        assert_abs_diff_eq!(null.p_value, 1.0, epsilon = 1e-12);
        assert!(null.reject_at.iter().all(|(_, reject)| !reject));

        let shifted = CovModelSpec::gaussian(50.0, 3.0).unwrap();
        let alt = gof_test(&c_hat, &xi, 40, &shifted, 1.0, &zeta).unwrap();
        assert!(alt.p_value <= 1.0 / 1001.0 + 1e-12);
        assert!(alt.reject_at.iter().all(|(_, reject)| *reject));
    }

    #[test]
    fn band_serialization_shape() {
        let (c_hat, xi) = toy_curves();
        let band = scb(&c_hat, &xi, 2.0, 10, 0.95).unwrap();
        let json = serde_json::to_value(&band).unwrap();
        for key in ["level", "q", "n", "kind", "h_grid", "center", "lower", "upper"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
    }
}
