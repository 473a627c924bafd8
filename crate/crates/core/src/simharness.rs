//! Monte-Carlo replication engine: synthetic data generators, the full
//! estimation pipeline per replicate, and AMSE / coverage / width reports.
//!
//! Reports are pure functions of `(config, seed)`: replicate `r` draws all
//! of its randomness from substreams keyed by `(seed, r)`, replicates run
//! in parallel, and aggregation reduces in replicate order, so results are
//! bit-identical regardless of worker count.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band::{critical_value, scb, BandResult};
use crate::bspline::KnotMethod;
use crate::covest::{default_h_grid, oracle_covariance, CovCurve, CurveKind, FunctionalDataset};
use crate::covmodels::{effective_range, sample_gp, CovModelSpec};
use crate::error::{CovError, Result};
use crate::pipeline::{run_pipeline, PipelineOptions, PipelineOutput};
use crate::rng::{derive_seed, domain, substream};

/// Number of Karhunen-Loeve terms kept in the *truth* curves; the tail of
/// the `(1/4)^{floor(k/2)}` spectrum is below 1e-15 beyond this.
const TRUTH_TERMS: usize = 50;

/// Data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    /// Karhunen-Loeve expansion with the trigonometric eigenbasis and
    /// eigenvalues `(1/4)^{floor(k/2)}`.
    Fourier,
    /// Zero-mean Gaussian process with a parametric spatial covariance,
    /// observed on its effective range.
    Spatial,
}

/// Error standard-deviation profile `sigma(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseShape {
    /// `sigma(x) = sigma_eps`.
    Homogeneous,
    /// `sigma_eps (5 - e^x) / (5 + e^x)` on the unit interval.
    Logistic5,
    /// `sigma_eps (5 - e^{x/2}) / (5 + e^{x/2})` in original units.
    Logistic5Half,
    /// `sigma_eps (30 - e^{x/2}) / (30 + e^{x/2})` in original units.
    Logistic30Half,
}

impl NoiseShape {
    fn eval(&self, sigma_eps: f64, x: f64) -> f64 {
        match self {
            NoiseShape::Homogeneous => sigma_eps,
            NoiseShape::Logistic5 => sigma_eps * (5.0 - x.exp()) / (5.0 + x.exp()),
            NoiseShape::Logistic5Half => {
                let e = (x / 2.0).exp();
                sigma_eps * (5.0 - e) / (5.0 + e)
            }
            NoiseShape::Logistic30Half => {
                let e = (x / 2.0).exp();
                sigma_eps * (30.0 - e) / (30.0 + e)
            }
        }
    }
}

/// One Monte-Carlo study configuration. Field names match the config-file
/// keys; `n` defaults to `floor(0.8 N)` when absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub generator: Generator,
    /// Parametric model for the spatial generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<CovModelSpec>,
    /// Subjects; paper default `floor(0.8 N)` when omitted.
    #[serde(default)]
    pub n: Option<usize>,
    /// Grid points per subject.
    #[serde(rename = "N")]
    pub n_points: usize,
    pub sigma_eps: f64,
    /// Heteroscedastic errors?
    #[serde(default)]
    pub hetero: bool,
    /// Variance shape when `hetero`; defaults per generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hetero_shape: Option<NoiseShape>,
    #[serde(default = "default_knots")]
    pub knots: KnotMethod,
    #[serde(default = "default_knot_c")]
    pub knot_c: f64,
    #[serde(default = "default_knot_gamma")]
    pub knot_gamma: f64,
    #[serde(default = "default_order")]
    pub p: usize,
    #[serde(default = "default_h0")]
    pub h0: f64,
    pub reps: usize,
    /// Band levels as alpha values.
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_fve")]
    pub fve: f64,
    #[serde(default = "default_zeta_reps")]
    pub zeta_reps: usize,
    /// Karhunen-Loeve truncation of the Fourier generator.
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    pub seed: Option<u64>,
}

fn default_knots() -> KnotMethod {
    KnotMethod::Formula
}
fn default_knot_c() -> f64 {
    0.8
}
fn default_knot_gamma() -> f64 {
    0.375
}
fn default_order() -> usize {
    4
}
fn default_h0() -> f64 {
    0.5
}
fn default_alpha() -> Vec<f64> {
    vec![0.05, 0.01]
}
fn default_fve() -> f64 {
    0.95
}
fn default_zeta_reps() -> usize {
    1000
}
fn default_truncation() -> usize {
    1000
}

impl SimConfig {
    /// Effective number of subjects.
    pub fn subjects(&self) -> usize {
        self.n.unwrap_or((0.8 * self.n_points as f64).floor() as usize)
    }

    /// Noise profile, defaulting per generator and model when
    /// heteroscedastic.
    pub fn noise_shape(&self) -> NoiseShape {
        if !self.hetero {
            return NoiseShape::Homogeneous;
        }
        self.hetero_shape.unwrap_or(match (&self.generator, &self.model) {
            (Generator::Fourier, _) => NoiseShape::Logistic5,
            (Generator::Spatial, Some(m)) => match m.family {
                crate::covmodels::CovFamily::Spherical => NoiseShape::Logistic5Half,
                _ => NoiseShape::Logistic30Half,
            },
            (Generator::Spatial, None) => NoiseShape::Logistic5Half,
        })
    }

    /// Validate every field, returning the full list of problems.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if self.n_points < 2 {
            errors.push(format!("N must be at least 2, got {}", self.n_points));
        }
        if self.subjects() < 2 {
            errors.push(format!("n must be at least 2, got {}", self.subjects()));
        }
        if self.sigma_eps < 0.0 {
            errors.push(format!("sigma_eps must be >= 0, got {}", self.sigma_eps));
        }
        if !(self.h0 > 0.0 && self.h0 < 1.0) {
            errors.push(format!("h0 must lie in (0, 1), got {}", self.h0));
        }
        if self.reps < 1 {
            errors.push("reps must be at least 1".into());
        }
        if self.alpha.is_empty() {
            errors.push("at least one alpha level is required".into());
        }
        for &a in &self.alpha {
            if !(a > 0.0 && a < 1.0) {
                errors.push(format!("alpha level {a} outside (0, 1)"));
            }
        }
        if !(self.fve > 0.0 && self.fve <= 1.0) {
            errors.push(format!("fve must lie in (0, 1], got {}", self.fve));
        }
        if self.zeta_reps < 100 {
            errors.push(format!(
                "zeta_reps must be at least 100, got {}",
                self.zeta_reps
            ));
        }
        if self.p < 1 {
            errors.push("spline order p must be at least 1".into());
        }
        match (&self.generator, &self.model) {
            (Generator::Spatial, None) => {
                errors.push("spatial generator requires a model spec".into())
            }
            (Generator::Fourier, Some(_)) => {
                errors.push("fourier generator does not take a model spec".into())
            }
            (Generator::Spatial, Some(model)) => {
                if let Err(e) = model.validate() {
                    errors.push(e.to_string());
                }
            }
            _ => {}
        }
        if self.seed.is_none() {
            errors.push("seed is required (no silent entropy)".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    fn pipeline_options(&self, zeta_seed: u64) -> PipelineOptions {
        PipelineOptions {
            order: self.p,
            knots: self.knots,
            fixed_knots: None,
            knot_c: self.knot_c,
            knot_gamma: self.knot_gamma,
            h0: self.h0,
            quad_points: None,
            fve: self.fve,
            zeta_reps: self.zeta_reps,
            seed: zeta_seed,
        }
    }
}

/// What the generator knows about the truth, for scoring a replicate.
pub struct TruthBundle {
    /// True covariance of the latent process on the unit lag grid.
    pub c_true: CovCurve,
    /// True eigenvalues (Fourier generator only).
    pub lambda: Option<Vec<f64>>,
    /// True rescaled eigenfunctions on the grid, `N x K` (Fourier only).
    pub phi_grid: Option<DMatrix<f64>>,
    /// True covariance surface on the observation grid, `N x N`.
    pub g_true: DMatrix<f64>,
    /// Realized latent processes, `n x N`, for the oracle estimator.
    pub z: DMatrix<f64>,
}

/// Precomputed generator state shared across replicates.
enum GeneratorContext {
    Fourier {
        /// `phi_k(j/N)` for the generator truncation, `K x N`.
        phi: DMatrix<f64>,
        mean: Vec<f64>,
        sigma: Vec<f64>,
        c_true: CovCurve,
        lambda_true: Vec<f64>,
        phi_truth: DMatrix<f64>,
        g_true: DMatrix<f64>,
    },
    Spatial {
        model: CovModelSpec,
        /// Original-unit grid over the effective range.
        orig_grid: Vec<f64>,
        effective_range: f64,
        mean: Vec<f64>,
        sigma: Vec<f64>,
        c_true: CovCurve,
        g_true: DMatrix<f64>,
    },
}

/// Mean function of the simulation studies.
fn mean_function(x: f64) -> f64 {
    (2.0 * PI * (x - 0.5)).sin()
}

/// Eigenvalue `lambda_k = (1/4)^{floor((k-1)/2)}` for 1-based `k`: the
/// cosine/sine pair at frequency `f` shares the eigenvalue `(1/4)^{f-1}`,
/// so the latent process is exactly stationary with
/// `C(h) = sum_f 2 (1/4)^{f-1} cos(2 pi f h)` and `C(0) = 8/3`.
fn lambda_k(k: usize) -> f64 {
    0.25f64.powi(((k - 1) / 2) as i32)
}

/// Eigenfunction `psi_k`: `sqrt(2) cos(2 f pi x)` for odd `k = 2f - 1`,
/// `sqrt(2) sin(2 f pi x)` for even `k = 2f`.
fn psi_k(k: usize, x: f64) -> f64 {
    let f = ((k + 1) / 2) as f64;
    let arg = 2.0 * f * PI * x;
    let root2 = std::f64::consts::SQRT_2;
    if k % 2 == 1 {
        root2 * arg.cos()
    } else {
        root2 * arg.sin()
    }
}

/// Closed-form lag average of `psi_k(x) psi_k(x+h)` over `[0, 1-h]`:
/// `cos(2 f pi h) -/+ sin(2 f pi h) / (2 f pi (1-h))` for cos/sin type.
fn psi_lag_integral(k: usize, h: f64) -> f64 {
    let f = ((k + 1) / 2) as f64;
    let arg = 2.0 * f * PI * h;
    let correction = if h == 0.0 {
        0.0
    } else {
        arg.sin() / (2.0 * f * PI * (1.0 - h))
    };
    if k % 2 == 1 {
        arg.cos() - correction
    } else {
        arg.cos() + correction
    }
}

/// True `C(h)` of the Fourier process, truncated at [`TRUTH_TERMS`]
/// (the spectral tail beyond that is below 1e-15).
pub fn fourier_true_covariance(h: f64) -> f64 {
    (1..=TRUTH_TERMS).map(|k| lambda_k(k) * psi_lag_integral(k, h)).sum()
}

fn fourier_context(config: &SimConfig, h_grid: &[f64]) -> Result<GeneratorContext> {
    let n_points = config.n_points;
    let unit_grid: Vec<f64> = (1..=n_points).map(|j| j as f64 / n_points as f64).collect();
    let k_gen = config.truncation;
    // Truth curves follow the generator's own truncation.
    let k_truth = TRUTH_TERMS.min(k_gen);
    let phi = DMatrix::from_fn(k_gen, n_points, |k, j| {
        let k1 = k + 1;
        lambda_k(k1).sqrt() * psi_k(k1, unit_grid[j])
    });
    let mean: Vec<f64> = unit_grid.iter().map(|&x| mean_function(x)).collect();
    let shape = config.noise_shape();
    let sigma: Vec<f64> = unit_grid
        .iter()
        .map(|&x| shape.eval(config.sigma_eps, x))
        .collect();
    let c_values: Vec<f64> = h_grid
        .iter()
        .map(|&h| (1..=k_truth).map(|k| lambda_k(k) * psi_lag_integral(k, h)).sum())
        .collect();
    let c_true = CovCurve::new(h_grid.to_vec(), c_values, CurveKind::Model)?;
    let lambda_true: Vec<f64> = (1..=k_truth).map(lambda_k).collect();
    let phi_truth = DMatrix::from_fn(n_points, k_truth.max(1), |j, k| {
        let k1 = k + 1;
        if k1 > k_truth {
            0.0
        } else {
            lambda_k(k1).sqrt() * psi_k(k1, unit_grid[j])
        }
    });
    let g_true = {
        let mut g = DMatrix::zeros(n_points, n_points);
        for k in 1..=k_truth {
            let lk = lambda_k(k);
            for j in 0..n_points {
                let pj = psi_k(k, unit_grid[j]);
                for j2 in 0..n_points {
                    g[(j, j2)] += lk * pj * psi_k(k, unit_grid[j2]);
                }
            }
        }
        g
    };
    Ok(GeneratorContext::Fourier {
        phi,
        mean,
        sigma,
        c_true,
        lambda_true,
        phi_truth,
        g_true,
    })
}

fn spatial_context(config: &SimConfig, h_grid: &[f64]) -> Result<GeneratorContext> {
    let model = config
        .model
        .ok_or_else(|| CovError::InvalidConfig("spatial generator requires a model".into()))?;
    let s = effective_range(&model, 0.05)?;
    let n_points = config.n_points;
    let orig_grid: Vec<f64> = (1..=n_points)
        .map(|j| j as f64 * s / n_points as f64)
        .collect();
    let unit_grid: Vec<f64> = (1..=n_points).map(|j| j as f64 / n_points as f64).collect();
    let mean: Vec<f64> = unit_grid.iter().map(|&x| mean_function(x)).collect();
    let shape = config.noise_shape();
    let sigma: Vec<f64> = orig_grid
        .iter()
        .map(|&x| shape.eval(config.sigma_eps, x))
        .collect();
    let c_values: Vec<f64> = h_grid
        .iter()
        .map(|&h| model.eval(s * h))
        .collect::<Result<_>>()?;
    let c_true = CovCurve::new(h_grid.to_vec(), c_values, CurveKind::Model)?;
    let g_true = DMatrix::from_fn(n_points, n_points, |j, j2| {
        model.eval((orig_grid[j] - orig_grid[j2]).abs()).unwrap()
    });
    Ok(GeneratorContext::Spatial {
        model,
        orig_grid,
        effective_range: s,
        mean,
        sigma,
        c_true,
        g_true,
    })
}

impl GeneratorContext {
    fn generate(
        &self,
        config: &SimConfig,
        replicate: usize,
    ) -> Result<(FunctionalDataset, DMatrix<f64>)> {
        let n = config.subjects();
        let n_points = config.n_points;
        let r = replicate as u64;
        let seed = config.seed.expect("validated");
        match self {
            GeneratorContext::Fourier { phi, mean, sigma, .. } => {
                let k_gen = phi.nrows();
                let mut score_rng = substream(seed, domain::FPC_SCORES, r);
                let xi = DMatrix::from_fn(n, k_gen, |_, _| {
                    score_rng.sample::<f64, _>(StandardNormal)
                });
                let z = xi * phi;
                let mut noise_rng = substream(seed, domain::NOISE, r);
                let mut y = z.clone();
                for i in 0..n {
                    for j in 0..n_points {
                        let eps: f64 = noise_rng.sample(StandardNormal);
                        y[(i, j)] += mean[j] + sigma[j] * eps;
                    }
                }
                Ok((FunctionalDataset::new(y, None)?, z))
            }
            GeneratorContext::Spatial {
                model,
                orig_grid,
                effective_range,
                mean,
                sigma,
                ..
            } => {
                let gp_seed = derive_seed(seed, r);
                let z = sample_gp(model, orig_grid, n, gp_seed)?;
                let mut noise_rng = substream(seed, domain::NOISE, r);
                let mut y = z.clone();
                for i in 0..n {
                    for j in 0..n_points {
                        let eps: f64 = noise_rng.sample(StandardNormal);
                        y[(i, j)] += mean[j] + sigma[j] * eps;
                    }
                }
                Ok((
                    FunctionalDataset::new(y, Some((0.0, *effective_range)))?,
                    z,
                ))
            }
        }
    }

    fn truth(&self, z: DMatrix<f64>) -> TruthBundle {
        match self {
            GeneratorContext::Fourier {
                c_true,
                lambda_true,
                phi_truth,
                g_true,
                ..
            } => TruthBundle {
                c_true: c_true.clone(),
                lambda: Some(lambda_true.clone()),
                phi_grid: Some(phi_truth.clone()),
                g_true: g_true.clone(),
                z,
            },
            GeneratorContext::Spatial { c_true, g_true, .. } => TruthBundle {
                c_true: c_true.clone(),
                lambda: None,
                phi_grid: None,
                g_true: g_true.clone(),
                z,
            },
        }
    }
}

/// Generate one Fourier-model replicate with its truth bundle.
pub fn gen_fourier_data(
    config: &SimConfig,
    replicate: usize,
) -> Result<(FunctionalDataset, TruthBundle)> {
    let h_grid = default_h_grid(config.n_points, config.h0);
    let ctx = fourier_context(config, &h_grid)?;
    let (data, z) = ctx.generate(config, replicate)?;
    Ok((data, ctx.truth(z)))
}

/// Generate one spatial-model replicate with its truth bundle.
pub fn gen_spatial_data(
    config: &SimConfig,
    replicate: usize,
) -> Result<(FunctionalDataset, TruthBundle)> {
    let h_grid = default_h_grid(config.n_points, config.h0);
    let ctx = spatial_context(config, &h_grid)?;
    let (data, z) = ctx.generate(config, replicate)?;
    Ok((data, ctx.truth(z)))
}

/// Per-level aggregates of a finished study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelReport {
    /// Confidence level `1 - alpha`.
    pub level: f64,
    /// Coverage of the band centered at the two-stage estimator.
    pub cr_hat: f64,
    /// Coverage of the band centered at the infeasible oracle estimator.
    pub cr_tilde: f64,
    /// Average band width.
    pub wd: f64,
}

/// Aggregated Monte-Carlo report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub amse_c: f64,
    pub amse_c_tilde: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amse_lambda: Option<f64>,
    pub amse_g: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amse_phi: Option<f64>,
    /// Companion value without the sign alignment applied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amse_phi_unaligned: Option<f64>,
    pub levels: Vec<LevelReport>,
    pub reps_done: usize,
    pub reps_failed: usize,
    pub failures: Vec<String>,
    pub seed: u64,
    /// Mean selected knot count across replicates.
    pub mean_interior_knots: f64,
}

impl SimReport {
    /// CSV table in the column layout of the study reports:
    /// `AMSE_Chat,AMSE_Ctilde,CR95,WD95,CR99,WD99`.
    pub fn to_table_csv(&self) -> String {
        let find = |alpha: f64| {
            self.levels
                .iter()
                .find(|l| (l.level - (1.0 - alpha)).abs() < 1e-9)
        };
        let fmt = |l: Option<&LevelReport>, f: fn(&LevelReport) -> f64| {
            l.map_or("NA".to_string(), |l| format!("{:.6}", f(l)))
        };
        let l95 = find(0.05);
        let l99 = find(0.01);
        let mut out = String::from("AMSE_Chat,AMSE_Ctilde,CR95,WD95,CR99,WD99\n");
        out.push_str(&format!(
            "{:.6},{:.6},{},{},{},{}\n",
            self.amse_c,
            self.amse_c_tilde,
            fmt(l95, |l| l.cr_hat),
            fmt(l95, |l| l.wd),
            fmt(l99, |l| l.cr_hat),
            fmt(l99, |l| l.wd),
        ));
        out
    }
}

struct ReplicateOutcome {
    amse_c: f64,
    amse_c_tilde: f64,
    amse_lambda: Option<f64>,
    amse_g: f64,
    amse_phi: Option<(f64, f64)>,
    /// Per alpha level: coverage of the C_hat band, coverage of the
    /// C_tilde-centered band, width.
    levels: Vec<(bool, bool, f64)>,
    interior_knots: usize,
}

/// Containment check with round-off slack: exact zero-width bands around a
/// numerically-zero estimate still count as covering an exactly-zero truth.
fn covers_with_slack(band: &BandResult, truth: &CovCurve) -> bool {
    let scale = band
        .center
        .values
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * (1.0 + scale);
    band.lower
        .values
        .iter()
        .zip(&band.upper.values)
        .zip(&truth.values)
        .all(|((lo, up), v)| *lo - tol <= *v && *v <= *up + tol)
}

fn score_replicate(
    config: &SimConfig,
    ctx: &GeneratorContext,
    replicate: usize,
) -> Result<ReplicateOutcome> {
    let seed = config.seed.expect("validated");
    let (data, z) = ctx.generate(config, replicate)?;
    let truth = ctx.truth(z);
    let opts = config.pipeline_options(derive_seed(seed, replicate as u64));
    let out: PipelineOutput = run_pipeline(&data, &opts)?;
    let n_points = config.n_points;
    let quad_points = n_points;

    let c_tilde = oracle_covariance(&truth.z, &out.h_grid, quad_points)?;

    let mse_curve = |curve: &CovCurve| -> f64 {
        curve
            .values
            .iter()
            .zip(&truth.c_true.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / curve.values.len() as f64
    };
    let amse_c = mse_curve(&out.c_hat);
    let amse_c_tilde = mse_curve(&c_tilde);

    // Surface error on the observation grid.
    let design = crate::bspline::DesignMatrix::on_grid(out.fits.basis(), n_points)?;
    let surface = crate::covest::covariance_surface(&out.fits);
    let g_hat = design.matrix() * surface.beta() * design.matrix().transpose();
    let amse_g = (&g_hat - &truth.g_true).map(|v| v * v).sum() / (n_points * n_points) as f64;

    // Eigen-metrics need the truth spectrum (Fourier generator only).
    let (amse_lambda, amse_phi) = match (&out.fpca, &truth.lambda, &truth.phi_grid) {
        (Some(fpca), Some(lambda_true), Some(phi_true)) => {
            let kappa = fpca.kappa;
            let lam_err = (0..kappa)
                .map(|k| {
                    let t = lambda_true.get(k).copied().unwrap_or(0.0);
                    (fpca.lambda[k] - t).powi(2)
                })
                .sum::<f64>()
                / kappa as f64;
            let phi_hat = design.matrix() * fpca.phi_coeffs.columns(0, kappa);
            let mut aligned = 0.0;
            let mut unaligned = 0.0;
            for k in 0..kappa {
                let mut dot = 0.0;
                for j in 0..n_points {
                    dot += phi_hat[(j, k)] * phi_true[(j, k)];
                }
                let sign = if dot < 0.0 { -1.0 } else { 1.0 };
                for j in 0..n_points {
                    let t = phi_true[(j, k)];
                    aligned += (sign * phi_hat[(j, k)] - t).powi(2);
                    unaligned += (phi_hat[(j, k)] - t).powi(2);
                }
            }
            let denom = (n_points * kappa) as f64;
            (Some(lam_err), Some((aligned / denom, unaligned / denom)))
        }
        _ => (None, None),
    };

    let mut levels = Vec::with_capacity(config.alpha.len());
    for &alpha in &config.alpha {
        let q = critical_value(&out.zeta, &out.xi, alpha)?;
        let band_hat = scb(&out.c_hat, &out.xi, q, data.n_subjects(), 1.0 - alpha)?;
        let band_tilde = scb(&c_tilde, &out.xi, q, data.n_subjects(), 1.0 - alpha)?;
        levels.push((
            covers_with_slack(&band_hat, &truth.c_true),
            covers_with_slack(&band_tilde, &truth.c_true),
            band_hat.average_width(),
        ));
    }

    Ok(ReplicateOutcome {
        amse_c,
        amse_c_tilde,
        amse_lambda,
        amse_g,
        amse_phi,
        levels,
        interior_knots: out.interior_knots,
    })
}

/// Run the full Monte-Carlo study described by `config`.
///
/// Individual replicate failures are recorded and excluded; more than 5%
/// failures aborts the study.
pub fn run_replications(config: &SimConfig) -> Result<SimReport> {
    config
        .validate()
        .map_err(|errors| CovError::InvalidConfig(errors.join("; ")))?;
    let h_grid = default_h_grid(config.n_points, config.h0);
    let ctx = match config.generator {
        Generator::Fourier => fourier_context(config, &h_grid)?,
        Generator::Spatial => spatial_context(config, &h_grid)?,
    };

    let outcomes: Vec<std::result::Result<ReplicateOutcome, String>> = (0..config.reps)
        .into_par_iter()
        .map(|r| score_replicate(config, &ctx, r).map_err(|e| format!("replicate {r}: {e}")))
        .collect();

    let mut ok = Vec::with_capacity(config.reps);
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(o) => ok.push(o),
            Err(msg) => failures.push(msg),
        }
    }
    if failures.len() * 20 > config.reps {
        return Err(CovError::TooManyFailures {
            failed: failures.len(),
            total: config.reps,
            first: failures[0].clone(),
        });
    }
    if ok.is_empty() {
        return Err(CovError::TooManyFailures {
            failed: failures.len(),
            total: config.reps,
            first: failures
                .first()
                .cloned()
                .unwrap_or_else(|| "no replicates".into()),
        });
    }

    let m = ok.len() as f64;
    let mean_of = |f: &dyn Fn(&ReplicateOutcome) -> f64| ok.iter().map(|o| f(o)).sum::<f64>() / m;
    let amse_c = mean_of(&|o| o.amse_c);
    let amse_c_tilde = mean_of(&|o| o.amse_c_tilde);
    let amse_g = mean_of(&|o| o.amse_g);
    let amse_lambda = ok
        .iter()
        .map(|o| o.amse_lambda)
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / m);
    let (amse_phi, amse_phi_unaligned) = match ok
        .iter()
        .map(|o| o.amse_phi)
        .collect::<Option<Vec<(f64, f64)>>>()
    {
        Some(v) => (
            Some(v.iter().map(|(a, _)| a).sum::<f64>() / m),
            Some(v.iter().map(|(_, u)| u).sum::<f64>() / m),
        ),
        None => (None, None),
    };
    let levels = config
        .alpha
        .iter()
        .enumerate()
        .map(|(idx, &alpha)| LevelReport {
            level: 1.0 - alpha,
            cr_hat: ok.iter().filter(|o| o.levels[idx].0).count() as f64 / m,
            cr_tilde: ok.iter().filter(|o| o.levels[idx].1).count() as f64 / m,
            wd: ok.iter().map(|o| o.levels[idx].2).sum::<f64>() / m,
        })
        .collect();
    let mean_interior_knots = mean_of(&|o| o.interior_knots as f64);

    failures.truncate(10);
    Ok(SimReport {
        amse_c,
        amse_c_tilde,
        amse_lambda,
        amse_g,
        amse_phi,
        amse_phi_unaligned,
        levels,
        reps_done: ok.len(),
        reps_failed: config.reps - ok.len(),
        failures,
        seed: config.seed.expect("validated"),
        mean_interior_knots,
    })
}
