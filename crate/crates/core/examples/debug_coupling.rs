// Experiment: how do WD/CR respond to the zeta coupling convention?
use covband_core::band::{critical_value, scb};
use covband_core::covest::oracle_covariance;
use covband_core::fpca::lag_couplings;
use covband_core::pipeline::{run_pipeline, PipelineOptions};
use covband_core::rng::{derive_seed, domain, substream};
use covband_core::simharness::{fourier_true_covariance, gen_fourier_data, Generator, SimConfig};
use covband_core::bspline::KnotMethod;
use covband_core::covest::{CovCurve, CurveKind};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

fn main() {
    for &n_points in &[50usize, 200] {
        let config = SimConfig {
            generator: Generator::Fourier,
            model: None,
            n: None,
            n_points,
            sigma_eps: 0.1,
            hetero: false,
            hetero_shape: None,
            knots: KnotMethod::Formula,
            knot_c: 0.8,
            knot_gamma: 0.375,
            p: 4,
            h0: 0.5,
            reps: 200,
            alpha: vec![0.05],
            fve: 0.95,
            zeta_reps: 1000,
            truncation: 1000,
            seed: Some(13),
        };
        let results: Vec<(bool, f64, bool, f64)> = (0..config.reps)
            .into_par_iter()
            .map(|r| {
                let (data, truth) = gen_fourier_data(&config, r).unwrap();
                let opts = PipelineOptions {
                    seed: derive_seed(13, r as u64),
                    ..Default::default()
                };
                let out = run_pipeline(&data, &opts).unwrap();
                let fpca = out.fpca.as_ref().unwrap();
                let kappa = fpca.kappa;
                let couplings = lag_couplings(fpca, &out.h_grid, n_points).unwrap();
                // Independent coupling: eps_{kk'} fresh for every ordered pair.
                let reps = 1000;
                let n_lags = out.h_grid.len();
                let mut zeta_ind = DMatrix::zeros(reps, n_lags);
                for s in 0..reps {
                    let mut rng = substream(opts.seed, domain::ZETA, s as u64);
                    let mut eps_off = vec![0.0; kappa * kappa];
                    for k in 0..kappa {
                        for k2 in 0..kappa {
                            if k != k2 {
                                eps_off[k * kappa + k2] = rng.sample::<f64, _>(StandardNormal);
                            }
                        }
                    }
                    let eps_diag: Vec<f64> =
                        (0..kappa).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    for (j, a) in couplings.iter().enumerate() {
                        let mut z = 0.0;
                        for k in 0..kappa {
                            for k2 in 0..kappa {
                                if k != k2 {
                                    z += eps_off[k * kappa + k2] * a[(k, k2)];
                                }
                            }
                            let excess = (fpca.fourth_moments[k] - 1.0).max(0.0);
                            z += eps_diag[k] * a[(k, k)] * excess.sqrt();
                        }
                        zeta_ind[(s, j)] = z;
                    }
                }
                let truth_curve = CovCurve::new(
                    out.h_grid.clone(),
                    out.h_grid.iter().map(|&h| fourier_true_covariance(h)).collect(),
                    CurveKind::Model,
                )
                .unwrap();
                let n = data.n_subjects();
                let q_sym = critical_value(&out.zeta, &out.xi, 0.05).unwrap();
                let band_sym = scb(&out.c_hat, &out.xi, q_sym, n, 0.95).unwrap();
                let q_ind = critical_value(&zeta_ind, &out.xi, 0.05).unwrap();
                let band_ind = scb(&out.c_hat, &out.xi, q_ind, n, 0.95).unwrap();
                let _ = oracle_covariance(&truth.z, &out.h_grid, n_points);
                (
                    band_sym.covers(&truth_curve).unwrap(),
                    band_sym.average_width(),
                    band_ind.covers(&truth_curve).unwrap(),
                    band_ind.average_width(),
                )
            })
            .collect();
        let m = results.len() as f64;
        let cr_sym = results.iter().filter(|r| r.0).count() as f64 / m;
        let wd_sym = results.iter().map(|r| r.1).sum::<f64>() / m;
        let cr_ind = results.iter().filter(|r| r.2).count() as f64 / m;
        let wd_ind = results.iter().map(|r| r.3).sum::<f64>() / m;
        println!(
            "N={n_points}: symmetrized CR95={cr_sym:.3} WD95={wd_sym:.4} | independent CR95={cr_ind:.3} WD95={wd_ind:.4}"
        );
    }
}
