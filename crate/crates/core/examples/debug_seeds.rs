use covband_core::bspline::KnotMethod;
use covband_core::simharness::{run_replications, Generator, SimConfig};

fn main() {
    for seed in [11u64, 21, 31, 41, 51, 61, 71] {
        let config = SimConfig {
            generator: Generator::Fourier,
            model: None,
            n: None,
            n_points: 200,
            sigma_eps: 0.1,
            hetero: false,
            hetero_shape: None,
            knots: KnotMethod::Formula,
            knot_c: 0.8,
            knot_gamma: 0.375,
            p: 4,
            h0: 0.5,
            reps: 200,
            alpha: vec![0.05, 0.01],
            fve: 0.95,
            zeta_reps: 1000,
            truncation: 1000,
            seed: Some(seed),
        };
        let r = run_replications(&config).unwrap();
        println!(
            "seed {seed}: AMSE_C={:.4} AMSE_Ct={:.4} CR95={:.3} WD95={:.4} CR99={:.3} WD99={:.3}",
            r.amse_c, r.amse_c_tilde, r.levels[0].cr_hat, r.levels[0].wd,
            r.levels[1].cr_hat, r.levels[1].wd
        );
    }
}
