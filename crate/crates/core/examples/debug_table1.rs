use covband_core::bspline::KnotMethod;
use covband_core::simharness::{run_replications, Generator, SimConfig};

fn main() {
    let config = SimConfig {
        generator: Generator::Fourier,
        model: None,
        n: None,
        n_points: 50,
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
        seed: Some(20_260_810),
    };
    let report = run_replications(&config).unwrap();
    println!("{}", serde_json::to_string_pretty(&report).unwrap());

    // True variance function at a few lags, Theorem-form, for reference.
    let lambda = |k: usize| 0.25f64.powi((k / 2) as i32);
    let psi = |k: usize, x: f64| {
        let f = ((k + 1) / 2) as f64;
        let arg = 2.0 * f * std::f64::consts::PI * x;
        if k % 2 == 1 {
            std::f64::consts::SQRT_2 * arg.cos()
        } else {
            std::f64::consts::SQRT_2 * arg.sin()
        }
    };
    let coupling = |k: usize, k2: usize, h: f64| {
        let m = 4000;
        let step = (1.0 - h) / m as f64;
        let mut acc = 0.0;
        for t in 0..=m {
            let x = t as f64 * step;
            let w = if t == 0 || t == m { 0.5 } else { 1.0 };
            acc += w * lambda(k).sqrt() * psi(k, x) * lambda(k2).sqrt() * psi(k2, x + h);
        }
        acc * step / (1.0 - h)
    };
    for &h in &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5] {
        let kmax = 12;
        let mut xi_theorem = 0.0;
        let mut c_true = 0.0;
        let mut sum_sq = 0.0;
        for k in 1..=kmax {
            c_true += coupling(k, k, h);
            for k2 in 1..=kmax {
                let a = coupling(k, k2, h);
                let a2 = coupling(k2, k, h);
                xi_theorem += a * a + a * a2;
                sum_sq += a * a;
            }
        }
        let xi_plugin_population = sum_sq + c_true * c_true;
        println!(
            "h={h:.1}: C={c_true:.4}, Xi_theorem={xi_theorem:.4}, Xi_plugin_pop={xi_plugin_population:.4}"
        );
    }
}
