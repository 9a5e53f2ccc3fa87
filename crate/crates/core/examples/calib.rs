//! Scratch calibration run (not part of the test suite).
use icdeep_core::em::{fit, FitOptions};
use icdeep_core::simulate::{generate, observations, SimConfig};

fn main() {
    let mut b1 = Vec::new();
    let mut b2 = Vec::new();
    for seed in 0..24u64 {
        let mut cfg = SimConfig::for_case(1, 500, 0.0, 1000 + seed).unwrap();
        cfg.phi_scale = 0.0;
        let data = observations(&generate(&cfg).unwrap().records);
        let mut opts = FitOptions::new(0.0);
        opts.em.tol = 1e-6;
        opts.em.max_iters = 500;
        let res = fit(&data, &opts).unwrap();
        println!(
            "seed {seed}: beta = ({:+.4}, {:+.4}) iters {} conv {} ll {:.3}",
            res.params.beta[0], res.params.beta[1], res.n_iters, res.converged, res.final_loglik()
        );
        b1.push(res.params.beta[0]);
        b2.push(res.params.beta[1]);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    println!("beta1: mean {:+.4} sd {:.4}", mean(&b1), sd(&b1));
    println!("beta2: mean {:+.4} sd {:.4}", mean(&b2), sd(&b2));
}
