use choicenet::cholesky::{
    cholesky_transform, empirical_correlation, mean_and_variance, sample_correlated_weights, CholeskyInputs,
};
use choicenet::{RngState, Tape, Tensor};

const RHOS: [f64; 5] = [-0.9, -0.5, 0.0, 0.5, 0.9];

fn draws(rho: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = RngState::new(seed);
    let (mut ws, mut ts) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let w = rng.normal(2.0, 1.0);
        let z = rng.normal(0.0, 1.0);
        let t = cholesky_transform(&CholeskyInputs { w, z, rho, mu_w: 2.0, sigma_w: 1.0, sigma_z: 1.0 }).unwrap();
        ws.push(w);
        ts.push(t);
    }
    (ws, ts)
}

#[test]
fn transformed_weight_moments_over_rho_grid() {
    for (i, &rho) in RHOS.iter().enumerate() {
        let (ws, ts) = draws(rho, 1_000_000, 100 + i as u64);
        let (m, v) = mean_and_variance(&ts);
        let c = empirical_correlation(&ws, &ts).unwrap();
        assert!((m - 2.0 * rho).abs() <= 0.01, "rho {rho}: mean {m}");
        let target = 1.0 - rho * rho;
        assert!((v - target).abs() <= 0.02 * target, "rho {rho}: variance {v}");
        assert!((c - rho).abs() <= 0.01, "rho {rho}: correlation {c}");
    }
}

#[test]
fn variance_shrinks_as_rho_approaches_one() {
    let mut last = f64::INFINITY;
    for rho in [0.0, 0.5, 0.9, 0.99, 0.999] {
        let (_, ts) = draws(rho, 200_000, 7);
        let (_, v) = mean_and_variance(&ts);
        assert!(v < last, "rho {rho}: {v} !< {last}");
        last = v;
    }
    assert!(last < 0.005);
    let (ws, ts) = draws(1.0, 1000, 8);
    assert!(ts.iter().all(|&t| t == 2.0));
    assert!(ws.iter().any(|&w| w != 2.0));
}

#[test]
fn correlation_survives_an_affine_map() {
    let (q, d) = (32, 4);
    let rhos = [1.0, 0.8, 0.3, -0.6];
    let mut rng = RngState::new(42);
    let h: Vec<f64> = (0..q).map(|_| rng.normal(0.0, 1.0)).collect();
    let mu = Tensor::new(vec![q, d], (0..q * d).map(|_| rng.normal(0.0, 0.5)).collect()).unwrap();
    let sigma = Tensor::new(vec![q, d], (0..q * d).map(|_| rng.uniform_range(0.2, 1.0)).collect()).unwrap();
    // Exact preservation after summing over Q needs sigma_z proportional to
    // sigma elementwise (the block initializes both to the same constant).
    let sigma_z = sigma.map(|s| 0.5 * s);

    let n = 100_000;
    // outputs[k][e] holds the n samples of (W_k^T h)_e.
    let mut outputs = vec![vec![Vec::with_capacity(n); d]; rhos.len()];
    let mut base = vec![Vec::with_capacity(n); d];
    for _ in 0..n {
        let mut tape = Tape::new();
        let (m, s, sz) = (tape.constant(mu.clone()), tape.constant(sigma.clone()), tape.constant(sigma_z.clone()));
        let rv: Vec<_> = rhos.iter().map(|&r| tape.scalar(r)).collect();
        let set = sample_correlated_weights(&mut tape, m, s, sz, &rv, 0.95, &mut rng).unwrap();
        let project = |w: &Tensor, e: usize| (0..q).map(|j| h[j] * w.get2(j, e)).sum::<f64>();
        let w_star = tape.value(set.base_sample);
        for e in 0..d {
            base[e].push(project(w_star, e));
        }
        for (k, &t) in set.tilde.iter().enumerate() {
            let w = tape.value(t);
            for e in 0..d {
                outputs[k][e].push(project(w, e));
            }
        }
    }
    for (k, &rho) in rhos.iter().enumerate().skip(1) {
        for e in 0..d {
            let c = empirical_correlation(&base[e], &outputs[k][e]).unwrap();
            assert!((c - rho).abs() <= 0.02, "k {k}, output {e}: {c} vs {rho}");
        }
    }
}
