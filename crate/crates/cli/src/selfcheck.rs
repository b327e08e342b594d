//! Statistical and gradient checks of the core library, shared by the
//! `selfcheck` subcommand and the acceptance suite.

use std::time::Instant;

use choicenet::cholesky::{
    cholesky_transform, empirical_correlation, mean_and_variance, sample_correlated_weights, CholeskyInputs,
};
use choicenet::gradcheck::{grad_check, grad_check_many};
use choicenet::losses::{
    baseline_regression_loss, classification_mixture_loss_with_noise, mdn_nll, regression_mixture_loss,
    sample_logit_noise, softmax_cross_entropy, tukey_biweight_loss, BaselineKind, ClassificationLossConfig,
    RegressionLossConfig, TUKEY_C,
};
use choicenet::rng::sample_standard_normal;
use choicenet::{MixtureBatch, Result, RngState, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Check {
    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        format!("{status} {}: {} ({:.1} s)", self.name, self.detail, self.seconds)
    }
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let started = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check { name: name.to_string(), passed, detail, seconds: started.elapsed().as_secs_f64() }
}

pub const RHO_GRID: [f64; 5] = [-0.9, -0.5, 0.0, 0.5, 0.9];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub rho: f64,
    pub mean: f64,
    pub variance: f64,
    pub correlation: f64,
}

/// Moments of the transformed weight for `mu_w = 2`, `sigma_w = sigma_z = 1`.
pub fn transformed_moments(rho: f64, samples: usize, seed: u64) -> Result<Moments> {
    let mut rng = RngState::new(seed);
    let (mut ws, mut ts) = (Vec::with_capacity(samples), Vec::with_capacity(samples));
    for _ in 0..samples {
        let w = rng.normal(2.0, 1.0);
        let z = rng.normal(0.0, 1.0);
        ts.push(cholesky_transform(&CholeskyInputs { w, z, rho, mu_w: 2.0, sigma_w: 1.0, sigma_z: 1.0 })?);
        ws.push(w);
    }
    let (mean, variance) = mean_and_variance(&ts);
    Ok(Moments { rho, mean, variance, correlation: empirical_correlation(&ws, &ts)? })
}

/// Mean within 0.01 of `2 rho`, variance within 2% of `1 - rho^2` and
/// correlation within 0.01 of `rho`, over the whole grid.
pub fn check_transform_moments(samples: usize, seed: u64) -> Check {
    timed("cholesky moments", || {
        let mut worst = (0.0f64, 0.0f64, 0.0f64);
        let mut ok = true;
        for (i, &rho) in RHO_GRID.iter().enumerate() {
            let m = transformed_moments(rho, samples, seed + i as u64)?;
            let target = 1.0 - rho * rho;
            let errs = ((m.mean - 2.0 * rho).abs(), (m.variance - target).abs() / target, (m.correlation - rho).abs());
            ok &= errs.0 <= 0.01 && errs.1 <= 0.02 && errs.2 <= 0.01;
            worst = (worst.0.max(errs.0), worst.1.max(errs.1), worst.2.max(errs.2));
        }
        Ok((
            ok,
            format!(
                "max |mean err| {:.4}, max rel var err {:.4}, max |corr err| {:.4} over {} samples",
                worst.0, worst.1, worst.2, samples
            ),
        ))
    })
}

/// Per-output correlation between `W_*^T h` and `W_k^T h` for a random
/// `q x d` layer, one row per non-target `rho`.
pub fn affine_correlations(q: usize, d: usize, rhos: &[f64], draws: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = RngState::new(seed);
    let h: Vec<f64> = (0..q).map(|_| rng.normal(0.0, 1.0)).collect();
    let mu = Tensor::new(vec![q, d], (0..q * d).map(|_| rng.normal(0.0, 0.5)).collect())?;
    let sigma = Tensor::new(vec![q, d], (0..q * d).map(|_| rng.uniform_range(0.2, 1.0)).collect())?;
    // Exact preservation after the sum over inputs needs sigma_z proportional
    // to sigma elementwise.
    let sigma_z = sigma.map(|s| 0.5 * s);
    let mut base = vec![Vec::with_capacity(draws); d];
    let mut outputs = vec![vec![Vec::with_capacity(draws); d]; rhos.len()];
    let project = |w: &Tensor, e: usize| (0..q).map(|j| h[j] * w.get2(j, e)).sum::<f64>();
    for _ in 0..draws {
        let mut tape = Tape::new();
        let (m, s, sz) = (tape.constant(mu.clone()), tape.constant(sigma.clone()), tape.constant(sigma_z.clone()));
        let mut rv = vec![tape.scalar(1.0)];
        rv.extend(rhos.iter().map(|&r| tape.scalar(r)));
        let set = sample_correlated_weights(&mut tape, m, s, sz, &rv, 0.99, &mut rng)?;
        let w_star = tape.value(set.base_sample);
        for (e, col) in base.iter_mut().enumerate() {
            col.push(project(w_star, e));
        }
        for (k, &t) in set.tilde[1..].iter().enumerate() {
            let w = tape.value(t);
            for (e, col) in outputs[k].iter_mut().enumerate() {
                col.push(project(w, e));
            }
        }
    }
    outputs
        .iter()
        .map(|per_k| per_k.iter().zip(&base).map(|(o, b)| empirical_correlation(b, o)).collect())
        .collect()
}

pub fn check_affine_preservation(draws: usize, seed: u64) -> Check {
    timed("affine correlation preservation", || {
        let rhos = [0.8, 0.3, -0.6];
        let corr = affine_correlations(32, 4, &rhos, draws, seed)?;
        let worst = corr
            .iter()
            .zip(rhos)
            .flat_map(|(row, r)| row.iter().map(move |c| (c - r).abs()))
            .fold(0.0f64, f64::max);
        Ok((worst <= 0.02, format!("max |corr - rho| {worst:.4} over Q=32, D=4, {draws} draws")))
    })
}

fn mixture_batch(t: &mut Tape, v: &[Var], k: usize, with_rho: bool) -> Result<MixtureBatch> {
    let pi = t.softmax(v[0])?;
    let off = if with_rho { 2 } else { 1 };
    let mut sigma = Vec::with_capacity(k);
    for &ls in &v[off + k..off + 2 * k] {
        sigma.push(t.exp(ls)?);
    }
    Ok(MixtureBatch { pi, rho: with_rho.then(|| v[1]), mu: v[off..off + k].to_vec(), sigma })
}

fn one_hot(n: usize, c: usize, rng: &mut RngState) -> Tensor {
    let mut y = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let l = rng.below(c);
        y.data_mut()[i * c + l] = 1.0;
    }
    y
}

/// Finite-difference checks of every training objective on `configs` random
/// small problems each. Returns the worst relative error per objective.
pub fn loss_gradient_errors(configs: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut rng = RngState::new(seed);
    let mut worst = vec![
        ("regression mixture", 0.0f64),
        ("mixture nll", 0.0),
        ("classification mixture", 0.0),
        ("l2", 0.0),
        ("l1", 0.0),
        ("tukey", 0.0),
        ("leaky tukey", 0.0),
        ("cross entropy", 0.0),
    ];
    for _ in 0..configs {
        let (n, k, d) = (1 + rng.below(4), 1 + rng.below(3), 1 + rng.below(3));
        let pi_logits = sample_standard_normal(&mut rng, &[n, k]);
        let rho = sample_standard_normal(&mut rng, &[n, k]);
        let mu: Vec<Tensor> = (0..k).map(|_| sample_standard_normal(&mut rng, &[n, d])).collect();
        let log_var: Vec<Tensor> =
            (0..k).map(|_| sample_standard_normal(&mut rng, &[n, d]).map(|v| 0.3 * v)).collect();
        let y = sample_standard_normal(&mut rng, &[n, d]);
        let mut points = vec![pi_logits.clone(), rho.clone()];
        points.extend(mu.iter().cloned());
        points.extend(log_var.iter().cloned());

        let cfg = RegressionLossConfig { lambda1: 1.0, lambda2: 1.0, lambda_kl: 0.5 };
        let r = grad_check_many(
            |t, v| {
                let out = mixture_batch(t, v, k, true)?;
                let yv = t.constant(y.clone());
                regression_mixture_loss(t, &out, yv, &cfg)
            },
            &points,
            STEP,
            TOL,
        )?;
        worst[0].1 = worst[0].1.max(r.max_rel_error);

        let r = grad_check_many(
            |t, v| {
                let out = mixture_batch(t, v, k, true)?;
                let yv = t.constant(y.clone());
                mdn_nll(t, out.pi, &out.mu, &out.sigma, yv)
            },
            &points,
            STEP,
            TOL,
        )?;
        worst[1].1 = worst[1].1.max(r.max_rel_error);

        let c = d.max(2);
        let labels = one_hot(n, c, &mut rng);
        let eps = sample_logit_noise(k, n, c, &mut rng);
        let mut cpoints = vec![pi_logits, rho];
        cpoints.extend((0..k).map(|_| sample_standard_normal(&mut rng, &[n, c])));
        cpoints.extend((0..k).map(|_| sample_standard_normal(&mut rng, &[n, c]).map(|v| 0.3 * v - 1.0)));
        let ccfg = ClassificationLossConfig { lambda_reg: 0.05, lambda_kl: 0.5 };
        let r = grad_check_many(
            |t, v| {
                let out = mixture_batch(t, v, k, true)?;
                classification_mixture_loss_with_noise(t, &out, &labels, &ccfg, &eps)
            },
            &cpoints,
            STEP,
            TOL,
        )?;
        worst[2].1 = worst[2].1.max(r.max_rel_error);

        // Residuals spread out so no point sits on a kink of |.| or the MAD.
        let m = 3 + rng.below(6);
        let target = sample_standard_normal(&mut rng, &[m, d]);
        let pred = sample_standard_normal(&mut rng, &[m, d]).map(|v| 3.0 * v);
        for (slot, kind) in [(3, BaselineKind::L2), (4, BaselineKind::L1)] {
            let r = grad_check(
                |t, p| {
                    let yv = t.constant(target.clone());
                    baseline_regression_loss(t, kind, p, yv)
                },
                &pred,
                1e-6,
                TOL,
            )?;
            worst[slot].1 = worst[slot].1.max(r.max_rel_error);
        }
        for (slot, slope) in [(5, 0.0), (6, 0.1)] {
            let r = grad_check(
                |t, p| {
                    let yv = t.constant(target.clone());
                    tukey_biweight_loss(t, p, yv, TUKEY_C, slope)
                },
                &pred,
                1e-6,
                TOL,
            )?;
            worst[slot].1 = worst[slot].1.max(r.max_rel_error);
        }
        let logits = sample_standard_normal(&mut rng, &[n, c]);
        let r = grad_check(|t, l| softmax_cross_entropy(t, l, &labels), &logits, STEP, TOL)?;
        worst[7].1 = worst[7].1.max(r.max_rel_error);
    }
    Ok(worst)
}

pub fn check_loss_gradients(configs: usize, seed: u64) -> Check {
    timed("loss gradients", || {
        let worst = loss_gradient_errors(configs, seed)?;
        let ok = worst.iter().all(|&(_, e)| e < 1e-4);
        let (name, e) = worst.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
        Ok((ok, format!("{} objectives x {configs} configs, worst rel err {e:.2e} ({name})", worst.len())))
    })
}

/// Composite of the tape primitives on random shapes.
pub fn check_primitive_gradients(cases: usize, seed: u64) -> Check {
    timed("tape primitives", || {
        let mut rng = RngState::new(seed);
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let (n, m) = (1 + rng.below(4), 1 + rng.below(4));
            let a = sample_standard_normal(&mut rng, &[n, m]);
            let b = sample_standard_normal(&mut rng, &[m, n]).map(|v| v.abs() + 0.5);
            let r = grad_check_many(
                |t, v| {
                    let p = t.matmul(v[0], v[1])?;
                    let th = t.tanh(p)?;
                    let sm = t.softmax(th)?;
                    let lb = t.log(v[1])?;
                    let sq = t.sqrt(v[1])?;
                    let q = t.div(lb, sq)?;
                    let lse = t.logsumexp(q)?;
                    let e = t.exp(sm)?;
                    let s1 = t.mean(e)?;
                    let s2 = t.sum(lse)?;
                    let s3 = t.mul(s1, s2)?;
                    t.add(s3, s2)
                },
                &[a, b],
                1e-5,
                1e-4,
            )?;
            worst = worst.max(r.max_rel_error);
        }
        Ok((worst < 1e-4, format!("{cases} random compositions, worst rel err {worst:.2e}")))
    })
}

/// Everything `choicenet selfcheck` runs, at full size.
pub fn run_all() -> Vec<Check> {
    vec![
        check_primitive_gradients(100, 1),
        check_loss_gradients(20, 2),
        check_transform_moments(1_000_000, 3),
        check_affine_preservation(100_000, 4),
    ]
}
