//! The Cholesky Block: a mixture output head whose component means come from
//! weight matrices correlated with a shared target weight matrix.
//!
//! Per optimization step one `W_* ~ N(mu_*, Sigma_*)` and one
//! `Z ~ N(0, Sigma_Z)` are drawn and shared by the whole batch. For a feature
//! row `h`:
//!
//! * `rho_1 = 1`, `rho_k = rho_max * tanh(W_rho h)_k` for `k >= 2`
//! * `pi = softmax(W_pi h)`
//! * `Sigma_0 = exp(W_sigma0 h)` (one base variance per output dimension)
//! * `Sigma_k = (1 - rho_k^2) Sigma_0 + tau_inv`
//! * `mu_k = W_k^T h` with `W_k = cholesky(W_*, Z, rho_k, mu_*, Sigma_*, Sigma_Z)`
//!
//! Because the transform is affine in `(W_*, Z)` for a fixed `rho`, the batch
//! path evaluates `mu_k` as
//! `rho_k (mu_*^T h) + rho_k sqrt(1 - rho_k^2) (A^T h) + (1 - rho_k^2) (Z^T h)`
//! with `A = (Sigma_Z / Sigma_*) (W_* - mu_*)`, which avoids materializing a
//! `Q x D` matrix per example. Tests check it against the per-example route.

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::rng::{sample_standard_normal, RngState};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CholeskyBlockConfig {
    /// Number of mixtures.
    pub k: usize,
    /// Feature dimension, including the appended constant-1 feature.
    pub q: usize,
    /// Output dimension.
    pub d: usize,
    /// Variance floor: the expected variance of the target distribution.
    pub tau_inv: f64,
    pub rho_max: f64,
}

impl CholeskyBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.q == 0 || self.d == 0 {
            return Err(Error::Config(format!(
                "block dimensions must be positive (K={}, Q={}, D={})",
                self.k, self.q, self.d
            )));
        }
        if !(self.tau_inv > 0.0) || !self.tau_inv.is_finite() {
            return Err(Error::Config(format!("tau_inv = {} must be positive", self.tau_inv)));
        }
        if !(self.rho_max > 0.0 && self.rho_max < 1.0) {
            return Err(Error::Config(format!("rho_max = {} must lie in (0, 1)", self.rho_max)));
        }
        Ok(())
    }

    /// Parameters in the head: three `Q x D` weight moments, the two `K x Q`
    /// correlation / mixture-weight maps and the `D x Q` base-variance map.
    pub fn param_count(&self) -> usize {
        3 * self.q * self.d + 2 * self.k * self.q + self.d * self.q
    }
}

pub const PARAM_NAMES: [&str; 6] = [
    "mu_star",
    "log_sigma_star",
    "log_sigma_z",
    "w_rho",
    "w_pi",
    "w_sigma0",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CholeskyBlockParams {
    pub mu_star: Tensor,
    pub log_sigma_star: Tensor,
    pub log_sigma_z: Tensor,
    pub w_rho: Tensor,
    pub w_pi: Tensor,
    pub w_sigma0: Tensor,
}

impl CholeskyBlockParams {
    /// `mu_* ~ N(0, 2/Q)`, both log-stds at `ln 0.1`, head maps `~ N(0, 1/Q)`.
    pub fn init(cfg: &CholeskyBlockConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        let (k, q, d) = (cfg.k, cfg.q, cfg.d);
        let scaled = |rng: &mut RngState, shape: &[usize], var: f64| {
            sample_standard_normal(rng, shape).map(|v| v * var.sqrt())
        };
        Ok(CholeskyBlockParams {
            mu_star: scaled(rng, &[q, d], 2.0 / q as f64),
            log_sigma_star: Tensor::full(&[q, d], 0.1f64.ln()),
            log_sigma_z: Tensor::full(&[q, d], 0.1f64.ln()),
            w_rho: scaled(rng, &[k, q], 1.0 / q as f64),
            w_pi: scaled(rng, &[k, q], 1.0 / q as f64),
            w_sigma0: scaled(rng, &[d, q], 1.0 / q as f64),
        })
    }

    pub fn arrays(&self) -> [&Tensor; 6] {
        [
            &self.mu_star,
            &self.log_sigma_star,
            &self.log_sigma_z,
            &self.w_rho,
            &self.w_pi,
            &self.w_sigma0,
        ]
    }

    pub fn validate(&self, cfg: &CholeskyBlockConfig) -> Result<()> {
        let (k, q, d) = (cfg.k, cfg.q, cfg.d);
        let expected: [&[usize]; 6] = [&[q, d], &[q, d], &[q, d], &[k, q], &[k, q], &[d, q]];
        for ((name, t), shape) in PARAM_NAMES.iter().zip(self.arrays()).zip(expected) {
            if t.shape() != shape {
                return Err(Error::Config(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(Error::Input(format!("{name} contains non-finite values")));
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> BlockVars {
        BlockVars {
            mu_star: tape.leaf(self.mu_star.clone()),
            log_sigma_star: tape.leaf(self.log_sigma_star.clone()),
            log_sigma_z: tape.leaf(self.log_sigma_z.clone()),
            w_rho: tape.leaf(self.w_rho.clone()),
            w_pi: tape.leaf(self.w_pi.clone()),
            w_sigma0: tape.leaf(self.w_sigma0.clone()),
        }
    }

    pub fn to_checkpoint(&self) -> Vec<(String, Tensor)> {
        PARAM_NAMES
            .iter()
            .zip(self.arrays())
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }

    pub fn from_checkpoint(arrays: &[(String, Tensor)], cfg: &CholeskyBlockConfig) -> Result<Self> {
        let get = |name: &str| {
            arrays
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Data(format!("checkpoint lacks array {name}")))
        };
        let p = CholeskyBlockParams {
            mu_star: get("mu_star")?,
            log_sigma_star: get("log_sigma_star")?,
            log_sigma_z: get("log_sigma_z")?,
            w_rho: get("w_rho")?,
            w_pi: get("w_pi")?,
            w_sigma0: get("w_sigma0")?,
        };
        p.validate(cfg).map_err(|e| Error::Data(e.to_string()))?;
        Ok(p)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(path, &self.to_checkpoint())
    }

    pub fn load(path: &std::path::Path, cfg: &CholeskyBlockConfig) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::load(path)?, cfg)
    }
}

/// Block parameters bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub mu_star: Var,
    pub log_sigma_star: Var,
    pub log_sigma_z: Var,
    pub w_rho: Var,
    pub w_pi: Var,
    pub w_sigma0: Var,
}

impl BlockVars {
    pub fn all(&self) -> [Var; 6] {
        [
            self.mu_star,
            self.log_sigma_star,
            self.log_sigma_z,
            self.w_rho,
            self.w_pi,
            self.w_sigma0,
        ]
    }
}

/// Standard-normal draws behind `W_*` and `Z` for one step.
#[derive(Clone, Debug)]
pub struct BlockNoise {
    pub eps_w: Tensor,
    pub eps_z: Tensor,
}

impl BlockNoise {
    pub fn sample(cfg: &CholeskyBlockConfig, rng: &mut RngState) -> Self {
        let shape = [cfg.q, cfg.d];
        let eps_w = sample_standard_normal(rng, &shape);
        let eps_z = sample_standard_normal(rng, &shape);
        BlockNoise { eps_w, eps_z }
    }
}

/// A batch of mixture heads on the tape.
#[derive(Clone, Debug)]
pub struct MixtureBatch {
    /// `[N, K]` mixture weights.
    pub pi: Var,
    /// `[N, K]` correlations; absent for heads without them (MDN).
    pub rho: Option<Var>,
    /// `K` tensors of shape `[N, D]`.
    pub mu: Vec<Var>,
    /// `K` tensors of shape `[N, D]`, variances.
    pub sigma: Vec<Var>,
}

/// One example's mixture, read back from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureOutput {
    pub pi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
}

impl MixtureBatch {
    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn extract(&self, tape: &Tape) -> Vec<MixtureOutput> {
        let pi = tape.value(self.pi);
        let n = pi.rows();
        (0..n)
            .map(|i| MixtureOutput {
                pi: pi.row(i).to_vec(),
                mu: self.mu.iter().map(|&m| tape.value(m).row(i).to_vec()).collect(),
                sigma: self.sigma.iter().map(|&s| tape.value(s).row(i).to_vec()).collect(),
                rho: self
                    .rho
                    .map(|r| tape.value(r).row(i).to_vec())
                    .unwrap_or_default(),
            })
            .collect()
    }
}

fn check_features(tape: &Tape, h: Var, cfg: &CholeskyBlockConfig) -> Result<usize> {
    let hv = tape.value(h);
    if hv.rank() != 2 || hv.shape()[1] != cfg.q {
        return Err(Error::shape("block_forward", format!("features {:?}, Q = {}", hv.shape(), cfg.q)));
    }
    if !hv.all_finite() {
        return Err(Error::Input("non-finite features".into()));
    }
    Ok(hv.shape()[0])
}

/// Forward pass with fresh `W_*`, `Z` draws from `rng`.
pub fn block_forward(
    tape: &mut Tape,
    vars: &BlockVars,
    cfg: &CholeskyBlockConfig,
    h: Var,
    rng: &mut RngState,
) -> Result<MixtureBatch> {
    let noise = BlockNoise::sample(cfg, rng);
    block_forward_with_noise(tape, vars, cfg, h, &noise)
}

/// Forward pass with caller-supplied draws (used to freeze noise).
pub fn block_forward_with_noise(
    tape: &mut Tape,
    vars: &BlockVars,
    cfg: &CholeskyBlockConfig,
    h: Var,
    noise: &BlockNoise,
) -> Result<MixtureBatch> {
    cfg.validate()?;
    let n = check_features(tape, h, cfg)?;

    let sigma_star = tape.exp(vars.log_sigma_star)?;
    let sigma_z = tape.exp(vars.log_sigma_z)?;
    let eps_w = tape.constant(noise.eps_w.clone());
    let eps_z = tape.constant(noise.eps_z.clone());
    let spread = tape.mul(sigma_star, eps_w)?;
    let w_base = tape.add(vars.mu_star, spread)?;
    let z = tape.mul(sigma_z, eps_z)?;

    // A = (sigma_z / sigma_*) (W_* - mu_*)
    let ratio = tape.div(sigma_z, sigma_star)?;
    let centered = tape.sub(w_base, vars.mu_star)?;
    let a = tape.mul(ratio, centered)?;

    let mean_proj = tape.matmul(h, vars.mu_star)?;
    let aux_proj = tape.matmul(h, a)?;
    let z_proj = tape.matmul(h, z)?;

    let w_rho_t = tape.transpose(vars.w_rho)?;
    let rho_logits = tape.matmul(h, w_rho_t)?;
    let w_pi_t = tape.transpose(vars.w_pi)?;
    let pi_logits = tape.matmul(h, w_pi_t)?;
    let pi = tape.softmax(pi_logits)?;
    let w_s0_t = tape.transpose(vars.w_sigma0)?;
    let s0_logits = tape.matmul(h, w_s0_t)?;
    let sigma0 = tape.exp(s0_logits)?;

    let mut rho_cols = Vec::with_capacity(cfg.k);
    let mut mu = Vec::with_capacity(cfg.k);
    let mut sigma = Vec::with_capacity(cfg.k);

    // Target mixture: rho = 1 leaves mu_*^T h and the variance floor.
    rho_cols.push(tape.constant(Tensor::ones(&[n, 1])));
    mu.push(mean_proj);
    sigma.push(tape.constant(Tensor::full(&[n, cfg.d], cfg.tau_inv)));

    for k in 1..cfg.k {
        let logit = tape.column(rho_logits, k)?;
        let t = tape.tanh(logit)?;
        let rho = tape.mul_scalar(t, cfg.rho_max)?;
        let rho2 = tape.square(rho)?;
        let neg = tape.neg(rho2)?;
        let one_minus = tape.add_scalar(neg, 1.0)?;
        let root = tape.sqrt(one_minus)?;
        let cross = tape.mul(rho, root)?;

        let m1 = tape.mul_rows(mean_proj, rho)?;
        let m2 = tape.mul_rows(aux_proj, cross)?;
        let m3 = tape.mul_rows(z_proj, one_minus)?;
        let m12 = tape.add(m1, m2)?;
        mu.push(tape.add(m12, m3)?);

        let s = tape.mul_rows(sigma0, one_minus)?;
        sigma.push(tape.add_scalar(s, cfg.tau_inv)?);
        rho_cols.push(tape.reshape(rho, &[n, 1])?);
    }
    let rho = tape.concat(&rho_cols, 1)?;
    Ok(MixtureBatch {
        pi,
        rho: Some(rho),
        mu,
        sigma,
    })
}

/// Target-mixture mean `mu_*^T h` on the tape.
pub fn block_predict_var(tape: &mut Tape, mu_star: Var, cfg: &CholeskyBlockConfig, h: Var) -> Result<Var> {
    check_features(tape, h, cfg)?;
    tape.matmul(h, mu_star)
}

/// Inference-time prediction: the first mixture's mean, `mu_*^T h`.
///
/// Deterministic; depends only on `mu_*`.
pub fn block_predict(params: &CholeskyBlockParams, cfg: &CholeskyBlockConfig, h: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mu = tape.constant(params.mu_star.clone());
    let hv = tape.constant(h.clone());
    let out = block_predict_var(&mut tape, mu, cfg, hv)?;
    Ok(tape.value(out).clone())
}

/// `(1 - rho^2) * sigma0 + tau_inv`, elementwise.
pub fn mixture_variance(rho: f64, sigma0: &[f64], tau_inv: f64) -> Result<Vec<f64>> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::domain("mixture_variance", format!("|rho| = {} > 1", rho.abs())));
    }
    if !(tau_inv > 0.0) {
        return Err(Error::domain("mixture_variance", "tau_inv must be positive"));
    }
    if sigma0.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::domain("mixture_variance", "base variance must be positive"));
    }
    Ok(sigma0.iter().map(|&s| (1.0 - rho * rho) * s + tau_inv).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cholesky::cholesky_transform_var;
    use crate::gradcheck::grad_check_many;
    use proptest::prelude::*;

    fn cfg(k: usize, q: usize, d: usize) -> CholeskyBlockConfig {
        CholeskyBlockConfig {
            k,
            q,
            d,
            tau_inv: 0.01,
            rho_max: 0.95,
        }
    }

    fn features(rng: &mut RngState, n: usize, q: usize) -> Tensor {
        sample_standard_normal(rng, &[n, q])
    }

    #[test]
    fn single_mixture_is_the_linear_head() {
        let c = cfg(1, 4, 2);
        let mut rng = RngState::new(3);
        let p = CholeskyBlockParams::init(&c, &mut rng).unwrap();
        let h = features(&mut rng, 5, 4);
        let mut t = Tape::new();
        let v = p.bind(&mut t);
        let hv = t.constant(h.clone());
        let out = block_forward(&mut t, &v, &c, hv, &mut rng).unwrap();
        let expected = block_predict(&p, &c, &h).unwrap();
        assert_eq!(t.value(out.mu[0]), &expected);
        for m in out.extract(&t) {
            assert_eq!(m.pi, vec![1.0]);
            assert_eq!(m.rho, vec![1.0]);
            assert_eq!(m.sigma[0], vec![0.01, 0.01]);
        }
    }

    #[test]
    fn zero_pi_weights_give_uniform_mixture() {
        let c = cfg(4, 3, 1);
        let mut rng = RngState::new(4);
        let mut p = CholeskyBlockParams::init(&c, &mut rng).unwrap();
        p.w_pi = Tensor::zeros(&[4, 3]);
        let mut t = Tape::new();
        let v = p.bind(&mut t);
        let hv = t.constant(features(&mut rng, 6, 3));
        let out = block_forward(&mut t, &v, &c, hv, &mut rng).unwrap();
        for m in out.extract(&t) {
            assert!(m.pi.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_correlation_gets_full_base_variance() {
        let c = cfg(2, 3, 2);
        let mut rng = RngState::new(5);
        let mut p = CholeskyBlockParams::init(&c, &mut rng).unwrap();
        p.w_rho = Tensor::zeros(&[2, 3]);
        let h = features(&mut rng, 4, 3);
        let mut t = Tape::new();
        let v = p.bind(&mut t);
        let hv = t.constant(h.clone());
        let out = block_forward(&mut t, &v, &c, hv, &mut rng).unwrap();
        let mut t2 = Tape::new();
        let hv2 = t2.constant(h);
        let w = t2.constant(p.w_sigma0.clone());
        let wt = t2.transpose(w).unwrap();
        let l = t2.matmul(hv2, wt).unwrap();
        let s0 = t2.exp(l).unwrap();
        for (got, base) in t.value(out.sigma[1]).data().iter().zip(t2.value(s0).data()) {
            assert!((got - (base + 0.01)).abs() < 1e-14);
        }
    }

    #[test]
    fn predict_hand_example() {
        let c = cfg(1, 2, 1);
        let mut p = CholeskyBlockParams::init(&c, &mut RngState::new(0)).unwrap();
        p.mu_star = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let h = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(block_predict(&p, &c, &h).unwrap().data(), &[11.0]);
        p.mu_star = Tensor::zeros(&[2, 1]);
        assert_eq!(block_predict(&p, &c, &h).unwrap().data(), &[0.0]);
    }

    #[test]
    fn predict_ignores_noise_parameters() {
        let c = cfg(3, 4, 2);
        let mut rng = RngState::new(8);
        let mut p = CholeskyBlockParams::init(&c, &mut rng).unwrap();
        let h = features(&mut rng, 7, 4);
        let before = block_predict(&p, &c, &h).unwrap();
        p.log_sigma_star = Tensor::full(&[4, 2], 3.0);
        p.log_sigma_z = Tensor::full(&[4, 2], -5.0);
        assert_eq!(block_predict(&p, &c, &h).unwrap(), before);
    }

    #[test]
    fn non_finite_features_are_rejected() {
        let c = cfg(2, 2, 1);
        let mut rng = RngState::new(1);
        let p = CholeskyBlockParams::init(&c, &mut rng).unwrap();
        let mut t = Tape::new();
        let v = p.bind(&mut t);
        let h = t.constant(Tensor::new(vec![1, 2], vec![f64::NAN, 0.0]).unwrap());
        assert!(matches!(block_forward(&mut t, &v, &c, h, &mut rng), Err(Error::Input(_))));
    }

    #[test]
    fn mixture_variance_examples() {
        assert_eq!(mixture_variance(1.0, &[3.0, 0.2], 0.01).unwrap(), vec![0.01, 0.01]);
        assert_eq!(mixture_variance(-1.0, &[3.0], 0.01).unwrap(), vec![0.01]);
        assert!((mixture_variance(0.0, &[0.5], 0.01).unwrap()[0] - 0.51).abs() < 1e-15);
        assert!((mixture_variance(0.6, &[1.0], 0.01).unwrap()[0] - 0.65).abs() < 1e-15);
        assert!(mixture_variance(1.2, &[1.0], 0.01).is_err());
        assert!(mixture_variance(0.2, &[0.0], 0.01).is_err());
        assert!(mixture_variance(0.2, &[1.0], 0.0).is_err());
    }

    #[test]
    fn head_parameter_count() {
        let c = cfg(5, 65, 1);
        assert_eq!(c.param_count(), 65 * 3 + 5 * 65 * 2 + 65);
    }

    /// Per-example route: materialize each W_k with the scalar correlation of
    /// that example, then project.
    #[test]
    fn batch_path_matches_per_example_transform() {
        let c = cfg(3, 4, 2);
        let mut rng = RngState::new(21);
        let p = CholeskyBlockParams::init(&c, &mut rng).unwrap();
        let h = features(&mut rng, 5, 4);
        let noise = BlockNoise::sample(&c, &mut rng);

        let mut t = Tape::new();
        let v = p.bind(&mut t);
        let hv = t.constant(h.clone());
        let out = block_forward_with_noise(&mut t, &v, &c, hv, &noise).unwrap();
        let rows = out.extract(&t);

        let mut r = Tape::new();
        let mu = r.constant(p.mu_star.clone());
        let ss = r.constant(p.log_sigma_star.map(f64::exp));
        let sz = r.constant(p.log_sigma_z.map(f64::exp));
        let ew = r.constant(noise.eps_w.clone());
        let ez = r.constant(noise.eps_z.clone());
        let spread = r.mul(ss, ew).unwrap();
        let w = r.add(mu, spread).unwrap();
        let z = r.mul(sz, ez).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let hi = r.constant(Tensor::new(vec![1, 4], h.row(i).to_vec()).unwrap());
            for k in 0..c.k {
                let rho = r.scalar(row.rho[k]);
                let wk = cholesky_transform_var(&mut r, w, z, rho, mu, ss, sz).unwrap();
                let m = r.matmul(hi, wk).unwrap();
                for (a, b) in r.value(m).data().iter().zip(&row.mu[k]) {
                    assert!((a - b).abs() < 1e-12, "example {i} mixture {k}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn gradients_of_all_params_match_finite_differences() {
        let c = cfg(3, 4, 2);
        let mut rng = RngState::new(13);
        let p = CholeskyBlockParams::init(&c, &mut rng).unwrap();
        let h = features(&mut rng, 3, 4);
        let noise = BlockNoise::sample(&c, &mut rng);
        let weights = sample_standard_normal(&mut rng, &[3, 2]);
        let points: Vec<Tensor> = p.arrays().into_iter().cloned().collect();
        let report = grad_check_many(
            |t, v| {
                let vars = BlockVars {
                    mu_star: v[0],
                    log_sigma_star: v[1],
                    log_sigma_z: v[2],
                    w_rho: v[3],
                    w_pi: v[4],
                    w_sigma0: v[5],
                };
                let hv = t.constant(h.clone());
                let out = block_forward_with_noise(t, &vars, &c, hv, &noise)?;
                let wv = t.constant(weights.clone());
                let mut terms = Vec::new();
                for k in 0..c.k {
                    let a = t.mul(out.mu[k], wv)?;
                    let b = t.log(out.sigma[k])?;
                    let s = t.add(a, b)?;
                    terms.push(t.sum(s)?);
                }
                let lp = t.log(out.pi)?;
                terms.push(t.sum(lp)?);
                let rho = out.rho.unwrap();
                let rs = t.square(rho)?;
                terms.push(t.sum(rs)?);
                let mut acc = terms[0];
                for &x in &terms[1..] {
                    acc = t.add(acc, x)?;
                }
                Ok(acc)
            },
            &points,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error);
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = cfg(2, 3, 2);
        let p = CholeskyBlockParams::init(&c, &mut RngState::new(77)).unwrap();
        let dir = std::env::temp_dir().join(format!("chk-block-{}", std::process::id()));
        p.save(&dir).unwrap();
        let back = CholeskyBlockParams::load(&dir, &c).unwrap();
        std::fs::remove_file(&dir).ok();
        assert_eq!(back, p);
        let wrong = cfg(3, 3, 2);
        assert!(CholeskyBlockParams::from_checkpoint(&p.to_checkpoint(), &wrong).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn outputs_satisfy_mixture_invariants(seed in 0u64..10_000, k in 1usize..6, q in 1usize..6, d in 1usize..4, scale in 0.1f64..20.0) {
            let c = cfg(k, q, d);
            let mut rng = RngState::new(seed);
            let mut p = CholeskyBlockParams::init(&c, &mut rng).unwrap();
            p.w_rho = p.w_rho.map(|x| x * scale);
            p.w_pi = p.w_pi.map(|x| x * scale);
            let h = features(&mut rng, 4, q);
            let mut t = Tape::new();
            let v = p.bind(&mut t);
            let hv = t.constant(h);
            let out = block_forward(&mut t, &v, &c, hv, &mut rng).unwrap();
            for m in out.extract(&t) {
                prop_assert!((m.pi.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                prop_assert!(m.pi.iter().all(|&x| x > 0.0));
                prop_assert_eq!(m.rho[0], 1.0);
                prop_assert!(m.rho[1..].iter().all(|r| r.abs() <= c.rho_max));
                prop_assert!(m.sigma.iter().flatten().all(|&s| s >= c.tau_inv));
            }
        }

        #[test]
        fn variance_shrinks_with_correlation(a in -1.0f64..=1.0, b in -1.0f64..=1.0, s0 in 1e-3f64..10.0) {
            let (lo, hi) = if a.abs() <= b.abs() { (a, b) } else { (b, a) };
            let v_lo = mixture_variance(lo, &[s0], 0.01).unwrap()[0];
            let v_hi = mixture_variance(hi, &[s0], 0.01).unwrap()[0];
            prop_assert!(v_lo >= v_hi);
        }
    }
}
