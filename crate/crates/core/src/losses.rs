//! Training objectives for mixture heads and the baseline regressors.
//!
//! All losses are recorded on a [`Tape`] and return a scalar [`Var`]. Squared
//! and absolute errors average the per-example norm over the batch, so for a
//! single output dimension they are the usual mean squared / absolute error.

use std::f64::consts::PI;

use crate::block::MixtureBatch;
use crate::error::{Error, Result};
use crate::rng::{sample_standard_normal, RngState};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const TUKEY_C: f64 = 4.685;
pub const MAD_SCALE: f64 = 1.4826;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionLossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_kl: f64,
}

impl Default for RegressionLossConfig {
    fn default() -> Self {
        RegressionLossConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda_kl: 0.01,
        }
    }
}

impl RegressionLossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda_kl", self.lambda_kl),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationLossConfig {
    pub lambda_reg: f64,
    /// Weight of the correlation KL regularizer; 0 leaves the sampled-logit
    /// objective unchanged.
    pub lambda_kl: f64,
}

impl Default for ClassificationLossConfig {
    fn default() -> Self {
        ClassificationLossConfig { lambda_reg: 1e-4, lambda_kl: 0.0 }
    }
}

impl ClassificationLossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_reg", self.lambda_reg), ("lambda_kl", self.lambda_kl)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    L2,
    L1,
}

/// Tags a failure inside one term of a composite loss.
fn term<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Domain { op, detail } => Error::NumericAbort(format!("{name} term: {op}: {detail}")),
        other => other,
    })
}

fn same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", tape.shape(a), tape.shape(b))));
    }
    Ok(())
}

fn check_positive(tape: &Tape, op: &'static str, vars: &[Var]) -> Result<()> {
    for &v in vars {
        if tape.value(v).data().iter().any(|&s| !(s > 0.0)) {
            return Err(Error::domain(op, "mixture variance must be positive"));
        }
    }
    Ok(())
}

fn check_mixture(tape: &Tape, op: &'static str, out: &MixtureBatch, y: Var) -> Result<()> {
    if out.mu.is_empty() || out.mu.len() != out.sigma.len() {
        return Err(Error::shape(op, "mixture needs matching, non-empty mu and sigma lists"));
    }
    let pi = tape.shape(out.pi);
    if pi.len() != 2 || pi[1] != out.k() || pi[0] != tape.shape(y)[0] {
        return Err(Error::shape(op, format!("pi {pi:?} for K = {} and y {:?}", out.k(), tape.shape(y))));
    }
    for (&m, &s) in out.mu.iter().zip(&out.sigma) {
        same_shape(tape, op, m, y)?;
        same_shape(tape, op, s, y)?;
    }
    check_positive(tape, op, &out.sigma)
}

/// Batch mean of the per-example squared error norm.
pub fn mean_squared_error(tape: &mut Tape, pred: Var, y: Var) -> Result<Var> {
    same_shape(tape, "mean_squared_error", pred, y)?;
    let n = tape.shape(y)[0] as f64;
    let d = tape.sub(pred, y)?;
    let sq = tape.square(d)?;
    let s = tape.sum(sq)?;
    tape.mul_scalar(s, 1.0 / n)
}

/// Batch mean of the per-example absolute error norm.
pub fn mean_absolute_error(tape: &mut Tape, pred: Var, y: Var) -> Result<Var> {
    same_shape(tape, "mean_absolute_error", pred, y)?;
    let n = tape.shape(y)[0] as f64;
    let d = tape.sub(pred, y)?;
    let a = tape.abs(d)?;
    let s = tape.sum(a)?;
    tape.mul_scalar(s, 1.0 / n)
}

pub fn baseline_regression_loss(tape: &mut Tape, kind: BaselineKind, pred: Var, y: Var) -> Result<Var> {
    match kind {
        BaselineKind::L2 => mean_squared_error(tape, pred, y),
        BaselineKind::L1 => mean_absolute_error(tape, pred, y),
    }
}

/// Per-example log density of a diagonal Gaussian, shape `[N]`.
fn diag_gaussian_log_density(tape: &mut Tape, y: Var, mu: Var, var: Var) -> Result<Var> {
    let d = tape.sub(y, mu)?;
    let sq = tape.square(d)?;
    let ratio = tape.div(sq, var)?;
    let scaled = tape.mul_scalar(var, 2.0 * PI)?;
    let logs = tape.log(scaled)?;
    let both = tape.add(ratio, logs)?;
    let per = tape.sum_axis(both, 1)?;
    tape.mul_scalar(per, -0.5)
}

/// Mean negative log-likelihood of a diagonal Gaussian mixture.
///
/// `pi` is `[N, K]`; `mu` and `sigma` hold `K` tensors of shape `[N, D]`
/// with `sigma` the variances. Evaluated as a log-sum-exp over components.
pub fn mdn_nll(tape: &mut Tape, pi: Var, mu: &[Var], sigma: &[Var], y: Var) -> Result<Var> {
    let batch = MixtureBatch {
        pi,
        rho: None,
        mu: mu.to_vec(),
        sigma: sigma.to_vec(),
    };
    check_mixture(tape, "mdn_nll", &batch, y)?;
    let n = tape.shape(y)[0];
    let mut cols = Vec::with_capacity(mu.len());
    for (&m, &s) in mu.iter().zip(sigma) {
        let ld = diag_gaussian_log_density(tape, y, m, s)?;
        cols.push(tape.reshape(ld, &[n, 1])?);
    }
    let comp = tape.concat(&cols, 1)?;
    let log_pi = tape.log(pi)?;
    let joint = tape.add(comp, log_pi)?;
    let ll = tape.logsumexp(joint)?;
    let m = tape.mean(ll)?;
    tape.neg(m)
}

/// Batch mean of `KL(softmax(rho) || pi)` for `[N, K]` inputs.
pub fn kl_rho_pi_var(tape: &mut Tape, rho: Var, pi: Var) -> Result<Var> {
    same_shape(tape, "kl_rho_pi", rho, pi)?;
    if tape.value(pi).data().iter().any(|&p| !(p > 0.0)) {
        return Err(Error::domain("kl_rho_pi", "pi must be strictly positive"));
    }
    let lse = tape.logsumexp(rho)?;
    let neg_lse = tape.neg(lse)?;
    let log_bar = tape.add_rows(rho, neg_lse)?;
    let bar = tape.softmax(rho)?;
    let log_pi = tape.log(pi)?;
    let diff = tape.sub(log_bar, log_pi)?;
    let prod = tape.mul(bar, diff)?;
    let per = tape.sum_axis(prod, 1)?;
    tape.mean(per)
}

/// `KL(softmax(rho) || pi)` for one example.
pub fn kl_rho_pi(rho: &[f64], pi: &[f64]) -> Result<f64> {
    if rho.len() != pi.len() || rho.is_empty() {
        return Err(Error::shape("kl_rho_pi", format!("{} vs {}", rho.len(), pi.len())));
    }
    let mut tape = Tape::new();
    let r = tape.constant(Tensor::new(vec![1, rho.len()], rho.to_vec())?);
    let p = tape.constant(Tensor::new(vec![1, pi.len()], pi.to_vec())?);
    let kl = kl_rho_pi_var(&mut tape, r, p)?;
    tape.value(kl).item()
}

/// Weighted sum of squared error, mixture NLL and the correlation/weight
/// KL regularizer. The KL term needs `out.rho`; it is skipped when
/// `lambda_kl` is zero.
pub fn regression_mixture_loss(
    tape: &mut Tape,
    out: &MixtureBatch,
    y: Var,
    cfg: &RegressionLossConfig,
) -> Result<Var> {
    cfg.validate()?;
    check_mixture(tape, "regression_mixture_loss", out, y)?;
    let mut total = tape.scalar(0.0);
    if cfg.lambda1 > 0.0 {
        let l2 = term("squared error", mean_squared_error(tape, out.mu[0], y))?;
        let w = tape.mul_scalar(l2, cfg.lambda1)?;
        total = tape.add(total, w)?;
    }
    if cfg.lambda2 > 0.0 {
        let nll = term("mixture likelihood", mdn_nll(tape, out.pi, &out.mu, &out.sigma, y))?;
        let w = tape.mul_scalar(nll, cfg.lambda2)?;
        total = tape.add(total, w)?;
    }
    if cfg.lambda_kl > 0.0 {
        let rho = out
            .rho
            .ok_or_else(|| Error::Contract("KL regularizer needs mixture correlations".into()))?;
        let kl = term("correlation KL", kl_rho_pi_var(tape, rho, out.pi))?;
        let w = tape.mul_scalar(kl, cfg.lambda_kl)?;
        total = tape.add(total, w)?;
    }
    if !tape.value(total).item()?.is_finite() {
        return Err(Error::NumericAbort("regression loss is not finite".into()));
    }
    Ok(total)
}

fn check_one_hot(y: &Tensor) -> Result<()> {
    if y.rank() != 2 {
        return Err(Error::Input(format!("one-hot targets must be a matrix, got {:?}", y.shape())));
    }
    for i in 0..y.rows() {
        let row = y.row(i);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Input(format!("target row {i} is not one-hot")));
        }
    }
    Ok(())
}

/// Standard-normal perturbations for the sampled logits, one `[N, D]` tensor
/// per mixture.
pub fn sample_logit_noise(k: usize, n: usize, d: usize, rng: &mut RngState) -> Vec<Tensor> {
    (0..k).map(|_| sample_standard_normal(rng, &[n, d])).collect()
}

/// Mixture-weighted expected correct-class probability of sampled logits,
/// with a log-sum-exp penalty. Fresh noise per example, mixture and class.
pub fn classification_mixture_loss(
    tape: &mut Tape,
    out: &MixtureBatch,
    y: &Tensor,
    cfg: &ClassificationLossConfig,
    rng: &mut RngState,
) -> Result<Var> {
    check_one_hot(y)?;
    let eps = sample_logit_noise(out.k(), y.rows(), y.cols(), rng);
    classification_mixture_loss_with_noise(tape, out, y, cfg, &eps)
}

pub fn classification_mixture_loss_with_noise(
    tape: &mut Tape,
    out: &MixtureBatch,
    y: &Tensor,
    cfg: &ClassificationLossConfig,
    eps: &[Tensor],
) -> Result<Var> {
    cfg.validate()?;
    check_one_hot(y)?;
    let yv = tape.constant(y.clone());
    check_mixture(tape, "classification_mixture_loss", out, yv)?;
    if eps.len() != out.k() || eps.iter().any(|e| e.shape() != y.shape()) {
        return Err(Error::shape("classification_mixture_loss", "noise must be K tensors shaped like y"));
    }
    let mut acc: Option<Var> = None;
    for k in 0..out.k() {
        let std = tape.sqrt(out.sigma[k])?;
        let e = tape.constant(eps[k].clone());
        let jitter = tape.mul(std, e)?;
        let logits = tape.add(out.mu[k], jitter)?;
        let p = tape.softmax(logits)?;
        let hit = tape.mul(p, yv)?;
        let inner = tape.sum_axis(hit, 1)?;
        let lse = tape.logsumexp(logits)?;
        let pen = tape.mul_scalar(lse, cfg.lambda_reg)?;
        let score = tape.sub(inner, pen)?;
        let w = tape.column(out.pi, k)?;
        let weighted = tape.mul(w, score)?;
        acc = Some(match acc {
            None => weighted,
            Some(a) => tape.add(a, weighted)?,
        });
    }
    let per = acc.expect("at least one mixture");
    let m = term("mixture classification", tape.mean(per))?;
    let loss = tape.neg(m)?;
    if cfg.lambda_kl > 0.0 {
        let rho = out
            .rho
            .ok_or_else(|| Error::Contract("KL regularizer needs mixture correlations".into()))?;
        let kl = term("correlation KL", kl_rho_pi_var(tape, rho, out.pi))?;
        let w = tape.mul_scalar(kl, cfg.lambda_kl)?;
        return tape.add(loss, w);
    }
    Ok(loss)
}

/// Mean softmax cross-entropy of `[N, C]` logits against one-hot targets.
pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, y: &Tensor) -> Result<Var> {
    check_one_hot(y)?;
    if tape.shape(logits) != y.shape() {
        return Err(Error::shape("softmax_cross_entropy", format!("{:?} vs {:?}", tape.shape(logits), y.shape())));
    }
    let yv = tape.constant(y.clone());
    let lse = tape.logsumexp(logits)?;
    let hit = tape.mul(logits, yv)?;
    let picked = tape.sum_axis(hit, 1)?;
    let nll = tape.sub(lse, picked)?;
    tape.mean(nll)
}

/// Tukey's biweight for a standardized residual, continued linearly with
/// `leaky_slope` beyond `c`.
pub fn tukey_rho(r: f64, c: f64, leaky_slope: f64) -> f64 {
    let a = r.abs().min(c);
    let u = 1.0 - (a / c).powi(2);
    c * c / 6.0 * (1.0 - u * u * u) + leaky_slope * (r.abs() - a)
}

/// Mean Tukey biweight of residuals standardized by `1.4826 * MAD`.
///
/// The scale is computed on the tape, so gradients include its dependence on
/// the residuals.
pub fn tukey_biweight_loss(tape: &mut Tape, pred: Var, y: Var, c: f64, leaky_slope: f64) -> Result<Var> {
    same_shape(tape, "tukey_biweight_loss", pred, y)?;
    if !(c > 0.0) || !(leaky_slope >= 0.0) {
        return Err(Error::Config(format!("tukey needs c > 0 and slope >= 0, got {c}, {leaky_slope}")));
    }
    let n = tape.value(y).numel();
    if n < 2 {
        return Err(Error::Degenerate("tukey loss needs at least two residuals".into()));
    }
    let d = tape.sub(pred, y)?;
    let resid = tape.reshape(d, &[n])?;
    let med = tape.median(resid)?;
    let neg_med = tape.neg(med)?;
    let centered = tape.add(resid, neg_med)?;
    let dev = tape.abs(centered)?;
    let mad = tape.median(dev)?;
    if tape.value(mad).item()? == 0.0 {
        return Err(Error::Degenerate("median absolute deviation of residuals is zero".into()));
    }
    let scale = tape.mul_scalar(mad, MAD_SCALE)?;
    let r = tape.div(resid, scale)?;
    let abs_r = tape.abs(r)?;
    let a = tape.min_const(abs_r, c)?;
    let ac = tape.mul_scalar(a, 1.0 / c)?;
    let ac2 = tape.square(ac)?;
    let neg = tape.neg(ac2)?;
    let u = tape.add_scalar(neg, 1.0)?;
    let u2 = tape.square(u)?;
    let u3 = tape.mul(u2, u)?;
    let negu3 = tape.neg(u3)?;
    let inner = tape.add_scalar(negu3, 1.0)?;
    let mut per = tape.mul_scalar(inner, c * c / 6.0)?;
    if leaky_slope > 0.0 {
        let excess = tape.sub(abs_r, a)?;
        let lin = tape.mul_scalar(excess, leaky_slope)?;
        per = tape.add(per, lin)?;
    }
    tape.mean(per)
}
