//! Correlated sampling through the Cholesky transform.
//!
//! Given `w ~ (mu_w, sigma_w^2)` and an independent `z ~ (0, sigma_z^2)`,
//!
//! ```text
//! z_tilde = rho * (sigma_z / sigma_w) * (w - mu_w) + sqrt(1 - rho^2) * z
//! w_tilde = rho * mu_w + sqrt(1 - rho^2) * z_tilde
//! ```
//!
//! `z_tilde` keeps mean 0 and variance `sigma_z^2` with `Corr(w, z_tilde) = rho`;
//! `w_tilde` has mean `rho * mu_w`, variance `(1 - rho^2) * sigma_z^2` and the
//! same correlation `rho` with `w`. At `rho = 1` the transform collapses to
//! `mu_w`, at `rho = 0` to `z`.

use crate::error::{Error, Result};
use crate::rng::{sample_standard_normal, RngState};
use crate::tape::{Tape, Var};

/// Default clamp on non-target correlations.
pub const DEFAULT_RHO_MAX: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CholeskyInputs {
    pub w: f64,
    pub z: f64,
    pub rho: f64,
    pub mu_w: f64,
    pub sigma_w: f64,
    pub sigma_z: f64,
}

impl CholeskyInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w > 0.0) || !(self.sigma_z > 0.0) {
            return Err(Error::domain(
                "cholesky_transform",
                format!("sigma_w = {}, sigma_z = {} must be positive", self.sigma_w, self.sigma_z),
            ));
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::domain("cholesky_transform", format!("|rho| = {} > 1", self.rho.abs())));
        }
        Ok(())
    }
}

/// The auxiliary variable `z_tilde`, correlated `rho` with `w`.
pub fn correlated_auxiliary(inp: &CholeskyInputs) -> Result<f64> {
    inp.validate()?;
    let s = (1.0 - inp.rho * inp.rho).sqrt();
    Ok(inp.rho * (inp.sigma_z / inp.sigma_w) * (inp.w - inp.mu_w) + s * inp.z)
}

pub fn cholesky_transform(inp: &CholeskyInputs) -> Result<f64> {
    let aux = correlated_auxiliary(inp)?;
    let s = (1.0 - inp.rho * inp.rho).sqrt();
    Ok(inp.rho * inp.mu_w + s * aux)
}

fn check_positive(tape: &Tape, v: Var, what: &str) -> Result<()> {
    if tape.value(v).data().iter().any(|&x| !(x > 0.0)) {
        return Err(Error::domain("cholesky_transform", format!("{what} must be positive")));
    }
    Ok(())
}

/// Elementwise Cholesky transform on the tape, differentiable in every input.
///
/// Inputs broadcast over leading axes, so `rho` may be a scalar while the
/// other arguments are weight matrices.
pub fn cholesky_transform_var(
    tape: &mut Tape,
    w: Var,
    z: Var,
    rho: Var,
    mu_w: Var,
    sigma_w: Var,
    sigma_z: Var,
) -> Result<Var> {
    check_positive(tape, sigma_w, "sigma_w")?;
    check_positive(tape, sigma_z, "sigma_z")?;
    if tape.value(rho).data().iter().any(|r| !(r.abs() <= 1.0)) {
        return Err(Error::domain("cholesky_transform", "|rho| > 1"));
    }
    let rho2 = tape.square(rho)?;
    let one_minus = tape.neg(rho2)?;
    let one_minus = tape.add_scalar(one_minus, 1.0)?;
    let s = tape.sqrt(one_minus)?;

    let ratio = tape.div(sigma_z, sigma_w)?;
    let centered = tape.sub(w, mu_w)?;
    let scaled = tape.mul(ratio, centered)?;
    let corr_part = tape.mul(rho, scaled)?;
    let noise_part = tape.mul(s, z)?;
    let aux = tape.add(corr_part, noise_part)?;

    let mean_part = tape.mul(rho, mu_w)?;
    let spread = tape.mul(s, aux)?;
    tape.add(mean_part, spread)
}

/// One draw of the base weights, the auxiliary matrix and the `K` correlated
/// weight matrices derived from them.
#[derive(Debug, Clone)]
pub struct CorrelatedWeightSet {
    /// `W_* = mu + sigma * eps_1`.
    pub base_sample: Var,
    /// `Z = sigma_z * eps_2`.
    pub aux_sample: Var,
    pub correlations: Vec<Var>,
    /// `tilde[k] = cholesky(W_*, Z, rho_k, mu, sigma, sigma_z)`.
    pub tilde: Vec<Var>,
}

/// Samples `W_*` and `Z` with fresh standard normals (reparametrized so
/// gradients reach `mu`, `sigma` and `sigma_z`) and derives one correlated
/// matrix per entry of `rho`.
///
/// `rho[0]` must be exactly 1 (the target) and the remaining entries must lie
/// within `[-rho_max, rho_max]`. Each `rho[k]` is a scalar or broadcastable
/// tensor on the tape.
pub fn sample_correlated_weights(
    tape: &mut Tape,
    mu: Var,
    sigma: Var,
    sigma_z: Var,
    rho: &[Var],
    rho_max: f64,
    rng: &mut RngState,
) -> Result<CorrelatedWeightSet> {
    let Some(&first) = rho.first() else {
        return Err(Error::Config("at least one correlation is required".into()));
    };
    if tape.value(first).data().iter().any(|&r| r != 1.0) {
        return Err(Error::domain("sample_correlated_weights", "rho_1 must be exactly 1"));
    }
    for &r in &rho[1..] {
        if tape.value(r).data().iter().any(|v| !(v.abs() <= rho_max)) {
            return Err(Error::domain(
                "sample_correlated_weights",
                format!("non-target correlation outside [-{rho_max}, {rho_max}]"),
            ));
        }
    }
    check_positive(tape, sigma, "sigma")?;
    check_positive(tape, sigma_z, "sigma_z")?;

    let shape = tape.shape(mu).to_vec();
    let eps_w = tape.constant(sample_standard_normal(rng, &shape));
    let eps_z = tape.constant(sample_standard_normal(rng, &shape));
    let spread = tape.mul(sigma, eps_w)?;
    let base = tape.add(mu, spread)?;
    let aux = tape.mul(sigma_z, eps_z)?;

    let tilde = rho
        .iter()
        .map(|&r| cholesky_transform_var(tape, base, aux, r, mu, sigma, sigma_z))
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelatedWeightSet {
        base_sample: base,
        aux_sample: aux,
        correlations: rho.to_vec(),
        tilde,
    })
}

/// Pearson sample correlation.
pub fn empirical_correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Input(format!(
            "correlation needs two equal-length sequences of at least 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero sample variance in correlation".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Sample mean and (population) variance.
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v)
}
