//! Central finite-difference checks of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so entries whose true gradient
/// is (near) zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub tape_grads: Vec<Tensor>,
    pub numeric_grads: Vec<Tensor>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the tape gradient of a scalar function at `point` against central
/// differences with the given `step`.
///
/// `f` must be deterministic: any noise it uses has to be drawn once outside
/// and captured.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|t, vs| f(t, vs[0]), std::slice::from_ref(point), step, tol)
}

/// Multi-input form of [`grad_check`].
pub fn grad_check_many<F>(f: F, points: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |pts: &[Tensor], record: bool| -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts
            .iter()
            .map(|p| {
                if record {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out).item()?;
        if !value.is_finite() {
            return Err(Error::domain("grad_check", "function not finite at probe point"));
        }
        let mut grads = Vec::new();
        if record {
            tape.backward(out)?;
            for (v, p) in vars.iter().zip(pts) {
                grads.push(
                    tape.grad(*v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(p.shape())),
                );
            }
        }
        Ok((value, grads))
    };

    let (_, tape_grads) = eval(points, true)?;
    let mut numeric_grads = Vec::with_capacity(points.len());
    let mut probe: Vec<Tensor> = points.to_vec();
    let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
    for (pi, point) in points.iter().enumerate() {
        let mut num = Tensor::zeros(point.shape());
        for j in 0..point.numel() {
            let x0 = point.data()[j];
            probe[pi].data_mut()[j] = x0 + step;
            let (fp, _) = eval(&probe, false)?;
            probe[pi].data_mut()[j] = x0 - step;
            let (fm, _) = eval(&probe, false)?;
            probe[pi].data_mut()[j] = x0;
            let d = (fp - fm) / (2.0 * step);
            num.data_mut()[j] = d;
            let a = tape_grads[pi].data()[j];
            max_abs = max_abs.max((a - d).abs());
            max_rel = max_rel.max(relative_error(a, d));
        }
        numeric_grads.push(num);
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        tape_grads,
        numeric_grads,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_gradients() {
        let p = Tensor::vector(vec![0.3, -1.2]);
        let r = grad_check(|t, _x| Ok(t.scalar(4.0)), &p, 1e-5, 1e-4).unwrap();
        assert!(r.tape_grads[0].data().iter().all(|&g| g == 0.0));
        assert!(r.numeric_grads[0].data().iter().all(|&g| g == 0.0));
        assert!(r.passed());
    }

    #[test]
    fn non_finite_probe_is_a_domain_error() {
        let p = Tensor::vector(vec![1e-6]);
        let err = grad_check(|t, x| t.log(x).and_then(|l| t.sum(l)), &p, 1e-5, 1e-4).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn kink_is_reported_as_failure() {
        // relu at 0: the tape takes the right-hand zero slope, the symmetric
        // difference sees 0.5.
        let p = Tensor::vector(vec![0.0]);
        let r = grad_check(|t, x| t.relu(x).and_then(|y| t.sum(y)), &p, 1e-5, 1e-4).unwrap();
        assert_eq!(r.tape_grads[0].data()[0], 0.0);
        assert!((r.numeric_grads[0].data()[0] - 0.5).abs() < 1e-9);
        assert!(!r.passed());
    }
}
