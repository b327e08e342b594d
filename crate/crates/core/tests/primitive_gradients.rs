use choicenet::gradcheck::{grad_check, grad_check_many};
use choicenet::{Result, RngState, Tape, Tensor, Var};

const CASES: usize = 100;
const TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

fn random_shape(rng: &mut RngState) -> Vec<usize> {
    let rank = 1 + rng.below(3);
    (0..rank).map(|_| 1 + rng.below(4)).collect()
}

/// Values bounded away from zero so kinks (abs, relu, clamps) are never probed.
fn away_from_zero(rng: &mut RngState, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.uniform_range(lo, hi);
            if rng.bernoulli(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn positive(rng: &mut RngState, shape: &[usize]) -> Tensor {
    away_from_zero(rng, shape, 0.3, 2.0).map(f64::abs)
}

/// Reduces an arbitrary-shaped output to a scalar with fixed random weights,
/// so every output element contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let mut rng = RngState::new(seed);
    let w = away_from_zero(&mut rng, &shape, 0.5, 1.5);
    let wv = tape.constant(w);
    let p = tape.mul(y, wv)?;
    tape.sum(p)
}

fn check_unary(name: &str, op: impl Fn(&mut Tape, Var) -> Result<Var>, sample: impl Fn(&mut RngState, &[usize]) -> Tensor) {
    let mut rng = RngState::new(name.len() as u64 * 7919);
    for case in 0..CASES {
        let shape = random_shape(&mut rng);
        let x = sample(&mut rng, &shape);
        let report = grad_check(
            |t, v| {
                let y = op(t, v)?;
                weighted_sum(t, y, case as u64)
            },
            &x,
            STEP,
            TOL,
        )
        .unwrap();
        assert!(report.passed(), "{name} case {case} shape {shape:?}: rel err {}", report.max_rel_error);
    }
}

fn check_binary(name: &str, op: impl Fn(&mut Tape, Var, Var) -> Result<Var>, denominator: bool) {
    let mut rng = RngState::new(name.len() as u64 * 104729);
    for case in 0..CASES {
        let shape = random_shape(&mut rng);
        // Half the cases broadcast the second operand over the leading axes.
        let other: Vec<usize> = if case % 2 == 1 { shape[shape.len() - 1..].to_vec() } else { shape.clone() };
        let a = away_from_zero(&mut rng, &shape, 0.2, 2.0);
        let b = if denominator { positive(&mut rng, &other) } else { away_from_zero(&mut rng, &other, 0.2, 2.0) };
        let report = grad_check_many(
            |t, v| {
                let y = op(t, v[0], v[1])?;
                weighted_sum(t, y, case as u64)
            },
            &[a, b],
            STEP,
            TOL,
        )
        .unwrap();
        assert!(report.passed(), "{name} case {case} shape {shape:?}: rel err {}", report.max_rel_error);
    }
}

fn general(rng: &mut RngState, shape: &[usize]) -> Tensor {
    away_from_zero(rng, shape, 0.1, 2.0)
}

#[test]
fn elementwise_unary_primitives() {
    check_unary("neg", |t, x| t.neg(x), general);
    check_unary("add_scalar", |t, x| t.add_scalar(x, 0.7), general);
    check_unary("mul_scalar", |t, x| t.mul_scalar(x, -1.3), general);
    check_unary("tanh", |t, x| t.tanh(x), general);
    check_unary("exp", |t, x| t.exp(x), general);
    check_unary("log", |t, x| t.log(x), positive);
    check_unary("sqrt", |t, x| t.sqrt(x), positive);
    check_unary("abs", |t, x| t.abs(x), general);
    check_unary("relu", |t, x| t.relu(x), general);
    check_unary("square", |t, x| t.square(x), general);
    // Clamp thresholds sit at 0, where the samples never land.
    check_unary("max_const", |t, x| t.max_const(x, 0.0), general);
    check_unary("min_const", |t, x| t.min_const(x, 0.0), general);
}

#[test]
fn broadcasting_binary_primitives() {
    check_binary("add", |t, a, b| t.add(a, b), false);
    check_binary("sub", |t, a, b| t.sub(a, b), false);
    check_binary("mul", |t, a, b| t.mul(a, b), false);
    check_binary("div", |t, a, b| t.div(a, b), true);
}

#[test]
fn reductions_and_normalizers() {
    check_unary("sum", |t, x| t.sum(x), general);
    check_unary("mean", |t, x| t.mean(x), general);
    check_unary("sum_axis", |t, x| { let a = t.shape(x).len() - 1; t.sum_axis(x, a) }, general);
    check_unary("mean_axis", |t, x| t.mean_axis(x, 0), general);
    check_unary("softmax", |t, x| t.softmax(x), general);
    check_unary("logsumexp", |t, x| t.logsumexp(x), general);
    check_unary("reshape", |t, x| { let n = t.value(x).numel(); t.reshape(x, &[n]) }, general);
}

#[test]
fn median_with_distinct_values() {
    let mut rng = RngState::new(3);
    for case in 0..CASES {
        let n = 1 + rng.below(12);
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
        rng.shuffle(&mut vals);
        let x = Tensor::vector(vals.iter().map(|v| v + rng.uniform_range(-0.1, 0.1)).collect());
        let report = grad_check(|t, v| { let m = t.median(v)?; t.mul_scalar(m, 1.7) }, &x, STEP, TOL).unwrap();
        assert!(report.passed(), "median case {case}: {}", report.max_rel_error);
    }
}

#[test]
fn matrix_primitives() {
    let mut rng = RngState::new(11);
    for case in 0..CASES {
        let (n, k, m) = (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4));
        let a = general(&mut rng, &[n, k]);
        let b = general(&mut rng, &[k, m]);
        let c = general(&mut rng, &[n]);
        let report = grad_check_many(
            |t, v| {
                let p = t.matmul(v[0], v[1])?;
                let pt = t.transpose(p)?;
                let back = t.transpose(pt)?;
                let scaled = t.mul_rows(back, v[2])?;
                let shifted = t.add_rows(scaled, v[2])?;
                let col = t.column(shifted, 0)?;
                let y = t.concat(&[shifted, v[0]], 1)?;
                let part = t.narrow(y, 1, 0, m)?;
                let s = weighted_sum(t, part, case as u64)?;
                let cs = t.sum(col)?;
                t.add(s, cs)
            },
            &[a, b, c],
            STEP,
            TOL,
        )
        .unwrap();
        assert!(report.passed(), "matrix case {case} ({n}x{k}x{m}): {}", report.max_rel_error);
    }
}
