//! Minibatch training and evaluation.

use std::time::Instant;

use crate::data::{LabeledDataset, ReferenceFn, RegressionDataset};
use crate::error::{Error, Result};
use crate::losses::{
    baseline_regression_loss, classification_mixture_loss, mdn_nll, regression_mixture_loss,
    softmax_cross_entropy, tukey_biweight_loss, BaselineKind, ClassificationLossConfig, RegressionLossConfig,
};
use crate::models::{HeadOutput, Model, Param};
use crate::rng::RngState;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Grid size for comparing a fit against its reference function.
pub const REFERENCE_GRID: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    /// Squared error + mixture NLL + correlation KL (mixture heads).
    Regression(RegressionLossConfig),
    /// Mixture NLL alone.
    MixtureNll,
    Baseline(BaselineKind),
    Tukey { c: f64, leaky_slope: f64 },
    /// Sampled-logit mixture objective against one-hot targets.
    MixtureClassification(ClassificationLossConfig),
    CrossEntropy,
}

impl Objective {
    pub fn needs_one_hot(&self) -> bool {
        matches!(self, Objective::MixtureClassification(_) | Objective::CrossEntropy)
    }
}

/// Records the objective for one minibatch on the tape.
pub fn objective_loss(
    tape: &mut Tape,
    head: &HeadOutput,
    targets: &Tensor,
    objective: &Objective,
    rng: &mut RngState,
) -> Result<Var> {
    match (objective, head) {
        (Objective::Regression(cfg), HeadOutput::Mixture(m)) => {
            let y = tape.constant(targets.clone());
            let cfg = if m.rho.is_none() {
                RegressionLossConfig { lambda_kl: 0.0, ..*cfg }
            } else {
                *cfg
            };
            regression_mixture_loss(tape, m, y, &cfg)
        }
        (Objective::MixtureNll, HeadOutput::Mixture(m)) => {
            let y = tape.constant(targets.clone());
            mdn_nll(tape, m.pi, &m.mu, &m.sigma, y)
        }
        (Objective::MixtureClassification(cfg), HeadOutput::Mixture(m)) => {
            let cfg = if m.rho.is_none() {
                ClassificationLossConfig { lambda_kl: 0.0, ..*cfg }
            } else {
                *cfg
            };
            classification_mixture_loss(tape, m, targets, &cfg, rng)
        }
        (Objective::Baseline(kind), HeadOutput::Point(p)) => {
            let y = tape.constant(targets.clone());
            baseline_regression_loss(tape, *kind, *p, y)
        }
        (Objective::Tukey { c, leaky_slope }, HeadOutput::Point(p)) => {
            let y = tape.constant(targets.clone());
            tukey_biweight_loss(tape, *p, y, *c, *leaky_slope)
        }
        (Objective::CrossEntropy, HeadOutput::Point(p)) => softmax_cross_entropy(tape, *p, targets),
        (o, _) => Err(Error::Config(format!("objective {o:?} does not fit this model head"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    Adam,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    /// `(epoch, multiplier)`: from `epoch` on, the rate is `learning_rate * multiplier`.
    pub schedule: Vec<(usize, f64)>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: None,
            schedule: Vec::new(),
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm {c} must be positive")));
            }
        }
        if self.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config("schedule epochs must be strictly increasing".into()));
        }
        if self.schedule.iter().any(|&(_, m)| !(m > 0.0)) {
            return Err(Error::Config("schedule multipliers must be positive".into()));
        }
        Ok(())
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        let mult = self
            .schedule
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .map_or(1.0, |&(_, m)| m);
        self.learning_rate * mult
    }
}

/// Optimizer state for one parameter list.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub cfg: OptimizerConfig,
    steps: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, params: &[Param]) -> Result<Self> {
        cfg.validate()?;
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Ok(Optimizer {
            cfg,
            steps: 0,
            first: zeros.clone(),
            second: zeros,
        })
    }

    /// Applies one update with coupled L2 decay on parameters marked `decay`.
    pub fn step(&mut self, params: &mut [Param], grads: &[Tensor], lr: f64) {
        self.steps += 1;
        let c = &self.cfg;
        let t = self.steps as i32;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if !p.trainable {
                continue;
            }
            let wd = if p.decay { c.weight_decay } else { 0.0 };
            let w = p.value.data_mut();
            match c.kind {
                OptimizerKind::Sgd => {
                    for (wj, &gj) in w.iter_mut().zip(g.data()) {
                        *wj -= lr * (gj + wd * *wj);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    let m = self.first[i].data_mut();
                    for ((wj, &gj), mj) in w.iter_mut().zip(g.data()).zip(m) {
                        *mj = c.momentum * *mj + gj + wd * *wj;
                        *wj -= lr * *mj;
                    }
                }
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - c.beta1.powi(t);
                    let bc2 = 1.0 - c.beta2.powi(t);
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for (((wj, &gj), mj), vj) in w.iter_mut().zip(g.data()).zip(m).zip(v) {
                        let gd = gj + wd * *wj;
                        *mj = c.beta1 * *mj + (1.0 - c.beta1) * gd;
                        *vj = c.beta2 * *vj + (1.0 - c.beta2) * gd * gd;
                        *wj -= lr * (*mj / bc1) / ((*vj / bc2).sqrt() + c.eps);
                    }
                }
            }
        }
    }
}

/// Scales all gradients by `clip_norm / norm` when their global L2 norm
/// exceeds `clip_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], clip_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > clip_norm {
        let s = clip_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_metric: f64,
    pub test_metric: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub checkpoint: Option<std::path::PathBuf>,
}

/// Per-epoch `(train_metric, test_metric)`.
pub type Evaluator<'a> = dyn FnMut(&Model) -> Result<(f64, f64)> + 'a;

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

fn abort_context(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::Domain { .. } | Error::NumericAbort(_) => {
            Error::NumericAbort(format!("epoch {epoch}, step {step}: {e}"))
        }
        other => other,
    }
}

/// Trains `model` on `(x, targets)`. Each epoch visits a fresh permutation of
/// the rows in minibatches; each step records a forward pass (new weight
/// noise for ChoiceNet), backpropagates, optionally clips and updates.
/// `evaluate` runs after every epoch.
pub fn fit(
    model: &mut Model,
    x: &Tensor,
    targets: &Tensor,
    objective: &Objective,
    cfg: &FitConfig,
    rng: &mut RngState,
    evaluate: &mut Evaluator<'_>,
) -> Result<TrainReport> {
    let n = x.rows();
    if n == 0 || x.rank() != 2 {
        return Err(Error::Config("training set is empty".into()));
    }
    if targets.rank() != 2 || targets.rows() != n {
        return Err(Error::shape("fit", format!("x {:?}, targets {:?}", x.shape(), targets.shape())));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer.clone(), &model.params)?;
    let mut report = TrainReport::default();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = opt.cfg.rate_at(epoch);
        let order = rng.permutation(n);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(batch);
            let yb = targets.select_rows(batch);
            let mut tape = Tape::new();
            let loss = (|| {
                let fwd = model.forward(&mut tape, &xb, rng)?;
                let loss = objective_loss(&mut tape, &fwd.head, &yb, objective, rng)?;
                Ok::<_, Error>((fwd.vars, loss))
            })()
            .map_err(|e| abort_context(epoch, step, e))?;
            let (vars, loss) = loss;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::NumericAbort(format!("epoch {epoch}, step {step}: loss is {value}")));
            }
            tape.backward(loss)?;
            let mut grads: Vec<Tensor> = vars
                .iter()
                .zip(&model.params)
                .map(|(&v, p)| match tape.grad(v) {
                    Some(g) if p.trainable => g.clone(),
                    _ => Tensor::zeros(p.value.shape()),
                })
                .collect();
            if let Some(c) = opt.cfg.clip_norm {
                clip_gradients(&mut grads, c);
            }
            opt.step(&mut model.params, &grads, lr);
            if let Some(p) = model.params.iter().find(|p| !p.value.all_finite()) {
                return Err(Error::NumericAbort(format!(
                    "epoch {epoch}, step {step}: parameter {} became non-finite",
                    p.name
                )));
            }
            loss_sum += value * batch.len() as f64;
            step += 1;
        }
        let train_loss = loss_sum / n as f64;
        let (train_metric, test_metric) = evaluate(model)?;
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_metric,
            test_metric,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(report)
}

/// Evaluator that reports the final train loss only.
pub fn no_metrics(_: &Model) -> Result<(f64, f64)> {
    Ok((f64::NAN, f64::NAN))
}

/// RMSE between the model and `reference` on an evenly spaced grid over the
/// reference's input range.
pub fn evaluate_rmse_vs_reference(model: &Model, reference: &ReferenceFn, grid_size: usize) -> Result<f64> {
    let xs = reference.grid(grid_size);
    let x = Tensor::new(vec![xs.len(), 1], xs.clone())?;
    let pred = model.predict(&x)?;
    let sse: f64 = xs
        .iter()
        .zip(pred.data())
        .map(|(&x, &p)| (p - reference.eval(x)).powi(2))
        .sum();
    Ok((sse / xs.len() as f64).sqrt())
}

/// RMSE against `y_clean` (or the possibly corrupted `y`), in original target
/// units when the dataset is standardized.
pub fn evaluate_rmse(model: &Model, ds: &RegressionDataset, against_clean: bool) -> Result<f64> {
    let mut pred = model.predict(&ds.x)?;
    let mut y = if against_clean { ds.y_clean.clone() } else { ds.y.clone() };
    if let Some(s) = &ds.target_stats {
        pred = s.invert(&pred);
        y = s.invert(&y);
    }
    Ok((pred
        .data()
        .iter()
        .zip(y.data())
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / y.numel() as f64)
        .sqrt())
}

/// Fraction of argmax predictions equal to the stored (or true) labels.
pub fn evaluate_accuracy(model: &Model, ds: &LabeledDataset, use_true_labels: bool) -> Result<f64> {
    let pred = model.predict_classes(&ds.x)?;
    let labels = if use_true_labels { &ds.true_labels } else { &ds.labels };
    Ok(accuracy(&pred, labels))
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticFn};
    use crate::models::{build_model, Activation, MlpSpec, ModelKind};

    fn param(name: &str, v: Vec<f64>, decay: bool) -> Param {
        Param {
            name: name.into(),
            value: Tensor::vector(v),
            decay,
            trainable: true,
        }
    }

    #[test]
    fn clipping_examples() {
        let mut g = vec![Tensor::vector(vec![0.3, 0.4])];
        assert!((clip_gradients(&mut g, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(g[0].data(), &[0.3, 0.4]);
        let mut g = vec![Tensor::vector(vec![3.0]), Tensor::vector(vec![4.0])];
        assert_eq!(clip_gradients(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_step_matches_hand_computation() {
        let mut p = vec![param("a", vec![1.0, -2.0], true)];
        let mut o = Optimizer::new(OptimizerConfig::sgd(0.1), &p).unwrap();
        o.step(&mut p, &[Tensor::vector(vec![0.5, 1.0])], 0.1);
        assert_eq!(p[0].value.data(), &[1.0 - 0.05, -2.0 - 0.1]);
    }

    #[test]
    fn weight_decay_skips_excluded_params() {
        let mut p = vec![param("w", vec![1.0], true), param("log_sigma", vec![1.0], false)];
        let cfg = OptimizerConfig {
            weight_decay: 0.5,
            ..OptimizerConfig::sgd(0.1)
        };
        let mut o = Optimizer::new(cfg, &p).unwrap();
        o.step(&mut p, &[Tensor::vector(vec![0.0]), Tensor::vector(vec![0.0])], 0.1);
        assert!((p[0].value.data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(p[1].value.data()[0], 1.0);
    }

    #[test]
    fn frozen_params_are_never_updated() {
        let mut p = vec![param("w", vec![1.0], true), param("z", vec![1.0], true)];
        p[1].trainable = false;
        let mut o = Optimizer::new(OptimizerConfig::default(), &p).unwrap();
        o.step(&mut p, &[Tensor::vector(vec![1.0]), Tensor::vector(vec![1.0])], 0.1);
        assert!(p[0].value.data()[0] < 1.0);
        assert_eq!(p[1].value.data()[0], 1.0);
    }

    #[test]
    fn fit_leaves_sigma_z_at_its_initial_value() {
        let ds = gen_synthetic(SyntheticFn::CosExp, 64, -3.0, 3.0, &mut RngState::new(0)).unwrap();
        let mlp = MlpSpec::new(vec![8], Activation::Relu, 1);
        let block = crate::models::block_config_for(&mlp, 3, 0.05, 0.95);
        let mut m = build_model(ModelKind::ChoiceNet, 1, &mlp, Some(block), None, &mut RngState::new(1)).unwrap();
        let before: Vec<Tensor> = m.params.iter().map(|p| p.value.clone()).collect();
        let cfg = FitConfig { epochs: 2, batch_size: 16, optimizer: OptimizerConfig::default() };
        let obj = Objective::Regression(Default::default());
        fit(&mut m, &ds.x, &ds.y, &obj, &cfg, &mut RngState::new(2), &mut no_metrics).unwrap();
        for (p, b) in m.params.iter().zip(&before) {
            assert_eq!(p.value == *b, p.name == "block.log_sigma_z", "{}", p.name);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![param("w", vec![0.0, 0.0], true)];
        let mut o = Optimizer::new(OptimizerConfig::default(), &p).unwrap();
        o.step(&mut p, &[Tensor::vector(vec![3.0, -0.2])], 1e-3);
        assert!((p[0].value.data()[0] + 1e-3).abs() < 1e-9);
        assert!((p[0].value.data()[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn schedule_multipliers_switch_at_boundaries() {
        let cfg = OptimizerConfig {
            schedule: vec![(3, 0.1), (5, 0.01)],
            ..OptimizerConfig::sgd(1.0)
        };
        let rates: Vec<f64> = (0..7).map(|e| cfg.rate_at(e)).collect();
        assert_eq!(rates, vec![1.0, 1.0, 1.0, 0.1, 0.1, 0.01, 0.01]);
        let bad = OptimizerConfig {
            schedule: vec![(3, 0.1), (3, 0.01)],
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    fn small_model(kind: ModelKind, seed: u64) -> Model {
        let s = MlpSpec::new(vec![16, 16], Activation::Relu, 1);
        let block = crate::models::block_config_for(&s, 3, 1e-2, 0.95);
        build_model(kind, 1, &s, Some(block), Some(3), &mut RngState::new(seed)).unwrap()
    }

    fn cfg(epochs: usize) -> FitConfig {
        FitConfig {
            epochs,
            batch_size: 32,
            optimizer: OptimizerConfig {
                clip_norm: Some(1.0),
                learning_rate: 3e-3,
                ..Default::default()
            },
        }
    }

    #[test]
    fn zero_epochs_leave_parameters_unchanged() {
        let mut m = small_model(ModelKind::ChoiceNet, 1);
        let before = m.params.clone();
        let ds = gen_synthetic(SyntheticFn::CosExp, 64, -3.0, 3.0, &mut RngState::new(0)).unwrap();
        let r = fit(&mut m, &ds.x, &ds.y, &Objective::Regression(Default::default()), &cfg(0), &mut RngState::new(0), &mut no_metrics).unwrap();
        assert!(r.epochs.is_empty());
        assert_eq!(m.params, before);
    }

    #[test]
    fn empty_dataset_and_zero_batch_are_config_errors() {
        let mut m = small_model(ModelKind::MlpL2, 1);
        let ds = gen_synthetic(SyntheticFn::CosExp, 4, -3.0, 3.0, &mut RngState::new(0)).unwrap();
        let mut c = cfg(1);
        c.batch_size = 0;
        let obj = Objective::Baseline(BaselineKind::L2);
        assert!(matches!(fit(&mut m, &ds.x, &ds.y, &obj, &c, &mut RngState::new(0), &mut no_metrics), Err(Error::Config(_))));
    }

    #[test]
    fn sgd_on_a_quadratic_bowl_decreases_loss_monotonically() {
        let target = [1.5, -0.5, 3.0];
        let loss = |w: &[f64]| w.iter().zip(target).map(|(a, b)| 0.5 * (a - b) * (a - b) * (1.0 + b * b)).sum::<f64>();
        let mut p = vec![param("w", vec![0.0; 3], true)];
        let mut o = Optimizer::new(OptimizerConfig::sgd(0.05), &p).unwrap();
        let mut prev = loss(p[0].value.data());
        for _ in 0..100 {
            let g: Vec<f64> = p[0].value.data().iter().zip(target).map(|(a, b)| (a - b) * (1.0 + b * b)).collect();
            o.step(&mut p, &[Tensor::vector(g)], 0.05);
            let l = loss(p[0].value.data());
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn fitting_is_deterministic_per_seed() {
        let ds = gen_synthetic(SyntheticFn::CosExp, 128, -3.0, 3.0, &mut RngState::new(4)).unwrap();
        let run = || {
            let mut m = small_model(ModelKind::ChoiceNet, 5);
            let f = ds.reference_fn.unwrap();
            let mut eval = |m: &Model| Ok((evaluate_rmse(m, &ds, false)?, evaluate_rmse_vs_reference(m, &f, 200)?));
            let mut r = fit(&mut m, &ds.x, &ds.y, &Objective::Regression(Default::default()), &cfg(3), &mut RngState::new(6), &mut eval).unwrap();
            r.epochs.iter_mut().for_each(|e| e.wall_seconds = 0.0);
            (r, m.params)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn one_step_equals_hand_computed_gradient_step() {
        let s = MlpSpec::new(vec![1], Activation::Relu, 1);
        let mut m = build_model(ModelKind::MlpL2, 1, &s, None, None, &mut RngState::new(0)).unwrap();
        m.params[0].value = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        m.params[1].value = Tensor::vector(vec![0.0]);
        m.params[2].value = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        m.params[3].value = Tensor::vector(vec![0.25]);
        let x = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let y = Tensor::new(vec![2, 1], vec![2.0, 1.0]).unwrap();
        let fc = FitConfig {
            epochs: 1,
            batch_size: 2,
            optimizer: OptimizerConfig::sgd(0.1),
        };
        // Residuals r = (0.75 - 2, 1.25 - 1) = (-1.25, 0.25); loss = mean r^2.
        // dL/dw2 = mean(2 r h) = (2 * -1.25 * 1 + 2 * 0.25 * 2) / 2 = -0.75
        // dL/db2 = mean(2 r) = -1.0
        // dL/dw1 = mean(2 r w2 x) = (-1.25 + 0.5) / 2 = -0.375 (ReLU active)
        // dL/db1 = mean(2 r w2) = (-1.25 + 0.25) / 2 = -0.5
        fit(&mut m, &x, &y, &Objective::Baseline(BaselineKind::L2), &fc, &mut RngState::new(0), &mut no_metrics).unwrap();
        let got: Vec<f64> = m.params.iter().map(|p| p.value.data()[0]).collect();
        let want = [1.0 + 0.0375, 0.05, 0.5 + 0.075, 0.25 + 0.1];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn shuffling_visits_every_row_once() {
        let mut rng = RngState::new(3);
        let mut p = rng.permutation(257);
        p.sort_unstable();
        assert_eq!(p, (0..257).collect::<Vec<_>>());
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let mut m = small_model(ModelKind::MlpL2, 0);
        let ds = gen_synthetic(SyntheticFn::CosExp, 8, -3.0, 3.0, &mut RngState::new(0)).unwrap();
        let y = ds.y.map(|_| 1e200);
        let e = fit(&mut m, &ds.x, &y, &Objective::Baseline(BaselineKind::L2), &cfg(1), &mut RngState::new(0), &mut no_metrics).unwrap_err();
        assert!(matches!(e, Error::NumericAbort(_)), "{e}");
        assert!(e.to_string().contains("epoch 0, step 0"), "{e}");
    }

    #[test]
    fn metric_examples() {
        let mut m = small_model(ModelKind::MlpL2, 0);
        for p in m.params.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let f = ReferenceFn::new(SyntheticFn::CosExp, -3.0, 3.0).unwrap();
        let r = evaluate_rmse_vs_reference(&m, &f, REFERENCE_GRID).unwrap();
        assert!((r - 0.458173060991772596).abs() < 1e-12, "{r}");
        let mut ds = gen_synthetic(SyntheticFn::CosExp, 10, -3.0, 3.0, &mut RngState::new(0)).unwrap();
        ds.y_clean = ds.y.map(|_| 1.0);
        assert_eq!(evaluate_rmse(&m, &ds, true).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]), 1.0);
        let mut rng = RngState::new(1);
        let labels: Vec<usize> = (0..100_000).map(|_| rng.below(10)).collect();
        let pred: Vec<usize> = (0..100_000).map(|_| rng.below(10)).collect();
        assert!((accuracy(&pred, &labels) - 0.1).abs() < 0.01);
    }
}
