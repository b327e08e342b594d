//! Model assembly: an MLP feature extractor followed by a linear, mixture
//! density or Cholesky Block head.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::block::{
    block_forward, BlockVars, CholeskyBlockConfig, CholeskyBlockParams, MixtureBatch, PARAM_NAMES,
};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::rng::{sample_standard_normal, RngState};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Lower bound on MDN component variances.
pub const MDN_VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::Config(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, output_dim: usize) -> Self {
        MlpSpec {
            layer_widths,
            activation,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() {
            return Err(Error::Config("MLP needs at least one hidden layer".into()));
        }
        if self.layer_widths.contains(&0) || self.output_dim == 0 {
            return Err(Error::Config("MLP widths and output dimension must be positive".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    ChoiceNet,
    MlpL2,
    MlpL1,
    MlpRobust,
    MlpLeakyRobust,
    Mdn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::ChoiceNet,
        ModelKind::MlpL2,
        ModelKind::MlpL1,
        ModelKind::MlpRobust,
        ModelKind::MlpLeakyRobust,
        ModelKind::Mdn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ChoiceNet => "choicenet",
            ModelKind::MlpL2 => "mlp_l2",
            ModelKind::MlpL1 => "mlp_l1",
            ModelKind::MlpRobust => "mlp_robust",
            ModelKind::MlpLeakyRobust => "mlp_leaky_robust",
            ModelKind::Mdn => "mdn",
        }
    }

    pub fn has_mixture_head(self) -> bool {
        matches!(self, ModelKind::ChoiceNet | ModelKind::Mdn)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

/// A model array. `decay` marks it for weight decay; arrays with
/// `trainable == false` are carried in checkpoints but never updated.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub decay: bool,
    pub trainable: bool,
}

#[derive(Clone, Debug)]
pub enum Head {
    Linear,
    Mdn { k: usize },
    Block(CholeskyBlockConfig),
}

#[derive(Clone, Debug)]
pub struct Model {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub mlp: MlpSpec,
    pub head: Head,
    pub params: Vec<Param>,
}

/// Head output of one forward pass.
#[derive(Clone, Debug)]
pub enum HeadOutput {
    Point(Var),
    Mixture(MixtureBatch),
}

/// Tape bindings of a forward pass. `vars[i]` is the leaf for `params[i]`.
#[derive(Clone, Debug)]
pub struct Forward {
    pub vars: Vec<Var>,
    pub head: HeadOutput,
}

/// Block configuration whose feature dimension matches `mlp` plus the
/// appended constant feature.
pub fn block_config_for(mlp: &MlpSpec, k: usize, tau_inv: f64, rho_max: f64) -> CholeskyBlockConfig {
    CholeskyBlockConfig {
        k,
        q: mlp.feature_dim() + 1,
        d: mlp.output_dim,
        tau_inv,
        rho_max,
    }
}

fn dense(rng: &mut RngState, fan_in: usize, fan_out: usize, act: Activation) -> Tensor {
    let var = match act {
        Activation::Relu => 2.0 / fan_in as f64,
        Activation::Tanh => 1.0 / fan_in as f64,
    };
    sample_standard_normal(rng, &[fan_in, fan_out]).map(|v| v * var.sqrt())
}

fn push(params: &mut Vec<Param>, name: String, value: Tensor, decay: bool) {
    params.push(Param {
        trainable: name != "block.log_sigma_z",
        name,
        value,
        decay,
    });
}

/// Builds and initializes a model for `input_dim` features.
///
/// `block_cfg` is required for ChoiceNet, `mixture_k` for the MDN.
pub fn build_model(
    kind: ModelKind,
    input_dim: usize,
    mlp: &MlpSpec,
    block_cfg: Option<CholeskyBlockConfig>,
    mixture_k: Option<usize>,
    rng: &mut RngState,
) -> Result<Model> {
    mlp.validate()?;
    if input_dim == 0 {
        return Err(Error::Config("input dimension must be positive".into()));
    }
    let mut params = Vec::new();
    let mut fan_in = input_dim;
    for (i, &w) in mlp.layer_widths.iter().enumerate() {
        push(&mut params, format!("layer{i}.w"), dense(rng, fan_in, w, mlp.activation), true);
        push(&mut params, format!("layer{i}.b"), Tensor::zeros(&[w]), true);
        fan_in = w;
    }
    let h = mlp.feature_dim();
    let d = mlp.output_dim;
    let head = match kind {
        ModelKind::ChoiceNet => {
            let cfg = block_cfg.ok_or_else(|| Error::Config("choicenet needs a block configuration".into()))?;
            cfg.validate()?;
            if cfg.q != h + 1 || cfg.d != d {
                return Err(Error::Config(format!(
                    "block expects Q = {} and D = {}, network gives Q = {} and D = {d}",
                    cfg.q,
                    cfg.d,
                    h + 1
                )));
            }
            let bp = CholeskyBlockParams::init(&cfg, rng)?;
            for (name, t) in bp.to_checkpoint() {
                let decay = !name.starts_with("log_sigma");
                push(&mut params, format!("block.{name}"), t, decay);
            }
            Head::Block(cfg)
        }
        ModelKind::Mdn => {
            let k = mixture_k.ok_or_else(|| Error::Config("mdn needs a mixture count".into()))?;
            if k == 0 {
                return Err(Error::Config("mdn mixture count must be positive".into()));
            }
            let scale = (1.0 / h as f64).sqrt();
            for (name, cols) in [("pi", k), ("mu", k * d), ("log_var", k * d)] {
                let w = sample_standard_normal(rng, &[h, cols]).map(|v| v * scale);
                push(&mut params, format!("mdn.{name}.w"), w, true);
                push(&mut params, format!("mdn.{name}.b"), Tensor::zeros(&[cols]), true);
            }
            Head::Mdn { k }
        }
        _ => {
            let w = dense(rng, h, d, Activation::Tanh);
            push(&mut params, "out.w".into(), w, true);
            push(&mut params, "out.b".into(), Tensor::zeros(&[d]), true);
            Head::Linear
        }
    };
    Ok(Model {
        kind,
        input_dim,
        mlp: mlp.clone(),
        head,
        params,
    })
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Number of parameters after the feature extractor.
    pub fn head_param_count(&self) -> usize {
        self.params[2 * self.mlp.layer_widths.len()..]
            .iter()
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.input_dim {
            return Err(Error::shape("model", format!("input {:?}, expected [N, {}]", x.shape(), self.input_dim)));
        }
        if !x.all_finite() {
            return Err(Error::Input("non-finite model input".into()));
        }
        Ok(())
    }

    fn features(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.mlp.layer_widths.len() {
            let z = tape.matmul(h, vars[2 * i])?;
            let z = tape.add(z, vars[2 * i + 1])?;
            h = match self.mlp.activation {
                Activation::Relu => tape.relu(z)?,
                Activation::Tanh => tape.tanh(z)?,
            };
        }
        Ok(h)
    }

    fn with_bias_feature(tape: &mut Tape, h: Var) -> Result<Var> {
        let n = tape.shape(h)[0];
        let one = tape.constant(Tensor::ones(&[n, 1]));
        tape.concat(&[h, one], 1)
    }

    fn block_vars(&self, vars: &[Var]) -> BlockVars {
        let base = 2 * self.mlp.layer_widths.len();
        BlockVars {
            mu_star: vars[base],
            log_sigma_star: vars[base + 1],
            log_sigma_z: vars[base + 2],
            w_rho: vars[base + 3],
            w_pi: vars[base + 4],
            w_sigma0: vars[base + 5],
        }
    }

    fn mdn_head(&self, tape: &mut Tape, vars: &[Var], h: Var, k: usize) -> Result<MixtureBatch> {
        let base = 2 * self.mlp.layer_widths.len();
        let d = self.mlp.output_dim;
        let lin = |tape: &mut Tape, j: usize| -> Result<Var> {
            let z = tape.matmul(h, vars[base + 2 * j])?;
            tape.add(z, vars[base + 2 * j + 1])
        };
        let logits = lin(tape, 0)?;
        let mu_all = lin(tape, 1)?;
        let lv_all = lin(tape, 2)?;
        let pi = tape.softmax(logits)?;
        let var_all = tape.exp(lv_all)?;
        let var_all = tape.max_const(var_all, MDN_VARIANCE_FLOOR)?;
        let mut mu = Vec::with_capacity(k);
        let mut sigma = Vec::with_capacity(k);
        for c in 0..k {
            mu.push(tape.narrow(mu_all, 1, c * d, d)?);
            sigma.push(tape.narrow(var_all, 1, c * d, d)?);
        }
        Ok(MixtureBatch {
            pi,
            rho: None,
            mu,
            sigma,
        })
    }

    /// Training-mode forward pass with all parameters bound as tape leaves.
    /// ChoiceNet draws its weight noise from `rng`.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor, rng: &mut RngState) -> Result<Forward> {
        self.check_input(x)?;
        let vars: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let xv = tape.constant(x.clone());
        let h = self.features(tape, &vars, xv)?;
        let head = match &self.head {
            Head::Linear => {
                let base = vars.len() - 2;
                let z = tape.matmul(h, vars[base])?;
                HeadOutput::Point(tape.add(z, vars[base + 1])?)
            }
            Head::Mdn { k } => HeadOutput::Mixture(self.mdn_head(tape, &vars, h, *k)?),
            Head::Block(cfg) => {
                let hb = Self::with_bias_feature(tape, h)?;
                let bv = self.block_vars(&vars);
                HeadOutput::Mixture(block_forward(tape, &bv, cfg, hb, rng)?)
            }
        };
        Ok(Forward { vars, head })
    }

    /// Deterministic predictions, `[N, D]`: the target-mixture mean for
    /// ChoiceNet, the mean of the most probable component for the MDN (ties go
    /// to the lowest index) and the network output otherwise.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        let xv = tape.constant(x.clone());
        let h = self.features(&mut tape, &vars, xv)?;
        match &self.head {
            Head::Linear => {
                let base = vars.len() - 2;
                let z = tape.matmul(h, vars[base])?;
                let out = tape.add(z, vars[base + 1])?;
                Ok(tape.value(out).clone())
            }
            Head::Block(_) => {
                let hb = Self::with_bias_feature(&mut tape, h)?;
                let out = tape.matmul(hb, self.block_vars(&vars).mu_star)?;
                Ok(tape.value(out).clone())
            }
            Head::Mdn { k } => {
                let mix = self.mdn_head(&mut tape, &vars, h, *k)?;
                let pi = tape.value(mix.pi);
                let n = pi.rows();
                let d = self.mlp.output_dim;
                let mut out = Vec::with_capacity(n * d);
                for i in 0..n {
                    let best = argmax(pi.row(i));
                    out.extend_from_slice(tape.value(mix.mu[best]).row(i));
                }
                Tensor::new(vec![n, d], out)
            }
        }
    }

    /// Predicted class per row: argmax of the prediction, lowest index on ties.
    pub fn predict_classes(&self, x: &Tensor) -> Result<Vec<usize>> {
        let scores = self.predict(x)?;
        Ok((0..scores.rows()).map(|i| argmax(scores.row(i))).collect())
    }

    pub fn to_checkpoint(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Replaces parameter values by name; every parameter must be present with
    /// its current shape.
    pub fn load_checkpoint(&mut self, arrays: &[(String, Tensor)]) -> Result<()> {
        let mut values = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let t = arrays
                .iter()
                .find(|(n, _)| *n == p.name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks array {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Data(format!(
                    "array {} has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            values.push(t.clone());
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_checkpoint())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        self.load_checkpoint(&checkpoint::load(path)?)
    }

    /// The Cholesky Block parameters of a ChoiceNet model.
    pub fn block_params(&self) -> Option<CholeskyBlockParams> {
        let Head::Block(cfg) = &self.head else { return None };
        let arrays: Vec<(String, Tensor)> = PARAM_NAMES
            .iter()
            .map(|n| {
                let full = format!("block.{n}");
                let p = self.params.iter().find(|p| p.name == full).expect("block parameter");
                (n.to_string(), p.value.clone())
            })
            .collect();
        CholeskyBlockParams::from_checkpoint(&arrays, cfg).ok()
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
