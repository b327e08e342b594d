//! Experiment manifests: flat `key = value` lines, `#` comments, dotted keys
//! and comma-separated lists for sweep axes.

use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use choicenet::data::{CorruptionKind, CorruptionSpec, FlipMode, Selection, SyntheticFn, DIGIT_PERMUTATION};
use choicenet::losses::{BaselineKind, ClassificationLossConfig, RegressionLossConfig, TUKEY_C};
use choicenet::models::{Activation, ModelKind};
use choicenet::train::{Objective, OptimizerConfig, OptimizerKind};
use choicenet::{Error, Result};

pub const DATA_DIR_ENV: &str = "CHOICENET_DATA_DIR";

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed but untyped manifest. Keys are consumed as they are read so that
/// leftovers can be reported as unknown.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config(format!("line {line}: expected `key = value`, got {content:?}")));
            };
            let key = key.trim().to_string();
            let valid = !key.is_empty()
                && key.split('.').all(|part| {
                    !part.is_empty() && part.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
                });
            if !valid {
                return Err(Error::Config(format!("line {line}: invalid key {key:?}")));
            }
            let entry = Entry { value: value.trim().to_string(), line };
            if let Some(prev) = entries.insert(key.clone(), entry) {
                return Err(Error::Config(format!("line {line}: duplicate key {key:?} (first set on line {})", prev.line)));
            }
        }
        Ok(RawConfig { entries })
    }

    /// Sets or replaces a key (used for command-line overrides).
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), Entry { value: value.to_string(), line: 0 });
    }

    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn parse_value<T: FromStr>(key: &str, e: &Entry, text: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        text.parse::<T>()
            .map_err(|err| Error::Config(format!("{}{key}: cannot parse {text:?}: {err}", where_(e))))
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(e) => Self::parse_value(key, &e, &e.value).map(Some),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(',')
                .map(|item| Self::parse_value(key, &e, item.trim()))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// `none` disables an optional value.
    fn optional<T: FromStr>(&mut self, key: &str, default: Option<T>) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(default),
            Some(e) if e.value == "none" => Ok(None),
            Some(e) => Self::parse_value(key, &e, &e.value).map(Some),
        }
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    fn finish(self) -> Result<()> {
        if let Some((key, e)) = self.entries.iter().min_by_key(|(_, e)| e.line) {
            return Err(Error::Config(format!("{}unknown key {key:?}", where_(e))));
        }
        Ok(())
    }
}

fn where_(e: &Entry) -> String {
    if e.line == 0 {
        "override ".into()
    } else {
        format!("line {}: ", e.line)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlobLayout {
    /// Centres drawn uniformly from `[-spread, spread]^dim`.
    Random { spread: f64 },
    /// Centres at `+-separation / 2` on the first axis (two classes only).
    Axis { separation: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub std: f64,
    pub layout: BlobLayout,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdxSpec {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Keep only these digits, relabelled `0..len` in the given order.
    pub digits: Option<Vec<usize>>,
    pub max_train: Option<usize>,
    pub max_test: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Synthetic { function: SyntheticFn, n: usize, lo: f64, hi: f64 },
    Csv { path: PathBuf, target: String, test_fraction: f64 },
    Idx(IdxSpec),
    Blobs(BlobSpec),
}

impl DatasetSpec {
    pub fn is_classification(&self) -> bool {
        matches!(self, DatasetSpec::Idx(_) | DatasetSpec::Blobs(_))
    }

    /// Identifier written to the `dataset` column.
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::Synthetic { function, .. } => function.name().to_string(),
            DatasetSpec::Csv { path, .. } => {
                path.file_stem().map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned())
            }
            DatasetSpec::Idx(_) => "mnist".into(),
            DatasetSpec::Blobs(b) => format!("blobs{}", b.classes),
        }
    }
}

/// Corruption settings; `rates` is a sweep axis.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionTemplate {
    pub kind: Option<CorruptionKind>,
    pub rates: Vec<f64>,
    pub range: Option<(f64, f64)>,
    pub region: Option<(f64, f64)>,
    pub flip_mode: FlipMode,
    pub target_class: usize,
    pub source_class: Option<usize>,
    pub permutation: Option<Vec<usize>>,
    pub selection: Selection,
}

impl CorruptionTemplate {
    pub fn kind_name(&self) -> &'static str {
        self.kind.map_or("none", CorruptionKind::name)
    }

    /// Concrete spec at one rate. Tabular data supplies its own replacement
    /// range, so `range` may stay unset there.
    pub fn spec(&self, rate: f64, num_classes: usize) -> Result<CorruptionSpec> {
        let Some(kind) = self.kind else {
            return Ok(CorruptionSpec::none());
        };
        let mut spec = match kind {
            CorruptionKind::UniformReplace => {
                let (lo, hi) = self.range.unwrap_or((0.0, 1.0));
                CorruptionSpec::uniform_replace(rate, lo, hi)
            }
            CorruptionKind::FlipFunction => {
                let (lo, hi) = self
                    .region
                    .ok_or_else(|| Error::Config("flip_function needs corruption.region".into()))?;
                CorruptionSpec::flip_function(rate, lo, hi, self.flip_mode)
            }
            CorruptionKind::Symmetric => CorruptionSpec::symmetric(rate),
            CorruptionKind::Pairflip => CorruptionSpec::pairflip(rate),
            CorruptionKind::BiasedToClass => CorruptionSpec::biased_to_class(rate, self.target_class),
            CorruptionKind::Permutation => {
                let map = match &self.permutation {
                    Some(m) => m.clone(),
                    None if num_classes == 10 => DIGIT_PERMUTATION.to_vec(),
                    None => return Err(Error::Config("permutation noise needs corruption.permutation".into())),
                };
                CorruptionSpec::permutation(rate, map)
            }
        };
        spec.source_class = self.source_class;
        spec.selection = self.selection;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub k: usize,
    pub tau_inv: f64,
    pub rho_max: f64,
    pub mdn_k: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossSpec {
    pub regression: RegressionLossConfig,
    pub classification: ClassificationLossConfig,
    pub tukey_c: f64,
    pub leaky_slope: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub id: String,
    pub methods: Vec<ModelKind>,
    /// More than one entry only for a list of synthetic functions, which
    /// acts as an extra sweep axis.
    pub datasets: Vec<DatasetSpec>,
    /// Used when the IDX files are absent.
    pub fallback: Option<BlobSpec>,
    pub corruption: CorruptionTemplate,
    pub model: ModelSpec,
    pub loss: LossSpec,
    pub optimizer: OptimizerConfig,
    /// Gradient clipping for ChoiceNet runs.
    pub clip: Option<f64>,
    /// Gradient clipping for every other method.
    pub baseline_clip: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub checkpoints: bool,
    pub fits: bool,
}

/// Root for relative data paths: `$CHOICENET_DATA_DIR`, else `./data`.
pub fn data_root() -> PathBuf {
    env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

pub fn resolve_data_path(p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        data_root().join(path)
    }
}

fn pair(raw: &mut RawConfig, key: &str) -> Result<Option<(f64, f64)>> {
    let line = raw.line_of(key);
    match raw.list::<f64>(key)? {
        None => Ok(None),
        Some(v) if v.len() == 2 && v[0] < v[1] => Ok(Some((v[0], v[1]))),
        Some(v) => Err(Error::Config(format!("line {line}: {key} must be `lo, hi` with lo < hi, got {v:?}"))),
    }
}

fn blob_spec(raw: &mut RawConfig, prefix: &str) -> Result<BlobSpec> {
    let k = |s: &str| format!("{prefix}.{s}");
    let classes: usize = raw.require(&k("classes"))?;
    let layout: String = raw.or(&k("layout"), "random".to_string())?;
    let layout = match layout.as_str() {
        "random" => BlobLayout::Random { spread: raw.or(&k("spread"), 1.0)? },
        "axis" => {
            if classes != 2 {
                return Err(Error::Config(format!("{}: axis layout needs exactly 2 classes", k("layout"))));
            }
            BlobLayout::Axis { separation: raw.or(&k("separation"), 3.0)? }
        }
        other => return Err(Error::Config(format!("{}: unknown layout {other:?}", k("layout")))),
    };
    let spec = BlobSpec {
        classes,
        dim: raw.require(&k("dim"))?,
        std: raw.or(&k("std"), 0.5)?,
        layout,
        train_per_class: raw.require(&k("train_per_class"))?,
        test_per_class: raw.or(&k("test_per_class"), 500)?,
    };
    if spec.classes < 2 || spec.dim == 0 || !(spec.std > 0.0) || spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(Error::Config(format!("{prefix}: blob sizes must be positive with at least 2 classes")));
    }
    Ok(spec)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_overrides(path, &[])
    }

    /// Loads a manifest, then applies `key=value` overrides on top.
    pub fn load_with_overrides(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut raw = RawConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (k, v) in overrides {
            raw.set(k, v);
        }
        Self::from_raw(raw).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_raw(mut raw: RawConfig) -> Result<Self> {
        let id: String = raw.require("experiment")?;
        let methods: Vec<ModelKind> = raw.list("methods")?.unwrap_or_else(|| vec![ModelKind::ChoiceNet]);

        let kind: String = raw.require("dataset.kind")?;
        let mut fallback = None;
        let datasets = match kind.as_str() {
            "synthetic" => {
                let (lo, hi) = pair(&mut raw, "dataset.range")?.unwrap_or((-3.0, 3.0));
                let functions: Vec<SyntheticFn> =
                    raw.list("dataset.function")?.unwrap_or_else(|| vec![SyntheticFn::CosExp]);
                let n = raw.or("dataset.n", 1000)?;
                functions.into_iter().map(|function| DatasetSpec::Synthetic { function, n, lo, hi }).collect()
            }
            "csv" => {
                let line = raw.line_of("dataset.path");
                let p: String = raw.require("dataset.path")?;
                let path = resolve_data_path(&p);
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "line {line}: dataset.path {} does not exist",
                        path.display()
                    )));
                }
                vec![DatasetSpec::Csv {
                    path,
                    target: raw.require("dataset.target")?,
                    test_fraction: raw.or("dataset.test_fraction", 0.2)?,
                }]
            }
            "idx" => {
                let mut paths = Vec::new();
                for key in ["dataset.train_images", "dataset.train_labels", "dataset.test_images", "dataset.test_labels"] {
                    let line = raw.line_of(key);
                    let p: String = raw.require(key)?;
                    paths.push((key, line, resolve_data_path(&p)));
                }
                if raw.entries.contains_key("fallback.classes") {
                    fallback = Some(blob_spec(&mut raw, "fallback")?);
                }
                if fallback.is_none() {
                    if let Some((key, line, p)) = paths.iter().find(|(_, _, p)| !p.is_file()) {
                        return Err(Error::Config(format!("line {line}: {key} {} does not exist", p.display())));
                    }
                }
                let mut it = paths.into_iter().map(|(_, _, p)| p);
                vec![DatasetSpec::Idx(IdxSpec {
                    train_images: it.next().unwrap(),
                    train_labels: it.next().unwrap(),
                    test_images: it.next().unwrap(),
                    test_labels: it.next().unwrap(),
                    digits: raw.list("dataset.digits")?,
                    max_train: raw.get("dataset.max_train")?,
                    max_test: raw.get("dataset.max_test")?,
                })]
            }
            "blobs" => vec![DatasetSpec::Blobs(blob_spec(&mut raw, "dataset")?)],
            other => return Err(Error::Config(format!("dataset.kind: unknown kind {other:?}"))),
        };
        let classification = datasets[0].is_classification();

        let corruption_kind: String = raw.or("corruption.kind", "none".to_string())?;
        let corruption_kind = match corruption_kind.as_str() {
            "none" => None,
            s => Some(s.parse::<CorruptionKind>()?),
        };
        if let Some(k) = corruption_kind {
            if k.is_label_noise() != classification {
                return Err(Error::Config(format!("corruption.kind {k} does not apply to this dataset")));
            }
        }
        let selection = match raw.or("corruption.selection", "exact".to_string())?.as_str() {
            "exact" => Selection::ExactCount,
            "bernoulli" => Selection::Bernoulli,
            other => return Err(Error::Config(format!("corruption.selection: unknown {other:?}"))),
        };
        let flip_mode = match raw.or("corruption.flip_mode", "negate".to_string())?.as_str() {
            "negate" => FlipMode::Negate,
            "reflect_mean" => FlipMode::ReflectMean,
            other => return Err(Error::Config(format!("corruption.flip_mode: unknown {other:?}"))),
        };
        let rates_line = raw.line_of("corruption.rate");
        let rates: Vec<f64> = raw.list("corruption.rate")?.unwrap_or_else(|| vec![0.0]);
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config(format!("line {rates_line}: corruption.rate values must lie in [0, 1]")));
        }
        let corruption = CorruptionTemplate {
            kind: corruption_kind,
            rates,
            range: pair(&mut raw, "corruption.range")?,
            region: pair(&mut raw, "corruption.region")?,
            flip_mode,
            target_class: raw.or("corruption.target_class", 0)?,
            source_class: raw.get("corruption.source_class")?,
            permutation: raw.list("corruption.permutation")?,
            selection,
        };

        let model = ModelSpec {
            layers: raw.list("model.layers")?.unwrap_or_else(|| vec![64, 64]),
            activation: raw.or("model.activation", Activation::Relu)?,
            k: raw.or("model.k", 5)?,
            tau_inv: raw.or("model.tau_inv", 0.01)?,
            rho_max: raw.or("model.rho_max", 0.95)?,
            mdn_k: raw.or("model.mdn_k", 5)?,
        };
        if model.k == 0 || model.mdn_k == 0 || !(model.tau_inv > 0.0) || !(model.rho_max > 0.0 && model.rho_max < 1.0) {
            return Err(Error::Config("model: need k >= 1, mdn_k >= 1, tau_inv > 0, 0 < rho_max < 1".into()));
        }

        let loss = LossSpec {
            regression: RegressionLossConfig {
                lambda1: raw.or("loss.lambda1", 1.0)?,
                lambda2: raw.or("loss.lambda2", 1.0)?,
                lambda_kl: if classification { 0.01 } else { raw.or("loss.lambda_kl", 0.01)? },
            },
            classification: ClassificationLossConfig {
                lambda_reg: raw.or("loss.lambda_reg", 1e-4)?,
                lambda_kl: if classification { raw.or("loss.lambda_kl", 0.0)? } else { 0.0 },
            },
            tukey_c: raw.or("loss.tukey_c", TUKEY_C)?,
            leaky_slope: raw.or("loss.leaky_slope", 0.1)?,
        };
        loss.regression.validate()?;
        loss.classification.validate()?;

        let defaults = OptimizerConfig::default();
        let kind = match raw.or("optim.kind", "adam".to_string())?.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "sgd_momentum" => OptimizerKind::SgdMomentum,
            "adam" => OptimizerKind::Adam,
            other => return Err(Error::Config(format!("optim.kind: unknown optimizer {other:?}"))),
        };
        let schedule = match raw.list::<String>("optim.schedule")? {
            None => Vec::new(),
            Some(items) => items
                .iter()
                .map(|item| {
                    let (e, m) = item
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("optim.schedule: expected epoch:multiplier, got {item:?}")))?;
                    let e = e.trim().parse::<usize>().map_err(|err| Error::Config(format!("optim.schedule: {err}")))?;
                    let m = m.trim().parse::<f64>().map_err(|err| Error::Config(format!("optim.schedule: {err}")))?;
                    Ok((e, m))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let optimizer = OptimizerConfig {
            kind,
            learning_rate: raw.or("optim.lr", defaults.learning_rate)?,
            momentum: raw.or("optim.momentum", defaults.momentum)?,
            beta1: raw.or("optim.beta1", defaults.beta1)?,
            beta2: raw.or("optim.beta2", defaults.beta2)?,
            eps: raw.or("optim.eps", defaults.eps)?,
            weight_decay: raw.or("optim.weight_decay", 0.0)?,
            clip_norm: None,
            schedule,
        };
        optimizer.validate()?;
        let clip = raw.optional("optim.clip", Some(1.0))?;
        let baseline_clip = raw.optional("optim.baseline_clip", None)?;
        for c in [clip, baseline_clip].into_iter().flatten() {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norms must be positive, got {c}")));
            }
        }

        let epochs = raw.or("train.epochs", 100)?;
        let batch_size = raw.or("train.batch_size", 64)?;
        if batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        let seeds: Vec<u64> = raw.list("seeds")?.unwrap_or_else(|| (0..5).collect());
        if seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let output_dir = PathBuf::from(raw.or("output.dir", format!("results/{id}"))?);
        let checkpoints = raw.or("output.checkpoints", true)?;
        let fits = raw.or("output.fits", matches!(datasets[0], DatasetSpec::Synthetic { .. }))?;
        raw.finish()?;

        let cfg = ExperimentConfig {
            id,
            methods,
            datasets,
            fallback,
            corruption,
            model,
            loss,
            optimizer,
            clip,
            baseline_clip,
            epochs,
            batch_size,
            seeds,
            output_dir,
            checkpoints,
            fits,
        };
        for &m in &cfg.methods {
            cfg.objective(m)?;
        }
        Ok(cfg)
    }

    pub fn is_classification(&self) -> bool {
        self.datasets[0].is_classification()
    }

    /// Training objective for one method on this dataset.
    pub fn objective(&self, method: ModelKind) -> Result<Objective> {
        let cls = self.is_classification();
        Ok(match (method, cls) {
            (ModelKind::ChoiceNet, false) => Objective::Regression(self.loss.regression),
            (ModelKind::ChoiceNet | ModelKind::Mdn, true) => Objective::MixtureClassification(self.loss.classification),
            (ModelKind::Mdn, false) => Objective::MixtureNll,
            (ModelKind::MlpL2, false) => Objective::Baseline(BaselineKind::L2),
            (ModelKind::MlpL1, false) => Objective::Baseline(BaselineKind::L1),
            (ModelKind::MlpRobust, false) => Objective::Tukey { c: self.loss.tukey_c, leaky_slope: 0.0 },
            (ModelKind::MlpLeakyRobust, false) => Objective::Tukey { c: self.loss.tukey_c, leaky_slope: self.loss.leaky_slope },
            (ModelKind::MlpL2, true) => Objective::CrossEntropy,
            (m, true) => return Err(Error::Config(format!("method {m} is regression-only"))),
        })
    }

    pub fn optimizer_for(&self, method: ModelKind) -> OptimizerConfig {
        OptimizerConfig {
            clip_norm: if method == ModelKind::ChoiceNet { self.clip } else { self.baseline_clip },
            ..self.optimizer.clone()
        }
    }

    /// Number of `(dataset, method, rate, seed)` runs.
    pub fn run_count(&self) -> usize {
        self.datasets.len() * self.methods.len() * self.corruption.rates.len() * self.seeds.len()
    }
}
