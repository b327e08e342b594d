//! Datasets, corruption models and file ingestion.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Label map of the permutation noise setting.
pub const DIGIT_PERMUTATION: [usize; 10] = [7, 9, 0, 4, 2, 1, 3, 5, 6, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticFn {
    CosExp,
    /// `cos(pi x) exp(-x^2)`: the same bump at twice the frequency and half the width.
    CosExpNarrow,
    Linear,
    Step,
}

impl SyntheticFn {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticFn::CosExp => "cosexp",
            SyntheticFn::CosExpNarrow => "cosexp_narrow",
            SyntheticFn::Linear => "linear",
            SyntheticFn::Step => "step",
        }
    }
}

impl FromStr for SyntheticFn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosexp" => Ok(SyntheticFn::CosExp),
            "cosexp_narrow" => Ok(SyntheticFn::CosExpNarrow),
            "linear" => Ok(SyntheticFn::Linear),
            "step" => Ok(SyntheticFn::Step),
            _ => Err(Error::Config(format!("unknown synthetic function {s:?}"))),
        }
    }
}

impl fmt::Display for SyntheticFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn cosexp(x: f64) -> f64 {
    (PI / 2.0 * x).cos() * (-(x / 2.0).powi(2)).exp()
}

/// A synthetic target bound to its input range (the linear and step
/// functions are defined relative to it).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceFn {
    pub kind: SyntheticFn,
    pub lo: f64,
    pub hi: f64,
}

impl ReferenceFn {
    pub fn new(kind: SyntheticFn, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("invalid input range [{lo}, {hi}]")));
        }
        Ok(ReferenceFn { kind, lo, hi })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            SyntheticFn::CosExp => cosexp(x),
            SyntheticFn::CosExpNarrow => (PI * x).cos() * (-x * x).exp(),
            SyntheticFn::Linear => 2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0,
            SyntheticFn::Step => {
                if x < 0.5 * (self.lo + self.hi) {
                    -0.5
                } else {
                    0.5
                }
            }
        }
    }

    /// `n` evenly spaced points over the range, endpoints included.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        linspace(self.lo, self.hi, n)
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Per-column mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    /// Population statistics; constant columns get unit scale.
    pub fn fit(t: &Tensor) -> Self {
        let (n, c) = (t.rows(), t.cols());
        let mut mean = vec![0.0; c];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(t.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(t.row(i)).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        ColumnStats { mean, std }
    }

    pub fn apply(&self, t: &Tensor) -> Tensor {
        let c = t.cols();
        let mut out = t.clone();
        for (j, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[j % c]) / self.std[j % c];
        }
        out
    }

    pub fn invert(&self, t: &Tensor) -> Tensor {
        let c = t.cols();
        let mut out = t.clone();
        for (j, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[j % c] + self.mean[j % c];
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionDataset {
    pub x: Tensor,
    pub y: Tensor,
    pub y_clean: Tensor,
    pub corrupted_mask: Vec<bool>,
    pub reference_fn: Option<ReferenceFn>,
    /// Set when `y` and `y_clean` are standardized; inverts them to original units.
    pub target_stats: Option<ColumnStats>,
}

impl RegressionDataset {
    pub fn new(x: Tensor, y: Tensor) -> Result<Self> {
        if x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows() {
            return Err(Error::shape("dataset", format!("x {:?}, y {:?}", x.shape(), y.shape())));
        }
        let n = x.rows();
        Ok(RegressionDataset {
            y_clean: y.clone(),
            x,
            y,
            corrupted_mask: vec![false; n],
            reference_fn: None,
            target_stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn corrupted_fraction(&self) -> f64 {
        self.corrupted_mask.iter().filter(|&&m| m).count() as f64 / self.len() as f64
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        RegressionDataset {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            y_clean: self.y_clean.select_rows(idx),
            corrupted_mask: idx.iter().map(|&i| self.corrupted_mask[i]).collect(),
            reference_fn: self.reference_fn,
            target_stats: self.target_stats.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub true_labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(x: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if x.rank() != 2 || x.rows() != labels.len() {
            return Err(Error::shape("dataset", format!("x {:?} with {} labels", x.shape(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(LabeledDataset {
            x,
            true_labels: labels.clone(),
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        LabeledDataset {
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            true_labels: idx.iter().map(|&i| self.true_labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// One-hot encoding of `labels` (or `true_labels`).
    pub fn one_hot(&self, use_true_labels: bool) -> Tensor {
        let src = if use_true_labels { &self.true_labels } else { &self.labels };
        let c = self.num_classes;
        let mut t = Tensor::zeros(&[src.len(), c]);
        for (i, &l) in src.iter().enumerate() {
            t.data_mut()[i * c + l] = 1.0;
        }
        t
    }

    pub fn true_label_fraction(&self) -> f64 {
        let ok = self.labels.iter().zip(&self.true_labels).filter(|(a, b)| a == b).count();
        ok as f64 / self.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptionKind {
    UniformReplace,
    FlipFunction,
    Symmetric,
    Pairflip,
    BiasedToClass,
    Permutation,
}

impl CorruptionKind {
    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::UniformReplace => "uniform_replace",
            CorruptionKind::FlipFunction => "flip_function",
            CorruptionKind::Symmetric => "symmetric",
            CorruptionKind::Pairflip => "pairflip",
            CorruptionKind::BiasedToClass => "biased_to_class",
            CorruptionKind::Permutation => "permutation",
        }
    }

    pub fn is_label_noise(self) -> bool {
        !matches!(self, CorruptionKind::UniformReplace | CorruptionKind::FlipFunction)
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            CorruptionKind::UniformReplace,
            CorruptionKind::FlipFunction,
            CorruptionKind::Symmetric,
            CorruptionKind::Pairflip,
            CorruptionKind::BiasedToClass,
            CorruptionKind::Permutation,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown corruption kind {s:?}")))
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FlipMode {
    /// `-f(x)`
    #[default]
    Negate,
    /// `2 m - f(x)` with `m` the mean target over the region.
    ReflectMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Selection {
    /// Exactly `floor(p * M)` of the `M` eligible examples.
    #[default]
    ExactCount,
    /// Each eligible example independently with probability `p`.
    Bernoulli,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub rate: f64,
    pub range_lo: f64,
    pub range_hi: f64,
    pub region: Option<(f64, f64)>,
    pub flip_mode: FlipMode,
    pub target_class: usize,
    pub permutation: Vec<usize>,
    /// Restricts label noise to examples of this true class.
    pub source_class: Option<usize>,
    pub selection: Selection,
}

impl CorruptionSpec {
    fn base(kind: CorruptionKind, rate: f64) -> Self {
        CorruptionSpec {
            kind,
            rate,
            range_lo: 0.0,
            range_hi: 0.0,
            region: None,
            flip_mode: FlipMode::Negate,
            target_class: 0,
            permutation: Vec::new(),
            source_class: None,
            selection: Selection::ExactCount,
        }
    }

    pub fn none() -> Self {
        Self::base(CorruptionKind::UniformReplace, 0.0)
    }

    pub fn uniform_replace(rate: f64, lo: f64, hi: f64) -> Self {
        CorruptionSpec {
            range_lo: lo,
            range_hi: hi,
            ..Self::base(CorruptionKind::UniformReplace, rate)
        }
    }

    pub fn flip_function(rate: f64, region_lo: f64, region_hi: f64, mode: FlipMode) -> Self {
        CorruptionSpec {
            region: Some((region_lo, region_hi)),
            flip_mode: mode,
            ..Self::base(CorruptionKind::FlipFunction, rate)
        }
    }

    pub fn symmetric(rate: f64) -> Self {
        Self::base(CorruptionKind::Symmetric, rate)
    }

    pub fn pairflip(rate: f64) -> Self {
        Self::base(CorruptionKind::Pairflip, rate)
    }

    pub fn biased_to_class(rate: f64, target_class: usize) -> Self {
        CorruptionSpec {
            target_class,
            ..Self::base(CorruptionKind::BiasedToClass, rate)
        }
    }

    pub fn permutation(rate: f64, map: Vec<usize>) -> Self {
        CorruptionSpec {
            permutation: map,
            ..Self::base(CorruptionKind::Permutation, rate)
        }
    }

    pub fn with_selection(mut self, selection: Selection) -> Self {
        self.selection = selection;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Config(format!("corruption rate {} outside [0, 1]", self.rate)));
        }
        match self.kind {
            CorruptionKind::UniformReplace if self.rate > 0.0 && !(self.range_lo < self.range_hi) => Err(
                Error::Config(format!("uniform range [{}, {}] is empty", self.range_lo, self.range_hi)),
            ),
            CorruptionKind::FlipFunction => match self.region {
                Some((lo, hi)) if lo <= hi => Ok(()),
                Some(_) => Err(Error::Config("flip region is empty".into())),
                None => Err(Error::Config("flip_function needs a region".into())),
            },
            CorruptionKind::Permutation => {
                let mut seen = vec![false; self.permutation.len()];
                for &p in &self.permutation {
                    if p >= seen.len() || std::mem::replace(&mut seen[p], true) {
                        return Err(Error::Config("label permutation is not a bijection".into()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn select(&self, eligible: Vec<usize>, rng: &mut RngState) -> Vec<usize> {
        match self.selection {
            Selection::ExactCount => {
                let m = (self.rate * eligible.len() as f64).floor() as usize;
                let mut picked = eligible;
                rng.shuffle(&mut picked);
                picked.truncate(m);
                picked.sort_unstable();
                picked
            }
            Selection::Bernoulli => eligible.into_iter().filter(|_| rng.bernoulli(self.rate)).collect(),
        }
    }
}

/// Uniform inputs over `[lo, hi]`, clean targets from `kind`.
pub fn gen_synthetic(kind: SyntheticFn, n: usize, lo: f64, hi: f64, rng: &mut RngState) -> Result<RegressionDataset> {
    if n == 0 {
        return Err(Error::Config("synthetic dataset needs at least one point".into()));
    }
    let f = ReferenceFn::new(kind, lo, hi)?;
    let xs: Vec<f64> = (0..n).map(|_| rng.uniform_range(lo, hi)).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| f.eval(x)).collect();
    let mut ds = RegressionDataset::new(Tensor::new(vec![n, 1], xs)?, Tensor::new(vec![n, 1], ys)?)?;
    ds.reference_fn = Some(f);
    Ok(ds)
}

/// Replaces selected targets. Inputs and clean targets are never touched.
pub fn corrupt_regression(ds: &RegressionDataset, spec: &CorruptionSpec, rng: &mut RngState) -> Result<RegressionDataset> {
    spec.validate()?;
    let mut out = ds.clone();
    let n = ds.len();
    let d = ds.y.cols();
    match spec.kind {
        CorruptionKind::UniformReplace => {
            for i in spec.select((0..n).collect(), rng) {
                for j in 0..d {
                    out.y.data_mut()[i * d + j] = rng.uniform_range(spec.range_lo, spec.range_hi);
                }
                out.corrupted_mask[i] = true;
            }
        }
        CorruptionKind::FlipFunction => {
            let (lo, hi) = spec.region.expect("validated");
            let eligible: Vec<usize> = (0..n).filter(|&i| (lo..=hi).contains(&ds.x.get2(i, 0))).collect();
            let mut centre = vec![0.0; d];
            if !eligible.is_empty() {
                for &i in &eligible {
                    for (c, v) in centre.iter_mut().zip(ds.y_clean.row(i)) {
                        *c += v / eligible.len() as f64;
                    }
                }
            }
            for i in spec.select(eligible, rng) {
                for j in 0..d {
                    let clean = ds.y_clean.get2(i, j);
                    out.y.data_mut()[i * d + j] = match spec.flip_mode {
                        FlipMode::Negate => -clean,
                        FlipMode::ReflectMean => 2.0 * centre[j] - clean,
                    };
                }
                out.corrupted_mask[i] = true;
            }
        }
        other => {
            return Err(Error::Config(format!("{other} is a label corruption, not a regression one")));
        }
    }
    Ok(out)
}

/// Rewrites selected labels; `true_labels` and inputs are left as they are.
pub fn corrupt_labels(ds: &LabeledDataset, spec: &CorruptionSpec, rng: &mut RngState) -> Result<LabeledDataset> {
    spec.validate()?;
    let c = ds.num_classes;
    match spec.kind {
        CorruptionKind::Permutation if spec.permutation.len() != c => {
            return Err(Error::Config(format!(
                "permutation has {} entries for {c} classes",
                spec.permutation.len()
            )));
        }
        CorruptionKind::BiasedToClass if spec.target_class >= c => {
            return Err(Error::Config(format!("target class {} outside 0..{c}", spec.target_class)));
        }
        CorruptionKind::UniformReplace | CorruptionKind::FlipFunction => {
            return Err(Error::Config(format!("{} is a regression corruption", spec.kind)));
        }
        _ => {}
    }
    let eligible: Vec<usize> = (0..ds.len())
        .filter(|&i| spec.source_class.is_none_or(|s| ds.true_labels[i] == s))
        .collect();
    let mut out = ds.clone();
    for i in spec.select(eligible, rng) {
        let l = ds.labels[i];
        out.labels[i] = match spec.kind {
            CorruptionKind::Symmetric => rng.below(c),
            CorruptionKind::Pairflip => (l + 1) % c,
            CorruptionKind::BiasedToClass => spec.target_class,
            CorruptionKind::Permutation => spec.permutation[l],
            _ => unreachable!(),
        };
    }
    Ok(out)
}

/// Fraction of labels expected to stay correct under label noise of rate `p`.
///
/// `permutation` is consulted for the permutation kind only; its fixed points
/// keep their labels.
pub fn expected_true_ratio(kind: CorruptionKind, p: f64, num_classes: usize, permutation: &[usize]) -> f64 {
    match kind {
        CorruptionKind::Symmetric => 1.0 - p + p / num_classes as f64,
        CorruptionKind::Permutation => {
            let fixed = permutation.iter().enumerate().filter(|(i, &v)| *i == v).count();
            let frac = if permutation.is_empty() {
                0.0
            } else {
                fixed as f64 / permutation.len() as f64
            };
            1.0 - p + p * frac
        }
        _ => 1.0 - p,
    }
}

/// Reads a comma-separated table with one header row; `target` names the
/// response column and every other column becomes a feature.
pub fn load_csv_regression(path: &Path, target: &str) -> Result<RegressionDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: header: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let t = headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::Config(format!("target column {target:?} not in {}", path.display())))?;
    let width = headers.len();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (r, rec) in reader.records().enumerate() {
        let row = r + 2;
        let rec = rec.map_err(|e| Error::Data(format!("{}: row {row}: {e}", path.display())))?;
        if rec.len() != width {
            return Err(Error::Data(format!("{}: row {row}: {} fields, expected {width}", path.display(), rec.len())));
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!("{}: row {row}, column {}: non-numeric {cell:?}", path.display(), c + 1))
            })?;
            if c == t {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let n = ys.len();
    RegressionDataset::new(Tensor::new(vec![n, width - 1], xs)?, Tensor::new(vec![n, 1], ys)?)
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Data(format!("{what}: truncated at offset {offset}")))
}

/// Reads an IDX image file and its label file. Pixels are scaled to `[0, 1]`
/// and flattened row-major.
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let img = fs::read(images)?;
    let lab = fs::read(labels)?;
    let img_name = images.display().to_string();
    let lab_name = labels.display().to_string();
    let magic = be_u32(&img, 0, &img_name)?;
    if magic != 0x0000_0803 {
        return Err(Error::Data(format!("{img_name}: bad magic {magic:#010x} at offset 0")));
    }
    let magic = be_u32(&lab, 0, &lab_name)?;
    if magic != 0x0000_0801 {
        return Err(Error::Data(format!("{lab_name}: bad magic {magic:#010x} at offset 0")));
    }
    let n = be_u32(&img, 4, &img_name)? as usize;
    let rows = be_u32(&img, 8, &img_name)? as usize;
    let cols = be_u32(&img, 12, &img_name)? as usize;
    let m = be_u32(&lab, 4, &lab_name)? as usize;
    if n != m {
        return Err(Error::Data(format!("{img_name} has {n} images but {lab_name} has {m} labels (offset 4)")));
    }
    let pixels = rows * cols;
    if n == 0 || pixels == 0 {
        return Err(Error::Data(format!("{img_name}: empty image set")));
    }
    let body = img
        .get(16..16 + n * pixels)
        .ok_or_else(|| Error::Data(format!("{img_name}: truncated at offset {}", img.len())))?;
    let lbody = lab
        .get(8..8 + n)
        .ok_or_else(|| Error::Data(format!("{lab_name}: truncated at offset {}", lab.len())))?;
    let mut labels = Vec::with_capacity(n);
    for (i, &b) in lbody.iter().enumerate() {
        if b > 9 {
            return Err(Error::Data(format!("{lab_name}: label {b} at offset {} outside 0..10", 8 + i)));
        }
        labels.push(b as usize);
    }
    let x = Tensor::new(vec![n, pixels], body.iter().map(|&p| p as f64 / 255.0).collect())?;
    LabeledDataset::new(x, labels, 10)
}

/// Writes IDX image and label files (used for fixtures).
pub fn write_idx(images: &Path, labels: &Path, pixels: &[Vec<u8>], rows: usize, cols: usize, y: &[u8]) -> Result<()> {
    let mut img = Vec::new();
    img.extend_from_slice(&0x0803u32.to_be_bytes());
    for v in [pixels.len(), rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for p in pixels {
        if p.len() != rows * cols {
            return Err(Error::shape("write_idx", "image size mismatch"));
        }
        img.extend_from_slice(p);
    }
    let mut lab = Vec::new();
    lab.extend_from_slice(&0x0801u32.to_be_bytes());
    lab.extend_from_slice(&(y.len() as u32).to_be_bytes());
    lab.extend_from_slice(y);
    fs::write(images, img)?;
    fs::write(labels, lab)?;
    Ok(())
}

/// Shuffled index split; the first returned set holds `1 - test_fraction`.
pub fn train_test_split(n: usize, test_fraction: f64, rng: &mut RngState) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let perm = rng.permutation(n);
    let n_test = (test_fraction * n as f64).round() as usize;
    let (test, train) = perm.split_at(n_test);
    if train.is_empty() {
        return Err(Error::Config("split leaves no training data".into()));
    }
    Ok((train.to_vec(), test.to_vec()))
}

/// Standardized train/test regression pair with outliers in the training split.
#[derive(Clone, Debug)]
pub struct RegressionSplit {
    pub train: RegressionDataset,
    pub test: RegressionDataset,
    pub feature_stats: ColumnStats,
    pub target_stats: ColumnStats,
}

/// Splits `ds`, replaces a fraction of the training targets with uniform draws
/// over the training target range, then standardizes features and targets
/// with training-split statistics. Test targets stay clean.
pub fn prepare_tabular_regression(
    ds: &RegressionDataset,
    test_fraction: f64,
    rate: f64,
    split_rng: &mut RngState,
    noise_rng: &mut RngState,
) -> Result<RegressionSplit> {
    let (train_idx, test_idx) = train_test_split(ds.len(), test_fraction, split_rng)?;
    let mut train = ds.subset(&train_idx);
    let mut test = ds.subset(&test_idx);
    let ys = train.y.data();
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    train = corrupt_regression(&train, &CorruptionSpec::uniform_replace(rate, lo, hi), noise_rng)?;
    let feature_stats = ColumnStats::fit(&train.x);
    let target_stats = ColumnStats::fit(&train.y);
    for part in [&mut train, &mut test] {
        part.x = feature_stats.apply(&part.x);
        part.y = target_stats.apply(&part.y);
        part.y_clean = target_stats.apply(&part.y_clean);
        part.target_stats = Some(target_stats.clone());
    }
    Ok(RegressionSplit {
        train,
        test,
        feature_stats,
        target_stats,
    })
}

/// `n_per_class` isotropic Gaussian points around each centre, interleaved by
/// class.
pub fn gaussian_blobs(centres: &[Vec<f64>], std: f64, n_per_class: usize, rng: &mut RngState) -> Result<LabeledDataset> {
    let d = centres.first().map(Vec::len).unwrap_or(0);
    if d == 0 || centres.iter().any(|c| c.len() != d) {
        return Err(Error::Config("blob centres must share a positive dimension".into()));
    }
    let c = centres.len();
    let mut xs = Vec::with_capacity(n_per_class * c * d);
    let mut labels = Vec::with_capacity(n_per_class * c);
    for _ in 0..n_per_class {
        for (l, centre) in centres.iter().enumerate() {
            xs.extend(centre.iter().map(|&m| rng.normal(m, std)));
            labels.push(l);
        }
    }
    LabeledDataset::new(Tensor::new(vec![labels.len(), d], xs)?, labels, c)
}

/// `num_classes` centres drawn uniformly in `[-spread, spread]^dim`.
pub fn random_centres(num_classes: usize, dim: usize, spread: f64, rng: &mut RngState) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|_| (0..dim).map(|_| rng.uniform_range(-spread, spread)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosexp_examples() {
        assert_eq!(cosexp(0.0), 1.0);
        assert!(cosexp(1.0).abs() < 1e-16);
        assert!((cosexp(2.0) + 0.367879441171442).abs() < 1e-14);
    }

    #[test]
    fn linear_and_step_use_the_range() {
        let l = ReferenceFn::new(SyntheticFn::Linear, -3.0, 3.0).unwrap();
        assert_eq!(l.eval(-3.0), -1.0);
        assert_eq!(l.eval(3.0), 1.0);
        assert_eq!(l.eval(0.0), 0.0);
        let s = ReferenceFn::new(SyntheticFn::Step, 0.0, 4.0).unwrap();
        assert_eq!(s.eval(1.99), -0.5);
        assert_eq!(s.eval(2.0), 0.5);
        assert!("sine".parse::<SyntheticFn>().is_err());
    }

    #[test]
    fn synthetic_inputs_cover_the_range() {
        let ds = gen_synthetic(SyntheticFn::CosExp, 1000, -3.0, 3.0, &mut RngState::new(1)).unwrap();
        assert!(ds.x.data().iter().all(|&x| (-3.0..3.0).contains(&x)));
        assert_eq!(ds.y, ds.y_clean);
        assert!(ds.corrupted_mask.iter().all(|&m| !m));
        for i in 0..10 {
            assert_eq!(ds.y.get2(i, 0), cosexp(ds.x.get2(i, 0)));
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let ds = gen_synthetic(SyntheticFn::Step, 50, -1.0, 1.0, &mut RngState::new(2)).unwrap();
        let out = corrupt_regression(&ds, &CorruptionSpec::uniform_replace(0.0, -1.0, 3.0), &mut RngState::new(3)).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn full_uniform_replacement_has_uniform_mean() {
        let ds = gen_synthetic(SyntheticFn::CosExp, 10_000, -3.0, 3.0, &mut RngState::new(4)).unwrap();
        let out = corrupt_regression(&ds, &CorruptionSpec::uniform_replace(1.0, -1.0, 3.0), &mut RngState::new(5)).unwrap();
        assert!(out.y.data().iter().all(|&y| (-1.0..=3.0).contains(&y)));
        let mean = out.y.sum() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
        assert!(out.corrupted_mask.iter().all(|&m| m));
        assert_eq!(out.x, ds.x);
        assert_eq!(out.y_clean, ds.y_clean);
    }

    #[test]
    fn negation_flip_at_origin() {
        let mut ds = RegressionDataset::new(
            Tensor::new(vec![3, 1], vec![0.0, 1.5, 2.5]).unwrap(),
            Tensor::new(vec![3, 1], vec![cosexp(0.0), cosexp(1.5), cosexp(2.5)]).unwrap(),
        )
        .unwrap();
        ds.reference_fn = Some(ReferenceFn::new(SyntheticFn::CosExp, -3.0, 3.0).unwrap());
        let spec = CorruptionSpec::flip_function(1.0, 0.0, 2.0, FlipMode::Negate);
        let out = corrupt_regression(&ds, &spec, &mut RngState::new(0)).unwrap();
        assert_eq!(out.y.data()[0], -1.0);
        assert_eq!(out.y.data()[1], -cosexp(1.5));
        assert_eq!(out.y.data()[2], cosexp(2.5));
        assert_eq!(out.corrupted_mask, vec![true, true, false]);

        let spec = CorruptionSpec::flip_function(1.0, 0.0, 2.0, FlipMode::ReflectMean);
        let out = corrupt_regression(&ds, &spec, &mut RngState::new(0)).unwrap();
        let m = 0.5 * (cosexp(0.0) + cosexp(1.5));
        assert!((out.y.data()[0] - (2.0 * m - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn flip_without_region_is_a_config_error() {
        let ds = gen_synthetic(SyntheticFn::CosExp, 5, -3.0, 3.0, &mut RngState::new(0)).unwrap();
        let mut spec = CorruptionSpec::flip_function(0.5, 0.0, 2.0, FlipMode::Negate);
        spec.region = None;
        assert!(matches!(corrupt_regression(&ds, &spec, &mut RngState::new(0)), Err(Error::Config(_))));
    }

    fn labeled(n: usize, c: usize, seed: u64) -> LabeledDataset {
        let mut rng = RngState::new(seed);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        LabeledDataset::new(Tensor::zeros(&[n, 1]), labels, c).unwrap()
    }

    #[test]
    fn label_noise_examples() {
        let ds = labeled(200, 10, 1);
        let same = corrupt_labels(&ds, &CorruptionSpec::symmetric(0.0), &mut RngState::new(2)).unwrap();
        assert_eq!(same, ds);
        let zeros = LabeledDataset::new(Tensor::zeros(&[4, 1]), vec![0, 0, 3, 9], 10).unwrap();
        let p = corrupt_labels(&zeros, &CorruptionSpec::permutation(1.0, DIGIT_PERMUTATION.to_vec()), &mut RngState::new(0)).unwrap();
        assert_eq!(p.labels, vec![7, 7, 4, 8]);
        assert_eq!(p.true_labels, vec![0, 0, 3, 9]);
        let f = corrupt_labels(&zeros, &CorruptionSpec::pairflip(1.0), &mut RngState::new(0)).unwrap();
        assert_eq!(f.labels, vec![1, 1, 4, 0]);
        let b = corrupt_labels(&zeros, &CorruptionSpec::biased_to_class(1.0, 5), &mut RngState::new(0)).unwrap();
        assert_eq!(b.labels, vec![5; 4]);
        let short = CorruptionSpec::permutation(0.5, vec![1, 0]);
        assert!(matches!(corrupt_labels(&ds, &short, &mut RngState::new(0)), Err(Error::Config(_))));
    }

    #[test]
    fn source_class_limits_the_noise() {
        let ds = labeled(1000, 2, 7);
        let mut spec = CorruptionSpec::biased_to_class(0.4, 1);
        spec.source_class = Some(0);
        let out = corrupt_labels(&ds, &spec, &mut RngState::new(8)).unwrap();
        let zeros = ds.labels.iter().filter(|&&l| l == 0).count();
        let flipped = out.labels.iter().zip(&ds.labels).filter(|(a, b)| a != b).count();
        assert_eq!(flipped, (0.4 * zeros as f64).floor() as usize);
        assert!(out.labels.iter().zip(&ds.labels).all(|(a, b)| a == b || *b == 0));
    }

    #[test]
    fn expected_true_ratio_examples() {
        assert!((expected_true_ratio(CorruptionKind::Symmetric, 0.2, 10, &[]) - 0.82).abs() < 1e-15);
        assert!((expected_true_ratio(CorruptionKind::Symmetric, 0.5, 10, &[]) - 0.55).abs() < 1e-15);
        assert!((expected_true_ratio(CorruptionKind::Pairflip, 0.45, 10, &[]) - 0.55).abs() < 1e-15);
        assert!((expected_true_ratio(CorruptionKind::Permutation, 0.5, 10, &DIGIT_PERMUTATION) - 0.5).abs() < 1e-15);
        let with_fixed = [0, 2, 1, 3];
        assert!((expected_true_ratio(CorruptionKind::Permutation, 0.4, 4, &with_fixed) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn symmetric_noise_tracks_expected_ratio() {
        let ds = labeled(100_000, 10, 3);
        for p in [0.2, 0.5] {
            let out = corrupt_labels(&ds, &CorruptionSpec::symmetric(p), &mut RngState::new(4)).unwrap();
            let r = out.true_label_fraction();
            assert!((r - expected_true_ratio(CorruptionKind::Symmetric, p, 10, &[])).abs() < 0.01, "{p}: {r}");
        }
    }

    #[test]
    fn bernoulli_selection_is_within_three_sigma() {
        let ds = gen_synthetic(SyntheticFn::Linear, 4000, -1.0, 1.0, &mut RngState::new(0)).unwrap();
        for p in [0.1, 0.4, 0.8] {
            let spec = CorruptionSpec::uniform_replace(p, -1.0, 1.0).with_selection(Selection::Bernoulli);
            let out = corrupt_regression(&ds, &spec, &mut RngState::new(1)).unwrap();
            let sd = (p * (1.0 - p) / 4000.0).sqrt();
            assert!((out.corrupted_fraction() - p).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn csv_fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "a,b,y\n1,2,3\n4.5,-6,7e1\n0,0,0.25\n").unwrap();
        let ds = load_csv_regression(&path, "y").unwrap();
        assert_eq!(ds.x, Tensor::new(vec![3, 2], vec![1.0, 2.0, 4.5, -6.0, 0.0, 0.0]).unwrap());
        assert_eq!(ds.y.data(), &[3.0, 70.0, 0.25]);
        let ds = load_csv_regression(&path, "a").unwrap();
        assert_eq!(ds.x.row(1), &[-6.0, 70.0]);
        assert!(matches!(load_csv_regression(&path, "z"), Err(Error::Config(_))));
        fs::write(&path, "a,y\n1,2\n3,x\n").unwrap();
        let e = load_csv_regression(&path, "y").unwrap_err();
        assert!(matches!(e, Error::Data(_)));
        assert!(e.to_string().contains("row 3, column 2"), "{e}");
    }

    #[test]
    fn idx_fixture_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        let imgs = vec![vec![0u8, 255, 51, 102], vec![1, 2, 3, 4]];
        write_idx(&ip, &lp, &imgs, 2, 2, &[3, 9]).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.labels, vec![3, 9]);
        assert_eq!(ds.x.row(0), &[0.0, 1.0, 0.2, 0.4]);
        let back: Vec<u8> = ds.x.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(back, imgs.concat());

        write_idx(&ip, &lp, &imgs, 2, 2, &[3, 255]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Data(_))));
        write_idx(&ip, &lp, &imgs, 2, 2, &[3, 1]).unwrap();
        let mut bytes = fs::read(&ip).unwrap();
        bytes[3] = 0x01;
        fs::write(&ip, &bytes).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Data(_))));
        write_idx(&ip, &lp, &imgs, 2, 2, &[3, 1]).unwrap();
        let bytes = fs::read(&ip).unwrap();
        fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Data(_))));
    }

    #[test]
    fn tabular_split_corrupts_only_training_targets() {
        let mut rng = RngState::new(0);
        let x = crate::rng::sample_standard_normal(&mut rng, &[100, 3]);
        let y = crate::rng::sample_standard_normal(&mut rng, &[100, 1]).map(|v| 20.0 + 5.0 * v);
        let ds = RegressionDataset::new(x, y).unwrap();
        let s = prepare_tabular_regression(&ds, 0.2, 0.4, &mut RngState::new(1), &mut RngState::new(2)).unwrap();
        assert_eq!(s.train.len(), 80);
        assert_eq!(s.test.len(), 20);
        assert_eq!(s.train.corrupted_mask.iter().filter(|&&m| m).count(), 32);
        assert!(s.test.corrupted_mask.iter().all(|&m| !m));
        assert_eq!(s.test.y, s.test.y_clean);
        let col: Vec<f64> = (0..80).map(|i| s.train.x.get2(i, 0)).collect();
        let mean = col.iter().sum::<f64>() / 80.0;
        assert!(mean.abs() < 1e-12);
        let back = s.target_stats.invert(&s.target_stats.apply(&ds.y));
        assert!(back.max_abs_diff(&ds.y) < 1e-12);
        let mut orig: Vec<f64> = ds.y.data().to_vec();
        let mut seen: Vec<f64> = s.target_stats.invert(&s.test.y_clean).data().to_vec();
        seen.extend(s.target_stats.invert(&s.train.y_clean).data());
        orig.sort_by(f64::total_cmp);
        seen.sort_by(f64::total_cmp);
        assert!(orig.iter().zip(&seen).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn corruption_is_seeded_and_leaves_clean_data(seed in 0u64..1000, p in 0.0f64..=1.0, kind in 0usize..4) {
            let ds = labeled(300, 10, seed);
            let spec = match kind {
                0 => CorruptionSpec::symmetric(p),
                1 => CorruptionSpec::pairflip(p),
                2 => CorruptionSpec::biased_to_class(p, 0),
                _ => CorruptionSpec::permutation(p, DIGIT_PERMUTATION.to_vec()),
            };
            let a = corrupt_labels(&ds, &spec, &mut RngState::new(seed + 1)).unwrap();
            let b = corrupt_labels(&ds, &spec, &mut RngState::new(seed + 1)).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(&a.true_labels, &ds.true_labels);
            prop_assert_eq!(&a.x, &ds.x);
            prop_assert!(a.labels.iter().all(|&l| l < 10));

            let r = gen_synthetic(SyntheticFn::CosExp, 300, -3.0, 3.0, &mut RngState::new(seed)).unwrap();
            let c = corrupt_regression(&r, &CorruptionSpec::uniform_replace(p, -1.0, 3.0), &mut RngState::new(seed)).unwrap();
            prop_assert_eq!(&c.x, &r.x);
            prop_assert_eq!(&c.y_clean, &r.y_clean);
            prop_assert_eq!(c.corrupted_mask.iter().filter(|&&m| m).count(), (p * 300.0).floor() as usize);
            for i in 0..300 {
                if !c.corrupted_mask[i] {
                    prop_assert_eq!(c.y.get2(i, 0), c.y_clean.get2(i, 0));
                }
            }
        }
    }
}
