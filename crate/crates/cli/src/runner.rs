//! Runs every `(method, rate, seed)` job of an experiment and streams the
//! results table in job order.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use choicenet::data::{
    corrupt_labels, corrupt_regression, gaussian_blobs, gen_synthetic, load_csv_regression, load_idx,
    prepare_tabular_regression, random_centres, CorruptionKind, LabeledDataset, RegressionDataset, ReferenceFn,
};
use choicenet::models::{block_config_for, build_model, MlpSpec, Model, ModelKind};
use choicenet::train::{
    evaluate_accuracy, evaluate_rmse, evaluate_rmse_vs_reference, fit, FitConfig, REFERENCE_GRID,
};
use choicenet::{Error, Result, RngState, Tensor};

use crate::config::{BlobLayout, BlobSpec, DatasetSpec, ExperimentConfig, IdxSpec};
use crate::results::{csv_error, csv_writer, ResultRow, ResultsWriter, FINAL_EPOCH};
use crate::summary::{summarize, write_summary, Goal, DEFAULT_GROUP_BY};

/// Seed streams forked from each run's root seed.
pub mod streams {
    pub const DATA: u64 = 0;
    pub const CORRUPTION: u64 = 1;
    pub const INIT: u64 = 2;
    pub const FIT: u64 = 3;
    pub const CENTRES: u64 = 5;
    pub const TEST_DATA: u64 = 6;
}

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const INCOMPLETE_FILE: &str = "INCOMPLETE";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// One worker, and `wall_seconds` written as 0 so reruns are byte-identical.
    pub single_thread: bool,
    /// Worker count when not single-threaded; `None` uses the available cores.
    pub workers: Option<usize>,
    /// Progress lines on stderr.
    pub verbose: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Job {
    /// Index into `ExperimentConfig::datasets`.
    pub dataset: usize,
    pub method: ModelKind,
    pub rate: f64,
    pub seed: u64,
}

impl Job {
    /// File stem for checkpoints and fit CSVs.
    pub fn stem(&self, cfg: &ExperimentConfig) -> String {
        format!("{}_{}_rate{}_seed{}", dataset_label(cfg, self.dataset), self.method, self.rate, self.seed)
    }
}

/// Jobs in output order: dataset, method, rate, then seed.
pub fn jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let mut out = Vec::with_capacity(cfg.run_count());
    for dataset in 0..cfg.datasets.len() {
        for &method in &cfg.methods {
            for &rate in &cfg.corruption.rates {
                for &seed in &cfg.seeds {
                    out.push(Job { dataset, method, rate, seed });
                }
            }
        }
    }
    out
}

/// Training and evaluation data for one job.
pub enum Prepared {
    Regression {
        train: RegressionDataset,
        /// Clean held-out set; absent for synthetic data, which is scored
        /// against the reference function.
        test: Option<RegressionDataset>,
        reference: Option<ReferenceFn>,
    },
    Classification {
        train: LabeledDataset,
        test: LabeledDataset,
    },
}

impl Prepared {
    pub fn input_dim(&self) -> usize {
        match self {
            Prepared::Regression { train, .. } => train.x.cols(),
            Prepared::Classification { train, .. } => train.x.cols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Prepared::Regression { train, .. } => train.y.cols(),
            Prepared::Classification { train, .. } => train.num_classes,
        }
    }
}

fn blob_centres(spec: &BlobSpec, root: &RngState) -> Vec<Vec<f64>> {
    match spec.layout {
        BlobLayout::Random { spread } => random_centres(spec.classes, spec.dim, spread, &mut root.fork(streams::CENTRES)),
        BlobLayout::Axis { separation } => [-0.5, 0.5]
            .iter()
            .map(|s| {
                let mut c = vec![0.0; spec.dim];
                c[0] = s * separation;
                c
            })
            .collect(),
    }
}

fn blobs(spec: &BlobSpec, root: &RngState) -> Result<(LabeledDataset, LabeledDataset)> {
    let centres = blob_centres(spec, root);
    let train = gaussian_blobs(&centres, spec.std, spec.train_per_class, &mut root.fork(streams::DATA))?;
    let test = gaussian_blobs(&centres, spec.std, spec.test_per_class, &mut root.fork(streams::TEST_DATA))?;
    Ok((train, test))
}

fn restrict(ds: LabeledDataset, digits: Option<&[usize]>, limit: Option<usize>) -> Result<LabeledDataset> {
    let ds = match digits {
        None => ds,
        Some(keep) => {
            let idx: Vec<usize> = (0..ds.len()).filter(|&i| keep.contains(&ds.labels[i])).collect();
            let sub = ds.subset(&idx);
            let relabel = |l: usize| keep.iter().position(|&d| d == l).expect("filtered");
            LabeledDataset::new(sub.x, sub.labels.into_iter().map(relabel).collect(), keep.len())?
        }
    };
    match limit {
        Some(n) if n < ds.len() => Ok(ds.subset(&(0..n).collect::<Vec<_>>())),
        _ => Ok(ds),
    }
}

fn idx_files_present(spec: &IdxSpec) -> bool {
    [&spec.train_images, &spec.train_labels, &spec.test_images, &spec.test_labels]
        .iter()
        .all(|p| p.is_file())
}

/// Dataset name written to the results table; names the fallback when the
/// IDX files are missing.
pub fn dataset_label(cfg: &ExperimentConfig, index: usize) -> String {
    match (&cfg.datasets[index], &cfg.fallback) {
        (DatasetSpec::Idx(spec), Some(fb)) if !idx_files_present(spec) => format!("blobs{}", fb.classes),
        (d, _) => d.name(),
    }
}

/// Builds the data for one job; the method plays no part.
pub fn prepare(cfg: &ExperimentConfig, job: Job) -> Result<Prepared> {
    let (rate, root) = (job.rate, RngState::new(job.seed));
    match &cfg.datasets[job.dataset] {
        DatasetSpec::Synthetic { function, n, lo, hi } => {
            let clean = gen_synthetic(*function, *n, *lo, *hi, &mut root.fork(streams::DATA))?;
            let spec = cfg.corruption.spec(rate, 0)?;
            let train = corrupt_regression(&clean, &spec, &mut root.fork(streams::CORRUPTION))?;
            let reference = clean.reference_fn;
            Ok(Prepared::Regression { train, test: None, reference })
        }
        DatasetSpec::Csv { path, target, test_fraction } => {
            if !matches!(cfg.corruption.kind, None | Some(CorruptionKind::UniformReplace)) {
                return Err(Error::Config("tabular data supports only uniform_replace corruption".into()));
            }
            let ds = load_csv_regression(path, target)?;
            let split = prepare_tabular_regression(
                &ds,
                *test_fraction,
                rate,
                &mut root.fork(streams::DATA),
                &mut root.fork(streams::CORRUPTION),
            )?;
            Ok(Prepared::Regression { train: split.train, test: Some(split.test), reference: None })
        }
        DatasetSpec::Blobs(spec) => labeled(cfg, blobs(spec, &root)?, rate, &root),
        DatasetSpec::Idx(spec) => {
            let pair = match &cfg.fallback {
                Some(fb) if !idx_files_present(spec) => blobs(fb, &root)?,
                _ => {
                    let train = load_idx(&spec.train_images, &spec.train_labels)?;
                    let test = load_idx(&spec.test_images, &spec.test_labels)?;
                    let digits = spec.digits.as_deref();
                    (restrict(train, digits, spec.max_train)?, restrict(test, digits, spec.max_test)?)
                }
            };
            labeled(cfg, pair, rate, &root)
        }
    }
}

fn labeled(cfg: &ExperimentConfig, (train, test): (LabeledDataset, LabeledDataset), rate: f64, root: &RngState) -> Result<Prepared> {
    let spec = cfg.corruption.spec(rate, train.num_classes)?;
    let train = if cfg.corruption.kind.is_some() {
        corrupt_labels(&train, &spec, &mut root.fork(streams::CORRUPTION))?
    } else {
        train
    };
    Ok(Prepared::Classification { train, test })
}

/// Everything one job produced.
pub struct JobOutput {
    pub job: Job,
    pub rows: Vec<ResultRow>,
    pub model: Model,
}

/// Trains one job and returns its per-epoch rows plus the `final` row.
pub fn run_job(cfg: &ExperimentConfig, job: Job, zero_wall: bool) -> Result<JobOutput> {
    let started = Instant::now();
    let dataset = dataset_label(cfg, job.dataset);
    let data = prepare(cfg, job)?;
    let root = RngState::new(job.seed);
    let mlp = MlpSpec::new(cfg.model.layers.clone(), cfg.model.activation, data.output_dim());
    let block = block_config_for(&mlp, cfg.model.k, cfg.model.tau_inv, cfg.model.rho_max);
    let mut model = build_model(
        job.method,
        data.input_dim(),
        &mlp,
        Some(block),
        Some(cfg.model.mdn_k),
        &mut root.fork(streams::INIT),
    )?;
    let objective = cfg.objective(job.method)?;
    let fit_cfg = FitConfig { epochs: cfg.epochs, batch_size: cfg.batch_size, optimizer: cfg.optimizer_for(job.method) };
    let mut fit_rng = root.fork(streams::FIT);
    let report = match &data {
        Prepared::Regression { train, test, reference } => {
            let mut eval = |m: &Model| {
                let train_metric = evaluate_rmse(m, train, false)?;
                let test_metric = match (test, reference) {
                    (Some(t), _) => evaluate_rmse(m, t, true)?,
                    (None, Some(r)) => evaluate_rmse_vs_reference(m, r, REFERENCE_GRID)?,
                    (None, None) => evaluate_rmse(m, train, true)?,
                };
                Ok((train_metric, test_metric))
            };
            fit(&mut model, &train.x, &train.y, &objective, &fit_cfg, &mut fit_rng, &mut eval)?
        }
        Prepared::Classification { train, test } => {
            let mut eval = |m: &Model| Ok((evaluate_accuracy(m, train, false)?, evaluate_accuracy(m, test, true)?));
            fit(&mut model, &train.x, &train.one_hot(false), &objective, &fit_cfg, &mut fit_rng, &mut eval)?
        }
    };
    let row = |epoch: String, loss: f64, train_metric: f64, test_metric: f64, wall: f64| ResultRow {
        experiment: cfg.id.clone(),
        method: job.method.to_string(),
        dataset: dataset.clone(),
        corruption_kind: cfg.corruption.kind_name().to_string(),
        corruption_rate: job.rate,
        seed: job.seed,
        epoch,
        train_loss: loss,
        train_metric,
        test_metric,
        wall_seconds: if zero_wall { 0.0 } else { wall },
    };
    let mut rows: Vec<ResultRow> = report
        .epochs
        .iter()
        .map(|e| row((e.epoch + 1).to_string(), e.train_loss, e.train_metric, e.test_metric, e.wall_seconds))
        .collect();
    let (loss, train_metric, test_metric) = report
        .epochs
        .last()
        .map_or((f64::NAN, f64::NAN, f64::NAN), |e| (e.train_loss, e.train_metric, e.test_metric));
    rows.push(row(FINAL_EPOCH.into(), loss, train_metric, test_metric, started.elapsed().as_secs_f64()));
    Ok(JobOutput { job, rows, model })
}

/// Writes `series,x,y` for a 1-D synthetic run: the training points, the
/// reference function and the model's prediction on the same grid.
pub fn write_fit_csv(path: &Path, cfg: &ExperimentConfig, job: Job, model: &Model) -> Result<()> {
    let Prepared::Regression { train, reference: Some(reference), .. } = prepare(cfg, job)? else {
        return Ok(());
    };
    if train.x.cols() != 1 {
        return Ok(());
    }
    let grid = reference.grid(200);
    let pred = model.predict(&Tensor::new(vec![grid.len(), 1], grid.clone())?)?;
    let mut w = csv_writer(BufWriter::new(File::create(path)?));
    w.write_record(["series", "x", "y"]).map_err(csv_error)?;
    for (x, y) in train.x.data().iter().zip(train.y.data()) {
        w.write_record(["data", &x.to_string(), &y.to_string()]).map_err(csv_error)?;
    }
    for &x in &grid {
        w.write_record(["reference", &x.to_string(), &reference.eval(x).to_string()]).map_err(csv_error)?;
    }
    for (x, y) in grid.iter().zip(pred.data()) {
        w.write_record([job.method.name(), &x.to_string(), &y.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub rows: usize,
}

/// Runs the whole experiment into `cfg.output_dir`. On failure the rows
/// already written stay in place, an `INCOMPLETE` marker records the error
/// and the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let marker = out.join(INCOMPLETE_FILE);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    if cfg.checkpoints {
        fs::create_dir_all(out.join("checkpoints"))?;
    }
    let fits = cfg.fits && matches!(cfg.datasets[0], DatasetSpec::Synthetic { .. });
    if fits {
        fs::create_dir_all(out.join("fits"))?;
    }
    let results_path = out.join(RESULTS_FILE);
    let mut writer = ResultsWriter::new(BufWriter::new(File::create(&results_path)?))?;
    let jobs = jobs(cfg);
    let workers = if opts.single_thread {
        1
    } else {
        opts.workers
            .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
            .clamp(1, jobs.len().max(1))
    };

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<ResultRow>>)>();
    let mut written = 0usize;
    let mut failure: Option<Error> = None;
    thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop, jobs) = (&next, &stop, &jobs);
            s.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&job) = jobs.get(i) else { break };
                let result = run_job(cfg, job, opts.single_thread).and_then(|o| {
                    if cfg.checkpoints {
                        o.model.save(&out.join("checkpoints").join(format!("{}.ckpt", job.stem(cfg))))?;
                    }
                    if fits {
                        write_fit_csv(&out.join("fits").join(format!("{}.csv", job.stem(cfg))), cfg, job, &o.model)?;
                    }
                    Ok(o.rows)
                });
                if result.is_err() {
                    stop.store(true, Ordering::SeqCst);
                }
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Single writer: buffer out-of-order completions, flush in job order.
        let mut pending: BTreeMap<usize, Vec<ResultRow>> = BTreeMap::new();
        let mut cursor = 0usize;
        for (i, result) in rx {
            match result {
                Ok(rows) => {
                    pending.insert(i, rows);
                }
                Err(e) => {
                    if failure.is_none() {
                        failure = Some(annotate(e, jobs[i].stem(cfg)));
                    }
                    continue;
                }
            }
            while let Some(rows) = pending.remove(&cursor) {
                if failure.is_none() {
                    let res = rows.iter().try_for_each(|r| writer.write(r)).and_then(|_| writer.flush());
                    if let Err(e) = res {
                        failure = Some(e);
                        stop.store(true, Ordering::SeqCst);
                    }
                    written += rows.len();
                    if opts.verbose {
                        let last = rows.last().expect("final row");
                        eprintln!("[{}/{}] {} test_metric {}", cursor + 1, jobs.len(), jobs[cursor].stem(cfg), last.test_metric);
                    }
                }
                cursor += 1;
            }
        }
    });
    writer.flush()?;
    if let Some(e) = failure {
        fs::write(&marker, format!("{e}\n"))?;
        return Err(e);
    }

    let summary_path = out.join(SUMMARY_FILE);
    let table = crate::results::Table::read(File::open(&results_path)?, &results_path.display().to_string())?;
    let keys: Vec<String> = DEFAULT_GROUP_BY.map(String::from).to_vec();
    let goal = if cfg.is_classification() { Goal::Max } else { Goal::Min };
    let groups = summarize(&table, &keys, goal)?;
    write_summary(BufWriter::new(File::create(&summary_path)?), &keys, &groups)?;
    Ok(RunSummary { results: results_path, summary: summary_path, rows: written })
}

fn annotate(e: Error, ctx: String) -> Error {
    match e {
        Error::NumericAbort(m) => Error::NumericAbort(format!("{ctx}: {m}")),
        Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
        Error::Data(m) => Error::Data(format!("{ctx}: {m}")),
        other => other,
    }
}
