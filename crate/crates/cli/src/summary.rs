//! Per-group statistics over seeds: the last-epoch and best-epoch test metric.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use choicenet::{Error, Result};

use crate::results::{csv_error, csv_writer, Table, FINAL_EPOCH};

pub const DEFAULT_GROUP_BY: [&str; 5] = ["experiment", "method", "dataset", "corruption_kind", "corruption_rate"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Goal {
    Min,
    Max,
}

impl FromStr for Goal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Goal::Min),
            "max" => Ok(Goal::Max),
            _ => Err(Error::Config(format!("goal must be min or max, got {s:?}"))),
        }
    }
}

impl Goal {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Goal::Min => a < b,
            Goal::Max => a > b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stats {
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn stats(values: &[f64]) -> Stats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Stats { median: median(values), mean, std }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub key: Vec<String>,
    pub n_seeds: usize,
    pub last: Stats,
    pub best: Stats,
}

#[derive(Default)]
struct SeedTrack {
    last_epoch: Option<(f64, f64)>,
    final_value: Option<f64>,
    best: Option<f64>,
}

/// Groups rows by `group_by`, then summarizes `test_metric` over seeds.
/// "last" is the `final` row when present, else the highest epoch; "best" is
/// the best epoch by `goal`.
pub fn summarize(table: &Table, group_by: &[String], goal: Goal) -> Result<Vec<GroupSummary>> {
    let keys: Vec<usize> = group_by.iter().map(|g| table.column(g)).collect::<Result<_>>()?;
    let seed_col = table.column("seed")?;
    let epoch_col = table.column("epoch")?;
    let metric_col = table.column("test_metric")?;
    let mut groups: BTreeMap<Vec<String>, BTreeMap<String, SeedTrack>> = BTreeMap::new();
    let mut order: Vec<Vec<String>> = Vec::new();
    for (i, row) in table.rows.iter().enumerate() {
        let key: Vec<String> = keys.iter().map(|&k| row[k].clone()).collect();
        let value = table.number(i, metric_col)?;
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        let track = groups.entry(key).or_default().entry(row[seed_col].clone()).or_default();
        if row[epoch_col] == FINAL_EPOCH {
            track.final_value = Some(value);
            continue;
        }
        let epoch = table.number(i, epoch_col)?;
        if track.last_epoch.is_none_or(|(e, _)| epoch >= e) {
            track.last_epoch = Some((epoch, value));
        }
        if !value.is_nan() && track.best.is_none_or(|b| goal.better(value, b)) {
            track.best = Some(value);
        }
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let seeds = &groups[&key];
            let last: Vec<f64> = seeds
                .values()
                .filter_map(|t| t.final_value.or(t.last_epoch.map(|(_, v)| v)))
                .collect();
            let best: Vec<f64> = seeds.values().map(|t| t.best.or(t.final_value).unwrap_or(f64::NAN)).collect();
            GroupSummary { key, n_seeds: seeds.len(), last: stats(&last), best: stats(&best) }
        })
        .collect())
}

pub fn write_summary<W: Write>(w: W, group_by: &[String], groups: &[GroupSummary]) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header: Vec<String> = group_by.to_vec();
    header.extend(
        ["n_seeds", "median_last", "mean_last", "std_last", "median_best", "mean_best", "std_best"].map(String::from),
    );
    out.write_record(&header).map_err(csv_error)?;
    for g in groups {
        let mut rec = g.key.clone();
        rec.push(g.n_seeds.to_string());
        for s in [g.last, g.best] {
            rec.extend([s.median, s.mean, s.std].map(|v| v.to_string()));
        }
        out.write_record(&rec).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}
