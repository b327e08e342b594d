//! The per-epoch results table: one row per `(method, rate, seed, epoch)`
//! plus a `final` row per run.

use std::io::{Read, Write};

use choicenet::{Error, Result};

pub const COLUMNS: [&str; 11] = [
    "experiment",
    "method",
    "dataset",
    "corruption_kind",
    "corruption_rate",
    "seed",
    "epoch",
    "train_loss",
    "train_metric",
    "test_metric",
    "wall_seconds",
];

pub const FINAL_EPOCH: &str = "final";

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub method: String,
    pub dataset: String,
    pub corruption_kind: String,
    pub corruption_rate: f64,
    pub seed: u64,
    /// 1-based epoch number, or `final`.
    pub epoch: String,
    pub train_loss: f64,
    pub train_metric: f64,
    pub test_metric: f64,
    pub wall_seconds: f64,
}

impl ResultRow {
    pub fn is_final(&self) -> bool {
        self.epoch == FINAL_EPOCH
    }

    fn record(&self) -> [String; 11] {
        [
            self.experiment.clone(),
            self.method.clone(),
            self.dataset.clone(),
            self.corruption_kind.clone(),
            self.corruption_rate.to_string(),
            self.seed.to_string(),
            self.epoch.clone(),
            self.train_loss.to_string(),
            self.train_metric.to_string(),
            self.test_metric.to_string(),
            self.wall_seconds.to_string(),
        ]
    }
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

pub fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("{other:?}")),
    }
}

/// Streams rows to a CSV sink, header first.
pub struct ResultsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> ResultsWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut inner = csv_writer(w);
        inner.write_record(COLUMNS).map_err(csv_error)?;
        inner.flush()?;
        Ok(ResultsWriter { inner })
    }

    pub fn write(&mut self, row: &ResultRow) -> Result<()> {
        self.inner.write_record(row.record()).map_err(csv_error)
    }

    pub fn flush(&mut self) -> Result<()> {
        Ok(self.inner.flush()?)
    }
}

/// A generic CSV table with named columns, used by `summarize` and `plot`.
#[derive(Clone, Debug)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read<R: Read>(r: R, source: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Data(format!("{source}: bad header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Data(format!("{source}: row {}: {e}", i + 1)))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        if rows.is_empty() {
            return Err(Error::Data(format!("{source}: no data rows")));
        }
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column {name:?} (have {})", self.header.join(","))))
    }

    /// Parses cell `col` of data row `row` (0-based) as a float.
    pub fn number(&self, row: usize, col: usize) -> Result<f64> {
        let cell = &self.rows[row][col];
        cell.parse::<f64>().map_err(|_| {
            Error::Data(format!("row {}: column {:?} holds {cell:?}, not a number", row + 1, self.header[col]))
        })
    }
}

/// Parses a results table written by [`ResultsWriter`].
pub fn read_results<R: Read>(r: R, source: &str) -> Result<Vec<ResultRow>> {
    let t = Table::read(r, source)?;
    let idx: Vec<usize> = COLUMNS.iter().map(|c| t.column(c)).collect::<Result<_>>()?;
    (0..t.rows.len())
        .map(|i| {
            let cell = |k: usize| t.rows[i][idx[k]].clone();
            let seed = cell(5)
                .parse::<u64>()
                .map_err(|_| Error::Data(format!("{source}: row {}: seed {:?} is not an integer", i + 1, cell(5))))?;
            Ok(ResultRow {
                experiment: cell(0),
                method: cell(1),
                dataset: cell(2),
                corruption_kind: cell(3),
                corruption_rate: t.number(i, idx[4])?,
                seed,
                epoch: cell(6),
                train_loss: t.number(i, idx[7])?,
                train_metric: t.number(i, idx[8])?,
                test_metric: t.number(i, idx[9])?,
                wall_seconds: t.number(i, idx[10])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: &str) -> ResultRow {
        ResultRow {
            experiment: "e".into(),
            method: "choicenet".into(),
            dataset: "cosexp".into(),
            corruption_kind: "uniform_replace".into(),
            corruption_rate: 0.2,
            seed: 3,
            epoch: epoch.into(),
            train_loss: 1.25,
            train_metric: f64::NAN,
            test_metric: 0.1,
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn round_trip_with_lf_terminators() {
        let mut buf = Vec::new();
        {
            let mut w = ResultsWriter::new(&mut buf).unwrap();
            w.write(&row("1")).unwrap();
            w.write(&row(FINAL_EPOCH)).unwrap();
            w.flush().unwrap();
        }
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
        let back = read_results(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.len(), 2);
        assert!(back[1].is_final());
        assert_eq!(back[0].corruption_rate, 0.2);
        assert!(back[0].train_metric.is_nan());
    }

    #[test]
    fn bad_cells_report_the_row() {
        let text = format!("{}\ne,m,d,k,0.1,0,1,1,1,oops,0\n", COLUMNS.join(","));
        let e = read_results(text.as_bytes(), "t.csv").unwrap_err().to_string();
        assert!(e.contains("row 1") && e.contains("test_metric"), "{e}");
        let e = read_results("experiment\n".as_bytes(), "t.csv").unwrap_err();
        assert!(matches!(e, Error::Data(_)));
    }
}
