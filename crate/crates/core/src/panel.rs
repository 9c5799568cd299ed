//! Dated multivariate observation panels and CSV ingestion.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Time label of one panel row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimeLabel {
    Month { year: i32, month: u32 },
    Index(i64),
}

impl TimeLabel {
    pub fn month(year: i32, month: u32) -> Self {
        TimeLabel::Month { year, month }
    }

    /// The label `n` periods later.
    pub fn advance(self, n: i64) -> Self {
        match self {
            TimeLabel::Month { year, month } => {
                let total = year as i64 * 12 + (month as i64 - 1) + n;
                TimeLabel::Month {
                    year: total.div_euclid(12) as i32,
                    month: total.rem_euclid(12) as u32 + 1,
                }
            }
            TimeLabel::Index(i) => TimeLabel::Index(i + n),
        }
    }

    fn ordinal(self) -> i64 {
        match self {
            TimeLabel::Month { year, month } => year as i64 * 12 + month as i64 - 1,
            TimeLabel::Index(i) => i,
        }
    }

    /// Parses `YYYY-MM`, `YYYY-MM-DD` (day is dropped) or a plain integer.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Ok(i) = s.parse::<i64>() {
            return Some(TimeLabel::Index(i));
        }
        let parts: Vec<&str> = s.split('-').collect();
        if !(parts.len() == 2 || parts.len() == 3) || parts[0].len() != 4 {
            return None;
        }
        let year: i32 = parts[0].parse().ok()?;
        let month: u32 = parts[1].parse().ok()?;
        if !(1..=12).contains(&month) {
            return None;
        }
        if parts.len() == 3 {
            let day: u32 = parts[2].parse().ok()?;
            if !(1..=31).contains(&day) {
                return None;
            }
        }
        Some(TimeLabel::Month { year, month })
    }
}

impl serde::Serialize for TimeLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl fmt::Display for TimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeLabel::Month { year, month } => write!(f, "{year:04}-{month:02}"),
            TimeLabel::Index(i) => write!(f, "{i}"),
        }
    }
}

/// A T×d matrix of observations with one time label per row and one name per column.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    timestamps: Vec<TimeLabel>,
    values: DMatrix<f64>,
    names: Vec<String>,
}

impl TimeSeriesPanel {
    pub fn new(timestamps: Vec<TimeLabel>, values: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::BadDimension("panel needs at least one column".into()));
        }
        if timestamps.len() != values.nrows() {
            return Err(Error::BadDimension(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                values.nrows()
            )));
        }
        if names.len() != values.ncols() {
            return Err(Error::BadDimension(format!(
                "{} names for {} columns",
                names.len(),
                values.ncols()
            )));
        }
        for w in timestamps.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config(format!(
                    "timestamps must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("panel contains non-finite values".into()));
        }
        Ok(TimeSeriesPanel {
            timestamps,
            values,
            names,
        })
    }

    /// Panel with integer time index `0..T` and names `y1..yd`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let t = values.nrows();
        let d = values.ncols();
        TimeSeriesPanel::new(
            (0..t as i64).map(TimeLabel::Index).collect(),
            values,
            (1..=d).map(|i| format!("y{i}")).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn timestamps(&self) -> &[TimeLabel] {
        &self.timestamps
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Projects onto the given columns, in the given order.
    pub fn select(&self, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::BadDimension("empty column selection".into()));
        }
        if let Some(&c) = columns.iter().find(|&&c| c >= self.dim()) {
            return Err(Error::BadDimension(format!("column {c} out of range")));
        }
        let values = self.values.select_columns(columns);
        let names = columns.iter().map(|&c| self.names[c].clone()).collect();
        TimeSeriesPanel::new(self.timestamps.clone(), values, names)
    }

    pub fn select_by_name(&self, names: &[&str]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|x| x == n)
                    .ok_or_else(|| Error::Config(format!("unknown column {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.select(&idx)
    }

    /// Rows `0..n`.
    pub fn head(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        TimeSeriesPanel::new(
            self.timestamps[..n].to_vec(),
            self.values.rows(0, n).into_owned(),
            self.names.clone(),
        )
    }
}

/// Reads a CSV panel: header row, first column time labels, remaining columns numeric.
///
/// `columns`, when given, selects (and orders) columns by header name. Rows are
/// sorted by time; duplicate labels and gaps in the monthly/integer sequence are
/// rejected.
pub fn ingest<P: AsRef<Path>>(path: P, columns: Option<&[String]>) -> Result<TimeSeriesPanel> {
    let file = std::fs::File::open(path.as_ref())?;
    ingest_reader(file, columns)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, columns: Option<&[String]>) -> Result<TimeSeriesPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if headers.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            column: headers.len(),
            message: "need a time column and at least one series".into(),
        });
    }
    let all_names = &headers[1..];
    let selected: Vec<usize> = match columns {
        None => (0..all_names.len()).collect(),
        Some(cols) => cols
            .iter()
            .map(|c| {
                all_names
                    .iter()
                    .position(|n| n == c)
                    .ok_or_else(|| Error::Config(format!("column {c:?} not found in header")))
            })
            .collect::<Result<_>>()?,
    };
    if selected.is_empty() {
        return Err(Error::Config("empty column selection".into()));
    }

    let mut rows: Vec<(TimeLabel, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                line,
                column: rec.len(),
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let label = TimeLabel::parse(&rec[0]).ok_or_else(|| Error::Parse {
            line,
            column: 1,
            message: format!("unrecognised time label {:?}", &rec[0]),
        })?;
        let mut vals = Vec::with_capacity(selected.len());
        for &c in &selected {
            let raw = &rec[c + 1];
            let v: f64 = raw.parse().map_err(|_| Error::NonNumeric {
                line,
                column: c + 2,
                value: raw.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumeric {
                    line,
                    column: c + 2,
                    value: raw.to_owned(),
                });
            }
            vals.push(v);
        }
        rows.push((label, vals));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            column: 1,
            message: "no data rows".into(),
        });
    }
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        let (a, b) = (w[0].0, w[1].0);
        if a == b {
            return Err(Error::DuplicateTime(a.to_string()));
        }
        if std::mem::discriminant(&a) != std::mem::discriminant(&b) {
            return Err(Error::Parse {
                line: 0,
                column: 1,
                message: "mixed time label formats".into(),
            });
        }
        if b.ordinal() != a.ordinal() + 1 {
            return Err(Error::Gap(format!("missing period(s) between {a} and {b}")));
        }
    }
    let t = rows.len();
    let d = selected.len();
    let values = DMatrix::from_fn(t, d, |r, c| rows[r].1[c]);
    let names = selected.iter().map(|&c| all_names[c].clone()).collect();
    TimeSeriesPanel::new(rows.into_iter().map(|r| r.0).collect(), values, names)
}

/// Writes a panel in the same CSV layout `ingest` reads.
pub fn write_panel_csv<W: std::io::Write>(panel: &TimeSeriesPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(panel.names().iter().cloned());
    w.write_record(&header)?;
    for (r, ts) in panel.timestamps().iter().enumerate() {
        let mut rec = vec![ts.to_string()];
        rec.extend((0..panel.dim()).map(|c| format!("{}", panel.values()[(r, c)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
