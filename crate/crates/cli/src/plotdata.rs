//! Converts sweep CSVs into the long plotting format `series,x,y,err,y_db`.

use diffrx_core::receiver::LinkResult;
use diffrx_core::sampler::SweepRow;

use crate::error::{HarnessError, Result};

pub const LONG_HEADER: &str = "series,x,y,err,y_db";
pub const BASELINE_HEADER: &str = "density,estimator,steps,nmse_mean,nmse_std,n_grids,seed";

#[derive(Clone, Debug, PartialEq)]
pub struct LongRow {
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub err: Option<f64>,
    /// Set for NMSE series.
    pub y_db: Option<f64>,
}

impl LongRow {
    fn nmse(series: String, x: f64, y: f64, err: Option<f64>) -> Self {
        Self {
            series,
            x,
            y,
            err,
            y_db: Some(10.0 * y.log10()),
        }
    }

    pub fn csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!("{},{},{},{},{}", self.series, self.x, self.y, f(self.err), f(self.y_db))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Sweep,
    Ber,
    Baseline,
    Long,
}

struct Fields<'a> {
    record: &'a csv::StringRecord,
    line: u64,
}

impl Fields<'_> {
    fn text(&self, i: usize) -> &str {
        self.record.get(i).unwrap_or("").trim()
    }

    fn num(&self, i: usize) -> Result<f64> {
        let s = self.text(i);
        s.parse()
            .map_err(|_| HarnessError::Parse(format!("line {}: column {} value {s:?} is not a number", self.line, i + 1)))
    }

    fn opt(&self, i: usize) -> Result<Option<f64>> {
        if self.text(i).is_empty() {
            Ok(None)
        } else {
            self.num(i).map(Some)
        }
    }
}

fn density_label(d: f64) -> String {
    if d > 0.0 {
        let n = (1.0 / d).round();
        if ((1.0 / n) - d).abs() < 1e-12 {
            return format!("1/{n}");
        }
    }
    d.to_string()
}

/// Long-format rows for any of the sweep CSV kinds (or long format itself).
pub fn to_long(input: &str) -> Result<Vec<LongRow>> {
    if input.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| HarnessError::Parse(format!("line 1: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let header = header.join(",");
    let kind = match header.as_str() {
        h if h == SweepRow::CSV_HEADER => Kind::Sweep,
        h if h == LinkResult::CSV_HEADER => Kind::Ber,
        BASELINE_HEADER => Kind::Baseline,
        LONG_HEADER => Kind::Long,
        other => return Err(HarnessError::Parse(format!("line 1: unrecognised header {other:?}"))),
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let record = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            HarnessError::Parse(format!("line {line}: {e}"))
        })?;
        let f = Fields {
            line: record.position().map(|p| p.line()).unwrap_or(0),
            record: &record,
        };
        match kind {
            Kind::Sweep => {
                let Some(y) = f.opt(3)? else { continue };
                let series = format!("{}@{}", f.text(2), density_label(f.num(0)?));
                rows.push(LongRow::nmse(series, f.num(1)?, y, f.opt(4)?));
            }
            Kind::Ber => {
                let base = format!("{}@{}", f.text(0), density_label(f.num(2)?));
                let x = f.num(1)?;
                rows.push(LongRow {
                    series: format!("{base}:ber"),
                    x,
                    y: f.num(3)?,
                    err: None,
                    y_db: None,
                });
                rows.push(LongRow::nmse(format!("{base}:nmse"), x, f.num(4)?, None));
            }
            Kind::Baseline => {
                let Some(y) = f.opt(3)? else { continue };
                rows.push(LongRow::nmse(f.text(1).to_string(), f.num(0)?, y, f.opt(4)?));
            }
            Kind::Long => rows.push(LongRow {
                series: f.text(0).to_string(),
                x: f.num(1)?,
                y: f.num(2)?,
                err: f.opt(3)?,
                y_db: f.opt(4)?,
            }),
        }
    }
    Ok(rows)
}

pub fn convert(input: &str) -> Result<String> {
    let mut out = String::from(LONG_HEADER);
    out.push('\n');
    for r in to_long(input)? {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    Ok(out)
}
