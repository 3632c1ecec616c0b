use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

use super::run::ExperimentResult;
use super::sweep::{BatchSweep, FallbackSweep};

/// Column order of every CSV this crate writes.
pub const CSV_HEADER: [&str; 12] = [
    "mode",
    "B",
    "gamma",
    "kappa",
    "exit_layer",
    "mean_accept",
    "rho",
    "ff",
    "omega",
    "step_ms",
    "wall_ms",
    "speedup",
];

/// One CSV line. Empty cells mean the quantity does not apply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub mode: String,
    #[serde(rename = "B")]
    pub batch: usize,
    pub gamma: usize,
    pub kappa: usize,
    pub exit_layer: usize,
    pub mean_accept: f64,
    pub rho: f64,
    pub ff: Option<f64>,
    pub omega: Option<f64>,
    pub step_ms: Option<f64>,
    pub wall_ms: Option<f64>,
    pub speedup: Option<f64>,
}

impl From<&ExperimentResult> for CsvRow {
    fn from(r: &ExperimentResult) -> Self {
        Self {
            mode: r.mode.name().to_string(),
            batch: r.batch,
            gamma: r.gamma,
            kappa: r.kappa,
            exit_layer: r.exit_layer,
            mean_accept: r.mean_accept,
            rho: r.rho,
            ff: r.ff,
            omega: r.omega,
            step_ms: Some(r.step_ms),
            wall_ms: Some(r.wall_ms),
            speedup: Some(r.speedup),
        }
    }
}

pub fn fallback_rows(sweep: &FallbackSweep, batch: usize) -> Vec<CsvRow> {
    sweep
        .cells
        .iter()
        .map(|c| CsvRow {
            mode: "mirror".into(),
            batch,
            gamma: sweep.gamma,
            kappa: c.kappa,
            exit_layer: c.exit_layer,
            mean_accept: sweep.mean_accept,
            rho: sweep.mean_accept / sweep.gamma as f64,
            ff: Some(c.ff),
            omega: Some(c.omega),
            step_ms: None,
            wall_ms: None,
            speedup: None,
        })
        .collect()
}

pub fn batching_rows(sweep: &BatchSweep) -> Vec<CsvRow> {
    sweep
        .rows
        .iter()
        .flat_map(|r| [CsvRow::from(&r.vanilla), CsvRow::from(&r.mirror)])
        .collect()
}

pub fn write_csv_to<W: Write>(out: W, rows: &[CsvRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[CsvRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv_to(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    write_csv_to(std::fs::File::create(path)?, rows)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_empty_cells() {
        let row = CsvRow {
            mode: "vanilla".into(),
            batch: 1,
            gamma: 7,
            kappa: 1,
            exit_layer: 4,
            mean_accept: 2.5,
            rho: 2.5 / 7.0,
            ff: None,
            omega: None,
            step_ms: Some(10.0),
            wall_ms: Some(100.0),
            speedup: Some(1.25),
        };
        let s = csv_string(&[row]).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), 12);
        assert_eq!(fields[0], "vanilla");
        assert_eq!(fields[7], "");
        assert_eq!(fields[11], "1.25");
        assert_eq!(csv_string(&[]).unwrap().lines().count(), 1);
    }
}
