use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{EvalReport, ScenarioMatrix, SweepPoint};
use crate::error::{Error, Result};
use crate::meta::MetaConfig;

/// FNV-1a of the config's JSON form, as 16 hex digits.
pub fn config_hash(cfg: &MetaConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    let h = bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    format!("{h:016x}")
}

pub(crate) fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct CdfRow<'a> {
    algorithm: &'a str,
    shots: usize,
    threshold_cm: f64,
    fraction: f64,
}

#[derive(Serialize)]
struct ErrorRow<'a> {
    algorithm: &'a str,
    shots: usize,
    repeat: usize,
    scenario: &'a str,
    error_cm: f64,
}

/// `report.json`, `cdf.csv` and `errors.csv` under `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("report.json"), report)?;
    write_csv(
        &dir.join("cdf.csv"),
        report.populations.iter().flat_map(|p| {
            report.thresholds.iter().zip(&p.cdf).map(|(&t, &f)| CdfRow {
                algorithm: p.algorithm.name(),
                shots: p.shots,
                threshold_cm: t,
                fraction: f,
            })
        }),
    )?;
    write_csv(
        &dir.join("errors.csv"),
        report.errors.iter().map(|e| ErrorRow {
            algorithm: e.algorithm.name(),
            shots: e.shots,
            repeat: e.repeat,
            scenario: &e.scenario,
            error_cm: e.error_cm,
        }),
    )
}

#[derive(Serialize)]
struct MatrixRow {
    i: usize,
    j: usize,
    mean_error_cm: f64,
}

/// `i, j, mean_error_cm` for every cell.
pub fn write_matrix(matrix: &ScenarioMatrix, path: &Path) -> Result<()> {
    write_csv(
        path,
        matrix.mean_error_cm.iter().enumerate().flat_map(|(i, row)| {
            row.iter().enumerate().map(move |(j, &mean_error_cm)| MatrixRow {
                i,
                j,
                mean_error_cm,
            })
        }),
    )
}

#[derive(Serialize)]
struct SweepRow<'a> {
    algorithm: &'a str,
    task_count: usize,
    mean_error_cm: f64,
}

/// `algorithm, task_count, mean_error_cm` per sweep point.
pub fn write_sweep(points: &[SweepPoint], path: &Path) -> Result<()> {
    write_csv(
        path,
        points.iter().map(|p| SweepRow {
            algorithm: p.algorithm.name(),
            task_count: p.task_count,
            mean_error_cm: p.mean_error_cm,
        }),
    )
}
