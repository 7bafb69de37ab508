//! Probe dataset export and import.
//!
//! Columns: `x_0..x_{d-1}`, then `pseudo_label` (regression) or
//! `pseudo_label_0..pseudo_label_{K-1}` (class probabilities), then
//! `true_label` (empty when unknown), then `sources` as `;`-joined indices.

use std::fs::File;
use std::path::Path;

use mlmarket_core::model::{Label, LossKind};
use mlmarket_core::probing::{ProbeDataset, ProbeEntry};

use crate::error::{CliError, Result};
use crate::float;

fn header(dim: usize, kind: LossKind) -> Vec<String> {
    let mut h: Vec<String> = (0..dim).map(|i| format!("x_{i}")).collect();
    match kind {
        LossKind::SquaredRegression => h.push("pseudo_label".into()),
        LossKind::CrossEntropy { classes } => h.extend((0..classes).map(|c| format!("pseudo_label_{c}"))),
    }
    h.push("true_label".into());
    h.push("sources".into());
    h
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Parse { path: path.to_path_buf(), line: 0, msg: format!("{other:?}") },
    }
}

pub fn write_probe_csv(path: &Path, dataset: &ProbeDataset, kind: LossKind) -> Result<()> {
    let dim = dataset.entries.first().map_or(0, |e| e.x.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header(dim, kind)).map_err(|e| csv_err(path, e))?;
    for e in &dataset.entries {
        let mut row: Vec<String> = e.x.iter().map(|v| float(*v)).collect();
        match (&e.pseudo, kind) {
            (Label::Real(y), LossKind::SquaredRegression) => row.push(float(*y)),
            (pseudo, LossKind::CrossEntropy { classes }) => {
                row.extend(pseudo.class_weights(classes).map_err(CliError::from)?.into_iter().map(float));
            }
            (other, _) => {
                return Err(CliError::Config(format!("pseudo-label {other:?} does not match a regression dataset")))
            }
        }
        row.push(match &e.truth {
            None => String::new(),
            Some(Label::Real(y)) => float(*y),
            Some(Label::Class(c)) => c.to_string(),
            Some(Label::Soft(_)) => return Err(CliError::Config("soft true labels cannot be exported".into())),
        });
        row.push(e.sources.iter().map(usize::to_string).collect::<Vec<_>>().join(";"));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a file written by [`write_probe_csv`]. Owner and snapshot are not
/// stored in the file and must be supplied.
pub fn read_probe_csv(path: &Path, kind: LossKind, dim: usize, owner: usize, snapshot: u64) -> Result<ProbeDataset> {
    let bad = |line: u64, msg: String| CliError::Parse { path: path.to_path_buf(), line, msg };
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let expected = header(dim, kind);
    let found = rdr.headers().map_err(|e| bad(1, e.to_string()))?;
    if found.iter().ne(expected.iter().map(String::as_str)) {
        return Err(bad(1, format!("header must be `{}`", expected.join(","))));
    }
    let num = |line: u64, cell: &str| cell.parse::<f64>().map_err(|_| bad(line, format!("`{cell}` is not a number")));

    let mut entries = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let x = (0..dim).map(|i| num(line, &record[i])).collect::<Result<Vec<_>>>()?;
        let (pseudo, next) = match kind {
            LossKind::SquaredRegression => (Label::Real(num(line, &record[dim])?), dim + 1),
            LossKind::CrossEntropy { classes } => {
                let q = (dim..dim + classes).map(|i| num(line, &record[i])).collect::<Result<Vec<_>>>()?;
                (Label::Soft(q), dim + classes)
            }
        };
        let truth = match (&record[next], kind) {
            ("", _) => None,
            (cell, LossKind::SquaredRegression) => Some(Label::Real(num(line, cell)?)),
            (cell, LossKind::CrossEntropy { .. }) => {
                Some(Label::Class(cell.parse().map_err(|_| bad(line, format!("`{cell}` is not a class index")))?))
            }
        };
        let sources = match &record[next + 1] {
            "" => Vec::new(),
            cell => cell
                .split(';')
                .map(|s| s.parse::<usize>().map_err(|_| bad(line, format!("`{s}` is not a learner index"))))
                .collect::<Result<Vec<_>>>()?,
        };
        entries.push(ProbeEntry { x, pseudo, truth, sources });
    }
    Ok(ProbeDataset { owner, entries, snapshot })
}
