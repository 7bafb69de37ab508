//! Pre-featurized dataset ingestion.
//!
//! Files are UTF-8 CSV with a header `feature_0,...,feature_{d-1},label[,pref]`.
//! Row errors carry the 1-based file line.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use mlmarket_core::datagen::{build_empirical_instance, DatasetOptions, PreferenceSource};
use mlmarket_core::dynamics::{stream_rng, Stream};
use mlmarket_core::model::{Instance, Label, LossKind, Sample};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Real,
    Class { classes: usize },
}

impl LabelKind {
    pub fn loss(self) -> Result<LossKind> {
        match self {
            LabelKind::Real => Ok(LossKind::SquaredRegression),
            LabelKind::Class { classes } => LossKind::cross_entropy(classes).map_err(CliError::from),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSchema {
    pub features: usize,
    pub label: LabelKind,
    pub pref_column: bool,
}

impl DatasetSchema {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.features).map(|i| format!("feature_{i}")).collect();
        h.push("label".into());
        if self.pref_column {
            h.push("pref".into());
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub num_learners: usize,
    pub tau: f64,
    pub test_fraction: f64,
    pub standardize: bool,
    /// Induce preferences by k-means even when a pref column exists.
    pub kmeans: bool,
    pub seed: u64,
}

impl LoadOptions {
    pub fn new(num_learners: usize, tau: f64, seed: u64) -> Self {
        LoadOptions { num_learners, tau, test_fraction: 0.05, standardize: true, kmeans: false, seed }
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> CliError {
    CliError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Parses dataset rows from any reader; `origin` only labels error messages.
pub fn parse_dataset<R: Read>(
    reader: R,
    origin: &Path,
    schema: &DatasetSchema,
    num_learners: usize,
) -> Result<Vec<Sample>> {
    if schema.features == 0 {
        return Err(CliError::Config("dataset schema needs at least one feature".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(origin, 1, e.to_string()))?.clone();
    let expected = schema.header();
    if header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(origin, 1, format!("header must be `{}`", expected.join(","))));
    }

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(origin, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected.len() {
            return Err(parse_err(origin, line, format!("expected {} fields, found {}", expected.len(), record.len())));
        }
        let mut x = Vec::with_capacity(schema.features);
        for (i, cell) in record.iter().take(schema.features).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(origin, line, format!("feature_{i}: `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(origin, line, format!("feature_{i} is not finite")));
            }
            x.push(v);
        }
        let cell = record[schema.features].trim();
        let label = match schema.label {
            LabelKind::Real => match cell.parse::<f64>() {
                Ok(y) if y.is_finite() => Label::Real(y),
                _ => return Err(parse_err(origin, line, format!("label `{cell}` is not a finite real"))),
            },
            LabelKind::Class { classes } => match cell.parse::<usize>() {
                Ok(c) if c < classes => Label::Class(c),
                _ => {
                    return Err(parse_err(
                        origin,
                        line,
                        format!("label `{cell}` is not a class index in [0, {classes})"),
                    ))
                }
            },
        };
        let mut sample = Sample::new(x, label);
        if schema.pref_column {
            let cell = record[schema.features + 1].trim();
            match cell.parse::<usize>() {
                Ok(g) if g < num_learners => sample = sample.with_group(g),
                _ => {
                    return Err(parse_err(
                        origin,
                        line,
                        format!("pref `{cell}` is not a learner index in [0, {num_learners})"),
                    ))
                }
            }
        }
        rows.push(sample);
    }
    if rows.is_empty() {
        return Err(parse_err(origin, 2, "dataset has no rows"));
    }
    Ok(rows)
}

pub fn read_dataset(path: &Path, schema: &DatasetSchema, num_learners: usize) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(file, path, schema, num_learners)
}

/// Reads a dataset file into an empirical instance. The train/test split and
/// k-means seeding use the dataset stream of `opts.seed`. Without a pref
/// column, preferences always come from k-means.
pub fn load_dataset_csv(path: &Path, schema: &DatasetSchema, opts: &LoadOptions) -> Result<Instance> {
    let rows = read_dataset(path, schema, opts.num_learners)?;
    let preferences =
        if opts.kmeans || !schema.pref_column { PreferenceSource::KMeans } else { PreferenceSource::Column };
    let ds = DatasetOptions {
        loss: schema.label.loss()?,
        num_learners: opts.num_learners,
        tau: opts.tau,
        test_fraction: opts.test_fraction,
        standardize: opts.standardize,
        preferences,
    };
    Ok(build_empirical_instance(rows, &ds, &mut stream_rng(opts.seed, Stream::Dataset))?)
}
