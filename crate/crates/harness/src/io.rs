//! CSV schemas written by the harness.
//!
//! | file             | columns                              |
//! |------------------|--------------------------------------|
//! | `errors.csv`     | experiment, N, subset, t, error      |
//! | `trajectory.csv` | step, t, energy, min_bias_gap        |
//! | `histogram.csv`  | t, bin_left, bin_right, count        |
//! | `mapping.csv`    | z, f_theta, T_oracle                 |
//! | `moments.csv`    | step, t, mean, second_moment         |
//! | `density.csv`    | t, x, density                        |
//!
//! Headers are always written, also for empty tables. Floats use the
//! shortest representation that parses back to the same value.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub trait Schema: Serialize + DeserializeOwned {
    const FILE: &'static str;
    const HEADER: &'static [&'static str];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub experiment: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub subset: String,
    pub t: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub min_bias_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub t: f64,
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingRow {
    pub z: f64,
    pub f_theta: f64,
    #[serde(rename = "T_oracle")]
    pub t_oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub step: usize,
    pub t: f64,
    pub mean: f64,
    pub second_moment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub t: f64,
    pub x: f64,
    pub density: f64,
}

impl Schema for ErrorRow {
    const FILE: &'static str = "errors.csv";
    const HEADER: &'static [&'static str] = &["experiment", "N", "subset", "t", "error"];
}
impl Schema for TrajectoryRow {
    const FILE: &'static str = "trajectory.csv";
    const HEADER: &'static [&'static str] = &["step", "t", "energy", "min_bias_gap"];
}
impl Schema for HistogramRow {
    const FILE: &'static str = "histogram.csv";
    const HEADER: &'static [&'static str] = &["t", "bin_left", "bin_right", "count"];
}
impl Schema for MappingRow {
    const FILE: &'static str = "mapping.csv";
    const HEADER: &'static [&'static str] = &["z", "f_theta", "T_oracle"];
}
impl Schema for MomentRow {
    const FILE: &'static str = "moments.csv";
    const HEADER: &'static [&'static str] = &["step", "t", "mean", "second_moment"];
}
impl Schema for DensityRow {
    const FILE: &'static str = "density.csv";
    const HEADER: &'static [&'static str] = &["t", "x", "density"];
}

pub fn to_csv_bytes<T: Schema>(rows: &[T]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(T::HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

pub fn from_csv_bytes<T: Schema>(bytes: &[u8]) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    if header.iter().ne(T::HEADER.iter().copied()) {
        return Err(HarnessError::Schema(format!(
            "{}: expected header {:?}, found {:?}",
            T::FILE,
            T::HEADER,
            header.iter().collect::<Vec<_>>()
        )));
    }
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

pub fn write_table<T: Schema>(dir: &Path, rows: &[T]) -> Result<(), HarnessError> {
    std::fs::write(dir.join(T::FILE), to_csv_bytes(rows)?)?;
    Ok(())
}

pub fn read_table<T: Schema>(dir: &Path) -> Result<Vec<T>, HarnessError> {
    from_csv_bytes(&std::fs::read(dir.join(T::FILE))?)
}
