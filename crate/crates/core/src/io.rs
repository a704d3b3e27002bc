//! File formats: point CSVs, serialized models and JSON summaries.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KmcError, Result};
use crate::linalg::{points_from_rows, rows_of};
use crate::score_matching::finite::FiniteRecord;
use crate::score_matching::{FiniteModel, LiteModel};

/// Version tag carried by every JSON summary the toolkit writes.
pub const SUMMARY_SCHEMA: &str = "kmc-summary-1";
const LITE_MODEL_VERSION: &str = "kmc-lite-1";

/// A numeric CSV with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Columns named `x1, x2, …` if present, otherwise every column.
    pub fn points(&self) -> Result<DMatrix<f64>> {
        let xs: Vec<usize> = (1..)
            .map_while(|i| self.column(&format!("x{i}")))
            .collect();
        if xs.is_empty() {
            return points_from_rows(&self.rows);
        }
        let rows: Vec<Vec<f64>> = self.rows.iter().map(|r| xs.iter().map(|&j| r[j]).collect()).collect();
        points_from_rows(&rows)
    }
}

/// Reads a comma-separated file with a header row. Empty cells parse as
/// NaN; anything else unparseable is reported with its 1-based line.
pub fn read_csv<R: Read>(input: R) -> Result<CsvTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| KmcError::Parse { line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(KmcError::Parse { line: 1, message: "missing header row".into() });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            KmcError::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                if cell.is_empty() {
                    return Ok(f64::NAN);
                }
                cell.parse::<f64>().map_err(|_| KmcError::Parse {
                    line,
                    message: format!("column {:?}: cannot parse {cell:?} as a number", header[j]),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

pub fn read_csv_file(path: &Path) -> Result<CsvTable> {
    read_csv(BufReader::new(File::open(path)?))
}

/// Reads one point per row; rows with any non-finite coordinate are rejected.
pub fn read_points_file(path: &Path) -> Result<DMatrix<f64>> {
    let table = read_csv_file(path)?;
    if table.rows.is_empty() {
        return Err(KmcError::invalid(format!("{} has no data rows", path.display())));
    }
    let points = table.points()?;
    for (i, row) in points.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(KmcError::Parse { line: i + 2, message: "non-finite coordinate".into() });
        }
    }
    Ok(points)
}

pub fn write_points_csv<W: Write>(out: W, points: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((1..=points.ncols()).map(|i| format!("x{i}"))).map_err(csv_err)?;
    for row in points.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> KmcError {
    KmcError::Io(std::io::Error::other(e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiteRecord {
    pub version: String,
    pub basis: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub sigma: f64,
    pub lambda: f64,
}

impl LiteRecord {
    pub fn from_model(model: &LiteModel) -> Self {
        LiteRecord {
            version: LITE_MODEL_VERSION.into(),
            basis: rows_of(model.basis()),
            alpha: model.alpha().iter().copied().collect(),
            sigma: model.sigma(),
            lambda: model.lambda(),
        }
    }

    pub fn to_model(&self) -> Result<LiteModel> {
        if self.version != LITE_MODEL_VERSION {
            return Err(KmcError::invalid(format!("unsupported lite model version {}", self.version)));
        }
        LiteModel::from_parts(
            points_from_rows(&self.basis)?,
            DVector::from_vec(self.alpha.clone()),
            self.sigma,
            self.lambda,
        )
    }
}

/// On-disk model, tagged by estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum ModelFile {
    Lite(LiteRecord),
    Finite(FiniteRecord),
}

pub enum LoadedModel {
    Lite(LiteModel),
    Finite(FiniteModel),
}

impl LoadedModel {
    pub fn as_gradient_model(&self) -> &dyn crate::score_matching::GradientModel {
        match self {
            LoadedModel::Lite(m) => m,
            LoadedModel::Finite(m) => m,
        }
    }
}

impl ModelFile {
    pub fn load(&self) -> Result<LoadedModel> {
        Ok(match self {
            ModelFile::Lite(r) => LoadedModel::Lite(r.to_model()?),
            ModelFile::Finite(r) => LoadedModel::Finite(FiniteModel::from_record(r)?),
        })
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
