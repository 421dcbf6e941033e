//! JSONL curve datasets: one object per line,
//! `{"name": ..., "x": [...], "y": [...]}`, with optional `cutoff` and
//! `shape` fields used by synthetic samples.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curve::Curve;
use crate::error::{Error, Result};

/// One JSONL line. `cutoff` (a context length) and `shape` are present on
/// generated prior samples and ignored by consumers that only need points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRecord {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cutoff: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shape: Option<String>,
}

impl CurveRecord {
    pub fn from_curve(curve: &Curve) -> Self {
        CurveRecord {
            name: curve.name.clone(),
            x: curve.xs.clone(),
            y: curve.ys.clone(),
            cutoff: None,
            shape: None,
        }
    }

    pub fn into_curve(self) -> Result<Curve> {
        Curve::new(self.name, self.x, self.y)
    }
}

/// Parses a JSONL dataset; rejection messages carry 1-based line numbers.
/// An empty file is an empty dataset, not an error.
pub fn load_records(path: &Path) -> Result<Vec<CurveRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CurveRecord = serde_json::from_str(&line).map_err(|e| {
            Error::invalid(format!("{} line {}: {e}", path.display(), idx + 1))
        })?;
        // Validate on the way in so downstream code never sees a bad curve.
        Curve::new(record.name.clone(), record.x.clone(), record.y.clone()).map_err(|e| {
            Error::invalid(format!("{} line {}: {e}", path.display(), idx + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Curve>> {
    load_records(path)?
        .into_iter()
        .map(CurveRecord::into_curve)
        .collect()
}

/// Serializes one record per line. Float formatting is the shortest
/// round-trippable decimal, so identical inputs produce identical bytes.
pub fn write_records<W: Write>(mut out: W, records: &[CurveRecord]) -> Result<()> {
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::numeric(format!("serialize curve '{}': {e}", record.name)))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_records(path: &Path, records: &[CurveRecord]) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::invalid(format!("cannot create {}: {e}", path.display())))?;
    write_records(std::io::BufWriter::new(file), records)
}
