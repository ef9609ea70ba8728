//! CSV tables of raw counts.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::fringe::{FringeDataset, FringePoint};

/// One row of a generic count table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub setting_id: String,
    pub outcome_id: String,
    pub counts: f64,
}

pub fn write_counts<W: Write>(rows: &[CountRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_counts<R: Read>(input: R) -> Result<Vec<CountRow>> {
    let mut rows = Vec::new();
    for (line, r) in csv::Reader::from_reader(input).deserialize().enumerate() {
        let row: CountRow = r?;
        if !(row.counts >= 0.0) {
            return Err(Error::Validation(format!("row {}: negative or missing count", line + 1)));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_fringe<W: Write>(data: &FringeDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in &data.points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fringe<R: Read>(input: R) -> Result<FringeDataset> {
    let points =
        csv::Reader::from_reader(input).deserialize::<FringePoint>().collect::<std::result::Result<Vec<_>, _>>()?;
    FringeDataset::new(points)
}
