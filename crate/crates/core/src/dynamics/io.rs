//! Trajectory dump CSV: one row per control step with time, joint angles
//! and velocities, per-muscle excitation/activation/length/force and
//! contact flags.

use std::io::Write;
use std::path::Path;

use super::SimState;
use crate::error::{Error, Result};
use crate::model::Model;

pub fn dump_header(model: &Model) -> Vec<String> {
    let mut h = vec!["time".to_string()];
    h.extend(model.joints.iter().map(|j| format!("q_{}", j.name)));
    h.extend(model.joints.iter().map(|j| format!("qd_{}", j.name)));
    for m in &model.muscles {
        let n = &m.params.name;
        h.extend([
            format!("u_{n}"),
            format!("a_{n}"),
            format!("l_{n}"),
            format!("f_{n}"),
        ]);
    }
    h.extend(
        model
            .sites_tagged("contact")
            .map(|s| format!("contact_{}", model.sites[s].name)),
    );
    h
}

pub fn dump_row(state: &SimState) -> Vec<String> {
    let mut row = vec![state.time.to_string()];
    row.extend(state.pose.angles.iter().map(f64::to_string));
    row.extend(state.pose.velocities.iter().map(f64::to_string));
    for ((m, u), f) in state.muscles.iter().zip(&state.excitations).zip(&state.forces) {
        row.extend([
            u.to_string(),
            m.activation.to_string(),
            m.length.to_string(),
            f.to_string(),
        ]);
    }
    row.extend(
        state
            .contacts
            .iter()
            .map(|&c| if c { "1" } else { "0" }.to_string()),
    );
    row
}

/// Streams dump rows to any writer.
pub struct DumpWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> DumpWriter<W> {
    pub fn new(model: &Model, writer: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(dump_header(model))?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, state: &SimState) -> Result<()> {
        self.inner.write_record(dump_row(state))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush().map_err(|e| Error::io("<dump>", e))?;
        self.inner
            .into_inner()
            .map_err(|e| Error::io("<dump>", e.into_error()))
    }
}

/// Column-oriented numeric CSV (NaN allowed).
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut row = Vec::with_capacity(header.len());
            for (k, field) in rec.iter().enumerate() {
                let v = if field.eq_ignore_ascii_case("nan") || field.is_empty() {
                    f64::NAN
                } else {
                    field.parse().map_err(|_| Error::Parse {
                        line: i + 2,
                        field: header.get(k).cloned().unwrap_or_default(),
                        message: format!("not a number: `{field}`"),
                    })?
                };
                row.push(v);
            }
            if row.len() != header.len() {
                return Err(Error::Parse {
                    line: i + 2,
                    field: String::new(),
                    message: format!("expected {} columns, found {}", header.len(), row.len()),
                });
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }
}
