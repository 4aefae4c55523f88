//! Result documents and their JSON / CSV files.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde_json::Value;

use crate::config::Format;

/// Plot-ready rows. Cells are kept as strings so label columns fit too.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|v| v.to_string()).collect());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub json: Value,
    pub table: Option<Table>,
}

impl Document {
    pub fn empty() -> Self {
        Self {
            json: Value::Object(Default::default()),
            table: None,
        }
    }
}

pub fn to_json_string(doc: &Document) -> String {
    let mut s = serde_json::to_string_pretty(&doc.json).expect("serializable document");
    s.push('\n');
    s
}

pub fn write_csv<W: Write>(table: &Table, w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if !table.header.is_empty() {
        out.write_record(&table.header)?;
    }
    for r in &table.rows {
        out.write_record(r)?;
    }
    out.flush()
}

/// Writes the document to `path` (stdout when `None`). CSV needs a table.
pub fn write_results(doc: &Document, path: Option<&Path>, format: Format) -> io::Result<()> {
    let mut buf = Vec::new();
    match format {
        Format::Json => buf.extend_from_slice(to_json_string(doc).as_bytes()),
        Format::Csv => {
            let table = doc
                .table
                .as_ref()
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "document has no table"))?;
            write_csv(table, &mut buf)?;
        }
    }
    match path {
        Some(p) => fs::write(p, buf),
        None => io::stdout().lock().write_all(&buf),
    }
}

pub fn read_json(path: &Path) -> io::Result<Value> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub fn read_csv(path: &Path) -> io::Result<Table> {
    let text = fs::read(path)?;
    if text.is_empty() {
        return Ok(Table::default());
    }
    let mut r = csv::Reader::from_reader(text.as_slice());
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok(Table { header, rows })
}
