//! CSV files with `#`-prefixed metadata lines ahead of the header.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{AppError, AppResult};

/// Metadata written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("# advnf {}", env!("CARGO_PKG_VERSION")),
            format!("# config_hash: {}", self.config_hash),
            format!("# seed: {}", self.seed),
        ]
    }
}

/// Writes `header` and `rows` after the stamp lines.
pub fn write_csv<I, R>(path: &Path, stamp: &Stamp, header: &[String], rows: I) -> AppResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for line in stamp.lines() {
        writeln!(out, "{line}").map_err(|e| AppError::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| AppError::format(path, e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))?;
    Ok(())
}

/// Header and rows of a file written by [`write_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn read_csv(path: &Path) -> AppResult<Table> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => AppError::io(path, io),
            other => AppError::format(path, format!("{other:?}")),
        })?;
    let header = r
        .headers()
        .map_err(|e| AppError::format(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| AppError::format(path, e.to_string()))
        })
        .collect::<AppResult<_>>()?;
    Ok(Table { header, rows })
}

/// Parses a float cell, naming the file on failure.
pub fn parse_f64(path: &Path, cell: &str) -> AppResult<f64> {
    cell.parse()
        .map_err(|_| AppError::format(path, format!("not a number: {cell:?}")))
}

pub fn parse_usize(path: &Path, cell: &str) -> AppResult<usize> {
    cell.parse()
        .map_err(|_| AppError::format(path, format!("not an index: {cell:?}")))
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Everything after the `#` lines, for body comparisons.
pub fn body(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .fold(String::new(), |mut acc, l| {
            acc.push_str(l);
            acc.push('\n');
            acc
        })
}

/// Writes a TOML sidecar with run metadata that may vary between runs.
pub fn write_meta(path: &Path, stamp: &Stamp, entries: &[(&str, String)]) -> AppResult<()> {
    let mut table = toml::map::Map::new();
    table.insert("config_hash".into(), toml::Value::String(stamp.config_hash.clone()));
    table.insert("seed".into(), toml::Value::String(stamp.seed.to_string()));
    for (k, v) in entries {
        table.insert((*k).into(), toml::Value::String(v.clone()));
    }
    let text = toml::to_string(&toml::Value::Table(table)).expect("meta serialises");
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}
