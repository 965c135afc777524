//! CSV artifacts are assembled in memory and only written once every one of
//! them has been computed, so a failed run leaves nothing behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

/// One CSV file: a `#` metadata line, a header row and data rows.
pub struct Table {
    pub name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    meta: Value,
}

impl Table {
    pub fn new<S: Into<String>>(name: impl Into<String>, meta: Value, header: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width mismatch in {}", self.name);
        self.rows.push(row.into_iter().map(Cell::render).collect());
    }

    pub fn render(&self) -> Result<Vec<u8>, csv::Error> {
        let mut buf = format!("# {}\n", self.meta).into_bytes();
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        drop(w);
        Ok(buf)
    }
}

/// A CSV field. Floats print in Rust's shortest round-trip form so that
/// reruns compare byte for byte.
pub enum Cell {
    F(f64),
    I(i64),
    U(u64),
    S(String),
    Empty,
}

impl Cell {
    fn render(self) -> String {
        match self {
            Cell::F(x) => format!("{x}"),
            Cell::I(x) => x.to_string(),
            Cell::U(x) => x.to_string(),
            Cell::S(s) => s,
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::F)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::U(x)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::I(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::S(s.to_string())
    }
}

#[macro_export]
macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($crate::output::Cell::from($x)),*] };
}

/// Renders every table, then creates `dir` and writes them all.
pub fn write_bundle(dir: &Path, tables: &[Table]) -> Result<Vec<PathBuf>, Box<dyn std::error::Error>> {
    let rendered = tables
        .iter()
        .map(|t| Ok((dir.join(format!("{}.csv", t.name)), t.render()?)))
        .collect::<Result<Vec<_>, csv::Error>>()?;
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (path, bytes) in rendered {
        fs::write(&path, bytes)?;
        paths.push(path);
    }
    Ok(paths)
}
