//! Append-only metrics CSV with a fixed header, flushed per row.
//!
//! Floats are printed with Rust's shortest round-trip formatting, so a
//! parse-back recovers every value exactly.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub struct MetricsWriter {
    path: PathBuf,
    file: File,
    columns: Vec<String>,
}

impl MetricsWriter {
    /// Opens (or creates) a metrics file. A fresh file gets the header;
    /// an existing one must carry the identical header.
    pub fn open(path: &Path, columns: &[&str]) -> Result<Self> {
        let io = |e: std::io::Error| Error::Io { path: path.to_path_buf(), source: e };
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(io)?;
            }
        }
        let exists = path.exists() && std::fs::metadata(path).map_err(io)?.len() > 0;
        if exists {
            let file = File::open(path).map_err(io)?;
            let mut first = String::new();
            BufReader::new(file).read_line(&mut first).map_err(io)?;
            let found: Vec<&str> = first.trim_end().split(',').collect();
            if found != columns {
                return Err(Error::invalid(format!(
                    "metrics header mismatch in {}: found {:?}, expected {:?}",
                    path.display(),
                    found,
                    columns
                )));
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if !exists {
            writeln!(file, "{}", columns.join(",")).map_err(io)?;
            file.flush().map_err(io)?;
        }
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            file,
            columns: columns.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// One row of mixed cells; count must match the header.
    pub fn append(&mut self, cells: &[CsvCell]) -> Result<()> {
        if cells.len() != self.columns.len() {
            return Err(Error::invalid(format!(
                "metrics row has {} cells, header has {} columns",
                cells.len(),
                self.columns.len()
            )));
        }
        let io = |e: std::io::Error| Error::Io { path: self.path.clone(), source: e };
        let row: Vec<String> = cells.iter().map(|c| c.render()).collect();
        writeln!(self.file, "{}", row.join(",")).map_err(io)?;
        self.file.flush().map_err(io)
    }
}

/// A CSV value. Floats use shortest-round-trip formatting.
pub enum CsvCell {
    U64(u64),
    F64(f64),
    Str(String),
}

impl CsvCell {
    fn render(&self) -> String {
        match self {
            CsvCell::U64(v) => v.to_string(),
            CsvCell::F64(v) => format!("{v}"),
            CsvCell::Str(s) => {
                if s.contains(',') || s.contains('"') || s.contains('\n') {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
        }
    }
}

/// Parses a metrics CSV back into (header, rows-of-strings).
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let io = |e: std::io::Error| Error::Io { path: path.to_path_buf(), source: e };
    let text = std::fs::read_to_string(path).map_err(io)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::invalid(format!("{} is empty", path.display())))?
        .split(',')
        .map(String::from)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(tag: &str) -> PathBuf {
        std::env::temp_dir().join(format!("metamorph_csv_{tag}_{}.csv", std::process::id()))
    }

    #[test]
    fn one_header_many_rows_and_exact_parseback() {
        let path = tmp("rows");
        let _ = std::fs::remove_file(&path);
        let values = [0.1f64, -3.25e-17, 1.0 / 3.0, f64::MIN_POSITIVE, 12345.678901234567];
        {
            let mut w = MetricsWriter::open(&path, &["iter", "value"]).unwrap();
            for (i, v) in values.iter().enumerate() {
                w.append(&[CsvCell::U64(i as u64), CsvCell::F64(*v)]).unwrap();
            }
        }
        {
            let mut w = MetricsWriter::open(&path, &["iter", "value"]).unwrap();
            w.append(&[CsvCell::U64(99), CsvCell::F64(0.5)]).unwrap();
        }
        let (header, rows) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["iter", "value"]);
        assert_eq!(rows.len(), values.len() + 1);
        for (row, v) in rows.iter().zip(values.iter()) {
            let back: f64 = row[1].parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "parse-back of {v}");
        }
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn header_mismatch_rejected() {
        let path = tmp("hdr");
        let _ = std::fs::remove_file(&path);
        {
            MetricsWriter::open(&path, &["a", "b"]).unwrap();
        }
        assert!(MetricsWriter::open(&path, &["a", "c"]).is_err());
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn row_width_enforced() {
        let path = tmp("width");
        let _ = std::fs::remove_file(&path);
        let mut w = MetricsWriter::open(&path, &["a", "b"]).unwrap();
        assert!(w.append(&[CsvCell::U64(1)]).is_err());
        let _ = std::fs::remove_file(&path);
    }
}
