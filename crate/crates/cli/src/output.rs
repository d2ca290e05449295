//! CSV tables with `#`-prefixed metadata headers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::CliError;

/// Header lines shared by every file a command writes.
#[derive(Debug, Clone)]
pub struct Metadata {
    pub command: String,
    pub config: String,
}

impl Metadata {
    pub fn new(command: &str, config_toml: &str) -> Self {
        Self {
            command: command.into(),
            config: config_toml.into(),
        }
    }

    fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "# bikeshare {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(out, "# command: {}", self.command)?;
        writeln!(out, "# config:")?;
        for line in self.config.lines() {
            if line.is_empty() {
                writeln!(out, "#")?;
            } else {
                writeln!(out, "#   {line}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write(&self, path: &Path, meta: &Metadata) -> Result<(), CliError> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut buf = BufWriter::new(file);
        meta.write_to(&mut buf).map_err(|e| CliError::io(path, e))?;
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&self.header)?;
            for r in &self.rows {
                w.write_record(r)?;
            }
            w.flush().map_err(|e| CliError::io(path, e))?;
        }
        buf.flush().map_err(|e| CliError::io(path, e))
    }
}

/// Shortest round-trip form; scientific notation outside `[1e-4, 1e9)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x.is_nan() {
        "NaN".into()
    } else if a == 0.0 || (1e-4..1e9).contains(&a) || a.is_infinite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.to_path_buf())
}

/// Rows of a CSV written by [`Table::write`], metadata lines skipped.
pub fn read_body(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok(Table { header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_metadata() {
        let dir = std::env::temp_dir().join(format!("bikeshare-out-{}", std::process::id()));
        ensure_dir(&dir).unwrap();
        let path = dir.join("t.csv");
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![num(0.1), "x, y".into()]);
        t.push(vec![num(f64::NAN), "NA".into()]);
        t.write(
            &path,
            &Metadata::new("test", "[model]\ncapacity = 3\n\n[solver]"),
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# bikeshare "));
        assert!(text.contains("#   capacity = 3\n#\n#   [solver]\n"));
        let back = read_body(&path).unwrap();
        assert_eq!(back.header, vec!["a", "b"]);
        assert_eq!(back.rows[0], vec!["0.1", "x, y"]);
        assert_eq!(back.rows[1][0], "NaN");
        assert_eq!(num(8.5e-11), "8.5e-11");
        assert_eq!(num(-0.25), "-0.25");
        assert_eq!(num(0.0), "0");
        assert_eq!(num(3e12), "3e12");
        std::fs::remove_dir_all(dir).unwrap();
    }
}
