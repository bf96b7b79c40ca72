//! Tables printed as text and optionally written as CSV or JSON.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

/// Machine-readable copies of a command's output tables.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Emit {
    /// Also write the table as CSV to this file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write the results as JSON to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

impl Emit {
    pub fn write(&self, table: &Table, json: &impl Serialize) -> Result<()> {
        if let Some(path) = &self.csv {
            write_file(path, table.to_csv())?;
        }
        if let Some(path) = &self.json {
            write_file(path, serde_json::to_string_pretty(json)? + "\n")?;
        }
        Ok(())
    }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        self.rows.push(row.into_iter().map(Into::into).collect());
    }

    /// First column left-aligned, the rest right-aligned.
    pub fn to_text(&self) -> String {
        let n = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String]| {
            let parts: Vec<String> = (0..n)
                .map(|k| {
                    let cell = cells.get(k).map(String::as_str).unwrap_or("");
                    if k == 0 {
                        format!("{cell:<w$}", w = widths[k])
                    } else {
                        format!("{cell:>w$}", w = widths[k])
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(&self.header);
        for row in &self.rows {
            out += &line(row);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in std::iter::once(&self.header).chain(&self.rows) {
            w.write_record(row).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("writing to memory")).expect("cells are UTF-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_and_csv() {
        let mut t = Table::new(["split", "M=2", "total"]);
        t.push(["train", "958", "1784"]);
        t.push(["a,b", "1", "2"]);
        assert_eq!(t.to_text(), "split  M=2  total\ntrain  958   1784\na,b      1      2\n");
        assert_eq!(t.to_csv(), "split,M=2,total\ntrain,958,1784\n\"a,b\",1,2\n");
    }
}
