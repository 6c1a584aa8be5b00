//! CSV matrices, small named tables and run manifests.
//!
//! Numbers are written as `{:.16e}`, i.e. 17 significant digits, which
//! round-trips every `f64` exactly.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matcore::Mat;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Row-major CSV with header `col_1,...,col_k`.
pub fn matrix_to_csv(m: &Mat) -> String {
    let mut out = (1..=m.ncols())
        .map(|j| format!("col_{j}"))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for row in m.row_iter() {
        let line = row.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(",");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    write_text(path, &matrix_to_csv(m))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
}

/// Parses a matrix CSV; diagnostics name the offending line and column.
pub fn matrix_from_csv(text: &str, source: &str) -> Result<Mat> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Config(format!("{source}: cannot read header: {e}")))?
        .clone();
    let k = header.len();
    for (j, h) in header.iter().enumerate() {
        if h != format!("col_{}", j + 1) {
            return Err(Error::Config(format!(
                "{source}: line 1, column {}: expected header 'col_{}', found '{h}'",
                j + 1,
                j + 1
            )));
        }
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Config(format!("{source}: {e}")))?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        if record.len() != k {
            return Err(Error::Config(format!(
                "{source}: line {line} (data row {}): expected {k} fields, found {}",
                rows + 1,
                record.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Config(format!(
                    "{source}: line {line} (data row {}), column {}: '{field}' is not a number",
                    rows + 1,
                    j + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Config(format!(
                    "{source}: line {line} (data row {}), column {}: non-finite value",
                    rows + 1,
                    j + 1
                )));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 || k == 0 {
        return Err(Error::Config(format!("{source}: no data rows")));
    }
    Ok(Mat::from_row_slice(rows, k, &data))
}

pub fn read_matrix(path: &Path) -> Result<Mat> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    matrix_from_csv(&text, &path.display().to_string())
}

/// A CSV table with named columns; cells are preformatted strings.
#[derive(Debug, Clone, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "table row width");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// Plain `key = value` provenance record written next to every output set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub master_seed: u64,
    pub artifact_version: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("command = {}\n", self.command));
        s.push_str(&format!("config_digest = {}\n", self.config_digest));
        s.push_str(&format!("master_seed = {}\n", self.master_seed));
        s.push_str(&format!("artifact_version = {}\n", self.artifact_version));
        for o in &self.outputs {
            s.push_str(&format!("output = {o}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = RunManifest {
            command: String::new(),
            config_digest: String::new(),
            master_seed: 0,
            artifact_version: String::new(),
            outputs: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Config(format!("manifest line {}: expected 'key = value'", i + 1)))?;
            match k {
                "command" => m.command = v.into(),
                "config_digest" => m.config_digest = v.into(),
                "master_seed" => {
                    m.master_seed = v
                        .parse()
                        .map_err(|_| Error::Config(format!("manifest line {}: bad seed", i + 1)))?
                }
                "artifact_version" => m.artifact_version = v.into(),
                "output" => m.outputs.push(v.into()),
                other => {
                    return Err(Error::Config(format!("manifest line {}: unknown key '{other}'", i + 1)))
                }
            }
        }
        Ok(m)
    }
}

/// Collects files for one output directory and finishes with a manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)
            .map_err(|e| Error::Io(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn matrix(&mut self, name: &str, m: &Mat) -> Result<()> {
        write_matrix(&self.path(name), m)?;
        self.written.push(name.into());
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<()> {
        write_text(&self.path(name), text)?;
        self.written.push(name.into());
        Ok(())
    }

    pub fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        self.text(name, &t.to_csv())
    }

    pub fn finish(self, command: &str, config_digest: &str, master_seed: u64) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.into(),
            config_digest: config_digest.into(),
            master_seed,
            artifact_version: ARTIFACT_VERSION.into(),
            outputs: self.written,
        };
        write_text(&self.root.join("manifest.txt"), &manifest.render())?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = Mat::from_row_slice(2, 3, &[0.1, -1e-300, 1.0 / 3.0, 12345.678, f64::MAX, -0.0]);
        let text = matrix_to_csv(&m);
        assert!(text.starts_with("col_1,col_2,col_3\n"));
        let back = matrix_from_csv(&text, "m").unwrap();
        assert_eq!(back, m);
        assert_eq!(fmt_num(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn malformed_rows_are_located() {
        let err = matrix_from_csv("col_1,col_2\n1,2\n3\n", "x.csv").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("data row 2"), "{err}");
        let err = matrix_from_csv("col_1,col_2\n1,2\n3,abc\n", "x.csv").unwrap_err().to_string();
        assert!(err.contains("column 2") && err.contains("abc"), "{err}");
        assert!(matrix_from_csv("a,b\n1,2\n", "x").is_err());
        assert!(matrix_from_csv("col_1\n", "x").is_err());
        assert!(matrix_from_csv("col_1\nNaN\n", "x").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let m = RunManifest {
            command: "law".into(),
            config_digest: "ab".into(),
            master_seed: 7,
            artifact_version: ARTIFACT_VERSION.into(),
            outputs: vec!["a.csv".into(), "b.csv".into()],
        };
        assert_eq!(RunManifest::parse(&m.render()).unwrap(), m);
        assert!(RunManifest::parse("oops").is_err());
    }
}
