//! CSV and text-table output, and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Result, TdcaError};

/// Fixed-precision float formatting shared by every report.
pub fn num(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
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

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let line = |cells: &[String]| {
            cells
                .iter()
                .map(|c| {
                    if c.contains([',', '"', '\n']) {
                        format!("\"{}\"", c.replace('"', "\"\""))
                    } else {
                        c.clone()
                    }
                })
                .collect::<Vec<_>>()
                .join(",")
        };
        out.push_str(&line(&self.header));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(String::len).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let mut line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&self.header);
        line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
        for r in &self.rows {
            line(r);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv())
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| TdcaError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| TdcaError::io(path, e))
}

/// Git-style object hash (`blob <len>\0` prefix) with SHA-256.
pub fn content_hash(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| TdcaError::io(path, e))?;
    let len = file.metadata().map_err(|e| TdcaError::io(path, e))?.len();
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {len}\0").as_bytes());
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| TdcaError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Config echo plus content hashes of every input file.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub command: String,
    pub config: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: String) -> Self {
        Self {
            command: command.to_string(),
            config,
            ..Self::default()
        }
    }

    pub fn input(&mut self, path: &Path) {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn render(&self) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "command = {}", self.command);
        out.push_str("\n[inputs]\n");
        for p in &self.inputs {
            let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            let _ = writeln!(out, "{name} sha256:{}", content_hash(p)?);
        }
        out.push_str("\n[outputs]\n");
        for o in &self.outputs {
            let _ = writeln!(out, "{o}");
        }
        out.push_str("\n[config]\n");
        out.push_str(&self.config);
        Ok(out)
    }

    /// Writes `manifest_<command>.txt`, so commands sharing a directory
    /// keep their own manifests.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(format!("manifest_{}.txt", self.command)), &self.render()?)
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_and_text_alignment() {
        let mut t = Table::new(&["a", "long name"]);
        t.push(vec!["x,y".into(), "1".into()]);
        assert_eq!(t.to_csv(), "a,long name\n\"x,y\",1\n");
        let text = t.to_text();
        assert!(text.starts_with("a    long name\n"));
    }

    #[test]
    fn git_style_hash_of_empty_blob() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e");
        std::fs::write(&p, b"").unwrap();
        // git hash-object --object-format=sha256 on an empty file.
        assert_eq!(
            content_hash(&p).unwrap(),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn negative_zero_is_printed_as_zero() {
        assert_eq!(num(-0.0), "0.000000");
        assert_eq!(num(0.5), "0.500000");
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
