//! Output directory handling, CSV tables and the run manifest.

use std::fs;
use std::path::{Component, Path, PathBuf};

use blockade_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;

/// Version tag written next to every data file in the manifest.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub schema: String,
    pub schema_version: u32,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub truncation_threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub preset: Option<String>,
    pub seed: u64,
    pub quadrature_convention: &'static str,
    pub units: &'static str,
    pub config: Config,
    pub tolerances: Tolerances,
    pub truncation_warnings: Vec<String>,
    pub notes: Vec<String>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputFile>,
}

/// Writer confined to one output directory.
pub struct OutDir {
    root: PathBuf,
    files: Vec<OutputFile>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<OutDir> {
        fs::create_dir_all(root).map_err(|e| io_error(root, e))?;
        Ok(OutDir { root: root.to_path_buf(), files: Vec::new() })
    }

    fn checked(&self, name: &str) -> Result<PathBuf> {
        let rel = Path::new(name);
        if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(Error::InvalidInput(format!("refusing to write outside the output directory: {name}")));
        }
        Ok(self.root.join(rel))
    }

    /// Writes a CSV table. Rows are already formatted cells.
    pub fn csv(&mut self, name: &str, schema: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(csv_error)?;
        for r in rows {
            w.write_record(r).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        self.write(name, schema, rows.len(), &bytes)
    }

    fn write(&mut self, name: &str, schema: &str, rows: usize, bytes: &[u8]) -> Result<()> {
        let path = self.checked(name)?;
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        self.files.push(OutputFile {
            path: name.to_string(),
            schema: schema.to_string(),
            schema_version: SCHEMA_VERSION,
            rows,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<PathBuf> {
        let path = self.checked("manifest.json")?;
        manifest.outputs = self.files;
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Shortest round-trip float formatting; scientific for very small or large magnitudes.
pub fn f(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_stay_inside() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(dir.path()).unwrap();
        assert!(out.csv("../x.csv", "t", &["a"], &[]).is_err());
        assert!(out.csv("/tmp/x.csv", "t", &["a"], &[]).is_err());
        out.csv("x.csv", "t", &["a"], &[vec![f(0.1)]]).unwrap();
        let text = fs::read_to_string(dir.path().join("x.csv")).unwrap();
        assert_eq!(text, "a\n0.1\n");
        assert_eq!(f(3.5e-8), "3.5e-8");
    }
}
