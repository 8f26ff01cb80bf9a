//! CSV writers and the JSON sidecars that accompany every output file.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ExperimentConfig, Physical};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, Serialize)]
pub struct Derived {
    pub beta: f64,
    pub chi: f64,
    pub sigma_th: f64,
    pub sigma_m: f64,
}

impl From<&Physical> for Derived {
    fn from(p: &Physical) -> Self {
        Derived {
            beta: p.beta,
            chi: p.chi,
            sigma_th: p.sigma_th,
            sigma_m: p.sigma_m,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Sidecar<'a, T: Serialize> {
    pub schema_version: u32,
    pub command: &'a str,
    pub file: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub derived: Derived,
    pub columns: &'a [&'a str],
    pub details: T,
}

/// Writes outputs under one directory and records what was written.
pub struct OutputDir {
    pub root: PathBuf,
    command: &'static str,
    sha: String,
    seed: u64,
    derived: Derived,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(config: &ExperimentConfig, physical: &Physical, command: &'static str) -> Result<Self> {
        let root = config.output_dir.clone();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(OutputDir {
            root,
            command,
            sha: config.sha256()?,
            seed: config.seed,
            derived: physical.into(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Write `rows` to `name` with the given header, then its sidecar.
    pub fn csv<R, T>(&mut self, name: &str, columns: &[&str], rows: R, details: T) -> Result<PathBuf>
    where
        R: IntoIterator,
        R::Item: Serialize,
        T: Serialize,
    {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(file));
        w.write_record(columns)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.written.push(path.clone());
        self.sidecar(name, columns, details)?;
        Ok(path)
    }

    fn sidecar<T: Serialize>(&mut self, name: &str, columns: &[&str], details: T) -> Result<()> {
        let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name);
        let meta = Sidecar {
            schema_version: SCHEMA_VERSION,
            command: self.command,
            file: name.to_string(),
            config_sha256: self.sha.clone(),
            seed: self.seed,
            version: version_string(),
            derived: self.derived.clone(),
            columns,
            details,
        };
        self.json(&format!("{stem}.meta.json"), &meta)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// JSON summary carrying the same provenance fields as a sidecar.
    pub fn summary<T: Serialize>(&mut self, name: &str, details: T) -> Result<()> {
        let meta = Sidecar {
            schema_version: SCHEMA_VERSION,
            command: self.command,
            file: name.to_string(),
            config_sha256: self.sha.clone(),
            seed: self.seed,
            version: version_string(),
            derived: self.derived.clone(),
            columns: &[],
            details,
        };
        self.json(name, &meta)
    }

    /// Store the effective configuration next to the outputs.
    pub fn config(&mut self, config: &ExperimentConfig) -> Result<()> {
        let path = self.path("config.toml");
        std::fs::write(&path, config.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }
}
