//! CSV and JSON artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Provenance written as the first line of every CSV.
#[derive(Clone, Debug)]
pub struct Stamp {
    pub config_sha256: String,
    pub seed: u64,
}

impl Stamp {
    pub fn comment(&self) -> String {
        format!(
            "# config-sha256={} version={} seed={}",
            self.config_sha256,
            env!("CARGO_PKG_VERSION"),
            self.seed
        )
    }
}

/// Output directory, created on first use.
#[derive(Clone, Debug)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn subdir(&self, name: &str) -> Result<Self, CliError> {
        Self::new(self.root.join(name))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Pretty JSON with a trailing newline.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// CSV with the provenance comment, a header row and the given records.
    pub fn write_csv<I, R>(&self, name: &str, stamp: &Stamp, header: &[String], rows: I) -> Result<PathBuf, CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", stamp.comment())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Shortest round-trip decimal for a float; `NaN` and infinities as words.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
