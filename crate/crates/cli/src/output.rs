use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::Format;
use crate::svg;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct SeedEcho {
    pub value: u64,
    /// `flag`, `env` or `default`.
    pub source: &'static str,
}

#[derive(Debug, Serialize)]
pub struct InputEcho {
    pub path: String,
    pub sha256: String,
    pub content: serde_json::Value,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub command: &'a str,
    pub argv: &'a [String],
    pub seed: &'a SeedEcho,
    pub input: Option<&'a InputEcho>,
    /// Every resolved option, including defaults.
    pub config: &'a serde_json::Value,
    pub exit_code: i32,
    pub outputs: &'a [FileRecord],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects the files of one run and their checksums.
pub struct Output {
    dir: PathBuf,
    format: Format,
    pub files: Vec<FileRecord>,
}

impl Output {
    pub fn create(dir: &Path, format: Format) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), format, files: Vec::new() })
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.push(FileRecord { path: name.to_string(), bytes: bytes.len(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// A table in the selected format. `csv` is the canonical CSV text;
    /// `json` the structured form written for `--format json`.
    pub fn write_table<T: Serialize + ?Sized>(&mut self, stem: &str, csv: &str, json: &T, title: &str) -> Result<(), CliError> {
        match self.format {
            Format::Json => self.write_json(&format!("{stem}.json"), json),
            Format::Csv => self.write_bytes(&format!("{stem}.csv"), csv.as_bytes()),
            Format::Svg => {
                self.write_bytes(&format!("{stem}.csv"), csv.as_bytes())?;
                let chart = svg::line_chart_from_csv(csv, title);
                self.write_bytes(&format!("{stem}.svg"), chart.as_bytes())
            }
        }
    }

    pub fn finish(self, manifest: &Manifest<'_>) -> Result<(), CliError> {
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
