use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

/// A command result together with the configuration that produced it.
#[derive(Serialize)]
pub struct Report<'a, T> {
    pub config: &'a RunConfig,
    #[serde(flatten)]
    pub result: T,
}

impl<'a, T> Report<'a, T> {
    pub fn new(config: &'a RunConfig, result: T) -> Self {
        Report { config, result }
    }
}

/// `graph.jsonl` → `graph.report.json`.
pub fn report_path(primary: &Path) -> PathBuf {
    primary.with_extension("report.json")
}

/// Writes via a temporary file in the target directory and a rename, so
/// readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_jsonl_atomic<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Pretty JSON to `out`, or to stdout when no destination is set.
pub fn write_report<T: Serialize>(out: Option<&Path>, report: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}
