use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::config::RunConfig;
use crate::CliError;

pub const TOOL: &str = "emc";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const LOG_FILE: &str = "run.log";

#[derive(Debug, Serialize)]
pub struct Status {
    pub code: i32,
    pub outcome: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Envelope written as `<command>.json`. Holds no timestamps, so identical
/// runs produce identical files.
#[derive(Debug, Serialize)]
pub struct ReportBundle<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub report: serde_json::Value,
    /// Other files written by the command, relative to the output directory.
    pub artifacts: Vec<String>,
    pub status: Status,
}

/// Writes `contents` to `dir/name` through a temporary file in `dir`.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::io(dir.join(name), e);
    fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(dir.join(name)).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_bundle(bundle: &ReportBundle) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(bundle).expect("report serializes");
    text.push('\n');
    write_atomic(
        &bundle.config.out,
        &format!("{}.json", bundle.config.command.name()),
        text.as_bytes(),
    )
}

/// Appends one line per run to the sidecar log; timestamps live only here.
pub fn append_log(dir: &Path, command: &str, status: &Status) {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let line = format!("{secs} {command} exit={} {}\n", status.code, status.outcome);
    let _ = fs::create_dir_all(dir).and_then(|_| {
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(LOG_FILE))?
            .write_all(line.as_bytes())
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "a.txt", b"one").unwrap();
        write_atomic(dir.path(), "a.txt", b"two").unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("a.txt")).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
