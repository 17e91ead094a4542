//! Run configuration: flags override the config file, which overrides the
//! per-command defaults. The resolved form is echoed in every report.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use emc_core::oracle::DEFAULT_CAP;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUT_DIR_ENV: &str = "EMC_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "emc-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Oracle,
    Emc,
    Estimate,
    Analyze,
    Censor,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Oracle => "oracle",
            Command::Emc => "emc",
            Command::Estimate => "estimate",
            Command::Analyze => "analyze",
            Command::Censor => "censor",
            Command::Verify => "verify",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Exact,
    MonteCarlo,
}

/// Flags shared by every command.
#[derive(Args, Debug, Default)]
pub struct Flags {
    /// JSON config file with the same keys as the flags (snake_case).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model spec JSON file.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Built-in scenario name (`all` for verify).
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Number of A-hits checked by `censor`.
    #[arg(long, global = true)]
    pub hits: Option<usize>,
    /// Censor set as comma-separated state labels.
    #[arg(long, global = true, value_delimiter = ',')]
    pub censor: Option<Vec<String>>,
    #[arg(long, global = true, conflicts_with = "monte_carlo")]
    pub exact: bool,
    #[arg(long = "monte-carlo", global = true)]
    pub monte_carlo: bool,
    /// Output directory (default: $EMC_OUT_DIR, else ./emc-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Maximum joint-table entries for exact enumeration.
    #[arg(long, global = true)]
    pub cap: Option<u64>,
    /// Exit with status 2 unless the analyzed chain is irreducible and aperiodic.
    #[arg(long = "require-ergodic", global = true)]
    pub require_ergodic: bool,
    /// Matrix JSON file `{"labels": [...], "rows": [[...]]}`.
    #[arg(long, global = true)]
    pub matrix: Option<PathBuf>,
    /// Trajectory ensemble JSONL for `estimate`.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Additive pseudo-count for `estimate`.
    #[arg(long, global = true)]
    pub smoothing: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<PathBuf>,
    scenario: Option<String>,
    seed: Option<u64>,
    horizon: Option<usize>,
    samples: Option<usize>,
    hits: Option<usize>,
    censor: Option<Vec<String>>,
    mode: Option<Mode>,
    out: Option<PathBuf>,
    cap: Option<u64>,
    require_ergodic: Option<bool>,
    matrix: Option<PathBuf>,
    input: Option<PathBuf>,
    smoothing: Option<f64>,
}

/// Fully resolved configuration; every path is absolute.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub config_file: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub scenario: Option<String>,
    pub seed: u64,
    pub horizon: Option<usize>,
    /// `None` for `verify` means each check's own sample count.
    pub samples: Option<usize>,
    pub hits: Option<usize>,
    pub censor: Option<Vec<String>>,
    pub mode: Mode,
    pub out: PathBuf,
    pub cap: u64,
    pub require_ergodic: bool,
    pub matrix: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub smoothing: f64,
}

fn absolute(path: &Path, base: Option<&Path>) -> Result<PathBuf, CliError> {
    let joined = match base {
        Some(b) if path.is_relative() => b.join(path),
        _ => path.to_path_buf(),
    };
    std::path::absolute(&joined).map_err(|e| CliError::usage(format!("cannot resolve {}: {e}", joined.display())))
}

fn default_horizon(command: Command) -> Option<usize> {
    match command {
        Command::Simulate => Some(10),
        Command::Oracle => Some(4),
        Command::Emc => Some(8),
        Command::Analyze => Some(100),
        Command::Estimate | Command::Censor | Command::Verify => None,
    }
}

fn default_samples(command: Command) -> Option<usize> {
    match command {
        Command::Simulate => Some(1_000),
        Command::Emc => Some(100_000),
        Command::Censor => Some(50_000),
        _ => None,
    }
}

impl RunConfig {
    pub fn resolve(command: Command, flags: Flags, env_out: Option<PathBuf>) -> Result<Self, CliError> {
        let (file, file_dir) = match &flags.config {
            Some(path) => {
                let path = absolute(path, None)?;
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
                let parsed: FileConfig = serde_json::from_str(&text)
                    .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
                (parsed, path.parent().map(Path::to_path_buf))
            }
            None => (FileConfig::default(), None),
        };
        let file_path = |p: Option<PathBuf>| p.map(|p| absolute(&p, file_dir.as_deref())).transpose();
        let flag_path = |p: Option<PathBuf>| p.map(|p| absolute(&p, None)).transpose();
        let pick = |flag: Option<PathBuf>, from_file: Option<PathBuf>| -> Result<Option<PathBuf>, CliError> {
            match flag {
                Some(p) => flag_path(Some(p)),
                None => file_path(from_file),
            }
        };

        let mode = if flags.exact {
            Mode::Exact
        } else if flags.monte_carlo {
            Mode::MonteCarlo
        } else {
            file.mode.unwrap_or(Mode::Exact)
        };
        let out = match (flags.out, file.out) {
            (Some(p), _) => absolute(&p, None)?,
            (None, Some(p)) => absolute(&p, file_dir.as_deref())?,
            (None, None) => absolute(&env_out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)), None)?,
        };
        let smoothing = flags.smoothing.or(file.smoothing).unwrap_or(0.0);
        if !(smoothing.is_finite() && smoothing >= 0.0) {
            return Err(CliError::usage(format!(
                "smoothing must be a finite number >= 0, got {smoothing}"
            )));
        }
        let censor = flags.censor.or(file.censor);
        let config = RunConfig {
            command,
            config_file: flags.config.map(|p| absolute(&p, None)).transpose()?,
            model: pick(flags.model, file.model)?,
            scenario: flags.scenario.or(file.scenario),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            horizon: flags.horizon.or(file.horizon).or(default_horizon(command)),
            samples: flags.samples.or(file.samples).or(default_samples(command)),
            hits: flags.hits.or(file.hits).or((command == Command::Censor).then_some(5)),
            censor,
            mode,
            out,
            cap: flags.cap.or(file.cap).unwrap_or(DEFAULT_CAP),
            require_ergodic: flags.require_ergodic || file.require_ergodic.unwrap_or(false),
            matrix: pick(flags.matrix, file.matrix)?,
            input: pick(flags.input, file.input)?,
            smoothing,
        };
        if config.model.is_some() && config.scenario.is_some() {
            return Err(CliError::usage("give either a model file or a scenario, not both"));
        }
        if config.samples == Some(0) {
            return Err(CliError::usage("samples must be at least 1"));
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_explicit() {
        let c = RunConfig::resolve(Command::Simulate, Flags::default(), None).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.horizon, Some(10));
        assert_eq!(c.samples, Some(1_000));
        assert_eq!(c.cap, DEFAULT_CAP);
        assert!(c.out.is_absolute() && c.out.ends_with(DEFAULT_OUT_DIR));
    }

    #[test]
    fn flags_override_file_and_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.json");
        std::fs::write(&cfg, r#"{"seed": 5, "horizon": 3, "model": "m.json", "out": "o"}"#).unwrap();
        let flags = Flags {
            config: Some(cfg),
            seed: Some(9),
            ..Flags::default()
        };
        let c = RunConfig::resolve(Command::Oracle, flags, Some(PathBuf::from("/elsewhere"))).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.horizon, Some(3));
        assert_eq!(c.model, Some(dir.path().join("m.json")));
        assert_eq!(c.out, dir.path().join("o"));
    }

    #[test]
    fn env_sets_default_out_only() {
        let c = RunConfig::resolve(Command::Oracle, Flags::default(), Some(PathBuf::from("/tmp/x"))).unwrap();
        assert_eq!(c.out, PathBuf::from("/tmp/x"));
        let flags = Flags {
            out: Some(PathBuf::from("/tmp/y")),
            ..Flags::default()
        };
        let c = RunConfig::resolve(Command::Oracle, flags, Some(PathBuf::from("/tmp/x"))).unwrap();
        assert_eq!(c.out, PathBuf::from("/tmp/y"));
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.json");
        std::fs::write(&cfg, r#"{"sed": 5}"#).unwrap();
        let flags = Flags {
            config: Some(cfg),
            ..Flags::default()
        };
        assert!(RunConfig::resolve(Command::Oracle, flags, None).is_err());
    }
}
