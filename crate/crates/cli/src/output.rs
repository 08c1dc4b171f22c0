//! Run directories: one per (study, effective config), named by a hash.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ProblemConfig;
use crate::study::{Outcome, Study};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SMALLNOISE_OUT";
pub const DEFAULT_OUT: &str = "runs";

/// Flag, then config, then environment, then `./runs`.
pub fn output_root(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.or(config)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn effective_config_json(config: &ProblemConfig) -> String {
    serde_json::to_string_pretty(config).expect("config serializes") + "\n"
}

/// First 16 hex digits of SHA-256 over the study name and effective config.
pub fn config_hash(study: Study, config: &ProblemConfig) -> String {
    let mut h = Sha256::new();
    h.update(study.name().as_bytes());
    h.update(b"\n");
    h.update(effective_config_json(config).as_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Metadata<'a> {
    study: &'a str,
    config_hash: &'a str,
    unix_time: u64,
    threads: usize,
    version: &'a str,
}

/// Writes the run directory and returns its path. Everything except
/// `metadata.json` is a pure function of the study and effective config.
pub fn write_run(root: &Path, study: Study, config: &ProblemConfig, outcome: &Outcome, threads: usize) -> io::Result<PathBuf> {
    let hash = config_hash(study, config);
    let dir = root.join(format!("{}-{hash}", study.name()));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), effective_config_json(config))?;
    let summary = serde_json::to_string_pretty(&outcome.summary).map_err(io::Error::other)? + "\n";
    fs::write(dir.join("summary.json"), summary)?;
    for (name, text) in &outcome.files {
        fs::write(dir.join(name), text)?;
    }
    let meta = Metadata {
        study: study.name(),
        config_hash: &hash,
        unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        threads,
        version: env!("CARGO_PKG_VERSION"),
    };
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta).map_err(io::Error::other)? + "\n")?;
    Ok(dir)
}
