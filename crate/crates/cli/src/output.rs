use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const MANIFEST: &str = "MANIFEST.json";
pub const REPLICA_DIR: &str = "replicas";

/// Writes through a sibling temp file and renames, so a reader never sees a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    /// Hash of the config after command-line overrides.
    pub effective_config_sha256: String,
    pub seed: u64,
    pub replicas: usize,
    pub experiment: String,
    pub spinchain_version: String,
    pub core_version: String,
    pub created_unix: u64,
}

pub fn effective_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output_dir = Default::default();
    sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
}

/// Refuses to mix replica files from a different effective config.
pub fn check_resume(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let p = cfg.output_dir.join(MANIFEST);
    let Ok(bytes) = fs::read(&p) else { return Ok(()) };
    let old: Manifest = serde_json::from_slice(&bytes)?;
    if old.effective_config_sha256 != effective_hash(cfg) {
        return Err(CliError::Runtime(format!(
            "{} holds results of a different config; use a fresh output_dir",
            cfg.output_dir.display()
        )));
    }
    Ok(())
}

pub fn write_manifest(cfg: &ExperimentConfig, raw: &[u8]) -> Result<(), CliError> {
    let m = Manifest {
        config_sha256: sha256_hex(raw),
        effective_config_sha256: effective_hash(cfg),
        seed: cfg.seed,
        replicas: cfg.replicas,
        experiment: format!("{:?}", cfg.experiment),
        spinchain_version: env!("CARGO_PKG_VERSION").into(),
        core_version: spinchain_core::VERSION.into(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    write_atomic(&cfg.output_dir.join(MANIFEST), &serde_json::to_vec_pretty(&m)?)
}

/// Numeric CSV: header and rows of f64.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}
