//! CSV writers and run manifests.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{write_file, AuditRow, ConvergenceRow, HistoryRow, Result, RobustRow, Split, SweepRow};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes a header line followed by one line per row.
pub fn write_csv<T>(path: &Path, header: &str, rows: &[T], line: impl Fn(&T) -> String) -> Result<()> {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(&line(r));
        s.push('\n');
    }
    write_file(path, &s)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv(path, "method,snr_db,mean_rate,std_rate,n_channels,mean_wall_time_ms", rows, |r| {
        format!("{},{},{},{},{},{}", r.method, r.snr_db, r.mean_rate, r.std_rate, r.n_channels, r.mean_wall_time_ms)
    })
}

pub fn write_convergence(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    write_csv(path, "method,iteration,mean_rate", rows, |r| format!("{},{},{}", r.method, r.iteration, r.mean_rate))
}

pub fn write_robust(path: &Path, rows: &[RobustRow]) -> Result<()> {
    write_csv(path, "method,error_var,mean_true_rate", rows, |r| {
        format!("{},{},{}", r.method, r.error_var, r.mean_true_rate)
    })
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    write_csv(path, "schedule_id,epoch,loss", rows, |r| format!("{},{},{}", r.schedule_id, r.epoch, r.loss))
}

pub fn write_audit(path: &Path, rows: &[AuditRow]) -> Result<()> {
    write_csv(path, "method,snr_db,iterates,max_constraint_violation,max_power_violation", rows, |r| {
        format!(
            "{},{},{},{:e},{:e}",
            r.method, r.snr_db, r.iterates, r.max_constraint_violation, r.max_power_violation
        )
    })
}

/// Provenance record written next to each command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub timestamp_unix: u64,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub schedules: BTreeMap<String, String>,
    pub notes: BTreeMap<String, String>,
    pub train_indices: Vec<usize>,
    pub eval_indices: Vec<usize>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: &str, dataset_fingerprint: &str) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            config_hash: config_hash.into(),
            dataset_fingerprint: dataset_fingerprint.into(),
            schedules: BTreeMap::new(),
            notes: BTreeMap::new(),
            train_indices: Vec::new(),
            eval_indices: Vec::new(),
        }
    }

    pub fn schedule(&mut self, id: &str, fingerprint: &str) {
        self.schedules.insert(id.into(), fingerprint.into());
    }

    pub fn note(&mut self, key: &str, value: &str) {
        self.notes.insert(key.into(), value.into());
    }

    pub fn split(&mut self, split: &Split) {
        self.train_indices = split.train.clone();
        self.eval_indices = split.eval.clone();
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(format!("manifest_{}.toml", self.command)), &self.to_toml())
    }
}
