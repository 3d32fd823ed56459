//! Schedule files: TOML text with the depth, both step lists, the dims, the
//! constraint label and the training fingerprint.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainedSchedule;
use crate::error::{Error, Result};
use crate::optimizers::StepSchedule;
use crate::precoder::SystemDims;

pub const SCHEDULE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DimsRecord {
    m: usize,
    k: usize,
    n: usize,
    f: usize,
    power: f64,
    noise_var: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleFile {
    format_version: u32,
    kind: String,
    depth: usize,
    constraint: String,
    fingerprint: String,
    mu_a: Vec<f64>,
    mu_d: Vec<f64>,
    train_history: Vec<f64>,
    dims: DimsRecord,
}

pub fn schedule_to_string(s: &TrainedSchedule) -> Result<String> {
    let d = &s.dims;
    let file = ScheduleFile {
        format_version: SCHEDULE_FORMAT_VERSION,
        kind: s.kind.name().into(),
        depth: s.schedule.len(),
        constraint: s.constraint.clone(),
        fingerprint: s.config_fingerprint.clone(),
        mu_a: s.schedule.mu_a.clone(),
        mu_d: s.schedule.mu_d.clone(),
        train_history: s.train_history.clone(),
        dims: DimsRecord { m: d.m, k: d.k, n: d.n, f: d.f, power: d.power, noise_var: d.noise_var },
    };
    toml::to_string(&file).map_err(|e| Error::Format(format!("cannot serialize schedule: {e}")))
}

pub fn schedule_from_str(text: &str) -> Result<TrainedSchedule> {
    let file: ScheduleFile = toml::from_str(text).map_err(|e| Error::Format(format!("malformed schedule file: {e}")))?;
    if file.format_version != SCHEDULE_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported schedule format version {} (expected {SCHEDULE_FORMAT_VERSION})",
            file.format_version
        )));
    }
    let schedule = StepSchedule::new(file.mu_a, file.mu_d).map_err(|e| Error::Format(e.to_string()))?;
    if schedule.len() != file.depth {
        return Err(Error::Format(format!("depth {} but {} steps stored", file.depth, schedule.len())));
    }
    let d = file.dims;
    let dims = SystemDims::new(d.m, d.k, d.n, d.f, d.power, d.noise_var).map_err(|e| Error::Format(e.to_string()))?;
    Ok(TrainedSchedule {
        kind: file.kind.parse()?,
        schedule,
        train_history: file.train_history,
        config_fingerprint: file.fingerprint,
        dims,
        constraint: file.constraint,
    })
}

pub fn save_schedule(s: &TrainedSchedule, path: &Path) -> Result<()> {
    fs::write(path, schedule_to_string(s)?)?;
    Ok(())
}

pub fn load_schedule(path: &Path) -> Result<TrainedSchedule> {
    schedule_from_str(&fs::read_to_string(path)?)
}
