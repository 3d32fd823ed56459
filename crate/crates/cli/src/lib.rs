//! Experiment harness: dataset generation, schedule training, SNR sweeps, convergence
//! traces and robustness sweeps, all written as CSV.

pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hbf_core::optimizers::channel_seed;
use hbf_core::unfolding::{
    load_schedule, save_schedule, train_altmin_schedule, train_pga_schedule, train_robust_schedule,
    tune_fixed_pga_step, ScheduleKind, TrainedSchedule,
};
use hbf_core::{
    corrupt_csi, generate_dataset, load_dataset, run_method, save_dataset, seed, sum_rate, ChannelDataset,
    ChannelRealization, ConstraintSet, Method, MethodParams, StepSchedule, SystemDims,
};
use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use config::ExperimentConfig;
use output::Manifest;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] hbf_core::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset not found at {0} (run `gen` first)")]
    MissingDataset(PathBuf),
    #[error("schedule {0} not found (run `train` first)")]
    MissingSchedule(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Label of the robustly trained PGA schedule in `robust.csv`.
pub const ROBUST_LABEL: &str = "unfolded_pga_robust";

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Disjoint train/eval index sets: a seeded shuffle of `0..count`, the first
/// `round(fraction·count)` indices training, each set sorted.
pub fn split_indices(count: usize, fraction: f64, eval_seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut seed::rng(seed::derive_tagged(eval_seed, "split", 0)));
    let n_train = ((fraction * count as f64).round() as usize).min(count);
    let mut train = idx[..n_train].to_vec();
    let mut eval = idx[n_train..].to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    Split { train, eval }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub snr_db: f64,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub n_channels: usize,
    pub mean_wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub method: String,
    pub iteration: usize,
    pub mean_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustRow {
    pub method: String,
    pub error_var: f64,
    pub mean_true_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub schedule_id: String,
    pub epoch: usize,
    pub loss: f64,
}

/// Feasibility of recorded iterates for one (method, SNR) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub method: String,
    pub snr_db: f64,
    pub iterates: usize,
    pub max_constraint_violation: f64,
    pub max_power_violation: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn snr_tag(snr_db: f64) -> String {
    format!("snr{snr_db}")
}

/// One per-channel result of a method run.
struct ChannelRun {
    rate: f64,
    trace: Vec<f64>,
    wall_ms: f64,
    audit: (usize, f64, f64),
}

pub struct Harness {
    pub config: ExperimentConfig,
}

impl Harness {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn out_dir(&self) -> PathBuf {
        self.config.output_dir()
    }

    fn ensure_out_dir(&self) -> Result<()> {
        let dir = self.out_dir();
        fs::create_dir_all(&dir).map_err(io_err(&dir))
    }

    fn schedule_dir(&self) -> PathBuf {
        self.out_dir().join("schedules")
    }

    fn constraint(&self) -> Result<ConstraintSet> {
        self.config.constraint.build(self.config.dims.m, self.config.dims.k)
    }

    // ---- gen ----

    /// Generates the dataset, writes it and returns its fingerprint.
    pub fn gen(&self) -> Result<String> {
        let ds = generate_dataset(&self.config.channel_params(), self.config.dataset.count, self.config.dataset.seed)?;
        self.ensure_out_dir()?;
        let path = self.config.dataset_path();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        save_dataset(&ds, &path).map_err(|e| match e {
            hbf_core::Error::Io(source) => HarnessError::Io { path: path.clone(), source },
            other => other.into(),
        })?;
        let fp = ds.fingerprint();
        let mut m = self.manifest("gen", &fp);
        m.note("dataset_path", &path.display().to_string());
        m.note("count", &ds.len().to_string());
        m.write(&self.out_dir())?;
        Ok(fp)
    }

    pub fn load_dataset(&self) -> Result<ChannelDataset> {
        let path = self.config.dataset_path();
        if !path.exists() {
            return Err(HarnessError::MissingDataset(path));
        }
        let ds = load_dataset(&path)?;
        let p = &ds.params;
        let d = &self.config.dims;
        if (p.m, p.n, p.f) != (d.m, d.n, d.f) {
            return Err(HarnessError::Config(format!(
                "dataset has (M, N, F) = ({}, {}, {}), config says ({}, {}, {})",
                p.m, p.n, p.f, d.m, d.n, d.f
            )));
        }
        Ok(ds)
    }

    pub fn split(&self, ds: &ChannelDataset) -> Split {
        split_indices(ds.len(), self.config.split, self.config.eval_seed)
    }

    fn manifest(&self, command: &str, dataset_fingerprint: &str) -> Manifest {
        Manifest::new(command, &self.config.hash(), dataset_fingerprint)
    }

    // ---- schedules ----

    /// SNR whose schedule is used at `snr_db`.
    fn schedule_snr(&self, snr_db: f64) -> f64 {
        if self.config.training.per_snr_schedules {
            snr_db
        } else {
            self.config.convergence.snr_db
        }
    }

    fn schedule_snrs(&self) -> Vec<f64> {
        let mut s: Vec<f64> = if self.config.training.per_snr_schedules {
            let mut v = self.config.snr_grid_db.clone();
            v.push(self.config.convergence.snr_db);
            v.push(self.config.robust.snr_db);
            v
        } else {
            vec![self.config.convergence.snr_db]
        };
        s.sort_by(f64::total_cmp);
        s.dedup();
        s
    }

    pub fn schedule_id(kind: &str, snr_db: f64) -> String {
        format!("{kind}_{}", snr_tag(snr_db))
    }

    fn robust_schedule_id(&self) -> String {
        format!("{ROBUST_LABEL}_{}_var{}", snr_tag(self.config.robust.snr_db), self.config.robust.train_error_var)
    }

    fn schedule_path(&self, id: &str) -> PathBuf {
        self.schedule_dir().join(format!("{id}.toml"))
    }

    fn load_checked(&self, id: &str, dims: &SystemDims, cs: &ConstraintSet) -> Result<TrainedSchedule> {
        let path = self.schedule_path(id);
        if !path.exists() {
            return Err(HarnessError::MissingSchedule(id.to_string()));
        }
        let s = load_schedule(&path)?;
        s.check_compatible(dims, cs)?;
        Ok(s)
    }

    /// Trains every schedule the configured methods need and writes
    /// `train_history.csv`. Returns the schedule ids in training order.
    pub fn train(&self) -> Result<Vec<String>> {
        let ds = self.load_dataset()?;
        let split = self.split(&ds);
        if split.train.is_empty() {
            return Err(HarnessError::Config("training split is empty (split = 0?)".into()));
        }
        let train_set = ChannelDataset {
            params: ds.params,
            seed: ds.seed,
            realizations: split.train.iter().map(|&i| ds.realizations[i].clone()).collect(),
        };
        let methods = self.config.method_list()?;
        let cs = self.constraint()?;
        let l = self.config.method_params.unfolded_depth;
        let t = &self.config.training;
        let schedule_dir = self.schedule_dir();
        fs::create_dir_all(&schedule_dir).map_err(io_err(&schedule_dir))?;

        let mut trained: Vec<(String, TrainedSchedule)> = Vec::new();
        for snr in self.schedule_snrs() {
            let dims = self.config.dims.at_snr(snr)?;
            if methods.contains(&Method::UnfoldedPga) {
                let s = train_pga_schedule(&train_set, &dims, &cs, l, &self.config.train_config(t.epochs, 0.0)?)?;
                trained.push((Self::schedule_id(Method::UnfoldedPga.name(), snr), s));
            }
            if methods.contains(&Method::UnfoldedAltmin) {
                let cfg = self.config.train_config(t.altmin_epochs, 0.0)?;
                let s = train_altmin_schedule(&train_set, &dims, &cs, l, &cfg)?;
                trained.push((Self::schedule_id(Method::UnfoldedAltmin.name(), snr), s));
            }
            if methods.contains(&Method::Pga) {
                let s = self.tune_pga(&train_set, &dims, &cs)?;
                trained.push((Self::schedule_id("pga_fixed", snr), s));
            }
        }
        if methods.contains(&Method::UnfoldedPga) {
            let dims = self.config.dims.at_snr(self.config.robust.snr_db)?;
            let cfg = self.config.train_config(t.epochs, self.config.robust.train_error_var)?;
            let s = train_robust_schedule(&train_set, &dims, &cs, l, &cfg)?;
            trained.push((self.robust_schedule_id(), s));
        }

        let mut history = Vec::new();
        let mut manifest = self.manifest("train", &ds.fingerprint());
        for (id, s) in &trained {
            let path = self.schedule_path(id);
            save_schedule(s, &path).map_err(|e| match e {
                hbf_core::Error::Io(source) => HarnessError::Io { path: path.clone(), source },
                other => other.into(),
            })?;
            manifest.schedule(id, &s.config_fingerprint);
            for (epoch, &loss) in s.train_history.iter().enumerate() {
                history.push(HistoryRow { schedule_id: id.clone(), epoch, loss });
            }
        }
        output::write_history(&self.out_dir().join("train_history.csv"), &history)?;
        manifest.split(&split);
        manifest.write(&self.out_dir())?;
        Ok(trained.into_iter().map(|(id, _)| id).collect())
    }

    /// Classical PGA step: the configured one, or the best grid step on the first
    /// `pga_tuning_channels` training channels.
    fn tune_pga(&self, train_set: &ChannelDataset, dims: &SystemDims, cs: &ConstraintSet) -> Result<TrainedSchedule> {
        let mp = &self.config.method_params;
        let schedule = match mp.pga_fixed_step {
            Some([a, d]) => StepSchedule::new(vec![a; mp.pga_iterations], vec![d; mp.pga_iterations])?,
            None => {
                let n = mp.pga_tuning_channels.clamp(1, train_set.len());
                let (s, _) = tune_fixed_pga_step(
                    &train_set.realizations[..n],
                    dims,
                    cs,
                    mp.pga_iterations,
                    self.config.init_strategy()?,
                    self.config.training.seed,
                )?;
                s
            }
        };
        let text = format!("pga_fixed;{:?};{:?};{}", schedule.mu_a.first(), schedule.mu_d.first(), train_set.fingerprint());
        Ok(TrainedSchedule {
            kind: ScheduleKind::Pga,
            schedule,
            train_history: Vec::new(),
            config_fingerprint: output::sha256_hex(text.as_bytes()),
            dims: *dims,
            constraint: cs.kind.label(),
        })
    }

    /// Method parameters at `snr_db` with every schedule the methods need loaded.
    fn method_params(
        &self,
        methods: &[Method],
        snr_db: f64,
        cs: &ConstraintSet,
        manifest: &mut Manifest,
    ) -> Result<MethodParams> {
        let mp = &self.config.method_params;
        let s_snr = self.schedule_snr(snr_db);
        let s_dims = self.config.dims.at_snr(s_snr)?;
        let mut params = MethodParams {
            init: self.config.init_strategy()?,
            altmin_rounds: mp.altmin_rounds,
            mo_inner_steps: mp.mo_inner_steps,
            ..Default::default()
        };
        let mut load = |id: String| -> Result<StepSchedule> {
            let s = self.load_checked(&id, &s_dims, cs)?;
            manifest.schedule(&id, &s.config_fingerprint);
            Ok(s.schedule)
        };
        if methods.contains(&Method::Pga) {
            params.pga_schedule = Some(match mp.pga_fixed_step {
                Some([a, d]) => StepSchedule::new(vec![a; mp.pga_iterations], vec![d; mp.pga_iterations])?,
                None => load(Self::schedule_id("pga_fixed", s_snr))?,
            });
        }
        if methods.contains(&Method::UnfoldedPga) {
            params.unfolded_pga = Some(load(Self::schedule_id(Method::UnfoldedPga.name(), s_snr))?);
        }
        if methods.contains(&Method::UnfoldedAltmin) {
            params.unfolded_altmin = Some(load(Self::schedule_id(Method::UnfoldedAltmin.name(), s_snr))?);
        }
        Ok(params)
    }

    /// Runs `method` on every channel of `eval` (optionally on corrupted estimates),
    /// measuring rates on the true channels. Iterates of every `audit_stride`-th
    /// channel are checked for feasibility.
    fn run_cell(
        &self,
        method: Method,
        eval: &[&ChannelRealization],
        dims: &SystemDims,
        cs: &ConstraintSet,
        params: &MethodParams,
        error_var: f64,
    ) -> Result<Vec<ChannelRun>> {
        let stride = self.config.audit_stride;
        let timed = self.config.record_wall_time;
        let eval_seed = self.config.eval_seed;
        eval.par_iter()
            .enumerate()
            .map(|(i, h)| {
                let est = corrupt_csi(h, error_var, seed::derive_tagged(eval_seed, "csi", i as u64))?;
                let audit = i % stride == 0;
                let p = MethodParams { seed: channel_seed(eval_seed, h), record_iterates: audit, ..params.clone() };
                let start = Instant::now();
                let out = run_method(method, &est, dims, cs, &p)?;
                let wall_ms = if timed { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
                let rate = sum_rate(h, &out.w, dims.noise_var)?;
                let mut worst = (0usize, 0.0f64, 0.0f64);
                for it in &out.iterates {
                    worst.0 += 1;
                    worst.1 = worst.1.max(it.analog.violation());
                    worst.2 = worst.2.max(it.power_violation(dims.power));
                }
                Ok(ChannelRun { rate, trace: out.trace.rates, wall_ms, audit: worst })
            })
            .collect()
    }

    fn eval_channels<'a>(&self, ds: &'a ChannelDataset, split: &Split) -> Result<Vec<&'a ChannelRealization>> {
        if split.eval.is_empty() {
            return Err(HarnessError::Config("evaluation split is empty".into()));
        }
        Ok(split.eval.iter().map(|&i| &ds.realizations[i]).collect())
    }

    /// Mean/std rate per (SNR, method) over the evaluation split; writes `sweep.csv`
    /// and `audit.csv`.
    pub fn sweep(&self) -> Result<(Vec<SweepRow>, Vec<AuditRow>)> {
        let ds = self.load_dataset()?;
        let split = self.split(&ds);
        let eval = self.eval_channels(&ds, &split)?;
        let methods = self.config.method_list()?;
        let cs = self.constraint()?;
        let mut manifest = self.manifest("sweep", &ds.fingerprint());
        let mut rows = Vec::new();
        let mut audits = Vec::new();
        for &snr in &self.config.snr_grid_db {
            let dims = self.config.dims.at_snr(snr)?;
            let params = self.method_params(&methods, snr, &cs, &mut manifest)?;
            for &m in &methods {
                let runs = self.run_cell(m, &eval, &dims, &cs, &params, 0.0)?;
                let rates: Vec<f64> = runs.iter().map(|r| r.rate).collect();
                let (mean, std) = mean_std(&rates);
                let wall = runs.iter().map(|r| r.wall_ms).sum::<f64>() / runs.len() as f64;
                rows.push(SweepRow {
                    method: m.name().into(),
                    snr_db: snr,
                    mean_rate: mean,
                    std_rate: std,
                    n_channels: runs.len(),
                    mean_wall_time_ms: wall,
                });
                if m != Method::FullyDigital {
                    audits.push(AuditRow {
                        method: m.name().into(),
                        snr_db: snr,
                        iterates: runs.iter().map(|r| r.audit.0).sum(),
                        max_constraint_violation: runs.iter().map(|r| r.audit.1).fold(0.0, f64::max),
                        max_power_violation: runs.iter().map(|r| r.audit.2).fold(0.0, f64::max),
                    });
                }
            }
        }
        output::write_sweep(&self.out_dir().join("sweep.csv"), &rows)?;
        output::write_audit(&self.out_dir().join("audit.csv"), &audits)?;
        manifest.split(&split);
        manifest.write(&self.out_dir())?;
        Ok((rows, audits))
    }

    /// Mean rate per iteration at `convergence.snr_db`; writes `convergence.csv`.
    pub fn convergence(&self) -> Result<Vec<ConvergenceRow>> {
        let ds = self.load_dataset()?;
        let split = self.split(&ds);
        let eval = self.eval_channels(&ds, &split)?;
        let methods = self.config.method_list()?;
        let cs = self.constraint()?;
        let snr = self.config.convergence.snr_db;
        let dims = self.config.dims.at_snr(snr)?;
        let mut manifest = self.manifest("convergence", &ds.fingerprint());
        let params = self.method_params(&methods, snr, &cs, &mut manifest)?;
        let mut rows = Vec::new();
        for &m in &methods {
            let runs = self.run_cell(m, &eval, &dims, &cs, &params, 0.0)?;
            let len = runs[0].trace.len();
            for it in 0..len {
                let mean = runs.iter().map(|r| r.trace[it]).sum::<f64>() / runs.len() as f64;
                rows.push(ConvergenceRow { method: m.name().into(), iteration: it, mean_rate: mean });
            }
        }
        output::write_convergence(&self.out_dir().join("convergence.csv"), &rows)?;
        manifest.split(&split);
        manifest.write(&self.out_dir())?;
        Ok(rows)
    }

    /// Mean true-channel rate when every method optimizes on corrupted CSI, over the
    /// error-variance grid; writes `robust.csv`. The robustly trained schedule appears
    /// as [`ROBUST_LABEL`].
    pub fn robust(&self) -> Result<Vec<RobustRow>> {
        let ds = self.load_dataset()?;
        let split = self.split(&ds);
        let eval = self.eval_channels(&ds, &split)?;
        let methods = self.config.method_list()?;
        let cs = self.constraint()?;
        let snr = self.config.robust.snr_db;
        let dims = self.config.dims.at_snr(snr)?;
        let mut manifest = self.manifest("robust", &ds.fingerprint());
        let params = self.method_params(&methods, snr, &cs, &mut manifest)?;
        let mut cells: Vec<(String, Method, MethodParams)> =
            methods.iter().map(|&m| (m.name().to_string(), m, params.clone())).collect();
        if methods.contains(&Method::UnfoldedPga) {
            let id = self.robust_schedule_id();
            let s = self.load_checked(&id, &dims, &cs)?;
            manifest.schedule(&id, &s.config_fingerprint);
            let p = MethodParams { unfolded_pga: Some(s.schedule), ..params.clone() };
            cells.push((ROBUST_LABEL.to_string(), Method::UnfoldedPga, p));
        }
        let mut rows = Vec::new();
        for &var in &self.config.robust.error_var_grid {
            for (label, m, p) in &cells {
                let runs = self.run_cell(*m, &eval, &dims, &cs, p, var)?;
                let mean = runs.iter().map(|r| r.rate).sum::<f64>() / runs.len() as f64;
                rows.push(RobustRow { method: label.clone(), error_var: var, mean_true_rate: mean });
            }
        }
        output::write_robust(&self.out_dir().join("robust.csv"), &rows)?;
        manifest.split(&split);
        manifest.write(&self.out_dir())?;
        Ok(rows)
    }
}

/// Reads every CSV the harness writes, keyed by file name.
pub fn read_outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for name in ["sweep.csv", "convergence.csv", "robust.csv", "train_history.csv", "audit.csv"] {
        let path = dir.join(name);
        if path.exists() {
            out.insert(name.to_string(), fs::read(&path).map_err(io_err(&path))?);
        }
    }
    Ok(out)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}
