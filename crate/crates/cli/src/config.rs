//! Experiment configuration file (TOML).

use std::path::{Path, PathBuf};

use hbf_core::unfolding::{default_loss_weights, GradMode, TrainConfig};
use hbf_core::{ChannelModelParams, ConstraintKind, ConstraintSet, InitStrategy, Method, SystemDims, Topology};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DimsConfig {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "F")]
    pub f: usize,
    pub noise_var: f64,
}

impl Default for DimsConfig {
    fn default() -> Self {
        Self { m: 12, k: 4, n: 4, f: 16, noise_var: 1.0 }
    }
}

impl DimsConfig {
    /// Dims at `snr_db`, realized through the power with the noise variance fixed.
    pub fn at_snr(&self, snr_db: f64) -> Result<SystemDims> {
        let power = self.noise_var * 10f64.powf(snr_db / 10.0);
        Ok(SystemDims::new(self.m, self.k, self.n, self.f, power, self.noise_var)?)
    }
}

/// Channel model parameters other than the array/user/subcarrier counts, which come
/// from `dims`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub n_clusters: usize,
    pub rays_per_cluster: usize,
    pub angle_spread_rad: f64,
    pub delay_spread_s: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let p = ChannelModelParams::default();
        Self {
            carrier_hz: p.carrier_hz,
            bandwidth_hz: p.bandwidth_hz,
            n_clusters: p.n_clusters,
            rays_per_cluster: p.rays_per_cluster,
            angle_spread_rad: p.angle_spread_rad,
            delay_spread_s: p.delay_spread_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Dataset file; relative paths resolve against `output_dir`.
    pub path: String,
    pub count: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { path: "channels.bin".into(), count: 1000, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintConfig {
    /// `unit_modulus`, `quantized_phase`, `codebook` or `lorentzian`.
    pub kind: String,
    pub bits: u32,
    pub codebook_amplitudes: Vec<f64>,
    /// `fully` or `partially`.
    pub topology: String,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self { kind: "unit_modulus".into(), bits: 2, codebook_amplitudes: vec![0.5, 1.0], topology: "fully".into() }
    }
}

impl ConstraintConfig {
    pub fn build(&self, m: usize, k: usize) -> Result<ConstraintSet> {
        let kind = match self.kind.as_str() {
            "unit_modulus" => ConstraintKind::UnitModulus,
            "quantized_phase" => ConstraintKind::QuantizedPhase { bits: self.bits },
            "codebook" => ConstraintKind::vm_codebook(self.bits, &self.codebook_amplitudes),
            "lorentzian" => ConstraintKind::LorentzianDma,
            other => return Err(HarnessError::Config(format!("unknown constraint kind {other:?}"))),
        };
        let topology = match self.topology.as_str() {
            "fully" => Topology::Fully,
            "partially" => Topology::Partially,
            other => return Err(HarnessError::Config(format!("unknown topology {other:?}"))),
        };
        Ok(ConstraintSet::new(kind, hbf_core::connectivity_mask(m, k, topology)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodParamsConfig {
    /// `random_phase` or `matched_filter`.
    pub init_strategy: String,
    pub pga_iterations: usize,
    /// Fixed `(mu_a, mu_d)` for classical PGA; tuned on the training split when absent.
    pub pga_fixed_step: Option<[f64; 2]>,
    /// Training channels used to tune the classical PGA step.
    pub pga_tuning_channels: usize,
    pub altmin_rounds: usize,
    pub mo_inner_steps: usize,
    pub unfolded_depth: usize,
}

impl Default for MethodParamsConfig {
    fn default() -> Self {
        Self {
            init_strategy: "matched_filter".into(),
            pga_iterations: 200,
            pga_fixed_step: None,
            pga_tuning_channels: 20,
            altmin_rounds: 50,
            mo_inner_steps: 5,
            unfolded_depth: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// Epochs for the AltMin schedule (finite-difference training only).
    pub altmin_epochs: usize,
    pub batch_size: usize,
    pub learn_rate: f64,
    /// Empty means `l / L`.
    pub loss_weights: Vec<f64>,
    /// `finite_difference` or `analytic_unrolled`.
    pub grad_mode: String,
    pub fd_step: f64,
    pub seed: u64,
    /// Train one schedule per SNR point; otherwise one schedule at `convergence.snr_db`
    /// serves every SNR.
    pub per_snr_schedules: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            altmin_epochs: 3,
            batch_size: 100,
            learn_rate: 10.0,
            loss_weights: Vec::new(),
            grad_mode: "analytic_unrolled".into(),
            fd_step: 1e-4,
            seed: 11,
            per_snr_schedules: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub snr_db: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { snr_db: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustConfig {
    pub snr_db: f64,
    pub error_var_grid: Vec<f64>,
    /// CSI error variance the robust schedule is trained under.
    pub train_error_var: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self { snr_db: 10.0, error_var_grid: vec![0.0, 0.01, 0.05, 0.1, 0.2], train_error_var: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dims: DimsConfig,
    pub channel: ChannelConfig,
    pub dataset: DatasetConfig,
    pub constraint: ConstraintConfig,
    /// Fraction of the dataset used for training.
    pub split: f64,
    pub methods: Vec<String>,
    pub method_params: MethodParamsConfig,
    pub training: TrainingConfig,
    pub snr_grid_db: Vec<f64>,
    pub eval_seed: u64,
    pub output_dir: String,
    pub convergence: ConvergenceConfig,
    pub robust: RobustConfig,
    /// Write measured wall times; when false the column holds 0 so outputs are
    /// byte-reproducible.
    pub record_wall_time: bool,
    /// Every `audit_stride`-th evaluation channel has all its iterates checked for
    /// feasibility.
    pub audit_stride: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dims: DimsConfig::default(),
            channel: ChannelConfig::default(),
            dataset: DatasetConfig::default(),
            constraint: ConstraintConfig::default(),
            split: 0.8,
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            method_params: MethodParamsConfig::default(),
            training: TrainingConfig::default(),
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            eval_seed: 2024,
            output_dir: "out".into(),
            convergence: ConvergenceConfig::default(),
            robust: RobustConfig::default(),
            record_wall_time: false,
            audit_stride: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(format!("malformed config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.split) {
            return Err(HarnessError::Config(format!("split must lie in [0, 1), got {}", self.split)));
        }
        if self.snr_grid_db.is_empty() {
            return Err(HarnessError::Config("snr_grid_db is empty".into()));
        }
        if self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return Err(HarnessError::Config("snr_grid_db has a non-finite entry".into()));
        }
        if !self.robust.error_var_grid.contains(&0.0) {
            return Err(HarnessError::Config("robust.error_var_grid must include 0".into()));
        }
        if self.robust.error_var_grid.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(HarnessError::Config("robust.error_var_grid entries must be finite and >= 0".into()));
        }
        if self.audit_stride == 0 {
            return Err(HarnessError::Config("audit_stride must be at least 1".into()));
        }
        for m in &self.methods {
            m.parse::<Method>()?;
        }
        self.init_strategy()?;
        self.grad_mode()?;
        self.constraint.build(self.dims.m, self.dims.k)?;
        self.dims.at_snr(self.snr_grid_db[0])?;
        self.channel_params().validate()?;
        if self.method_params.unfolded_depth == 0 || self.method_params.pga_iterations == 0 {
            return Err(HarnessError::Config("iteration budgets must be at least 1".into()));
        }
        if !self.training.loss_weights.is_empty() && self.training.loss_weights.len() != self.method_params.unfolded_depth {
            return Err(HarnessError::Config("training.loss_weights must have unfolded_depth entries".into()));
        }
        Ok(())
    }

    /// Methods to run, in a fixed order with `fully_digital` always present.
    pub fn method_list(&self) -> Result<Vec<Method>> {
        let mut ms: Vec<Method> = self.methods.iter().map(|m| m.parse()).collect::<hbf_core::Result<_>>()?;
        ms.push(Method::FullyDigital);
        ms.sort();
        ms.dedup();
        Ok(ms)
    }

    pub fn init_strategy(&self) -> Result<InitStrategy> {
        Ok(self.method_params.init_strategy.parse()?)
    }

    pub fn grad_mode(&self) -> Result<GradMode> {
        Ok(self.training.grad_mode.parse()?)
    }

    pub fn channel_params(&self) -> ChannelModelParams {
        let c = &self.channel;
        ChannelModelParams {
            m: self.dims.m,
            n: self.dims.n,
            f: self.dims.f,
            carrier_hz: c.carrier_hz,
            bandwidth_hz: c.bandwidth_hz,
            n_clusters: c.n_clusters,
            rays_per_cluster: c.rays_per_cluster,
            angle_spread_rad: c.angle_spread_rad,
            delay_spread_s: c.delay_spread_s,
        }
    }

    pub fn train_config(&self, epochs: usize, csi_error_var: f64) -> Result<TrainConfig> {
        let l = self.method_params.unfolded_depth;
        let t = &self.training;
        Ok(TrainConfig {
            epochs,
            batch_size: t.batch_size,
            learn_rate: t.learn_rate,
            loss_weights: if t.loss_weights.is_empty() { default_loss_weights(l) } else { t.loss_weights.clone() },
            grad_mode: self.grad_mode()?,
            fd_step: t.fd_step,
            seed: t.seed,
            csi_error_var,
            init: self.init_strategy()?,
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(&self.output_dir)
    }

    pub fn dataset_path(&self) -> PathBuf {
        let p = PathBuf::from(&self.dataset.path);
        if p.is_absolute() {
            p
        } else {
            self.output_dir().join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = ExperimentConfig::from_toml("split = 0.5\nsnr_grid_db = [10.0]\n[dims]\nM = 8\nK = 2\nN = 2\nF = 4\nnoise_var = 1.0\n").unwrap();
        assert_eq!(cfg.dims.m, 8);
        assert_eq!(cfg.dataset.count, 1000);
        assert_eq!(cfg.method_params.unfolded_depth, 10);
    }

    #[test]
    fn validation_errors() {
        let bad = |s: &str| ExperimentConfig::from_toml(s).is_err();
        assert!(bad("split = 1.0"));
        assert!(bad("snr_grid_db = []"));
        assert!(bad("methods = [\"cnn\"]"));
        assert!(bad("[robust]\nsnr_db = 10.0\nerror_var_grid = [0.1]\ntrain_error_var = 0.1"));
        assert!(bad("unknown_key = 1"));
    }

    #[test]
    fn snr_maps_to_power() {
        let d = DimsConfig::default().at_snr(10.0).unwrap();
        assert!((d.power - 10.0).abs() < 1e-12);
        assert_eq!(d.noise_var, 1.0);
    }
}
