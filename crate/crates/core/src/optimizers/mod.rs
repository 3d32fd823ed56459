//! Classical hybrid beamforming optimizers.
//!
//! * [`pga`]: projected gradient ascent directly on the sum-rate, driven by an external
//!   step-size schedule.
//! * [`pe_altmin`] / [`mo_altmin`]: alternating minimization of the distance to the
//!   fully digital precoder, with a phase-extraction or a Riemannian analog update.
//! * [`gradient_altmin`]: a fixed-step variant of the manifold alternation whose
//!   per-round steps can be learned.
//!
//! [`run_method`] gives the benchmark harness a single entry point.

mod altmin;
mod dispatch;
mod pga;

pub use altmin::{gradient_altmin, mo_altmin, pe_altmin, residual, riemannian_gradient};
pub use dispatch::{run_method, Method, MethodOutput, MethodParams};
pub use pga::{pga, pga_from};

use num_complex::Complex64;
use rand::Rng;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::objective;
use crate::precoder::{
    project_analog, project_power, AnalogPrecoder, ConstraintSet, DigitalPrecoder, HybridPrecoder, SystemDims,
};
use crate::seed;

/// Maximum number of seeded re-draws of a rank-deficient analog precoder.
pub const MAX_RESTARTS: u64 = 3;

/// Per-iteration step sizes for the analog and digital updates.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    pub mu_a: Vec<f64>,
    pub mu_d: Vec<f64>,
}

impl StepSchedule {
    pub fn new(mu_a: Vec<f64>, mu_d: Vec<f64>) -> Result<Self> {
        let s = Self { mu_a, mu_d };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(len: usize, mu_a: f64, mu_d: f64) -> Self {
        Self { mu_a: vec![mu_a; len], mu_d: vec![mu_d; len] }
    }

    pub fn zeros(len: usize) -> Self {
        Self::constant(len, 0.0, 0.0)
    }

    pub fn len(&self) -> usize {
        self.mu_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_a.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu_a.is_empty() {
            return Err(Error::Config("step schedule must have at least one iteration".into()));
        }
        if self.mu_a.len() != self.mu_d.len() {
            return Err(Error::Config(format!(
                "analog and digital schedules differ in length ({} vs {})",
                self.mu_a.len(),
                self.mu_d.len()
            )));
        }
        if self.mu_a.iter().chain(&self.mu_d).any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config("step sizes must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Flattened `[mu_a..., mu_d...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.mu_a.iter().chain(&self.mu_d).copied().collect()
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let l = v.len() / 2;
        Self { mu_a: v[..l].to_vec(), mu_d: v[l..].to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStrategy {
    #[default]
    RandomPhase,
    MatchedFilter,
}

impl InitStrategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::RandomPhase => "random_phase",
            Self::MatchedFilter => "matched_filter",
        }
    }
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-phase" | "random_phase" => Ok(Self::RandomPhase),
            "matched-filter" | "matched_filter" => Ok(Self::MatchedFilter),
            other => Err(Error::Config(format!("unknown init strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub init: InitStrategy,
    /// When false only the final rate is kept in the trace.
    pub record_trace: bool,
    /// Keep a copy of every iterate (for feasibility audits).
    pub record_iterates: bool,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { iterations: 10, init: InitStrategy::RandomPhase, record_trace: true, record_iterates: false, seed: 0 }
    }
}

/// Sum-rate after initialization (index 0) and after each iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RateTrace {
    pub rates: Vec<f64>,
}

impl RateTrace {
    pub fn last(&self) -> f64 {
        *self.rates.last().expect("trace is never empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub precoder: HybridPrecoder,
    pub trace: RateTrace,
    /// Every iterate, starting with the initialization, when requested.
    pub iterates: Vec<HybridPrecoder>,
    /// Fit residual to the fully digital target per round (alternating methods only).
    pub residuals: Vec<f64>,
}

fn random_phases(m: usize, k: usize, seed: u64) -> CMat {
    let mut rng = seed::rng(seed);
    CMat::from_fn(m, k, |_, _| Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
}

/// Seeded random-phase analog precoder, projected onto the constraint set.
pub fn random_analog(constraint: &ConstraintSet, seed: u64) -> Result<AnalogPrecoder> {
    let (m, k) = constraint.shape();
    project_analog(&random_phases(m, k, seed), constraint)
}

/// `D_f = pinv(A) W_f` without power normalization.
pub fn digital_ls_raw(a: &AnalogPrecoder, w_target: &[CMat]) -> Result<DigitalPrecoder> {
    let pinv = linalg::pinv_full_column(&a.a)?;
    Ok(DigitalPrecoder { d: w_target.iter().map(|w| &pinv * w).collect() })
}

/// Least-squares digital precoder `D_f = pinv(A) W_f`, then power-projected.
pub fn digital_ls(a: &AnalogPrecoder, w_target: &[CMat], power: f64) -> Result<DigitalPrecoder> {
    project_power(a, &digital_ls_raw(a, w_target)?, power)
}

/// Fits `A` by least squares, re-drawing a seeded random-phase `A` when it is rank
/// deficient (at most [`MAX_RESTARTS`] times).
pub(crate) fn ls_with_restarts(
    a: AnalogPrecoder,
    w_target: &[CMat],
    seed: u64,
) -> Result<(AnalogPrecoder, DigitalPrecoder)> {
    let mut a = a;
    let mut attempt = 0;
    loop {
        match digital_ls_raw(&a, w_target) {
            Ok(d) => return Ok((a, d)),
            Err(Error::Degenerate(_)) if attempt < MAX_RESTARTS => {
                attempt += 1;
                a = random_analog(&a.constraint, seed::derive_tagged(seed, "restart", attempt))?;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Initial hybrid precoder: an analog matrix from `strategy`, then the least-squares
/// digital fit to the zero-forcing reference, power-normalized.
pub fn init_precoders(
    h: &ChannelRealization,
    dims: &SystemDims,
    constraint: &ConstraintSet,
    strategy: InitStrategy,
    seed: u64,
) -> Result<HybridPrecoder> {
    dims.validate()?;
    check_channel(h, dims)?;
    if constraint.shape() != (dims.m, dims.k) {
        return Err(Error::Shape(format!(
            "constraint is {:?}, dims say {:?}",
            constraint.shape(),
            (dims.m, dims.k)
        )));
    }
    let analog = match strategy {
        InitStrategy::RandomPhase => random_analog(constraint, seed::derive_tagged(seed, "init", 0))?,
        InitStrategy::MatchedFilter => {
            let mut gram = linalg::zeros(dims.m, dims.m);
            for hf in &h.h {
                gram += hf.adjoint() * hf;
            }
            gram /= Complex64::new(h.num_subcarriers() as f64, 0.0);
            project_analog(&linalg::top_eigenvectors(&gram, dims.k), constraint)?
        }
    };
    let (w_zf, _) = objective::fully_digital_reference(h, dims.power, dims.noise_var)?;
    let (analog, d) = ls_with_restarts(analog, &w_zf.w, seed)?;
    let digital = project_power(&analog, &d, dims.power)?;
    Ok(HybridPrecoder { analog, digital })
}

/// Per-channel seed keyed by the channel's content, so a channel gets the same
/// initialization wherever it appears.
pub fn channel_seed(seed: u64, h: &ChannelRealization) -> u64 {
    seed::derive(seed, h.content_hash())
}

pub(crate) fn check_channel(h: &ChannelRealization, dims: &SystemDims) -> Result<()> {
    let got = (h.num_users(), h.num_antennas(), h.num_subcarriers());
    if got != (dims.n, dims.m, dims.f) {
        return Err(Error::Shape(format!(
            "channel is (N, M, F) = {got:?}, dims say {:?}",
            (dims.n, dims.m, dims.f)
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel, ChannelModelParams};
    use crate::precoder::{ConstraintKind, ConstraintSet};

    fn setup(k: usize) -> (ChannelRealization, SystemDims, ConstraintSet) {
        let p = ChannelModelParams { m: 8, n: 2, f: 4, ..Default::default() };
        let h = generate_channel(&p, 3).unwrap();
        let dims = SystemDims::new(8, k, 2, 4, 10.0, 1.0).unwrap();
        let cs = ConstraintSet::fully(ConstraintKind::UnitModulus, 8, k).unwrap();
        (h, dims, cs)
    }

    #[test]
    fn schedule_validation() {
        assert!(StepSchedule::new(vec![], vec![]).is_err());
        assert!(StepSchedule::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(StepSchedule::new(vec![-1.0], vec![1.0]).is_err());
        assert!(StepSchedule::new(vec![f64::NAN], vec![1.0]).is_err());
        let s = StepSchedule::new(vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(StepSchedule::from_slice(&s.to_vec()), s);
    }

    #[test]
    fn init_is_deterministic_and_feasible() {
        let (h, dims, cs) = setup(3);
        for strategy in [InitStrategy::RandomPhase, InitStrategy::MatchedFilter] {
            let a = init_precoders(&h, &dims, &cs, strategy, 5).unwrap();
            let b = init_precoders(&h, &dims, &cs, strategy, 5).unwrap();
            assert_eq!(a, b);
            assert!(a.analog.violation() < 1e-12);
            assert!(a.power_violation(dims.power) < 1e-9);
        }
        let a = init_precoders(&h, &dims, &cs, InitStrategy::RandomPhase, 5).unwrap();
        let c = init_precoders(&h, &dims, &cs, InitStrategy::RandomPhase, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_mismatched_shapes() {
        let (h, dims, _) = setup(3);
        let wrong = ConstraintSet::fully(ConstraintKind::UnitModulus, 8, 2).unwrap();
        assert!(init_precoders(&h, &dims, &wrong, InitStrategy::RandomPhase, 0).is_err());
    }

    #[test]
    fn digital_ls_orthonormal_analog_uses_adjoint() {
        let s = 0.5f64.sqrt();
        let a = CMat::from_row_slice(2, 1, &[Complex64::new(s, 0.0), Complex64::new(0.0, s)]);
        let cs = ConstraintSet::fully(ConstraintKind::LorentzianDma, 2, 1).unwrap();
        let analog = AnalogPrecoder { a: a.clone(), constraint: cs };
        let w = vec![CMat::from_row_slice(2, 1, &[Complex64::new(1.0, 2.0), Complex64::new(-1.0, 0.5)])];
        let d = digital_ls_raw(&analog, &w).unwrap();
        assert!(linalg::frob(&(&d.d[0] - a.adjoint() * &w[0])) < 1e-12);
    }

    #[test]
    fn digital_ls_exact_fit_in_range() {
        let (_, _, cs) = setup(3);
        let a = random_analog(&cs, 1).unwrap();
        let d_true = CMat::from_fn(3, 2, |i, j| Complex64::new(i as f64 - 1.0, j as f64 + 0.5));
        let w = vec![&a.a * &d_true];
        let d = digital_ls_raw(&a, &w).unwrap();
        assert!(linalg::frob(&(&a.a * &d.d[0] - &w[0])) <= 1e-10);
    }

    #[test]
    fn digital_ls_rank_deficient() {
        let cs = ConstraintSet::fully(ConstraintKind::UnitModulus, 3, 2).unwrap();
        let a = AnalogPrecoder { a: CMat::from_element(3, 2, Complex64::new(1.0, 0.0)), constraint: cs };
        assert!(matches!(digital_ls(&a, &[CMat::zeros(3, 1)], 1.0), Err(Error::Degenerate(_))));
    }
}
