//! Deep unfolding of PGA and gradient AltMin: the iteration count is fixed and the
//! per-iteration step sizes are trained on channel data with the negative weighted
//! sum-rate of the iterates as an unsupervised loss.
//!
//! Step sizes are trained in normalized units: every schedule entry is `θ · s`, where
//! `s` is a per-block natural scale (`||A|| / ||G_A||` for the analog block,
//! `||D|| / ||G_D||` for the digital block, `||A|| / ||R||` for manifold steps)
//! averaged over the first batch at initialization.

pub mod backprop;
mod io;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::channel::{corrupt_csi, ChannelDataset, ChannelRealization};
use crate::error::{Error, Result};
use crate::linalg;
use crate::objective::{self, FullyDigitalPrecoder};
use crate::optimizers::{
    channel_seed, digital_ls_raw, gradient_altmin, init_precoders, pga_from, riemannian_gradient, InitStrategy,
    StepSchedule,
};
use crate::precoder::{ConstraintKind, ConstraintSet, HybridPrecoder, SystemDims};
use crate::seed;

pub use io::{load_schedule, save_schedule, SCHEDULE_FORMAT_VERSION};

/// Loss charged per channel whose unrolled run produced a non-finite rate.
pub const DIVERGENCE_PENALTY: f64 = 1e6;

/// Normalized step sizes tried when picking the common starting step.
pub fn step_grid() -> Vec<f64> {
    (0..10).map(|j| 10f64.powf(-2.0 + 3.5 * j as f64 / 9.0)).collect()
}

/// `ω_l = l / L`.
pub fn default_loss_weights(l: usize) -> Vec<f64> {
    (1..=l).map(|i| i as f64 / l as f64).collect()
}

/// Final-iterate-only weights `(0, ..., 0, 1)`.
pub fn final_only_weights(l: usize) -> Vec<f64> {
    let mut w = vec![0.0; l];
    if let Some(last) = w.last_mut() {
        *last = 1.0;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradMode {
    #[default]
    FiniteDifference,
    AnalyticUnrolled,
}

impl GradMode {
    pub fn name(self) -> &'static str {
        match self {
            GradMode::FiniteDifference => "finite_difference",
            GradMode::AnalyticUnrolled => "analytic_unrolled",
        }
    }
}

impl fmt::Display for GradMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite_difference" => Ok(GradMode::FiniteDifference),
            "analytic_unrolled" => Ok(GradMode::AnalyticUnrolled),
            other => Err(Error::Config(format!("unknown gradient mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learn_rate: f64,
    /// One weight per unrolled iteration; its length is the unfolding depth `L`.
    pub loss_weights: Vec<f64>,
    pub grad_mode: GradMode,
    /// Relative finite-difference step, in normalized step units.
    pub fd_step: f64,
    pub seed: u64,
    /// CSI error variance seen during training (0 = nominal training).
    pub csi_error_var: f64,
    pub init: InitStrategy,
}

impl TrainConfig {
    /// Defaults for depth `l`: 50 epochs, batches of 100, learning rate 1e-2,
    /// weights `l/L`, finite differences.
    pub fn new(l: usize) -> Self {
        Self {
            epochs: 50,
            batch_size: 100,
            learn_rate: 1e-2,
            loss_weights: default_loss_weights(l),
            grad_mode: GradMode::FiniteDifference,
            fd_step: 1e-4,
            seed: 0,
            csi_error_var: 0.0,
            init: InitStrategy::RandomPhase,
        }
    }

    pub fn depth(&self) -> usize {
        self.loss_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.loss_weights;
        if w.is_empty() {
            return Err(Error::Config("loss weights must cover at least one iteration".into()));
        }
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if w.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::Config("loss weights must be non-decreasing".into()));
        }
        if !(w[w.len() - 1] > 0.0) {
            return Err(Error::Config("last loss weight must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learn_rate >= 0.0 && self.learn_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.learn_rate)));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::Config(format!("fd_step must be positive, got {}", self.fd_step)));
        }
        if !(self.csi_error_var >= 0.0 && self.csi_error_var.is_finite()) {
            return Err(Error::Config(format!("csi_error_var must be >= 0, got {}", self.csi_error_var)));
        }
        Ok(())
    }

    fn canonical(&self) -> String {
        format!(
            "epochs={};batch={};lr={:e};weights={:?};mode={};fd={:e};seed={};csi={:e};init={}",
            self.epochs,
            self.batch_size,
            self.learn_rate,
            self.loss_weights,
            self.grad_mode,
            self.fd_step,
            self.seed,
            self.csi_error_var,
            self.init.name(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    /// `mu_a`/`mu_d` of unrolled PGA.
    Pga,
    /// Manifold steps of gradient AltMin in `mu_a`; `mu_d` is all zeros.
    Altmin,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Pga => "pga",
            ScheduleKind::Altmin => "altmin",
        }
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pga" => Ok(ScheduleKind::Pga),
            "altmin" => Ok(ScheduleKind::Altmin),
            other => Err(Error::Format(format!("unknown schedule kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSchedule {
    pub kind: ScheduleKind,
    pub schedule: StepSchedule,
    /// Mean training loss of every epoch.
    pub train_history: Vec<f64>,
    /// SHA-256 of the training configuration, dims, constraint and dataset identity.
    pub config_fingerprint: String,
    pub dims: SystemDims,
    /// Constraint label the schedule was trained for.
    pub constraint: String,
}

impl TrainedSchedule {
    /// Errors unless the schedule was trained for exactly these dims and constraint.
    pub fn check_compatible(&self, dims: &SystemDims, constraint: &ConstraintSet) -> Result<()> {
        let a = &self.dims;
        let same_shape = (a.m, a.k, a.n, a.f) == (dims.m, dims.k, dims.n, dims.f);
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs());
        if !same_shape || !close(a.power, dims.power) || !close(a.noise_var, dims.noise_var) {
            return Err(Error::Config(format!(
                "schedule trained for (M, K, N, F, P, σ²) = ({}, {}, {}, {}, {}, {}), run uses ({}, {}, {}, {}, {}, {})",
                a.m, a.k, a.n, a.f, a.power, a.noise_var, dims.m, dims.k, dims.n, dims.f, dims.power, dims.noise_var
            )));
        }
        let label = constraint.kind.label();
        if self.constraint != label {
            return Err(Error::Config(format!(
                "schedule trained for constraint {}, run uses {label}",
                self.constraint
            )));
        }
        Ok(())
    }
}

/// Value of a batch loss; `diverged` counts channels charged the divergence penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss {
    pub value: f64,
    pub diverged: usize,
}

/// A training channel: the true channel, the estimate the optimizer sees (when it
/// differs), and the optimizer's starting point computed from the estimate.
struct Sample {
    truth: ChannelRealization,
    est: Option<ChannelRealization>,
    init: HybridPrecoder,
    w_opt: Option<FullyDigitalPrecoder>,
}

impl Sample {
    fn est(&self) -> &ChannelRealization {
        self.est.as_ref().unwrap_or(&self.truth)
    }
}

struct Problem<'a> {
    kind: ScheduleKind,
    dims: &'a SystemDims,
    constraint: &'a ConstraintSet,
    config: &'a TrainConfig,
}

impl Problem<'_> {
    fn depth(&self) -> usize {
        self.config.depth()
    }

    /// Builds a sample; `corruption_seed` selects the CSI error draw when training is
    /// robust.
    fn sample(&self, truth: &ChannelRealization, corruption_seed: u64) -> Result<Sample> {
        let est = if self.config.csi_error_var > 0.0 {
            Some(corrupt_csi(truth, self.config.csi_error_var, corruption_seed)?)
        } else {
            None
        };
        let seen = est.as_ref().unwrap_or(truth);
        let init = init_precoders(seen, self.dims, self.constraint, self.config.init, channel_seed(self.config.seed, truth))?;
        let w_opt = match self.kind {
            ScheduleKind::Altmin => Some(objective::fully_digital_reference(seen, self.dims.power, self.dims.noise_var)?.0),
            ScheduleKind::Pga => None,
        };
        Ok(Sample { truth: truth.clone(), est, init, w_opt })
    }

    fn samples(&self, channels: &[&ChannelRealization], epoch: u64, indices: &[usize]) -> Result<Vec<Sample>> {
        let root = seed::derive_tagged(self.config.seed, "csi", epoch);
        channels
            .par_iter()
            .zip(indices)
            .map(|(h, &i)| self.sample(h, seed::derive(root, i as u64)))
            .collect()
    }

    fn schedule_from(&self, mu: &[f64]) -> StepSchedule {
        let l = self.depth();
        match self.kind {
            ScheduleKind::Pga => StepSchedule { mu_a: mu[..l].to_vec(), mu_d: mu[l..].to_vec() },
            ScheduleKind::Altmin => StepSchedule { mu_a: mu.to_vec(), mu_d: vec![0.0; l] },
        }
    }

    /// Weighted rate sum `Σ_l ω_l R_l` of one channel, or `None` on divergence.
    fn channel_reward(&self, s: &Sample, mu: &[f64]) -> Option<f64> {
        let weights = &self.config.loss_weights;
        let robust = s.est.is_some();
        let out = match self.kind {
            ScheduleKind::Pga => pga_from(s.est(), self.dims, s.init.clone(), &self.schedule_from(mu), robust),
            ScheduleKind::Altmin => gradient_altmin(
                s.est(),
                s.w_opt.as_ref().expect("altmin samples carry a target"),
                self.dims,
                &s.init.analog,
                mu,
                self.config.seed,
                robust,
            ),
        }
        .ok()?;
        let rates: Vec<f64> = if robust {
            out.iterates
                .iter()
                .map(|it| objective::hybrid_rate(&s.truth, &it.analog, &it.digital, self.dims.noise_var))
                .collect::<Result<_>>()
                .ok()?
        } else {
            out.trace.rates
        };
        let reward: f64 = weights.iter().zip(&rates[1..]).map(|(w, r)| w * r).sum();
        reward.is_finite().then_some(reward)
    }

    fn loss(&self, samples: &[&Sample], mu: &[f64]) -> Loss {
        let per: Vec<Option<f64>> = samples.par_iter().map(|s| self.channel_reward(s, mu)).collect();
        let mut total = 0.0;
        let mut diverged = 0;
        for r in per {
            match r {
                Some(r) => total -= r,
                None => {
                    total += DIVERGENCE_PENALTY;
                    diverged += 1;
                }
            }
        }
        Loss { value: total / samples.len() as f64, diverged }
    }

    /// Finite-difference gradient with entry steps `fd_step · max(|mu_i|, scale_i)`:
    /// central where the backward point stays feasible, forward otherwise.
    fn fd_gradient(&self, samples: &[&Sample], mu: &[f64], scales: &[f64]) -> Vec<f64> {
        let base = self.loss(samples, mu);
        (0..mu.len())
            .map(|i| {
                let h = self.config.fd_step * mu[i].abs().max(scales[i]);
                let mut plus = mu.to_vec();
                plus[i] += h;
                let lp = self.loss(samples, &plus);
                if mu[i] - h >= 0.0 {
                    let mut minus = mu.to_vec();
                    minus[i] -= h;
                    let lm = self.loss(samples, &minus);
                    if lp.diverged == base.diverged && lm.diverged == base.diverged {
                        return (lp.value - lm.value) / (2.0 * h);
                    }
                    if lm.diverged == base.diverged {
                        return (base.value - lm.value) / h;
                    }
                }
                if lp.diverged == base.diverged {
                    (lp.value - base.value) / h
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Analytic gradient of the mean loss; diverging channels are penalized and left
    /// out of the gradient.
    fn analytic_gradient(&self, samples: &[&Sample], mu: &[f64]) -> Result<(Loss, Vec<f64>)> {
        if self.kind != ScheduleKind::Pga {
            return Err(Error::Config("analytic unrolled gradients exist for PGA schedules only".into()));
        }
        let schedule = self.schedule_from(mu);
        let per: Vec<Result<(f64, Vec<f64>, Vec<f64>)>> = samples
            .par_iter()
            .map(|s| {
                backprop::pga_loss_gradient(s.est(), &s.truth, &s.init, &schedule, self.dims, &self.config.loss_weights)
            })
            .collect();
        let l = self.depth();
        let mut grad = vec![0.0; 2 * l];
        let mut total = 0.0;
        let mut diverged = 0;
        for r in per {
            match r {
                Ok((loss, ga, gd)) => {
                    total += loss;
                    for (g, x) in grad.iter_mut().zip(ga.iter().chain(&gd)) {
                        *g += x;
                    }
                }
                Err(Error::NonFinite(_) | Error::Degenerate(_)) => {
                    total += DIVERGENCE_PENALTY;
                    diverged += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let n = samples.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((Loss { value: total / n, diverged }, grad))
    }

    fn loss_and_gradient(&self, samples: &[&Sample], mu: &[f64], scales: &[f64]) -> Result<(Loss, Vec<f64>)> {
        match self.config.grad_mode {
            GradMode::AnalyticUnrolled if self.kind == ScheduleKind::Pga => self.analytic_gradient(samples, mu),
            _ => Ok((self.loss(samples, mu), self.fd_gradient(samples, mu, scales))),
        }
    }

    /// Per-entry natural scales, averaged over `samples` at their starting points.
    fn natural_scales(&self, samples: &[&Sample]) -> Result<Vec<f64>> {
        let l = self.depth();
        let mut sa = 0.0;
        let mut sd = 0.0;
        for s in samples {
            let a = &s.init.analog;
            match self.kind {
                ScheduleKind::Pga => {
                    let g = objective::rate_gradient(s.est(), a, &s.init.digital, self.dims.noise_var)?;
                    let nd: f64 = s.init.digital.d.iter().map(linalg::frob_sq).sum::<f64>().sqrt();
                    let ngd: f64 = g.gd.iter().map(linalg::frob_sq).sum::<f64>().sqrt();
                    sa += linalg::frob(&a.a) / linalg::frob(&g.ga).max(f64::MIN_POSITIVE);
                    sd += nd / ngd.max(f64::MIN_POSITIVE);
                }
                ScheduleKind::Altmin => {
                    let w = &s.w_opt.as_ref().expect("altmin samples carry a target").w;
                    let d = digital_ls_raw(a, w)?;
                    let mut e = linalg::zeros(a.m(), a.k());
                    for (wf, df) in w.iter().zip(&d.d) {
                        e -= (wf - &a.a * df) * df.adjoint() * num_complex::Complex64::new(2.0, 0.0);
                    }
                    let r = riemannian_gradient(&a.a, &e);
                    sa += linalg::frob(&a.a) / linalg::frob(&r).max(f64::MIN_POSITIVE);
                }
            }
        }
        let n = samples.len() as f64;
        let (sa, sd) = (sa / n, sd / n);
        if !(sa.is_finite() && sd.is_finite()) {
            return Err(Error::Training("could not determine step-size scale".into()));
        }
        Ok(match self.kind {
            ScheduleKind::Pga => [vec![sa; l], vec![sd; l]].concat(),
            ScheduleKind::Altmin => vec![sa; l],
        })
    }

    /// Best constant normalized step on `samples` over [`step_grid`]; ties keep the
    /// smaller step.
    fn best_constant(&self, samples: &[&Sample], scales: &[f64]) -> Result<(f64, Loss)> {
        let mut best: Option<(f64, Loss)> = None;
        for t in step_grid() {
            let mu: Vec<f64> = scales.iter().map(|s| t * s).collect();
            let loss = self.loss(samples, &mu);
            if best.is_none_or(|(_, b)| loss.value < b.value) {
                best = Some((t, loss));
            }
        }
        let (t, loss) = best.expect("grid is non-empty");
        if loss.diverged == samples.len() {
            return Err(Error::Training("every grid step diverged on the first batch".into()));
        }
        Ok((t, loss))
    }

    fn fingerprint(&self, dataset_id: &str) -> String {
        let d = self.dims;
        let text = format!(
            "kind={};dims=({},{},{},{},{:e},{:e});constraint={};{};dataset={}",
            self.kind.name(),
            d.m,
            d.k,
            d.n,
            d.f,
            d.power,
            d.noise_var,
            self.constraint.kind.label(),
            self.config.canonical(),
            dataset_id
        );
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn train(&self, train_set: &ChannelDataset) -> Result<TrainedSchedule> {
        self.config.validate()?;
        self.dims.validate()?;
        if train_set.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        if self.kind == ScheduleKind::Altmin
            && (self.constraint.kind != ConstraintKind::UnitModulus || !self.constraint.is_fully_connected())
        {
            return Err(Error::Config("unfolded AltMin needs a fully connected unit-modulus network".into()));
        }
        let n = train_set.len();
        let channels: Vec<&ChannelRealization> = train_set.realizations.iter().collect();
        let all: Vec<usize> = (0..n).collect();
        let robust = self.config.csi_error_var > 0.0;
        let mut pool = self.samples(&channels, 0, &all)?;

        let b = self.config.batch_size.min(n);
        let probe_pool = self.samples(&channels[..b], 0, &all[..b])?;
        let first: Vec<&Sample> = probe_pool.iter().collect();
        let scales = self.natural_scales(&first)?;
        let (t0, probe0) = self.best_constant(&first, &scales)?;
        let mut theta = vec![t0; scales.len()];
        // The first batch doubles as a probe: the returned steps are the best probed
        // iterate, so a noisy epoch cannot leave the schedule worse than its start.
        let mut best = (probe0.value, theta.clone());

        let mut history = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            if robust && epoch > 0 {
                pool = self.samples(&channels, epoch as u64, &all)?;
            }
            let mut order = all.clone();
            order.shuffle(&mut seed::rng(seed::derive_tagged(self.config.seed, "shuffle", epoch as u64)));
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &pool[i]).collect();
                let mu: Vec<f64> = theta.iter().zip(&scales).map(|(t, s)| t * s).collect();
                let (loss, grad) = self.loss_and_gradient(&batch, &mu, &scales)?;
                if !loss.value.is_finite() {
                    return Err(Error::Training(format!("non-finite loss in epoch {epoch}")));
                }
                if loss.diverged == batch.len() {
                    return Err(Error::Training(format!(
                        "schedule diverged on every channel of a batch in epoch {epoch}"
                    )));
                }
                epoch_loss += loss.value * batch.len() as f64;
                for ((t, g), s) in theta.iter_mut().zip(&grad).zip(&scales) {
                    *t = (*t - self.config.learn_rate * g * s).max(0.0);
                }
            }
            history.push(epoch_loss / n as f64);
            let mu: Vec<f64> = theta.iter().zip(&scales).map(|(t, s)| t * s).collect();
            let probe = self.loss(&first, &mu).value;
            if probe < best.0 {
                best = (probe, theta.clone());
            }
        }
        let mu: Vec<f64> = best.1.iter().zip(&scales).map(|(t, s)| t * s).collect();
        Ok(TrainedSchedule {
            kind: self.kind,
            schedule: self.schedule_from(&mu),
            train_history: history,
            config_fingerprint: self.fingerprint(&train_set.fingerprint()),
            dims: *self.dims,
            constraint: self.constraint.kind.label(),
        })
    }
}

fn check_depth(config: &TrainConfig, l: usize) -> Result<()> {
    if l == 0 || config.depth() != l {
        return Err(Error::Config(format!("depth {l} does not match {} loss weights", config.depth())));
    }
    Ok(())
}

fn check_schedule(schedule: &StepSchedule, config: &TrainConfig) -> Result<()> {
    schedule.validate()?;
    if schedule.len() != config.depth() {
        return Err(Error::Config(format!(
            "schedule has {} steps, loss weights cover {}",
            schedule.len(),
            config.depth()
        )));
    }
    Ok(())
}

/// Mean over the batch of `-Σ_l ω_l R_l`, the rates of unrolled PGA from each channel's
/// seeded start. With `csi_error_var > 0` PGA runs on one seeded corruption of each
/// channel while rates are measured on the channel itself.
pub fn unfold_loss(
    batch: &[ChannelRealization],
    schedule: &StepSchedule,
    dims: &SystemDims,
    constraint: &ConstraintSet,
    config: &TrainConfig,
) -> Result<Loss> {
    config.validate()?;
    check_schedule(schedule, config)?;
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let p = Problem { kind: ScheduleKind::Pga, dims, constraint, config };
    let refs: Vec<&ChannelRealization> = batch.iter().collect();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let samples = p.samples(&refs, 0, &idx)?;
    Ok(p.loss(&samples.iter().collect::<Vec<_>>(), &schedule.to_vec()))
}

/// Same loss for unrolled gradient AltMin with manifold steps `etas`.
pub fn unfold_altmin_loss(
    batch: &[ChannelRealization],
    etas: &[f64],
    dims: &SystemDims,
    constraint: &ConstraintSet,
    config: &TrainConfig,
) -> Result<Loss> {
    config.validate()?;
    check_schedule(&StepSchedule::new(etas.to_vec(), vec![0.0; etas.len()])?, config)?;
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let p = Problem { kind: ScheduleKind::Altmin, dims, constraint, config };
    let refs: Vec<&ChannelRealization> = batch.iter().collect();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let samples = p.samples(&refs, 0, &idx)?;
    Ok(p.loss(&samples.iter().collect::<Vec<_>>(), etas))
}

/// Gradient of [`unfold_loss`] with respect to `(mu_a, mu_d)` (concatenated) in the
/// configured mode. Finite-difference steps are relative to the entry's magnitude.
pub fn schedule_gradient(
    batch: &[ChannelRealization],
    schedule: &StepSchedule,
    dims: &SystemDims,
    constraint: &ConstraintSet,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    check_schedule(schedule, config)?;
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let p = Problem { kind: ScheduleKind::Pga, dims, constraint, config };
    let refs: Vec<&ChannelRealization> = batch.iter().collect();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let samples = p.samples(&refs, 0, &idx)?;
    let samples: Vec<&Sample> = samples.iter().collect();
    let mu = schedule.to_vec();
    let scales: Vec<f64> = mu.iter().map(|m| m.abs().max(f64::MIN_POSITIVE)).collect();
    Ok(p.loss_and_gradient(&samples, &mu, &scales)?.1)
}

/// Trains an unrolled PGA schedule of depth `l` on `train_set`.
pub fn train_pga_schedule(
    train_set: &ChannelDataset,
    dims: &SystemDims,
    constraint: &ConstraintSet,
    l: usize,
    config: &TrainConfig,
) -> Result<TrainedSchedule> {
    check_depth(config, l)?;
    Problem { kind: ScheduleKind::Pga, dims, constraint, config }.train(train_set)
}

/// Trains the manifold steps of unrolled gradient AltMin of depth `l`.
pub fn train_altmin_schedule(
    train_set: &ChannelDataset,
    dims: &SystemDims,
    constraint: &ConstraintSet,
    l: usize,
    config: &TrainConfig,
) -> Result<TrainedSchedule> {
    check_depth(config, l)?;
    Problem { kind: ScheduleKind::Altmin, dims, constraint, config }.train(train_set)
}

/// PGA training under CSI noise: every epoch draws a fresh seeded corruption of each
/// channel for the optimizer while the loss uses the true channel. With
/// `csi_error_var = 0` this is [`train_pga_schedule`].
pub fn train_robust_schedule(
    train_set: &ChannelDataset,
    dims: &SystemDims,
    constraint: &ConstraintSet,
    l: usize,
    config: &TrainConfig,
) -> Result<TrainedSchedule> {
    train_pga_schedule(train_set, dims, constraint, l, config)
}

/// Best constant PGA schedule of depth `l` over [`step_grid`] (scaled by the natural
/// step scales of `channels`), judged by the mean final rate. Returns the schedule and
/// that rate.
pub fn tune_fixed_pga_step(
    channels: &[ChannelRealization],
    dims: &SystemDims,
    constraint: &ConstraintSet,
    l: usize,
    init: InitStrategy,
    seed: u64,
) -> Result<(StepSchedule, f64)> {
    if channels.is_empty() {
        return Err(Error::Config("no channels to tune on".into()));
    }
    let config = TrainConfig { loss_weights: final_only_weights(l), seed, init, ..TrainConfig::new(l) };
    check_depth(&config, l)?;
    let p = Problem { kind: ScheduleKind::Pga, dims, constraint, config: &config };
    let refs: Vec<&ChannelRealization> = channels.iter().collect();
    let idx: Vec<usize> = (0..channels.len()).collect();
    let samples = p.samples(&refs, 0, &idx)?;
    let samples: Vec<&Sample> = samples.iter().collect();
    let scales = p.natural_scales(&samples)?;
    let (t, loss) = p.best_constant(&samples, &scales)?;
    let mu: Vec<f64> = scales.iter().map(|s| t * s).collect();
    Ok((p.schedule_from(&mu), -loss.value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_dataset, ChannelModelParams};

    fn setup(count: usize) -> (ChannelDataset, SystemDims, ConstraintSet) {
        let p = ChannelModelParams { m: 8, n: 2, f: 4, ..Default::default() };
        let ds = generate_dataset(&p, count, 5).unwrap();
        let dims = SystemDims::new(8, 3, 2, 4, 10.0, 1.0).unwrap();
        let cs = ConstraintSet::fully(ConstraintKind::UnitModulus, 8, 3).unwrap();
        (ds, dims, cs)
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(3);
        assert!(c.validate().is_ok());
        c.loss_weights = vec![1.0, 0.5, 1.0];
        assert!(c.validate().is_err());
        c.loss_weights = vec![0.0, 0.0, 0.0];
        assert!(c.validate().is_err());
        let c = TrainConfig { batch_size: 0, ..TrainConfig::new(3) };
        assert!(c.validate().is_err());
    }

    #[test]
    fn final_weight_loss_is_negative_final_rate() {
        let (ds, dims, cs) = setup(3);
        let cfg = TrainConfig { loss_weights: final_only_weights(3), ..TrainConfig::new(3) };
        let sch = StepSchedule::constant(3, 0.5, 0.5);
        let loss = unfold_loss(&ds.realizations, &sch, &dims, &cs, &cfg).unwrap();
        let mut mean = 0.0;
        for h in &ds.realizations {
            let init = init_precoders(h, &dims, &cs, cfg.init, channel_seed(cfg.seed, h)).unwrap();
            mean += pga_from(h, &dims, init, &sch, false).unwrap().trace.last();
        }
        assert!((loss.value + mean / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_schedule_and_linearity() {
        let (ds, dims, cs) = setup(3);
        let cfg = TrainConfig::new(4);
        let zero = unfold_loss(&ds.realizations, &StepSchedule::zeros(4), &dims, &cs, &cfg).unwrap();
        let mut init_mean = 0.0;
        for h in &ds.realizations {
            let init = init_precoders(h, &dims, &cs, cfg.init, channel_seed(cfg.seed, h)).unwrap();
            init_mean += objective::hybrid_rate(h, &init.analog, &init.digital, 1.0).unwrap() / 3.0;
        }
        let wsum: f64 = cfg.loss_weights.iter().sum();
        assert!((zero.value + wsum * init_mean).abs() < 1e-10);

        let sch = StepSchedule::constant(4, 0.3, 0.2);
        let base = unfold_loss(&ds.realizations, &sch, &dims, &cs, &cfg).unwrap();
        let doubled = TrainConfig { loss_weights: cfg.loss_weights.iter().map(|w| 2.0 * w).collect(), ..cfg.clone() };
        let twice = unfold_loss(&ds.realizations, &sch, &dims, &cs, &doubled).unwrap();
        assert!((twice.value - 2.0 * base.value).abs() < 1e-10 * base.value.abs());
    }

    #[test]
    fn divergent_schedule_is_penalized_not_fatal() {
        let (ds, dims, cs) = setup(2);
        let cfg = TrainConfig::new(2);
        let loss = unfold_loss(&ds.realizations, &StepSchedule::constant(2, 1e300, 1e300), &dims, &cs, &cfg).unwrap();
        assert!(loss.value.is_finite());
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let (ds, dims, cs) = setup(4);
        let sch = StepSchedule::new(vec![0.8, 0.5, 1.1], vec![0.4, 0.9, 0.3]).unwrap();
        let fd_cfg = TrainConfig { fd_step: 1e-5, ..TrainConfig::new(3) };
        let an_cfg = TrainConfig { grad_mode: GradMode::AnalyticUnrolled, ..fd_cfg.clone() };
        let fd = schedule_gradient(&ds.realizations, &sch, &dims, &cs, &fd_cfg).unwrap();
        let an = schedule_gradient(&ds.realizations, &sch, &dims, &cs, &an_cfg).unwrap();
        let norm = an.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, f) in an.iter().zip(&fd) {
            assert!((a - f).abs() <= 1e-4 * norm, "analytic {a} vs fd {f}");
        }
    }

    #[test]
    fn zero_learning_rate_returns_the_grid_start() {
        let (ds, dims, cs) = setup(4);
        let cfg = TrainConfig { epochs: 2, batch_size: 2, learn_rate: 0.0, ..TrainConfig::new(2) };
        let t = train_pga_schedule(&ds, &dims, &cs, 2, &cfg).unwrap();
        assert_eq!(t.train_history.len(), 2);
        assert!(t.schedule.mu_a.iter().all(|&m| m == t.schedule.mu_a[0]));
        assert!(t.schedule.mu_d.iter().all(|&m| m == t.schedule.mu_d[0]));
        let again = train_pga_schedule(&ds, &dims, &cs, 2, &cfg).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn robust_with_zero_variance_is_nominal() {
        let (ds, dims, cs) = setup(4);
        let cfg = TrainConfig { epochs: 2, batch_size: 2, grad_mode: GradMode::AnalyticUnrolled, ..TrainConfig::new(2) };
        let a = train_pga_schedule(&ds, &dims, &cs, 2, &cfg).unwrap();
        let b = train_robust_schedule(&ds, &dims, &cs, 2, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn depth_and_emptiness_checked() {
        let (ds, dims, cs) = setup(2);
        let cfg = TrainConfig::new(3);
        assert!(train_pga_schedule(&ds, &dims, &cs, 2, &cfg).is_err());
        let empty = ChannelDataset { realizations: Vec::new(), ..ds };
        assert!(train_pga_schedule(&empty, &dims, &cs, 3, &cfg).is_err());
    }

    #[test]
    fn compatibility_check() {
        let (ds, dims, cs) = setup(2);
        let cfg = TrainConfig { epochs: 1, batch_size: 2, learn_rate: 0.0, ..TrainConfig::new(2) };
        let t = train_pga_schedule(&ds, &dims, &cs, 2, &cfg).unwrap();
        assert!(t.check_compatible(&dims, &cs).is_ok());
        let k2 = dims.with_rf_chains(2);
        let cs2 = ConstraintSet::fully(ConstraintKind::UnitModulus, 8, 2).unwrap();
        assert!(t.check_compatible(&k2, &cs2).is_err());
        let q = ConstraintSet::fully(ConstraintKind::QuantizedPhase { bits: 2 }, 8, 3).unwrap();
        assert!(t.check_compatible(&dims, &q).is_err());
    }
}
