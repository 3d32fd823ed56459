use std::fmt;
use std::str::FromStr;

use super::{gradient_altmin, init_precoders, mo_altmin, pe_altmin, pga_from, InitStrategy, RateTrace, StepSchedule};
use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::objective;
use crate::precoder::{ConstraintSet, HybridPrecoder, SystemDims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    FullyDigital,
    MoAltmin,
    PeAltmin,
    Pga,
    UnfoldedPga,
    UnfoldedAltmin,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::FullyDigital,
        Method::MoAltmin,
        Method::PeAltmin,
        Method::Pga,
        Method::UnfoldedPga,
        Method::UnfoldedAltmin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FullyDigital => "fully_digital",
            Method::MoAltmin => "mo_altmin",
            Method::PeAltmin => "pe_altmin",
            Method::Pga => "pga",
            Method::UnfoldedPga => "unfolded_pga",
            Method::UnfoldedAltmin => "unfolded_altmin",
        }
    }

    pub fn is_unfolded(self) -> bool {
        matches!(self, Method::UnfoldedPga | Method::UnfoldedAltmin)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// Per-method knobs for [`run_method`].
#[derive(Debug, Clone, PartialEq)]
pub struct MethodParams {
    pub init: InitStrategy,
    /// Initialization seed; methods sharing it share their starting point.
    pub seed: u64,
    /// Fixed-step schedule of classical PGA (its length is the iteration budget).
    pub pga_schedule: Option<StepSchedule>,
    pub altmin_rounds: usize,
    pub mo_inner_steps: usize,
    pub unfolded_pga: Option<StepSchedule>,
    /// Learned manifold steps live in `mu_a`; `mu_d` is unused.
    pub unfolded_altmin: Option<StepSchedule>,
    pub record_iterates: bool,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            init: InitStrategy::RandomPhase,
            seed: 0,
            pga_schedule: None,
            altmin_rounds: 50,
            mo_inner_steps: 5,
            unfolded_pga: None,
            unfolded_altmin: None,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    /// Effective per-subcarrier precoders `W_f`.
    pub w: Vec<CMat>,
    pub trace: RateTrace,
    /// Hybrid iterates (empty unless requested, and always for `fully_digital`).
    pub iterates: Vec<HybridPrecoder>,
}

/// Runs `method` on channel `h` (which may be an imperfect estimate) and returns the
/// effective precoders together with the rate trace measured on `h`.
pub fn run_method(
    method: Method,
    h: &ChannelRealization,
    dims: &SystemDims,
    constraint: &ConstraintSet,
    params: &MethodParams,
) -> Result<MethodOutput> {
    if method == Method::FullyDigital {
        let (w, report) = objective::fully_digital_reference(h, dims.power, dims.noise_var)?;
        return Ok(MethodOutput { w: w.w, trace: RateTrace { rates: vec![report.sum_rate] }, iterates: Vec::new() });
    }
    let init = init_precoders(h, dims, constraint, params.init, params.seed)?;
    let out = match method {
        Method::Pga | Method::UnfoldedPga => {
            let schedule = if method == Method::Pga { &params.pga_schedule } else { &params.unfolded_pga };
            let schedule = schedule.as_ref().ok_or_else(|| Error::MissingSchedule(method.name().into()))?;
            pga_from(h, dims, init, schedule, params.record_iterates)?
        }
        Method::PeAltmin | Method::MoAltmin | Method::UnfoldedAltmin => {
            let (w_opt, _) = objective::fully_digital_reference(h, dims.power, dims.noise_var)?;
            match method {
                Method::PeAltmin => {
                    pe_altmin(h, &w_opt, dims, &init, params.altmin_rounds, params.seed, params.record_iterates)?
                }
                Method::MoAltmin => mo_altmin(
                    h,
                    &w_opt,
                    dims,
                    &init,
                    params.altmin_rounds,
                    params.mo_inner_steps,
                    params.seed,
                    params.record_iterates,
                )?,
                _ => {
                    let schedule = params
                        .unfolded_altmin
                        .as_ref()
                        .ok_or_else(|| Error::MissingSchedule(method.name().into()))?;
                    gradient_altmin(h, &w_opt, dims, &init.analog, &schedule.mu_a, params.seed, params.record_iterates)?
                }
            }
        }
        Method::FullyDigital => unreachable!("handled above"),
    };
    Ok(MethodOutput { w: out.precoder.effective(), trace: out.trace, iterates: out.iterates })
}
