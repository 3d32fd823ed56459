use num_complex::Complex64;

use super::{check_channel, init_precoders, OptimizerConfig, RateTrace, RunOutput, StepSchedule};
use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::objective;
use crate::precoder::{project_analog, project_power, DigitalPrecoder, HybridPrecoder, SystemDims};

/// Projected gradient ascent on the sum-rate from a random or matched-filter start.
pub fn pga(
    h: &ChannelRealization,
    dims: &SystemDims,
    constraint: &crate::precoder::ConstraintSet,
    schedule: &StepSchedule,
    config: &OptimizerConfig,
) -> Result<RunOutput> {
    if schedule.len() != config.iterations {
        return Err(Error::Config(format!(
            "schedule has {} steps but {} iterations were requested",
            schedule.len(),
            config.iterations
        )));
    }
    let init = init_precoders(h, dims, constraint, config.init, config.seed)?;
    let mut out = pga_from(h, dims, init, schedule, config.record_iterates)?;
    if !config.record_trace {
        out.trace.rates = vec![out.trace.last()];
    }
    Ok(out)
}

/// PGA iterations from a given feasible starting point.
///
/// Each iteration takes the analog and digital gradients at the current point, steps
/// `A` by `mu_a[l]` and every `D_f` by `mu_d[l]`, projects `A` back onto its constraint
/// set and rescales `D` to the power budget.
pub fn pga_from(
    h: &ChannelRealization,
    dims: &SystemDims,
    init: HybridPrecoder,
    schedule: &StepSchedule,
    record_iterates: bool,
) -> Result<RunOutput> {
    schedule.validate()?;
    check_channel(h, dims)?;
    let mut current = init;
    let mut rates = Vec::with_capacity(schedule.len() + 1);
    let mut iterates = Vec::new();
    if record_iterates {
        iterates.push(current.clone());
    }
    for (l, (&mu_a, &mu_d)) in schedule.mu_a.iter().zip(&schedule.mu_d).enumerate() {
        let (rate, grad) = objective::rate_and_gradient(h, &current.analog, &current.digital, dims.noise_var)
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at iteration {l} (divergent steps?)")),
                other => other,
            })?;
        rates.push(rate);
        let stepped = &current.analog.a + &grad.ga * Complex64::new(mu_a, 0.0);
        let analog = project_analog(&stepped, &current.analog.constraint)?;
        let raw = DigitalPrecoder {
            d: current
                .digital
                .d
                .iter()
                .zip(&grad.gd)
                .map(|(d, g)| d + g * Complex64::new(mu_d, 0.0))
                .collect(),
        };
        let digital = project_power(&analog, &raw, dims.power)?;
        current = HybridPrecoder { analog, digital };
        if record_iterates {
            iterates.push(current.clone());
        }
    }
    rates.push(objective::hybrid_rate(h, &current.analog, &current.digital, dims.noise_var)?);
    Ok(RunOutput { precoder: current, trace: RateTrace { rates }, iterates, residuals: Vec::new() })
}
