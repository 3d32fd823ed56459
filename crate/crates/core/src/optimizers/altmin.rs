//! Alternating minimization of `Σ_f ||W_opt,f - A D_f||_F²` against a fully digital
//! target.

use num_complex::Complex64;

use super::{check_channel, ls_with_restarts, RateTrace, RunOutput};
use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::objective::{self, FullyDigitalPrecoder};
use crate::precoder::{
    project_analog, project_power, AnalogPrecoder, ConstraintKind, DigitalPrecoder, HybridPrecoder, SystemDims,
};

/// Largest number of step halvings tried by the manifold line search.
pub const MAX_HALVINGS: usize = 30;

/// Stacked Frobenius residual `sqrt(Σ_f ||W_f - A D_f||²)`.
pub fn residual(w_opt: &[CMat], a: &CMat, d: &[CMat]) -> f64 {
    residual_sq(w_opt, a, d).sqrt()
}

fn residual_sq(w_opt: &[CMat], a: &CMat, d: &[CMat]) -> f64 {
    w_opt.iter().zip(d).map(|(w, df)| linalg::frob_sq(&(w - a * df))).sum()
}

/// Euclidean gradient `E = -2 Σ_f (W_f - A D_f) D_f^H` of the fit residual.
fn euclidean_gradient(w_opt: &[CMat], a: &CMat, d: &[CMat]) -> CMat {
    let mut e = linalg::zeros(a.nrows(), a.ncols());
    for (w, df) in w_opt.iter().zip(d) {
        e -= (w - a * df) * df.adjoint() * Complex64::new(2.0, 0.0);
    }
    e
}

/// Projection of a Euclidean gradient onto the tangent space of the complex circle
/// manifold at `a`: `E - Re(E ⊙ conj(A)) ⊙ A`.
pub fn riemannian_gradient(a: &CMat, e: &CMat) -> CMat {
    a.zip_map(e, |x, g| g - x * (g * x.conj()).re)
}

fn retract(a: &CMat, dir: &CMat, eta: f64) -> CMat {
    a.zip_map(dir, |x, r| {
        let y = x - r * eta;
        let n = y.norm();
        if n == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            y / n
        }
    })
}

/// Riemannian steepest-descent steps on `A` with `D` held fixed, each with a halving
/// line search from a unit step. Returns the objective after every accepted step,
/// starting with the initial value.
pub(crate) fn manifold_descent(w_opt: &[CMat], a: &CMat, d: &[CMat], steps: usize) -> (CMat, Vec<f64>) {
    let mut a = a.clone();
    let mut fval = residual_sq(w_opt, &a, d);
    let mut history = vec![fval];
    for _ in 0..steps {
        let r = riemannian_gradient(&a, &euclidean_gradient(w_opt, &a, d));
        let mut eta = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = retract(&a, &r, eta);
            let fc = residual_sq(w_opt, &cand, d);
            if fc < fval {
                accepted = Some((cand, fc));
                break;
            }
            eta *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                a = cand;
                fval = fc;
                history.push(fval);
            }
            // Line search exhausted: treat as stationary.
            None => break,
        }
    }
    (a, history)
}

fn hybrid_from(a: &AnalogPrecoder, d_raw: &DigitalPrecoder, power: f64) -> Result<HybridPrecoder> {
    Ok(HybridPrecoder { analog: a.clone(), digital: project_power(a, d_raw, power)? })
}

struct Recorder {
    rates: Vec<f64>,
    residuals: Vec<f64>,
    iterates: Vec<HybridPrecoder>,
    keep_iterates: bool,
}

impl Recorder {
    fn new(keep_iterates: bool) -> Self {
        Self { rates: Vec::new(), residuals: Vec::new(), iterates: Vec::new(), keep_iterates }
    }

    fn push(&mut self, h: &ChannelRealization, dims: &SystemDims, hp: HybridPrecoder, residual: f64) -> Result<HybridPrecoder> {
        self.rates.push(objective::hybrid_rate(h, &hp.analog, &hp.digital, dims.noise_var)?);
        self.residuals.push(residual);
        if self.keep_iterates {
            self.iterates.push(hp.clone());
        }
        Ok(hp)
    }

    fn finish(self, precoder: HybridPrecoder) -> RunOutput {
        RunOutput { precoder, trace: RateTrace { rates: self.rates }, iterates: self.iterates, residuals: self.residuals }
    }
}

fn check_target(w_opt: &FullyDigitalPrecoder, dims: &SystemDims) -> Result<()> {
    if w_opt.w.len() != dims.f || w_opt.w.iter().any(|w| w.shape() != (dims.m, dims.n)) {
        return Err(Error::Shape("fully digital target does not match dims".into()));
    }
    Ok(())
}

/// Phase-extraction alternating minimization.
///
/// Each round sets `A = Π(Σ_f W_f D_f^H)` and refits `D_f = pinv(A) W_f`; a round whose
/// fit is worse than the incumbent's is rejected, so residuals never increase. The trace holds
/// the rate of the power-normalized pair after every round; `residuals` the fit residual
/// before normalization (the initial entry uses the start's own `D`).
pub fn pe_altmin(
    h: &ChannelRealization,
    w_opt: &FullyDigitalPrecoder,
    dims: &SystemDims,
    init: &HybridPrecoder,
    rounds: usize,
    seed: u64,
    record_iterates: bool,
) -> Result<RunOutput> {
    check_channel(h, dims)?;
    check_target(w_opt, dims)?;
    let constraint = &init.analog.constraint;
    if !matches!(constraint.kind, ConstraintKind::UnitModulus | ConstraintKind::QuantizedPhase { .. }) {
        return Err(Error::Config(format!(
            "phase extraction needs a phase-shifter constraint, got {}",
            constraint.kind.label()
        )));
    }
    let mut rec = Recorder::new(record_iterates);
    let mut best_res = residual(&w_opt.w, &init.analog.a, &init.digital.d);
    let mut current = rec.push(h, dims, init.clone(), best_res)?;
    let mut d_raw = init.digital.clone();
    for round in 0..rounds {
        let mut s = linalg::zeros(dims.m, dims.k);
        for (w, df) in w_opt.w.iter().zip(&d_raw.d) {
            s += w * df.adjoint();
        }
        let a = project_analog(&s, constraint)?;
        let (a, d) = ls_with_restarts(a, &w_opt.w, crate::seed::derive(seed, round as u64))?;
        let res = residual(&w_opt.w, &a.a, &d.d);
        if res > best_res {
            // phase extraction is not a descent step; a worse fit is rejected and
            // the previous pair is kept, which makes it a fixed point
            current = rec.push(h, dims, current.clone(), best_res)?;
            continue;
        }
        best_res = res;
        current = rec.push(h, dims, hybrid_from(&a, &d, dims.power)?, res)?;
        d_raw = d;
    }
    Ok(rec.finish(current))
}

/// Manifold-optimization alternating minimization on the unit-modulus, fully connected
/// network: per outer round, `D` is refit by least squares and `A` takes up to
/// `inner` Riemannian steepest-descent steps with backtracking.
#[allow(clippy::too_many_arguments)]
pub fn mo_altmin(
    h: &ChannelRealization,
    w_opt: &FullyDigitalPrecoder,
    dims: &SystemDims,
    init: &HybridPrecoder,
    outer: usize,
    inner: usize,
    seed: u64,
    record_iterates: bool,
) -> Result<RunOutput> {
    check_channel(h, dims)?;
    check_target(w_opt, dims)?;
    check_manifold(&init.analog)?;
    let mut rec = Recorder::new(record_iterates);
    let (mut a, mut d) = ls_with_restarts(init.analog.clone(), &w_opt.w, seed)?;
    let mut current = rec.push(h, dims, init.clone(), residual(&w_opt.w, &a.a, &d.d))?;
    for round in 0..outer {
        let (next, _) = manifold_descent(&w_opt.w, &a.a, &d.d, inner);
        let cand = AnalogPrecoder { a: next, constraint: a.constraint.clone() };
        (a, d) = ls_with_restarts(cand, &w_opt.w, crate::seed::derive(seed, round as u64 + 1))?;
        let res = residual(&w_opt.w, &a.a, &d.d);
        current = rec.push(h, dims, hybrid_from(&a, &d, dims.power)?, res)?;
    }
    Ok(rec.finish(current))
}

fn check_manifold(a: &AnalogPrecoder) -> Result<()> {
    if a.constraint.kind != ConstraintKind::UnitModulus || !a.constraint.is_fully_connected() {
        return Err(Error::Config("manifold alternation needs a fully connected unit-modulus network".into()));
    }
    Ok(())
}

/// Fixed-step manifold alternation: per round `D_f = pinv(A) W_f`, then a single
/// Riemannian step `A = retract(A - η_l R)` without line search.
pub fn gradient_altmin(
    h: &ChannelRealization,
    w_opt: &FullyDigitalPrecoder,
    dims: &SystemDims,
    init: &AnalogPrecoder,
    etas: &[f64],
    seed: u64,
    record_iterates: bool,
) -> Result<RunOutput> {
    check_channel(h, dims)?;
    check_target(w_opt, dims)?;
    check_manifold(init)?;
    if etas.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::Config("manifold steps must be finite and non-negative".into()));
    }
    let mut rec = Recorder::new(record_iterates);
    let (mut a, mut d) = ls_with_restarts(init.clone(), &w_opt.w, seed)?;
    let mut current = rec.push(h, dims, hybrid_from(&a, &d, dims.power)?, residual(&w_opt.w, &a.a, &d.d))?;
    for (round, &eta) in etas.iter().enumerate() {
        let r = riemannian_gradient(&a.a, &euclidean_gradient(&w_opt.w, &a.a, &d.d));
        let cand = AnalogPrecoder { a: retract(&a.a, &r, eta), constraint: a.constraint.clone() };
        (a, d) = ls_with_restarts(cand, &w_opt.w, crate::seed::derive(seed, round as u64 + 1))?;
        let res = residual(&w_opt.w, &a.a, &d.d);
        current = rec.push(h, dims, hybrid_from(&a, &d, dims.power)?, res)?;
    }
    Ok(rec.finish(current))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel, ChannelModelParams};
    use crate::optimizers::{init_precoders, random_analog, InitStrategy};
    use crate::precoder::ConstraintSet;

    fn setup(m: usize, k: usize, n: usize, f: usize, seed: u64) -> (ChannelRealization, SystemDims, ConstraintSet) {
        let p = ChannelModelParams { m, n, f, ..Default::default() };
        let h = generate_channel(&p, seed).unwrap();
        let dims = SystemDims::new(m, k, n, f, 10.0, 1.0).unwrap();
        let cs = ConstraintSet::fully(ConstraintKind::UnitModulus, m, k).unwrap();
        (h, dims, cs)
    }

    #[test]
    fn riemannian_gradient_is_tangent() {
        let (h, dims, cs) = setup(8, 3, 2, 4, 1);
        let init = init_precoders(&h, &dims, &cs, InitStrategy::RandomPhase, 1).unwrap();
        let (w, _) = objective::fully_digital_reference(&h, dims.power, dims.noise_var).unwrap();
        let e = euclidean_gradient(&w.w, &init.analog.a, &init.digital.d);
        let r = riemannian_gradient(&init.analog.a, &e);
        for (x, g) in init.analog.a.iter().zip(r.iter()) {
            assert!((g * x.conj()).re.abs() <= 1e-12);
        }
    }

    #[test]
    fn manifold_descent_never_increases() {
        let (h, dims, cs) = setup(8, 3, 2, 4, 2);
        let init = init_precoders(&h, &dims, &cs, InitStrategy::RandomPhase, 2).unwrap();
        let (w, _) = objective::fully_digital_reference(&h, dims.power, dims.noise_var).unwrap();
        let d = crate::optimizers::digital_ls_raw(&init.analog, &w.w).unwrap();
        let (_, hist) = manifold_descent(&w.w, &init.analog.a, &d.d, 25);
        assert!(hist.len() > 1);
        for pair in hist.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
    }

    #[test]
    fn pe_exact_factorization_in_one_round() {
        // K = N = 1, F = 1, W already unit modulus and D = I.
        let (h, dims, cs) = setup(4, 1, 1, 1, 3);
        let w_target = CMat::from_fn(4, 1, |i, _| Complex64::from_polar(1.0, 0.7 * i as f64));
        let w_opt = FullyDigitalPrecoder { w: vec![w_target.clone()] };
        let init = HybridPrecoder {
            analog: random_analog(&cs, 9).unwrap(),
            digital: DigitalPrecoder { d: vec![linalg::identity(1)] },
        };
        let out = pe_altmin(&h, &w_opt, &dims, &init, 1, 0, false).unwrap();
        assert!(linalg::frob(&(&out.precoder.analog.a - &w_target)) < 1e-12);
        assert!(out.residuals[1] < 1e-12);
    }

    #[test]
    fn zero_rounds_return_the_start() {
        let (h, dims, cs) = setup(8, 3, 2, 4, 4);
        let init = init_precoders(&h, &dims, &cs, InitStrategy::RandomPhase, 4).unwrap();
        let (w, _) = objective::fully_digital_reference(&h, dims.power, dims.noise_var).unwrap();
        let out = pe_altmin(&h, &w, &dims, &init, 0, 0, false).unwrap();
        assert_eq!(out.precoder, init);
        assert_eq!(out.trace.rates.len(), 1);
        let mo = mo_altmin(&h, &w, &dims, &init, 0, 5, 0, false).unwrap();
        assert_eq!(mo.precoder, init);
    }

    #[test]
    fn constraint_preconditions() {
        let (h, dims, _) = setup(8, 2, 2, 2, 5);
        let lor = ConstraintSet::fully(ConstraintKind::LorentzianDma, 8, 2).unwrap();
        let init = init_precoders(&h, &dims, &lor, InitStrategy::RandomPhase, 5).unwrap();
        let (w, _) = objective::fully_digital_reference(&h, dims.power, dims.noise_var).unwrap();
        assert!(matches!(pe_altmin(&h, &w, &dims, &init, 2, 0, false), Err(Error::Config(_))));
        assert!(matches!(mo_altmin(&h, &w, &dims, &init, 2, 2, 0, false), Err(Error::Config(_))));
        assert!(matches!(gradient_altmin(&h, &w, &dims, &init.analog, &[0.1], 0, false), Err(Error::Config(_))));
    }

    #[test]
    fn zero_steps_keep_least_squares_start() {
        let (h, dims, cs) = setup(8, 3, 2, 4, 6);
        let init = init_precoders(&h, &dims, &cs, InitStrategy::RandomPhase, 6).unwrap();
        let (w, _) = objective::fully_digital_reference(&h, dims.power, dims.noise_var).unwrap();
        let out = gradient_altmin(&h, &w, &dims, &init.analog, &[0.0; 4], 0, false).unwrap();
        let r0 = objective::hybrid_rate(&h, &init.analog, &init.digital, dims.noise_var).unwrap();
        for r in &out.trace.rates {
            assert!((r - r0).abs() < 1e-10);
        }
    }
}
