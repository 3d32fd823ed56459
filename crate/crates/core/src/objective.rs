//! Sum-rate objective, its gradients, SINR reporting and the fully digital reference.
//!
//! The objective is the log-det rate of the stacked multi-user channel averaged over
//! subcarriers,
//!
//! ```text
//! R = (1/F) Σ_f log2 det(I_N + σ^{-2} H_f W_f W_f^H H_f^H),   W_f = A D_f.
//! ```
//!
//! Gradients are conjugate-Wirtinger derivatives `∂R/∂X*`. For a real objective of a
//! complex matrix `X` the steepest-ascent direction is along `∂R/∂X*`, and the
//! directional derivative along `V` is `2 Re tr(G^H V)`.

use std::f64::consts::LN_2;

use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::precoder::{AnalogPrecoder, DigitalPrecoder};

/// Per-user and aggregate rates of one precoder on one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// Log-det sum-rate, bits/s/Hz averaged over subcarriers.
    pub sum_rate: f64,
    /// `(1/F) Σ_f log2(1 + SINR_{u,f})` per user.
    pub per_user_rate: Vec<f64>,
    /// Smallest SINR over users and subcarriers, in dB.
    pub min_sinr_db: f64,
}

/// Unconstrained per-subcarrier `M x N` precoders.
#[derive(Debug, Clone, PartialEq)]
pub struct FullyDigitalPrecoder {
    pub w: Vec<CMat>,
}

/// Conjugate-Wirtinger gradient of the sum-rate w.r.t. `A` and each `D_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateGradient {
    pub ga: CMat,
    pub gd: Vec<CMat>,
}

fn check_shapes(h: &ChannelRealization, w: &[CMat]) -> Result<()> {
    if w.len() != h.num_subcarriers() {
        return Err(Error::Shape(format!(
            "{} precoders for {} subcarriers",
            w.len(),
            h.num_subcarriers()
        )));
    }
    let (n, m) = (h.num_users(), h.num_antennas());
    if let Some(bad) = w.iter().find(|wf| wf.shape() != (m, n)) {
        return Err(Error::Shape(format!("precoder is {:?}, expected {:?}", bad.shape(), (m, n))));
    }
    Ok(())
}

fn check_noise(noise_var: f64) -> Result<()> {
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(Error::Config(format!("noise variance must be positive, got {noise_var}")));
    }
    Ok(())
}

/// Quantities of one subcarrier shared by the rate, its gradient and their adjoints.
pub(crate) struct SubcarrierTerms {
    /// `T = H W` (N x N).
    pub t: CMat,
    /// `Q = (I + σ^{-2} T T^H)^{-1}` (N x N, Hermitian).
    pub q: CMat,
    /// `log det(I + σ^{-2} T T^H)` in nats.
    pub logdet: f64,
}

pub(crate) fn subcarrier_terms(hf: &CMat, wf: &CMat, noise_var: f64) -> Result<SubcarrierTerms> {
    let t = hf * wf;
    let n = t.nrows();
    let mut s = &t * t.adjoint() * Complex64::new(1.0 / noise_var, 0.0);
    for i in 0..n {
        s[(i, i)] += Complex64::new(1.0, 0.0);
    }
    if !linalg::all_finite(&s) {
        return Err(Error::NonFinite("rate covariance".into()));
    }
    let (q, logdet) = linalg::hpd_inverse_logdet(&s)?;
    Ok(SubcarrierTerms { t, q, logdet })
}

/// Log-det sum-rate in bits/s/Hz, averaged over subcarriers.
pub fn sum_rate(h: &ChannelRealization, w: &[CMat], noise_var: f64) -> Result<f64> {
    check_shapes(h, w)?;
    check_noise(noise_var)?;
    if !w.iter().all(linalg::all_finite) {
        return Err(Error::NonFinite("precoder".into()));
    }
    let mut total = 0.0;
    for (hf, wf) in h.h.iter().zip(w) {
        let t = hf * wf;
        let n = t.nrows();
        let mut s = &t * t.adjoint() * Complex64::new(1.0 / noise_var, 0.0);
        for i in 0..n {
            s[(i, i)] += Complex64::new(1.0, 0.0);
        }
        total += linalg::hpd_logdet(&s)?;
    }
    Ok(total / (LN_2 * h.num_subcarriers() as f64))
}

/// Sum-rate of the hybrid precoder `(A, D)`.
pub fn hybrid_rate(h: &ChannelRealization, a: &AnalogPrecoder, d: &DigitalPrecoder, noise_var: f64) -> Result<f64> {
    let w: Vec<CMat> = d.d.iter().map(|df| &a.a * df).collect();
    sum_rate(h, &w, noise_var)
}

/// Conjugate-Wirtinger gradient of `∂R/∂W_f*` for every subcarrier, plus the rate.
pub(crate) fn precoder_gradients(h: &ChannelRealization, w: &[CMat], noise_var: f64) -> Result<(Vec<CMat>, f64)> {
    let nf = h.num_subcarriers() as f64;
    let c = Complex64::new(1.0 / (nf * noise_var * LN_2), 0.0);
    let mut rate = 0.0;
    let mut g = Vec::with_capacity(w.len());
    for (hf, wf) in h.h.iter().zip(w) {
        let terms = subcarrier_terms(hf, wf, noise_var)?;
        rate += terms.logdet;
        g.push(hf.adjoint() * (&terms.q * &terms.t) * c);
    }
    Ok((g, rate / (LN_2 * nf)))
}

/// Sum-rate and its gradient w.r.t. the hybrid variables.
///
/// With `G_f = ∂R/∂W_f*`, the digital gradient is `A^H G_f` and the analog gradient is
/// `Σ_f G_f D_f^H`, zeroed outside the connectivity mask.
pub fn rate_and_gradient(
    h: &ChannelRealization,
    a: &AnalogPrecoder,
    d: &DigitalPrecoder,
    noise_var: f64,
) -> Result<(f64, RateGradient)> {
    check_noise(noise_var)?;
    let w: Vec<CMat> = d.d.iter().map(|df| &a.a * df).collect();
    check_shapes(h, &w)?;
    let (g, rate) = precoder_gradients(h, &w, noise_var)?;
    let ah = a.a.adjoint();
    let mut ga = linalg::zeros(a.m(), a.k());
    let mut gd = Vec::with_capacity(g.len());
    for (gf, df) in g.iter().zip(&d.d) {
        ga += gf * df.adjoint();
        gd.push(&ah * gf);
    }
    for (x, &on) in ga.iter_mut().zip(a.constraint.mask.iter()) {
        if !on {
            *x = Complex64::new(0.0, 0.0);
        }
    }
    if !linalg::all_finite(&ga) || !gd.iter().all(linalg::all_finite) {
        return Err(Error::NonFinite("rate gradient".into()));
    }
    Ok((rate, RateGradient { ga, gd }))
}

pub fn rate_gradient(
    h: &ChannelRealization,
    a: &AnalogPrecoder,
    d: &DigitalPrecoder,
    noise_var: f64,
) -> Result<RateGradient> {
    rate_and_gradient(h, a, d, noise_var).map(|(_, g)| g)
}

/// SINR-based per-user rates alongside the log-det sum-rate.
pub fn per_user_report(h: &ChannelRealization, w: &[CMat], noise_var: f64) -> Result<RateReport> {
    let sum = sum_rate(h, w, noise_var)?;
    let n = h.num_users();
    let nf = h.num_subcarriers() as f64;
    let mut per_user = vec![0.0; n];
    let mut min_sinr = f64::INFINITY;
    for (hf, wf) in h.h.iter().zip(w) {
        let t = hf * wf;
        for (u, rate) in per_user.iter_mut().enumerate() {
            let signal = t[(u, u)].norm_sqr();
            let interference: f64 = (0..n).filter(|&v| v != u).map(|v| t[(u, v)].norm_sqr()).sum();
            let sinr = signal / (interference + noise_var);
            min_sinr = min_sinr.min(sinr);
            *rate += (1.0 + sinr).log2() / nf;
        }
    }
    Ok(RateReport { sum_rate: sum, per_user_rate: per_user, min_sinr_db: 10.0 * min_sinr.log10() })
}

/// Water-filling power allocation maximizing `Σ log2(1 + g_i p_i)` with `Σ p_i = power`.
pub fn waterfill(gains: &[f64], power: f64) -> Result<Vec<f64>> {
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::Config(format!("power must be positive, got {power}")));
    }
    if gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(Error::Config("gains must be finite and non-negative".into()));
    }
    let mut active: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::Degenerate("all channel gains are zero".into()));
    }
    let inv = |i: usize| 1.0 / gains[i];
    active.sort_by(|&i, &j| inv(i).total_cmp(&inv(j)).then(i.cmp(&j)));
    let mut level = 0.0;
    for k in (1..=active.len()).rev() {
        let sum_inv: f64 = active[..k].iter().map(|&i| inv(i)).sum();
        level = (power + sum_inv) / k as f64;
        if level > inv(active[k - 1]) {
            break;
        }
    }
    Ok(gains
        .iter()
        .map(|&g| if g > 0.0 { (level - 1.0 / g).max(0.0) } else { 0.0 })
        .collect())
}

/// Zero-forcing with water-filled stream powers, normalized to `||W_f||_F^2 = power`.
pub fn fully_digital_reference(
    h: &ChannelRealization,
    power: f64,
    noise_var: f64,
) -> Result<(FullyDigitalPrecoder, RateReport)> {
    check_noise(noise_var)?;
    let (n, m) = (h.num_users(), h.num_antennas());
    if n > m {
        return Err(Error::Shape(format!("N={n} users exceed M={m} antennas")));
    }
    let mut w = Vec::with_capacity(h.num_subcarriers());
    for (f, hf) in h.h.iter().enumerate() {
        let zf = linalg::pinv_full_column(&hf.adjoint())
            .map_err(|e| Error::Degenerate(format!("channel at subcarrier {f}: {e}")))?
            .adjoint();
        let mut dirs = zf;
        for mut col in dirs.column_iter_mut() {
            let norm = col.norm();
            col /= Complex64::new(norm, 0.0);
        }
        let t = hf * &dirs;
        let gains: Vec<f64> = (0..n).map(|u| t[(u, u)].norm_sqr() / noise_var).collect();
        let p = waterfill(&gains, power)?;
        for (u, mut col) in dirs.column_iter_mut().enumerate() {
            col *= Complex64::new(p[u].sqrt(), 0.0);
        }
        let scale = (power / linalg::frob_sq(&dirs)).sqrt();
        w.push(dirs * Complex64::new(scale, 0.0));
    }
    let report = per_user_report(h, &w, noise_var)?;
    Ok((FullyDigitalPrecoder { w }, report))
}
