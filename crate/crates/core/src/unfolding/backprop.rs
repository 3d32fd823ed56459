//! Reverse-mode gradient of the unrolled PGA loss with respect to its step sizes.
//!
//! Adjoints follow the convention `X̄ = ∂ℓ/∂Re X + j ∂ℓ/∂Im X`, under which
//! `dℓ = Re Σ conj(X̄) dX`. Every forward quantity of every iteration is kept and
//! the iterations are replayed backwards.

use std::f64::consts::LN_2;

use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::objective::{self, subcarrier_terms};
use crate::optimizers::StepSchedule;
use crate::precoder::{project_analog, ConstraintKind, ConstraintSet, HybridPrecoder, SystemDims, LORENTZ_CENTER};

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn apply_mask(x: &mut CMat, c: &ConstraintSet) {
    for (v, &on) in x.iter_mut().zip(c.mask.iter()) {
        if !on {
            *v = real(0.0);
        }
    }
}

/// Adjoint of the entrywise analog projection at pre-image `w` (only for the smooth
/// constraint sets).
fn projection_adjoint(w: &CMat, z_bar: &CMat, c: &ConstraintSet) -> CMat {
    let mut out = CMat::from_fn(w.nrows(), w.ncols(), |i, j| {
        let (x, zb) = (w[(i, j)], z_bar[(i, j)]);
        match c.kind {
            ConstraintKind::UnitModulus => {
                let r = x.norm();
                if r == 0.0 {
                    return real(0.0);
                }
                let u = x / r;
                (zb - u * (zb.conj() * u).re) / r
            }
            ConstraintKind::LorentzianDma => {
                let v = x - LORENTZ_CENTER;
                let r = v.norm();
                if r == 0.0 {
                    return real(0.0);
                }
                let u = v / r;
                (zb - u * (zb.conj() * u).re) / (2.0 * r)
            }
            _ => real(0.0),
        }
    });
    apply_mask(&mut out, c);
    out
}

/// Forward record of one PGA iteration.
struct Step {
    a: CMat,
    d: Vec<CMat>,
    t: Vec<CMat>,
    q: Vec<CMat>,
    g: Vec<CMat>,
    ga: CMat,
    gd: Vec<CMat>,
    a_tilde: CMat,
    a_next: CMat,
    d_tilde: Vec<CMat>,
    y: Vec<CMat>,
}

/// Loss `-Σ_l ω_l R_true(A_l, D_l)` of PGA run on `h_est` from `init`, and its gradient
/// with respect to `(mu_a, mu_d)`. Rates are measured on `h_true`.
///
/// Only the unit-modulus and Lorentzian sets have a differentiable projection;
/// other kinds are rejected.
pub fn pga_loss_gradient(
    h_est: &ChannelRealization,
    h_true: &ChannelRealization,
    init: &HybridPrecoder,
    schedule: &StepSchedule,
    dims: &SystemDims,
    weights: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let constraint = &init.analog.constraint;
    if !matches!(constraint.kind, ConstraintKind::UnitModulus | ConstraintKind::LorentzianDma) {
        return Err(Error::Config(format!(
            "analytic unrolled gradients need a smooth constraint set, got {}",
            constraint.kind.label()
        )));
    }
    let l_total = schedule.len();
    if weights.len() != l_total {
        return Err(Error::Shape(format!("{} loss weights for {} iterations", weights.len(), l_total)));
    }
    let nv = dims.noise_var;
    let c = 1.0 / (dims.f as f64 * nv * LN_2);

    // Forward pass.
    let mut steps = Vec::with_capacity(l_total);
    let mut a = init.analog.a.clone();
    let mut d = init.digital.d.clone();
    for (&mu_a, &mu_d) in schedule.mu_a.iter().zip(&schedule.mu_d) {
        let mut t = Vec::with_capacity(dims.f);
        let mut q = Vec::with_capacity(dims.f);
        let mut g = Vec::with_capacity(dims.f);
        let mut ga = linalg::zeros(dims.m, dims.k);
        let mut gd = Vec::with_capacity(dims.f);
        let ah = a.adjoint();
        for (hf, df) in h_est.h.iter().zip(&d) {
            let terms = subcarrier_terms(hf, &(&a * df), nv)?;
            let gf = hf.adjoint() * (&terms.q * &terms.t) * real(c);
            ga += &gf * df.adjoint();
            gd.push(&ah * &gf);
            t.push(terms.t);
            q.push(terms.q);
            g.push(gf);
        }
        apply_mask(&mut ga, constraint);
        let a_tilde = &a + &ga * real(mu_a);
        let a_next = project_analog(&a_tilde, constraint)?.a;
        let d_tilde: Vec<CMat> = d.iter().zip(&gd).map(|(df, gdf)| df + gdf * real(mu_d)).collect();
        let y: Vec<CMat> = d_tilde.iter().map(|dt| &a_next * dt).collect();
        let norms: Vec<f64> = y.iter().map(linalg::frob).collect();
        if norms.iter().any(|n| !(*n > 0.0) || !n.is_finite()) {
            return Err(Error::NonFinite("unrolled iterate".into()));
        }
        let d_next: Vec<CMat> = d_tilde
            .iter()
            .zip(&norms)
            .map(|(dt, n)| dt * real(dims.power.sqrt() / n))
            .collect();
        steps.push(Step {
            a: a.clone(),
            d: d.clone(),
            t,
            q,
            g,
            ga,
            gd,
            a_tilde,
            a_next: a_next.clone(),
            d_tilde,
            y,
        });
        a = a_next;
        d = d_next;
    }

    // Loss and rate adjoints at every iterate l = 1..L.
    let mut loss = 0.0;
    let mut a_bar = linalg::zeros(dims.m, dims.k);
    let mut d_bar: Vec<CMat> = vec![linalg::zeros(dims.k, dims.n); dims.f];
    let mut g_mu_a = vec![0.0; l_total];
    let mut g_mu_d = vec![0.0; l_total];

    let add_rate_adjoint = |a: &CMat, d: &[CMat], w: f64, a_bar: &mut CMat, d_bar: &mut [CMat]| -> Result<f64> {
        let analog = crate::precoder::AnalogPrecoder { a: a.clone(), constraint: constraint.clone() };
        let digital = crate::precoder::DigitalPrecoder { d: d.to_vec() };
        let (rate, grad) = objective::rate_and_gradient(h_true, &analog, &digital, nv)?;
        if w != 0.0 {
            *a_bar -= grad.ga * real(2.0 * w);
            for (db, g) in d_bar.iter_mut().zip(&grad.gd) {
                *db -= g * real(2.0 * w);
            }
        }
        Ok(rate)
    };

    loss -= weights[l_total - 1] * add_rate_adjoint(&a, &d, weights[l_total - 1], &mut a_bar, &mut d_bar)?;

    for l in (0..l_total).rev() {
        let st = &steps[l];
        let (mu_a, mu_d) = (schedule.mu_a[l], schedule.mu_d[l]);
        let sqrt_p = dims.power.sqrt();

        // D' = s_f D̃_f with s_f = sqrt(P)/||A' D̃_f||.
        let mut a_next_bar = a_bar.clone();
        let mut dt_bar = Vec::with_capacity(dims.f);
        for f in 0..dims.f {
            let n = linalg::frob(&st.y[f]);
            let s = sqrt_p / n;
            let s_bar = linalg::inner_re(&d_bar[f], &st.d_tilde[f]);
            let n_bar = -s_bar * sqrt_p / (n * n);
            let y_bar = &st.y[f] * real(n_bar / n);
            a_next_bar += &y_bar * st.d_tilde[f].adjoint();
            dt_bar.push(&d_bar[f] * real(s) + st.a_next.adjoint() * &y_bar);
        }

        // D̃_f = D_f + mu_d G_D,f.
        let mut d_prev_bar: Vec<CMat> = dt_bar.clone();
        let mut gd_bar = Vec::with_capacity(dims.f);
        for f in 0..dims.f {
            g_mu_d[l] += linalg::inner_re(&dt_bar[f], &st.gd[f]);
            gd_bar.push(&dt_bar[f] * real(mu_d));
        }

        // A' = Π(Ã), Ã = A + mu_a G_A.
        let at_bar = projection_adjoint(&st.a_tilde, &a_next_bar, constraint);
        g_mu_a[l] += linalg::inner_re(&at_bar, &st.ga);
        let mut a_prev_bar = at_bar.clone();
        let mut ga_bar = &at_bar * real(mu_a);
        apply_mask(&mut ga_bar, constraint);

        // G_A = mask ⊙ Σ G_f D_f^H, G_D,f = A^H G_f, G_f = c H^H Q T.
        for f in 0..dims.f {
            let hf = &h_est.h[f];
            let mut g_bar = &ga_bar * &st.d[f];
            d_prev_bar[f] += ga_bar.adjoint() * &st.g[f];
            a_prev_bar += &st.g[f] * gd_bar[f].adjoint();
            g_bar += &st.a * &gd_bar[f];
            let u_bar = hf * g_bar * real(c);
            let q = &st.q[f];
            let t = &st.t[f];
            let q_bar = &u_bar * t.adjoint();
            let mut t_bar = q * &u_bar;
            let s_bar = -(q * q_bar * q);
            t_bar += (&s_bar + s_bar.adjoint()) * t * real(1.0 / nv);
            let w_bar = hf.adjoint() * t_bar;
            a_prev_bar += &w_bar * st.d[f].adjoint();
            d_prev_bar[f] += st.a.adjoint() * &w_bar;
        }

        a_bar = a_prev_bar;
        d_bar = d_prev_bar;
        if l > 0 {
            let w = weights[l - 1];
            loss -= w * add_rate_adjoint(&st.a, &st.d, w, &mut a_bar, &mut d_bar)?;
        }
    }
    if !loss.is_finite() || g_mu_a.iter().chain(&g_mu_d).any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("unrolled loss gradient".into()));
    }
    Ok((loss, g_mu_a, g_mu_d))
}
