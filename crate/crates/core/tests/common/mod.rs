//! Independent reference implementations used as test oracles. Nothing here calls into
//! the library's numerics; matrices are plain row-major `Vec<Complex64>`.

#![allow(dead_code)]

use hbf_core::{CMat, ChannelRealization};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn cgauss(r: &mut impl Rng) -> Complex64 {
    // Box-Muller, unit variance per complex entry
    let u1: f64 = r.random::<f64>().max(1e-300);
    let u2: f64 = r.random();
    let rad = (-u1.ln()).sqrt();
    Complex64::from_polar(rad, 2.0 * std::f64::consts::PI * u2)
}

pub fn random_cmat(rows: usize, cols: usize, r: &mut impl Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| cgauss(r))
}

pub fn random_channel(n: usize, m: usize, f: usize, r: &mut impl Rng) -> ChannelRealization {
    ChannelRealization::new((0..f).map(|_| random_cmat(n, m, r)).collect()).unwrap()
}

/// Dense row-major complex matrix, independent of nalgebra.
#[derive(Clone, Debug)]
pub struct Dense {
    pub r: usize,
    pub c: usize,
    pub v: Vec<Complex64>,
}

impl Dense {
    pub fn from_cmat(m: &CMat) -> Self {
        let mut v = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                v.push(m[(i, j)]);
            }
        }
        Self { r: m.nrows(), c: m.ncols(), v }
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.v[i * self.c + j]
    }

    pub fn mul(&self, o: &Dense) -> Dense {
        assert_eq!(self.c, o.r);
        let mut v = vec![Complex64::new(0.0, 0.0); self.r * o.c];
        for i in 0..self.r {
            for k in 0..self.c {
                let a = self.at(i, k);
                for j in 0..o.c {
                    v[i * o.c + j] += a * o.at(k, j);
                }
            }
        }
        Dense { r: self.r, c: o.c, v }
    }

    pub fn adjoint(&self) -> Dense {
        let mut v = Vec::with_capacity(self.v.len());
        for j in 0..self.c {
            for i in 0..self.r {
                v.push(self.at(i, j).conj());
            }
        }
        Dense { r: self.c, c: self.r, v }
    }
}

/// `ln det` of a real square matrix by Gaussian elimination with partial pivoting.
/// Returns `None` when the determinant is not positive.
pub fn real_logdet(mut a: Vec<f64>, n: usize) -> Option<f64> {
    let mut acc = 0.0;
    let mut sign = 1.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col] == 0.0 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(piv * n + j, col * n + j);
            }
            sign = -sign;
        }
        let p = a[col * n + col];
        acc += p.abs().ln();
        if p < 0.0 {
            sign = -sign;
        }
        for i in col + 1..n {
            let f = a[i * n + col] / p;
            for j in col..n {
                a[i * n + j] -= f * a[col * n + j];
            }
        }
    }
    (sign > 0.0).then_some(acc)
}

/// `ln det S` of a Hermitian positive definite `S` through its real embedding
/// `[[Re S, -Im S], [Im S, Re S]]`, whose determinant is `det(S)^2`.
pub fn hpd_logdet(s: &Dense) -> f64 {
    let n = s.r;
    let m = 2 * n;
    let mut e = vec![0.0; m * m];
    for i in 0..n {
        for j in 0..n {
            let z = s.at(i, j);
            e[i * m + j] = z.re;
            e[i * m + n + j] = -z.im;
            e[(n + i) * m + j] = z.im;
            e[(n + i) * m + n + j] = z.re;
        }
    }
    real_logdet(e, m).expect("HPD matrix") / 2.0
}

/// Sum-rate from first principles.
pub fn rate(h: &ChannelRealization, w: &[CMat], noise_var: f64) -> f64 {
    let mut total = 0.0;
    for (hf, wf) in h.h.iter().zip(w) {
        let t = Dense::from_cmat(hf).mul(&Dense::from_cmat(wf));
        let mut s = t.mul(&t.adjoint());
        for z in &mut s.v {
            *z /= noise_var;
        }
        for i in 0..s.r {
            s.v[i * s.c + i] += 1.0;
        }
        total += hpd_logdet(&s);
    }
    total / (std::f64::consts::LN_2 * h.h.len() as f64)
}

pub fn hybrid_rate(h: &ChannelRealization, a: &CMat, d: &[CMat], noise_var: f64) -> f64 {
    let w: Vec<CMat> = d.iter().map(|df| a * df).collect();
    rate(h, &w, noise_var)
}

/// Central-difference estimate of the conjugate-Wirtinger gradient of `f` at `x`:
/// `G_ij = (∂f/∂Re x_ij + j ∂f/∂Im x_ij) / 2`.
pub fn fd_wirtinger(x: &CMat, step: f64, mut f: impl FnMut(&CMat) -> f64) -> CMat {
    let mut g = CMat::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let mut part = [0.0; 2];
            for (k, dir) in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)].into_iter().enumerate() {
                let h = step * x[(i, j)].norm().max(1.0);
                let mut p = x.clone();
                p[(i, j)] += dir * h;
                let mut m = x.clone();
                m[(i, j)] -= dir * h;
                part[k] = (f(&p) - f(&m)) / (2.0 * h);
            }
            g[(i, j)] = Complex64::new(part[0], part[1]) / 2.0;
        }
    }
    g
}

pub fn frob(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `Σ_i log2(1 + g_i p_i)`.
pub fn wf_objective(gains: &[f64], p: &[f64]) -> f64 {
    gains.iter().zip(p).map(|(g, p)| (1.0 + g * p).log2()).sum()
}

/// Maximizes the 3-gain water-filling objective over the simplex by repeated grid
/// refinement around the incumbent.
pub fn wf_grid_search(gains: &[f64; 3], power: f64) -> f64 {
    let mut best = (f64::NEG_INFINITY, [power / 3.0; 2]);
    let (mut c0, mut c1, mut half) = (power / 2.0, power / 2.0, power / 2.0);
    for _ in 0..12 {
        let n = 60;
        for a in 0..=n {
            for b in 0..=n {
                let p0 = (c0 - half + 2.0 * half * a as f64 / n as f64).clamp(0.0, power);
                // points beyond the far face are pulled back onto it
                let p1 = (c1 - half + 2.0 * half * b as f64 / n as f64).clamp(0.0, power - p0);
                let p2 = (power - p0 - p1).max(0.0);
                let v = wf_objective(gains, &[p0, p1, p2]);
                if v > best.0 {
                    best = (v, [p0, p1]);
                }
            }
        }
        c0 = best.1[0];
        c1 = best.1[1];
        half /= 8.0;
    }
    best.0
}
