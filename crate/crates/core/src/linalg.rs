//! Small dense complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix used throughout the crate.
pub type CMat = DMatrix<Complex64>;

/// Relative singular-value threshold below which a matrix is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

pub fn zeros(rows: usize, cols: usize) -> CMat {
    CMat::zeros(rows, cols)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Squared Frobenius norm.
pub fn frob_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn frob(m: &CMat) -> f64 {
    frob_sq(m).sqrt()
}

/// Real part of the Frobenius inner product, `Re tr(a^H b)`.
pub fn inner_re(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .sum()
}

pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// `log det S` (natural log) of a Hermitian positive definite matrix via Cholesky.
pub fn hpd_logdet(s: &CMat) -> Result<f64> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    Ok((0..s.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

/// Inverse and natural-log determinant of a Hermitian positive definite matrix.
pub fn hpd_inverse_logdet(s: &CMat) -> Result<(CMat, f64)> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("matrix is not positive definite".into()))?;
    let logdet = {
        let l = chol.l_dirty();
        (0..s.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum()
    };
    let mut inv = chol.inverse();
    // Re-symmetrize so downstream products stay exactly Hermitian.
    let n = inv.nrows();
    for i in 0..n {
        inv[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let v = (inv[(i, j)] + inv[(j, i)].conj()) * 0.5;
            inv[(i, j)] = v;
            inv[(j, i)] = v.conj();
        }
    }
    Ok((inv, logdet))
}

/// Moore-Penrose pseudo-inverse of a full-column-rank matrix.
///
/// Fails with [`Error::Degenerate`] when the smallest singular value falls below
/// `RANK_TOL` relative to the largest.
pub fn pinv_full_column(a: &CMat) -> Result<CMat> {
    let (m, k) = a.shape();
    if k > m {
        return Err(Error::Degenerate(format!("{m}x{k} matrix cannot have full column rank")));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= RANK_TOL * smax {
        return Err(Error::Degenerate(format!(
            "matrix is rank deficient (singular values {smin:e} / {smax:e})"
        )));
    }
    svd.pseudo_inverse(0.0)
        .map_err(|e| Error::Degenerate(e.to_string()))
}

/// Eigenvectors of a Hermitian matrix for its `k` largest eigenvalues, as columns.
///
/// Each vector is phase-normalized so its first entry of non-negligible magnitude is
/// real and positive, which makes the output a deterministic function of the input.
pub fn top_eigenvectors(herm: &CMat, k: usize) -> CMat {
    let n = herm.nrows();
    let eig = herm.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut out = zeros(n, k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let vmax = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if let Some(lead) = v.iter().find(|z| z.norm() > 1e-8 * vmax).copied() {
            let rot = lead.conj() / lead.norm();
            v *= rot;
        }
        out.set_column(col, &v);
    }
    out
}
