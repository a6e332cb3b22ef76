//! Proximal operators and norm-ball projections.
//!
//! Every nonsmooth subproblem of the inner solvers reduces to one of the maps
//! here: singular value thresholding for the nuclear norm, entrywise soft
//! thresholding for the ℓ1 norm, and the two metric projections that appear in
//! the complementarity residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{positive, Error, Result};

/// Singular values below this fraction of the largest one are dropped.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Thin singular value decomposition `M = U diag(s) V*`.
///
/// Only the numerically nonzero part is kept, so `left_vectors` is `m×r`,
/// `right_vectors` is `n×r` and `singular_values` is nonincreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub left_vectors: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub right_vectors: DMatrix<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `U diag(g(s)) V*` for a spectral function `g` applied per singular value.
    pub fn reconstruct_with(&self, mut g: impl FnMut(f64) -> f64) -> DMatrix<f64> {
        let (m, n) = (self.left_vectors.nrows(), self.right_vectors.nrows());
        let mut out = DMatrix::zeros(m, n);
        for (k, &s) in self.singular_values.iter().enumerate() {
            let w = g(s);
            if w == 0.0 {
                continue;
            }
            let u = self.left_vectors.column(k);
            let v = self.right_vectors.column(k);
            out.ger(w, &u, &v, 1.0);
        }
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(|s| s)
    }
}

/// Deterministic thin SVD.
///
/// Backed by Golub–Kahan bidiagonalization with implicit QR sweeps. Factors
/// are sorted by decreasing singular value, values below
/// [`RANK_CUTOFF`]`·σ₁` are discarded, and each left vector is signed so its
/// first nonzero entry is nonnegative.
pub fn thin_svd(m: &DMatrix<f64>) -> Result<SvdFactors> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "svd input" });
    }
    let (rows, cols) = m.shape();
    let empty = || SvdFactors {
        left_vectors: DMatrix::zeros(rows, 0),
        singular_values: DVector::zeros(0),
        right_vectors: DMatrix::zeros(cols, 0),
    };
    if rows == 0 || cols == 0 || m.iter().all(|&v| v == 0.0) {
        return Ok(empty());
    }

    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|_| Error::NonFinite { what: "svd iteration" })?;
    let k = rows.min(cols);
    let u = DMatrix::from_fn(rows, k, |i, j| svd.U()[(i, j)]);
    let vt = DMatrix::from_fn(k, cols, |i, j| svd.V()[(j, i)]);
    let s = DVector::from_fn(k, |i, _| svd.S()[i]);

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let top = s[order[0]];
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&k| s[k] > RANK_CUTOFF * top)
        .collect();
    if keep.is_empty() {
        return Ok(empty());
    }

    let r = keep.len();
    let mut left = DMatrix::zeros(rows, r);
    let mut right = DMatrix::zeros(cols, r);
    let mut values = DVector::zeros(r);
    for (dst, &k) in keep.iter().enumerate() {
        let ucol = u.column(k);
        let sign = match ucol.iter().find(|x| x.abs() > 1e-14) {
            Some(&x) if x < 0.0 => -1.0,
            _ => 1.0,
        };
        left.set_column(dst, &(ucol * sign));
        right.set_column(dst, &(vt.row(k).transpose() * sign));
        values[dst] = s[k];
    }
    Ok(SvdFactors {
        left_vectors: left,
        singular_values: values,
        right_vectors: right,
    })
}

/// Singular value thresholding `U diag((σᵢ − μ)₊) V*`, the proximal map of
/// `μ‖·‖*`.
pub fn svt(m: &DMatrix<f64>, mu: f64) -> Result<DMatrix<f64>> {
    positive("mu", mu)?;
    let f = thin_svd(m)?;
    Ok(f.reconstruct_with(|s| (s - mu).max(0.0)))
}

/// Entrywise soft thresholding `sgn(x)·(|x| − μ)₊`, the proximal map of
/// `μ‖·‖₁`.
pub fn soft_threshold(m: &DMatrix<f64>, mu: f64) -> Result<DMatrix<f64>> {
    positive("mu", mu)?;
    Ok(m.map(|x| shrink(x, mu)))
}

#[inline]
pub(crate) fn shrink(x: f64, mu: f64) -> f64 {
    if x > mu {
        x - mu
    } else if x < -mu {
        x + mu
    } else {
        0.0
    }
}

/// Projection onto the spectral-norm ball `{Z : ‖Z‖ ≤ radius}`.
pub fn project_spectral_ball(m: &DMatrix<f64>, radius: f64) -> Result<DMatrix<f64>> {
    positive("radius", radius)?;
    let f = thin_svd(m)?;
    // Already inside (up to the SVD's own rounding): the projection is the identity.
    if f.rank() == 0 || f.singular_values[0] <= radius * (1.0 + 1e-12) {
        return Ok(m.clone());
    }
    // Split off the part above the radius so components the thin SVD dropped
    // are kept intact.
    let excess = f.reconstruct_with(|s| (s - radius).max(0.0));
    Ok(m - excess)
}

/// Projection onto the entrywise box `{Z : ‖Z‖∞ ≤ bound}`.
pub fn project_inf_ball(m: &DMatrix<f64>, bound: f64) -> Result<DMatrix<f64>> {
    positive("bound", bound)?;
    Ok(m.map(|x| x.clamp(-bound, bound)))
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(thin_svd(m)?.singular_values.sum())
}

/// Largest singular value (0 for the zero matrix).
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    let f = thin_svd(m)?;
    Ok(if f.rank() == 0 { 0.0 } else { f.singular_values[0] })
}

/// Number of singular values above `rel · σ₁`.
pub fn numerical_rank(m: &DMatrix<f64>, rel: f64) -> Result<usize> {
    let f = thin_svd(m)?;
    if f.rank() == 0 {
        return Ok(0);
    }
    let top = f.singular_values[0];
    Ok(f.singular_values.iter().filter(|&&s| s > rel * top).count())
}

/// Entrywise ℓ1 norm.
pub fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}
