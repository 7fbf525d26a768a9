//! Dense spectral kernels.
//!
//! Full spectra come from faer's bidiagonal SVD without vectors. Truncated
//! decompositions use Golub-Kahan-Lanczos bidiagonalization with full
//! reorthogonalization, which only touches the matrix through products and is
//! far cheaper than a complete SVD when few components are wanted.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Leading singular triplets of a matrix.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub values: Vec<f64>,
    /// `n_rows x k`, orthonormal columns.
    pub left: Mat<f64>,
    /// `n_cols x k`, orthonormal columns.
    pub right: Mat<f64>,
}

impl TruncatedSvd {
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        Self {
            values: Vec::new(),
            left: Mat::zeros(n_rows, 0),
            right: Mat::zeros(n_cols, 0),
        }
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn transposed(self) -> Self {
        Self {
            values: self.values,
            left: self.right,
            right: self.left,
        }
    }
}

/// All singular values, descending. No vectors are formed.
pub fn singular_values(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    let mut values = a
        .singular_values()
        .map_err(|e| Error::Backend(format!("{e:?}")))?;
    values.sort_by(|x, y| y.total_cmp(x));
    Ok(values)
}

/// Reference route: complete thin SVD, then truncation.
pub fn dense_truncated_svd(a: MatRef<'_, f64>, k: usize) -> Result<TruncatedSvd> {
    let (m, n) = (a.nrows(), a.ncols());
    let k = k.min(m.min(n));
    if k == 0 {
        return Ok(TruncatedSvd::empty(m, n));
    }
    let svd = a.thin_svd().map_err(|e| Error::Backend(format!("{e:?}")))?;
    let s = svd.S().column_vector();
    Ok(TruncatedSvd {
        values: (0..k).map(|i| s[i]).collect(),
        left: svd.U().subcols(0, k).to_owned(),
        right: svd.V().subcols(0, k).to_owned(),
    })
}

const LANCZOS_SEED: u64 = 0x6c73_636d_665f_6c7a;
const RESIDUAL_TOL: f64 = 1e-12;

/// Leading `k` singular triplets.
///
/// Small problems, and problems where `k` is a sizeable fraction of the
/// smaller dimension, go straight to the dense route. The Lanczos iteration is
/// deterministic: its starting vector comes from a fixed-seed generator.
pub fn truncated_svd(a: MatRef<'_, f64>, k: usize) -> Result<TruncatedSvd> {
    let (m, n) = (a.nrows(), a.ncols());
    let kmax = m.min(n);
    let k = k.min(kmax);
    if k == 0 {
        return Ok(TruncatedSvd::empty(m, n));
    }
    if kmax <= 2 * k + 48 {
        return dense_truncated_svd(a, k);
    }
    match lanczos(a, k)? {
        Some(svd) => Ok(svd),
        None => {
            log::warn!("Lanczos bidiagonalization did not converge for a {m}x{n} matrix; using a full SVD");
            dense_truncated_svd(a, k)
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Orthogonalizes `w` (a single column) against the first `count` columns of
/// `basis`, twice.
fn reorthogonalize(basis: &Mat<f64>, count: usize, w: &mut Mat<f64>) {
    if count == 0 {
        return;
    }
    let q = basis.subcols(0, count);
    let mut coef = Mat::<f64>::zeros(count, 1);
    for _ in 0..2 {
        matmul(coef.as_mut(), Accum::Replace, q.transpose(), w.as_ref(), 1.0, Par::Seq);
        matmul(w.as_mut(), Accum::Add, q, coef.as_ref(), -1.0, Par::Seq);
    }
}

fn random_unit_orthogonal(
    rng: &mut ChaCha8Rng,
    basis: &Mat<f64>,
    count: usize,
) -> Option<Mat<f64>> {
    let len = basis.nrows();
    for _ in 0..4 {
        let mut w = Mat::<f64>::from_fn(len, 1, |_, _| StandardNormal.sample(rng));
        reorthogonalize(basis, count, &mut w);
        let nrm = norm(w.col_as_slice(0));
        if nrm > 1e-8 {
            w.col_as_slice_mut(0).iter_mut().for_each(|x| *x /= nrm);
            return Some(w);
        }
    }
    None
}

fn lanczos(a: MatRef<'_, f64>, k: usize) -> Result<Option<TruncatedSvd>> {
    let (m, n) = (a.nrows(), a.ncols());
    let kmax = m.min(n);
    // Leave room for the residual vector; at the cap the dense route takes over.
    let cap = kmax - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(LANCZOS_SEED);
    let mut u_basis = Mat::<f64>::zeros(m, cap);
    let mut v_basis = Mat::<f64>::zeros(n, cap + 1);
    let mut alphas: Vec<f64> = Vec::with_capacity(cap);
    let mut betas: Vec<f64> = Vec::with_capacity(cap);

    let start = match random_unit_orthogonal(&mut rng, &v_basis, 0) {
        Some(v) => v,
        None => return Ok(None),
    };
    v_basis.col_mut(0).copy_from(start.col(0));

    let mut scale = 0.0_f64;
    let mut w = Mat::<f64>::zeros(m, 1);
    let mut z = Mat::<f64>::zeros(n, 1);
    let check_every = 8;
    for j in 0..cap {
        matmul(w.as_mut(), Accum::Replace, a, v_basis.col(j).as_mat(), 1.0, Par::Seq);
        if j > 0 {
            let beta = betas[j - 1];
            let prev = u_basis.col_as_slice(j - 1).to_vec();
            w.col_as_slice_mut(0)
                .iter_mut()
                .zip(&prev)
                .for_each(|(x, p)| *x -= beta * p);
        }
        reorthogonalize(&u_basis, j, &mut w);
        let mut alpha = norm(w.col_as_slice(0));
        scale = scale.max(alpha);
        if alpha <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            alpha = 0.0;
            match random_unit_orthogonal(&mut rng, &u_basis, j) {
                Some(fresh) => w.copy_from(&fresh),
                None => return Ok(None),
            }
        } else {
            w.col_as_slice_mut(0).iter_mut().for_each(|x| *x /= alpha);
        }
        u_basis.col_mut(j).copy_from(w.col(0));
        alphas.push(alpha);

        matmul(z.as_mut(), Accum::Replace, a.transpose(), u_basis.col(j).as_mat(), 1.0, Par::Seq);
        {
            let vj = v_basis.col_as_slice(j).to_vec();
            z.col_as_slice_mut(0)
                .iter_mut()
                .zip(&vj)
                .for_each(|(x, p)| *x -= alpha * p);
        }
        reorthogonalize(&v_basis, j + 1, &mut z);
        let mut beta = norm(z.col_as_slice(0));
        scale = scale.max(beta);
        if beta <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            beta = 0.0;
            match random_unit_orthogonal(&mut rng, &v_basis, j + 1) {
                Some(fresh) => z.copy_from(&fresh),
                None => return Ok(None),
            }
        } else {
            z.col_as_slice_mut(0).iter_mut().for_each(|x| *x /= beta);
        }
        v_basis.col_mut(j + 1).copy_from(z.col(0));
        betas.push(beta);

        let steps = j + 1;
        if steps < k || (!(steps - k).is_multiple_of(check_every) && steps != cap) {
            continue;
        }
        if let Some(svd) = ritz(&u_basis, &v_basis, &alphas, &betas, k)? {
            return Ok(Some(svd));
        }
    }
    Ok(None)
}

/// Ritz triplets of the current bidiagonalization, or `None` while any of the
/// leading `k` residuals exceeds the tolerance.
fn ritz(
    u_basis: &Mat<f64>,
    v_basis: &Mat<f64>,
    alphas: &[f64],
    betas: &[f64],
    k: usize,
) -> Result<Option<TruncatedSvd>> {
    let steps = alphas.len();
    let bidiag = Mat::<f64>::from_fn(steps, steps, |r, c| {
        if r == c {
            alphas[r]
        } else if c == r + 1 {
            betas[r]
        } else {
            0.0
        }
    });
    let svd = bidiag
        .thin_svd()
        .map_err(|e| Error::Backend(format!("{e:?}")))?;
    let s = svd.S().column_vector();
    let p = svd.U();
    let q = svd.V();
    let last_beta = betas[steps - 1];
    let top = s[0];
    for i in 0..k {
        let residual = (last_beta * p[(steps - 1, i)]).abs();
        if residual > RESIDUAL_TOL * top {
            return Ok(None);
        }
    }
    let mut left = Mat::<f64>::zeros(u_basis.nrows(), k);
    let mut right = Mat::<f64>::zeros(v_basis.nrows(), k);
    matmul(
        left.as_mut(),
        Accum::Replace,
        u_basis.subcols(0, steps),
        p.subcols(0, k),
        1.0,
        Par::Seq,
    );
    matmul(
        right.as_mut(),
        Accum::Replace,
        v_basis.subcols(0, steps),
        q.subcols(0, k),
        1.0,
        Par::Seq,
    );
    Ok(Some(TruncatedSvd {
        values: (0..k).map(|i| s[i]).collect(),
        left,
        right,
    }))
}

/// `a * b` for owned operands.
pub fn product(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::<f64>::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a, b, 1.0, Par::Seq);
    out
}

pub fn frobenius_norm(a: MatRef<'_, f64>) -> f64 {
    a.norm_l2()
}

/// Maximum absolute deviation of `QᵀQ` from the identity.
pub fn orthonormality_error(q: MatRef<'_, f64>) -> f64 {
    let gram = product(q.transpose(), q);
    let mut worst = 0.0_f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn column_dot(a: MatRef<'_, f64>, i: usize, b: MatRef<'_, f64>, j: usize) -> f64 {
    let (x, y) = (a.col(i), b.col(j));
    (0..x.nrows()).map(|r| x[r] * y[r]).sum()
}
