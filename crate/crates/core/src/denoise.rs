//! Spectral denoising of a single matrix under the spiked model
//! `Y = X + Z / sqrt(n)` with `m <= n` and `m / n -> beta`.
//!
//! This module holds the closed-form relations between signal singular values,
//! data singular values and singular-vector angles, the Marchenko-Pastur based
//! noise-scale estimator and the Frobenius-optimal shrinker. All formulas are
//! stated for the wide orientation (`m <= n`); callers with tall matrices get
//! the transpose handled for them.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::{self, TruncatedSvd};

/// Ratio of the smaller to the larger matrix dimension.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AspectRatio(f64);

impl AspectRatio {
    pub fn new(beta: f64) -> Result<Self> {
        if beta > 0.0 && beta <= 1.0 {
            Ok(Self(beta))
        } else {
            Err(Error::InvalidAspectRatio(beta))
        }
    }

    pub fn from_shape(n_rows: usize, n_cols: usize) -> Result<Self> {
        let (lo, hi) = (n_rows.min(n_cols), n_rows.max(n_cols));
        if lo == 0 {
            return Err(Error::Degenerate(format!("empty {n_rows}x{n_cols} matrix")));
        }
        Self::new(lo as f64 / hi as f64)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Data singular value at the edge of the noise bulk, `1 + sqrt(beta)`.
    pub fn bulk_edge(self) -> f64 {
        1.0 + self.0.sqrt()
    }

    /// Signal strength below which a component is asymptotically invisible,
    /// `beta^(1/4)`.
    pub fn signal_threshold(self) -> f64 {
        self.0.sqrt().sqrt()
    }
}

/// Which singular vectors of the wide orientation a formula refers to:
/// `Left` lives in the shorter dimension, `Right` in the longer one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Side of the row vectors of an `n_rows x n_cols` matrix.
    pub fn of_rows(n_rows: usize, n_cols: usize) -> Self {
        if n_rows <= n_cols {
            Side::Left
        } else {
            Side::Right
        }
    }

    /// Side of the column vectors of an `n_rows x n_cols` matrix.
    pub fn of_cols(n_rows: usize, n_cols: usize) -> Self {
        match Self::of_rows(n_rows, n_cols) {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

// ---------------------------------------------------------------------------
// Marchenko-Pastur median

fn mp_cache() -> &'static Mutex<HashMap<u64, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Median of the Marchenko-Pastur law with unit variance and ratio `beta`.
///
/// The CDF is integrated after substituting `x = a + (b - a)(1 - cos t) / 2`,
/// which turns the square-root edges of the density into a smooth integrand,
/// then the median is located by bisection in `t`. Results are memoized.
pub fn mp_median(beta: AspectRatio) -> f64 {
    let key = beta.0.to_bits();
    if let Some(q) = mp_cache().lock().expect("mp cache poisoned").get(&key) {
        return *q;
    }
    let q = compute_mp_median(beta.0);
    mp_cache()
        .lock()
        .expect("mp cache poisoned")
        .insert(key, q);
    q
}

fn mp_bounds(beta: f64) -> (f64, f64) {
    let s = beta.sqrt();
    ((1.0 - s) * (1.0 - s), (1.0 + s) * (1.0 + s))
}

fn compute_mp_median(beta: f64) -> f64 {
    let (lo, hi) = mp_bounds(beta);
    let half_width = 0.5 * (hi - lo);
    // (1 - cos t) / 2 written as sin^2(t / 2) to avoid cancellation near 0
    let x_of = |t: f64| lo + 2.0 * half_width * (0.5 * t).sin().powi(2);
    // density(x) dx in the angular variable
    let integrand = |t: f64| {
        let s = t.sin();
        let x = x_of(t);
        if x <= 0.0 {
            // only reachable at t = 0 when beta = 1; take the limit
            return half_width * half_width * 4.0 / (hi * 2.0 * PI * beta);
        }
        half_width * half_width * s * s / (2.0 * PI * beta * x)
    };
    let cdf = |t: f64| adaptive_simpson(&integrand, 0.0, t, 1e-13, 50);

    let (mut a, mut b) = (0.0_f64, PI);
    while b - a > 1e-13 {
        let mid = 0.5 * (a + b);
        if cdf(mid) < 0.5 {
            a = mid;
        } else {
            b = mid;
        }
    }
    x_of(0.5 * (a + b))
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let (d, e) = (0.5 * (a + c), 0.5 * (c + b));
    let (fd, fe) = (f(d), f(e));
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    // halving below roundoff would only force full-depth recursion
    let sub_tol = (0.5 * tol).max(4.0 * f64::EPSILON * whole.abs());
    simpson_step(f, a, c, fa, fc, fd, left, sub_tol, depth - 1)
        + simpson_step(f, c, b, fc, fb, fe, right, sub_tol, depth - 1)
}

// ---------------------------------------------------------------------------
// Noise scale and shrinkage

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Noise standard deviation of an `n_rows x n_cols` matrix `X + sigma Z`
/// from its full list of singular values.
pub fn estimate_noise_scale(values: &[f64], n_rows: usize, n_cols: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("no singular values".into()));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Degenerate("singular values must be finite and non-negative".into()));
    }
    let beta = AspectRatio::from_shape(n_rows, n_cols)?;
    let n = n_rows.max(n_cols) as f64;
    let med = median(values);
    if med <= 0.0 {
        return Err(Error::Degenerate("median singular value is zero".into()));
    }
    Ok(med / (n * mp_median(beta)).sqrt())
}

/// Frobenius-optimal shrinker for unit-noise data singular values.
pub fn shrink(y: f64, beta: AspectRatio) -> f64 {
    let b = beta.0;
    let upper = 1.0 + b.sqrt();
    if !(y >= upper) {
        return 0.0;
    }
    let lower = 1.0 - b.sqrt();
    // (y^2 - beta - 1)^2 - 4 beta, factored so that it is exactly zero at the edge
    let disc = (y - upper) * (y + upper) * (y - lower) * (y + lower);
    disc.max(0.0).sqrt() / y
}

/// Almost-sure limit of the data singular value for signal strength `x`.
pub fn asymptotic_data_sv(x: f64, beta: AspectRatio) -> f64 {
    let b = beta.0;
    if x > beta.signal_threshold() {
        ((x + 1.0 / x) * (x + b / x)).sqrt()
    } else {
        beta.bulk_edge()
    }
}

/// Limit of `|<empirical vector, signal vector>|` for signal strength `x`.
pub fn asymptotic_cosine(x: f64, beta: AspectRatio, side: Side) -> f64 {
    let b = beta.0;
    if x <= beta.signal_threshold() {
        return 0.0;
    }
    let x2 = x * x;
    let x4 = x2 * x2;
    let denom = match side {
        Side::Left => x4 + b * x2,
        Side::Right => x4 + x2,
    };
    ((x4 - b) / denom).clamp(0.0, 1.0).sqrt()
}

/// Signal strength whose asymptotic data singular value is `y`.
pub fn invert_data_sv(y: f64, beta: AspectRatio) -> Result<f64> {
    let b = beta.0;
    let edge = beta.bulk_edge();
    if !(y > edge) {
        return Err(Error::Subcritical {
            value: y,
            threshold: edge,
        });
    }
    let t = y * y - b - 1.0;
    let upper = edge;
    let lower = 1.0 - b.sqrt();
    let disc = ((y - upper) * (y + upper) * (y - lower) * (y + lower)).max(0.0);
    Ok((0.5 * (t + disc.sqrt())).sqrt())
}

// ---------------------------------------------------------------------------
// Matrix denoising

/// Shrinkage estimate of one matrix's low-rank signal.
#[derive(Debug, Clone)]
pub struct DenoiseResult {
    /// `shrink(y)` for every retained component, all strictly positive.
    pub shrunk_values: Vec<f64>,
    /// Raw data singular values `y` of the retained components.
    pub data_values: Vec<f64>,
    pub rank: usize,
    /// `n_rows x rank`.
    pub left_vectors: Mat<f64>,
    /// `n_cols x rank`.
    pub right_vectors: Mat<f64>,
    /// Noise scale estimated from the spectrum; `None` when the matrix is zero.
    pub noise_scale: Option<f64>,
    pub aspect: AspectRatio,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Complete spectrum from the values-only pass.
    pub spectrum: Vec<f64>,
}

impl DenoiseResult {
    /// Swaps the roles of rows and columns, as if `Mᵀ` had been denoised.
    pub fn transposed(&self) -> DenoiseResult {
        DenoiseResult {
            shrunk_values: self.shrunk_values.clone(),
            data_values: self.data_values.clone(),
            rank: self.rank,
            left_vectors: self.right_vectors.clone(),
            right_vectors: self.left_vectors.clone(),
            noise_scale: self.noise_scale,
            aspect: self.aspect,
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            spectrum: self.spectrum.clone(),
        }
    }

    /// `sum_l shrunk_l a_l b_lᵀ`.
    pub fn signal_estimate(&self) -> Mat<f64> {
        let mut scaled = self.left_vectors.clone();
        for (l, s) in self.shrunk_values.iter().enumerate() {
            scaled.col_mut(l).iter_mut().for_each(|x| *x *= s);
        }
        linalg::product(scaled.as_ref(), self.right_vectors.transpose())
    }
}

pub(crate) fn check_finite(matrix: MatRef<'_, f64>) -> Result<()> {
    for c in 0..matrix.ncols() {
        for r in 0..matrix.nrows() {
            if !matrix[(r, c)].is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Denoises a matrix already scaled to the unit-noise model.
///
/// Pass one computes singular values only; the rank is the number of values
/// with a positive shrunk value. Pass two computes exactly that many triplets.
pub fn denoise_matrix(matrix: MatRef<'_, f64>) -> Result<DenoiseResult> {
    check_finite(matrix)?;
    let spectrum = spectrum_of(matrix)?;
    denoise_with_spectrum(matrix, spectrum)
}

/// Values-only pass in the wide orientation.
pub(crate) fn spectrum_of(matrix: MatRef<'_, f64>) -> Result<Vec<f64>> {
    if matrix.nrows() <= matrix.ncols() {
        linalg::singular_values(matrix)
    } else {
        linalg::singular_values(matrix.transpose())
    }
}

/// Second pass of [`denoise_matrix`], reusing a spectrum computed elsewhere.
pub(crate) fn denoise_with_spectrum(
    matrix: MatRef<'_, f64>,
    mut spectrum: Vec<f64>,
) -> Result<DenoiseResult> {
    let (m, n) = (matrix.nrows(), matrix.ncols());
    let aspect = AspectRatio::from_shape(m, n)?;
    let top = spectrum.first().copied().unwrap_or(0.0);
    for v in spectrum.iter_mut() {
        if *v < 1e-12 * top {
            *v = 0.0;
        }
    }
    let noise_scale = estimate_noise_scale(&spectrum, m, n).ok();

    let mut data_values = Vec::new();
    let mut shrunk_values = Vec::new();
    for &y in &spectrum {
        let s = shrink(y, aspect);
        if s > 0.0 {
            data_values.push(y);
            shrunk_values.push(s);
        } else {
            break;
        }
    }
    let rank = shrunk_values.len();

    let svd = if m <= n {
        linalg::truncated_svd(matrix, rank)?
    } else {
        linalg::truncated_svd(matrix.transpose(), rank)?.transposed()
    };
    let TruncatedSvd { left, right, .. } = svd;
    Ok(DenoiseResult {
        shrunk_values,
        data_values,
        rank,
        left_vectors: left,
        right_vectors: right,
        noise_scale,
        aspect,
        n_rows: m,
        n_cols: n,
        spectrum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn beta(b: f64) -> AspectRatio {
        AspectRatio::new(b).unwrap()
    }

    // Independent oracle: CDF by adaptive Simpson in x = a + s^2 (a different
    // substitution and integration variable than the implementation), median by
    // bisection in x.
    fn oracle_mp_cdf(b: f64, q: f64) -> f64 {
        let (lo, hi) = mp_bounds(b);
        let f = |s: f64| {
            let x = lo + s * s;
            if x <= 0.0 {
                // beta = 1: 2 s^2 sqrt(4 - s^2) / (2 pi s^2)
                return (hi - x).max(0.0).sqrt() / PI;
            }
            2.0 * s * s * (hi - x).max(0.0).sqrt() / (2.0 * PI * b * x)
        };
        adaptive_simpson(&f, 0.0, (q - lo).max(0.0).sqrt(), 1e-14, 60)
    }

    fn oracle_mp_median(b: f64) -> f64 {
        let (mut lo, mut hi) = mp_bounds(b);
        while hi - lo > 1e-14 {
            let mid = 0.5 * (lo + hi);
            if oracle_mp_cdf(b, mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    // Values produced once by the oracle above (and cross-checked with a
    // 30-digit mpmath quadrature).
    const MP_MEDIAN_BETA_1: f64 = 0.652_775_941_633_570_4;
    const MP_MEDIAN_BETA_QUARTER: f64 = 0.916_004_070_686_612;

    #[test]
    fn oracle_reproduces_frozen_fixtures() {
        assert!((oracle_mp_median(1.0) - MP_MEDIAN_BETA_1).abs() < 1e-9);
        assert!((oracle_mp_median(0.25) - MP_MEDIAN_BETA_QUARTER).abs() < 1e-9);
    }

    #[test]
    fn mp_median_matches_fixtures() {
        assert!((mp_median(beta(1.0)) - MP_MEDIAN_BETA_1).abs() < 1e-9);
        let q = mp_median(beta(0.25));
        assert!((q - MP_MEDIAN_BETA_QUARTER).abs() < 1e-9);
        assert!((oracle_mp_cdf(0.25, q) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn mp_median_lies_inside_support() {
        for b in [1e-3, 0.05, 0.1, 0.3, 0.5, 0.75, 0.9, 1.0] {
            let q = mp_median(beta(b));
            let (lo, hi) = mp_bounds(b);
            assert!(q > lo && q < hi, "beta {b}: {q} not in ({lo}, {hi})");
            assert!((q - oracle_mp_median(b)).abs() < 1e-9, "beta {b}");
        }
    }

    #[test]
    fn aspect_ratio_domain() {
        assert!(AspectRatio::new(0.0).is_err());
        assert!(AspectRatio::new(1.5).is_err());
        assert!(AspectRatio::new(f64::NAN).is_err());
        assert_eq!(AspectRatio::from_shape(500, 250).unwrap().value(), 0.5);
    }

    #[test]
    fn noise_scale_is_positively_homogeneous() {
        let values: Vec<f64> = (1..=40).map(|i| (i as f64).sqrt()).collect();
        let base = estimate_noise_scale(&values, 40, 90).unwrap();
        let scaled: Vec<f64> = values.iter().map(|v| 3.5 * v).collect();
        let s = estimate_noise_scale(&scaled, 90, 40).unwrap();
        assert!((s - 3.5 * base).abs() < 1e-12 * s);
    }

    #[test]
    fn noise_scale_rejects_degenerate_spectra() {
        assert!(estimate_noise_scale(&[], 3, 3).is_err());
        assert!(estimate_noise_scale(&[0.0, 0.0, 0.0], 3, 3).is_err());
    }

    #[test]
    fn shrink_closed_forms() {
        for b in [0.01, 0.1, 0.25, 0.5, 0.9, 1.0] {
            assert_eq!(shrink(1.0 + f64::sqrt(b), beta(b)), 0.0);
        }
        // sqrt(5) is not representable; its correctly rounded image is 1 + 2 ulp
        assert!((shrink(5f64.sqrt(), beta(1.0)) - 1.0).abs() <= 4.0 * f64::EPSILON);
        assert_eq!(shrink(1.0, beta(0.25)), 0.0);
    }

    #[test]
    fn asymptotic_data_sv_examples() {
        assert_eq!(asymptotic_data_sv(0.5, beta(0.25)), 1.5);
        assert_eq!(asymptotic_data_sv(1.0, beta(1.0)), 2.0);
        let y = asymptotic_data_sv(2.0, beta(0.25));
        assert!((y - (2.5f64 * 2.125).sqrt()).abs() < 1e-15);
        assert!((y - 2.30489).abs() < 1e-5);
    }

    #[test]
    fn asymptotic_cosine_examples() {
        assert_eq!(asymptotic_cosine(0.5, beta(0.25), Side::Left), 0.0);
        assert_eq!(asymptotic_cosine(0.5, beta(0.25), Side::Right), 0.0);
        let c = asymptotic_cosine(2f64.sqrt(), beta(1.0), Side::Left);
        assert!((c - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(asymptotic_cosine(100.0, beta(1.0), Side::Left) >= 0.9999);
    }

    #[test]
    fn invert_data_sv_examples() {
        let x = invert_data_sv(2.0 + 1e-9, beta(1.0)).unwrap();
        assert!((x - 1.0).abs() < 1e-3);
        let x = invert_data_sv(2.30489, beta(0.25)).unwrap();
        assert!((x - 2.0).abs() < 1e-4);
        assert!(invert_data_sv(2.0, beta(1.0)).is_err());
        assert!(invert_data_sv(1.0, beta(0.25)).is_err());
        for b in [0.1, 0.5, 1.0] {
            for x in [1.1, 2.0, 5.0] {
                let y = asymptotic_data_sv(x, beta(b));
                assert!((invert_data_sv(y, beta(b)).unwrap() - x).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let z = Mat::<f64>::zeros(30, 50);
        let res = denoise_matrix(z.as_ref()).unwrap();
        assert_eq!(res.rank, 0);
        assert_eq!(res.left_vectors.ncols(), 0);
        assert_eq!(res.right_vectors.ncols(), 0);
        assert!(res.noise_scale.is_none());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut z = Mat::<f64>::zeros(5, 5);
        z[(2, 3)] = f64::NAN;
        assert!(matches!(
            denoise_matrix(z.as_ref()),
            Err(Error::NonFinite { row: 2, col: 3 })
        ));
    }

    proptest! {
        #[test]
        fn shrink_is_monotone_and_contracting(b in 0.01f64..=1.0, y1 in 0.0f64..20.0, y2 in 0.0f64..20.0) {
            let beta = AspectRatio::new(b).unwrap();
            let (lo, hi) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
            prop_assert!(shrink(lo, beta) <= shrink(hi, beta) + 1e-12);
            if hi > 0.0 {
                prop_assert!(shrink(hi, beta) < hi);
            }
        }

        #[test]
        fn inversion_round_trips(b in 0.01f64..=1.0, t in 0.001f64..20.0) {
            let beta = AspectRatio::new(b).unwrap();
            let x = beta.signal_threshold() + t;
            let y = asymptotic_data_sv(x, beta);
            prop_assert!((invert_data_sv(y, beta).unwrap() - x).abs() < 1e-10 * x.max(1.0));
        }

        #[test]
        fn left_cosine_dominates_right(b in 0.01f64..=1.0, x in 0.0f64..20.0) {
            let beta = AspectRatio::new(b).unwrap();
            let l = asymptotic_cosine(x, beta, Side::Left);
            let r = asymptotic_cosine(x, beta, Side::Right);
            prop_assert!(l >= r - 1e-15);
            if b == 1.0 {
                prop_assert!((l - r).abs() < 1e-15);
            }
        }
    }
}
