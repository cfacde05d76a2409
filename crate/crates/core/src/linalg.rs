//! Square-root linear algebra: Cholesky factorization, rank-one
//! updates/downdates, block insertion/deletion on factors, and thin QR.
//!
//! All covariance matrices in this crate are carried as lower-triangular
//! Cholesky factors. The operations here keep factors consistent under
//! the low-rank modifications the learning loop performs, so a dense
//! re-factorization is only ever needed as a fallback.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative pivot floor: a Cholesky pivot at or below
/// `PIVOT_FLOOR_REL * max_diag` counts as a factorization failure.
const PIVOT_FLOOR_REL: f64 = 1e-12;

/// Additive jitter applied to the diagonal on the single retry after a
/// failed factorization, relative to the largest diagonal entry.
const JITTER_REL: f64 = 1e-8;

/// Downdate failure threshold: the squared pivot after a downdate step
/// must stay above `DOWNDATE_FLOOR_REL * pivot²`.
const DOWNDATE_FLOOR_REL: f64 = 1e-14;

/// Lower-triangular Cholesky factor with positive diagonal.
///
/// The wrapped matrix is square, its strict upper triangle is exactly
/// zero, and every diagonal entry is strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct LowerTriangular {
    m: DMatrix<f64>,
}

impl TryFrom<DMatrix<f64>> for LowerTriangular {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        LowerTriangular::from_matrix(m)
    }
}

impl From<LowerTriangular> for DMatrix<f64> {
    fn from(l: LowerTriangular) -> Self {
        l.m
    }
}

impl LowerTriangular {
    /// Identity factor of dimension `n` (covariance = identity).
    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    /// Validates and wraps an explicit lower-triangular matrix.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "factor must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        for j in 0..m.ncols() {
            for i in 0..j {
                if m[(i, j)] != 0.0 {
                    return Err(Error::DimensionMismatch(format!(
                        "nonzero above-diagonal entry at ({i},{j})"
                    )));
                }
            }
            if !(m[(j, j)] > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    index: j,
                    pivot: m[(j, j)],
                });
            }
        }
        Ok(Self { m })
    }

    /// Wraps without validation; caller guarantees the invariants.
    pub(crate) fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        Self { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Reconstructs the full covariance `L·Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.m * self.m.transpose()
    }

    /// Solves `L·X = B` by forward substitution.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.m
            .solve_lower_triangular(b)
            .expect("factor has positive diagonal")
    }

    /// Solves `L·x = b` by forward substitution.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.m
            .solve_lower_triangular(b)
            .expect("factor has positive diagonal")
    }

    /// Solves `Lᵀ·X = B` by back substitution.
    pub fn solve_transpose(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.m
            .tr_solve_lower_triangular(b)
            .expect("factor has positive diagonal")
    }

    /// Solves `Lᵀ·x = b` by back substitution.
    pub fn solve_transpose_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.m
            .tr_solve_lower_triangular(b)
            .expect("factor has positive diagonal")
    }

    /// Solves `(L·Lᵀ)·X = B` with two triangular solves.
    pub fn solve_spd(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.solve_transpose(&self.solve(b))
    }

    /// Solves `(L·Lᵀ)·x = b` with two triangular solves.
    pub fn solve_spd_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.solve_transpose_vec(&self.solve_vec(b))
    }

    /// log det(L·Lᵀ) = 2·Σ log L_ii.
    pub fn log_det(&self) -> f64 {
        2.0 * self.m.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Cholesky factorization `S = L·Lᵀ` of a symmetric positive-definite
/// matrix. Only the lower triangle of `S` is read.
///
/// If a pivot falls at or below `1e-12 · max_diag(S)` the factorization
/// is retried once with `1e-8 · max_diag(S)` added to the diagonal;
/// a second failure is reported as [`Error::NotPositiveDefinite`].
pub fn cholesky(s: &DMatrix<f64>) -> Result<LowerTriangular> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "cholesky input must be square, got {}x{}",
            n,
            s.ncols()
        )));
    }
    if n == 0 {
        return Ok(LowerTriangular::from_matrix_unchecked(DMatrix::zeros(0, 0)));
    }
    let max_diag = (0..n).map(|i| s[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    if !(max_diag > 0.0) {
        return Err(Error::NotPositiveDefinite {
            index: 0,
            pivot: max_diag,
        });
    }
    let floor = PIVOT_FLOOR_REL * max_diag;
    match cholesky_attempt(s, floor) {
        Ok(l) => Ok(l),
        Err(_) => {
            let mut jittered = s.clone();
            let jitter = JITTER_REL * max_diag;
            for i in 0..n {
                jittered[(i, i)] += jitter;
            }
            cholesky_attempt(&jittered, floor)
                .map_err(|(index, pivot)| Error::NotPositiveDefinite { index, pivot })
        }
    }
}

/// Single factorization pass; fails with the offending pivot.
fn cholesky_attempt(
    s: &DMatrix<f64>,
    floor: f64,
) -> std::result::Result<LowerTriangular, (usize, f64)> {
    let n = s.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = s[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot <= floor {
            return Err((j, pivot));
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Ok(LowerTriangular::from_matrix_unchecked(l))
}

/// Rank-one Cholesky update: returns the factor of `L·Lᵀ + v·vᵀ`.
pub fn chol_update(l: &LowerTriangular, v: &DVector<f64>) -> LowerTriangular {
    let mut out = l.clone();
    let mut work = v.clone();
    update_in_place(&mut out.m, &mut work);
    out
}

/// Column-wise Cholesky update: factor of `L·Lᵀ + V·Vᵀ`.
pub fn chol_update_cols(l: &LowerTriangular, v: &DMatrix<f64>) -> LowerTriangular {
    assert_eq!(v.nrows(), l.dim(), "update columns must match factor dim");
    let mut out = l.clone();
    for c in 0..v.ncols() {
        let mut work = DVector::from(v.column(c).into_owned());
        update_in_place(&mut out.m, &mut work);
    }
    out
}

/// Rank-one Cholesky downdate: returns the factor of `L·Lᵀ − v·vᵀ`.
///
/// Fails with [`Error::DowndateBreaksPositivity`] when the downdated
/// matrix is no longer safely positive definite; `l` is left untouched.
pub fn chol_downdate(l: &LowerTriangular, v: &DVector<f64>) -> Result<LowerTriangular> {
    let mut out = l.clone();
    let mut work = v.clone();
    downdate_in_place(&mut out.m, &mut work)?;
    Ok(out)
}

/// Column-wise Cholesky downdate: factor of `L·Lᵀ − V·Vᵀ`.
pub fn chol_downdate_cols(l: &LowerTriangular, v: &DMatrix<f64>) -> Result<LowerTriangular> {
    if v.nrows() != l.dim() {
        return Err(Error::DimensionMismatch(format!(
            "downdate columns have {} rows, factor dim is {}",
            v.nrows(),
            l.dim()
        )));
    }
    let mut out = l.clone();
    for c in 0..v.ncols() {
        let mut work = DVector::from(v.column(c).into_owned());
        downdate_in_place(&mut out.m, &mut work)?;
    }
    Ok(out)
}

/// Standard Givens-based rank-one update (LINPACK `dchud` form).
/// `v` is used as workspace.
fn update_in_place(l: &mut DMatrix<f64>, v: &mut DVector<f64>) {
    let n = l.nrows();
    debug_assert_eq!(v.len(), n);
    for j in 0..n {
        let ljj = l[(j, j)];
        let vj = v[j];
        let r = ljj.hypot(vj);
        let c = r / ljj;
        let s = vj / ljj;
        l[(j, j)] = r;
        for i in (j + 1)..n {
            l[(i, j)] = (l[(i, j)] + s * v[i]) / c;
            v[i] = c * v[i] - s * l[(i, j)];
        }
    }
}

/// Hyperbolic-rotation rank-one downdate (Golub & Van Loan §6.5.4).
/// Fails when a pivot would drop below the relative floor.
fn downdate_in_place(l: &mut DMatrix<f64>, v: &mut DVector<f64>) -> Result<()> {
    let n = l.nrows();
    debug_assert_eq!(v.len(), n);
    for j in 0..n {
        let ljj = l[(j, j)];
        let vj = v[j];
        let r2 = ljj * ljj - vj * vj;
        if r2 < DOWNDATE_FLOOR_REL * ljj * ljj {
            return Err(Error::DowndateBreaksPositivity { index: j });
        }
        let r = r2.sqrt();
        let c = r / ljj;
        let s = vj / ljj;
        l[(j, j)] = r;
        for i in (j + 1)..n {
            l[(i, j)] = (l[(i, j)] - s * v[i]) / c;
            v[i] = c * v[i] - s * l[(i, j)];
        }
    }
    Ok(())
}

/// Inserts a block of `b` rows/columns into the covariance at row `at`
/// and returns the factor of the augmented matrix.
///
/// `sigma1` (at×b) holds cross-covariances with the preceding rows,
/// `sigma` (b×b) the new block's own covariance, and `sigma2`
/// ((n−at)×b) cross-covariances with the following rows. Runs in
/// O(b·n²) by downdating the trailing factor block instead of
/// re-factorizing.
pub fn chol_insert_block(
    l: &LowerTriangular,
    at: usize,
    sigma1: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    sigma2: &DMatrix<f64>,
) -> Result<LowerTriangular> {
    let n = l.dim();
    let b = sigma.nrows();
    if at > n {
        return Err(Error::DimensionMismatch(format!(
            "insert position {at} beyond dimension {n}"
        )));
    }
    if sigma.ncols() != b || sigma1.nrows() != at || sigma1.ncols() != b
        || sigma2.nrows() != n - at || sigma2.ncols() != b
    {
        return Err(Error::DimensionMismatch(
            "insert block shapes inconsistent with factor".into(),
        ));
    }

    let lm = l.matrix();
    let a = lm.view((0, 0), (at, at));
    let bm = lm.view((at, 0), (n - at, at));
    let c = lm.view((at, at), (n - at, n - at));

    // a_bar = (A⁻¹·sigma1)ᵀ, the new rows' leading factor block.
    let a_bar = a
        .solve_lower_triangular(sigma1)
        .expect("factor has positive diagonal")
        .transpose();
    // b_bar·b_barᵀ = sigma − a_bar·a_barᵀ (conditional block covariance).
    let b_bar = cholesky(&(sigma - &a_bar * a_bar.transpose()))?;
    // c_bar = [b_bar⁻¹·(sigma2ᵀ − a_bar·Bᵀ)]ᵀ.
    let rhs = sigma2.transpose() - &a_bar * bm.transpose();
    let c_bar = b_bar
        .matrix()
        .solve_lower_triangular(&rhs)
        .expect("factor has positive diagonal")
        .transpose();
    // The trailing block loses what the new rows now explain.
    let c_lower = LowerTriangular::from_matrix_unchecked(c.into_owned());
    let c_new = chol_downdate_cols(&c_lower, &c_bar)?;

    let m = n + b;
    let mut out = DMatrix::zeros(m, m);
    out.view_mut((0, 0), (at, at)).copy_from(&a);
    out.view_mut((at, 0), (b, at)).copy_from(&a_bar);
    out.view_mut((at, at), (b, b)).copy_from(b_bar.matrix());
    out.view_mut((at + b, 0), (n - at, at)).copy_from(&bm);
    out.view_mut((at + b, at), (n - at, b)).copy_from(&c_bar);
    out.view_mut((at + b, at + b), (n - at, n - at))
        .copy_from(c_new.matrix());
    Ok(LowerTriangular::from_matrix_unchecked(out))
}

/// Removes the given rows/columns from the covariance and returns the
/// factor of the remaining minor.
///
/// Scattered indices are deleted back-to-front so each step is the
/// contiguous single-row case; each deletion promotes the row's
/// explained mass back into the trailing block with a rank-one update.
pub fn chol_delete_block(l: &LowerTriangular, rows: &[usize]) -> LowerTriangular {
    let mut sorted: Vec<usize> = rows.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), rows.len(), "duplicate deletion indices");
    assert!(
        sorted.iter().all(|&r| r < l.dim()),
        "deletion index out of range"
    );

    let mut cur = l.clone();
    for &d in sorted.iter().rev() {
        cur = delete_single_row(&cur, d);
    }
    cur
}

fn delete_single_row(l: &LowerTriangular, d: usize) -> LowerTriangular {
    let n = l.dim();
    let lm = l.matrix();
    let t = n - d - 1;

    let c_bar = lm.view((d + 1, d), (t, 1)).into_owned();
    let c_trail = LowerTriangular::from_matrix_unchecked(lm.view((d + 1, d + 1), (t, t)).into_owned());
    let c_new = chol_update_cols(&c_trail, &c_bar);

    let mut out = DMatrix::zeros(n - 1, n - 1);
    out.view_mut((0, 0), (d, d)).copy_from(&lm.view((0, 0), (d, d)));
    out.view_mut((d, 0), (t, d)).copy_from(&lm.view((d + 1, 0), (t, d)));
    out.view_mut((d, d), (t, t)).copy_from(c_new.matrix());
    LowerTriangular::from_matrix_unchecked(out)
}

/// Thin QR: returns the upper-triangular `R` (cols×cols) of `M = QR`
/// with the diagonal normalized to be nonnegative, so `RᵀR = MᵀM`.
pub fn thin_qr(m: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(
        m.nrows() >= m.ncols(),
        "thin_qr needs rows >= cols, got {}x{}",
        m.nrows(),
        m.ncols()
    );
    let qr = m.clone().qr();
    let mut r = qr.r();
    for i in 0..r.nrows() {
        if r[(i, i)] < 0.0 {
            for j in i..r.ncols() {
                r[(i, j)] = -r[(i, j)];
            }
        }
    }
    r
}
