//! State-space model definition and the joint Gaussian belief.
//!
//! The belief covers the vector `(u, x)`: all scalar inducing outputs
//! first (grouped by output dimension, dimension-major), then the
//! latent state. Its covariance is carried exclusively as a
//! lower-triangular Cholesky factor; prediction and correction write
//! new factor blocks instead of dense covariances.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::HeteroKernel;
use crate::linalg::{self, LowerTriangular};

/// Central finite-difference step scale for fallback Jacobians.
const FD_STEP: f64 = 1e-6;

type TransitionFn = dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type MeasurementFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type TransitionJacFn = dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
type MeasurementJacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// The known structure of the state-space model: transition skeleton
/// `F(x, c, f)`, measurement map `g(x)`, and noise covariances.
///
/// Jacobian providers are optional; central finite differences with
/// step `1e-6·(1+|·|)` fill in when absent.
#[derive(Clone)]
pub struct ModelSpec {
    pub d_x: usize,
    pub d_c: usize,
    pub d_f: usize,
    pub d_y: usize,
    transition: Arc<TransitionFn>,
    measurement: Arc<MeasurementFn>,
    sigma_p: DMatrix<f64>,
    sigma_m: DMatrix<f64>,
    sigma_p_chol: LowerTriangular,
    sigma_m_chol: LowerTriangular,
    jac_transition_x: Option<Arc<TransitionJacFn>>,
    jac_transition_f: Option<Arc<TransitionJacFn>>,
    jac_measurement_x: Option<Arc<MeasurementJacFn>>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("d_x", &self.d_x)
            .field("d_c", &self.d_c)
            .field("d_f", &self.d_f)
            .field("d_y", &self.d_y)
            .finish()
    }
}

impl ModelSpec {
    pub fn new(
        d_x: usize,
        d_c: usize,
        d_f: usize,
        d_y: usize,
        transition: Arc<TransitionFn>,
        measurement: Arc<MeasurementFn>,
        sigma_p: DMatrix<f64>,
        sigma_m: DMatrix<f64>,
    ) -> Result<Self> {
        if sigma_p.nrows() != d_x || sigma_p.ncols() != d_x {
            return Err(Error::DimensionMismatch(format!(
                "process noise must be {d_x}x{d_x}"
            )));
        }
        if sigma_m.nrows() != d_y || sigma_m.ncols() != d_y {
            return Err(Error::DimensionMismatch(format!(
                "measurement noise must be {d_y}x{d_y}"
            )));
        }
        let sigma_p_chol = linalg::cholesky(&sigma_p)?;
        let sigma_m_chol = linalg::cholesky(&sigma_m)?;
        Ok(Self {
            d_x,
            d_c,
            d_f,
            d_y,
            transition,
            measurement,
            sigma_p,
            sigma_m,
            sigma_p_chol,
            sigma_m_chol,
            jac_transition_x: None,
            jac_transition_f: None,
            jac_measurement_x: None,
        })
    }

    /// Registers analytic transition Jacobians `∂F/∂x` and `∂F/∂f`.
    pub fn with_transition_jacobians(
        mut self,
        jac_x: Arc<TransitionJacFn>,
        jac_f: Arc<TransitionJacFn>,
    ) -> Self {
        self.jac_transition_x = Some(jac_x);
        self.jac_transition_f = Some(jac_f);
        self
    }

    /// Registers the analytic measurement Jacobian `∂g/∂x`.
    pub fn with_measurement_jacobian(mut self, jac: Arc<MeasurementJacFn>) -> Self {
        self.jac_measurement_x = Some(jac);
        self
    }

    pub fn transition(&self, x: &DVector<f64>, c: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        (self.transition)(x, c, f)
    }

    pub fn measurement(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.measurement)(x)
    }

    pub fn sigma_p(&self) -> &DMatrix<f64> {
        &self.sigma_p
    }

    pub fn sigma_m(&self) -> &DMatrix<f64> {
        &self.sigma_m
    }

    pub fn sigma_p_chol(&self) -> &LowerTriangular {
        &self.sigma_p_chol
    }

    pub fn sigma_m_chol(&self) -> &LowerTriangular {
        &self.sigma_m_chol
    }

    /// `∂F/∂x` at `(x, c, f)`.
    pub fn jac_f_x(&self, x: &DVector<f64>, c: &DVector<f64>, f: &DVector<f64>) -> DMatrix<f64> {
        if let Some(j) = &self.jac_transition_x {
            return j(x, c, f);
        }
        central_fd(self.d_x, x, |xp| (self.transition)(xp, c, f))
    }

    /// `∂F/∂f` at `(x, c, f)`.
    pub fn jac_f_f(&self, x: &DVector<f64>, c: &DVector<f64>, f: &DVector<f64>) -> DMatrix<f64> {
        if let Some(j) = &self.jac_transition_f {
            return j(x, c, f);
        }
        central_fd(self.d_x, f, |fp| (self.transition)(x, c, fp))
    }

    /// `∂g/∂x` at `x`.
    pub fn jac_g_x(&self, x: &DVector<f64>) -> DMatrix<f64> {
        if let Some(j) = &self.jac_measurement_x {
            return j(x);
        }
        central_fd(self.d_y, x, |xp| (self.measurement)(xp))
    }
}

/// Central finite-difference Jacobian with per-coordinate step
/// `1e-6·(1+|v_i|)`.
fn central_fd<F: Fn(&DVector<f64>) -> DVector<f64>>(
    out_dim: usize,
    at: &DVector<f64>,
    f: F,
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(out_dim, at.len());
    for j in 0..at.len() {
        let h = FD_STEP * (1.0 + at[j].abs());
        let mut p = at.clone();
        let mut m = at.clone();
        p[j] += h;
        m[j] -= h;
        let col = (f(&p) - f(&m)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// The inducing inputs, grouped by output dimension.
///
/// Scalar inducing outputs occupy joint-belief rows `0..n_u` in
/// dimension-major order: all of dimension 0's points first, then
/// dimension 1's, and so on. Each point carries an insertion counter
/// used for oldest-first tie-breaking when discarding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducingSet {
    inputs: Vec<Vec<DVector<f64>>>,
    ages: Vec<Vec<u64>>,
    next_age: u64,
}

impl InducingSet {
    pub fn new(n_dims: usize) -> Self {
        Self {
            inputs: vec![Vec::new(); n_dims],
            ages: vec![Vec::new(); n_dims],
            next_age: 0,
        }
    }

    /// Builds a set from per-dimension input lists; ages follow
    /// dimension-major order.
    pub fn from_inputs(inputs: Vec<Vec<DVector<f64>>>) -> Self {
        let mut next_age = 0;
        let ages = inputs
            .iter()
            .map(|pts| {
                pts.iter()
                    .map(|_| {
                        let a = next_age;
                        next_age += 1;
                        a
                    })
                    .collect()
            })
            .collect();
        Self {
            inputs,
            ages,
            next_age,
        }
    }

    /// Rebuilds a set with explicit age bookkeeping, for restoring a
    /// saved run. `next_age` must exceed every recorded age.
    pub(crate) fn from_saved(
        inputs: Vec<Vec<DVector<f64>>>,
        ages: Vec<Vec<u64>>,
        next_age: u64,
    ) -> Self {
        Self {
            inputs,
            ages,
            next_age,
        }
    }

    pub fn n_dims(&self) -> usize {
        self.inputs.len()
    }

    pub fn count(&self, k: usize) -> usize {
        self.inputs[k].len()
    }

    pub fn total(&self) -> usize {
        self.inputs.iter().map(Vec::len).sum()
    }

    pub fn inputs(&self, k: usize) -> &[DVector<f64>] {
        &self.inputs[k]
    }

    pub fn age(&self, k: usize, j: usize) -> u64 {
        self.ages[k][j]
    }

    /// Age the next accepted point will receive.
    pub fn next_age(&self) -> u64 {
        self.next_age
    }

    /// First joint-belief row of dimension `k`'s block.
    pub fn offset(&self, k: usize) -> usize {
        self.inputs[..k].iter().map(Vec::len).sum()
    }

    /// Joint-belief rows occupied by dimension `k`.
    pub fn block_range(&self, k: usize) -> Range<usize> {
        let start = self.offset(k);
        start..start + self.count(k)
    }

    /// Joint-belief row of point `j` in dimension `k`.
    pub fn row_of(&self, k: usize, j: usize) -> usize {
        assert!(j < self.count(k));
        self.offset(k) + j
    }

    /// Inverse of [`Self::row_of`].
    pub fn locate(&self, row: usize) -> (usize, usize) {
        let mut r = row;
        for (k, pts) in self.inputs.iter().enumerate() {
            if r < pts.len() {
                return (k, r);
            }
            r -= pts.len();
        }
        panic!("row {row} beyond {} inducing rows", self.total());
    }

    /// Appends a point at the end of dimension `k`'s block and returns
    /// the joint row it now occupies.
    pub(crate) fn push(&mut self, k: usize, z: DVector<f64>) -> usize {
        self.inputs[k].push(z);
        self.ages[k].push(self.next_age);
        self.next_age += 1;
        self.offset(k) + self.count(k) - 1
    }

    pub(crate) fn remove(&mut self, k: usize, j: usize) {
        self.inputs[k].remove(j);
        self.ages[k].remove(j);
    }
}

/// Joint Gaussian belief over `(u, x)`: mean vector, Cholesky factor of
/// the covariance (inducing block first), the inducing inputs, and
/// cached per-dimension factors of the prior Gram matrices.
#[derive(Debug, Clone)]
pub struct JointBelief {
    mean: DVector<f64>,
    factor: LowerTriangular,
    inducing: InducingSet,
    kernel_chols: Vec<LowerTriangular>,
    d_x: usize,
}

impl JointBelief {
    /// Starts a belief with an empty inducing set and the given state
    /// prior.
    pub fn new(kernel: &HeteroKernel, x_mean: DVector<f64>, x_cov: &DMatrix<f64>) -> Result<Self> {
        let d_x = x_mean.len();
        if x_cov.nrows() != d_x || x_cov.ncols() != d_x {
            return Err(Error::DimensionMismatch(format!(
                "state covariance must be {d_x}x{d_x}"
            )));
        }
        let factor = linalg::cholesky(x_cov)?;
        let n_dims = kernel.n_dims();
        Ok(Self {
            mean: x_mean,
            factor,
            inducing: InducingSet::new(n_dims),
            kernel_chols: vec![LowerTriangular::identity(0); n_dims],
            d_x,
        })
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn n_u(&self) -> usize {
        self.inducing.total()
    }

    /// Total belief dimension `n_u + d_x`.
    pub fn dim(&self) -> usize {
        self.n_u() + self.d_x
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn factor(&self) -> &LowerTriangular {
        &self.factor
    }

    pub fn inducing(&self) -> &InducingSet {
        &self.inducing
    }

    pub fn x_mean(&self) -> DVector<f64> {
        self.mean.rows(self.n_u(), self.d_x).into_owned()
    }

    pub fn u_mean(&self) -> DVector<f64> {
        self.mean.rows(0, self.n_u()).into_owned()
    }

    /// Mean entries of dimension `k`'s inducing block.
    pub fn u_mean_block(&self, k: usize) -> DVector<f64> {
        let r = self.inducing.block_range(k);
        self.mean.rows(r.start, r.len()).into_owned()
    }

    /// Dense joint covariance `L·Lᵀ` (test/diagnostic path).
    pub fn covariance(&self) -> DMatrix<f64> {
        self.factor.reconstruct()
    }

    /// Dense marginal state covariance.
    pub fn x_cov(&self) -> DMatrix<f64> {
        let n_u = self.n_u();
        let rows = self.factor.matrix().rows(n_u, self.d_x);
        &rows * rows.transpose()
    }

    /// Cached Cholesky factor of `K(Zᵏ, Zᵏ)`.
    pub fn kernel_chol(&self, k: usize) -> &LowerTriangular {
        &self.kernel_chols[k]
    }

    /// Rebuilds every per-dimension Gram factor from scratch. Must be
    /// called after kernel hyperparameters change; belief moments are
    /// left untouched.
    pub fn refresh_kernel_cache(&mut self, kernel: &HeteroKernel) -> Result<()> {
        for k in 0..self.inducing.n_dims() {
            let pts = self.inducing.inputs(k);
            if pts.is_empty() {
                self.kernel_chols[k] = LowerTriangular::identity(0);
                continue;
            }
            let gram = kernel.eval_block(k, pts, pts)?;
            self.kernel_chols[k] =
                linalg::cholesky(&gram).map_err(|_| Error::SingularKernelMatrix { dim: k })?;
        }
        Ok(())
    }

    /// Inserts one scalar inducing output for dimension `k`.
    ///
    /// `mean_val` is its predicted mean; `sigma1`/`sigma2` are its
    /// covariances with the joint rows before/after the insertion row;
    /// `sigma` its own variance; `prior_cross` the prior kernel column
    /// against dimension `k`'s existing inputs and `prior_var` its
    /// prior variance (used to extend the Gram cache).
    pub(crate) fn insert_inducing_row(
        &mut self,
        k: usize,
        z: DVector<f64>,
        mean_val: f64,
        sigma1: &DMatrix<f64>,
        sigma: f64,
        sigma2: &DMatrix<f64>,
        prior_cross: &DMatrix<f64>,
        prior_var: f64,
    ) -> Result<()> {
        let at = self.inducing.offset(k) + self.inducing.count(k);
        debug_assert_eq!(sigma1.nrows(), at);
        debug_assert_eq!(sigma2.nrows(), self.dim() - at);

        // Extend the per-dimension Gram factor first so a singular
        // kernel rejects the insertion before the belief mutates.
        let n_k = self.inducing.count(k);
        let new_gram_chol = linalg::chol_insert_block(
            &self.kernel_chols[k],
            n_k,
            prior_cross,
            &DMatrix::from_element(1, 1, prior_var),
            &DMatrix::zeros(0, 1),
        )
        .map_err(|_| Error::SingularKernelMatrix { dim: k })?;

        let new_factor = linalg::chol_insert_block(
            &self.factor,
            at,
            sigma1,
            &DMatrix::from_element(1, 1, sigma),
            sigma2,
        )?;

        self.kernel_chols[k] = new_gram_chol;
        self.factor = new_factor;
        let mut mean = DVector::zeros(self.mean.len() + 1);
        mean.rows_mut(0, at).copy_from(&self.mean.rows(0, at));
        mean[at] = mean_val;
        mean.rows_mut(at + 1, self.mean.len() - at)
            .copy_from(&self.mean.rows(at, self.mean.len() - at));
        self.mean = mean;
        self.inducing.push(k, z);
        Ok(())
    }

    /// Deletes the given scalar inducing rows (joint-row indices,
    /// each < n_u). The deleted variables are marginalized out.
    pub(crate) fn delete_inducing_rows(&mut self, rows: &[usize]) {
        if rows.is_empty() {
            return;
        }
        assert!(rows.iter().all(|&r| r < self.n_u()));
        let located: Vec<(usize, usize)> = rows.iter().map(|&r| self.inducing.locate(r)).collect();

        self.factor = linalg::chol_delete_block(&self.factor, rows);
        let keep: Vec<usize> = (0..self.mean.len()).filter(|i| !rows.contains(i)).collect();
        self.mean = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.mean[i]));

        // Per-dimension cache deletions, local indices back-to-front.
        let mut by_dim: Vec<Vec<usize>> = vec![Vec::new(); self.inducing.n_dims()];
        for (k, j) in &located {
            by_dim[*k].push(*j);
        }
        for (k, mut local) in by_dim.into_iter().enumerate() {
            if local.is_empty() {
                continue;
            }
            local.sort_unstable();
            self.kernel_chols[k] = linalg::chol_delete_block(&self.kernel_chols[k], &local);
            for &j in local.iter().rev() {
                self.inducing.remove(k, j);
            }
        }
    }

    /// Installs a prediction result: new state mean and the factor's
    /// lower blocks. The inducing block `A` (and with it `m_u`, `S_uu`)
    /// is untouched, matching the marginalization structure of the
    /// prediction step.
    pub(crate) fn set_predicted(
        &mut self,
        x_mean: DVector<f64>,
        b_new: &DMatrix<f64>,
        c_new: &LowerTriangular,
    ) {
        let n_u = self.n_u();
        debug_assert_eq!(x_mean.len(), self.d_x);
        debug_assert_eq!(b_new.nrows(), self.d_x);
        debug_assert_eq!(b_new.ncols(), n_u);
        debug_assert_eq!(c_new.dim(), self.d_x);
        self.mean.rows_mut(n_u, self.d_x).copy_from(&x_mean);
        let mut m = self.factor.matrix().clone();
        m.view_mut((n_u, 0), (self.d_x, n_u)).copy_from(b_new);
        m.view_mut((n_u, n_u), (self.d_x, self.d_x))
            .copy_from(c_new.matrix());
        self.factor = LowerTriangular::from_matrix_unchecked(m);
    }

    /// Replaces the full mean and factor (measurement updates, dense
    /// fallbacks).
    pub(crate) fn set_moments(&mut self, mean: DVector<f64>, factor: LowerTriangular) {
        debug_assert_eq!(mean.len(), self.dim());
        debug_assert_eq!(factor.dim(), self.dim());
        self.mean = mean;
        self.factor = factor;
    }

    /// Rebuilds a belief from explicit moments and inducing inputs
    /// (warm starts, snapshot restore, test fixtures). The factor must
    /// cover `inducing.total() + d_x` rows with the inducing block
    /// first; Gram caches are recomputed from the kernel.
    pub fn from_parts(
        mean: DVector<f64>,
        factor: LowerTriangular,
        inducing: InducingSet,
        kernel: &HeteroKernel,
        d_x: usize,
    ) -> Result<Self> {
        if inducing.n_dims() != kernel.n_dims() {
            return Err(Error::DimensionMismatch(
                "inducing set and kernel disagree on output dims".into(),
            ));
        }
        if mean.len() != inducing.total() + d_x || factor.dim() != mean.len() {
            return Err(Error::DimensionMismatch(
                "mean/factor size inconsistent with inducing set".into(),
            ));
        }
        let mut b = Self {
            mean,
            factor,
            inducing,
            kernel_chols: vec![LowerTriangular::identity(0); kernel.n_dims()],
            d_x,
        };
        b.refresh_kernel_cache(kernel)?;
        Ok(b)
    }
}
