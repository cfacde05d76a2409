//! Online kernel-hyperparameter adaptation.
//!
//! The posterior over inducing values `N(m_u, S_uu)` is split into the
//! prior under the current hyperparameters and an effective likelihood,
//! the cavity construction used by online sparse Gaussian processes
//! (Csato & Opper, 2002). The effective-likelihood precision
//! `P = S_uu^{-1} - K_uu^{-1}` is restricted to its positive eigenspace
//! `P = V D V^T`, which turns the information the posterior holds beyond
//! the prior into a rank-`r` pseudo observation `y = D^{-1/2} V^T
//! S_uu^{-1} m_u` of `R u` with unit noise, where `R = D^{1/2} V^T`.
//! Candidate hyperparameters are rated by the marginal likelihood of
//! that observation, `log N(y | 0, R K(theta) R^T + I)`, and adapted by
//! gradient ascent in log space so positivity is automatic.
//!
//! The cavity itself is always built from the belief's cached kernel
//! factors, so it stays fixed at the hyperparameters the belief was
//! conditioned under while `theta` varies inside the objective.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inducing::{prune_redundant, ManagerConfig};
use crate::kernel::HeteroKernel;
use crate::linalg::{self, LowerTriangular};
use crate::model::JointBelief;

/// Eigenvalues of the effective-likelihood precision below this
/// fraction of the largest magnitude are treated as zero rank.
const EIG_FLOOR_REL: f64 = 1e-12;

/// Schedule and rate for the online hyperparameter ascent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperOptConfig {
    /// Master switch; when false `hyper_step` is a no-op.
    pub enabled: bool,
    /// Gradient-ascent rate in log-hyperparameter space.
    pub step_size: f64,
    /// Ascent iterations performed per invocation.
    pub steps_per_update: usize,
    /// Measurements between invocations; consumed by the caller's
    /// schedule, not inside `hyper_step`.
    pub update_period: usize,
}

impl Default for HyperOptConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            step_size: 1e-2,
            steps_per_update: 1,
            update_period: 1,
        }
    }
}

impl HyperOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::DimensionMismatch(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// Rank-reduced pseudo observation recovered from the posterior: the
/// rows of `r_rows` map inducing values to the observed subspace and
/// `y` is the observation with unit noise there.
struct Cavity {
    r_rows: DMatrix<f64>,
    y: DVector<f64>,
}

fn build_cavity(belief: &JointBelief) -> Result<Cavity> {
    let n_u = belief.n_u();
    if n_u == 0 {
        return Err(Error::Degenerate(
            "no inducing points to recover a likelihood from".into(),
        ));
    }

    let a = LowerTriangular::from_matrix_unchecked(
        belief.factor().matrix().view((0, 0), (n_u, n_u)).into_owned(),
    );
    let s_inv = a.solve_transpose(&a.solve(&DMatrix::identity(n_u, n_u)));
    let m_u = belief.mean().rows(0, n_u).into_owned();
    let s_inv_m = a.solve_transpose_vec(&a.solve_vec(&m_u));

    let mut p = s_inv;
    for k in 0..belief.inducing().n_dims() {
        let range = belief.inducing().block_range(k);
        if range.is_empty() {
            continue;
        }
        let n_k = range.len();
        let l_k = belief.kernel_chol(k);
        let k_inv = l_k.solve_transpose(&l_k.solve(&DMatrix::identity(n_k, n_k)));
        let mut block = p.view_mut((range.start, range.start), (n_k, n_k));
        block -= &k_inv;
    }
    let p = (&p + p.transpose()) * 0.5;

    let eig = SymmetricEigen::new(p);
    let max_abs = eig.eigenvalues.amax();
    let floor = EIG_FLOOR_REL * max_abs;
    let kept: Vec<usize> = (0..n_u)
        .filter(|&i| eig.eigenvalues[i] > floor && eig.eigenvalues[i] > 0.0)
        .collect();
    if kept.is_empty() {
        return Err(Error::Degenerate(
            "posterior carries no information beyond the prior".into(),
        ));
    }

    let r = kept.len();
    let mut r_rows = DMatrix::zeros(r, n_u);
    let mut y = DVector::zeros(r);
    for (row, &i) in kept.iter().enumerate() {
        let lam = eig.eigenvalues[i];
        let v = eig.eigenvectors.column(i);
        let sqrt_lam = lam.sqrt();
        r_rows.row_mut(row).copy_from(&(v.transpose() * sqrt_lam));
        y[row] = v.dot(&s_inv_m) / sqrt_lam;
    }
    Ok(Cavity { r_rows, y })
}

fn cavity_objective(
    cavity: &Cavity,
    belief: &JointBelief,
    kernel: &HeteroKernel,
) -> Result<(f64, Vec<f64>)> {
    let n_u = belief.n_u();
    let r = cavity.y.len();

    let mut k_uu = DMatrix::zeros(n_u, n_u);
    for k in 0..kernel.n_dims() {
        let range = belief.inducing().block_range(k);
        if range.is_empty() {
            continue;
        }
        let z = belief.inducing().inputs(k);
        let block = kernel.eval_block(k, z, z)?;
        k_uu.view_mut((range.start, range.start), (range.len(), range.len()))
            .copy_from(&block);
    }

    let c = &cavity.r_rows * &k_uu * cavity.r_rows.transpose() + DMatrix::identity(r, r);
    let c_chol = linalg::cholesky(&c)?;
    let alpha = c_chol.solve_spd_vec(&cavity.y);
    let objective = -0.5
        * ((r as f64) * (2.0 * std::f64::consts::PI).ln()
            + c_chol.log_det()
            + cavity.y.dot(&alpha));

    let mut grad = Vec::new();
    for k in 0..kernel.n_dims() {
        let n_h = kernel.dim(k).kind.n_hyper();
        let range = belief.inducing().block_range(k);
        if range.is_empty() {
            grad.extend(std::iter::repeat(0.0).take(n_h));
            continue;
        }
        let n_k = range.len();
        let r_k = cavity.r_rows.columns(range.start, n_k).into_owned();
        let v = r_k.transpose() * &alpha;
        let m_k = r_k.transpose() * c_chol.solve_spd(&r_k);
        let z = belief.inducing().inputs(k);
        for g in kernel.grad_hyper(k, z, z)? {
            let quad = v.dot(&(&g * &v));
            let trace = g.component_mul(&m_k).sum();
            grad.push(0.5 * (quad - trace));
        }
    }
    Ok((objective, grad))
}

/// Scores hyperparameters `theta` against the likelihood recovered from
/// the current posterior and returns the objective together with its
/// gradient w.r.t. every log hyperparameter, concatenated over output
/// dimensions in order.
///
/// The recovered pseudo observation is anchored to the belief's cached
/// kernel factors; only the prior covariance `K(theta)` inside the
/// marginal varies with `kernel`, so finite differences of this
/// function match the returned gradient.
pub fn recovered_likelihood_objective(
    belief: &JointBelief,
    kernel: &HeteroKernel,
) -> Result<(f64, Vec<f64>)> {
    let cavity = build_cavity(belief)?;
    cavity_objective(&cavity, belief, kernel)
}

/// One scheduled hyperparameter update: `steps_per_update` ascent steps
/// on the recovered-likelihood objective, a kernel-cache refresh when
/// anything moved, and a redundancy prune. The belief's mean and factor
/// are never touched. A degenerate cavity (posterior equal to the
/// prior, or an empty inducing set) skips the ascent silently.
pub fn hyper_step(
    belief: &mut JointBelief,
    kernel: &mut HeteroKernel,
    cfg: &HyperOptConfig,
    manager: &ManagerConfig,
) -> Result<()> {
    if !cfg.enabled {
        return Ok(());
    }
    cfg.validate()?;

    let mut changed = false;
    for _ in 0..cfg.steps_per_update {
        let grad = match recovered_likelihood_objective(belief, kernel) {
            Ok((_, grad)) => grad,
            Err(Error::Degenerate(_)) => break,
            Err(e) => return Err(e),
        };
        let mut moved = false;
        let mut off = 0;
        for k in 0..kernel.n_dims() {
            let n_h = kernel.dim(k).kind.n_hyper();
            let cur = kernel.log_hyper(k);
            if cur.len() == n_h && n_h > 0 {
                let mut next = cur;
                let mut dim_moved = false;
                for j in 0..n_h {
                    let step = cfg.step_size * grad[off + j];
                    if step != 0.0 {
                        dim_moved = true;
                    }
                    next[j] += step;
                }
                if dim_moved {
                    kernel.set_log_hyper(k, &next)?;
                    moved = true;
                }
            }
            off += n_h;
        }
        changed |= moved;
        if !moved {
            break;
        }
    }
    if changed {
        belief.refresh_kernel_cache(kernel)?;
    }
    prune_redundant(belief, kernel, manager)
}
