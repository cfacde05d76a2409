//! Dynamic control of the inducing set: novelty-gated additions,
//! budget-driven discards, and redundancy pruning.
//!
//! All three operations act on the joint belief through Cholesky block
//! insertion and deletion, so the factored representation never leaves
//! the belief's hands. Discard scoring ranks scalar points by the
//! information lost when their posterior conditional is replaced by
//! the prior conditional; deleting the lowest-scoring points is then
//! plain marginalization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::{gp_predict, novelty_at};
use crate::kernel::HeteroKernel;
use crate::model::JointBelief;

/// Thresholds governing the inducing set.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManagerConfig {
    /// Normalized novelty threshold for adding a point.
    pub eps_tol: f64,
    /// Maximum total number of scalar inducing points.
    pub budget: usize,
    /// Pruning decay factor: points with normalized leave-one-out
    /// variance below `rho * eps_tol` are redundant.
    pub rho: f64,
}

impl ManagerConfig {
    pub fn new(eps_tol: f64, budget: usize, rho: f64) -> Result<Self> {
        if !(eps_tol > 0.0) {
            return Err(Error::DimensionMismatch(format!(
                "eps_tol must be positive, got {eps_tol}"
            )));
        }
        if budget < 1 {
            return Err(Error::DimensionMismatch("budget must be at least 1".into()));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::DimensionMismatch(format!(
                "rho must lie in (0, 1), got {rho}"
            )));
        }
        Ok(Self {
            eps_tol,
            budget,
            rho,
        })
    }
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            eps_tol: 1e-2,
            budget: 30,
            rho: 0.1,
        }
    }
}

/// Adds the current GP input as an inducing point for every output
/// dimension whose normalized novelty exceeds `eps_tol`. Returns the
/// dimensions that were added.
///
/// The new scalar output joins the belief with its exact predictive
/// moments, so the joint distribution over everything already tracked
/// is unchanged.
pub fn maybe_add(
    belief: &mut JointBelief,
    kernel: &HeteroKernel,
    cfg: &ManagerConfig,
    x_mean: &DVector<f64>,
    c: &DVector<f64>,
) -> Result<Vec<usize>> {
    let mut added = Vec::new();
    for k in 0..kernel.n_dims() {
        let z = kernel.input_for(k, x_mean, c);
        let pts = belief.inducing().inputs(k);
        let accept = if pts.is_empty() {
            true
        } else {
            let gamma = novelty_at(belief, kernel, k, &z)?;
            let max_diag = pts
                .iter()
                .map(|p| kernel.variance_at(k, p))
                .fold(f64::NEG_INFINITY, f64::max);
            gamma / max_diag > cfg.eps_tol
        };
        if !accept {
            continue;
        }

        let pred = gp_predict(belief, kernel, &[(k, z.clone())])?;
        let at = belief.inducing().block_range(k).end;
        let n_u = belief.n_u();
        let dim = belief.dim();
        // Covariance of the new scalar with every existing joint row.
        let mut cross = DVector::zeros(dim);
        cross.rows_mut(0, n_u).copy_from(&pred.cross_u.row(0).transpose());
        cross
            .rows_mut(n_u, belief.d_x())
            .copy_from(&pred.cross_x.row(0).transpose());
        let sigma1 = DMatrix::from_column_slice(at, 1, cross.as_slice().split_at(at).0);
        let sigma2 = DMatrix::from_column_slice(dim - at, 1, cross.as_slice().split_at(at).1);

        let prior_pts = belief.inducing().inputs(k);
        let prior_cross = if prior_pts.is_empty() {
            DMatrix::zeros(0, 1)
        } else {
            kernel.eval_block(k, prior_pts, std::slice::from_ref(&z))?
        };
        let prior_var = kernel.variance_at(k, &z);

        belief.insert_inducing_row(
            k,
            z,
            pred.mean[0],
            &sigma1,
            pred.cov[(0, 0)],
            &sigma2,
            &prior_cross,
            prior_var,
        )?;
        added.push(k);
    }
    Ok(added)
}

/// Importance score of every scalar inducing point, in joint-row
/// order. A score of 1 marks a point whose posterior conditional still
/// equals its prior conditional (pure redundancy); larger scores mark
/// points carrying information.
pub fn discard_scores(belief: &JointBelief, kernel: &HeteroKernel) -> Result<Vec<f64>> {
    debug_assert_eq!(kernel.n_dims(), belief.inducing().n_dims());
    let n_u = belief.n_u();
    let joint = belief.covariance();
    let factor = belief.factor();
    let mut scores = vec![0.0; n_u];

    for k in 0..belief.inducing().n_dims() {
        let range = belief.inducing().block_range(k);
        let n_k = range.len();
        if n_k == 0 {
            continue;
        }
        // Prior precision of this dimension's block.
        let q_block = belief.kernel_chol(k).solve_spd(&DMatrix::identity(n_k, n_k));
        let s_block = joint.view((range.start, range.start), (n_k, n_k));
        let m_block = belief.u_mean_block(k);

        for j in 0..n_k {
            let d = range.start + j;
            let q_row: DVector<f64> = q_block.row(j).transpose();
            let q_dd = q_block[(j, j)];
            let delta1 = q_row.dot(&m_block).powi(2) / q_dd;
            let delta2 = (q_row.transpose() * s_block * &q_row)[(0, 0)] / q_dd;
            // Posterior precision diagonal from the joint factor.
            let mut e = DVector::zeros(belief.dim());
            e[d] = 1.0;
            let omega_dd = factor.solve_vec(&e).norm_squared();
            let delta3 = omega_dd.ln() - q_dd.ln();
            let s = delta1 + delta2 + delta3;
            if !s.is_finite() {
                return Err(Error::SingularKernelMatrix { dim: k });
            }
            scores[d] = s;
        }
    }
    Ok(scores)
}

/// Shrinks the inducing set to the budget by marginalizing out the
/// lowest-scoring scalar points. Ties fall to the oldest point.
pub fn enforce_budget(
    belief: &mut JointBelief,
    kernel: &HeteroKernel,
    cfg: &ManagerConfig,
) -> Result<()> {
    let n_u = belief.n_u();
    if n_u <= cfg.budget {
        return Ok(());
    }
    let scores = discard_scores(belief, kernel)?;
    let mut order: Vec<usize> = (0..n_u).collect();
    order.sort_by(|&a, &b| {
        let (ka, ja) = belief.inducing().locate(a);
        let (kb, jb) = belief.inducing().locate(b);
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap()
            .then(belief.inducing().age(ka, ja).cmp(&belief.inducing().age(kb, jb)))
    });
    let doomed: Vec<usize> = order[..n_u - cfg.budget].to_vec();
    belief.delete_inducing_rows(&doomed);
    Ok(())
}

/// Removes at most one redundant point per dimension: the one with the
/// smallest leave-one-out conditional variance, when that variance
/// falls below `rho * eps_tol` of the largest prior diagonal.
pub fn prune_redundant(
    belief: &mut JointBelief,
    kernel: &HeteroKernel,
    cfg: &ManagerConfig,
) -> Result<()> {
    let mut doomed = Vec::new();
    for k in 0..belief.inducing().n_dims() {
        let range = belief.inducing().block_range(k);
        let n_k = range.len();
        if n_k == 0 {
            continue;
        }
        // Leave-one-out variance is the inverse of the prior
        // precision's diagonal.
        let q_block = belief.kernel_chol(k).solve_spd(&DMatrix::identity(n_k, n_k));
        let max_diag = belief
            .inducing()
            .inputs(k)
            .iter()
            .map(|p| kernel.variance_at(k, p))
            .fold(f64::NEG_INFINITY, f64::max);
        let (j_min, gamma_min) = (0..n_k)
            .map(|j| (j, 1.0 / q_block[(j, j)]))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if gamma_min / max_diag < cfg.rho * cfg.eps_tol {
            doomed.push(range.start + j_min);
        }
    }
    belief.delete_inducing_rows(&doomed);
    Ok(())
}
