//! Linearized (extended Kalman) prediction.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::gp::GpEvaluator;
use crate::kernel::HeteroKernel;
use crate::linalg::{self, LowerTriangular};
use crate::model::{JointBelief, ModelSpec};

use super::StepStats;

/// One linearized prediction step.
///
/// The GP output is folded into the transition Jacobians: with
/// `mu(x, u)` the posterior mean function, the state row of the joint
/// map linearizes to `A_x = dF/dx + dF/df * dmu/dx` against the state
/// and `A_u = dF/df * dmu/du` against the inducing outputs. The
/// conditional GP variance at the mean enters the effective process
/// noise. The inducing blocks of mean and factor are untouched.
pub fn predict_ekf(
    belief: &mut JointBelief,
    kernel: &HeteroKernel,
    model: &ModelSpec,
    c: &DVector<f64>,
) -> Result<StepStats> {
    let n_u = belief.n_u();
    let d_x = belief.d_x();
    let m_x = belief.x_mean();
    let m_u = belief.u_mean();

    let eval = GpEvaluator::new(belief, kernel, c.clone());
    let m_f = eval.mean_at(&m_x, &m_u)?;
    let x_next = model.transition(&m_x, c, &m_f);

    let a_f = model.jac_f_f(&m_x, c, &m_f);
    let a_x = model.jac_f_x(&m_x, c, &m_f) + &a_f * eval.mean_jac_x(&m_x, &m_u)?;
    let a_u = &a_f * eval.mean_jac_u(&m_x)?;

    // Effective process noise: transition noise plus the GP's
    // conditional variance pushed through dF/df.
    let gp_var = eval.cond_var_at(&m_x)?;
    let mut sigma_eff = model.sigma_p().clone();
    for k in 0..gp_var.len() {
        let col = a_f.column(k);
        sigma_eff += gp_var[k] * &col * col.transpose();
    }
    let sigma_eff = (&sigma_eff + sigma_eff.transpose()) * 0.5;
    let noise_chol = linalg::cholesky(&sigma_eff)?;

    let factor = belief.factor().matrix();
    let a_block = factor.view((0, 0), (n_u, n_u));
    let b_block = factor.view((n_u, 0), (d_x, n_u));
    let c_block = factor.view((n_u, n_u), (d_x, d_x));

    let b_new = &a_u * a_block + &a_x * b_block;

    // C' from a thin QR: C'·C'ᵀ = (A_x C)(A_x C)ᵀ + Σ_eff.
    let axc = &a_x * c_block;
    let mut stacked = DMatrix::zeros(2 * d_x, d_x);
    stacked.view_mut((0, 0), (d_x, d_x)).copy_from(&axc.transpose());
    stacked
        .view_mut((d_x, 0), (d_x, d_x))
        .copy_from(&noise_chol.matrix().transpose());
    let r = linalg::thin_qr(&stacked);
    let c_new = LowerTriangular::from_matrix(r.transpose())?;

    belief.set_predicted(x_next, &b_new, &c_new);
    Ok(StepStats::default())
}
