//! Unscented prediction over the joint `(u, x, eps)` space.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::gp::GpEvaluator;
use crate::kernel::HeteroKernel;
use crate::model::{JointBelief, ModelSpec};

use super::{recover_state_factor, StepStats, UkfConfig};

/// One unscented prediction step.
///
/// Sigma points cover the belief plus an auxiliary standard-normal
/// block for the GP's conditional noise: each point propagates through
/// `F(x, c, mu(x, u) + sqrt(diag gamma(x)) * eps)`. Because the sigma
/// cloud is generated from the belief's own factor, the cross block
/// `B'` falls out of the symmetric deviation differences along the
/// first `n_u` directions with no dense cross-covariance assembled.
pub fn predict_ukf(
    belief: &mut JointBelief,
    kernel: &HeteroKernel,
    model: &ModelSpec,
    c: &DVector<f64>,
    cfg: &UkfConfig,
) -> Result<StepStats> {
    let n_u = belief.n_u();
    let d_x = belief.d_x();
    let d_f = kernel.n_dims();
    let n = n_u + d_x;
    let d_s = n + d_f;
    let w = cfg.weights(d_s)?;

    let eval = GpEvaluator::new(belief, kernel, c.clone());
    let factor = belief.factor().matrix();

    // Propagated center point and symmetric pairs. Sigma direction j
    // scales factor column j for j < n and the identity eps block
    // afterwards.
    let propagate = |du: &DVector<f64>, dx: &DVector<f64>, de: &DVector<f64>| -> Result<DVector<f64>> {
        let u = belief.u_mean() + du;
        let x = belief.x_mean() + dx;
        let mut f = eval.mean_at(&x, &u)?;
        if de.iter().any(|v| *v != 0.0) {
            let root = eval.cond_sqrt_at(&x)?;
            for k in 0..d_f {
                f[k] += root[k] * de[k];
            }
        }
        Ok(model.transition(&x, c, &f))
    };

    let zero_u = DVector::zeros(n_u);
    let zero_x = DVector::zeros(d_x);
    let zero_e = DVector::zeros(d_f);
    let center = propagate(&zero_u, &zero_x, &zero_e)?;

    let mut plus: Vec<DVector<f64>> = Vec::with_capacity(d_s);
    let mut minus: Vec<DVector<f64>> = Vec::with_capacity(d_s);
    for j in 0..d_s {
        let (du, dx, de) = if j < n {
            let col = factor.column(j) * w.eta;
            (
                col.rows(0, n_u).into_owned(),
                col.rows(n_u, d_x).into_owned(),
                zero_e.clone(),
            )
        } else {
            let mut de = DVector::zeros(d_f);
            de[j - n] = w.eta;
            (zero_u.clone(), zero_x.clone(), de)
        };
        plus.push(propagate(&du, &dx, &de)?);
        minus.push(propagate(&(-&du), &(-&dx), &(-&de))?);
    }

    let mut x_mean = &center * w.w0m;
    for j in 0..d_s {
        x_mean += (&plus[j] + &minus[j]) * w.wi;
    }

    // Cross block against u: only the first n_u sigma directions carry
    // u deviations, and those deviations are eta * A columns, so the
    // A-inverse in B' = S_{x'u} A^{-T} cancels exactly.
    let mut b_new = DMatrix::zeros(d_x, n_u);
    for j in 0..n_u {
        let diff = (&plus[j] - &minus[j]) * (w.eta * w.wi);
        b_new.set_column(j, &diff);
    }

    let mut deviations = DMatrix::zeros(d_x, 2 * d_s);
    for j in 0..d_s {
        deviations.set_column(j, &(&plus[j] - &x_mean));
        deviations.set_column(d_s + j, &(&minus[j] - &x_mean));
    }
    let center_dev = &center - &x_mean;

    let mut stats = StepStats::default();
    let c_new = recover_state_factor(
        &deviations,
        &center_dev,
        &w,
        model.sigma_p(),
        model.sigma_p_chol(),
        &b_new,
        &mut stats,
    )?;

    belief.set_predicted(x_mean, &b_new, &c_new);
    Ok(stats)
}
