//! Assumed-density prediction with exact GP output moments.
//!
//! Step 1 computes the exact joint moments of `(f, x, u)` by Gaussian
//! integration of the RBF kernel against the belief: expectations of
//! kernel values and kernel products reduce to closed-form constants
//! (`b`, `B`) times tilted conditional moments of the linear quantity
//! `v = K^{-1} u`. Step 2 pushes the Gaussian over `w = (f, x)` through
//! the transition with an unscented transform (or a linearization when
//! configured), recovering the factor blocks without forming the dense
//! joint.
//!
//! Requires every dimension to use a plain RBF kernel with an affine
//! input map; `Matcher::new` gates this at construction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::HeteroKernel;
use crate::linalg::{self, LowerTriangular};
use crate::model::{JointBelief, ModelSpec};

use super::{recover_state_factor, SigmaWeights, StepStats, UkfConfig};

/// ADF settings: the step-2 unscented parameters and an optional
/// linearized step 2.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdfConfig {
    pub ukf: UkfConfig,
    /// Propagate step 2 by linearizing the transition instead of the
    /// unscented transform.
    pub step2_ekf: bool,
}

impl Default for AdfConfig {
    fn default() -> Self {
        Self {
            ukf: UkfConfig::default(),
            step2_ekf: false,
        }
    }
}

/// Exact joint moments of the GP outputs under the current belief.
#[derive(Debug, Clone)]
pub struct FunctionMoments {
    /// `E[f]`, one entry per output dimension.
    pub mean: DVector<f64>,
    /// `Cov[f, f]`.
    pub cov: DMatrix<f64>,
    /// `Cov[f, x]` (`d_f x d_x`).
    pub cross_x: DMatrix<f64>,
    /// `Cov[f, u]` (`d_f x n_u`).
    pub cross_u: DMatrix<f64>,
}

/// Per-dimension cached quantities for the moment integrals.
struct DimCtx {
    /// Inducing inputs of this dimension.
    z: Vec<DVector<f64>>,
    /// Kernel input mean under the belief.
    m_z: DVector<f64>,
    /// Input-map state weights (affine Jacobian).
    phi: DMatrix<f64>,
    /// Squared length scales.
    lambda: DVector<f64>,
    sigma2: f64,
    /// Prior Gram inverse.
    q: DMatrix<f64>,
    /// Mean of `v = K^{-1} u^k`.
    m_v: DVector<f64>,
    /// `Cov(x, v^k)` (`d_x x n_k`).
    s_x_v: DMatrix<f64>,
    /// `Cov(u, v^k)` over the full inducing vector (`n_u x n_k`).
    s_u_v: DMatrix<f64>,
}

/// Exact moments of the GP outputs `f` jointly with `(x, u)`.
pub fn function_moments(
    belief: &JointBelief,
    kernel: &HeteroKernel,
    c: &DVector<f64>,
) -> Result<FunctionMoments> {
    kernel.require_adf_compatible()?;
    let d_f = kernel.n_dims();
    let n_u = belief.n_u();
    let d_x = belief.d_x();
    let joint = belief.covariance();
    let s_ux = joint.view((0, n_u), (n_u, d_x)).into_owned();
    let s_xx = joint.view((n_u, n_u), (d_x, d_x)).into_owned();
    let m_x = belief.x_mean();
    let m_u = belief.u_mean();

    let mut dims: Vec<DimCtx> = Vec::with_capacity(d_f);
    for k in 0..d_f {
        let dim = kernel.dim(k);
        let rbf = dim.kind.rbf_params().ok_or_else(|| {
            Error::Unsupported("exact moments require plain RBF kernels".into())
        })?;
        let range = belief.inducing().block_range(k);
        let n_k = range.len();
        let q = if n_k > 0 {
            belief
                .kernel_chol(k)
                .solve_spd(&DMatrix::identity(n_k, n_k))
        } else {
            DMatrix::zeros(0, 0)
        };
        let m_v = &q * belief.u_mean_block(k);
        let s_u_v = joint.view((0, range.start), (n_u, n_k)) * &q;
        let s_x_v = s_ux.view((range.start, 0), (n_k, d_x)).transpose() * &q;
        dims.push(DimCtx {
            z: belief.inducing().inputs(k).to_vec(),
            m_z: kernel.input_for(k, &m_x, c),
            phi: dim.input_map.jac_x(&m_x, c),
            lambda: rbf.lengthscales().map(|l| l * l),
            sigma2: rbf.sigma2(),
            q,
            m_v,
            s_x_v,
            s_u_v,
        });
    }

    let mut mean = DVector::zeros(d_f);
    let mut cross_x = DMatrix::zeros(d_f, d_x);
    let mut cross_u = DMatrix::zeros(d_f, n_u);

    // Single-input integrals: the mean and the cross-covariances to x
    // and u. Each inducing point contributes a scalar weight b_j (the
    // expected kernel value) times the moments of the belief tilted
    // toward its input.
    for k in 0..d_f {
        let ctx = &dims[k];
        let n_k = ctx.z.len();
        if n_k == 0 {
            continue;
        }
        let d_z = ctx.m_z.len();
        let s_zz = &ctx.phi * &s_xx * ctx.phi.transpose();
        let mut tilt = s_zz;
        for i in 0..d_z {
            tilt[(i, i)] += ctx.lambda[i];
        }
        let tilt_chol = linalg::cholesky(&tilt)?;
        let log_scale = ctx.lambda.iter().map(|l| l.ln()).sum::<f64>() - tilt_chol.log_det();
        let b_scale = ctx.sigma2 * (0.5 * log_scale).exp();

        // Cross-covariances from the kernel input z to each target.
        let s_z_v = &ctx.phi * &ctx.s_x_v;
        let s_z_x = &ctx.phi * &s_xx;
        let s_z_u = &ctx.phi * s_ux.transpose();
        // Conditional covariance corrections, constant across j.
        let g_v = tilt_chol.solve_spd(&s_z_v);
        let cond_vx = ctx.s_x_v.transpose() - g_v.transpose() * &s_z_x;
        let cond_vu = ctx.s_u_v.transpose() - g_v.transpose() * &s_z_u;

        for j in 0..n_k {
            let delta = &ctx.z[j] - &ctx.m_z;
            let b_j = b_scale * (-0.5 * tilt_chol.solve_vec(&delta).norm_squared()).exp();
            let shift = tilt_chol.solve_spd_vec(&delta);
            let m_vj = ctx.m_v[j] + s_z_v.column(j).dot(&shift);
            let m_x_t = &m_x + s_z_x.transpose() * &shift;
            let m_u_t = &m_u + s_z_u.transpose() * &shift;
            mean[k] += b_j * m_vj;
            for col in 0..d_x {
                cross_x[(k, col)] += b_j * (cond_vx[(j, col)] + m_vj * m_x_t[col]);
            }
            for col in 0..n_u {
                cross_u[(k, col)] += b_j * (cond_vu[(j, col)] + m_vj * m_u_t[col]);
            }
        }
    }
    for k in 0..d_f {
        for col in 0..d_x {
            cross_x[(k, col)] -= mean[k] * m_x[col];
        }
        for col in 0..n_u {
            cross_u[(k, col)] -= mean[k] * m_u[col];
        }
    }

    // Paired integrals: the output covariance. Each pair of inducing
    // points yields the expected kernel product B_ij over the stacked
    // input Z = (z^k, z^l); for k = l both halves coincide and the
    // stacked covariance is rank-deficient, which adding the diagonal
    // Lambda absorbs.
    let mut cov = DMatrix::zeros(d_f, d_f);
    for k in 0..d_f {
        for l in k..d_f {
            let (ck, cl) = (&dims[k], &dims[l]);
            let (n_k, n_l) = (ck.z.len(), cl.z.len());
            let mut acc = 0.0;
            let mut acc_q = 0.0;
            if n_k > 0 && n_l > 0 {
                let (dzk, dzl) = (ck.m_z.len(), cl.m_z.len());
                let dz = dzk + dzl;
                let mut tilt = DMatrix::zeros(dz, dz);
                tilt.view_mut((0, 0), (dzk, dzk))
                    .copy_from(&(&ck.phi * &s_xx * ck.phi.transpose()));
                tilt.view_mut((0, dzk), (dzk, dzl))
                    .copy_from(&(&ck.phi * &s_xx * cl.phi.transpose()));
                tilt.view_mut((dzk, 0), (dzl, dzk))
                    .copy_from(&(&cl.phi * &s_xx * ck.phi.transpose()));
                tilt.view_mut((dzk, dzk), (dzl, dzl))
                    .copy_from(&(&cl.phi * &s_xx * cl.phi.transpose()));
                for i in 0..dzk {
                    tilt[(i, i)] += ck.lambda[i];
                }
                for i in 0..dzl {
                    tilt[(dzk + i, dzk + i)] += cl.lambda[i];
                }
                let tilt_chol = linalg::cholesky(&tilt)?;
                let log_scale = ck.lambda.iter().map(|v| v.ln()).sum::<f64>()
                    + cl.lambda.iter().map(|v| v.ln()).sum::<f64>()
                    - tilt_chol.log_det();
                let b_scale = ck.sigma2 * cl.sigma2 * (0.5 * log_scale).exp();

                // Cov(v^k, Z) and Cov(v^l, Z) with Z the stacked input.
                let mut s_vk_z = DMatrix::zeros(n_k, dz);
                s_vk_z
                    .view_mut((0, 0), (n_k, dzk))
                    .copy_from(&(&ck.phi * &ck.s_x_v).transpose());
                s_vk_z
                    .view_mut((0, dzk), (n_k, dzl))
                    .copy_from(&(&cl.phi * &ck.s_x_v).transpose());
                let mut s_vl_z = DMatrix::zeros(n_l, dz);
                s_vl_z
                    .view_mut((0, 0), (n_l, dzk))
                    .copy_from(&(&ck.phi * &cl.s_x_v).transpose());
                s_vl_z
                    .view_mut((0, dzk), (n_l, dzl))
                    .copy_from(&(&cl.phi * &cl.s_x_v).transpose());

                let g_l = tilt_chol.solve_spd(&s_vl_z.transpose());
                let rk = belief.inducing().block_range(k);
                let rl = belief.inducing().block_range(l);
                let s_vkvl =
                    &ck.q * joint.view((rk.start, rl.start), (n_k, n_l)) * &cl.q;
                let cond = &s_vkvl - &s_vk_z * &g_l;

                for i in 0..n_k {
                    for j in 0..n_l {
                        let mut delta = DVector::zeros(dz);
                        delta.rows_mut(0, dzk).copy_from(&(&ck.z[i] - &ck.m_z));
                        delta.rows_mut(dzk, dzl).copy_from(&(&cl.z[j] - &cl.m_z));
                        let b_ij = b_scale
                            * (-0.5 * tilt_chol.solve_vec(&delta).norm_squared()).exp();
                        let shift = tilt_chol.solve_spd_vec(&delta);
                        let m_i = ck.m_v[i] + s_vk_z.row(i).transpose().dot(&shift);
                        let m_j = cl.m_v[j] + s_vl_z.row(j).transpose().dot(&shift);
                        acc += b_ij * (cond[(i, j)] + m_i * m_j);
                        if k == l {
                            acc_q += ck.q[(i, j)] * b_ij;
                        }
                    }
                }
            }
            let mut val = acc - mean[k] * mean[l];
            if k == l {
                val += ck.sigma2 - acc_q;
            }
            cov[(k, l)] = val;
            cov[(l, k)] = val;
        }
    }

    Ok(FunctionMoments {
        mean,
        cov,
        cross_x,
        cross_u,
    })
}

/// One assumed-density prediction step.
pub fn predict_adf(
    belief: &mut JointBelief,
    kernel: &HeteroKernel,
    model: &ModelSpec,
    c: &DVector<f64>,
    cfg: &AdfConfig,
) -> Result<StepStats> {
    let n_u = belief.n_u();
    let d_x = belief.d_x();
    let d_f = kernel.n_dims();
    let d_w = d_f + d_x;

    let fm = function_moments(belief, kernel, c)?;
    let joint = belief.covariance();
    let s_xx = joint.view((n_u, n_u), (d_x, d_x));
    let s_ux = joint.view((0, n_u), (n_u, d_x));
    let m_x = belief.x_mean();

    // Gaussian over w = (f, x).
    let mut m_w = DVector::zeros(d_w);
    m_w.rows_mut(0, d_f).copy_from(&fm.mean);
    m_w.rows_mut(d_f, d_x).copy_from(&m_x);
    let mut s_ww = DMatrix::zeros(d_w, d_w);
    s_ww.view_mut((0, 0), (d_f, d_f)).copy_from(&fm.cov);
    s_ww.view_mut((0, d_f), (d_f, d_x)).copy_from(&fm.cross_x);
    s_ww.view_mut((d_f, 0), (d_x, d_f))
        .copy_from(&fm.cross_x.transpose());
    s_ww.view_mut((d_f, d_f), (d_x, d_x)).copy_from(&s_xx);
    let s_ww = (&s_ww + s_ww.transpose()) * 0.5;
    let l_w = linalg::cholesky(&s_ww)?;

    let mut s_uw = DMatrix::zeros(n_u, d_w);
    s_uw.view_mut((0, 0), (n_u, d_f))
        .copy_from(&fm.cross_u.transpose());
    s_uw.view_mut((0, d_f), (n_u, d_x)).copy_from(&s_ux);

    let mut stats = StepStats::default();
    let (x_mean, b_new, c_new) = if cfg.step2_ekf {
        step2_linearized(belief, model, c, &m_w, &l_w, &s_uw, &mut stats)?
    } else {
        step2_unscented(belief, model, c, &m_w, &l_w, &s_uw, &cfg.ukf, &mut stats)?
    };

    belief.set_predicted(x_mean, &b_new, &c_new);
    Ok(stats)
}

/// Inducing block of the joint factor as a solvable triangle.
fn inducing_factor_block(belief: &JointBelief) -> LowerTriangular {
    let n_u = belief.n_u();
    LowerTriangular::from_matrix_unchecked(
        belief
            .factor()
            .matrix()
            .view((0, 0), (n_u, n_u))
            .into_owned(),
    )
}

#[allow(clippy::too_many_arguments)]
fn step2_unscented(
    belief: &JointBelief,
    model: &ModelSpec,
    c: &DVector<f64>,
    m_w: &DVector<f64>,
    l_w: &LowerTriangular,
    s_uw: &DMatrix<f64>,
    cfg: &UkfConfig,
    stats: &mut StepStats,
) -> Result<(DVector<f64>, DMatrix<f64>, LowerTriangular)> {
    let d_x = belief.d_x();
    let n_u = belief.n_u();
    let d_w = m_w.len();
    let d_f = d_w - d_x;
    let w = cfg.weights(d_w)?;

    let apply = |point: DVector<f64>| -> DVector<f64> {
        let f = point.rows(0, d_f).into_owned();
        let x = point.rows(d_f, d_x).into_owned();
        model.transition(&x, c, &f)
    };

    let center = apply(m_w.clone());
    let mut plus = Vec::with_capacity(d_w);
    let mut minus = Vec::with_capacity(d_w);
    for j in 0..d_w {
        let col = l_w.matrix().column(j) * w.eta;
        plus.push(apply(m_w + &col));
        minus.push(apply(m_w - &col));
    }

    let mut x_mean = &center * w.w0m;
    for j in 0..d_w {
        x_mean += (&plus[j] + &minus[j]) * w.wi;
    }

    // Cov(w, x') = L_w M with row j of M the weighted symmetric
    // difference of the transformed points; then
    // Cov(u, x') = (S_uw L_w^{-T}) M and B = (A^{-1} Cov(u, x'))^T.
    let mut m_mat = DMatrix::zeros(d_w, d_x);
    for j in 0..d_w {
        m_mat
            .row_mut(j)
            .copy_from(&((&plus[j] - &minus[j]) * (w.eta * w.wi)).transpose());
    }
    let b_new = if n_u > 0 {
        let s_u_xn = l_w.solve(&s_uw.transpose()).transpose() * &m_mat;
        inducing_factor_block(belief).solve(&s_u_xn).transpose()
    } else {
        DMatrix::zeros(d_x, 0)
    };

    let mut deviations = DMatrix::zeros(d_x, 2 * d_w);
    for j in 0..d_w {
        deviations.set_column(j, &(&plus[j] - &x_mean));
        deviations.set_column(d_w + j, &(&minus[j] - &x_mean));
    }
    let center_dev = &center - &x_mean;
    let c_new = recover_state_factor(
        &deviations,
        &center_dev,
        &w,
        model.sigma_p(),
        model.sigma_p_chol(),
        &b_new,
        stats,
    )?;
    Ok((x_mean, b_new, c_new))
}

fn step2_linearized(
    belief: &JointBelief,
    model: &ModelSpec,
    c: &DVector<f64>,
    m_w: &DVector<f64>,
    l_w: &LowerTriangular,
    s_uw: &DMatrix<f64>,
    stats: &mut StepStats,
) -> Result<(DVector<f64>, DMatrix<f64>, LowerTriangular)> {
    let d_x = belief.d_x();
    let n_u = belief.n_u();
    let d_w = m_w.len();
    let d_f = d_w - d_x;

    let m_f = m_w.rows(0, d_f).into_owned();
    let m_x = m_w.rows(d_f, d_x).into_owned();
    let x_mean = model.transition(&m_x, c, &m_f);
    let mut jac = DMatrix::zeros(d_x, d_w);
    jac.view_mut((0, 0), (d_x, d_f))
        .copy_from(&model.jac_f_f(&m_x, c, &m_f));
    jac.view_mut((0, d_f), (d_x, d_x))
        .copy_from(&model.jac_f_x(&m_x, c, &m_f));

    let b_new = if n_u > 0 {
        let s_u_xn = s_uw * jac.transpose();
        inducing_factor_block(belief).solve(&s_u_xn).transpose()
    } else {
        DMatrix::zeros(d_x, 0)
    };

    // Reuse the deviation-based recovery with synthetic weights: the
    // columns of J L_w, mirrored with weight one half, reproduce
    // J S_ww J^T exactly and the center carries no weight.
    let w = SigmaWeights {
        eta: 1.0,
        w0m: 1.0,
        w0c: 0.0,
        wi: 0.5,
    };
    let cols = &jac * l_w.matrix();
    let mut deviations = DMatrix::zeros(d_x, 2 * d_w);
    deviations.view_mut((0, 0), (d_x, d_w)).copy_from(&cols);
    deviations
        .view_mut((0, d_w), (d_x, d_w))
        .copy_from(&(-&cols));
    let center_dev = DVector::zeros(d_x);
    let c_new = recover_state_factor(
        &deviations,
        &center_dev,
        &w,
        model.sigma_p(),
        model.sigma_p_chol(),
        &b_new,
        stats,
    )?;
    Ok((x_mean, b_new, c_new))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::gp_predict;
    use crate::kernel::{DimensionKernel, InputMap, KernelKind, RbfParams};
    use crate::model::InducingSet;
    use approx::assert_abs_diff_eq;

    fn z(v: f64) -> DVector<f64> {
        DVector::from_vec(vec![v])
    }

    #[test]
    fn exogenous_inputs_reduce_to_sparse_prediction() {
        // With the kernel input drawn from the exogenous channel the
        // input covariance is exactly zero and every integral
        // collapses to a plain kernel evaluation, so the exact moments
        // must equal the sparse GP prediction at that input.
        let kern = HeteroKernel::new(vec![DimensionKernel {
            kind: KernelKind::Rbf(RbfParams::new(1.3, &[0.9]).unwrap()),
            input_map: InputMap::control_coordinate(0, 1, 1),
        }])
        .unwrap();
        let pts = vec![z(0.1), z(0.8), z(1.7)];
        let gram = kern.eval_block(0, &pts, &pts).unwrap();
        let inducing = InducingSet::from_inputs(vec![pts]);
        let mut cov = DMatrix::identity(4, 4) * 0.7;
        cov.view_mut((0, 0), (3, 3)).copy_from(&(gram * 0.6));
        cov[(0, 3)] = 0.1;
        cov[(3, 0)] = 0.1;
        let mean = DVector::from_vec(vec![0.4, -0.2, 0.9, 0.3]);
        let belief = JointBelief::from_parts(
            mean,
            linalg::cholesky(&cov).unwrap(),
            inducing,
            &kern,
            1,
        )
        .unwrap();

        let c = z(0.55);
        let fm = function_moments(&belief, &kern, &c).unwrap();
        let pred = gp_predict(&belief, &kern, &[(0, c.clone())]).unwrap();
        assert_abs_diff_eq!(fm.mean[0], pred.mean[0], epsilon = 1e-10);
        assert_abs_diff_eq!(fm.cov[(0, 0)], pred.cov[(0, 0)], epsilon = 1e-10);
        for j in 0..3 {
            assert_abs_diff_eq!(fm.cross_u[(0, j)], pred.cross_u[(0, j)], epsilon = 1e-10);
        }
        assert_abs_diff_eq!(fm.cross_x[(0, 0)], pred.cross_x[(0, 0)], epsilon = 1e-10);
    }

    #[test]
    fn centered_point_mean_shrinks_by_input_variance() {
        // Single inducing point at the input mean with unit weight and
        // unit hyperparameters: E[f] = (1 + S_xx)^{-1/2} in closed
        // form.
        let kern = HeteroKernel::new(vec![DimensionKernel {
            kind: KernelKind::Rbf(RbfParams::new(1.0, &[1.0]).unwrap()),
            input_map: InputMap::state_identity(1, 0),
        }])
        .unwrap();
        let s_xx = 0.37;
        let inducing = InducingSet::from_inputs(vec![vec![z(0.2)]]);
        let mut cov = DMatrix::zeros(2, 2);
        cov[(0, 0)] = 1e-9;
        cov[(1, 1)] = s_xx;
        let belief = JointBelief::from_parts(
            DVector::from_vec(vec![1.0, 0.2]),
            linalg::cholesky(&cov).unwrap(),
            inducing,
            &kern,
            1,
        )
        .unwrap();
        let fm = function_moments(&belief, &kern, &DVector::zeros(0)).unwrap();
        assert_abs_diff_eq!(fm.mean[0], (1.0 + s_xx).powf(-0.5), epsilon = 1e-6);
    }

    #[test]
    fn empty_dimension_carries_prior_variance_only() {
        let kern = HeteroKernel::new(vec![
            DimensionKernel {
                kind: KernelKind::Rbf(RbfParams::new(1.0, &[1.0]).unwrap()),
                input_map: InputMap::state_identity(1, 0),
            },
            DimensionKernel {
                kind: KernelKind::Rbf(RbfParams::new(2.5, &[1.0]).unwrap()),
                input_map: InputMap::state_identity(1, 0),
            },
        ])
        .unwrap();
        let belief = JointBelief::new(&kern, z(0.0), &DMatrix::identity(1, 1)).unwrap();
        let fm = function_moments(&belief, &kern, &DVector::zeros(0)).unwrap();
        assert_eq!(fm.mean, DVector::zeros(2));
        assert_abs_diff_eq!(fm.cov[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fm.cov[(1, 1)], 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fm.cov[(0, 1)], 0.0, epsilon = 1e-12);
    }
}
