//! Sparse GP prediction against the joint belief.
//!
//! Predictions condition on the inducing outputs `u` through the
//! cached per-dimension Gram factors, propagating both the belief's
//! `u`-uncertainty and its cross-covariances with the state. Output
//! dimensions are independent under the prior, so all cross-dimension
//! prior terms vanish and only the belief covariance couples them.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::kernel::{HeteroKernel, KernelKind};
use crate::model::JointBelief;

/// Central finite-difference step scale for fallback gradients.
const FD_STEP: f64 = 1e-6;

/// Joint predictive moments for a batch of test points.
#[derive(Debug, Clone)]
pub struct GpPrediction {
    /// Predictive mean, one entry per test point.
    pub mean: DVector<f64>,
    /// Predictive covariance among the test points.
    pub cov: DMatrix<f64>,
    /// Cross-covariance with the inducing outputs (`n_* x n_u`).
    pub cross_u: DMatrix<f64>,
    /// Cross-covariance with the state (`n_* x d_x`).
    pub cross_x: DMatrix<f64>,
}

/// Predicts the joint moments of `f` at the given `(dimension, input)`
/// pairs under the current belief.
///
/// With an empty inducing set this returns the GP prior: zero mean,
/// block-diagonal prior covariance, zero cross-covariances.
pub fn gp_predict(
    belief: &JointBelief,
    kernel: &HeteroKernel,
    test: &[(usize, DVector<f64>)],
) -> Result<GpPrediction> {
    let n_star = test.len();
    let n_u = belief.n_u();
    let d_x = belief.d_x();
    let joint = belief.covariance();

    // Per-point projection weights w_i = K(Z^k,Z^k)^{-1} k(Z^k, z_i).
    let mut weights: Vec<DVector<f64>> = Vec::with_capacity(n_star);
    let mut k_vecs: Vec<DVector<f64>> = Vec::with_capacity(n_star);
    for (k, z) in test {
        let pts = belief.inducing().inputs(*k);
        if pts.is_empty() {
            weights.push(DVector::zeros(0));
            k_vecs.push(DVector::zeros(0));
            continue;
        }
        let k_vec: DVector<f64> = kernel.eval_block(*k, pts, std::slice::from_ref(z))?.column(0).into_owned();
        weights.push(belief.kernel_chol(*k).solve_spd_vec(&k_vec));
        k_vecs.push(k_vec);
    }

    let mut mean = DVector::zeros(n_star);
    let mut cross_u = DMatrix::zeros(n_star, n_u);
    let mut cross_x = DMatrix::zeros(n_star, d_x);
    for (i, (k, _)) in test.iter().enumerate() {
        let range = belief.inducing().block_range(*k);
        if range.is_empty() {
            continue;
        }
        mean[i] = weights[i].dot(&belief.u_mean_block(*k));
        let s_rows = joint.rows(range.start, range.len());
        let wt = weights[i].transpose();
        cross_u
            .row_mut(i)
            .copy_from(&(&wt * s_rows.columns(0, n_u)));
        cross_x
            .row_mut(i)
            .copy_from(&(&wt * s_rows.columns(n_u, d_x)));
    }

    let mut cov = DMatrix::zeros(n_star, n_star);
    for i in 0..n_star {
        let (ki, zi) = &test[i];
        let ri = belief.inducing().block_range(*ki);
        for j in i..n_star {
            let (kj, zj) = &test[j];
            let rj = belief.inducing().block_range(*kj);
            let mut v = if ri.is_empty() || rj.is_empty() {
                0.0
            } else {
                let s_block = joint.view((ri.start, rj.start), (ri.len(), rj.len()));
                (weights[i].transpose() * s_block * &weights[j])[(0, 0)]
            };
            if ki == kj {
                v += kernel.dim(*ki).kind.eval(zi, zj) - weights[i].dot(&k_vecs[j]);
            }
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    Ok(GpPrediction {
        mean,
        cov,
        cross_u,
        cross_x,
    })
}

/// Per-dimension conditional prior variance of `f` at state `x` with
/// exogenous input `c`: the prior variance left after conditioning on
/// the inducing outputs, clamped to be non-negative.
pub fn novelty(
    belief: &JointBelief,
    kernel: &HeteroKernel,
    x: &DVector<f64>,
    c: &DVector<f64>,
) -> Result<Vec<f64>> {
    (0..kernel.n_dims())
        .map(|k| {
            let z = kernel.input_for(k, x, c);
            novelty_at(belief, kernel, k, &z)
        })
        .collect()
}

/// Conditional prior variance for one dimension at a raw kernel input.
pub fn novelty_at(
    belief: &JointBelief,
    kernel: &HeteroKernel,
    k: usize,
    z: &DVector<f64>,
) -> Result<f64> {
    let prior = kernel.variance_at(k, z);
    let pts = belief.inducing().inputs(k);
    if pts.is_empty() {
        return Ok(prior);
    }
    let k_vec: DVector<f64> = kernel.eval_block(k, pts, std::slice::from_ref(z))?.column(0).into_owned();
    let s = belief.kernel_chol(k).solve_vec(&k_vec);
    Ok((prior - s.norm_squared()).max(0.0))
}

/// Point-wise GP queries used inside the prediction/correction steps:
/// posterior mean as a function of `(x, u)`, its Jacobians, and the
/// conditional prior variance as a function of `x`.
pub struct GpEvaluator<'a> {
    belief: &'a JointBelief,
    kernel: &'a HeteroKernel,
    c: DVector<f64>,
}

impl<'a> GpEvaluator<'a> {
    pub fn new(belief: &'a JointBelief, kernel: &'a HeteroKernel, c: DVector<f64>) -> Self {
        Self { belief, kernel, c }
    }

    fn weights_for(&self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let pts = self.belief.inducing().inputs(k);
        if pts.is_empty() {
            return Ok(DVector::zeros(0));
        }
        let z = self.kernel.input_for(k, x, &self.c);
        let k_vec: DVector<f64> = self
            .kernel
            .eval_block(k, pts, &[z])?
            .column(0)
            .into_owned();
        Ok(self.belief.kernel_chol(k).solve_spd_vec(&k_vec))
    }

    /// Mean function `mu(x, u)`: per dimension, `k(z)^T K^{-1} u^k`.
    pub fn mean_at(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let d_f = self.kernel.n_dims();
        let mut out = DVector::zeros(d_f);
        for k in 0..d_f {
            let range = self.belief.inducing().block_range(k);
            if range.is_empty() {
                continue;
            }
            let w = self.weights_for(k, x)?;
            out[k] = w.dot(&u.rows(range.start, range.len()));
        }
        Ok(out)
    }

    /// Conditional prior variance per dimension, clamped non-negative.
    pub fn cond_var_at(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let d_f = self.kernel.n_dims();
        let mut out = DVector::zeros(d_f);
        for k in 0..d_f {
            let z = self.kernel.input_for(k, x, &self.c);
            out[k] = novelty_at(self.belief, self.kernel, k, &z)?;
        }
        Ok(out)
    }

    /// Square root of [`Self::cond_var_at`], the diagonal factor of the
    /// conditional covariance.
    pub fn cond_sqrt_at(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.cond_var_at(x)?.map(f64::sqrt))
    }

    /// `d mu / d u` at `x`: block rows `w^T`, zero across dimensions.
    pub fn mean_jac_u(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d_f = self.kernel.n_dims();
        let mut jac = DMatrix::zeros(d_f, self.belief.n_u());
        for k in 0..d_f {
            let range = self.belief.inducing().block_range(k);
            if range.is_empty() {
                continue;
            }
            let w = self.weights_for(k, x)?;
            jac.view_mut((k, range.start), (1, range.len()))
                .copy_from(&w.transpose());
        }
        Ok(jac)
    }

    /// `d mu / d x` at `(x, u)`. Analytic for plain RBF dimensions,
    /// central finite differences otherwise.
    pub fn mean_jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d_f = self.kernel.n_dims();
        let d_x = x.len();
        let mut jac = DMatrix::zeros(d_f, d_x);
        for k in 0..d_f {
            let range = self.belief.inducing().block_range(k);
            if range.is_empty() {
                continue;
            }
            let u_block = u.rows(range.start, range.len()).into_owned();
            let dim = self.kernel.dim(k);
            if let KernelKind::Rbf(p) = &dim.kind {
                // v = K^{-1} u^k; d mean / d z = sum_j v_j dK(z,z_j)/dz,
                // with dK/dz = -K(z,z_j) * Lambda^{-1} (z - z_j).
                let pts = self.belief.inducing().inputs(k);
                let v = self.belief.kernel_chol(k).solve_spd_vec(&u_block);
                let z = self.kernel.input_for(k, x, &self.c);
                let inv_l2: Vec<f64> = p
                    .log_lengthscales
                    .iter()
                    .map(|ll| (-2.0 * ll).exp())
                    .collect();
                let mut dz: DVector<f64> = DVector::zeros(z.len());
                for (j, zj) in pts.iter().enumerate() {
                    let kv = p.eval(&z, zj);
                    for d in 0..z.len() {
                        dz[d] += v[j] * (-kv) * inv_l2[d] * (z[d] - zj[d]);
                    }
                }
                let jphi = dim.input_map.jac_x(x, &self.c);
                let col: DVector<f64> = jphi.transpose() * dz;
                jac.row_mut(k).copy_from(&col.transpose());
            } else {
                for d in 0..d_x {
                    let h = FD_STEP * (1.0 + x[d].abs());
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[d] += h;
                    xm[d] -= h;
                    let fp = self.weights_for(k, &xp)?.dot(&u_block);
                    let fm = self.weights_for(k, &xm)?.dot(&u_block);
                    jac[(k, d)] = (fp - fm) / (2.0 * h);
                }
            }
        }
        Ok(jac)
    }
}
