//! Measurement update on the joint belief.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{JointBelief, ModelSpec};

use super::{StepStats, UkfConfig};

/// Correction flavor. The gain structure is shared; the two modes
/// differ only in how the innovation moments are obtained.
#[derive(Debug, Clone, Copy)]
pub enum CorrectionMode {
    Ekf,
    Ukf(UkfConfig),
}

/// Conditions the joint belief on a measurement.
///
/// The Kalman gain couples the full `(u, x)` vector to the innovation,
/// so inducing outputs are corrected through their cross-covariance
/// with the state. The factor is downdated column-wise by the
/// gain-scaled innovation factor; if the downdate loses positivity the
/// posterior covariance is assembled densely and refactored.
pub fn correct(
    belief: &mut JointBelief,
    model: &ModelSpec,
    y: &DVector<f64>,
    mode: CorrectionMode,
) -> Result<StepStats> {
    if y.len() != model.d_y {
        return Err(Error::DimensionMismatch(format!(
            "measurement has dim {}, model declares {}",
            y.len(),
            model.d_y
        )));
    }
    let n_u = belief.n_u();
    let d_x = belief.d_x();
    let n = n_u + d_x;
    let d_y = model.d_y;

    // Innovation moments: predicted measurement, its covariance, and
    // the joint-state cross-covariance.
    let (y_hat, mut s_yy, s_zy) = match mode {
        CorrectionMode::Ekf => {
            let m_x = belief.x_mean();
            let g = model.jac_g_x(&m_x);
            let joint = belief.covariance();
            let s_zx = joint.columns(n_u, d_x).into_owned();
            let s_xx = joint.view((n_u, n_u), (d_x, d_x)).into_owned();
            (
                model.measurement(&m_x),
                &g * s_xx * g.transpose(),
                s_zx * g.transpose(),
            )
        }
        CorrectionMode::Ukf(cfg) => {
            let w = cfg.weights(n)?;
            let factor = belief.factor().matrix();
            let x_of = |dz: DVector<f64>| -> DVector<f64> {
                let z = belief.mean() + dz;
                model.measurement(&z.rows(n_u, d_x).into_owned())
            };
            let center = x_of(DVector::zeros(n));
            let mut plus = Vec::with_capacity(n);
            let mut minus = Vec::with_capacity(n);
            for j in 0..n {
                let col = factor.column(j) * w.eta;
                plus.push(x_of(col.clone_owned()));
                minus.push(x_of(-col));
            }
            let mut y_hat = &center * w.w0m;
            for j in 0..n {
                y_hat += (&plus[j] + &minus[j]) * w.wi;
            }
            let mut s_yy = w.w0c * (&center - &y_hat) * (&center - &y_hat).transpose();
            let mut s_zy = DMatrix::zeros(n, d_y);
            for j in 0..n {
                let dp = &plus[j] - &y_hat;
                let dm = &minus[j] - &y_hat;
                s_yy += w.wi * (&dp * dp.transpose() + &dm * dm.transpose());
                // Joint deviations are +-eta * factor column j.
                s_zy += (factor.column(j) * w.eta) * ((dp - dm) * w.wi).transpose();
            }
            (y_hat, s_yy, s_zy)
        }
    };
    s_yy += model.sigma_m();
    let s_yy = (&s_yy + s_yy.transpose()) * 0.5;
    let yy_chol = linalg::cholesky(&s_yy).map_err(|_| Error::InnovationCovarianceSingular)?;

    // Gain K = S_zy S_yy^{-1}; posterior factor downdate columns are
    // K chol(S_yy).
    let gain = yy_chol.solve_spd(&s_zy.transpose()).transpose();
    let innovation = y - &y_hat;
    let new_mean = belief.mean() + &gain * &innovation;

    let down_cols = &gain * yy_chol.matrix();
    let mut stats = StepStats::default();
    let new_factor = match linalg::chol_downdate_cols(belief.factor(), &down_cols) {
        Ok(f) => f,
        Err(_) => {
            stats.dense_fallbacks += 1;
            let dense = belief.covariance() - &gain * &s_yy * gain.transpose();
            let dense = (&dense + dense.transpose()) * 0.5;
            linalg::cholesky(&dense)?
        }
    };
    belief.set_moments(new_mean, new_factor);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{DimensionKernel, HeteroKernel, InputMap, KernelKind, RbfParams};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn kernel_1d() -> HeteroKernel {
        HeteroKernel::new(vec![DimensionKernel {
            kind: KernelKind::Rbf(RbfParams::new(1.0, &[1.0]).unwrap()),
            input_map: InputMap::state_identity(1, 0),
        }])
        .unwrap()
    }

    fn identity_model(sigma_m: f64) -> ModelSpec {
        ModelSpec::new(
            1,
            0,
            1,
            1,
            Arc::new(|x: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>| x.clone()),
            Arc::new(|x: &DVector<f64>| x.clone()),
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, sigma_m),
        )
        .unwrap()
    }

    #[test]
    fn scalar_update_matches_kalman() {
        let kern = kernel_1d();
        let model = identity_model(1.0);
        for mode in [CorrectionMode::Ekf, CorrectionMode::Ukf(UkfConfig::default())] {
            let mut belief =
                JointBelief::new(&kern, DVector::zeros(1), &DMatrix::identity(1, 1)).unwrap();
            correct(&mut belief, &model, &DVector::from_vec(vec![2.0]), mode).unwrap();
            assert_abs_diff_eq!(belief.x_mean()[0], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(belief.x_cov()[(0, 0)], 0.5, epsilon = 1e-10);
        }
    }

    #[test]
    fn uninformative_measurement_leaves_belief_unchanged() {
        let kern = kernel_1d();
        let model = identity_model(1e12);
        let mut belief = JointBelief::new(
            &kern,
            DVector::from_vec(vec![0.3]),
            &DMatrix::from_element(1, 1, 0.8),
        )
        .unwrap();
        let before_mean = belief.mean().clone();
        let before_cov = belief.covariance();
        correct(
            &mut belief,
            &model,
            &DVector::from_vec(vec![50.0]),
            CorrectionMode::Ekf,
        )
        .unwrap();
        assert!((belief.mean() - before_mean).norm() < 1e-9);
        assert!((belief.covariance() - before_cov).norm() < 1e-9);
    }

    #[test]
    fn wrong_measurement_dimension_is_rejected() {
        let kern = kernel_1d();
        let model = identity_model(1.0);
        let mut belief =
            JointBelief::new(&kern, DVector::zeros(1), &DMatrix::identity(1, 1)).unwrap();
        let err = correct(
            &mut belief,
            &model,
            &DVector::zeros(2),
            CorrectionMode::Ekf,
        );
        assert!(err.is_err());
    }
}
