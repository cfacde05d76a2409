//! Moment matching for the prediction and correction steps.
//!
//! Three prediction backends share one contract: consume the belief
//! over `(u, x_t)`, produce the belief over `(u, x_{t+1})`, and leave
//! the inducing marginal (mean and factor block `A`) untouched. All
//! three work directly on the Cholesky factor; any square-root
//! operation that fails triggers a dense rebuild of the state block
//! only, counted in [`StepStats`].

mod adf;
mod correct;
mod ekf;
mod ukf;

pub use adf::{function_moments, predict_adf, AdfConfig, FunctionMoments};
pub use correct::{correct, CorrectionMode};
pub use ekf::predict_ekf;
pub use ukf::predict_ukf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::HeteroKernel;
use crate::linalg::{self, LowerTriangular};
use crate::model::{JointBelief, ModelSpec};

/// Unscented-transform parameters. The composite scaling follows the
/// standard form `lambda = L (alpha^2 - 1)` with `L` defaulting to the
/// sigma dimension; `scale` overrides `L` when set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UkfConfig {
    pub alpha: f64,
    pub beta: f64,
    pub scale: Option<f64>,
}

impl UkfConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(1e-4..=1.0).contains(&alpha) {
            return Err(Error::DimensionMismatch(format!(
                "alpha must lie in [1e-4, 1], got {alpha}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            scale: None,
        })
    }

    pub(crate) fn weights(&self, d_s: usize) -> Result<SigmaWeights> {
        let l = self.scale.unwrap_or(d_s as f64);
        let lambda = l * (self.alpha * self.alpha - 1.0);
        let denom = d_s as f64 + lambda;
        if denom <= 0.0 {
            return Err(Error::Degenerate(format!(
                "sigma scaling d_s + lambda = {denom} must be positive"
            )));
        }
        Ok(SigmaWeights {
            eta: denom.sqrt(),
            w0m: lambda / denom,
            w0c: lambda / denom + 1.0 - self.alpha * self.alpha + self.beta,
            wi: 0.5 / denom,
        })
    }
}

impl Default for UkfConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            scale: None,
        }
    }
}

/// Scaled sigma-point geometry: symmetric points at distance `eta`
/// along factor columns, with center weights `w0m`/`w0c` and common
/// off-center weight `wi`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SigmaWeights {
    pub eta: f64,
    pub w0m: f64,
    pub w0c: f64,
    pub wi: f64,
}

/// Per-step diagnostics.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct StepStats {
    /// Square-root updates that fell back to dense assembly.
    pub dense_fallbacks: u32,
}

impl StepStats {
    pub fn absorb(&mut self, other: StepStats) {
        self.dense_fallbacks += other.dense_fallbacks;
    }
}

/// Prediction backend selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    Ekf,
    Ukf,
    Adf,
}

/// A configured prediction/correction pairing. The ADF backend has no
/// correction form of its own and pairs with the unscented correction.
#[derive(Debug, Clone)]
pub struct Matcher {
    pub kind: MatcherKind,
    pub ukf: UkfConfig,
    pub adf: AdfConfig,
}

impl Matcher {
    /// Builds a matcher, rejecting ADF for kernels outside its
    /// RBF-plus-affine-input support.
    pub fn new(kind: MatcherKind, kernel: &HeteroKernel) -> Result<Self> {
        if kind == MatcherKind::Adf {
            kernel.require_adf_compatible()?;
        }
        Ok(Self {
            kind,
            ukf: UkfConfig::default(),
            adf: AdfConfig::default(),
        })
    }

    pub fn with_ukf(mut self, cfg: UkfConfig) -> Self {
        self.ukf = cfg;
        self.adf.ukf = cfg;
        self
    }

    pub fn predict(
        &self,
        belief: &mut JointBelief,
        kernel: &HeteroKernel,
        model: &ModelSpec,
        c: &DVector<f64>,
    ) -> Result<StepStats> {
        match self.kind {
            MatcherKind::Ekf => predict_ekf(belief, kernel, model, c),
            MatcherKind::Ukf => predict_ukf(belief, kernel, model, c, &self.ukf),
            MatcherKind::Adf => predict_adf(belief, kernel, model, c, &self.adf),
        }
    }

    pub fn correct(
        &self,
        belief: &mut JointBelief,
        model: &ModelSpec,
        y: &DVector<f64>,
    ) -> Result<StepStats> {
        let mode = match self.kind {
            MatcherKind::Ekf => CorrectionMode::Ekf,
            MatcherKind::Ukf | MatcherKind::Adf => CorrectionMode::Ukf(self.ukf),
        };
        correct(belief, model, y, mode)
    }
}

/// Recovers the state factor block `C` from sigma deviations:
/// `C·Cᵀ = Σ_i w_i D_i·D_iᵀ + Σ_p − B·Bᵀ`, assembled as a thin QR of
/// the positively weighted terms followed by Cholesky downdates for
/// the negative ones. A downdate failure rebuilds `C` densely (and
/// only `C`, preserving the factor's upper blocks).
pub(crate) fn recover_state_factor(
    deviations: &DMatrix<f64>,
    center_dev: &DVector<f64>,
    w: &SigmaWeights,
    sigma_p: &DMatrix<f64>,
    sigma_p_chol: &LowerTriangular,
    b_new: &DMatrix<f64>,
    stats: &mut StepStats,
) -> Result<LowerTriangular> {
    let d_x = center_dev.len();
    let n_pts = deviations.ncols();
    let center_in_qr = w.w0c >= 0.0;

    let mut rows = n_pts + d_x;
    if center_in_qr {
        rows += 1;
    }
    let mut m = DMatrix::zeros(rows, d_x);
    let sw = w.wi.sqrt();
    for i in 0..n_pts {
        m.row_mut(i)
            .copy_from(&(deviations.column(i) * sw).transpose());
    }
    m.view_mut((n_pts, 0), (d_x, d_x))
        .copy_from(&sigma_p_chol.matrix().transpose());
    if center_in_qr {
        m.row_mut(n_pts + d_x)
            .copy_from(&(center_dev * w.w0c.sqrt()).transpose());
    }

    let mut down_cols = b_new.clone();
    if !center_in_qr {
        let extra = center_dev * (-w.w0c).sqrt();
        down_cols = DMatrix::from_columns(
            &down_cols
                .column_iter()
                .chain(extra.column_iter())
                .map(|c| c.into_owned())
                .collect::<Vec<_>>(),
        );
    }

    let r = linalg::thin_qr(&m);
    let attempt = LowerTriangular::from_matrix(r.transpose())
        .and_then(|cand| linalg::chol_downdate_cols(&cand, &down_cols));
    match attempt {
        Ok(c) => Ok(c),
        Err(_) => {
            stats.dense_fallbacks += 1;
            let mut s_xx = sigma_p.clone();
            for i in 0..n_pts {
                let d = deviations.column(i);
                s_xx += w.wi * &d * d.transpose();
            }
            s_xx += w.w0c * center_dev * center_dev.transpose();
            s_xx -= b_new * b_new.transpose();
            let s_xx = (&s_xx + s_xx.transpose()) * 0.5;
            linalg::cholesky(&s_xx)
        }
    }
}
