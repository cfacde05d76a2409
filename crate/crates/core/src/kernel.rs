//! Heterogeneous multi-output kernels.
//!
//! Each output dimension of the latent function gets its own
//! single-output kernel, hyperparameters, and input map, so dimensions
//! can live on different input spaces entirely. The prior covariance
//! across dimensions is exactly zero: the joint Gram matrix over mixed
//! outputs is block diagonal up to row/column permutation.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Central finite-difference step scale for input-map Jacobians.
const FD_STEP: f64 = 1e-6;

/// RBF (squared-exponential) hyperparameters, stored in log space so
/// unconstrained gradient steps keep them positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfParams {
    pub log_sigma2: f64,
    pub log_lengthscales: DVector<f64>,
}

impl RbfParams {
    /// Builds from natural-scale signal variance and length scales.
    pub fn new(sigma2: f64, lengthscales: &[f64]) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "signal variance must be finite positive, got {sigma2}"
            )));
        }
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::DimensionMismatch(
                "length scales must be nonempty, finite, positive".into(),
            ));
        }
        Ok(Self {
            log_sigma2: sigma2.ln(),
            log_lengthscales: DVector::from_iterator(
                lengthscales.len(),
                lengthscales.iter().map(|l| l.ln()),
            ),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.exp()
    }

    pub fn lengthscales(&self) -> DVector<f64> {
        self.log_lengthscales.map(f64::exp)
    }

    /// Log-space view `[log σ², log l₁, …]` used by the optimizer.
    pub fn log_hyper(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.log_lengthscales.len());
        v.push(self.log_sigma2);
        v.extend(self.log_lengthscales.iter());
        v
    }

    fn set_log_hyper(&mut self, vals: &[f64]) -> Result<()> {
        if vals.len() != 1 + self.log_lengthscales.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} hyperparameters, got {}",
                1 + self.log_lengthscales.len(),
                vals.len()
            )));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(
                "hyperparameters must stay finite".into(),
            ));
        }
        self.log_sigma2 = vals[0];
        for (i, v) in vals[1..].iter().enumerate() {
            self.log_lengthscales[i] = *v;
        }
        Ok(())
    }

    pub fn eval(&self, z1: &DVector<f64>, z2: &DVector<f64>) -> f64 {
        let mut q = 0.0;
        for i in 0..z1.len() {
            let d = z1[i] - z2[i];
            let l = self.log_lengthscales[i].exp();
            q += (d / l) * (d / l);
        }
        self.sigma2() * (-0.5 * q).exp()
    }

    /// Gradient of `eval` w.r.t. `[log σ², log l₁, …]`.
    fn grad(&self, z1: &DVector<f64>, z2: &DVector<f64>) -> Vec<f64> {
        let k = self.eval(z1, z2);
        let mut g = Vec::with_capacity(1 + z1.len());
        g.push(k);
        for i in 0..z1.len() {
            let d = z1[i] - z2[i];
            let l = self.log_lengthscales[i].exp();
            g.push(k * (d / l) * (d / l));
        }
        g
    }
}

/// Linear-in-features kernel component `φ(z)·W·φ(z′)ᵀ` with fixed
/// feature map and weight covariance, added on top of an RBF part.
#[derive(Clone)]
pub struct BasisKernelParams {
    basis: Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
    weight_cov: DMatrix<f64>,
}

impl BasisKernelParams {
    pub fn new(
        basis: Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
        weight_cov: DMatrix<f64>,
    ) -> Result<Self> {
        crate::linalg::cholesky(&weight_cov)?;
        Ok(Self { basis, weight_cov })
    }

    fn eval(&self, z1: &DVector<f64>, z2: &DVector<f64>) -> f64 {
        let f1 = (self.basis)(z1);
        let f2 = (self.basis)(z2);
        (f1.transpose() * &self.weight_cov * f2)[(0, 0)]
    }
}

impl fmt::Debug for BasisKernelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BasisKernelParams")
            .field("features", &self.weight_cov.nrows())
            .finish()
    }
}

/// User-supplied kernel; hyperparameter adaptation is opt-in via the
/// gradient hook.
pub trait CustomKernel: Send + Sync {
    fn eval(&self, z1: &DVector<f64>, z2: &DVector<f64>) -> f64;

    /// Gradient w.r.t. log hyperparameters, or `None` when the kernel
    /// is not differentiable in its parameters.
    fn grad_log_hyper(&self, _z1: &DVector<f64>, _z2: &DVector<f64>) -> Option<Vec<f64>> {
        None
    }

    fn n_hyper(&self) -> usize {
        0
    }
}

/// Kernel choice for one output dimension.
#[derive(Clone)]
pub enum KernelKind {
    Rbf(RbfParams),
    /// RBF plus a fixed linear-in-features component.
    RbfPlusBasis {
        rbf: RbfParams,
        basis: BasisKernelParams,
    },
    Custom(Arc<dyn CustomKernel>),
}

impl fmt::Debug for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::Rbf(p) => f.debug_tuple("Rbf").field(p).finish(),
            KernelKind::RbfPlusBasis { rbf, basis } => f
                .debug_struct("RbfPlusBasis")
                .field("rbf", rbf)
                .field("basis", basis)
                .finish(),
            KernelKind::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl KernelKind {
    pub fn eval(&self, z1: &DVector<f64>, z2: &DVector<f64>) -> f64 {
        match self {
            KernelKind::Rbf(p) => p.eval(z1, z2),
            KernelKind::RbfPlusBasis { rbf, basis } => rbf.eval(z1, z2) + basis.eval(z1, z2),
            KernelKind::Custom(k) => k.eval(z1, z2),
        }
    }

    pub fn is_pure_rbf(&self) -> bool {
        matches!(self, KernelKind::Rbf(_))
    }

    pub fn rbf_params(&self) -> Option<&RbfParams> {
        match self {
            KernelKind::Rbf(p) | KernelKind::RbfPlusBasis { rbf: p, .. } => Some(p),
            KernelKind::Custom(_) => None,
        }
    }

    pub fn n_hyper(&self) -> usize {
        match self {
            KernelKind::Rbf(p) | KernelKind::RbfPlusBasis { rbf: p, .. } => 1 + p.input_dim(),
            KernelKind::Custom(k) => k.n_hyper(),
        }
    }
}

/// Input map `φᵏ: (x, c) → zᵏ` selecting the kernel inputs for one
/// output dimension.
#[derive(Clone)]
pub enum InputMap {
    /// `z = Wx·x + Wc·c + b`.
    Affine {
        x_weights: DMatrix<f64>,
        c_weights: DMatrix<f64>,
        offset: DVector<f64>,
    },
    /// Arbitrary map; the state Jacobian falls back to central
    /// finite differences.
    Custom {
        map: Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>,
        output_dim: usize,
    },
}

impl fmt::Debug for InputMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputMap::Affine { x_weights, .. } => f
                .debug_struct("Affine")
                .field("output_dim", &x_weights.nrows())
                .finish(),
            InputMap::Custom { output_dim, .. } => f
                .debug_struct("Custom")
                .field("output_dim", output_dim)
                .finish(),
        }
    }
}

impl InputMap {
    pub fn affine(x_weights: DMatrix<f64>, c_weights: DMatrix<f64>, offset: DVector<f64>) -> Self {
        assert_eq!(x_weights.nrows(), c_weights.nrows());
        assert_eq!(x_weights.nrows(), offset.len());
        InputMap::Affine {
            x_weights,
            c_weights,
            offset,
        }
    }

    /// `z = x` for a state of dimension `d_x` (no control dependence).
    pub fn state_identity(d_x: usize, d_c: usize) -> Self {
        Self::affine(
            DMatrix::identity(d_x, d_x),
            DMatrix::zeros(d_x, d_c),
            DVector::zeros(d_x),
        )
    }

    /// `z = c[index]`, a single exogenous coordinate (e.g. time).
    pub fn control_coordinate(index: usize, d_x: usize, d_c: usize) -> Self {
        assert!(index < d_c);
        let mut c_weights = DMatrix::zeros(1, d_c);
        c_weights[(0, index)] = 1.0;
        Self::affine(DMatrix::zeros(1, d_x), c_weights, DVector::zeros(1))
    }

    pub fn output_dim(&self) -> usize {
        match self {
            InputMap::Affine { x_weights, .. } => x_weights.nrows(),
            InputMap::Custom { output_dim, .. } => *output_dim,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, InputMap::Affine { .. })
    }

    pub fn apply(&self, x: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        match self {
            InputMap::Affine {
                x_weights,
                c_weights,
                offset,
            } => x_weights * x + c_weights * c + offset,
            InputMap::Custom { map, .. } => map(x, c),
        }
    }

    /// `∂z/∂x`; exact for affine maps, central finite differences with
    /// step `1e-6·(1+|x_i|)` otherwise.
    pub fn jac_x(&self, x: &DVector<f64>, c: &DVector<f64>) -> DMatrix<f64> {
        match self {
            InputMap::Affine { x_weights, .. } => x_weights.clone(),
            InputMap::Custom { map, output_dim } => {
                let mut jac = DMatrix::zeros(*output_dim, x.len());
                for j in 0..x.len() {
                    let h = FD_STEP * (1.0 + x[j].abs());
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let diff = (map(&xp, c) - map(&xm, c)) / (2.0 * h);
                    jac.set_column(j, &diff);
                }
                jac
            }
        }
    }
}

/// Kernel and input map for one output dimension.
#[derive(Debug, Clone)]
pub struct DimensionKernel {
    pub kind: KernelKind,
    pub input_map: InputMap,
}

/// The multi-output kernel: one independent [`DimensionKernel`] per
/// output, block-diagonal prior across outputs.
#[derive(Debug, Clone)]
pub struct HeteroKernel {
    dims: Vec<DimensionKernel>,
}

impl HeteroKernel {
    pub fn new(dims: Vec<DimensionKernel>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::DimensionMismatch(
                "kernel needs at least one output dimension".into(),
            ));
        }
        for (k, d) in dims.iter().enumerate() {
            if let Some(p) = d.kind.rbf_params() {
                if p.input_dim() != d.input_map.output_dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "dim {k}: kernel expects {} inputs, map produces {}",
                        p.input_dim(),
                        d.input_map.output_dim()
                    )));
                }
            }
        }
        Ok(Self { dims })
    }

    pub fn n_dims(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, k: usize) -> &DimensionKernel {
        &self.dims[k]
    }

    /// Kernel input for dimension `k` at state/control `(x, c)`.
    pub fn input_for(&self, k: usize, x: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        self.dims[k].input_map.apply(x, c)
    }

    fn check_input(&self, k: usize, z: &DVector<f64>) -> Result<()> {
        let want = self.dims[k].input_map.output_dim();
        if z.len() != want {
            return Err(Error::DimensionMismatch(format!(
                "dim {k} expects {}-dim inputs, got {}",
                want,
                z.len()
            )));
        }
        Ok(())
    }

    /// Gram block for a single output dimension.
    pub fn eval_block(&self, k: usize, z1: &[DVector<f64>], z2: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        for z in z1.iter().chain(z2.iter()) {
            self.check_input(k, z)?;
        }
        let kind = &self.dims[k].kind;
        Ok(DMatrix::from_fn(z1.len(), z2.len(), |i, j| {
            kind.eval(&z1[i], &z2[j])
        }))
    }

    /// Gram matrix over mixed-output point lists. Entries pairing
    /// different output dimensions are exactly zero.
    pub fn eval_multi(
        &self,
        a: &[(usize, DVector<f64>)],
        b: &[(usize, DVector<f64>)],
    ) -> Result<DMatrix<f64>> {
        for (k, z) in a.iter().chain(b.iter()) {
            if *k >= self.dims.len() {
                return Err(Error::DimensionMismatch(format!(
                    "output dim {k} out of range ({} dims)",
                    self.dims.len()
                )));
            }
            self.check_input(*k, z)?;
        }
        Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
            let (ki, zi) = &a[i];
            let (kj, zj) = &b[j];
            if ki == kj {
                self.dims[*ki].kind.eval(zi, zj)
            } else {
                0.0
            }
        }))
    }

    /// Per-hyperparameter derivative matrices `∂K/∂θ` for dimension
    /// `k`, in the order of [`Self::log_hyper`].
    pub fn grad_hyper(
        &self,
        k: usize,
        z1: &[DVector<f64>],
        z2: &[DVector<f64>],
    ) -> Result<Vec<DMatrix<f64>>> {
        for z in z1.iter().chain(z2.iter()) {
            self.check_input(k, z)?;
        }
        let n_hyper = self.dims[k].kind.n_hyper();
        let mut out = vec![DMatrix::zeros(z1.len(), z2.len()); n_hyper];
        for i in 0..z1.len() {
            for j in 0..z2.len() {
                let g = match &self.dims[k].kind {
                    KernelKind::Rbf(p) | KernelKind::RbfPlusBasis { rbf: p, .. } => {
                        p.grad(&z1[i], &z2[j])
                    }
                    KernelKind::Custom(ck) => ck.grad_log_hyper(&z1[i], &z2[j]).ok_or_else(|| {
                        Error::Unsupported(
                            "custom kernel does not provide hyperparameter gradients".into(),
                        )
                    })?,
                };
                for (h, gv) in g.iter().enumerate() {
                    out[h][(i, j)] = *gv;
                }
            }
        }
        Ok(out)
    }

    /// Log-space hyperparameters of dimension `k` (empty for custom
    /// kernels without registered hyperparameters).
    pub fn log_hyper(&self, k: usize) -> Vec<f64> {
        match &self.dims[k].kind {
            KernelKind::Rbf(p) | KernelKind::RbfPlusBasis { rbf: p, .. } => p.log_hyper(),
            KernelKind::Custom(_) => Vec::new(),
        }
    }

    pub fn set_log_hyper(&mut self, k: usize, vals: &[f64]) -> Result<()> {
        match &mut self.dims[k].kind {
            KernelKind::Rbf(p) | KernelKind::RbfPlusBasis { rbf: p, .. } => p.set_log_hyper(vals),
            KernelKind::Custom(_) => Err(Error::Unsupported(
                "custom kernels have no assignable hyperparameters".into(),
            )),
        }
    }

    /// Prior variance `K₀ᵏ(z, z)`.
    pub fn variance_at(&self, k: usize, z: &DVector<f64>) -> f64 {
        self.dims[k].kind.eval(z, z)
    }

    /// Checks the preconditions for exact assumed-density moment
    /// matching: pure RBF kernels and affine input maps everywhere.
    pub fn require_adf_compatible(&self) -> Result<()> {
        for (k, d) in self.dims.iter().enumerate() {
            if !d.kind.is_pure_rbf() {
                return Err(Error::Unsupported(format!(
                    "exact moment matching needs a pure RBF kernel in every dimension (dim {k} is not)"
                )));
            }
            if !d.input_map.is_affine() {
                return Err(Error::Unsupported(format!(
                    "exact moment matching needs affine input maps (dim {k} is not)"
                )));
            }
        }
        Ok(())
    }
}
