//! Checkpoint and restore of a learning run: the joint belief, the
//! inducing bookkeeping, and the per-dimension kernel hyperparameters
//! go into one versioned JSON document.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::HeteroKernel;
use crate::linalg::LowerTriangular;
use crate::model::{InducingSet, JointBelief};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DimRecord {
    inputs: Vec<Vec<f64>>,
    ages: Vec<u64>,
    log_hyper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    version: u32,
    d_x: usize,
    mean: Vec<f64>,
    /// Row-major dense factor, lower triangular with positive diagonal.
    factor: Vec<f64>,
    next_age: u64,
    dims: Vec<DimRecord>,
}

/// Writes the belief, inducing set, and kernel hyperparameters as one
/// JSON document.
pub fn save_snapshot<W: Write>(
    belief: &JointBelief,
    kernel: &HeteroKernel,
    writer: W,
) -> Result<()> {
    let inducing = belief.inducing();
    if inducing.n_dims() != kernel.n_dims() {
        return Err(Error::Snapshot(format!(
            "belief has {} output dimensions but kernel has {}",
            inducing.n_dims(),
            kernel.n_dims()
        )));
    }
    let dims = (0..kernel.n_dims())
        .map(|k| DimRecord {
            inputs: inducing
                .inputs(k)
                .iter()
                .map(|z| z.iter().copied().collect())
                .collect(),
            ages: (0..inducing.count(k)).map(|j| inducing.age(k, j)).collect(),
            log_hyper: kernel.log_hyper(k),
        })
        .collect();
    let n = belief.mean().len();
    let factor = belief.factor().matrix();
    let file = SnapshotFile {
        version: FORMAT_VERSION,
        d_x: belief.d_x(),
        mean: belief.mean().iter().copied().collect(),
        factor: (0..n)
            .flat_map(|i| (0..n).map(move |j| factor[(i, j)]))
            .collect(),
        next_age: inducing.next_age(),
        dims,
    };
    serde_json::to_writer(writer, &file).map_err(|e| Error::Snapshot(e.to_string()))
}

/// Restores a snapshot written by [`save_snapshot`]. The kernel must
/// have the same dimension structure as the saved run; its
/// hyperparameters are overwritten from the snapshot before the belief
/// is rebuilt, so the returned belief's kernel caches match `kernel`.
pub fn load_snapshot<R: Read>(reader: R, kernel: &mut HeteroKernel) -> Result<JointBelief> {
    let file: SnapshotFile =
        serde_json::from_reader(reader).map_err(|e| Error::Snapshot(e.to_string()))?;
    if file.version != FORMAT_VERSION {
        return Err(Error::Snapshot(format!(
            "unsupported snapshot version {}, expected {FORMAT_VERSION}",
            file.version
        )));
    }
    if file.dims.len() != kernel.n_dims() {
        return Err(Error::Snapshot(format!(
            "snapshot has {} output dimensions but kernel has {}",
            file.dims.len(),
            kernel.n_dims()
        )));
    }
    let n = file.mean.len();
    if file.factor.len() != n * n {
        return Err(Error::Snapshot(format!(
            "factor payload has {} entries, expected {}",
            file.factor.len(),
            n * n
        )));
    }

    let mut inputs = Vec::with_capacity(file.dims.len());
    let mut ages = Vec::with_capacity(file.dims.len());
    for (k, dim) in file.dims.iter().enumerate() {
        if dim.ages.len() != dim.inputs.len() {
            return Err(Error::Snapshot(format!(
                "dimension {k} has {} ages for {} inputs",
                dim.ages.len(),
                dim.inputs.len()
            )));
        }
        if !dim.log_hyper.is_empty() {
            kernel.set_log_hyper(k, &dim.log_hyper)?;
        }
        inputs.push(
            dim.inputs
                .iter()
                .map(|z| DVector::from_vec(z.clone()))
                .collect::<Vec<_>>(),
        );
        ages.push(dim.ages.clone());
    }
    let inducing = InducingSet::from_saved(inputs, ages, file.next_age);

    let factor = LowerTriangular::from_matrix(DMatrix::from_fn(n, n, |i, j| {
        file.factor[i * n + j]
    }))?;
    JointBelief::from_parts(
        DVector::from_vec(file.mean),
        factor,
        inducing,
        kernel,
        file.d_x,
    )
}
