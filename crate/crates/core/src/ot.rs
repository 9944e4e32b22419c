//! Mini-batch optimal-transport pairing of noise and data batches.
//!
//! An exact linear-assignment solve over the squared-distance matrix
//! pairs each noise row with a data row at minimum total cost. The
//! diagnostic [`coupling_cost_stats`] compares the mean squared pair
//! distance under this coupling against independent pairing, where it
//! equals `E‖x − ε‖² = tr(Σ + I)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{SpikedModel, TimeMode};
use crate::scalar::Real;
use crate::seed::mix;

/// Largest supported assignment size; the solver is cubic in the batch
/// size, so bigger problems want a different algorithm.
pub const MAX_ASSIGNMENT_SIZE: usize = 4096;

/// Minimum-cost perfect matching of one batch onto another.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult<T> {
    /// Row `i` of the first batch pairs with row `permutation[i]` of
    /// the second; always a bijection on `0..B`.
    pub permutation: Vec<usize>,
    /// `Σᵢ cost[i][permutation[i]]`, recomputed from the input matrix.
    pub total_cost: T,
}

/// How noise and data rows are paired when measuring coupling cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingMode {
    /// Row `i` with row `i`: the independent coupling.
    Independent,
    /// Exact assignment within each batch.
    MinibatchOt,
}

impl PairingMode {
    pub fn label(self) -> &'static str {
        match self {
            PairingMode::Independent => "independent",
            PairingMode::MinibatchOt => "minibatch_ot",
        }
    }
}

/// Mean squared pair distance under one pairing mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingCostStats {
    pub mode: PairingMode,
    pub batch_size: usize,
    pub n_batches: usize,
    /// Mean of `‖x − ε‖²` over all pairs in all batches.
    pub mean_pair_cost: f64,
    /// Standard error of the mean, from the spread of per-batch means.
    pub std_error: f64,
}

/// Pairwise squared Euclidean distances: entry `(i, j)` is
/// `‖eps_batch[i] − x_batch[j]‖²`.
pub fn cost_matrix<T: Real>(eps_batch: &Matrix<T>, x_batch: &Matrix<T>) -> Result<Matrix<T>> {
    if eps_batch.nrows() != x_batch.nrows() || eps_batch.ncols() != x_batch.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "batch shapes differ: {}x{} vs {}x{}",
            eps_batch.nrows(),
            eps_batch.ncols(),
            x_batch.nrows(),
            x_batch.ncols()
        )));
    }
    let b = eps_batch.nrows();
    let mut cost = Matrix::zeros(b, b);
    for i in 0..b {
        let ei = eps_batch.row(i);
        for j in 0..b {
            let xj = x_batch.row(j);
            let mut acc = T::zero();
            for (&e, &x) in ei.iter().zip(xj) {
                let diff = e - x;
                acc += diff * diff;
            }
            cost.set(i, j, acc);
        }
    }
    Ok(cost)
}

/// Exact minimum-cost assignment by shortest augmenting paths with
/// potentials, cubic in the matrix size.
///
/// Among equal-cost matchings the result is the one reached by
/// augmenting rows in order and scanning columns ascending, which is
/// deterministic but otherwise implementation-defined.
pub fn solve_assignment<T: Real>(cost: &Matrix<T>) -> Result<AssignmentResult<T>> {
    let n = cost.nrows();
    if n == 0 || cost.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "assignment needs a non-empty square matrix, got {}x{}",
            n,
            cost.ncols()
        )));
    }
    if n > MAX_ASSIGNMENT_SIZE {
        return Err(Error::InvalidParameter(format!(
            "assignment size {} exceeds the supported maximum {}",
            n, MAX_ASSIGNMENT_SIZE
        )));
    }
    if cost.data().iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite(
            "assignment cost matrix has a non-finite entry".into(),
        ));
    }

    // Potentials u, v index rows/columns shifted by one; slot 0 is the
    // virtual unassigned marker.
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut permutation = vec![usize::MAX; n];
    for j in 1..=n {
        permutation[row_of[j] - 1] = j - 1;
    }
    debug_assert!(is_bijection(&permutation));
    let total_cost = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.get(i, j))
        .sum();
    Ok(AssignmentResult {
        permutation,
        total_cost,
    })
}

fn is_bijection(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter()
        .all(|&j| j < seen.len() && !std::mem::replace(&mut seen[j], true))
}

/// Reorders `x_batch` so its rows pair with `eps_batch` at minimum
/// total squared distance; marginals are untouched.
pub fn pair_minibatch<T: Real>(
    eps_batch: &Matrix<T>,
    x_batch: &Matrix<T>,
) -> Result<(Matrix<T>, AssignmentResult<T>)> {
    let cost = cost_matrix(eps_batch, x_batch)?;
    let assignment = solve_assignment(&cost)?;
    let mut paired = Matrix::zeros(x_batch.nrows(), x_batch.ncols());
    for (i, &j) in assignment.permutation.iter().enumerate() {
        paired.row_mut(i).copy_from_slice(x_batch.row(j));
    }
    Ok((paired, assignment))
}

/// Mean squared pair distance over freshly drawn `(ε, x)` batches.
///
/// Batch `b` draws from `mix(seed, b, batch_size)` regardless of mode,
/// so the two modes see the same data and a size-1 batch reproduces
/// the independent cost bit for bit. Batches run concurrently; the
/// aggregate is over per-batch means in index order.
pub fn coupling_cost_stats(
    model: &SpikedModel<f64>,
    mode: PairingMode,
    batch_size: usize,
    n_batches: usize,
    seed: u64,
) -> Result<CouplingCostStats> {
    if batch_size == 0 || n_batches == 0 {
        return Err(Error::InvalidParameter(format!(
            "batch_size and n_batches must be positive, got {} and {}",
            batch_size, n_batches
        )));
    }
    if batch_size > MAX_ASSIGNMENT_SIZE {
        return Err(Error::InvalidParameter(format!(
            "batch_size {} exceeds the supported maximum {}",
            batch_size, MAX_ASSIGNMENT_SIZE
        )));
    }

    let batch_means: Vec<f64> = (0..n_batches)
        .into_par_iter()
        .map(|b| -> Result<f64> {
            // pair cost never involves t, so the interpolation time is
            // pinned to zero just to reuse the batch sampler
            let batch = model.sample_batch(
                batch_size,
                TimeMode::Fixed(0.0),
                mix(seed, b as u64, batch_size as u64),
            )?;
            let total = match mode {
                PairingMode::Independent => batch.u.data().iter().map(|&v| v * v).sum::<f64>(),
                PairingMode::MinibatchOt => {
                    solve_assignment(&cost_matrix(&batch.eps, &batch.x)?)?.total_cost
                }
            };
            Ok(total / batch_size as f64)
        })
        .collect::<Result<_>>()?;

    let n = n_batches as f64;
    let mean = batch_means.iter().sum::<f64>() / n;
    let std_error = if n_batches > 1 {
        let var = batch_means
            .iter()
            .map(|m| (m - mean) * (m - mean))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(CouplingCostStats {
        mode,
        batch_size,
        n_batches,
        mean_pair_cost: mean,
        std_error,
    })
}
