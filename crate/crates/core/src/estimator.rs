//! Single-sample time recovery from the variance clock.
//!
//! The residual statistic `σ̂⊥²(z) = ‖P⊥z‖²/(d−k)` concentrates around
//! the clock value `σ⊥²(t)`, so inverting the clock's quadratic on a
//! chosen branch recovers `t` from one interpolant. Estimates whose
//! statistic falls below the clock minimum (negative discriminant) are
//! discarded by status, and a delta-method prediction gives the
//! per-sample error scale `σ⊥⁴(t)·(2/(d−k)) / σ⊥²′(t)²`.

use crate::clock::{clock_eval, critical_point};
use crate::error::{Error, Result};
use crate::linalg::{orthonormality_defect, Matrix};
use crate::model::{SpikedModel, TimeInterval};
use crate::scalar::{cast, Real};

/// Which monotone branch of the clock to invert.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `t ≤ t*`; the default in every studied setting since `t* ≥ 0.89`.
    Descending,
    /// `t ≥ t*`.
    Ascending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateStatus {
    OkDescending,
    OkAscending,
    DiscardedNegativeDiscriminant,
    ClippedToInterval,
}

/// Outcome of one inversion: the statistic, the recovered time when the
/// inversion succeeded, and how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeEstimate<T> {
    pub sigma_hat_perp2: T,
    pub t_hat: Option<T>,
    pub status: EstimateStatus,
}

impl<T: Real> TimeEstimate<T> {
    #[inline]
    pub fn is_discarded(&self) -> bool {
        self.status == EstimateStatus::DiscardedNegativeDiscriminant
    }
}

/// Discriminants within this absolute tolerance of zero are treated as
/// the boundary case and return the critical point.
pub const DISCRIMINANT_BOUNDARY_TOL: f64 = 1e-14;

/// Default half-width of the window around `t*` excluded from theory
/// aggregates.
pub const DEFAULT_EXCLUSION_HALFWIDTH: f64 = 0.05;

/// `‖P⊥z‖²/(d−k)`: mean squared component of `z` outside the signal
/// subspace.
pub fn residual_statistic<T: Real>(z: &[T], model: &SpikedModel<T>) -> Result<T> {
    let (_, resid) = model.split_signal(z)?;
    Ok(resid / cast(model.d_minus_k() as f64))
}

/// Solves `(1+σ²)t² − 2t + (1−σ̂⊥²) = 0` for `t` on the requested
/// branch.
///
/// The discriminant is negative exactly when the statistic falls below
/// the clock minimum `σ²/(1+σ²)`; those inversions come back with the
/// discarded status rather than an error. Roots are projected onto
/// `clip` (default `[0,1]`) and flagged when the projection moved them.
pub fn invert_clock<T: Real>(
    sigma_hat_perp2: T,
    sigma2: T,
    branch: Branch,
    clip: Option<TimeInterval<T>>,
) -> TimeEstimate<T> {
    let a = T::one() + sigma2;
    // quarter of the quadratic's discriminant
    let disc4 = a * sigma_hat_perp2 - sigma2;
    let boundary = cast::<T>(DISCRIMINANT_BOUNDARY_TOL);

    let root = if disc4.abs() <= boundary {
        critical_point(sigma2)
    } else if disc4 < T::zero() {
        return TimeEstimate {
            sigma_hat_perp2,
            t_hat: None,
            status: EstimateStatus::DiscardedNegativeDiscriminant,
        };
    } else {
        let sq = disc4.sqrt();
        match branch {
            Branch::Descending => (T::one() - sq) / a,
            Branch::Ascending => (T::one() + sq) / a,
        }
    };

    let interval = clip.unwrap_or_else(TimeInterval::unit);
    let clipped = interval.clamp(root);
    let status = if clipped != root {
        EstimateStatus::ClippedToInterval
    } else {
        match branch {
            Branch::Descending => EstimateStatus::OkDescending,
            Branch::Ascending => EstimateStatus::OkAscending,
        }
    };
    TimeEstimate {
        sigma_hat_perp2,
        t_hat: Some(clipped),
        status,
    }
}

/// Residual statistic followed by clock inversion.
pub fn estimate_time<T: Real>(
    z: &[T],
    model: &SpikedModel<T>,
    branch: Branch,
    clip: Option<TimeInterval<T>>,
) -> Result<TimeEstimate<T>> {
    let stat = residual_statistic(z, model)?;
    Ok(invert_clock(stat, model.sigma2(), branch, clip))
}

/// Delta-method prediction of the estimator's error spread.
#[derive(Debug, Clone)]
pub struct TheoryPrediction<T> {
    /// Conditional std `√Var(t̂−t | t)` per sample; `None` for samples
    /// inside the exclusion window around the critical point.
    pub per_sample_std: Vec<Option<T>>,
    /// Root-mean of the included per-sample variances.
    pub aggregate_std: T,
    /// Share of samples inside the exclusion window.
    pub excluded_fraction: T,
}

/// `Var(t̂−t | t) ≈ σ⊥⁴(t)·(2/(d−k)) / [−2(1−t)+2tσ²]²`, without any
/// exclusion handling.
#[inline]
pub fn delta_method_variance<T: Real>(sigma2: T, d_minus_k: usize, t: T) -> T {
    let (v, dv) = clock_eval(sigma2, t);
    let two = T::one() + T::one();
    v * v * (two / cast::<T>(d_minus_k as f64)) / (dv * dv)
}

/// Per-sample and dataset-level theory stds for a set of time draws,
/// excluding draws within `exclusion_halfwidth` of the critical point.
pub fn theory_prediction<T: Real>(
    sigma2: T,
    d_minus_k: usize,
    t_samples: &[T],
    exclusion_halfwidth: T,
) -> Result<TheoryPrediction<T>> {
    if d_minus_k == 0 {
        return Err(Error::InvalidParameter(
            "need a non-empty residual subspace (d − k >= 1)".into(),
        ));
    }
    if t_samples.is_empty() {
        return Err(Error::InvalidParameter("no time samples supplied".into()));
    }
    let t_star = critical_point(sigma2);
    let mut included = 0usize;
    let mut var_sum = T::zero();
    let per_sample_std: Vec<Option<T>> = t_samples
        .iter()
        .map(|&t| {
            if (t - t_star).abs() < exclusion_halfwidth {
                None
            } else {
                let var = delta_method_variance(sigma2, d_minus_k, t);
                included += 1;
                var_sum += var;
                Some(var.sqrt())
            }
        })
        .collect();
    if included == 0 {
        return Err(Error::Degenerate(
            "all time samples fall inside the exclusion window around the critical point".into(),
        ));
    }
    let n = cast::<T>(t_samples.len() as f64);
    Ok(TheoryPrediction {
        aggregate_std: (var_sum / cast(included as f64)).sqrt(),
        excluded_fraction: cast::<T>((t_samples.len() - included) as f64) / n,
        per_sample_std,
    })
}

/// `(Σλ)² / Σλ²`: the concentration-relevant dimension of a spectrum.
/// Equals the length for a flat spectrum and 1 for a single dominant
/// eigenvalue.
pub fn effective_rank<T: Real>(eigenvalues: &[T]) -> Result<T> {
    if eigenvalues.is_empty() {
        return Err(Error::InvalidParameter("empty spectrum".into()));
    }
    if let Some(bad) = eigenvalues.iter().find(|v| !(**v >= T::zero())) {
        return Err(Error::InvalidParameter(format!(
            "eigenvalues must be non-negative, got {}",
            bad
        )));
    }
    let tr: T = eigenvalues.iter().copied().sum();
    let tr2: T = eigenvalues.iter().map(|&v| v * v).sum();
    if tr2 == T::zero() {
        return Err(Error::Degenerate("all-zero spectrum".into()));
    }
    Ok(tr * tr / tr2)
}

/// Orthonormality tolerance for projector bases passed to
/// [`estimate_time_general`].
pub const PROJECTOR_ORTHO_TOL: f64 = 1e-8;

/// Clock inversion for an arbitrary projected subspace.
///
/// With projector `Q` (orthonormal `d×m` columns) and the eigenvalues
/// of the projected data covariance, the statistic `‖Qᵀz‖²/m`
/// concentrates around `(1−t)² + t²μ̄` where `μ̄` is the mean projected
/// eigenvalue, so the same quadratic applies with `σ²` replaced by `μ̄`.
/// Also returns the effective rank of the projected interpolant
/// covariance at `t̂` as a concentration diagnostic.
pub fn estimate_time_general<T: Real>(
    z: &[T],
    projector_basis: &Matrix<T>,
    projected_eigenvalues: &[T],
    branch: Branch,
    clip: Option<TimeInterval<T>>,
) -> Result<(TimeEstimate<T>, Option<T>)> {
    let (d, m) = (projector_basis.nrows(), projector_basis.ncols());
    if z.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "vector has length {}, projector expects {}",
            z.len(),
            d
        )));
    }
    if projected_eigenvalues.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} projected eigenvalues for {} projector columns",
            projected_eigenvalues.len(),
            m
        )));
    }
    let defect = orthonormality_defect(projector_basis);
    if defect > cast(PROJECTOR_ORTHO_TOL) {
        return Err(Error::InvalidParameter(format!(
            "projector basis is not orthonormal (defect {})",
            defect
        )));
    }
    let proj = projector_basis.tr_mul_vec(z);
    let stat = proj.iter().map(|&v| v * v).sum::<T>() / cast(m as f64);
    invert_projected(stat, projected_eigenvalues, branch, clip)
}

/// Inner inversion of [`estimate_time_general`] on a precomputed
/// statistic, for callers that validate the projector once and loop.
pub fn invert_projected<T: Real>(
    stat: T,
    projected_eigenvalues: &[T],
    branch: Branch,
    clip: Option<TimeInterval<T>>,
) -> Result<(TimeEstimate<T>, Option<T>)> {
    let m = projected_eigenvalues.len();
    if m == 0 {
        return Err(Error::InvalidParameter("empty projected spectrum".into()));
    }
    let mu_bar = projected_eigenvalues.iter().copied().sum::<T>() / cast(m as f64);
    if !(mu_bar > T::zero()) {
        return Err(Error::Degenerate(
            "projected spectrum has non-positive mean".into(),
        ));
    }
    let est = invert_clock(stat, mu_bar, branch, clip);
    let r_eff = match est.t_hat {
        Some(t) => {
            let omt = T::one() - t;
            let shifted: Vec<T> = projected_eigenvalues
                .iter()
                .map(|&mu| omt * omt + t * t * mu)
                .collect();
            Some(effective_rank(&shifted)?)
        }
        None => None,
    };
    Ok((est, r_eff))
}
