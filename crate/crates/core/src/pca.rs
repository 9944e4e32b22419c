//! Fitting the spiked covariance model to a data matrix.
//!
//! Pipeline: sample covariance of the centered rows, symmetric
//! eigendecomposition, rank selection (fixed or by cumulative
//! explained variance), then spiked parameters: the noise floor is the
//! mean of the trailing eigenvalues and each spike excess is the
//! clipped surplus `max(λ̂ᵢ − σ̂², 0)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimator::{estimate_time, theory_prediction, Branch, DEFAULT_EXCLUSION_HALFWIDTH};
use crate::linalg::{jacobi_eigen, orthonormality_defect, Matrix};
use crate::model::SpikedModel;
use crate::scalar::{cast, Real};
use crate::seed::rng_from;

/// How `fit_spiked` picks the signal rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankRule<T> {
    /// Use exactly this rank.
    Fixed(usize),
    /// Smallest rank whose cumulative explained variance reaches the
    /// fraction, clamped to `d − 1`.
    Threshold(T),
}

/// Spiked-model parameters recovered from data.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedSpike<T: Real> {
    /// Selected signal rank.
    pub k: usize,
    /// `d × k` orthonormal signal basis, leading eigenvectors first.
    pub u_x: Matrix<T>,
    /// Spike excesses `max(λ̂ᵢ − σ̂², 0)`, descending.
    pub lambdas: Vec<T>,
    /// Noise floor: mean of the trailing `d − k` eigenvalues.
    pub sigma2: T,
    /// Sample mean subtracted before the covariance.
    pub mean: Vec<T>,
    /// Fraction of total empirical variance inside the signal block.
    pub explained_fraction: T,
}

impl<T: Real> FittedSpike<T> {
    /// Rebuilds a sampling model from the fitted parameters.
    pub fn to_model(&self) -> Result<SpikedModel<T>> {
        SpikedModel::with_basis(
            self.u_x.nrows(),
            self.k,
            self.lambdas.clone(),
            self.sigma2,
            self.u_x.clone(),
        )
    }
}

/// Sample mean and unbiased sample covariance of the rows of `x`.
///
/// The covariance is filled from its upper triangle, so it is exactly
/// symmetric.
pub fn sample_covariance<T: Real>(x: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    let n = x.nrows();
    let d = x.ncols();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "covariance needs at least 2 samples, got {}",
            n
        )));
    }
    let inv_n = T::one() / cast::<T>(n as f64);
    let mut mean = vec![T::zero(); d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m *= inv_n;
    }

    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![T::zero(); d];
    for i in 0..n {
        for ((c, &v), &m) in centered.iter_mut().zip(x.row(i)).zip(&mean) {
            *c = v - m;
        }
        for a in 0..d {
            let ca = centered[a];
            for (b, &cb) in centered.iter().enumerate().skip(a) {
                let v = cov.get(a, b) + ca * cb;
                cov.set(a, b, v);
            }
        }
    }
    let norm = T::one() / cast::<T>((n - 1) as f64);
    for a in 0..d {
        for b in a..d {
            let v = cov.get(a, b) * norm;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    Ok((mean, cov))
}

/// Asymmetry beyond this fraction of the largest entry is rejected.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Eigendecomposition of a symmetric matrix: orthonormal eigenvectors
/// in columns, eigenvalues descending, signs fixed so each vector's
/// first nonzero component is positive.
pub fn sym_eig<T: Real>(cov: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>)> {
    let d = cov.nrows();
    if cov.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            d,
            cov.ncols()
        )));
    }
    let scale = cov.max_abs();
    let tol = cast::<T>(SYMMETRY_TOL) * scale;
    for i in 0..d {
        for j in (i + 1)..d {
            if (cov.get(i, j) - cov.get(j, i)).abs() > tol {
                return Err(Error::InvalidParameter(format!(
                    "matrix is not symmetric at ({}, {})",
                    i, j
                )));
            }
        }
    }
    let (vecs, vals) = jacobi_eigen(cov)?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).expect("finite eigenvalues"));
    let mut sorted_vecs = Matrix::zeros(d, d);
    for (new, &old) in order.iter().enumerate() {
        let mut sign = T::one();
        for i in 0..d {
            let v = vecs.get(i, old);
            if v != T::zero() {
                if v < T::zero() {
                    sign = -T::one();
                }
                break;
            }
        }
        for i in 0..d {
            sorted_vecs.set(i, new, sign * vecs.get(i, old));
        }
    }
    let sorted_vals: Vec<T> = order.iter().map(|&o| vals[o]).collect();
    Ok((sorted_vecs, sorted_vals))
}

/// Smallest rank whose cumulative explained variance reaches
/// `threshold_fraction`, clamped to `d − 1` so the residual subspace
/// stays non-empty.
pub fn choose_k<T: Real>(eigvals: &[T], threshold_fraction: T) -> Result<usize> {
    if eigvals.is_empty() {
        return Err(Error::InvalidParameter("empty spectrum".into()));
    }
    if !(threshold_fraction > T::zero() && threshold_fraction < T::one()) {
        return Err(Error::InvalidParameter(format!(
            "threshold fraction must lie in (0, 1), got {}",
            threshold_fraction
        )));
    }
    if eigvals.iter().any(|v| !v.is_finite() || *v < T::zero()) {
        return Err(Error::InvalidParameter(
            "spectrum must be non-negative and finite".into(),
        ));
    }
    let total: T = eigvals.iter().copied().sum();
    if total == T::zero() {
        return Err(Error::Degenerate("all-zero spectrum".into()));
    }
    let target = threshold_fraction * total;
    let mut cum = T::zero();
    for (i, &v) in eigvals.iter().enumerate() {
        cum += v;
        if cum >= target {
            return Ok((i + 1).min(eigvals.len() - 1));
        }
    }
    Ok(eigvals.len() - 1)
}

/// Fits the spiked model to the rows of `x`.
pub fn fit_spiked<T: Real>(x: &Matrix<T>, rank_rule: RankRule<T>) -> Result<FittedSpike<T>> {
    let d = x.ncols();
    let (mean, cov) = sample_covariance(x)?;
    let (vecs, raw_vals) = sym_eig(&cov)?;
    // tiny negative eigenvalues of a sample covariance are roundoff
    let vals: Vec<T> = raw_vals
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();

    let k = match rank_rule {
        RankRule::Fixed(k) => {
            if k >= d {
                return Err(Error::InvalidParameter(format!(
                    "fixed rank {} needs a residual subspace in dimension {}",
                    k, d
                )));
            }
            k
        }
        RankRule::Threshold(frac) => choose_k(&vals, frac)?,
    };

    let trailing = &vals[k..];
    let sigma2 = trailing.iter().copied().sum::<T>() / cast::<T>(trailing.len() as f64);
    if !(sigma2 > T::zero()) {
        return Err(Error::Degenerate(
            "trailing spectrum is zero; data have no noise floor".into(),
        ));
    }
    let lambdas: Vec<T> = vals[..k]
        .iter()
        .map(|&v| if v > sigma2 { v - sigma2 } else { T::zero() })
        .collect();

    let total: T = vals.iter().copied().sum();
    let signal: T = vals[..k].iter().copied().sum();
    let mut u_x = Matrix::zeros(d, k);
    for j in 0..k {
        for i in 0..d {
            u_x.set(i, j, vecs.get(i, j));
        }
    }
    Ok(FittedSpike {
        k,
        u_x,
        lambdas,
        sigma2,
        mean,
        explained_fraction: signal / total,
    })
}

/// Largest principal angle (radians) between the column spans of two
/// orthonormal frames sharing an ambient dimension.
pub fn largest_principal_angle<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "frames live in different dimensions: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let tol = cast::<T>(1e-6);
    if orthonormality_defect(a) > tol || orthonormality_defect(b) > tol {
        return Err(Error::InvalidParameter(
            "principal angles need orthonormal frames".into(),
        ));
    }
    let m = a.tr_mul(b)?;
    // Gram matrix on the thinner side; its eigenvalues are squared
    // cosines of the principal angles
    let gram = if m.nrows() <= m.ncols() {
        let mt = m.transpose();
        mt.tr_mul(&mt)?
    } else {
        m.tr_mul(&m)?
    };
    let (_, vals) = jacobi_eigen(&gram)?;
    let min_cos2 = vals
        .iter()
        .copied()
        .fold(T::infinity(), T::min)
        .max(T::zero())
        .min(T::one());
    Ok(min_cos2.sqrt().acos())
}

/// Estimator check on held-in data: interpolants formed from rows of
/// `x` (centered with the fitted mean) against the fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct ThenEstimateReport {
    /// Samples with a positive discriminant and a true time on the
    /// descending branch's identifiable side.
    pub n_used: usize,
    pub n_discarded: usize,
    /// Mean `|t̂ − t|` over the used samples.
    pub mae: f64,
    /// Aggregate delta-method std at the fitted floor and rank.
    pub theory_std: f64,
    /// Theory MAE for a centered Gaussian error: `√(2/π)·theory_std`.
    pub theory_mae: f64,
}

/// Runs the time estimator on `n` fresh interpolants built from data
/// rows, cycling through the rows in order; `t ~ U[0, 1]` and the
/// noise endpoint are drawn from `seed`. Uses the same population
/// window as the error histogram: draws above `t* − 0.05` or with a
/// negative discriminant count as discarded.
pub fn then_estimate(
    fitted: &FittedSpike<f64>,
    x: &Matrix<f64>,
    n: usize,
    seed: u64,
) -> Result<ThenEstimateReport> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "need at least one interpolant".into(),
        ));
    }
    if x.ncols() != fitted.u_x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "data dimension {} does not match fitted dimension {}",
            x.ncols(),
            fitted.u_x.nrows()
        )));
    }
    let model = fitted.to_model()?;
    let t_star = crate::clock::critical_point(fitted.sigma2);
    let cutoff = t_star - DEFAULT_EXCLUSION_HALFWIDTH;
    let d = x.ncols();
    let mut rng = rng_from(seed);
    let mut z = vec![0.0_f64; d];
    let mut abs_errors = Vec::new();
    let mut t_used = Vec::new();
    let mut n_discarded = 0usize;
    for i in 0..n {
        let row = x.row(i % x.nrows());
        let t = rng.gen::<f64>();
        for j in 0..d {
            let eps: f64 = rng.sample(StandardNormal);
            z[j] = (1.0 - t) * eps + t * (row[j] - fitted.mean[j]);
        }
        let est = estimate_time(&z, &model, Branch::Descending, None)?;
        match est.t_hat {
            Some(t_hat) if t <= cutoff => {
                abs_errors.push((t_hat - t).abs());
                t_used.push(t);
            }
            _ => n_discarded += 1,
        }
    }
    if abs_errors.is_empty() {
        return Err(Error::Degenerate(
            "no usable interpolants below the critical point".into(),
        ));
    }
    let mae = abs_errors.iter().sum::<f64>() / abs_errors.len() as f64;
    let theory = theory_prediction(
        fitted.sigma2,
        d - fitted.k,
        &t_used,
        DEFAULT_EXCLUSION_HALFWIDTH,
    )?;
    let theory_std = theory.aggregate_std;
    Ok(ThenEstimateReport {
        n_used: abs_errors.len(),
        n_discarded,
        mae,
        theory_std,
        theory_mae: (2.0 / std::f64::consts::PI).sqrt() * theory_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn covariance_of_identical_rows_is_zero() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        let (mean, cov) = sample_covariance(&x).unwrap();
        assert_eq!(mean, vec![1.0, 2.0, 3.0]);
        assert_eq!(cov.max_abs(), 0.0);
    }

    #[test]
    fn covariance_hand_case() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let (mean, cov) = sample_covariance(&x).unwrap();
        assert_eq!(mean, vec![0.0, 0.0]);
        assert_eq!(cov.get(0, 0), 2.0);
        assert_eq!(cov.get(0, 1), 0.0);
        assert_eq!(cov.get(1, 1), 0.0);
    }

    #[test]
    fn covariance_needs_two_samples() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(sample_covariance(&x).is_err());
    }

    #[test]
    fn covariance_is_exactly_symmetric() {
        let m = SpikedModel::uniform_excess(6, 2, 4.0, 0.3).unwrap();
        let x = m
            .sample_batch(50, crate::model::TimeMode::Fixed(1.0), 4)
            .unwrap()
            .x;
        let (_, cov) = sample_covariance(&x).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(cov.get(i, j), cov.get(j, i));
            }
        }
    }

    #[test]
    fn eig_diagonal_sorts_descending_with_axis_vectors() {
        let cov = Matrix::from_rows(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 2.0],
        ])
        .unwrap();
        let (vecs, vals) = sym_eig(&cov).unwrap();
        assert_relative_eq!(vals[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(vals[2], 1.0, epsilon = 1e-12);
        let expected_cols = [0usize, 2, 1];
        for (j, &axis) in expected_cols.iter().enumerate() {
            for i in 0..3 {
                let want = if i == axis { 1.0 } else { 0.0 };
                assert_relative_eq!(vecs.get(i, j), want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn eig_rotated_two_by_two() {
        // diag(5, 1) rotated by 45 degrees
        let cov = Matrix::from_rows(&[vec![3.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let (vecs, vals) = sym_eig(&cov).unwrap();
        assert_relative_eq!(vals[0], 5.0, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 1.0, epsilon = 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(vecs.get(0, 0), s, epsilon = 1e-12);
        assert_relative_eq!(vecs.get(1, 0), s, epsilon = 1e-12);
        // sign convention: first nonzero component positive
        assert_relative_eq!(vecs.get(0, 1), s, epsilon = 1e-12);
        assert_relative_eq!(vecs.get(1, 1), -s, epsilon = 1e-12);
    }

    #[test]
    fn eig_rejects_asymmetric_input() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, 1.0]]).unwrap();
        assert!(sym_eig(&m).is_err());
    }

    #[test]
    fn eig_reconstructs_the_input() {
        let m = SpikedModel::uniform_excess(12, 3, 6.0, 0.2).unwrap();
        let x = m
            .sample_batch(200, crate::model::TimeMode::Fixed(1.0), 9)
            .unwrap()
            .x;
        let (_, cov) = sample_covariance(&x).unwrap();
        let (vecs, vals) = sym_eig(&cov).unwrap();
        let mut recon = Matrix::zeros(12, 12);
        for i in 0..12 {
            for j in 0..12 {
                let mut acc = 0.0;
                for (l, &vl) in vals.iter().enumerate() {
                    acc += vecs.get(i, l) * vl * vecs.get(j, l);
                }
                recon.set(i, j, acc);
            }
        }
        let mut err = 0.0_f64;
        for i in 0..12 {
            for j in 0..12 {
                err += (recon.get(i, j) - cov.get(i, j)).powi(2);
            }
        }
        assert!(err.sqrt() <= 1e-6 * cov.frob_norm());
    }

    #[test]
    fn rank_selection_hand_cases() {
        assert_eq!(choose_k(&[9.0, 1.0], 0.9).unwrap(), 1);
        assert_eq!(choose_k(&[1.0, 1.0, 1.0, 1.0], 0.95).unwrap(), 3);
        assert_eq!(choose_k(&[5.0, 3.0, 1.0, 1.0], 0.7).unwrap(), 2);
    }

    #[test]
    fn rank_selection_rejects_bad_input() {
        assert!(choose_k(&[0.0, 0.0], 0.9).is_err());
        assert!(choose_k(&[1.0, 2.0], 1.0).is_err());
        assert!(choose_k(&[1.0, 2.0], 0.0).is_err());
        assert!(choose_k(&[] as &[f64], 0.5).is_err());
        assert!(choose_k(&[1.0, -0.5], 0.5).is_err());
    }

    #[test]
    fn fit_isotropic_data_clips_spikes_to_zero() {
        let m = SpikedModel::new(8, 0, vec![], 1.0).unwrap();
        let x = m
            .sample_batch(20_000, crate::model::TimeMode::Fixed(1.0), 21)
            .unwrap()
            .x;
        let f = fit_spiked(&x, RankRule::Fixed(2)).unwrap();
        assert_eq!(f.k, 2);
        // the top two sample eigenvalues of isotropic data sit barely
        // above the trailing mean, so clipping leaves almost nothing
        assert!(
            f.lambdas.iter().all(|&l| (0.0..0.2).contains(&l)),
            "{:?}",
            f.lambdas
        );
        assert_relative_eq!(f.sigma2, 1.0, max_relative = 0.1);
    }

    #[test]
    fn fit_rejects_degenerate_data() {
        let x = Matrix::from_rows(&[vec![2.0, 2.0], vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap();
        assert!(fit_spiked(&x, RankRule::Fixed(1)).is_err());
    }

    #[test]
    fn fit_rejects_full_rank_request() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(fit_spiked(&x, RankRule::Fixed(2)).is_err());
    }

    #[test]
    fn fit_preserves_trace_without_clipping() {
        let m = SpikedModel::uniform_excess(10, 2, 8.0, 0.5).unwrap();
        let x = m
            .sample_batch(5_000, crate::model::TimeMode::Fixed(1.0), 31)
            .unwrap()
            .x;
        let (_, cov) = sample_covariance(&x).unwrap();
        let trace: f64 = (0..10).map(|i| cov.get(i, i)).sum();
        let f = fit_spiked(&x, RankRule::Fixed(2)).unwrap();
        assert!(
            f.lambdas.iter().all(|&l| l > 0.0),
            "clipped fit: {:?}",
            f.lambdas
        );
        let rebuilt = f.lambdas.iter().sum::<f64>() + 10.0 * f.sigma2;
        assert_relative_eq!(rebuilt, trace, epsilon = 1e-9);
    }

    #[test]
    fn fit_is_deterministic() {
        let m = SpikedModel::uniform_excess(6, 1, 5.0, 0.3).unwrap();
        let x = m
            .sample_batch(500, crate::model::TimeMode::Fixed(1.0), 40)
            .unwrap()
            .x;
        let a = fit_spiked(&x, RankRule::Threshold(0.9)).unwrap();
        let b = fit_spiked(&x, RankRule::Threshold(0.9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn principal_angle_identical_and_orthogonal_frames() {
        let e01 = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ])
        .unwrap();
        let e23 = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        assert!(largest_principal_angle(&e01, &e01).unwrap() < 1e-6);
        assert_relative_eq!(
            largest_principal_angle(&e01, &e23).unwrap(),
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-9
        );
    }

    #[test]
    fn principal_angle_known_rotation() {
        let theta = 0.3_f64;
        let a = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![theta.cos()], vec![theta.sin()]]).unwrap();
        assert_relative_eq!(
            largest_principal_angle(&a, &b).unwrap(),
            theta,
            epsilon = 1e-9
        );
    }

    #[test]
    fn principal_angle_rejects_skew_frames() {
        let bad = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let good = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        assert!(largest_principal_angle(&bad, &good).is_err());
    }
}
