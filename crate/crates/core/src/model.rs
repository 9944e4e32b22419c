//! The spiked Gaussian data model and interpolant sampling.
//!
//! Data is `x ~ N(0, U Λ Uᵀ + σ² I_d)`: `k` spike directions whose
//! variances sit `λᵢ` above an isotropic noise floor `σ²`. The model
//! stores the spike excesses, so the covariance eigenvalues are
//! `Sᵢ = λᵢ + σ²` on the signal subspace and `σ²` on its complement.
//! Interpolants pair `x` with a standard normal source `ε`:
//! `z = (1−t)ε + tx`, with velocity target `u = x − ε`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{orthonormality_defect, Matrix};
use crate::scalar::{cast, Real};
use crate::seed::{chunk_seed, rng_from};

/// Orthonormality tolerance for explicitly supplied signal bases.
pub const BASIS_ORTHO_TOL: f64 = 1e-8;

/// How the signal subspace is represented.
#[derive(Debug, Clone)]
pub enum BasisMode<T: Real> {
    /// Signal subspace is the first `k` coordinates.
    AxisAligned,
    /// Arbitrary orthonormal `d×k` basis (used for fitted models).
    Explicit(Matrix<T>),
}

/// Spiked Gaussian model: ambient dimension, signal rank, spike
/// excesses, noise floor, and signal basis.
#[derive(Debug, Clone)]
pub struct SpikedModel<T: Real> {
    d: usize,
    k: usize,
    lambdas: Vec<T>,
    sigma2: T,
    basis: BasisMode<T>,
}

impl<T: Real> SpikedModel<T> {
    /// Axis-aligned model. Rejects `k ≥ d`, non-positive `σ²`, a
    /// wrong-length excess list, and negative excesses.
    pub fn new(d: usize, k: usize, lambdas: Vec<T>, sigma2: T) -> Result<Self> {
        Self::build(d, k, lambdas, sigma2, BasisMode::AxisAligned)
    }

    /// Model with an explicit orthonormal signal basis.
    pub fn with_basis(
        d: usize,
        k: usize,
        lambdas: Vec<T>,
        sigma2: T,
        basis: Matrix<T>,
    ) -> Result<Self> {
        Self::build(d, k, lambdas, sigma2, BasisMode::Explicit(basis))
    }

    /// All-equal spikes specified by their total variance `S = λ + σ²`,
    /// the parameterization used by the decomposition sweeps.
    pub fn uniform_excess(d: usize, k: usize, s_total: T, sigma2: T) -> Result<Self> {
        if s_total < sigma2 {
            return Err(Error::InvalidParameter(format!(
                "spike variance S = {} is below the noise floor {}",
                s_total, sigma2
            )));
        }
        Self::new(d, k, vec![s_total - sigma2; k], sigma2)
    }

    fn build(d: usize, k: usize, lambdas: Vec<T>, sigma2: T, basis: BasisMode<T>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("d must be positive".into()));
        }
        if k >= d {
            return Err(Error::InvalidParameter(format!(
                "need k < d for a non-empty residual subspace, got k={} d={}",
                k, d
            )));
        }
        if !(sigma2 > T::zero()) || !sigma2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sigma2 must be positive and finite, got {}",
                sigma2
            )));
        }
        if lambdas.len() != k {
            return Err(Error::InvalidParameter(format!(
                "expected {} spike excesses, got {}",
                k,
                lambdas.len()
            )));
        }
        if let Some(bad) = lambdas
            .iter()
            .find(|l| !(**l >= T::zero()) || !l.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "spike excesses must be non-negative and finite, got {}",
                bad
            )));
        }
        if let BasisMode::Explicit(u) = &basis {
            if u.nrows() != d || u.ncols() != k {
                return Err(Error::DimensionMismatch(format!(
                    "basis is {}x{}, expected {}x{}",
                    u.nrows(),
                    u.ncols(),
                    d,
                    k
                )));
            }
            let defect = orthonormality_defect(u);
            if defect > cast(BASIS_ORTHO_TOL) {
                return Err(Error::InvalidParameter(format!(
                    "basis is not orthonormal (defect {})",
                    defect
                )));
            }
        }
        Ok(SpikedModel {
            d,
            k,
            lambdas,
            sigma2,
            basis,
        })
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn d_minus_k(&self) -> usize {
        self.d - self.k
    }

    #[inline]
    pub fn sigma2(&self) -> T {
        self.sigma2
    }

    pub fn lambdas(&self) -> &[T] {
        &self.lambdas
    }

    pub fn basis(&self) -> &BasisMode<T> {
        &self.basis
    }

    /// Covariance eigenvalue of coordinate `i`: `λᵢ + σ²` for `i < k`,
    /// `σ²` for the residual coordinates.
    #[inline]
    pub fn eigen_variance(&self, i: usize) -> T {
        if i < self.k {
            self.lambdas[i] + self.sigma2
        } else {
            self.sigma2
        }
    }

    /// All `d` covariance eigenvalues, signal first.
    pub fn eigen_variances(&self) -> Vec<T> {
        (0..self.d).map(|i| self.eigen_variance(i)).collect()
    }

    /// Distinct covariance eigenvalues with multiplicities; order of
    /// first appearance, residual group last.
    pub fn variance_groups(&self) -> Vec<VarianceGroup<T>> {
        let mut groups: Vec<VarianceGroup<T>> = Vec::new();
        for i in 0..self.d {
            let s = self.eigen_variance(i);
            match groups.iter_mut().find(|g| g.s == s) {
                Some(g) => g.count += 1,
                None => groups.push(VarianceGroup { s, count: 1 }),
            }
        }
        groups
    }

    /// `tr Cov(u) = Σᵢ (Sᵢ + 1)`: the variance of the velocity target
    /// under the independent coupling (Term I).
    pub fn term_one(&self) -> T {
        let mut total = cast::<T>(self.d as f64) * (self.sigma2 + T::one());
        for &l in &self.lambdas {
            total += l;
        }
        total
    }

    /// Per-coordinate interpolant variance `rᵢ(t)` and optimal slope
    /// `αᵢ(t)` for predicting `uᵢ` from `zᵢ`.
    pub fn coordinate_stats(&self, t: T) -> Vec<CoordStats<T>> {
        (0..self.d)
            .map(|i| {
                let s = self.eigen_variance(i);
                let (r, alpha) = slope_stats(s, t);
                CoordStats { s, r, alpha }
            })
            .collect()
    }

    /// Signal-subspace eigen-coordinates of `z` plus the residual sum
    /// of squares: `(projections, ‖z‖² − ‖projections‖²)`.
    pub fn split_signal(&self, z: &[T]) -> Result<(Vec<T>, T)> {
        if z.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "vector has length {}, model dimension is {}",
                z.len(),
                self.d
            )));
        }
        let total: T = z.iter().map(|&v| v * v).sum();
        let proj = match &self.basis {
            BasisMode::AxisAligned => z[..self.k].to_vec(),
            BasisMode::Explicit(u_x) => u_x.tr_mul_vec(z),
        };
        let signal: T = proj.iter().map(|&v| v * v).sum();
        let resid = total - signal;
        Ok((proj, if resid > T::zero() { resid } else { T::zero() }))
    }
}

/// `(rᵢ, αᵢ)` for one coordinate of eigen-variance `s`:
/// `r = (1−t)² + t²s`, `α = (ts − (1−t))/r`.
#[inline]
pub fn slope_stats<T: Real>(s: T, t: T) -> (T, T) {
    let omt = T::one() - t;
    let r = omt * omt + t * t * s;
    (r, (t * s - omt) / r)
}

/// One coordinate's closed-form statistics at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordStats<T> {
    pub s: T,
    pub r: T,
    pub alpha: T,
}

/// A distinct covariance eigenvalue and how many coordinates share it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceGroup<T> {
    pub s: T,
    pub count: usize,
}

/// Closed subinterval of `[0, 1]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeInterval<T> {
    lo: T,
    hi: T,
}

impl<T: Real> TimeInterval<T> {
    pub fn new(lo: T, hi: T) -> Result<Self> {
        if !(lo >= T::zero() && lo < hi && hi <= T::one()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= lo < hi <= 1, got [{}, {}]",
                lo, hi
            )));
        }
        Ok(TimeInterval { lo, hi })
    }

    /// The full `[0, 1]` interval.
    pub fn unit() -> Self {
        TimeInterval {
            lo: T::zero(),
            hi: T::one(),
        }
    }

    /// `[τ, 1−τ]`, the symmetric interval avoiding both endpoints.
    pub fn symmetric(tau: T) -> Result<Self> {
        Self::new(tau, T::one() - tau)
    }

    #[inline]
    pub fn lo(&self) -> T {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> T {
        self.hi
    }

    #[inline]
    pub fn width(&self) -> T {
        self.hi - self.lo
    }

    #[inline]
    pub fn midpoint(&self) -> T {
        (self.lo + self.hi) / (T::one() + T::one())
    }

    #[inline]
    pub fn clamp(&self, t: T) -> T {
        if t < self.lo {
            self.lo
        } else if t > self.hi {
            self.hi
        } else {
            t
        }
    }
}

/// How interpolation times are drawn for a batch.
#[derive(Debug, Clone, Copy)]
pub enum TimeMode {
    Fixed(f64),
    Uniform(TimeInterval<f64>),
}

/// Paired `(t, ε, x, z, u)` samples; `z` and `u` are derived row-wise
/// from the others at construction, so the interpolant identities hold
/// exactly.
#[derive(Debug, Clone)]
pub struct InterpolantBatch {
    pub t: Vec<f64>,
    pub eps: Matrix<f64>,
    pub x: Matrix<f64>,
    pub z: Matrix<f64>,
    pub u: Matrix<f64>,
}

impl InterpolantBatch {
    pub fn n(&self) -> usize {
        self.t.len()
    }
}

/// Rows per deterministic sampling chunk. Chunk boundaries depend only
/// on `n`, so output is identical for any worker count.
const SAMPLE_CHUNK: usize = 4096;

impl SpikedModel<f64> {
    /// Draws `n` interpolant samples. `ε` rows are standard normal,
    /// `x` rows follow the model covariance, and each chunk of rows
    /// uses a seed derived from `(seed, chunk index)`.
    pub fn sample_batch(&self, n: usize, mode: TimeMode, seed: u64) -> Result<InterpolantBatch> {
        if n == 0 {
            return Err(Error::InvalidParameter("need n >= 1 samples".into()));
        }
        if let TimeMode::Fixed(t) = mode {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidParameter(format!(
                    "fixed t must lie in [0, 1], got {}",
                    t
                )));
            }
        }
        let d = self.d;
        let n_chunks = n.div_ceil(SAMPLE_CHUNK);
        let chunks: Vec<ChunkSamples> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * SAMPLE_CHUNK;
                let hi = ((c + 1) * SAMPLE_CHUNK).min(n);
                self.sample_chunk(hi - lo, mode, chunk_seed(seed, c as u64))
            })
            .collect();

        let mut t = Vec::with_capacity(n);
        let mut eps = Matrix::zeros(n, d);
        let mut x = Matrix::zeros(n, d);
        let mut row = 0;
        for ch in chunks {
            for (i, ti) in ch.t.iter().enumerate() {
                t.push(*ti);
                eps.row_mut(row)
                    .copy_from_slice(&ch.eps[i * d..(i + 1) * d]);
                x.row_mut(row).copy_from_slice(&ch.x[i * d..(i + 1) * d]);
                row += 1;
            }
        }

        let mut z = Matrix::zeros(n, d);
        let mut u = Matrix::zeros(n, d);
        for (i, &ti) in t.iter().enumerate() {
            for j in 0..d {
                z.set(i, j, (1.0 - ti) * eps.get(i, j) + ti * x.get(i, j));
                u.set(i, j, x.get(i, j) - eps.get(i, j));
            }
        }
        Ok(InterpolantBatch { t, eps, x, z, u })
    }

    fn sample_chunk(&self, rows: usize, mode: TimeMode, seed: u64) -> ChunkSamples {
        let d = self.d;
        let mut rng = rng_from(seed);
        let mut t = Vec::with_capacity(rows);
        let mut eps = vec![0.0_f64; rows * d];
        let mut x = vec![0.0_f64; rows * d];
        let sigma = self.sigma2.sqrt();
        let spike_sd: Vec<f64> = self.lambdas.iter().map(|l| l.sqrt()).collect();

        for i in 0..rows {
            t.push(match mode {
                TimeMode::Fixed(tf) => tf,
                TimeMode::Uniform(iv) => iv.lo() + rng.gen::<f64>() * iv.width(),
            });
            for e in &mut eps[i * d..(i + 1) * d] {
                *e = rng.sample(StandardNormal);
            }
            let xr = &mut x[i * d..(i + 1) * d];
            for v in xr.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *v = sigma * g;
            }
            match &self.basis {
                BasisMode::AxisAligned => {
                    // spike coordinates get the excess on top of the floor,
                    // totalling variance λᵢ + σ²
                    for (j, sd) in spike_sd.iter().enumerate() {
                        let g: f64 = rng.sample(StandardNormal);
                        xr[j] += sd * g;
                    }
                }
                BasisMode::Explicit(u_x) => {
                    for (j, sd) in spike_sd.iter().enumerate() {
                        let g: f64 = rng.sample(StandardNormal);
                        let amp = sd * g;
                        for (r, xv) in xr.iter_mut().enumerate() {
                            *xv += amp * u_x.get(r, j);
                        }
                    }
                }
            }
        }
        ChunkSamples { t, eps, x }
    }
}

struct ChunkSamples {
    t: Vec<f64>,
    eps: Vec<f64>,
    x: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn accepts_spectrum_model() {
        let m = SpikedModel::new(1024, 10, linspace(1.0, 10.0, 10), 0.1).unwrap();
        assert_eq!(m.d_minus_k(), 1014);
        assert_relative_eq!(m.eigen_variance(0), 1.1);
        assert_relative_eq!(m.eigen_variance(10), 0.1);
    }

    #[test]
    fn accepts_zero_spike_model() {
        let m = SpikedModel::new(4, 0, vec![], 1.0).unwrap();
        assert_eq!(
            m.variance_groups(),
            vec![VarianceGroup { s: 1.0, count: 4 }]
        );
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SpikedModel::new(4, 4, vec![1.0; 4], 0.1).is_err());
        assert!(SpikedModel::new(4, 1, vec![1.0], 0.0).is_err());
        assert!(SpikedModel::new(4, 1, vec![1.0], -0.5).is_err());
        assert!(SpikedModel::new(4, 2, vec![1.0], 0.1).is_err());
        assert!(SpikedModel::new(4, 1, vec![-0.1], 0.1).is_err());
        let skewed = Matrix::from_vec(3, 1, vec![1.0, 1.0, 0.0]).unwrap();
        assert!(SpikedModel::with_basis(3, 1, vec![1.0], 0.1, skewed).is_err());
    }

    #[test]
    fn uniform_excess_subtracts_floor() {
        let m = SpikedModel::uniform_excess(1024, 64, 10.0, 0.01).unwrap();
        assert_relative_eq!(m.lambdas()[0], 9.99);
        assert!(SpikedModel::uniform_excess(8, 2, 0.05, 0.1).is_err());
    }

    #[test]
    fn term_one_closed_forms() {
        let m = SpikedModel::new(4, 0, vec![], 1.0).unwrap();
        assert_relative_eq!(m.term_one(), 8.0);
        let m = SpikedModel::new(4, 2, vec![9.99, 9.99], 0.01).unwrap();
        assert_relative_eq!(m.term_one(), 24.02, epsilon = 1e-12);
        let m = SpikedModel::uniform_excess(1024, 64, 10.0, 0.01).unwrap();
        assert_relative_eq!(m.term_one(), 1673.6, epsilon = 1e-9);
    }

    #[test]
    fn coordinate_stats_hand_cases() {
        let (r, alpha) = slope_stats(1.0, 0.5);
        assert_relative_eq!(r, 0.5);
        assert_relative_eq!(alpha, 0.0);
        // at t=0 the best predictor of u = x − ε from z = ε is −z
        let (r, alpha) = slope_stats(0.1, 0.0);
        assert_relative_eq!(r, 1.0);
        assert_relative_eq!(alpha, -1.0);
        let (r, alpha) = slope_stats(10.01_f64, 0.9);
        assert_relative_eq!(r, 8.1181, epsilon = 1e-12);
        assert_relative_eq!(alpha, (0.9 * 10.01 - 0.1) / 8.1181, epsilon = 1e-12);
        assert!((alpha - 1.0973).abs() < 2e-4);
    }

    #[test]
    fn interval_validation() {
        assert!(TimeInterval::new(0.0, 1.0).is_ok());
        assert!(TimeInterval::new(0.5, 0.5).is_err());
        assert!(TimeInterval::new(-0.1, 0.5).is_err());
        assert!(TimeInterval::new(0.1, 1.1).is_err());
        let iv = TimeInterval::symmetric(0.15).unwrap();
        assert_relative_eq!(iv.midpoint(), 0.5);
    }

    #[test]
    fn endpoint_identities() {
        let m = SpikedModel::new(6, 2, vec![3.0, 1.0], 0.25).unwrap();
        let b = m.sample_batch(32, TimeMode::Fixed(0.0), 9).unwrap();
        assert_eq!(b.z, b.eps);
        let b = m.sample_batch(32, TimeMode::Fixed(1.0), 9).unwrap();
        assert_eq!(b.z, b.x);
    }

    #[test]
    fn interpolant_identities_exact() {
        let m = SpikedModel::new(5, 1, vec![2.0], 0.5).unwrap();
        let iv = TimeInterval::unit();
        let b = m.sample_batch(100, TimeMode::Uniform(iv), 3).unwrap();
        for i in 0..b.n() {
            for j in 0..5 {
                let z = (1.0 - b.t[i]) * b.eps.get(i, j) + b.t[i] * b.x.get(i, j);
                assert_eq!(b.z.get(i, j), z);
                assert_eq!(b.u.get(i, j), b.x.get(i, j) - b.eps.get(i, j));
            }
        }
    }

    #[test]
    fn split_signal_axis_aligned() {
        let m = SpikedModel::new(4, 2, vec![1.0, 1.0], 0.1).unwrap();
        let (proj, resid) = m.split_signal(&[5.0, 5.0, 3.0, 4.0]).unwrap();
        assert_eq!(proj, vec![5.0, 5.0]);
        assert_relative_eq!(resid, 25.0);
        assert!(m.split_signal(&[1.0; 3]).is_err());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let m = SpikedModel::new(16, 4, vec![4.0; 4], 0.2).unwrap();
        let iv = TimeInterval::unit();
        let a = m.sample_batch(5000, TimeMode::Uniform(iv), 42).unwrap();
        let b = m.sample_batch(5000, TimeMode::Uniform(iv), 42).unwrap();
        assert_eq!(a.z, b.z);
        let c = m.sample_batch(5000, TimeMode::Uniform(iv), 43).unwrap();
        assert_ne!(a.z, c.z);
    }
}
